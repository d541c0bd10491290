"""Binary codec: layout arithmetic, round-trips, encoder minimality, ledger."""

import numpy as np
import pytest
from util import rand_params

from csfl.nn import LayerParams, ModelParams
from csfl.sparsify import Mask, derive_mask, prune
from csfl.wire import (
    CLIENT_TO_SERVER,
    SERVER_TO_CLIENT,
    BadMagicError,
    ByteLedger,
    TruncatedPayloadError,
    UnknownEncodingError,
    WireError,
    decode_mask,
    decode_model,
    encode_mask,
    encode_model,
)


def _model(name, w, bias=None):
    w = np.asarray(w, dtype=np.float32)
    b = np.zeros(w.shape[1], dtype=np.float32) if bias is None else np.asarray(bias, np.float32)
    return ModelParams([LayerParams(name, w, b)])


def _assert_bit_equal(a: ModelParams, b: ModelParams):
    for la, lb in zip(a.layers, b.layers):
        assert la.name == lb.name
        assert la.weights.shape == lb.weights.shape
        assert np.array_equal(
            np.ascontiguousarray(la.weights, "<f4").view(np.uint32),
            np.ascontiguousarray(lb.weights, "<f4").view(np.uint32),
        )
        assert np.array_equal(
            np.ascontiguousarray(la.bias, "<f4").view(np.uint32),
            np.ascontiguousarray(lb.bias, "<f4").view(np.uint32),
        )


def test_dense_packet_layout_arithmetic():
    # global header 8, "out/weights" record header 22, 4 values = 16,
    # "out/bias" record header 15, 2 values = 8 -> 69 bytes total
    pkt = encode_model(_model("out", [[1.0, 2.0], [3.0, 4.0]]), allow_sparse=False)
    assert pkt.n_bytes == 8 + 22 + 16 + 15 + 8 == 69
    assert pkt.header_bytes == 8 + 22 + 15
    assert pkt.encoding == "dense"
    assert pkt.kind == "model"


def test_bitmap_beats_dense_and_index_at_ten_percent():
    # 1000 weights, 100 nonzero: bitmap 125 + 400 < dense 4000 and index 4 + 800
    w = np.zeros((1000, 1), dtype=np.float32)
    w[:100, 0] = np.arange(1, 101, dtype=np.float32)
    pkt = encode_model(_model("out", w, bias=[0.5]))
    # 8 global + (1+11+1+8+1) weights header + 525 + (1+8+1+4+1) bias header + 4
    assert pkt.n_bytes == 8 + 22 + 525 + 15 + 4 == 574
    assert pkt.encoding == "sparse_bitmap"
    _assert_bit_equal(decode_model(pkt), _model("out", w, bias=[0.5]))


def test_index_encoding_wins_when_very_sparse():
    w = np.zeros((1000, 1), dtype=np.float32)
    w[7, 0] = 3.5
    w[423, 0] = -1.25
    pkt = encode_model(_model("out", w))
    # index: 4 + 2*4 + 2*4 = 20 bytes vs bitmap 125 + 8
    assert pkt.encoding == "sparse_index"
    _assert_bit_equal(decode_model(pkt), _model("out", w))


def test_equal_sizes_prefer_lower_tag():
    # 96 weights, 2 nonzero: bitmap 12 + 8 == index 4 + 16 == 20 -> bitmap (lower tag)
    w = np.zeros((96, 1), dtype=np.float32)
    w[10, 0] = 1.0
    w[50, 0] = 2.0
    pkt = encode_model(_model("out", w))
    assert pkt.encoding == "sparse_bitmap"


def test_dense_kept_when_smallest_and_when_sparse_disallowed():
    dense_w = np.arange(1, 13, dtype=np.float32).reshape(3, 4)
    pkt = encode_model(_model("out", dense_w))
    assert pkt.encoding == "dense"
    sparse_w = np.zeros((100, 2), dtype=np.float32)
    forced = encode_model(_model("out", sparse_w), allow_sparse=False)
    assert forced.encoding == "dense"
    assert forced.n_bytes == 8 + 22 + 800 + 15 + 8


def test_round_trip_random_models_bit_exact():
    rng = np.random.default_rng(12)
    for _ in range(30):
        dims = [int(rng.integers(1, 9)) for _ in range(int(rng.integers(2, 5)))]
        params = rand_params(rng, dims)
        if rng.random() < 0.7:
            params, _ = prune(params, float(rng.uniform(0.0, 0.9)))
        for allow in (True, False):
            _assert_bit_equal(decode_model(encode_model(params, allow_sparse=allow)), params)


def test_round_trip_preserves_negative_zero():
    w = np.array([[0.0], [-0.0], [1.5], [-0.0]], dtype=np.float32)
    model = _model("out", w, bias=[-0.0])
    for allow in (True, False):
        back = decode_model(encode_model(model, allow_sparse=allow))
        _assert_bit_equal(back, model)
        bits = back.layers[0].weights.ravel().view(np.uint32)
        assert bits[1] == 0x80000000  # -0.0 survived as stored


def test_mask_round_trip_and_bit_convention():
    m = np.array([1, 0, 1, 1, 0, 0, 1, 0, 1, 1], dtype=np.uint8).reshape(10, 1)
    mask = Mask([("fc1", m)])
    pkt = encode_mask(mask)
    assert pkt.kind == "mask"
    # LSB-first: bits 0..7 -> 0b01001101 = 0x4d, bits 8..9 -> 0x03
    assert pkt.payload[-2:] == bytes([0x4D, 0x03])
    back = decode_mask(pkt)
    assert back.tensors[0][0] == "fc1"
    assert np.array_equal(back.tensors[0][1], m)


def test_mask_all_ones_round_trip():
    params = rand_params(np.random.default_rng(13), [6, 4, 3])
    mask = derive_mask(params)
    back = decode_mask(encode_mask(mask))
    for (n1, m1), (n2, m2) in zip(mask.tensors, back.tensors):
        assert n1 == n2
        assert np.array_equal(m1, m2)
        assert np.all(m1 == 1)


def test_decode_error_types_are_distinct():
    pkt = encode_model(_model("out", [[1.0, 2.0], [3.0, 4.0]]))
    buf = bytearray(pkt.payload)

    bad_magic = bytes([0x58]) + bytes(buf[1:])
    with pytest.raises(BadMagicError):
        decode_model(bad_magic)

    with pytest.raises(TruncatedPayloadError, match="out/bias"):
        decode_model(bytes(buf[:-12]))  # cut lands inside the bias values

    with pytest.raises(TruncatedPayloadError, match="out/weights"):
        decode_model(bytes(buf[:40]))  # cut lands inside the weight values

    bad_tag = bytearray(buf)
    bad_tag[8 + 1 + 11 + 1 + 8] = 9  # tag byte of the first record
    with pytest.raises(UnknownEncodingError, match="tag 9"):
        decode_model(bytes(bad_tag))

    with pytest.raises(WireError):
        decode_model(bytes(buf) + b"\x00")  # trailing bytes

    bad_version = bytearray(buf)
    bad_version[4] = 99
    with pytest.raises(WireError, match="version"):
        decode_model(bytes(bad_version))

    # all four share a common base for callers that want one except clause
    assert issubclass(BadMagicError, WireError)
    assert issubclass(TruncatedPayloadError, WireError)
    assert issubclass(UnknownEncodingError, WireError)


def test_ledger_reductions_and_cumulative_sums():
    dense = encode_model(_model("out", np.ones((100, 2), dtype=np.float32)), allow_sparse=False)
    ledger = ByteLedger(dense_model_bytes=dense.n_bytes)
    # round 0: two dense downs, one dense up
    ledger.record(0, SERVER_TO_CLIENT, dense)
    ledger.record(0, SERVER_TO_CLIENT, dense)
    ledger.record(0, CLIENT_TO_SERVER, dense)
    sparse_params, _ = prune(_model("out", np.random.default_rng(1).normal(
        size=(100, 2)).astype(np.float32)), 0.9)
    sparse = encode_model(sparse_params)
    ledger.record(1, SERVER_TO_CLIENT, sparse)
    ledger.record(1, CLIENT_TO_SERVER, sparse)

    assert ledger.round_bytes(0) == (2 * dense.n_bytes, dense.n_bytes)
    report = ledger.report()
    r0, r1 = report["rounds"]
    assert r0["down_reduction"] == 0.0  # dense round: exactly zero
    assert r0["up_reduction"] == 0.0
    assert r1["down_reduction"] > 0.5
    assert r1["cum_bytes_down"] == 2 * dense.n_bytes + sparse.n_bytes
    assert report["total_bytes_up"] == dense.n_bytes + sparse.n_bytes
    assert report["dense_model_bytes"] == dense.n_bytes


def test_ledger_side_packet_adds_bytes_not_baseline():
    model = _model("out", np.ones((50, 2), dtype=np.float32))
    pkt = encode_model(model, allow_sparse=False)
    mask_pkt = encode_mask(derive_mask(model))
    ledger = ByteLedger(dense_model_bytes=pkt.n_bytes)
    ledger.record(0, SERVER_TO_CLIENT, pkt)
    ledger.record(0, SERVER_TO_CLIENT, mask_pkt, transfers=0)
    r0 = ledger.report()["rounds"][0]
    assert r0["bytes_down"] == pkt.n_bytes + mask_pkt.n_bytes
    # one baseline unit, so the mask overhead drives the reduction negative
    assert r0["down_reduction"] < 0.0


def test_ledger_rejects_unknown_direction():
    pkt = encode_model(_model("out", [[1.0]]))
    with pytest.raises(ValueError):
        ByteLedger(dense_model_bytes=pkt.n_bytes).record(0, "sideways", pkt)
