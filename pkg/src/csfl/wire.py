"""Binary serialization for models and masks, plus transfer-size bookkeeping.

Packet layout (all integers little-endian):

    magic "CSFL" | version u16 | record count u16
    per record: name len u8 | name utf-8 | rank u8 | dims u32 * rank
                | encoding tag u8 | payload

Encodings: 0 = dense (all float32 values, row-major), 1 = sparse_bitmap
(ceil(n/8) presence bytes, bit 1 = value present, LSB-first within each byte
over the flat row-major index, followed by the present float32 values in flat
order), 2 = sparse_index (u32 count, u32 flat indices ascending, float32
values). Presence is decided on the raw bit pattern, so -0.0 is kept and
round-trips exactly. A model packet stores two records per layer,
"<layer>/weights" and "<layer>/bias"; bias records are always dense.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .nn import LayerParams, ModelParams
from .sparsify import Mask

MAGIC = b"CSFL"
VERSION = 1
TAG_DENSE = 0
TAG_BITMAP = 1
TAG_INDEX = 2
_TAG_NAMES = {TAG_DENSE: "dense", TAG_BITMAP: "sparse_bitmap", TAG_INDEX: "sparse_index"}

SERVER_TO_CLIENT = "server_to_client"
CLIENT_TO_SERVER = "client_to_server"


class WireError(ValueError):
    """Malformed packet."""


class BadMagicError(WireError):
    pass


class TruncatedPayloadError(WireError):
    pass


class UnknownEncodingError(WireError):
    pass


@dataclass
class WirePacket:
    payload: bytes
    encoding: str  # summary: dominant tag across weight records
    kind: str  # "model" or "mask"
    header_bytes: int  # framing overhead (everything that is not value/bitmap payload)
    direction: str | None = None
    round_index: int | None = None

    @property
    def n_bytes(self) -> int:
        return len(self.payload)


def _flat_f32(arr: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(arr, dtype="<f4").ravel()


def _present_bits(flat: np.ndarray) -> np.ndarray:
    # bit-pattern test keeps -0.0, unlike a value comparison
    return flat.view(np.uint32) != 0


def _encode_tensor(flat: np.ndarray, tag: int) -> bytes:
    if tag == TAG_DENSE:
        return flat.tobytes()
    present = _present_bits(flat)
    values = flat[present].tobytes()
    if tag == TAG_BITMAP:
        return np.packbits(present, bitorder="little").tobytes() + values
    idx = np.flatnonzero(present).astype("<u4")
    return struct.pack("<I", idx.size) + idx.tobytes() + values


def _tensor_sizes(flat: np.ndarray) -> dict[int, int]:
    nnz = int(_present_bits(flat).sum())
    return {
        TAG_DENSE: 4 * flat.size,
        TAG_BITMAP: -(-flat.size // 8) + 4 * nnz,
        TAG_INDEX: 4 + 8 * nnz,
    }


def _record(name: str, shape: tuple[int, ...], tag: int, payload: bytes) -> tuple[bytes, int]:
    raw = name.encode()
    if len(raw) > 255 or len(shape) > 255:
        raise ValueError(f"record {name!r}: name or rank too large for the format")
    head = (
        struct.pack("<B", len(raw))
        + raw
        + struct.pack("<B", len(shape))
        + b"".join(struct.pack("<I", d) for d in shape)
        + struct.pack("<B", tag)
    )
    return head + payload, len(head)


def encode_model(params: ModelParams, allow_sparse: bool = True) -> WirePacket:
    """Serialize a model; with allow_sparse, each weight tensor takes whichever
    encoding is smallest in bytes (ties go to the lower tag). Biases stay dense."""
    records = []
    header_bytes = 4 + 2 + 2
    tag_bytes: dict[int, int] = {}
    for layer in params.layers:
        flat_w = _flat_f32(layer.weights)
        if allow_sparse:
            sizes = _tensor_sizes(flat_w)
            tag = min(sizes, key=lambda t: (sizes[t], t))
        else:
            tag = TAG_DENSE
        rec, head = _record(
            f"{layer.name}/weights", layer.weights.shape, tag, _encode_tensor(flat_w, tag)
        )
        records.append(rec)
        header_bytes += head
        if tag != TAG_DENSE:
            tag_bytes[tag] = tag_bytes.get(tag, 0) + len(rec)
        rec, head = _record(
            f"{layer.name}/bias", layer.bias.shape, TAG_DENSE, _encode_tensor(_flat_f32(layer.bias), TAG_DENSE)
        )
        records.append(rec)
        header_bytes += head
    payload = MAGIC + struct.pack("<HH", VERSION, len(records)) + b"".join(records)
    if tag_bytes:
        summary = _TAG_NAMES[max(tag_bytes, key=lambda t: (tag_bytes[t], -t))]
    else:
        summary = "dense"
    return WirePacket(payload, summary, "model", header_bytes)


def encode_mask(mask: Mask) -> WirePacket:
    """Serialize a mask: one bitmap record per weight tensor, no value section."""
    records = []
    header_bytes = 4 + 2 + 2
    for name, m in mask.tensors:
        bits = np.ascontiguousarray(m, dtype=np.uint8).ravel() != 0
        rec, head = _record(name, m.shape, TAG_BITMAP, np.packbits(bits, bitorder="little").tobytes())
        records.append(rec)
        header_bytes += head
    payload = MAGIC + struct.pack("<HH", VERSION, len(records)) + b"".join(records)
    return WirePacket(payload, "sparse_bitmap", "mask", header_bytes)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0
        self.context = "header"

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedPayloadError(
                f"packet truncated in {self.context}: wanted {n} bytes at offset {self.pos}, "
                f"have {len(self.buf) - self.pos}"
            )
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def _read_records(buf: bytes, expect_values: bool) -> list[tuple[str, tuple[int, ...], np.ndarray]]:
    r = _Reader(buf)
    if r.take(4) != MAGIC:
        raise BadMagicError(f"bad magic {buf[:4]!r}, expected {MAGIC!r}")
    version = r.u16()
    if version != VERSION:
        raise WireError(f"unsupported version {version}")
    count = r.u16()
    out = []
    for _ in range(count):
        r.context = "record header"
        name = r.take(r.u8()).decode()
        r.context = f"record {name!r}"
        rank = r.u8()
        shape = tuple(r.u32() for _ in range(rank))
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        tag = r.u8()
        if not expect_values:
            # mask record: bitmap only
            if tag != TAG_BITMAP:
                raise UnknownEncodingError(f"record {name!r}: mask tag {tag} is not sparse_bitmap")
            bits = np.unpackbits(
                np.frombuffer(r.take(-(-n // 8)), dtype=np.uint8), bitorder="little"
            )[:n]
            out.append((name, shape, bits.astype(np.uint8)))
            continue
        if tag == TAG_DENSE:
            values = np.frombuffer(r.take(4 * n), dtype="<f4").copy()
        elif tag == TAG_BITMAP:
            bits = np.unpackbits(
                np.frombuffer(r.take(-(-n // 8)), dtype=np.uint8), bitorder="little"
            )[:n].astype(bool)
            nnz = int(bits.sum())
            values = np.zeros(n, dtype="<f4")
            values[bits] = np.frombuffer(r.take(4 * nnz), dtype="<f4")
        elif tag == TAG_INDEX:
            nnz = r.u32()
            if nnz > n:
                raise WireError(f"record {name!r}: {nnz} sparse entries exceed size {n}")
            idx = np.frombuffer(r.take(4 * nnz), dtype="<u4")
            if idx.size and int(idx.max()) >= n:
                raise WireError(f"record {name!r}: sparse index {int(idx.max())} out of range")
            values = np.zeros(n, dtype="<f4")
            values[idx] = np.frombuffer(r.take(4 * nnz), dtype="<f4")
        else:
            raise UnknownEncodingError(f"record {name!r}: unknown encoding tag {tag}")
        out.append((name, shape, values.reshape(shape)))
    if r.pos != len(buf):
        raise WireError(f"{len(buf) - r.pos} trailing bytes after last record")
    return out


def decode_model(packet: WirePacket | bytes) -> ModelParams:
    """Inverse of encode_model; bit-exact, including negative zeros."""
    buf = packet.payload if isinstance(packet, WirePacket) else packet
    records = _read_records(buf, expect_values=True)
    if len(records) % 2:
        raise WireError(f"model packet holds {len(records)} records, expected weight/bias pairs")
    layers = []
    for (wname, _, w), (bname, _, b) in zip(records[0::2], records[1::2]):
        if not (wname.endswith("/weights") and bname == wname[: -len("weights")] + "bias"):
            raise WireError(f"record pair {wname!r}/{bname!r} is not a weights/bias pair")
        layers.append(LayerParams(wname[: -len("/weights")], w, b))
    return ModelParams(layers)


def decode_mask(packet: WirePacket | bytes) -> Mask:
    buf = packet.payload if isinstance(packet, WirePacket) else packet
    records = _read_records(buf, expect_values=False)
    return Mask([(name, bits.reshape(shape)) for name, shape, bits in records])


@dataclass
class ByteLedger:
    """Per-round transfer accounting against a dense-encoded baseline.

    dense_model_bytes is the packet size of the same architecture encoded with
    allow_sparse=False; reductions compare against one such packet per recorded
    transfer, so an uncompressed round reports a reduction of exactly 0.
    """

    dense_model_bytes: int
    entries: list[tuple[int, str, int, int, int]] = field(default_factory=list)

    def record(
        self, round_index: int, direction: str, packet: WirePacket, transfers: int = 1
    ) -> None:
        """Log one packet. ``transfers`` counts dense-baseline units for the
        reduction denominator; pass 0 for side packets (a mask sent alongside a
        model) so they add bytes without adding baseline."""
        if direction not in (SERVER_TO_CLIENT, CLIENT_TO_SERVER):
            raise ValueError(f"unknown direction {direction!r}")
        self.entries.append(
            (round_index, direction, packet.n_bytes, packet.header_bytes, transfers)
        )

    def round_bytes(self, round_index: int) -> tuple[int, int]:
        down = sum(n for r, d, n, _, _ in self.entries if r == round_index and d == SERVER_TO_CLIENT)
        up = sum(n for r, d, n, _, _ in self.entries if r == round_index and d == CLIENT_TO_SERVER)
        return down, up

    def report(self) -> dict[str, object]:
        rounds: list[dict[str, object]] = []
        cum_down = 0
        cum_up = 0
        for r in sorted({e[0] for e in self.entries}):
            stats = {SERVER_TO_CLIENT: [0, 0], CLIENT_TO_SERVER: [0, 0]}
            for rnd, d, n, _, transfers in self.entries:
                if rnd == r:
                    stats[d][0] += n
                    stats[d][1] += transfers
            down, n_down = stats[SERVER_TO_CLIENT]
            up, n_up = stats[CLIENT_TO_SERVER]
            cum_down += down
            cum_up += up
            rounds.append(
                {
                    "round": r,
                    "bytes_down": down,
                    "bytes_up": up,
                    "cum_bytes_down": cum_down,
                    "cum_bytes_up": cum_up,
                    "down_reduction": (
                        1.0 - down / (n_down * self.dense_model_bytes) if n_down else None
                    ),
                    "up_reduction": (
                        1.0 - up / (n_up * self.dense_model_bytes) if n_up else None
                    ),
                }
            )
        return {
            "dense_model_bytes": self.dense_model_bytes,
            "rounds": rounds,
            "total_bytes_down": cum_down,
            "total_bytes_up": cum_up,
            "total_header_bytes": sum(h for _, _, _, h, _ in self.entries),
        }
