"""Federated training loop with complement-sparsified model exchange.

Round 0 is plain federated averaging from a dense random init. From then on,
in ``cs`` mode, the server prunes the aggregate by global magnitude and ships
the sparse model plus (implicitly) its mask; clients train the full model
locally but return only the complement — their weights at the server's pruned
positions — and the server folds the weighted complement average back in,
amplified by the aggregation ratio. Server-kept positions therefore pass
through aggregation bit-for-bit untouched. ``vanilla`` mode averages dense
models every round and is the comparison baseline.

Everything is deterministic given the config: client subsets, batch order and
init all derive from named substreams of the one seed, and client updates are
summed in ascending client-id order.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import Dataset
from .metrics import client_sparsity_stats, evaluate, training_flops
from .nn import Architecture, Hyperparams, LayerParams, ModelParams, init_random, loss_and_grads, optimizer_step
from .rng import STREAM_SAMPLING, STREAM_SHUFFLE, substream
from .sparsify import Mask, apply_mask, derive_mask, invert_mask, prune, sparsity
from .wire import CLIENT_TO_SERVER, SERVER_TO_CLIENT, ByteLedger, encode_mask, encode_model

MODE_CS = "cs"
MODE_VANILLA = "vanilla"
MASK_SENT = "mask_sent"
MASK_DERIVED = "mask_derived"


class ProtocolViolationError(ValueError):
    """A client update carries a nonzero weight at a server-kept position."""


@dataclass(frozen=True)
class ExperimentConfig:
    arch: Architecture
    hp: Hyperparams
    n_clients: int
    clients_per_round: int
    rounds: int
    server_sparsity: float
    aggregation_ratio: float
    seed: int
    partition_alpha: float
    min_per_client: int
    mode: str = MODE_CS
    allow_ratio_outside_bound: bool = False

    def check(self) -> list[str]:
        """Raise on structural errors; return warnings (ratio outside its bound)."""
        if self.mode not in (MODE_CS, MODE_VANILLA):
            raise ValueError(f"mode must be cs or vanilla, got {self.mode!r}")
        if self.n_clients < 1:
            raise ValueError(f"n_clients must be positive, got {self.n_clients}")
        if not 1 <= self.clients_per_round <= self.n_clients:
            raise ValueError(
                f"clients_per_round must be in [1, {self.n_clients}], got {self.clients_per_round}"
            )
        if self.rounds < 1:
            raise ValueError(f"rounds must be positive, got {self.rounds}")
        if not 0.0 <= self.server_sparsity < 1.0:
            raise ValueError(f"server_sparsity must be in [0, 1), got {self.server_sparsity}")
        if self.partition_alpha <= 0.0:
            raise ValueError(f"partition_alpha must be positive, got {self.partition_alpha}")
        if self.min_per_client < 0:
            raise ValueError(f"min_per_client must be >= 0, got {self.min_per_client}")
        warnings = []
        if self.mode == MODE_CS:
            bound = 1.0 / self.hp.learning_rate
            if not 1.0 < self.aggregation_ratio <= bound:
                warnings.append(
                    f"aggregation_ratio {self.aggregation_ratio} outside (1, {bound:g}]: "
                    "complement amplification needs ratio > 1, and ratios beyond "
                    "1/learning_rate overshoot what one local step can counteract"
                )
        return warnings


@dataclass
class ClientResult:
    update: ModelParams  # complement-masked locally trained model
    sample_count: int


@dataclass
class ServerState:
    round_index: int
    global_sparse: ModelParams  # model shipped to clients (dense at round 0)
    mask: Mask  # kept-weight mask of global_sparse (all zeros at round 0 / in vanilla)
    aggregated_dense: ModelParams  # last pre-prune aggregate
    config: ExperimentConfig


@dataclass
class RoundMetrics:
    round_index: int
    acc_sparse: float | None
    acc_dense: float | None
    loss_sparse: float | None
    server_sparsity: float
    server_sparsity_per_layer: dict[str, float]
    client_sparsity: float
    client_sparsity_per_layer: dict[str, float]
    bytes_down: int
    bytes_up: int
    client_flops_total: int
    flops_saved_fraction: float


def initial_state(config: ExperimentConfig) -> ServerState:
    w0 = init_random(config.arch, config.seed)
    return ServerState(0, w0, Mask.zeros_like(w0), w0, config)


def client_update(
    model: ModelParams,
    mask: Mask,
    local_data: Dataset,
    hp: Hyperparams,
    rng: np.random.Generator | None = None,
) -> ClientResult:
    """Local training, then complement masking.

    Trains every weight (including currently-zero ones) for local_epochs passes
    of minibatch SGD/Adam, then zeroes the positions the server kept (mask 1).
    With an all-zero mask the dense trained model comes back unchanged. Pass an
    rng to shuffle sample order each epoch; without one, batches are taken in
    stored order, so the result is a pure function of its arguments.
    """
    if len(local_data) == 0:
        raise ValueError("client has no local data")
    if not mask.congruent_with(model):
        raise ValueError("mask shape does not match model weights")
    params = model.copy()
    n = len(local_data)
    order = np.arange(n)
    opt_state = None
    for _ in range(hp.local_epochs):
        if rng is not None:
            rng.shuffle(order)
        for start in range(0, n, hp.batch_size):
            batch = order[start : start + hp.batch_size]
            _, grads = loss_and_grads(params, local_data.inputs[batch], local_data.labels[batch])
            params, opt_state = optimizer_step(params, grads, hp, opt_state)
    return ClientResult(apply_mask(params, invert_mask(mask)), n)


def _weighted(results: list[ClientResult]) -> np.ndarray:
    if not results:
        raise ValueError("no client results to aggregate")
    counts = np.array([r.sample_count for r in results], dtype=np.float64)
    if (counts <= 0).any():
        raise ValueError("sample counts must be positive")
    return counts / counts.sum()


def aggregate_initial(results: list[ClientResult]) -> ModelParams:
    """Sample-count-weighted average of dense client models (weights and biases)."""
    weights = _weighted(results)
    first = results[0].update
    out_layers = []
    for li, layer in enumerate(first.layers):
        w_acc = np.zeros(layer.weights.shape, dtype=np.float64)
        b_acc = np.zeros(layer.bias.shape, dtype=np.float64)
        for coef, res in zip(weights, results):
            if not res.update.same_shape_as(first):
                raise ValueError("client models disagree on shape")
            w_acc += coef * res.update.layers[li].weights
            b_acc += coef * res.update.layers[li].bias
        out_layers.append(
            LayerParams(layer.name, w_acc.astype(np.float32), b_acc.astype(np.float32))
        )
    return ModelParams(out_layers)


def aggregate_complement(
    base: ModelParams, mask: Mask, results: list[ClientResult], ratio: float
) -> ModelParams:
    """Fold amplified complement updates into the sparse base model.

    Weights: base + ratio * weighted average of client updates. Updates are
    exactly zero wherever mask is 1, so base values there survive bit-for-bit;
    a nonzero there is a protocol violation. Biases move by ratio times the
    weighted average drift from the base bias.
    """
    weights = _weighted(results)
    if not mask.congruent_with(base):
        raise ValueError("mask shape does not match base model")
    for res in results:
        if not res.update.same_shape_as(base):
            raise ValueError("client update disagrees with base model shape")
        for layer, (name, m) in zip(res.update.layers, mask.tensors):
            if np.any(layer.weights[m != 0] != 0.0):
                raise ProtocolViolationError(
                    f"client update has nonzero weights at server-kept positions in {name!r}"
                )
    out_layers = []
    for li, (layer, (_, m)) in enumerate(zip(base.layers, mask.tensors)):
        w_acc = np.zeros(layer.weights.shape, dtype=np.float64)
        b_acc = np.zeros(layer.bias.shape, dtype=np.float64)
        base_bias = layer.bias.astype(np.float64)
        for coef, res in zip(weights, results):
            w_acc += coef * res.update.layers[li].weights
            b_acc += coef * (res.update.layers[li].bias - base_bias)
        w = layer.weights.astype(np.float64) + ratio * w_acc
        b = base_bias + ratio * b_acc
        out_layers.append(LayerParams(layer.name, w.astype(np.float32), b.astype(np.float32)))
    return ModelParams(out_layers)


def _active_counts(sent: ModelParams, update: ModelParams) -> dict[str, int]:
    # union of server-kept weights and weights the client actually moved: on
    # complement positions the sent value is 0, so "moved" is just "nonzero"
    return {
        s.name: int(np.count_nonzero((s.weights != 0.0) | (u.weights != 0.0)))
        for s, u in zip(sent.layers, update.layers)
    }


def run_round(
    state: ServerState,
    participants: list[tuple[int, Dataset]],
    test_data: Dataset | None = None,
    ledger: ByteLedger | None = None,
    ledger_mode: str = MASK_DERIVED,
    evaluate_round: bool = True,
) -> tuple[ServerState, RoundMetrics]:
    """Execute one round over ``participants`` (client id, shard) pairs.

    Participants are processed in ascending client id regardless of input
    order, which pins the floating-point summation order, so the round output
    is bitwise invariant under permutation of the list.
    """
    if ledger_mode not in (MASK_SENT, MASK_DERIVED):
        raise ValueError(f"unknown ledger_mode {ledger_mode!r}")
    if not participants:
        raise ValueError("round needs at least one participant")
    ids = [cid for cid, _ in participants]
    if len(set(ids)) != len(ids):
        raise ValueError(f"duplicate client ids in round: {sorted(ids)}")
    participants = sorted(participants, key=lambda p: p[0])

    cfg = state.config
    r = state.round_index
    sent = state.global_sparse
    down_packet = encode_model(sent, allow_sparse=True)
    mask_packet = None
    if ledger_mode == MASK_SENT and cfg.mode == MODE_CS and r > 0:
        mask_packet = encode_mask(state.mask)

    results: list[ClientResult] = []
    bytes_down = 0
    bytes_up = 0
    flops_mask = derive_mask(sent)
    cs_flops = 0
    dense_flops = 0
    for cid, shard in participants:
        bytes_down += down_packet.n_bytes
        if ledger is not None:
            ledger.record(r, SERVER_TO_CLIENT, down_packet)
        if mask_packet is not None:
            bytes_down += mask_packet.n_bytes
            if ledger is not None:
                ledger.record(r, SERVER_TO_CLIENT, mask_packet, transfers=0)
        result = client_update(
            sent, state.mask, shard, cfg.hp, rng=substream(cfg.seed, STREAM_SHUFFLE, r, cid)
        )
        up_packet = encode_model(result.update, allow_sparse=True)
        bytes_up += up_packet.n_bytes
        if ledger is not None:
            ledger.record(r, CLIENT_TO_SERVER, up_packet)
        report = training_flops(
            cfg.arch,
            flops_mask,
            _active_counts(sent, result.update),
            samples=result.sample_count,
            epochs=cfg.hp.local_epochs,
        )
        cs_flops += report.cs_total
        dense_flops += report.dense_total
        results.append(result)

    if cfg.mode == MODE_VANILLA or r == 0:
        dense_agg = aggregate_initial(results)
    else:
        dense_agg = aggregate_complement(
            state.global_sparse, state.mask, results, cfg.aggregation_ratio
        )
    if cfg.mode == MODE_CS:
        new_model, new_mask = prune(dense_agg, cfg.server_sparsity)
    else:
        new_model, new_mask = dense_agg, Mask.zeros_like(dense_agg)

    acc_sparse = acc_dense = loss_sparse = None
    if evaluate_round and test_data is not None:
        acc_sparse, loss_sparse = evaluate(new_model, test_data)
        if cfg.mode == MODE_CS:
            acc_dense, _ = evaluate(dense_agg, test_data)
        else:
            acc_dense = acc_sparse
    layer_sp, full_sp = sparsity(new_model)
    client_layer_sp, client_sp = client_sparsity_stats([res.update for res in results])
    metrics = RoundMetrics(
        round_index=r,
        acc_sparse=acc_sparse,
        acc_dense=acc_dense,
        loss_sparse=loss_sparse,
        server_sparsity=full_sp,
        server_sparsity_per_layer=layer_sp,
        client_sparsity=client_sp,
        client_sparsity_per_layer=client_layer_sp,
        bytes_down=bytes_down,
        bytes_up=bytes_up,
        client_flops_total=cs_flops,
        flops_saved_fraction=1.0 - cs_flops / dense_flops,
    )
    new_state = replace(
        state,
        round_index=r + 1,
        global_sparse=new_model,
        mask=new_mask,
        aggregated_dense=dense_agg,
    )
    return new_state, metrics


def run_experiment(
    config: ExperimentConfig,
    data_partition: list[Dataset],
    test_data: Dataset | None = None,
    eval_every: int = 1,
    ledger: ByteLedger | None = None,
    ledger_mode: str = MASK_DERIVED,
) -> list[RoundMetrics]:
    """Run the full protocol; returns one RoundMetrics per round.

    Client subsets are sampled uniformly without replacement each round from a
    stream that depends only on the seed, so cs and vanilla runs on the same
    config see identical subsets. Accuracy fields are filled on evaluated
    rounds (every eval_every-th round and always the last); byte and FLOPs
    accounting covers every round.
    """
    warnings = config.check()
    if warnings and not config.allow_ratio_outside_bound:
        raise ValueError(
            warnings[0] + " (set allow_ratio_outside_bound to run anyway)"
        )
    if len(data_partition) != config.n_clients:
        raise ValueError(
            f"partition has {len(data_partition)} shards for {config.n_clients} clients"
        )
    if eval_every < 1:
        raise ValueError(f"eval_every must be >= 1, got {eval_every}")
    state = initial_state(config)
    sampler = substream(config.seed, STREAM_SAMPLING)
    out: list[RoundMetrics] = []
    for r in range(config.rounds):
        ids = sampler.choice(config.n_clients, size=config.clients_per_round, replace=False)
        participants = [(int(i), data_partition[int(i)]) for i in np.sort(ids)]
        do_eval = (r + 1) % eval_every == 0 or r == config.rounds - 1
        state, metrics = run_round(
            state,
            participants,
            test_data=test_data,
            ledger=ledger,
            ledger_mode=ledger_mode,
            evaluate_round=do_eval,
        )
        out.append(metrics)
    return out
