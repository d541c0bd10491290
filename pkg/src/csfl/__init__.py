"""Federated learning simulator with complement-sparsified model exchange."""

from .config import ConfigError, RunConfig, load_config
from .data import CsvFormatError, Dataset, generate_synthetic, load_csv, partition_dirichlet, save_csv, train_test_split
from .fl import (
    ClientResult,
    ExperimentConfig,
    ProtocolViolationError,
    RoundMetrics,
    ServerState,
    aggregate_complement,
    aggregate_initial,
    client_update,
    initial_state,
    run_experiment,
    run_round,
)
from .metrics import FlopsReport, LayerFlops, client_sparsity_stats, evaluate, training_flops
from .nn import (
    AdamState,
    Architecture,
    Hyperparams,
    LayerParams,
    ModelParams,
    forward,
    init_random,
    loss_and_grads,
    optimizer_step,
)
from .sparsify import Mask, apply_mask, derive_mask, invert_mask, prune, sparsity
from .wire import (
    BadMagicError,
    ByteLedger,
    TruncatedPayloadError,
    UnknownEncodingError,
    WireError,
    WirePacket,
    decode_mask,
    decode_model,
    encode_mask,
    encode_model,
)

__version__ = "0.1.0"
