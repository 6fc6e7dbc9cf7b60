from xmetra.meta.config import BaselineKind, Convergence, MetaConfig, TrainConfig
from xmetra.meta.maml import (
    Checkpoint,
    ConvergenceMonitor,
    MetaResult,
    StageReport,
    freeze_layers,
    inner_adapt,
    outer_step,
    run_stage,
    run_xmetra,
    run_xmetra_ada,
)
from xmetra.meta.baselines import (
    BaselineConfig,
    BaselineResult,
    Corpora,
    ProvenanceCounter,
    epoch_batches,
    init_params,
    model_loss_fn,
    run_baseline,
    train_supervised,
)

__all__ = [
    "BaselineConfig", "BaselineKind", "BaselineResult", "Checkpoint", "Convergence", "ConvergenceMonitor",
    "Corpora", "MetaConfig", "MetaResult", "ProvenanceCounter", "StageReport", "TrainConfig",
    "epoch_batches", "freeze_layers", "init_params", "inner_adapt", "model_loss_fn", "outer_step",
    "run_baseline", "run_stage", "run_xmetra", "run_xmetra_ada", "train_supervised",
]
