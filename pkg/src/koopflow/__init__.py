"""Few-shot forecasting of coupled free-flow/porous-media fields.

A patch-attention encoder lifts flow snapshots into a low-dimensional
latent observable whose evolution is governed by a structured linear
generator that is contractive by construction, so long-horizon prediction
errors grow at most linearly. Includes analytic benchmark generators,
training, evaluation, and robustness experiments.
"""

from .errors import CheckpointError, ConfigError
from .fields import (
    CHANNELS,
    DomainSpec,
    Example,
    FieldSample,
    FieldSnapshot,
    ResidualReport,
    TrajectoryDataset,
    eval_exact_nsd,
    eval_exact_sd,
    eval_forced_field,
    generate_dataset,
    interface_residuals,
    make_domain,
    normalize,
)
from .dataio import load_dataset, save_dataset
from .generators import (
    BlockDiagGenerator,
    DenseStableGenerator,
    ForcingHead,
    assemble,
    edmd_fit,
    evolve,
    evolve_recursive,
    expm,
    forced_evolve,
    softplus_inv,
    spectral_norm_expm,
    spectrum,
)
from .models import (
    EncoderConfig,
    FieldDecoder,
    FlowModel,
    PatchEncoder,
    assemble_inputs,
    count_parameters,
    harmonic_embed,
)
from .training import (
    Checkpoint,
    LossWeights,
    TrainConfig,
    composite_loss,
    finite_difference_check,
    load_checkpoint,
    lr_schedule,
    restore_model,
    save_checkpoint,
    train,
)
from .evaluation import (
    GrowthFit,
    MetricsRow,
    convergence_study,
    denoise_r2,
    error_growth_fit,
    evaluate,
    inject_noise,
    metrics,
    phase_average,
    r2_score,
    rollout,
    rollout_rmse,
)

__version__ = "0.1.0"
