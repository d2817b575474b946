"""Diffusion-transformer sampling with learned cross-step module skipping.

A desk-scale, fully deterministic stack: a toy DiT backbone, a DDIM
sampler with classifier-free guidance, per-module skip predictors with a
previous-step output cache, a finite-difference trainer for those
predictors, Monte-Carlo verifiers for the supporting norm bounds, and a
MAC cost model for realistic architectures.
"""

from .backbone import (
    KINDS,
    AttentionOverflowError,
    ModelConfig,
    ModelWeights,
    attention_forward,
    embed_condition,
    feedforward_forward,
    init_model_weights,
    model_forward,
    modulate,
    modulation_factors,
)
from .config import RunConfig, default_config, load_config
from .costmodel import ArchSpec, mac_count, mac_report, preset
from .data import SyntheticDataset, gen_synthetic_dataset
from .lazy import (
    BlendedEvaluator,
    GatedEvaluator,
    PredictorBank,
    RunStats,
    StepCache,
    blended_forward,
    gated_forward,
    lazy_ratio,
    lazy_score,
    mac_tally,
    skip_rate_table,
    write_heatmap_csv,
)
from .linalg import (
    ConvergenceError,
    ShapeMismatchError,
    cosine_similarity,
    frobenius_norm,
    make_rng,
    matmul,
    sigmoid,
    silu,
    spectral_norm,
)
from .scheduler import (
    DenseEvaluator,
    NoiseSchedule,
    SamplerPlan,
    build_schedule,
    cfg_combine,
    ddim_step,
    sample_loop,
    uniform_plan,
)
from .theory import (
    BoundReport,
    construct_matrix_scaling,
    construct_row_scaling,
    error_propagation_check,
    linear_probe_fit,
    lipschitz_probe,
    run_all_suites,
    run_suite,
    similarity_floor_check,
)
from .training import (
    AdamWState,
    TrainConfig,
    adamw_step,
    analytic_lazy_grad,
    evaluate_inference,
    evaluate_loss,
    fd_gradient,
    lazy_loss,
    penalty_sweep,
    train_loop,
)

__version__ = "0.1.0"
