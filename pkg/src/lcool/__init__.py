"""Langevin cooling: tempered Langevin dynamics that pull fringe test samples
towards high-density regions before domain translation."""

__version__ = "0.1.0"

from .exceptions import (
    DatasetFormatError,
    DimensionError,
    DivergenceError,
    LCoolError,
    NumericalError,
    OnManifoldError,
)
from .langevin import (
    CoolingConfig,
    FringeDetector,
    LangevinCooler,
    Trail,
    chain_moments,
    cool,
    cool_many,
    detect_fringe,
    effective_beta,
    fringe_score,
    mala_step,
)
from .metrics import manifold_residual, manifold_residual_values, score_angles
from .nn import AdamState, Layer, MlpModel, adam_step, backward, forward, init_mlp
from .rng import Rng, rng_normal
from .score import (
    CycleScore,
    CycleScoreConfig,
    DaeModel,
    DenoisingAutoencoder,
    GaussianDensity,
    cycle_score,
    dae_score,
    gaussian_score,
    train_dae,
)
from .toy_data import (
    Dataset,
    ToyDatasetSpec,
    generate_source,
    generate_target,
    load_dataset,
    make_offmanifold_tests,
    save_dataset,
)
from .translate import (
    CycleGanTranslator,
    PipelineResult,
    ToyCycleGan,
    run_lcool_cycle_pipeline,
    run_lcool_pipeline,
    train_cyclegan_toy,
    translate,
)
