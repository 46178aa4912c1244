"""Mixture of band-limited spectral experts for adapting frozen linear layers."""

from .config import RunConfig, load_config
from .estimator import FourierMoEClassifier, FourierMoERegressor
from .exceptions import (
    CapacityError,
    CheckpointCorruptError,
    CheckpointError,
    CheckpointIOError,
    CheckpointVersionError,
    ConfigError,
    FourierMoEError,
    FrequencyRangeError,
    InputError,
    ParameterError,
    TrainingError,
)
from .experts import (
    BandParams,
    SpectralExpert,
    band_probability,
    init_ensemble,
    init_expert,
    numerical_rank,
    reconstruct,
    sample_band_indices,
    spectral_overlap,
)
from .layer import AdapterSite, build_site, composite_update, effective_rank, forward, param_count
from .router import Router, RoutingDecision, gate, gate_batch, load_balance_loss
from .spectral import (
    HalfSpectrum,
    basis_kernel,
    dft2,
    hermitian_embed,
    idft2,
    imaginary_energy,
    is_hermitian,
    radial_psd,
    truncation_error,
)
from .training import (
    LossBreakdown,
    TrainState,
    backward,
    evaluate,
    finite_difference_check,
    optimizer_step,
    total_loss,
    train,
)
from .variants import LowRankAdapter, UnsymmetricExpert

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
