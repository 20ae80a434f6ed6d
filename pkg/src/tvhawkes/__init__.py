"""Time-varying Hawkes parameters: block-local MLE, bias correction and Monte Carlo studies."""
from .model import (
    DEFAULT_BOX,
    BlockPartition,
    ConfigError,
    DomainError,
    EventParseError,
    EventSequence,
    HawkesParams,
    ParamBox,
    ParamPath,
    StateError,
    compensator,
    intensity_at,
    make_partition,
    model_path,
)
from .likelihood import CHParams, block_loglik, ch_loglik
from .simulate import RealizedPath, SimConfig, realize_path, simulate_hawkes, time_rescale
from .estimate import (
    BlockEstimate,
    IntegratedEstimate,
    cox_mle,
    estimate_naive,
    fit_block_mle,
    fit_ch,
    fit_global_mle,
    fit_seasonal,
    studentize,
    variance_hat,
)

__version__ = "0.1.0"
