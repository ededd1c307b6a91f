"""Shape-based homogeneous pixel selection and robust phase linking for
distributed-scatterer InSAR stacks."""

__version__ = "0.1.0"

from .acaf import ACAFConfig, SSHPMask, WindowSamples, select_sshp  # noqa: E402
from .ces_core import MagnitudeLaw, sample_ces, tyler_estimate  # noqa: E402
from .cgg import CGGFit, estimate_cgg  # noqa: E402
from .config import Config, load_config  # noqa: E402
from .phase_linking import PhaseHistory, cfpl_phases, cgg_mle_phases, pta_phases  # noqa: E402
from .pipeline import ProductSet, run_pipeline  # noqa: E402

__all__ = [
    "ACAFConfig",
    "CGGFit",
    "Config",
    "MagnitudeLaw",
    "PhaseHistory",
    "ProductSet",
    "SSHPMask",
    "WindowSamples",
    "cfpl_phases",
    "cgg_mle_phases",
    "estimate_cgg",
    "load_config",
    "pta_phases",
    "run_pipeline",
    "sample_ces",
    "select_sshp",
    "tyler_estimate",
]
