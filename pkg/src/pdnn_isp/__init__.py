"""2-D TM microwave imaging with a per-scene, physics-driven network."""
from .errors import ConfigError, DataError, NumericalError, SolverError
from .forward import assemble_operators, incident_field, mie_cylinder, solve_forward
from .geometry import ContrastMap, FieldMatrix, ImagingConfig, make_config, standard_config, profile_shapes
from .inversion import InversionRun, relative_error, run_bim, run_bp, run_pdnn
from .region import RegionMask, identify_region

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "DataError", "NumericalError", "SolverError",
    "assemble_operators", "incident_field", "mie_cylinder", "solve_forward",
    "ContrastMap", "FieldMatrix", "ImagingConfig", "make_config", "standard_config", "profile_shapes",
    "InversionRun", "relative_error", "run_bim", "run_bp", "run_pdnn",
    "RegionMask", "identify_region",
]
