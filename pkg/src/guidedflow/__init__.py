"""Flow-matching motion policies with density-based potential-field guidance.

Modules
-------
nnet        conditioned MLP with hand-written reverse mode and Adam
flowmatch   rectified-flow training and (guided) Euler sampling
density     Gaussian KDE with stable log-density and gradient
potential   safe set, potential and per-waypoint guidance field
mazeworld   maze geometry, expert demonstrations, episode rollout
evalbench   suites, repeated evaluation, guidance-weight sweeps
persist     binary artifact formats
appcli      configuration and the ``guidedflow`` command line
"""
from .errors import FormatError, NumericError, PlanningError, ShapeError

__version__ = "0.1.0"

__all__ = ["FormatError", "NumericError", "PlanningError", "ShapeError", "__version__"]
