"""Probabilistic departure bounds and layer adaptation for layered video over multi-hop Rayleigh paths."""

from .bounds import (BoundQuery, BoundResult, complete_layers, departure_tail_closed, evaluate,
                     invert_d_epsilon, playout_rate_bound, stability_check, td_sensitivity)
from .errors import (CapActiveError, ConfigError, DomainError, InfeasibleError, LossOfAccuracyError,
                     QuadratureError, UnstableSystemError)
from .model import ChannelParams, PathSpec, SlotGrid, VideoParams, avg_capacity_bps, utilization
from .optimizer import (AdaptationDecision, AdaptationEpoch, optimize_layers, run_adaptation,
                        scan_layers, select_path)
from .specfun import exp_integral_e1, gamma_upper, log_gamma_upper

__version__ = "0.1.0"
