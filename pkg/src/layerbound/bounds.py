"""Probabilistic lower bounds on per-frame departures over N-hop Rayleigh paths.

All routines work in nats per slot internally (see :mod:`layerbound.model`)
and report bits at the boundary.  Probabilities above one are vacuous and are
clamped to 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import special

from . import model
from .errors import CapActiveError, UnstableSystemError
from .model import LN2, PathSpec, SlotGrid, VideoParams
from .search import bracket_then_golden

SCAN_THETA_MIN = 1e-6
SCAN_THETA_MAX = 1e5
SCAN_POINTS = 256
BRACKET_POINTS = 64
THETA_REL_TOL = 1e-4


@dataclass(frozen=True)
class BoundQuery:
    """One bound evaluation: either ``epsilon`` (find d) or ``target_departure_bits`` (find P)."""

    video: VideoParams
    path: PathSpec
    grid: SlotGrid
    playout_delay_s: float
    epsilon: Optional[float] = None
    target_departure_bits: Optional[float] = None

    def __post_init__(self):
        if not self.playout_delay_s > 0:
            raise ValueError("playout delay must be positive")
        if (self.epsilon is None) == (self.target_departure_bits is None):
            raise ValueError("give exactly one of epsilon or target_departure_bits")
        if self.epsilon is not None and not 0 < self.epsilon < 1:
            raise ValueError(f"epsilon must be in (0, 1), got {self.epsilon}")
        if self.target_departure_bits is not None and self.target_departure_bits < 0:
            raise ValueError("target departures must be >= 0")

    @property
    def mode(self) -> str:
        return "bits" if self.epsilon is not None else "probability"


@dataclass(frozen=True)
class BoundResult:
    """Outcome of a bound evaluation.

    ``value`` is a probability (clamped to [0, 1]) or a number of bits
    (clamped to [0, frame size]) depending on the query.  ``raw_value`` keeps
    the number before clamping and capping, in the same unit.
    """

    value: float
    theta_star: float
    stable: bool
    capped_at_frame_size: bool = False
    infeasible: bool = False
    raw_value: float = math.nan


class _Kernel:
    """Per-slot quantities for a (video, path, grid) triple, with memoized V(theta)."""

    def __init__(self, video: VideoParams, path: PathSpec, grid: SlotGrid):
        self.video = video
        self.path = path
        self.grid = grid
        self.load = model.normalize(video, path.channel, grid)
        self.nu = self.load.service_scale_nats
        self.rho = self.load.rho
        self.hops = path.hops
        self._cache: dict[float, float] = {}

    def log_v(self, theta: float) -> float:
        val = self._cache.get(theta)
        if val is None:
            val = model.log_v_kernel(self.load, self.path.channel, self.grid, theta)
            self._cache[theta] = val
        return val

    def log_one_minus_v(self, theta: float) -> float:
        lv = self.log_v(theta)
        if lv >= 0:
            return -math.inf
        return math.log(-math.expm1(lv))


def _stable_range(k: _Kernel) -> tuple[bool, tuple[float, float]]:
    # log V is convex with log V(0) = 0, so {V < 1} is an interval (0, theta_hi)
    # and the scan may stop at the first crossing back above 1.
    grid = np.geomspace(SCAN_THETA_MIN, SCAN_THETA_MAX, SCAN_POINTS)
    last_ok = None
    for theta in grid:
        theta = float(theta)
        if k.log_v(theta) < 0:
            last_ok = theta
        elif last_ok is not None:
            lo, hi = math.log(last_ok), math.log(theta)
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                if k.log_v(math.exp(mid)) < 0:
                    lo = mid
                else:
                    hi = mid
            return True, (0.0, math.exp(lo))
        else:
            # V >= 1 at the smallest scanned theta: by convexity never below 1 later
            return False, (math.nan, math.nan)
    if last_ok is None:
        return False, (math.nan, math.nan)
    return True, (0.0, last_ok)


def stability_check(video: VideoParams, path: PathSpec, grid: SlotGrid) -> tuple[bool, tuple[float, float]]:
    """Is there a theta > 0 with V(theta) < 1?

    Returns the flag and the bracket ``(0, theta_hi)`` of the stable range.
    The upper end is ``SCAN_THETA_MAX`` when V stays below 1 over the whole
    scan (e.g. no traffic).
    """
    return _stable_range(_Kernel(video, path, grid))


def _log_tail_at(k: _Kernel, theta: float, d_nats: float, t_slots: int) -> float:
    l1v = k.log_one_minus_v(theta)
    if l1v == -math.inf:
        return math.inf
    return -theta * (k.rho * t_slots - d_nats / k.nu) - k.hops * l1v


def log_departure_tail_closed_at(video: VideoParams, path: PathSpec, grid: SlotGrid,
                                 d_bits: float, playout_delay_s: float, theta: float) -> float:
    """Log of the unclamped closed-form tail bound at a fixed theta (inf if unstable there)."""
    k = _Kernel(video, path, grid)
    return _log_tail_at(k, theta, d_bits * LN2, grid.slots(playout_delay_s))


def log_departure_tail_finite(video: VideoParams, path: PathSpec, grid: SlotGrid, theta: float,
                              d_bits: float, horizon_slots: int, playout_delay_s: float) -> float:
    """Log of the truncated union bound on ``P(D^i <= d)`` for a frame born at ``horizon - T_D``.

    The sum runs over every split point ``u`` in ``[0, horizon]`` of the
    departure interval ``[0, horizon)``; it is the partial sum of the series
    whose limit is the closed form.
    """
    if theta <= 0:
        raise ValueError("theta must be positive")
    t_slots = grid.slots(playout_delay_s)
    if horizon_slots < t_slots:
        raise ValueError(f"horizon {horizon_slots} shorter than the deadline ({t_slots} slots)")
    k = _Kernel(video, path, grid)
    per_slot = model.mellin_service_slot_log(path.channel, grid, theta)
    u = np.arange(horizon_slots + 1, dtype=float)
    v = horizon_slots - u
    net = v * per_slot
    if k.hops > 1:
        net = net + special.gammaln(k.hops + v) - special.gammaln(v + 1) - special.gammaln(k.hops)
    terms = -theta * k.rho * u + net
    threshold = d_bits * LN2 / k.nu + k.rho * (horizon_slots - t_slots)
    return theta * threshold + float(special.logsumexp(terms))


def departure_tail_finite(video: VideoParams, path: PathSpec, grid: SlotGrid, theta: float,
                          d_bits: float, horizon_slots: int, playout_delay_s: float) -> float:
    lt = log_departure_tail_finite(video, path, grid, theta, d_bits, horizon_slots, playout_delay_s)
    return 1.0 if lt >= 0 else math.exp(lt)


def departure_tail_closed(video: VideoParams, path: PathSpec, grid: SlotGrid, d_bits: float,
                          playout_delay_s: float) -> BoundResult:
    """Upper bound on ``P(D^i <= d)``, the chance a frame delivers at most d bits by its deadline.

    Raises:
        UnstableSystemError: no stable theta exists.
    """
    if d_bits < 0:
        raise ValueError("d must be non-negative")
    k = _Kernel(video, path, grid)
    stable, (lo, hi) = _stable_range(k)
    # D^i never exceeds the frame, so P(D^i <= d) = 1 from d = r on
    if d_bits >= video.frame_bits:
        return BoundResult(1.0, math.nan, stable, capped_at_frame_size=True, raw_value=1.0)
    if not stable:
        raise UnstableSystemError(
            f"rho={k.rho:.4g} exceeds mean service {model.mean_log_snr_gain(path.channel):.4g}")
    t_slots = grid.slots(playout_delay_s)
    d_nats = d_bits * LN2
    theta, log_p = bracket_then_golden(lambda th: _log_tail_at(k, th, d_nats, t_slots),
                                       lo, hi, BRACKET_POINTS, THETA_REL_TOL)
    raw = math.exp(log_p) if log_p < 700 else math.inf
    return BoundResult(min(raw, 1.0), theta, True, raw_value=raw)


def _penalty_nats(k: _Kernel, theta: float, epsilon: float) -> float:
    l1v = k.log_one_minus_v(theta)
    if l1v == -math.inf:
        return -math.inf
    return k.nu / theta * (k.hops * l1v + math.log(epsilon))


def _best_penalty(k: _Kernel, epsilon: float) -> tuple[float, float]:
    stable, (lo, hi) = _stable_range(k)
    if not stable:
        raise UnstableSystemError(
            f"rho={k.rho:.4g} exceeds mean service {model.mean_log_snr_gain(k.path.channel):.4g}")
    theta, neg = bracket_then_golden(lambda th: -_penalty_nats(k, th, epsilon),
                                     lo, hi, BRACKET_POINTS, THETA_REL_TOL)
    return theta, -neg


def invert_d_epsilon(video: VideoParams, path: PathSpec, grid: SlotGrid, playout_delay_s: float,
                     epsilon: float) -> BoundResult:
    """Bits of a frame delivered by its deadline with probability at least ``1 - epsilon``.

    A negative optimum is reported as 0 with ``infeasible`` set.

    Raises:
        UnstableSystemError: no stable theta exists.
    """
    if not 0 < epsilon < 1:
        raise ValueError(f"epsilon must be in (0, 1), got {epsilon}")
    k = _Kernel(video, path, grid)
    theta, penalty = _best_penalty(k, epsilon)
    t_slots = grid.slots(playout_delay_s)
    raw_bits = (k.load.arrival_nats_per_slot * t_slots + penalty) / LN2
    frame = video.frame_bits
    if raw_bits >= frame:
        return BoundResult(frame, theta, True, capped_at_frame_size=True, raw_value=raw_bits)
    if raw_bits < 0:
        return BoundResult(0.0, theta, True, infeasible=True, raw_value=raw_bits)
    return BoundResult(raw_bits, theta, True, raw_value=raw_bits)


def complete_layers(video: VideoParams, d_bits: float) -> int:
    if d_bits < 0:
        raise ValueError("d must be non-negative")
    return int(math.floor(d_bits / video.layer_bits + 1e-9))


def playout_rate_bound(video: VideoParams, d_eps_bits: float) -> float:
    """Decodable playout rate (bits/s) implied by ``d_eps_bits`` delivered per frame."""
    return complete_layers(video, d_eps_bits) * video.layer_payload_bits / video.frame_period_s


def td_sensitivity(video: VideoParams, path: PathSpec, grid: SlotGrid, epsilon: float,
                   playout_delay_s: float) -> tuple[float, float]:
    """Slope (bits/s) and intercept (bits) of the uncapped d-epsilon bound in the deadline.

    Raises:
        CapActiveError: the frame-size cap binds at ``playout_delay_s``.
        UnstableSystemError: no stable theta exists.
    """
    k = _Kernel(video, path, grid)
    _, penalty = _best_penalty(k, epsilon)
    slope = video.rate_bps
    intercept = penalty / LN2
    deadline = grid.slots(playout_delay_s) * grid.slot_seconds
    if slope * deadline + intercept >= video.frame_bits:
        raise CapActiveError(
            f"d-epsilon reaches the frame size {video.frame_bits:.6g} bits at T_D={playout_delay_s}")
    return slope, intercept


def evaluate(query: BoundQuery) -> BoundResult:
    """Dispatch a :class:`BoundQuery` to the matching bound."""
    if query.epsilon is not None:
        return invert_d_epsilon(query.video, query.path, query.grid, query.playout_delay_s,
                                query.epsilon)
    return departure_tail_closed(query.video, query.path, query.grid,
                                 query.target_departure_bits, query.playout_delay_s)
