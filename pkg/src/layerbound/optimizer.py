"""Layer-count optimization, path selection and epoch-driven adaptation.

The objective is the decodable playout-rate bound ``r_D`` (whole layers
only) or, behind ``objective="departures"``, the raw per-frame bound d^eps.
Both are functions of the layer count ``L`` through the frame size
``r = (m + h) L``; d^eps first grows with ``r`` (cap regime) and then
collapses once the path saturates.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Optional, Sequence

from . import bounds
from .errors import InfeasibleError, UnstableSystemError
from .model import PathSpec, SlotGrid, VideoParams

log = logging.getLogger(__name__)

RATE = "rate"
DEPARTURES = "departures"
OBJECTIVES = (RATE, DEPARTURES)
MAX_SCAN_LAYERS = 1024
GUARD = 2


@dataclass(frozen=True)
class AdaptationEpoch:
    """From ``start_s`` on, the listed paths are usable with the given mean SNR updates (dB)."""

    start_s: float
    channel_updates: Mapping[str, float] = field(default_factory=dict)
    available_paths: tuple = ()

    def __post_init__(self):
        if not self.available_paths:
            raise ValueError("an epoch needs at least one available path")
        ids = [p.path_id for p in self.available_paths]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate path ids in epoch at {self.start_s}s")


@dataclass(frozen=True)
class AdaptationDecision:
    chosen_path: str
    layers: int
    transmitted_frame_bits: float
    predicted_d_eps_bits: float
    predicted_rate_bound_bps: float
    hops: int = 1
    snr_db: float = math.nan
    theta_star: float = math.nan
    capped: bool = False
    fallback: bool = False
    start_s: float = 0.0


@dataclass(frozen=True)
class LayerScanRow:
    layers: int
    frame_bits: float
    d_eps_bits: float
    rate_bound_bps: float
    theta_star: float
    stable: bool
    capped: bool
    infeasible: bool
    raw_d_eps_bits: float


class _LayerObjective:
    """Memoized d^eps and rate bound as functions of the integer layer count."""

    def __init__(self, video: VideoParams, path: PathSpec, grid: SlotGrid, playout_delay_s: float,
                 epsilon: float):
        self.video = video
        self.path = path
        self.grid = grid
        self.td = playout_delay_s
        self.eps = epsilon
        self._rows: dict[int, LayerScanRow] = {}

    def row(self, L: int) -> LayerScanRow:
        got = self._rows.get(L)
        if got is not None:
            return got
        v = self.video.with_layers(L)
        try:
            res = bounds.invert_d_epsilon(v, self.path, self.grid, self.td, self.eps)
        except UnstableSystemError:
            got = LayerScanRow(L, v.frame_bits, 0.0, 0.0, math.nan, False, False, True, -math.inf)
        else:
            got = LayerScanRow(L, v.frame_bits, res.value, bounds.playout_rate_bound(v, res.value),
                               res.theta_star, True, res.capped_at_frame_size, res.infeasible,
                               res.raw_value)
        self._rows[L] = got
        return got

    def shape(self, L: int) -> float:
        # capped d^eps with infeasible and unstable points kept ordered below zero
        row = self.row(L)
        if not row.stable:
            return -math.inf
        return min(row.raw_d_eps_bits, row.frame_bits)

    def score(self, L: int, objective: str) -> float:
        row = self.row(L)
        if not row.stable or row.infeasible:
            return -math.inf
        return row.rate_bound_bps if objective == RATE else row.d_eps_bits


def _check_objective(objective: str) -> None:
    if objective not in OBJECTIVES:
        raise ValueError(f"objective must be one of {OBJECTIVES}, got {objective!r}")


def _ternary_argmax(f, lo: int, hi: int) -> int:
    while hi - lo > 2:
        m1 = lo + (hi - lo) // 3
        m2 = hi - (hi - lo) // 3
        if f(m1) < f(m2):
            lo = m1 + 1
        else:
            hi = m2
    return max(range(lo, hi + 1), key=lambda L: (f(L), -L))


def _decision(obj: _LayerObjective, L: int, start_s: float = 0.0) -> AdaptationDecision:
    row = obj.row(L)
    return AdaptationDecision(obj.path.path_id, L, row.frame_bits, row.d_eps_bits,
                              row.rate_bound_bps, obj.path.hops, obj.path.channel.snr_db,
                              row.theta_star, row.capped, False, start_s)


def optimize_layers(video_template: VideoParams, path: PathSpec, grid: SlotGrid,
                    playout_delay_s: float, epsilon: float,
                    objective: str = RATE) -> AdaptationDecision:
    """Best integer layer count in ``[1, max_layers]`` for one path.

    A ternary search locates the peak of the capped d^eps, which every
    objective is monotone in.  Equal-rate plateaus are then walked towards
    fewer layers and a +-2 neighbourhood is checked exhaustively.

    Raises:
        InfeasibleError: every layer count is unstable or has a negative d^eps.
    """
    _check_objective(objective)
    L_max = int(video_template.max_layers)
    if L_max < 1:
        raise ValueError("max_layers must be >= 1")
    obj = _LayerObjective(video_template, path, grid, playout_delay_s, epsilon)
    peak = _ternary_argmax(obj.shape, 1, L_max)
    best = obj.score(peak, objective)
    if best == -math.inf:
        # the peak itself is infeasible; feasible points, if any, sit further left
        peak = next((L for L in range(peak, 0, -1) if obj.score(L, objective) > -math.inf), None)
        if peak is None:
            raise InfeasibleError(f"no feasible layer count on path {path.path_id!r}")
        best = obj.score(peak, objective)
    L = peak
    while L > 1 and obj.score(L - 1, objective) >= best:
        L -= 1
    window = range(max(1, L - GUARD), min(L_max, L + GUARD) + 1)
    L = max(window, key=lambda k: (obj.score(k, objective), -k))
    return _decision(obj, L)


def scan_layers(video_template: VideoParams, path: PathSpec, grid: SlotGrid,
                playout_delay_s: float, epsilon: float) -> list[LayerScanRow]:
    """d^eps and rate bound for every ``L`` in ``[1, max_layers]``."""
    L_max = int(video_template.max_layers)
    if not 1 <= L_max <= MAX_SCAN_LAYERS:
        raise ValueError(f"max_layers must be in [1, {MAX_SCAN_LAYERS}]")
    obj = _LayerObjective(video_template, path, grid, playout_delay_s, epsilon)
    return [obj.row(L) for L in range(1, L_max + 1)]


def scan_argmax(rows: Sequence[LayerScanRow], objective: str = RATE) -> Optional[int]:
    """Exhaustive-oracle optimum of a scan table (ties to fewer layers); None if all infeasible."""
    _check_objective(objective)
    best_L, best = None, -math.inf
    for row in rows:
        if not row.stable or row.infeasible:
            continue
        val = row.rate_bound_bps if objective == RATE else row.d_eps_bits
        if val > best:
            best_L, best = row.layers, val
    return best_L


def _path_order(d: AdaptationDecision, objective: str):
    val = d.predicted_rate_bound_bps if objective == RATE else d.predicted_d_eps_bits
    return (-val, d.hops, d.chosen_path)


def select_path(video_template: VideoParams, paths: Iterable[PathSpec], grid: SlotGrid,
                playout_delay_s: float, epsilon: float,
                objective: str = RATE) -> AdaptationDecision:
    """Optimize every path and keep the best; ties go to fewer hops, then the smaller id.

    Raises:
        InfeasibleError: no path has a feasible layer count.
    """
    paths = list(paths)
    if not paths:
        raise ValueError("need at least one path")
    found = []
    for p in paths:
        try:
            found.append(optimize_layers(video_template, p, grid, playout_delay_s, epsilon, objective))
        except InfeasibleError:
            log.info("path %s infeasible", p.path_id)
    if not found:
        raise InfeasibleError("no feasible path")
    return min(found, key=lambda d: _path_order(d, objective))


def resolve_epochs(scenario: Sequence[AdaptationEpoch]) -> list[tuple[PathSpec, ...]]:
    """Paths of every epoch with the SNR updates seen so far applied (updates persist)."""
    snr: dict[str, float] = {}
    out = []
    prev = -math.inf
    for ep in scenario:
        if not ep.start_s > prev:
            raise ValueError("epoch start times must be strictly increasing")
        prev = ep.start_s
        snr.update(ep.channel_updates)
        out.append(tuple(p.with_snr_db(snr[p.path_id]) if p.path_id in snr else p
                         for p in ep.available_paths))
    return out


def run_adaptation(scenario: Sequence[AdaptationEpoch], video_template: VideoParams,
                   grid: SlotGrid, playout_delay_s: float, epsilon: float,
                   objective: str = RATE) -> list[AdaptationDecision]:
    """One decision per epoch, held until the next epoch starts.

    When nothing is feasible in an epoch the base layer is sent on the
    shortest available path and the decision carries ``fallback=True``.
    """
    scenario = list(scenario)
    decisions = []
    for ep, paths in zip(scenario, resolve_epochs(scenario)):
        try:
            d = select_path(video_template, paths, grid, playout_delay_s, epsilon, objective)
            d = replace(d, start_s=ep.start_s)
        except InfeasibleError:
            p = min(paths, key=lambda q: (q.hops, q.path_id))
            log.warning("epoch at %.6gs: no feasible layer count, sending base layer on %s",
                        ep.start_s, p.path_id)
            v = video_template.with_layers(1)
            d = AdaptationDecision(p.path_id, 1, v.frame_bits, 0.0, 0.0, p.hops, p.channel.snr_db,
                                   math.nan, False, True, ep.start_s)
        decisions.append(d)
    return decisions

