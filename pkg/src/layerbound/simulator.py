"""Slotted Monte-Carlo fluid simulation of N tandem FIFO queues on Rayleigh links.

Each node is a work-conserving fluid queue; in a slot it serves up to its
Shannon capacity out of its backlog plus the slot's input.  Two forwarding
modes exist:

``cut-through`` (default)
    a node serves what its upstream neighbour forwarded in the same slot.
    Departures then equal the (min,+) concatenation of the per-link services
    exactly, which is what the analytic bounds assume.
``store-and-forward``
    a node only serves what it held before the slot started, so a bit moves
    at most one hop per slot.  Provided for sensitivity studies.

Queues are advanced a chunk at a time with the vectorized Lindley form
``B(t) = X(t) - min(-B0, min_{u<=t} X(u))`` where ``X`` is the running sum
of input minus capacity.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import ConfigError
from .model import LN2, ChannelParams, PathSpec, SlotGrid, VideoParams

log = logging.getLogger(__name__)

CUT_THROUGH = "cut-through"
STORE_AND_FORWARD = "store-and-forward"
FLUID = "fluid"
BURST = "burst"

DEFAULT_CHUNK = 1 << 18
MAX_ORACLE_SLOTS = 10_000
LOW_CONFIDENCE_EVENTS = 100
# floor() slack so numerically-exact layer boundaries are not lost to rounding
_LAYER_SLACK = 1e-9


# --------------------------------------------------------------------------- channel


def capacity_from_uniform(channel: ChannelParams, grid: SlotGrid, u):
    """Slot capacity in bits for uniform draw(s) ``u`` in (0, 1] via ``snr = -mean * ln(u)``."""
    snr = -channel.avg_snr_linear * np.log(u)
    return channel.bandwidth_hz * grid.slot_seconds * np.log1p(snr) / LN2


def sample_slot_capacity(channel: ChannelParams, grid: SlotGrid, rng: np.random.Generator,
                         size: Optional[int] = None):
    """Draw Rayleigh block-fading slot capacities (bits).

    Returns a float when ``size`` is None, else an array.
    """
    # 1 - U lies in (0, 1], so the log is finite
    u = 1.0 - rng.random(size)
    cap = capacity_from_uniform(channel, grid, u)
    return float(cap) if size is None else cap


def link_rng(seed: int, path_key: int, link: int) -> np.random.Generator:
    """Independent generator for one link of one path."""
    return np.random.Generator(np.random.PCG64(
        np.random.SeedSequence(seed, spawn_key=(path_key, link))))


# --------------------------------------------------------------------------- queue state


@dataclass(frozen=True)
class QueueState:
    """Per-node backlog plus the cumulative arrivals and end-to-end departures."""

    backlog_bits: tuple
    cumulative_departure_bits: float = 0.0
    cumulative_arrival_bits: float = 0.0

    @classmethod
    def empty(cls, hops: int) -> "QueueState":
        return cls((0.0,) * hops)

    @property
    def total_backlog(self) -> float:
        return float(sum(self.backlog_bits))


def step(state: QueueState, per_node_capacities: Sequence[float], arrival_bits_this_slot: float,
         forwarding: str = CUT_THROUGH) -> QueueState:
    """Advance the tandem by one slot (Reich's recursion at every node).

    Node 1 receives the slot's arrivals and serves ``min(backlog + input, capacity)``.
    In cut-through mode node ``k + 1``'s input is node ``k``'s output of the same
    slot; in store-and-forward mode downstream nodes serve their pre-slot
    backlog only and the upstream output is queued for the next slot.
    """
    caps = list(per_node_capacities)
    if len(caps) != len(state.backlog_bits):
        raise ValueError("one capacity per node required")
    if any(c < 0 for c in caps):
        raise ValueError("capacities must be non-negative")
    backlog = list(state.backlog_bits)
    if forwarding == CUT_THROUGH:
        inflow = arrival_bits_this_slot
        for k, cap in enumerate(caps):
            avail = backlog[k] + inflow
            out = min(avail, cap)
            backlog[k] = avail - out
            inflow = out
        departed = inflow
    elif forwarding == STORE_AND_FORWARD:
        outs = []
        for k, cap in enumerate(caps):
            avail = backlog[k] + (arrival_bits_this_slot if k == 0 else 0.0)
            outs.append(min(avail, cap))
        backlog[0] += arrival_bits_this_slot - outs[0]
        for k in range(1, len(caps)):
            backlog[k] += outs[k - 1] - outs[k]
        departed = outs[-1]
    else:
        raise ValueError(f"unknown forwarding mode {forwarding!r}")
    return QueueState(tuple(backlog),
                      state.cumulative_departure_bits + departed,
                      state.cumulative_arrival_bits + arrival_bits_this_slot)


def _lindley(inflow: np.ndarray, caps: np.ndarray, b0: float) -> tuple[np.ndarray, np.ndarray]:
    """Backlog after each slot and per-slot output of one fluid queue."""
    x = np.cumsum(inflow - caps)
    backlog = x - np.minimum.accumulate(np.minimum(x, -b0))
    np.maximum(backlog, 0.0, out=backlog)
    prev = np.empty_like(backlog)
    prev[0] = b0
    prev[1:] = backlog[:-1]
    out = prev + inflow - backlog
    np.maximum(out, 0.0, out=out)
    return backlog, out


class _Tandem:
    """Mutable engine state advanced chunk by chunk."""

    def __init__(self, hops: int, forwarding: str = CUT_THROUGH):
        if forwarding not in (CUT_THROUGH, STORE_AND_FORWARD):
            raise ConfigError(f"unknown forwarding mode {forwarding!r}")
        self.hops = hops
        self.forwarding = forwarding
        self.queue = np.zeros(hops)       # Lindley backlog per node
        self.in_transit = np.zeros(hops)  # store-and-forward: handed over, not yet servable
        self.cum_arrival = 0.0
        self.cum_departure = 0.0
        self.dropped = 0.0

    @property
    def backlog(self) -> np.ndarray:
        return self.queue + self.in_transit

    def flush(self) -> float:
        lost = float(self.backlog.sum())
        self.dropped += lost
        self.queue[:] = 0.0
        self.in_transit[:] = 0.0
        return lost

    def advance(self, arrivals: np.ndarray, caps: np.ndarray,
                want_backlog: bool = False) -> tuple[np.ndarray, Optional[np.ndarray]]:
        """Run ``len(arrivals)`` slots; ``caps`` has shape (hops, slots).

        Returns ``D(0, t)`` after every slot of the chunk and, optionally, the
        total network backlog after every slot.
        """
        inflow = arrivals
        total = np.zeros(len(arrivals)) if want_backlog else None
        for k in range(self.hops):
            if self.forwarding == STORE_AND_FORWARD and k > 0:
                shifted = np.empty_like(inflow)
                shifted[0] = self.in_transit[k]
                shifted[1:] = inflow[:-1]
                self.in_transit[k] = inflow[-1]
                if want_backlog:
                    total += inflow
                inflow = shifted
            backlog, out = _lindley(inflow, caps[k], self.queue[k])
            self.queue[k] = backlog[-1]
            if want_backlog:
                total += backlog
            inflow = out
        cum = self.cum_departure + np.cumsum(inflow)
        self.cum_departure = float(cum[-1])
        self.cum_arrival += float(arrivals.sum())
        return cum, total


@dataclass
class TraceResult:
    """Per-slot trajectories; index ``t`` holds the value at time ``t`` (after slot ``t-1``)."""

    cumulative_arrival: np.ndarray
    cumulative_departure: np.ndarray
    backlog: np.ndarray  # shape (slots + 1, hops)


def simulate_trace(arrivals: Sequence[float], capacities, forwarding: str = CUT_THROUGH) -> TraceResult:
    """Slot-by-slot reference run of :func:`step` over explicit traces.

    ``capacities`` has shape (hops, slots).
    """
    caps = np.atleast_2d(np.asarray(capacities, dtype=float))
    arrivals = np.asarray(arrivals, dtype=float)
    hops, slots = caps.shape
    if len(arrivals) != slots:
        raise ValueError("arrival and capacity traces differ in length")
    state = QueueState.empty(hops)
    cum_a = [0.0]
    cum_d = [0.0]
    backlog = [state.backlog_bits]
    for t in range(slots):
        state = step(state, caps[:, t], arrivals[t], forwarding)
        cum_a.append(state.cumulative_arrival_bits)
        cum_d.append(state.cumulative_departure_bits)
        backlog.append(state.backlog_bits)
    return TraceResult(np.array(cum_a), np.array(cum_d), np.array(backlog))


def minplus_oracle(arrival_trace: Sequence[float], service_trace) -> np.ndarray:
    """Brute-force (min,+) envelope ``inf_u {A(0,u) + S(u,t)}`` for ``t = 0..T``.

    ``service_trace`` is one per-slot capacity trace or a sequence of them
    (one per hop), in which case the hops are concatenated in order.
    O(T^2) per hop by design.
    """
    a = np.asarray(arrival_trace, dtype=float)
    services = np.atleast_2d(np.asarray(service_trace, dtype=float))
    slots = len(a)
    if slots > MAX_ORACLE_SLOTS:
        raise ConfigError(f"trace of {slots} slots exceeds the oracle cap of {MAX_ORACLE_SLOTS}")
    if services.shape[1] != slots:
        raise ValueError("arrival and service traces differ in length")
    envelope = np.concatenate([[0.0], np.cumsum(a)])
    for c in services:
        cum_s = np.concatenate([[0.0], np.cumsum(c)])
        nxt = np.empty(slots + 1)
        for t in range(slots + 1):
            # S(u, t) = service of slots u .. t-1
            nxt[t] = np.min(envelope[: t + 1] + (cum_s[t] - cum_s[: t + 1]))
        envelope = nxt
    return envelope


# --------------------------------------------------------------------------- frame-level runs


@dataclass(frozen=True)
class SimConfig:
    video: VideoParams
    path: PathSpec
    grid: SlotGrid
    playout_delay_s: float
    total_slots: int
    seed: int = 0
    warmup_slots: int = 0
    d_grid_bits: tuple = ()
    arrival_mode: str = FLUID
    forwarding: str = CUT_THROUGH
    capacity_override_bits: Optional[float] = None
    chunk_slots: int = DEFAULT_CHUNK
    debug: bool = False

    def __post_init__(self):
        if self.total_slots <= self.warmup_slots or self.warmup_slots < 0:
            raise ConfigError("need total_slots > warmup_slots >= 0")
        if self.arrival_mode not in (FLUID, BURST):
            raise ConfigError(f"unknown arrival mode {self.arrival_mode!r}")
        if self.forwarding not in (CUT_THROUGH, STORE_AND_FORWARD):
            raise ConfigError(f"unknown forwarding mode {self.forwarding!r}")
        if self.frame_slots < 1:
            raise ConfigError("frame period shorter than one slot")
        if self.deadline_slots < 1:
            raise ConfigError("playout deadline shorter than one slot")
        if self.capacity_override_bits is not None and self.capacity_override_bits < 0:
            raise ConfigError("capacity override must be non-negative")
        if self.chunk_slots < 1:
            raise ConfigError("chunk_slots must be positive")

    @property
    def frame_slots(self) -> int:
        return self.grid.slots(self.video.frame_period_s)

    @property
    def deadline_slots(self) -> int:
        return self.grid.slots(self.playout_delay_s)


@dataclass
class FrameStats:
    """Column-oriented per-frame records."""

    frame_index: np.ndarray
    generation_slot: np.ndarray
    frame_bits: np.ndarray
    delivered_bits: np.ndarray
    complete_layers: np.ndarray
    decodable_payload_bits: np.ndarray

    def __len__(self) -> int:
        return len(self.frame_index)

    @classmethod
    def empty(cls) -> "FrameStats":
        z = np.zeros(0)
        zi = np.zeros(0, dtype=np.int64)
        return cls(zi, zi, z, z, zi, z)

    @classmethod
    def concat(cls, parts: Iterable["FrameStats"]) -> "FrameStats":
        parts = list(parts)
        if not parts:
            return cls.empty()
        return cls(*(np.concatenate([getattr(p, f) for p in parts])
                     for f in ("frame_index", "generation_slot", "frame_bits", "delivered_bits",
                               "complete_layers", "decodable_payload_bits")))

    def rows(self):
        for i in range(len(self)):
            yield {
                "frame_index": int(self.frame_index[i]),
                "generation_slot": int(self.generation_slot[i]),
                "frame_bits": float(self.frame_bits[i]),
                "delivered_bits": float(self.delivered_bits[i]),
                "complete_layers": int(self.complete_layers[i]),
                "decodable_payload_bits": float(self.decodable_payload_bits[i]),
            }


@dataclass
class SimSummary:
    total_slots: int
    frames_counted: int
    frames_warmup: int
    arrival_bits: float
    departure_bits: float
    final_backlog_bits: float
    mean_delivered_bits: float
    min_trustworthy_epsilon: float
    lemma3_max_abs_diff: float = math.nan


def _frame_stats(video: VideoParams, index: np.ndarray, gen: np.ndarray, frame_bits: float,
                 delivered: np.ndarray) -> FrameStats:
    layers = np.floor(delivered / video.layer_bits + _LAYER_SLACK).astype(np.int64)
    return FrameStats(index, gen, np.full(len(index), float(frame_bits)), delivered, layers,
                      layers * video.layer_payload_bits)


class _Phase:
    """Runs a block of slots with fixed frame size and channel on a shared engine."""

    def __init__(self, engine: _Tandem, rngs: list, channel: ChannelParams, cfg: SimConfig,
                 start_slot: int, slots: int):
        self.engine = engine
        self.rngs = rngs
        self.channel = channel
        self.cfg = cfg
        self.start = start_slot
        self.slots = slots

    def _caps(self, n: int) -> np.ndarray:
        cfg = self.cfg
        if cfg.capacity_override_bits is not None:
            return np.full((self.engine.hops, n), float(cfg.capacity_override_bits))
        return np.stack([sample_slot_capacity(self.channel, cfg.grid, rng, n) for rng in self.rngs])

    def run(self, warmup_slots: int, first_frame: int) -> tuple[FrameStats, dict]:
        cfg = self.cfg
        tf, td = cfg.frame_slots, cfg.deadline_slots
        r = cfg.video.frame_bits
        n_frames = -(-self.slots // tf)
        k = np.arange(n_frames)
        gen = self.start + k * tf
        deadlines = gen + td
        arrivals_base = self.engine.cum_arrival - self.engine.dropped
        d_at_deadline = np.full(n_frames, np.nan)
        d_at_gen = np.full(n_frames, np.nan)
        b_at_gen = np.full(n_frames, np.nan)
        d_at_gen[0] = self.engine.cum_departure
        b_at_gen[0] = float(self.engine.backlog.sum())

        end = self.start + self.slots
        c0 = self.start
        while c0 < end:
            n = min(cfg.chunk_slots, end - c0)
            local = np.arange(c0, c0 + n) - self.start
            if cfg.arrival_mode == FLUID:
                arr = np.full(n, r / tf)
            else:
                arr = np.where(local % tf == 0, r, 0.0)
            cum, backlog = self.engine.advance(arr, self._caps(n), want_backlog=cfg.debug)
            sel = (deadlines > c0) & (deadlines <= c0 + n)
            d_at_deadline[sel] = cum[deadlines[sel] - c0 - 1]
            if cfg.debug:
                sel_g = (gen > c0) & (gen <= c0 + n)
                d_at_gen[sel_g] = cum[gen[sel_g] - c0 - 1]
                b_at_gen[sel_g] = backlog[gen[sel_g] - c0 - 1]
            c0 += n

        keep = (gen >= self.start + warmup_slots) & (deadlines <= end)
        offset = arrivals_base + k * r
        delivered = np.clip(d_at_deadline - offset, 0.0, r)
        extra = {"frames_warmup": int(np.count_nonzero(gen < self.start + warmup_slots))}
        if cfg.debug:
            backlog_form = np.clip(d_at_deadline - d_at_gen - b_at_gen, 0.0, r)
            diff = np.abs(backlog_form - delivered)[keep]
            extra["lemma3_max_abs_diff"] = float(diff.max()) if diff.size else 0.0
        stats = _frame_stats(cfg.video, first_frame + k[keep], gen[keep], r, delivered[keep])
        return stats, extra


def run(config: SimConfig, path_key: int = 0) -> tuple[FrameStats, SimSummary]:
    """Simulate ``config.total_slots`` slots and account every frame at its deadline.

    Frame ``i`` is born at slot ``i * T_f`` and owns the arrival interval
    ``[i r, (i + 1) r)``; its delivered bits are
    ``min(r, max(0, D(0, tau_i + T_D) - i r))``.  Frames born during warm-up or
    whose deadline falls after the last slot are not counted.
    """
    engine = _Tandem(config.path.hops, config.forwarding)
    rngs = [link_rng(config.seed, path_key, k) for k in range(config.path.hops)]
    phase = _Phase(engine, rngs, config.path.channel, config, 0, config.total_slots)
    stats, extra = phase.run(config.warmup_slots, 0)
    summary = SimSummary(
        total_slots=config.total_slots,
        frames_counted=len(stats),
        frames_warmup=extra["frames_warmup"],
        arrival_bits=engine.cum_arrival,
        departure_bits=engine.cum_departure,
        final_backlog_bits=float(engine.backlog.sum()),
        mean_delivered_bits=float(stats.delivered_bits.mean()) if len(stats) else math.nan,
        min_trustworthy_epsilon=LOW_CONFIDENCE_EVENTS / max(len(stats), 1),
        lemma3_max_abs_diff=extra.get("lemma3_max_abs_diff", math.nan),
    )
    return stats, summary


# --------------------------------------------------------------------------- statistics


@dataclass(frozen=True)
class ViolationRow:
    d_bits: float
    p_hat: float
    stderr: float
    count: int
    frames: int
    low_confidence: bool


def empirical_violation(stats: FrameStats, d_grid: Iterable[float]) -> list[ViolationRow]:
    """Empirical ``P(D^i <= d)`` with binomial standard errors for every ``d`` in the grid."""
    n = len(stats)
    if n == 0:
        raise ValueError("no frames to evaluate")
    delivered = np.sort(stats.delivered_bits)
    rows = []
    for d in d_grid:
        count = int(np.searchsorted(delivered, d, side="right"))
        p = count / n
        rows.append(ViolationRow(float(d), p, math.sqrt(p * (1.0 - p) / n), count, n,
                                 count < LOW_CONFIDENCE_EVENTS))
    return rows


def empirical_quantile_bits(stats: FrameStats, epsilon: float) -> float:
    """Largest delivered amount ``d`` with ``P_hat(D^i < d) <= epsilon`` (an order statistic)."""
    n = len(stats)
    if n == 0:
        raise ValueError("no frames to evaluate")
    delivered = np.sort(stats.delivered_bits)
    k = int(math.floor(epsilon * n))
    return float(delivered[min(k, n - 1)])


def log_slope(d_values: Sequence[float], probabilities: Sequence[float]) -> float:
    """Least-squares slope of ``ln p`` against ``d`` (per bit), ignoring p <= 0."""
    d = np.asarray(d_values, dtype=float)
    p = np.asarray(probabilities, dtype=float)
    ok = p > 0
    if np.count_nonzero(ok) < 2:
        raise ValueError("need at least two positive probabilities")
    return float(np.polyfit(d[ok], np.log(p[ok]), 1)[0])


# --------------------------------------------------------------------------- adaptation replay


@dataclass
class PhaseResult:
    epoch_index: int
    start_s: float
    path_id: str
    hops: int
    snr_db: float
    layers: int
    frame_bits: float
    predicted_d_eps_bits: float
    target_epsilon: float
    flushed: bool
    stats: FrameStats = field(repr=False)
    violation: Optional[ViolationRow] = None
    mean_decodable_layers: float = math.nan
    empirical_quantile_bits: float = math.nan

    @property
    def reliable(self) -> bool:
        """``P_hat <= epsilon`` allowing three standard errors at ``p = epsilon``."""
        if self.violation is None:
            return False
        n = self.violation.frames
        sigma = math.sqrt(self.target_epsilon * (1 - self.target_epsilon) / n)
        return self.violation.p_hat <= self.target_epsilon + 3 * sigma


def simulate_adaptation(scenario, config: SimConfig, decisions,
                        epsilon: float = math.nan) -> list[PhaseResult]:
    """Replay a decision sequence, one simulated phase per epoch.

    ``config.total_slots`` and ``config.warmup_slots`` are per phase (the
    scenario's wall-clock durations are far too short at desk scale), rounded
    up to whole frames.  ``config.video`` is the template whose layer count
    each decision overrides.  Backlog carries over while the path stays the
    same and is dropped on a path switch.  Mean-SNR updates of the epochs
    persist until overridden.
    """
    from .optimizer import resolve_epochs

    scenario = list(scenario)
    decisions = list(decisions)
    resolved = resolve_epochs(scenario)
    if len(scenario) != len(decisions):
        raise ConfigError("one decision per epoch required")
    tf = config.frame_slots
    phase_slots = -(-config.total_slots // tf) * tf
    engines: dict[str, _Tandem] = {}
    rngs: dict[str, list] = {}
    keys: dict[str, int] = {}
    current = None
    start = 0
    first_frame = 0
    results = []
    for idx, (epoch, paths, decision) in enumerate(zip(scenario, resolved, decisions)):
        path = next((p for p in paths if p.path_id == decision.chosen_path), None)
        if path is None:
            raise ConfigError(f"decision path {decision.chosen_path!r} not available in epoch {idx}")
        if path.path_id not in engines:
            keys[path.path_id] = len(keys)
            engines[path.path_id] = _Tandem(path.hops, config.forwarding)
            rngs[path.path_id] = [link_rng(config.seed, keys[path.path_id], k) for k in range(path.hops)]
        flushed = False
        if current is not None and current != path.path_id:
            engines[current].flush()
            flushed = True
        current = path.path_id
        engine = engines[path.path_id]
        # idle paths keep whatever they held; only the active path is advanced
        video = config.video.with_layers(decision.layers)
        cfg = replace(config, video=video, path=path, total_slots=phase_slots)
        phase = _Phase(engine, rngs[path.path_id], path.channel, cfg, start, phase_slots)
        stats, _ = phase.run(config.warmup_slots, first_frame)
        res = PhaseResult(idx, epoch.start_s, path.path_id, path.hops, path.channel.snr_db,
                          decision.layers, video.frame_bits, decision.predicted_d_eps_bits,
                          epsilon, flushed, stats)
        if len(stats):
            res.violation = empirical_violation(stats, [decision.predicted_d_eps_bits])[0]
            res.mean_decodable_layers = float(stats.complete_layers.mean())
        results.append(res)
        start += phase_slots
        first_frame += phase_slots // tf
    return results



@dataclass(frozen=True)
class OptCandidate:
    layers: int
    frames: int
    quantile_bits: float
    decodable_layers: int
    rate_bps: float


def opt_layers_by_simulation(config: SimConfig, epsilon: float, max_layers: Optional[int] = None,
                             path_key: int = 0) -> tuple[int, list[OptCandidate]]:
    """Simulation-driven reference choice of the layer count.

    Every ``L`` in ``[1, max_layers]`` is simulated with the same seed.  The
    empirical epsilon-quantile of the delivered bits is floored to whole
    layers and turned into a playout rate; the best rate wins, ties going to
    fewer layers.  This is the Monte-Carlo counterpart of the model objective.
    Returns the chosen ``L`` and one :class:`OptCandidate` per simulated ``L``.
    """
    top = int(config.video.max_layers if max_layers is None else max_layers)
    tried = []
    for L in range(1, top + 1):
        video = config.video.with_layers(L)
        stats, _ = run(replace(config, video=video), path_key)
        q = empirical_quantile_bits(stats, epsilon)
        k = min(int(math.floor(q / video.layer_bits + _LAYER_SLACK)), L)
        tried.append(OptCandidate(L, len(stats), q, k,
                                  k * video.layer_payload_bits / video.frame_period_s))
    best = max(tried, key=lambda c: (c.rate_bps, -c.layers))
    return best.layers, tried
