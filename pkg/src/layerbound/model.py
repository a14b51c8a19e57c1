"""Domain types, unit normalization and log-Mellin kernels.

Unit conventions: every bound is computed in nats per slot.  A link with
instantaneous SNR ``g`` serves ``nu * ln(1 + g)`` nats in a slot, where
``nu = W * dt``; the video source injects ``R_E * ln(2) * dt`` nats per slot.
The free Mellin parameter is ``theta = nu * (1 - s)`` so that the interesting
range is O(1) instead of a sliver next to ``s = 1``.  Public results are
converted back to bits and seconds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from scipy import special

from .specfun import exp_integral_e1, log_gamma_upper_scaled

LN2 = math.log(2.0)

# Durations are floored to whole slots; this slack keeps 0.45 / 0.01 at 45.
_SLOT_ROUNDING = 1e-9


def db_to_linear(snr_db: float) -> float:
    return 10.0 ** (snr_db / 10.0)


def linear_to_db(snr: float) -> float:
    return 10.0 * math.log10(snr)


@dataclass(frozen=True)
class ChannelParams:
    """Rayleigh block-fading link: mean SNR (linear) and bandwidth in Hz."""

    avg_snr_linear: float
    bandwidth_hz: float

    def __post_init__(self):
        if not self.avg_snr_linear > 0:
            raise ValueError(f"average SNR must be positive, got {self.avg_snr_linear}")
        if not self.bandwidth_hz > 0:
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth_hz}")

    @classmethod
    def from_db(cls, snr_db: float, bandwidth_hz: float) -> "ChannelParams":
        return cls(db_to_linear(snr_db), bandwidth_hz)

    @property
    def snr_db(self) -> float:
        return linear_to_db(self.avg_snr_linear)


@dataclass(frozen=True)
class SlotGrid:
    slot_seconds: float

    def __post_init__(self):
        if not self.slot_seconds > 0:
            raise ValueError(f"slot duration must be positive, got {self.slot_seconds}")

    def slots(self, duration_s: float) -> int:
        """Whole slots contained in ``duration_s`` (rounded down)."""
        if duration_s < 0:
            raise ValueError(f"negative duration {duration_s}")
        return int(math.floor(duration_s / self.slot_seconds + _SLOT_ROUNDING))


@dataclass(frozen=True)
class VideoParams:
    """Layered video source.

    ``num_layers`` may be fractional when a frame size that is not a multiple
    of the layer size is studied (fluid view); the optimizer only ever uses
    integer layer counts.
    """

    layer_payload_bits: float
    layer_header_bits: float = 0.0
    frame_rate_fps: float = 2.5
    num_layers: float = 1
    max_layers: int = 24

    def __post_init__(self):
        if not self.layer_payload_bits > 0:
            raise ValueError("layer payload must be positive")
        if self.layer_header_bits < 0:
            raise ValueError("layer header must be non-negative")
        if not self.frame_rate_fps > 0:
            raise ValueError("frame rate must be positive")
        if self.max_layers < 1:
            raise ValueError("max_layers must be >= 1")
        if not 0 <= self.num_layers <= self.max_layers:
            raise ValueError(
                f"num_layers={self.num_layers} outside [0, max_layers={self.max_layers}]")

    @classmethod
    def from_frame_bits(cls, frame_bits: float, layer_payload_bits: float = 100e3,
                        layer_header_bits: float = 0.0, frame_rate_fps: float = 2.5,
                        max_layers: int | None = None) -> "VideoParams":
        layers = frame_bits / (layer_payload_bits + layer_header_bits)
        if max_layers is None:
            max_layers = max(24, math.ceil(layers - 1e-9))
        return cls(layer_payload_bits, layer_header_bits, frame_rate_fps, layers, max_layers)

    def with_layers(self, num_layers: float) -> "VideoParams":
        return replace(self, num_layers=num_layers)

    @property
    def layer_bits(self) -> float:
        return self.layer_payload_bits + self.layer_header_bits

    @property
    def frame_bits(self) -> float:
        return self.layer_bits * self.num_layers

    @property
    def rate_bps(self) -> float:
        return self.frame_bits * self.frame_rate_fps

    @property
    def frame_period_s(self) -> float:
        return 1.0 / self.frame_rate_fps


@dataclass(frozen=True)
class PathSpec:
    """A route of ``hops`` identical links."""

    hops: int
    channel: ChannelParams
    path_id: str = "path"

    def __post_init__(self):
        if int(self.hops) != self.hops or self.hops < 1:
            raise ValueError(f"hops must be a positive integer, got {self.hops}")

    def with_snr_db(self, snr_db: float) -> "PathSpec":
        return replace(self, channel=ChannelParams.from_db(snr_db, self.channel.bandwidth_hz))


@dataclass(frozen=True)
class NormalizedLoad:
    arrival_nats_per_slot: float
    service_scale_nats: float
    rho: float


def normalize(v: VideoParams, c: ChannelParams, g: SlotGrid) -> NormalizedLoad:
    arrival = v.rate_bps * LN2 * g.slot_seconds
    nu = c.bandwidth_hz * g.slot_seconds
    return NormalizedLoad(arrival, nu, arrival / nu)


def _check_theta(theta: float) -> None:
    if not theta > 0:
        raise ValueError(f"theta must be positive, got {theta}")


def mellin_arrival_log(load: NormalizedLoad, theta: float, k: int) -> float:
    """Log Mellin transform of ``k`` slots of constant-rate arrivals."""
    _check_theta(theta)
    if k < 0:
        raise ValueError("k must be non-negative")
    return -theta * load.rho * k


def mellin_service_slot_log(c: ChannelParams, g: SlotGrid, theta: float) -> float:
    """Log of ``E[(1 + snr)**(-theta)]`` for one Rayleigh slot.

    Equals ``log(exp(1/snr) * snr**(-theta) * Gamma(1 - theta, 1/snr))``.
    The slot grid only enters through ``theta``'s scale and is accepted for
    signature symmetry with the other kernels.
    """
    _check_theta(theta)
    x = 1.0 / c.avg_snr_linear
    return log_gamma_upper_scaled(1.0 - theta, x) + math.log(x)


def log_v_kernel(load: NormalizedLoad, c: ChannelParams, g: SlotGrid, theta: float) -> float:
    return theta * load.rho + mellin_service_slot_log(c, g, theta)


def v_kernel(load: NormalizedLoad, c: ChannelParams, g: SlotGrid, theta: float) -> float:
    """Per-slot product of the arrival and service Mellin factors.

    Returns ``inf`` on overflow; callers treat that as unstable.
    """
    try:
        return math.exp(log_v_kernel(load, c, g, theta))
    except OverflowError:
        return math.inf


def log_binomial(n: float, k: float) -> float:
    return float(special.gammaln(n + 1) - special.gammaln(k + 1) - special.gammaln(n - k + 1))


def mellin_network_service_log(c: ChannelParams, g: SlotGrid, theta: float, k: int,
                               hops: int) -> float:
    """Log Mellin bound of the concatenated service of ``hops`` i.i.d. links over ``k`` slots."""
    _check_theta(theta)
    if k < 0 or hops < 1:
        raise ValueError("need k >= 0 and hops >= 1")
    if k == 0:
        return 0.0
    per_slot = mellin_service_slot_log(c, g, theta)
    if hops == 1:
        return k * per_slot
    return log_binomial(hops - 1 + k, k) + k * per_slot


def mean_log_snr_gain(c: ChannelParams) -> float:
    """``E[ln(1 + snr)] = exp(1/snr_mean) * E1(1/snr_mean)`` for exponential SNR."""
    x = 1.0 / c.avg_snr_linear
    return math.exp(x) * exp_integral_e1(x)


def avg_capacity_bps(c: ChannelParams) -> float:
    """Mean Shannon capacity ``E[W log2(1 + snr)]`` of a Rayleigh link in bits/s."""
    return c.bandwidth_hz / LN2 * mean_log_snr_gain(c)


def utilization(v: VideoParams, c: ChannelParams) -> float:
    return v.rate_bps / avg_capacity_bps(c)
