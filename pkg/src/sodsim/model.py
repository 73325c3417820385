"""Closed-form power, throughput and caching relations.

Everything here is a pure function of its arguments. Units:

* distances in meters, rates in Mb/s
* powers in microwatts (scaled by ``PowerCalibration.k_power``)
* delays in seconds
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence


class ModelDomainError(ValueError):
    """An argument lies outside the domain of a model relation."""


class CapacitySign(str, Enum):
    DECAY = "decay"
    GROWTH = "growth"


@dataclass(frozen=True)
class LinkSpec:
    """One directed radio link. Reverse direction is a separate LinkSpec."""

    distance_m: float
    rate_mbps: float
    loss_exponent: float = 3.0
    fading_factor: float = 1.0

    def __post_init__(self):
        if not self.distance_m > 0:
            raise ModelDomainError(f"distance_m must be > 0, got {self.distance_m}")
        if not self.rate_mbps > 0:
            raise ModelDomainError(f"rate_mbps must be > 0, got {self.rate_mbps}")
        if not 2.0 < self.loss_exponent <= 4.0:
            raise ModelDomainError(
                f"loss_exponent must lie in (2, 4], got {self.loss_exponent}")
        if not self.fading_factor >= 0:
            raise ModelDomainError(
                f"fading_factor must be >= 0, got {self.fading_factor}")


@dataclass(frozen=True)
class PowerCalibration:
    k_power: float = 0.2  # uW per (Mb/s * m^r)
    capacity_exponent_sign: CapacitySign = CapacitySign.DECAY

    def __post_init__(self):
        if not self.k_power > 0:
            raise ModelDomainError(f"k_power must be > 0, got {self.k_power}")
        object.__setattr__(self, "capacity_exponent_sign",
                           CapacitySign(self.capacity_exponent_sign))


@dataclass(frozen=True)
class ThroughputStats:
    transmitted_blocks: int
    received_blocks: int
    transfer_size_bits: float = 0.0
    transfer_time_s: float = 0.0
    bandwidth_bps: float = 0.0

    def __post_init__(self):
        if not 0 <= self.received_blocks <= self.transmitted_blocks:
            raise ModelDomainError(
                "need 0 <= received_blocks <= transmitted_blocks, got "
                f"{self.received_blocks}/{self.transmitted_blocks}")
        if self.transfer_size_bits > 0 and not self.transfer_time_s > 0:
            raise ModelDomainError("transfer_time_s must be > 0 when bits were moved")


@dataclass(frozen=True)
class CachingParams:
    tau0_s: float
    chunk_count: int
    peer_count: int

    def __post_init__(self):
        if not self.tau0_s > 0:
            raise ModelDomainError(f"tau0_s must be > 0, got {self.tau0_s}")
        if self.chunk_count < 1:
            raise ModelDomainError(f"chunk_count must be >= 1, got {self.chunk_count}")
        if self.peer_count < 1:
            raise ModelDomainError(f"peer_count must be >= 1, got {self.peer_count}")


@dataclass(frozen=True)
class CapacityState:
    """Storage of one node. ``density`` is the free fraction of storage."""

    total_bytes: float
    used_bytes: float = 0.0

    def __post_init__(self):
        if not self.total_bytes > 0:
            raise ModelDomainError(f"total_bytes must be > 0, got {self.total_bytes}")
        if not 0 <= self.used_bytes <= self.total_bytes:
            raise ModelDomainError(
                f"used_bytes must lie in [0, {self.total_bytes}], got {self.used_bytes}")

    @property
    def density(self) -> float:
        return (self.total_bytes - self.used_bytes) / self.total_bytes


def transmission_power(link: LinkSpec, calib: PowerCalibration = PowerCalibration()) -> float:
    """Power in uW to push ``link.rate_mbps`` across ``link.distance_m``."""
    return (calib.k_power * link.rate_mbps
            * link.distance_m ** link.loss_exponent * link.fading_factor)


def path_power(links: Sequence[LinkSpec], calib: PowerCalibration = PowerCalibration()) -> float:
    """Sum of per-hop transmission powers; each hop keeps its own rate and distance."""
    if not links:
        raise ModelDomainError("path_power needs at least one link")
    return math.fsum(transmission_power(link, calib) for link in links)


def long_vs_short_gap(distances: Sequence[float], exponent: float) -> tuple[float, float]:
    """Return ``((sum d)^r, sum d^r)`` for a multi-hop split of one long link.

    For ``r > 1`` and two or more positive hops the first value is strictly
    the larger one.
    """
    if len(distances) < 2:
        raise ModelDomainError("need at least two hops to compare")
    if not exponent > 1:
        raise ModelDomainError(f"exponent must be > 1, got {exponent}")
    if any(not d > 0 for d in distances):
        raise ModelDomainError("all distances must be > 0")
    lumped = math.fsum(distances) ** exponent
    split = math.fsum(d ** exponent for d in distances)
    return lumped, split


def packet_loss(stats: ThroughputStats) -> float:
    if stats.transmitted_blocks <= 0:
        raise ModelDomainError("packet loss is undefined with no transmitted blocks")
    return 1.0 - stats.received_blocks / stats.transmitted_blocks


def effective_throughput(stats: ThroughputStats) -> float:
    """Loss-discounted goodput as a fraction of ``bandwidth_bps``, clamped to [0, 1].

    Reads the relation as ``(1 - loss) * (size / time) / bandwidth``.
    """
    if not stats.transfer_time_s > 0:
        raise ModelDomainError("transfer_time_s must be > 0")
    if not stats.bandwidth_bps > 0:
        raise ModelDomainError("bandwidth_bps must be > 0")
    loss = packet_loss(stats)
    value = (1.0 - loss) * (stats.transfer_size_bits / stats.transfer_time_s) / stats.bandwidth_bps
    return min(1.0, max(0.0, value))


def capacity_scaled_power(base_power: float, cap: CapacityState, eff: float,
                          calib: PowerCalibration = PowerCalibration()) -> float:
    if base_power < 0:
        raise ModelDomainError(f"base_power must be >= 0, got {base_power}")
    if not 0.0 <= eff <= 1.0:
        raise ModelDomainError(f"eff must lie in [0, 1], got {eff}")
    exponent = cap.density * eff
    if calib.capacity_exponent_sign is CapacitySign.DECAY:
        exponent = -exponent
    return base_power * math.exp(exponent)


def chunk_delay(params: CachingParams) -> float:
    """Approximate per-chunk download delay for a file split over ``peer_count`` peers.

    A single peer gives ``tau0 / m``; log2(1) = 0 would otherwise claim no delay.
    """
    per_chunk = params.tau0_s / params.chunk_count
    if params.peer_count == 1:
        return per_chunk
    return per_chunk * math.log2(params.peer_count)


def rate_distance_sum(links: Sequence[LinkSpec]) -> float:
    return math.fsum(link.rate_mbps * link.distance_m for link in links)


def caching_threshold(links: Sequence[LinkSpec], delay_s: float, scale: float = 1.0) -> float:
    """Caching threshold ``scale * sum(R_i * d_i) / delay``.

    Note the distances enter linearly here, unlike ``path_power``.
    ``scale`` converts R*d into the unit the threshold band is expressed in.
    """
    if not links:
        raise ModelDomainError("caching_threshold needs at least one link")
    if not delay_s > 0:
        raise ModelDomainError(f"delay_s must be > 0, got {delay_s}")
    return scale * rate_distance_sum(links) / delay_s
