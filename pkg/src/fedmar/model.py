"""Cost model of an uplink-NOMA cell running federated MAR training.

Every quantity is SI once it enters this module: watts, hertz, joules,
seconds, bits, linear channel gains. Radio-style units (dBm, dB) are
converted exactly once at ingestion through the helpers below. All
functions are pure, so concurrent evaluation needs no locking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

LN2 = math.log(2.0)

# Detector-accuracy fit against square training-frame resolution s (pixels):
# accuracy(s) = 1 - 1.578 * exp(-6.5e-3 * s).
ACCURACY_SCALE = 1.578
ACCURACY_DECAY = 6.5e-3


class UnreachableDeviceError(RuntimeError):
    """A device with pending upload bits has zero uplink rate."""


def dbm_to_watts(dbm: float) -> float:
    return 1e-3 * 10.0 ** (dbm / 10.0)


def watts_to_dbm(watts: float) -> float:
    if watts <= 0.0:
        raise ValueError("dBm is undefined for non-positive power")
    return 10.0 * math.log10(watts * 1e3)


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


@dataclass(frozen=True)
class SystemParams:
    """Cell-wide constants, box bounds and objective weights.

    Weights satisfy ``weight_energy + weight_time == 1`` and
    ``weight_accuracy >= 0``. Defaults are the reference small-cell setup:
    20 MHz shared by 25 subchannels, -174 dBm/Hz noise, powers 0..12 dBm,
    CPU 1 MHz..2 GHz, resolutions {160, 320, 640} px with a 100 px
    standard sample.
    """

    total_bandwidth_hz: float = 20e6
    channel_count: int = 25
    noise_psd_w_per_hz: float = dbm_to_watts(-174.0)
    switched_capacitance: float = 1e-28
    local_iterations: float = 10.0
    std_resolution_px: float = 100.0
    resolution_set_px: tuple[float, float, float] = (160.0, 320.0, 640.0)
    weight_energy: float = 0.5
    weight_time: float = 0.5
    weight_accuracy: float = 1.0
    p_min_w: float = dbm_to_watts(0.0)
    p_max_w: float = dbm_to_watts(12.0)
    f_min_hz: float = 1e6
    f_max_hz: float = 2e9

    def __post_init__(self) -> None:
        if self.total_bandwidth_hz <= 0 or self.channel_count <= 0:
            raise ValueError("bandwidth and channel count must be positive")
        if self.noise_psd_w_per_hz <= 0:
            raise ValueError("noise PSD must be positive")
        if self.switched_capacitance <= 0:
            raise ValueError("switched capacitance must be positive")
        if self.local_iterations <= 0 or self.std_resolution_px <= 0:
            raise ValueError("local iterations and standard resolution must be positive")
        s1, s2, s3 = self.resolution_set_px
        if not (0 < s1 < s2 < s3):
            raise ValueError("resolution set must be positive and strictly increasing")
        a, b, g = self.weight_energy, self.weight_time, self.weight_accuracy
        if not (0.0 <= a <= 1.0 and 0.0 <= b <= 1.0):
            raise ValueError("energy/time weights must lie in [0, 1]")
        if abs(a + b - 1.0) > 1e-9:
            raise ValueError("energy and time weights must sum to 1")
        if g < 0.0:
            raise ValueError("accuracy weight must be non-negative")
        if not (0.0 <= self.p_min_w < self.p_max_w):
            raise ValueError("power bounds must satisfy 0 <= p_min < p_max")
        if not (0.0 < self.f_min_hz < self.f_max_hz):
            raise ValueError("frequency bounds must satisfy 0 < f_min < f_max")

    @property
    def std_sample_scale(self) -> float:
        """Pixel-count normalizer: scale * std_resolution**2 == 1."""
        return 1.0 / (self.std_resolution_px * self.std_resolution_px)

    @property
    def subchannel_bandwidth_hz(self) -> float:
        return self.total_bandwidth_hz / self.channel_count


@dataclass(frozen=True)
class Device:
    """One MAR user: position plus its local-training workload."""

    id: int
    distance_km: float
    cycles_per_std_sample: float
    sample_count: float
    upload_bits: float

    def __post_init__(self) -> None:
        if self.distance_km <= 0:
            raise ValueError(f"device {self.id}: distance must be positive")
        if min(self.cycles_per_std_sample, self.sample_count, self.upload_bits) <= 0:
            raise ValueError(f"device {self.id}: workload fields must be positive")


@dataclass(frozen=True)
class ChannelPair:
    """Two devices multiplexed on one subchannel, ordered by ascending gain.

    The second member is decoded first at the base station, so the first
    member's signal acts as interference on it; the first member is decoded
    after cancellation and sees a clean channel.
    """

    channel_index: int
    bandwidth_hz: float
    members: tuple[tuple[Device, float], tuple[Device, float]]

    def __post_init__(self) -> None:
        if self.bandwidth_hz <= 0:
            raise ValueError("subchannel bandwidth must be positive")
        (_, g1), (_, g2) = self.members
        if g1 <= 0 or g2 <= 0:
            raise ValueError("channel gains must be positive (linear scale)")
        if g1 > g2:
            raise ValueError("pair members must be ordered by ascending gain")

    @property
    def devices(self) -> tuple[Device, Device]:
        return (self.members[0][0], self.members[1][0])

    @property
    def gains(self) -> tuple[float, float]:
        return (self.members[0][1], self.members[1][1])


@dataclass(frozen=True)
class PairedTopology:
    """All subchannels of a cell. Device vectors are channel-major:
    index 2k is channel k's low-gain member, 2k+1 its high-gain member."""

    channels: tuple[ChannelPair, ...]

    def __post_init__(self) -> None:
        if not self.channels:
            raise ValueError("topology needs at least one channel")

    @property
    def n_devices(self) -> int:
        return 2 * len(self.channels)

    def devices(self) -> list[Device]:
        return [dev for ch in self.channels for dev in ch.devices]

    def gain_vector(self) -> np.ndarray:
        return np.array([g for ch in self.channels for g in ch.gains])

    def upload_bits_vector(self) -> np.ndarray:
        return np.array([d.upload_bits for d in self.devices()])

    def cycles_vector(self) -> np.ndarray:
        return np.array([d.cycles_per_std_sample for d in self.devices()])

    def samples_vector(self) -> np.ndarray:
        return np.array([d.sample_count for d in self.devices()])


@dataclass
class Allocation:
    """Per-device decision variables, channel-major like PairedTopology.

    ``resolution_px`` may hold intermediate continuous values while a solver
    is iterating; final allocations use members of the discrete set.
    ``deadline_s`` is the completion-time bound, set once known.
    """

    power_w: np.ndarray
    cpu_hz: np.ndarray
    resolution_px: np.ndarray
    deadline_s: float | None = None


@dataclass
class CostBreakdown:
    """Per-device costs plus the aggregates entering the objective.

    ``weighted_energy_time`` is the accuracy-free part of the objective,
    weight_energy * E + weight_time * T.
    """

    rate_bps: np.ndarray
    t_trans_s: np.ndarray
    e_trans_j: np.ndarray
    t_cmp_s: np.ndarray
    e_cmp_j: np.ndarray
    accuracy: np.ndarray
    total_energy_j: float
    total_time_s: float
    total_accuracy: float
    weighted_energy_time: float
    objective: float


def uplink_rate(
    params: SystemParams,
    pair: ChannelPair,
    powers: tuple[float, float] | np.ndarray,
    member_index: int,
) -> float:
    """Shannon rate of one pair member under successive decoding.

    Member 0 (lower gain) transmits interference-free; member 1 is decoded
    first and sees member 0's received power as extra noise. Zero transmit
    power yields rate 0, which is a valid value.
    """
    gain = pair.members[member_index][1]
    noise_w = pair.bandwidth_hz * params.noise_psd_w_per_hz
    interference_w = sum(
        powers[j] * pair.members[j][1] for j in range(member_index)
    )
    snr = powers[member_index] * gain / (noise_w + interference_w)
    return pair.bandwidth_hz * math.log2(1.0 + snr)


def uplink_rates(
    params: SystemParams, topology: PairedTopology, power_w: np.ndarray
) -> np.ndarray:
    """Rates for every device, channel-major order."""
    rates = np.empty(topology.n_devices)
    for k, pair in enumerate(topology.channels):
        p = (power_w[2 * k], power_w[2 * k + 1])
        rates[2 * k] = uplink_rate(params, pair, p, 0)
        rates[2 * k + 1] = uplink_rate(params, pair, p, 1)
    return rates


def transmission_cost(
    device: Device, rate_bps: float, power_w: float
) -> tuple[float, float]:
    """Upload time and energy: t = bits/rate, e = p * t."""
    if rate_bps <= 0.0:
        raise UnreachableDeviceError(
            f"device {device.id} has zero uplink rate but {device.upload_bits:g} bits to send"
        )
    t = device.upload_bits / rate_bps
    return t, power_w * t


def computation_cost(
    params: SystemParams, device: Device, resolution_px: float, cpu_hz: float
) -> tuple[float, float]:
    """Local-training time and energy at a given frame resolution.

    Cycles scale with the pixel count relative to the standard sample, so a
    frame at the standard resolution costs exactly
    kappa * iterations * cycles * samples * f**2 joules.
    """
    if cpu_hz < params.f_min_hz * (1.0 - 1e-12):
        raise ValueError(
            f"cpu frequency {cpu_hz:g} Hz below the minimum {params.f_min_hz:g} Hz"
        )
    cycles = (
        params.local_iterations
        * params.std_sample_scale
        * resolution_px
        * resolution_px
        * device.cycles_per_std_sample
        * device.sample_count
    )
    t = cycles / cpu_hz
    e = params.switched_capacitance * cycles * cpu_hz * cpu_hz
    return t, e


def accuracy_of(resolution_px: float) -> float:
    """Analytic detector accuracy for a square training resolution."""
    if resolution_px <= 0:
        raise ValueError("resolution must be positive")
    return 1.0 - ACCURACY_SCALE * math.exp(-ACCURACY_DECAY * resolution_px)


def _check_bounds(params: SystemParams, allocation: Allocation, n: int) -> None:
    tol = 1e-9
    p, f, s = allocation.power_w, allocation.cpu_hz, allocation.resolution_px
    if len(p) != n or len(f) != n or len(s) != n:
        raise ValueError("allocation length does not match topology")
    if np.any(p < params.p_min_w * (1 - tol) - tol) or np.any(p > params.p_max_w * (1 + tol)):
        raise ValueError("transmit power outside its bounds")
    if np.any(f < params.f_min_hz * (1 - tol)) or np.any(f > params.f_max_hz * (1 + tol)):
        raise ValueError("cpu frequency outside its bounds")
    s1, _, s3 = params.resolution_set_px
    if np.any(s < s1 * (1 - tol)) or np.any(s > s3 * (1 + tol)):
        raise ValueError("resolution outside [s1, s3]")


def evaluate(
    params: SystemParams, topology: PairedTopology, allocation: Allocation
) -> CostBreakdown:
    """Full cost breakdown of an allocation.

    Aggregates: total energy is the sum of per-device transmission plus
    computation energy, total time the max of per-device totals, total
    accuracy the sum of per-device accuracies, and the objective
    weight_energy * E + weight_time * T - weight_accuracy * A.
    """
    n = topology.n_devices
    _check_bounds(params, allocation, n)
    rates = uplink_rates(params, topology, allocation.power_w)

    t_trans = np.empty(n)
    e_trans = np.empty(n)
    t_cmp = np.empty(n)
    e_cmp = np.empty(n)
    acc = np.empty(n)
    for i, dev in enumerate(topology.devices()):
        t_trans[i], e_trans[i] = transmission_cost(dev, rates[i], allocation.power_w[i])
        t_cmp[i], e_cmp[i] = computation_cost(
            params, dev, allocation.resolution_px[i], allocation.cpu_hz[i]
        )
        acc[i] = accuracy_of(allocation.resolution_px[i])

    total_energy = float(np.sum(e_trans + e_cmp))
    total_time = float(np.max(t_trans + t_cmp))
    total_accuracy = float(np.sum(acc))
    weighted = params.weight_energy * total_energy + params.weight_time * total_time
    objective = weighted - params.weight_accuracy * total_accuracy
    return CostBreakdown(
        rate_bps=rates,
        t_trans_s=t_trans,
        e_trans_j=e_trans,
        t_cmp_s=t_cmp,
        e_cmp_j=e_cmp,
        accuracy=acc,
        total_energy_j=total_energy,
        total_time_s=total_time,
        total_accuracy=total_accuracy,
        weighted_energy_time=weighted,
        objective=objective,
    )
