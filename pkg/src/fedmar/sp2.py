"""Transmit-power subproblem: sum-of-ratios upload-energy minimization.

Each decoding stage minimizes, independently per subchannel, the upload
energy p * d / r(p) with r(p) = B * log2(1 + p / noise_floor), subject to
the minimum rate implied by the deadline and the power box. The ratio is
handled in parametric form: auxiliary variables (energy_bound, rate_weight)
must satisfy the fixed point

    rate_weight = energy_weight / r(p),   energy_bound = p * d / r(p)

at an optimum, while the power has a closed form in the auxiliaries. A
damped Newton iteration with geometric backtracking drives the fixed-point
residual to zero; every accepted step shrinks the residual norm by a
guaranteed margin, so the iteration cannot cycle.

Stage one covers the interference-free (low-gain) member of every channel;
its converged powers set the noise floors of stage two.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import model
from .model import LN2, PairedTopology, SystemParams


class Stage(Enum):
    FIRST = "first"
    SECOND = "second"


class DeadlineInfeasibleError(ValueError):
    """The deadline leaves no time for transmission on some device."""


@dataclass(frozen=True)
class RatioProblem:
    """One stage's per-channel data. ``noise_floor_w`` is the received
    noise-plus-interference power divided by the member's own gain."""

    stage: Stage
    bandwidth_hz: float
    upload_bits: np.ndarray
    noise_floor_w: np.ndarray
    min_rate_bps: np.ndarray
    p_min_w: float
    p_max_w: float
    weight_energy: float

    def __post_init__(self) -> None:
        if self.weight_energy <= 0.0:
            raise ValueError("the power solve requires a positive energy weight")
        if np.any(np.asarray(self.noise_floor_w) <= 0.0):
            raise ValueError("noise floors must be positive")
        r = np.asarray(self.min_rate_bps)
        if np.any(r <= 0.0) or not np.all(np.isfinite(r)):
            raise ValueError("minimum rates must be positive and finite")

    @property
    def n_channels(self) -> int:
        return len(np.asarray(self.upload_bits))


@dataclass
class NewtonState:
    """Converged (or best-seen) iteration state of one channel."""

    power_w: float
    rate_weight: float
    energy_bound: float
    residual: np.ndarray
    newton_steps: int
    converged: bool
    rate_infeasible: bool
    norm_trace: list[float]


@dataclass
class RatioSolution:
    power_w: np.ndarray
    rate_weight: np.ndarray
    energy_bound: np.ndarray
    converged: np.ndarray
    rate_infeasible: np.ndarray
    newton_steps: np.ndarray
    norm_traces: list[list[float]]

    @property
    def all_converged(self) -> bool:
        return bool(np.all(self.converged))


def min_rate(upload_bits: float, deadline_s: float, t_cmp_s: float) -> float:
    """Rate needed to fit the upload into the time the deadline leaves
    after local computation."""
    slack = deadline_s - t_cmp_s
    if slack <= 0.0:
        raise DeadlineInfeasibleError(
            f"deadline {deadline_s:g} s does not cover computation time {t_cmp_s:g} s"
        )
    return upload_bits / slack


def required_power(noise_floor_w: float, min_rate_bps: float, bandwidth_hz: float) -> float:
    """Power at which the channel rate equals the minimum rate exactly."""
    return (2.0 ** (min_rate_bps / bandwidth_hz) - 1.0) * noise_floor_w


def channel_rate(power_w: float, noise_floor_w: float, bandwidth_hz: float) -> float:
    return bandwidth_hz * math.log2(1.0 + power_w / noise_floor_w)


def power_update(
    rate_weight: float,
    energy_bound: float,
    noise_floor_w: float,
    upload_bits: float,
    min_rate_bps: float,
    bandwidth_hz: float,
    p_min_w: float,
    p_max_w: float,
) -> tuple[float, bool]:
    """Closed-form power for given auxiliaries, boxed to its bounds.

    The rate-constraint multiplier is evaluated first; when it is active
    the power sits exactly at the minimum-rate point, otherwise at the
    stationary point of the parametric objective. Returns the boxed power
    and whether the rate constraint alone already needs more than p_max.
    """
    growth = 2.0 ** (min_rate_bps / bandwidth_hz)
    mu = max(
        0.0,
        growth * noise_floor_w * LN2 * rate_weight * upload_bits / bandwidth_hz
        - rate_weight * energy_bound,
    )
    if mu > 0.0:
        p = (growth - 1.0) * noise_floor_w
    else:
        p = energy_bound * bandwidth_hz / (upload_bits * LN2) - noise_floor_w
    infeasible = (growth - 1.0) * noise_floor_w > p_max_w
    return min(p_max_w, max(p, p_min_w)), infeasible


def residual(
    power_w: float,
    rate_bps: float,
    rate_weight: float,
    energy_bound: float,
    upload_bits: float,
    weight_energy: float,
) -> tuple[np.ndarray, float]:
    """Fixed-point residual and the (shared, diagonal) Jacobian entry.

    Both residual components are linear in their own auxiliary with slope
    equal to the rate, so the Newton direction is just -residual / rate.
    """
    phi = np.array(
        [
            -power_w * upload_bits + energy_bound * rate_bps,
            -weight_energy + rate_weight * rate_bps,
        ]
    )
    return phi, rate_bps


def _solve_channel(
    noise_floor: float,
    upload_bits: float,
    rate_min: float,
    bandwidth: float,
    p_min: float,
    p_max: float,
    alpha: float,
    *,
    shrink: float,
    margin: float,
    residual_tol: float,
    max_iterations: int,
    max_backtracks: int,
) -> NewtonState:
    need = required_power(noise_floor, rate_min, bandwidth)
    if need > p_max:
        p0 = p_max
    else:
        p0 = 0.5 * (max(p_min, need) + p_max)
    r0 = channel_rate(p0, noise_floor, bandwidth)
    nu = alpha / r0
    bound = p0 * upload_bits / r0

    def probe(nu_x: float, bound_x: float):
        p_x, inf_x = power_update(
            nu_x, bound_x, noise_floor, upload_bits, rate_min, bandwidth, p_min, p_max
        )
        r_x = channel_rate(p_x, noise_floor, bandwidth)
        phi_x, _ = residual(p_x, r_x, nu_x, bound_x, upload_bits, alpha)
        return p_x, inf_x, r_x, phi_x, float(math.hypot(phi_x[0], phi_x[1]))

    p, infeasible, rate, phi, norm = probe(nu, bound)
    trace = [norm]
    best = (norm, p, nu, bound, infeasible, phi)
    steps = 0
    converged = float(np.max(np.abs(phi))) <= residual_tol
    while not converged and steps < max_iterations:
        dir_bound = -phi[0] / rate
        dir_nu = -phi[1] / rate
        accepted = None
        for i in range(max_backtracks + 1):
            step = shrink**i
            nu_t = nu + step * dir_nu
            bound_t = bound + step * dir_bound
            cand = probe(nu_t, bound_t)
            if cand[4] <= (1.0 - margin * step) * norm:
                accepted = (nu_t, bound_t, cand)
                break
        if accepted is None:
            break  # no step shrinks the residual; keep the best iterate
        nu, bound, (p, infeasible, rate, phi, norm) = accepted
        steps += 1
        trace.append(norm)
        if norm < best[0]:
            best = (norm, p, nu, bound, infeasible, phi)
        converged = float(np.max(np.abs(phi))) <= residual_tol
    if not converged:
        _, p, nu, bound, infeasible, phi = best
    return NewtonState(
        power_w=p,
        rate_weight=nu,
        energy_bound=bound,
        residual=phi,
        newton_steps=steps,
        converged=converged,
        rate_infeasible=infeasible,
        norm_trace=trace,
    )


def solve_ratio_stage(
    problem: RatioProblem,
    *,
    shrink: float = 0.5,
    margin: float = 0.01,
    residual_tol: float = 1e-9,
    max_iterations: int = 200,
    max_backtracks: int = 60,
) -> RatioSolution:
    """Run the damped Newton iteration independently on every channel."""
    if not (0.0 < shrink < 1.0 and 0.0 < margin < 1.0):
        raise ValueError("step shrink and margin must lie in (0, 1)")
    states = [
        _solve_channel(
            float(problem.noise_floor_w[k]),
            float(problem.upload_bits[k]),
            float(problem.min_rate_bps[k]),
            problem.bandwidth_hz,
            problem.p_min_w,
            problem.p_max_w,
            problem.weight_energy,
            shrink=shrink,
            margin=margin,
            residual_tol=residual_tol,
            max_iterations=max_iterations,
            max_backtracks=max_backtracks,
        )
        for k in range(problem.n_channels)
    ]
    return RatioSolution(
        power_w=np.array([s.power_w for s in states]),
        rate_weight=np.array([s.rate_weight for s in states]),
        energy_bound=np.array([s.energy_bound for s in states]),
        converged=np.array([s.converged for s in states]),
        rate_infeasible=np.array([s.rate_infeasible for s in states]),
        newton_steps=np.array([s.newton_steps for s in states]),
        norm_traces=[s.norm_trace for s in states],
    )


def solve_sp2(
    params: SystemParams,
    topology: PairedTopology,
    cpu_hz: np.ndarray,
    resolution_px: np.ndarray,
    deadline_s: float,
) -> tuple[np.ndarray, np.ndarray, tuple[RatioSolution, RatioSolution]]:
    """Solve both decoding stages and return all powers, channel-major.

    Stage one (interference-free members) runs first; its powers define the
    noise floors seen by stage two. Returns the flattened power vector, a
    matching rate-infeasibility flag vector and both stage solutions.
    """
    devices = topology.devices()
    n = topology.n_devices
    t_cmp = np.array(
        [
            model.computation_cost(params, dev, float(resolution_px[i]), float(cpu_hz[i]))[0]
            for i, dev in enumerate(devices)
        ]
    )
    rate_min = np.array(
        [min_rate(dev.upload_bits, deadline_s, float(t_cmp[i])) for i, dev in enumerate(devices)]
    )
    gains = topology.gain_vector()
    bits = topology.upload_bits_vector()
    bandwidth = params.subchannel_bandwidth_hz
    noise_w = bandwidth * params.noise_psd_w_per_hz

    first = solve_ratio_stage(
        RatioProblem(
            stage=Stage.FIRST,
            bandwidth_hz=bandwidth,
            upload_bits=bits[0::2],
            noise_floor_w=noise_w / gains[0::2],
            min_rate_bps=rate_min[0::2],
            p_min_w=params.p_min_w,
            p_max_w=params.p_max_w,
            weight_energy=params.weight_energy,
        )
    )
    second = solve_ratio_stage(
        RatioProblem(
            stage=Stage.SECOND,
            bandwidth_hz=bandwidth,
            upload_bits=bits[1::2],
            noise_floor_w=(noise_w + first.power_w * gains[0::2]) / gains[1::2],
            min_rate_bps=rate_min[1::2],
            p_min_w=params.p_min_w,
            p_max_w=params.p_max_w,
            weight_energy=params.weight_energy,
        )
    )
    power = np.empty(n)
    power[0::2] = first.power_w
    power[1::2] = second.power_w
    flags = np.empty(n, dtype=bool)
    flags[0::2] = first.rate_infeasible
    flags[1::2] = second.rate_infeasible
    return power, flags, (first, second)
