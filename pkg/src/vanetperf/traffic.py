"""Vehicular density modeling on a signalized 1-D road.

Cars enter at the origin as a (possibly inhomogeneous) Poisson stream and
move right under a deterministic velocity field; traffic lights impose a
red-phase deceleration ramp, and an optional density-dependent speed term
couples cars to the traffic ahead. The mean density n(x, t) solves the
fluid conservation equation; car counts over road intervals are Poisson
with the integrated density as mean.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ArrivalProcess",
    "VelocityProfile",
    "RoadScenario",
    "Grid",
    "DensityProfile",
    "PoissonLaw",
    "TrafficError",
    "solve_density",
    "greenshield_speed",
]

NEGATIVE_DENSITY_TOL = 1e-9


class TrafficError(RuntimeError):
    """Density solver failure (non-convergence or invalid output)."""


def greenshield_speed(n_ahead: float, v_free: float, k_jam: float) -> float:
    """Linear speed-density relation, clamped to [0, v_free]."""
    if k_jam <= 0:
        raise ValueError(f"jam density must be positive, got {k_jam}")
    if n_ahead < 0:
        raise ValueError("density ahead must be non-negative")
    return min(max(v_free * (1.0 - n_ahead / k_jam), 0.0), v_free)


@dataclass(frozen=True)
class ArrivalProcess:
    """Piecewise-constant arrival rate (cars/min) starting at t = 0.

    `breakpoints[i]` is the time at which `rates[i]` takes effect; the last
    rate holds until the horizon. The road is empty before t = 0.
    """

    breakpoints: tuple[float, ...] = (0.0,)
    rates: tuple[float, ...] = (10.0,)

    def __post_init__(self):
        if len(self.breakpoints) != len(self.rates) or not self.breakpoints:
            raise ValueError("need one rate per breakpoint")
        if any(r < 0 for r in self.rates):
            raise ValueError("rates must be non-negative")
        if list(self.breakpoints) != sorted(self.breakpoints):
            raise ValueError("breakpoints must be increasing")

    def rate(self, t: float) -> float:
        if t < self.breakpoints[0]:
            return 0.0
        return self.rates[bisect_right(self.breakpoints, t) - 1]

    def mean_count(self, t1: float, t2: float) -> float:
        """Expected arrivals in (t1, t2]: the integral of the rate."""
        if t2 <= t1:
            return 0.0
        edges = [t1] + [b for b in self.breakpoints if t1 < b < t2] + [t2]
        return sum(
            self.rate(0.5 * (a + b)) * (b - a) for a, b in zip(edges[:-1], edges[1:])
        )

    def sample_times(self, t1: float, t2: float, rng: np.random.Generator) -> np.ndarray:
        """Draw Poisson arrival instants in (t1, t2], sorted."""
        times = []
        edges = [t1] + [b for b in self.breakpoints if t1 < b < t2] + [t2]
        for a, b in zip(edges[:-1], edges[1:]):
            lam = self.rate(0.5 * (a + b)) * (b - a)
            k = rng.poisson(lam)
            times.append(a + (b - a) * rng.random(k))
        out = np.concatenate(times) if times else np.empty(0)
        out.sort()
        return out


@dataclass(frozen=True)
class VelocityProfile:
    """Deterministic base speed field plus optional car-interaction term.

    During a red phase each light imposes a linear deceleration ramp from
    `v_free` down to zero over the `ramp_km` stretch upstream of it; the
    ramp is a reconstruction (the schedule prescribes only its extent).
    In `greenshield` mode the effective speed is additionally capped by
    v_free * (1 - n(x + lookahead) / k_jam).
    """

    v_free: float = 1.0
    mode: str = "independent"
    k_jam: float = 150.0
    lookahead_km: float = 0.1
    ramp_km: float = 0.1
    crawl_km_min: float = 0.06
    lights: tuple[tuple[float, tuple[tuple[float, float], ...]], ...] = ()

    def __post_init__(self):
        if self.mode not in ("independent", "greenshield"):
            raise ValueError(f"unknown velocity mode {self.mode!r}")
        if self.v_free <= 0:
            raise ValueError("v_free must be positive")
        if self.mode == "greenshield" and self.k_jam <= 0:
            raise ValueError("jam density must be positive in greenshield mode")
        for _, reds in self.lights:
            spans = sorted(reds)
            for (a1, b1), (a2, _) in zip(spans[:-1], spans[1:]):
                if a2 < b1:
                    raise ValueError("red intervals of one light overlap")

    def is_red(self, light_pos: float, t: float) -> bool:
        for pos, reds in self.lights:
            if pos == light_pos:
                return any(a < t <= b for a, b in reds)
        return False

    def base(self, x: float, t: float) -> float:
        """Base speed before any density interaction.

        Inside a red ramp the speed falls linearly toward the stop line
        but keeps a small crawl floor, so approaching cars reach the queue
        in finite time; the no-crossing barrier itself is enforced by the
        solver and the simulator, not by the field.
        """
        v = self.v_free
        for pos, reds in self.lights:
            if any(a < t <= b for a, b in reds):
                if pos - self.ramp_km <= x <= pos:
                    ramp = self.v_free * (pos - x) / self.ramp_km
                    v = min(v, max(ramp, self.crawl_km_min))
        return v

    def base_array(self, x: np.ndarray, t: float) -> np.ndarray:
        v = np.full_like(x, self.v_free, dtype=float)
        for pos, reds in self.lights:
            if any(a < t <= b for a, b in reds):
                in_ramp = (x >= pos - self.ramp_km) & (x <= pos)
                ramp = self.v_free * (pos - x[in_ramp]) / self.ramp_km
                v[in_ramp] = np.minimum(
                    v[in_ramp], np.maximum(ramp, self.crawl_km_min)
                )
        return v

    def red_lights_at(self, t: float) -> list[float]:
        return [
            pos for pos, reds in self.lights if any(a < t <= b for a, b in reds)
        ]


@dataclass(frozen=True)
class RoadScenario:
    """Finite analysis window of a semi-infinite road."""

    length_km: float
    horizon_min: float
    arrival: ArrivalProcess
    velocity: VelocityProfile

    def __post_init__(self):
        for pos, _ in self.velocity.lights:
            if not 0.0 <= pos <= self.length_km:
                raise ValueError(f"light at {pos} km outside the road")


@dataclass(frozen=True)
class Grid:
    """Space-time grid; the CFL bound v_free * dt <= dx is enforced."""

    dx_km: float = 0.01
    dt_min: float = 0.005

    def validate(self, scenario: RoadScenario) -> None:
        if scenario.velocity.v_free * self.dt_min > self.dx_km * (1 + 1e-12):
            raise ValueError(
                f"CFL violated: v_free*dt = {scenario.velocity.v_free * self.dt_min:.4g} "
                f"exceeds dx = {self.dx_km:.4g}"
            )

    def x_axis(self, length: float) -> np.ndarray:
        n = int(round(length / self.dx_km))
        return np.linspace(0.0, n * self.dx_km, n + 1)

    def t_axis(self, horizon: float) -> np.ndarray:
        n = int(round(horizon / self.dt_min))
        return np.linspace(0.0, n * self.dt_min, n + 1)


@dataclass(frozen=True)
class PoissonLaw:
    """Poisson count law over a road interval."""

    mean: float

    def pmf(self, k: int) -> float:
        if k < 0:
            return 0.0
        if self.mean == 0.0:
            return 1.0 if k == 0 else 0.0
        return math.exp(k * math.log(self.mean) - self.mean - math.lgamma(k + 1))

    def cdf(self, k: int) -> float:
        return sum(self.pmf(i) for i in range(int(k) + 1))

    def sample(self, rng: np.random.Generator, size=None):
        return rng.poisson(self.mean, size=size)


@dataclass
class DensityProfile:
    """Mean car density n(x, t) on a grid, cars/km.

    `values[i, j]` is the density at time `t[i]`, location `x[j]`.
    Immutable after solving; interval counts integrate the piecewise-linear
    interpolant in x, which makes counts over adjacent intervals exactly
    additive. Provenance records whether the profile came from the solver
    or from a simulation histogram.
    """

    x: np.ndarray
    t: np.ndarray
    values: np.ndarray
    provenance: str = "analytical"
    k_jam: float | None = None

    def __post_init__(self):
        if self.values.shape != (len(self.t), len(self.x)):
            raise ValueError("values must be (len(t), len(x))")
        low = self.values.min()
        if low < -NEGATIVE_DENSITY_TOL:
            raise TrafficError(f"negative density {low:.3e} below tolerance")
        np.clip(self.values, 0.0, None, out=self.values)
        self.values.setflags(write=False)

    def _time_index(self, t: float) -> int:
        if not self.t[0] - 1e-9 <= t <= self.t[-1] + 1e-9:
            raise ValueError(f"time {t} outside profile horizon [{self.t[0]}, {self.t[-1]}]")
        return int(np.argmin(np.abs(self.t - t)))

    def density_at(self, x, t: float):
        """Linear-in-x density at the nearest grid time."""
        row = self.values[self._time_index(t)]
        return np.interp(x, self.x, row)

    def expected_count(self, x1: float, x2: float, t: float) -> float:
        """Expected cars in (x1, x2]: integral of the interpolated density.

        The trapezoid rule on the grid, with exact partial cells at the
        endpoints; one quadrature shared by every consumer so that counts
        over disjoint intervals add up exactly.
        """
        if x2 < x1:
            raise ValueError("need x1 <= x2")
        if x1 < self.x[0] - 1e-9 or x2 > self.x[-1] + 1e-9:
            raise ValueError(
                f"interval ({x1}, {x2}] outside road [{self.x[0]}, {self.x[-1]}]"
            )
        row = self.values[self._time_index(t)]
        return _piecewise_linear_integral(self.x, row, x1, x2)

    def count_distribution(self, x1: float, x2: float, t: float) -> PoissonLaw:
        """Poisson law of the car count in (x1, x2].

        Exact for density-independent speeds; an approximation once the
        car-interaction term is active.
        """
        return PoissonLaw(self.expected_count(x1, x2, t))

    def to_csv_rows(self):
        for i, ti in enumerate(self.t):
            for j, xj in enumerate(self.x):
                yield xj, ti, self.values[i, j]


def _piecewise_linear_integral(x: np.ndarray, y: np.ndarray, a: float, b: float) -> float:
    """Integral over [a, b] of the piecewise-linear interpolant of (x, y)."""
    if b <= a:
        return 0.0
    a = max(a, float(x[0]))
    b = min(b, float(x[-1]))
    ia = int(np.searchsorted(x, a, side="right")) - 1
    ib = int(np.searchsorted(x, b, side="left"))
    ia = max(ia, 0)
    ib = min(ib, len(x) - 1)
    xs = np.concatenate(([a], x[ia + 1 : ib], [b]))
    ys = np.interp(xs, x, y)
    return float(np.trapz(ys, xs))


def _cap_at_red_lights(velocity: VelocityProfile, x_old: float, x_new: float, t: float) -> float:
    for pos in velocity.red_lights_at(t):
        if x_old <= pos:
            x_new = min(x_new, pos)
    return x_new


def _entry_position(velocity: VelocityProfile, s: float, t: float, dt: float) -> float:
    """Position at time t of a car that entered the origin at time s."""
    x = 0.0
    tau = s
    while tau < t - 1e-12:
        step = min(dt, t - tau)
        v1 = velocity.base(x, tau)
        x_mid = x + 0.5 * step * v1
        v2 = velocity.base(x_mid, tau + 0.5 * step)
        x = _cap_at_red_lights(velocity, x, x + step * v2, tau + step)
        tau += step
    return x


def entry_time(
    velocity: VelocityProfile, x: float, t: float, dt: float = 0.005, tol: float = 1e-6
) -> float | None:
    """Entry time of the car that sits at x at time t (independent mode).

    Inverts the characteristic trajectory by bisection on the entry time;
    returns None when even the earliest car (entered at 0) has not
    reached x yet.
    """
    if x <= 0:
        return t
    if _entry_position(velocity, 0.0, t, dt) < x:
        return None
    lo, hi = 0.0, t
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if _entry_position(velocity, mid, t, dt) >= x:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _solve_independent(scenario: RoadScenario, grid: Grid) -> DensityProfile:
    """Characteristics solve: propagate a fan of entry trajectories.

    Cars entering at successive times trace non-crossing trajectories in a
    density-independent velocity field; the density between two adjacent
    trajectories is the arrival mass between their entry times spread over
    their spacing.
    """
    x_axis = grid.x_axis(scenario.length_km)
    t_axis = grid.t_axis(scenario.horizon_min)
    vel = scenario.velocity
    dt = grid.dt_min

    entry_times = t_axis.copy()
    seg_mass = np.array(
        [scenario.arrival.mean_count(a, b) for a, b in zip(entry_times[:-1], entry_times[1:])]
    )
    pos = np.full(len(entry_times), -1.0)
    values = np.zeros((len(t_axis), len(x_axis)))

    for i, t in enumerate(t_axis):
        active = entry_times <= t + 1e-12
        pos[active & (pos < 0.0)] = 0.0
        if i > 0:
            moving = pos >= 0.0
            xs = pos[moving]
            v1 = vel.base_array(xs, t_axis[i - 1])
            mid = xs + 0.5 * dt * v1
            v2 = vel.base_array(mid, t_axis[i - 1] + 0.5 * dt)
            new_xs = xs + dt * v2
            for p in vel.red_lights_at(t):
                new_xs = np.where(xs <= p, np.minimum(new_xs, p), new_xs)
            pos[moving] = new_xs

        idx = np.flatnonzero(active)
        if len(idx) >= 2:
            # Trajectories ordered oldest (farthest) first.
            xs = pos[idx]
            ss = entry_times[idx]
            mass = seg_mass[idx[:-1]]
            width = xs[:-1] - xs[1:]
            centers = 0.5 * (xs[:-1] + xs[1:])
            dens = np.where(width > 1e-12, mass / np.maximum(width, 1e-12), 0.0)
            order = np.argsort(centers)
            values[i] = np.interp(
                x_axis, centers[order], dens[order],
                left=float(dens[order][0]), right=0.0,
            )
            values[i, x_axis > xs[0]] = 0.0
    return DensityProfile(x=x_axis, t=t_axis, values=values, provenance="analytical")


def _solve_greenshield(scenario: RoadScenario, grid: Grid) -> DensityProfile:
    """Upwind conservative stepping with per-step speed/density fixed point."""
    x_axis = grid.x_axis(scenario.length_km)
    t_axis = grid.t_axis(scenario.horizon_min)
    vel = scenario.velocity
    dx, dt = grid.dx_km, grid.dt_min
    k_jam = vel.k_jam

    values = np.zeros((len(t_axis), len(x_axis)))
    n = np.zeros(len(x_axis))
    for i in range(1, len(t_axis)):
        t_prev = t_axis[i - 1]
        base = vel.base_array(x_axis, t_prev)
        inflow = scenario.arrival.rate(t_prev)
        n_new = n
        residual = math.inf
        # The interaction term samples the density ahead at the midpoint of
        # the car-following anticipation window.
        lag = 0.5 * vel.lookahead_km
        for _ in range(60):
            ahead = np.interp(x_axis + lag, x_axis, n_new)
            gs = np.clip(vel.v_free * (1.0 - ahead / k_jam), 0.0, vel.v_free)
            v = np.minimum(base, gs)
            flux = v * n  # upwind: information moves with the cars
            limited = np.empty(len(x_axis) + 1)
            limited[1:] = flux
            limited[0] = inflow
            # No car crosses a red light: zero the outgoing flux of the
            # cell holding the stop line.
            for pos in vel.red_lights_at(t_prev):
                j_light = int(np.searchsorted(x_axis, pos - 1e-12))
                limited[j_light + 1] = 0.0
            # Cap each incoming flux so no cell exceeds the jam density.
            for j in range(len(x_axis) - 1, -1, -1):
                room = (k_jam - n[j]) * dx / dt + limited[j + 1]
                if limited[j] > room:
                    limited[j] = max(room, 0.0)
            candidate = n + dt / dx * (limited[:-1] - limited[1:])
            residual = float(np.max(np.abs(candidate - n_new)))
            n_new = candidate
            if residual < 1e-10:
                break
        else:
            raise TrafficError(
                f"speed/density fixed point stalled at t={t_prev:.3f} "
                f"(residual {residual:.3e})"
            )
        low = n_new.min()
        if low < -NEGATIVE_DENSITY_TOL:
            raise TrafficError(f"negative density {low:.3e} at t={t_axis[i]:.3f}")
        np.clip(n_new, 0.0, None, out=n_new)
        n = n_new
        values[i] = n
    return DensityProfile(
        x=x_axis, t=t_axis, values=values, provenance="analytical", k_jam=k_jam
    )


def solve_density(scenario: RoadScenario, grid: Grid | None = None) -> DensityProfile:
    """Solve the conservation equation for the mean density profile.

    Density-independent mode follows characteristics; greenshield mode
    steps the upwind scheme with a per-step velocity/density fixed point.
    """
    grid = grid or Grid()
    grid.validate(scenario)
    if scenario.velocity.mode == "independent":
        return _solve_independent(scenario, grid)
    return _solve_greenshield(scenario, grid)
