"""Simulation driver: Poisson traffic, mobility, MAC measurement, aggregation."""

from __future__ import annotations

import math

from dataclasses import dataclass, field

import numpy as np

from ..contention import MacConfig
from ..traffic import DensityProfile, RoadScenario
from . import _mac_kernel_py
from ._mac_kernel_py import simulate_cch as _simulate_cch_py


def _kernel():
    from . import simulate_cch

    return simulate_cch


@dataclass(frozen=True)
class SimConfig:
    """A full simulation request for the non-homogeneous pipeline."""

    scenario: RoadScenario
    mac: MacConfig
    trials: int = 200
    seed: int = 0
    mobility_tick_min: float = 0.005
    eval_time_min: float | None = None
    bin_km: float = 0.1
    density_bin_km: float = 0.05

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.mac.tx_range_km > self.scenario.length_km:
            raise ValueError("transmission range exceeds the road length")


@dataclass
class SimResult:
    """Per-location-bin empirical metrics at the evaluation time."""

    bin_centers: np.ndarray
    density: np.ndarray
    bpi: np.ndarray
    bpi_sem: np.ndarray
    delay_slots: np.ndarray
    delay_sem: np.ndarray
    throughput_pps: np.ndarray
    throughput_sem: np.ndarray
    samples: np.ndarray
    trials: int
    seed: int
    drop_rate: float
    density_x: np.ndarray = field(default_factory=lambda: np.empty(0))
    density_values: np.ndarray = field(default_factory=lambda: np.empty(0))
    eval_time_min: float = 0.0


@dataclass
class StaticCellResult:
    """Aggregate metrics of one homogeneous (density, cw) cell."""

    density: float
    cw: int
    bpi: float
    bpi_sem: float
    delay_slots: float
    delay_sem: float
    throughput_pps: float
    throughput_sem: float
    drop_rate: float
    senders: int
    trials: int


def measure_cch(
    positions: np.ndarray, starts: np.ndarray, mac: MacConfig
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-car audience size, interference-free receptions, and delay.

    A backward-range receiver gets the beacon when the sender is the only
    transmitter within the receiver's interference range whose
    transmission overlaps the sender's; the sender's own window therefore
    also shields against a half-duplex receiver. Delay counts physical
    slots from CCH start to transmission end (-1 when the beacon never
    went out).
    """
    n = len(positions)
    tx = mac.tx_slots
    audience = np.zeros(n, dtype=np.int64)
    received = np.zeros(n, dtype=np.int64)
    delay = np.where(starts >= 0, starts + tx, -1).astype(np.int64)

    sent_idx = np.flatnonzero(starts >= 0)
    sent_pos = positions[sent_idx]
    sent_start = starts[sent_idx]

    for a in range(n):
        lo = np.searchsorted(positions, positions[a] - mac.tx_range_km, side="right")
        hi = np.searchsorted(positions, positions[a], side="right")
        aud = [r for r in range(lo, hi) if r != a]
        audience[a] = len(aud)
        if starts[a] < 0 or not aud:
            continue
        s_a = starts[a]
        overlap = (sent_start < s_a + tx) & (sent_start + tx > s_a) & (sent_idx != a)
        ov_pos = np.sort(sent_pos[overlap])
        ok = 0
        for r in aud:
            j_lo = np.searchsorted(ov_pos, positions[r] - mac.int_range_km, side="left")
            j_hi = np.searchsorted(ov_pos, positions[r] + mac.int_range_km, side="right")
            if j_hi - j_lo == 0:
                ok += 1
        received[a] = ok
    return audience, received, delay


def _trial_sums(
    positions: np.ndarray,
    starts: np.ndarray,
    mac: MacConfig,
    keep: np.ndarray,
) -> tuple[np.ndarray, int, int]:
    """One trial's metric sums over selected senders.

    Returns ([bpi_sum, n_bpi, delay_sum, n_delay, thr_sum], sent, dropped);
    sums are pooled across trials by the caller so that every sender car
    carries equal weight, matching the per-car expectations the analytical
    chain predicts.
    """
    audience, received, delay = measure_cch(positions, starts, mac)
    sel = np.flatnonzero(keep)
    sent = sel[starts[sel] >= 0]
    dropped = len(sel) - len(sent)
    with_aud = sent[audience[sent] > 0]
    sums = np.array(
        [
            float(np.sum(received[with_aud] / audience[with_aud])),
            float(len(with_aud)),
            float(np.sum(delay[sent])),
            float(len(sent)),
            float(np.sum(audience[sent])),
        ]
    )
    return sums, len(sent), dropped


def run_static_density(
    density: float,
    mac: MacConfig,
    road_km: float = 3.0,
    trials: int = 200,
    seed: int = 0,
    edge_km: float | None = None,
) -> StaticCellResult:
    """Homogeneous cell: sample stationary Poisson layouts and run the MAC.

    Under a constant arrival rate and speed the car positions at any time
    form a homogeneous Poisson process, so layouts are sampled directly
    instead of running mobility. Metrics are collected from senders at
    least `edge_km` from either road end to avoid boundary truncation.
    """
    kernel = _kernel()
    if edge_km is None:
        edge_km = mac.int_range_km + mac.tx_range_km
    if road_km <= 2 * edge_km:
        raise ValueError("road too short for the requested interior margin")
    streams = np.random.SeedSequence(seed).spawn(trials)
    per_trial = np.zeros((trials, 5))
    drops = 0
    total_sent = 0
    for ti, ss in enumerate(streams):
        rng = np.random.default_rng(ss)
        count = rng.poisson(density * road_km)
        positions = np.sort(rng.random(count) * road_km)
        counters = rng.integers(0, mac.cw, size=count)
        starts = kernel(positions, counters, mac.tx_slots, mac.cch_slots, mac.int_range_km)
        keep = (positions >= edge_km) & (positions <= road_km - edge_km)
        per_trial[ti], n_sent, n_drop = _trial_sums(positions, starts, mac, keep)
        total_sent += n_sent
        drops += n_drop

    def _ratio_sem(num_col, den_col, scale=1.0):
        num, den = per_trial[:, num_col], per_trial[:, den_col] * scale
        if den.sum() <= 0:
            return np.nan, np.nan
        mean = num.sum() / den.sum()
        # Delta-method error of a ratio of trial sums.
        resid = num - mean * den
        var = resid.var(ddof=1) * trials if trials > 1 else 0.0
        return float(mean), float(np.sqrt(max(var, 0.0)) / den.sum())

    slot_s = mac.slot_us * 1e-6
    bpi, bpi_sem = _ratio_sem(0, 1)
    dly, dly_sem = _ratio_sem(2, 3)
    mean_aud, _ = _ratio_sem(4, 3)
    # Receiver-end throughput composed from the measured pieces, matching
    # its definition: expected audience times delivery fraction per unit
    # transmission delay.
    if np.isnan(bpi) or np.isnan(dly) or dly <= 0:
        thr, thr_sem = np.nan, np.nan
    else:
        thr = mean_aud * bpi / (dly * slot_s)
        rel = 0.0
        if bpi > 0:
            rel += (bpi_sem / bpi) ** 2
        if dly > 0:
            rel += (dly_sem / dly) ** 2
        thr_sem = thr * math.sqrt(rel)
    senders = int(per_trial[:, 1].sum())
    drop_rate = drops / max(total_sent + drops, 1)
    return StaticCellResult(
        density=density,
        cw=mac.cw,
        bpi=bpi,
        bpi_sem=bpi_sem,
        delay_slots=dly,
        delay_sem=dly_sem,
        throughput_pps=thr,
        throughput_sem=thr_sem,
        drop_rate=drop_rate,
        senders=senders,
        trials=trials,
    )


def _advance_mobility(
    positions: np.ndarray,
    scenario: RoadScenario,
    t: float,
    dt: float,
) -> np.ndarray:
    """One deterministic mobility tick for all entered cars."""
    vel = scenario.velocity
    if len(positions) == 0:
        return positions
    order = np.argsort(positions)
    x = positions[order]
    v = vel.base_array(x, t)
    if vel.mode == "greenshield":
        w = vel.lookahead_km
        ahead = (np.searchsorted(x, x + w, side="right") - np.searchsorted(x, x, side="right"))
        local = ahead / w
        gs = np.clip(vel.v_free * (1.0 - local / vel.k_jam), 0.0, vel.v_free)
        v = np.minimum(v, gs)
        # Hard car-following floor: stop behind a leader at jam spacing.
        gap = np.empty_like(x)
        gap[:-1] = np.diff(x)
        gap[-1] = np.inf
        v = np.where(gap <= 1.0 / vel.k_jam, 0.0, v)
    new_x = x + v * dt
    for pos in vel.red_lights_at(t + dt):
        new_x = np.where(x <= pos, np.minimum(new_x, pos), new_x)
    out = np.empty_like(positions)
    out[order] = new_x
    return out


def run(config: SimConfig) -> SimResult:
    """Simulate the scenario and measure the MAC at the evaluation time.

    Each trial draws its own Poisson arrivals, advances cars to the
    evaluation instant (positions are static within one CCH), runs one
    control-channel interval, and bins per-sender metrics by location.
    Fully deterministic for a fixed (config, seed).
    """
    kernel = _kernel()
    scenario = config.scenario
    mac = config.mac
    t_eval = config.eval_time_min if config.eval_time_min is not None else scenario.horizon_min
    edges = np.arange(0.0, scenario.length_km + config.bin_km * 0.5, config.bin_km)
    centers = 0.5 * (edges[:-1] + edges[1:])
    nb = len(centers)

    d_edges = np.arange(0.0, scenario.length_km + config.density_bin_km * 0.5, config.density_bin_km)
    d_hist = np.zeros(len(d_edges) - 1)

    sums = {k: np.zeros(nb) for k in ("bpi", "dly")}
    sqs = {k: np.zeros(nb) for k in ("bpi", "dly")}
    cnts = {k: np.zeros(nb, dtype=np.int64) for k in ("bpi", "dly")}
    aud_sum = np.zeros(nb)
    drops = 0
    total_sent = 0

    streams = np.random.SeedSequence(config.seed).spawn(config.trials)
    slot_s = mac.slot_us * 1e-6
    for ss in streams:
        rng = np.random.default_rng(ss)
        entries = scenario.arrival.sample_times(0.0, t_eval, rng)
        positions = np.empty(0)
        t = 0.0
        dt = config.mobility_tick_min
        n_ticks = int(round(t_eval / dt))
        for i in range(n_ticks):
            t = i * dt
            entered = entries[(entries > t - 1e-12) & (entries <= t + dt - 1e-12)]
            positions = _advance_mobility(positions, scenario, t, dt)
            if len(entered):
                positions = np.concatenate((positions, np.zeros(len(entered))))
        on_road = (positions >= 0.0) & (positions <= scenario.length_km)
        positions = np.sort(positions[on_road])
        d_hist += np.histogram(positions, bins=d_edges)[0]

        counters = rng.integers(0, mac.cw, size=len(positions))
        starts = kernel(positions, counters, mac.tx_slots, mac.cch_slots, mac.int_range_km)
        audience, received, delay = measure_cch(positions, starts, mac)

        sent = starts >= 0
        total_sent += int(sent.sum())
        drops += int((~sent).sum())
        which = np.clip(np.searchsorted(edges, positions, side="right") - 1, 0, nb - 1)
        for a in np.flatnonzero(sent):
            b = which[a]
            sums["dly"][b] += delay[a]
            sqs["dly"][b] += delay[a] ** 2
            cnts["dly"][b] += 1
            aud_sum[b] += audience[a]
            if audience[a] > 0:
                v = received[a] / audience[a]
                sums["bpi"][b] += v
                sqs["bpi"][b] += v * v
                cnts["bpi"][b] += 1

    def _finish(key):
        c = cnts[key]
        mean = np.where(c > 0, sums[key] / np.maximum(c, 1), np.nan)
        var = np.where(
            c > 1, (sqs[key] - c * mean**2) / np.maximum(c - 1, 1), np.nan
        )
        sem = np.sqrt(np.maximum(var, 0.0) / np.maximum(c, 1))
        return mean, sem

    bpi, bpi_sem = _finish("bpi")
    dly, dly_sem = _finish("dly")
    with np.errstate(invalid="ignore", divide="ignore"):
        mean_aud = np.where(cnts["dly"] > 0, aud_sum / np.maximum(cnts["dly"], 1), np.nan)
        thr = mean_aud * bpi / np.maximum(dly * slot_s, 1e-30)
        thr_sem = thr * np.sqrt(
            np.where(bpi > 0, (bpi_sem / bpi) ** 2, 0.0)
            + np.where(dly > 0, (dly_sem / dly) ** 2, 0.0)
        )
    fine_centers = 0.5 * (d_edges[:-1] + d_edges[1:])
    fine_density = d_hist / config.trials / config.density_bin_km
    dens = np.interp(centers, fine_centers, fine_density)

    return SimResult(
        bin_centers=centers,
        density=dens,
        bpi=bpi,
        bpi_sem=bpi_sem,
        delay_slots=dly,
        delay_sem=dly_sem,
        throughput_pps=thr,
        throughput_sem=thr_sem,
        samples=cnts["dly"],
        trials=config.trials,
        seed=config.seed,
        drop_rate=drops / max(total_sent + drops, 1),
        density_x=fine_centers,
        density_values=fine_density,
        eval_time_min=t_eval,
    )


def empirical_density(result: SimResult) -> DensityProfile:
    """Trial-averaged position histogram as a density profile."""
    return DensityProfile(
        x=result.density_x,
        t=np.array([result.eval_time_min]),
        values=result.density_values[None, :].copy(),
        provenance="empirical-from-simulation",
    )


def contention_mc_oracle(
    mean_neighbors: float,
    cw: int,
    runs: int = 100_000,
    seed: int = 1,
    max_slots: int = 4000,
) -> tuple[np.ndarray, np.ndarray]:
    """Monte-Carlo per-virtual-slot transmission probability.

    Simulates `runs` stochastic contenders, each holding one beacon and a
    uniform initial counter. At every virtual slot each contender faces a
    fresh Poisson crowd of `mean_neighbors` cars distributed like the
    population, so its channel is busy with probability
    1 - exp(-mean_neighbors * f0) where f0 is the population's
    counter-zero fraction; counter-zero contenders fire and absorb, the
    rest freeze on busy and count down on idle. Returns the firing
    fraction per virtual slot and its standard error.
    """
    rng = np.random.default_rng(seed)
    counters = rng.integers(0, cw, size=runs)
    alive = np.ones(runs, dtype=bool)
    tau = []
    sems = []
    for _ in range(max_slots):
        firing = alive & (counters == 0)
        f0 = firing.sum() / runs
        tau.append(f0)
        sems.append(np.sqrt(f0 * (1.0 - f0) / runs))
        alive &= ~firing
        if not alive.any():
            break
        p = 1.0 - np.exp(-mean_neighbors * f0)
        busy = rng.random(runs) < p
        tick = alive & ~busy & (counters > 0)
        counters[tick] -= 1
    return np.array(tau), np.array(sems)


def contention_mc_exact(
    mean_neighbors: float,
    cw: int,
    runs: int = 100_000,
    seed: int = 1,
    max_slots: int = 4000,
) -> tuple[np.ndarray, np.ndarray]:
    """Exact single-collision-domain Monte-Carlo (diagnostic oracle).

    One tagged node plus a Poisson number of neighbors, all mutually in
    sensing range, each holding one beacon with a uniform initial counter.
    Per virtual slot every counter-zero node fires and absorbs; any firing
    freezes the countdown of the rest for that slot. Unlike the
    fresh-crowd oracle this keeps the shared-channel correlations the
    recursion averages away, so it quantifies the mean-field gap rather
    than validating the recursion slot by slot.
    """
    rng = np.random.default_rng(seed)
    others = rng.poisson(mean_neighbors, size=runs)
    occupancy = rng.multinomial(others, np.full(cw, 1.0 / cw))
    tagged = rng.integers(0, cw, size=runs)

    tau = []
    done = np.zeros(runs, dtype=bool)
    for _ in range(max_slots):
        fire_o = occupancy[:, 0] > 0
        fire_t = (tagged == 0) & ~done
        tau.append(fire_t.mean())
        done |= fire_t
        if done.all() and not occupancy.any():
            break
        busy = fire_o | fire_t
        occupancy[:, 0] = 0
        idle = ~busy
        if idle.any():
            occupancy[idle] = np.roll(occupancy[idle], -1, axis=1)
            occupancy[idle, -1] = 0
            tagged[idle & ~done] -= 1
        if not occupancy.any() and done.all():
            break
    tau_hat = np.array(tau)
    sem = np.sqrt(np.maximum(tau_hat * (1 - tau_hat), 0.0) / runs)
    return tau_hat, sem
