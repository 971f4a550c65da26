"""Seeded synthetic epidemic scenarios with known ground truth.

The generator places regions on a map, builds a gravity-law trip matrix,
perturbs it daily with movement changes and log-normal noise, and rolls the
mobility-driven compartmental step forward with region- and day-varying
rates.  Restrictions switch on when incidence is high and off when it falls,
so waves rise and recede; movement feeds back into the infection rate after a
lag.  A final variant wave multiplies the infection rate so that the held-out
period contains a surge larger than anything in the training range.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import asdict, dataclass

import numpy as np

from .data import EpiDataset, EpidemicSeries, RegionTable, split_boundaries
from .gravity import GravityConfig, generate, great_circle
from .mechanistic import metasir_force


class ScenarioError(ValueError):
    pass


@dataclass
class ScenarioConfig:
    n_regions: int = 5
    n_days: int = 200
    start_date: str = "2020-04-01"
    # geography and population
    lat_range: tuple[float, float] = (34.0, 36.5)
    lon_range: tuple[float, float] = (135.0, 140.0)
    pop_log_mean: float = 13.8
    pop_log_sd: float = 0.6
    # true mobility: gravity law with its own exponent, scaled to trips per person per day
    flow_decay: float = 2.0
    flow_eps: float = 25.0
    trips_per_person: float = 0.5
    census_noise: float = 0.15
    daily_flow_noise: float = 0.05
    # sampling of the GPS panel behind the raw OD counts
    sample_rate: tuple[float, float] = (0.01, 0.03)
    stay_base: float = 0.25
    # epidemic dynamics
    initial_prevalence: float = 2e-4
    r_base: tuple[float, float] = (1.1, 1.4)
    gamma_base: tuple[float, float] = (0.08, 0.14)
    gamma_drift: float = 0.15
    weekday_amplitude: float = 0.15
    movement_effect: float = 2.5
    movement_lag: int = 7
    # restrictions triggered by incidence (daily cases per 100k)
    restrict_on: float = 8.0
    restrict_off: float = 3.0
    restrict_depth: float = 0.3
    movement_response: float = 0.15
    movement_noise: float = 0.02
    # last-wave variant
    surge_factor: float = 2.0
    surge_lead: int = 5
    case_noise: float = 0.0

    def __post_init__(self):
        self.lat_range = tuple(self.lat_range)
        self.lon_range = tuple(self.lon_range)
        self.sample_rate = tuple(self.sample_rate)
        self.r_base = tuple(self.r_base)
        self.gamma_base = tuple(self.gamma_base)
        if self.n_regions < 2:
            raise ScenarioError("a scenario needs at least 2 regions")
        if self.n_days < 14 + 14 + 30:
            raise ScenarioError(f"a scenario needs at least 58 days, got {self.n_days}")
        if not 0 < self.restrict_off <= self.restrict_on:
            raise ScenarioError("restriction thresholds must satisfy 0 < off <= on")
        if min(self.r_base) < 0:
            raise ScenarioError("reproduction numbers must be nonnegative")
        if min(self.gamma_base) <= 0 or max(self.gamma_base) >= 1:
            raise ScenarioError("gamma range must lie inside (0, 1)")
        if self.surge_factor <= 0 or self.case_noise < 0:
            raise ScenarioError("surge factor must be positive and case noise nonnegative")

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d


def _smooth_walk(rng, n_days: int, n: int, sd: float, keep: float = 0.9) -> np.ndarray:
    out = np.zeros((n_days, n))
    for t in range(1, n_days):
        out[t] = keep * out[t - 1] + rng.normal(0.0, sd, n)
    return out


def synth_scenario(config: ScenarioConfig | None = None, seed: int = 0) -> EpiDataset:
    """Generate a complete dataset; ``truth`` holds the rates and graphs used.

    Raw dynamic flows are GPS-panel counts (trips times the origin's daily
    sample rate); ``flows_dynamic`` on the returned dataset is the raw stack
    normalised to the anchor's sample rate, as :func:`data.load_dataset`
    would produce from the written CSVs.
    """
    cfg = config or ScenarioConfig()
    rng = np.random.default_rng(seed)
    n, T = cfg.n_regions, cfg.n_days
    start = dt.date.fromisoformat(cfg.start_date)
    dates = [start + dt.timedelta(days=t) for t in range(T)]
    dow = np.array([d.weekday() for d in dates])

    lat = rng.uniform(*cfg.lat_range, n)
    lon = rng.uniform(*cfg.lon_range, n)
    dist = great_circle(lat, lon)
    pop = np.round(np.exp(rng.normal(cfg.pop_log_mean, cfg.pop_log_sd, n)))
    ids = tuple(f"R{i:02d}" for i in range(n))
    regions = RegionTable(ids, pop)

    base = generate(pop, dist, GravityConfig(alpha=1.0, decay=cfg.flow_decay, eps=cfg.flow_eps))
    base *= cfg.trips_per_person * pop[:, None] / base.sum(axis=1, keepdims=True)
    static = base * np.exp(rng.normal(0.0, cfg.census_noise, (n, n)))

    r_base = rng.uniform(*cfg.r_base, n)
    g_base = rng.uniform(*cfg.gamma_base, n)
    phase = rng.uniform(0, 2 * np.pi, n)
    t_axis = np.arange(T)[:, None]
    gamma = g_base[None, :] * (1.0 + cfg.gamma_drift * np.sin(2 * np.pi * t_axis / 120.0 + phase[None, :]))
    weekday = 1.0 + cfg.weekday_amplitude * np.where(dow >= 5, -1.0, 0.4)[:, None]
    weekend_move = np.where(dow >= 5, -0.08, 0.0)[:, None]
    coupling = np.array([metasir_force(np.eye(n)[m], base, pop) for m in range(n)]).sum(axis=0)
    b0 = r_base * g_base / coupling

    _, test_start = split_boundaries(T)
    surge_start = max(test_start - cfg.surge_lead, 1)
    variant = np.where(np.arange(T) >= surge_start, cfg.surge_factor, 1.0)

    move_noise = _smooth_walk(rng, T, n, cfg.movement_noise)
    flow_noise = np.exp(rng.normal(0.0, cfg.daily_flow_noise, (T, n, n)))
    case_noise = np.exp(rng.normal(0.0, cfg.case_noise, (T, n))) if cfg.case_noise > 0 else np.ones((T, n))
    sample = rng.uniform(*cfg.sample_rate, n)[None, :] * np.exp(_smooth_walk(rng, T, n, 0.02))

    S = np.empty((T, n)); I = np.empty((T, n)); R = np.empty((T, n))
    daily = np.empty((T, n)); movement = np.empty((T, n)); beta = np.empty((T, n))
    H = np.empty((T, n, n))
    I[0] = np.round(cfg.initial_prevalence * pop)
    R[0] = 0.0
    S[0] = pop - I[0]
    daily[0] = I[0]
    level = np.zeros(n)
    restricted = np.zeros(n, dtype=bool)
    for t in range(T):
        incidence = daily[max(0, t - 6):t + 1].mean(axis=0) / pop * 1e5
        restricted = np.where(incidence > cfg.restrict_on, True,
                              np.where(incidence < cfg.restrict_off, False, restricted))
        level += cfg.movement_response * (np.where(restricted, -cfg.restrict_depth, 0.0) - level)
        movement[t] = level + move_noise[t] + weekend_move[t]
        lagged = movement[max(0, t - cfg.movement_lag)]
        beta[t] = b0 * np.exp(cfg.movement_effect * lagged) * weekday[t] * variant[t]
        H[t] = base * (1.0 + movement[t])[:, None] * flow_noise[t]
        if t + 1 == T:
            break
        cases = beta[t] * metasir_force(I[t], H[t], pop) * case_noise[t]
        if np.any(cases > S[t]):
            r = int(np.argmax(cases - S[t]))
            raise ScenarioError(f"susceptibles of region {ids[r]} exhausted on {dates[t + 1].isoformat()}; "
                                "lower r_base or the surge factor")
        removed = gamma[t] * I[t]
        S[t + 1] = S[t] - cases
        I[t + 1] = I[t] + cases - removed
        R[t + 1] = R[t] + removed
        daily[t + 1] = cases
        bad = np.argwhere(np.stack([S[t + 1], I[t + 1], R[t + 1]]) < 0)
        if bad.size:
            raise ScenarioError(f"negative compartment in region {ids[bad[0][1]]} on {dates[t + 1].isoformat()}")

    stay = np.clip(cfg.stay_base - 0.5 * movement, 0.02, 0.9)
    active = (1.0 - stay) * pop[None, :]
    nuid = np.round(sample * active)
    rates = nuid / active
    raw = H * rates[:, :, None]
    anchor = rates[0, int(np.argmax(pop))]
    flows = raw * (anchor / rates)[:, :, None]

    series = EpidemicSeries(dates, daily, R.copy())
    truth = {"beta": beta, "gamma": gamma, "H": H, "S": S, "I": I, "R": R,
             "base_flow": base, "raw_flows": raw, "surge_start": surge_start,
             "lat": lat, "lon": lon, "anchor_rate": anchor, "config": cfg.to_dict(), "seed": seed}
    return EpiDataset(regions, series, movement, stay, static, flows, nuid, dist, truth)
