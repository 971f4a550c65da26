"""Model comparison on the test split: calibrated baselines against the trained forecaster."""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import EpiDataset, EpidemicState, WindowSet
from .gravity import GravityConfig
from .mechanistic import (ClampCounter, CompartmentWarning, History, copy_baseline, fit_baseline,
                          fit_daily_params, simulate)
from .metrics import HORIZONS, NAMES, MetricReport, horizon_report, mean_ci
from .network import NetworkConfig
from .pipeline import fit
from .train import TrainConfig, predict

log = logging.getLogger(__name__)

BASELINES = {
    "SIR": ("SIR", False),
    "SIR(Copy)": ("SIR", True),
    "MetaSIR": ("MetaSIR", False),
    "MetaSIR(Copy)": ("MetaSIR", True),
}
LEARNED = {
    "MepoGNN(Adp)": ("adaptive", "static_flow"),
    "MepoGNN(Dyn)": ("dynamic", "static_flow"),
    "MepoGNN(Adp,gravity)": ("adaptive", "gravity"),
}
DEFAULT_MODELS = ("SIR", "SIR(Copy)", "MetaSIR", "MetaSIR(Copy)", "MepoGNN(Adp)", "MepoGNN(Dyn)")
DEFAULT_SEEDS = (0, 1, 2, 3, 4)


def baseline_forecast(ds: EpiDataset, ws: WindowSet, name: str, t_in: int, t_out: int,
                      H: np.ndarray | None = None, clamp: ClampCounter | None = None) -> np.ndarray:
    """Calibrate on each window's input days and roll forward ``t_out`` days; returns ``(W, N, t_out)``."""
    model, copy = BASELINES[name]
    S, I, R = ds.states()
    daily = ds.series.daily_confirmed
    P = ds.regions.population
    out = np.zeros((len(ws), P.size, t_out))
    for k, t in enumerate(ws.t_index):
        days = slice(t - t_in + 1, t + 1)
        hist = History(S[days], I[days], R[days], daily[days], P)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", CompartmentWarning)
            if copy:
                params = copy_baseline(fit_daily_params(hist, model, H), t_out)
            else:
                params = fit_baseline(hist, model, window=t_in - 1, H=H)
        state = EpidemicState(S[t], I[t], R[t], P)
        out[k] = simulate(state, model, params.beta, params.gamma, t_out, H, clamp or ClampCounter())
    return out


@dataclass
class ModelRun:
    name: str
    reports: list[dict[str, MetricReport]] = field(default_factory=list)
    failures: list[str] = field(default_factory=list)

    @property
    def failed(self) -> bool:
        return bool(self.failures)


@dataclass
class BenchmarkResult:
    runs: dict[str, ModelRun]
    seeds: tuple[int, ...]
    t_out: int

    def score(self, model: str, metric: str = "MAE", key: str = "overall") -> tuple[float, float | None]:
        return mean_ci(r[key].get(metric) for r in self.runs[model].reports)

    def per_seed(self, model: str, metric: str = "MAE", key: str = "overall") -> list[float]:
        return [r[key].get(metric) for r in self.runs[model].reports]

    def columns(self) -> list[str]:
        keys = [f"h{h}" for h in HORIZONS if h <= self.t_out] + ["overall"]
        cols = []
        for k in keys:
            for m in NAMES:
                cols.append(f"{k}_{m}")
                if len(self.seeds) > 1:
                    cols.append(f"{k}_{m}_ci")
        return cols

    def rows(self) -> list[dict]:
        cols = self.columns()
        out = []
        for name, run in self.runs.items():
            row = {"model": name, "status": "failed" if run.failed else "ok"}
            for c in cols:
                if c.endswith("_ci"):
                    continue
                key, metric = c.rsplit("_", 1)
                mean, ci = self.score(name, metric, key) if run.reports and not run.failed else (None, None)
                row[c] = mean
                if len(self.seeds) > 1:
                    row[c + "_ci"] = ci
            if run.failed:
                row["status"] = "failed: " + " | ".join(run.failures)
            out.append(row)
        return out

    def write_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=["model", "status"] + self.columns(), lineterminator="\n")
            w.writeheader()
            for row in self.rows():
                w.writerow({k: ("" if v is None else (f"{v:.6f}" if isinstance(v, float) else v))
                            for k, v in row.items()})
        return path


def benchmark(ds: EpiDataset, models: Sequence[str] = DEFAULT_MODELS, seeds: Sequence[int] = DEFAULT_SEEDS,
              net: NetworkConfig | None = None, train_cfg: TrainConfig | None = None,
              gravity: GravityConfig = GravityConfig(), split: str = "test", zscore: bool = True,
              baseline_graph: np.ndarray | None = None) -> BenchmarkResult:
    """Score every model on ``split`` for every seed.

    Baselines are deterministic, so their seeds repeat the same numbers.  A
    model that raises on some seed is marked failed without affecting others.
    """
    if not seeds:
        raise ValueError("benchmark needs at least one seed")
    net = net or NetworkConfig()
    train_cfg = train_cfg or TrainConfig()
    unknown = [m for m in models if m not in BASELINES and m not in LEARNED]
    if unknown:
        raise ValueError(f"unknown models {unknown}; choose from {list(BASELINES) + list(LEARNED)}")
    H = baseline_graph if baseline_graph is not None else ds.flows_static
    windows = ds.windows(net.t_in, net.t_out, zscore=zscore)
    ws = windows.split(split)
    if len(ws) == 0:
        raise ValueError(f"the {split} split has no complete windows")
    runs = {m: ModelRun(m) for m in models}
    for m in models:
        if m not in BASELINES:
            continue
        try:
            y = baseline_forecast(ds, ws, m, net.t_in, net.t_out, H)
            rep = horizon_report(y, ws.Y)
            runs[m].reports = [rep for _ in seeds]
        except Exception as exc:  # noqa: BLE001 - recorded in the table
            runs[m].failures.append(f"{type(exc).__name__}: {exc}")
    for m in models:
        if m not in LEARNED:
            continue
        mode, init = LEARNED[m]
        for seed in seeds:
            cfg = TrainConfig(**{**train_cfg.to_dict(), "seed": seed})
            try:
                model, w, res = fit(ds, net, cfg, mode, init, gravity, zscore=zscore, timing=False)
                pred = predict(model, w.split(split))
                runs[m].reports.append(horizon_report(pred.y, w.split(split).Y))
                log.info("%s seed %d: best epoch %d, val %.4f", m, seed, res.best_epoch, res.best_val)
            except Exception as exc:  # noqa: BLE001
                runs[m].failures.append(f"seed {seed}: {type(exc).__name__}: {exc}")
    return BenchmarkResult(runs, tuple(seeds), net.t_out)
