"""Command-line entry point.

Every command writes its artifacts and a ``manifest.json`` (command, config
echo, seed, input digests, tool version, output digests) into ``--out``.
Failures exit nonzero with a one-line diagnostic on stderr.
"""

from __future__ import annotations

import argparse
import csv
import datetime as dt
import hashlib
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from . import autodiff as ad
from .autodiff import ContractError, NumericDomainError
from .benchmark import BASELINES, DEFAULT_MODELS, LEARNED, benchmark
from .checkpoint import CheckpointError
from .config import ConfigError, RunConfig
from .data import (DATA_FILES, DataIntegrityError, EpidemicState, FeatureScaler, SchemaError, build_features, fmt,
                   load_dataset, normalize_od, read_distances, read_flows_dynamic, read_movement, read_nuid,
                   read_regions, sample_rates, write_dataset, write_flows_dynamic, write_matrix)
from .gravity import GravityConfig, GravityConfigError, generate
from .mechanistic import ClampCounter, mepo_rollout, simulate
from .metrics import horizon_report
from .model import MepoGNN
from .network import NetworkConfig
from .pipeline import check_compatible, fit, load_model, save_model
from .synth import ScenarioConfig, ScenarioError, synth_scenario
from .train import TrainConfig, predict

log = logging.getLogger("mepognn")

EXPECTED_ERRORS = (SchemaError, DataIntegrityError, ContractError, ConfigError, CheckpointError,
                   GravityConfigError, ScenarioError, NumericDomainError, FileNotFoundError)


class CommandFailed(RuntimeError):
    """A command ran but its check did not pass (exit status 1)."""


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in r])
    return path


def write_manifest(out: Path, command: str, config: dict, seed, inputs, outputs) -> Path:
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "inputs": {str(p): sha256(p) for p in sorted({str(p) for p in inputs if p})},
        "outputs": {Path(p).name: sha256(p) for p in sorted(outputs, key=lambda q: Path(q).name)},
        "tool": {"name": "mepognn", "version": __version__, "numpy": np.__version__},
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


# config assembly -------------------------------------------------------------

def _run_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "data_dir", None):
        d = Path(args.data_dir)
        for key, name in DATA_FILES.items():
            if (d / name).exists():
                cfg.paths.setdefault(key, str(d / name))
    for key in DATA_FILES:
        v = getattr(args, key, None)
        if v:
            cfg.paths[key] = v
    if getattr(args, "graph_mode", None):
        cfg.graph_mode = args.graph_mode
    if getattr(args, "graph_init", None):
        cfg.graph_init = args.graph_init
    net = cfg.network.to_dict()
    for flag, key in (("t_in", "t_in"), ("t_out", "t_out"), ("layers", "n_layers"), ("channels", "channels"),
                      ("dilations", "dilations"), ("diffusion_steps", "diffusion_steps")):
        v = getattr(args, flag, None)
        if v is not None:
            net[key] = v
    if getattr(args, "layers", None) is not None and getattr(args, "dilations", None) is None:
        net["dilations"] = [2 ** i for i in range(args.layers)]
    tr = cfg.train.to_dict()
    for flag, key in (("epochs", "max_epochs"), ("patience", "patience"), ("batch", "batch"), ("lr", "lr"),
                      ("weight_decay", "weight_decay"), ("seed", "seed")):
        v = getattr(args, flag, None)
        if v is not None:
            tr[key] = v
    cfg.network = NetworkConfig(**net)
    cfg.train = TrainConfig(**tr)
    g = asdict(cfg.gravity)
    for flag in ("alpha", "decay", "eps"):
        v = getattr(args, flag, None)
        if v is not None:
            g[flag] = v
    if getattr(args, "zero_diagonal", False):
        g["zero_diagonal"] = True
    cfg.gravity = GravityConfig(**g)
    if getattr(args, "no_zscore", False):
        cfg.zscore = False
    cfg.output = str(args.out)
    return cfg


def _load(cfg: RunConfig):
    return load_dataset(cfg.paths, normalize_flows=cfg.normalize_flows)


# commands --------------------------------------------------------------------

def cmd_generate_mobility(args, out: Path):
    regions = read_regions(args.regions)
    dist = read_distances(args.distances, regions)
    cfg = GravityConfig(args.alpha if args.alpha is not None else 1e-6,
                        args.decay if args.decay is not None else 1.7,
                        args.eps if args.eps is not None else 9.0, args.zero_diagonal)
    m = generate(regions.population, dist, cfg)
    path = out / "gravity_flows.csv"
    write_matrix(path, regions, m)
    return {"gravity": asdict(cfg)}, None, [args.regions, args.distances], [path]


def cmd_normalize_od(args, out: Path):
    regions = read_regions(args.regions)
    mdates, _, stay = read_movement(args.movement, regions)
    ndates, nuid = read_nuid(args.nuid, regions)
    if ndates != mdates:
        raise DataIntegrityError("movement.csv and nuid.csv cover different dates")
    raw = read_flows_dynamic(args.flows_dynamic, regions, mdates)
    rates = sample_rates(stay, nuid, regions.population)
    anchor = None
    if args.anchor_region or args.anchor_date:
        r = regions.index(args.anchor_region) if args.anchor_region else int(np.argmax(regions.population))
        d = mdates.index(dt.date.fromisoformat(args.anchor_date)) if args.anchor_date else 0
        anchor = (r, d)
    flows = normalize_od(raw, rates, anchor, regions.population, mdates, regions.region_ids)
    path = out / "flows_dynamic_normalized.csv"
    write_flows_dynamic(path, mdates, regions, flows)
    rpath = write_csv(out / "sample_rates.csv", ("date", "region_id", "sample_rate"),
                      ((d.isoformat(), rid, rates[t, i]) for t, d in enumerate(mdates)
                       for i, rid in enumerate(regions.region_ids)))
    return ({"anchor": None if anchor is None else [regions.region_ids[anchor[0]], mdates[anchor[1]].isoformat()]},
            None, [args.regions, args.movement, args.nuid, args.flows_dynamic], [path, rpath])


def _rates(text: str, n: int) -> np.ndarray:
    vals = np.array([float(v) for v in text.split(",")])
    if vals.size not in (1, n):
        raise ConfigError(f"expected 1 or {n} comma-separated rates, got {vals.size}")
    return np.broadcast_to(vals, (n,)).copy()


def cmd_simulate(args, out: Path):
    cfg = _run_config(args)
    ds = _load(cfg)
    S, I, R = ds.states()
    P = ds.regions.population
    t = len(ds.dates) - 1 if args.start_date is None else ds.dates.index(dt.date.fromisoformat(args.start_date))
    state = EpidemicState(S[t], I[t], R[t], P)
    n = P.size
    beta, gamma = _rates(args.beta, n), _rates(args.gamma, n)
    H = ds.flows_static
    if args.model != "SIR" and H is None:
        raise ConfigError(f"{args.model} simulation needs flows_static.csv")
    clamp = ClampCounter()
    if args.model == "Mepo":
        y = mepo_rollout(state, np.repeat(beta[:, None], args.horizon, 1),
                         np.repeat(gamma[:, None], args.horizon, 1), H, clamp)
    else:
        y = simulate(state, args.model, beta, gamma, args.horizon, H, clamp)
    rows = []
    s, i_, r = S[t].copy(), I[t].copy(), R[t].copy()
    for h in range(args.horizon):
        removed = gamma * i_
        s, i_, r = s - y[:, h], i_ + y[:, h] - removed, r + removed
        day = ds.dates[t] + dt.timedelta(days=h + 1)
        rows.extend((day.isoformat(), rid, h + 1, y[k, h], s[k], i_[k], r[k]) for k, rid in enumerate(ds.regions.region_ids))
    path = write_csv(out / "simulation.csv", ("date", "region_id", "horizon", "new_cases", "S", "I", "R"), rows)
    echo = {"model": args.model, "beta": beta.tolist(), "gamma": gamma.tolist(), "horizon": args.horizon,
            "start_date": ds.dates[t].isoformat(), "clamped": clamp.count, "paths": cfg.paths}
    return echo, None, cfg.paths.values(), [path]


def cmd_synth(args, out: Path):
    sc = json.loads(Path(args.scenario).read_text()) if args.scenario else {}
    sc.update(n_regions=args.regions, n_days=args.days)
    cfg = ScenarioConfig(**sc)
    ds = synth_scenario(cfg, args.seed)
    data_dir = out / "data"
    paths = write_dataset(data_dir, ds, raw_flows=ds.truth["raw_flows"])
    truth = ds.truth
    tpath = write_csv(data_dir / "truth_rates.csv", ("date", "region_id", "beta", "gamma", "r"),
                      ((d.isoformat(), rid, truth["beta"][t, i], truth["gamma"][t, i],
                        truth["beta"][t, i] / truth["gamma"][t, i])
                       for t, d in enumerate(ds.dates) for i, rid in enumerate(ds.regions.region_ids)))
    bpath = data_dir / "truth_base_flow.csv"
    write_matrix(bpath, ds.regions, truth["base_flow"])
    outputs = list(paths.values()) + [tpath, bpath]
    return {"scenario": cfg.to_dict(), "surge_start": ds.dates[truth["surge_start"]].isoformat()}, \
        args.seed, [args.scenario], outputs


def _graph_exports(out: Path, ds, model, windows) -> list[Path]:
    if model.mode == "adaptive":
        A = model.learned_graph()
    else:
        ws = windows.train
        A = model.learned_graph(ws.O[-1]) if len(ws) else np.zeros((ds.regions.population.size,) * 2)
    p1 = out / "learned_graph.csv"
    write_matrix(p1, ds.regions, A)
    p2 = out / "learned_graph_log.csv"
    write_matrix(p2, ds.regions, np.log1p(A), "log1p_flow")
    paths = [p1, p2]
    if model.mode == "dynamic":
        p3 = write_csv(out / "time_weights.csv", ("forecast_day", "input_day", "weight"),
                       ((i + 1, j + 1, w) for i, row in enumerate(model.graph.weights()) for j, w in enumerate(row)))
        paths.append(p3)
    return paths


def cmd_train(args, out: Path):
    cfg = _run_config(args)
    cfg.validate()
    ds = _load(cfg)
    log_path = out / "train_log.csv"
    model, windows, res = fit(ds, cfg.network, cfg.train, cfg.graph_mode, cfg.graph_init, cfg.gravity,
                              zscore=cfg.zscore, log_path=log_path, timing=not args.no_timing)
    ckpt = save_model(out / "model.ckpt", model, windows.scaler, cfg.to_dict())
    summary = {"best_epoch": res.best_epoch, "best_val_mae": res.best_val, "stopped_epoch": res.stopped_epoch,
               "clamped_steps": res.clamped, "windows": {k: len(windows.split(k)) for k in ("train", "val", "test")}}
    spath = out / "train_summary.json"
    spath.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    outputs = [log_path, ckpt, spath] + _graph_exports(out, ds, model, windows)
    return cfg.to_dict(), cfg.train.seed, cfg.paths.values(), outputs


def _checkpointed(args):
    cfg = _run_config(args)
    model, scaler, meta = load_model(args.checkpoint)
    ds = _load(cfg)
    net = meta["network"]
    check_compatible(meta, ds, getattr(args, "t_in", None), getattr(args, "t_out", None))
    windows = ds.windows(net["t_in"], net["t_out"], need_flows=model.mode == "dynamic", scaler=scaler)
    return cfg, model, meta, ds, windows


def cmd_forecast(args, out: Path):
    cfg, model, meta, ds, _ = _checkpointed(args)
    t_in, t_out = meta["network"]["t_in"], meta["network"]["t_out"]
    t = len(ds.dates) - 1 if args.date is None else ds.dates.index(dt.date.fromisoformat(args.date))
    if t < t_in - 1:
        raise DataIntegrityError(f"forecast from {ds.dates[t]} needs {t_in} days of history")
    S, I, R = ds.states()
    feats = FeatureScaler(**meta["scaler"]).transform(build_features(ds.series.daily_confirmed, I, ds.movement,
                                                                     ds.dates))
    X = feats[t - t_in + 1:t + 1].transpose(1, 0, 2)[None]
    O = None if model.mode == "adaptive" else ds.flows_dynamic[t - t_in + 1:t + 1][None]
    clamp = ClampCounter()
    f = model.forward(X, S[t][None], I[t][None], R[t][None], O, clamp=clamp)
    y, beta, gamma = f.y.value[0], f.beta.value[0], f.gamma.value[0]
    rows = []
    for h in range(t_out):
        day = ds.dates[t] + dt.timedelta(days=h + 1)
        for k, rid in enumerate(ds.regions.region_ids):
            rows.append((rid, h + 1, day.isoformat(), y[k, h], beta[k, h], gamma[k, h], beta[k, h] / gamma[k, h]))
    path = write_csv(out / "forecast.csv", ("region_id", "horizon", "date", "y_hat", "beta", "gamma", "r_hat"), rows)
    H = f.H.value if model.mode == "adaptive" else f.A.value[0]
    gpath = out / "forecast_graph.csv"
    write_matrix(gpath, ds.regions, H)
    echo = {"checkpoint": str(args.checkpoint), "origin_date": ds.dates[t].isoformat(), "paths": cfg.paths,
            "clamped": clamp.count}
    return echo, None, list(cfg.paths.values()) + [args.checkpoint], [path, gpath]


def cmd_evaluate(args, out: Path):
    cfg, model, meta, ds, windows = _checkpointed(args)
    ws = windows.split(args.split)
    if len(ws) == 0:
        raise DataIntegrityError(f"the {args.split} split has no complete windows")
    pred = predict(model, ws)
    rep = horizon_report(pred.y, ws.Y)
    mpath = write_csv(out / "metrics.csv", ("horizon", "RMSE", "MAE", "MAPE", "RAE", "zero_targets"),
                      ((k, r.RMSE, r.MAE, "" if r.MAPE is None else r.MAPE, "" if r.RAE is None else r.RAE,
                        r.zero_targets) for k, r in rep.items()))
    rows = []
    for w, t in enumerate(ws.t_index):
        for k, rid in enumerate(ds.regions.region_ids):
            for h in range(ws.Y.shape[2]):
                day = ds.dates[t] + dt.timedelta(days=h + 1)
                rows.append((ds.dates[t].isoformat(), day.isoformat(), rid, h + 1, ws.Y[w, k, h], pred.y[w, k, h],
                             pred.beta[w, k, h], pred.gamma[w, k, h], pred.r_hat[w, k, h]))
    ppath = write_csv(out / "predictions.csv",
                      ("origin_date", "date", "region_id", "horizon", "y", "y_hat", "beta", "gamma", "r_hat"), rows)
    echo = {"checkpoint": str(args.checkpoint), "split": args.split, "paths": cfg.paths}
    return echo, None, list(cfg.paths.values()) + [args.checkpoint], [mpath, ppath]


def cmd_benchmark(args, out: Path):
    cfg = _run_config(args)
    ds = _load(cfg)
    models = args.models.split(",") if args.models else list(DEFAULT_MODELS)
    seeds = [int(s) for s in args.seeds.split(",")]
    res = benchmark(ds, models, seeds, cfg.network, cfg.train, cfg.gravity, split=args.split, zscore=cfg.zscore)
    path = res.write_csv(out / "benchmark.csv")
    echo = {"models": models, "seeds": seeds, "split": args.split, "network": cfg.network.to_dict(),
            "train": cfg.train.to_dict(), "gravity": asdict(cfg.gravity), "paths": cfg.paths}
    return echo, seeds, cfg.paths.values(), [path]


def cmd_grad_check(args, out: Path):
    rng = np.random.default_rng(args.seed)
    n, t_in, t_out = args.regions, args.t_in, args.t_out
    dil = tuple(2 ** i for i in range(args.layers))
    net = NetworkConfig(n_layers=args.layers, dilations=dil, channels=args.channels, skip_channels=args.channels,
                        t_in=t_in, t_out=t_out)
    P = rng.uniform(1e4, 1e5, n)
    B = 2
    if args.graph_mode == "adaptive":
        model = MepoGNN(net, P, "adaptive", init_graph=rng.uniform(10, 1000, (n, n)), seed=args.seed)
        O = None
    else:
        O = rng.uniform(10, 1000, (B, t_in, n, n))
        model = MepoGNN(net, P, "dynamic", seed=args.seed, rate_scale=1.0)
        model.graph.L.value[...] = rng.normal(size=(t_out, t_in))
    X = rng.normal(size=(B, n, t_in, 4))
    I0 = rng.uniform(10, 200, (B, n))
    R0 = rng.uniform(0, 100, (B, n))
    S0 = P - I0 - R0
    Y = rng.uniform(0, 50, (B, n, t_out))
    w = rng.normal(size=(B, n, t_out))

    def forward():
        f = model.forward(X, S0, I0, R0, O)
        # a smooth loss keeps finite differences away from the kinks of |.|
        return ad.mean((f.y - Y) * w) + ad.mean(ad.tanh(f.y * 0.01))

    rep = ad.grad_check(forward, model.parameters(), step=args.step, tol=args.tol)
    path = write_csv(out / "grad_check.csv", ("block", "shape", "relative_error", "ok"),
                     ((e.name, "x".join(map(str, e.analytic.shape)), e.rel_error, not e.failed) for e in rep.entries))
    echo = {"regions": n, "t_in": t_in, "t_out": t_out, "layers": args.layers, "graph_mode": args.graph_mode,
            "step": args.step, "tol": args.tol, "max_error": rep.max_error}
    if not rep.ok:
        write_manifest(out, "grad-check", echo, args.seed, [], [path])
        raise CommandFailed(rep.summary())
    return echo, args.seed, [], [path]


COMMANDS = {
    "generate-mobility": cmd_generate_mobility,
    "normalize-od": cmd_normalize_od,
    "simulate": cmd_simulate,
    "synth": cmd_synth,
    "train": cmd_train,
    "forecast": cmd_forecast,
    "evaluate": cmd_evaluate,
    "benchmark": cmd_benchmark,
    "grad-check": cmd_grad_check,
}


def _data_args(p, required_checkpoint=False):
    p.add_argument("--config", help="RunConfig JSON; flags override its values")
    p.add_argument("--data-dir", help="directory holding the standard CSV files")
    for key, name in DATA_FILES.items():
        p.add_argument(f"--{key.replace('_', '-')}", dest=key, help=f"path to {name}")
    if required_checkpoint:
        p.add_argument("--checkpoint", required=True)


def _model_args(p):
    p.add_argument("--graph-mode", choices=("adaptive", "dynamic"))
    p.add_argument("--graph-init", choices=("static_flow", "gravity"))
    p.add_argument("--t-in", type=int)
    p.add_argument("--t-out", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--dilations", type=lambda s: [int(v) for v in s.split(",")])
    p.add_argument("--channels", type=int)
    p.add_argument("--diffusion-steps", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--no-zscore", action="store_true", help="feed raw case counts and ratios")
    _gravity_args(p)


def _gravity_args(p):
    p.add_argument("--alpha", type=float)
    p.add_argument("--decay", type=float)
    p.add_argument("--eps", type=float)
    p.add_argument("--zero-diagonal", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mepognn", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"mepognn {__version__}")
    ap.add_argument("--log-level", default="WARNING")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-mobility", help="gravity-law mobility from populations and distances")
    p.add_argument("--regions", required=True)
    p.add_argument("--distances", required=True)
    _gravity_args(p)

    p = sub.add_parser("normalize-od", help="rescale raw OD counts to a common GPS sample rate")
    p.add_argument("--regions", required=True)
    p.add_argument("--movement", required=True)
    p.add_argument("--nuid", required=True)
    p.add_argument("--flows-dynamic", required=True)
    p.add_argument("--anchor-region")
    p.add_argument("--anchor-date")

    p = sub.add_parser("simulate", help="roll a compartmental model forward with constant rates")
    _data_args(p)
    p.add_argument("--model", choices=("SIR", "MetaSIR", "Mepo"), default="Mepo")
    p.add_argument("--beta", required=True, help="one rate or one per region, comma-separated")
    p.add_argument("--gamma", required=True)
    p.add_argument("--horizon", type=int, default=14)
    p.add_argument("--start-date", help="ISO date of the initial state (default: last day)")

    p = sub.add_parser("synth", help="generate a synthetic scenario with ground truth")
    p.add_argument("--regions", type=int, default=5)
    p.add_argument("--days", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scenario", help="JSON file with ScenarioConfig overrides")

    p = sub.add_parser("train", help="train the forecaster and save a checkpoint")
    _data_args(p)
    _model_args(p)
    p.add_argument("--no-timing", action="store_true", help="leave the seconds column empty (byte-reproducible log)")

    for name, helptext in (("forecast", "forecast from one origin date"),
                           ("evaluate", "score a checkpoint on a split")):
        p = sub.add_parser(name, help=helptext)
        _data_args(p, required_checkpoint=True)
        p.add_argument("--t-in", type=int)
        p.add_argument("--t-out", type=int)
        if name == "forecast":
            p.add_argument("--date", help="last observed day (default: last day of the data)")
        else:
            p.add_argument("--split", choices=("train", "val", "test"), default="test")

    p = sub.add_parser("benchmark", help="compare baselines and forecaster variants over seeds")
    _data_args(p)
    _model_args(p)
    p.add_argument("--models", help=f"comma-separated subset of {list(BASELINES) + list(LEARNED)}")
    p.add_argument("--seeds", default="0,1,2,3,4")
    p.add_argument("--split", choices=("val", "test"), default="test")

    p = sub.add_parser("grad-check", help="compare tape gradients with finite differences")
    p.add_argument("--regions", type=int, default=3)
    p.add_argument("--t-in", type=int, default=8)
    p.add_argument("--t-out", type=int, default=5)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--channels", type=int, default=8)
    p.add_argument("--graph-mode", choices=("adaptive", "dynamic"), default="adaptive")
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)

    for sp in sub.choices.values():
        sp.add_argument("--out", default="out", help="output directory")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        echo, seed, inputs, outputs = COMMANDS[args.command](args, out)
        write_manifest(out, args.command, echo, seed, inputs, outputs)
    except CommandFailed as exc:
        print(f"mepognn {args.command}: check failed\n{exc}", file=sys.stderr)
        return 1
    except EXPECTED_ERRORS as exc:
        print(f"mepognn {args.command}: error: {exc}", file=sys.stderr)
        return 2
    for p in outputs:
        print(p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
