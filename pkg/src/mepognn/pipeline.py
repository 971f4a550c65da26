"""Glue between datasets, models, training and checkpoints."""

from __future__ import annotations

import numpy as np

from . import checkpoint
from .autodiff import ContractError
from .data import EpiDataset, FeatureScaler, Windows, split_boundaries
from .gravity import GravityConfig, generate
from .model import MepoGNN, coupling_scale
from .network import NetworkConfig
from .train import TrainConfig, TrainResult, restore, snapshot, train

FORMAT = "mepognn-checkpoint"


def initial_graph(ds: EpiDataset, init: str = "static_flow", gravity: GravityConfig = GravityConfig()) -> np.ndarray:
    if init == "static_flow":
        if ds.flows_static is None:
            raise ContractError("static-flow initialisation needs flows_static.csv")
        return ds.flows_static
    if init == "gravity":
        if ds.distances is None:
            raise ContractError("gravity initialisation needs distances.csv")
        return generate(ds.regions.population, ds.distances, gravity)
    raise ContractError(f"unknown graph initialisation {init!r}")


def training_flow_scale(ds: EpiDataset) -> float:
    """Mean coupling of the dynamic flows over the training date range."""
    if ds.flows_dynamic is None:
        raise ContractError("dynamic graph mode needs flows_dynamic.csv")
    b1, _ = split_boundaries(len(ds.dates))
    return coupling_scale(ds.flows_dynamic[:max(b1, 1)], ds.regions.population)


def build_model(ds: EpiDataset, net: NetworkConfig, mode: str = "adaptive", init: str = "static_flow",
                gravity: GravityConfig = GravityConfig(), seed: int = 0) -> MepoGNN:
    if mode == "adaptive":
        return MepoGNN(net, ds.regions.population, mode, init_graph=initial_graph(ds, init, gravity), seed=seed)
    return MepoGNN(net, ds.regions.population, mode, seed=seed, rate_scale=training_flow_scale(ds))


def fit(ds: EpiDataset, net: NetworkConfig, cfg: TrainConfig, mode: str = "adaptive", init: str = "static_flow",
        gravity: GravityConfig = GravityConfig(), zscore: bool = True, log_path=None,
        timing: bool = True) -> tuple[MepoGNN, Windows, TrainResult]:
    windows = ds.windows(net.t_in, net.t_out, need_flows=(mode == "dynamic"), zscore=zscore)
    model = build_model(ds, net, mode, init, gravity, seed=cfg.seed)
    result = train(model, windows, cfg, log_path=log_path, use_validation=len(windows.val) > 0, timing=timing)
    return model, windows, result


def model_meta(model: MepoGNN, scaler: FeatureScaler, extra: dict | None = None) -> dict:
    meta = {
        "format": FORMAT,
        "network": model.cfg.to_dict(),
        "mode": model.mode,
        "rate_scale": model.rate_scale,
        "graph_scale": getattr(model.graph, "scale", None),
        "population": model.population.tolist(),
        "scaler": scaler.to_dict(),
    }
    if extra:
        meta["config"] = extra
    return meta


def save_model(path, model: MepoGNN, scaler: FeatureScaler, extra: dict | None = None):
    return checkpoint.save(path, snapshot(model), model_meta(model, scaler, extra))


def load_model(path) -> tuple[MepoGNN, FeatureScaler, dict]:
    blocks, meta = checkpoint.load(path)
    if meta.get("format") != FORMAT:
        raise checkpoint.CheckpointError(f"{path}: not a forecaster checkpoint")
    net = NetworkConfig(**meta["network"])
    pop = np.asarray(meta["population"], dtype=np.float64)
    if meta["mode"] == "adaptive":
        # the placeholder graph is overwritten by the stored block
        model = MepoGNN(net, pop, "adaptive", init_graph=np.ones((pop.size, pop.size)), graph_scale=meta["graph_scale"],
                        rate_scale=meta["rate_scale"])
    else:
        model = MepoGNN(net, pop, "dynamic", rate_scale=meta["rate_scale"])
    restore(model, blocks)
    return model, FeatureScaler(**meta["scaler"]), meta


def check_compatible(meta: dict, ds: EpiDataset, t_in: int | None = None, t_out: int | None = None) -> None:
    """Raise listing every field where the checkpoint and the inputs disagree."""
    diffs = []
    pop = np.asarray(meta["population"])
    if pop.shape != ds.regions.population.shape:
        diffs.append(f"regions: checkpoint {pop.size}, data {ds.regions.population.size}")
    elif not np.array_equal(pop, ds.regions.population):
        diffs.append("population: values differ")
    net = meta["network"]
    if t_in is not None and t_in != net["t_in"]:
        diffs.append(f"t_in: checkpoint {net['t_in']}, requested {t_in}")
    if t_out is not None and t_out != net["t_out"]:
        diffs.append(f"t_out: checkpoint {net['t_out']}, requested {t_out}")
    if meta["mode"] == "dynamic" and ds.flows_dynamic is None:
        diffs.append("flows_dynamic: checkpoint needs dynamic flows, none given")
    if diffs:
        raise ContractError("checkpoint does not match inputs: " + "; ".join(diffs))
