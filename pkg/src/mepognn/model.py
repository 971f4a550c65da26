"""End-to-end forecaster: graph learning, rate network and compartmental rollout."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ContractError, Parameter, Tensor
from .graph import AdaptiveGraph, DynamicGraph
from .mechanistic import ClampCounter, rollout
from .network import NetworkConfig, STNetwork

MODES = ("adaptive", "dynamic")


@dataclass
class Forecast:
    y: Tensor  # (B, N, steps) new cases
    beta: Tensor  # (B, N, T_out)
    gamma: Tensor
    H: Tensor  # (N, N) or (B, T_out, N, N)
    A: Tensor


def coupling_scale(H: np.ndarray, population: np.ndarray) -> float:
    """Mean total coupling ``sum_m (h_mn / P_m + h_nm / P_n)`` of a graph (or mean of a stack)."""
    H = np.asarray(H, dtype=np.float64)
    if H.ndim == 3:
        H = H.mean(axis=0)
    P = np.asarray(population, dtype=np.float64)
    total = (H / P[:, None]).sum(axis=0) + H.sum(axis=1) / P
    s = float(total.mean())
    if not (np.isfinite(s) and s > 0):
        raise ContractError("graph has no coupling; cannot set the rate scale")
    return s


class MepoGNN:
    """Rates from the spatio-temporal network drive a differentiable metapopulation rollout.

    ``mode="adaptive"`` learns one graph initialised from ``init_graph``;
    ``mode="dynamic"`` learns time weights over the input OD flows.

    Graph magnitudes depend on their source (census trips, GPS samples,
    gravity units), so the infection head is divided by a fixed
    ``rate_scale`` (the mean coupling of the initial graph, or of the
    training flows) so that head outputs near one mean one new case per
    active case.  The reported ``beta`` is the rescaled rate that the
    rollout actually uses.
    """

    def __init__(self, cfg: NetworkConfig, population: np.ndarray, mode: str = "adaptive",
                 init_graph: np.ndarray | None = None, seed: int = 0, graph_scale: float | str = "mean",
                 rate_scale: float | None = None):
        if mode not in MODES:
            raise ContractError(f"graph mode must be one of {MODES}, got {mode!r}")
        self.cfg = cfg
        self.mode = mode
        self.population = np.asarray(population, dtype=np.float64)
        self.net = STNetwork(cfg, seed=seed)
        if mode == "adaptive":
            if init_graph is None:
                raise ContractError("adaptive mode needs an initial graph (static flows or generated mobility)")
            if init_graph.shape != (self.population.size,) * 2:
                raise ContractError(f"initial graph shape {init_graph.shape} does not match {self.population.size} regions")
            self.graph = AdaptiveGraph(init_graph, scale=graph_scale)
            if rate_scale is None:
                rate_scale = coupling_scale(init_graph, self.population)
        else:
            self.graph = DynamicGraph(cfg.t_in, cfg.t_out)
            if rate_scale is None:
                raise ContractError("dynamic mode needs a rate scale (coupling of the training flows)")
        self.rate_scale = float(rate_scale)

    def named_parameters(self) -> dict[str, Parameter]:
        out = {p.name: p for p in self.graph.parameters()}
        out.update(self.net.params)
        return out

    def parameters(self) -> list[Parameter]:
        return list(self.named_parameters().values())

    def forward(self, X, S0, I0, R0, O=None, steps: int | None = None,
                clamp: ClampCounter | None = None) -> Forecast:
        """Forecast ``steps`` (default ``T_out``) days for a batch of windows."""
        if self.mode == "adaptive":
            A, H = self.graph.output()
        else:
            if O is None:
                raise ContractError("dynamic mode needs the input OD flows")
            H, A = self.graph.output(O)
        beta, gamma = self.net.forward(X, A)
        beta = beta * (1.0 / self.rate_scale)
        y = rollout(S0, I0, R0, self.population, beta, gamma, H, steps=steps, clamp=clamp)
        return Forecast(y, beta, gamma, H, A)

    def learned_graph(self, O=None) -> np.ndarray:
        """The graph fed to the rollout: adaptive matrix, or mean dynamic graph of ``O``."""
        if self.mode == "adaptive":
            return self.graph.matrix()
        H, A = self.graph.output(O)
        return A.value
