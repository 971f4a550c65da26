"""Learnable propagation graphs shared by the network and the compartmental rollout.

Two mechanisms are provided:

* :class:`AdaptiveGraph` holds one trainable ``N x N`` matrix initialised from
  a static flow (or generated mobility) matrix.  Its clamped value is used both
  as the adjacency for diffusion convolution and as the static propagation
  graph of the rollout.
* :class:`DynamicGraph` holds a trainable ``T_out x T_in`` time-weight matrix.
  Its row-softmax mixes the last ``T_in`` days of OD flow into one graph per
  forecast day; their mean is the adjacency.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import ContractError, Parameter, Tensor


class AdaptiveGraph:
    """Trainable nonnegative graph.

    The stored parameter is the initial matrix divided by ``scale`` (its mean
    entry by default) so that optimiser steps are commensurate with the
    entries.  Negative entries read as zero.
    """

    def __init__(self, init: np.ndarray, scale: float | str = "mean"):
        init = np.asarray(init, dtype=np.float64)
        if init.ndim != 2 or init.shape[0] != init.shape[1]:
            raise ContractError(f"graph initialisation must be square, got {init.shape}")
        if np.any(init < 0) or not np.all(np.isfinite(init)):
            raise ContractError("graph initialisation must be finite and nonnegative")
        if scale == "mean":
            scale = float(init.mean()) if init.mean() > 0 else 1.0
        self.scale = float(scale)
        self.G = Parameter(init / self.scale, name="graph.G")

    def parameters(self) -> list[Parameter]:
        return [self.G]

    def output(self) -> tuple[Tensor, Tensor]:
        """``(A, H)``: the same clamped matrix feeds both consumers."""
        A = ad.relu(self.G) * self.scale
        return A, A

    def matrix(self) -> np.ndarray:
        return np.maximum(self.G.value, 0.0) * self.scale


class DynamicGraph:
    def __init__(self, t_in: int, t_out: int):
        self.t_in, self.t_out = t_in, t_out
        self.L = Parameter(np.zeros((t_out, t_in)), name="graph.L")

    def parameters(self) -> list[Parameter]:
        return [self.L]

    def weights(self) -> np.ndarray:
        return ad.softmax_rows(self.L.value).value

    def output(self, O) -> tuple[Tensor, Tensor]:
        """Map flows ``(B, T_in, N, N)`` (or unbatched ``(T_in, N, N)``) to ``(H, A)``.

        ``H`` is ``(B, T_out, N, N)`` and ``A`` the mean over its forecast days.
        """
        O = ad.tensor(O)
        batched = O.ndim == 4
        if not batched:
            O = ad.reshape(O, (1,) + O.shape)
        if O.ndim != 4 or O.shape[1] != self.t_in or O.shape[2] != O.shape[3]:
            raise ContractError(f"expected flows (B, {self.t_in}, N, N), got {O.shape}")
        if np.any(O.value < 0):
            raise ContractError("flows must be nonnegative")
        weights = ad.softmax_rows(self.L)
        H = ad.einsum("ij,bjnm->binm", weights, O)
        A = ad.mean(H, axis=1)
        if not batched:
            return H[0], A[0]
        return H, A


def adaptive_output(graph: AdaptiveGraph) -> tuple[np.ndarray, np.ndarray]:
    A, H = graph.output()
    return A.value, H.value


def dynamic_output(L: np.ndarray, O: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unbatched helper: time weights ``(T_out, T_in)`` and flows ``(T_in, N, N)``."""
    L = np.asarray(L, dtype=np.float64)
    g = DynamicGraph(L.shape[1], L.shape[0])
    g.L.value[...] = L
    H, A = g.output(np.asarray(O, dtype=np.float64))
    return H.value, A.value


def _row_normalize(M):
    """Row-stochastic version of ``M`` (..., N, N); all-zero rows become uniform."""
    M = ad.tensor(M)
    n = M.shape[-1]
    empty = (M.value.sum(axis=-1, keepdims=True) == 0).astype(np.float64)
    P = M / (ad.tsum(M, axis=-1, keepdims=True) + empty)
    if np.any(empty):
        P = P + empty * (1.0 / n)
    return P


def transitions(A) -> tuple[Tensor, Tensor]:
    """Forward and backward transition matrices of a nonnegative adjacency."""
    A = ad.tensor(A)
    if np.any(A.value < 0):
        raise ContractError("adjacency must be nonnegative")
    return _row_normalize(A), _row_normalize(ad.swapaxes(A, -1, -2))
