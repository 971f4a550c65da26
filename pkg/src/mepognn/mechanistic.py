"""Compartmental dynamics: classical SIR, metapopulation SIR and the mobility-driven variant.

All updates are forward-Euler with a one-day step.  The mobility-driven step
(:func:`mepo_step`) drops the susceptible factor from the infection term, so
new cases are ``beta_n * sum_m (h_mn / P_m + h_nm / P_n) * I_m``; when that
would exceed the remaining susceptibles the cases are capped at ``S_n`` and
the event is counted.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from . import autodiff as ad
from .autodiff import ContractError, Tensor
from .data import EpidemicState

log = logging.getLogger(__name__)

BETA_GRID = np.round(np.arange(0.0, 2.0 + 1e-9, 0.01), 2)
GAMMA_GRID = np.round(np.arange(0.0, 1.0 + 1e-9, 0.01), 2)


class CompartmentWarning(RuntimeWarning):
    pass


@dataclass
class ClampCounter:
    """Counts region-steps where new cases were capped at the susceptible pool."""

    count: int = 0

    def add(self, n: int) -> None:
        self.count += int(n)


def _cap(infections: np.ndarray, S: np.ndarray, clamp: ClampCounter | None) -> np.ndarray:
    over = infections > S
    if np.any(over):
        if clamp is None:
            warnings.warn(f"new infections exceed susceptibles in {int(over.sum())} region(s); capped",
                          CompartmentWarning, stacklevel=3)
        else:
            clamp.add(over.sum())
        infections = np.where(over, S, infections)
    return infections


def _check_rates(beta, gamma) -> None:
    if np.any(np.asarray(beta) < 0):
        raise ContractError("beta must be nonnegative")
    g = np.asarray(gamma)
    if np.any(g < 0) or np.any(g > 1):
        raise ContractError("gamma must lie in [0, 1]")


def _advance(state: EpidemicState, infections: np.ndarray, gamma) -> EpidemicState:
    removed = gamma * state.I
    return EpidemicState(state.S - infections, state.I + infections - removed, state.R + removed, state.P)


def sir_step(state: EpidemicState, beta, gamma, clamp: ClampCounter | None = None) -> EpidemicState:
    """One day of classical SIR, applied independently to every region of ``state``."""
    _check_rates(beta, gamma)
    infections = _cap(beta * state.S * state.I / state.P, state.S, clamp)
    return _advance(state, infections, gamma)


def metasir_force(I: np.ndarray, H: np.ndarray, P: np.ndarray) -> np.ndarray:
    """``sum_m (h_mn / P_m + h_nm / P_n) * I_m`` for every region ``n``."""
    return (I / P) @ H + (H @ I) / P


def metasir_step_original(state: EpidemicState, beta, gamma, H: np.ndarray,
                          clamp: ClampCounter | None = None) -> EpidemicState:
    """One day of the classical metapopulation SIR with susceptible-scaled coupling."""
    _check_rates(beta, gamma)
    H = np.asarray(H, dtype=np.float64)
    if np.any(H < 0):
        raise ContractError("propagation graph must be nonnegative")
    infections = _cap(beta * state.S * metasir_force(state.I, H, state.P), state.S, clamp)
    return _advance(state, infections, gamma)


# mobility-driven step (differentiable) ----------------------------------------

def _step_tensor(S: Tensor, I: Tensor, R: Tensor, P: np.ndarray, beta: Tensor, gamma: Tensor, H,
                 clamp: ClampCounter | None):
    """Batched step on ``(B, N)`` compartments; ``H`` is ``(N, N)`` or ``(B, N, N)``."""
    b, n = I.shape
    inflow = ad.matmul(ad.reshape(I * (1.0 / P), (b, 1, n)), H)
    outflow = ad.matmul(H, ad.reshape(I, (b, n, 1)))
    force = ad.reshape(inflow, (b, n)) + ad.reshape(outflow, (b, n)) * (1.0 / P)
    cases = beta * force
    over = cases.value > S.value
    if np.any(over):
        if clamp is None:
            warnings.warn(f"new cases exceed susceptibles in {int(over.sum())} region-step(s); capped",
                          CompartmentWarning, stacklevel=3)
        else:
            clamp.add(over.sum())
        cases = ad.minimum(cases, S)
    removed = gamma * I
    return S - cases, I + cases - removed, R + removed, cases


def mepo_step(state: EpidemicState, beta, gamma, H, clamp: ClampCounter | None = None):
    """Advance one day with region-varying rates; returns ``(next_state, new_cases)``."""
    beta = np.asarray(beta, dtype=np.float64)
    gamma = np.asarray(gamma, dtype=np.float64)
    H = np.asarray(H, dtype=np.float64)
    _check_rates(beta, gamma)
    if np.any(H < 0):
        raise ContractError("propagation graph must be nonnegative")
    if np.any(state.I < 0) or np.any(state.S < 0):
        raise ContractError("compartments must be nonnegative")
    n = state.I.size
    as_row = lambda v: Tensor(np.broadcast_to(v, (n,)).reshape(1, n))
    S, I, R, y = _step_tensor(as_row(state.S), as_row(state.I), as_row(state.R), state.P,
                              as_row(beta), as_row(gamma), Tensor(H), clamp)
    nxt = EpidemicState(S.value[0], I.value[0], R.value[0], state.P)
    return nxt, y.value[0]


def rollout(S0, I0, R0, P: np.ndarray, beta: Tensor, gamma: Tensor, H, steps: int | None = None,
            clamp: ClampCounter | None = None) -> Tensor:
    """Differentiable multi-step rollout.

    ``S0, I0, R0`` are ``(B, N)``; ``beta``/``gamma`` are ``(B, N, T)``; ``H``
    is a static ``(N, N)`` graph reused every step or a dynamic
    ``(B, T, N, N)`` stack indexed per step.  Returns new cases ``(B, N, steps)``.
    """
    beta, gamma, H = ad.tensor(beta), ad.tensor(gamma), ad.tensor(H)
    steps = beta.shape[-1] if steps is None else steps
    S, I, R = ad.tensor(S0), ad.tensor(I0), ad.tensor(R0)
    dynamic = H.ndim == 4
    outs = []
    for j in range(steps):
        Hj = H[:, j] if dynamic else H
        S, I, R, y = _step_tensor(S, I, R, P, beta[:, :, j], gamma[:, :, j], Hj, clamp)
        outs.append(y)
    return ad.stack(outs, axis=-1)


def mepo_rollout(state0: EpidemicState, beta, gamma, H, clamp: ClampCounter | None = None) -> np.ndarray:
    """Forecast ``(N, T)`` daily cases from rates ``(N, T)`` and a static or ``(T, N, N)`` graph."""
    beta = np.asarray(beta, dtype=np.float64)
    gamma = np.asarray(gamma, dtype=np.float64)
    H = np.asarray(H, dtype=np.float64)
    _check_rates(beta, gamma)
    if np.any(H < 0):
        raise ContractError("propagation graph must be nonnegative")
    if H.ndim == 3:
        if H.shape[0] < beta.shape[1]:
            raise ContractError("dynamic graph covers fewer steps than the rates")
        H = H[None]
    row = lambda v: v[None, :]
    y = rollout(row(state0.S), row(state0.I), row(state0.R), state0.P, beta[None], gamma[None], H, clamp=clamp)
    return y.value[0]


# calibrated baselines ----------------------------------------------------------

@dataclass
class SirParams:
    beta: np.ndarray
    gamma: np.ndarray


@dataclass
class History:
    """Observed compartments and daily cases, arrays ``(T, N)``."""

    S: np.ndarray
    I: np.ndarray
    R: np.ndarray
    daily: np.ndarray
    P: np.ndarray

    def __len__(self) -> int:
        return self.S.shape[0]

    def tail(self, days: int) -> "History":
        return History(self.S[-days:], self.I[-days:], self.R[-days:], self.daily[-days:], self.P)


MODELS = ("SIR", "MetaSIR")


def infection_driver(hist: History, model: str, H: np.ndarray | None = None) -> np.ndarray:
    """Per-transition infection driver ``(T-1, N)``; predicted cases are ``beta_eff * driver``.

    For MetaSIR the effective rate is ``beta * P_n``, so the driver carries
    ``S_n / P_n`` and the grid on ``[0, 2]`` covers useful magnitudes.
    """
    S, I, P = hist.S[:-1], hist.I[:-1], hist.P
    if model == "SIR":
        return S * I / P
    if model == "MetaSIR":
        if H is None:
            raise ContractError("MetaSIR needs a propagation graph")
        return (S / P) * ((I / P) @ H + (I @ H.T) / P)
    raise ContractError(f"unknown model {model!r}; expected one of {MODELS}")


def _fit_rate(obs: np.ndarray, driver: np.ndarray, grid: np.ndarray) -> float:
    """argmin over ``grid`` of mean |obs - r * driver|, then a bounded local refinement."""
    losses = np.abs(obs[None, :] - grid[:, None] * driver[None, :]).mean(axis=1)
    k = int(np.argmin(losses))
    best, best_loss = float(grid[k]), float(losses[k])
    step = float(grid[1] - grid[0])
    lo, hi = max(grid[0], best - step), min(grid[-1], best + step)
    if hi > lo:
        res = minimize_scalar(lambda r: np.abs(obs - r * driver).mean(), bounds=(lo, hi),
                              method="bounded", options={"xatol": 1e-8})
        if res.fun < best_loss:
            best = float(res.x)
    return best


def fit_baseline(hist: History, model: str = "SIR", window: int = 14, H: np.ndarray | None = None) -> SirParams:
    """Per-region constant rates minimising one-step MAE over the last ``window`` transitions.

    The infection rate is scored against observed daily cases and the removal
    rate against observed daily removals.
    """
    if window < 7:
        raise ContractError("fit window must cover at least 7 days")
    if len(hist) < window + 1:
        raise ContractError(f"history of {len(hist)} days is too short for a {window}-day window")
    h = hist.tail(window + 1)
    driver = infection_driver(h, model, H)
    cases = h.daily[1:]
    removals = np.diff(h.R, axis=0)
    I_prev = h.I[:-1]
    n = h.P.size
    beta = np.zeros(n)
    gamma = np.zeros(n)
    for r in range(n):
        if not np.any(I_prev[:, r] > 0):
            warnings.warn(f"region {r}: no active infections in the fit window; rates set to 0",
                          CompartmentWarning, stacklevel=2)
            continue
        beta[r] = _fit_rate(cases[:, r], driver[:, r], BETA_GRID)
        gamma[r] = _fit_rate(removals[:, r], I_prev[:, r], GAMMA_GRID)
    if model == "MetaSIR":
        beta = beta / h.P
    return SirParams(beta, gamma)


def fit_daily_params(hist: History, model: str = "SIR", H: np.ndarray | None = None) -> SirParams:
    """Exact single-day rates ``(T-1, N)``: cases / driver and removals / active, clipped to the grids."""
    driver = infection_driver(hist, model, H)
    with np.errstate(divide="ignore", invalid="ignore"):
        beta = np.where(driver > 0, hist.daily[1:] / driver, 0.0)
        gamma = np.where(hist.I[:-1] > 0, np.diff(hist.R, axis=0) / hist.I[:-1], 0.0)
    beta = np.clip(beta, BETA_GRID[0], BETA_GRID[-1])
    gamma = np.clip(gamma, GAMMA_GRID[0], GAMMA_GRID[-1])
    if model == "MetaSIR":
        beta = beta / hist.P
    return SirParams(beta, gamma)


def copy_baseline(daily: SirParams, horizon: int) -> SirParams:
    """Forecast rates ``(N, horizon)``: each day reuses the same weekday of the last observed week."""
    beta, gamma = np.asarray(daily.beta), np.asarray(daily.gamma)
    if beta.shape[0] < 7:
        raise ContractError("copy baseline needs at least 7 days of fitted rates")
    last = beta.shape[0] - 1
    idx = [last - 6 + (h - 1) % 7 for h in range(1, horizon + 1)]
    return SirParams(beta[idx].T.copy(), gamma[idx].T.copy())


def simulate(state: EpidemicState, model: str, beta, gamma, horizon: int, H: np.ndarray | None = None,
             clamp: ClampCounter | None = None) -> np.ndarray:
    """Roll a calibrated baseline forward; rates are ``(N,)`` constants or ``(N, horizon)``."""
    beta = np.broadcast_to(np.asarray(beta, dtype=np.float64).reshape(state.P.size, -1), (state.P.size, horizon))
    gamma = np.broadcast_to(np.asarray(gamma, dtype=np.float64).reshape(state.P.size, -1), (state.P.size, horizon))
    out = np.zeros((state.P.size, horizon))
    s = state
    for j in range(horizon):
        if model == "SIR":
            nxt = sir_step(s, beta[:, j], gamma[:, j], clamp)
        elif model == "MetaSIR":
            nxt = metasir_step_original(s, beta[:, j], gamma[:, j], H, clamp)
        else:
            raise ContractError(f"unknown model {model!r}")
        out[:, j] = s.S - nxt.S
        s = nxt
    return out
