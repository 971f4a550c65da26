"""Spatio-temporal network producing infection and removal rates.

Tensors are laid out ``(B, N, T, C)``: batch, region, time, channel.  Each
layer is a gated dilated temporal convolution followed by a diffusion graph
convolution over forward/backward transition matrices; layers are bridged by
a gated dense connection and their (time-averaged) outputs are concatenated
into two fully connected heads.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ContractError, NumericDomainError, Parameter, Tensor
from .data import N_CHANNELS
from .graph import transitions


@dataclass
class NetworkConfig:
    n_layers: int = 3
    channels: int = 32
    kernel: int = 2
    dilations: tuple[int, ...] = (1, 2, 4)
    diffusion_steps: int = 2
    skip_channels: int = 64
    t_in: int = 14
    t_out: int = 14
    in_channels: int = N_CHANNELS
    head_prior: bool = True

    def __post_init__(self):
        self.dilations = tuple(int(d) for d in self.dilations)
        self.validate()

    def receptive_field(self) -> int:
        return 1 + sum((self.kernel - 1) * d for d in self.dilations)

    def validate(self) -> None:
        if self.kernel < 2:
            raise ContractError("temporal kernel width must be at least 2")
        if self.diffusion_steps < 1:
            raise ContractError("diffusion steps K must be at least 1")
        if len(self.dilations) != self.n_layers:
            raise ContractError(f"{self.n_layers} layers need {self.n_layers} dilations, got {self.dilations}")
        if any(d < 1 for d in self.dilations):
            raise ContractError("dilations must be positive")
        if self.receptive_field() > self.t_in:
            raise ContractError(f"receptive field {self.receptive_field()} exceeds T_in={self.t_in}")
        if min(self.channels, self.skip_channels, self.t_out, self.in_channels) < 1:
            raise ContractError("widths and horizons must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dilations"] = list(self.dilations)
        return d


def _crop(x: Tensor, length: int) -> Tensor:
    """Keep the latest ``length`` steps of the time axis."""
    return x if x.shape[2] == length else x[:, :, x.shape[2] - length:, :]


def gated_tcn(Z, theta1, b1, theta2, b2, dilation: int = 1) -> Tensor:
    """``tanh(theta1 * Z + b1) . sigmoid(theta2 * Z + b2)`` with dilated causal convolution."""
    Z = ad.tensor(Z)
    k = ad.tensor(theta1).shape[0]
    if Z.shape[-2] <= (k - 1) * dilation:
        raise ContractError(f"{Z.shape[-2]} steps are too few for kernel {k} at dilation {dilation}")
    filt = ad.tanh(ad.conv1d(Z, theta1, dilation) + b1)
    gate = ad.sigmoid(ad.conv1d(Z, theta2, dilation) + b2)
    return filt * gate


def _diffuse(P, Q: Tensor) -> Tensor:
    b, n, t, c = Q.shape
    out = ad.matmul(P, ad.reshape(Q, (b, n, t * c)))
    return ad.reshape(out, (b, n, t, c))


def diffusion_gcn(Q, P_f, P_b, W_f, W_b) -> Tensor:
    """``sum_k P_f^k Q W_f[k] + P_b^k Q W_b[k]`` for ``k = 0 .. len(W_f) - 1``."""
    Q = ad.tensor(Q)
    out = None
    qf = qb = Q
    for k, (wf, wb) in enumerate(zip(W_f, W_b)):
        if k > 0:
            qf = _diffuse(P_f, qf)
            qb = _diffuse(P_b, qb)
        term = ad.matmul(qf, wf) + ad.matmul(qb, wb)
        out = term if out is None else out + term
    return out


def gated_dense(z_tilde, d_prev, z_in) -> tuple[Tensor, Tensor]:
    """Gated dense bridge returning ``(Z_next, D)``.

    ``D = D_prev + Z_in`` (or ``Z_in`` itself for the first layer, ``d_prev``
    None); ``Z_next = Zt . sigmoid(Zt) + D . (1 - sigmoid(Zt))`` with ``D``
    cropped to the length of ``Zt``.
    """
    z_tilde, z_in = ad.tensor(z_tilde), ad.tensor(z_in)
    D = z_in if d_prev is None else _crop(ad.tensor(d_prev), z_in.shape[2]) + z_in
    gate = ad.sigmoid(z_tilde)
    Dc = _crop(D, z_tilde.shape[2])
    return z_tilde * gate + Dc * (1.0 - gate), D


class STNetwork:
    def __init__(self, cfg: NetworkConfig, seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.params: dict[str, Parameter] = {}
        c, k = cfg.channels, cfg.kernel

        def init(name, shape, fan_in):
            bound = 1.0 / np.sqrt(fan_in)
            self.params[name] = Parameter(rng.uniform(-bound, bound, size=shape), name=name)

        init("start.W", (cfg.in_channels, c), cfg.in_channels)
        init("start.b", (c,), cfg.in_channels)
        for l in range(cfg.n_layers):
            for g in ("filter", "gate"):
                init(f"layer{l}.{g}.theta", (k, c, c), k * c)
                init(f"layer{l}.{g}.b", (c,), k * c)
            for j in range(cfg.diffusion_steps + 1):
                init(f"layer{l}.W{j}.fwd", (c, c), c)
                init(f"layer{l}.W{j}.bwd", (c, c), c)
        concat = cfg.n_layers * c
        init("skip.W", (concat, cfg.skip_channels), concat)
        init("skip.b", (cfg.skip_channels,), concat)
        for head in ("beta", "gamma"):
            init(f"{head}.W", (cfg.skip_channels, cfg.t_out), cfg.skip_channels)
            init(f"{head}.b", (cfg.t_out,), cfg.skip_channels)
        # start near a stationary epidemic: removal rate 0.1 and unit reproduction
        if cfg.head_prior:
            self.params["gamma.b"].value += np.log(0.1 / 0.9)
            self.params["beta.b"].value += np.log(np.expm1(0.1))

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def forward(self, X, A) -> tuple[Tensor, Tensor]:
        """Rates ``(beta, gamma)`` each ``(B, N, T_out)`` from features ``(B, N, T_in, C)``.

        ``A`` is ``(N, N)`` or per-sample ``(B, N, N)``.  ``beta >= 0`` via
        softplus and ``0 < gamma < 1`` via the logistic function.
        """
        cfg, p = self.cfg, self.params
        X = ad.tensor(X)
        if X.ndim != 4 or X.shape[-1] != cfg.in_channels or X.shape[2] != cfg.t_in:
            raise ContractError(f"features must be (B, N, {cfg.t_in}, {cfg.in_channels}), got {X.shape}")
        P_f, P_b = transitions(A)
        Z = ad.matmul(X, p["start.W"]) + p["start.b"]
        D = None
        skips = []
        for l, dil in enumerate(cfg.dilations):
            Q = gated_tcn(Z, p[f"layer{l}.filter.theta"], p[f"layer{l}.filter.b"],
                          p[f"layer{l}.gate.theta"], p[f"layer{l}.gate.b"], dil)
            W_f = [p[f"layer{l}.W{j}.fwd"] for j in range(cfg.diffusion_steps + 1)]
            W_b = [p[f"layer{l}.W{j}.bwd"] for j in range(cfg.diffusion_steps + 1)]
            Zt = diffusion_gcn(Q, P_f, P_b, W_f, W_b)
            Z, D = gated_dense(Zt, D, Z)
            if not np.all(np.isfinite(Z.value)):
                raise NumericDomainError(f"non-finite activations in ST layer {l}")
            skips.append(ad.mean(Z, axis=2))
        h = ad.relu(ad.matmul(ad.concat(skips, axis=-1), p["skip.W"]) + p["skip.b"])
        beta = ad.softplus(ad.matmul(h, p["beta.W"]) + p["beta.b"])
        gamma = ad.sigmoid(ad.matmul(h, p["gamma.W"]) + p["gamma.b"])
        if not (np.all(np.isfinite(beta.value)) and np.all(np.isfinite(gamma.value))):
            raise NumericDomainError("non-finite rates from the output heads")
        return beta, gamma


def forward_params(X, A, net: STNetwork) -> tuple[np.ndarray, np.ndarray]:
    """Untaped convenience wrapper returning numpy ``(beta, gamma)``."""
    beta, gamma = net.forward(X, A)
    return beta.value, gamma.value
