"""Denoiser oracles.

Every denoiser here is a *layered token model*: the input vector is viewed as
``n_tokens x channels`` (row-major, token-major), passed through
``num_layers`` token maps, and read out as a flat vector.  Each layer accepts
a compact subset of tokens together with their original indices, which is
what lets the token cache prune inputs.

* :class:`GMMDenoiser` is exact: a single layer returning the MSE-optimal
  noise prediction for isotropic Gaussian-mixture data.  On a pruned subset
  it returns the exact noise prediction of the mixture *marginal* over the
  kept coordinates.
* :class:`TokenModel` is a fixed-weight stack of residual attention blocks
  whose only job is to exercise the token-cache protocol deterministically.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._backend import kernels
from .errors import DimensionError, ScheduleDomainError
from .schedule import NoiseSchedule


@dataclass
class EvalCounter:
    """Cost bookkeeping for one run.

    ``token_evals`` counts token-layer evaluations; a full forward of an
    ``N``-token, ``L``-layer model adds ``N * L``.
    """

    full_evals: int = 0
    token_evals: int = 0
    skipped_steps: int = 0
    pruned_evals: int = 0
    partial_token_evals: int = 0

    def nfe_equivalent(self, tokens_per_forward: int) -> float:
        return self.token_evals / tokens_per_forward


@dataclass
class GaussianMixture:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.means = np.atleast_2d(np.asarray(self.means, dtype=float))
        self.variances = np.broadcast_to(
            np.asarray(self.variances, dtype=float), self.weights.shape
        ).copy()
        if self.means.shape[0] != self.weights.shape[0]:
            raise DimensionError("one mean per component required")
        if abs(self.weights.sum() - 1.0) > 1e-12 or (self.weights < 0).any():
            raise ValueError(f"weights must lie on the simplex, sum={self.weights.sum()!r}")
        if (self.variances <= 0).any():
            raise ValueError("variances must be positive")
        self.log_weights = np.log(self.weights)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def mean(self) -> np.ndarray:
        return self.weights @ self.means

    def sample(self, n: int, rng=None) -> np.ndarray:
        rng = np.random.default_rng(rng)
        k = rng.choice(len(self.weights), size=n, p=self.weights)
        z = rng.standard_normal((n, self.dim))
        return self.means[k] + np.sqrt(self.variances[k])[:, None] * z

    def log_density(self, x, a: float = 1.0, s: float = 0.0) -> float:
        """Log-density of ``a * x0 + s * eps`` at ``x``."""
        x = np.asarray(x, dtype=float)
        var = a * a * self.variances + s * s
        d2 = ((x[None, :] - a * self.means) ** 2).sum(axis=1)
        logits = self.log_weights - 0.5 * self.dim * np.log(2 * math.pi * var) - 0.5 * d2 / var
        top = logits.max()
        return float(top + np.log(np.exp(logits - top).sum()))

    def assign(self, x) -> np.ndarray:
        """Nearest-mean component index for each row of ``x``."""
        x = np.atleast_2d(x)
        d2 = ((x[:, None, :] - self.means[None]) ** 2).sum(axis=2)
        return d2.argmin(axis=1)

    @classmethod
    def random(cls, dim: int, n_components: int = 4, seed: int = 0, spread: float = 1.0,
               variance: float = 0.05, weights=None) -> "GaussianMixture":
        rng = np.random.default_rng(seed)
        means = spread * rng.standard_normal((n_components, dim))
        if weights is None:
            weights = np.full(n_components, 1.0 / n_components)
        return cls(np.asarray(weights, dtype=float), means, np.full(n_components, variance))


def gmm_epsilon(x_t, t: float, gmm: GaussianMixture, schedule: NoiseSchedule) -> np.ndarray:
    """Exact noise prediction ``-sigma_t * grad log p_t(x_t)`` for mixture data."""
    s = schedule.sigma(t)
    if s <= 0.0:
        raise ScheduleDomainError(f"sigma({t}) = 0")
    x = np.ascontiguousarray(x_t, dtype=np.float64)
    if x.shape != (gmm.dim,):
        raise DimensionError(f"x has shape {x.shape}, mixture dim is {gmm.dim}")
    return kernels.gmm_eps(x, schedule.signal(t), s, gmm.log_weights, gmm.means, gmm.variances)


class LayeredDenoiser:
    """Shared plumbing for token-structured denoisers.

    Subclasses set ``n_tokens``, ``channels``, ``num_layers``, ``schedule``
    and ``prediction`` and implement :meth:`layer`.
    """

    n_tokens: int
    channels: int
    num_layers: int
    schedule: NoiseSchedule
    prediction: str = "epsilon"

    @property
    def dim(self) -> int:
        return self.n_tokens * self.channels

    @property
    def tokens_per_forward(self) -> int:
        return self.n_tokens * self.num_layers

    def embed(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.size != self.dim:
            raise DimensionError(f"input has {x.size} entries, model expects {self.dim}")
        return x.reshape(self.n_tokens, self.channels)

    def layer(self, index: int, h: np.ndarray, t: float, tokens: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def finalize(self, x, eps, t: float) -> np.ndarray:
        """Turn the flat noise prediction into the model's declared output."""
        if self.prediction == "epsilon":
            return eps
        # linear path: u = eps - x0 with x0 = (x - sigma eps) / signal
        a, s = self.schedule.signal(t), self.schedule.sigma(t)
        return eps - (np.asarray(x) - s * eps) / a

    def __call__(self, x, t: float, counter: EvalCounter | None = None) -> np.ndarray:
        from .tokencache import layered_forward

        return layered_forward(self, x, t, counter=counter)


class GMMDenoiser(LayeredDenoiser):
    """Single-layer exact denoiser for a :class:`GaussianMixture`."""

    num_layers = 1

    def __init__(self, gmm: GaussianMixture, schedule: NoiseSchedule, token_grid=(4, 4),
                 prediction: str = "epsilon"):
        self.gmm = gmm
        self.schedule = schedule
        self.token_grid = tuple(token_grid)
        self.n_tokens = int(np.prod(self.token_grid))
        if gmm.dim % self.n_tokens:
            raise DimensionError(f"dim {gmm.dim} not divisible into {self.n_tokens} tokens")
        self.channels = gmm.dim // self.n_tokens
        if prediction not in ("epsilon", "velocity"):
            raise ValueError(f"unknown prediction {prediction!r}")
        self.prediction = prediction
        self._all = np.arange(self.n_tokens)

    def layer(self, index, h, t, tokens):
        if len(tokens) == self.n_tokens:
            return gmm_epsilon(h.reshape(-1), t, self.gmm, self.schedule).reshape(h.shape)
        cols = (tokens[:, None] * self.channels + np.arange(self.channels)[None, :]).reshape(-1)
        g = self.gmm
        s = self.schedule.sigma(t)
        eps = kernels.gmm_eps(np.ascontiguousarray(h.reshape(-1)), self.schedule.signal(t), s,
                              g.log_weights, np.ascontiguousarray(g.means[:, cols]), g.variances)
        return eps.reshape(h.shape)


@dataclass
class TokenModel:
    """Fixed random residual attention stack on an ``n_tokens x channels`` map."""

    num_layers: int = 4
    n_tokens: int = 64
    channels: int = 16
    seed: int = 0
    gain: float = 0.5
    params: list = field(init=False, repr=False)

    def __post_init__(self):
        rng = np.random.default_rng(self.seed)
        c = self.channels
        scale = 1.0 / math.sqrt(c)
        self.params = []
        for _ in range(self.num_layers):
            self.params.append({
                "wq": rng.standard_normal((c, c)) * scale,
                "wk": rng.standard_normal((c, c)) * scale,
                "wv": rng.standard_normal((c, c)) * scale,
                "wo": rng.standard_normal((c, c)) * scale,
                "wt": rng.standard_normal((4, c)) * 0.5,
                "pos": rng.standard_normal((self.n_tokens, c)) * 0.1,
            })

    def block(self, index: int, h: np.ndarray, t: float, tokens: np.ndarray) -> np.ndarray:
        if h.shape[0] == 0:
            return h.copy()
        p = self.params[index]
        temb = np.array([math.sin(math.pi * t), math.cos(math.pi * t), t, t * t]) @ p["wt"]
        z = h + p["pos"][tokens] + temb
        q, k, v = z @ p["wq"], z @ p["wk"], z @ p["wv"]
        logits = q @ k.T / math.sqrt(self.channels)
        logits -= logits.max(axis=1, keepdims=True)
        att = np.exp(logits)
        att /= att.sum(axis=1, keepdims=True)
        return h + self.gain * np.tanh((att @ v) @ p["wo"])


class TokenDenoiser(LayeredDenoiser):
    """Wraps a :class:`TokenModel` as a noise (or velocity) predictor."""

    def __init__(self, model: TokenModel, schedule: NoiseSchedule, token_grid=None,
                 prediction: str = "epsilon"):
        self.model = model
        self.schedule = schedule
        self.n_tokens = model.n_tokens
        self.channels = model.channels
        self.num_layers = model.num_layers
        side = int(round(math.sqrt(model.n_tokens)))
        self.token_grid = tuple(token_grid) if token_grid else (
            (side, side) if side * side == model.n_tokens else (model.n_tokens, 1))
        self.prediction = prediction

    def layer(self, index, h, t, tokens):
        return self.model.block(index, h, t, tokens)


class LinearFieldDenoiser(LayeredDenoiser):
    """Velocity field ``u = rate * (x - target)``; every trajectory decays geometrically.

    Used as a synthetic testbed whose stability criterion holds analytically
    under Euler stepping.
    """

    num_layers = 1
    prediction = "velocity"

    def __init__(self, target, schedule: NoiseSchedule, rate: float = 1.0, token_grid=None):
        self.target = np.asarray(target, dtype=float).reshape(-1)
        self.schedule = schedule
        self.rate = float(rate)
        self.n_tokens = self.target.size if token_grid is None else int(np.prod(token_grid))
        self.channels = self.target.size // self.n_tokens
        self.token_grid = tuple(token_grid) if token_grid else (self.n_tokens, 1)

    def layer(self, index, h, t, tokens):
        tgt = self.target.reshape(self.n_tokens, self.channels)[tokens]
        return self.rate * (h - tgt)

    def finalize(self, x, out, t):
        return out


def token_model_forward(x, t: float, model: LayeredDenoiser, cache_plan=None, cache=None,
                        counter: EvalCounter | None = None) -> np.ndarray:
    """Forward ``model`` at ``(x, t)``, pruning per ``cache_plan`` against ``cache`` if given."""
    from .tokencache import layered_forward

    return layered_forward(model, x, t, plan=cache_plan, cache=cache, counter=counter)
