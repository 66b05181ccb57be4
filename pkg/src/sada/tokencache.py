"""Token-wise cache-assisted pruning.

Stable tokens are dropped from every layer's input, the compact sequence of
unstable tokens is computed fresh, and the dropped positions are filled from
a per-layer cache.  The cache is overwritten at the fresh positions, so the
reconstructed map and the cache stay identical after every layer.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CacheStateError, DimensionError


@dataclass(frozen=True)
class TokenCachePlan:
    """Partition of token indices into computed (``fix``) and cached (``reduce``)."""

    fix: np.ndarray
    reduce: np.ndarray
    n_tokens: int
    token_stat: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        fix = np.asarray(self.fix, dtype=np.intp)
        red = np.asarray(self.reduce, dtype=np.intp)
        object.__setattr__(self, "fix", fix)
        object.__setattr__(self, "reduce", red)
        both = np.concatenate([fix, red])
        if len(both) != self.n_tokens or not np.array_equal(np.sort(both), np.arange(self.n_tokens)):
            raise DimensionError("fix and reduce must partition range(n_tokens)")

    @property
    def mapping(self) -> dict[int, int]:
        """Original token index -> position in the compact sequence."""
        return {int(i): j for j, i in enumerate(self.fix)}

    @property
    def fix_fraction(self) -> float:
        return len(self.fix) / self.n_tokens

    @classmethod
    def from_mask(cls, reduce_mask, token_stat=None) -> "TokenCachePlan":
        mask = np.asarray(reduce_mask, dtype=bool)
        return cls(np.flatnonzero(~mask), np.flatnonzero(mask), mask.size, token_stat)

    @classmethod
    def full(cls, n_tokens: int) -> "TokenCachePlan":
        return cls(np.arange(n_tokens), np.array([], dtype=np.intp), n_tokens)


class LayerCache:
    """Per-layer output maps plus the refresh schedule.

    A step index ``s`` is a cache-initialisation step when ``s >= t_star`` and
    ``(s - t_star) % interval == 0``.
    """

    def __init__(self, num_layers: int, n_tokens: int, channels: int, t_star: int = 5,
                 interval: int = 3):
        if interval < 1:
            raise ValueError("cache interval must be >= 1")
        self.num_layers = num_layers
        self.n_tokens = n_tokens
        self.channels = channels
        self.t_star = t_star
        self.interval = interval
        self.maps: list[np.ndarray | None] = [None] * num_layers
        self.init_step: int | None = None

    @property
    def initialized(self) -> bool:
        return all(m is not None for m in self.maps)

    def is_init_step(self, step: int) -> bool:
        return step >= self.t_star and (step - self.t_star) % self.interval == 0

    def active(self, step: int) -> bool:
        return step >= self.t_star

    def check_model(self, model) -> None:
        if (model.num_layers, model.n_tokens, model.channels) != (
                self.num_layers, self.n_tokens, self.channels):
            raise DimensionError("cache shape does not match model")

    @classmethod
    def for_model(cls, model, t_star: int = 5, interval: int = 3) -> "LayerCache":
        return cls(model.num_layers, model.n_tokens, model.channels, t_star, interval)


def layered_forward(model, x, t: float, plan: TokenCachePlan | None = None,
                    cache: LayerCache | None = None, counter=None, store: bool = False,
                    trace: list | None = None) -> np.ndarray:
    """Run ``model`` on ``x``.

    Without ``plan`` every token is computed; ``store`` then (re)initialises
    ``cache`` from the layer outputs.  With ``plan`` only ``plan.fix`` is
    computed and ``plan.reduce`` is read from ``cache``.  ``trace`` collects
    per-layer outputs when given.
    """
    h = model.embed(x)
    n = model.n_tokens
    if plan is not None:
        if plan.n_tokens != n:
            raise DimensionError(f"plan covers {plan.n_tokens} tokens, model has {n}")
        if cache is None or not cache.initialized:
            raise CacheStateError("pruned forward needs an initialised cache")
        cache.check_model(model)
    elif store and cache is not None:
        cache.check_model(model)
    all_tokens = np.arange(n)
    computed = 0
    for li in range(model.num_layers):
        if plan is None:
            h = model.layer(li, h, t, all_tokens)
            computed += n
            if store and cache is not None:
                cache.maps[li] = h.copy()
        else:
            fix = plan.fix
            if len(fix):
                fresh = model.layer(li, h[fix], t, fix)
                cache.maps[li][fix] = fresh
            computed += len(fix)
            h = cache.maps[li].copy()
        if trace is not None:
            trace.append(h.copy())
    if counter is not None:
        counter.token_evals += computed
        if plan is None:
            counter.full_evals += 1
        else:
            counter.pruned_evals += 1
            counter.partial_token_evals += computed
    eps = h.reshape(-1)
    return model.finalize(x, eps, t)


def token_statistic(signal, n_tokens: int, stat: str = "channel-mean") -> np.ndarray:
    """Reduce a flat per-entry signal to one value per token."""
    sig = np.asarray(signal, dtype=float)
    if sig.size % n_tokens:
        raise DimensionError(f"signal length {sig.size} not divisible into {n_tokens} tokens")
    per = sig.reshape(n_tokens, -1)
    if stat == "channel-mean":
        return per.mean(axis=1)
    if stat == "channel-majority":
        # negative when more than half the channels are negative
        return 0.5 - (per < 0).mean(axis=1)
    raise ValueError(f"unknown token statistic {stat!r}")


def tokenwise_plan(report, grid_shape, token_stat: str = "channel-mean",
                   cache: LayerCache | None = None) -> TokenCachePlan:
    """Tokens whose statistic is negative (stable) are reduced; the rest are fixed."""
    n_tokens = int(np.prod(grid_shape))
    signal = getattr(report, "signal", report)
    stat = token_statistic(signal, n_tokens, token_stat)
    plan = TokenCachePlan.from_mask(stat < 0.0, token_stat=stat)
    if len(plan.fix) == 0 and cache is not None and not cache.initialized:
        raise CacheStateError("every token reduced but the cache is empty")
    return plan


def tokenwise_execute(x, plan: TokenCachePlan, cache: LayerCache, model, t: float, step: int,
                      counter=None, trace: list | None = None) -> np.ndarray:
    """One token-wise model evaluation at sampling step ``step``.

    On cache-initialisation steps (and while the cache is still empty) the
    forward is full and refills the cache; otherwise only ``plan.fix`` is
    computed.
    """
    cache.check_model(model)
    if cache.is_init_step(step) or not cache.initialized:
        if not cache.is_init_step(step) and not cache.active(step):
            raise CacheStateError(f"step {step} precedes the cache start step {cache.t_star}")
        out = layered_forward(model, x, t, cache=cache, counter=counter, store=True, trace=trace)
        cache.init_step = step
        return out
    return layered_forward(model, x, t, plan=plan, cache=cache, counter=counter, trace=trace)
