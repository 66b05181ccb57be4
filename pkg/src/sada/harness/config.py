"""Run configuration: a flat key/value document (YAML or JSON).

Every field of :class:`RunConfig` is a top-level key; unknown keys are
rejected.  :func:`validate` collects *all* violations before raising so a
single edit cycle can fix a config.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from ..controller import PolicyParams
from ..errors import ConfigValidationError
from ..schedule import KINDS as SCHEDULE_KINDS
from ..solver import SOLVER_KINDS

EXPERIMENTS = ("baseline", "sada", "eq5", "convergence", "fd-vs-am", "token-sweep")
DENOISERS = ("gmm", "token-model")
SCHEMES = ("adams-moulton", "lagrange-k", "backward-extrap")
POLICY_KEYS = tuple(f.name for f in fields(PolicyParams))
# fields that change where or how fast results are produced, not what they are
UNHASHED = ("output_dir", "workers", "dump_vectors")


@dataclass
class RunConfig:
    experiment: str = "sada"
    solver_kind: str = "euler-pfode"
    N: int = 50
    seeds: list = field(default_factory=lambda: [0])
    # schedule
    schedule_kind: str = "vp-linear"
    num_train_steps: int = 1000
    beta_min: float = 1e-4
    beta_max: float = 0.02
    # denoiser
    denoiser: str = "gmm"
    gmm_dim: int = 64
    gmm_components: int = 4
    gmm_seed: int = 0
    gmm_spread: float = 1.0
    gmm_variance: float = 0.05
    token_grid: list = field(default_factory=lambda: [4, 4])
    model_layers: int = 4
    model_tokens: int = 64
    model_channels: int = 16
    model_seed: int = 0
    # policy
    policy: str = "sada"
    criterion_reduction: str = "mean"
    M: int = 3
    r: int = 4
    lagrange_nodes: int = 4
    T_star: int = 5
    cache_interval: int = 3
    token_stat: str = "channel-mean"
    force_mode: str | None = None
    tau: float = 0.01
    max_consecutive_skips: int = 3
    final_fresh_steps: int = 1
    # convergence study
    scheme: str = "adams-moulton"
    resolutions: list = field(default_factory=lambda: [1e-2, 5e-3, 2.5e-3, 1.25e-3])
    # token sweep
    reduce_fractions: list = field(default_factory=lambda: [0.0, 0.2, 0.4, 0.6, 0.8])
    # output
    psnr_peak: float | None = None
    output_dir: str = "runs"
    workers: int = 1
    dump_vectors: bool = True

    def policy_params(self) -> PolicyParams:
        return PolicyParams(**{k: getattr(self, k) for k in POLICY_KEYS})

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        """SHA-256 over the canonical JSON of every result-affecting field."""
        d = {k: v for k, v in self.to_dict().items() if k not in UNHASHED}
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


_INT = int
_FLOAT = (int, float)


def _expect(d: dict, key: str, kinds, out: list) -> bool:
    v = d[key]
    if isinstance(v, bool) and kinds is not bool:
        out.append(f"{key}: expected {_name(kinds)}, got bool")
        return False
    if not isinstance(v, kinds):
        out.append(f"{key}: expected {_name(kinds)}, got {type(v).__name__}")
        return False
    return True


def _name(kinds) -> str:
    if isinstance(kinds, tuple):
        return "number"
    return kinds.__name__


def parse_seeds(value) -> list[int]:
    """``'0-9'``, ``'1,4,7'``, an int, or a list of ints; at least one, none negative."""
    if isinstance(value, bool):
        raise ValueError("seeds must be integers")
    if isinstance(value, int):
        if value < 0:
            raise ValueError(f"seed {value} is negative")
        return [value]
    if isinstance(value, (list, tuple)):
        out = []
        for s in value:
            out.extend(parse_seeds(s))
        if not out:
            raise ValueError("no seeds given")
        return out
    text = str(value).strip()
    seeds: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            lo_i, hi_i = int(lo), int(hi)
            if hi_i < lo_i:
                raise ValueError(f"empty seed range {part!r}")
            seeds.extend(range(lo_i, hi_i + 1))
        else:
            seeds.append(int(part))
    if not seeds:
        raise ValueError("no seeds given")
    if min(seeds) < 0:
        raise ValueError("seeds must be non-negative")
    return seeds


def validate(cfg: RunConfig) -> list[str]:
    """Every problem with ``cfg``; empty when it is runnable."""
    d = cfg.to_dict()
    out: list[str] = []
    ints = ("N", "num_train_steps", "gmm_dim", "gmm_components", "gmm_seed", "model_layers",
            "model_tokens", "model_channels", "model_seed", "M", "r", "lagrange_nodes", "T_star",
            "cache_interval", "max_consecutive_skips", "final_fresh_steps", "workers")
    floats = ("beta_min", "beta_max", "gmm_spread", "gmm_variance", "tau")
    typed = {k: _expect(d, k, _INT, out) for k in ints}
    typed.update({k: _expect(d, k, _FLOAT, out) for k in floats})

    def choice(key, options):
        if d[key] not in options:
            out.append(f"{key}: {d[key]!r} not in {options}")

    choice("experiment", EXPERIMENTS)
    choice("solver_kind", SOLVER_KINDS)
    choice("schedule_kind", SCHEDULE_KINDS)
    choice("denoiser", DENOISERS)
    choice("scheme", SCHEMES)
    if typed["N"] and cfg.N < 4:
        out.append("N: must be >= 4")
    if typed["workers"] and cfg.workers < 1:
        out.append("workers: must be >= 1")
    if typed["num_train_steps"] and cfg.num_train_steps < 2:
        out.append("num_train_steps: must be >= 2")
    if typed["beta_min"] and typed["beta_max"] and not 0 < cfg.beta_min < cfg.beta_max:
        out.append("beta_min/beta_max: need 0 < beta_min < beta_max")
    if typed["gmm_variance"] and cfg.gmm_variance <= 0:
        out.append("gmm_variance: must be positive")
    for key in ("gmm_dim", "gmm_components", "model_layers", "model_tokens", "model_channels"):
        if typed[key] and getattr(cfg, key) < 1:
            out.append(f"{key}: must be >= 1")
    if cfg.solver_kind in SOLVER_KINDS and cfg.schedule_kind in SCHEDULE_KINDS:
        if (cfg.solver_kind == "euler-flow") != (cfg.schedule_kind == "flow-linear"):
            out.append(f"solver_kind {cfg.solver_kind!r} is incompatible with schedule_kind "
                       f"{cfg.schedule_kind!r}")
    try:
        seeds = parse_seeds(cfg.seeds)
        if not seeds:
            out.append("seeds: empty")
        elif any(s < 0 for s in seeds):
            out.append("seeds: must be non-negative")
    except (TypeError, ValueError) as exc:
        out.append(f"seeds: {exc}")
    grid = cfg.token_grid
    if (not isinstance(grid, (list, tuple)) or len(grid) != 2
            or not all(isinstance(g, int) and not isinstance(g, bool) and g > 0 for g in grid)):
        out.append("token_grid: expected two positive integers")
    elif cfg.denoiser == "gmm" and typed["gmm_dim"] and cfg.gmm_dim % (grid[0] * grid[1]):
        out.append(f"token_grid: {grid[0]}x{grid[1]} tokens do not divide gmm_dim={cfg.gmm_dim}")
    elif (cfg.denoiser == "token-model" and typed["model_tokens"]
          and grid[0] * grid[1] != cfg.model_tokens):
        out.append("token_grid: must cover model_tokens")
    res = cfg.resolutions
    if not isinstance(res, (list, tuple)) or not all(
            isinstance(h, (int, float)) and not isinstance(h, bool) and h > 0 for h in res):
        out.append("resolutions: expected a list of positive numbers")
    elif cfg.experiment == "convergence":
        if len(res) < 3:
            out.append("resolutions: need at least 3")
        elif any(abs(res[i + 1] * 2 - res[i]) > 1e-12 * res[i] for i in range(len(res) - 1)):
            out.append("resolutions: each must halve the previous")
    fr = cfg.reduce_fractions
    if not isinstance(fr, (list, tuple)) or not all(
            isinstance(f, (int, float)) and not isinstance(f, bool) and 0 <= f < 1 for f in fr):
        out.append("reduce_fractions: expected numbers in [0, 1)")
    if cfg.psnr_peak is not None and (not isinstance(cfg.psnr_peak, (int, float))
                                      or cfg.psnr_peak <= 0):
        out.append("psnr_peak: must be positive")
    if not isinstance(cfg.dump_vectors, bool):
        out.append("dump_vectors: expected bool")
    if all(typed.get(k, True) for k in POLICY_KEYS):
        out.extend(cfg.policy_params().violations())
    return out


def from_mapping(data: dict) -> RunConfig:
    """Build and validate; raises :class:`ConfigValidationError` listing every problem."""
    if not isinstance(data, dict):
        raise ConfigValidationError(["config must be a key/value mapping"])
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(data) - known)
    clean = {k: v for k, v in data.items() if k in known}
    if "seeds" in clean:
        try:
            clean["seeds"] = parse_seeds(clean["seeds"])
        except (TypeError, ValueError):
            pass  # reported by validate
    if clean.get("force_mode") in ("none", "None", ""):
        clean["force_mode"] = None
    cfg = RunConfig(**clean)
    problems = [f"unknown key {k!r}" for k in unknown] + validate(cfg)
    if problems:
        raise ConfigValidationError(problems)
    return cfg


def load_config(path) -> RunConfig:
    """Read a ``.yaml``/``.yml``/``.json`` file into a validated :class:`RunConfig`."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigValidationError([f"cannot read {path}: {exc}"]) from exc
    try:
        data = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigValidationError([f"cannot parse {path}: {exc}"]) from exc
    return from_mapping(data if data is not None else {})
