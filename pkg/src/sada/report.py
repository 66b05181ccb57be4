"""Run reports and fidelity metrics."""
from __future__ import annotations

import math
import sys
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DimensionError

# identical inputs have infinite PSNR; reports carry this finite stand-in
PSNR_IDENTICAL = sys.float_info.max


def compute_psnr(a, b, peak: float) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise DimensionError(f"{a.shape} vs {b.shape}")
    if peak <= 0:
        raise ValueError("peak must be positive")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_IDENTICAL
    return 10.0 * math.log10(peak * peak / mse)


def relative_l2(a, b) -> float:
    """``||a - b|| / ||b||``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise DimensionError(f"{a.shape} vs {b.shape}")
    nb = float(np.linalg.norm(b))
    diff = float(np.linalg.norm(a - b))
    return diff / nb if nb > 0 else (0.0 if diff == 0 else math.inf)


@dataclass
class RunReport:
    nfe_full: int
    nfe_token_fraction: float
    nfe_equivalent: float
    speedup: float
    mode_counts: dict
    terminal_rel_l2: float
    terminal_psnr_db: float
    per_step_mse: list
    wall_time_s: float
    config_hash: str = ""
    seed: int | None = None
    experiment: str = ""
    solver_kind: str = ""
    steps: int = 0
    complete: bool = True
    error: str | None = None
    policy: dict = field(default_factory=dict)
    assumptions: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)
