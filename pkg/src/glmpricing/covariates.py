"""Covariate streams: i.i.d., phased (block-switching) and file-backed sequences."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

NORMALIZE_MODES = ("none", "unit", "feature")


class CovariateFileError(ValueError):
    pass


@dataclass(frozen=True)
class CovariateStreamSpec:
    """How x_1..x_T are produced.

    ``normalize`` is ``"none"``, ``"unit"`` (x / ||x||) or ``"feature"``
    (x / (||x|| sqrt(1 + p_max^2)), so that ||(x, p x)|| <= 1 on the whole
    price range).
    """

    mode: str = "iid"
    d: int = 6
    n_phases: int = 2
    n_blocks: Optional[int] = None
    path: Optional[str] = None
    normalize: str = "none"
    scale: Optional[float] = None
    p_max: float = 5.0

    def __post_init__(self):
        if self.mode not in ("iid", "phased", "file"):
            raise ValueError(f"unknown covariate mode {self.mode!r}")
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if self.mode == "phased" and self.n_phases < 2:
            raise ValueError("phased mode needs n_phases >= 2")
        if self.mode == "file" and not self.path:
            raise ValueError("file mode needs a path")
        if self.normalize not in NORMALIZE_MODES:
            raise ValueError(f"normalize must be one of {NORMALIZE_MODES}")
        if self.scale is None:
            object.__setattr__(self, "scale", 1.0 / math.sqrt(self.d))
        if self.n_blocks is None:
            # experiment (c) cycles three blocks over six phases
            object.__setattr__(self, "n_blocks", {2: 2, 6: 3}.get(self.n_phases, self.n_phases))


def phase_of(t: int, T: int, n_phases: int) -> int:
    """1-based phase of period t; phase k ends at floor(k T / n_phases)."""
    return (t * n_phases + T - 1) // T


def block_slices(d: int, n_blocks: int) -> list[slice]:
    # leading blocks take the extra entries when d is not divisible
    sizes = [len(s) for s in np.array_split(np.arange(d), n_blocks)]
    out, start = [], 0
    for size in sizes:
        out.append(slice(start, start + size))
        start += size
    return out


def active_block(spec: CovariateStreamSpec, t: int, T: int) -> slice:
    m = phase_of(t, T, spec.n_phases)
    return block_slices(spec.d, spec.n_blocks)[(m - 1) % spec.n_blocks]


def normalize_covariate(x: np.ndarray, mode: str, p_max: float = 5.0) -> np.ndarray:
    if mode == "none":
        return x
    norm = np.linalg.norm(x)
    if norm == 0:
        return x
    if mode == "unit":
        return x / norm
    return x / (norm * math.sqrt(1.0 + p_max**2))


def next_covariate(spec: CovariateStreamSpec, t: int, T: int, rng: np.random.Generator,
                   rows: Optional[np.ndarray] = None) -> np.ndarray:
    """Covariate for period ``t`` (1-based). ``rows`` holds preloaded file data."""
    if not 1 <= t <= T:
        raise ValueError(f"t = {t} outside 1..{T}")
    if spec.mode == "iid":
        x = rng.uniform(0.0, spec.scale, spec.d)
    elif spec.mode == "phased":
        x = np.zeros(spec.d)
        block = active_block(spec, t, T)
        x[block] = rng.uniform(0.0, spec.scale, block.stop - block.start)
    else:
        if rows is None:
            rows = load_covariates(spec.path, spec.d, T)
        if t > len(rows):
            raise CovariateFileError(f"row {t} missing from covariate file")
        x = np.array(rows[t - 1], dtype=float)
    return normalize_covariate(x, spec.normalize, spec.p_max)


def covariate_sequence(spec: CovariateStreamSpec, T: int, rng: np.random.Generator) -> np.ndarray:
    rows = load_covariates(spec.path, spec.d, T) if spec.mode == "file" else None
    return np.array([next_covariate(spec, t, T, rng, rows) for t in range(1, T + 1)])


def make_feature(x, p) -> np.ndarray:
    """Feature z = (x, p x)."""
    x = np.asarray(x, dtype=float)
    if not np.isfinite(p):
        raise ValueError("price must be finite")
    return np.concatenate([x, p * x])


def load_covariates(path, d: int, T: int, normalize: str = "none", p_max: float = 5.0) -> np.ndarray:
    """Read the first T rows of a headerless comma-separated covariate file."""
    rows = []
    with open(Path(path)) as fh:
        for lineno, line in enumerate(fh, start=1):
            if len(rows) == T:
                break
            line = line.strip()
            if not line:
                continue
            fields = line.split(",")
            if len(fields) != d:
                raise CovariateFileError(f"row {lineno}: expected {d} fields, found {len(fields)}")
            row = []
            for col, text in enumerate(fields, start=1):
                try:
                    row.append(float(text))
                except ValueError:
                    raise CovariateFileError(
                        f"row {lineno}, column {col}: cannot parse {text.strip()!r}"
                    ) from None
            rows.append(normalize_covariate(np.array(row), normalize, p_max))
    if len(rows) < T:
        raise CovariateFileError(f"insufficient rows: need {T}, file has {len(rows)}")
    return np.array(rows)
