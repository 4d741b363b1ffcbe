"""Nested and crossed design construction, imbalance generators, and
response simulation.

Responses are drawn through the same covariance-factor route the null
sampler uses (scale the leading rotated coordinates by the Cholesky factor,
then apply the orthogonal factor of Z), so simulation works for any feasible
component vector, including ones with negative coordinates where a
latent-effect sum would be meaningless.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .decomp import apply_q, householder_qr
from .model import DesignMatrices, make_design, require_covariance_factor

__all__ = [
    "NestedLayout",
    "CrossedLayout",
    "SimulationConfig",
    "nested_design",
    "crossed_design",
    "gen_unbalanced_nested",
    "gen_unbalanced_crossed",
    "simulate_response",
    "layout_to_json",
    "layout_from_json",
]


@dataclass(frozen=True)
class NestedLayout:
    """m blocks, n_i plots within block i, r_ij replicates within plot."""

    group_sizes: tuple[int, ...]
    rep_counts: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        if len(self.rep_counts) != len(self.group_sizes):
            raise ValueError("one replicate tuple per block")
        for n_i, reps in zip(self.group_sizes, self.rep_counts):
            if n_i < 1 or len(reps) != n_i or any(r < 1 for r in reps):
                raise ValueError("all plot and replicate counts must be >= 1")

    @property
    def m(self) -> int:
        return len(self.group_sizes)

    @property
    def n_obs(self) -> int:
        return int(sum(sum(reps) for reps in self.rep_counts))

    @classmethod
    def balanced(cls, m: int, n: int, r: int) -> "NestedLayout":
        return cls(
            group_sizes=(n,) * m,
            rep_counts=tuple((r,) * n for _ in range(m)),
        )


@dataclass(frozen=True)
class CrossedLayout:
    """Two crossed factors with m and n levels; `pairs` lists one (i, j)
    level pair per observation (0-based, multiplicities allowed)."""

    m: int
    n: int
    pairs: tuple[tuple[int, int], ...]

    def __post_init__(self):
        for i, j in self.pairs:
            if not (0 <= i < self.m and 0 <= j < self.n):
                raise ValueError(f"pair ({i}, {j}) outside the {self.m} x {self.n} grid")

    @property
    def n_obs(self) -> int:
        return len(self.pairs)

    @classmethod
    def balanced(cls, m: int, n: int, r: int = 1) -> "CrossedLayout":
        pairs = tuple((i, j) for i in range(m) for j in range(n) for _ in range(r))
        return cls(m=m, n=n, pairs=pairs)


@dataclass(frozen=True)
class SimulationConfig:
    """Nuisance parameters and components for response simulation."""

    beta: np.ndarray
    sigma2: float
    tau: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "beta", np.atleast_1d(np.asarray(self.beta, dtype=np.float64)))
        object.__setattr__(self, "tau", np.atleast_1d(np.asarray(self.tau, dtype=np.float64)))
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")


def _indicators(codes: np.ndarray, levels: int) -> np.ndarray:
    z = np.zeros((codes.shape[0], levels))
    z[np.arange(codes.shape[0]), codes] = 1.0
    return z


def _resolve_x(x_spec, n_obs: int) -> np.ndarray:
    if x_spec is None:
        return np.ones((n_obs, 1))
    x = np.asarray(x_spec, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != n_obs:
        raise ValueError(f"x must have shape ({n_obs}, p), got {x.shape}")
    return x


def nested_design(layout: NestedLayout, x_spec=None, factor_names=("block", "plot")) -> DesignMatrices:
    """Indicator blocks for blocks and plots-within-blocks."""
    block_codes = []
    plot_codes = []
    plot = 0
    for i, reps in enumerate(layout.rep_counts):
        for r_ij in reps:
            block_codes.extend([i] * r_ij)
            plot_codes.extend([plot] * r_ij)
            plot += 1
    block_codes = np.asarray(block_codes)
    plot_codes = np.asarray(plot_codes)
    z1 = _indicators(block_codes, layout.m)
    z2 = _indicators(plot_codes, plot)
    return make_design(_resolve_x(x_spec, layout.n_obs), [z1, z2], factor_names=factor_names)


def crossed_design(layout: CrossedLayout, x_spec=None, factor_names=("rows", "cols")) -> DesignMatrices:
    """Indicator blocks for the two crossed factors.

    Every level of both factors must occur at least once; an absent level
    would make its block rank deficient.
    """
    pairs = np.asarray(layout.pairs)
    if pairs.size == 0:
        raise ValueError("crossed layout has no observations")
    ii, jj = pairs[:, 0], pairs[:, 1]
    for name, codes, levels in (("first", ii, layout.m), ("second", jj, layout.n)):
        counts = np.bincount(codes, minlength=levels)
        if np.any(counts == 0):
            missing = int(np.nonzero(counts == 0)[0][0])
            raise ValueError(f"{name} factor level {missing} has no observations")
    z1 = _indicators(ii, layout.m)
    z2 = _indicators(jj, layout.n)
    return make_design(_resolve_x(x_spec, layout.n_obs), [z1, z2], factor_names=factor_names)


def gen_unbalanced_nested(
    m: int, n: int, r: int, rng: np.random.Generator, per_block: bool = False
) -> NestedLayout:
    """Random nested layout with n_i ~ Unif{2..2n-2}, r ~ Unif{2..2r-2}.

    Replicate counts are drawn per plot by default; `per_block` draws one
    count per block instead and repeats it across the block's plots.
    """
    if n < 2 or r < 2:
        raise ValueError("need n >= 2 and r >= 2 for the imbalance generator")
    group_sizes = rng.integers(2, max(2 * n - 2, 2) + 1, size=m)
    rep_counts = []
    for n_i in group_sizes:
        if per_block:
            rep = int(rng.integers(2, max(2 * r - 2, 2) + 1))
            rep_counts.append((rep,) * int(n_i))
        else:
            reps = rng.integers(2, max(2 * r - 2, 2) + 1, size=int(n_i))
            rep_counts.append(tuple(int(v) for v in reps))
    return NestedLayout(
        group_sizes=tuple(int(v) for v in group_sizes),
        rep_counts=tuple(rep_counts),
    )


def gen_unbalanced_crossed(
    m: int,
    n: int,
    rho: float,
    n_total: int,
    rng: np.random.Generator,
    balanced: bool = False,
    max_retries: int = 100,
) -> CrossedLayout:
    """Random crossed layout from a Gaussian copula with correlation rho.

    Level pairs are drawn by pushing bivariate normal marginals through the
    normal CDF onto discrete uniforms over the level sets; rho = 0 gives
    independent uniform pairs, larger rho concentrates mass near matched
    level ranks.  Draws are retried (up to `max_retries`) until every level
    of both factors appears.  With `balanced`, sampling is bypassed and the
    full factorial with one observation per cell is returned.
    """
    if balanced:
        return CrossedLayout.balanced(m, n, r=1)
    if not 0 <= rho < 1:
        raise ValueError("need 0 <= rho < 1")
    if n_total < 1:
        raise ValueError("need at least one observation")
    chol = np.array([[1.0, 0.0], [rho, np.sqrt(1.0 - rho * rho)]])
    for _ in range(max_retries):
        z = rng.standard_normal(size=(n_total, 2)) @ chol.T
        u = ndtr(z)
        ii = np.minimum((u[:, 0] * m).astype(np.intp), m - 1)
        jj = np.minimum((u[:, 1] * n).astype(np.intp), n - 1)
        if (np.bincount(ii, minlength=m) > 0).all() and (np.bincount(jj, minlength=n) > 0).all():
            return CrossedLayout(m=m, n=n, pairs=tuple(zip(ii.tolist(), jj.tolist())))
    raise RuntimeError(
        f"could not realize all {m} x {n} levels in {max_retries} draws of size {n_total}"
    )


def simulate_response(
    design: DesignMatrices,
    config: SimulationConfig,
    rng: np.random.Generator,
    zqr=None,
    size: int | None = None,
):
    """Draw y ~ N(X beta, sigma2 * (I + Z D(tau) Z^T)).

    Works anywhere in the parameter space: the draw scales the leading
    rotated coordinates of white noise by the covariance Cholesky factor and
    maps back through the orthogonal factor of Z.  Raises
    OutsideParameterSpaceError for infeasible tau.  `size` draws that many
    responses at once, returned as columns.
    """
    if config.beta.shape != (design.p,):
        raise ValueError(f"beta must have shape ({design.p},), got {config.beta.shape}")
    if config.tau.shape != (design.d,):
        raise ValueError(f"tau must have shape ({design.d},), got {config.tau.shape}")
    zqr = zqr if zqr is not None else householder_qr(design.z_concat)
    factor = require_covariance_factor(design, zqr, config.tau)
    k = factor.lower.shape[0]
    n = design.n
    cols = 1 if size is None else int(size)
    omega = rng.standard_normal(size=(n, cols))
    omega[:k] = factor.lower @ omega[:k]
    noise = apply_q(zqr, omega)
    mean = (design.x @ config.beta)[:, None]
    out = mean + np.sqrt(config.sigma2) * noise
    return out[:, 0] if size is None else out


def layout_to_json(layout: NestedLayout | CrossedLayout) -> str:
    """Serialize a layout for experiment manifests."""
    if isinstance(layout, NestedLayout):
        doc = {
            "family": "nested",
            "group_sizes": list(layout.group_sizes),
            "rep_counts": [list(r) for r in layout.rep_counts],
        }
    elif isinstance(layout, CrossedLayout):
        doc = {
            "family": "crossed",
            "m": layout.m,
            "n": layout.n,
            "pairs": [list(p) for p in layout.pairs],
        }
    else:
        raise TypeError(f"not a layout: {type(layout).__name__}")
    return json.dumps(doc, sort_keys=True)


def layout_from_json(text: str) -> NestedLayout | CrossedLayout:
    doc = json.loads(text)
    family = doc.get("family")
    if family == "nested":
        return NestedLayout(
            group_sizes=tuple(int(v) for v in doc["group_sizes"]),
            rep_counts=tuple(tuple(int(v) for v in row) for row in doc["rep_counts"]),
        )
    if family == "crossed":
        return CrossedLayout(
            m=int(doc["m"]),
            n=int(doc["n"]),
            pairs=tuple((int(i), int(j)) for i, j in doc["pairs"]),
        )
    raise ValueError(f"unknown layout family {family!r}")
