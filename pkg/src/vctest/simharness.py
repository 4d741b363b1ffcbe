"""Monte Carlo harness: empirical size and power of the bootstrap test over
grids of designs and component values, with uniformity diagnostics.

Each grid cell simulates `s` datasets, runs the full bootstrap test with `b`
replicates on each, and aggregates rejection rates at the 5% level, the
Kolmogorov-Smirnov distance of the two-sided p-values from uniform, and the
average estimated common component value.  Randomness is keyed by
(cell index, replicate index), so a run is reproducible for a fixed seed no
matter how work is scheduled.
"""

from __future__ import annotations

import csv
import json
import multiprocessing
import os
import tempfile
from dataclasses import dataclass

import numpy as np

from .bootstrap import bootstrap_test
from .designs import (
    CrossedLayout,
    NestedLayout,
    SimulationConfig,
    crossed_design,
    gen_unbalanced_crossed,
    gen_unbalanced_nested,
    nested_design,
    simulate_response,
)
from .errors import VctestError
from .likelihood import precompute, with_response
from .model import ContrastSpec, rotation_from_contrast
from .optimizer import mom_plan


def _any_valid_response(design) -> np.ndarray:
    """A fixed non-degenerate response used only to build a cache template."""
    return np.sin(np.arange(design.n, dtype=np.float64) + 0.5)

__all__ = [
    "ExperimentGrid",
    "CellResult",
    "run_cell",
    "ks_uniform",
    "power_table",
    "grid_from_manifest",
    "grid_to_manifest",
    "CSV_COLUMNS",
]

CSV_COLUMNS = (
    "family",
    "m",
    "n",
    "r_or_rho",
    "tau1",
    "tau2",
    "s",
    "b",
    "reject05_two",
    "reject05_one",
    "mcse",
    "ks_two",
    "mean_common_tau",
    "n_failed",
)


@dataclass(frozen=True)
class ExperimentGrid:
    """Cartesian grid of design sizes and component pairs.

    `family` is "nested" or "crossed".  Size triples are (m, n, r) for
    nested designs and (m, n, r_or_rho) for crossed ones, where the third
    entry follows the convention: -1 balanced full factorial, otherwise the
    copula correlation of the unbalanced generator (0 = balanced on
    average).  For nested designs `unbalanced` switches the per-replicate
    imbalance generator on; r is then the mean replicate count.
    """

    family: str
    sizes: tuple[tuple[float, float, float], ...]
    taus: tuple[tuple[float, float], ...]
    s: int
    b: int
    contrast: ContrastSpec
    seed: int
    unbalanced: bool = False
    statistic: str = "lr"

    def __post_init__(self):
        if self.family not in ("nested", "crossed"):
            raise ValueError(f"unknown design family {self.family!r}")
        if self.s < 1 or self.b < 1:
            raise ValueError("s and b must be at least 1")

    def cells(self):
        return [(size, tau) for size in self.sizes for tau in self.taus]


@dataclass(frozen=True)
class CellResult:
    """Aggregates for one grid cell."""

    family: str
    size: tuple[float, float, float]
    tau: tuple[float, float]
    s: int
    b: int
    pvalues_two: np.ndarray
    pvalues_one: np.ndarray
    reject_rate_05: float
    reject_rate_05_one: float
    mc_se: float
    ks_stat: float
    mean_tau_common: float
    n_failed: int


def ks_uniform(pvals) -> float:
    """Largest deviation |F_hat(t) - t| against the uniform distribution.

    Evaluated over a fine uniform grid refined by the sample points
    themselves (where the supremum is attained), so single-point examples
    come out exact.
    """
    p = np.sort(np.asarray(pvals, dtype=np.float64))
    s = p.shape[0]
    if s == 0:
        raise ValueError("need at least one p-value")
    if np.any((p < 0) | (p > 1)):
        raise ValueError("p-values must lie in [0, 1]")
    grid = np.linspace(0.0, 1.0, 1000)
    f_grid = np.searchsorted(p, grid, side="right") / s
    d_grid = float(np.max(np.abs(f_grid - grid)))
    i = np.arange(1, s + 1)
    d_plus = float(np.max(i / s - p))
    d_minus = float(np.max(p - (i - 1) / s))
    return max(d_grid, d_plus, d_minus)


def _cell_layout(grid: ExperimentGrid, size, rng: np.random.Generator):
    m, n, third = size
    if grid.family == "nested":
        if grid.unbalanced:
            return gen_unbalanced_nested(int(m), int(n), int(third), rng)
        return NestedLayout.balanced(int(m), int(n), int(third))
    if third < 0:
        return CrossedLayout.balanced(int(m), int(n), r=1)
    return gen_unbalanced_crossed(int(m), int(n), float(third), int(m) * int(n), rng)


def _layout_regenerated(grid: ExperimentGrid, size) -> bool:
    if grid.family == "nested":
        return grid.unbalanced
    return size[2] >= 0


def _run_replicate_in_cell(grid: ExperimentGrid, size, tau, cell_index: int, rep: int, fixed=None):
    seq = np.random.SeedSequence(grid.seed, spawn_key=(cell_index, rep))
    rng = np.random.default_rng(seq)
    boot_seed = int(seq.generate_state(1, np.uint32)[0])
    if fixed is None:
        layout = _cell_layout(grid, size, rng)
        design = (
            nested_design(layout) if grid.family == "nested" else crossed_design(layout)
        )
        plan = None
        zqr = None
        cache = None
    else:
        design, plan, template = fixed
        zqr = template.zqr
        cache = template
    cfg = SimulationConfig(beta=np.zeros(design.p), sigma2=1.0, tau=np.asarray(tau))
    y = simulate_response(design, cfg, rng, zqr=zqr)
    if cache is not None:
        cache = with_response(cache, y)
    res = bootstrap_test(
        design,
        y,
        grid.contrast,
        b=grid.b,
        seed=boot_seed,
        statistic=grid.statistic,
        cache=cache,
        plan=plan,
    )
    rot = rotation_from_contrast(grid.contrast)
    common = float(np.mean(rot.q2 @ (rot.q2.T @ res.tau_hat))) if rot.q2.shape[1] else np.nan
    p_one = np.nan if res.p_one is None else res.p_one
    return res.p_two, p_one, common


_CELL_STATE = None


def _init_cell_state(state):
    global _CELL_STATE
    _CELL_STATE = state


def _cell_worker(args):
    cell_index, rep = args
    grid, size, tau, fixed = _CELL_STATE
    try:
        return rep, _run_replicate_in_cell(grid, size, tau, cell_index, rep, fixed=fixed)
    except VctestError as err:
        return rep, err


def run_cell(
    grid: ExperimentGrid,
    size,
    tau,
    cell_index: int = 0,
    workers: int = 1,
) -> CellResult:
    """All `s` outer replicates of one grid cell.

    Unbalanced families regenerate their layout independently for every
    replicate; for fixed layouts the design factorizations and the moment
    plan are built once and shared.  Replicate failures are dropped and
    counted, and the aggregates are computed over the survivors.
    """
    fixed = None
    if not _layout_regenerated(grid, size):
        layout = _cell_layout(grid, size, np.random.default_rng(0))
        design = (
            nested_design(layout) if grid.family == "nested" else crossed_design(layout)
        )
        template = precompute(design, _any_valid_response(design))
        fixed = (design, mom_plan(design), template)
    jobs = [(cell_index, rep) for rep in range(grid.s)]
    if workers > 1:
        ctx = multiprocessing.get_context("fork")
        state = (grid, size, tau, fixed)
        with ctx.Pool(workers, initializer=_init_cell_state, initargs=(state,)) as pool:
            raw = pool.map(_cell_worker, jobs, chunksize=max(1, grid.s // (4 * workers)))
    else:
        _init_cell_state((grid, size, tau, fixed))
        raw = [_cell_worker(j) for j in jobs]
    p_two = np.full(grid.s, np.nan)
    p_one = np.full(grid.s, np.nan)
    common = np.full(grid.s, np.nan)
    n_failed = 0
    for rep, outcome in raw:
        if isinstance(outcome, Exception):
            n_failed += 1
            continue
        p_two[rep], p_one[rep], common[rep] = outcome
    ok = ~np.isnan(p_two)
    if not np.any(ok):
        raise VctestError(
            f"every replicate failed in cell family={grid.family} size={size} tau={tau}"
        )
    pv2 = p_two[ok]
    pv1 = p_one[ok]
    reject_two = float(np.mean(pv2 <= 0.05))
    reject_one = float(np.mean(pv1[~np.isnan(pv1)] <= 0.05)) if not np.all(np.isnan(pv1)) else np.nan
    return CellResult(
        family=grid.family,
        size=tuple(float(v) for v in size),
        tau=tuple(float(v) for v in tau),
        s=grid.s,
        b=grid.b,
        pvalues_two=pv2,
        pvalues_one=pv1,
        reject_rate_05=reject_two,
        reject_rate_05_one=reject_one,
        mc_se=float(np.sqrt(reject_two * (1 - reject_two) / pv2.size)),
        ks_stat=ks_uniform(pv2),
        mean_tau_common=float(np.nanmean(common)),
        n_failed=n_failed,
    )


def _fmt(x) -> str:
    if isinstance(x, float):
        if np.isnan(x):
            return "nan"
        return format(x, ".10g")
    return str(x)


def power_table(
    grid: ExperimentGrid,
    out_csv: str,
    workers: int = 1,
    manifest_out: str | None = None,
) -> list[CellResult]:
    """Run every grid cell and write one CSV row per cell.

    Output is deterministic for a fixed grid and seed: rows follow grid
    order and floats use a fixed format.  A JSON manifest echoing the grid
    with resolved defaults is written alongside when requested.  Per-cell
    failures abort only their own cell; the run continues and the failure
    is recorded in-file.
    """
    results: list[CellResult] = []
    rows = []
    for cell_index, (size, tau) in enumerate(grid.cells()):
        try:
            cell = run_cell(grid, size, tau, cell_index=cell_index, workers=workers)
        except VctestError:
            rows.append(
                [grid.family, _fmt(int(size[0])), _fmt(int(size[1])), _fmt(float(size[2])),
                 _fmt(float(tau[0])), _fmt(float(tau[1])), str(grid.s), str(grid.b),
                 "nan", "nan", "nan", "nan", "nan", str(grid.s)]
            )
            continue
        results.append(cell)
        rows.append(
            [
                cell.family,
                _fmt(int(cell.size[0])),
                _fmt(int(cell.size[1])),
                _fmt(float(cell.size[2])),
                _fmt(cell.tau[0]),
                _fmt(cell.tau[1]),
                str(cell.s),
                str(cell.b),
                _fmt(cell.reject_rate_05),
                _fmt(cell.reject_rate_05_one),
                _fmt(cell.mc_se),
                _fmt(cell.ks_stat),
                _fmt(cell.mean_tau_common),
                str(cell.n_failed),
            ]
        )
    _atomic_write_csv(out_csv, rows)
    if manifest_out:
        _atomic_write_text(manifest_out, grid_to_manifest(grid))
    return results


def _atomic_write_csv(path: str, rows) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_COLUMNS)
            writer.writerows(rows)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _atomic_write_text(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def grid_to_manifest(grid: ExperimentGrid) -> str:
    alt = grid.contrast.alternative
    doc = {
        "family": grid.family,
        "sizes": [list(sz) for sz in grid.sizes],
        "taus": [list(t) for t in grid.taus],
        "s": grid.s,
        "b": grid.b,
        "contrast": {
            "a": grid.contrast.a.tolist(),
            "alternative": alt if isinstance(alt, str) else list(alt),
        },
        "seed": grid.seed,
        "unbalanced": grid.unbalanced,
        "statistic": grid.statistic,
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def grid_from_manifest(text: str) -> ExperimentGrid:
    doc = json.loads(text)
    contrast_doc = doc["contrast"]
    alt = contrast_doc.get("alternative", "two-sided")
    if isinstance(alt, list):
        alt = tuple(alt)
    contrast = ContrastSpec(a=np.asarray(contrast_doc["a"], dtype=np.float64), alternative=alt)
    return ExperimentGrid(
        family=doc["family"],
        sizes=tuple(tuple(float(v) for v in sz) for sz in doc["sizes"]),
        taus=tuple(tuple(float(v) for v in t) for t in doc["taus"]),
        s=int(doc["s"]),
        b=int(doc["b"]),
        contrast=contrast,
        seed=int(doc["seed"]),
        unbalanced=bool(doc.get("unbalanced", False)),
        statistic=str(doc.get("statistic", "lr")),
    )
