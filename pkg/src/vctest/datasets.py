"""Loaders for the bundled example datasets.

Each loader returns (design, response, info) ready for fitting; see
data/README.txt for provenance.  Datasets that could not be sourced and
validated in the build environment raise MissingFixtureError instead of
shipping unverified numbers.
"""

from __future__ import annotations

from importlib import resources

from .errors import MissingFixtureError
from .ingest import InputTable, RandomSpec, build_model_inputs

__all__ = ["dataset_path", "load_pastes", "load_oats", "load_machines", "load_penicillin"]


def dataset_path(name: str):
    """Filesystem path of a bundled CSV."""
    ref = resources.files("vctest") / "data" / name
    if not ref.is_file():
        raise MissingFixtureError(
            f"dataset file {name!r} is not bundled with this installation; "
            "see vctest/data/README.txt"
        )
    return ref


def _load(name: str, response: str, spec: RandomSpec, fixed=()):
    table = InputTable.from_csv(dataset_path(name))
    return build_model_inputs(table, response, spec, tuple(fixed))


def load_pastes():
    """Chemical paste strength: casks nested in batches, intercept only."""
    return _load("pastes.csv", "strength", RandomSpec("nested", ("batch", "cask")))


def load_oats():
    """Yates oat yields: varieties nested in blocks, nitrogen and variety
    as fixed effects (the classical analysis)."""
    return _load(
        "oats.csv",
        "yield",
        RandomSpec("nested", ("block", "variety")),
        fixed=("nitro", "variety"),
    )


def load_machines():
    """Worker productivity: machine crossed with worker, intercept only."""
    return _load("machines.csv", "score", RandomSpec("crossed", ("machine", "worker")))


def load_penicillin():
    """Penicillin assay: sample crossed with plate, intercept only.

    The raw data could not be sourced in the offline build environment and
    are not bundled; this loader works as soon as a penicillin.csv with
    columns (diameter, plate, sample) is placed in vctest/data/.
    """
    return _load("penicillin.csv", "diameter", RandomSpec("crossed", ("sample", "plate")))
