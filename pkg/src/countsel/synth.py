"""Synthetic count data with planted effects for recovery experiments.

Covariates are standard-normal numerics (named x1, x2, ...) and uniform
categoricals (named c1, c2, ... with levels a, b, ...).  Effects are
declared against unstandardized main-effect or interaction columns using
the same naming grammar the design module produces, so the planted truth
can be located in an expanded design afterwards.
"""
from __future__ import annotations

import string
from dataclasses import dataclass

import numpy as np

from .design import (
    Covariate,
    Dataset,
    DesignMatrix,
    encode_main_effects,
    expand_interactions,
    validate_dataset,
    CATEGORICAL,
    NUMERIC,
)

ETA_LIMIT = 30.0


@dataclass(frozen=True)
class SynthSpec:
    """Recipe for one synthetic dataset.

    numeric is a covariate count; categorical lists level counts, one entry
    per categorical covariate.  effects maps column descriptors such as
    "x1", "c1=b" or "x2:x3" to coefficients on the unstandardized scale.
    """

    n: int
    numeric: int = 0
    categorical: tuple[int, ...] = ()
    effects: tuple[tuple[str, float], ...] = ()
    intercept: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "categorical", tuple(self.categorical))
        object.__setattr__(self, "effects", tuple(self.effects))
        if self.n < 1:
            raise ValueError("n must be positive")
        if self.numeric < 0:
            raise ValueError("numeric covariate count cannot be negative")
        if self.numeric + len(self.categorical) == 0:
            raise ValueError("at least one covariate is required")
        for k in self.categorical:
            if not 2 <= k <= 26:
                raise ValueError("categorical level counts must be in [2, 26]")

    @classmethod
    def from_mapping(cls, raw: dict) -> "SynthSpec":
        effects = tuple((str(k), float(v)) for k, v in raw.get("effects", {}).items())
        return cls(
            n=int(raw["n"]),
            numeric=int(raw.get("numeric", 0)),
            categorical=tuple(int(k) for k in raw.get("categorical", ())),
            effects=effects,
            intercept=float(raw.get("intercept", 0.0)),
            seed=int(raw.get("seed", 0)),
        )


def _descriptor_parts(descriptor: str) -> frozenset[str]:
    parts = descriptor.split(":")
    if not all(parts):
        raise ValueError(f"malformed effect descriptor {descriptor!r}")
    return frozenset(parts)


def _resolve_columns(
    descriptors: list[str], names: tuple[str, ...]
) -> dict[str, int]:
    """Map descriptors to column indices, ignoring interaction part order."""
    by_name = {name: j for j, name in enumerate(names)}
    by_parts = {_descriptor_parts(name): j for j, name in enumerate(names)}
    out: dict[str, int] = {}
    for desc in descriptors:
        if desc in by_name:
            out[desc] = by_name[desc]
        elif _descriptor_parts(desc) in by_parts:
            out[desc] = by_parts[_descriptor_parts(desc)]
        else:
            raise ValueError(f"effect descriptor {desc!r} matches no design column")
    return out


def generate(spec: SynthSpec) -> Dataset:
    """Draw covariates, plant the linear predictor, sample Poisson counts.

    Draw order is fixed (numerics in order, then categorical codes, then
    the response) so one seed pins the whole dataset.  Raises if any
    planted linear predictor exceeds +/-30 or if the realized dataset
    fails validation (for instance a level that never appeared).
    """
    rng = np.random.default_rng(spec.seed)
    covs: list[Covariate] = []
    for i in range(spec.numeric):
        covs.append(Covariate(f"x{i + 1}", NUMERIC, rng.standard_normal(spec.n)))
    for c, k in enumerate(spec.categorical):
        codes = rng.integers(0, k, size=spec.n)
        letters = np.array(list(string.ascii_lowercase[:k]), dtype=object)
        covs.append(Covariate(f"c{c + 1}", CATEGORICAL, letters[codes]))

    skeleton = Dataset(np.zeros(spec.n, dtype=np.int64), tuple(covs))
    expanded = expand_interactions(encode_main_effects(skeleton))
    names = tuple(c.column_name for c in expanded.columns)
    where = _resolve_columns([d for d, _ in spec.effects], names)

    eta = np.full(spec.n, spec.intercept)
    for desc, coef in spec.effects:
        eta = eta + coef * expanded.matrix[:, where[desc]]
    if eta.size and np.max(np.abs(eta)) > ETA_LIMIT:
        raise ValueError(
            "planted linear predictor exceeds +/-30; shrink the coefficients"
        )
    y = rng.poisson(np.exp(eta))

    dataset = Dataset(np.asarray(y, dtype=np.int64), tuple(covs))
    validate_dataset(dataset)
    return dataset


def true_support(spec: SynthSpec, design: DesignMatrix) -> tuple[str, ...]:
    """Planted effect columns as names of the given design, design order.

    Raises if a planted column is missing from the design (it was dropped
    or the descriptor matches nothing), since recovery metrics would be
    meaningless then.
    """
    names = design.column_names
    where = _resolve_columns([d for d, _ in spec.effects], names)
    taken = sorted(where.values())
    return tuple(names[j] for j in taken)
