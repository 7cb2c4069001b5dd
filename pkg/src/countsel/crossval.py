"""Nested stratified cross-validation, consensus selection, and refits.

The outer loop leaves one of N stratified blocks out at a time; the inner
loop runs a K-fold CV on the remaining rows to pick the penalty (lambda.min
and lambda.1se) for that outer fold.  Selected columns are refit without
the penalty before predicting the held-out block, and per-fold active sets
feed a presence table from which consensus variable sets are drawn.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .design import Dataset, DesignMatrix, apply_scaling, build_design
from .glm import (
    ETA_CLAMP,
    PoissonModel,
    PredictorOverflowError,
    RankDeficiencyError,
    fit_glm,
)
from .lasso import (
    DegenerateResponseError,
    GridParams,
    LambdaGrid,
    compute_lambda_max,
    fit_path,
    make_grid,
)
from .metrics import PooledPredictions

QUARTILE = "quartile"
GROUP = "group"


class FoldError(RuntimeError):
    """A numerical failure inside one outer fold, identified by block id."""

    def __init__(self, block: int, cause: Exception):
        self.block = block
        self.cause = cause
        super().__init__(f"outer fold {block}: {cause}")


@dataclass(frozen=True)
class CvPlan:
    """Assignment of every row to exactly one of n_blocks test blocks."""

    n_blocks: int
    block_of: np.ndarray
    strategy: str
    seed: int

    def __post_init__(self) -> None:
        blocks = np.asarray(self.block_of, dtype=np.int64)
        blocks.flags.writeable = False
        object.__setattr__(self, "block_of", blocks)

    @property
    def n(self) -> int:
        return int(self.block_of.shape[0])

    def test_rows(self, block: int) -> np.ndarray:
        return np.flatnonzero(self.block_of == block)

    def train_rows(self, block: int) -> np.ndarray:
        return np.flatnonzero(self.block_of != block)

    def block_sizes(self) -> np.ndarray:
        return np.bincount(self.block_of, minlength=self.n_blocks)


def make_plan(
    dataset: Dataset,
    n_blocks: int,
    *,
    strategy: str = QUARTILE,
    seed: int = 0,
) -> CvPlan:
    """Stratified block assignment.

    quartile: rows are ranked by the response (ties by row order) and cut
    into min(4, n // n_blocks) strata of near-equal size; group: strata are
    the distinct group labels.  Within each stratum rows are shuffled by
    the seed and dealt round-robin to blocks with a counter that continues
    across strata, so block sizes stay within one row of each other.
    """
    n = dataset.n
    if n_blocks < 2:
        raise ValueError("need at least two blocks")
    if n < 2 * n_blocks:
        raise ValueError(
            f"{n} rows cannot fill {n_blocks} blocks with at least two rows each"
        )
    if strategy == QUARTILE:
        order = np.argsort(dataset.response, kind="stable")
        n_strata = min(4, n // n_blocks)
        strata = [s for s in np.array_split(order, n_strata)]
    elif strategy == GROUP:
        if dataset.group_labels is None:
            raise ValueError("group strategy requires group labels")
        labels = dataset.group_labels
        strata = [
            np.flatnonzero(labels == lab) for lab in sorted(set(labels.tolist()))
        ]
    else:
        raise ValueError(f"unknown stratification strategy {strategy!r}")

    smallest = min(len(s) for s in strata)
    if smallest < n_blocks:
        raise ValueError(
            f"smallest stratum has {smallest} rows, fewer than {n_blocks} blocks; "
            "reduce the block count or choose a different stratification"
        )

    rng = np.random.default_rng(seed)
    block_of = np.empty(n, dtype=np.int64)
    counter = 0
    for stratum in strata:
        for row in rng.permutation(stratum):
            block_of[row] = counter % n_blocks
            counter += 1
    return CvPlan(n_blocks, block_of, strategy, seed)


@dataclass(frozen=True)
class ScoreTable:
    """Inner-CV score profile over the grid, with the two selected values."""

    lambdas: np.ndarray
    scores: np.ndarray
    std_errors: np.ndarray
    fold_scores: np.ndarray
    index_min: int
    index_1se: int
    degenerate: bool

    @property
    def lambda_min(self) -> float:
        return float(self.lambdas[self.index_min]) if self.lambdas.size else 0.0

    @property
    def lambda_1se(self) -> float:
        return float(self.lambdas[self.index_1se]) if self.lambdas.size else 0.0

    @classmethod
    def empty_degenerate(cls) -> "ScoreTable":
        z = np.zeros(0)
        return cls(z, z, z, np.zeros((0, 0)), 0, 0, True)


def _deviance_columns(y: np.ndarray, mu: np.ndarray) -> np.ndarray:
    """Poisson deviance of each column of mu against y."""
    y = y[:, None].astype(np.float64)
    terms = np.where(y > 0, y * np.log(np.where(y > 0, y, 1.0) / mu) - (y - mu), mu)
    return 2.0 * terms.sum(axis=0)


def _safe_mu(eta: np.ndarray) -> np.ndarray:
    return np.exp(np.clip(eta, -ETA_CLAMP, ETA_CLAMP))


def select_from_scores(
    scores: np.ndarray, std_errors: np.ndarray
) -> tuple[int, int, bool]:
    """Pick (index_min, index_1se, degenerate) on a decreasing grid.

    The minimum takes the first index among exact ties, which is the
    largest lambda; index_1se is the first index whose score is within one
    standard error of the minimum.  A completely flat profile selects the
    top of the grid and is flagged degenerate.
    """
    index_min = int(np.argmin(scores))
    threshold = scores[index_min] + std_errors[index_min]
    index_1se = int(np.argmax(scores <= threshold))
    degenerate = bool(np.ptp(scores) == 0.0)
    if degenerate:
        index_min = 0
        index_1se = 0
    return index_min, index_1se, degenerate


def select_lambdas(
    ea: Dataset,
    design: DesignMatrix,
    grid: LambdaGrid,
    k_inner: int,
    *,
    strategy: str = QUARTILE,
    seed: int = 0,
) -> ScoreTable:
    """K-fold inner CV on the outer-training rows, returning the score table.

    Score(lambda) is the mean over inner folds of the held-out deviance per
    observation; its standard error is the sample standard deviation across
    folds over sqrt(K).  lambda.min takes the largest lambda among exact
    ties of the minimum; lambda.1se is the largest lambda whose score stays
    within one standard error of the minimum.  A flat score profile is
    flagged degenerate and selects the top of the grid for both rules.
    """
    plan = make_plan(ea, k_inner, strategy=strategy, seed=seed)
    G = grid.size
    fold_scores = np.empty((k_inner, G))
    for k in range(k_inner):
        tr = plan.train_rows(k)
        te = plan.test_rows(k)
        path = fit_path(
            design.matrix[tr], ea.response[tr], grid, column_names=design.column_names
        )
        eta = design.matrix[te] @ path.coefficient_matrix() + path.intercepts()[None, :]
        mu = _safe_mu(eta)
        fold_scores[k] = _deviance_columns(ea.response[te], mu) / te.shape[0]
    scores = fold_scores.mean(axis=0)
    std_errors = fold_scores.std(axis=0, ddof=1) / math.sqrt(k_inner)
    index_min, index_1se, degenerate = select_from_scores(scores, std_errors)
    return ScoreTable(
        lambdas=grid.values,
        scores=scores,
        std_errors=std_errors,
        fold_scores=fold_scores,
        index_min=index_min,
        index_1se=index_1se,
        degenerate=degenerate,
    )


def refit_unpenalized(
    design: DesignMatrix, response: np.ndarray, active: tuple[str, ...]
) -> tuple[PoissonModel, tuple[str, ...]]:
    """Unpenalized fit on the named columns, dropping collinear ones.

    Collinear columns reported by the fitter are removed (earliest kept)
    and the fit retried; returns the model and the names dropped.
    """
    names = design.column_names
    index = {name: j for j, name in enumerate(names)}
    keep = [name for name in active]
    dropped: list[str] = []
    while True:
        idx = [index[name] for name in keep]
        try:
            model, _diag = fit_glm(
                design.matrix, response, idx, column_names=names
            )
            return model, tuple(dropped)
        except RankDeficiencyError as err:
            bad = set(err.columns)
            if not bad:
                raise
            keep = [name for name in keep if name not in bad]
            dropped.extend(sorted(bad))


@dataclass(frozen=True)
class OuterFoldResult:
    """Everything one outer fold produced."""

    block: int
    n_train: int
    n_test: int
    test_rows: np.ndarray
    grid: LambdaGrid | None
    inner: ScoreTable
    active_min: tuple[str, ...]
    active_1se: tuple[str, ...]
    model_min: PoissonModel
    model_1se: PoissonModel
    dropped_min: tuple[str, ...]
    dropped_1se: tuple[str, ...]
    predictions_min: np.ndarray
    predictions_1se: np.ndarray
    design: DesignMatrix

    @property
    def lambda_min(self) -> float:
        return self.inner.lambda_min

    @property
    def lambda_1se(self) -> float:
        return self.inner.lambda_1se


@dataclass(frozen=True)
class PresenceTable:
    """How often each column entered each rule's active set across folds."""

    column_names: tuple[str, ...]
    n_folds: int
    counts_min: np.ndarray
    counts_1se: np.ndarray

    def frequencies(self, rule: str) -> np.ndarray:
        counts = {"lambda_min": self.counts_min, "lambda_1se": self.counts_1se}[rule]
        return counts / float(self.n_folds)


@dataclass(frozen=True)
class FrequentSets:
    """Columns whose presence frequency reached the threshold, per rule."""

    threshold: float
    lambda_min: tuple[str, ...]
    lambda_1se: tuple[str, ...]


def frequent_variables(presence: PresenceTable, threshold: float = 0.5) -> FrequentSets:
    """Consensus sets: columns with count / n_folds >= threshold."""
    if not 0.0 < threshold <= 1.0:
        raise ValueError("threshold must lie in (0, 1]")
    sel_min = tuple(
        name
        for name, c in zip(presence.column_names, presence.counts_min)
        if c / presence.n_folds >= threshold
    )
    sel_1se = tuple(
        name
        for name, c in zip(presence.column_names, presence.counts_1se)
        if c / presence.n_folds >= threshold
    )
    return FrequentSets(threshold, sel_min, sel_1se)


@dataclass(frozen=True)
class NestedCvResult:
    plan: CvPlan
    folds: tuple[OuterFoldResult, ...]
    presence: PresenceTable
    pooled_min: PooledPredictions
    pooled_1se: PooledPredictions
    design: DesignMatrix  # full-data design, for reports and provenance


def _inner_seed(seed: int, block: int) -> int:
    return (seed * 1000003 + 7919 * (block + 1)) % (2**32)


def _run_fold(
    dataset: Dataset,
    plan: CvPlan,
    block: int,
    k_inner: int,
    grid_params: GridParams,
    strategy: str,
    seed: int,
) -> OuterFoldResult:
    test_rows = plan.test_rows(block)
    train_rows = plan.train_rows(block)
    ea = dataset.subset(train_rows)
    et = dataset.subset(test_rows)
    dm = build_design(ea)
    y = ea.response.astype(np.float64)

    ceiling = compute_lambda_max(dm.matrix, y)
    if ceiling > 0.0:
        grid = make_grid(ceiling, grid_params)
        inner = select_lambdas(
            ea, dm, grid, k_inner, strategy=strategy, seed=_inner_seed(seed, block)
        )
        path = fit_path(dm.matrix, y, grid, column_names=dm.column_names)
        active_min = path.models[inner.index_min].active_set
        active_1se = path.models[inner.index_1se].active_set
    else:
        # constant response in E_A: no grid exists, fall back to the null fit
        grid = None
        inner = ScoreTable.empty_degenerate()
        active_min = ()
        active_1se = ()

    model_min, dropped_min = refit_unpenalized(dm, y, active_min)
    model_1se, dropped_1se = refit_unpenalized(dm, y, active_1se)
    X_te = apply_scaling(dm, et)
    return OuterFoldResult(
        block=block,
        n_train=int(train_rows.shape[0]),
        n_test=int(test_rows.shape[0]),
        test_rows=test_rows,
        grid=grid,
        inner=inner,
        active_min=active_min,
        active_1se=active_1se,
        model_min=model_min,
        model_1se=model_1se,
        dropped_min=dropped_min,
        dropped_1se=dropped_1se,
        predictions_min=_safe_mu(model_min.linear_predictor(X_te)),
        predictions_1se=_safe_mu(model_1se.linear_predictor(X_te)),
        design=dm,
    )


def _pool(
    dataset: Dataset,
    plan: CvPlan,
    folds: tuple[OuterFoldResult, ...],
    which: str,
) -> PooledPredictions:
    rows = np.concatenate([f.test_rows for f in folds])
    fold_ids = np.concatenate(
        [np.full(f.test_rows.shape[0], f.block, dtype=np.int64) for f in folds]
    )
    mu = np.concatenate([getattr(f, f"predictions_{which}") for f in folds])
    order = np.argsort(rows)
    return PooledPredictions(
        row_ids=rows[order],
        fold_ids=fold_ids[order],
        observed=dataset.response[rows[order]],
        predicted=mu[order],
        fold_sizes={f.block: f.n_train for f in folds},
    )


def run_nested_cv(
    dataset: Dataset,
    n_outer: int = 10,
    k_inner: int = 10,
    grid_params: GridParams = GridParams(),
    *,
    strategy: str = QUARTILE,
    seed: int = 0,
    threads: int = 1,
) -> NestedCvResult:
    """The full pipeline: outer blocks, inner selection, refits, presence.

    Numerical failures inside a fold surface as FoldError carrying the
    block id.  Results are merged in block order whatever the thread
    count, so the output is reproducible for a fixed seed.
    """
    plan = make_plan(dataset, n_outer, strategy=strategy, seed=seed)
    full_design = build_design(dataset)

    def worker(block: int) -> OuterFoldResult:
        try:
            return _run_fold(
                dataset, plan, block, k_inner, grid_params, strategy, seed
            )
        except (
            DegenerateResponseError,
            PredictorOverflowError,
            RankDeficiencyError,
            np.linalg.LinAlgError,
        ) as err:
            raise FoldError(block, err) from err

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            folds = tuple(pool.map(worker, range(n_outer)))
    else:
        folds = tuple(worker(b) for b in range(n_outer))

    names = full_design.column_names
    index = {name: j for j, name in enumerate(names)}
    counts_min = np.zeros(len(names), dtype=np.int64)
    counts_1se = np.zeros(len(names), dtype=np.int64)
    for fold in folds:
        for name in fold.active_min:
            counts_min[index[name]] += 1
        for name in fold.active_1se:
            counts_1se[index[name]] += 1
    presence = PresenceTable(names, n_outer, counts_min, counts_1se)

    return NestedCvResult(
        plan=plan,
        folds=folds,
        presence=presence,
        pooled_min=_pool(dataset, plan, folds, "min"),
        pooled_1se=_pool(dataset, plan, folds, "1se"),
        design=full_design,
    )


def evaluate_columns(
    dataset: Dataset,
    plan: CvPlan,
    columns: tuple[str, ...],
    *,
    threads: int = 1,
) -> PooledPredictions:
    """Refit a fixed column set per fold and pool held-out predictions.

    Used for consensus sets and manual subsets.  A name missing from some
    fold's design (its level never occurred there, say) is skipped for
    that fold only.  An empty column set degrades to intercept-only fits.
    """

    def worker(block: int):
        test_rows = plan.test_rows(block)
        train_rows = plan.train_rows(block)
        ea = dataset.subset(train_rows)
        et = dataset.subset(test_rows)
        dm = build_design(ea)
        present = [name for name in columns if name in dm.column_names]
        try:
            model, _dropped = refit_unpenalized(
                dm, ea.response.astype(np.float64), tuple(present)
            )
        except (
            PredictorOverflowError,
            RankDeficiencyError,
            np.linalg.LinAlgError,
        ) as err:
            raise FoldError(block, err) from err
        mu = _safe_mu(model.linear_predictor(apply_scaling(dm, et)))
        return test_rows, mu, int(train_rows.shape[0])

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(worker, range(plan.n_blocks)))
    else:
        parts = [worker(b) for b in range(plan.n_blocks)]

    rows = np.concatenate([p[0] for p in parts])
    mu = np.concatenate([p[1] for p in parts])
    fold_ids = np.concatenate(
        [np.full(p[0].shape[0], b, dtype=np.int64) for b, p in enumerate(parts)]
    )
    order = np.argsort(rows)
    return PooledPredictions(
        row_ids=rows[order],
        fold_ids=fold_ids[order],
        observed=dataset.response[rows[order]],
        predicted=mu[order],
        fold_sizes={b: p[2] for b, p in enumerate(parts)},
    )
