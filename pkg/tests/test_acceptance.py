"""Acceptance gate: one printed verdict line per numbered criterion.

Run with -s to see every verdict as it lands; each test prints its line
before asserting, so a failing criterion still reports itself.
"""
import math
import time

import numpy as np
import pytest
import yaml

from countsel.cli import main
from countsel.crossval import evaluate_columns, frequent_variables, run_nested_cv
from countsel.design import (
    CATEGORICAL,
    NUMERIC,
    Covariate,
    Dataset,
    build_design,
    save_csv,
)
from countsel.glm import (
    PoissonModel,
    deviance,
    fit_glm,
    log_likelihood,
    poisson_deviance,
    predict,
    saturated_log_likelihood,
)
from countsel.lasso import (
    GridParams,
    LambdaGrid,
    compute_lambda_max,
    fit_path,
    make_grid,
)
from countsel.metrics import (
    PooledPredictions,
    pooled_deviance,
    predictive_power,
    weighted_deviance,
)
from countsel.synth import SynthSpec, generate, true_support


def _verdict(num: int, label: str, ok: bool, detail: str = "") -> bool:
    mark = "PASS" if ok else "FAIL"
    tail = f"  [{detail}]" if detail else ""
    print(f"criterion {num} ({label}): {mark}{tail}")
    return ok


def test_criterion_01_intercept_only_exactness():
    t0 = time.perf_counter()
    worst = 0.0
    for s in range(100):
        rng = np.random.default_rng(5000 + s)
        X = rng.standard_normal((50, 3))
        Y = rng.poisson(3.0, 50).astype(np.float64)
        model, _ = fit_glm(X, Y, active_columns=())
        worst = max(worst, abs(model.intercept - math.log(Y.mean())))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-8 and elapsed < 1.0
    assert _verdict(
        1,
        "intercept-only exactness",
        ok,
        f"worst error {worst:.2e}, {elapsed:.2f}s of 1s",
    )


def test_criterion_02_gradient_check():
    h = 1e-5
    worst = 0.0
    names = tuple(f"v{j}" for j in range(5))
    for s in range(20):
        rng = np.random.default_rng(6000 + s)
        X = rng.standard_normal((30, 5))
        Y = rng.poisson(np.exp(0.4 + X @ rng.uniform(-0.4, 0.4, 5))).astype(
            np.float64
        )
        theta = rng.uniform(-0.3, 0.3, 6)

        def ll(t):
            return log_likelihood(PoissonModel(float(t[0]), t[1:], names), X, Y)

        mu = predict(PoissonModel(float(theta[0]), theta[1:], names), X)
        analytic = np.concatenate([[np.sum(Y - mu)], X.T @ (Y - mu)])
        fd = np.empty(6)
        for j in range(6):
            hi = theta.copy()
            lo = theta.copy()
            hi[j] += h
            lo[j] -= h
            fd[j] = (ll(hi) - ll(lo)) / (2.0 * h)
        scale = np.max(np.abs(analytic))
        assert scale > 1e-3
        worst = max(worst, float(np.max(np.abs(analytic - fd)) / scale))
    ok = worst <= 1e-6
    assert _verdict(2, "log-likelihood gradient", ok, f"worst rel err {worst:.2e}")


def test_criterion_03_deviance_identities():
    worst_identity = 0.0
    worst_null = 0.0
    saturated_exact = True
    for s in range(20):
        rng = np.random.default_rng(6500 + s)
        X = rng.standard_normal((40, 3))
        Y = rng.poisson(np.exp(0.5 + 0.4 * X[:, 0])).astype(np.float64)
        saturated_exact = saturated_exact and poisson_deviance(Y, Y.copy()) == 0.0
        model, _ = fit_glm(X, Y)
        d = deviance(model, X, Y)
        gap = abs(d - 2.0 * (saturated_log_likelihood(Y) - log_likelihood(model, X, Y)))
        worst_identity = max(worst_identity, gap / max(1.0, abs(d)))
        null, _ = fit_glm(X, Y, active_columns=())
        ybar = Y.mean()
        closed = 2.0 * sum(
            y * math.log(y / ybar) - (y - ybar) if y > 0 else ybar for y in Y
        )
        worst_null = max(
            worst_null, abs(deviance(null, X, Y) - closed) / max(1.0, closed)
        )
    ok = saturated_exact and worst_identity <= 1e-10 and worst_null <= 1e-10
    assert _verdict(
        3,
        "deviance identities",
        ok,
        f"identity {worst_identity:.1e}, null {worst_null:.1e}, saturated zero {saturated_exact}",
    )


def _kkt_instance(s):
    rng = np.random.default_rng(7000 + s)
    n = 60
    x1 = rng.standard_normal(n)
    x2 = rng.standard_normal(n)
    lv = np.array(list("abcd"))[rng.integers(0, 4, n)]
    eta = 0.3 + 0.4 * x1 - 0.3 * x2 + 0.5 * (lv == "b")
    Y = rng.poisson(np.exp(eta)).astype(np.float64)
    ds = Dataset(
        response=Y,
        covariates=(
            Covariate("x1", NUMERIC, x1),
            Covariate("x2", NUMERIC, x2),
            Covariate("c", CATEGORICAL, lv),
        ),
    )
    return build_design(ds), Y


def test_criterion_04_kkt_certificate():
    worst = 0.0
    all_null_above = True
    for s in range(20):
        dm, Y = _kkt_instance(s)
        assert dm.matrix.shape == (60, 12)
        lam_max = compute_lambda_max(dm.matrix, Y)
        grid = make_grid(lam_max, GridParams(30, 1e-3))
        path = fit_path(dm.matrix, Y, grid, column_names=dm.column_names)
        assert all(path.converged)
        n = Y.shape[0]
        for model, lam in zip(path.models, grid.values):
            mu = np.exp(model.linear_predictor(dm.matrix))
            g = dm.matrix.T @ (Y - mu) / n
            for j, b in enumerate(model.coefficients):
                if b != 0.0:
                    worst = max(worst, abs(g[j] - lam * np.sign(b)))
                else:
                    worst = max(worst, max(0.0, abs(g[j]) - lam))
        probe = 1.01 * lam_max
        null_path = fit_path(dm.matrix, Y, LambdaGrid(probe, np.array([probe])))
        all_null_above = all_null_above and null_path.models[0].active_set == ()
        all_null_above = all_null_above and np.all(
            null_path.models[0].coefficients == 0.0
        )
    ok = worst <= 1e-4 and all_null_above
    assert _verdict(
        4,
        "KKT certificate",
        ok,
        f"worst violation {worst:.2e}, null above ceiling {all_null_above}",
    )


def _profiled_objective(X, Y, lam):
    """Penalized objective over the two slopes with the intercept profiled out.

    For fixed slopes the optimal intercept is log(sum(Y) / sum(exp(X @ b))),
    which this exploits to reduce the search to a plane.
    """
    n = Y.shape[0]
    ysum = Y.sum()
    x1 = X[:, 0][:, None, None]
    x2 = X[:, 1][:, None, None]

    def value(b1_vals, b2_vals):
        eta = x1 * b1_vals[None, :, None] + x2 * b2_vals[None, None, :]
        s = np.exp(eta).sum(axis=0)
        b0 = np.log(ysum / s)
        yeta = (Y[:, None, None] * eta).sum(axis=0)
        ll = ysum * b0 + yeta - ysum
        pen = lam * (np.abs(b1_vals)[:, None] + np.abs(b2_vals)[None, :])
        return ll / n - pen

    return value


def _brute_force_lasso(X, Y, lam):
    """Dense grid plus two zoom stages, then snapping onto the axes."""
    value = _profiled_objective(X, Y, lam)
    b1 = np.arange(-2.0, 2.0 + 1e-12, 0.05)
    b2 = b1.copy()
    f = value(b1, b2)
    i, j = np.unravel_index(np.argmax(f), f.shape)
    c1, c2 = b1[i], b2[j]
    for step, span in ((2e-3, 0.06), (1e-4, 3e-3)):
        b1 = np.arange(c1 - span, c1 + span + 1e-12, step)
        b2 = np.arange(c2 - span, c2 + span + 1e-12, step)
        f = value(b1, b2)
        i, j = np.unravel_index(np.argmax(f), f.shape)
        c1, c2 = b1[i], b2[j]
    best = value(np.array([c1]), np.array([c2]))[0, 0]
    for z1, z2 in ((0.0, c2), (c1, 0.0), (0.0, 0.0)):
        v = value(np.array([z1]), np.array([z2]))[0, 0]
        if v >= best - 1e-13:
            c1, c2, best = z1, z2, v
    return c1, c2


def test_criterion_05_brute_force_oracle_agreement():
    t0 = time.perf_counter()
    worst = 0.0
    for s in range(10):
        rng = np.random.default_rng(300 + s)
        raw = rng.standard_normal((25, 2))
        X = (raw - raw.mean(axis=0)) / raw.std(axis=0)
        beta = np.array([0.5, -0.4]) * rng.uniform(0.5, 1.5)
        Y = rng.poisson(np.exp(0.6 + X @ beta)).astype(np.float64)
        grid = make_grid(compute_lambda_max(X, Y), GridParams(5, 0.05))
        path = fit_path(X, Y, grid)
        for model, lam in zip(path.models, grid.values):
            c1, c2 = _brute_force_lasso(X, Y, lam)
            worst = max(
                worst,
                abs(model.coefficients[0] - c1),
                abs(model.coefficients[1] - c2),
            )
    elapsed = time.perf_counter() - t0
    ok = worst <= 5e-3 and elapsed < 60.0
    assert _verdict(
        5,
        "brute-force oracle agreement",
        ok,
        f"worst gap {worst:.2e}, {elapsed:.1f}s of 60s",
    )


def _planted_design_name(design, descriptor):
    parts = set(descriptor.split(":"))
    for name in design.column_names:
        if set(name.split(":")) == parts:
            return name
    raise AssertionError(f"{descriptor} not found in the design")


@pytest.fixture(scope="module")
def recovery_sweep():
    """Twenty seeded recovery runs shared by the two slowest criteria."""
    t0 = time.perf_counter()
    rows = []
    for s in range(20):
        spec = SynthSpec(
            n=600,
            numeric=7,
            categorical=(3,),
            effects=(("c1=b", 1.15), ("x2:x3", 0.6), ("x4:x5", 0.6)),
            intercept=math.log(4.0),
            seed=1000 + s,
        )
        ds = generate(spec)
        result = run_nested_cv(ds, 10, 10, GridParams(100, 1e-3), seed=s, threads=1)
        truth = set(true_support(spec, result.design))
        selected = set(frequent_variables(result.presence, 0.5).lambda_1se)
        magnitudes = []
        for descriptor, coef in spec.effects:
            name = _planted_design_name(result.design, descriptor)
            j = result.design.column_names.index(name)
            magnitudes.append(abs(coef) * result.design.sds[j])
        dev_consensus = pooled_deviance(
            evaluate_columns(ds, result.plan, tuple(sorted(selected)))
        )
        dev_per_fold = pooled_deviance(result.pooled_min)
        rows.append(
            {
                "recovered": truth <= selected,
                "false_count": len(selected - truth),
                "min_magnitude": min(magnitudes),
                "consensus_not_worse": dev_consensus <= dev_per_fold,
            }
        )
    return {"rows": rows, "elapsed": time.perf_counter() - t0}


def test_criterion_06_support_recovery(recovery_sweep):
    rows = recovery_sweep["rows"]
    elapsed = recovery_sweep["elapsed"]
    hits = sum(r["recovered"] and r["false_count"] <= 2 for r in rows)
    weakest = min(r["min_magnitude"] for r in rows)
    ok = hits >= 18 and weakest >= 0.5 and elapsed < 600.0
    assert _verdict(
        6,
        "support recovery",
        ok,
        f"{hits}/20 seeds, weakest planted magnitude {weakest:.3f}, {elapsed:.0f}s of 600s",
    )


def test_criterion_07_consensus_beats_per_fold_selection(recovery_sweep):
    rows = recovery_sweep["rows"]
    wins = sum(r["consensus_not_worse"] for r in rows)
    ok = wins >= 15
    assert _verdict(7, "consensus beats per-fold selection", ok, f"{wins}/20 seeds")


def test_criterion_08_no_leakage():
    clean = True
    for s in range(5):
        spec = SynthSpec(
            n=150,
            numeric=3,
            categorical=(2,),
            effects=(("x1", 0.5), ("x2:x3", 0.4)),
            intercept=0.8,
            seed=400 + s,
        )
        ds = generate(spec)
        result = run_nested_cv(ds, 5, 3, GridParams(20, 1e-2), seed=s, threads=1)
        for fold in result.folds:
            scratch = Dataset(
                response=np.delete(np.asarray(ds.response), fold.test_rows),
                covariates=tuple(
                    Covariate(c.name, c.kind, np.delete(np.asarray(c.values), fold.test_rows))
                    for c in ds.covariates
                ),
            )
            dm = build_design(scratch)
            lam_max = compute_lambda_max(dm.matrix, scratch.response)
            grid = make_grid(lam_max, GridParams(20, 1e-2))
            clean = (
                clean
                and np.array_equal(dm.means, fold.design.means)
                and np.array_equal(dm.sds, fold.design.sds)
                and np.array_equal(dm.matrix, fold.design.matrix)
                and fold.grid is not None
                and lam_max == fold.grid.lambda_max
                and np.array_equal(grid.values, fold.grid.values)
            )
    assert _verdict(8, "no leakage", clean, "5 seeds, bit-identical rebuilds")


def test_criterion_09_cli_determinism(tmp_path):
    ds = generate(
        SynthSpec(
            n=80,
            numeric=2,
            categorical=(2,),
            effects=(("x1", 0.5), ("c1=b", 0.7)),
            intercept=0.9,
            seed=31,
        )
    )
    save_csv(ds, str(tmp_path / "data.csv"))
    config = {
        "input": "data.csv",
        "response": "count",
        "covariates": {"x1": "numeric", "x2": "numeric", "c1": "categorical"},
        "n_outer": 4,
        "k_inner": 3,
        "grid_size": 15,
        "grid_ratio": 0.01,
        "seed": 5,
        "threads": 1,
    }
    (tmp_path / "config.yaml").write_text(yaml.safe_dump(config))
    for label in ("first", "second"):
        code = main(
            [
                "run",
                str(tmp_path / "config.yaml"),
                "--output-dir",
                str(tmp_path / label),
                "--no-figures",
            ]
        )
        assert code == 0
    identical = all(
        (tmp_path / "first" / name).read_bytes()
        == (tmp_path / "second" / name).read_bytes()
        for name in ("metrics.csv", "predictions.csv")
    )
    assert _verdict(9, "CLI determinism", identical, "metrics.csv and predictions.csv")


def test_criterion_10_metric_definitions():
    perfect = PooledPredictions(
        row_ids=np.arange(4),
        fold_ids=np.zeros(4, dtype=np.int64),
        observed=np.array([1.0, 2.0, 5.0, 3.0]),
        predicted=np.array([1.0, 2.0, 5.0, 3.0]),
        fold_sizes={0: 3},
    )
    perfect_ok = predictive_power(perfect) == 100.0

    boundary = PooledPredictions(
        row_ids=np.arange(2),
        fold_ids=np.zeros(2, dtype=np.int64),
        observed=np.array([1.0, 3.0]),
        predicted=np.array([0.5, 2.5]),
        fold_sizes={0: 3},
    )
    boundary_ok = predictive_power(boundary) == 100.0

    rng = np.random.default_rng(11)
    observed = rng.poisson(2.0, 12).astype(np.float64)
    predicted = rng.uniform(0.5, 3.0, 12)
    fold_ids = np.repeat(np.arange(4), 3)
    pooled = PooledPredictions(
        row_ids=np.arange(12),
        fold_ids=fold_ids,
        observed=observed,
        predicted=predicted,
        fold_sizes={b: 16 for b in range(4)},
    )
    per_fold = [
        poisson_deviance(observed[fold_ids == b], predicted[fold_ids == b])
        for b in range(4)
    ]
    mean_ok = weighted_deviance(pooled) == sum(per_fold) / 4.0

    ok = perfect_ok and boundary_ok and mean_ok
    assert _verdict(
        10,
        "metric definitions",
        ok,
        f"perfect {perfect_ok}, boundary {boundary_ok}, equal-size mean {mean_ok}",
    )
