import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from metashap.errors import DomainError, FormatError
from metashap.regress import (
    ForestModel,
    MlpConfig,
    TrainingDiverged,
    build_tree,
    evaluate,
    fit_forest,
    fit_mlp,
    fit_poly_linear,
    load_model,
    monomial_powers,
    predict,
    r2,
    rmse,
    save_model,
    score,
    tune_forest,
)
from metashap.regress.mlp import forward, init_params, loss_and_grad
from metashap.regress.poly import design_matrix
from metashap.regress.tuning import kfold_indices

finite = st.floats(-1e3, 1e3)


def max_relative_gradient_error(seed):
    """Analytic vs central-difference gradient on a 3-4-4-1 network."""
    rng = np.random.default_rng(seed)
    params = init_params([3, 4, 4, 1], rng)
    X = rng.normal(size=(6, 3))
    y = rng.normal(size=6)
    _, grads = loss_and_grad(params, X, y)
    h = 1e-6
    worst = 0.0
    for p, g in zip(params, grads):
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for k in range(flat.size):
            old = flat[k]
            flat[k] = old + h
            up, _ = loss_and_grad(params, X, y)
            flat[k] = old - h
            down, _ = loss_and_grad(params, X, y)
            flat[k] = old
            fd = (up - down) / (2 * h)
            denom = max(abs(fd), abs(gflat[k]), 1e-6)
            worst = max(worst, abs(fd - gflat[k]) / denom)
    return worst


# Metrics ----------------------------------------------------------------------


def test_metric_examples():
    assert rmse([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert rmse([0.0, 0.0], [3.0, 4.0]) == pytest.approx(3.5355339059327378, rel=1e-15)
    y = np.array([1.0, 4.0, 2.0, 8.0])
    assert r2(y, y) == 1.0
    assert r2(y, np.full(4, y.mean())) == pytest.approx(0.0, abs=1e-15)


def test_metric_errors():
    with pytest.raises(DomainError):
        rmse([1.0, 2.0], [1.0])
    with pytest.raises(DomainError):
        rmse([], [])
    with pytest.raises(DomainError):
        r2([3.0, 3.0], [1.0, 2.0])
    with pytest.raises(DomainError):
        r2([3.0], [3.0])


@settings(max_examples=300)
@given(st.integers(2, 40).flatmap(lambda n: st.tuples(arrays(float, n, elements=finite),
                                                        arrays(float, n, elements=finite))))
def test_metric_identities(pair):
    y, yhat = pair
    n = len(y)
    e = rmse(y, yhat)
    assert e >= 0
    assert e**2 * n == pytest.approx(np.sum((y - yhat) ** 2), rel=1e-9, abs=1e-9)
    if np.ptp(y) > 1e-6:
        base = rmse(y, np.full(n, y.mean()))
        assert r2(y, yhat) == pytest.approx(1 - (e / base) ** 2, rel=1e-9, abs=1e-9)
        assert r2(y, yhat) <= 1.0
        if e == 0.0:
            assert r2(y, yhat) == 1.0
        if r2(y, yhat) == 1.0:
            # 1 - tiny rounds to 1, so exact r2 == 1 only bounds the error ratio
            assert (e / base) ** 2 <= np.finfo(float).eps


def test_score_record():
    m = score([1.0, 2.0, 3.0], [1.0, 2.0, 4.0])
    assert m.n == 3
    assert m.to_dict() == {"rmse": m.rmse, "r2": m.r2, "n": 3}


# Polynomial -----------------------------------------------------------------------


def test_monomial_counts():
    for degree in range(1, 7):
        assert len(monomial_powers(3, degree)) == math.comb(degree + 3, 3)
    assert len(monomial_powers(3, 3)) == 20
    assert monomial_powers(3, 1)[0] == (0, 0, 0)


def test_poly_exact_recovery():
    rng = np.random.default_rng(0)
    X = rng.uniform(0, 5, size=(30, 3))
    y = 2.0 + 3.0 * X[:, 0]
    model = fit_poly_linear(X, y, 1)
    assert np.allclose(model.coefficients, [2.0, 3.0, 0.0, 0.0], atol=1e-8)
    assert model.predict(np.array([[10.0, 1.0, 7.0]]))[0] == pytest.approx(32.0, abs=1e-6)
    assert not model.rank_deficient


def test_poly_degree3_has_20_coefficients():
    rng = np.random.default_rng(1)
    X = rng.uniform(0.1, 10, size=(60, 3))
    model = fit_poly_linear(X, rng.normal(size=60), 3)
    assert len(model.coefficients) == 20


def test_poly_local_optimality():
    rng = np.random.default_rng(2)
    X = rng.uniform(0.1, 10, size=(80, 3))
    y = np.sin(X[:, 0]) + X[:, 1] * X[:, 2] + rng.normal(scale=0.1, size=80)
    model = fit_poly_linear(X, y, 3)
    D = design_matrix(X, monomial_powers(3, 3))
    sse = lambda c: float(np.sum((D @ c - y) ** 2))  # noqa: E731
    best = sse(model.coefficients)
    for _ in range(20):
        k = rng.integers(len(model.coefficients))
        for step in (1e-3, -1e-3):
            c = np.array(model.coefficients, dtype=float)
            c[k] += step
            assert sse(c) >= best * (1 - 1e-12)


def test_poly_rank_deficient_is_flagged():
    X = np.ones((10, 3))
    X[:, 0] = np.arange(10)
    model = fit_poly_linear(X, 2.0 * X[:, 0], 2)
    assert model.rank_deficient
    assert np.allclose(model.predict(X), 2.0 * X[:, 0], atol=1e-8)


def test_poly_degree_bounds():
    for degree in (0, 7):
        with pytest.raises(DomainError):
            fit_poly_linear(np.ones((4, 3)), np.ones(4), degree)


# Forest ---------------------------------------------------------------------------


def data(n=80, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(0, 1, size=(n, 3))
    y = np.sin(6 * X[:, 0]) + X[:, 1] ** 2 + 0.05 * rng.normal(size=n)
    return X, y


def test_constant_target():
    X, _ = data()
    model = fit_forest(X, np.full(len(X), 4.2), max_depth=5, n_estimators=5)
    assert np.all(model.predict(X) == 4.2)


def test_single_tree_memorises():
    X, y = data(50)
    model = fit_forest(X, y, max_depth=None, n_estimators=1, bootstrap=False)
    m = evaluate(model, X, y)
    assert m.rmse == 0.0 and m.r2 == 1.0


def test_forest_is_deterministic_across_workers():
    X, y = data()
    a = fit_forest(X, y, max_depth=6, n_estimators=12, master_seed=3, jobs=1)
    b = fit_forest(X, y, max_depth=6, n_estimators=12, master_seed=3, jobs=2)
    Xq = np.random.default_rng(9).uniform(0, 1, size=(40, 3))
    assert np.array_equal(a.predict(Xq), b.predict(Xq))
    assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())


def test_forest_averages_trees_and_respects_bounds():
    X, y = data()
    model = fit_forest(X, y, max_depth=4, n_estimators=15, master_seed=1)
    Xq = np.random.default_rng(4).uniform(-0.5, 1.5, size=(100, 3))
    per_tree = model.tree_predictions(Xq)
    assert np.allclose(model.predict(Xq), per_tree.mean(axis=0), rtol=0, atol=1e-12)
    assert np.all(model.predict(Xq) >= y.min()) and np.all(model.predict(Xq) <= y.max())
    assert all(t.depth <= 4 for t in model.trees)


def test_tree_split_reduces_error():
    X, y = data(60)
    stump = build_tree(X, y, max_depth=1)
    assert stump.depth == 1
    assert rmse(y, stump.predict(X)) < rmse(y, np.full(len(y), y.mean()))


def test_forest_argument_checks():
    X, y = data(10)
    with pytest.raises(DomainError):
        fit_forest(X, y, max_depth=0)
    with pytest.raises(DomainError):
        fit_forest(X, y, n_estimators=0)


# Tuning ---------------------------------------------------------------------------


def test_tune_single_point_grid():
    X, y = data()
    result = tune_forest(X, y, [3], [4], folds=3)
    assert (result.best_depth, result.best_n_estimators) == (3, 4)


def test_tune_ties_prefer_simpler_models():
    X, _ = data()
    result = tune_forest(X, np.ones(len(X)), [2, 4, 8], [3, 6], folds=3)
    assert (result.best_depth, result.best_n_estimators) == (2, 3)


def test_more_trees_do_not_hurt():
    X, y = data(120, seed=7)
    for seed in range(5):
        cv = tune_forest(X, y, [6], [5, 20, 60], folds=4, master_seed=seed).cv_rmse[0]
        assert cv[1] <= cv[0] * 1.05 and cv[2] <= cv[1] * 1.05


def test_kfold_partitions():
    parts = kfold_indices(23, 5, 0)
    assert sorted(np.concatenate(parts).tolist()) == list(range(23))
    with pytest.raises(DomainError):
        kfold_indices(3, 5, 0)


def test_tune_report_shape():
    X, y = data()
    result = tune_forest(X, y, [2, 5], [2, 4, 8], folds=3)
    d = result.to_dict()
    assert np.array(d["cv_rmse"]).shape == (2, 3)
    assert [p["max_depth"] for p in d["depth_curve"]] == [2, 5]
    assert [p["n_estimators"] for p in d["estimator_curve"]] == [2, 4, 8]


# MLP ------------------------------------------------------------------------------


def test_zero_epochs_is_initialisation():
    X, y = data(20)
    cfg = MlpConfig(hidden=(8, 8), epochs=0, seed=4, log_inputs=())
    model = fit_mlp(X, y, config=cfg)
    params = init_params([3, 8, 8, 1], np.random.default_rng(4))
    expected, _ = forward(params, model.scaler.transform(X))
    assert np.array_equal(model.predict(X), expected)
    assert model.history["train"] == []


@pytest.mark.parametrize("seed", range(10))
def test_gradient_matches_finite_differences(seed):
    assert max_relative_gradient_error(seed) <= 1e-5


def test_training_reduces_loss_tenfold():
    x = np.linspace(0.0, 1.0, 64)[:, None]
    y = 50.0 + 40.0 * np.sin(2 * np.pi * x[:, 0])
    X = np.hstack([x, np.ones_like(x), np.ones_like(x)])
    cfg = MlpConfig(hidden=(16, 16), learning_rate=0.01, epochs=1500, log_inputs=())
    model = fit_mlp(X, y, config=cfg)
    assert model.history["train"][-1] * 10 <= model.history["train"][0]


def test_divergence_raises_with_history():
    X, y = data(20)
    cfg = MlpConfig(hidden=(8, 8), optimizer="sgd", learning_rate=1e6, epochs=50, log_inputs=())
    with pytest.raises(TrainingDiverged) as info:
        fit_mlp(X, y * 1e6, config=cfg)
    assert isinstance(info.value.history["train"], list)


def test_mlp_records_validation_history_and_sgd_batches():
    X, y = data(40)
    cfg = MlpConfig(hidden=(4, 4), optimizer="sgd", learning_rate=1e-3, epochs=3, batch_size=16)
    model = fit_mlp(X[:30], y[:30], X[30:], y[30:], cfg)
    assert len(model.history["train"]) == 3 and len(model.history["validation"]) == 3


def test_mlp_argument_checks():
    X, y = data(10)
    with pytest.raises(DomainError):
        fit_mlp(X, y, config=MlpConfig(learning_rate=0.0))
    with pytest.raises(DomainError):
        fit_mlp(X, y, config=MlpConfig(optimizer="lbfgs"))
    with pytest.raises(DomainError):
        fit_mlp(-X, y, config=MlpConfig(epochs=1))  # log input must be positive


# Persistence ----------------------------------------------------------------------


@pytest.mark.parametrize("kind", ["poly", "forest", "mlp"])
def test_model_round_trip(tmp_path, kind):
    X, y = data(40)
    X = X + 0.1
    if kind == "poly":
        model = fit_poly_linear(X, y, 3)
    elif kind == "forest":
        model = fit_forest(X, y, max_depth=4, n_estimators=3)
    else:
        model = fit_mlp(X, y, config=MlpConfig(hidden=(5, 5), epochs=5))
    save_model(tmp_path / "m.json", model, {"target": "cutoff"})
    back, meta = load_model(tmp_path / "m.json")
    assert meta == {"target": "cutoff"}
    assert np.array_equal(predict(back, X), predict(model, X))
    save_model(tmp_path / "again.json", back, {"target": "cutoff"})
    assert (tmp_path / "again.json").read_bytes() == (tmp_path / "m.json").read_bytes()
    if kind == "forest":
        assert isinstance(back, ForestModel)


def test_load_model_errors(tmp_path):
    path = tmp_path / "m.json"
    path.write_text("{ not json")
    with pytest.raises(FormatError):
        load_model(path)
    path.write_text(json.dumps({"format": "other"}))
    with pytest.raises(FormatError):
        load_model(path)
    path.write_text(json.dumps({"format": "metashap-model", "version": 1, "model": {"kind": "svm"}}))
    with pytest.raises(FormatError):
        load_model(path)


@pytest.mark.slow
def test_bragg_cutoff_depth_optimum(bragg_dataset):
    from metashap.dataset import split

    ds = split(bragg_dataset, 0.2, 0.2, 0)
    idx = np.sort(np.concatenate([ds.split_.train, ds.split_.validation]))
    result = tune_forest(ds.features[idx], ds.targets[idx, 0], range(2, 15), [20], folds=5)
    assert 8 <= result.best_depth <= 14
