import math

import numpy as np
import pytest

from sgdstab.models import (
    Dataset,
    Example,
    LogisticModel,
    OracleLimitError,
    QuadraticModel,
    TanhMlpModel,
    dense_hessian,
    make_model,
)

from conftest import blob_dataset, finite_difference_gradient, random_example, random_psd


# ----------------------------------------------------------------------
# dataset plumbing
# ----------------------------------------------------------------------


def test_dataset_rejects_empty_and_ragged():
    with pytest.raises(ValueError):
        Dataset(np.zeros((0, 2)), np.zeros(0))
    with pytest.raises(ValueError):
        Dataset.from_examples([])
    with pytest.raises(ValueError):
        Dataset.from_examples([Example(np.zeros(2), 0.0), Example(np.zeros(3), 1.0)])


def test_example_rejects_nonfinite():
    with pytest.raises(ValueError):
        Example(np.array([1.0, np.nan]), 0.0)
    with pytest.raises(ValueError):
        Example(np.array([1.0]), math.inf)


def test_dataset_csv_roundtrip(tmp_path):
    ds = blob_dataset(seed=3, m=17, d=4)
    path = tmp_path / "data.csv"
    ds.to_csv(path)
    header = path.read_text().splitlines()[0]
    assert header == "f0,f1,f2,f3,y"
    back = Dataset.from_csv(path)
    np.testing.assert_array_equal(back.features, ds.features)
    np.testing.assert_array_equal(back.labels, ds.labels)


def test_dataset_replace_keeps_other_rows_bitwise():
    ds = blob_dataset(seed=5, m=10, d=3)
    z = Example(np.array([9.0, 9.0, 9.0]), 1.0)
    swapped = ds.replace(4, z)
    assert swapped.m == ds.m
    np.testing.assert_array_equal(swapped.features[4], z.features)
    mask = np.arange(10) != 4
    assert np.array_equal(swapped.features[mask], ds.features[mask])
    assert np.array_equal(swapped.labels[mask], ds.labels[mask])


# ----------------------------------------------------------------------
# loss values
# ----------------------------------------------------------------------


def test_logistic_loss_at_zero_is_ln2(logistic3, rng):
    w = np.zeros(3)
    for _ in range(5):
        z = random_example(rng, 3)
        assert math.isclose(logistic3.loss(w, z), math.log(2.0), rel_tol=1e-12)


def test_quadratic_loss_zero_at_center():
    model = QuadraticModel(np.eye(3))
    x = np.array([0.3, -1.2, 2.0])
    assert model.loss(x, Example(x, 0.0)) == 0.0


def test_mlp_loss_matches_straight_line_hand_evaluation():
    # fixed small weights, fixed input; recompute the two-layer composition
    # with scalar arithmetic, independent of the model code paths
    model = TanhMlpModel(dim=2, hidden=2, output="tanh")
    W = np.array([[0.1, -0.2], [0.3, 0.05]])
    v = np.array([0.5, -0.4])
    w = model.pack(W, v)
    x = np.array([1.0, 2.0])
    y = 0.25

    h1 = math.tanh(0.1 * 1.0 + (-0.2) * 2.0)
    h2 = math.tanh(0.3 * 1.0 + 0.05 * 2.0)
    s = 0.5 * h1 + (-0.4) * h2
    yhat = math.tanh(s)
    expected = 0.25 * (yhat - y) ** 2

    assert math.isclose(model.loss(w, Example(x, y)), expected, rel_tol=1e-14)


def test_losses_nonnegative_everywhere(rng, logistic3, quad3, mlp_small):
    for model, lk in ((logistic3, "binary"), (quad3, "real"), (mlp_small, "tanh")):
        for _ in range(50):
            w = rng.standard_normal(model.param_dim)
            dim = model.param_dim if model is not mlp_small else 4
            z = random_example(rng, dim, lk)
            assert model.loss(w, z) >= 0.0


# ----------------------------------------------------------------------
# gradients
# ----------------------------------------------------------------------


def test_logistic_grad_at_zero(logistic3, rng):
    w = np.zeros(3)
    z = random_example(rng, 3)
    np.testing.assert_allclose(logistic3.grad(w, z), (0.5 - z.label) * z.features, rtol=1e-12)


def test_quadratic_grad_is_Aw():
    A = np.diag([3.0, 1.0])
    model = QuadraticModel(A)
    w = np.array([2.0, -1.0])
    np.testing.assert_allclose(model.grad(w, Example(np.zeros(2), 0.0)), A @ w, rtol=1e-14)


@pytest.mark.parametrize("fixture_name,label_kind", [
    ("logistic3", "binary"), ("quad3", "real"), ("mlp_small", "tanh"), ("mlp_linear", "real"),
])
def test_grad_matches_finite_differences(request, rng, fixture_name, label_kind):
    model = request.getfixturevalue(fixture_name)
    zdim = {"logistic3": 3, "quad3": 3, "mlp_small": 4, "mlp_linear": 3}[fixture_name]
    for _ in range(20):
        w = rng.standard_normal(model.param_dim)
        z = random_example(rng, zdim, label_kind)
        g = model.grad(w, z)
        fd = finite_difference_gradient(model, w, z)
        np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-7)


def test_dimension_mismatch_raises(logistic3):
    with pytest.raises(ValueError):
        logistic3.loss(np.zeros(4), Example(np.zeros(3), 1.0))
    with pytest.raises(ValueError):
        logistic3.grad(np.zeros(3), Example(np.zeros(2), 1.0))
    with pytest.raises(ValueError):
        logistic3.hvp(np.zeros(3), Example(np.zeros(3), 1.0), np.zeros(2))


# ----------------------------------------------------------------------
# Hessian-vector products and the dense oracle
# ----------------------------------------------------------------------


def test_quadratic_hvp_is_Av(rng):
    A = random_psd(rng, 4)
    model = QuadraticModel(A)
    v = rng.standard_normal(4)
    np.testing.assert_allclose(
        model.hvp(rng.standard_normal(4), Example(np.zeros(4), 0.0), v), A @ v, rtol=1e-12
    )


def test_hvp_zero_direction_gives_zero(rng, mlp_small):
    w = rng.standard_normal(mlp_small.param_dim)
    z = random_example(rng, 4, "tanh")
    np.testing.assert_array_equal(mlp_small.hvp(w, z, np.zeros(mlp_small.param_dim)), 0.0)


@pytest.mark.parametrize("fixture_name,zdim,label_kind", [
    ("logistic3", 3, "binary"), ("mlp_small", 4, "tanh"), ("mlp_linear", 3, "real"),
])
def test_hvp_matches_dense_hessian(request, rng, fixture_name, zdim, label_kind):
    model = request.getfixturevalue(fixture_name)
    for _ in range(10):
        w = rng.standard_normal(model.param_dim)
        z = random_example(rng, zdim, label_kind)
        H = dense_hessian(model, w, z)
        v = rng.standard_normal(model.param_dim)
        np.testing.assert_allclose(model.hvp(w, z, v), H @ v, rtol=1e-6, atol=1e-12)


def test_hvp_linearity(rng, mlp_small):
    w = rng.standard_normal(mlp_small.param_dim)
    z = random_example(rng, 4, "tanh")
    v = rng.standard_normal(mlp_small.param_dim)
    u = rng.standard_normal(mlp_small.param_dim)
    a, b = 1.7, -0.3
    lhs = mlp_small.hvp(w, z, a * v + b * u)
    rhs = a * mlp_small.hvp(w, z, v) + b * mlp_small.hvp(w, z, u)
    np.testing.assert_allclose(lhs, rhs, atol=1e-10)


def test_hvp_symmetry(rng, logistic3, quad3, mlp_small):
    for model, zdim, lk in ((logistic3, 3, "binary"), (quad3, 3, "real"), (mlp_small, 4, "tanh")):
        for _ in range(10):
            w = rng.standard_normal(model.param_dim)
            z = random_example(rng, zdim, lk)
            u = rng.standard_normal(model.param_dim)
            v = rng.standard_normal(model.param_dim)
            lhs = u @ model.hvp(w, z, v)
            rhs = v @ model.hvp(w, z, u)
            assert abs(lhs - rhs) <= 1e-9 * max(1.0, abs(lhs))


def test_dense_hessian_symmetric_and_refuses_big(rng, mlp_small):
    w = rng.standard_normal(mlp_small.param_dim)
    z = random_example(rng, 4, "tanh")
    H = dense_hessian(mlp_small, w, z)
    assert np.abs(H - H.T).max() <= 1e-10
    with pytest.raises(OracleLimitError):
        dense_hessian(mlp_small, w, z, max_dim=10)


def test_dense_hessian_quadratic_returns_A(rng):
    A = random_psd(rng, 5)
    model = QuadraticModel(A)
    H = dense_hessian(model, rng.standard_normal(5), Example(np.zeros(5), 0.0))
    np.testing.assert_allclose(H, A, rtol=1e-12)


def test_dense_hessian_logistic_closed_form(rng):
    model = LogisticModel(dim=2)
    w = np.array([0.4, -0.7])
    x = np.array([1.3, 0.2])
    z = Example(x, 1.0)
    s = w @ x
    sig = 1.0 / (1.0 + math.exp(-s))
    expected = sig * (1.0 - sig) * np.outer(x, x)
    np.testing.assert_allclose(dense_hessian(model, w, z), expected, rtol=1e-10)


# ----------------------------------------------------------------------
# declared constants
# ----------------------------------------------------------------------


def test_logistic_constants_unit_norm():
    X = np.array([[1.0, 0.0], [0.0, -1.0]])
    ds = Dataset(X, np.array([0.0, 1.0]))
    consts = LogisticModel(dim=2).declared_constants(ds)
    assert consts.L == 1.0
    assert consts.beta == 0.25
    assert math.isclose(consts.rho, 1.0 / (6.0 * math.sqrt(3.0)), rel_tol=1e-12)
    assert consts.loss_upper_bound is None


def test_quadratic_constants_diag():
    model = QuadraticModel(np.diag([3.0, 1.0]))
    ds = Dataset(np.zeros((1, 2)), np.zeros(1))
    consts = model.declared_constants(ds)
    assert consts.L is None  # unbounded gradient sentinel
    assert math.isclose(consts.beta, 3.0, rel_tol=1e-12)
    assert consts.rho == 0.0


def test_quadratic_constants_with_domain_radius():
    model = QuadraticModel(np.diag([2.0, 1.0]), domain_radius=3.0)
    ds = Dataset(np.array([[1.0, 0.0]]), np.zeros(1))
    consts = model.declared_constants(ds)
    assert math.isclose(consts.L, 2.0 * (3.0 + 1.0), rel_tol=1e-12)
    assert consts.loss_upper_bound is not None


def test_logistic_declared_beta_dominates_hessians_on_grid(rng):
    ds = blob_dataset(seed=11, m=25, d=3)
    model = LogisticModel(dim=3)
    beta = model.declared_constants(ds).beta
    worst = 0.0
    for _ in range(40):
        w = rng.standard_normal(3) * 2.0
        for z in ds.examples():
            H = dense_hessian(model, w, z)
            worst = max(worst, float(np.abs(np.linalg.eigvalsh(H)).max()))
    assert worst <= beta + 1e-9


def test_mlp_constants_sentinel_and_box():
    ds = Dataset(np.array([[1.0, 0.5, 0.0, 0.0]]), np.array([0.5]))
    bare = TanhMlpModel(dim=4, hidden=6).declared_constants(ds)
    assert bare.note == "empirical"
    assert bare.L is None and bare.beta is None
    assert bare.loss_upper_bound is not None and bare.loss_upper_bound <= 1.0

    boxed = TanhMlpModel(dim=4, hidden=6, box_radius=2.0).declared_constants(ds)
    assert boxed.note == "box"
    assert boxed.L > 0 and boxed.beta > 0 and boxed.rho > 0


def test_mlp_box_beta_dominates_sampled_hessians(rng):
    ds = blob_dataset(seed=2, m=10, d=4)
    model = TanhMlpModel(dim=4, hidden=6, output="tanh", box_radius=2.0)
    beta = model.declared_constants(ds).beta
    for _ in range(20):
        w = rng.standard_normal(model.param_dim)
        w *= min(1.0, 2.0 / np.linalg.norm(w))
        z = random_example(rng, 4, "tanh")
        H = dense_hessian(model, w, z)
        assert float(np.abs(np.linalg.eigvalsh(H)).max()) <= beta + 1e-9


# ----------------------------------------------------------------------
# structural lemmas
# ----------------------------------------------------------------------


def test_self_boundedness_all_models(rng):
    """||grad f||^2 <= 2 beta f for every smooth non-negative built-in."""
    ds = blob_dataset(seed=9, m=30, d=3)
    logistic = LogisticModel(dim=3)
    beta_log = logistic.declared_constants(ds).beta
    quad = QuadraticModel(random_psd(np.random.default_rng(3), 3))
    beta_quad = quad.declared_constants(ds).beta
    mlp = TanhMlpModel(dim=3, hidden=5, output="tanh", box_radius=3.0)
    mds = Dataset(ds.features, np.tanh(ds.labels))
    beta_mlp = mlp.declared_constants(mds).beta

    cases = [
        (logistic, beta_log, 3, "binary"),
        (quad, beta_quad, 3, "real"),
        (mlp, beta_mlp, 3, "tanh"),
    ]
    for model, beta, zdim, lk in cases:
        for _ in range(1000):
            w = rng.standard_normal(model.param_dim)
            if model is mlp:
                w *= min(1.0, 3.0 / np.linalg.norm(w))
            z = random_example(rng, zdim, lk)
            g2 = float(np.dot(model.grad(w, z), model.grad(w, z)))
            assert g2 <= 2.0 * beta * model.loss(w, z) + 1e-9


def test_logistic_convexity_first_order(rng):
    model = LogisticModel(dim=4)
    for _ in range(200):
        w = rng.standard_normal(4)
        wp = rng.standard_normal(4)
        z = random_example(rng, 4, "binary")
        lhs = model.loss(wp, z)
        rhs = model.loss(w, z) + model.grad(w, z) @ (wp - w)
        assert lhs >= rhs - 1e-9


def test_batch_paths_match_scalar_paths(rng, logistic3, quad3, mlp_small):
    ds = blob_dataset(seed=21, m=12, d=3)
    mds = Dataset(np.random.default_rng(0).standard_normal((12, 4)),
                  np.tanh(np.random.default_rng(1).standard_normal(12)))
    for model, data in ((logistic3, ds), (quad3, ds), (mlp_small, mds)):
        w = rng.standard_normal(model.param_dim)
        losses = np.array([model.loss(w, z) for z in data.examples()])
        grads = np.stack([model.grad(w, z) for z in data.examples()])
        np.testing.assert_allclose(model.batch_losses(w, data), losses, rtol=1e-12)
        np.testing.assert_allclose(model.batch_grads(w, data), grads, rtol=1e-12, atol=1e-14)


def test_make_model_dispatch():
    assert make_model("logistic", dim=3).param_dim == 3
    assert make_model("quadratic", A=[[2.0, 0.0], [0.0, 1.0]]).param_dim == 2
    assert make_model("tanh_mlp", dim=2, hidden=3).param_dim == 9
    with pytest.raises(ValueError):
        make_model("mystery")
