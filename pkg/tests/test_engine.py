import numpy as np
import pytest

from epr_spatial.assembly import (
    HyperPrior, HyperState, PriorSpec, build_alpha_kappa, build_D, model_from_matrices,
)
from epr_spatial.dy import DYVectorSpec
from epr_spatial.engine import (
    PosteriorReplicates, PredictionTargets, det_log_weights, discrepancy, predict,
    predict_from_draws, replicate_rng, run_epr, sample_replicate, signal_noise_cov,
    signal_noise_cov_dense,
)
from epr_spatial.exceptions import AssemblyError


def gaussian_toy(seed=0, n=3, p=2, r=1):
    rng = np.random.default_rng(seed)
    m = model_from_matrices(rng.standard_normal((n, p)), rng.standard_normal((n, 3 * r)))
    rows = m.dims.n_rows
    vec = DYVectorSpec(rng.standard_normal(rows), rng.uniform(0.3, 2.0, rows))
    return m, vec


def test_replicate_shapes_and_single(toy):
    _, model, hyper, vec = toy
    reps = run_epr(model, vec, hyper, 1, seed=3)
    assert reps.zeta.shape == (1, model.dims.n_cols) and reps.q.shape == (1, model.dims.n)
    z, q, th = sample_replicate(model, vec, hyper, replicate_rng(3, 0))
    np.testing.assert_allclose(reps.zeta[0], z, rtol=1e-13, atol=1e-14)
    np.testing.assert_allclose(reps.q[0], q, rtol=1e-13, atol=1e-14)


def test_zero_w_gives_zero(toy):
    _, model, hyper, vec = toy
    z, q, _ = sample_replicate(model, vec, hyper, np.random.default_rng(0),
                               w_override=np.zeros(len(vec)))
    assert np.all(z == 0) and np.all(q == 0)


def test_determinism_and_threads(toy):
    _, model, hyper, vec = toy
    a = run_epr(model, vec, hyper, 700, seed=9)
    b = run_epr(model, vec, hyper, 700, seed=9, threads=3)
    c = run_epr(model, vec, hyper, 700, seed=9, chunk_size=256)
    assert a.zeta.tobytes() == b.zeta.tobytes() == c.zeta.tobytes()
    assert a.q.tobytes() == b.q.tobytes()
    assert "wall_seconds" in a.timing and a.timing["n_reps"] == 700


def test_batches_are_prefix_consistent(toy):
    _, model, hyper, vec = toy
    a = run_epr(model, vec, hyper, 300, seed=5)
    b = run_epr(model, vec, hyper, 600, seed=5)
    np.testing.assert_array_equal(a.zeta, b.zeta[:300])


def test_gaussian_mean_oracle():
    model, vec = gaussian_toy()
    hyper = HyperState.point_mass(1.3, 0.7, 1.1)
    reps = run_epr(model, vec, hyper, 100_000, seed=1)
    H = model.H
    D = build_D(hyper, model.dims).matrix()
    mean_w, var_w = vec.moments()
    L = np.linalg.solve(H.T @ H, H.T) @ D
    mu = L @ mean_w
    sd = np.sqrt(np.diag(L @ np.diag(var_w) @ L.T))
    assert np.all(np.abs(reps.zeta.mean(axis=0) - mu) <= 4 * sd / np.sqrt(reps.n_reps))


def test_discrepancy_roundtrip(toy):
    ds, model, _, vec = toy
    hyper = HyperState(prior=HyperPrior(*(PriorSpec("log-uniform", (0.5, 2)),) * 3))
    reps = run_epr(model, vec, hyper, 50, seed=2)
    delta = discrepancy(reps, model)
    assert delta.shape == (50, model.dims.n_rows)
    from epr_spatial.assembly import d_diagonal

    back = -(d_diagonal(reps.theta_draws, model.dims) * delta) @ model.Q
    np.testing.assert_allclose(back, reps.q, atol=1e-10)
    pm = run_epr(model, vec, HyperState.point_mass(), 5, seed=2)
    np.testing.assert_array_equal(discrepancy(pm, model), -(pm.q @ model.Q.T))
    zero = PosteriorReplicates(pm.zeta, np.zeros_like(pm.q), pm.theta_draws, 0, pm.dims)
    assert np.all(discrepancy(zero, model) == 0)


def test_signal_noise_cov_dense_agreement(toy):
    _, model, hyper, vec = toy
    a = signal_noise_cov(model, hyper, vec)
    b = signal_noise_cov_dense(model, hyper, vec)
    np.testing.assert_allclose(a, b, atol=1e-12)
    assert np.max(np.abs(a)) > 10 * np.finfo(float).eps * model.dims.n_rows


def test_signal_noise_cov_hand_value():
    # n = p = r = 1 with X = G = 0, so H is 6 x 5
    m = model_from_matrices(np.zeros((1, 1)), np.zeros((1, 3)))
    assert m.H.shape == (6, 5)
    vec = DYVectorSpec(np.zeros(6), np.full(6, 0.5))
    got = signal_noise_cov(m, (1.0, 1.0, 1.0), vec)
    # P is 1/2 [[1, 1], [1, 1]] on rows {0, 5} and the identity elsewhere.
    # With cov(w) = I the product P (I - P) vanishes.
    assert got.shape == (1, 1) and abs(got[0, 0]) < 1e-15
    vec = DYVectorSpec(np.zeros(6), np.array([0.5] * 5 + [0.25]))
    got = signal_noise_cov(m, (1.0, 1.0, 1.0), vec)
    # C = diag(1, 1, 1, 1, 1, 2): -[1/2 * 1 * 1/2 + 1/2 * 2 * (-1/2)] = 1/4
    assert got[0, 0] == pytest.approx(0.25, abs=1e-15)


def test_predict_filters_and_zero(tiny_data, tiny_geometry):
    ds, _ = tiny_data
    from epr_spatial.assembly import assemble

    model = assemble(ds, tiny_geometry.basis)
    d = model.dims
    zeta = np.zeros((3, d.n_cols))
    reps = PosteriorReplicates(zeta, np.zeros((3, d.n)), np.ones((3, 3)), 0, d)
    t = PredictionTargets.from_dataset(ds)
    s = predict(reps, model, t)
    assert np.all(s.y1.mean == 0) and np.all(s.y2.mean == 0)
    np.testing.assert_array_equal(s.prob3.mean, 0.5)
    rng = np.random.default_rng(0)
    z2 = rng.standard_normal(zeta.shape)
    a = predict(PosteriorReplicates(z2, rng.standard_normal((3, d.n)), np.ones((3, 3)), 0, d),
                model, t)
    z3 = z2.copy()
    z3[:, : d.n] = 99.0  # xi block
    b = predict(PosteriorReplicates(z3, np.zeros((3, d.n)), np.ones((3, 3)), 0, d), model, t)
    np.testing.assert_array_equal(a.y1.mean, b.y1.mean)
    np.testing.assert_array_equal(a.prob3.upper, b.prob3.upper)


def test_predict_direct_evaluation(tiny_data, tiny_geometry):
    ds, _ = tiny_data
    basis = tiny_geometry.basis
    dims = ds.dims(basis.r)
    rng = np.random.default_rng(1)
    beta = rng.standard_normal((1, dims.p))
    eta = rng.standard_normal((1, 3 * dims.r))
    t = PredictionTargets.from_dataset(ds)
    s = predict_from_draws(beta, eta, basis, dims, t)
    g1 = basis.g1(ds.points)
    y1 = ds.x1 @ beta[0, : dims.p1] + g1 @ (eta[0, : dims.r] + eta[0, dims.r : 2 * dims.r])
    np.testing.assert_allclose(s.y1.mean, y1, atol=1e-12)
    g2 = basis.g2(ds.regions)
    y2 = ds.x2 @ beta[0, dims.p1 : dims.p1 + dims.p2] + g2 @ (eta[0, : dims.r] + eta[0, 2 * dims.r :])
    np.testing.assert_allclose(s.y2.mean, y2, atol=1e-12)
    y3 = ds.x3 @ beta[0, dims.p1 + dims.p2 :] + basis.g3(ds.points) @ eta[0, : dims.r]
    np.testing.assert_allclose(s.y3.mean, y3, atol=1e-12)
    # a single replicate gives a degenerate band at the value itself
    np.testing.assert_array_equal(s.y1.lower, s.y1.mean)
    np.testing.assert_array_equal(s.y1.upper, s.y1.mean)


def test_predict_bands_ordered(tiny_data, tiny_geometry):
    ds, _ = tiny_data
    from epr_spatial.assembly import assemble

    model = assemble(ds, tiny_geometry.basis)
    hyper = HyperState()
    reps = run_epr(model, build_alpha_kappa(ds, hyper, model.dims), hyper, 500, seed=4)
    s = predict(reps, model, PredictionTargets.from_dataset(ds))
    for r in (s.y1, s.y2, s.y3, s.prob3):
        assert np.all(r.lower <= r.mean) and np.all(r.mean <= r.upper)
    assert np.all((s.prob3.lower >= 0) & (s.prob3.upper <= 1))


def test_predict_covariate_mismatch(tiny_data, tiny_geometry):
    ds, _ = tiny_data
    dims = ds.dims(tiny_geometry.basis.r)
    t = PredictionTargets(points1=ds.points, x1=np.ones((ds.points.shape[0], 2)))
    with pytest.raises(AssemblyError):
        predict_from_draws(np.zeros((1, dims.p)), np.zeros((1, 3 * dims.r)),
                           tiny_geometry.basis, dims, t)


def test_det_weights(toy):
    _, model, _, vec = toy
    pm = run_epr(model, vec, HyperState.point_mass(), 10, seed=0)
    np.testing.assert_allclose(np.exp(det_log_weights(pm)), 0.1)
    wide = HyperState(prior=HyperPrior(*(PriorSpec("log-uniform", (0.5, 2)),) * 3))
    reps = run_epr(model, vec, wide, 200, seed=0)
    lw = det_log_weights(reps)
    assert np.exp(lw).sum() == pytest.approx(1.0)
    d = model.dims
    logdet = np.log(reps.theta_draws) @ np.array([d.p, d.n_basis, d.n])
    assert np.argmax(lw) == np.argmin(logdet)


def test_replicates_validate_shapes(toy):
    _, model, _, _ = toy
    d = model.dims
    with pytest.raises(AssemblyError):
        PosteriorReplicates(np.zeros((2, d.n_cols)), np.zeros((3, d.n)), np.ones((2, 3)), 0, d)
