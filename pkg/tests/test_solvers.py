import numpy as np
import pytest

from rso_invert.degrade import DegradeConfig, degrade, gaussian_kernel
from rso_invert.image import ImageGray
from rso_invert.operator import make_operator
from rso_invert.solvers import (arnoldi, arnoldi_tikhonov, discrepancy_select,
                                gk_tikhonov, golub_kahan, hybrid_gmres,
                                projected_tikhonov)


def delta_kernel(side=3):
    k = np.zeros((side, side), dtype=np.float32)
    k[side // 2, side // 2] = 1.0
    return ImageGray(k)


def random_kernel(rng, side=3):
    k = rng.random((side, side))
    return ImageGray((k / k.sum()).astype(np.float32))


def dense_materialize(op):
    n = op.n
    a = np.zeros((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        a[:, j] = op.apply(e)
    return a


def dense_tikhonov(a, b, lam):
    """SVD-based direct Tikhonov solve (oracle)."""
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    f = s / (s * s + lam * lam)
    return vt.T @ (f * (u.T @ b))


# ---------------------------------------------------------------- arnoldi


def test_arnoldi_identity_breaks_down_immediately():
    op = make_operator(delta_kernel(), 6, 6)
    rng = np.random.default_rng(0)
    b = rng.standard_normal(36)
    basis = arnoldi(op, b, 5)
    assert basis.breakdown
    assert basis.H.shape == (2, 1)
    assert abs(basis.H[0, 0] - 1.0) < 1e-12
    assert abs(basis.H[1, 0]) < 1e-10


def test_arnoldi_relation_residual():
    rng = np.random.default_rng(1)
    op = make_operator(random_kernel(rng), 16, 16)
    b = rng.standard_normal(256)
    k = 10
    basis = arnoldi(op, b, k)
    assert not basis.breakdown
    av = np.column_stack([op.apply(basis.V[:, j]) for j in range(k)])
    resid = np.linalg.norm(av - basis.V @ basis.H)
    assert resid <= 1e-8 * np.linalg.norm(av)


def test_arnoldi_orthogonality_with_reorth():
    rng = np.random.default_rng(2)
    op = make_operator(random_kernel(rng, 5), 16, 16)
    b = rng.standard_normal(256)
    basis = arnoldi(op, b, 20)
    gram = basis.V.T @ basis.V
    assert np.max(np.abs(gram - np.eye(gram.shape[0]))) <= 1e-10


def test_arnoldi_zero_rhs_rejected():
    op = make_operator(delta_kernel(), 4, 4)
    with pytest.raises(ValueError):
        arnoldi(op, np.zeros(16), 3)


# ------------------------------------------------------------ golub-kahan


def test_gkb_relation_residuals():
    rng = np.random.default_rng(3)
    op = make_operator(random_kernel(rng), 16, 16)
    b = rng.standard_normal(256)
    k = 8
    basis = golub_kahan(op, b, k)
    av = np.column_stack([op.apply(basis.V[:, j]) for j in range(basis.V.shape[1])])
    resid = np.linalg.norm(av - basis.U @ basis.B)
    assert resid <= 1e-8 * np.linalg.norm(av)
    gram_u = basis.U.T @ basis.U
    gram_v = basis.V.T @ basis.V
    assert np.max(np.abs(gram_u - np.eye(gram_u.shape[0]))) <= 1e-8
    assert np.max(np.abs(gram_v - np.eye(gram_v.shape[0]))) <= 1e-8


def test_gkb_matches_dense_lanczos_on_symmetric_operator():
    # B^T B must reproduce the Lanczos tridiagonal of A^T A built densely
    rng = np.random.default_rng(4)
    op = make_operator(gaussian_kernel(1.0, 3), 8, 8)
    b = rng.standard_normal(64)
    k = 6
    basis = golub_kahan(op, b, k)
    bt_b = basis.B.T @ basis.B

    a = dense_materialize(op)
    ata = a.T @ a
    # dense Lanczos on A^T A started from A^T b
    q = a.T @ b
    q /= np.linalg.norm(q)
    qs = [q]
    alphas, betas = [], []
    for j in range(k):
        w = ata @ qs[j]
        alpha = float(qs[j] @ w)
        alphas.append(alpha)
        w = w - alpha * qs[j] - (betas[-1] * qs[j - 1] if betas else 0)
        for prev in qs:  # full reorthogonalization
            w -= (prev @ w) * prev
        beta = float(np.linalg.norm(w))
        if j < k - 1:
            betas.append(beta)
            qs.append(w / beta)
    tri = np.diag(alphas) + np.diag(betas, 1) + np.diag(betas, -1)
    np.testing.assert_allclose(bt_b, tri, atol=1e-8)


def test_gkb_truncates_at_problem_dimension():
    rng = np.random.default_rng(5)
    op = make_operator(random_kernel(rng), 4, 4)
    b = rng.standard_normal(16)
    basis = golub_kahan(op, b, 64)
    assert basis.breakdown
    assert basis.V.shape[1] <= 16
    # projected problem still exact at the invariant subspace
    av = np.column_stack([op.apply(basis.V[:, j]) for j in range(basis.V.shape[1])])
    resid = np.linalg.norm(av - basis.U @ basis.B)
    assert resid <= 1e-8 * max(np.linalg.norm(av), 1.0)


# ------------------------------------------------------- projected solves


def test_projected_tikhonov_lambda_zero_is_least_squares():
    rng = np.random.default_rng(6)
    m = rng.standard_normal((7, 4))
    beta = 2.5
    y = projected_tikhonov(m, beta, 0.0)
    rhs = np.zeros(7)
    rhs[0] = beta
    want, *_ = np.linalg.lstsq(m, rhs, rcond=None)
    np.testing.assert_allclose(y, want, atol=1e-12)


def test_projected_tikhonov_large_lambda_shrinks():
    rng = np.random.default_rng(7)
    m = rng.standard_normal((6, 3))
    beta = 2.0
    lam = 1e6
    y = projected_tikhonov(m, beta, lam)
    assert np.linalg.norm(y) <= beta / lam


def test_projected_tikhonov_scalar_closed_form():
    y = projected_tikhonov(np.array([[1.0]]), 2.0, 1.0)
    assert abs(y[0] - 1.0) < 1e-12  # 2 / (1 + 1)


def test_projected_tikhonov_matches_dense_formula():
    rng = np.random.default_rng(8)
    m = rng.standard_normal((9, 5))
    beta = 1.7
    for lam in (1e-3, 0.1, 1.0, 10.0):
        y = projected_tikhonov(m, beta, lam)
        rhs = np.zeros(9)
        rhs[0] = beta
        want = np.linalg.solve(m.T @ m + lam * lam * np.eye(5), m.T @ rhs)
        np.testing.assert_allclose(y, want, atol=1e-9)


# ---------------------------------------------------- discrepancy select


def test_discrepancy_scalar_closed_form():
    # x = 2/(1+lam^2); residual |x-2| = 1 at lam = 1
    sel = discrepancy_select(np.array([[1.0]]), 2.0, 1.0, eta=1.0)
    assert sel.converged
    assert abs(sel.lam - 1.0) < 2e-3
    assert abs(sel.y[0] - 1.0) < 2e-3


def test_discrepancy_zero_delta_returns_unregularized():
    rng = np.random.default_rng(9)
    m = rng.standard_normal((5, 3))
    sel = discrepancy_select(m, 1.0, 0.0)
    assert sel.lam == 0.0
    rhs = np.zeros(5)
    rhs[0] = 1.0
    want, *_ = np.linalg.lstsq(m, rhs, rcond=None)
    np.testing.assert_allclose(sel.y, want, atol=1e-12)


def test_discrepancy_unreachable_noise_flagged():
    # a tall consistent-free system whose best residual exceeds the target
    m = np.array([[1.0], [1.0]])
    # phi(0): minimize ||(y, y) - (2, 0)|| -> y=1, residual sqrt(2)
    sel = discrepancy_select(m, 2.0, 0.1, eta=1.0)
    assert sel.status == "unreachable"
    assert sel.lam == 0.0


def test_discrepancy_upper_bound_when_delta_huge():
    rng = np.random.default_rng(10)
    m = rng.standard_normal((5, 3))
    sel = discrepancy_select(m, 1.0, 50.0)
    assert sel.status == "upper_bound"
    assert np.linalg.norm(sel.y) < 1e-8


def test_discrepancy_phi_monotone():
    rng = np.random.default_rng(11)
    for _ in range(5):
        m = rng.standard_normal((10, 8))
        beta = float(rng.uniform(0.5, 3.0))
        rhs = np.zeros(10)
        rhs[0] = beta
        phis = []
        for lam in np.logspace(-6, 6, 20):
            y = projected_tikhonov(m, beta, lam)
            phis.append(float(np.linalg.norm(m @ y - rhs)))
        assert all(b >= a - 1e-12 for a, b in zip(phis, phis[1:]))


# ------------------------------------------------------------ end-to-end


def test_arnoldi_tikhonov_identity_zero_delta():
    op = make_operator(delta_kernel(), 8, 8)
    rng = np.random.default_rng(12)
    b = rng.standard_normal(64)
    sol = arnoldi_tikhonov(op, b, k=20, delta=0.0)
    np.testing.assert_allclose(sol.x, b, atol=1e-8)
    assert sol.alpha == sol.lam ** 2


def test_arnoldi_tikhonov_discrepancy_bracketing():
    rng = np.random.default_rng(13)
    kernel = gaussian_kernel(1.5, 7)
    truth = ImageGray(rng.random((16, 16)).astype(np.float32))
    cfg = DegradeConfig(kernel=kernel, noise_sigma=0.02, background_level=0.0,
                        seed=3)
    observed, rec = degrade(truth, cfg)
    op = make_operator(kernel, 16, 16)
    b = observed.data.astype(np.float64).reshape(-1)
    eta = 1.01
    sol = arnoldi_tikhonov(op, b, k=20, delta=rec.noise_norm, eta=eta)
    assert sol.converged
    target = eta * rec.noise_norm
    assert abs(sol.residual_norm - target) / target < 0.10


def test_hybrid_gmres_history_finite_and_recorded():
    rng = np.random.default_rng(14)
    op = make_operator(random_kernel(rng, 5), 12, 12)
    b = rng.standard_normal(144)
    sol = hybrid_gmres(op, b, k_max=12, delta=0.05 * np.linalg.norm(b))
    assert len(sol.history) == sol.iterations
    assert all(np.isfinite(r) and np.isfinite(l) for r, l in sol.history)


def test_hybrid_gmres_stabilization_floor_on_huge_delta():
    rng = np.random.default_rng(15)
    op = make_operator(random_kernel(rng, 5), 12, 12)
    b = rng.standard_normal(144)
    sol = hybrid_gmres(op, b, k_max=20, delta=2.0 * np.linalg.norm(b))
    assert sol.iterations == 3
    assert sol.status == "upper_bound"


def test_hybrid_gmres_full_run_flag():
    rng = np.random.default_rng(16)
    op = make_operator(random_kernel(rng, 5), 12, 12)
    b = rng.standard_normal(144)
    sol = hybrid_gmres(op, b, k_max=9, delta=0.05 * np.linalg.norm(b),
                       early_stop=False)
    assert sol.iterations == 9
    assert len(sol.history) == 9


def test_gk_tikhonov_zero_rhs():
    op = make_operator(delta_kernel(), 8, 8)
    sol = gk_tikhonov(op, np.zeros(64), k=10, delta=0.0)
    assert np.all(sol.x == 0)


def test_gk_tikhonov_full_space_matches_dense_oracle():
    rng = np.random.default_rng(17)
    kernel = random_kernel(rng, 5)
    op = make_operator(kernel, 16, 16)
    truth = rng.random(256)
    noise = rng.standard_normal(256) * 0.01
    b = op.apply(truth) + noise
    delta = float(np.linalg.norm(noise))
    sol = gk_tikhonov(op, b, k=256, delta=delta)
    a = dense_materialize(op)
    want = dense_tikhonov(a, b, sol.lam)
    rel = np.linalg.norm(sol.x - want) / np.linalg.norm(want)
    assert rel < 1e-4


def test_lifted_solution_lies_in_krylov_span():
    rng = np.random.default_rng(18)
    op = make_operator(random_kernel(rng, 5), 12, 12)
    b = rng.standard_normal(144)
    for sol, basis_getter in (
        (arnoldi_tikhonov(op, b, k=8, delta=0.1), lambda: arnoldi(op, b, 8)),
        (gk_tikhonov(op, b, k=8, delta=0.1), lambda: golub_kahan(op, b, 8)),
    ):
        basis = basis_getter()
        v = basis.V
        proj = v @ (v.T @ sol.x)
        assert np.linalg.norm(sol.x - proj) <= 1e-8 * max(np.linalg.norm(sol.x), 1e-30)


def test_gmres_residual_orthogonal_to_constraint_space():
    # with lam = 0 the GMRES residual is orthogonal to A K_k
    rng = np.random.default_rng(19)
    op = make_operator(random_kernel(rng, 3), 8, 8)
    b = rng.standard_normal(64)
    k = 6
    basis = arnoldi(op, b, k)
    y = projected_tikhonov(basis.H, basis.beta, 0.0)
    x = basis.V[:, :k] @ y
    r = b - op.apply(x)
    for j in range(k):
        av = op.apply(basis.V[:, j])
        assert abs(float(av @ r)) <= 1e-8 * np.linalg.norm(av) * np.linalg.norm(b)


def test_regularization_monotonicity_in_lambda():
    rng = np.random.default_rng(20)
    op = make_operator(random_kernel(rng, 5), 12, 12)
    b = rng.standard_normal(144)
    basis = arnoldi(op, b, 10)
    norms = [np.linalg.norm(projected_tikhonov(basis.H, basis.beta, lam))
             for lam in (0.0, 0.01, 0.1, 1.0, 10.0)]
    assert all(a >= b_ - 1e-12 for a, b_ in zip(norms, norms[1:]))


def test_deconvolution_improves_recovery_batch():
    rng = np.random.default_rng(21)
    kernel = gaussian_kernel(1.8, 9)
    improvements = []
    from rso_invert.metrics import mse as img_mse
    for i in range(20):
        truth = np.zeros((24, 24), dtype=np.float32)
        for _ in range(4):  # a few bright blocks on black background
            y, x = rng.integers(4, 18, 2)
            truth[y:y + 3, x:x + 3] = rng.uniform(0.5, 1.0)
        timg = ImageGray(truth)
        cfg = DegradeConfig(kernel=kernel, noise_sigma=0.01,
                            background_level=0.0, seed=1000 + i)
        observed, rec = degrade(timg, cfg)
        op = make_operator(kernel, 24, 24)
        b = observed.data.astype(np.float64).reshape(-1)
        sol = gk_tikhonov(op, b, k=10, delta=rec.noise_norm)
        recovered = ImageGray(sol.x.reshape(24, 24).astype(np.float32))
        improvements.append(img_mse(recovered, timg) - img_mse(observed, timg))
    mean_delta = float(np.mean(improvements))
    assert mean_delta < 0  # recovery reduces error on average
