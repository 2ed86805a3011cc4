"""Krylov-projected Tikhonov deconvolution with discrepancy-based parameter choice.

Three solvers share one pattern: project the blur operator onto a small
Krylov subspace (Arnoldi for the square operator, Golub-Kahan
bidiagonalization for the normal-equations geometry), solve the projected
ridge problem in dense arithmetic, and pick the regularization weight so
the residual matches the known noise norm. Regularization is applied with
the identity in the projected space.

Parameter bookkeeping: the projected penalty is lam^2 * ||y||^2, and
solutions carry both ``lam`` and ``alpha = lam**2`` to keep the two common
conventions explicit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .operator import ConvOperator

__all__ = [
    "ArnoldiBasis",
    "BidiagBasis",
    "DiscrepancySelection",
    "RegSolution",
    "arnoldi",
    "golub_kahan",
    "projected_tikhonov",
    "discrepancy_select",
    "arnoldi_tikhonov",
    "hybrid_gmres",
    "gk_tikhonov",
]

_BREAKDOWN_REL = 1e-12
_LAM_LO = 1e-10
_LAM_HI = 1e10
_PHI_RTOL = 1e-3
_BISECT_ITERS = 60


@dataclass
class ArnoldiBasis:
    """Orthonormal Krylov basis V and Hessenberg projection H of a square operator.

    Without breakdown V has k+1 columns and H is (k+1) x k. On happy
    breakdown at step j both truncate (V: j columns, H: (j+1) x j with a
    ~zero last row) and ``breakdown`` is set; the truncated projected
    problem is still exact.
    """

    V: np.ndarray
    H: np.ndarray
    beta: float
    breakdown: bool = False


@dataclass
class BidiagBasis:
    """Golub-Kahan bases U, V and the lower-bidiagonal projection B."""

    U: np.ndarray
    V: np.ndarray
    B: np.ndarray
    beta: float
    breakdown: bool = False


@dataclass
class DiscrepancySelection:
    """Outcome of the noise-matched parameter search on one projected problem.

    status is one of:
      'converged'   residual bracketed the target eta*delta;
      'unreachable' even lam=0 leaves the residual above the target;
      'upper_bound' the residual stays below the target for all lam
                    (e.g. delta at or above ||b||); lam pinned at the
                    search ceiling.
    """

    lam: float
    y: np.ndarray
    residual: float
    status: str

    @property
    def converged(self) -> bool:
        return self.status == "converged"


@dataclass
class RegSolution:
    """Recovered image vector with parameter-selection diagnostics."""

    x: np.ndarray
    lam: float
    alpha: float
    iterations: int
    residual_norm: float
    discrepancy_target: float
    converged: bool
    status: str
    method: str
    breakdown: bool = False
    history: list[tuple[float, float]] = field(default_factory=list)  # (residual, alpha)


def _reorthogonalize(w: np.ndarray, basis: list[np.ndarray], coeffs: np.ndarray | None):
    """One classical re-projection pass against the collected basis."""
    for i, v in enumerate(basis):
        c = float(v @ w)
        w -= c * v
        if coeffs is not None:
            coeffs[i] += c
    return w


def arnoldi(op: ConvOperator, b: np.ndarray, k: int) -> ArnoldiBasis:
    """Modified Gram-Schmidt Arnoldi with one reorthogonalization pass.

    Happy breakdown (new direction below 1e-12 * ||b||) truncates the
    basis and is reported via the ``breakdown`` flag, not an error.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    b = np.asarray(b, dtype=np.float64)
    beta = float(np.linalg.norm(b))
    if beta == 0.0:
        raise ValueError("Arnoldi requires a nonzero right-hand side")
    V = [b / beta]
    H = np.zeros((k + 1, k))
    breakdown = False
    for j in range(k):
        w = op.apply(V[j])
        for i in range(j + 1):
            H[i, j] = float(V[i] @ w)
            w -= H[i, j] * V[i]
        w = _reorthogonalize(w, V, H[: j + 1, j])
        hnext = float(np.linalg.norm(w))
        H[j + 1, j] = hnext
        if hnext < _BREAKDOWN_REL * beta:
            H = H[: j + 2, : j + 1]
            breakdown = True
            break
        V.append(w / hnext)
    return ArnoldiBasis(V=np.column_stack(V), H=H, beta=beta, breakdown=breakdown)


def golub_kahan(op: ConvOperator, b: np.ndarray, k: int) -> BidiagBasis:
    """Golub-Kahan bidiagonalization with reorthogonalized U and V bases.

    Relations maintained: A V_k = U_{k+1} B and A^T U = V B^T on the kept
    columns; breakdown truncates to an exact invariant projected problem.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    b = np.asarray(b, dtype=np.float64)
    beta = float(np.linalg.norm(b))
    if beta == 0.0:
        raise ValueError("bidiagonalization requires a nonzero right-hand side")
    U = [b / beta]
    z = op.apply_adjoint(U[0])
    alpha = float(np.linalg.norm(z))
    if alpha < _BREAKDOWN_REL * beta:
        # A^T b = 0: the projected problem is empty; callers get x = 0
        return BidiagBasis(U=np.column_stack(U), V=np.zeros((b.size, 0)),
                           B=np.zeros((1, 0)), beta=beta, breakdown=True)
    V = [z / alpha]
    alphas = [alpha]
    betas = []
    breakdown = False
    for j in range(k):
        w = op.apply(V[j]) - alphas[j] * U[j]
        w = _reorthogonalize(w, U, None)
        bnext = float(np.linalg.norm(w))
        if bnext < _BREAKDOWN_REL * beta:
            breakdown = True
            break
        betas.append(bnext)
        U.append(w / bnext)
        if j == k - 1:
            break
        z = op.apply_adjoint(U[j + 1]) - bnext * V[j]
        z = _reorthogonalize(z, V, None)
        anext = float(np.linalg.norm(z))
        if anext < _BREAKDOWN_REL * beta:
            breakdown = True
            break
        alphas.append(anext)
        V.append(z / anext)
    m = len(V)
    rows = len(U)
    B = np.zeros((rows, m))
    for i in range(m):
        B[i, i] = alphas[i]
        if i + 1 < rows and i < len(betas):
            B[i + 1, i] = betas[i]
    return BidiagBasis(U=np.column_stack(U), V=np.column_stack(V), B=B,
                       beta=beta, breakdown=breakdown)


def projected_tikhonov(M: np.ndarray, beta: float, lam: float) -> np.ndarray:
    """Solve min_y ||M y - beta*e1||^2 + lam^2 ||y||^2 on the projected problem.

    Uses the stacked least-squares form [M; lam*I] y = [beta*e1; 0] rather
    than normal equations; exact for the small dense systems produced by
    the Krylov projections.
    """
    M = np.asarray(M, dtype=np.float64)
    if not np.all(np.isfinite(M)) or not math.isfinite(beta) or not math.isfinite(lam):
        raise ValueError("projected problem contains non-finite entries")
    if lam < 0:
        raise ValueError(f"lam must be >= 0, got {lam}")
    m, kk = M.shape
    if kk == 0:
        return np.zeros(0)
    rhs = np.zeros(m)
    rhs[0] = beta
    if lam == 0.0:
        y, *_ = np.linalg.lstsq(M, rhs, rcond=None)
        return y
    A = np.vstack([M, lam * np.eye(kk)])
    r = np.concatenate([rhs, np.zeros(kk)])
    y, *_ = np.linalg.lstsq(A, r, rcond=None)
    return y


def _phi(M: np.ndarray, beta: float, lam: float) -> tuple[float, np.ndarray]:
    y = projected_tikhonov(M, beta, lam)
    rhs = np.zeros(M.shape[0])
    rhs[0] = beta
    return float(np.linalg.norm(M @ y - rhs)), y


def discrepancy_select(M: np.ndarray, beta: float, delta: float,
                       eta: float = 1.01) -> DiscrepancySelection:
    """Find lam so the projected residual matches the noise target eta*delta.

    The residual phi(lam) = ||M y_lam - beta*e1|| is monotone increasing
    in lam, so bisection on log lam over [1e-10, 1e10] is globally
    convergent; 60 iterations bracket the target to 1e-3 relative. The
    out-of-range cases return the boundary with an explanatory status.
    """
    if delta < 0 or not math.isfinite(delta):
        raise ValueError(f"delta must be finite and >= 0, got {delta}")
    if eta < 1.0 or not math.isfinite(eta):
        raise ValueError(f"eta must be >= 1, got {eta}")
    target = eta * delta
    phi0, y0 = _phi(M, beta, 0.0)
    if target == 0.0:
        status = "converged" if phi0 <= 1e-9 * max(beta, 1.0) else "unreachable"
        return DiscrepancySelection(lam=0.0, y=y0, residual=phi0, status=status)
    lo_t = target * (1.0 - _PHI_RTOL)
    hi_t = target * (1.0 + _PHI_RTOL)
    if phi0 >= lo_t:
        status = "converged" if phi0 <= hi_t else "unreachable"
        return DiscrepancySelection(lam=0.0, y=y0, residual=phi0, status=status)
    phi_hi, y_hi = _phi(M, beta, _LAM_HI)
    if phi_hi <= hi_t:
        status = "converged" if phi_hi >= lo_t else "upper_bound"
        return DiscrepancySelection(lam=_LAM_HI, y=y_hi, residual=phi_hi, status=status)
    lo, hi = math.log(_LAM_LO), math.log(_LAM_HI)
    lam, y, phi = 0.0, y0, phi0
    for _ in range(_BISECT_ITERS):
        mid = 0.5 * (lo + hi)
        lam = math.exp(mid)
        phi, y = _phi(M, beta, lam)
        if lo_t <= phi <= hi_t:
            return DiscrepancySelection(lam=lam, y=y, residual=phi, status="converged")
        if phi < target:
            lo = mid
        else:
            hi = mid
    # 60 halvings of a 46-decade bracket leave < 1e-12 relative slack, so
    # landing here means phi jumps across the window: report the closer side
    status = "converged" if abs(phi - target) <= 2.0 * _PHI_RTOL * target else "unreachable"
    return DiscrepancySelection(lam=lam, y=y, residual=phi, status=status)


def _lift(V: np.ndarray, M: np.ndarray, y: np.ndarray) -> np.ndarray:
    return V[:, : M.shape[1]] @ y


def _finish(op: ConvOperator, b: np.ndarray, x: np.ndarray, sel: DiscrepancySelection,
            iterations: int, target: float, method: str, breakdown: bool,
            history: list[tuple[float, float]]) -> RegSolution:
    residual = float(np.linalg.norm(op.apply(x) - b))
    return RegSolution(
        x=x, lam=sel.lam, alpha=sel.lam ** 2, iterations=max(iterations, 1),
        residual_norm=residual, discrepancy_target=target,
        converged=sel.converged, status=sel.status, method=method,
        breakdown=breakdown, history=history,
    )


def arnoldi_tikhonov(op: ConvOperator, b: np.ndarray, k: int = 20,
                     delta: float = 0.0, eta: float = 1.01) -> RegSolution:
    """Project onto the Arnoldi space once at dimension k, then regularize."""
    b = np.asarray(b, dtype=np.float64)
    if float(np.linalg.norm(b)) == 0.0:
        return _zero_solution(op, b, "arnoldi_tikhonov", eta * delta)
    basis = arnoldi(op, b, k)
    sel = discrepancy_select(basis.H, basis.beta, delta, eta)
    x = _lift(basis.V, basis.H, sel.y)
    history = [(sel.residual, sel.lam ** 2)]
    return _finish(op, b, x, sel, basis.H.shape[1], eta * delta,
                   "arnoldi_tikhonov", basis.breakdown, history)


def hybrid_gmres(op: ConvOperator, b: np.ndarray, k_max: int = 20,
                 delta: float = 0.0, eta: float = 1.01,
                 early_stop: bool = True) -> RegSolution:
    """GMRES steps with iteration-dependent Tikhonov weights.

    At every Arnoldi step the noise-matched weight is reselected on the
    grown projected problem; with early stopping the iteration halts at
    the first step >= 3 whose selected weight brings the projected
    residual down to the target (a stabilization floor avoids spurious
    first-iteration stops). With early_stop=False all k_max steps run.
    """
    if k_max < 1:
        raise ValueError(f"k_max must be >= 1, got {k_max}")
    b = np.asarray(b, dtype=np.float64)
    beta = float(np.linalg.norm(b))
    if beta == 0.0:
        return _zero_solution(op, b, "hybrid_gmres", eta * delta)
    V = [b / beta]
    H = np.zeros((k_max + 1, k_max))
    history: list[tuple[float, float]] = []
    sel = None
    j_used = 0
    breakdown = False
    for j in range(k_max):
        w = op.apply(V[j])
        for i in range(j + 1):
            H[i, j] = float(V[i] @ w)
            w -= H[i, j] * V[i]
        w = _reorthogonalize(w, V, H[: j + 1, j])
        hnext = float(np.linalg.norm(w))
        H[j + 1, j] = hnext
        if hnext < _BREAKDOWN_REL * beta:
            breakdown = True
        else:
            V.append(w / hnext)
        j_used = j + 1
        sel = discrepancy_select(H[: j + 2, : j + 1], beta, delta, eta)
        history.append((sel.residual, sel.lam ** 2))
        if breakdown:
            break
        if early_stop and j_used >= 3 and sel.status in ("converged", "upper_bound"):
            break
    Vm = np.column_stack(V)
    M = H[: j_used + 1, :j_used]
    x = _lift(Vm, M, sel.y)
    return _finish(op, b, x, sel, j_used, eta * delta, "hybrid_gmres",
                   breakdown, history)


def gk_tikhonov(op: ConvOperator, b: np.ndarray, k: int = 10,
                delta: float = 0.0, eta: float = 1.01) -> RegSolution:
    """Golub-Kahan projection at fixed depth k, then Tikhonov on the bidiagonal."""
    b = np.asarray(b, dtype=np.float64)
    if float(np.linalg.norm(b)) == 0.0:
        return _zero_solution(op, b, "gk_tikhonov", eta * delta)
    basis = golub_kahan(op, b, k)
    if basis.B.shape[1] == 0:
        sel = DiscrepancySelection(lam=0.0, y=np.zeros(0), residual=basis.beta,
                                   status="unreachable")
        x = np.zeros(b.size)
        return _finish(op, b, x, sel, 1, eta * delta, "gk_tikhonov", True, [])
    sel = discrepancy_select(basis.B, basis.beta, delta, eta)
    x = basis.V @ sel.y
    history = [(sel.residual, sel.lam ** 2)]
    return _finish(op, b, x, sel, basis.B.shape[1], eta * delta,
                   "gk_tikhonov", basis.breakdown, history)


def _zero_solution(op: ConvOperator, b: np.ndarray, method: str,
                   target: float) -> RegSolution:
    # homogeneous problem: x = 0 exactly; with target > 0 the residual sits
    # below the discrepancy window for every lam, which is the upper_bound case
    status = "converged" if target == 0.0 else "upper_bound"
    return RegSolution(
        x=np.zeros(op.n), lam=0.0, alpha=0.0, iterations=1, residual_norm=0.0,
        discrepancy_target=target, converged=(target == 0.0), status=status,
        method=method, history=[(0.0, 0.0)],
    )
