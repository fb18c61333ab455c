"""Per-coordinate quadratic programs for inverse-information estimation.

For a symmetric PSD matrix S and target coordinate j, solve

    minimize    m' S m
    subject to  ||S m - e_j||_inf <= gamma,

a convex QP with 2p linear inequality constraints. The solver is a dual
active-set method specialized to this geometry: every constraint normal is
a (signed) row of S, so the equality-constrained subproblem for an active
set A has its minimizer supported on A and reduces to the principal
submatrix system S[A, A] m_A = (e_j - gamma * signs)_A. Constraints enter
at the most violated coordinate and leave through a discrete line search
when their multipliers (which equal -2 m_A here) would change sign. The
iterate is dual feasible throughout and primal feasible exactly at
termination, which yields machine-precision KKT certificates.

When a submatrix system is numerically singular, the row falls back to a
ridge-lifted solve: the lift S + eps*I enters the objective only, never
the constraints, and the lifted problem is solved through its dual, a
soft-thresholded coordinate descent. Solutions are always certified
against the original constraints.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleError

_TERM_TOL = 1e-11


@dataclass(frozen=True)
class QpProblem:
    """One row's program: matrix, 0-based target coordinate, and radius."""

    sigma: np.ndarray
    j: int
    gamma: float

    def __post_init__(self):
        sigma = np.asarray(self.sigma, dtype=float)
        if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
            raise ValueError("sigma must be a square matrix")
        if not np.all(np.isfinite(sigma)):
            raise ValueError("sigma must be finite")
        if np.max(np.abs(sigma - sigma.T), initial=0.0) > 1e-12:
            raise ValueError("sigma must be symmetric to 1e-12")
        if not 0 <= self.j < sigma.shape[0]:
            raise ValueError(f"target coordinate {self.j} out of range for p={sigma.shape[0]}")
        if self.gamma < 0:
            raise ValueError("gamma must be nonnegative")
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "gamma", float(self.gamma))


@dataclass(frozen=True)
class QpSolution:
    """A candidate row with its optimality certificate.

    ``feasibility_gap`` is ``max_i |（S m - e_j)_i| - gamma``. The KKT
    residual uses the fact that the multiplier vector of this QP is -2m:
    coordinates with m_i != 0 must have (S m - e_j)_i = -gamma * sign(m_i),
    contributing |(S m - e_j)_i + gamma * sign(m_i)|, and coordinates with
    m_i = 0 contribute max(|(S m - e_j)_i| - gamma, 0). Both numbers can be
    recomputed from (sigma, j, gamma, m) alone; see :func:`certificate`.
    """

    m: np.ndarray
    objective: float
    feasibility_gap: float
    kkt_residual: float
    status: str
    n_iter: int = 0


def certificate(sigma, j, gamma, m):
    """Recompute (feasibility_gap, kkt_residual) for a candidate row."""
    m = np.asarray(m, dtype=float)
    r = sigma @ m
    r[j] -= 1.0
    feas = float(np.max(np.abs(r)) - gamma)
    nz = m != 0.0
    viol_active = np.abs(r[nz] + gamma * np.sign(m[nz]))
    viol_zero = np.maximum(np.abs(r[~nz]) - gamma, 0.0)
    kkt = 0.0
    if viol_active.size:
        kkt = max(kkt, float(viol_active.max()))
    if viol_zero.size:
        kkt = max(kkt, float(viol_zero.max()))
    return feas, kkt


class _StructuredFailure(Exception):
    """Internal: the principal-submatrix path hit a singular system or stall."""


def _penalized_value(s_aa, m_a, j_pos, gamma):
    val = 0.5 * m_a @ (s_aa @ m_a) + gamma * np.abs(m_a).sum()
    if j_pos is not None:
        val -= m_a[j_pos]
    return val


def _solve_structured(sigma, j, gamma, warm=None, max_iter=None):
    """Dual active-set iteration on the principal-submatrix subproblems.

    Returns (m, n_iter) on success; raises _StructuredFailure on numerical
    breakdown so the caller can fall back to the ridge-lifted route.
    """
    p = sigma.shape[0]
    if max_iter is None:
        max_iter = 50 * p + 200
    active: list[int] = []
    signs: list[float] = []
    values: list[float] = []
    counter = [0]

    def subsolve():
        s_aa = sigma[np.ix_(active, active)]
        rhs = -gamma * np.asarray(signs)
        if j in active:
            rhs[active.index(j)] += 1.0
        try:
            sol = np.linalg.solve(s_aa, rhs)
        except np.linalg.LinAlgError as exc:
            raise _StructuredFailure(str(exc)) from None
        if not np.all(np.isfinite(sol)):
            raise _StructuredFailure("non-finite subproblem solution")
        return s_aa, sol

    def restore():
        """Re-solve on the active set, dropping zero crossings, until the
        subproblem solution agrees with the tracked signs."""
        nonlocal active, signs, values
        while active:
            counter[0] += 1
            if counter[0] >= max_iter:
                raise _StructuredFailure("iteration budget exhausted")
            s_aa, m_hat = subsolve()
            cur = np.asarray(values)
            if np.all(np.sign(m_hat) == np.asarray(signs)):
                values = list(m_hat)
                return
            j_pos = active.index(j) if j in active else None
            g_cur = _penalized_value(s_aa, cur, j_pos, gamma)
            # candidate steps: every zero crossing on the segment, plus the end
            delta = m_hat - cur
            flip = (np.sign(m_hat) != np.sign(cur)) & (cur != 0.0)
            steps = cur[flip] / (cur[flip] - m_hat[flip])
            steps = steps[(steps > 0.0) & (steps <= 1.0)]
            candidates = np.unique(np.concatenate([steps, [1.0]]))
            best_val, best_point = None, None
            for t in candidates:
                point = cur + t * delta
                point[np.abs(point) < 1e-15] = 0.0
                val = _penalized_value(s_aa, point, j_pos, gamma)
                if best_val is None or val < best_val:
                    best_val, best_point = val, point
            if best_val is None or best_val >= g_cur - 1e-15:
                raise _StructuredFailure("no descent in line search")
            keep = best_point != 0.0
            active = [a for a, k in zip(active, keep) if k]
            signs = list(np.sign(best_point[keep]))
            values = list(best_point[keep])

    if warm is not None:
        for i in np.flatnonzero(warm):
            active.append(int(i))
            signs.append(float(np.sign(warm[i])))
            values.append(float(warm[i]))
        restore()

    while counter[0] < max_iter:
        counter[0] += 1
        # entering constraint: most violated coordinate of S m - e_j
        if active:
            r = sigma[:, active] @ np.asarray(values)
        else:
            r = np.zeros(p)
        r[j] -= 1.0
        r_off = r.copy()
        r_off[active] = 0.0
        worst = int(np.argmax(np.abs(r_off)))
        if np.abs(r_off[worst]) <= gamma + _TERM_TOL:
            m = np.zeros(p)
            m[active] = values
            return m, counter[0]
        active.append(worst)
        signs.append(-float(np.sign(r_off[worst])))
        values.append(0.0)
        restore()
    raise _StructuredFailure("iteration budget exhausted")


def _solve_ridge_dual(sigma, j, gamma, max_pass=20000, tol=1e-13):
    """Fallback for numerically singular matrices.

    Lifts the objective to m' (S + eps I) m with eps tied to the average
    diagonal scale (the constraints keep the original S), then minimizes the
    lifted dual  v -> v'Qv/4 + v_j + gamma ||v||_1  with Q = S G^{-1} S by
    cyclic coordinate descent, and maps back through m = -G^{-1} S v / 2.
    """
    p = sigma.shape[0]
    eps = 1e-9 * max(np.trace(sigma), 1e-30) / p
    g_mat = sigma + eps * np.eye(p)
    ginv_s = np.linalg.solve(g_mat, sigma)
    q = sigma @ ginv_s
    v = np.zeros(p)
    qv = np.zeros(p)
    diag = np.diag(q).copy()
    for n_pass in range(1, max_pass + 1):
        delta_max = 0.0
        for i in range(p):
            c = 0.5 * (qv[i] - diag[i] * v[i])
            if i == j:
                c += 1.0
            if diag[i] <= 1e-300:
                new = 0.0
            else:
                a = -c
                mag = abs(a) - gamma
                new = np.sign(a) * mag / (0.5 * diag[i]) if mag > 0 else 0.0
            if new != v[i]:
                qv += q[:, i] * (new - v[i])
                delta_max = max(delta_max, abs(new - v[i]))
                v[i] = new
        if delta_max <= tol * max(1.0, np.abs(v).max()):
            break
    m = -0.5 * (ginv_s @ v)
    m[np.abs(m) < 1e-14] = 0.0
    return m, n_pass


def solve_qp(problem: QpProblem, feas_tol=1e-8, kkt_tol=1e-6, max_iter=None, warm=None) -> QpSolution:
    """Solve one coordinate's program and certify the result.

    ``warm`` optionally carries a previous solution (for a nearby gamma) to
    seed the active set. Deterministic for fixed inputs. With gamma = 0 and
    a numerically singular matrix the program is ill-posed and the status is
    ``infeasible``; other numerical breakdowns return the best iterate under
    status ``max_iter``.
    """
    sigma, j, gamma = problem.sigma, problem.j, problem.gamma

    def finish(m, status, n_iter):
        feas, kkt = certificate(sigma, j, gamma, m)
        if status == "optimal" and not (feas <= feas_tol and kkt <= kkt_tol):
            status = "max_iter"
        return QpSolution(
            m=m,
            objective=float(m @ (sigma @ m)),
            feasibility_gap=feas,
            kkt_residual=kkt,
            status=status,
            n_iter=n_iter,
        )

    if gamma == 0.0:
        e = np.zeros(sigma.shape[0])
        e[j] = 1.0
        try:
            m = np.linalg.solve(sigma, e)
            if not np.all(np.isfinite(m)):
                raise np.linalg.LinAlgError("non-finite solve")
            sol = finish(m, "optimal", 1)
            if sol.status == "optimal":
                return sol
        except np.linalg.LinAlgError:
            pass
        m, _, _, _ = np.linalg.lstsq(sigma, e, rcond=None)
        return finish(m, "infeasible", 1)

    try:
        m, n_iter = _solve_structured(sigma, j, gamma, warm=warm, max_iter=max_iter)
        return finish(m, "optimal", n_iter)
    except _StructuredFailure:
        try:
            m, n_pass = _solve_ridge_dual(sigma, j, gamma)
        except np.linalg.LinAlgError:
            return finish(np.zeros(sigma.shape[0]), "max_iter", 0)
        return finish(m, "optimal", n_pass)


@dataclass(frozen=True)
class PrecisionEstimate:
    """Stacked rows m^(1..p) with per-row certificates."""

    theta: np.ndarray
    gamma: float
    feasibility_gaps: np.ndarray
    kkt_residuals: np.ndarray
    statuses: tuple[str, ...]

    @property
    def p(self) -> int:
        return self.theta.shape[0]


def _assemble(sigma, gamma, solutions) -> PrecisionEstimate:
    theta = np.vstack([sol.m for sol in solutions])
    est = PrecisionEstimate(
        theta=theta,
        gamma=float(gamma),
        feasibility_gaps=np.array([sol.feasibility_gap for sol in solutions]),
        kkt_residuals=np.array([sol.kkt_residual for sol in solutions]),
        statuses=tuple(sol.status for sol in solutions),
    )
    bad = [j for j, s in enumerate(est.statuses) if s == "infeasible"]
    if bad:
        raise InfeasibleError(
            f"quadratic program infeasible at gamma={gamma:g} for rows {bad}", rows=bad
        )
    stuck = [j for j, s in enumerate(est.statuses) if s == "max_iter"]
    if stuck:
        warnings.warn(
            f"QP rows {stuck} did not reach certified optimality at gamma={gamma:g}",
            stacklevel=3,
        )
    return est


def solve_all_rows(sigma, gamma, parallelism=1, feas_tol=1e-8, kkt_tol=1e-6) -> PrecisionEstimate:
    """Solve the p independent row programs at one gamma.

    Rows are independent and may run on several threads; the assembled
    result is ordered by row regardless of scheduling. Any infeasible row
    aborts with an error naming the offending rows.
    """
    sigma = np.asarray(sigma, dtype=float)
    p = sigma.shape[0]

    def run(j):
        return solve_qp(QpProblem(sigma, j, gamma), feas_tol=feas_tol, kkt_tol=kkt_tol)

    if parallelism > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            solutions = list(pool.map(run, range(p)))
    else:
        solutions = [run(j) for j in range(p)]
    return _assemble(sigma, gamma, solutions)


def solve_rows_path(sigma, gammas, parallelism=1, feas_tol=1e-8, kkt_tol=1e-6):
    """Solve all rows over a grid of gammas, warm-starting within each row.

    Returns a list of :class:`PrecisionEstimate` aligned with ``gammas``.
    Internally the grid is swept in descending order (supports grow as the
    radius shrinks), which makes a dense grid barely more expensive than a
    single solve per row.
    """
    sigma = np.asarray(sigma, dtype=float)
    gammas = np.asarray(gammas, dtype=float)
    p = sigma.shape[0]
    order = np.argsort(-gammas, kind="stable")

    def run_row(j):
        out = [None] * gammas.size
        warm = None
        for pos in order:
            sol = solve_qp(
                QpProblem(sigma, j, float(gammas[pos])),
                feas_tol=feas_tol,
                kkt_tol=kkt_tol,
                warm=warm,
            )
            out[pos] = sol
            warm = sol.m if sol.status == "optimal" else None
        return out

    if parallelism > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            per_row = list(pool.map(run_row, range(p)))
    else:
        per_row = [run_row(j) for j in range(p)]
    return [
        _assemble(sigma, float(gammas[pos]), [per_row[j][pos] for j in range(p)])
        for pos in range(gammas.size)
    ]
