"""Sparse convex QP/LP solver.

Operator-splitting (ADMM) method for

    minimize    0.5 z' H z + q' z
    subject to  l <= A z <= u

with Ruiz equilibration, per-row penalty with boosted equality rows,
deterministic adaptive penalty updates, and a direct-factorization polish
step that recovers high-accuracy solutions from a moderately accurate
ADMM iterate.  LPs are the H = 0 special case.  One solve is
single-threaded and bitwise deterministic given identical inputs.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sparse

Array = np.ndarray

SOLVED = "Solved"
MAX_ITER = "MaxIter"
PRIMAL_INFEASIBLE = "PrimalInfeasible"
DUAL_INFEASIBLE = "DualInfeasible"

_MIN_SCALING = 1e-4
_MAX_SCALING = 1e4


class QpProblem:
    """Standard-form QP data; validates shapes and H symmetric PSD."""

    def __init__(self, H, q, A=None, l=None, u=None, validate: bool = True):
        self.q = np.asarray(q, dtype=float).ravel()
        m = self.q.size
        self.H = sparse.csc_matrix(H) if H is not None else sparse.csc_matrix((m, m))
        if A is None:
            A = sparse.csc_matrix((0, m))
            l = np.zeros(0)
            u = np.zeros(0)
        self.A = sparse.csc_matrix(A)
        self.l = np.asarray(l, dtype=float).ravel()
        self.u = np.asarray(u, dtype=float).ravel()
        if validate:
            self._validate()

    @property
    def num_vars(self) -> int:
        return self.q.size

    @property
    def num_rows(self) -> int:
        return self.A.shape[0]

    def _validate(self) -> None:
        m, p = self.num_vars, self.num_rows
        if self.H.shape != (m, m):
            raise ValueError(f"H must be {m}x{m}, got {self.H.shape}")
        if self.A.shape != (p, m):
            raise ValueError(f"A must be {p}x{m}, got {self.A.shape}")
        if self.l.shape != (p,) or self.u.shape != (p,):
            raise ValueError("bound vectors must match the constraint row count")
        if not np.all(np.isfinite(self.q)):
            raise ValueError("q must be finite")
        if np.any(self.l > self.u):
            raise ValueError("need l <= u elementwise")
        Hd = self.H.toarray()
        if m and np.max(np.abs(Hd - Hd.T)) > 1e-9 * (1.0 + np.max(np.abs(Hd))):
            raise ValueError("H must be symmetric")
        # attempted factorization: Cholesky of H plus a tiny PSD jitter
        jitter = 1e-10 * (1.0 + (np.max(np.abs(Hd)) if m else 0.0))
        try:
            np.linalg.cholesky(Hd + jitter * np.eye(m))
        except np.linalg.LinAlgError as exc:
            raise ValueError("H is not positive semidefinite") from exc

    def objective(self, z: Array) -> float:
        return float(0.5 * z @ (self.H @ z) + self.q @ z)


@dataclass(frozen=True)
class QpSettings:
    eps_abs: float = 1e-8
    eps_rel: float = 1e-8
    max_iter: int = 20000
    rho: float = 0.1
    sigma: float = 1e-6
    alpha: float = 1.6
    eps_prim_inf: float = 1e-4
    eps_dual_inf: float = 1e-4
    scaling_iters: int = 10
    check_interval: int = 25
    adaptive_rho_interval: int = 100
    polish: bool = True
    polish_delta: float = 1e-7
    polish_refine_iters: int = 3
    polish_repair_iters: int = 10
    polish_sign_tol: float = 1e-10


@dataclass
class QpSolution:
    z: Array
    y: Array
    objective: float
    status: str
    iterations: int
    residuals: tuple[float, float]
    polished: bool = False


def kkt_residuals(p: QpProblem, s: QpSolution) -> tuple[float, float, float]:
    """Independently recomputed (primal, dual, complementarity) inf-norms."""
    z = np.asarray(s.z, dtype=float).ravel()
    y = np.asarray(s.y, dtype=float).ravel()
    dual = p.H @ z + p.q
    if p.num_rows:
        dual = dual + p.A.T @ y
    dual_res = float(np.max(np.abs(dual))) if dual.size else 0.0
    if p.num_rows == 0:
        return 0.0, dual_res, 0.0
    Az = p.A @ z
    prim = np.maximum(Az - p.u, 0.0) + np.maximum(p.l - Az, 0.0)
    prim_res = float(np.max(prim))
    return prim_res, dual_res, _complementarity(Az, y, p.l, p.u)


def _complementarity(Az: Array, y: Array, l: Array, u: Array) -> float:
    """inf-norm of y_i times the gap to the bound it prices (inf if it prices
    an infinite bound)."""
    comp = np.zeros_like(y)
    pos = y > 0
    neg = y < 0
    comp[pos] = y[pos] * np.where(np.isfinite(u[pos]), np.abs(u[pos] - Az[pos]), np.inf)
    comp[neg] = -y[neg] * np.where(np.isfinite(l[neg]), np.abs(Az[neg] - l[neg]), np.inf)
    return float(np.max(comp)) if comp.size else 0.0


class _Workspace:
    """Scaled problem data plus the ADMM state for one solve.

    Internals are dense: the target problems are a few hundred variables at
    most, where dense equilibration, factorization, and matvecs beat sparse
    bookkeeping by a wide margin.
    """

    def __init__(self, prob: QpProblem, st: QpSettings):
        self.st = st
        m, p = prob.num_vars, prob.num_rows
        self.m, self.p = m, p
        self.H0 = prob.H.toarray()
        self.A0 = prob.A.toarray()
        self.q0 = prob.q
        self.l0 = prob.l
        self.u0 = prob.u
        self.H = self.H0.copy()
        self.q = prob.q.copy()
        self.A = self.A0.copy()
        self.l = prob.l.copy()
        self.u = prob.u.copy()
        self.D = np.ones(m)
        self.E = np.ones(p)
        self.c_cost = 1.0
        self._equilibrate()
        self.eq_rows = (self.u - self.l) < 1e-12
        self._set_rho(st.rho)
        self.x = np.zeros(m)
        self.z = np.zeros(p)
        self.y = np.zeros(p)
        self.dx = np.zeros(m)
        self.dy = np.zeros(p)

    # -- scaling ------------------------------------------------------------

    def _equilibrate(self) -> None:
        def limit(v):
            v = np.where(v < _MIN_SCALING, 1.0, v)
            return np.minimum(v, _MAX_SCALING)

        for _ in range(self.st.scaling_iters):
            absH = np.abs(self.H)
            col_h = absH.max(axis=0) if self.m else np.zeros(0)
            col_a = np.abs(self.A).max(axis=0) if self.p else np.zeros(self.m)
            d = 1.0 / np.sqrt(limit(np.maximum(col_h, col_a)))
            self.H *= d[:, None]
            self.H *= d[None, :]
            self.q *= d
            if self.p:
                e = 1.0 / np.sqrt(limit(np.abs(self.A).max(axis=1)))
                self.A *= d[None, :]
                self.A *= e[:, None]
                self.l *= e
                self.u *= e
                self.E *= e
            self.D *= d
            qn = np.max(np.abs(self.q)) if self.m else 0.0
            mean_col = float(np.mean(np.abs(self.H).max(axis=0))) if self.m else 0.0
            g = 1.0 / float(limit(np.array([max(mean_col, qn)]))[0])
            self.H *= g
            self.q *= g
            self.c_cost *= g

    # -- KKT factorization ---------------------------------------------------

    def _set_rho(self, rho: float) -> None:
        self.rho_bar = float(min(max(rho, 1e-6), 1e6))
        rho_vec = np.full(self.p, self.rho_bar)
        rho_vec[self.eq_rows] *= 1e3
        self.rho_vec = rho_vec
        self.rho_inv = 1.0 / rho_vec if self.p else rho_vec
        m, p = self.m, self.p
        kkt = np.zeros((m + p, m + p))
        kkt[:m, :m] = self.H + self.st.sigma * np.eye(m)
        if p:
            kkt[:m, m:] = self.A.T
            kkt[m:, :m] = self.A
            kkt[m:, m:] = -np.diag(self.rho_inv)
        self.lu = sla.lu_factor(kkt)

    # -- iteration -----------------------------------------------------------

    def step(self) -> None:
        st = self.st
        m = self.m
        rhs = np.concatenate([st.sigma * self.x - self.q, self.z - self.rho_inv * self.y])
        sol = sla.lu_solve(self.lu, rhs)
        x_tilde = sol[:m]
        z_tilde = self.z + self.rho_inv * (sol[m:] - self.y)
        x_new = st.alpha * x_tilde + (1.0 - st.alpha) * self.x
        z_mix = st.alpha * z_tilde + (1.0 - st.alpha) * self.z
        z_new = np.clip(z_mix + self.rho_inv * self.y, self.l, self.u)
        y_new = self.y + self.rho_vec * (z_mix - z_new)
        self.dx = x_new - self.x
        self.dy = y_new - self.y
        self.x, self.z, self.y = x_new, z_new, y_new

    # -- unscaling and termination --------------------------------------------

    def unscaled(self) -> tuple[Array, Array, Array]:
        x = self.D * self.x
        z = self.z / self.E if self.p else self.z
        y = self.E * self.y / self.c_cost if self.p else self.y
        return x, z, y

    def residuals(self) -> tuple[float, float, float, float]:
        x, z, y = self.unscaled()
        if self.p:
            Ax = self.A0 @ x
            r_prim = float(np.max(np.abs(Ax - z)))
            max_prim = max(float(np.max(np.abs(Ax))), float(np.max(np.abs(z))))
        else:
            r_prim, max_prim = 0.0, 0.0
        Hx = self.H0 @ x
        dual = Hx + self.q0 + (self.A0.T @ y if self.p else 0.0)
        r_dual = float(np.max(np.abs(dual))) if self.m else 0.0
        terms = [float(np.max(np.abs(Hx))) if self.m else 0.0,
                 float(np.max(np.abs(self.q0))) if self.m else 0.0]
        if self.p:
            terms.append(float(np.max(np.abs(self.A0.T @ y))))
        return r_prim, r_dual, max_prim, max(terms)

    def is_primal_infeasible(self) -> bool:
        if self.p == 0:
            return False
        dy = self.E * self.dy / self.c_cost
        nrm = float(np.max(np.abs(dy)))
        if nrm <= self.st.eps_prim_inf:
            return False
        dy = dy / nrm
        up_mask = dy > 0
        lo_mask = dy < 0
        # any mass pushing on an infinite bound cannot certify infeasibility
        if np.any(up_mask & ~np.isfinite(self.u0)) or np.any(lo_mask & ~np.isfinite(self.l0)):
            return False
        support = float(np.sum(self.u0[up_mask] * dy[up_mask])
                        + np.sum(self.l0[lo_mask] * dy[lo_mask]))
        if support >= -self.st.eps_prim_inf:
            return False
        return float(np.max(np.abs(self.A0.T @ dy))) <= self.st.eps_prim_inf

    def is_dual_infeasible(self) -> bool:
        dx = self.D * self.dx
        nrm = float(np.max(np.abs(dx))) if self.m else 0.0
        if nrm <= self.st.eps_dual_inf:
            return False
        dx = dx / nrm
        if float(self.q0 @ dx) >= -self.st.eps_dual_inf:
            return False
        if self.m and float(np.max(np.abs(self.H0 @ dx))) > self.st.eps_dual_inf:
            return False
        if self.p:
            Adx = self.A0 @ dx
            bad_up = (Adx > self.st.eps_dual_inf) & np.isfinite(self.u0)
            bad_lo = (Adx < -self.st.eps_dual_inf) & np.isfinite(self.l0)
            if np.any(bad_up) or np.any(bad_lo):
                return False
        return True

    def adapt_rho(self) -> None:
        r_prim, r_dual, max_prim, max_dual = self.residuals()
        num = r_prim / max(max_prim, 1e-10)
        den = r_dual / max(max_dual, 1e-10)
        ratio = np.sqrt(num / max(den, 1e-10))
        new_rho = self.rho_bar * float(ratio)
        if new_rho > 5.0 * self.rho_bar or new_rho < self.rho_bar / 5.0:
            x, z, y = self.x.copy(), self.z.copy(), self.y.copy()
            self._set_rho(new_rho)
            self.x, self.z, self.y = x, z, y


def _solve_active_kkt(ws: _Workspace, st: QpSettings, low: Array, upp: Array
                      ) -> tuple[Array, Array] | None:
    """Regularized KKT solve with iterative refinement on a fixed active set."""
    m = ws.m
    active = low | upp
    n_act = int(np.sum(active))
    A_act = ws.A0[active] if n_act else np.zeros((0, m))
    b_act = np.where(low, ws.l0, ws.u0)[active]
    delta = st.polish_delta
    size = m + n_act
    K = np.zeros((size, size))
    K[:m, :m] = ws.H0
    if n_act:
        K[:m, m:] = A_act.T
        K[m:, :m] = A_act
    K_reg = K.copy()
    K_reg[:m, :m] += delta * np.eye(m)
    if n_act:
        K_reg[m:, m:] -= delta * np.eye(n_act)
    rhs = np.concatenate([-ws.q0, b_act])
    try:
        lu = sla.lu_factor(K_reg)
    except (ValueError, sla.LinAlgError):
        return None
    t = sla.lu_solve(lu, rhs)
    for _ in range(st.polish_refine_iters):
        t = t + sla.lu_solve(lu, rhs - K @ t)
    if not np.all(np.isfinite(t)):
        return None
    x_pol = t[:m]
    y_pol = np.zeros(ws.p)
    if n_act:
        y_pol[np.nonzero(active)[0]] = t[m:]
    return x_pol, y_pol


def _polish(ws: _Workspace, st: QpSettings) -> tuple[Array, Array] | None:
    """Solve the equality-constrained QP on the active rows guessed from y,
    repairing the guess a few times: rows whose recovered dual has the wrong
    sign are dropped, rows the solution violates are added."""
    if ws.p == 0:
        return _solve_active_kkt(ws, st, np.zeros(0, dtype=bool), np.zeros(0, dtype=bool))
    x, z, y = ws.unscaled()
    # only finite bounds can be active; sign of y picks the side
    low = ((y < 0) & np.isfinite(ws.l0)) | ws.eq_rows
    upp = (y > 0) & ~low & np.isfinite(ws.u0)
    result = None
    for _ in range(1 + st.polish_repair_iters):
        result = _solve_active_kkt(ws, st, low, upp)
        if result is None:
            return None
        x_pol, y_pol = result
        free = ~ws.eq_rows
        wrong_low = low & free & (y_pol > st.polish_sign_tol)
        wrong_upp = upp & free & (y_pol < -st.polish_sign_tol)
        Az = ws.A0 @ x_pol
        inactive = ~(low | upp)
        viol_up = inactive & np.isfinite(ws.u0) & (Az > ws.u0 + st.polish_sign_tol)
        viol_lo = inactive & np.isfinite(ws.l0) & (Az < ws.l0 - st.polish_sign_tol)
        if not (np.any(wrong_low) or np.any(wrong_upp) or np.any(viol_up) or np.any(viol_lo)):
            break
        low = (low & ~wrong_low) | viol_lo
        upp = (upp & ~wrong_upp) | viol_up
    return result


def _pol_residuals(ws: _Workspace, x: Array, y: Array) -> tuple[float, float, float]:
    """(primal, dual, complementarity) of a candidate point.

    Complementarity matters here: a polish on a wrong active-set guess can
    satisfy stationarity and feasibility while pricing the wrong rows.
    """
    if ws.p:
        Az = ws.A0 @ x
        prim = float(np.max(np.maximum(Az - ws.u0, 0.0) + np.maximum(ws.l0 - Az, 0.0)))
        comp = _complementarity(Az, y, ws.l0, ws.u0)
    else:
        prim, comp = 0.0, 0.0
    dual = ws.H0 @ x + ws.q0 + (ws.A0.T @ y if ws.p else 0.0)
    return prim, (float(np.max(np.abs(dual))) if dual.size else 0.0), comp


def solve_qp(prob: QpProblem, settings: QpSettings | None = None,
             warm_primal: Array | None = None, warm_dual: Array | None = None) -> QpSolution:
    """ADMM solve with optional warm start; deterministic for fixed inputs."""
    st = settings or QpSettings()
    ws = _Workspace(prob, st)
    if warm_primal is not None and warm_primal.shape == (prob.num_vars,):
        ws.x = warm_primal / ws.D
        ws.z = (prob.A @ warm_primal) * ws.E if ws.p else np.zeros(0)
    if warm_dual is not None and warm_dual.shape == (prob.num_rows,) and ws.p:
        ws.y = ws.c_cost * warm_dual / ws.E

    best: tuple[float, Array, Array, bool] | None = None
    polish_level = 1e-5   # residual level that triggers an extra polish attempt
    polish_at = 100       # iteration schedule for speculative polish attempts
    status = MAX_ITER
    iters = 0
    for it in range(1, st.max_iter + 1):
        ws.step()
        iters = it
        if it % st.check_interval and it != st.max_iter:
            continue
        r_prim, r_dual, max_prim, max_dual = ws.residuals()
        eps_prim = st.eps_abs + st.eps_rel * max_prim
        eps_dual = st.eps_abs + st.eps_rel * max_dual
        done = r_prim <= eps_prim and r_dual <= eps_dual
        near = max(r_prim, r_dual) <= polish_level
        scheduled = it >= polish_at
        if st.polish and (done or near or scheduled or it == st.max_iter):
            if near:
                polish_level /= 10.0
            if scheduled:
                polish_at = 2 * it
            pol = _polish(ws, st)
            if pol is not None:
                pp, pd, pc = _pol_residuals(ws, *pol)
                y_scale = 1.0 + (float(np.max(np.abs(pol[1]))) if pol[1].size else 0.0)
                comp_ok = pc <= max(eps_prim, eps_dual) * y_scale
                if comp_ok and (best is None or max(pp, pd) < best[0]):
                    best = (max(pp, pd), pol[0], pol[1], True)
                if comp_ok and pp <= eps_prim and pd <= eps_dual:
                    status = SOLVED
                    x, y = pol
                    return QpSolution(z=x, y=y, objective=prob.objective(x), status=SOLVED,
                                      iterations=it, residuals=(pp, pd), polished=True)
        if done:
            status = SOLVED
            break
        if ws.is_primal_infeasible():
            status = PRIMAL_INFEASIBLE
            break
        if ws.is_dual_infeasible():
            status = DUAL_INFEASIBLE
            break
        if it % st.adaptive_rho_interval == 0 and it < st.max_iter:
            ws.adapt_rho()

    x, z, y = ws.unscaled()
    r_prim, r_dual, _, _ = ws.residuals()
    if status in (PRIMAL_INFEASIBLE, DUAL_INFEASIBLE):
        return QpSolution(z=x, y=y, objective=np.nan, status=status,
                          iterations=iters, residuals=(r_prim, r_dual))
    if best is not None and best[0] < max(r_prim, r_dual):
        _, x, y, polished = best
        r_prim, r_dual, _ = _pol_residuals(ws, x, y)
    else:
        polished = False
    return QpSolution(z=x, y=y, objective=prob.objective(x), status=status,
                      iterations=iters, residuals=(r_prim, r_dual), polished=polished)


def solve_lp(q, A, l, u, settings: QpSettings | None = None,
             warm_primal: Array | None = None, warm_dual: Array | None = None) -> QpSolution:
    """Linear program min q'z s.t. l <= A z <= u (QP with H = 0)."""
    q = np.asarray(q, dtype=float).ravel()
    prob = QpProblem(sparse.csc_matrix((q.size, q.size)), q, A, l, u, validate=False)
    return solve_qp(prob, settings, warm_primal, warm_dual)


def dump_problem(prob: QpProblem, path) -> None:
    """Write a problem in a versioned plain-text matrix format for offline debugging."""
    with open(path, "w") as fh:
        fh.write("# qp-dump v1\n")
        fh.write(f"vars {prob.num_vars} rows {prob.num_rows}\n")
        for name, mat in (("H", prob.H), ("A", prob.A)):
            coo = mat.tocoo()
            fh.write(f"{name} nnz {coo.nnz}\n")
            for i, j, v in zip(coo.row, coo.col, coo.data):
                fh.write(f"{i} {j} {v!r}\n")
        for name, vec in (("q", prob.q), ("l", prob.l), ("u", prob.u)):
            fh.write(f"{name} " + " ".join(repr(float(v)) for v in vec) + "\n")
