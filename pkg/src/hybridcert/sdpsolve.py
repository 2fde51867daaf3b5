"""Primal-dual interior-point solver for block SDP feasibility problems.

The feasibility problem ``A x = b`` (Gram blocks PSD, free variables
unsigned) is turned into a bounded margin problem

    minimize   s
    subject to A(Xt + (tau - s) I) + A_f v = b
               sum_k tr(Xt_k) + r = R
               Xt_k >= 0,  s >= 0,  r >= 0

so the uniform margin is ``t = tau - s``.  Both the primal and its dual are
strictly feasible for every input, which keeps the path-following method
well posed even when the original problem is infeasible: then the optimal
margin is negative and the dual solution is an infeasibility certificate.
Free variables are eliminated by projecting onto the left null space of
their columns and recovered afterwards by least squares.

The method is the HKM direction with Mehrotra predictor-corrector steps and
dense linear algebra per block.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .soscomp import SdpProblem, block_operator, sym_to_upper


log = logging.getLogger(__name__)


class Status(str, enum.Enum):
    FEASIBLE = "Feasible"
    INFEASIBLE = "Infeasible"
    MAX_ITERATIONS = "MaxIterations"
    NUMERICAL_FAILURE = "NumericalFailure"


@dataclass(frozen=True)
class SolverOptions:
    feas_tol: float = 1e-8
    gap_tol: float = 1e-8
    max_iter: int = 200
    margin_target: float = 1.0
    # smallest margin accepted as strictly feasible
    min_margin: float = 1e-7
    step_fraction: float = 0.98
    trace_bound: float = 1e2
    trace_retries: int = 3

    def __post_init__(self):
        if self.feas_tol <= 0 or self.gap_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.margin_target <= 0:
            raise ValueError("margin_target must be positive")
        if not 0 < self.step_fraction < 1:
            raise ValueError("step_fraction must lie in (0, 1)")


@dataclass
class SdpSolution:
    block_values: list[np.ndarray]
    free_values: np.ndarray
    status: Status
    min_eig_margin: float
    equality_residual: float
    iterations: int
    margin: float = float("nan")
    message: str = ""
    # dual slack per Gram block at the returned iterate
    dual_blocks: list[np.ndarray] = field(default_factory=list)

    @property
    def x(self) -> np.ndarray:
        return np.concatenate([sym_to_upper(X) for X in self.block_values] + [self.free_values])

    def vector(self, prob: SdpProblem) -> np.ndarray:
        return prob.pack(self.block_values, self.free_values)


# --- problem preparation ----------------------------------------------------------


@dataclass
class _Prepared:
    mats: list[np.ndarray]  # per Gram block: (m, n, n) symmetric row matrices
    sizes: list[int]
    b: np.ndarray
    aI: np.ndarray  # A(I)
    A_free: np.ndarray
    P: np.ndarray  # projection rows (m x nrows)
    row_scale: np.ndarray


def _prepare(prob: SdpProblem) -> _Prepared:
    A_free = prob.A[:, prob.free_offset : prob.free_offset + prob.n_free].toarray()
    nrows = prob.nrows
    if prob.n_free:
        U, sv, _ = np.linalg.svd(A_free, full_matrices=True)
        tol = max(A_free.shape) * np.finfo(float).eps * (sv[0] if len(sv) else 0.0)
        rank = int(np.sum(sv > tol))
        P = U[:, rank:].T
    else:
        P = np.eye(nrows)
    mats, sizes = [], []
    for k, blk in enumerate(prob.blocks):
        sizes.append(blk.size)
        if blk.size == 0:
            mats.append(np.zeros((P.shape[0], 0, 0)))
            continue
        M = block_operator(prob, k)
        mats.append(np.tensordot(P, M, axes=(1, 0)))
    b = P @ prob.b
    # unit-norm rows
    norms = np.zeros(P.shape[0])
    for M in mats:
        norms += np.einsum("ijk,ijk->i", M, M)
    norms = np.sqrt(norms)
    keep = norms > 1e-13 * max(1.0, norms.max(initial=0.0))
    scale = np.where(keep, 1.0 / np.where(keep, norms, 1.0), 0.0)
    mats = [M[keep] * scale[keep, None, None] for M in mats]
    b_full = b
    b = b[keep] * scale[keep]
    P = P[keep]
    aI = np.zeros(len(b))
    for M in mats:
        if M.shape[1]:
            aI += np.einsum("ijj->i", M)
    prep = _Prepared(mats, sizes, b, aI, A_free, P, scale[keep])
    # rows that vanished must be consistent
    if np.any(~keep) and np.abs(b_full[~keep]).max() > 1e-9 * max(1.0, np.abs(prob.b).max(initial=0.0)):
        prep.b = None  # type: ignore[assignment]
    return prep


# --- cone helpers ---------------------------------------------------------------


def _sym(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


def _max_step(X: np.ndarray, dX: np.ndarray) -> float:
    """Largest a with X + a dX PSD (X positive definite)."""
    if X.shape[0] == 0:
        return np.inf
    L = np.linalg.cholesky(X)
    Li = scipy.linalg.solve_triangular(L, np.eye(len(X)), lower=True)
    lam = np.linalg.eigvalsh(_sym(Li @ dX @ Li.T))
    lo = lam[0]
    return np.inf if lo >= 0 else -1.0 / lo


STALL_ITERATIONS = 8


class _Breakdown(RuntimeError):
    pass


class _MarginSdp:
    """Standard-form primal/dual pair with Gram blocks, slack s and trace slack r.

    Rows: m projected equalities, then one trace row.  Scalars s and r are
    1x1 cone blocks stored as floats.
    """

    def __init__(self, prep: _Prepared, tau: float, R: float):
        self.p = prep
        self.tau = tau
        self.R = R
        self.m = len(prep.b)
        self.rhs = np.concatenate([prep.b - tau * prep.aI, [R]])
        self.blocks = [k for k, n in enumerate(prep.sizes) if n > 0]

    # A(X) for the full variable (Gram blocks, s, r)
    def apply(self, Xs, s, r):
        out = np.zeros(self.m + 1)
        for k in self.blocks:
            M = self.p.mats[k]
            out[: self.m] += np.einsum("ijk,jk->i", M, Xs[k])
            out[self.m] += np.trace(Xs[k])
        out[: self.m] -= s * self.p.aI
        out[self.m] += r
        return out

    def adjoint(self, y):
        ye, yt = y[: self.m], y[self.m]
        Zs = {}
        for k in self.blocks:
            M = self.p.mats[k]
            Zs[k] = np.tensordot(ye, M, axes=(0, 0)) + yt * np.eye(M.shape[1])
        return Zs, -self.p.aI @ ye, yt

    def schur_factor(self, Lx, Lzi, s, zs, r, zr):
        """Triangular R with R'R = H, the HKM Schur matrix.

        H_ij = <B_i, B_j> with B_i = Lzi M_i Lx (X = Lx Lx', Z^-1 = Lzi' Lzi), so a
        QR factorization of the stacked B_i avoids squaring their condition.
        """
        m1 = self.m + 1
        cols = []
        for k in self.blocks:
            M = self.p.mats[k]
            n = M.shape[1]
            Mk = np.concatenate([M, np.eye(n)[None]], axis=0)
            B = Lzi[k] @ Mk @ Lx[k]
            cols.append(B.reshape(m1, -1))
        a = np.concatenate([-self.p.aI, [0.0]])
        cols.append(np.sqrt(s / zs) * a[:, None])
        e = np.zeros((m1, 1))
        e[-1, 0] = np.sqrt(r / zr)
        cols.append(e)
        K = np.hstack(cols).T
        R = scipy.linalg.qr(K, mode="r", check_finite=False)[0][:m1]
        if np.any(np.abs(np.diag(R)) < 1e-300):
            raise _Breakdown("singular Schur matrix")
        return R


def _schur_solve(R: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    w = scipy.linalg.solve_triangular(R, rhs, trans="T", check_finite=False)
    return scipy.linalg.solve_triangular(R, w, check_finite=False)


def _solve_margin(prep: _Prepared, opts: SolverOptions, R: float):
    """Run the IPM from a unit start.

    Returns the best iterate seen (by the worst of the scaled residuals and
    gap), so that a run that stalls on a badly conditioned problem still
    hands back its most accurate point.  Iteration also stops once the dual
    objective proves the optimal margin below ``-min_margin``.  Returns
    ``(Xs, s, r, y, Zs, iterations, converged, margin_upper_bound)``.
    """
    ms = _MarginSdp(prep, opts.margin_target, R)
    blocks = ms.blocks
    nb = sum(prep.sizes[k] for k in blocks)
    N = nb + 2
    # unit starting point; the trace slack takes up the rest of R
    Xs = {k: np.eye(prep.sizes[k]) for k in blocks}
    s = 1.0 + opts.margin_target
    r = R - nb
    y = np.zeros(ms.m + 1)
    z0 = 1.0
    Zs = {k: z0 * np.eye(prep.sizes[k]) for k in blocks}
    zs, zr = z0, z0
    bnorm = 1.0 + np.linalg.norm(ms.rhs)
    it = 0
    converged = False
    best, best_merit, since_best = None, np.inf, 0
    best_bound = np.inf
    for it in range(1, opts.max_iter + 1):
        AX = ms.apply(Xs, s, r)
        rp = ms.rhs - AX
        ATy, ATy_s, ATy_r = ms.adjoint(y)
        Rd = {k: -ATy[k] - Zs[k] for k in blocks}
        rd_s = 1.0 - ATy_s - zs
        rd_r = 0.0 - ATy_r - zr
        gap = sum(np.sum(Xs[k] * Zs[k]) for k in blocks) + s * zs + r * zr
        mu = gap / N
        pobj = s
        dobj = ms.rhs @ y
        pinf = np.linalg.norm(rp) / bnorm
        dinf = np.sqrt(sum(np.sum(Rd[k] ** 2) for k in blocks) + rd_s**2 + rd_r**2) / (1.0 + 1.0)
        rgap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
        log.debug("it %3d  t %+.3e  pinf %.1e  dinf %.1e  gap %.1e  mu %.1e", it, ms.tau - s, pinf, dinf, rgap, mu)
        merit = max(pinf / opts.feas_tol, dinf / opts.feas_tol, rgap / opts.gap_tol)
        # weak duality: with y nearly dual feasible, s* >= dobj - |Rd| * |x|
        x_norm = R + s
        s_lower = dobj - (dinf * 2.0) * x_norm
        infeasible = dinf <= opts.feas_tol and ms.tau - s_lower < -opts.min_margin
        if merit < best_merit or infeasible:
            snap = ({k: v.copy() for k, v in Xs.items()}, s, r, y.copy(), {k: v.copy() for k, v in Zs.items()})
            best, best_merit, since_best = snap, merit, 0
            best_bound = ms.tau - s_lower if dinf <= opts.feas_tol else np.inf
        else:
            since_best += 1
        if merit <= 1.0 or infeasible:
            converged = True
            break
        if since_best >= STALL_ITERATIONS:
            break
        try:
            Zinv, Lzi, Lx = {}, {}, {}
            for k in blocks:
                Lz = np.linalg.cholesky(Zs[k])
                Lzi[k] = scipy.linalg.solve_triangular(Lz, np.eye(len(Lz)), lower=True)
                Zinv[k] = Lzi[k].T @ Lzi[k]
                Lx[k] = np.linalg.cholesky(Xs[k])
            cf = ms.schur_factor(Lx, Lzi, s, zs, r, zr)
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError, _Breakdown) as exc:
            if best is None:
                raise _Breakdown(str(exc)) from exc
            log.debug("factorization breakdown at iteration %d: %s", it, exc)
            break

        def direction(sigma_mu, corr):
            # complementarity target per block: sigma mu I - corr
            Tk = {}
            for k in blocks:
                Ck = sigma_mu * np.eye(prep.sizes[k])
                if corr is not None:
                    Ck = Ck - corr[0][k]
                Tk[k] = Ck
            ts = sigma_mu - (corr[1] if corr is not None else 0.0)
            tr_ = sigma_mu - (corr[2] if corr is not None else 0.0)
            # dX = T Z^-1 - X - X dZ Z^-1 ; dZ = Rd - A* dy
            G = {k: Tk[k] @ Zinv[k] - Xs[k] - Xs[k] @ Rd[k] @ Zinv[k] for k in blocks}
            gs = ts / zs - s - s * rd_s / zs
            gr = tr_ / zr - r - r * rd_r / zr
            rhs = rp - ms.apply({k: _sym(G[k]) for k in blocks}, gs, gr)
            dy = _schur_solve(cf, rhs)
            Ady, Ady_s, Ady_r = ms.adjoint(dy)
            dZ = {k: Rd[k] - Ady[k] for k in blocks}
            dzs = rd_s - Ady_s
            dzr = rd_r - Ady_r
            dX = {k: _sym(G[k] + Xs[k] @ Ady[k] @ Zinv[k]) for k in blocks}
            dxs = gs + s * Ady_s / zs
            dxr = gr + r * Ady_r / zr
            return dX, dxs, dxr, dy, dZ, dzs, dzr

        def steps(dX, dxs, dxr, dZ, dzs, dzr):
            ap = min([_max_step(Xs[k], dX[k]) for k in blocks] + [_scalar_step(s, dxs), _scalar_step(r, dxr)])
            ad = min([_max_step(Zs[k], dZ[k]) for k in blocks] + [_scalar_step(zs, dzs), _scalar_step(zr, dzr)])
            return ap, ad

        try:
            dX, dxs, dxr, dy, dZ, dzs, dzr = direction(0.0, None)
            ap, ad = steps(dX, dxs, dxr, dZ, dzs, dzr)
            ap, ad = min(1.0, ap), min(1.0, ad)
            gap_aff = (
                sum(np.sum((Xs[k] + ap * dX[k]) * (Zs[k] + ad * dZ[k])) for k in blocks)
                + (s + ap * dxs) * (zs + ad * dzs)
                + (r + ap * dxr) * (zr + ad * dzr)
            )
            sigma = min(1.0, max(0.0, gap_aff / gap)) ** 3
            corr = ({k: dX[k] @ dZ[k] for k in blocks}, dxs * dzs, dxr * dzr)
            dX, dxs, dxr, dy, dZ, dzs, dzr = direction(sigma * mu, corr)
            ap, ad = steps(dX, dxs, dxr, dZ, dzs, dzr)
        except np.linalg.LinAlgError as exc:
            if best is None:
                raise _Breakdown(str(exc)) from exc
            log.debug("factorization breakdown at iteration %d: %s", it, exc)
            break
        ap = min(1.0, opts.step_fraction * ap)
        ad = min(1.0, opts.step_fraction * ad)
        for k in blocks:
            Xs[k] = _sym(Xs[k] + ap * dX[k])
            Zs[k] = _sym(Zs[k] + ad * dZ[k])
        s += ap * dxs
        r += ap * dxr
        y = y + ad * dy
        zs += ad * dzs
        zr += ad * dzr
        if not np.isfinite(s) or not np.isfinite(y).all():
            raise _Breakdown("non-finite iterate")
    Xs, s, r, y, Zs = best
    return Xs, s, r, y, Zs, it, converged, best_bound


def _scalar_step(v: float, dv: float) -> float:
    return np.inf if dv >= 0 else -v / dv


# --- public API -----------------------------------------------------------------


def _recover(prob: SdpProblem, prep: _Prepared, grams: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray, float]:
    """Free values from the Gram part, plus a minimum-norm residual correction."""
    xs = np.concatenate([sym_to_upper(G) for G in grams]) if grams else np.zeros(0)
    As = prob.A[:, : prob.free_offset]
    res = prob.b - As @ xs
    if prob.n_free:
        v = np.linalg.lstsq(prep.A_free, res, rcond=None)[0]
    else:
        v = np.zeros(0)
    x = np.concatenate([xs, v])
    r = prob.b - prob.A @ x
    if np.abs(r).max(initial=0.0) > 0:
        # one min-norm correction over all columns
        Ad = prob.A.toarray()
        dx = np.linalg.lstsq(Ad, r, rcond=None)[0]
        x2 = x + dx
        if np.abs(prob.b - prob.A @ x2).max(initial=0.0) < np.abs(r).max():
            x = x2
    resid = float(np.abs(prob.b - prob.A @ x).max(initial=0.0))
    return x[: prob.free_offset], x[prob.free_offset :], resid


def solve(prob: SdpProblem, opts: SolverOptions | None = None) -> SdpSolution:
    """Find a point of the feasibility SDP with maximal uniform margin (capped)."""
    opts = opts or SolverOptions()
    sizes = prob.block_sizes
    empty = [np.zeros((n, n)) for n in sizes]
    prep = _prepare(prob)
    if prep.b is None:
        return SdpSolution(empty, np.zeros(prob.n_free), Status.INFEASIBLE, -np.inf, np.inf, 0,
                           message="equality rows inconsistent after eliminating free variables")
    if sum(sizes) == 0:
        xs, v, resid = _recover(prob, prep, empty)
        status = Status.FEASIBLE if resid < opts.feas_tol else Status.INFEASIBLE
        return SdpSolution(empty, v, status, np.inf, resid, 0, margin=np.inf)

    R = opts.trace_bound * max(1, sum(sizes))
    total_it = 0
    for attempt in range(opts.trace_retries + 1):
        try:
            Xs, s, r, y, Zs, it, converged, t_upper = _solve_margin(prep, opts, R)
        except _Breakdown as exc:
            return SdpSolution(empty, np.zeros(prob.n_free), Status.NUMERICAL_FAILURE, -np.inf, np.inf,
                               total_it, message=f"factorization breakdown: {exc}")
        total_it += it
        # a (nearly) active trace bound means the margin may be limited by R
        if r > 1e-6 * R or attempt == opts.trace_retries:
            break
        R *= 100.0
    t = opts.margin_target - s
    grams = []
    for k, n in enumerate(sizes):
        if n == 0:
            grams.append(np.zeros((0, 0)))
        else:
            grams.append(_sym(Xs[k] + t * np.eye(n)))
    duals = [Zs[k] if n else np.zeros((0, 0)) for k, n in enumerate(sizes)]
    xs, v, resid = _recover(prob, prep, grams)
    grams = [_sym(X) for X in prob.split(np.concatenate([xs, v]))[0]]
    margin = min((float(np.linalg.eigvalsh(G)[0]) for G in grams if G.size), default=np.inf)
    if t_upper < -opts.min_margin:
        status, msg = Status.INFEASIBLE, f"dual bound proves margin <= {t_upper:.3e}"
    elif not converged:
        if total_it >= opts.max_iter:
            status, msg = Status.MAX_ITERATIONS, f"no convergence in {opts.max_iter} iterations"
        else:
            status, msg = Status.NUMERICAL_FAILURE, "progress stalled before reaching tolerance"
    elif t < -opts.min_margin:
        status, msg = Status.INFEASIBLE, "optimal margin is negative (dual certificate)"
    elif margin >= opts.min_margin and resid < opts.feas_tol:
        status, msg = Status.FEASIBLE, ""
    elif resid >= opts.feas_tol:
        status, msg = Status.NUMERICAL_FAILURE, f"equality residual {resid:.2e} above tolerance"
    else:
        status, msg = Status.NUMERICAL_FAILURE, "optimal margin is zero: feasible set has empty interior"
    return SdpSolution(grams, v, status, margin, resid, total_it, margin=t, message=msg, dual_blocks=duals)


def check_solution(prob: SdpProblem, sol: SdpSolution) -> dict:
    """Solver-independent check: eigenvalues per block and residual per row."""
    if len(sol.block_values) != len(prob.blocks):
        raise ValueError("solution has the wrong number of blocks")
    for blk, X in zip(prob.blocks, sol.block_values):
        if np.shape(X) != (blk.size, blk.size):
            raise ValueError(f"block {blk.name} has shape {np.shape(X)}, expected {(blk.size, blk.size)}")
    if len(sol.free_values) != prob.n_free:
        raise ValueError("wrong number of free values")
    min_eig = {}
    for blk, X in zip(prob.blocks, sol.block_values):
        X = np.asarray(X, dtype=float)
        min_eig[blk.name] = float(np.linalg.eigvalsh(_sym(X))[0]) if blk.size else np.inf
    x = prob.pack([np.asarray(X, dtype=float) for X in sol.block_values], np.asarray(sol.free_values, dtype=float))
    residual = prob.b - prob.A @ x
    return {
        "min_eig": min_eig,
        "residual": residual,
        "max_residual": float(np.abs(residual).max(initial=0.0)),
        "min_margin": min(min_eig.values(), default=np.inf),
    }
