"""Compile SOS / polynomial-equality constraints into one block SDP.

Decision vector layout: for each Gram block the upper-triangular entries
``G[r, c]`` (r <= c, row-major), then the free variables.  Row ``i`` of the
equality system reads ``A[i] @ x == b[i]`` where ``A`` holds the coefficient
of each upper-triangular *entry* (an off-diagonal entry appears twice in
``Z' G Z`` and therefore carries a factor 2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .conditions import ConditionSet, SosConstraint
from .polyalg import LinExpr, Monomial, Polynomial, PolyMatrix, grlex_key, monomials_up_to

PIVOT_TOL = 1e-10


class CompileError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class GramBlock:
    name: str
    basis: tuple[Monomial, ...]
    offset: int
    nvars: int

    @property
    def size(self) -> int:
        return len(self.basis)

    @property
    def nentries(self) -> int:
        return self.size * (self.size + 1) // 2


@dataclass(eq=False)
class SdpProblem:
    blocks: list[GramBlock]
    n_free: int
    A: sp.csr_matrix
    b: np.ndarray
    row_names: list[str] = field(default_factory=list)
    free_names: list[str] = field(default_factory=list)
    free_offset: int = 0
    # id of the registry variable behind each free column
    free_var_ids: list[int] = field(default_factory=list)

    @property
    def block_sizes(self) -> list[int]:
        return [blk.size for blk in self.blocks]

    @property
    def nrows(self) -> int:
        return self.A.shape[0]

    @property
    def ncols(self) -> int:
        return self.A.shape[1]

    def split(self, x: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
        """Unpack a decision vector into dense symmetric blocks and free values."""
        mats = []
        for blk in self.blocks:
            mats.append(upper_to_sym(x[blk.offset : blk.offset + blk.nentries], blk.size))
        return mats, x[self.free_offset : self.free_offset + self.n_free]

    def pack(self, mats: list[np.ndarray], free: np.ndarray) -> np.ndarray:
        x = np.zeros(self.ncols)
        for blk, M in zip(self.blocks, mats):
            x[blk.offset : blk.offset + blk.nentries] = sym_to_upper(M)
        x[self.free_offset : self.free_offset + self.n_free] = free
        return x


def upper_to_sym(v: np.ndarray, n: int) -> np.ndarray:
    M = np.zeros((n, n))
    iu = np.triu_indices(n)
    M[iu] = v
    return M + np.triu(M, 1).T


def sym_to_upper(M: np.ndarray) -> np.ndarray:
    return np.asarray(M)[np.triu_indices(M.shape[0])]


# --- Gram parameterization -----------------------------------------------------


def half_degree_basis(nvars: int, degree: int) -> list[Monomial]:
    if degree % 2:
        raise CompileError(f"SOS degree must be even, got {degree}")
    return monomials_up_to(nvars, degree // 2)


def scalarize(H: PolyMatrix) -> tuple[Polynomial, int]:
    """y' H(x) y as a polynomial in (x, y); returns it with the x-dimension."""
    if H.rows != H.cols:
        raise CompileError("matrix SOS constraint must be square")
    if not H.is_symmetric():
        raise CompileError("matrix SOS constraint must be symmetric")
    k, nx = H.rows, H.nvars
    nv = nx + k
    y = [Polynomial.variable(nx + i, nv) for i in range(k)]
    out = Polynomial.zero(nv)
    for i in range(k):
        for j in range(i, k):
            p = H[i, j]
            if p.is_zero():
                continue
            w = 1.0 if i == j else 2.0
            out = out + p.embed(nv) * (y[i] * y[j]) * w
    return out, nx


def mixed_basis(nx: int, k: int, degree: int) -> list[Monomial]:
    """{y_i m(x)} with m of degree <= degree/2, ordered by y index then grlex."""
    xs = half_degree_basis(nx, degree)
    out = []
    for i in range(k):
        for m in xs:
            out.append(tuple(m) + tuple(int(i == j) for j in range(k)))
    return out


def _expr_degree(p: Polynomial, nx: int) -> int:
    return max((sum(m[:nx]) for m in p), default=0)


def _pairs_by_monomial(basis: list[Monomial]) -> dict[Monomial, list[tuple[int, int]]]:
    pairs: dict[Monomial, list[tuple[int, int]]] = {}
    for i, bi in enumerate(basis):
        for j in range(i, len(basis)):
            m = tuple(a + c for a, c in zip(bi, basis[j]))
            pairs.setdefault(m, []).append((i, j))
    return pairs


def newton_prune(p: Polynomial, basis: list[Monomial]) -> list[Monomial]:
    """Keep basis monomials m with 2m in the Newton polytope of ``p``."""
    from scipy.optimize import linprog

    support = np.array(list(p), dtype=float)
    if len(support) == 0:
        return []
    keep = []
    for m in basis:
        target = 2.0 * np.array(m, dtype=float)
        # convex combination of support points equal to target
        A_eq = np.vstack([support.T, np.ones(len(support))])
        b_eq = np.concatenate([target, [1.0]])
        res = linprog(np.zeros(len(support)), A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs")
        if res.status == 0:
            keep.append(m)
    return keep


@dataclass
class GramRows:
    """Equality rows produced for one Gram block (local indices)."""

    block: GramBlock
    # each row: (monomial, {entry_index: coef}, LinExpr of the constrained coefficient)
    rows: list[tuple[Monomial, dict[int, float], LinExpr]]


def _entry_index(i: int, j: int, n: int) -> int:
    # row-major upper-triangular index of (i, j), i <= j
    return i * n - i * (i - 1) // 2 + (j - i)


def sos_to_gram(p: Polynomial, degree: int | None = None, basis: list[Monomial] | None = None,
                name: str = "sos", offset: int = 0, prune: bool = False) -> GramRows:
    """Rows matching the coefficients of ``p`` with those of ``Z' G Z``."""
    if basis is None:
        d = p.degree() if degree is None else degree
        d = max(d, 0)
        if degree is None and d % 2:
            d += 1
        basis = half_degree_basis(p.nvars, d)
    if prune:
        basis = newton_prune(p, basis)
    block = GramBlock(name=name, basis=tuple(basis), offset=offset, nvars=p.nvars)
    pairs = _pairs_by_monomial(list(basis))
    n = len(basis)
    monos = sorted(set(pairs) | set(p), key=grlex_key)
    rows = []
    for m in monos:
        entries = {}
        for i, j in pairs.get(m, ()):
            entries[_entry_index(i, j, n)] = 1.0 if i == j else 2.0
        c = p.coeff(m)
        rows.append((m, entries, c if isinstance(c, LinExpr) else LinExpr(const=float(c))))
    return GramRows(block, rows)


def matrix_sos_to_gram(H: PolyMatrix, degree: int | None = None, name: str = "msos",
                       offset: int = 0, prune: bool = False) -> GramRows:
    """Scalarize y'H(x)y and build its Gram rows over the mixed basis {y_i m(x)}."""
    q, nx = scalarize(H)
    k = H.rows
    if degree is None:
        degree = max(H.degree(), 0)
        degree += degree % 2
    elif degree % 2:
        raise CompileError(f"SOS degree must be even, got {degree}")
    basis = mixed_basis(nx, k, degree)
    return sos_to_gram(q, basis=basis, name=name, offset=offset, prune=prune)


def match_equality(lhs: Polynomial, rhs: Polynomial | None = None) -> list[tuple[Monomial, LinExpr]]:
    """One row per monomial of ``lhs - rhs``: the LinExpr that must equal zero."""
    e = lhs if rhs is None else lhs - rhs
    out = []
    for m, c in e.items():
        out.append((m, c if isinstance(c, LinExpr) else LinExpr(const=float(c))))
    return out


# --- Compilation ---------------------------------------------------------------


def _constraint_rows(c: SosConstraint, offset: int, prune: bool) -> GramRows:
    if c.size == 1:
        p = c.expr[0, 0]
        d = max(p.degree(), 0)
        d += d % 2
        return sos_to_gram(p, degree=d, name=c.name, offset=offset, prune=prune)
    return matrix_sos_to_gram(c.expr, name=c.name, offset=offset, prune=prune)


def compile(cs: ConditionSet, prune: bool = False, reduce_rows: bool = True,
            reduce_faces: bool = False) -> SdpProblem:
    """Turn a ConditionSet into an :class:`SdpProblem`.

    ``reduce_faces`` runs :func:`diagonal_reduction` afterwards (implies
    ``reduce_rows``), which is what makes the rimless-wheel problem strictly
    feasible.
    """
    gram_rows: list[GramRows] = []
    offset = 0
    for c in cs.sos_constraints():
        gr = _constraint_rows(c, offset, prune)
        gram_rows.append(gr)
        offset += gr.block.nentries
    n_gram = offset

    # free variables: every registry variable that appears anywhere
    used: set[int] = set()
    for gr in gram_rows:
        for _, _, le in gr.rows:
            used.update(le.coeffs)
    eq_rows: list[tuple[str, LinExpr]] = []
    for e in cs.equality_constraints():
        for k, p in enumerate(e.exprs):
            for m, le in match_equality(p):
                eq_rows.append((f"{e.name}[{k}]{list(m)}", le))
                used.update(le.coeffs)
    free_ids = sorted(used)
    col_of = {v: n_gram + i for i, v in enumerate(free_ids)}

    data, ri, ci, b, names = [], [], [], [], []
    r = 0
    for gr in gram_rows:
        base = gr.block.offset
        for m, entries, le in gr.rows:
            # sum G entries - (LinExpr) = 0  ->  entries - le.coeffs = le.const
            for idx, v in entries.items():
                ri.append(r); ci.append(base + idx); data.append(v)
            for var, v in le.coeffs.items():
                ri.append(r); ci.append(col_of[var]); data.append(-v)
            b.append(le.const)
            names.append(f"{gr.block.name}{list(m)}")
            r += 1
    for name, le in eq_rows:
        for var, v in le.coeffs.items():
            ri.append(r); ci.append(col_of[var]); data.append(v)
        b.append(-le.const)
        names.append(name)
        r += 1

    ncols = n_gram + len(free_ids)
    A = sp.csr_matrix((data, (ri, ci)), shape=(r, ncols))
    A.sum_duplicates()
    A.sort_indices()
    b = np.asarray(b, dtype=float)
    prob = SdpProblem(
        blocks=[gr.block for gr in gram_rows],
        n_free=len(free_ids),
        A=A,
        b=b,
        row_names=names,
        free_names=[cs.registry.names[v] for v in free_ids],
        free_offset=n_gram,
        free_var_ids=free_ids,
    )
    if reduce_rows or reduce_faces:
        prob = remove_redundant_rows(prob)
    if reduce_faces:
        prob, _ = diagonal_reduction(prob)
    return prob


def remove_redundant_rows(prob: SdpProblem, tol: float = PIVOT_TOL) -> SdpProblem:
    """Drop linearly dependent rows; raise on an inconsistent system."""
    A, b = prob.A, prob.b
    if A.shape[0] == 0:
        return prob
    nnz_rows = np.diff(A.indptr) > 0
    zero_bad = (~nnz_rows) & (np.abs(b) > tol * max(1.0, np.abs(b).max()))
    if zero_bad.any():
        i = int(np.flatnonzero(zero_bad)[0])
        raise CompileError(f"contradictory row {prob.row_names[i]}: 0 = {b[i]}")
    keep = np.flatnonzero(nnz_rows)
    Ad = A[keep].toarray()
    # rank-revealing QR on the transpose picks an independent row subset
    _, R, piv = scipy.linalg.qr(Ad.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > tol * diag[0])) if len(diag) else 0
    chosen = np.sort(keep[piv[:rank]])
    # consistency of the dropped rows
    Ak, bk = A[chosen].toarray(), b[chosen]
    if rank < len(keep):
        coef, *_ = np.linalg.lstsq(Ak.T, A.toarray().T, rcond=None)
        resid = b - coef.T @ bk
        scale = 1.0 + np.abs(b).max()
        if np.abs(resid).max() > 1e-7 * scale:
            i = int(np.argmax(np.abs(resid)))
            raise CompileError(f"inconsistent equality system at row {prob.row_names[i]}")
    return SdpProblem(
        blocks=prob.blocks,
        n_free=prob.n_free,
        A=A[chosen].tocsr(),
        b=b[chosen].copy(),
        row_names=[prob.row_names[i] for i in chosen],
        free_names=prob.free_names,
        free_offset=prob.free_offset,
        free_var_ids=prob.free_var_ids,
    )


def block_operator(prob: SdpProblem, k: int) -> np.ndarray:
    """Dense (nrows, size, size) symmetric matrices M_i with row_i(X) = <M_i, X>."""
    blk = prob.blocks[k]
    n = blk.size
    sub = prob.A[:, blk.offset : blk.offset + blk.nentries].toarray()
    iu = np.triu_indices(n)
    off = iu[0] != iu[1]
    sub[:, off] *= 0.5
    M = np.zeros((sub.shape[0], n, n))
    M[:, iu[0], iu[1]] = sub
    M[:, iu[1], iu[0]] = sub
    return M


def diagonal_reduction(prob: SdpProblem, tol: float = 1e-7, max_rounds: int = 50) -> tuple[SdpProblem, dict[str, list]]:
    """Drop basis elements whose Gram diagonal is forced to zero.

    Each round solves one LP for y with A'y vanishing on off-diagonal and
    free columns, A'y = d >= 0 on diagonal columns and b'y = 0.  Then
    sum d_i G_ii = 0 for every feasible point, so every G_ii with d_i > 0 is
    zero, and so is the rest of that row and column of the PSD block.
    Returns the reduced problem and the removed monomials per block.
    """
    from scipy.optimize import linprog

    removed: dict[str, list] = {}
    for _ in range(max_rounds):
        if prob.nrows == 0:
            break
        diag, offd = [], []
        for blk in prob.blocks:
            iu = np.triu_indices(blk.size)
            for e, (i, j) in enumerate(zip(*iu)):
                (diag if i == j else offd).append(blk.offset + e)
        if not diag:
            break
        free = list(range(prob.free_offset, prob.free_offset + prob.n_free))
        AT = prob.A.T.tocsr()
        Z = AT[offd + free]
        D = AT[diag]
        m, nd = prob.nrows, len(diag)
        A_eq = sp.vstack([
            sp.hstack([Z, sp.csr_matrix((Z.shape[0], nd))]),
            sp.hstack([D, -sp.eye(nd)]),
            sp.hstack([sp.csr_matrix(prob.b[None, :]), sp.csr_matrix((1, nd))]),
        ]).tocsr()
        c = np.concatenate([np.zeros(m), -np.ones(nd)])
        bounds = [(None, None)] * m + [(0.0, 1.0)] * nd
        res = linprog(c, A_eq=A_eq, b_eq=np.zeros(A_eq.shape[0]), bounds=bounds, method="highs")
        if res.status != 0:
            break
        forced = {diag[k] for k in np.flatnonzero(res.x[m:] > tol)}
        if not forced:
            break
        keep = {}
        for blk in prob.blocks:
            iu = np.triu_indices(blk.size)
            gone = [i for e, (i, j) in enumerate(zip(*iu)) if i == j and blk.offset + e in forced]
            if gone:
                removed.setdefault(blk.name, []).extend(blk.basis[i] for i in gone)
            keep[blk.name] = [i for i in range(blk.size) if i not in gone]
        prob = _select_basis(prob, keep)
    return prob, removed


def _select_basis(prob: SdpProblem, keep: dict[str, list[int]]) -> SdpProblem:
    blocks, cols = [], []
    off = 0
    for blk in prob.blocks:
        idx = keep[blk.name]
        nb = GramBlock(blk.name, tuple(blk.basis[i] for i in idx), off, blk.nvars)
        for a in range(len(idx)):
            for c in range(a, len(idx)):
                cols.append(blk.offset + _entry_index(idx[a], idx[c], blk.size))
        blocks.append(nb)
        off += nb.nentries
    cols.extend(range(prob.free_offset, prob.free_offset + prob.n_free))
    A = prob.A.tocsc()[:, cols].tocsr()
    out = SdpProblem(
        blocks=blocks,
        n_free=prob.n_free,
        A=A,
        b=prob.b.copy(),
        row_names=list(prob.row_names),
        free_names=prob.free_names,
        free_offset=off,
        free_var_ids=prob.free_var_ids,
    )
    return remove_redundant_rows(out)


def reconstruct(block: GramBlock, G: np.ndarray) -> Polynomial:
    """Z(x)' G Z(x) as an explicit polynomial."""
    out: dict[Monomial, float] = {}
    n = block.size
    for i in range(n):
        for j in range(n):
            m = tuple(a + c for a, c in zip(block.basis[i], block.basis[j]))
            out[m] = out.get(m, 0.0) + float(G[i, j])
    return Polynomial(out, block.nvars)


def constrained_polynomial(c: SosConstraint, values: np.ndarray) -> Polynomial:
    """The numeric polynomial a Gram block of ``c`` must reproduce (scalarized if matrix)."""
    # substitution rounds the mirrored entries differently
    expr = c.expr.substitute_values(values).symmetrize()
    if c.size == 1:
        return expr[0, 0]
    return scalarize(expr)[0]


def reconstruction_residual(cs: ConditionSet, prob: SdpProblem, grams: list[np.ndarray],
                            free_values: np.ndarray) -> dict[str, float]:
    """Largest coefficient mismatch between Z'GZ and its constraint, per block."""
    values = np.zeros(len(cs.registry))
    values[np.asarray(prob.free_var_ids, dtype=int)] = free_values
    by_name = {c.name: c for c in cs.sos_constraints()}
    out = {}
    for blk, G in zip(prob.blocks, grams):
        target = constrained_polynomial(by_name[blk.name], values)
        diff = reconstruct(blk, G) - target if blk.size else -target
        out[blk.name] = diff.max_abs_coeff()
    return out


# --- SDPA-style sparse text export ---------------------------------------------


def export_sdpa(prob: SdpProblem) -> str:
    """Sparse SDPA text. Free variables become a diagonal block of +/- pairs.

    Our rows ``<F_i, X> = b_i`` are SDPA's dual-side equalities; the objective
    matrix F0 is empty.  A comment line records which LP block holds the
    free-variable pairs so :func:`import_sdpa` can restore them.
    """
    m = prob.nrows
    # empty blocks (fully removed by facial reduction) own no columns and are omitted
    kept = [blk for blk in prob.blocks if blk.size > 0]
    sizes = [blk.size for blk in kept]
    lines = [f"* hybridcert sdp export", f"* free_pairs {prob.n_free}"]
    nblocks = len(sizes) + (1 if prob.n_free else 0)
    lines.append(f"{m} = mDIM")
    lines.append(f"{nblocks} = nBLOCK")
    struct = [str(s) for s in sizes] + ([str(-2 * prob.n_free)] if prob.n_free else [])
    lines.append(" ".join(struct))
    lines.append(" ".join(repr(float(v)) for v in prob.b))
    A = prob.A.tocoo()
    order = np.lexsort((A.col, A.row))
    blk_of = np.empty(prob.ncols, dtype=int)
    loc_of = np.empty((prob.ncols, 2), dtype=int)
    for bi, blk in enumerate(kept):
        iu = np.triu_indices(blk.size)
        blk_of[blk.offset : blk.offset + blk.nentries] = bi
        loc_of[blk.offset : blk.offset + blk.nentries, 0] = iu[0]
        loc_of[blk.offset : blk.offset + blk.nentries, 1] = iu[1]
    for k in range(prob.n_free):
        blk_of[prob.free_offset + k] = -1
        loc_of[prob.free_offset + k] = (k, k)
    for idx in order:
        row, col, val = int(A.row[idx]), int(A.col[idx]), float(A.data[idx])
        bi = blk_of[col]
        if bi >= 0:
            i, j = loc_of[col]
            v = val if i == j else val / 2.0
            lines.append(f"{row + 1} {bi + 1} {i + 1} {j + 1} {v!r}")
        else:
            k = loc_of[col][0]
            lb = len(sizes) + 1
            lines.append(f"{row + 1} {lb} {2 * k + 1} {2 * k + 1} {val!r}")
            lines.append(f"{row + 1} {lb} {2 * k + 2} {2 * k + 2} {-val!r}")
    return "\n".join(lines) + "\n"


def import_sdpa(text: str) -> SdpProblem:
    """Inverse of :func:`export_sdpa` (also reads plain SDPA files without free pairs)."""
    n_free = 0
    body = []
    for line in text.splitlines():
        s = line.strip()
        if not s:
            continue
        if s[0] in "*\"":
            parts = s[1:].split()
            if len(parts) == 2 and parts[0] == "free_pairs":
                n_free = int(parts[1])
            continue
        body.append(s.replace(",", " ").replace("{", " ").replace("}", " ").replace("(", " ").replace(")", " "))
    m = int(body[0].split()[0])
    nblocks = int(body[1].split()[0])
    struct = [int(t) for t in body[2].split()[:nblocks]]
    b = np.array([float(t) for t in body[3].split()[:m]])
    psd_sizes = [s for s in struct if s > 0]
    if n_free and struct[-1] != -2 * n_free:
        raise ValueError("free-pair block does not match header")
    blocks = []
    off = 0
    bmap = {}
    for bi, s in enumerate(struct):
        if s > 0:
            blk = GramBlock(name=f"block{bi + 1}", basis=tuple((k,) for k in range(s)), offset=off, nvars=1)
            bmap[bi + 1] = blk
            blocks.append(blk)
            off += blk.nentries
        elif not (n_free and bi == nblocks - 1):
            # generic diagonal LP block: one 1x1 PSD block per entry
            for k in range(-s):
                blk = GramBlock(name=f"block{bi + 1}_{k + 1}", basis=((0,),), offset=off, nvars=1)
                bmap[(bi + 1, k + 1)] = blk
                blocks.append(blk)
                off += 1
    free_offset = off
    ri, ci, data = [], [], []
    for s in body[4:]:
        t = s.split()
        row, bi, i, j, v = int(t[0]), int(t[1]), int(t[2]), int(t[3]), float(t[4])
        if row == 0:
            continue
        if n_free and bi == nblocks:
            if i % 2 == 1:
                ri.append(row - 1); ci.append(free_offset + (i - 1) // 2); data.append(v)
            continue
        if struct[bi - 1] < 0:
            blk = bmap[(bi, i)]
            ri.append(row - 1); ci.append(blk.offset); data.append(v)
            continue
        blk = bmap[bi]
        i, j = min(i, j) - 1, max(i, j) - 1
        ri.append(row - 1); ci.append(blk.offset + _entry_index(i, j, blk.size))
        data.append(v if i == j else 2.0 * v)
    A = sp.csr_matrix((data, (ri, ci)), shape=(m, free_offset + n_free))
    A.sum_duplicates()
    A.sort_indices()
    return SdpProblem(blocks=blocks, n_free=n_free, A=A, b=b, row_names=[f"r{i}" for i in range(m)],
                      free_names=[f"v{k}" for k in range(n_free)], free_offset=free_offset,
                      free_var_ids=list(range(n_free)))
