"""Symbolic assembly of the transverse-contraction conditions.

Unknown certificate functions (W, alpha, beta, rho, zeta and the region
multipliers) are polynomials whose coefficients are :class:`LinExpr` objects
over decision variables allocated in a :class:`VarRegistry`.  Every condition
is linear in those variables, so all products below are between a symbolic
and a numeric polynomial.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import HybridSystem, SwitchingSurface, jacobian
from .polyalg import LinExpr, Polynomial, PolyMatrix, lie_derivative, monomials_up_to

DEFAULT_MARGIN = 1e-6


class VarRegistry:
    """Allocates decision-variable ids with readable names."""

    def __init__(self):
        self.names: list[str] = []

    def new(self, name: str) -> int:
        self.names.append(name)
        return len(self.names) - 1

    def __len__(self) -> int:
        return len(self.names)


def unknown_poly(reg: VarRegistry, nvars: int, degree: int, name: str) -> Polynomial:
    """Polynomial with one fresh coefficient variable per monomial of degree <= ``degree``."""
    terms = {}
    for m in monomials_up_to(nvars, degree):
        terms[m] = LinExpr.var(reg.new(f"{name}[{','.join(map(str, m))}]"))
    return Polynomial(terms, nvars)


def unknown_sym_matrix(reg: VarRegistry, n: int, nvars: int, degree: int, name: str) -> PolyMatrix:
    rows = [[None] * n for _ in range(n)]
    for i in range(n):
        for j in range(i, n):
            p = unknown_poly(reg, nvars, degree, f"{name}{i}{j}")
            rows[i][j] = rows[j][i] = p
    return PolyMatrix.from_rows(rows)


def sym_outer(f) -> PolyMatrix:
    """f f' built from the upper triangle so the result is exactly symmetric."""
    n = len(f)
    rows = [[None] * n for _ in range(n)]
    for i in range(n):
        for j in range(i, n):
            rows[i][j] = rows[j][i] = f[i] * f[j]
    return PolyMatrix.from_rows(rows)


@dataclass(frozen=True)
class CertificateTemplate:
    deg_W: int = 4
    deg_beta: int = 4
    deg_L: int = 2
    deg_scalars: int = 2
    lam: float = 0.05
    margin: float = DEFAULT_MARGIN
    surface_multipliers: bool = True

    def __post_init__(self):
        for k in ("deg_W", "deg_beta", "deg_L", "deg_scalars"):
            if getattr(self, k) < 0:
                raise ValueError(f"{k} must be >= 0")
        if self.deg_W % 2:
            raise ValueError("deg_W must be even")
        if self.lam < 0:
            raise ValueError("contraction rate must be >= 0")
        if self.margin < 0:
            raise ValueError("margin must be >= 0")

    def to_dict(self) -> dict:
        return {
            "deg_W": self.deg_W,
            "deg_beta": self.deg_beta,
            "deg_L": self.deg_L,
            "deg_scalars": self.deg_scalars,
            "lambda": self.lam,
            "margin": self.margin,
            "surface_multipliers": self.surface_multipliers,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CertificateTemplate":
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        return cls(**d)


@dataclass(frozen=True, eq=False)
class SosConstraint:
    """``expr`` (symmetric, k x k) must be a sum-of-squares matrix in ``expr.nvars`` variables."""

    name: str
    expr: PolyMatrix

    @property
    def size(self) -> int:
        return self.expr.rows


@dataclass(frozen=True, eq=False)
class EqualityConstraint:
    """Every polynomial in ``exprs`` must vanish identically."""

    name: str
    exprs: tuple[Polynomial, ...]


@dataclass(eq=False)
class ConditionSet:
    positivity: list[SosConstraint] = field(default_factory=list)
    orthogonality: list[EqualityConstraint] = field(default_factory=list)
    continuous_lmi: list[SosConstraint] = field(default_factory=list)
    discrete_lmi: list[SosConstraint] = field(default_factory=list)
    multiplier_sos: list[SosConstraint] = field(default_factory=list)
    normalization: list[EqualityConstraint] = field(default_factory=list)
    unknowns: dict = field(default_factory=dict)
    registry: VarRegistry = field(default_factory=VarRegistry)

    def sos_constraints(self) -> list[SosConstraint]:
        return self.positivity + self.continuous_lmi + self.discrete_lmi + self.multiplier_sos

    def equality_constraints(self) -> list[EqualityConstraint]:
        return self.orthogonality + self.normalization

    def all_expressions(self):
        for c in self.sos_constraints():
            yield c.name, c.expr
        for e in self.equality_constraints():
            for p in e.exprs:
                yield e.name, PolyMatrix.from_rows([[p]])


def continuous_condition(sys: HybridSystem, W: PolyMatrix, lam: float, rho) -> PolyMatrix:
    """H = W A' + A W - Wdot + 2 lam W - rho f f'; certification needs -H >= 0 on K."""
    n = sys.n
    if W.shape != (n, n):
        raise ValueError(f"W must be {n}x{n}")
    if not W.is_symmetric():
        raise ValueError("W must be symmetric")
    A = jacobian(sys)
    AW = A @ W
    H = AW + AW.transpose() - lie_derivative(W, sys.f) + W * (2.0 * lam)
    if not (isinstance(rho, (int, float)) and rho == 0):
        H = H - sym_outer(sys.f) * rho
    return H


def orthogonality_condition(
    sys: HybridSystem, surface: SwitchingSurface, W: PolyMatrix, alpha, beta
) -> tuple[Polynomial, ...]:
    """Components of alpha f - W z - beta c, each required to vanish identically."""
    n = sys.n
    z = surface.z
    out = []
    for i in range(n):
        wz = Polynomial.zero(n)
        for j in range(n):
            if z[j] != 0:
                wz = wz + W[i, j] * float(z[j])
        out.append(sys.f[i] * alpha - wz - beta[i] * surface.c)
    return tuple(out)


def discrete_condition(sys: HybridSystem, surface: SwitchingSurface, W: PolyMatrix, zeta) -> PolyMatrix:
    """The 2n x 2n block [[W + zeta Q, W G'], [G W, W]] with G the reset Jacobian."""
    n = sys.n
    if W.shape != (n, n):
        raise ValueError(f"W must be {n}x{n}")
    G = surface.jump_jacobian()
    GW = G @ W
    top_left = W
    if not (isinstance(zeta, (int, float)) and zeta == 0):
        top_left = W + sym_outer(sys.f) * zeta
    return PolyMatrix.block([[top_left, GW.transpose()], [GW, W]])


def _scaled_identity(n: int, nvars: int, s: float) -> PolyMatrix:
    return PolyMatrix.from_numeric(np.eye(n) * s, nvars)


def _region_multiplied(reg: VarRegistry, cs: ConditionSet, constraints, k: int, nvars: int, deg: int, prefix: str):
    """Sum_i g_i L_i with fresh SOS matrix multipliers L_i (registered in ``cs``)."""
    total = PolyMatrix.zeros(k, k, nvars)
    for idx, (gname, g) in enumerate(constraints):
        L = unknown_sym_matrix(reg, k, nvars, deg, f"{prefix}{idx}_")
        name = f"{prefix}{idx}"
        cs.unknowns[name] = L
        cs.multiplier_sos.append(SosConstraint(f"{name}:{gname}", L))
        total = total + L * g
    return total


def surface_reference_point(sys: HybridSystem, surface: SwitchingSurface) -> np.ndarray:
    """A point on the surface inside the region, used to normalize alpha."""
    x0, B = surface.parameterization()
    if sys.region.box and B.shape[1] >= 1:
        lo = np.array([b[0] for b in sys.region.box])
        hi = np.array([b[1] for b in sys.region.box])
        mid = 0.5 * (lo + hi)
        s = np.linalg.lstsq(B, mid - x0, rcond=None)[0]
        return x0 + B @ s
    return x0


def assemble(sys: HybridSystem, template: CertificateTemplate) -> ConditionSet:
    """Build the full condition set for ``sys`` at the template degrees."""
    n = sys.n
    t = template
    cs = ConditionSet()
    reg = cs.registry
    region = sys.region_constraints()
    mu = t.margin

    W = unknown_sym_matrix(reg, n, n, t.deg_W, "W")
    rho = unknown_poly(reg, n, t.deg_scalars, "rho")
    cs.unknowns.update(W=W, rho=rho)
    cs.multiplier_sos.append(SosConstraint("rho", PolyMatrix.from_rows([[rho]])))

    # W - mu I - sum g_i L_i  is SOS, one multiplier per region constraint
    pos = W - _scaled_identity(n, n, mu) - _region_multiplied(reg, cs, region, n, n, t.deg_L, "L_pos")
    cs.positivity.append(SosConstraint("positivity", pos))

    # -H - mu I - sum g_i L_i  is SOS (H already carries -rho Q)
    H = continuous_condition(sys, W, t.lam, rho)
    cont = -H - _scaled_identity(n, n, mu) - _region_multiplied(reg, cs, region, n, n, t.deg_L, "L_cont")
    cs.continuous_lmi.append(SosConstraint("continuous", cont))

    for si, surf in enumerate(sys.surfaces):
        tag = f"{surf.name}" if len(sys.surfaces) > 1 else ""
        alpha = unknown_poly(reg, n, t.deg_scalars, f"alpha{tag}")
        beta = tuple(unknown_poly(reg, n, t.deg_beta, f"beta{tag}{i}_") for i in range(n))
        zeta = unknown_poly(reg, n, t.deg_scalars, f"zeta{tag}")
        cs.unknowns.update({f"alpha{tag}": alpha, f"beta{tag}": beta, f"zeta{tag}": zeta})
        cs.multiplier_sos.append(SosConstraint(f"alpha{tag}", PolyMatrix.from_rows([[alpha]])))
        cs.multiplier_sos.append(SosConstraint(f"zeta{tag}", PolyMatrix.from_rows([[zeta]])))

        cs.orthogonality.append(
            EqualityConstraint(f"orthogonality{tag}", orthogonality_condition(sys, surf, W, alpha, beta))
        )
        x_ref = surface_reference_point(sys, surf)
        val = _symbolic_value(alpha, x_ref)
        cs.normalization.append(
            EqualityConstraint(f"alpha_normalization{tag}", (Polynomial.constant(val - 1.0, n),))
        )

        # Schur block restricted to the surface via its affine parameterization.
        D = discrete_condition(sys, surf, W, zeta)
        subs = surf.surface_substitution()
        m = subs[0].nvars
        D_s = D.compose(subs)
        expr = D_s - _scaled_identity(2 * n, m, mu)
        if t.surface_multipliers:
            on_surface = []
            for gname, g in region:
                gs = g.compose(subs)
                if gs.degree() >= 1:
                    on_surface.append((gname, gs))
            expr = expr - _region_multiplied(reg, cs, on_surface, 2 * n, m, t.deg_L, f"L_surf{tag}")
        cs.discrete_lmi.append(SosConstraint(f"discrete{tag}", expr))
        cs.unknowns.setdefault("_surface_refs", {})[f"alpha{tag}"] = x_ref.tolist()
    return cs


def _symbolic_value(p: Polynomial, x: np.ndarray) -> LinExpr:
    acc = LinExpr()
    for mono, c in p.items():
        acc = acc + c * float(np.prod(np.asarray(x, dtype=float) ** np.array(mono)))
    return acc


def schur_reduced(W: np.ndarray, G: np.ndarray, zeta: float, f: np.ndarray) -> np.ndarray:
    """Numeric W + zeta f f' - W G' W^-1 G W, the Schur complement of the discrete block.

    For W > 0 the block matrix of :func:`discrete_condition` is PSD iff this is.
    """
    W = np.asarray(W, dtype=float)
    GW = np.asarray(G, dtype=float) @ W
    S = W + zeta * np.outer(f, f) - GW.T @ np.linalg.solve(W, GW)
    return 0.5 * (S + S.T)
