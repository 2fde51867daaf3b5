"""Polynomial hybrid systems and the rimless-wheel preset."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .polyalg import Polynomial, PolyMatrix, jacobian as _poly_jacobian, taylor_expand_cos, taylor_expand_sin

Field = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class SwitchingSurface:
    """Affine surface ``c(x) = 0`` with reset map ``x+ = g(x)``."""

    c: Polynomial
    reset: tuple[Polynomial, ...]
    name: str = "S0"

    def __post_init__(self):
        object.__setattr__(self, "reset", tuple(self.reset))
        if self.c.degree() > 1:
            raise ValueError("switching surface c(x) must be affine")
        if self.c.degree() < 1:
            raise ValueError("switching surface c(x) must depend on the state")
        if len(self.reset) != self.c.nvars:
            raise ValueError("reset map length must equal the state dimension")

    @property
    def n(self) -> int:
        return self.c.nvars

    @property
    def z(self) -> np.ndarray:
        """Constant normal vector (gradient of c)."""
        return np.array([self.c.coeff(tuple(int(i == j) for j in range(self.n))) for i in range(self.n)])

    @property
    def offset(self) -> float:
        """Constant term of c, so that c(x) = z.x + offset."""
        return float(self.c.coeff((0,) * self.n))

    def parameterization(self) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(x0, B)`` with ``c(x0 + B s) == 0`` for every s.

        ``B`` has orthonormal columns spanning the tangent space; the sign of
        each column is fixed so its largest-magnitude entry is positive.
        """
        z = self.z
        x0 = -self.offset * z / (z @ z)
        _, _, vt = np.linalg.svd(z[None, :])
        B = vt[1:].T.copy()
        for k in range(B.shape[1]):
            col = B[:, k]
            col[np.abs(col) < 1e-15] = 0.0
            if col[np.argmax(np.abs(col))] < 0:
                B[:, k] = -col
        return x0, B

    def surface_substitution(self) -> list[Polynomial]:
        """Polynomials ``x_i(s)`` in n-1 variables parameterizing the surface."""
        x0, B = self.parameterization()
        m = B.shape[1]
        subs = []
        for i in range(self.n):
            p = Polynomial.constant(float(x0[i]), m)
            for k in range(m):
                if B[i, k] != 0:
                    p = p + Polynomial.variable(k, m) * float(B[i, k])
            subs.append(p)
        return subs

    def jump_jacobian(self) -> PolyMatrix:
        return _poly_jacobian(self.reset)

    def apply_reset(self, x: np.ndarray) -> np.ndarray:
        return np.array([g.evaluate(x) for g in self.reset])


@dataclass(frozen=True, eq=False)
class Region:
    """Semialgebraic set ``{x : g_i(x) >= 0}``.

    ``inequalities`` excludes the no-equilibrium constraint, which is
    generated from the vector field with ``epsilon_no_equilibrium``.
    """

    inequalities: tuple[Polynomial, ...]
    epsilon_no_equilibrium: float = 1e-3
    names: tuple[str, ...] = ()
    box: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "inequalities", tuple(self.inequalities))
        object.__setattr__(self, "names", tuple(self.names) or tuple(f"g{i}" for i in range(len(self.inequalities))))
        object.__setattr__(self, "box", tuple(tuple(float(v) for v in b) for b in self.box))
        if self.epsilon_no_equilibrium <= 0:
            raise ValueError("epsilon_no_equilibrium must be positive")


@dataclass(frozen=True, eq=False)
class HybridSystem:
    """``x' = f(x)`` off the surfaces, ``x+ = g(x)`` on them.

    ``exact_field`` optionally provides a non-polynomial right-hand side used
    for simulation only (the polynomial ``f`` is what gets certified).
    """

    f: tuple[Polynomial, ...]
    surfaces: tuple[SwitchingSurface, ...]
    region: Region
    state_names: tuple[str, ...] = ()
    exact_field: Field | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "f", tuple(self.f))
        object.__setattr__(self, "surfaces", tuple(self.surfaces))
        n = len(self.f)
        if not self.state_names:
            object.__setattr__(self, "state_names", tuple(f"x{i}" for i in range(n)))
        for p in self.f:
            if p.nvars != n:
                raise ValueError("f must have one component per state variable")
        for s in self.surfaces:
            if s.n != n:
                raise ValueError("surface dimension mismatch")
        for g in self.region.inequalities:
            if g.nvars != n:
                raise ValueError("region inequality dimension mismatch")
        if self.region.box and len(self.region.box) != n:
            raise ValueError("region box must have one interval per state")

    @property
    def n(self) -> int:
        return len(self.f)

    def field_value(self, x: np.ndarray, exact: bool = False) -> np.ndarray:
        if exact and self.exact_field is not None:
            return np.asarray(self.exact_field(np.asarray(x, dtype=float)), dtype=float)
        return np.array([p.evaluate(x) for p in self.f])

    def no_equilibrium(self) -> Polynomial:
        """``f'f - eps``, always part of the region description."""
        ff = Polynomial.zero(self.n)
        for p in self.f:
            ff = ff + p * p
        return ff - self.region.epsilon_no_equilibrium

    def region_constraints(self) -> list[tuple[str, Polynomial]]:
        out = [("no_equilibrium", self.no_equilibrium())]
        out.extend(zip(self.region.names, self.region.inequalities))
        return out

    def in_region(self, x: np.ndarray, tol: float = 1e-12) -> np.ndarray | bool:
        x = np.asarray(x, dtype=float)
        ok = np.ones(x.shape[0] if x.ndim == 2 else 1, dtype=bool)
        for _, g in self.region_constraints():
            ok &= np.atleast_1d(g.evaluate(x)) >= -tol
        return ok if x.ndim == 2 else bool(ok[0])

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "state_names": list(self.state_names),
            "f": [p.to_records() for p in self.f],
            "surfaces": [
                {"name": s.name, "c": s.c.to_records(), "reset": [g.to_records() for g in s.reset]}
                for s in self.surfaces
            ],
            "region": {
                "inequalities": [g.to_records() for g in self.region.inequalities],
                "names": list(self.region.names),
                "epsilon": self.region.epsilon_no_equilibrium,
                "box": [list(b) for b in self.region.box],
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HybridSystem":
        n = int(d["n"])
        reg = d["region"]
        return cls(
            f=tuple(Polynomial.from_records(r, n) for r in d["f"]),
            surfaces=tuple(
                SwitchingSurface(
                    c=Polynomial.from_records(s["c"], n),
                    reset=tuple(Polynomial.from_records(g, n) for g in s["reset"]),
                    name=s.get("name", f"S{i}"),
                )
                for i, s in enumerate(d["surfaces"])
            ),
            region=Region(
                inequalities=tuple(Polynomial.from_records(g, n) for g in reg["inequalities"]),
                epsilon_no_equilibrium=float(reg.get("epsilon", 1e-3)),
                names=tuple(reg.get("names", ())),
                box=tuple(tuple(b) for b in reg.get("box", ())),
            ),
            state_names=tuple(d.get("state_names", ())),
        )

    def fingerprint(self) -> str:
        """SHA-256 of the canonical JSON description of the certified model."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"), allow_nan=False)
        return hashlib.sha256(blob.encode()).hexdigest()


def jacobian(sys: HybridSystem) -> PolyMatrix:
    """A(x) = df/dx."""
    return _poly_jacobian(sys.f)


def jump_jacobian(surface: SwitchingSurface) -> PolyMatrix:
    return surface.jump_jacobian()


def rimless_wheel_fixed_point(alpha: float = math.pi / 8, gamma: float = 0.08, g_over_l: float = 1.0) -> float:
    """Post-impact speed of the period-one gait from the energy balance.

    A swing from ``gamma - alpha`` to ``gamma + alpha`` gains
    ``delta = 2 (g/l)(cos(gamma - alpha) - cos(gamma + alpha))`` in squared
    speed and the impact scales the speed by ``cos(2 alpha)``, so the fixed
    point of ``w -> cos(2 alpha) sqrt(w^2 + delta)`` is returned.
    """
    c2 = math.cos(2 * alpha) ** 2
    delta = 2 * g_over_l * (math.cos(gamma - alpha) - math.cos(gamma + alpha))
    if delta <= 0:
        raise ValueError("no gait: the slope does not feed energy into the swing")
    return math.sqrt(c2 * delta / (1 - c2))


def rimless_wheel_energy_poly(taylor_order: int = 3, g_over_l: float = 1.0) -> Polynomial:
    """0.5 thetadot^2 + (g/l) P(theta) with P the cosine series one order above the field.

    Exactly conserved by the Taylor field of order ``taylor_order``.
    """
    thd = Polynomial.variable(1, 2)
    return thd * thd * 0.5 + taylor_expand_cos(taylor_order + 1, nvars=2, var=0) * g_over_l


def default_speed_bound(alpha: float, gamma: float, g_over_l: float, degree: int = 2) -> tuple[float, ...]:
    """Polynomial b(theta) strictly between the homoclinic orbit and the gait.

    Before the upright position (theta <= 0) every start above b must clear
    it, so b stays above the homoclinic speed there; the gait stays above b
    everywhere so the limit cycle lies in the region.  Past the upright any
    forward speed reaches the impact and b may dip slightly below the
    homoclinic curve.  The coefficients maximize the smallest clearance
    (a linear program on a grid).
    """
    from scipy.optimize import linprog

    lo, hi = gamma - alpha, gamma + alpha
    w = rimless_wheel_fixed_point(alpha, gamma, g_over_l)
    th = np.linspace(lo, hi, 401)
    homoclinic = np.sqrt(2 * g_over_l * (1 - np.cos(th)))
    gait = np.sqrt(w**2 + 2 * g_over_l * (math.cos(lo) - np.cos(th)))
    dip = 0.8 * (gait[0] - homoclinic[0])
    V = np.vander(th, degree + 1, increasing=True)
    ones = np.ones((len(th), 1))
    before = th <= 0
    # variables (b_0..b_degree, t); maximize t
    A_ub = np.vstack([
        np.hstack([V, ones]),                       # b + t <= gait
        np.hstack([-V[before], ones[before]]),      # b - t >= homoclinic
        np.hstack([-V[~before], 0 * ones[~before]]),  # b >= homoclinic - dip
    ])
    b_ub = np.concatenate([gait, -homoclinic[before], -(homoclinic[~before] - dip)])
    c = np.zeros(degree + 2)
    c[-1] = -1.0
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=[(None, None)] * (degree + 2), method="highs")
    if res.status != 0 or res.x[-1] <= 0:
        raise ValueError("no polynomial speed bound separates the homoclinic orbit from the gait")
    return tuple(float(v) for v in res.x[:-1])


def rimless_wheel(
    alpha: float = math.pi / 8,
    gamma: float = 0.08,
    g_over_l: float = 1.0,
    taylor_order: int = 3,
    b_coeffs: Sequence[float] | None = None,
    epsilon: float = 1e-3,
    energy_max: float | None = None,
    top_speed_ratio: float = 1.3,
) -> HybridSystem:
    """Rimless wheel on a slope, state ``[theta, thetadot]``.

    The stance leg angle is measured from vertical; impact happens at
    ``theta = gamma + alpha`` and the new stance leg starts at
    ``gamma - alpha`` with speed scaled by ``cos(2 alpha)``.

    The region is ``gamma - alpha <= theta <= gamma + alpha``,
    ``thetadot >= b(theta)`` (``b_coeffs`` in ascending powers of theta,
    default :func:`default_speed_bound`) and ``E(x) <= energy_max`` for the
    conserved polynomial energy E of the Taylor field.  The default cap is
    the energy of a post-impact speed ``top_speed_ratio`` times the gait's.
    """
    if not 0 < alpha < math.pi / 2:
        raise ValueError("alpha must lie in (0, pi/2)")
    if taylor_order < 1 or taylor_order % 2 == 0:
        raise ValueError("taylor_order must be odd and >= 1")
    if g_over_l <= 0:
        raise ValueError("g_over_l must be positive")
    if b_coeffs is not None and len(b_coeffs) == 0:
        raise ValueError("b_coeffs must be non-empty")

    th = Polynomial.variable(0, 2)
    thd = Polynomial.variable(1, 2)
    f = (thd, taylor_expand_sin(taylor_order, nvars=2, var=0) * g_over_l)

    lo, hi = gamma - alpha, gamma + alpha
    reset = (Polynomial.constant(lo, 2), thd * math.cos(2 * alpha))
    surface = SwitchingSurface(c=th - hi, reset=reset, name="impact")

    if b_coeffs is None:
        b_coeffs = default_speed_bound(alpha, gamma, g_over_l)
    b = Polynomial.zero(2)
    for k, bk in enumerate(b_coeffs):
        b = b + (th ** k) * float(bk)
    energy = rimless_wheel_energy_poly(taylor_order, g_over_l)
    if energy_max is None:
        w = rimless_wheel_fixed_point(alpha, gamma, g_over_l)
        energy_max = float(energy.evaluate(np.array([lo, top_speed_ratio * w])))

    grid = np.linspace(lo, hi, 401)
    b_vals = np.polynomial.polynomial.polyval(grid, b_coeffs)
    potential = energy.evaluate(np.column_stack([grid, np.zeros_like(grid)]))
    if np.any(potential >= energy_max) or np.any(0.5 * b_vals**2 + potential >= energy_max):
        raise ValueError("energy_max leaves no room above the speed bound")
    top = float(np.sqrt(2 * (energy_max - potential.min())))
    region = Region(
        inequalities=(th - lo, hi - th, thd - b, Polynomial.constant(energy_max, 2) - energy),
        epsilon_no_equilibrium=epsilon,
        names=("theta_lower", "theta_upper", "speed_lower", "energy_upper"),
        box=((lo, hi), (float(b_vals.min()), top)),
    )

    def exact(x):
        return np.array([x[1], g_over_l * math.sin(x[0])])

    return HybridSystem(
        f=f,
        surfaces=(surface,),
        region=region,
        state_names=("theta", "thetadot"),
        exact_field=exact,
        params={
            "alpha": alpha,
            "gamma": gamma,
            "g_over_l": g_over_l,
            "taylor_order": taylor_order,
            "b_coeffs": [float(c) for c in b_coeffs],
            "epsilon": epsilon,
            "energy_max": energy_max,
        },
    )
def rimless_wheel_energy(x, g_over_l: float = 1.0):
    """E = thetadot^2/2 + (g/l) cos(theta) (conserved during the swing)."""
    x = np.asarray(x, dtype=float)
    return 0.5 * x[..., 1] ** 2 + g_over_l * np.cos(x[..., 0])
