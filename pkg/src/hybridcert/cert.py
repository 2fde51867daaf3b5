"""Certificates: extraction from a solved SDP, storage, and solver-free validation."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from .conditions import (
    CertificateTemplate,
    ConditionSet,
    assemble,
    continuous_condition,
    discrete_condition,
    orthogonality_condition,
)
from .model import HybridSystem, SwitchingSurface
from .polyalg import Polynomial, PolyMatrix
from .sdpsolve import SdpSolution, SolverOptions, Status, solve
from .soscomp import SdpProblem, compile as compile_sdp

FORMAT_VERSION = 1
FAMILIES = ("positivity", "orthogonality", "continuous", "discrete")


class CertificateError(ValueError):
    pass


@dataclass(eq=False)
class Certificate:
    """Numeric certificate for one hybrid system.

    Per-surface quantities (alpha, beta, zeta) are tuples aligned with
    ``sys.surfaces``.  ``multipliers`` maps the constraint names used during
    assembly (``L_pos0``, ``L_cont3``, ...) to their matrix polynomials.
    """

    W: PolyMatrix
    rho: Polynomial
    alpha: tuple[Polynomial, ...]
    beta: tuple[tuple[Polynomial, ...], ...]
    zeta: tuple[Polynomial, ...]
    multipliers: dict[str, PolyMatrix]
    lam: float
    template: CertificateTemplate
    system_hash: str
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.W.is_symmetric():
            raise CertificateError("W must be symmetric")
        t = self.template
        if self.W.degree() > t.deg_W:
            raise CertificateError(f"W has degree {self.W.degree()} > deg_W = {t.deg_W}")
        for name, polys in (("alpha", self.alpha), ("zeta", self.zeta), ("rho", (self.rho,))):
            if any(p.degree() > t.deg_scalars for p in polys):
                raise CertificateError(f"{name} exceeds deg_scalars = {t.deg_scalars}")
        if any(p.degree() > t.deg_beta for b in self.beta for p in b):
            raise CertificateError(f"beta exceeds deg_beta = {t.deg_beta}")

    @property
    def n(self) -> int:
        return self.W.rows

    @property
    def L(self) -> list[PolyMatrix]:
        """Region multipliers in assembly order (positivity, continuous, surface)."""
        def key(name):
            head = name.rstrip("0123456789")
            order = {"L_pos": 0, "L_cont": 1}.get(head, 2)
            return (order, head, int(name[len(head):] or 0))
        return [self.multipliers[k] for k in sorted(self.multipliers, key=key)]

    # --- serialization ---------------------------------------------------------

    def to_dict(self) -> dict:
        def mat(M: PolyMatrix):
            return {"nvars": M.nvars, "entries": [[M[i, j].to_records() for j in range(M.cols)] for i in range(M.rows)]}

        return {
            "format": "hybridcert-certificate",
            "version": FORMAT_VERSION,
            "system_hash": self.system_hash,
            "n": self.n,
            "lambda": self.lam,
            "template": self.template.to_dict(),
            "W": mat(self.W),
            "rho": self.rho.to_records(),
            "surfaces": [
                {"alpha": a.to_records(), "beta": [p.to_records() for p in b], "zeta": z.to_records()}
                for a, b, z in zip(self.alpha, self.beta, self.zeta)
            ],
            "multipliers": {k: mat(v) for k, v in sorted(self.multipliers.items())},
            "provenance": self.provenance,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True, allow_nan=False) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "Certificate":
        if d.get("format") != "hybridcert-certificate":
            raise CertificateError("not a certificate file")
        if d.get("version") != FORMAT_VERSION:
            raise CertificateError(f"unsupported certificate version {d.get('version')}")
        n = int(d["n"])

        def mat(m):
            nv = int(m["nvars"])
            return PolyMatrix.from_rows([[Polynomial.from_records(e, nv) for e in r] for r in m["entries"]])

        surfaces = d["surfaces"]
        return cls(
            W=mat(d["W"]),
            rho=Polynomial.from_records(d["rho"], n),
            alpha=tuple(Polynomial.from_records(s["alpha"], n) for s in surfaces),
            beta=tuple(tuple(Polynomial.from_records(p, n) for p in s["beta"]) for s in surfaces),
            zeta=tuple(Polynomial.from_records(s["zeta"], n) for s in surfaces),
            multipliers={k: mat(v) for k, v in d["multipliers"].items()},
            lam=float(d["lambda"]),
            template=CertificateTemplate.from_dict(d["template"]),
            system_hash=d["system_hash"],
            provenance=d.get("provenance", {}),
        )

    @classmethod
    def from_json(cls, text: str) -> "Certificate":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise CertificateError(f"certificate is not valid JSON: {exc}") from exc
        return cls.from_dict(d)


def extract(sys: HybridSystem, cs: ConditionSet, prob: SdpProblem, sol: SdpSolution,
            template: CertificateTemplate, provenance: dict | None = None) -> Certificate:
    """Read the certificate polynomials off the free variables of a solution."""
    values = np.zeros(len(cs.registry))
    values[np.asarray(prob.free_var_ids, dtype=int)] = sol.free_values
    u = cs.unknowns
    tags = [s.name if len(sys.surfaces) > 1 else "" for s in sys.surfaces]
    multipliers = {
        k: v.substitute_values(values) for k, v in u.items() if k.startswith("L_") and isinstance(v, PolyMatrix)
    }
    return Certificate(
        W=u["W"].substitute_values(values),
        rho=u["rho"].substitute_values(values),
        alpha=tuple(u[f"alpha{t}"].substitute_values(values) for t in tags),
        beta=tuple(tuple(p.substitute_values(values) for p in u[f"beta{t}"]) for t in tags),
        zeta=tuple(u[f"zeta{t}"].substitute_values(values) for t in tags),
        multipliers=multipliers,
        lam=template.lam,
        template=template,
        system_hash=sys.fingerprint(),
        provenance=dict(provenance or {}),
    )


@dataclass
class SynthesisResult:
    status: Status
    certificate: Certificate | None
    problem: SdpProblem
    solution: SdpSolution
    conditions: ConditionSet


def synthesize(sys: HybridSystem, template: CertificateTemplate, opts: SolverOptions | None = None,
               reduce_faces: bool = True) -> SynthesisResult:
    """assemble -> compile -> solve -> extract."""
    opts = opts or SolverOptions()
    cs = assemble(sys, template)
    prob = compile_sdp(cs, reduce_faces=reduce_faces)
    sol = solve(prob, opts)
    cert = None
    if sol.status == Status.FEASIBLE:
        provenance = {
            "solver": "hybridcert.sdpsolve (HKM predictor-corrector)",
            "status": sol.status.value,
            "iterations": sol.iterations,
            "margin": sol.margin,
            "min_eig_margin": sol.min_eig_margin,
            "equality_residual": sol.equality_residual,
            "sdp_rows": prob.nrows,
            "sdp_blocks": [[b.name, b.size] for b in prob.blocks],
            "n_free": prob.n_free,
            "options": {"feas_tol": opts.feas_tol, "gap_tol": opts.gap_tol, "max_iter": opts.max_iter},
        }
        cert = extract(sys, cs, prob, sol, template, provenance)
    return SynthesisResult(sol.status, cert, prob, sol, cs)


# --- sampling ---------------------------------------------------------------------


def _box(sys: HybridSystem) -> tuple[np.ndarray, np.ndarray]:
    if not sys.region.box:
        raise ValueError("region has no sampling box")
    lo = np.array([b[0] for b in sys.region.box])
    hi = np.array([b[1] for b in sys.region.box])
    return lo, hi


def sample_region(sys: HybridSystem, n: int, seed: int = 0, max_rounds: int = 100) -> np.ndarray:
    """``n`` scrambled-Sobol points of the region box that lie in K (rejection)."""
    lo, hi = _box(sys)
    sampler = qmc.Sobol(d=sys.n, scramble=True, seed=seed)
    m = max(6, int(np.ceil(np.log2(max(n, 1)))))
    out = []
    have = 0
    for r in range(max_rounds):
        # the sequence stays balanced when the running total is a power of two
        pts = qmc.scale(sampler.random_base2(m + max(r - 1, 0)), lo, hi)
        pts = pts[sys.in_region(pts)]
        out.append(pts)
        have += len(pts)
        if have >= n:
            break
    pts = np.concatenate(out)[:n] if out else np.zeros((0, sys.n))
    if len(pts) < n:
        raise ValueError(f"could only draw {len(pts)} of {n} region samples")
    return pts


def sample_surface(sys: HybridSystem, surface: SwitchingSurface, n: int, seed: int = 0,
                   max_rounds: int = 1000) -> np.ndarray:
    """Uniform samples of the surface patch inside K, drawn in the surface coordinates."""
    lo, hi = _box(sys)
    x0, B = surface.parameterization()
    # range of each surface coordinate over the box corners
    corners = np.array(np.meshgrid(*[[a, b] for a, b in zip(lo, hi)])).reshape(sys.n, -1).T
    s = (corners - x0) @ B
    s_lo, s_hi = s.min(axis=0), s.max(axis=0)
    rng = np.random.default_rng(seed)
    out, have = [], 0
    for _ in range(max_rounds):
        S = rng.uniform(s_lo, s_hi, size=(max(n, 64), B.shape[1]))
        pts = x0 + S @ B.T
        pts = pts[sys.in_region(pts, tol=1e-9)]
        out.append(pts)
        have += len(pts)
        if have >= n:
            break
    pts = np.concatenate(out)[:n] if out else np.zeros((0, sys.n))
    if len(pts) < n:
        raise ValueError(f"could only draw {len(pts)} of {n} surface samples")
    return pts


@dataclass
class FamilyResult:
    samples: int
    worst_margin: float
    worst_point: list[float] | None
    witnesses: list[list[float]]


@dataclass
class CheckReport:
    samples: int
    surface_samples: int
    tol: float
    families: dict[str, FamilyResult]

    @property
    def worst_margin(self) -> dict[str, float]:
        return {k: v.worst_margin for k, v in self.families.items()}

    @property
    def passed(self) -> bool:
        return all(v.worst_margin >= -self.tol for v in self.families.values())

    def merge(self, other: "CheckReport") -> "CheckReport":
        """Combine reports over disjoint sample sets (associative)."""
        if self.tol != other.tol:
            raise ValueError("cannot merge reports with different tolerances")
        fams = {}
        for k in sorted(set(self.families) | set(other.families)):
            a, b = self.families.get(k), other.families.get(k)
            if a is None or b is None:
                fams[k] = a or b
                continue
            best = a if a.worst_margin <= b.worst_margin else b
            fams[k] = FamilyResult(a.samples + b.samples, best.worst_margin, best.worst_point,
                                   a.witnesses + b.witnesses)
        return CheckReport(self.samples + other.samples, self.surface_samples + other.surface_samples,
                           self.tol, fams)

    def to_dict(self) -> dict:
        return {
            "samples": self.samples,
            "surface_samples": self.surface_samples,
            "tol": self.tol,
            "pass": self.passed,
            "families": {
                k: {
                    "samples": v.samples,
                    "worst_margin": v.worst_margin,
                    "worst_point": v.worst_point,
                    "violations": len(v.witnesses),
                }
                for k, v in self.families.items()
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    def witnesses_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        n = max((len(p) for v in self.families.values() for p in v.witnesses), default=0)
        w.writerow(["condition"] + [f"x{i}" for i in range(n)])
        for k, v in self.families.items():
            for p in v.witnesses:
                w.writerow([k] + [repr(float(c)) for c in p])
        return buf.getvalue()


def _family(points: np.ndarray, margins: np.ndarray, tol: float) -> FamilyResult:
    if len(margins) == 0:
        return FamilyResult(0, np.inf, None, [])
    k = int(np.argmin(margins))
    bad = np.flatnonzero(margins < -tol)
    return FamilyResult(len(margins), float(margins[k]), points[k].tolist(), points[bad].tolist())


def condition_margins(sys: HybridSystem, cert: Certificate, region_pts: np.ndarray,
                      surface_pts: list[np.ndarray]) -> dict[str, np.ndarray]:
    """Pointwise margins; a condition holds at a point iff its margin is >= 0.

    positivity: min eig W.  continuous: -max eig H.  discrete: min eig of the
    Schur block.  orthogonality: minus the largest component of
    |alpha f - W z - beta c| (zero on an exact certificate).
    """
    if cert.n != sys.n:
        raise CertificateError("certificate dimension does not match the system")
    if len(cert.alpha) != len(sys.surfaces):
        raise CertificateError("certificate has the wrong number of surfaces")
    out = {}
    out["positivity"] = np.linalg.eigvalsh(cert.W.evaluate(region_pts))[:, 0] if len(region_pts) else np.zeros(0)
    H = continuous_condition(sys, cert.W, cert.lam, cert.rho)
    out["continuous"] = -np.linalg.eigvalsh(H.evaluate(region_pts))[:, -1] if len(region_pts) else np.zeros(0)
    orth, disc = [], []
    for surf, a, b, z, pts in zip(sys.surfaces, cert.alpha, cert.beta, cert.zeta, surface_pts):
        if len(pts) == 0:
            continue
        res = orthogonality_condition(sys, surf, cert.W, a, b)
        orth.append(-np.max(np.abs(np.stack([p.evaluate(pts) for p in res], axis=1)), axis=1))
        D = discrete_condition(sys, surf, cert.W, z)
        disc.append(np.linalg.eigvalsh(D.evaluate(pts))[:, 0])
    out["orthogonality"] = np.concatenate(orth) if orth else np.zeros(0)
    out["discrete"] = np.concatenate(disc) if disc else np.zeros(0)
    return out


def sample_check(sys: HybridSystem, cert: Certificate, n_samples: int = 10_000, tol: float = 1e-6,
                 n_surface: int | None = None, seed: int = 0) -> CheckReport:
    """Evaluate every certificate condition on quasi-random samples of K and the surfaces."""
    if n_surface is None:
        n_surface = max(1, n_samples // 10)
    region_pts = sample_region(sys, n_samples, seed=seed)
    surface_pts = [sample_surface(sys, s, n_surface, seed=seed + 1 + i) for i, s in enumerate(sys.surfaces)]
    margins = condition_margins(sys, cert, region_pts, surface_pts)
    all_surface = np.concatenate(surface_pts) if surface_pts else np.zeros((0, sys.n))
    fams = {}
    for k in FAMILIES:
        pts = region_pts if k in ("positivity", "continuous") else all_surface
        fams[k] = _family(pts, margins[k], tol)
    return CheckReport(n_samples, len(all_surface), tol, fams)


# --- metric diagnostics -----------------------------------------------------------


def metric_at(cert: Certificate, x) -> np.ndarray:
    """M(x) = W(x)^-1."""
    Wx = cert.W.evaluate(np.asarray(x, dtype=float))
    cond = np.linalg.cond(Wx)
    if not np.isfinite(cond) or cond > 1e14:
        raise np.linalg.LinAlgError(f"W(x) is singular at {list(np.ravel(x))} (condition number {cond:.3e})")
    M = np.linalg.inv(Wx)
    return 0.5 * (M + M.T)


def path_length(cert: Certificate, path, quadrature_points: int = 8) -> float:
    """Riemannian length of a piecewise-linear path, Gauss-Legendre per segment."""
    P = np.asarray(path, dtype=float)
    if P.ndim != 2 or len(P) < 2:
        raise ValueError("path needs at least two points")
    nodes, weights = np.polynomial.legendre.leggauss(quadrature_points)
    total = 0.0
    for a, b in zip(P[:-1], P[1:]):
        d = b - a
        if not np.any(d):
            continue
        xs = a + 0.5 * (nodes[:, None] + 1.0) * d
        Ws = cert.W.evaluate(xs)
        lam_min = np.linalg.eigvalsh(Ws)[:, 0]
        if np.any(lam_min <= 0):
            raise ValueError("path leaves the set where W is positive definite")
        speeds = np.sqrt([d @ np.linalg.solve(Wk, d) for Wk in Ws])
        total += 0.5 * float(weights @ speeds)
    return total


def orthogonality_residual(sys: HybridSystem, surface: SwitchingSurface, cert: Certificate,
                           n_samples: int = 1000, seed: int = 0, points: np.ndarray | None = None) -> float:
    """max |f'M d| / (|f|_M |d|_M) over surface samples and tangent directions d."""
    pts = sample_surface(sys, surface, n_samples, seed=seed) if points is None else np.atleast_2d(points)
    _, B = surface.parameterization()
    worst = 0.0
    for x in pts:
        M = metric_at(cert, x)
        fx = sys.field_value(x)
        nf = np.sqrt(fx @ M @ fx)
        if nf == 0:
            raise ValueError("f vanishes on the surface sample")
        for d in B.T:
            r = abs(fx @ M @ d) / (nf * np.sqrt(d @ M @ d))
            worst = max(worst, float(r))
    return worst


def count_below(A: np.ndarray, sigma: float) -> int:
    """Number of eigenvalues of symmetric ``A`` below ``sigma`` (Sylvester inertia of A - sigma I).

    Uses symmetric Gaussian elimination without pivoting; a zero pivot is
    nudged, which only moves the count at an exact eigenvalue.
    """
    M = np.array(A, dtype=float) - sigma * np.eye(len(A))
    n = len(M)
    tiny = np.finfo(float).eps * max(1.0, np.abs(M).max())
    neg = 0
    for k in range(n):
        d = M[k, k]
        if d == 0.0:
            d = tiny
        if d < 0:
            neg += 1
        if k + 1 < n:
            r = M[k, k + 1 :] / d
            M[k + 1 :, k + 1 :] -= np.outer(M[k + 1 :, k], r)
    return neg


def min_eig_bisection(A: np.ndarray, tol: float = 1e-12) -> float:
    """Smallest eigenvalue of symmetric ``A`` by bisection on inertia counts.

    Independent of LAPACK's eigensolver; used to cross-check sample margins.
    """
    A = np.asarray(A, dtype=float)
    radius = np.abs(A).sum(axis=1).max()  # Gershgorin bound
    lo, hi = -radius - 1.0, radius + 1.0
    while hi - lo > tol * max(1.0, abs(lo), abs(hi)):
        mid = 0.5 * (lo + hi)
        if count_below(A, mid) >= 1:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)
