"""Event-driven simulation, return maps and convergence sweeps."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .model import HybridSystem, SwitchingSurface

log = logging.getLogger(__name__)


class SimulationError(RuntimeError):
    pass


class GrazingError(SimulationError):
    """Trajectory touches a switching surface tangentially (f.z = 0)."""


class NoReturnError(SimulationError):
    """No impact on the section within the time budget."""


@dataclass(frozen=True)
class SimOptions:
    rtol: float = 1e-10
    atol: float = 1e-10
    method: str = "RK45"
    event_tol: float = 1e-12
    graze_tol: float = 1e-9
    exact: bool = True
    max_events: int | None = None
    max_step: float = math.inf
    # optional per-state bounds; leaving them is an error
    domain: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        if self.rtol <= 0 or self.atol <= 0:
            raise ValueError("tolerances must be positive")
        if self.event_tol <= 0:
            raise ValueError("event_tol must be positive")
        if self.max_events is not None and self.max_events < 0:
            raise ValueError("max_events must be >= 0")


@dataclass(frozen=True)
class ImpactEvent:
    time: float
    pre: np.ndarray
    post: np.ndarray
    surface: int


@dataclass
class SimTrace:
    segments: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list)
    events: list[ImpactEvent] = field(default_factory=list)
    state_names: tuple[str, ...] = ()

    @property
    def final_state(self) -> np.ndarray | None:
        if not self.segments:
            return None
        return self.segments[-1][1][-1]

    @property
    def final_time(self) -> float:
        return float(self.segments[-1][0][-1]) if self.segments else 0.0

    def trace_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", *self.state_names, "segment_id"])
        for k, (t, x) in enumerate(self.segments):
            for ti, xi in zip(t, x):
                w.writerow([repr(float(ti)), *(repr(float(v)) for v in xi), k])
        return buf.getvalue()

    def events_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        names = self.state_names
        w.writerow(["t", *(f"{s}_pre" for s in names), *(f"{s}_post" for s in names), "surface"])
        for e in self.events:
            w.writerow([repr(e.time), *(repr(float(v)) for v in e.pre), *(repr(float(v)) for v in e.post), e.surface])
        return buf.getvalue()


def _rhs(sys: HybridSystem, exact: bool):
    if exact and sys.exact_field is not None:
        fx = sys.exact_field
        return lambda t, x: fx(x)
    # polynomial field, compiled once to exponent arrays
    compiled = [p.exponent_array() for p in sys.f]

    def rhs(t, x):
        return np.array([float(np.dot(c, np.prod(x ** E, axis=1))) if len(c) else 0.0 for E, c in compiled])

    return rhs


def _surface_event(s: SwitchingSurface):
    z, off = s.z.astype(float), s.offset

    def ev(t, x):
        return float(z @ x + off)

    ev.terminal = True
    ev.direction = 1.0  # only crossings with f.z > 0
    return ev


def _domain_events(domain):
    evs = []
    for i, (lo, hi) in enumerate(domain):
        for bound, sgn in ((lo, 1.0), (hi, -1.0)):
            def ev(t, x, i=i, bound=bound, sgn=sgn):
                return sgn * (x[i] - bound)

            ev.terminal = True
            ev.direction = -1.0
            evs.append(ev)
    return evs


def integrate(sys: HybridSystem, x0, t_max: float, opts: SimOptions | None = None) -> SimTrace:
    """Simulate from ``x0`` for ``t_max`` time units (or ``opts.max_events`` impacts)."""
    opts = opts or SimOptions()
    x = np.array(x0, dtype=float)
    if x.shape != (sys.n,):
        raise ValueError(f"x0 must have length {sys.n}")
    if t_max < 0:
        raise ValueError("t_max must be >= 0")
    trace = SimTrace(state_names=sys.state_names)
    if t_max == 0 or opts.max_events == 0:
        return trace
    rhs = _rhs(sys, opts.exact)
    surf_events = [_surface_event(s) for s in sys.surfaces]
    dom_events = _domain_events(opts.domain)
    events = surf_events + dom_events
    t = 0.0
    while t < t_max:
        sol = solve_ivp(rhs, (t, t_max), x, method=opts.method, rtol=opts.rtol, atol=opts.atol,
                        events=events or None, max_step=opts.max_step)
        if sol.status == -1:
            raise SimulationError(f"integration failed at t={sol.t[-1]:.6g}: {sol.message}")
        hit = None
        for k, te in enumerate(sol.t_events):
            if len(te) and (hit is None or te[0] < sol.t_events[hit][0]):
                hit = k
        ts, xs = sol.t, sol.y.T
        if hit is None:
            trace.segments.append((ts, xs))
            break
        te, xe = float(sol.t_events[hit][0]), sol.y_events[hit][0].copy()
        ts = np.append(ts[ts < te], te)
        xs = np.vstack([xs[: len(ts) - 1], xe])
        trace.segments.append((ts, xs))
        if hit >= len(surf_events):
            raise SimulationError(f"trajectory left the domain box at t={te:.6g}, x={xe.tolist()}")
        s = sys.surfaces[hit]
        resid = abs(float(s.z @ xe + s.offset))
        scale = 1.0 + float(np.abs(xe).max())
        if resid > opts.event_tol * scale:
            raise SimulationError(f"event not resolved: |c| = {resid:.3e} at t={te:.6g}")
        fz = float(rhs(te, xe) @ s.z)
        if abs(fz) < opts.graze_tol:
            raise GrazingError(f"grazing contact with surface {s.name} at t={te:.6g} (f.z = {fz:.3e})")
        post = s.apply_reset(xe)
        trace.events.append(ImpactEvent(te, xe, post, hit))
        log.debug("impact %d at t=%.9f", len(trace.events), te)
        if opts.max_events is not None and len(trace.events) >= opts.max_events:
            break
        t, x = te, post
    return trace


# --- Poincare analysis ------------------------------------------------------------


@dataclass(frozen=True)
class PoincareSection:
    """Post-impact states of one surface, coordinatized by one state component.

    ``state(w)`` copies ``base`` and sets component ``coordinate`` to ``w``.
    """

    surface: int
    coordinate: int
    base: tuple[float, ...]

    def state(self, w: float) -> np.ndarray:
        x = np.array(self.base, dtype=float)
        x[self.coordinate] = w
        return x

    def value(self, x: np.ndarray) -> float:
        return float(x[self.coordinate])


def post_impact_section(sys: HybridSystem, surface: int = 0) -> PoincareSection:
    """Section on the reset image of an affine reset with a one-dimensional image.

    The coordinate is the state component that varies most along the image.
    """
    s = sys.surfaces[surface]
    if any(g.degree() > 1 for g in s.reset):
        raise ValueError("post-impact section needs an affine reset map")
    x0, B = s.parameterization()
    g0 = s.apply_reset(x0)
    G = np.array([[g.differentiate(j).evaluate(x0) for j in range(sys.n)] for g in s.reset])
    image = G @ B
    if np.linalg.matrix_rank(image, tol=1e-12) != 1:
        raise ValueError("post-impact section needs a one-dimensional reset image")
    d = image[:, np.argmax(np.abs(image).max(axis=0))]
    k = int(np.argmax(np.abs(d)))
    # base point: image point whose coordinate k is zero
    base = g0 - d * (g0[k] / d[k])
    if np.count_nonzero(np.abs(d) > 1e-15) != 1:
        raise ValueError("reset image must be parallel to a coordinate axis")
    return PoincareSection(surface, k, tuple(float(v) for v in base))


def return_map(sys: HybridSystem, section: PoincareSection, w: float, opts: SimOptions | None = None,
               t_budget: float = 50.0) -> float:
    """T(w): coordinate of the next post-impact state on ``section``."""
    opts = opts or SimOptions()
    o = SimOptions(**{**opts.__dict__, "max_events": None})
    x = section.state(w)
    t_used = 0.0
    while t_used < t_budget:
        tr = integrate(sys, x, t_budget - t_used, SimOptions(**{**o.__dict__, "max_events": 1}))
        if not tr.events:
            break
        ev = tr.events[0]
        if ev.surface == section.surface:
            return section.value(ev.post)
        t_used += ev.time
        x = ev.post
    raise NoReturnError(f"no return to the section from w={w!r} within t={t_budget}")


@dataclass
class PoincareRecord:
    section: int
    samples: list[tuple[float, float]]
    fixed_point: float
    derivative_at_fixed_point: float
    residual: float
    no_return: list[float] = field(default_factory=list)

    def samples_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["omega_in", "omega_out"])
        for a, b in self.samples:
            w.writerow([repr(a), repr(b)])
        return buf.getvalue()

    def summary(self) -> dict:
        return {
            "section": self.section,
            "fixed_point": self.fixed_point,
            "derivative_at_fixed_point": self.derivative_at_fixed_point,
            "fixed_point_residual": self.residual,
            "n_samples": len(self.samples),
            "no_return": self.no_return,
        }


def find_fixed_point(T, w0: float, w1: float, tol: float = 1e-12, max_iter: int = 50) -> float:
    """Secant iteration on T(w) - w."""
    f0, f1 = T(w0) - w0, T(w1) - w1
    for _ in range(max_iter):
        if f1 == f0:
            break
        w2 = w1 - f1 * (w1 - w0) / (f1 - f0)
        w0, f0 = w1, f1
        w1, f1 = w2, T(w2) - w2
        if abs(f1) < tol or abs(w1 - w0) < tol * max(1.0, abs(w1)):
            return w1
    if abs(f1) < 10 * tol:
        return w1
    raise SimulationError(f"fixed-point iteration did not converge (last residual {f1:.3e})")


def poincare_map(sys: HybridSystem, section: int | PoincareSection = 0, omega_range=(0.32, 0.6),
                 n_samples: int = 21, opts: SimOptions | None = None, fd_step: float = 1e-4,
                 newton_tol: float = 1e-12, t_budget: float = 50.0) -> PoincareRecord:
    """Sample the return map, locate its fixed point and estimate T' there."""
    if isinstance(section, int):
        section = post_impact_section(sys, section)
    lo, hi = map(float, omega_range)
    if not lo < hi or n_samples < 2:
        raise ValueError("need lo < hi and at least two samples")

    def T(w):
        return return_map(sys, section, w, opts, t_budget)

    samples, missing = [], []
    for w in np.linspace(lo, hi, n_samples):
        try:
            samples.append((float(w), T(float(w))))
        except NoReturnError:
            missing.append(float(w))
    if len(samples) < 2:
        raise NoReturnError("fewer than two samples returned to the section")
    # start the secant from the bracketing pair (or the two closest to the diagonal)
    g = [b - a for a, b in samples]
    start = None
    for k in range(len(g) - 1):
        if g[k] == 0:
            start = (samples[k][0], samples[k][0] + fd_step)
            break
        if g[k] * g[k + 1] < 0:
            start = (samples[k][0], samples[k + 1][0])
            break
    if start is None:
        order = np.argsort(np.abs(g))
        start = (samples[order[0]][0], samples[order[1]][0])
    w_star = find_fixed_point(T, *start, tol=newton_tol)
    deriv = (T(w_star + fd_step) - T(w_star - fd_step)) / (2 * fd_step)
    return PoincareRecord(section.surface, samples, float(w_star), float(deriv), float(abs(T(w_star) - w_star)),
                          missing)


# --- convergence sweep ----------------------------------------------------------


@dataclass
class SweepRow:
    initial: list[float]
    status: str  # converged | not_converged | no_return | error
    impacts: int
    distances: list[float]
    message: str = ""

    @property
    def final_distance(self) -> float:
        return self.distances[-1] if self.distances else math.inf


@dataclass
class SweepResult:
    fixed_point: float
    tol: float
    n_impacts: int
    rows: list[SweepRow]

    @property
    def max_final_distance(self) -> float:
        d = [r.final_distance for r in self.rows if r.status in ("converged", "not_converged")]
        return max(d) if d else math.nan

    @property
    def counts(self) -> dict[str, int]:
        out = {"converged": 0, "not_converged": 0, "no_return": 0, "error": 0}
        for r in self.rows:
            out[r.status] += 1
        return out

    def to_csv(self, state_names=()) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        n = len(self.rows[0].initial) if self.rows else 0
        names = list(state_names) or [f"x{i}" for i in range(n)]
        w.writerow([*(f"{s}_0" for s in names), "status", "impacts", "final_distance", "message"])
        for r in self.rows:
            w.writerow([*(repr(v) for v in r.initial), r.status, r.impacts, repr(r.final_distance), r.message])
        return buf.getvalue()

    def summary(self) -> dict:
        return {
            "fixed_point": self.fixed_point,
            "tol": self.tol,
            "n_impacts": self.n_impacts,
            "n_initial": len(self.rows),
            "max_final_distance": self.max_final_distance,
            "counts": self.counts,
        }


def track_impacts(sys: HybridSystem, x0, section: PoincareSection, n_impacts: int,
                  opts: SimOptions | None = None, t_budget: float = 50.0) -> list[float]:
    """Section coordinates of the first ``n_impacts`` post-impact states."""
    opts = opts or SimOptions()
    out = []
    x = np.array(x0, dtype=float)
    for _ in range(n_impacts):
        tr = integrate(sys, x, t_budget, SimOptions(**{**opts.__dict__, "max_events": 1}))
        if not tr.events:
            raise NoReturnError(f"no impact within t={t_budget} after {len(out)} impacts")
        ev = tr.events[0]
        x = ev.post
        if ev.surface == section.surface:
            out.append(section.value(x))
    return out


def convergence_sweep(sys: HybridSystem, initial_states, n_impacts: int = 50, fixed_point: float | None = None,
                      tol: float = 1e-6, section: int | PoincareSection = 0, opts: SimOptions | None = None,
                      t_budget: float = 50.0) -> SweepResult:
    """Distance of post-impact states to the fixed point after each impact, per initial state.

    Failures are recorded per row, never raised.
    """
    if isinstance(section, int):
        section = post_impact_section(sys, section)
    if fixed_point is None:
        fixed_point = poincare_map(sys, section, opts=opts).fixed_point
    rows = []
    for x0 in np.atleast_2d(np.asarray(initial_states, dtype=float)):
        try:
            ws = track_impacts(sys, x0, section, n_impacts, opts, t_budget)
            d = [abs(w - fixed_point) for w in ws]
            status = "converged" if d and d[-1] < tol else "not_converged"
            rows.append(SweepRow(x0.tolist(), status, len(ws), d))
        except NoReturnError as exc:
            rows.append(SweepRow(x0.tolist(), "no_return", 0, [], str(exc)))
        except SimulationError as exc:
            rows.append(SweepRow(x0.tolist(), "error", 0, [], str(exc)))
    return SweepResult(float(fixed_point), tol, n_impacts, rows)
