import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hybridcert.model import (
    HybridSystem,
    Region,
    SwitchingSurface,
    default_speed_bound,
    jacobian,
    jump_jacobian,
    rimless_wheel,
    rimless_wheel_energy_poly,
    rimless_wheel_fixed_point,
)
from hybridcert.polyalg import PolyMatrix, Polynomial, lie_derivative, monomials_up_to


def var(i, n=2):
    return Polynomial.variable(i, n)


def swap_system():
    x1, x2 = var(0), var(1)
    surf = SwitchingSurface(c=x1 - 1.0, reset=(x1, x2), name="s")
    region = Region(inequalities=(x2,), box=((-2, 2), (0, 2)))
    return HybridSystem(f=(x2, x1), surfaces=(surf,), region=region)


def test_jacobian_of_swap():
    A = jacobian(swap_system())
    assert np.array_equal(A.evaluate([0.3, 0.7]), [[0, 1], [1, 0]])


def test_rimless_jacobian_taylor3(wheel):
    A = jacobian(wheel)
    th = var(0)
    assert A[0, 0].is_zero() and A[0, 1] == Polynomial.constant(1.0, 2) and A[1, 1].is_zero()
    assert A[1, 0] == Polynomial.constant(1.0, 2) - th * th * 0.5


def test_jacobian_finite_difference(rng):
    f = tuple(Polynomial({m: rng.normal() for m in monomials_up_to(2, 3)}, 2) for _ in range(2))
    sys = HybridSystem(f=f, surfaces=(), region=Region(inequalities=()))
    A = jacobian(sys)
    h = 1e-7
    for pt in rng.uniform(-1, 1, size=(20, 2)):
        fd = np.column_stack([(sys.field_value(pt + h * e) - sys.field_value(pt - h * e)) / (2 * h) for e in np.eye(2)])
        assert np.allclose(fd, A.evaluate(pt), atol=1e-5)


def test_jump_jacobians(wheel):
    G = jump_jacobian(wheel.surfaces[0])
    assert np.allclose(G.evaluate([0.1, 0.2]), [[0, 0], [0, math.cos(math.pi / 4)]], atol=1e-15)
    ident = SwitchingSurface(c=var(0) - 1.0, reset=(var(0), var(1)))
    assert np.array_equal(jump_jacobian(ident).evaluate([5.0, -1.0]), np.eye(2))
    L = np.array([[2.0, -1.0], [0.5, 3.0]])
    aff = SwitchingSurface(c=var(1), reset=(var(0) * L[0, 0] + var(1) * L[0, 1] + 4.0, var(0) * L[1, 0] + var(1) * L[1, 1]))
    assert np.array_equal(jump_jacobian(aff).evaluate([0.0, 0.0]), L)


def test_rimless_wheel_examples(wheel):
    g = wheel.surfaces[0].reset
    assert g[1].coeff((0, 1)) == pytest.approx(math.sqrt(2) / 2, abs=1e-15)
    for order in (1, 3, 5):
        s = rimless_wheel(taylor_order=order)
        assert np.array_equal(s.field_value(np.array([0.0, 1.0])), [1.0, 0.0])
    assert -wheel.surfaces[0].offset == pytest.approx(0.47270, abs=1e-5)
    assert np.array_equal(wheel.surfaces[0].z, [1.0, 0.0])


@pytest.mark.parametrize("kw", [dict(alpha=0.0), dict(alpha=2.0), dict(taylor_order=2), dict(taylor_order=0),
                                dict(g_over_l=-1.0)])
def test_rimless_wheel_rejects_bad_parameters(kw):
    with pytest.raises(ValueError):
        rimless_wheel(**kw)


def test_region_includes_no_equilibrium(wheel):
    names = [n for n, _ in wheel.region_constraints()]
    assert names[0] == "no_equilibrium"
    assert names[1:] == ["theta_lower", "theta_upper", "speed_lower", "energy_upper"]


def test_constant_speed_bound_accepted():
    s = rimless_wheel(b_coeffs=(0.1,), energy_max=1.3)
    assert s.params["b_coeffs"] == [0.1]


def test_default_speed_bound_separates_homoclinic_and_gait():
    a, g = math.pi / 8, 0.08
    b = default_speed_bound(a, g, 1.0)
    th = np.linspace(g - a, g + a, 2001)
    w = rimless_wheel_fixed_point(a, g, 1.0)
    hom = np.sqrt(2 * (1 - np.cos(th)))
    gait = np.sqrt(w**2 + 2 * (np.cos(g - a) - np.cos(th)))
    bv = np.polynomial.polynomial.polyval(th, b)
    assert np.all(bv < gait)
    assert np.all(bv[th <= 0] > hom[th <= 0])
    assert np.all(bv > 0)


def test_fixed_point_closed_form():
    delta = 2 * (math.cos(0.08 - math.pi / 8) - math.cos(0.08 + math.pi / 8))
    assert delta == pytest.approx(0.1224, abs=1e-4)
    w = rimless_wheel_fixed_point()
    assert w == pytest.approx(0.3499, abs=1e-3)
    assert 0.5 * math.sqrt(w**2 + delta) == pytest.approx(w / math.sqrt(2), rel=1e-12)
    with pytest.raises(ValueError):
        rimless_wheel_fixed_point(gamma=-1.0)


def test_surface_affineness(wheel, rng):
    s = wheel.surfaces[0]
    x0, B = s.parameterization()
    for t in rng.uniform(-3, 3, size=10):
        p = x0 + B[:, 0] * t
        assert abs(s.c.evaluate(p)) < 1e-14
        assert abs(s.z @ p - s.z @ x0) < 1e-14


def test_nonaffine_surface_rejected():
    with pytest.raises(ValueError):
        SwitchingSurface(c=var(0) * var(0), reset=(var(0), var(1)))


@given(st.floats(-1, 1), st.floats(-1, 1))
def test_region_membership_matches_inequalities(a, b):
    s = rimless_wheel()
    pt = np.array([a, b])
    expected = all(g.evaluate(pt) >= -1e-12 for _, g in s.region_constraints())
    assert s.in_region(pt) == expected


def test_taylor_energy_conserved(wheel):
    E = rimless_wheel_energy_poly(3)
    dE = lie_derivative(PolyMatrix.from_rows([[E]]), wheel.f)[0, 0]
    assert all(abs(c) < 1e-12 for m, c in dE.items() if sum(m) < 5)
    # the cos series one order above the field is conserved exactly
    assert dE.max_abs_coeff() < 1e-15


def test_exact_energy_conserved_along_exact_field(wheel, rng):
    for pt in rng.uniform(-0.5, 0.5, size=(10, 2)):
        f = wheel.field_value(pt, exact=True)
        grad = np.array([-math.sin(pt[0]), pt[1]])
        assert abs(grad @ f) < 1e-15


def test_serialization_and_fingerprint(wheel):
    d = wheel.to_dict()
    again = HybridSystem.from_dict(d)
    assert again.fingerprint() == wheel.fingerprint()
    assert rimless_wheel(gamma=0.1).fingerprint() != wheel.fingerprint()


def test_three_state_system_builds():
    x = [Polynomial.variable(i, 3) for i in range(3)]
    surf = SwitchingSurface(c=x[0] + x[1] - 1.0, reset=(x[0], x[1], x[2] * 0.5))
    sys = HybridSystem(f=(x[1], -x[0], x[2] * -1.0 + 1.0), surfaces=(surf,), region=Region(inequalities=(x[2],)))
    assert sys.n == 3 and jacobian(sys).shape == (3, 3)
