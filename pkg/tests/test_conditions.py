import numpy as np
import pytest
from hypothesis import given, strategies as st

from hybridcert.conditions import (
    CertificateTemplate,
    VarRegistry,
    assemble,
    continuous_condition,
    discrete_condition,
    orthogonality_condition,
    schur_reduced,
    sym_outer,
    unknown_poly,
    unknown_sym_matrix,
)
from hybridcert.model import HybridSystem, Region, SwitchingSurface, rimless_wheel
from hybridcert.polyalg import PolyMatrix, Polynomial, monomials_up_to


def var(i, n=2):
    return Polynomial.variable(i, n)


def const(c, n=2):
    return Polynomial.constant(c, n)


def linear_system(A, reset_scale=1.0):
    n = len(A)
    xs = [var(i, n) for i in range(n)]
    f = []
    for i in range(n):
        p = Polynomial.zero(n)
        for j in range(n):
            p = p + xs[j] * float(A[i][j])
        f.append(p)
    surf = SwitchingSurface(c=xs[0] - 1.0, reset=tuple(x * reset_scale for x in xs))
    return HybridSystem(f=tuple(f), surfaces=(surf,), region=Region(inequalities=(xs[1],)))


def test_skew_field_gives_zero():
    sys = linear_system([[0, 1], [-1, 0]])
    H = continuous_condition(sys, PolyMatrix.identity(2, 2), 0.0, 0)
    assert H == PolyMatrix.zeros(2, 2, 2)


def test_stable_field_gives_minus_identity():
    sys = linear_system([[-1, 0], [0, -1]])
    H = continuous_condition(sys, PolyMatrix.identity(2, 2), 0.5, 0)
    assert np.array_equal(H.evaluate([0.3, -0.1]), -np.eye(2))


def test_continuous_condition_checks_shape():
    sys = linear_system([[-1, 0], [0, -1]])
    with pytest.raises(ValueError):
        continuous_condition(sys, PolyMatrix.identity(3, 2), 0.1, 0)
    asym = PolyMatrix.from_rows([[const(1), var(0)], [const(0), const(1)]])
    with pytest.raises(ValueError):
        continuous_condition(sys, asym, 0.1, 0)


def test_orthogonality_trivial_identity():
    surf = SwitchingSurface(c=var(0) - 1.0, reset=(var(0), var(1)))
    sys = HybridSystem(f=(const(1), const(0)), surfaces=(surf,), region=Region(inequalities=()))
    res = orthogonality_condition(sys, surf, PolyMatrix.identity(2, 2), const(1), (const(0), const(0)))
    assert all(p.is_zero() for p in res)


def test_orthogonality_assembles_expression():
    surf = SwitchingSurface(c=var(0) - 1.0, reset=(var(0), var(1)))
    sys = HybridSystem(f=(var(1), var(0)), surfaces=(surf,), region=Region(inequalities=()))
    reg = VarRegistry()
    alpha = unknown_poly(reg, 2, 1, "a")
    beta = (unknown_poly(reg, 2, 1, "b0"), unknown_poly(reg, 2, 1, "b1"))
    res = orthogonality_condition(sys, surf, PolyMatrix.identity(2, 2), alpha, beta)
    assert res[0] == var(1) * alpha - const(1) - beta[0] * surf.c
    assert res[1] == var(0) * alpha - beta[1] * surf.c


def test_discrete_constant_blocks():
    sys = linear_system([[-1, 0], [0, -1]], reset_scale=0.5)
    D = discrete_condition(sys, sys.surfaces[0], PolyMatrix.identity(2, 2), 0)
    M = D.evaluate([0.0, 0.0])
    assert np.allclose(M, [[1, 0, 0.5, 0], [0, 1, 0, 0.5], [0.5, 0, 1, 0], [0, 0.5, 0, 1]])
    assert np.allclose(np.linalg.eigvalsh(M), [0.5, 0.5, 1.5, 1.5])
    ident = linear_system([[-1, 0], [0, -1]], reset_scale=1.0)
    M = discrete_condition(ident, ident.surfaces[0], PolyMatrix.identity(2, 2), 0).evaluate([0.0, 0.0])
    assert np.allclose(M, np.block([[np.eye(2), np.eye(2)], [np.eye(2), np.eye(2)]]))
    assert np.linalg.eigvalsh(M)[0] > -1e-15


def test_discrete_block_structure(wheel, rng):
    W = PolyMatrix.from_rows([[const(2) + var(0), var(1)], [var(1), const(3)]])
    zeta = const(0.7) + var(0) * var(0)
    D = discrete_condition(wheel, wheel.surfaces[0], W, zeta)
    Q = sym_outer(wheel.f)
    for pt in rng.uniform(-0.3, 0.3, size=(5, 2)):
        M = D.evaluate(pt)
        assert np.allclose(M[:2, :2] - zeta.evaluate(pt) * Q.evaluate(pt), M[2:, 2:], atol=1e-14)


def random_pd(rng, n):
    B = rng.normal(size=(n, n))
    return B @ B.T + 0.1 * np.eye(n)


def test_schur_equivalence_random(rng):
    agree = 0
    statuses = set()
    for k in range(1000):
        n = 2
        W = random_pd(rng, n)
        G = rng.normal(size=(n, n)) * rng.uniform(0.2, 1.5)
        zeta = 0.0 if k % 2 == 0 else rng.exponential()
        f = rng.normal(size=n)
        block = np.block([[W + zeta * np.outer(f, f), W @ G.T], [G @ W, W]])
        psd_block = np.linalg.eigvalsh(block)[0] >= -1e-9
        psd_schur = np.linalg.eigvalsh(schur_reduced(W, G, zeta, f))[0] >= -1e-9
        statuses.add(psd_block)
        agree += psd_block == psd_schur
    assert agree == 1000
    assert statuses == {True, False}


def test_assemble_rimless_structure(wheel):
    cs = assemble(wheel, CertificateTemplate(deg_W=4, deg_L=2))
    assert len(cs.positivity) == 1 and cs.positivity[0].size == 2
    assert len(cs.continuous_lmi) == 1 and cs.continuous_lmi[0].size == 2
    assert len(cs.discrete_lmi) == 1 and cs.discrete_lmi[0].size == 4
    assert len(cs.orthogonality) == 1 and len(cs.orthogonality[0].exprs) == wheel.n
    names = [c.name for c in cs.multiplier_sos]
    # rho, alpha, zeta, then one matrix multiplier per region constraint and condition
    assert {"rho", "alpha", "zeta"} <= set(names)
    n_region = len(wheel.region_constraints())
    assert sum(n.startswith("L_pos") for n in names) == n_region
    assert sum(n.startswith("L_cont") for n in names) == n_region
    # theta bounds are constant on the surface and drop out there
    assert sum(n.startswith("L_surf") for n in names) == n_region - 2
    assert cs.unknowns["W"].degree() == 4
    assert all(p.degree() == 4 for p in cs.unknowns["beta"])


def test_assemble_without_surface_multipliers(wheel):
    cs = assemble(wheel, CertificateTemplate(surface_multipliers=False))
    assert not any(c.name.startswith("L_surf") for c in cs.multiplier_sos)


def test_assemble_constant_w(wheel):
    cs = assemble(wheel, CertificateTemplate(deg_W=0))
    assert cs.unknowns["W"].degree() == 0


def test_assemble_three_states():
    x = [Polynomial.variable(i, 3) for i in range(3)]
    surf = SwitchingSurface(c=x[0] - 1.0, reset=(x[0] * 0.0, x[1] * 0.5, x[2]))
    sys = HybridSystem(f=(x[1], -x[0] + Polynomial.constant(0.1, 3), x[2] * -1.0), surfaces=(surf,),
                       region=Region(inequalities=(x[1],)))
    cs = assemble(sys, CertificateTemplate(deg_W=2, deg_beta=2))
    assert cs.positivity[0].size == 3 and cs.continuous_lmi[0].size == 3 and cs.discrete_lmi[0].size == 6
    assert len(cs.orthogonality[0].exprs) == 3


def test_assembled_matrices_are_symmetric(wheel):
    cs = assemble(wheel, CertificateTemplate())
    for c in cs.sos_constraints():
        assert c.expr.is_symmetric(), c.name


@pytest.mark.parametrize("kw", [dict(deg_W=3), dict(deg_L=-1), dict(lam=-0.1), dict(margin=-1.0)])
def test_template_validation(kw):
    with pytest.raises(ValueError):
        CertificateTemplate(**kw)


def rand_sym(rng, deg):
    ps = [Polynomial({m: float(rng.integers(-3, 4)) for m in monomials_up_to(2, deg)}, 2) for _ in range(3)]
    return PolyMatrix.from_rows([[ps[0], ps[1]], [ps[1], ps[2]]])


@given(st.integers(0, 10_000))
def test_continuous_condition_is_linear(seed):
    rng = np.random.default_rng(seed)
    wheel = rimless_wheel(b_coeffs=(0.1,), energy_max=1.3)
    W1, W2 = rand_sym(rng, 2), rand_sym(rng, 2)
    r1 = Polynomial({m: float(rng.integers(-3, 4)) for m in monomials_up_to(2, 1)}, 2)
    r2 = Polynomial({m: float(rng.integers(-3, 4)) for m in monomials_up_to(2, 1)}, 2)
    lam = 0.25
    lhs = continuous_condition(wheel, W1 + W2, lam, r1 + r2)
    rhs = continuous_condition(wheel, W1, lam, r1) + continuous_condition(wheel, W2, lam, r2)
    pts = rng.uniform(-0.5, 0.5, size=(5, 2))
    assert np.allclose(lhs.evaluate(pts), rhs.evaluate(pts), atol=1e-12)
    diff = lhs - rhs
    assert all(p.max_abs_coeff() < 1e-12 for r in diff.entries for p in r)
