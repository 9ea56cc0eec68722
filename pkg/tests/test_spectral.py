import numpy as np
import pytest
from scipy.integrate import simpson

from synapse_ssd import core, spectral
from synapse_ssd.errors import OutOfDomain

A = 0.02
D = 3.3e-4


@pytest.fixture(scope="module")
def basis():
    return spectral.build_basis(A, D, 100)


def test_constant_mode(basis):
    assert basis.gamma[0] == 0.0 and basis.s[0] == 0.0 and basis.N[0] == A


def test_first_mode_values(basis):
    assert basis.gamma[1] == pytest.approx(157.0796, abs=1e-4)
    assert basis.s[1] == pytest.approx(-8.1424, abs=1e-4)
    assert basis.N[3] == pytest.approx(0.01)


def test_boundary_signs_exact(basis):
    mu = np.arange(basis.Q)
    assert np.array_equal(basis.c2tilde_at_a, (-1.0) ** mu)
    assert np.array_equal(basis.Kd_tilde, basis.c2tilde_at_a)
    assert np.allclose(basis.c1_at_a, (-1.0) ** mu / basis.N, rtol=0, atol=0)


def test_ka_tilde_rank_one(basis):
    assert np.linalg.matrix_rank(basis.Ka_tilde) == 1


def test_geometry_object_accepted():
    g = core.ChannelGeometry(A, 0.15, 0.15)
    assert spectral.build_basis(g, D, 4).a == A


def test_basis_arrays_read_only(basis):
    with pytest.raises(ValueError):
        basis.gamma[0] = 1.0


def test_eval_K(basis):
    x = np.linspace(0, A, 7)
    k0 = spectral.eval_K(0, x, basis)
    assert np.array_equal(k0[0], np.ones(7)) and np.array_equal(k0[1], np.zeros(7))
    for mu in (1, 2, 7):
        val = spectral.eval_K(mu, A, basis)
        assert val[0] == pytest.approx((-1) ** mu)
        assert val[1] == pytest.approx(0.0, abs=1e-12)
    mid = spectral.eval_K(1, A / 2, basis)
    assert mid[0] == pytest.approx(0.0, abs=1e-15)
    assert mid[1] == pytest.approx(D * basis.gamma[1])


def test_eval_K_out_of_domain(basis):
    with pytest.raises(OutOfDomain):
        spectral.eval_K(1, -1e-9, basis)
    with pytest.raises(OutOfDomain):
        spectral.project_release(1.0, 2 * A, basis)


def test_project_release(basis):
    assert np.array_equal(spectral.project_release(1000.0, 0.0, basis), np.full(100, 1000.0))
    assert np.array_equal(spectral.project_release(0.0, 0.0, basis), np.zeros(100))
    f = spectral.project_release(10.0, A, basis)
    assert np.allclose(f[1::2], -10.0)


def test_output_concentration(basis):
    y = np.zeros(100)
    assert spectral.output_concentration(y, A / 3, basis) == 0.0
    y[0] = 1000.0
    assert np.allclose(spectral.output_concentration(y, np.linspace(0, A, 5), basis), 1000.0 / A)
    e1 = np.zeros(100)
    e1[1] = 1.0
    assert spectral.output_concentration(e1, A, basis) == pytest.approx(-100.0)


def test_output_at_a_matches_c1(basis):
    rng = np.random.default_rng(0)
    y = rng.normal(size=100)
    assert spectral.output_concentration(y, A, basis) == pytest.approx(basis.c1_at_a @ y, rel=1e-12)


def _simpson_grid():
    return np.linspace(0.0, A, 2**12 + 1)


def test_bi_orthogonality(basis):
    # the primal/dual pairing reduces to the integral of cos(g_mu x) cos(g_nu x)
    x = _simpson_grid()
    Q = 24
    C = np.cos(np.multiply.outer(basis.gamma[:Q], x))
    G = simpson(C[:, None, :] * C[None, :, :], x=x, axis=-1)
    expected = np.diag(basis.N[:Q])
    assert np.allclose(G, expected, rtol=0, atol=1e-9 * A)


def test_mass_functional(basis):
    x = _simpson_grid()
    rng = np.random.default_rng(1)
    y = rng.normal(size=100)
    c = spectral.output_concentration(y, x, basis)
    assert simpson(c, x=x) == pytest.approx(y[0], rel=1e-9)


def test_truncation_ladder_converges():
    # A point release diffused for ten steps of T = 1e-4 us is still sharp
    # enough that all ladder levels resolve distinct tails.
    basis = spectral.build_basis(A, D, 200)
    y = 1000.0 * basis.exp_AT(10 * 1e-4)
    x = np.linspace(0, A, 401)
    errs = []
    for q in (6, 12, 24, 48):
        cq = spectral.output_concentration(y[:q], x, basis)
        c2q = spectral.output_concentration(y[: 2 * q], x, basis)
        errs.append(np.max(np.abs(cq - c2q)))
    assert all(e1 < e0 for e0, e1 in zip(errs, errs[1:]))
    assert errs[-1] < 1e-8 * errs[0]
