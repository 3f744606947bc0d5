import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, special

from pdnn_isp.errors import SolverError
from pdnn_isp.forward import (StateSolver, assemble_operators, data_operator, incident_field, mie_cylinder,
                              self_term, simulate_measurements, solve_forward)
from pdnn_isp.geometry import ContrastMap, Disk, make_config, standard_config, profile_shapes


@pytest.fixture(scope="module")
def small():
    cfg = make_config(grid_m=16)
    return cfg, assemble_operators(cfg)


def _disk_map(cfg, radius_lam=0.25, eps=2.0):
    lam = cfg.wavelength
    return profile_shapes(cfg, [Disk((0.0, 0.0), radius_lam * lam, eps)], supersample=16)


def _rel_l2(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


def test_tiny_grid_operator_structure():
    cfg = make_config(grid_m=4)
    ops = assemble_operators(cfg)
    assert ops.G_D.shape == (16, 16)
    assert np.allclose(ops.G_D, ops.G_D.T, rtol=1e-12, atol=0)
    d = np.diag(ops.G_D)
    assert np.all(d == d[0])


def test_entry_at_one_wavelength(small):
    cfg, ops = small
    k0 = cfg.k0
    a = cfg.cell_size / math.sqrt(math.pi)
    lam = cfg.wavelength
    # same closed form as G_D off-diagonals; a probe point avoids needing
    # a grid pitch that divides the wavelength
    c0 = cfg.cell_centers()[0]
    G = data_operator(cfg, np.array([[c0[0] + lam, c0[1]]]))
    expected = math.pi * k0 * a / 2 * abs(special.j1(k0 * a)) * abs(special.hankel1(0, 2 * math.pi))
    assert abs(G[0, 0]) == pytest.approx(expected, rel=1e-12)
    assert np.array_equal(data_operator(cfg), ops.G_S)


def test_receiver_row_near_uniform():
    cfg = standard_config(16)
    ops = assemble_operators(cfg)
    mag = np.abs(ops.G_S)
    dev = np.abs(mag / np.median(mag, axis=1, keepdims=True) - 1)
    assert np.all(dev < 0.05)
    # extreme distances are 20 lambda -/+ the half-diagonal of the DOI
    lam, half = cfg.wavelength, cfg.doi_side / math.sqrt(2)
    k = cfg.k0
    bound = abs(special.hankel1(0, k * (20 * lam - half))) / abs(special.hankel1(0, k * (20 * lam + half)))
    assert np.all(mag.max(axis=1) / mag.min(axis=1) <= bound)


def test_self_term_matches_quadrature():
    k0, a = 2 * math.pi / 0.075, 0.002
    re = integrate.quad(lambda r: -0.25 * special.y0(k0 * r) * 2 * math.pi * r, 0, a, limit=200,
                        epsabs=0, epsrel=1e-13)[0]
    im = integrate.quad(lambda r: 0.25 * special.j0(k0 * r) * 2 * math.pi * r, 0, a, limit=200,
                        epsabs=0, epsrel=1e-13)[0]
    expected = k0 ** 2 * (re + 1j * im)
    assert self_term(k0, a) == pytest.approx(expected, rel=1e-9)


def test_empty_doi(small):
    cfg, ops = small
    inc = incident_field(cfg)
    sol = solve_forward(ops, ContrastMap.zeros(cfg), inc)
    assert np.array_equal(sol.e_tot.values, inc.values)
    assert np.all(sol.e_sca.values == 0)


def test_linearity_in_excitation(small):
    cfg, ops = small
    chi = _disk_map(cfg)
    inc = incident_field(cfg)
    s1 = solve_forward(ops, chi, inc).e_sca.values
    s2 = solve_forward(ops, chi, inc.with_values(2 * inc.values)).e_sca.values
    assert np.allclose(s2, 2 * s1, rtol=1e-13, atol=0)


def test_state_residual_within_tolerance(small):
    cfg, ops = small
    sol = solve_forward(ops, _disk_map(cfg, eps=3.0), tol=1e-10)
    assert np.all(sol.residual_norm <= 1e-10)


def test_bicgstab_agrees_with_lu(small):
    cfg, ops = small
    chi = _disk_map(cfg)
    a = solve_forward(ops, chi, method="lu").e_sca.values
    b = solve_forward(ops, chi, method="bicgstab", tol=1e-12).e_sca.values
    assert _rel_l2(b, a) < 1e-9


def test_singular_system_reports_condition(small):
    cfg, ops = small
    # choose chi so the first row of I - G_D diag(chi) vanishes at the diagonal
    chi = np.zeros(ops.n_cells, complex)
    chi[0] = 1 / ops.G_D[0, 0]
    with pytest.raises(SolverError, match="condition"):
        StateSolver(ops, chi)


def test_born_limit(small):
    cfg, ops = small
    chi = _disk_map(cfg, eps=1.001)
    inc = incident_field(cfg)
    exact = solve_forward(ops, chi, inc).e_sca.values
    born = (ops.G_S @ (chi.flat[:, None] * inc.values.T)).T
    assert _rel_l2(born, exact) < 5e-3


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_adjoint_consistency(seed):
    cfg = make_config(grid_m=8)
    ops = assemble_operators(cfg)
    rng = np.random.default_rng(seed)
    x = rng.normal(size=ops.n_cells) + 1j * rng.normal(size=ops.n_cells)
    y = rng.normal(size=cfg.n_rx) + 1j * rng.normal(size=cfg.n_rx)
    lhs = np.vdot(y, ops.G_S @ x)
    rhs = np.vdot(ops.G_S.conj().T @ y, x)
    assert abs(lhs - rhs) <= 1e-12 * abs(lhs)


def test_restrict_matches_full_solve(small):
    cfg, ops = small
    chi = _disk_map(cfg)
    cells = np.flatnonzero(np.abs(chi.flat) > 0)
    full = solve_forward(ops, chi).e_sca.values
    sub = solve_forward(ops.restrict(cells), chi.flat[cells]).e_sca.values
    assert np.allclose(sub, full, rtol=1e-12, atol=1e-15 * np.abs(full).max())


def test_finer_data_grid_close_to_native():
    cfg = make_config(grid_m=16)
    chi = _disk_map(cfg)
    native = simulate_measurements(cfg, chi)
    fine = simulate_measurements(cfg, chi, data_grid_m=32)
    assert _rel_l2(fine.values, native.values) < 0.05


# ------------------------------------------------------------------ Mie oracle

def test_mie_no_contrast_is_zero():
    cfg = standard_config(16)
    ref = np.abs(mie_cylinder(cfg, 0.25 * cfg.wavelength, 2.0).values).max()
    assert np.abs(mie_cylinder(cfg, 0.25 * cfg.wavelength, 1.0).values).max() < 1e-12 * ref


def test_mie_truncation_converged():
    cfg = standard_config(16)
    r = 0.25 * cfg.wavelength
    n = int(math.ceil(cfg.k0 * r)) + 10
    a = mie_cylinder(cfg, r, 2.0, n_terms=n).values
    b = mie_cylinder(cfg, r, 2.0, n_terms=n + 5).values
    assert _rel_l2(a, b) < 1e-8


def test_mie_reciprocity():
    lam = 0.075
    c1 = make_config(grid_m=8, n_tx=12, n_rx=12, tx_radius=20 * lam, rx_radius=15 * lam)
    c2 = make_config(grid_m=8, n_tx=12, n_rx=12, tx_radius=15 * lam, rx_radius=20 * lam)
    kw = dict(radius=0.3 * lam, eps_r=2.5 + 0.4j, center=(0.01, -0.02))
    f1 = mie_cylinder(c1, **kw).values
    f2 = mie_cylinder(c2, **kw).values
    assert np.allclose(f1, f2.T, rtol=1e-10, atol=0)


def test_mie_off_center_matches_mom():
    cfg = standard_config(32)
    lam = cfg.wavelength
    center = (0.2 * lam, -0.3 * lam)
    chi = profile_shapes(cfg, [Disk(center, 0.25 * lam, 1.5 + 0.3j)], supersample=16)
    mom = solve_forward(assemble_operators(cfg), chi).e_sca.values
    mie = mie_cylinder(cfg, 0.25 * lam, 1.5 + 0.3j, center).values
    assert _rel_l2(mom, mie) < 0.03


@pytest.fixture(scope="module")
def fine_disk():
    cfg = standard_config(64)
    ops = assemble_operators(cfg)
    chi = _disk_map(cfg)
    return cfg, ops, chi, solve_forward(ops, chi)


def test_mom_converges_to_mie(fine_disk):
    errs = []
    for m in (32, 48):
        cfg = standard_config(m)
        sol = solve_forward(assemble_operators(cfg), _disk_map(cfg))
        errs.append(_rel_l2(sol.e_sca.values, mie_cylinder(cfg, 0.25 * cfg.wavelength, 2.0).values))
    cfg, _, _, sol = fine_disk
    errs.append(_rel_l2(sol.e_sca.values, mie_cylinder(cfg, 0.25 * cfg.wavelength, 2.0).values))
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] <= 0.02


def test_optical_theorem(fine_disk):
    # For a lossless scatterer the power carried off by the scattered wave
    # equals k0 Im <E_inc, chi E_tot> (Green's identity on a large circle).
    cfg, ops, chi, sol = fine_disk
    R = 400 * cfg.wavelength
    phi = 2 * np.pi * np.arange(720) / 720
    far = np.column_stack([R * np.cos(phi), R * np.sin(phi)])
    G_far = data_operator(cfg, far)
    W = chi.flat[:, None] * sol.e_tot.values.T
    E_far = G_far @ W
    flux = np.sum(np.abs(E_far) ** 2, axis=0) * R * (2 * np.pi / 720)
    extinct = cfg.k0 * np.imag(np.sum(np.conj(incident_field(cfg).values.T) * W, axis=0)) * cfg.cell_size ** 2
    assert np.allclose(flux, extinct, rtol=0.03)
