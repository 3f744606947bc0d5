"""Method-of-moments forward solver for 2-D TM scattering.

Time convention exp(-j w t); Green's function g = (j/4) H0^(1)(k0 |r - r'|).
Pulse basis with point matching; each square cell is replaced by the circle
of equal area (radius a = h / sqrt(pi)) so every matrix entry is closed form.
The k0^2 prefactor of the integral equations is folded into the operators:

    E_tot = E_inc + G_D diag(chi) E_tot       (state equation)
    E_sca = G_S diag(chi) E_tot               (data equation)
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg as sla
from scipy import special
from scipy.sparse.linalg import LinearOperator, bicgstab

from .errors import SolverError
from .geometry import ContrastMap, FieldMatrix, ImagingConfig
from .specialfn import bessel_j, hankel1


def _pairwise_distance(a, b):
    d = a[:, None, :] - b[None, :, :]
    return np.sqrt(d[..., 0] ** 2 + d[..., 1] ** 2)


def _check_memory(n_bytes):
    try:
        import psutil
        avail = psutil.virtual_memory().available
    except ImportError:  # pragma: no cover
        return
    if n_bytes > 0.8 * avail:
        raise MemoryError(f"operator assembly needs ~{n_bytes / 2**30:.2f} GiB, "
                          f"only {avail / 2**30:.2f} GiB available")


def incident_field(config: ImagingConfig, points: np.ndarray | None = None) -> FieldMatrix:
    """Line-source incident field, shape (n_tx, n_points).

    E_inc = A (j/4) H0^(1)(k0 |r - r_tx|) with A = ``config.source_amplitude``.
    ``points`` defaults to the cell centers.
    """
    pts = config.cell_centers() if points is None else np.asarray(points, float)
    kind = "incident"
    rho = _pairwise_distance(config.tx_positions(), pts)
    return FieldMatrix(config.source_amplitude * 0.25j * hankel1(0, config.k0 * rho), kind)


@dataclass(frozen=True, eq=False)
class GreenOperators:
    """Discrete domain (G_D) and data (G_S) operators over a set of cells.

    ``cells`` lists the flat grid indices the columns refer to; after
    :meth:`restrict` it is a subset of the full grid.
    """
    G_D: np.ndarray
    G_S: np.ndarray
    config: ImagingConfig
    cells: np.ndarray

    @property
    def n_cells(self) -> int:
        return self.G_D.shape[0]

    @cached_property
    def _col_norms(self) -> np.ndarray:
        """Off-diagonal column 1-norms of G_D, for cheap condition estimates."""
        return np.abs(self.G_D).sum(axis=0) - np.abs(np.diag(self.G_D))

    def apply_GD_adjoint(self, x):
        # G_D is symmetric, so G_D^H x = conj(G_D conj(x)) without a conjugated copy
        return np.conj(self.G_D @ np.conj(x))

    def restrict(self, cells) -> "GreenOperators":
        cells = np.asarray(cells)
        pos = np.searchsorted(self.cells, cells)
        if np.any(pos >= len(self.cells)) or np.any(self.cells[np.minimum(pos, len(self.cells) - 1)] != cells):
            raise ValueError("restriction cells are not a subset of the operator cells")
        return GreenOperators(np.ascontiguousarray(self.G_D[np.ix_(pos, pos)]),
                              np.ascontiguousarray(self.G_S[:, pos]), self.config, cells)


def self_term(k0: float, a: float) -> complex:
    """k0^2 * integral of g over a disk of radius a, observed at its center."""
    x = k0 * a
    return 0.5j * (math.pi * x * hankel1(1, x) + 2j)


def _cell_coefficient(config):
    k0 = config.k0
    a = config.cell_size / math.sqrt(math.pi)
    return 0.5j * math.pi * k0 * a * bessel_j(1, k0 * a)


def data_operator(config: ImagingConfig, rx_points: np.ndarray | None = None) -> np.ndarray:
    """G_S from all cells to the receivers (or to arbitrary ``rx_points``)."""
    rx = config.rx_positions() if rx_points is None else np.asarray(rx_points, float)
    return _cell_coefficient(config) * hankel1(0, config.k0 * _pairwise_distance(rx, config.cell_centers()))


def assemble_operators(config: ImagingConfig, rx_points: np.ndarray | None = None) -> GreenOperators:
    n = config.n_cells
    _check_memory(n * n * (16 + 8 + 16))
    k0 = config.k0
    a = config.cell_size / math.sqrt(math.pi)
    coef = _cell_coefficient(config)
    centers = config.cell_centers()

    rho = _pairwise_distance(centers, centers)
    np.fill_diagonal(rho, 1.0)
    G_D = special.hankel1(0, k0 * rho)
    del rho
    G_D *= coef
    np.fill_diagonal(G_D, self_term(k0, a))

    return GreenOperators(G_D, data_operator(config, rx_points), config, np.arange(n))


# ------------------------------------------------------------------ solving

class StateSolver:
    """Factorization of I - G_D diag(chi), shared by forward and adjoint solves."""

    def __init__(self, ops: GreenOperators, chi_flat: np.ndarray, method: str = "lu",
                 tol: float = 1e-10, maxiter: int = 2000):
        self.ops = ops
        self.chi = np.asarray(chi_flat, dtype=complex)
        if self.chi.shape != (ops.n_cells,):
            raise ValueError(f"chi has {self.chi.shape} entries, operators have {ops.n_cells} cells")
        self.method = method
        self.tol = tol
        self.maxiter = maxiter
        if method == "lu":
            A = -ops.G_D * self.chi[None, :]
            A[np.diag_indices_from(A)] += 1.0
            anorm = (np.abs(np.diag(A)) + np.abs(self.chi) * ops._col_norms).max()
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", sla.LinAlgWarning)
                self._lu = sla.lu_factor(A, check_finite=False, overwrite_a=True)
            rcond, info = sla.lapack.zgecon(self._lu[0], anorm)
            self.rcond = float(rcond)
            if not np.isfinite(self.rcond) or self.rcond < 1e-14:
                raise SolverError(f"state equation is singular (reciprocal condition {self.rcond:.3e})")
        elif method == "bicgstab":
            self._lu = None
            self.rcond = float("nan")
        else:
            raise ValueError(f"unknown solver method {method!r}")

    def _matvec(self, x, adjoint=False):
        chi = self.chi if x.ndim == 1 else self.chi[:, None]
        if adjoint:
            return x - np.conj(chi) * self.ops.apply_GD_adjoint(x)
        return x - self.ops.G_D @ (chi * x)

    def _iterative(self, rhs, adjoint, x0=None):
        n = self.ops.n_cells
        op = LinearOperator((n, n), matvec=lambda v: self._matvec(v, adjoint), dtype=complex)
        out = np.empty_like(rhs)
        for col in range(rhs.shape[1]):
            history = []
            b = rhs[:, col]
            guess = None if x0 is None else x0[:, col]
            x, info = bicgstab(op, b, x0=guess, rtol=self.tol, atol=0.0, maxiter=self.maxiter,
                               callback=lambda xk: history.append(
                                   np.linalg.norm(b - op.matvec(xk)) / np.linalg.norm(b)))
            if info != 0:
                raise SolverError(f"BiCGSTAB did not converge for column {col}; "
                                  f"residual history tail {history[-5:]}")
            out[:, col] = x
        return out

    def solve(self, rhs, x0=None):
        """Solve (I - G_D X) E = rhs for columns of rhs (n_cells x k)."""
        if self._lu is not None:
            return sla.lu_solve(self._lu, rhs, check_finite=False)
        return self._iterative(rhs, False, x0)

    def solve_adjoint(self, rhs):
        """Solve (I - G_D X)^H v = rhs."""
        if self._lu is not None:
            return sla.lu_solve(self._lu, rhs, trans=2, check_finite=False)
        return self._iterative(rhs, True)


@dataclass(frozen=True, eq=False)
class ForwardSolution:
    e_tot: FieldMatrix
    e_sca: FieldMatrix
    residual_norm: np.ndarray


def _chi_vector(ops: GreenOperators, chi) -> np.ndarray:
    if isinstance(chi, ContrastMap):
        chi.check_config(ops.config)
        return chi.flat[ops.cells]
    return np.asarray(chi, dtype=complex).ravel()


def solve_forward(ops: GreenOperators, chi, e_inc: FieldMatrix | None = None, tol: float = 1e-10,
                  method: str = "lu") -> ForwardSolution:
    """Total field in the DOI and scattered field at the receivers.

    ``chi`` is a :class:`ContrastMap` or a vector over ``ops.cells``;
    ``e_inc`` is (n_tx, n_cells_full) or (n_tx, len(ops.cells)).
    """
    chi_v = _chi_vector(ops, chi)
    if e_inc is None:
        e_inc = incident_field(ops.config)
    inc = e_inc.values
    if inc.shape[1] != ops.n_cells:
        inc = inc[:, ops.cells]
    solver = StateSolver(ops, chi_v, method=method, tol=tol)
    e_tot = solver.solve(inc.T)  # (n_cells, n_tx)
    resid = np.linalg.norm(solver._matvec(e_tot) - inc.T, axis=0) / np.linalg.norm(inc.T, axis=0)
    if np.any(resid > max(tol, 1e-8) * 1e3):
        raise SolverError(f"state-equation residual too large: max {resid.max():.3e}")
    e_sca = ops.G_S @ (chi_v[:, None] * e_tot)
    return ForwardSolution(FieldMatrix(e_tot.T, "total"), FieldMatrix(e_sca.T, "scattered"), resid)


def simulate_measurements(config: ImagingConfig, chi: ContrastMap,
                          data_grid_m: int | None = None) -> FieldMatrix:
    """Noise-free scattered field at the receivers, optionally on a finer grid.

    With ``data_grid_m`` the contrast is resampled by nearest cell center onto
    the finer grid before solving (avoids the inverse crime).
    """
    if data_grid_m is None or data_grid_m == config.grid_m:
        ops = assemble_operators(config)
        return solve_forward(ops, chi, incident_field(config)).e_sca
    fine = config.with_grid(data_grid_m)
    pts = fine.cell_centers()
    xs, ys = config.cell_axes()
    h = config.cell_size
    j = np.clip(np.floor((pts[:, 0] - (xs[0] - h / 2)) / h).astype(int), 0, config.grid_m - 1)
    i = np.clip(np.floor(((ys[0] + h / 2) - pts[:, 1]) / h).astype(int), 0, config.grid_m - 1)
    chi_fine = ContrastMap(chi.values[i, j].reshape(fine.shape))
    ops = assemble_operators(fine)
    return solve_forward(ops, chi_fine, incident_field(fine)).e_sca


# --------------------------------------------------------------- Mie oracle

def mie_cylinder(config: ImagingConfig, radius: float, eps_r: complex, center=(0.0, 0.0),
                 n_terms: int | None = None, rx_points: np.ndarray | None = None) -> FieldMatrix:
    """Analytic scattered field of a homogeneous circular cylinder.

    Line-source incidence, expanded in cylindrical harmonics about the
    cylinder axis via the addition theorem:

        E_sca(rho, phi) = A (j/4) sum_n a_n H_n(k0 rho_t) H_n(k0 rho) exp(jn(phi - phi_t))
    """
    cx, cy = center
    half = config.doi_side / 2
    acx, acy = config.array_center
    if (abs(cx - acx) + radius > half + 1e-12) or (abs(cy - acy) + radius > half + 1e-12):
        raise ValueError("cylinder must lie inside the DOI")
    k0 = config.k0
    k1 = k0 * np.sqrt(complex(eps_r))
    if n_terms is None:
        n_terms = int(math.ceil(k0 * radius)) + 10
    n = np.arange(-n_terms, n_terms + 1)
    x0, x1 = k0 * radius, k1 * radius
    J0, dJ0 = special.jv(n, x0), special.jvp(n, x0)
    H0, dH0 = special.hankel1(n, x0), special.h1vp(n, x0)
    J1, dJ1 = special.jv(n, x1), special.jvp(n, x1)
    a_n = (k1 * dJ1 * J0 - k0 * J1 * dJ0) / (k0 * J1 * dH0 - k1 * dJ1 * H0)

    tx = config.tx_positions() - [cx, cy]
    rx = (config.rx_positions() if rx_points is None else np.asarray(rx_points, float)) - [cx, cy]
    rt, pt = np.hypot(tx[:, 0], tx[:, 1]), np.arctan2(tx[:, 1], tx[:, 0])
    rr, pr = np.hypot(rx[:, 0], rx[:, 1]), np.arctan2(rx[:, 1], rx[:, 0])
    Ht = special.hankel1(n[None, :], k0 * rt[:, None])          # (n_tx, N)
    Hr = special.hankel1(n[None, :], k0 * rr[:, None])          # (n_rx, N)
    phase = np.exp(1j * n[None, None, :] * (pr[None, :, None] - pt[:, None, None]))
    field = np.einsum("n,tn,rn,trn->tr", a_n, Ht, Hr, phase)
    return FieldMatrix(config.source_amplitude * 0.25j * field, "scattered")
