"""Physics loss: data misfit + alpha * lower-bound penalty + beta * smoothness.

Gradients are returned as complex arrays ``dL/dRe + j dL/dIm`` per cell.
The data-term gradient is exact: it differentiates through the state
equation with one adjoint solve per transmitter, reusing the forward LU.

The smoothness term sums squared neighbour differences. It is called TV by
convention here, but it is a quadratic (Tikhonov-type) functional, not the
L1 total variation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .forward import GreenOperators, StateSolver, incident_field
from .geometry import ContrastMap, FieldMatrix


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 2.2
    beta: float = 0.6

    def __post_init__(self):
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and non-negative, got {v}")


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    data_term: float
    bound_term: float
    tv_term: float


def _as_vector(chi):
    if isinstance(chi, ContrastMap):
        return chi.flat.copy()
    return np.asarray(chi, dtype=complex).ravel()


def data_loss(chi, measured: FieldMatrix, ops: GreenOperators, e_inc: FieldMatrix | None = None,
              eps: float = 1e-12, solver_method: str = "lu", return_fields: bool = False):
    """Sum over present tx/rx pairs of smoothed |E_mea - E_hat(chi)|.

    ``chi`` covers ``ops.cells`` (a ContrastMap is accepted for full-grid
    operators). Returns ``(value, grad)``.
    """
    chi_v = _as_vector(chi)
    if isinstance(chi, ContrastMap):
        chi_v = chi_v[ops.cells]
    inc = (incident_field(ops.config) if e_inc is None else e_inc).values
    if inc.shape[1] != ops.n_cells:
        inc = inc[:, ops.cells]
    solver = StateSolver(ops, chi_v, method=solver_method)
    E = solver.solve(inc.T)                       # (n, T)
    W = chi_v[:, None] * E
    S = (ops.G_S @ W).T                           # (T, R) predicted scattered field
    present = measured.present()
    r = np.where(present, measured.values - S, 0)
    a = np.sqrt(np.abs(r) ** 2 + eps ** 2)
    value = float(np.sum(np.where(present, a, 0.0)))
    gS = np.where(present, -r / a, 0)             # dL/dS
    gW = np.conj(ops.G_S.T @ np.conj(gS.T))        # G_S^H gS, (n, T)
    v = solver.solve_adjoint(np.conj(chi_v)[:, None] * gW)
    grad = np.sum(np.conj(E) * (gW + ops.apply_GD_adjoint(v)), axis=1)
    if return_fields:
        return value, grad, S
    return value, grad


def bound_loss(chi):
    """Sum of max(0, 1 - Re eps_r) = max(0, -Re chi); gradient -1 on violating cells."""
    chi_v = chi.values if isinstance(chi, ContrastMap) else np.asarray(chi)
    re = np.real(chi_v)
    viol = re < 0
    value = float(np.sum(-re[viol]))
    grad = np.where(viol, -1.0, 0.0) + 0j
    return value, grad


def tv_loss(chi):
    """Squared horizontal and vertical neighbour differences on a 2-D map.

    Applied to real and imaginary parts alike and summed; neighbours outside
    the array are skipped. Accepts a ContrastMap or a 2-D complex array.
    """
    x = chi.values if isinstance(chi, ContrastMap) else np.asarray(chi, dtype=complex)
    dh = x[:, :-1] - x[:, 1:]        # eps[i, j-1] - eps[i, j]
    dv = x[1:, :] - x[:-1, :]        # eps[i+1, j] - eps[i, j]
    value = float(np.sum(np.abs(dh) ** 2) + np.sum(np.abs(dv) ** 2))
    grad = np.zeros_like(x)
    grad[:, :-1] += 2 * dh
    grad[:, 1:] -= 2 * dh
    grad[1:, :] += 2 * dv
    grad[:-1, :] -= 2 * dv
    return value, grad


def total_loss(chi, measured, ops, e_inc=None, weights: LossWeights = LossWeights(), **kw):
    """Weighted sum on a full-grid map; returns ``(LossBreakdown, grad_map)``."""
    cmap = chi if isinstance(chi, ContrastMap) else ContrastMap(chi)
    d, gd = data_loss(cmap.flat[ops.cells], measured, ops, e_inc, **kw)
    b, gb = bound_loss(cmap.flat)
    t, gt = tv_loss(cmap)
    grad = gt.ravel() * weights.beta + gb * weights.alpha
    grad[ops.cells] += gd
    total = d + weights.alpha * b + weights.beta * t
    return LossBreakdown(total, d, b, t), grad.reshape(cmap.values.shape)


class PhysicsLoss:
    """Loss over the active cells of a (possibly reduced) region.

    Inactive cells are held at background (chi = 0). The smoothness term is
    evaluated on the region's bounding box grown by one cell, which equals
    the full-grid value with the same clamping.
    """

    def __init__(self, measured: FieldMatrix, ops: GreenOperators, e_inc: FieldMatrix,
                 weights: LossWeights = LossWeights(), active_cells=None, eps: float = 1e-12,
                 solver_method: str = "lu"):
        cfg = ops.config
        M = cfg.grid_m
        if active_cells is None:
            active_cells = np.arange(cfg.n_cells)
        self.active_cells = np.asarray(active_cells)
        self.ops = ops if len(ops.cells) == len(self.active_cells) and np.array_equal(
            ops.cells, self.active_cells) else ops.restrict(self.active_cells)
        inc = e_inc.values
        if inc.shape[1] != len(self.active_cells):
            inc = inc[:, self.active_cells]
        self.e_inc = FieldMatrix(inc, "incident")
        self.measured = measured
        self.weights = weights
        self.eps = eps
        self.solver_method = solver_method
        rows, cols = np.divmod(self.active_cells, M)
        self.r0, self.r1 = max(rows.min() - 1, 0), min(rows.max() + 2, M)
        self.c0, self.c1 = max(cols.min() - 1, 0), min(cols.max() + 2, M)
        self.box_rows = rows - self.r0
        self.box_cols = cols - self.c0
        self.box_shape = (self.r1 - self.r0, self.c1 - self.c0)

    def evaluate(self, chi_active):
        chi_active = np.asarray(chi_active, dtype=complex)
        d, gd = data_loss(chi_active, self.measured, self.ops, self.e_inc, self.eps,
                          self.solver_method)
        b, gb = bound_loss(chi_active)
        box = np.zeros(self.box_shape, dtype=complex)
        box[self.box_rows, self.box_cols] = chi_active
        t, gt = tv_loss(box)
        w = self.weights
        grad = gd + w.alpha * gb + w.beta * gt[self.box_rows, self.box_cols]
        return LossBreakdown(d + w.alpha * b + w.beta * t, d, b, t), grad
