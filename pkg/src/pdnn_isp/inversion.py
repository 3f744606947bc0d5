"""Reconstruction drivers: physics-driven network, back-propagation, Born iterative."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import NumericalError
from .forward import GreenOperators, StateSolver, incident_field
from .geometry import ContrastMap, FieldMatrix, ImagingConfig
from .loss import LossBreakdown, LossWeights, PhysicsLoss
from .network import NetworkSpec, build_model
from .region import RegionMask

log = logging.getLogger(__name__)


def relative_error(estimate: ContrastMap, truth: ContrastMap) -> float:
    """Channel-wise L1 permittivity error normalized by the truth's L1 mass."""
    est, tru = np.asarray(estimate.eps_r), np.asarray(truth.eps_r)
    if est.shape != tru.shape:
        raise ValueError(f"shape mismatch {est.shape} vs {tru.shape}")
    num = np.abs(est.real - tru.real).sum() + np.abs(est.imag - tru.imag).sum()
    den = np.abs(tru.real).sum() + np.abs(tru.imag).sum()
    return float(num / den)


def _inc_matrix(ops: GreenOperators, e_inc: FieldMatrix | None) -> np.ndarray:
    inc = (incident_field(ops.config) if e_inc is None else e_inc).values
    return inc if inc.shape[1] == ops.n_cells else inc[:, ops.cells]


def _embed(ops: GreenOperators, chi_cells) -> ContrastMap:
    full = np.zeros(ops.config.n_cells, dtype=complex)
    full[ops.cells] = chi_cells
    return ContrastMap(full.reshape(ops.config.shape))


# ----------------------------------------------------------------------- BP

def run_bp(measured: FieldMatrix, ops: GreenOperators, e_inc: FieldMatrix | None = None,
           return_flags: bool = False):
    """Non-iterative back-propagation estimate.

    Per transmitter the induced current is the scaled adjoint image of the
    data, J = gamma G_S^H E_sca with gamma = |G_S^H E|^2 / |G_S G_S^H E|^2;
    contrast follows from a per-cell least-squares fit of J = chi E_tot
    across transmitters.
    """
    inc = _inc_matrix(ops, e_inc)
    present = measured.present()
    num = np.zeros(ops.n_cells, dtype=complex)
    den = np.zeros(ops.n_cells)
    for p in range(measured.shape[0]):
        rows = present[p]
        Gs = ops.G_S[rows]
        e = measured.values[p, rows]
        back = Gs.conj().T @ e
        fwd = Gs @ back
        nf = np.vdot(fwd, fwd).real
        gamma = np.vdot(back, back).real / nf if nf > 0 else 0.0
        J = gamma * back
        Et = inc[p] + ops.G_D @ J
        num += J * np.conj(Et)
        den += np.abs(Et) ** 2
    flags = den <= 0
    chi = np.where(flags, 0, num / np.where(flags, 1, den))
    out = _embed(ops, chi)
    return (out, flags) if return_flags else out


# ---------------------------------------------------------------------- BIM

def run_bim(measured: FieldMatrix, ops: GreenOperators, e_inc: FieldMatrix | None = None,
            outer_iters: int = 10, tikhonov_lambda: float = 1e-2, return_history: bool = False):
    """Born iterative method with Tikhonov-regularized contrast updates.

    Each outer iteration freezes the total field from the current contrast,
    solves the regularized linear data equation for chi, and re-solves the
    forward problem. ``tikhonov_lambda`` is relative to the largest
    eigenvalue of the normal matrix. Stops early, keeping the best iterate,
    when the data residual rises three iterations in a row.
    """
    if outer_iters < 1 or not tikhonov_lambda > 0:
        raise ValueError("need outer_iters >= 1 and tikhonov_lambda > 0")
    inc = _inc_matrix(ops, e_inc)
    present = measured.present()
    b = measured.values[present]
    n = ops.n_cells
    chi = np.zeros(n, dtype=complex)
    E = inc.T.copy()
    history, best, rises = [], None, 0
    for _ in range(outer_iters):
        A = np.concatenate([ops.G_S[present[p]] * E[:, p][None, :] for p in range(inc.shape[0])])
        if A.shape[0] >= n:
            N = A.conj().T @ A
            lam = tikhonov_lambda * np.linalg.eigvalsh(N)[-1]
            chi = np.linalg.solve(N + lam * np.eye(n), A.conj().T @ b)
        else:
            N = A @ A.conj().T
            lam = tikhonov_lambda * np.linalg.eigvalsh(N)[-1]
            chi = A.conj().T @ np.linalg.solve(N + lam * np.eye(A.shape[0]), b)
        E = StateSolver(ops, chi).solve(inc.T)
        pred = (ops.G_S @ (chi[:, None] * E)).T
        res = float(np.linalg.norm(pred[present] - b) / np.linalg.norm(b)) if b.size and np.any(b) else 0.0
        history.append(res)
        if best is None or res <= best[0]:
            best = (res, chi.copy())
        rises = rises + 1 if len(history) > 1 and res > history[-2] else 0
        if rises >= 3 or res == 0.0:
            break
    out = _embed(ops, best[1])
    return (out, history) if return_history else out


# --------------------------------------------------------------------- PDNN

INPUT_MODES = ("bp", "ones", "zeros", "file")


@dataclass
class InversionRun:
    config: ImagingConfig
    measured: FieldMatrix
    ops: GreenOperators | None = None
    e_inc: FieldMatrix | None = None
    region: RegionMask | None = None
    weights: LossWeights = field(default_factory=LossWeights)
    iterations: int = 3000
    seed: int = 0
    input_mode: str = "bp"
    input_map: ContrastMap | None = None
    truth: ContrastMap | None = None
    learning_rate: float = 1e-3
    network: NetworkSpec = field(default_factory=NetworkSpec)
    stop_window: int = 100
    stop_tol: float = 1e-6
    solver_method: str = "lu"
    snapshot_every: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iteration budget must be >= 1")
        if self.input_mode not in INPUT_MODES:
            raise ValueError(f"input_mode must be one of {INPUT_MODES}")


@dataclass
class Trace:
    losses: list = field(default_factory=list)
    errors: list = field(default_factory=list)
    snapshots: dict = field(default_factory=dict)
    seconds: float = 0.0
    n_active: int = 0

    def __len__(self):
        return len(self.losses)

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("iteration,total,data,bound,tv" + (",delta" if self.errors else "") + "\n")
            for k, lb in enumerate(self.losses):
                row = f"{k + 1},{lb.total:.10g},{lb.data_term:.10g},{lb.bound_term:.10g},{lb.tv_term:.10g}"
                if self.errors:
                    row += f",{self.errors[k]:.10g}"
                fh.write(row + "\n")


def network_input(run: InversionRun) -> np.ndarray:
    M = run.config.grid_m
    if run.input_mode == "ones":
        return np.ones((2, M, M))
    if run.input_mode == "zeros":
        return np.zeros((2, M, M))
    if run.input_mode == "file":
        if run.input_map is None:
            raise ValueError("input_mode 'file' needs input_map")
        est = run.input_map
    else:
        est = run.input_map if run.input_map is not None else run_bp(run.measured, run.ops, run.e_inc)
    return np.stack([est.values.real, est.values.imag])


def run_pdnn(run: InversionRun):
    """Optimize a fresh network's weights against the physics loss.

    Returns the final contrast embedded in the full grid and a :class:`Trace`.
    """
    from .forward import assemble_operators

    cfg = run.config
    if run.ops is None:
        run.ops = assemble_operators(cfg)
    if run.e_inc is None:
        run.e_inc = incident_field(cfg)
    active = np.arange(cfg.n_cells) if run.region is None else run.region.active_indices
    loss = PhysicsLoss(run.measured, run.ops, run.e_inc, run.weights, active,
                       solver_method=run.solver_method)
    model = build_model(cfg, run.region, run.seed, run.network)
    x = ad.Tensor(network_input(run))
    params = model.arrays()
    state = ad.AdamState(learning_rate=run.learning_rate)
    trace = Trace(n_active=len(active))
    full = np.zeros(cfg.n_cells, dtype=complex)
    chi = None
    t0 = time.perf_counter()
    for k in range(run.iterations):
        with ad.Tape() as tape:
            out = model.forward(x)
        chi = out.data[0] + 1j * out.data[1]
        lb, g = loss.evaluate(chi)
        if not np.isfinite(lb.total):
            last = trace.losses[-1] if trace.losses else None
            raise NumericalError(f"non-finite loss at iteration {k + 1}; last finite: {last}")
        trace.losses.append(lb)
        if run.truth is not None:
            full[active] = chi
            trace.errors.append(relative_error(ContrastMap(full.reshape(cfg.shape)), run.truth))
        if run.snapshot_every and (k + 1) % run.snapshot_every == 0:
            trace.snapshots[k + 1] = chi.copy()
        w = run.stop_window
        if k >= w and abs(trace.losses[k - w].total - lb.total) < run.stop_tol * abs(trace.losses[k - w].total):
            log.info("stopping at iteration %d: windowed loss change below tolerance", k + 1)
            break
        if k == run.iterations - 1:
            break
        model.zero_grad()
        tape.backward(out, np.stack([g.real, g.imag]))
        ad.adam_step(state, params, model.grads())
    trace.seconds = time.perf_counter() - t0
    full[:] = 0
    full[active] = chi
    return ContrastMap(full.reshape(cfg.shape)), trace
