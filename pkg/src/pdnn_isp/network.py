"""The per-scene network that emits the contrast map.

Layout: three 3x3 conv layers (ReLU), three residual blocks (LeakyReLU),
then a two-layer fully connected head. The head pools the last feature map
onto a coarse ``pool_grid x pool_grid`` lattice, maps it to a hidden vector
and from there to two values (Re, Im of contrast) per active cell. Only the
output rows of active cells exist, so a reduced imaging region directly
shrinks the last layer.

A head that reads every cell's full feature vector would need well over
1e8 weights at 64 x 64; pooling keeps the model small while the final
layer still has a private row per cell, which is what lets uniform inputs
(all ones / all zeros) produce spatially varying maps.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .geometry import ImagingConfig


@dataclass(frozen=True)
class NetworkSpec:
    conv_channels: tuple = (32, 64, 64)
    n_res_blocks: int = 3
    hidden: int = 256
    pool_grid: int = 4
    slope: float = 0.01
    zero_init_residual: bool = False


class PdnnModel:
    """Network weights plus the fixed geometry of its output."""

    def __init__(self, grid_m: int, active_cells, spec: NetworkSpec = NetworkSpec(), seed: int = 0):
        self.grid_m = grid_m
        self.active_cells = np.asarray(active_cells, dtype=int)
        if self.active_cells.size == 0:
            raise ValueError("active region is empty")
        if self.active_cells.size > grid_m * grid_m or self.active_cells.max() >= grid_m * grid_m:
            raise ValueError("region larger than the grid")
        self.spec = spec
        self.seed = seed
        pool = spec.pool_grid
        while grid_m % pool:
            pool -= 1
        self.pool_grid = pool
        rng = np.random.default_rng(seed)
        self.params = {}
        c_prev = 2
        for i, c in enumerate(spec.conv_channels):
            self._conv(f"conv{i}", c_prev, c, rng)
            c_prev = c
        for b in range(spec.n_res_blocks):
            self._conv(f"res{b}a", c_prev, c_prev, rng)
            self._conv(f"res{b}b", c_prev, c_prev, rng, zero=spec.zero_init_residual)
        n_feat = c_prev * pool * pool
        n_out = 2 * self.active_cells.size
        self._dense("fc0", n_feat, spec.hidden, rng)
        self._dense("fc1", spec.hidden, n_out, rng)

    def _conv(self, name, c_in, c_out, rng, zero=False):
        shape = (c_out, c_in, 3, 3)
        w = np.zeros(shape) if zero else ad.he_uniform(rng, shape, c_in * 9)
        self.params[name + ".w"] = ad.Tensor(w, requires_grad=True, name=name + ".w")
        self.params[name + ".b"] = ad.Tensor(np.zeros(c_out), requires_grad=True, name=name + ".b")

    def _dense(self, name, n_in, n_out, rng):
        w = ad.he_uniform(rng, (n_out, n_in), n_in)
        self.params[name + ".w"] = ad.Tensor(w, requires_grad=True, name=name + ".w")
        self.params[name + ".b"] = ad.Tensor(np.zeros(n_out), requires_grad=True, name=name + ".b")

    @property
    def n_active(self) -> int:
        return self.active_cells.size

    def n_parameters(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def arrays(self) -> dict:
        return {k: p.data for k, p in self.params.items()}

    def grads(self) -> dict:
        return {k: (np.zeros_like(p.data) if p.grad is None else p.grad)
                for k, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def load_arrays(self, arrays: dict):
        for k, v in arrays.items():
            if k not in self.params or self.params[k].shape != np.shape(v):
                raise ValueError(f"checkpoint block {k!r} does not fit this model")
            self.params[k].data[...] = v

    def forward(self, x) -> ad.Tensor:
        """(2, M, M) input -> (2, n_active) contrast (Re, Im)."""
        P = self.params
        x = ad._wrap(x)
        if x.shape != (2, self.grid_m, self.grid_m):
            raise ValueError(f"input must have shape (2, {self.grid_m}, {self.grid_m}), got {x.shape}")
        h = x
        for i in range(len(self.spec.conv_channels)):
            h = ad.relu(ad.conv2d(h, P[f"conv{i}.w"], P[f"conv{i}.b"]))
        s = self.spec.slope
        for b in range(self.spec.n_res_blocks):
            y = ad.leaky_relu(ad.conv2d(h, P[f"res{b}a.w"], P[f"res{b}a.b"]), s)
            y = ad.conv2d(y, P[f"res{b}b.w"], P[f"res{b}b.b"])
            h = ad.leaky_relu(h + y, s)
        k = self.grid_m // self.pool_grid
        feat = ad.avg_pool2d(h, k).reshape(-1)
        z = ad.leaky_relu(P["fc0.w"] @ feat + P["fc0.b"], s)
        out = P["fc1.w"] @ z + P["fc1.b"]
        return out.reshape(2, self.n_active)


def build_model(config: ImagingConfig, region=None, seed: int = 0,
                spec: NetworkSpec = NetworkSpec()) -> PdnnModel:
    """Fresh model for one scene; ``region`` is a RegionMask or None (full grid)."""
    cells = np.arange(config.n_cells) if region is None else region.active_indices
    return PdnnModel(config.grid_m, cells, spec, seed)


def predict(model: PdnnModel, x) -> ad.Tensor:
    return model.forward(x)
