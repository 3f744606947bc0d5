"""Reconstruct the Austria profile with the per-scene network.

Steps: simulate measurements, get a back-propagation (BP) estimate, shrink
the unknowns to a subregion around it, then optimize the network weights
against the physics loss. Reduced scale (32 x 32, 1000 iterations) so it
finishes in a few minutes on one core.
Run: python demos/invert_austria.py [out_dir]
"""
import sys
from pathlib import Path

from pdnn_isp import render
from pdnn_isp.forward import assemble_operators, incident_field, solve_forward
from pdnn_isp.geometry import make_config, profile_shapes
from pdnn_isp.inversion import InversionRun, relative_error, run_bp, run_pdnn
from pdnn_isp.network import NetworkSpec
from pdnn_isp.region import identify_region

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(exist_ok=True)

cfg = make_config(grid_m=32)
truth = profile_shapes(cfg, "austria")
ops, e_inc = assemble_operators(cfg), incident_field(cfg)
measured = solve_forward(ops, truth, e_inc).e_sca

# %% BP is cheap and blurry but good enough to locate the scatterers.
bp = run_bp(measured, ops, e_inc)
print(f"BP relative error: {100 * relative_error(bp, truth):.1f}%")

# %% Threshold + closing + dilation gives the active region.
region = identify_region(bp)
print(f"active cells: {region.n_active} of {cfg.n_cells}; covers truth: {region.covers(truth)}")

# %% Optimize the network; the trace records the error each iteration.
run = InversionRun(cfg, measured, ops, e_inc, region=region, iterations=1000, input_map=bp,
                   truth=truth, network=NetworkSpec(conv_channels=(16, 32, 32)),
                   snapshot_every=250)
est, trace = run_pdnn(run)
for k in (100, 300, 600, 1000):
    print(f"iteration {k:4d}: error {100 * trace.errors[k - 1]:.2f}%")
print(f"{trace.seconds / len(trace) * 1e3:.0f} ms per iteration")

render.render_map(truth, out / "austria_truth.png", title="truth")
render.render_map(bp, out / "austria_bp.png", title="BP")
render.render_map(est, out / "austria_pdnn.png", title="network")
render.render_mask(region.mask, out / "austria_region.png")
print(f"figures in {out}/")
