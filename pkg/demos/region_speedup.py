"""Why shrink the imaging region?

Each loss evaluation factorizes an N x N state matrix, N = active cells, so
the cost grows roughly as N^3. This demo times one optimization step on
the full 64 x 64 grid and on the BP-derived region for a digit-like scene.
Run: python demos/region_speedup.py
"""
from pdnn_isp.forward import assemble_operators, incident_field, solve_forward
from pdnn_isp.geometry import standard_config, profile_shapes
from pdnn_isp.inversion import InversionRun, run_bp, run_pdnn
from pdnn_isp.network import NetworkSpec
from pdnn_isp.region import identify_region

cfg = standard_config(64)
truth = profile_shapes(cfg, "digit_1")
ops, e_inc = assemble_operators(cfg), incident_field(cfg)
measured = solve_forward(ops, truth, e_inc).e_sca
bp = run_bp(measured, ops, e_inc)
region = identify_region(bp)
print(f"region: {region.n_active} of {cfg.n_cells} cells, covers truth: {region.covers(truth)}")

spec = NetworkSpec(conv_channels=(16, 32, 32))
per_iter = {}
for name, reg in (("full", None), ("region", region)):
    run = InversionRun(cfg, measured, ops, e_inc, region=reg, iterations=3, input_map=bp, network=spec)
    _, trace = run_pdnn(run)
    per_iter[name] = trace.seconds / len(trace)
    print(f"{name:6s}: {per_iter[name]:.2f} s per iteration")
print(f"speedup: {per_iter['full'] / per_iter['region']:.1f}x")
