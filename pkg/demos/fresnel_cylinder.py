"""Measured-data workflow on a Fresnel-format file.

The bundled fixture mimics the single-cylinder TM files: 36 sources, 72
receiver positions of which 49 are measured per source, and an unknown
complex gain per source. Calibration divides that gain out using the
incident field, then the usual pipeline runs on the masked data.
Run: python demos/fresnel_cylinder.py [path/to/file.txt]
"""
import sys
from pathlib import Path

import numpy as np

from pdnn_isp.forward import assemble_operators, incident_field
from pdnn_isp.fresnelio import calibrate, parse_fresnel
from pdnn_isp.inversion import InversionRun, run_bp, run_pdnn
from pdnn_isp.network import NetworkSpec
from pdnn_isp.region import identify_region

path = Path(sys.argv[1]) if len(sys.argv) > 1 else \
    Path(__file__).parents[1] / "tests" / "data" / "fresnel_cylinder_tm.txt"
record = parse_fresnel(path)
print(f"{record.n_tx} sources x {record.n_rx} measured receivers, "
      f"frequencies {record.frequencies / 1e9} GHz")

cfg = record.imaging_config(freq_index=0, doi_side=0.15, grid_m=32)
measured = calibrate(record, cfg)
ops, e_inc = assemble_operators(cfg), incident_field(cfg)
bp = run_bp(measured, ops, e_inc)
run = InversionRun(cfg, measured, ops, e_inc, region=identify_region(bp), iterations=600,
                   input_map=bp, network=NetworkSpec(conv_channels=(16, 32, 32)))
est, _ = run_pdnn(run)

eps = est.eps_r.real
i, j = np.unravel_index(np.argmax(eps), eps.shape)
xs, ys = cfg.cell_axes()
print(f"peak Re(eps_r) = {eps[i, j]:.2f} at x = {100 * xs[j]:.1f} cm, y = {100 * ys[i]:.1f} cm")
