"""Peak tensile load versus the critical damage d_cr.

Runs the notched tension test with the improved volumetric-deviatoric
split and the critical-damage correction for several d_cr values, then
prints the peak reaction of each run.

    python demos/critical_damage_sweep.py 0.2 0.4 0.6
"""

import sys

import numpy as np

from phasefrac import Simulation, builtin_scenario

values = [float(v) for v in sys.argv[1:]] or [0.2, 0.4, 0.6]
base = builtin_scenario("tension").replace(nx=20, ny=20, l=0.015, schedule=((None, 1e-4),), steps=100,
                                           split="improved_vd", itcbc=True)

for d_cr in values:
    res = Simulation(base.replace(d_cr=d_cr)).run()
    Fy, U = res.column("Fy"), res.column("U")
    i = int(np.argmax(Fy))
    print(f"d_cr = {d_cr:.2f}: peak Fy {Fy[i]:.4f} kN at U = {U[i]:.2e} mm")
