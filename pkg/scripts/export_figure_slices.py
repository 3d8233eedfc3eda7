#!/usr/bin/env python3
"""Solve constant- and comfort-modulated fields and export (dx, dv) value
slices at 1.25 m and 1.5 m lateral range for external plotting.

Usage: export_figure_slices.py [out_dir]
"""

import sys

import numpy as np

from safecycle import disturbance as dist
from safecycle import events as ev
from safecycle import metrics as met
from safecycle.dynamics import CollisionDisc, InputBounds, LateralMode
from safecycle.reachability import ConstantProfile, Grid3, ModulatedProfile, solve


def main(out_dir: str = "runs/slices") -> int:
    bounds = InputBounds()
    disc = CollisionDisc()
    grid = Grid3((-10.0, -10.0, -2.0), (50.0, 10.0, 6.0), (61, 41, 17))
    kappa = 4.0
    alpha2 = bounds.u_max + bounds.d_max * (1.0 + kappa)

    vf_const = solve(grid, 10.0, 1e-4, bounds, ConstantProfile(bounds.d_max), disc,
                     LateralMode.FROZEN, alpha2=alpha2)
    events = ev.generate_synthetic_events(120, seed=5)
    base = dist.samples_from_events(events[60:])
    samples, labels = dist.assemble_labeled_dataset(base, vf_const, n_total=4000, seed=6)
    safe = [s for s, l in zip(samples, labels) if l is dist.SafetyLabel.SAFE]
    model = dist.train_autoencoder(safe, dist.AutoencoderConfig(epochs=400), seed=7)
    profile = ModulatedProfile(score=dist.as_disturbance_score(model),
                               d_max=bounds.d_max, kappa=kappa)
    vf_mod = solve(grid, 10.0, 1e-4, bounds, profile, disc,
                   LateralMode.FROZEN, alpha2=alpha2)

    for tag, vf in (("constant", vf_const), ("modulated", vf_mod)):
        for dy in (1.25, 1.5):
            name = f"{out_dir}/{tag}_dy{str(dy).replace('.', 'p')}"
            paths = met.export_slice(vf, dy, name)
            print("wrote", *paths)
    extra = (vf_mod.values <= 0) & ~(vf_const.values <= 0)
    print(f"modulated-only unsafe nodes: {int(extra.sum())} of {grid.n_nodes}")
    return 0


if __name__ == "__main__":
    sys.exit(main(*sys.argv[1:]))
