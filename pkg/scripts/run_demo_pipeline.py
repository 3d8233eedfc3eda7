#!/usr/bin/env python3
"""Run the full pipeline on a small synthetic-event configuration.

Produces reachability fields, the comfort model, two trained policies and
the metrics table under runs/demo/ in a few minutes.
"""

import json
import sys
import tempfile

from safecycle.cli import main

CONFIG = {
    "seed": 0,
    "out_dir": "runs/demo",
    "grid": {"mins": [-10.0, -10.0, -2.0], "maxs": [50.0, 10.0, 6.0], "shape": [61, 41, 17]},
    "solver": {"horizon": 10.0, "tol": 1e-4},
    "disturbance": {"kappa": 4.0},
    "autoencoder": {"epochs": 400, "dataset_size": 4000},
    "dqn": {"episodes": 320, "alpha": 5e-4},
    "events": {"source": "synthetic:120", "eval_count": 60},
}

if __name__ == "__main__":
    with tempfile.NamedTemporaryFile("w", suffix=".json", delete=False) as fh:
        json.dump(CONFIG, fh)
        path = fh.name
    sys.exit(main(["pipeline", "--config", path]))
