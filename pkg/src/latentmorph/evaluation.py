"""Evaluate a checkpoint against a mixture target, with and without morphing."""

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .losses import mmd2_vstat
from .morphing import MorphConfig
from .networks import DeepKernel, MlpParams, MlpSpec
from .plugplay import refine
from .targets import grid_density, mode_coverage, sample_mixture

EVAL_BANDWIDTH = 0.5


def rbf_kernel(dim=2, bandwidth=EVAL_BANDWIDTH):
    """Fixed kernel exp(-||x - y||^2 / bandwidth^2) as a linear feature map."""
    spec = MlpSpec((dim, dim), ())
    return DeepKernel(MlpParams(spec, [[np.eye(dim) / bandwidth, np.zeros(dim)]]))


@dataclass
class EvalReport:
    steps: list
    coverage: dict
    mmd2: dict
    grids: dict = field(default_factory=dict)
    target_grid: object = None

    def to_dict(self):
        return {
            "steps": list(self.steps),
            "coverage": {str(k): v.to_dict() for k, v in self.coverage.items()},
            "mmd2": {str(k): float(v) for k, v in self.mmd2.items()},
            "clipped": {str(k): int(g.clipped) for k, g in self.grids.items()},
        }

    def write(self, out_dir, run_id="eval"):
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, f"{run_id}_coverage.json"), "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        if self.target_grid is not None:
            self.target_grid.write_csv(os.path.join(out_dir, f"{run_id}_target_density.csv"))
        for k, g in self.grids.items():
            g.write_csv(os.path.join(out_dir, f"{run_id}_steps{k}_density.csv"))


def eval_model(ckpt, mix, config=None, n=1000, seed=0, data=None, resolution=64):
    """Coverage, MMD^2 to fresh target samples and density grids at 0 and ``config.steps`` steps.

    ``data`` is the sample set that drives morphing; by default 512 fresh target draws.
    """
    config = MorphConfig() if config is None else config
    rng = np.random.default_rng([seed, 7])
    if data is None:
        data = sample_mixture(mix, 512, rng)
    held_out = sample_mixture(mix, n, rng)
    kernel = rbf_kernel(held_out.shape[1])
    report = EvalReport([], {}, {}, target_grid=grid_density(held_out, resolution=resolution))
    for steps in sorted({0, config.steps}):
        cfg = MorphConfig(**dict(vars(config), steps=steps))
        samples, _ = refine(ckpt, cfg, data, n, seed=seed)
        report.steps.append(steps)
        report.coverage[steps] = mode_coverage(samples, mix)
        report.mmd2[steps] = mmd2_vstat(samples, held_out, kernel)
        report.grids[steps] = grid_density(samples, resolution=resolution)
    return report
