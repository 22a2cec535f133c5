"""
Comparing training objectives
=============================

Run the four training objectives over a few seeds and compare mean
difference sharpness and the spread of accuracy across seeds. This is a
reduced version of ``lprobe experiment``. With only three seeds the SAM
gap to the baseline is within seed noise; the acceptance suite uses eight.
"""

from dataclasses import replace

import numpy as np

from lprobe.config import Config, ExperimentConfig
from lprobe.experiment import ExperimentPlan, run_experiment

cfg = Config()
cfg = replace(cfg, experiment=ExperimentConfig(seeds=(0, 1, 2)))
bundle = run_experiment(ExperimentPlan.from_config(cfg))

print(f"{'objective':<12} {'mean phi_diff':>14} {'mean acc':>9} {'seed std':>9}")
for objective, mean_acc, std_acc, _ in bundle.stability:
    phis = [r.phi_difference for r in bundle.reports if r.objective == objective]
    print(f"{objective:<12} {np.mean(phis):>14.4f} {mean_acc:>9.3f} {std_acc:>9.4f}")
