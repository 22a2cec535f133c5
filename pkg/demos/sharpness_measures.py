"""
Margin, sharpness and accuracy across domains
=============================================

Train one model on the default suite, compute every measure on each
shifted domain and correlate it with accuracy. Margin tracks accuracy;
difference sharpness moves the other way.
"""

from lprobe.analysis import correlate_measures
from lprobe.datagen import default_suite
from lprobe.measures import measure_all
from lprobe.model import Model, ModelSpec
from lprobe.objectives import TrainConfig, train

suite = default_suite()
model = Model(ModelSpec(suite.input_dim, (32,), suite.num_classes))
train(model, suite.train, suite.val, TrainConfig())

reports = measure_all(model, suite, model_id="demo", objective="baseline")
print(f"{'domain':<8} {'acc':>6} {'margin':>8} {'phi_diff':>9} {'phi_alpha':>10}")
for r in reports:
    alpha = "failed" if r.phi_alpha_failed else f"{r.phi_alpha:.3g}"
    print(f"{r.domain:<8} {r.accuracy:>6.3f} {r.margin:>8.3f} {r.phi_difference:>9.4f} {alpha:>10}")

print()
for c in correlate_measures(reports, "model"):
    print(f"r({c.measure}, accuracy) = {c.r:+.3f} over {c.n} domains")
