"""
A synthetic suite with growing domain shift
===========================================

The anchor domain is Gaussian clusters around class prototypes. Each
shifted domain rotates the inputs by a larger angle, so a classifier
trained on the anchor loses accuracy as the angle grows.
"""

import numpy as np

from lprobe.datagen import DomainSpec, make_domain_suite
from lprobe.model import Model, ModelSpec
from lprobe.objectives import TrainConfig, train

angles = [0.0, 0.3, 0.6, 0.9, 1.2, 1.5]
specs = [DomainSpec(f"rot{int(100 * a):03d}", a) for a in angles]
suite = make_domain_suite(3, 16, 0, (2000, 500, 1000), specs, 0)

model = Model(ModelSpec(16, (32,), 3))
result = train(model, suite.train, suite.val, TrainConfig(epochs=5))
print(f"best epoch {result.best_epoch}, anchor val accuracy {result.val_accuracy[result.best_epoch - 1]:.3f}")

for spec, data in suite.shifted:
    acc = np.mean(np.argmax(model.forward(data.x), axis=1) == data.y)
    print(f"{spec.name}  angle={spec.shift_angle:.1f}  accuracy={acc:.3f}")
