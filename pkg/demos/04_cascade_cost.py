"""
Paying only for the backbones you need
======================================

Backbones run cheapest first. An example stops as soon as the combined
prediction is confident enough, so easy inputs never reach the expensive
models.
"""
import tempfile

import numpy as np

from backbone_ensemble.cascade import CascadeConfig, cascade_cost, cascade_run
from backbone_ensemble.metrics import prediction_accuracy
from backbone_ensemble.synth import SynthConfig, synth_generate

cfg = SynthConfig(rho=0.6, n_train=100, n_test=3000, seed=2, acc=[0.6, 0.65, 0.75],
                  names=["B-32", "RN50", "B-16"], gflops=[14.9, 18.2, 41.1])
bundle = synth_generate(cfg, tempfile.mkdtemp())
y = bundle.load_labels("test")

print("threshold  accuracy  avg GFLOPs  exits per prefix")
for threshold in np.linspace(0.0, 1.0, 11):
    pred, trace = cascade_run(bundle, "test", CascadeConfig(threshold=threshold))
    exits = np.bincount(trace.prefix_len, minlength=4)[1:]
    print(f"{threshold:9.1f}  {prediction_accuracy(pred, y):8.3f}  {cascade_cost(trace):10.1f}  {exits}")
