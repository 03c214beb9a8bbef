"""
Fixed combiners, with and without calibration
=============================================

Averaging logits, voting and picking the most confident backbone need no
training. Fitting one temperature per backbone on held-out data changes how
much each backbone's scale dominates the average.
"""
import tempfile

import numpy as np

from backbone_ensemble import calibration, static
from backbone_ensemble.metrics import accuracy, prediction_accuracy
from backbone_ensemble.synth import SynthConfig, synth_generate

root = tempfile.mkdtemp()
bundle = synth_generate(SynthConfig(rho=0.6, n_train=2000, n_val=500, n_test=2000, seed=3), root)
z = bundle.load_logits("test")
y = bundle.load_labels("test")

# Inflate one backbone's logits: its argmax is untouched but it now
# dominates the plain average.
z_skew = z.copy()
z_skew[2] *= 8.0

for title, stack in (("as generated", z), ("bb2 scaled x8", z_skew)):
    print(title)
    for name, fn in (("log-avg", static.log_avg), ("vote top-1", static.vote_top1),
                     ("vote top-3", static.vote_top3), ("conf", static.confidence_select)):
        out = fn(stack)
        # voting and conf return labels, log-avg returns logits
        acc = prediction_accuracy(out, y) if out.ndim == 1 else accuracy(out, y)
        print(f"  {name:<11}{acc:.3f}")

# Temperatures come from the validation split, scaled the same way.
zv = bundle.load_logits("val")
zv[2] *= 8.0
temps = calibration.fit_temperatures(zv, bundle.load_labels("val"), bundle.names, "val")
print("temperatures", np.round(temps.temps, 3))
print("  c-log-avg  ", round(accuracy(calibration.calibrated_log_avg(z_skew, temps.temps), y), 3))
print("  c-conf     ", round(prediction_accuracy(calibration.calibrated_confidence(z_skew, temps.temps), y), 3))
