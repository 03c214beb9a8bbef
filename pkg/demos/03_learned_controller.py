"""
Learning per-example temperatures
=================================

GAC and SL learn a single temperature vector. The controller reads the
backbones' features and picks temperatures for each example, so it can
lean on whichever backbone is reliable for that input.
"""
import numpy as np

from backbone_ensemble import learned
from backbone_ensemble.metrics import accuracy
from backbone_ensemble.nlc import NlcTrainConfig, nlc_forward, nlc_predict, prepare_features, train_nlc
from backbone_ensemble.static import log_avg
from backbone_ensemble.synth import SynthConfig, generate_arrays

data = generate_arrays(SynthConfig(rho=0.8, n_train=5000, n_val=1000, n_test=2000, seed=0))
tr, va, te = data["train"], data["val"], data["test"]
y = te["labels"]

best = max(accuracy(z, y) for z in te["logits"])
print(f"best single  {best:.3f}")
print(f"log-avg      {accuracy(log_avg(te['logits']), y):.3f}")

gac = learned.gac_fit(va["logits"], va["labels"], learned.GacConfig(generations=60), ["bb0", "bb1", "bb2"])
sl = learned.sl_fit(va["logits"], va["labels"], names=["bb0", "bb1", "bb2"])
print(f"gac          {accuracy(learned.combine_fixed(te['logits'], gac.temps), y):.3f}  temps {np.round(gac.temps, 2)}")
print(f"sl           {accuracy(learned.combine_fixed(te['logits'], sl.temps), y):.3f}  temps {np.round(sl.temps, 2)}")

model, history = train_nlc(tr["logits"], tr["features"], tr["labels"], NlcTrainConfig(seed=0))
print(f"controller   {np.mean(nlc_predict(model, te['logits'], te['features']) == y):.3f}"
      f"  (best epoch {history.best_epoch})")

# The temperatures track the hidden reliable backbone.
t = nlc_forward(model, prepare_features(model, te["features"]))
for k in range(3):
    rows = te["reliable"] == k
    print(f"reliable bb{k}: mean temps {np.round(t[rows].mean(axis=0), 2)}")
