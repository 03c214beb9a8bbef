"""
Few labelled examples
=====================

Train a linear probe per backbone on n examples per class, then stack the
probe logits and combine them like any other backbone outputs. The
synthetic bundle's features only hint at which backbone to trust, so this
script builds its own class-bearing features of varying quality.
"""
import numpy as np

from backbone_ensemble.fewshot import probe_fit, probe_logits, sample_shots
from backbone_ensemble.metrics import accuracy
from backbone_ensemble.nlc import NlcTrainConfig, nlc_predict, train_nlc
from backbone_ensemble.static import log_avg
from backbone_ensemble.synth import SynthConfig, generate_arrays

rng = np.random.default_rng(0)
classes, dim = 10, 32
data = generate_arrays(SynthConfig(rho=0.8, n_train=5000, n_test=2000, seed=4))
tr, te = data["train"], data["test"]
y = te["labels"]

# one random class prototype per backbone, mixed with noise at different strengths
protos = [rng.normal(size=(classes, dim)) for _ in range(3)]
strength = [0.4, 0.6, 0.8]


def embed(labels, b):
    noise = rng.normal(size=(len(labels), dim))
    return strength[b] * protos[b][labels] + noise


feats_tr = [embed(tr["labels"], b) for b in range(3)]
feats_te = [embed(y, b) for b in range(3)]

for shots in (1, 4, 16):
    idx = sample_shots(tr["labels"], shots, seed=0).indices
    probes = [probe_fit(f[idx], tr["labels"][idx], classes) for f in feats_tr]
    stack = np.stack([probe_logits(p, f) for p, f in zip(probes, feats_te)])
    singles = "  ".join(f"{accuracy(z, y):.3f}" for z in stack)
    print(f"{shots:>2}-shot  probes {singles}  log-avg {accuracy(log_avg(stack), y):.3f}")

# A controller trained on the same few shots still combines the zero-shot logits well.
idx = sample_shots(tr["labels"], 4, seed=0).indices
model, _ = train_nlc(tr["logits"][:, idx], [f[idx] for f in tr["features"]], tr["labels"][idx],
                     NlcTrainConfig(seed=0, learning_rate=2e-3))
print(f"zero-shot log-avg     {accuracy(log_avg(te['logits']), y):.3f}")
print(f"4-shot controller     {np.mean(nlc_predict(model, te['logits'], te['features']) == y):.3f}")
