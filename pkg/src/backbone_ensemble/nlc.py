"""Neural Logit Controller.

A one-hidden-layer MLP reads the concatenated backbone features of an
example and emits one positive temperature per backbone. The ensemble
logits are the temperature-weighted sum of the backbone logits, and the
whole controller is trained with cross-entropy on that sum.
"""
from __future__ import annotations

import base64
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ._nn import INV_SOFTPLUS_ONE, cross_entropy, sigmoid, softplus
from ._optim import Adam
from .errors import (
    DimMismatchOnLoad,
    EmptySplit,
    IoFailure,
    NonFiniteLoss,
    SchemaViolation,
    ShapeMismatch,
)
from .static import as_stack

PARAM_NAMES = ("W1", "b1", "W2", "b2")
T_FLOOR = 1e-12


@dataclass
class NlcModel:
    W1: np.ndarray  # hidden x input
    b1: np.ndarray
    W2: np.ndarray  # backbones x hidden
    b2: np.ndarray
    feature_dims: list
    names: list = field(default_factory=list)
    normalize: bool = True
    positivity: str = "softplus"  # or "linear"

    @property
    def input_dim(self) -> int:
        return self.W1.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.W1.shape[0]

    @property
    def output_dim(self) -> int:
        return self.W2.shape[0]

    def params(self) -> dict:
        return {k: getattr(self, k) for k in PARAM_NAMES}

    def replace_params(self, params) -> "NlcModel":
        return NlcModel(**{**self._meta(), **{k: np.array(v) for k, v in params.items()}})

    def _meta(self):
        return {"feature_dims": list(self.feature_dims), "names": list(self.names),
                "normalize": self.normalize, "positivity": self.positivity,
                **self.params()}


def _round32(a):
    return np.asarray(a, dtype=np.float32).astype(np.float64)


def nlc_init(input_dim, hidden_dim=128, output_dim=1, seed=0, *, feature_dims=None,
             names=None, normalize=True, positivity="softplus", w2_std=0.0) -> NlcModel:
    """Fan-in scaled ReLU init with a zero (or tiny random) output layer.

    ``b2`` is the inverse softplus of 1. With the default ``w2_std=0`` every
    temperature starts at 1 for every input, so the untrained controller
    predicts exactly like the plain logit sum. A positive ``w2_std`` draws
    the output weights from N(0, w2_std) instead.
    Parameters are rounded to float32 so saved models reload exactly.
    """
    if min(input_dim, hidden_dim, output_dim) < 1:
        raise ValueError("all dimensions must be >= 1")
    feature_dims = list(feature_dims) if feature_dims is not None else [input_dim]
    if sum(feature_dims) != input_dim:
        raise ShapeMismatch(f"feature_dims {feature_dims} do not sum to {input_dim}")
    rng = np.random.default_rng(seed)
    W1 = rng.normal(0.0, np.sqrt(2.0 / input_dim), size=(hidden_dim, input_dim))
    W2 = rng.normal(0.0, w2_std, size=(output_dim, hidden_dim)) if w2_std > 0 else np.zeros((output_dim, hidden_dim))
    b2 = np.full(output_dim, INV_SOFTPLUS_ONE if positivity == "softplus" else 1.0)
    return NlcModel(
        W1=_round32(W1), b1=np.zeros(hidden_dim), W2=_round32(W2), b2=_round32(b2),
        feature_dims=feature_dims,
        names=list(names) if names is not None else [str(i) for i in range(output_dim)],
        normalize=normalize, positivity=positivity,
    )


def prepare_features(model: NlcModel, features) -> np.ndarray:
    """Concatenate per-backbone features and L2-normalize each block if enabled."""
    if isinstance(features, np.ndarray):
        x = features.astype(np.float64, copy=False)
    else:
        x = np.concatenate([np.asarray(f, dtype=np.float64) for f in features], axis=1)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != model.input_dim:
        raise ShapeMismatch(f"features have width {x.shape[1]}, model expects {model.input_dim}")
    if model.normalize:
        blocks = np.split(x, np.cumsum(model.feature_dims)[:-1], axis=1)
        out = []
        for blk in blocks:
            norm = np.linalg.norm(blk, axis=1, keepdims=True)
            out.append(blk / np.where(norm > 0, norm, 1.0))
        x = np.concatenate(out, axis=1)
    return x


def _forward(model, x):
    pre = x @ model.W1.T + model.b1
    h = np.maximum(pre, 0.0)
    a = h @ model.W2.T + model.b2
    # softplus underflows to 0 for very negative inputs
    t = np.maximum(softplus(a), T_FLOOR) if model.positivity == "softplus" else a
    return pre, h, a, t


def nlc_forward(model: NlcModel, features) -> np.ndarray:
    """Per-example temperatures, shape (N, B)."""
    return _forward(model, prepare_features(model, features))[3]


def nlc_combine(stack, temps) -> np.ndarray:
    """``z*_i = sum_b t_ib z^b_i``."""
    z = as_stack(stack)
    t = np.asarray(temps, dtype=np.float64)
    if t.shape != (z.shape[1], z.shape[0]):
        raise ShapeMismatch(f"temperatures {t.shape} do not match stack (N={z.shape[1]}, B={z.shape[0]})")
    return np.einsum("nb,bnc->nc", t, z)


def nlc_logits(model: NlcModel, stack, features) -> np.ndarray:
    return nlc_combine(stack, nlc_forward(model, features))


def nlc_predict(model: NlcModel, stack, features) -> np.ndarray:
    return np.argmax(nlc_logits(model, stack, features), axis=1)


def nlc_loss_grad(model: NlcModel, stack_batch, features_batch, labels_batch,
                  weight_decay=0.0, coupled=False):
    """Mean cross-entropy of the combined logits and exact parameter gradients.

    Weight decay only enters here when ``coupled``; decoupled decay is applied
    by the optimizer and is not part of the reported loss.
    """
    z = as_stack(stack_batch)
    labels = np.asarray(labels_batch)
    x = prepare_features(model, features_batch)
    if x.shape[0] != z.shape[1] or labels.shape != (z.shape[1],) or z.shape[0] != model.output_dim:
        raise ShapeMismatch("stack, features and labels disagree on batch size or backbone count")
    pre, h, a, t = _forward(model, x)
    loss, g = cross_entropy(np.einsum("nb,bnc->nc", t, z), labels)
    if not np.isfinite(loss):
        raise NonFiniteLoss("non-finite NLC loss")
    dt = np.einsum("nc,bnc->nb", g, z)
    da = dt * sigmoid(a) if model.positivity == "softplus" else dt
    dh = da @ model.W2
    dpre = dh * (pre > 0)
    grads = {"W1": dpre.T @ x, "b1": dpre.sum(axis=0), "W2": da.T @ h, "b2": da.sum(axis=0)}
    if coupled and weight_decay:
        for k, p in model.params().items():
            loss += 0.5 * weight_decay * float(np.sum(p * p))
            grads[k] = grads[k] + weight_decay * p
    return loss, grads


# ---------------------------------------------------------------------------
# training


@dataclass
class NlcTrainConfig:
    learning_rate: float = 2e-4
    weight_decay: float = 0.01
    decoupled_decay: bool = True
    epochs: int = 200
    batch_size: int = 256
    holdout_fraction: float = 0.1
    patience: int = 20
    hidden_dim: int = 128
    normalize: bool = True
    positivity: str = "softplus"
    w2_init_std: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.holdout_fraction < 1.0:
            raise ValueError("holdout_fraction must be in (0, 1)")
        if min(self.epochs, self.batch_size, self.patience, self.hidden_dim) < 1:
            raise ValueError("epochs, batch_size, patience and hidden_dim must be >= 1")
        if not self.learning_rate > 0 or self.weight_decay < 0:
            raise ValueError("learning_rate must be > 0 and weight_decay >= 0")
        if self.positivity not in ("softplus", "linear"):
            raise ValueError("positivity must be 'softplus' or 'linear'")


@dataclass
class NlcHistory:
    train_loss: list = field(default_factory=list)
    holdout_accuracy: list = field(default_factory=list)
    best_epoch: int = 0  # 0 is the untrained controller

    def to_dict(self):
        return asdict(self)


def train_nlc(stack, features, labels, cfg: NlcTrainConfig | None = None, names=None):
    """Train a controller on in-memory arrays; returns ``(model, history)``.

    The examples are split into fit and holdout sets (stratified, seeded).
    Training early-stops on holdout accuracy and returns the best checkpoint.
    When every class is a singleton the holdout is empty and the fit set is
    used for checkpoint selection instead.
    """
    from .fewshot import holdout_split

    cfg = cfg or NlcTrainConfig()
    z = as_stack(stack)
    labels = np.asarray(labels)
    n_b, n, _ = z.shape
    if n == 0:
        raise EmptySplit("no training examples")
    feats = [np.asarray(f, dtype=np.float64) for f in features]
    dims = [f.shape[1] for f in feats]
    model = nlc_init(sum(dims), cfg.hidden_dim, n_b, cfg.seed, feature_dims=dims, names=names,
                     normalize=cfg.normalize, positivity=cfg.positivity, w2_std=cfg.w2_init_std)
    x = prepare_features(model, feats)
    # features are normalized once up front
    model_raw = NlcModel(**{**model._meta(), "normalize": False})

    fit_idx, hold_idx = holdout_split(np.arange(n), labels, cfg.holdout_fraction, cfg.seed)
    sel_idx = hold_idx if len(hold_idx) else fit_idx
    z_sel, x_sel, y_sel = z[:, sel_idx], x[sel_idx], labels[sel_idx]

    def sel_accuracy(m):
        return float(np.mean(nlc_predict(m, z_sel, x_sel) == y_sel))

    params = {k: v.copy() for k, v in model_raw.params().items()}
    opt = Adam(params, lr=cfg.learning_rate,
               weight_decay=cfg.weight_decay, decoupled=cfg.decoupled_decay)
    rng = np.random.default_rng(cfg.seed)
    history = NlcHistory()
    best_params = {k: v.copy() for k, v in params.items()}
    best_acc = sel_accuracy(model_raw)
    stale = 0
    for epoch in range(1, cfg.epochs + 1):
        order = fit_idx[rng.permutation(len(fit_idx))]
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            current = model_raw.replace_params(params)
            loss, grads = nlc_loss_grad(current, z[:, idx], x[idx], labels[idx],
                                        cfg.weight_decay, coupled=not cfg.decoupled_decay)
            opt.step(grads)
            total += loss * len(idx)
        acc = sel_accuracy(model_raw.replace_params(params))
        history.train_loss.append(total / len(order))
        history.holdout_accuracy.append(acc)
        if acc > best_acc:
            best_acc, stale, history.best_epoch = acc, 0, epoch
            best_params = {k: v.copy() for k, v in params.items()}
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    trained = model.replace_params({k: _round32(v) for k, v in best_params.items()})
    return trained, history


def nlc_train(bundle, train_split="train", cfg: NlcTrainConfig | None = None, indices=None):
    """Train on a bundle split, optionally restricted to ``indices`` (e.g. an n-shot sample)."""
    from .errors import MissingFeatures

    if not bundle.has_features:
        raise MissingFeatures("every backbone needs features to train the controller")
    z = bundle.load_logits(train_split)
    feats = bundle.load_features(train_split)
    y = bundle.load_labels(train_split)
    if indices is not None:
        indices = np.asarray(indices)
        z, feats, y = z[:, indices], [f[indices] for f in feats], y[indices]
    if len(y) == 0:
        raise EmptySplit(f"split {train_split!r} is empty")
    return train_nlc(z, feats, y, cfg, names=bundle.names)


# ---------------------------------------------------------------------------
# persistence


def _encode(a):
    a32 = np.ascontiguousarray(a, dtype="<f4")
    return {"shape": list(a32.shape), "data": base64.b64encode(a32.tobytes()).decode("ascii")}


def _decode(blob, key):
    try:
        shape = tuple(int(s) for s in blob["shape"])
        raw = base64.b64decode(blob["data"], validate=True)
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaViolation(f"parameter {key}: {exc}") from exc
    if len(raw) != 4 * int(np.prod(shape)):
        raise SchemaViolation(f"parameter {key}: {len(raw)} bytes for shape {shape}")
    return np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float64)


def nlc_to_dict(model: NlcModel, config=None) -> dict:
    doc = {
        "type": "nlc",
        "backbones": list(model.names),
        "feature_dims": [int(d) for d in model.feature_dims],
        "input_dim": model.input_dim,
        "hidden_dim": model.hidden_dim,
        "output_dim": model.output_dim,
        "normalize": bool(model.normalize),
        "positivity": model.positivity,
        "params": {k: _encode(v) for k, v in model.params().items()},
    }
    if config is not None:
        doc["config"] = asdict(config) if hasattr(config, "__dataclass_fields__") else dict(config)
    return doc


def nlc_from_dict(doc, expected_backbones=None) -> NlcModel:
    try:
        if doc["type"] != "nlc":
            raise SchemaViolation(f"model type {doc['type']!r} is not 'nlc'")
        names = list(doc["backbones"])
        dims = [int(d) for d in doc["feature_dims"]]
        input_dim, hidden_dim, output_dim = (int(doc[k]) for k in ("input_dim", "hidden_dim", "output_dim"))
        params = {k: _decode(doc["params"][k], k) for k in PARAM_NAMES}
        normalize = bool(doc["normalize"])
        positivity = doc.get("positivity", "softplus")
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, SchemaViolation):
            raise
        raise SchemaViolation(f"malformed NLC model: {exc!r}") from exc
    expected = {"W1": (hidden_dim, input_dim), "b1": (hidden_dim,),
                "W2": (output_dim, hidden_dim), "b2": (output_dim,)}
    for k, shape in expected.items():
        if params[k].shape != shape:
            raise DimMismatchOnLoad(f"{k} has shape {params[k].shape}, expected {shape}")
    if sum(dims) != input_dim or len(names) != output_dim:
        raise DimMismatchOnLoad("feature_dims/backbones disagree with parameter shapes")
    if expected_backbones is not None and list(expected_backbones) != names:
        raise DimMismatchOnLoad(f"model backbones {names} != bundle order {list(expected_backbones)}")
    return NlcModel(**params, feature_dims=dims, names=names, normalize=normalize,
                    positivity=positivity)


def nlc_save(model: NlcModel, path, config=None) -> None:
    try:
        Path(path).write_text(json.dumps(nlc_to_dict(model, config), indent=1) + "\n")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def nlc_load(path, expected_backbones=None) -> NlcModel:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"{path}: invalid JSON ({exc})") from exc
    return nlc_from_dict(doc, expected_backbones)
