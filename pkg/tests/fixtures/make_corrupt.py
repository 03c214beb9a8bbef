"""Regenerate the corrupt-manifest fixtures under ``corrupt/``.

Each case starts from the same tiny valid bundle and breaks one thing.
Run from this directory: ``python make_corrupt.py``.
"""
import json
import shutil
from pathlib import Path

import numpy as np
from numpy.lib import format as npformat

HERE = Path(__file__).parent / "corrupt"
ROWS = {"train": 6, "test": 4}


def write(path, arr):
    with open(path, "wb") as fh:
        npformat.write_array(fh, np.ascontiguousarray(arr), version=(1, 0))


def base(out):
    rng = np.random.default_rng(0)
    doc = {"name": out.name, "num_classes": 3, "splits": ["train", "test"], "labels": {}, "backbones": []}
    for split, n in ROWS.items():
        write(out / f"labels_{split}.npy", (np.arange(n) % 3).astype("<i8"))
        doc["labels"][split] = f"labels_{split}.npy"
    for name in ("a", "b"):
        entry = {"name": name, "gflops": 1.0, "feature_dim": 2, "logits": {}, "features": {}}
        for split, n in ROWS.items():
            for kind, width in (("logits", 3), ("features", 2)):
                fname = f"{name}_{kind}_{split}.npy"
                write(out / fname, rng.normal(size=(n, width)).astype("<f4"))
                entry[kind][split] = fname
        doc["backbones"].append(entry)
    return doc


def missing_file(out, doc):
    (out / "b_logits_test.npy").unlink()


def row_mismatch(out, doc):
    write(out / "b_logits_test.npy", np.zeros((3, 3), dtype="<f4"))


def label_out_of_range(out, doc):
    write(out / "labels_test.npy", np.array([0, 1, 2, 3], dtype="<i8"))


def wrong_class_count(out, doc):
    write(out / "a_logits_train.npy", np.zeros((6, 4), dtype="<f4"))


def wrong_feature_dim(out, doc):
    write(out / "b_features_train.npy", np.zeros((6, 5), dtype="<f4"))


def wrong_dtype(out, doc):
    write(out / "a_logits_test.npy", np.zeros((4, 3), dtype="<f8"))


CASES = [missing_file, row_mismatch, label_out_of_range, wrong_class_count, wrong_feature_dim, wrong_dtype]

if __name__ == "__main__":
    for case in CASES:
        out = HERE / case.__name__
        shutil.rmtree(out, ignore_errors=True)
        out.mkdir(parents=True)
        doc = base(out)
        case(out, doc)
        (out / "manifest.json").write_text(json.dumps(doc, indent=2) + "\n")
