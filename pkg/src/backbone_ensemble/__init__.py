"""Combine frozen vision backbones from their exported logits and features."""

from .calibration import (
    TemperatureVector,
    apply_temperature,
    calibrate_bundle,
    calibrated_confidence,
    calibrated_log_avg,
    fit_temperature,
    fit_temperatures,
    nll,
)
from .cascade import CascadeConfig, CascadeTrace, cascade_cost, cascade_run, order_backbones
from .fewshot import (
    LinearProbe,
    ProbeConfig,
    holdout_split,
    probe_fit,
    probe_logits,
    sample_shots,
)
from .io import DatasetBundle, load_manifest, load_npy, save_npy, validate_bundle
from .learned import GacConfig, SlConfig, combine_fixed, gac_fit, sl_fit
from .metrics import (
    OverlapTable,
    accuracy,
    correctness,
    diversity,
    oracle_accuracy,
    overlap_table,
    pearson,
    relative_improvement,
    top1,
)
from .nlc import (
    NlcModel,
    NlcTrainConfig,
    nlc_combine,
    nlc_forward,
    nlc_init,
    nlc_load,
    nlc_loss_grad,
    nlc_predict,
    nlc_save,
    nlc_train,
    train_nlc,
)
from .static import (
    confidence_select,
    log_avg,
    shannon_entropy,
    softmax,
    vote_top1,
    vote_top3,
)
from .synth import SynthConfig, generate_arrays, synth_generate

__version__ = "0.1.0"
