"""Python bindings for the cprloop C++ library."""

import json

from ._cprloop import (
    Error,
    calibrate,
    classify_force,
    classify_rate,
    cycle_drift,
    decode_packet,
    encode_feedback,
    encode_packet,
    fit_pca,
    force_band,
    haptic_table,
    hysteresis_ratio,
    simulate,
    snr_from_ratio,
)
from ._cprloop import replay_report as _replay_report

__version__ = "0.1.0"


def replay_report(log_path, model_dir, subject="s01", weight_kg=80.0):
    """Replays a session log through the closed loop and returns the session report as a dict."""
    return json.loads(_replay_report(str(log_path), str(model_dir), subject, weight_kg))


__all__ = [
    "Error",
    "calibrate",
    "classify_force",
    "classify_rate",
    "cycle_drift",
    "decode_packet",
    "encode_feedback",
    "encode_packet",
    "fit_pca",
    "force_band",
    "haptic_table",
    "hysteresis_ratio",
    "replay_report",
    "simulate",
    "snr_from_ratio",
]
