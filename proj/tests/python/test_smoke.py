import itertools
import json
import os
import pathlib

import numpy as np
import pytest

import cprloop

DATA = pathlib.Path(os.environ.get("CPRLOOP_TEST_DATA", pathlib.Path(__file__).parents[1] / "data"))


def test_snr_and_band():
    assert cprloop.snr_from_ratio(8.8) == pytest.approx(18.89, abs=0.02)
    assert cprloop.force_band(100.0) == (490.0, 588.0)
    assert cprloop.classify_force(490.0, 100.0) == "correct"
    assert cprloop.classify_force(600.0, 100.0) == "too_strong"
    assert [cprloop.classify_rate(t) for t in (499, 500, 600, 601)] == ["too_fast", "correct", "correct", "too_slow"]


def test_haptic_table_matches_golden():
    assert "\n".join(cprloop.haptic_table()) + "\n" == (DATA / "haptic_table.golden").read_text()
    p = cprloop.encode_feedback("too_fast", "too_weak", "finger_release")
    assert p == {"pulse_count": 3, "pwm": 128, "units": ["lower", "center"], "alternating": True}


def test_packet_round_trip_and_golden():
    rng = np.random.default_rng(1)
    palm = rng.integers(0, 8192, size=(13, 14), dtype=np.uint16)
    dorsum = rng.integers(0, 8192, size=(13, 14), dtype=np.uint16)
    b = cprloop.encode_packet(7, 123456, palm, dorsum)
    assert len(b) == 748
    d = cprloop.decode_packet(b)
    assert d["seq"] == 7 and d["t_us"] == 123456
    np.testing.assert_array_equal(d["palm"], palm)
    np.testing.assert_array_equal(d["dorsum"], dorsum)

    zero = np.zeros((13, 14), dtype=np.uint16)
    assert cprloop.encode_packet(0, 0, zero, zero) == (DATA / "zero_packet.golden.bin").read_bytes()


def test_errors_surface_as_exceptions():
    golden = (DATA / "zero_packet.golden.bin").read_bytes()
    with pytest.raises(cprloop.Error, match="Truncated"):
        cprloop.decode_packet(golden[:700])
    with pytest.raises(cprloop.Error, match="BadMagic"):
        cprloop.decode_packet(b"X" + golden[1:])
    with pytest.raises(cprloop.Error, match="DimensionMismatch"):
        cprloop.encode_packet(0, 0, np.zeros((3, 3)), np.zeros((3, 3)))
    with pytest.raises(cprloop.Error, match="NonPositiveWeight"):
        cprloop.force_band(0.0)


def test_pca_and_characterization():
    x = np.random.default_rng(2).normal(size=(50, 6)) * np.array([10, 5, 1, 0.1, 0.1, 0.1])
    p = cprloop.fit_pca(x, 0.95)
    ev = np.sort(np.linalg.eigvalsh(np.cov(x, rowvar=False)))[::-1]
    cum = np.cumsum(ev) / ev.sum()
    k = int(np.argmax(cum >= 0.95)) + 1
    assert p["k"] == k
    assert p["retained_ratio"] == pytest.approx(cum[k - 1], abs=1e-9)

    f = np.linspace(0, 2, 9)
    assert cprloop.hysteresis_ratio(np.c_[f, f], np.c_[f[::-1], f[::-1] + 0.25]) == pytest.approx(25.0, abs=1e-9)
    assert cprloop.cycle_drift([100.0] * 30) == 0.0


def test_simulate_calibrate_replay(tmp_path):
    cal, session, models = tmp_path / "cal.jsonl", tmp_path / "session.jsonl", tmp_path / "models"
    cprloop.simulate(json.dumps({"protocol": "calibration"}), str(cal), seed=3)
    frames, crests = cprloop.simulate(json.dumps({"protocol": "training", "count": 30}), str(session), seed=4)
    assert crests == 30 and frames > 300
    force_n, pose_n = cprloop.calibrate(str(cal), str(models))
    assert pose_n == 80 and force_n > 0
    report = cprloop.replay_report(session, models)
    assert report["verdicts"] == 30
    assert all(v >= 0.95 for v in report["fraction_correct"].values())
    with pytest.raises(cprloop.Error, match="ModelMissing"):
        cprloop.replay_report(session, tmp_path / "nowhere")


def test_every_joint_state_encodes():
    rates, forces, poses = ("too_slow", "correct", "too_fast"), ("too_weak", "correct", "too_strong"), (
        "correct", "left_skewed", "right_skewed", "finger_release")
    seen = {json.dumps(cprloop.encode_feedback(*s), sort_keys=True) for s in itertools.product(rates, forces, poses)}
    assert len(seen) == 36
