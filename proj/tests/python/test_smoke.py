import json
import subprocess

import numpy as np
import pytest

import seld_kit as sk


def test_render_and_features():
    spec = sk.random_scene("s0", "indoor", seed=3, duration_s=3.0)
    audio, rate, labels = sk.render_scene(spec)
    assert audio.shape == (8, 3 * 48000)
    assert rate == 48000
    assert len(labels) == 3
    spectral, spatial = sk.block_features(audio[:, :48000])
    assert spectral.shape == (99, 40)
    assert spatial.shape == (22, 41)
    assert np.isfinite(spectral).all() and np.isfinite(spatial).all()


def test_magnitude_difference_identities():
    rng = np.random.default_rng(0)
    back = rng.normal(0, 0.1, size=(2, 48000)).astype(np.float32)
    same = np.concatenate([back, back])
    assert np.all(sk.magnitude_difference(same) == 0.0)
    scaled = np.concatenate([np.e * back, back])
    assert np.abs(sk.magnitude_difference(scaled) - 1.0).max() < 1e-5


def test_gcc_sign_and_window():
    rng = np.random.default_rng(1)
    n = 384
    spectrum = np.zeros(n // 2 + 1, complex)
    spectrum[1:150] = rng.normal(size=149) + 1j * rng.normal(size=149)
    x = np.fft.irfft(spectrum, n)
    y = sk.fractional_delay(x, 1.0)
    values, peak = sk.gcc(x, y)
    assert len(values) == 11
    assert peak == 5
    _, back = sk.gcc(y, x)
    assert back == -5


def test_wav_round_trip(tmp_path):
    audio = np.linspace(-0.5, 0.5, 8 * 4800, dtype=np.float32).reshape(8, 4800)
    sk.write_wav(tmp_path / "a.wav", audio, 48000)
    back, rate = sk.read_wav(str(tmp_path / "a.wav"))
    assert rate == 48000
    np.testing.assert_array_equal(back, audio)


def test_models_and_gradients():
    assert sk.parameter_count("stage1") == 417890
    for name, err in sk.gradient_check(seed=2):
        assert err < 1e-4, name


def test_training_helpers():
    ids = [0] * 7 + [1] * 2 + [3]
    idx = sk.oversample_balance(ids, 4)
    counts = np.bincount([ids[i] for i in idx])
    assert counts[0] == counts[1] == counts[3] == 7
    assert set(idx) == set(range(len(ids)))
    rows = sk.fold_stats([5] * 4, [(True, False, False), (True, True, False), (False, False, True), (False, False, False)])
    assert rows[5]["total"] == 4
    assert rows[5]["front_and_back"] == 1
    assert rows[5]["speech_any"] == 2
    assert sk.f1_score(2, 1, 1, 6) == pytest.approx((2 / 3, 2 / 3, 2 / 3))


def test_config_hash_and_errors():
    cfg = sk.default_config()
    h = sk.config_hash(cfg)
    cfg["threads"] = 4
    cfg["data_root"] = "/elsewhere"
    assert sk.config_hash(cfg) == h
    cfg["seed"] = cfg["seed"] + 1
    assert sk.config_hash(cfg) != h
    assert sk.fnv1a_hex(b"foobar") == "85944171f73967e8"
    with pytest.raises(sk.VersionError):
        sk.config_hash({"version": 2})
    with pytest.raises(sk.ConfigError):
        sk.config_hash({"no_such_key": 1})


def test_predictor_on_trained_checkpoints(tmp_path, kit_binary):
    if kit_binary is None:
        pytest.skip("seld_kit binary not available")
    cfg = sk.default_config()
    for stage in ("stage1", "stage2", "flat"):
        cfg["models"][stage] = {"conv_filters": [2], "lstm_units": [2]}
        cfg["training"][stage].update(max_epochs=1, batch_size=4)
    config = tmp_path / "config.json"
    config.write_text(json.dumps(cfg))
    data, out = tmp_path / "data", tmp_path / "out"
    common = ["--config", str(config), "--data", str(data), "--out", str(out)]
    subprocess.run([kit_binary, "synth", "--config", str(config), "--out", str(data), "--scenes", "6", "--duration", "4"],
                   check=True, capture_output=True)
    subprocess.run([kit_binary, "train", "--stage", "all", *common], check=True, capture_output=True)

    info = sk.checkpoint_info(out / "stage1.ckpt")
    assert info["metadata"]["stage"] == "stage1"
    assert info["parameters"] > 0

    audio, rate, _ = sk.render_scene(sk.random_scene("clip", "outdoor", seed=9, duration_s=3.0))
    rows = sk.Predictor(str(out)).predict(audio, rate, "clip")
    assert [r["second"] for r in rows] == [0, 1, 2]
    for r in rows:
        assert (r["p_front"] is not None) == (r["p_speech"] >= 0.5)
    flat = sk.Predictor(str(out), flat=True).predict(audio, rate, "clip")
    assert all(r["p_front"] is not None for r in flat)
    with pytest.raises(sk.SeldError):
        sk.Predictor(str(tmp_path / "missing"))
