import math

import numpy as np
import pytest

import eifnet


def test_kernel_and_constants():
    assert eifnet.kernel_k(0.0) == 1.0
    assert eifnet.kernel_k(0.25) == 0.75
    assert eifnet.kernel_k(-3.0) == 0.0
    assert eifnet.DEFAULT_BINS == 3
    assert eifnet.DEFAULT_WINDOW_US == 50000


def test_parse_format_round_trip():
    ev = eifnet.parse_events("30,1,0,1\n10,2,3,0\n", 4, 4)
    assert ev.dtype == np.int64
    assert ev.tolist() == [[10, 2, 3, -1], [30, 1, 0, 1]]
    again = eifnet.parse_events(eifnet.format_events(ev, 4, 4), 4, 4)
    assert np.array_equal(again, ev)
    with pytest.raises(eifnet.Error, match="line 1"):
        eifnet.parse_events("0,9,0,1\n", 4, 4)


def test_encode_single_event_at_bin_centre():
    ev = np.array([[25000, 1, 2, 1]])
    e_vt, a_cm = eifnet.encode(ev, 4, 4, t_end=50000)
    assert e_vt.shape == (3, 4, 4) and e_vt.dtype == np.float32
    expected = np.zeros((3, 4, 4), np.float32)
    expected[1, 2, 1] = 1.0
    assert np.array_equal(e_vt, expected)
    assert np.array_equal(a_cm, expected)


def test_encode_invariants_against_numpy():
    rng = np.random.default_rng(0)
    n, h, w, bins = 500, 6, 7, 4
    ev = np.stack([rng.integers(0, 10000, n), rng.integers(0, w, n), rng.integers(0, h, n),
                   rng.choice([-1, 1], n)], axis=1)
    e_vt, a_cm = eifnet.encode(ev, h, w, t_end=10000, window_us=10000, bins=bins)
    ts = (bins - 1) * ev[:, 0] / 10000.0
    ref_e = np.zeros((bins, h, w))
    ref_a = np.zeros((bins, h, w))
    for c in range(bins):
        k = np.maximum(0.0, 1.0 - np.abs(c - ts))
        np.add.at(ref_e[c], (ev[:, 2], ev[:, 1]), ev[:, 3] * k)
        np.add.at(ref_a[c], (ev[:, 2], ev[:, 1]), k)
    assert np.abs(e_vt - ref_e).max() < 1e-5
    assert np.abs(a_cm - ref_a).max() < 1e-5
    assert np.all(np.abs(e_vt) <= a_cm)
    flipped = ev.copy()
    flipped[:, 3] *= -1
    fe, fa = eifnet.encode(flipped, h, w, t_end=10000, window_us=10000, bins=bins)
    assert np.array_equal(fe, -e_vt) and np.array_equal(fa, a_cm)


def test_tensor_file_round_trip(tmp_path):
    a = np.arange(24, dtype=np.float32).reshape(2, 3, 4) - 7.5
    path = str(tmp_path / "t.eift")
    eifnet.write_tensor(path, a)
    assert open(path, "rb").read(4) == b"EIFT"
    assert np.array_equal(eifnet.read_tensor(path), a)


def test_synth_is_deterministic():
    a = eifnet.synth_scene(seed=4, height=32, width=32, objects=1)
    b = eifnet.synth_scene(seed=4, height=32, width=32, objects=1)
    assert np.array_equal(a["events"], b["events"])
    assert a["image"].shape == (3, 32, 32)
    assert a["labels"].shape == (32, 32)
    with pytest.raises(eifnet.Error):
        eifnet.synth_scene(height=60, width=64)


def test_config_json():
    cfg = eifnet.minimal_config()
    assert eifnet.validate_config(cfg) == cfg
    with pytest.raises(eifnet.Error):
        eifnet.validate_config('{"bogus": 1}')


def test_forward_and_train_on_minimal_config():
    cfg = eifnet.minimal_config()
    s = eifnet.synth_scene(seed=3, height=32, width=32, objects=1)
    out = eifnet.forward(s["image"], s["events"], 50000, config=cfg, labels=s["labels"])
    assert out["logits"].shape == (1, 2, 32, 32)
    assert np.isfinite(out["logits"]).all()
    assert 0.0 <= out["metrics"]["pa"] <= 1.0
    again = eifnet.forward(s["image"], s["events"], 50000, config=cfg)
    assert np.array_equal(again["logits"], out["logits"]) and "loss" not in again

    r = eifnet.train(s["image"], s["events"], 50000, s["labels"], config=cfg, steps=5, lr=0.05)
    assert len(r["losses"]) == 5 and not r["diverged"]
    assert math.isclose(r["losses"][0], out["loss"], rel_tol=1e-5)
    assert r["final_loss"] < r["losses"][0]


def test_gradcheck():
    assert "network" in eifnet.gradcheck_modules()
    r = eifnet.gradcheck("marm", 1)
    assert r["passed"] and r["max_error"] < eifnet.GRAD_TOLERANCE
