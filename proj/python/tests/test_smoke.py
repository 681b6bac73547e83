import json

import numpy as np
import pytest

import cseg


def test_config_names():
    c = cseg.parse_config_name("Unet96X256X4-SE")
    assert (c.input_size, c.max_filters, c.depth, c.use_se) == (96, 256, 4, True)
    assert c.encoder_widths() == [16, 32, 64, 128]
    assert cseg.parse_config_text(c.to_text()) == c
    assert len(cseg.results_table_names()) == 10
    with pytest.raises(cseg.ConfigError):
        cseg.parse_config_name("Unet50X1024X4")


def test_model_predict_shape_and_range():
    m = cseg.Model("Unet16X16X2", seed=3)
    assert m.param_count() > 0
    x = np.random.default_rng(0).normal(size=(2, 3, 16, 16)).astype(np.float32)
    y = m.predict(x)
    assert y.shape == (2, 1, 16, 16)
    assert np.all((y > 0) & (y < 1))
    np.testing.assert_array_equal(y, m.predict(x))
    with pytest.raises(cseg.ShapeError):
        m.predict(np.zeros((1, 3, 8, 8), np.float32))


def test_model_round_trip(tmp_path):
    m = cseg.Model("Unet16X32X2-SE", seed=1)
    path = tmp_path / "m.ckpt"
    m.save(path)
    back = cseg.load_model(path)
    assert back.config == m.config
    x = np.ones((1, 3, 16, 16), np.float32)
    np.testing.assert_array_equal(back.predict(x), m.predict(x))


def test_metrics():
    rng = np.random.default_rng(1)
    a = (rng.random((1, 1, 8, 8)) < 0.4).astype(np.float32)
    b = (rng.random((1, 1, 8, 8)) < 0.4).astype(np.float32)
    expected = 2 * (a * b).sum() / (a.sum() + b.sum())
    assert cseg.soft_dice(a, b, 0.0) == pytest.approx(expected, abs=1e-6)
    assert cseg.soft_dice(a, a, 1.0) == pytest.approx(1.0)
    np.testing.assert_array_equal(cseg.binarize(np.array([0.2, 0.5, 0.9], np.float32)), [0, 1, 1])
    assert cseg.pixel_accuracy(a, a) == 1.0


def test_rasterize_rectangle():
    m = cseg.rasterize([[[(1, 1), (4, 1), (4, 3), (1, 3)]]], 8, 8)
    assert m.shape == (1, 8, 8)
    assert m.sum() == 6
    assert m[0, 1:3, 1:4].all()


def test_end_to_end(tmp_path):
    manifest = cseg.synth(tmp_path / "data", 4, size=32, seed=3)
    config = tmp_path / "run.json"
    config.write_text(json.dumps({
        "model": {"name": "Unet16X16X2"},
        "train": {"epochs": 2, "batch_size": 4, "seed": 9},
        "data": {"manifest": str(manifest)},
        "output_dir": str(tmp_path / "out"),
        "reference_mode": True,
    }))
    out = cseg.train(config)
    assert [r["epoch"] for r in out["history"]] == [1, 2]
    report = cseg.evaluate(out["best_checkpoint"], manifest, "val", tmp_path / "eval")
    assert 0.0 <= report["soft_dice"] <= 1.0
    probs = cseg.predict(out["best_checkpoint"], tmp_path / "data" / "images" / "synth_0.png", tmp_path / "pred")
    assert probs.shape == (1, 32, 32)
    assert cseg.run_cli(["frobnicate"]) == 1


def test_gradcheck_layers():
    passed, table = cseg.gradcheck("layer")
    assert passed
    assert table.startswith("scope,check,group")
