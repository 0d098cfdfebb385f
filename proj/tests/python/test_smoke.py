import numpy as np
import pytest

import lgrnet

TINY = """
input_size = 16
channel_plan = 4,8
inject_after_block = 2
image_size = 16
num_stacks = 1
clustering_depth = 1
train_count = 8
val_count = 4
test_count = 0
epochs = 2
batch_size = 4
"""


def test_experiment_round_trips_through_text():
    exp = lgrnet.Experiment(TINY)
    again = lgrnet.Experiment(exp.to_text())
    assert again.to_text() == exp.to_text()


def test_bad_option_raises_config_error_and_keeps_state():
    exp = lgrnet.Experiment(TINY)
    before = exp.to_text()
    with pytest.raises(lgrnet.ConfigError):
        exp.set("no_such_key", 1)
    with pytest.raises(ValueError):
        exp.set("num_stacks", "many")
    assert exp.to_text() == before


def test_generate_split_is_deterministic():
    exp = lgrnet.Experiment(TINY)
    a = lgrnet.generate_split(exp, "train")
    b = lgrnet.generate_split(exp, "train")
    assert len(a) == 8
    assert a.images().shape == (8, 16, 16, 3)
    np.testing.assert_array_equal(a.images(), b.images())
    assert a.landmarks().shape == (8, 8, 3)
    assert a.annotation(0)["landmarks"][0]["name"] == "L.Collar"


def test_decode_picks_cell_centres():
    heat = np.zeros((4, 4, 2))
    heat[1, 2, 0] = 1.0
    heat[3, 0, 1] = 1.0
    np.testing.assert_allclose(lgrnet.decode_landmarks(heat), [[0.625, 0.375], [0.125, 0.875]])


def test_decode_rejects_wrong_rank():
    with pytest.raises(lgrnet.DimensionError):
        lgrnet.decode_landmarks(np.zeros((4, 4)))


def test_model_predict_shapes_and_checkpoint_round_trip(tmp_path):
    exp = lgrnet.Experiment(TINY)
    model = lgrnet.Model(exp, seed=3)
    images = lgrnet.generate_split(exp, "val").images()
    heat = model.predict(images)
    assert heat.shape == (4, 4, 4, 8)
    assert model.predict_landmarks(images).shape == (4, 8, 2)
    path = str(tmp_path / "m.lgrc")
    model.save(path)
    loaded = lgrnet.Model.load(path)
    assert loaded.landmark_names == model.landmark_names
    # Saved parameters are stored at single precision.
    np.testing.assert_allclose(loaded.predict(images), heat, atol=1e-4)


def test_train_and_evaluate(tmp_path):
    exp = lgrnet.Experiment(TINY)
    train_set = lgrnet.generate_split(exp, "train")
    val_set = lgrnet.generate_split(exp, "val")
    epochs = []
    model, summary = lgrnet.train(exp, train_set, val_set, metrics_path=str(tmp_path / "metrics.csv"),
                                  on_epoch=epochs.append)
    assert [e["epoch"] for e in epochs] == [1, 2]
    assert 1 <= summary["best_epoch"] <= 2
    report = lgrnet.evaluate(model, val_set)
    assert report["samples"] == 4
    # The returned model holds the best parameters rounded to checkpoint precision.
    assert report["average"] == pytest.approx(summary["best_val_ne"], abs=1e-6)
    assert (tmp_path / "metrics.csv").exists()


def test_gradient_suite_single_op():
    assert "node_to_map" in lgrnet.gradient_suite_ops()
    cases = lgrnet.gradient_suite([1], ["node_to_map"])
    assert len(cases) == 1 and cases[0]["worst"] <= 1e-4
    with pytest.raises(lgrnet.ArgumentError):
        lgrnet.gradient_suite([1], ["nope"])
