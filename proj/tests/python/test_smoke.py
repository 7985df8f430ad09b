import math

import numpy as np
import pytest

import ogen


def small_set(seed=0):
    cfg = ogen.SynthConfig()
    cfg.num_classes = 12
    cfg.dim = 16
    cfg.per_class = 20
    cfg.groups = 3
    cfg.seed = seed
    return ogen.make_synthetic(cfg)


def test_synthetic_data_round_trips_through_a_file(tmp_path):
    s = small_set()
    assert s.num_classes == 12
    assert s.class_embeddings.shape == (16, 12)
    assert sorted(s.base_classes + s.new_classes) == list(range(12))
    np.testing.assert_allclose(np.linalg.norm(s.class_embeddings, axis=0), 1.0, atol=1e-6)
    path = tmp_path / "d.oef"
    ogen.save_embeddings(s, path)
    assert ogen.load_embeddings(path) == s


def test_bad_file_raises_format_error(tmp_path):
    path = tmp_path / "junk.oef"
    path.write_bytes(b"nope")
    with pytest.raises(ogen.FormatError):
        ogen.load_embeddings(path)
    with pytest.raises(ValueError):
        ogen.load_embeddings(tmp_path / "missing.oef")


def test_knn_matches_numpy():
    rng = np.random.default_rng(0)
    q = rng.normal(size=8)
    c = rng.normal(size=(8, 30))
    c /= np.linalg.norm(c, axis=0)
    scores = c.T @ q / np.linalg.norm(q)
    want = sorted(range(30), key=lambda j: (-scores[j], j))[:4]
    assert ogen.retrieve_knn(q, c, 4) == want
    with pytest.raises(ValueError):
        ogen.retrieve_knn(q, c, 0)


def test_cosine_softmax_is_normalized():
    rng = np.random.default_rng(1)
    w = rng.normal(size=(8, 5))
    w /= np.linalg.norm(w, axis=0)
    p = ogen.class_probabilities(rng.normal(size=8), w, 0.05)
    assert p.shape == (5,)
    assert abs(p.sum() - 1.0) < 1e-9


def test_generator_shapes_and_zero_residual_at_init():
    p = ogen.init_params(4, 16, 32, seed=0)
    rng = np.random.default_rng(2)
    w = rng.normal(size=16)
    nb = rng.normal(size=(16, 3))
    sup = rng.normal(size=(16, 3))
    joint = ogen.extrapolate_jointly(w, nb, sup, p)
    assert joint.shape == (16,)
    # W_O starts at zero, so the joint scheme ignores the neighbors.
    np.testing.assert_allclose(joint, ogen.project_directly(w, p), atol=1e-12)
    assert ogen.extrapolate_per_class(w, nb, sup, p).shape == (16, 3)


def test_schedule_and_harmonic_mean():
    assert ogen.window_size(0, 200) == 2
    assert ogen.window_size(200, 200) == 9
    assert math.isclose(ogen.harmonic_mean(83.47, 69.54), 75.87, abs_tol=0.01)


def test_training_is_deterministic_and_reports_every_epoch():
    s = small_set()
    cfg = ogen.TrainConfig()
    cfg.epochs = 4
    cfg.batch_size = 8
    cfg.k = 2
    cfg.shots = 8
    a = ogen.train(s, cfg)
    b = ogen.train(s, cfg)
    assert [m.epoch for m in a["metrics"]] == [1, 2, 3, 4]
    assert [m.harmonic for m in a["metrics"]] == [m.harmonic for m in b["metrics"]]
    assert a["embeddings"].shape == (16, len(s.base_classes))
    acc = ogen.evaluate(a["embeddings"], s, cfg.tau, cfg.shots)
    assert acc.harmonic == pytest.approx(a["metrics"][-1].harmonic)


def test_invalid_config_is_rejected():
    cfg = ogen.TrainConfig()
    cfg.scheme = "none"
    with pytest.raises(ValueError):
        cfg.validate()
    with pytest.raises(ValueError):
        cfg.scheme = "sideways"
