import numpy as np
import pytest

from tailgnn import autodiff as ad
from tailgnn import dataio, model, ontology, train
from tailgnn.errors import (
    BadMagic,
    EmptySplit,
    NonFiniteGradient,
    ShapeMismatch,
    TruncatedFile,
    VersionMismatch,
)
from tailgnn.model import ModelConfig
from tailgnn.train import (
    OptimizerState,
    TrainConfig,
    adam_step,
    class_weights,
    load_checkpoint,
    predict_probs,
    save_checkpoint,
    train_loop,
    weighted_bce,
)


def tiny_cfg(**kw):
    base = dict(k=2, conv_features=(4,), embed_dim=3, dilations=(1,),
                gnn_layers=1, gnn_features=4, use_spectral=False)
    base.update(kw)
    return ModelConfig(**base)


class TestClassWeights:
    def test_inverse_frequency(self):
        g = ontology.random_dag(4, seed=0)
        masks = [np.array([1, 1, 0, 0]), np.array([1, 1, 0, 0]),
                 np.array([1, 0, 0, 0]), np.array([1, 1, 1, 0])]
        recs = [dataio.ProteinRecord(f"p{i}", "ACD",
                                     ontology.LabelSet(m.astype(bool)))
                for i, m in enumerate(masks)]
        ds = dataio.Dataset(recs, g)
        w = class_weights(ds)
        # label 0: 4/4 positives -> (4-4)/4 = 0 -> clamps to 0.1
        # label 1: 3 positives -> 1/3; clamps to 0.33...
        # label 3: 0 positives -> 4/max(0,1) = 4
        assert w[0] == pytest.approx(0.1)
        assert w[1] == pytest.approx(1.0 / 3.0)
        assert w[2] == pytest.approx(3.0)
        assert w[3] == pytest.approx(4.0)

    def test_clamped_range(self):
        g = ontology.random_dag(3, seed=0)
        recs = [dataio.ProteinRecord(f"p{i}", "A",
                                     ontology.LabelSet(np.array([True, False, False])))
                for i in range(500)]
        w = class_weights(dataio.Dataset(recs, g))
        assert np.all((w >= 0.1) & (w <= 100.0))


class TestWeightedBCE:
    def test_matches_closed_form(self):
        rng = np.random.default_rng(0)
        p = rng.uniform(0.05, 0.95, (4, 6))
        t = (rng.random((4, 6)) > 0.5).astype(float)
        w = rng.uniform(0.5, 3.0, 6)
        loss = weighted_bce(ad.Tensor(p), t, w)
        ref = -np.mean(w * t * np.log(p) + (1 - t) * np.log(1 - p))
        assert float(loss.data) == pytest.approx(ref, rel=1e-12)

    def test_finite_at_saturated_probs(self):
        p = np.array([[0.0, 1.0]])
        t = np.array([[1.0, 0.0]])
        loss = weighted_bce(ad.Tensor(p), t, np.ones(2))
        assert np.isfinite(float(loss.data))

    def test_perfect_prediction_near_zero(self):
        p = np.array([[1.0 - 1e-9, 1e-9]])
        t = np.array([[1.0, 0.0]])
        loss = weighted_bce(ad.Tensor(p), t, np.ones(2))
        assert float(loss.data) < 1e-6

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            weighted_bce(ad.Tensor(np.full((2, 3), 0.5)), np.zeros((3, 2)),
                         np.ones(3))


class TestAdam:
    def test_matches_reference_recurrence(self):
        """Independent re-implementation of the Adam update, 20 steps."""
        cfg = TrainConfig(lr=0.01)
        rng = np.random.default_rng(1)
        params = {"w": rng.standard_normal(5)}
        mine = {"w": params["w"].copy()}
        state = OptimizerState.for_params(params)
        m = np.zeros(5)
        v = np.zeros(5)
        for t in range(1, 21):
            g = rng.standard_normal(5)
            adam_step(params, {"w": g.copy()}, state, cfg)
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            mh = m / (1 - 0.9 ** t)
            vh = v / (1 - 0.999 ** t)
            mine["w"] -= 0.01 * mh / (np.sqrt(vh) + 1e-8)
            assert np.abs(params["w"] - mine["w"]).max() <= 1e-15

    def test_lr_zero_is_identity(self):
        cfg = TrainConfig(lr=0.0)
        params = {"w": np.arange(4.0)}
        before = params["w"].copy()
        state = OptimizerState.for_params(params)
        adam_step(params, {"w": np.ones(4)}, state, cfg)
        assert np.array_equal(params["w"], before)

    def test_nonfinite_gradient_rejected(self):
        cfg = TrainConfig()
        params = {"w": np.zeros(2)}
        state = OptimizerState.for_params(params)
        with pytest.raises(NonFiniteGradient, match="w"):
            adam_step(params, {"w": np.array([1.0, np.nan])}, state, cfg)

    def test_first_step_is_lr_sized(self):
        # bias correction makes step one approximately lr * sign(g)
        cfg = TrainConfig(lr=0.05)
        params = {"w": np.zeros(3)}
        state = OptimizerState.for_params(params)
        adam_step(params, {"w": np.array([1.0, -2.0, 0.5])}, state, cfg)
        assert np.allclose(params["w"], [-0.05, 0.05, -0.05], atol=1e-6)


def _toy_data(n=24, n_nodes=8, seed=0):
    g = ontology.random_dag(n_nodes, seed=seed)
    ds = dataio.synthesize(g, n, seed=seed + 1)
    tr, va, te = dataio.split(ds, seed=seed + 2)
    return g, tr, va, te


class TestTrainLoop:
    def test_loss_decreases_and_history_well_formed(self):
        g, tr, va, _ = _toy_data()
        cfg = tiny_cfg()
        a = ontology.adjacency_matrix(g, cfg.adjacency_mode, cfg.self_loops)
        tcfg = TrainConfig(lr=0.01, max_epochs=8, patience=8, seed=0)
        params, hist = train_loop(cfg, tcfg, tr, va, a)
        assert 1 <= len(hist) <= 8
        assert hist[0]["epoch"] == 1
        assert hist[-1]["train_loss"] < hist[0]["train_loss"]
        assert set(hist[0]) == {"epoch", "train_loss", "val_f1"}

    def test_deterministic_given_seed(self):
        g, tr, va, _ = _toy_data(seed=3)
        cfg = tiny_cfg()
        a = ontology.adjacency_matrix(g, cfg.adjacency_mode, cfg.self_loops)
        tcfg = TrainConfig(lr=0.01, max_epochs=3, patience=3, seed=5)
        p1, h1 = train_loop(cfg, tcfg, tr, va, a)
        p2, h2 = train_loop(cfg, tcfg, tr, va, a)
        assert h1 == h2
        for n in p1:
            assert np.array_equal(p1[n], p2[n])

    def test_empty_split_rejected(self):
        g, tr, va, _ = _toy_data()
        cfg = tiny_cfg()
        a = ontology.adjacency_matrix(g, cfg.adjacency_mode, cfg.self_loops)
        empty = dataio.Dataset([], g)
        with pytest.raises(EmptySplit):
            train_loop(cfg, TrainConfig(), empty, va, a)
        with pytest.raises(EmptySplit):
            train_loop(cfg, TrainConfig(), tr, empty, a)

    def test_early_stopping_bounds_epochs(self):
        g, tr, va, _ = _toy_data(seed=4)
        cfg = tiny_cfg()
        a = ontology.adjacency_matrix(g, cfg.adjacency_mode, cfg.self_loops)
        # lr=0 never improves after epoch 1, so stops at 1 + patience
        tcfg = TrainConfig(lr=0.0, max_epochs=50, patience=2, seed=0)
        _, hist = train_loop(cfg, tcfg, tr, va, a)
        assert len(hist) == 3

    def test_patience_must_fit_budget(self):
        with pytest.raises(ValueError):
            TrainConfig(max_epochs=10, patience=11)


class TestPredict:
    def test_batch_size_invariance(self):
        """Padding is masked out, so batch composition cannot change output."""
        g, tr, va, te = _toy_data(seed=6)
        cfg = tiny_cfg()
        a = ontology.adjacency_matrix(g, cfg.adjacency_mode, cfg.self_loops)
        params = model.init_params(cfg, g.node_count, seed=0)
        p1 = predict_probs(params, cfg, te, a, batch_size=1)
        p2 = predict_probs(params, cfg, te, a, batch_size=4)
        p3 = predict_probs(params, cfg, te, a, batch_size=len(te.records))
        assert np.allclose(p1, p2, atol=1e-12)
        assert np.allclose(p1, p3, atol=1e-12)


class TestCheckpoint:
    def _save_some(self, tmp_path, **extra):
        cfg = tiny_cfg()
        tcfg = TrainConfig(seed=7)
        params = model.init_params(cfg, 8, seed=7)
        path = tmp_path / "model.tgnn"
        save_checkpoint(params, cfg, tcfg, path, n_labels=8, **extra)
        return params, cfg, tcfg, path

    def test_round_trip(self, tmp_path):
        params, cfg, tcfg, path = self._save_some(tmp_path)
        loaded, lcfg, ltcfg, meta = load_checkpoint(path)
        assert lcfg == cfg
        assert ltcfg == tcfg
        assert meta["n_labels"] == 8
        assert set(loaded) == set(params)
        for n in params:
            assert np.array_equal(loaded[n], params[n])

    def test_deterministic_bytes(self, tmp_path):
        cfg, tcfg = tiny_cfg(), TrainConfig()
        params = model.init_params(cfg, 8, seed=1)
        p1, p2 = tmp_path / "a.tgnn", tmp_path / "b.tgnn"
        save_checkpoint(params, cfg, tcfg, p1, n_labels=8)
        save_checkpoint(params, cfg, tcfg, p2, n_labels=8)
        assert p1.read_bytes() == p2.read_bytes()

    def test_extra_metadata_preserved(self, tmp_path):
        _, _, _, path = self._save_some(tmp_path, split_seed=1234,
                                        node_ids=["a", "b"])
        _, _, _, meta = load_checkpoint(path)
        assert meta["split_seed"] == 1234
        assert meta["node_ids"] == ["a", "b"]

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "x.tgnn"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(BadMagic):
            load_checkpoint(path)

    def test_version_mismatch(self, tmp_path):
        _, _, _, path = self._save_some(tmp_path)
        raw = bytearray(path.read_bytes())
        raw[4:8] = (99).to_bytes(4, "little")
        path.write_bytes(bytes(raw))
        with pytest.raises(VersionMismatch):
            load_checkpoint(path)

    def test_truncation_detected_everywhere(self, tmp_path):
        _, _, _, path = self._save_some(tmp_path)
        raw = path.read_bytes()
        # cutting the file at any point after the magic must raise
        for cut in (2, 6, 10, len(raw) // 2, len(raw) - 1):
            path.write_bytes(raw[:cut])
            with pytest.raises((BadMagic, TruncatedFile)):
                load_checkpoint(path)

    def test_trailing_garbage_detected(self, tmp_path):
        _, _, _, path = self._save_some(tmp_path)
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(TruncatedFile):
            load_checkpoint(path)

    def test_shape_validation_names_tensor(self, tmp_path):
        cfg = tiny_cfg()
        tcfg = TrainConfig()
        params = model.init_params(cfg, 8, seed=0)
        params["embed"] = np.zeros((2, 2))  # wrong shape for config
        path = tmp_path / "bad.tgnn"
        save_checkpoint(params, cfg, tcfg, path, n_labels=8)
        with pytest.raises(ShapeMismatch, match="embed"):
            load_checkpoint(path)


def test_history_csv_format():
    hist = [{"epoch": 1, "train_loss": 0.5, "val_f1": 0.25},
            {"epoch": 2, "train_loss": 0.25, "val_f1": 0.5}]
    text = train.history_csv(hist)
    lines = text.strip().split("\n")
    assert lines[0] == "epoch,train_loss,val_f1"
    assert lines[1].startswith("1,0.5")
    assert len(lines) == 3
