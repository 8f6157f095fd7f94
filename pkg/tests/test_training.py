import json
import math

import numpy as np
import pytest

from ppgauth import nn
from ppgauth.dataset import Dataset, SplitSpec, Window, build_dataset, stratified_split
from ppgauth.errors import EmptyDataset, ShapeMismatch
from ppgauth.signal_io import SyntheticSubjectProfile, generate_synthetic
from ppgauth.training import (
    HISTORY_COLUMNS,
    ExponentialScheduler,
    PlateauScheduler,
    TrainConfig,
    clip_global_norm,
    evaluate,
    train,
    write_history_csv,
)


@pytest.fixture(scope="module")
def two_subjects():
    """Two subjects with very different pulse shapes, 60 s each."""
    profs = {
        "A": SyntheticSubjectProfile(seed=1, heart_rate_bpm=60, systolic_width_s=0.05, notch_amp=0.5,
                                     noise_std=0.05),
        "B": SyntheticSubjectProfile(seed=2, heart_rate_bpm=90, systolic_width_s=0.12, notch_amp=0.1,
                                     noise_std=0.05),
    }
    recs = [generate_synthetic(p, 60.0, 25.0, subject_id=sid) for sid, p in profs.items()]
    ds = build_dataset(recs)
    return stratified_split(ds, SplitSpec(seed=0))


def _cfg(ds, **kw):
    t, c = ds.windows[0].values.shape
    return nn.ModelConfig(c, t, ds.class_count, hidden_dim=kw.pop("hidden_dim", 8),
                          num_layers=kw.pop("num_layers", 1), **kw)


class TestSchedulers:
    def test_constant_loss_halves_at_6_and_11(self):
        sched = PlateauScheduler(1.0, factor=0.5, patience=5)
        lrs = [sched.step(2.0) for _ in range(15)]
        halvings = [k + 1 for k in range(1, 15) if lrs[k] < lrs[k - 1]]
        assert lrs[0] == 1.0
        assert halvings == [6, 11]
        assert lrs[5] == 0.5 and lrs[10] == 0.25

    def test_decreasing_loss_keeps_lr(self):
        sched = PlateauScheduler(1e-3, patience=2)
        assert {sched.step(1.0 - 0.01 * k) for k in range(30)} == {1e-3}

    def test_small_improvements_count_as_plateau(self):
        sched = PlateauScheduler(1.0, patience=2, min_delta=0.1)
        lrs = [sched.step(v) for v in (1.0, 0.95, 0.92)]
        assert lrs == [1.0, 1.0, 0.5]

    def test_exponential(self):
        sched = ExponentialScheduler(1.0, gamma=0.9)
        lrs = [sched.step(0.0) for _ in range(3)]
        np.testing.assert_allclose(lrs, [0.9, 0.81, 0.729])


class TestClip:
    def test_scales_to_max_norm(self):
        grads = {"a": np.array([3.0, 0.0]), "b": np.array([[4.0]])}
        clipped, norm = clip_global_norm(grads, 1.0)
        assert norm == pytest.approx(5.0)
        total = math.sqrt(sum(float(np.sum(g ** 2)) for g in clipped.values()))
        assert total == pytest.approx(1.0, rel=1e-9)

    def test_noop_below_threshold_or_disabled(self):
        grads = {"a": np.array([0.3, 0.4])}
        assert clip_global_norm(grads, 1.0)[0] is grads
        assert clip_global_norm({"a": np.array([30.0])}, None)[0]["a"][0] == 30.0


class TestEvaluate:
    def _toy(self, labels, t=4):
        rng = np.random.default_rng(0)
        wins = [Window(rng.normal(size=(t, 2)), int(l), "Rest", 25.0, ("r", k)) for k, l in enumerate(labels)]
        return Dataset(tuple(wins), ("a", "b", "c"))

    def test_single_correct_window(self):
        cfg = nn.ModelConfig(2, 4, 3, hidden_dim=3, num_layers=1)
        params = nn.init_params(cfg, 0)
        params.tensors["cls.W"][:] = 0
        params.tensors["cls.b"][:] = [0.0, 5.0, 0.0]
        assert evaluate(params, self._toy([1])).accuracy == 1.0

    def test_uniform_ties_go_to_class_zero(self):
        cfg = nn.ModelConfig(2, 4, 3, hidden_dim=3, num_layers=1)
        params = nn.init_params(cfg, 0)
        params.tensors["cls.W"][:] = 0
        labels = [0, 1, 2, 0, 2, 2, 1]
        res = evaluate(params, self._toy(labels))
        assert set(res.predicted.tolist()) == {0}
        assert res.accuracy == pytest.approx(labels.count(0) / len(labels))

    def test_manual_count(self):
        cfg = nn.ModelConfig(2, 4, 3, hidden_dim=3, num_layers=1)
        params = nn.init_params(cfg, 4)
        ds = self._toy([0, 1, 2, 1, 0, 2, 2, 1, 0, 0])
        res = evaluate(params, ds)
        probs = nn.predict_proba(params, ds.arrays()[0])
        manual = sum(1 for k, w in enumerate(ds.windows) if int(np.argmax(probs[k])) == w.label)
        assert res.accuracy == manual / 10
        assert [p for _, p, _ in res.predictions] == list(np.argmax(probs, axis=1))

    def test_empty(self):
        cfg = nn.ModelConfig(2, 4, 3, hidden_dim=3, num_layers=1)
        with pytest.raises(EmptyDataset):
            evaluate(nn.init_params(cfg), Dataset((), ("a", "b", "c")))


class TestTrain:
    def test_zero_epochs(self, two_subjects):
        tr, va, _ = two_subjects
        cfg = _cfg(tr)
        init = nn.init_params(cfg, 0)
        params, history = train(cfg, TrainConfig(max_epochs=0), tr, va, init_params=init)
        assert params is init and history == []

    def test_learns_and_is_deterministic(self, two_subjects):
        tr, va, _ = two_subjects
        cfg = _cfg(tr)
        tcfg = TrainConfig(max_epochs=10, seed=3, batch_size=8)
        p1, h1 = train(cfg, tcfg, tr, va)
        p2, h2 = train(cfg, tcfg, tr, va)
        assert h1 == h2
        assert all(np.array_equal(p1[k], p2[k]) for k in p1.tensors)
        assert min(r.train_loss for r in h1) < math.log(2)
        # returned params are the best-validation-accuracy epoch
        assert evaluate(p1, va).accuracy == max(r.val_acc for r in h1)

    def test_lr_sequence_only_halves(self, two_subjects):
        tr, va, _ = two_subjects
        tcfg = TrainConfig(max_epochs=8, plateau_patience=1, min_delta=10.0, seed=0)
        _, history = train(_cfg(tr), tcfg, tr, va)
        lrs = [r.lr for r in history]
        assert lrs[0] == tcfg.lr0
        for a, b in zip(lrs, lrs[1:]):
            assert b == a or b == a * 0.5
        assert lrs[-1] < lrs[0]

    def test_on_epoch_callback(self, two_subjects):
        tr, va, _ = two_subjects
        seen = []
        train(_cfg(tr), TrainConfig(max_epochs=2), tr, va, on_epoch=seen.append)
        assert [r.epoch for r in seen] == [1, 2]

    def test_shape_mismatch(self, two_subjects):
        tr, va, _ = two_subjects
        cfg = nn.ModelConfig(4, 50, 2, hidden_dim=4, num_layers=1)
        with pytest.raises(ShapeMismatch):
            train(cfg, TrainConfig(max_epochs=1), tr, va)

    def test_history_csv(self, two_subjects, tmp_path):
        tr, va, _ = two_subjects
        _, history = train(_cfg(tr), TrainConfig(max_epochs=2), tr, va)
        path = tmp_path / "h.csv"
        write_history_csv(history, path)
        lines = path.read_text().splitlines()
        assert lines[0] == ",".join(HISTORY_COLUMNS)
        assert len(lines) == 3 and lines[1].startswith("1,")


class TestTrainConfig:
    def test_from_json(self, tmp_path):
        path = tmp_path / "t.json"
        path.write_text(json.dumps({"max_epochs": 3, "lr0": 0.01, "schedule": "exponential"}))
        cfg = TrainConfig.from_json(path)
        assert (cfg.max_epochs, cfg.lr0, cfg.schedule) == (3, 0.01, "exponential")

    def test_unknown_field(self):
        with pytest.raises(ValueError):
            TrainConfig.from_dict({"epochs": 3})

    def test_defaults(self):
        cfg = TrainConfig()
        assert (cfg.lr0, cfg.weight_decay, cfg.batch_size, cfg.max_epochs) == (9.23e-4, 8.21e-6, 32, 40)
