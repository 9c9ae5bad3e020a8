import math

import numpy as np
import numpy.testing as npt
import pytest

from dualattn.data import SentencePairExample, default_vocab, generate_dataset
from dualattn.model import ModelConfig
from dualattn.tensor import Tensor
from dualattn.training import (
    LR_PRESETS, METRICS_HEADER, AdamState, ConfigError, TrainConfig, TrainingDiverged, adamw_step,
    clip_gradients, dataset_loss, decays, evaluate, evaluate_checkpoint, lr_schedule, train,
)
from dualattn.model import PairClassifier

VOCAB = default_vocab()
TINY = ModelConfig(vocab_size=len(VOCAB), d_model=16, n_heads=2, d_ffn=32, seed=1)


def p(*vals):
    return Tensor(np.array(vals, dtype=float), requires_grad=True)


class TestAdamW:
    def test_zero_gradient_no_decay_is_identity(self):
        w = p(1.0, -2.0)
        adamw_step({"w": w}, {"w": np.zeros(2)}, AdamState(), 1, 0.1, weight_decay=0.0)
        npt.assert_array_equal(w.data, [1.0, -2.0])

    def test_first_step_closed_form(self):
        w = p(0.0)
        adamw_step({"w": w}, {"w": np.array([1.0])}, AdamState(), 1, 0.1, weight_decay=0.0)
        assert w.data[0] == pytest.approx(-0.1 / (1.0 + 1e-8), abs=1e-15)

    def test_decoupled_decay(self):
        w = p(1.0)
        adamw_step({"w": w}, {"w": np.zeros(1)}, AdamState(), 1, 0.1, weight_decay=0.01)
        assert w.data[0] == pytest.approx(1.0 - 0.1 * 0.01, abs=1e-15)

    def test_decay_exclusions_by_parameter_delta(self):
        model = PairClassifier(TINY)
        params = dict(model.named_parameters())
        before = {k: v.data.copy() for k, v in params.items()}
        adamw_step(params, {}, AdamState(), 1, 0.1, weight_decay=0.5)
        for name, t in params.items():
            moved = not np.array_equal(t.data, before[name]) or not np.any(before[name])
            leaf = name.rsplit(".", 1)[-1]
            excluded = leaf == "b" or leaf.startswith("b_") or leaf in ("gamma", "beta")
            if excluded:
                npt.assert_array_equal(t.data, before[name], err_msg=name)
            else:
                assert moved, name
        assert decays("layers.0.ff1.w") and not decays("layers.0.ln1.gamma")
        assert not decays("layers.0.attn.fusion.b_g") and not decays("cls.b")

    def test_second_moment_bias_correction(self):
        w = p(0.0)
        st = AdamState()
        for t, g in enumerate([1.0, -2.0, 0.5], 1):
            adamw_step({"w": w}, {"w": np.array([g])}, st, t, 0.01, weight_decay=0.0)
        # replay the textbook recursion in plain floats
        m = v = x = 0.0
        for t, g in enumerate([1.0, -2.0, 0.5], 1):
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            x -= 0.01 * (m / (1 - 0.9 ** t)) / (math.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        assert w.data[0] == pytest.approx(x, abs=1e-15)

    def test_nan_gradient_names_parameter(self):
        with pytest.raises(TrainingDiverged, match="enc.w"):
            adamw_step({"enc.w": p(1.0)}, {"enc.w": np.array([np.nan])}, AdamState(), 1, 0.1)

    def test_step_must_be_positive_and_shapes_match(self):
        with pytest.raises(ValueError):
            adamw_step({"w": p(1.0)}, {"w": np.zeros(1)}, AdamState(), 0, 0.1)
        with pytest.raises(ValueError):
            adamw_step({"w": p(1.0)}, {"w": np.zeros(2)}, AdamState(), 1, 0.1)

    def test_bitwise_determinism(self):
        rng = np.random.default_rng(0)
        g = rng.normal(size=(3, 3))
        a, b = Tensor(rng.normal(size=(3, 3))), None
        b = Tensor(a.data.copy())
        adamw_step({"w": a}, {"w": g}, AdamState(), 1, 1e-3)
        adamw_step({"w": b}, {"w": g}, AdamState(), 1, 1e-3)
        assert a.data.tobytes() == b.data.tobytes()


class TestSchedule:
    def test_endpoints(self):
        assert lr_schedule(0, 100, 1e-3) == 0.0
        assert lr_schedule(10, 100, 1e-3) == 1e-3
        assert lr_schedule(100, 100, 1e-3) == 0.0

    def test_linear_pieces(self):
        assert lr_schedule(5, 100, 1e-3) == pytest.approx(5e-4)
        assert lr_schedule(55, 100, 1e-3) == pytest.approx(5e-4)
        vals = [lr_schedule(s, 100, 1.0) for s in range(101)]
        assert max(vals) == 1.0 and min(vals) == 0.0

    def test_no_warmup(self):
        assert lr_schedule(0, 10, 2.0, 0.0) == 2.0

    def test_errors(self):
        with pytest.raises(ValueError):
            lr_schedule(0, 0, 1e-3)
        with pytest.raises(ValueError):
            lr_schedule(11, 10, 1e-3)


class TestClipping:
    def test_three_four_five(self):
        out, norm = clip_gradients({"g": np.array([3.0, 4.0])}, 2.5)
        assert norm == 5.0
        npt.assert_allclose(out["g"], [1.5, 2.0], atol=1e-15)

    def test_identity_below_threshold(self):
        g = {"a": np.array([0.3]), "b": np.array([[0.4]])}
        out, norm = clip_gradients(g, 10.0)
        assert out is g and norm == pytest.approx(0.5)

    def test_global_norm_bound(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            g = {k: rng.normal(size=rng.integers(1, 5, size=2)) * 10 for k in "abc"}
            clip = float(rng.uniform(0.1, 5))
            out, _ = clip_gradients(g, clip)
            total = math.sqrt(sum(float(np.sum(v * v)) for v in out.values()))
            assert total <= clip + 1e-12

    def test_bad_clip(self):
        with pytest.raises(ValueError):
            clip_gradients({}, 0.0)


class TestConfig:
    def test_defaults(self):
        tc = TrainConfig()
        assert tc.warmup_fraction == 0.1 and tc.weight_decay == 0.01 and tc.epochs == 5
        assert tc.batch_size in (16, 32, 64) and tc.clip_norm in (7.5, 10.0, 15.0)
        assert 0.1 <= tc.dropout_p <= 0.3
        assert set(LR_PRESETS.values()) == {1e-5, 2e-5, 3e-5, 8e-6}

    @pytest.mark.parametrize("kw", [{"warmup_fraction": 1.0}, {"learning_rate": 0.0}, {"epochs": 0},
                                    {"weight_decay": -1.0}, {"dropout_p": 1.0}])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            TrainConfig(**kw)


class TestTrain:
    def test_smoke_one_epoch(self, tmp_path):
        data = generate_dataset("antonym_swap", 8, 0)
        res = train(TINY, TrainConfig(epochs=1, batch_size=16), data, data, VOCAB, out_dir=tmp_path)
        assert len(res.history) == 1
        assert (tmp_path / "model.dabt").exists()
        lines = (tmp_path / "metrics.csv").read_text().splitlines()
        assert lines[0] == ",".join(METRICS_HEADER) and len(lines) == 2

    def test_initial_loss_near_ln2(self):
        data = generate_dataset("paraphrase", 200, 0)
        loss = dataset_loss(PairClassifier(TINY), data, VOCAB)
        assert abs(loss - math.log(2)) < 0.1

    def test_deterministic_history(self, tmp_path):
        data = generate_dataset("number_swap", 64, 3)
        runs = []
        for k in range(2):
            train(TINY, TrainConfig(epochs=2, batch_size=16, seed=4), data[:48], data[48:], VOCAB,
                  out_dir=tmp_path / str(k))
            runs.append((tmp_path / str(k) / "metrics.csv").read_bytes())
        assert runs[0] == runs[1]

    def test_vocab_mismatch(self):
        bad = [SentencePairExample(("the", "zebra", "is", "big"), ("the", "box", "is", "big"), 1)]
        with pytest.raises(ConfigError):
            train(TINY, TrainConfig(epochs=1), bad, bad, VOCAB)
        with pytest.raises(ConfigError):
            evaluate(PairClassifier(TINY), VOCAB, bad)
        with pytest.raises(ConfigError):
            train(TINY, TrainConfig(epochs=1), [], bad, VOCAB)

    def test_evaluate_single_correct_example(self):
        model = PairClassifier(TINY)
        ex = generate_dataset("antonym_swap", 1, 0)
        acc, preds = evaluate(model, VOCAB, ex)
        target = [SentencePairExample(ex[0].s1, ex[0].s2, int(preds[0]))]
        assert evaluate(model, VOCAB, target)[0] == 1.0

    def test_evaluate_checkpoint(self, tmp_path):
        data = generate_dataset("antonym_swap", 32, 2)
        res = train(TINY, TrainConfig(epochs=1), data, data, VOCAB, out_dir=tmp_path)
        a1, p1 = evaluate_checkpoint(res.checkpoint, data)
        a2, p2 = evaluate(res.model, VOCAB, data)
        assert a1 == a2 and p1.tobytes() == p2.tobytes()

    def test_divergence_saves_last_good(self, tmp_path):
        data = generate_dataset("antonym_swap", 32, 2)
        cfg = ModelConfig(**{**TINY.__dict__})
        poisoned = PairClassifier.forward

        def forward(self, *a, **kw):
            out = poisoned(self, *a, **kw)
            if kw.get("training"):
                out.data[:] = np.nan
            return out

        PairClassifier.forward = forward
        try:
            with pytest.raises(TrainingDiverged):
                train(cfg, TrainConfig(epochs=1), data, data, VOCAB, out_dir=tmp_path)
        finally:
            PairClassifier.forward = poisoned
        assert (tmp_path / "model.dabt").exists()


def test_paraphrase_loss_halves_with_defaults():
    """Divergence guard: default dual config, 5 epochs on the paraphrase task."""
    data = generate_dataset("paraphrase", 2000, 0)
    res = train(ModelConfig(), TrainConfig(), data, data[:200], VOCAB)
    final = dataset_loss(res.model, data, VOCAB)
    assert final <= 0.5 * res.initial_loss, (res.initial_loss, final)
