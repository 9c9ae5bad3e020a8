"""Acceptance criteria, one test each. Every test records a pass/fail line.

The three training-based criteria share one set of CLI runs (module fixture).
"""
import json
import time

import numpy as np
import pytest

import oracles
from acceptance_log import record
from dualattn import cli
from dualattn.attention import DualAttention, DualAttentionConfig, difference_scores, square_mask
from dualattn.checkpoint import load_model, save_model
from dualattn.data import default_vocab, generate_dataset
from dualattn.fusion import FusionParams, adaptive_fuse
from dualattn.gradcheck import OP_TOL, MODEL_TOL, timed_suite
from dualattn.model import ModelConfig, PairClassifier, pack_batch, pack_pair
from dualattn.tensor import Tensor
from dualattn.training import TrainConfig, evaluate, train

VOCAB = default_vocab()
SEEDS = 5


def check(name, ok, detail):
    record(name, ok, detail)
    assert ok, detail


def test_gradient_suite():
    results, elapsed = timed_suite(seed=0)
    worst_op = max((r for r in results if r.tol == OP_TOL), key=lambda r: r.error)
    model = [r for r in results if r.name == "end_to_end_model"][0]
    ok = all(r.ok for r in results) and model.tol == MODEL_TOL and elapsed < 120
    ok = ok and cli.main(["grad-check"]) == 0
    check("gradient suite", ok,
          f"{len(results) - 1} ops, worst {worst_op.name} {worst_op.error:.1e} (< 1e-5); "
          f"end-to-end {model.error:.1e} (< 1e-4); {elapsed:.1f}s")


def test_difference_score_algebra():
    t0 = time.perf_counter()
    rng = np.random.default_rng(100)
    worst = 0.0
    for _ in range(100):
        l, d = rng.integers(1, 9, size=2)
        Q, K = rng.normal(size=(l, d)), rng.normal(size=(l, d))
        beta = difference_scores(Tensor(Q), Tensor(K)).data
        rank = Q.sum(axis=1)[:, None] - K.sum(axis=1)[None, :]
        loop = oracles.difference_scores(Q.tolist(), K.tolist())
        worst = max(worst, np.abs(beta - rank).max(), np.abs(beta - np.array(loop)).max())
    elapsed = time.perf_counter() - t0
    check("difference-score algebra", worst <= 1e-12 and elapsed < 5,
          f"max deviation {worst:.1e} over 100 instances (<= 1e-12); {elapsed:.2f}s")


def _perturbed_model(seed=0):
    cfg = ModelConfig(vocab_size=len(VOCAB), dropout_p=0.0, seed=seed)
    model = PairClassifier(cfg)
    rng = np.random.default_rng(seed)
    for _, p in model.named_parameters():
        p.data = p.data + rng.normal(0, 0.3, p.shape)
    return model


def test_stochasticity_and_masking():
    t0 = time.perf_counter()
    model = _perturbed_model()
    data = generate_dataset("antonym_swap", 40, 7)
    tok, seg, valid = pack_batch(data, VOCAB, 24)
    records = []
    model.forward(tok, seg, valid, records=records)
    keys = valid[:, None, None, :]
    row_err, masked = 0.0, 0.0
    n_mats = 0
    for rec in records:
        for name in ("affinity", "difference", "guide_difference", "guide_affinity"):
            if name not in rec:
                continue
            w = rec[name]
            n_mats += 1
            row_err = max(row_err, np.abs(np.where(keys, w, 0.0).sum(-1) - 1.0).max())
            masked = max(masked, np.where(keys, 0.0, w).max())
    pad_err = 0.0
    for ex in data:
        n = len(ex.s1) + len(ex.s2) + 3
        short = model.logits(pack_pair(ex, VOCAB, 24, length=n)).data
        full = model.logits(pack_pair(ex, VOCAB, 24)).data
        pad_err = max(pad_err, np.abs(short - full).max())
    elapsed = time.perf_counter() - t0
    ok = row_err <= 1e-12 and masked < 1e-12 and pad_err < 1e-8 and elapsed < 30 and n_mats == 5
    check("stochasticity/masking", ok,
          f"{n_mats} weight tensors: row-sum error {row_err:.1e} (<= 1e-12), max masked {masked:.1e} "
          f"(< 1e-12); padding extension {pad_err:.1e} (< 1e-8); {elapsed:.1f}s")


def test_gate_algebra():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1000)
    bad = 0
    for _ in range(1000):
        # moderate weight scales: beyond |x| ~ 37 float64 rounds sigmoid(x) to 1
        raw = oracles.random_params(rng, 4, 3, 4, scale=rng.uniform(0.1, 1.0))
        P = FusionParams(**{k: Tensor(np.array(v)) for k, v in raw.items()})
        A, D = rng.normal(size=(6, 4)), rng.normal(size=(6, 4))
        L, tr = adaptive_fuse(A, D, None, P)
        lo = np.minimum(tr.a_hat.data, tr.d_hat.data)
        hi = np.maximum(tr.a_hat.data, tr.d_hat.data)
        ok = (np.all((lo <= tr.v.data) & (tr.v.data <= hi))
              and np.all((tr.g.data > 0) & (tr.g.data < 1)) and np.all((tr.f.data > 0) & (tr.f.data < 1))
              and np.all(np.abs(L.data) < 1))
        bad += not ok
    elapsed = time.perf_counter() - t0
    check("gate algebra", bad == 0 and elapsed < 10,
          f"{1000 - bad}/1000 instances satisfy v in [min, max](a_hat, d_hat), g, f in (0, 1), |l| < 1; "
          f"{elapsed:.1f}s")


def test_permutation_equivariance():
    t0 = time.perf_counter()
    rng = np.random.default_rng(11)
    worst = 0.0
    for trial in range(20):
        l = int(rng.integers(2, 10))
        layer = DualAttention(DualAttentionConfig(8, 2), rng)
        for _, p in layer.named_parameters():
            p.data = rng.normal(0, 0.5, p.shape)
        x = rng.normal(size=(l, 8))
        valid = rng.random(l) < 0.8
        valid[0] = True
        M = square_mask(valid)
        perm = rng.permutation(l)
        A, D, _, _ = layer(Tensor(x), M)
        Ap, Dp, _, _ = layer(Tensor(x[perm]), M[perm][:, perm])
        for ref, got in ((A.data, Ap.data), (D.data, Dp.data)):
            worst = max(worst, np.abs(ref[..., perm, :] - got).max())
    elapsed = time.perf_counter() - t0
    check("permutation equivariance", worst <= 1e-10 and elapsed < 10,
          f"both channels, 20 instances: max deviation {worst:.1e} (<= 1e-10); {elapsed:.1f}s")


def test_training_determinism(tmp_path):
    t0 = time.perf_counter()
    assert cli.main(["gen-data", "--task", "antonym_swap", "--n", "300", "--seed", "3",
                     "--out", str(tmp_path / "data")]) == 0
    csvs = []
    for k in range(2):
        assert cli.main(["train", "--data", str(tmp_path / "data"), "--seed", "5",
                         "--out", str(tmp_path / f"run{k}")]) == 0
        csvs.append((tmp_path / f"run{k}" / "metrics.csv").read_bytes())
    elapsed = time.perf_counter() - t0
    rows = csvs[0].decode().count("\n") - 1
    check("determinism", csvs[0] == csvs[1] and rows == 5 and elapsed < 300,
          f"two default runs, identical metrics CSV bytes = {csvs[0] == csvs[1]} ({rows} epochs); {elapsed:.1f}s")


# -- directional replication, ablation and attention dump -------------------

@pytest.fixture(scope="module")
def toy_runs(tmp_path_factory):
    """5-seed dual, matched vanilla and difference-ablated runs via the CLI."""
    root = tmp_path_factory.mktemp("toy")
    t0 = time.perf_counter()
    out = {}
    for task in ("antonym_swap", "number_swap"):
        data = root / task
        # 2500 examples split 2000 train / 500 test
        assert cli.main(["gen-data", "--task", task, "--n", "2500", "--seed", "0", "--split", "0.8,0,0.2",
                         "--out", str(data)]) == 0
        runs = [("dual", []), ("vanilla", ["--arch", "vanilla"])]
        if task == "antonym_swap":
            runs.append(("no_difference", ["--ablate", "difference"]))
        for name, flags in runs:
            dest = root / f"{task}-{name}"
            assert cli.main(["train", "--data", str(data), "--seed", "0", "--repeats", str(SEEDS),
                             "--out", str(dest)] + flags) == 0
            out[task, name] = json.loads((dest / "summary.json").read_text())
            out[task, name]["dir"] = dest
        out[task, "data"] = data
    out["elapsed"] = time.perf_counter() - t0
    return out


def _fmt(s):
    return f"{s['mean']:.3f} ± {s['std']:.3f}"


def test_directional_replication(toy_runs):
    ok = toy_runs["elapsed"] < 1800
    parts = []
    for task in ("antonym_swap", "number_swap"):
        dual, van = toy_runs[task, "dual"], toy_runs[task, "vanilla"]
        ok = ok and dual["mean"] >= van["mean"] and dual["mean"] >= 0.90
        parts.append(f"{task} dual {_fmt(dual)} vs vanilla {_fmt(van)}")
    check("directional toy replication", ok,
          "; ".join(parts) + f" (dual >= vanilla and >= 0.90 on each); "
          f"all toy runs {toy_runs['elapsed'] / 60:.1f} min")


def test_difference_ablation(toy_runs):
    full, ablated = toy_runs["antonym_swap", "dual"], toy_runs["antonym_swap", "no_difference"]
    check("difference ablation", ablated["mean"] <= full["mean"],
          f"antonym_swap dual {_fmt(full)} vs --ablate difference {_fmt(ablated)} (non-increase)")


def test_attention_dump(toy_runs, tmp_path, capsys):
    ckpt = toy_runs["antonym_swap", "dual"]["dir"] / "run0" / "model.dabt"
    code = cli.main(["dump-attention", "--checkpoint", str(ckpt), "--data",
                     str(toy_runs["antonym_swap", "data"]), "--out", str(tmp_path)])
    line = [s for s in capsys.readouterr().out.splitlines() if s.startswith("attention check")]
    dump = json.loads((tmp_path / "attention.json").read_text())
    rows_ok = all(np.allclose(np.sum(layer[ch], axis=-1), 1.0, atol=1e-9)
                  for layer in dump["layers"] for ch in ("affinity", "difference") if ch in layer)
    ok = code == 0 and len(line) == 1 and "PASS" in line[0] and rows_ok
    check("attention dump", ok, line[0] if line else "no check line emitted")


def test_checkpoint_round_trip(tmp_path):
    t0 = time.perf_counter()
    data = generate_dataset("antonym_swap", 300, 4)
    cfg = ModelConfig(vocab_size=len(VOCAB), seed=2)
    res = train(cfg, TrainConfig(epochs=1, seed=2), data[:200], data[200:], VOCAB)
    acc, preds = evaluate(res.model, VOCAB, data[200:])
    save_model(tmp_path / "m.dabt", res.model, VOCAB)
    model, vocab, _ = load_model(tmp_path / "m.dabt")
    acc2, preds2 = evaluate(model, vocab, data[200:])
    same_params = all(a.tobytes() == b.tobytes() for a, b in
                      zip(res.model.state_dict().values(), model.state_dict().values()))
    elapsed = time.perf_counter() - t0
    ok = acc == acc2 and preds.tobytes() == preds2.tobytes() and same_params and elapsed < 60
    check("checkpoint round-trip", ok,
          f"accuracy {acc:.3f} -> {acc2:.3f}, predictions and parameters bitwise equal = "
          f"{preds.tobytes() == preds2.tobytes() and same_params}; {elapsed:.1f}s")
