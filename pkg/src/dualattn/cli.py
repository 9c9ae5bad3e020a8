"""Command-line entry point: ``dualattn <command> [flags] [key=value ...]``.

Exit status is 0 on success, 1 for usage, configuration or input errors and 2
for runtime or numerical failures.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import config as C
from .checkpoint import CheckpointError, load_model
from .data import (
    PERTURBATIONS, TASKS, DataFormatError, PerturbationSpec, SentencePairExample, Vocab,
    default_lexicon, default_vocab, generate_dataset, perturb_dataset, read_tsv, split_dataset,
    write_tsv,
)
from .gradcheck import format_report, timed_suite
from .model import ABLATIONS, InputError, pack_pair
from .training import ConfigError, TrainingDiverged, evaluate, train

class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _write_provenance(out: Path, values: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(C.render({k: str(v) for k, v in values.items()}), encoding="utf-8")


def _load_split(data_dir: Path, name: str) -> list[SentencePairExample]:
    path = data_dir / f"{name}.tsv"
    return read_tsv(path) if path.exists() else []


def _run_values(args) -> dict[str, str]:
    values = C.read_config(args.config) if args.config else {}
    values.update(C.parse_assignments(args.overrides))
    if args.seed is not None:
        values["seed"] = str(args.seed)
    if getattr(args, "arch", None):
        values["arch"] = args.arch
    if getattr(args, "ablate", None):
        values["ablate"] = args.ablate
    return values


# -- commands ---------------------------------------------------------------

def cmd_gen_data(args) -> int:
    fractions = tuple(float(x) for x in args.split.split(","))
    if len(fractions) != 3 or any(f < 0 for f in fractions) or not math.isclose(sum(fractions), 1.0):
        raise ConfigError(f"--split needs three non-negative fractions summing to 1, got {args.split!r}")
    data = generate_dataset(args.task, args.n, args.seed)
    out = Path(args.out)
    _write_provenance(out, {"command": "gen-data", "task": args.task, "n": args.n, "seed": args.seed,
                            "split": args.split})
    parts = split_dataset(data, fractions)
    for name, part in zip(("train", "dev", "test"), parts):
        write_tsv(out / f"{name}.tsv", part)
    default_vocab().write(out / "vocab.txt")
    default_lexicon().write(out / "lexicon.tsv")
    print(f"wrote {' / '.join(str(len(p)) for p in parts)} train/dev/test examples to {out}")
    return 0


def _train_once(model_cfg, train_cfg, train_set, eval_set, test_set, vocab, out: Path):
    res = train(model_cfg, train_cfg, train_set, eval_set, vocab, out_dir=out)
    acc, _ = evaluate(res.model, vocab, test_set)
    (out / "result.json").write_text(json.dumps({"test_accuracy": acc, "n_test": len(test_set),
                                                 "initial_loss": res.initial_loss}, indent=1) + "\n")
    return acc


def cmd_train(args) -> int:
    values = _run_values(args)
    model_cfg, train_cfg, arch = C.resolve(values)
    data_dir = Path(args.data)
    train_set, dev_set, test_set = (_load_split(data_dir, s) for s in ("train", "dev", "test"))
    if not train_set:
        raise ConfigError(f"{data_dir}/train.tsv is missing or empty")
    test_set = test_set or dev_set
    eval_set = dev_set or test_set
    if not eval_set:
        raise ConfigError(f"{data_dir} has neither dev.tsv nor test.tsv")
    vocab = Vocab.read(data_dir / "vocab.txt") if (data_dir / "vocab.txt").exists() else default_vocab()
    if args.repeats < 1:
        raise ConfigError("--repeats must be at least 1")
    out = Path(args.out)
    accs = []
    for k in range(args.repeats):
        seed = train_cfg.seed + k
        mc, tc, _ = C.resolve({**values, "seed": str(seed)})
        run_out = out if args.repeats == 1 else out / f"run{k}"
        _write_provenance(run_out, C.effective(mc, tc, arch))
        acc = _train_once(mc, tc, train_set, eval_set, test_set, vocab, run_out)
        accs.append(acc)
        print(f"run {k} seed {seed}: test accuracy {acc:.4f}")
    mean, std = float(np.mean(accs)), float(np.std(accs, ddof=1)) if len(accs) > 1 else 0.0
    summary = {"arch": arch, "ablate": model_cfg.ablate, "accuracies": accs, "mean": mean, "std": std}
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.json").write_text(json.dumps(summary, indent=1) + "\n")
    if args.repeats > 1:
        _write_provenance(out, C.effective(model_cfg, train_cfg, arch))
    print(f"test accuracy {mean:.4f} ± {std:.4f} over {len(accs)} run(s)")
    return 0


def _read_examples(path: Path) -> list[SentencePairExample]:
    return read_tsv(path / "test.tsv" if path.is_dir() else path)


def cmd_eval(args) -> int:
    model, vocab, _ = load_model(args.checkpoint)
    examples = _read_examples(Path(args.data))
    acc, preds = evaluate(model, vocab, examples)
    if args.out:
        out = Path(args.out)
        _write_provenance(out, {"command": "eval", "checkpoint": args.checkpoint, "data": args.data})
        (out / "predictions.txt").write_text("".join(f"{int(p)}\n" for p in preds))
    print(f"accuracy {acc:.4f} on {len(examples)} examples")
    return 0


def _spec_params(items) -> dict:
    params = {}
    for item in items:
        if "=" not in item:
            raise ConfigError(f"expected key=value, got {item!r}")
        k, v = (s.strip() for s in item.split("=", 1))
        if k not in ("count", "to", "max_tokens"):
            raise ConfigError(f"unknown perturbation parameter {k!r}")
        params[k] = v if k == "to" else int(v)
    return params


def cmd_transform(args) -> int:
    spec = PerturbationSpec(args.spec, _spec_params(args.overrides))
    examples = read_tsv(args.input)
    out, skipped = perturb_dataset(spec, examples, args.seed)
    dest = Path(args.out)
    dest.parent.mkdir(parents=True, exist_ok=True)
    write_tsv(dest, out)
    _write_provenance(dest.parent, {"command": "transform", "spec": args.spec, "input": args.input,
                                    "seed": args.seed, **dict(spec.params)})
    print(f"{args.spec}: transformed {len(out)}, not applicable {skipped}")
    return 0


def cmd_grad_check(args) -> int:
    values = _run_values(args)
    model_cfg = C.resolve(values)[0]
    results, elapsed = timed_suite(args.seed or 0, model_cfg)
    report = format_report(results, elapsed)
    print(report)
    if args.out:
        out = Path(args.out)
        _write_provenance(out, {"command": "grad-check", "seed": args.seed or 0, **values})
        (out / "grad_check.txt").write_text(report + "\n")
    return 0 if all(r.ok for r in results) else 2


def _pick_example(args, vocab) -> SentencePairExample:
    if args.s1 is not None or args.s2 is not None:
        if args.s1 is None or args.s2 is None:
            raise ConfigError("--s1 and --s2 must be given together")
        return SentencePairExample(tuple(args.s1.split()), tuple(args.s2.split()), 0)
    if args.data is None:
        raise ConfigError("give --s1/--s2 or --data")
    examples = _read_examples(Path(args.data))
    if args.index is not None:
        return examples[args.index]
    lex = default_lexicon()
    for ex in examples:
        diff = [(a, b) for a, b in zip(ex.s1, ex.s2) if a != b]
        if ex.label == 0 and len(diff) == 1 and diff[0][1] in lex.synset(lex.antonym.get(diff[0][0], "")):
            return ex
    raise ConfigError("no antonym-swapped example found; pass --index")


def swapped_link_check(weights: np.ndarray, s1_pos: int, s2_pos: int, n_valid: int) -> tuple[float, float]:
    """(head-averaged weight linking the two positions, mean off-diagonal weight).

    The link weight is the larger of the two directions.
    """
    w = weights.mean(axis=0)[:n_valid, :n_valid]
    link = max(w[s2_pos, s1_pos], w[s1_pos, s2_pos])
    off = w[~np.eye(n_valid, dtype=bool)].mean()
    return float(link), float(off)


def cmd_dump_attention(args) -> int:
    model, vocab, _ = load_model(args.checkpoint)
    ex = _pick_example(args, vocab)
    p = pack_pair(ex, vocab, model.config.max_len)
    records = []
    model.forward(p.token_ids, p.segment_ids, p.valid, records=records)
    n = int(p.valid.sum())
    tokens = [vocab.tokens[i] for i in p.token_ids[:n]]
    out = Path(args.out)
    _write_provenance(out, {"command": "dump-attention", "checkpoint": args.checkpoint,
                            "s1": " ".join(ex.s1), "s2": " ".join(ex.s2)})
    dump = {"tokens": tokens, "layers": []}
    for li, rec in enumerate(records):
        layer = {"layer": li, "dual": "difference" in rec}
        for ch in ("affinity", "difference"):
            if ch not in rec:
                continue
            w = rec[ch][0][:, :n, :n]
            layer[ch] = w.tolist()
            for h in range(w.shape[0]):
                np.savetxt(out / f"layer{li}_{ch}_head{h}.csv", w[h], delimiter=",", fmt="%.10g",
                           header=",".join(tokens), comments="")
        for g in ("gate_g", "gate_f"):
            if g in rec:
                layer[g] = rec[g][0][:, :n].tolist()
        dump["layers"].append(layer)
    (out / "attention.json").write_text(json.dumps(dump) + "\n")

    dual = [rec for rec in records if "difference" in rec]
    if not dual:
        print("attention check SKIP: checkpoint has no dual-attention layer")
        return 0
    diffs = [i for i, (a, b) in enumerate(zip(ex.s1, ex.s2)) if a != b]
    if len(diffs) != 1:
        print(f"attention check SKIP: pair differs at {len(diffs)} positions")
        return 0
    s1_pos, s2_pos = p.s1_span[0] + diffs[0], p.s2_span[0] + diffs[0]
    link, off = swapped_link_check(dual[0]["difference"][0], s1_pos, s2_pos, n)
    ok = link > off
    print(f"attention check {'PASS' if ok else 'FAIL'}: difference weight {ex.s1[diffs[0]]!r}<->"
          f"{ex.s2[diffs[0]]!r} = {link:.4f}, mean off-diagonal = {off:.4f}")
    return 0 if ok else 2


def cmd_robustness(args) -> int:
    models = {name: load_model(path) for name, path in (("dual", args.dual), ("vanilla", args.vanilla))}
    examples = _read_examples(Path(args.data))
    out = Path(args.out)
    _write_provenance(out, {"command": "robustness", "dual": args.dual, "vanilla": args.vanilla,
                            "data": args.data, "seed": args.seed, "specs": ",".join(args.specs)})
    rows = ["spec,n,skipped,dual_acc,vanilla_acc"]
    for name in args.specs:
        pert, skipped = perturb_dataset(PerturbationSpec(name), examples, args.seed)
        if not pert:
            print(f"{name:<10} no applicable examples")
            continue
        accs = {k: evaluate(m, v, pert)[0] for k, (m, v, _) in models.items()}
        rows.append(f"{name},{len(pert)},{skipped},{accs['dual']!r},{accs['vanilla']!r}")
        print(f"{name:<10} n={len(pert):<5} dual {accs['dual']:.4f}  vanilla {accs['vanilla']:.4f}")
    (out / "robustness.csv").write_text("\n".join(rows) + "\n")
    return 0


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="dualattn", description="Dual-attention sentence-pair classifier toolkit.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="generate a toy task and split it")
    g.add_argument("--task", choices=TASKS, required=True)
    g.add_argument("--n", type=int, default=2500)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--split", default="0.8,0.1,0.1", help="train,dev,test fractions")
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_gen_data)

    t = sub.add_parser("train", help="train from scratch on a generated data directory")
    t.add_argument("--data", required=True)
    t.add_argument("--config")
    t.add_argument("--seed", type=int)
    t.add_argument("--arch", choices=C.ARCHS)
    t.add_argument("--ablate", choices=ABLATIONS)
    t.add_argument("--repeats", type=int, default=1)
    t.add_argument("--out", required=True)
    t.add_argument("overrides", nargs="*", metavar="key=value")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="accuracy of a checkpoint on a TSV file or data directory")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out")
    e.set_defaults(fn=cmd_eval)

    x = sub.add_parser("transform", help="apply a perturbation to a TSV file")
    x.add_argument("--spec", choices=PERTURBATIONS, required=True)
    x.add_argument("--in", dest="input", required=True)
    x.add_argument("--out", required=True)
    x.add_argument("--seed", type=int, default=0)
    x.add_argument("overrides", nargs="*", metavar="key=value")
    x.set_defaults(fn=cmd_transform)

    c = sub.add_parser("grad-check", help="finite-difference check of every op and the model")
    c.add_argument("--config")
    c.add_argument("--seed", type=int)
    c.add_argument("--out")
    c.add_argument("overrides", nargs="*", metavar="key=value")
    c.set_defaults(fn=cmd_grad_check)

    d = sub.add_parser("dump-attention", help="write attention weights and gates for one example")
    d.add_argument("--checkpoint", required=True)
    d.add_argument("--data")
    d.add_argument("--index", type=int)
    d.add_argument("--s1")
    d.add_argument("--s2")
    d.add_argument("--out", required=True)
    d.set_defaults(fn=cmd_dump_attention)

    r = sub.add_parser("robustness", help="paired dual/vanilla accuracy on perturbed test sets")
    r.add_argument("--dual", required=True)
    r.add_argument("--vanilla", required=True)
    r.add_argument("--data", required=True)
    r.add_argument("--specs", nargs="+", choices=PERTURBATIONS, default=list(PERTURBATIONS))
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", required=True)
    r.set_defaults(fn=cmd_robustness)
    return ap


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(f"dualattn: error: {e}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.fn(args)
    except (UsageError, ConfigError, DataFormatError, InputError, CheckpointError, KeyError,
            IndexError, ValueError) as e:
        print(f"dualattn: error: {e}", file=sys.stderr)
        return 1
    except FileNotFoundError as e:
        print(f"dualattn: error: {e}", file=sys.stderr)
        return 1
    except (TrainingDiverged, FloatingPointError, OSError) as e:
        print(f"dualattn: failed: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
