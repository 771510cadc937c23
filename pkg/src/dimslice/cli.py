"""Command-line harness: model lifecycle, slicing, sweeps, fits, predictions.

Commands are deterministic given their flags and seeds; report-producing
commands (sweep, fit, entropy, train) write a PNG figure next to each
delimited output. Exit codes: 0 success, 2 validation error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import plots, scaling
from .corpus import synthetic_corpus
from .errors import NumericalError, ValidationError
from .linalg import SeededRng
from .metrics import embedding_entropy, entropy_ratio, load_mc_items, mc_accuracy, token_perplexity
from .model import ModelConfig, ModelWeights, capture_trace, init_weights
from .modelio import VOCAB_FILE, Vocabulary, load_model, save_model
from .scaling import SweepRecord, fit_line, predict_acc, predict_ppl, reference_coefficients, y_acc, y_ppl
from .slicer import (
    SlicedModel,
    apply_rotation,
    compute_rotation,
    fold_norm_weights,
    slice_model,
    validate_sparsity,
)
from .training import TrainConfig, train

DEFAULT_GRID = (0.0, 0.125, 0.25, 0.375, 0.5)
DEFAULT_CALIB_COUNT = 8
DEFAULT_CALIB_LENGTH = 64


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _fmt(value) -> str:
    if value is None:
        return ""
    return repr(float(value))


def _write_json(path, payload) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _read_corpus(path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise ValidationError(f"corpus file not found: {path}") from exc


def _load_plain_model(path) -> tuple[ModelWeights, ModelConfig]:
    model, config = load_model(path)
    if isinstance(model, SlicedModel):
        raise ValidationError(f"{path} holds an already-sliced model; a plain model is required")
    return model, config


def _vocab_for(model_dir, corpus_text: str) -> Vocabulary:
    vocab_path = Path(model_dir) / VOCAB_FILE
    if vocab_path.exists():
        return Vocabulary.load(vocab_path)
    return Vocabulary.from_text(corpus_text)


def _parse_grid(text: str | None, d: int):
    if text is None:
        values = [s for s in DEFAULT_GRID if abs((1 - s) * d - round((1 - s) * d)) < 1e-9]
    else:
        try:
            values = [float(tok) for tok in text.split(",") if tok.strip() != ""]
        except ValueError as exc:
            raise ValidationError(f"cannot parse sparsity grid {text!r}") from exc
        if not values:
            raise ValidationError("sparsity grid is empty")
    levels = [validate_sparsity(d, s) for s in values]
    ordered = sorted(levels, key=lambda lv: lv.s)
    for a, b in zip(ordered, ordered[1:]):
        if a.s == b.s:
            raise ValidationError(f"duplicate sparsity value {a.s} in grid")
    return ordered


def _calibration_sequences(tokens: np.ndarray, config: ModelConfig, count: int, length: int, seed: int):
    length = min(length, config.max_seq_len, tokens.size)
    if length < 1 or tokens.size < length:
        raise ValidationError("corpus too short for calibration sequences")
    rng = SeededRng(seed)
    n_starts = tokens.size - length + 1
    return [tokens[start:start + length]
            for start in (int(rng.integers(0, n_starts)) for _ in range(count))]


def cmd_init(args) -> int:
    config = ModelConfig(
        d=args.d, m=args.m, h_attn=args.heads, h_dim=args.head_dim, v=args.kv_heads,
        n_blocks=args.blocks, vocab_size=args.vocab, max_seq_len=args.max_seq_len,
        gamma=args.gamma,
    )
    weights = init_weights(config, SeededRng(args.seed))
    save_model(args.out, weights, config)
    print(f"wrote {Path(args.out) / 'model.json'} and model.bin (seed {args.seed})")
    return 0


def cmd_corpus(args) -> int:
    text = synthetic_corpus(args.seed, args.chars)
    Path(args.out).write_text(text, encoding="utf-8")
    print(f"wrote {args.out}: {len(text)} characters, {len(set(text))} distinct")
    return 0


def cmd_train(args) -> int:
    model, config = _load_plain_model(args.model)
    text = _read_corpus(args.corpus)
    vocab = Vocabulary.from_text(text)
    if vocab.size > config.vocab_size:
        raise ValidationError(
            f"corpus has {vocab.size} distinct characters but the model vocabulary "
            f"holds only {config.vocab_size}"
        )
    tokens = vocab.encode(text)
    cfg = TrainConfig(
        learning_rate=args.lr, steps=args.steps, batch_length=args.batch_length,
        seed=args.seed, optimizer=args.optimizer,
    )
    losses = train(model, tokens, config, cfg)

    out = Path(args.out)
    save_model(out, model, config)
    vocab.save(out / VOCAB_FILE)
    curve_path = out / "losses.csv"
    with open(curve_path, "w", encoding="utf-8", newline="") as fh:
        fh.write("step,loss\n")
        for step, loss in enumerate(losses):
            fh.write(f"{step},{_fmt(loss)}\n")
    plots.save_loss_curve(losses, out / "losses.png")
    print(f"trained {cfg.steps} steps; loss {losses[0]:.4f} -> {losses[-1]:.4f}")
    print(f"wrote checkpoint, {VOCAB_FILE}, losses.csv and losses.png under {out}")
    return 0


def cmd_slice(args) -> int:
    model, config = _load_plain_model(args.model)
    text = _read_corpus(args.corpus)
    vocab = _vocab_for(args.model, text)
    tokens = vocab.encode(text)
    level = validate_sparsity(config.d, args.s)
    calib = _calibration_sequences(tokens, config, args.calib_count, args.calib_length, args.seed)
    folded = fold_norm_weights(model)
    plan = compute_rotation(folded, config, calib, mode=args.mode)
    sliced = slice_model(apply_rotation(folded, plan), config, level, mode=args.mode)
    save_model(args.out, sliced)
    vocab.save(Path(args.out) / VOCAB_FILE)
    print(f"sliced s={level.s:g}: d {level.d} -> {level.d_kept} ({args.mode}); wrote {args.out}")
    return 0


def _evaluate(model, eval_tokens, tasks, config) -> tuple[float, dict, float]:
    ppl = token_perplexity(model, eval_tokens, config).ppl
    accs = {name: mc_accuracy(model, items, config) for name, items in tasks.items()}
    chunk = eval_tokens[: config.max_seq_len]
    if isinstance(model, SlicedModel):
        final_state = model.trace(chunk).final_state
    else:
        final_state = capture_trace(model, chunk, config).final_state
    h_bits = embedding_entropy(final_state).h_bits
    return ppl, accs, h_bits


def cmd_sweep(args) -> int:
    model, config = _load_plain_model(args.model)
    text = _read_corpus(args.corpus)
    vocab = _vocab_for(args.model, text)
    tokens = vocab.encode(text)
    levels = _parse_grid(args.grid, config.d)

    tasks = {}
    for task_path in args.tasks or []:
        name = Path(task_path).stem
        if name in tasks:
            raise ValidationError(f"duplicate task name {name!r}")
        tasks[name] = load_mc_items(task_path, vocab)

    eval_tokens = tokens[-args.eval_tokens:] if tokens.size > args.eval_tokens else tokens
    if eval_tokens.size < 2:
        raise ValidationError("corpus yields fewer than 2 evaluation tokens")
    calib = _calibration_sequences(tokens, config, args.calib_count, args.calib_length, args.seed)

    folded = fold_norm_weights(model)
    plan = compute_rotation(folded, config, calib, mode=args.mode)
    rotated = apply_rotation(folded, plan)

    records = []
    for level in levels:
        sliced = slice_model(rotated, config, level, mode=args.mode)
        ppl, accs, h_bits = _evaluate(sliced, eval_tokens, tasks, sliced.config)
        records.append(SweepRecord(s=level.s, token_ppl=ppl, mc_acc=accs, log2_emb_ppl=h_bits))

    if records[0].s == 0.0:
        base = records[0]
    else:
        ppl, accs, h_bits = _evaluate(model, eval_tokens, tasks, config)
        base = SweepRecord(s=0.0, token_ppl=ppl, mc_acc=accs, log2_emb_ppl=h_bits)

    task_names = sorted(tasks)
    out = Path(args.out)
    csv_path = out.with_suffix(".csv")
    header = ["sparsity", "token_ppl", "log2_emb_ppl"]
    header += [f"{name}_acc" for name in task_names]
    header += ["y_ppl"] + [f"y_acc_{name}" for name in task_names]
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for r in records:
            row = [_fmt(r.s), _fmt(r.token_ppl), _fmt(r.log2_emb_ppl)]
            row += [_fmt(r.mc_acc[name]) for name in task_names]
            row.append(_fmt(y_ppl(base.token_ppl, r.token_ppl)))
            row += [_fmt(y_acc(base.mc_acc[name], r.mc_acc[name])) for name in task_names]
            fh.write(",".join(row) + "\n")

    report = {
        "model": {"path": str(args.model), "blob_sha256": _sha256(Path(args.model) / "model.bin")},
        "records": [
            {"s": r.s, "token_ppl": r.token_ppl, "log2_emb_ppl": r.log2_emb_ppl,
             "mc_acc": r.mc_acc}
            for r in records
        ],
        "provenance": {
            "seed": args.seed,
            "mode": args.mode,
            "grid": [lv.s for lv in levels],
            "calibration": {"count": args.calib_count, "length": args.calib_length},
            "eval_tokens": int(eval_tokens.size),
            "corpus_sha256": _sha256(args.corpus),
            "task_sha256": {name: _sha256(path) for name, path in
                            zip([Path(p).stem for p in args.tasks or []], args.tasks or [])},
        },
    }
    _write_json(out.with_suffix(".json"), report)
    plots.save_sweep_figure(records, task_names, out.with_suffix(".png"))
    print(f"swept {len(records)} sparsity levels; wrote {csv_path}, "
          f"{out.with_suffix('.json')} and {out.with_suffix('.png')}")
    ppls = [r.token_ppl for r in records]
    if any(b < a for a, b in zip(ppls, ppls[1:])):
        # expected to be non-decreasing for trained models; reported, not enforced
        print(f"note: token perplexity is not monotone across the grid: "
              f"{[round(p, 4) for p in ppls]}")
    return 0


def _read_sweep_csv(path) -> tuple[list[dict], list[str]]:
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or "sparsity" not in reader.fieldnames:
                raise ValidationError(
                    f"{path} is not a sweep CSV (expected a 'sparsity' column; "
                    f"got {reader.fieldnames})"
                )
            return list(reader), list(reader.fieldnames)
    except FileNotFoundError as exc:
        raise ValidationError(f"sweep CSV not found: {path}") from exc


def cmd_fit(args) -> int:
    rows, fieldnames = _read_sweep_csv(args.sweep)
    metric = args.metric
    if metric not in fieldnames:
        raise ValidationError(
            f"metric {metric!r} is not a column of {args.sweep}; available: {fieldnames}"
        )
    if metric == "token_ppl":
        transform_name, transform = scaling.TRANSFORM_PPL, y_ppl
    elif metric.endswith("_acc"):
        transform_name, transform = scaling.TRANSFORM_ACC, y_acc
    else:
        raise ValidationError(
            f"metric {metric!r} is not fittable; choose token_ppl or a *_acc column"
        )

    points = []
    baseline = None
    for row in rows:
        if row.get(metric, "") == "":
            continue
        s = float(row["sparsity"])
        value = float(row[metric])
        points.append((s, value))
        if s == 0.0:
            baseline = value
    if baseline is None:
        raise ValidationError("sweep CSV has no s=0 baseline row; transforms need one")
    transformed = [(s, transform(baseline, value)) for s, value in points]
    fit = fit_line(transformed)

    out = Path(args.out)
    _write_json(out.with_suffix(".json"), fit.to_json(metric, transform_name))
    with open(out.with_suffix(".csv"), "w", encoding="utf-8", newline="") as fh:
        fh.write("sparsity,y,fitted_y\n")
        for s, y in transformed:
            fh.write(f"{_fmt(s)},{_fmt(y)},{_fmt(fit.a * s + fit.b)}\n")
    plots.save_fit_figure([p[0] for p in transformed], [p[1] for p in transformed],
                          fit, metric, transform_name, out.with_suffix(".png"))
    print(f"fit {metric}: a={fit.a:.6g} b={fit.b:.6g} rmse={fit.rmse:.6g} over {fit.n_points} points")
    print(f"wrote {out.with_suffix('.json')}, {out.with_suffix('.csv')} and {out.with_suffix('.png')}")
    return 0


def cmd_predict(args) -> int:
    if (args.ppl0 is None) == (args.acc0 is None):
        raise ValidationError("give exactly one of --ppl0 or --acc0")
    coeffs = None
    coeff_source = None
    if args.paper is not None:
        model_name, dataset = args.paper
        metric = "perplexity" if args.ppl0 is not None else "accuracy"
        a, b, rmse = reference_coefficients(model_name, dataset, metric)
        coeffs = (a, b)
        coeff_source = {"model": model_name, "dataset": dataset, "a": a, "b": b, "rmse": rmse}
    elif args.a is not None or args.b is not None:
        if args.a is None or args.b is None:
            raise ValidationError("--a and --b must be given together")
        coeffs = (args.a, args.b)
        coeff_source = {"a": args.a, "b": args.b}

    if args.ppl0 is not None:
        if coeffs is None:
            prediction = predict_ppl(args.ppl0, args.s)
        else:
            # empirical line: y = a*s + b with y = ln(ppl0)/ln(ppl)
            y = coeffs[0] * args.s + coeffs[1]
            if y <= 0:
                raise NumericalError(f"fitted transform value {y:g} is not invertible to a perplexity")
            prediction = math.exp(math.log(args.ppl0) / y)
        payload = {"kind": "perplexity", "s": args.s, "ppl0": args.ppl0,
                   "prediction": prediction, "coefficients": coeff_source}
    else:
        if coeffs is None:
            raise ValidationError("accuracy prediction needs --paper or explicit --a/--b")
        result = predict_acc(args.acc0, args.s, coeffs)
        payload = {"kind": "accuracy", "s": args.s, "acc0": args.acc0,
                   "prediction": result.value, "out_of_range": result.out_of_range,
                   "coefficients": coeff_source}

    text = json.dumps(payload, indent=2, sort_keys=True)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    return 0


def cmd_entropy(args) -> int:
    if (args.synthetic is None) == (args.model is None):
        raise ValidationError("give exactly one of --synthetic LxD or --model DIR")
    if args.synthetic is not None:
        try:
            l, d = (int(tok) for tok in args.synthetic.lower().split("x"))
        except ValueError as exc:
            raise ValidationError(f"--synthetic wants ROWSxCOLS, got {args.synthetic!r}") from exc
        states = SeededRng(args.seed).normal(l, d)
    else:
        if args.corpus is None:
            raise ValidationError("--model needs --corpus for the forward pass")
        model, config = load_model(args.model)
        text = _read_corpus(args.corpus)
        vocab = _vocab_for(args.model, text)
        tokens = vocab.encode(text)[: config.max_seq_len]
        if tokens.size < 2:
            raise ValidationError("corpus yields fewer than 2 tokens")
        if isinstance(model, SlicedModel):
            states = model.trace(tokens).final_state
        else:
            states = capture_trace(model, tokens, config).final_state
        d = states.shape[1]

    levels = _parse_grid(args.grid, d)
    rows = []
    for level in levels:
        ratio = entropy_ratio(states[:, : level.d_kept], states)
        ideal = 1.0 - level.s
        rows.append((level.s, ratio, ideal, abs(ratio - ideal)))

    out = Path(args.out)
    with open(out.with_suffix(".csv"), "w", encoding="utf-8", newline="") as fh:
        fh.write("sparsity,measured_ratio,ideal_ratio,abs_error\n")
        for row in rows:
            fh.write(",".join(_fmt(x) for x in row) + "\n")
    plots.save_entropy_figure(rows, out.with_suffix(".png"))
    print(f"wrote {out.with_suffix('.csv')} and {out.with_suffix('.png')}")
    for s, ratio, ideal, err in rows:
        print(f"  s={s:g}: measured {ratio:.4f}, ideal {ideal:g}, |error| {err:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dimslice",
        description="Toy-transformer lab: residual-stream slicing and sparsity-performance laws.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", help="create a randomly initialised model directory")
    p.add_argument("--d", type=int, required=True, help="embedding dimension")
    p.add_argument("--m", type=int, required=True, help="MLP intermediate size")
    p.add_argument("--heads", type=int, required=True, help="attention head count")
    p.add_argument("--head-dim", type=int, required=True, help="attention head width")
    p.add_argument("--kv-heads", type=int, required=True, help="key-value head count")
    p.add_argument("--blocks", type=int, required=True, help="transformer block count")
    p.add_argument("--vocab", type=int, required=True, help="vocabulary size")
    p.add_argument("--max-seq-len", type=int, default=64)
    p.add_argument("--gamma", type=float, default=0.0, help="attention scale (default 1/sqrt(head dim))")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("corpus", help="write a deterministic synthetic text corpus")
    p.add_argument("--chars", type=int, default=120_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_corpus)

    p = sub.add_parser("train", help="train a model on a character corpus")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--lr", type=float, default=3e-3)
    p.add_argument("--batch-length", type=int, default=64)
    p.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("slice", help="fold, rotate and truncate a model at one sparsity")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True, help="calibration text")
    p.add_argument("--s", type=float, required=True)
    p.add_argument("--mode", choices=("global", "per-block"), default="global")
    p.add_argument("--calib-count", type=int, default=DEFAULT_CALIB_COUNT)
    p.add_argument("--calib-length", type=int, default=DEFAULT_CALIB_LENGTH)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_slice)

    p = sub.add_parser("sweep", help="evaluate a sparsity grid and export records")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--tasks", nargs="*", default=[], help="multiple-choice JSONL files")
    p.add_argument("--grid", default=None, help="comma-separated sparsities")
    p.add_argument("--mode", choices=("global", "per-block"), default="global")
    p.add_argument("--eval-tokens", type=int, default=4096)
    p.add_argument("--calib-count", type=int, default=DEFAULT_CALIB_COUNT)
    p.add_argument("--calib-length", type=int, default=DEFAULT_CALIB_LENGTH)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output prefix (.csv/.json/.png)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("fit", help="fit y = a*s + b to a sweep metric")
    p.add_argument("--sweep", required=True, help="sweep CSV path")
    p.add_argument("--metric", required=True, help="token_ppl or a <task>_acc column")
    p.add_argument("--out", required=True, help="output prefix (.json/.csv/.png)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="predict pruned-model performance from a law")
    p.add_argument("--ppl0", type=float, default=None, help="unpruned perplexity")
    p.add_argument("--acc0", type=float, default=None, help="unpruned accuracy")
    p.add_argument("--s", type=float, required=True)
    p.add_argument("--paper", nargs=2, metavar=("MODEL", "DATASET"), default=None,
                   help="use published reference coefficients")
    p.add_argument("--a", type=float, default=None)
    p.add_argument("--b", type=float, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("entropy", help="entropy ratio of column-sliced states vs 1-s")
    p.add_argument("--synthetic", default=None, metavar="LxD",
                   help="use a seeded Gaussian state matrix of this shape")
    p.add_argument("--model", default=None)
    p.add_argument("--corpus", default=None)
    p.add_argument("--grid", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output prefix (.csv/.png)")
    p.set_defaults(func=cmd_entropy)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
