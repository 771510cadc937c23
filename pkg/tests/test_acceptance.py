"""Acceptance suite: one test per criterion, each at its stated tolerance.

Run `pytest -v -s tests/test_acceptance.py` to see one PASS line per
criterion. Criterion 6 trains a char-level model end to end and dominates
the runtime (about half a minute).
"""

import hashlib
import math
import time
from pathlib import Path

import numpy as np

from dimslice.cli import main as cli_main
from dimslice.linalg import SeededRng, matmul, random_orthogonal, second_moment, symmetric_eig
from dimslice.metrics import entropy_ratio, token_perplexity
from dimslice.model import ModelConfig, attention, init_weights, model_forward
from dimslice.modelio import Vocabulary
from dimslice.scaling import (
    REFERENCE_COEFFICIENTS,
    fit_line,
    predict_acc,
    predict_ppl,
    y_ppl,
)
from dimslice.slicer import (
    RotationPlan,
    apply_rotation,
    fold_norm_weights,
    slice_model,
    validate_sparsity,
)
from dimslice.corpus import synthetic_corpus
from dimslice.training import TrainConfig, cross_entropy_loss, loss_graph, params_from_model, train
from dimslice.autodiff import GradientTape

from test_linalg import naive_matmul
from test_model import ungrouped_attention_oracle
from conftest import rel_dev


def report(n, message):
    print(f"ACCEPTANCE {n} PASS: {message}")


def test_criterion_1_entropy_ratio_law():
    start = time.time()
    states = SeededRng(0).normal(64, 256)
    worst = 0.0
    for s in (1.0 / 8.0, 1.0 / 4.0, 1.0 / 2.0):
        keep = int(round((1.0 - s) * 256))
        ratio = entropy_ratio(states[:, :keep], states)
        worst = max(worst, abs(ratio - (1.0 - s)))
        assert abs(ratio - (1.0 - s)) < 0.02, f"s={s}: ratio {ratio}"
    elapsed = time.time() - start
    assert elapsed < 1.0, f"took {elapsed:.2f}s"
    report(1, f"entropy ratio within ±0.02 of 1-s (worst |err| {worst:.4f}, {elapsed:.2f}s)")


def test_criterion_2_computational_invariance():
    start = time.time()
    config = ModelConfig(d=32, m=64, h_attn=4, h_dim=8, v=2, n_blocks=2,
                         vocab_size=60, max_seq_len=64)
    model = init_weights(config, SeededRng(1))
    rng = SeededRng(2)
    for block in model.blocks:
        block.w_norm1 += rng.normal_vector(32, 0.1)
        block.w_norm2 += rng.normal_vector(32, 0.1)
    model.w_norm_final += rng.normal_vector(32, 0.1)

    plan = RotationPlan(mode="global", rotations=[random_orthogonal(32, SeededRng(3))],
                        spectra=[np.ones(32)])
    folded = fold_norm_weights(model)
    sliced = slice_model(apply_rotation(folded, plan), config, validate_sparsity(32, 0.0))

    worst = 0.0
    for i in range(16):
        tokens = SeededRng(100 + i).integers(0, config.vocab_size, size=24)
        dev = rel_dev(sliced.forward(tokens), model_forward(model, tokens, config))
        worst = max(worst, dev)
        assert dev < 1e-8, f"sequence {i}: relative deviation {dev:.3e}"
    elapsed = time.time() - start
    assert elapsed < 5.0, f"took {elapsed:.2f}s"
    report(2, f"s=0 fold+rotate+slice leaves logits unchanged "
              f"(worst rel dev {worst:.2e} over 16 sequences, {elapsed:.2f}s)")


def test_criterion_3_perplexity_law_exactness():
    rng = SeededRng(4)
    worst = 0.0
    for _ in range(1000):
        # randomized grid over the float64-representable regime of the law
        ppl0 = 1.0 + 99.0 * float(rng.integers(1, 10_000)) / 10_000.0
        s = float(rng.integers(0, 950)) / 1000.0
        err = abs(y_ppl(ppl0, predict_ppl(ppl0, s)) - (1.0 - s))
        worst = max(worst, err)
        assert err < 1e-12
    fit = fit_line([(s, 1.0 - s) for s in (0.0, 0.125, 0.25, 0.375, 0.5)])
    assert abs(fit.a + 1.0) < 1e-9 and abs(fit.b - 1.0) < 1e-9 and fit.rmse < 1e-9
    report(3, f"round trip exact over 1000 points (worst |err| {worst:.2e}); "
              f"law-exact fit a={fit.a:.12f}, b={fit.b:.12f}")


def test_criterion_4_reference_registry_fidelity():
    expected = {
        ("Llama-3-8B-Instruct", "WikiText2", "perplexity"): (-1.08, 0.96, 0.03),
        ("Phi-3-mini-4k-Instruct", "WikiText2", "perplexity"): (-0.90, 1.02, 0.01),
        ("Llama-3-8B-Instruct", "ARC-e", "accuracy"): (-2.14, 0.04, 0.05),
        ("Phi-3-mini-4k-Instruct", "ARC-e", "accuracy"): (-1.84, 0.04, 0.04),
        ("Llama-3-8B-Instruct", "ARC-c", "accuracy"): (-2.02, -0.07, 0.09),
        ("Phi-3-mini-4k-Instruct", "ARC-c", "accuracy"): (-1.88, -0.01, 0.02),
        ("Llama-3-8B-Instruct", "WinoGrande", "accuracy"): (-0.86, -0.02, 0.02),
        ("Phi-3-mini-4k-Instruct", "WinoGrande", "accuracy"): (-0.66, -0.02, 0.02),
        ("Llama-3-8B-Instruct", "PIQA", "accuracy"): (-0.91, -0.01, 0.03),
        ("Phi-3-mini-4k-Instruct", "PIQA", "accuracy"): (-0.90, 0.01, 0.01),
    }
    assert REFERENCE_COEFFICIENTS == expected
    value = predict_acc(0.8, 0.25, (-2.14, 0.04)).value
    assert abs(value - 0.48766) < 1e-5
    report(4, f"all 10 registry rows exact; ARC-e prediction {value:.6f} within 1e-5 of 0.48766")


def test_criterion_5_gradient_correctness():
    start = time.time()
    config = ModelConfig(d=8, m=16, h_attn=2, h_dim=4, v=1, n_blocks=1,
                         vocab_size=11, max_seq_len=32)
    model = init_weights(config, SeededRng(5))
    tokens = SeededRng(6).integers(0, config.vocab_size, size=10)
    inputs, targets = tokens[:-1], tokens[1:]

    params = params_from_model(model)
    tape = GradientTape(params)
    tape.forward(lambda p: loss_graph(p, inputs, targets, config))
    grads = tape.backward()

    h = 1e-5
    worst = {}
    for name, p in params.items():
        fd = np.zeros_like(p.value)
        flat_val, flat_fd = p.value.reshape(-1), fd.reshape(-1)
        for idx in range(flat_val.size):
            orig = flat_val[idx]
            flat_val[idx] = orig + h
            up = cross_entropy_loss(model_forward(model, inputs, config), targets)
            flat_val[idx] = orig - h
            down = cross_entropy_loss(model_forward(model, inputs, config), targets)
            flat_val[idx] = orig
            flat_fd[idx] = (up - down) / (2.0 * h)
        num = np.linalg.norm(grads[name] - fd)
        den = np.linalg.norm(grads[name]) + np.linalg.norm(fd) + 1e-12
        worst[name] = num / den
        assert worst[name] < 1e-4, f"{name}: relative error {worst[name]:.3e}"
    elapsed = time.time() - start
    assert elapsed < 30.0, f"took {elapsed:.1f}s"
    worst_name = max(worst, key=worst.get)
    report(5, f"autodiff matches central differences on every parameter class "
              f"(worst {worst_name}: {worst[worst_name]:.2e}, {elapsed:.1f}s)")


def test_criterion_6_desk_scale_sweep(tmp_path):
    start = time.time()
    text = synthetic_corpus(0, 120_000)
    assert len(text.encode("utf-8")) >= 100_000
    vocab = Vocabulary.from_text(text)
    config = ModelConfig(d=64, m=128, h_attn=4, h_dim=16, v=2, n_blocks=2,
                         vocab_size=vocab.size, max_seq_len=64)
    model = init_weights(config, SeededRng(0))
    tokens = vocab.encode(text)
    train(model, tokens, config,
          TrainConfig(learning_rate=3e-3, steps=2000, batch_length=64, seed=0))

    eval_tokens = tokens[-4096:]
    ppl0 = token_perplexity(model, eval_tokens, config).ppl
    assert ppl0 < 0.5 * vocab.size, f"trained ppl {ppl0:.2f} not below {0.5 * vocab.size}"

    rng = SeededRng(123)
    calib = [tokens[i:i + 64]
             for i in (int(rng.integers(0, tokens.size - 64)) for _ in range(8))]
    from dimslice.slicer import compute_rotation

    folded = fold_norm_weights(model)
    plan = compute_rotation(folded, config, calib)
    rotated = apply_rotation(folded, plan)

    points = []
    ppls = []
    for s in (0.0, 0.125, 0.25, 0.5):
        sliced = slice_model(rotated, config, validate_sparsity(64, s))
        ppl = token_perplexity(sliced, eval_tokens).ppl
        ppls.append(ppl)
        points.append((s, y_ppl(ppl0, ppl)))
    assert np.all(np.diff(ppls) >= 0.0), f"perplexity not non-decreasing: {ppls}"
    fit = fit_line(points)
    assert fit.a < 0.0, f"fitted slope {fit.a} is not negative"
    elapsed = time.time() - start
    assert elapsed < 600.0, f"took {elapsed:.0f}s"
    report(6, f"trained ppl {ppl0:.2f} (< {0.5 * vocab.size:.1f}); sweep ppl "
              f"{[round(p, 2) for p in ppls]} non-decreasing; slope a={fit.a:.4f} < 0 "
              f"({elapsed:.0f}s)")


def test_criterion_7_oracle_equivalences():
    rng = SeededRng(7)
    a, b = rng.normal(7, 5), rng.normal(5, 3)
    assert np.max(np.abs(matmul(a, b) - naive_matmul(a, b))) < 1e-12

    c = second_moment(rng.normal(40, 6))
    eig = symmetric_eig(c)
    recon = eig.eigenvectors @ np.diag(eig.eigenvalues) @ eig.eigenvectors.T
    eig_err = np.linalg.norm(recon - c) / np.linalg.norm(c)
    assert eig_err < 1e-8

    config = ModelConfig(d=8, m=16, h_attn=2, h_dim=4, v=2, n_blocks=1,
                         vocab_size=10, max_seq_len=16)
    model = init_weights(config, SeededRng(8))
    e = SeededRng(9).normal(7, 8)
    attn_dev = rel_dev(attention(model.blocks[0], e, config),
                       ungrouped_attention_oracle(model.blocks[0], e, config))
    assert attn_dev < 1e-10

    fit = fit_line([(0.0, 0.0), (1.0, 1.0), (2.0, 1.0)])
    assert abs(fit.a - 0.5) < 1e-9
    assert abs(fit.b - 1.0 / 6.0) < 1e-9
    assert abs(fit.rmse - math.sqrt(1.0 / 18.0)) < 1e-9
    report(7, f"matmul/naive < 1e-12; eig reconstruction {eig_err:.2e}; grouped-vs-ungrouped "
              f"{attn_dev:.2e}; normal-equations fit within 1e-9")


def test_criterion_8_cli_determinism(tmp_path):
    """Every command, rerun with identical flags, rewrites identical bytes."""

    def sha(path):
        return hashlib.sha256(Path(path).read_bytes()).hexdigest()

    base = tmp_path
    corpus = base / "corpus.txt"
    commands = [
        ("corpus", "--out", corpus, "--chars", 3000, "--seed", 2),
        ("init", "--out", base / "model", "--d", 16, "--m", 32, "--heads", 2,
         "--head-dim", 8, "--kv-heads", 1, "--blocks", 1, "--vocab", 40,
         "--max-seq-len", 48, "--seed", 3),
        ("train", "--model", base / "model", "--corpus", corpus, "--steps", 40,
         "--lr", 5e-3, "--batch-length", 32, "--seed", 4, "--out", base / "trained"),
        ("slice", "--model", base / "trained", "--corpus", corpus, "--s", 0.25,
         "--seed", 5, "--out", base / "sliced"),
        ("sweep", "--model", base / "trained", "--corpus", corpus, "--grid", "0,0.25,0.5",
         "--eval-tokens", 256, "--seed", 6, "--out", base / "sweep"),
        ("fit", "--sweep", base / "sweep.csv", "--metric", "token_ppl", "--out", base / "fit"),
        ("predict", "--ppl0", 8, "--s", 0.5, "--out", base / "prediction.json"),
        ("entropy", "--synthetic", "32x64", "--seed", 7, "--out", base / "entropy"),
    ]
    artifacts = [
        corpus,
        base / "model" / "model.json", base / "model" / "model.bin",
        base / "trained" / "model.bin", base / "trained" / "vocab.json",
        base / "trained" / "losses.csv", base / "trained" / "losses.png",
        base / "sliced" / "model.json", base / "sliced" / "model.bin",
        base / "sweep.csv", base / "sweep.json", base / "sweep.png",
        base / "fit.json", base / "fit.csv", base / "fit.png",
        base / "prediction.json",
        base / "entropy.csv", base / "entropy.png",
    ]

    hashes = {}
    for rerun in (False, True):
        for argv in commands:
            assert cli_main([str(x) for x in argv]) == 0
        if not rerun:
            hashes = {p: sha(p) for p in artifacts}
    for path in artifacts:
        assert sha(path) == hashes[path], f"{path.name} differs between reruns"
    report(8, f"{len(artifacts)} artifacts byte-identical across reruns of every command")
