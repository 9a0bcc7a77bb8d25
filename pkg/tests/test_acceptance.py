"""Acceptance suite: one test per shipping criterion, tagged A1-A9.

Each test computes its verdict, prints a single tagged pass/fail line on the
real stdout (so it is visible in any pytest run), and then asserts.  The
heavyweight criteria run real training; their budgets assume they get the
machine to themselves, which is how the suite is normally invoked.
"""

import time
from fractions import Fraction
from functools import lru_cache

import numpy as np
import pytest

from jdx.cli import main as cli_main
from jdx.constraint import evaluate_constraint, init_constraint_parameters, pretrain_constraint
from jdx.dataset import (Vocabulary, augment, split, synthesize_dataset,
                         tokenize)
from jdx.generator import GeneratorConfig, JustificationModel, toy_config
from jdx.metrics import auc, bleu_scores, cider, rouge_l
from jdx.numerics import Tensor, pause_recording
from jdx.rng import Rng
from jdx.training import (RunConfig, TrainingLog, diagnosis_accuracy,
                          diagnosis_scores, diagnosis_targets, evaluate_model,
                          generate_for_samples, train_constraint_phase,
                          train_diagnosis, train_full, train_generator)
from jdx.verify import run_full_check

# Training settings for the criteria that run real training on this box
# (single CPU core).  Batch/learning-rate are tuned for step count, not the
# CLI defaults; the criteria pin corpora, seeds, thresholds and budgets.
A3_CONFIG = dict(seed=3, batch_size=1, learning_rate=0.003, alpha=2.0,
                 epochs_diag=40, epochs_vcon=40, epochs_gen=300,
                 refs_per_sample=1)
A5_SEED = 11
A5_BASE = dict(seed=3, batch_size=16, learning_rate=0.003,
               epochs_diag=80, epochs_vcon=60)
A5_GEN = dict(seed=3, batch_size=32, learning_rate=0.003, epochs_gen=80,
              refs_per_sample=1)
A7_CONFIG = dict(seed=3, batch_size=16, learning_rate=0.003, epochs_diag=150)


@pytest.fixture
def record(capsys):
    """Print one tagged verdict line past pytest's output capture."""

    def _record(tag, ok, detail):
        verdict = "PASS" if ok else "FAIL"
        with capsys.disabled():
            print(f"\n{tag} {verdict}: {detail}", flush=True)

    return _record


def build_vocab(samples):
    return Vocabulary.from_corpus(ref for s in samples for ref in s.references)


def fresh_model(vocab, config):
    gen_config = GeneratorConfig(vocab_size=len(vocab), max_len=config.max_len)
    return JustificationModel(
        gen_config, seed=Rng(config.seed).spawn("model").next_u64())


def test_a1_gradients_match_finite_differences(record):
    """Every op and the full combined loss agree with central differences."""
    start = time.time()
    ok, lines = run_full_check(seed=0)
    elapsed = time.time() - start
    in_budget = elapsed < 60.0
    record("A1", ok and in_budget,
           f"finite-difference agreement at 1e-4, {elapsed:.1f}s (budget 60s)")
    assert ok, [line for line in lines if line.endswith("FAIL")]
    assert in_budget, f"{elapsed:.1f}s exceeds the 60s budget"


def test_a2_attention_maps_are_normalized(record):
    """1000 random forward passes: maps strictly positive, sums within 1e-9."""
    rng = Rng(22)
    checked = 0
    worst_sum = 0.0
    min_value = np.inf
    round_idx = 0
    while checked < 1000:
        round_idx += 1
        full_size = round_idx % 10 == 0
        if full_size:
            config = GeneratorConfig(vocab_size=20)
            batch = 10
        else:
            config = toy_config(vocab_size=11)
            batch = 50
        model = JustificationModel(config, seed=rng.next_u64())
        images = rng.uniform(-2.0, 2.0,
                             (batch, 1, config.image_size, config.image_size))
        with pause_recording():
            fwd = model.forward_visual(Tensor(images))
        maps = fwd.attention.data
        sums = maps.reshape(maps.shape[0], -1).sum(axis=1)
        worst_sum = max(worst_sum, float(np.abs(sums - 1.0).max()))
        min_value = min(min_value, float(maps.min()))
        checked += maps.shape[0]
    ok = worst_sum <= 1e-9 and min_value > 0.0
    record("A2", ok, f"{checked} maps, worst |sum-1| {worst_sum:.2e}, "
                     f"min value {min_value:.2e}")
    assert worst_sum <= 1e-9
    assert min_value > 0.0


def test_a3_overfits_eight_samples(record):
    """300 generator epochs memorize 8 samples: loss, decisions, sentences."""
    start = time.time()
    samples = synthesize_dataset(8, seed=2)
    vocab = build_vocab(samples)
    config = RunConfig(**A3_CONFIG)
    model, _, log = train_full(samples, vocab, config)
    final_loss = [loss for phase, _, loss in log.rows
                  if phase == "generator"][-1]
    acc = diagnosis_accuracy(model, samples)
    sentences, _, _ = generate_for_samples(model, samples, vocab)
    exact = sum(s == x.references[0] for s, x in zip(sentences, samples))
    elapsed = time.time() - start
    ok = (final_loss < 0.05 and acc == 1.0 and exact == len(samples)
          and elapsed < 300.0)
    record("A3", ok, f"loss {final_loss:.4f} (<0.05), accuracy {acc:.2f}, "
                     f"{exact}/8 sentences exact, {elapsed:.0f}s (budget 300s)")
    assert final_loss < 0.05
    assert acc == 1.0
    assert exact == len(samples), [
        (s, x.references[0]) for s, x in zip(sentences, samples)
        if s != x.references[0]]
    assert elapsed < 300.0


def test_a4_constraint_classifier_generalizes(record):
    """Pretrained sentence classifier scores >=0.95 on 200 held-out sentences."""
    train_samples = synthesize_dataset(150, seed=21)
    held_out = synthesize_dataset(200, seed=22)
    vocab = build_vocab(train_samples)
    max_len = 24
    corpus = [(vocab.encode(ref, max_len=max_len), s.labels)
              for s in train_samples for ref in s.references]
    params = pretrain_constraint(corpus, len(vocab), max_len, 30,
                                 Rng(4).next_u64(), batch_size=16,
                                 learning_rate=0.003)
    eval_corpus = [(vocab.encode(s.references[0], max_len=max_len), s.labels)
                   for s in held_out]
    margin_acc, shape_acc = evaluate_constraint(params, eval_corpus, max_len)
    ok = margin_acc >= 0.95 and shape_acc >= 0.95
    record("A4", ok, f"held-out margin accuracy {margin_acc:.3f}, "
                     f"shape accuracy {shape_acc:.3f} (>=0.95 each)")
    assert margin_acc >= 0.95
    assert shape_acc >= 0.95


def test_a5_constraint_term_raises_diversity(record):
    """With the constraint on, generated sentences are strictly more diverse."""
    start = time.time()
    samples = synthesize_dataset(600, seed=A5_SEED)
    train, test = split(samples, 0.8, seed=A5_SEED)
    vocab = build_vocab(train)

    base_config = RunConfig(**A5_BASE)
    base_model = fresh_model(vocab, base_config)
    log = TrainingLog()
    train_diagnosis(base_model, train, base_config, log)
    vcon = train_constraint_phase(train, vocab, base_config, log)
    model_state = {k: t.data.copy() for k, t in base_model.params.items()}
    vcon_state = {k: t.data.copy() for k, t in vcon.items()}

    reports = {}
    for alpha in (2.0, 0.0):
        arm_config = RunConfig(alpha=alpha, **A5_GEN)
        arm_model = fresh_model(vocab, arm_config)
        arm_model.params.load_values(model_state)
        arm_vcon = init_constraint_parameters(len(vocab), Rng(0))
        for name, value in vcon_state.items():
            arm_vcon[name].data[...] = value
        train_generator(arm_model, arm_vcon, train, vocab, arm_config,
                        TrainingLog())
        reports[alpha] = evaluate_model(arm_model, test, train, vocab)

    elapsed = time.time() - start
    with_term, without = reports[2.0], reports[0.0]
    unique_up = with_term.unique_ratio > without.unique_ratio
    novel_up = with_term.novel_ratio > without.novel_ratio
    bleu_ok = with_term.bleu1 >= without.bleu1 - 0.05
    in_budget = elapsed < 1800.0
    ok = unique_up and novel_up and bleu_ok and in_budget
    record("A5", ok,
           f"unique {with_term.unique_ratio:.3f}>{without.unique_ratio:.3f}, "
           f"novel {with_term.novel_ratio:.3f}>{without.novel_ratio:.3f}, "
           f"bleu1 {with_term.bleu1:.3f} vs {without.bleu1:.3f} (within 0.05), "
           f"{elapsed:.0f}s (budget 1800s)")
    assert unique_up, (with_term.unique_ratio, without.unique_ratio)
    assert novel_up, (with_term.novel_ratio, without.novel_ratio)
    assert bleu_ok, (with_term.bleu1, without.bleu1)
    assert in_budget, elapsed


def _oracle_bleu1(candidate, references):
    """Unigram BLEU with max-count clipping, exact rational arithmetic."""
    cand = candidate.split()
    clipped = 0
    for word in set(cand):
        limit = max(ref.split().count(word) for ref in references)
        clipped += min(cand.count(word), limit)
    precision = Fraction(clipped, len(cand))
    ref_len = min((abs(len(r.split()) - len(cand)), len(r.split()))
                  for r in references)[1]
    if len(cand) > ref_len:
        brevity = 1.0
    else:
        brevity = float(np.exp(1.0 - ref_len / len(cand)))
    return brevity * float(precision)


def _oracle_lcs(a, b):
    @lru_cache(maxsize=None)
    def rec(i, j):
        if i == 0 or j == 0:
            return 0
        if a[i - 1] == b[j - 1]:
            return rec(i - 1, j - 1) + 1
        return max(rec(i - 1, j), rec(i, j - 1))

    return rec(len(a), len(b))


def _oracle_cider(candidates, references):
    """Per-order tf-idf cosine CIDEr from its textbook definition."""
    n_docs = len(candidates)

    def ngrams(tokens, order):
        return [tuple(tokens[i:i + order]) for i in range(len(tokens) - order + 1)]

    total = 0.0
    for cand, refs in zip(candidates, references):
        cand_tokens = cand.split()
        score = 0.0
        for order in range(1, 5):
            df = {}
            for _, doc_refs in zip(candidates, references):
                seen = set()
                for ref in doc_refs:
                    seen.update(ngrams(ref.split(), order))
                for gram in seen:
                    df[gram] = df.get(gram, 0) + 1

            def vec(tokens):
                grams = ngrams(tokens, order)
                out = {}
                for gram in grams:
                    out[gram] = out.get(gram, 0) + 1
                return {g: c * np.log(n_docs / max(df.get(g, 0), 1))
                        for g, c in out.items()}

            cand_vec = vec(cand_tokens)
            per_ref = []
            for ref in refs:
                ref_vec = vec(ref.split())
                dot = sum(cand_vec.get(g, 0.0) * w for g, w in ref_vec.items())
                norm_c = np.sqrt(sum(v * v for v in cand_vec.values()))
                norm_r = np.sqrt(sum(v * v for v in ref_vec.values()))
                per_ref.append(0.0 if norm_c == 0 or norm_r == 0
                               else dot / (norm_c * norm_r))
            score += np.mean(per_ref) / 4.0
        total += 10.0 * score
    return total / n_docs


def _oracle_auc(scores, labels):
    wins = 0.0
    pairs = 0
    for s_pos, y_pos in zip(scores, labels):
        if not y_pos:
            continue
        for s_neg, y_neg in zip(scores, labels):
            if y_neg:
                continue
            pairs += 1
            wins += 1.0 if s_pos > s_neg else (0.5 if s_pos == s_neg else 0.0)
    return wins / pairs


def test_a6_metrics_match_brute_force_oracles(record):
    """Library metrics agree with independent brute-force oracles at 1e-9."""
    worst = 0.0

    cand = "the the the the the the the"
    refs = ["the cat is on the mat", "there is a cat on the mat"]
    scores = bleu_scores([cand], [refs])
    assert abs(_oracle_bleu1(cand, refs) - 2.0 / 7.0) < 1e-12
    worst = max(worst, abs(scores[0] - 2.0 / 7.0))

    rng = Rng(606)
    words = ["mass", "margin", "round", "dense", "small", "the", "a"]
    corpus_c = []
    corpus_r = []
    for _ in range(12):
        corpus_c.append(" ".join(words[rng.randint(len(words))]
                                 for _ in range(4 + rng.randint(6))))
        corpus_r.append([" ".join(words[rng.randint(len(words))]
                                  for _ in range(4 + rng.randint(7)))
                         for _ in range(2)])
    for cand_t, refs_t in zip(corpus_c, corpus_r):
        got = rouge_l([cand_t], [refs_t])
        best = 0.0
        for ref in refs_t:
            a, b = cand_t.split(), ref.split()
            lcs = _oracle_lcs(tuple(a), tuple(b))
            if lcs:
                prec, rec = lcs / len(a), lcs / len(b)
                beta_sq = 1.2 ** 2
                best = max(best, (1 + beta_sq) * prec * rec
                           / (rec + beta_sq * prec))
        worst = max(worst, abs(got - best))

    got_cider = cider(corpus_c, corpus_r)
    worst = max(worst, abs(got_cider - _oracle_cider(corpus_c, corpus_r)))

    scores = list(rng.fill_uniform((40,)).round(1))
    labels = [int(v) for v in rng.fill_uniform((40,)) < 0.5]
    worst = max(worst, abs(auc(scores, labels) - _oracle_auc(scores, labels)))

    ok = worst < 1e-9
    record("A6", ok, f"bleu/rouge/cider/auc vs oracles, worst gap {worst:.2e}")
    assert worst < 1e-9


def test_a7_ranking_on_separable_corpus(record):
    """Decision head reaches AUC >= 0.95 on a noise-free held-out split."""
    samples = synthesize_dataset(600, seed=A5_SEED, label_noise=0.0)
    train, test = split(samples, 0.8, seed=A5_SEED)
    vocab = build_vocab(train)
    config = RunConfig(**A7_CONFIG)
    model = fresh_model(vocab, config)
    train_diagnosis(model, train, config, TrainingLog())
    scores = diagnosis_scores(model, test)[:, 1]
    value = auc(scores, diagnosis_targets(test))
    ok = value >= 0.95
    record("A7", ok, f"held-out ranking AUC {value:.3f} (>=0.95)")
    assert value >= 0.95


def test_a8_identical_flags_reproduce_reports(tmp_path, record):
    """Two full train+eval command runs with one flag set match byte for byte."""
    data = tmp_path / "data"
    assert cli_main(["synth", "--count", "14", "--seed", "3",
                     "--out", str(data)]) == 0
    flags = ["--seed", "3", "--batch-size", "4", "--lr", "0.003",
             "--epochs-diag", "2", "--epochs-vcon", "2", "--epochs-gen", "2"]
    artifacts = []
    for name in ("first", "second"):
        out = tmp_path / name
        assert cli_main(["train", "--dataset", str(data),
                         "--out", str(out)] + flags) == 0
        assert cli_main(["eval", "--dataset", str(data),
                         "--out", str(out)]) == 0
        artifacts.append({f: (out / f).read_bytes()
                          for f in ("report.tsv", "model.jdx", "train_log.tsv")})
    same = {f: artifacts[0][f] == artifacts[1][f] for f in artifacts[0]}
    ok = all(same.values())
    record("A8", ok, "repeated train+eval byte-identical: "
           + ", ".join(f"{f} {'yes' if v else 'NO'}" for f, v in same.items()))
    assert ok, same


def test_a9_augmentation_family_is_exact(record):
    """augment() yields exactly 80 distinct label-preserving variants,
    closed under quarter rotations."""
    sample = synthesize_dataset(3, seed=17)[1]
    variants = augment(sample)
    count_ok = len(variants) == 80
    images = {v.image.tobytes() for v in variants}
    distinct_ok = len(images) == 80
    labels_ok = all(v.diagnosis == sample.diagnosis
                    and v.labels == sample.labels
                    and v.references == sample.references for v in variants)
    closure_ok = all(np.ascontiguousarray(np.rot90(v.image)).tobytes() in images
                     for v in variants)
    identity_ok = all(
        np.array_equal(np.rot90(v.image, 4), v.image) for v in variants)
    ok = count_ok and distinct_ok and labels_ok and closure_ok and identity_ok
    record("A9", ok, f"{len(variants)} variants, {len(images)} distinct, "
                     f"labels preserved {labels_ok}, rotation closure "
                     f"{closure_ok and identity_ok}")
    assert count_ok and distinct_ok and labels_ok
    assert closure_ok and identity_ok
