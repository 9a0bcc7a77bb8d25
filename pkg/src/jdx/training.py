"""Three-phase training pipeline and the evaluation driver.

Phase 1 fits the visual encoder and decision head on image labels, drawing
one random member of the 80-variant augmentation family per sample each
epoch.  Phase 2 pretrains the sentence classifier on the training
references.  Phase 3 trains the justification generator against the
combined loss with the encoder, decision head, and sentence classifier all
frozen; since the encoder is frozen its features are computed once per
sample and cached, and no augmentation is applied.

Every phase logs one TSV row per epoch (no timestamps, so reruns with the
same flags produce byte-identical logs) and writes a checkpoint.  All
shuffling and initialization flows from the run seed.
"""

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .constraint import (classify_soft, combined_loss, constraint_loss_batch,
                         evaluate_constraint, pretrain_constraint,
                         soft_rows_for_batch)
from .dataset import random_variant
from .generator import (GeneratorConfig, JustificationModel, pad_targets,
                        sequence_loss)
from .metrics import build_report
from .numerics import (NumericsError, ParameterStore, Tensor, backward,
                       pause_recording, save_checkpoint)
from .numerics.adam import AdamState, adam_step
from .numerics.ops import masked_cross_entropy, scale
from .rng import Rng

DIAGNOSIS_CLASSES = ("benign", "malignant")


@dataclass
class RunConfig:
    """Knobs shared by the training and evaluation commands."""

    seed: int = 7
    dataset_dir: Path = None
    out_dir: Path = None
    batch_size: int = 64
    learning_rate: float = 0.0005
    alpha: float = 2.0
    epochs_diag: int = 25
    epochs_vcon: int = 60
    epochs_gen: int = 40
    max_len: int = 24
    refs_per_sample: int = 3


class TrainingLog:
    """Accumulates phase/epoch/loss rows; written as TSV."""

    def __init__(self):
        self.rows = []

    def add(self, phase, epoch, loss):
        self.rows.append((phase, epoch, loss))

    def write(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("phase\tepoch\tloss\n")
            for phase, epoch, loss in self.rows:
                fh.write(f"{phase}\t{epoch}\t{loss:.10f}\n")


def diagnosis_targets(samples):
    return np.array([DIAGNOSIS_CLASSES.index(s.diagnosis) for s in samples])


def _check_finite(loss, phase, epoch):
    value = loss.item()
    if not np.isfinite(value):
        raise NumericsError(f"non-finite loss in phase {phase}, epoch {epoch}")
    return value


def train_diagnosis(model, train_samples, config, log):
    """Phase 1: encoder plus decision head on per-epoch augmented batches."""
    rng = Rng(config.seed).spawn("phase-diag")
    trainable = {k: v for k, v in model.params.items()
                 if k.startswith(model.FROZEN_PREFIXES)}
    state = AdamState(lr=config.learning_rate)
    targets = diagnosis_targets(train_samples)
    for epoch in range(config.epochs_diag):
        order = list(range(len(train_samples)))
        rng.shuffle(order)
        aug_rng = rng.spawn(f"aug/{epoch}")
        epoch_loss = 0.0
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            images = np.stack([random_variant(train_samples[i], aug_rng).image
                               for i in idx])[:, None]
            probs = model.predict_diagnosis(model.encode_visual_features(Tensor(images)))
            loss = scale(masked_cross_entropy(probs, targets[idx]), 1.0 / len(idx))
            epoch_loss += _check_finite(loss, "diagnosis", epoch) * len(idx)
            backward(loss)
            adam_step(trainable, state)
        log.add("diagnosis", epoch, epoch_loss / len(order))
    return model


def diagnosis_accuracy(model, samples):
    probs = diagnosis_scores(model, samples)
    return float((probs.argmax(axis=1) == diagnosis_targets(samples)).mean())


def diagnosis_scores(model, samples, batch_size=256):
    """(N, 2) decision probabilities on clean images."""
    out = []
    with pause_recording():
        for start in range(0, len(samples), batch_size):
            images = np.stack([s.image for s in samples[start:start + batch_size]])[:, None]
            out.append(model.predict_diagnosis(
                model.encode_visual_features(Tensor(images))).data)
    return np.concatenate(out, axis=0)


def train_constraint_phase(train_samples, vocab, config, log):
    """Phase 2: classifier pretraining on encoded training references."""
    corpus = [(vocab.encode(ref, max_len=config.max_len), s.labels)
              for s in train_samples for ref in s.references]
    return pretrain_constraint(
        corpus, len(vocab), config.max_len, config.epochs_vcon,
        Rng(config.seed).spawn("phase-vcon").next_u64(),
        batch_size=config.batch_size, learning_rate=config.learning_rate,
        log=lambda epoch, loss: log.add("constraint", epoch, loss))


def _assert_attention_valid(attention):
    values = attention.data
    sums = values.reshape(values.shape[0], -1).sum(axis=1)
    if not (values > 0.0).all() or np.abs(sums - 1.0).max() > 1e-9:
        raise NumericsError("attention map violated its normalization invariant")


def cache_visual_features(model, samples, batch_size=64):
    """Frozen-encoder features and decision probabilities per sample."""
    features = []
    probs = []
    with pause_recording():
        for start in range(0, len(samples), batch_size):
            images = np.stack([s.image for s in samples[start:start + batch_size]])[:, None]
            f_v = model.encode_visual_features(Tensor(images))
            features.append(f_v.data.copy())
            probs.append(model.predict_diagnosis(f_v).data.copy())
    return np.concatenate(features), np.concatenate(probs)


def generator_forward_from_cache(model, f_v, diag_probs):
    """Trainable-head forward pass on cached frozen tensors."""
    chan = model.embed_diagnosis(Tensor(diag_probs))
    f_embed = model.apply_channel_attention(Tensor(f_v), chan)
    attention = model.visual_justification(f_embed)
    f_text = model.encode_text_feature(f_embed, attention, chan)
    return attention, f_text


def train_generator(model, vcon_params, train_samples, vocab, config, log):
    """Phase 3: justification generator against the combined loss."""
    if config.alpha < 0:
        raise ValueError(f"alpha must be non-negative, got {config.alpha}")
    rng = Rng(config.seed).spawn("phase-gen")
    features, diag_probs = cache_visual_features(model, train_samples)
    encoded = [[vocab.encode(ref, max_len=config.max_len) for ref in s.references]
               for s in train_samples]
    margin_ids = np.array([s.labels.margin_class for s in train_samples])
    shape_ids = np.array([s.labels.shape_class for s in train_samples])

    pairs = [(i, r) for i in range(len(train_samples))
             for r in range(min(config.refs_per_sample, len(train_samples[i].references)))]
    trainable = {k: v for k, v in model.params.items()
                 if k.startswith(model.GENERATOR_PREFIXES)}
    state = AdamState(lr=config.learning_rate)
    frozen_constraint = dict(vcon_params.items())
    for tensor in frozen_constraint.values():
        tensor.requires_grad = False

    probe = list(range(min(8, len(train_samples))))
    try:
        for epoch in range(config.epochs_gen):
            order = list(pairs)
            rng.shuffle(order)
            epoch_loss = 0.0
            for start in range(0, len(order), config.batch_size):
                batch = order[start:start + config.batch_size]
                sample_idx = [i for i, _ in batch]
                refs = [encoded[i][r] for i, r in batch]
                targets, weights = pad_targets(refs)
                attention, f_text = generator_forward_from_cache(
                    model, features[sample_idx], diag_probs[sample_idx])
                rows = model.decode_teacher_forced(f_text, targets)
                text_loss = sequence_loss(rows, targets, weights)
                if config.alpha > 0:
                    word_counts = [len(r.word_ids) for r in refs]
                    soft = soft_rows_for_batch(rows, word_counts, len(vocab))
                    margin, shape = classify_soft(vcon_params, soft, config.max_len)
                    lexicon_loss = constraint_loss_batch(
                        margin, shape, margin_ids[sample_idx], shape_ids[sample_idx])
                    loss = combined_loss(text_loss, lexicon_loss, config.alpha)
                else:
                    loss = combined_loss(text_loss, None, 0.0)
                epoch_loss += _check_finite(loss, "generator", epoch) * len(batch)
                backward(loss)
                adam_step(trainable, state)
            with pause_recording():
                attention, _ = generator_forward_from_cache(
                    model, features[probe], diag_probs[probe])
                _assert_attention_valid(attention)
            log.add("generator", epoch, epoch_loss / len(order))
    finally:
        for tensor in frozen_constraint.values():
            tensor.requires_grad = True
    return model


def combined_store(model, vcon_params):
    store = ParameterStore()
    for name, tensor in model.params.items():
        store.add(name, tensor)
    for name, tensor in vcon_params.items():
        store.add(name, tensor)
    return store


def train_full(train_samples, vocab, config, model=None):
    """All three phases; returns (model, vcon_params, log)."""
    log = TrainingLog()
    if model is None:
        gen_config = GeneratorConfig(vocab_size=len(vocab), max_len=config.max_len)
        model = JustificationModel(gen_config, seed=Rng(config.seed).spawn("model").next_u64())
    train_diagnosis(model, train_samples, config, log)
    vcon_params = train_constraint_phase(train_samples, vocab, config, log)
    train_generator(model, vcon_params, train_samples, vocab, config, log)
    return model, vcon_params, log


def write_checkpoints(out_dir, model, vcon_params, log):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out_dir / "diagnosis.jdx", model.params.subset(*model.FROZEN_PREFIXES))
    save_checkpoint(out_dir / "constraint.jdx", vcon_params)
    save_checkpoint(out_dir / "model.jdx", combined_store(model, vcon_params))
    log.write(out_dir / "train_log.tsv")


def eval_threads():
    raw = os.environ.get("JDX_THREADS", "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise ValueError(f"JDX_THREADS must be an integer, got {raw!r}") from exc
    return max(1, n)


def generate_for_samples(model, samples, vocab, threads=None):
    """Greedy sentences and decision probabilities for each sample."""
    threads = eval_threads() if threads is None else threads

    def decode_range(lo, hi):
        chunk = samples[lo:hi]
        with pause_recording():
            images = np.stack([s.image for s in chunk])[:, None]
            fwd = model.forward_visual(Tensor(images))
            sequences = model.decode_greedy(fwd.text_feature)
        sentences = [vocab.decode(seq.ids) for seq in sequences]
        return sentences, fwd.diagnosis_probs.data.copy(), fwd.attention.data.copy()

    if threads == 1 or len(samples) < 2 * threads:
        results = [decode_range(0, len(samples))]
    else:
        from concurrent.futures import ThreadPoolExecutor
        bounds = np.linspace(0, len(samples), threads + 1, dtype=int)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda b: decode_range(*b),
                                    zip(bounds[:-1], bounds[1:])))
    sentences = [s for chunk, _, _ in results for s in chunk]
    probs = np.concatenate([p for _, p, _ in results])
    attention = np.concatenate([a for _, _, a in results])
    return sentences, probs, attention


def evaluate_model(model, test_samples, train_samples, vocab, threads=None):
    """Greedy-decode the test split and assemble the full report."""
    sentences, probs, _ = generate_for_samples(model, test_samples, vocab, threads)
    references = [list(s.references) for s in test_samples]
    training_sentences = [ref for s in train_samples for ref in s.references]
    labels = diagnosis_targets(test_samples)
    return build_report(sentences, references, training_sentences,
                        probs[:, 1], labels)
