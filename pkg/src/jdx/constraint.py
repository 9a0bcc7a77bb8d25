"""Sentence-level lexicon classifier and the combined training loss.

A small convolutional text classifier reads a sentence (as token indices or
as per-step probability rows) and predicts its margin and shape categories.
Probability rows are folded through the embedding table as expected
embeddings, so the classifier stays differentiable with respect to a
decoder's softmax output and can steer generation toward sentences that
carry the correct visual words.  After pretraining on reference sentences
the classifier is frozen; its cross-entropy against the image's labels is
the constraint term added to the captioning loss with weight alpha.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .dataset import MARGIN_CLASSES, PAD, SHAPE_CLASSES, TokenSequence
from .numerics import ParameterStore, Tensor, backward, pause_recording
from .numerics.adam import AdamState, adam_step
from .numerics.ops import (add, concat, conv2d, embedding_lookup,
                           masked_cross_entropy, matmul, max_pool2d, mul,
                           relu, reshape, scale, vector_softmax)
from .rng import Rng

CONV_WIDTHS = (2, 3, 4)
FILTERS_PER_WIDTH = 32
EMBED_DIM = 32


@dataclass(frozen=True)
class LexiconPrediction:
    margin_probs: np.ndarray
    shape_probs: np.ndarray

    def __post_init__(self):
        if self.margin_probs.shape != (len(MARGIN_CLASSES),) or \
                self.shape_probs.shape != (len(SHAPE_CLASSES),):
            raise ValueError("prediction vector lengths must match category counts")
        for p in (self.margin_probs, self.shape_probs):
            if abs(float(p.sum()) - 1.0) > 1e-9:
                raise ValueError("prediction probabilities must sum to 1")


def _glorot(rng, shape, fan_in, fan_out):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, shape)


def init_constraint_parameters(vocab_size, rng, embed_dim=EMBED_DIM):
    p = ParameterStore()
    p.add("vcon/embed", _glorot(rng, (vocab_size, embed_dim), vocab_size, embed_dim))
    for w in CONV_WIDTHS:
        fan_in = w * embed_dim
        p.add(f"vcon/conv{w}.w", _glorot(rng, (FILTERS_PER_WIDTH, 1, w, embed_dim),
                                         fan_in, FILTERS_PER_WIDTH * w * embed_dim))
        p.add(f"vcon/conv{w}.b", np.zeros(FILTERS_PER_WIDTH))
    total = FILTERS_PER_WIDTH * len(CONV_WIDTHS)
    p.add("vcon/margin.w", _glorot(rng, (total, len(MARGIN_CLASSES)), total, len(MARGIN_CLASSES)))
    p.add("vcon/margin.b", np.zeros(len(MARGIN_CLASSES)))
    p.add("vcon/shape.w", _glorot(rng, (total, len(SHAPE_CLASSES)), total, len(SHAPE_CLASSES)))
    p.add("vcon/shape.b", np.zeros(len(SHAPE_CLASSES)))
    return p


def pad_word_ids(sequences, max_len):
    """Word indices (BOS/EOS stripped) padded with PAD to a fixed width."""
    out = np.full((len(sequences), max_len), PAD, dtype=np.int64)
    for i, seq in enumerate(sequences):
        words = seq.word_ids if isinstance(seq, TokenSequence) else tuple(seq)
        if not words:
            raise ValueError("cannot classify an empty sentence")
        if len(words) > max_len:
            raise ValueError(f"sentence of {len(words)} words exceeds max_len {max_len}")
        out[i, :len(words)] = words
    return out


def _heads(params, embedded, n):
    """Conv banks over (N, T, E) embeddings, max over time, two softmax heads."""
    x = reshape(embedded, (n, 1, embedded.data.shape[1], embedded.data.shape[2]))
    pooled = []
    for w in CONV_WIDTHS:
        h = conv2d(x, params[f"vcon/conv{w}.w"], padding="valid")
        h = relu(add(h, reshape(params[f"vcon/conv{w}.b"], (1, FILTERS_PER_WIDTH, 1, 1))))
        h = max_pool2d(h, (h.data.shape[2], 1))
        pooled.append(reshape(h, (n, FILTERS_PER_WIDTH)))
    features = concat(*pooled, axis=1)
    margin = vector_softmax(add(matmul(features, params["vcon/margin.w"]),
                                params["vcon/margin.b"]))
    shape = vector_softmax(add(matmul(features, params["vcon/shape.w"]),
                               params["vcon/shape.b"]))
    return margin, shape


def classify_tokens(params, sequences, max_len):
    """Hard-token path: embedding lookup on padded word indices."""
    ids = pad_word_ids(sequences, max_len)
    if ids.max() >= params["vcon/embed"].data.shape[0]:
        raise ValueError("token index outside the vocabulary")
    embedded = embedding_lookup(params["vcon/embed"], ids)
    return _heads(params, embedded, len(sequences))


def soft_rows_with_padding(rows, n, max_len, vocab_size):
    """Extend per-step probability rows with one-hot PAD rows to max_len."""
    if len(rows) > max_len:
        raise ValueError(f"{len(rows)} rows exceed max_len {max_len}")
    pad_row = np.zeros((n, vocab_size))
    pad_row[:, PAD] = 1.0
    return list(rows) + [Tensor(pad_row)] * (max_len - len(rows))


def soft_rows_for_batch(rows, word_counts, vocab_size):
    """Per-position rows for a mixed-length batch.

    Position t keeps the decoder's probability row for pairs still inside
    their sentence (t < word count) and substitutes a PAD one-hot for pairs
    already past theirs, so every pair is classified on exactly its own
    words.  Gradients flow only through the kept rows.
    """
    counts = np.asarray(word_counts)
    n = counts.shape[0]
    pad_row = np.zeros((n, vocab_size))
    pad_row[:, PAD] = 1.0
    out = []
    for t in range(int(counts.max())):
        mask = (counts > t).astype(np.float64)[:, None]
        if mask.all():
            out.append(rows[t])
        else:
            out.append(add(mul(rows[t], Tensor(mask)), Tensor((1.0 - mask) * pad_row)))
    return out


def classify_soft(params, rows, max_len):
    """Differentiable path: expected embeddings of probability rows.

    `rows` is a list of (N, vocab) probability tensors covering the word
    positions; PAD one-hot rows are appended so both paths see identical
    sequence geometry.
    """
    if not rows:
        raise ValueError("cannot classify an empty sentence")
    vocab_size, embed_dim = params["vcon/embed"].data.shape
    n = rows[0].data.shape[0]
    for row in rows:
        if row.data.shape != (n, vocab_size):
            raise ValueError(f"probability row shape {row.data.shape} does not "
                             f"match vocabulary size {vocab_size}")
    padded = soft_rows_with_padding(rows, n, max_len, vocab_size)
    expected = [reshape(matmul(row, params["vcon/embed"]), (n, 1, embed_dim))
                for row in padded]
    embedded = concat(*expected, axis=1)
    return _heads(params, embedded, n)


def classify_sentence(params, sentence, max_len):
    """Single-sentence entry point accepting either input form."""
    if isinstance(sentence, TokenSequence):
        margin, shape = classify_tokens(params, [sentence], max_len)
    else:
        rows = [row if isinstance(row, Tensor) else Tensor(np.asarray(row, dtype=np.float64))
                for row in sentence]
        rows = [reshape(row, (1, row.data.shape[-1])) if row.data.ndim == 1 else row
                for row in rows]
        margin, shape = classify_soft(params, rows, max_len)
    return LexiconPrediction(margin.data[0].copy(), shape.data[0].copy())


def constraint_loss(prediction, labels):
    """Cross-entropy of both heads against the ground-truth classes."""
    return float(-np.log(prediction.margin_probs[labels.margin_class])
                 - np.log(prediction.shape_probs[labels.shape_class]))


def constraint_loss_batch(margin_probs, shape_probs, margin_ids, shape_ids):
    """Batch-mean constraint term as a graph node."""
    n = margin_probs.data.shape[0]
    total = add(masked_cross_entropy(margin_probs, margin_ids),
                masked_cross_entropy(shape_probs, shape_ids))
    return scale(total, 1.0 / n)


def combined_loss(text_loss, lexicon_loss, alpha):
    """Weighted sum; alpha 0 returns the text loss untouched."""
    if alpha < 0:
        raise ValueError(f"alpha must be non-negative, got {alpha}")
    if alpha == 0:
        return text_loss
    if isinstance(text_loss, Tensor):
        return add(text_loss, scale(lexicon_loss, alpha))
    return text_loss + alpha * lexicon_loss


def pretrain_constraint(corpus, vocab_size, max_len, epochs, seed,
                        batch_size=64, learning_rate=0.0005, log=None):
    """Train the classifier on (sequence, labels) pairs with the hard path.

    Returns the parameter store; the caller is responsible for excluding it
    from any later optimizer.
    """
    if not corpus:
        raise ValueError("empty pretraining corpus")
    present_margins = {labels.margin_class for _, labels in corpus}
    present_shapes = {labels.shape_class for _, labels in corpus}
    if len(present_margins) < len(MARGIN_CLASSES) or len(present_shapes) < len(SHAPE_CLASSES):
        warnings.warn("pretraining corpus is missing some lexicon classes; proceeding")
    rng = Rng(seed)
    params = init_constraint_parameters(vocab_size, rng.spawn("init"))
    trainable = dict(params.items())
    state = AdamState(lr=learning_rate)
    order_rng = rng.spawn("order")
    for epoch in range(epochs):
        order = list(range(len(corpus)))
        order_rng.shuffle(order)
        epoch_loss = 0.0
        for start in range(0, len(order), batch_size):
            batch = [corpus[i] for i in order[start:start + batch_size]]
            seqs = [s for s, _ in batch]
            margin_ids = np.array([l.margin_class for _, l in batch])
            shape_ids = np.array([l.shape_class for _, l in batch])
            margin, shape = classify_tokens(params, seqs, max_len)
            loss = constraint_loss_batch(margin, shape, margin_ids, shape_ids)
            epoch_loss += loss.item() * len(batch)
            backward(loss)
            adam_step(trainable, state)
        if log is not None:
            log(epoch, epoch_loss / len(corpus))
    return params


def evaluate_constraint(params, corpus, max_len, batch_size=256):
    """Margin and shape accuracy of the hard-token path."""
    correct_margin = correct_shape = 0
    with pause_recording():
        for start in range(0, len(corpus), batch_size):
            batch = corpus[start:start + batch_size]
            margin, shape = classify_tokens(params, [s for s, _ in batch], max_len)
            pm = margin.data.argmax(axis=1)
            ps = shape.data.argmax(axis=1)
            for i, (_, labels) in enumerate(batch):
                correct_margin += pm[i] == labels.margin_class
                correct_shape += ps[i] == labels.shape_class
    return correct_margin / len(corpus), correct_shape / len(corpus)
