"""Diagnosis-justification network: encoder, decision head, attention, decoder.

The forward pipeline is: a three-stage conv encoder maps a 64x64 image to a
32-channel 8x8 feature grid; a mean-pool plus linear head yields the
benign/malignant decision; the decision probabilities are mapped through a
sigmoid linear layer to per-channel weights that rescale the features; a
small conv stack scores each grid cell and a spatial softmax turns the
scores into the exported attention map; the attended features are fused with
the channel-weighted features, passed through another conv stack, and
mean-pooled into the vector that seeds a two-layer LSTM sentence decoder.

The decoder consumes that vector as its step-0 input and the embedding of
the previous word thereafter, emitting one softmax row over the vocabulary
per step.  Rows align with the reference words followed by EOS, so the BOS
slot of a token sequence is never embedded.
"""

import math
from collections import namedtuple
from dataclasses import dataclass

import numpy as np

from .dataset import BOS, EOS, PAD, TokenSequence
from .imageutil import bilinear_resize, normalize_to_unit
from .numerics import ParameterStore, ShapeError, Tensor, pause_recording
from .numerics.ops import (add, broadcast_channel_scale, broadcast_spatial_scale,
                           conv2d, embedding_lookup, masked_cross_entropy, matmul,
                           max_pool2d, mean_pool, mul, relu, reshape, scale,
                           sigmoid, slice_cols, spatial_softmax, tanh,
                           vector_softmax)
from .rng import Rng


@dataclass(frozen=True)
class GeneratorConfig:
    """Network sizing; the word-embedding width must equal the channel count
    because the pooled text feature doubles as the decoder's step-0 input."""

    vocab_size: int
    image_size: int = 64
    encoder_channels: tuple = (8, 16, 32)
    embed_dim: int = 32
    hidden_dim: int = 64
    attention_hidden: int = 16
    max_len: int = 24

    def __post_init__(self):
        if self.image_size % 8 != 0:
            raise ValueError("image_size must be divisible by 8 (three 2x2 pools)")
        if self.embed_dim != self.encoder_channels[-1]:
            raise ValueError("embed_dim must equal the final encoder channel count")

    @property
    def channels(self):
        return self.encoder_channels[-1]

    @property
    def grid(self):
        return self.image_size // 8


def toy_config(vocab_size=11):
    """Miniature sizing for gradient checks."""
    return GeneratorConfig(vocab_size=vocab_size, image_size=16,
                           encoder_channels=(2, 3, 4), embed_dim=4,
                           hidden_dim=5, attention_hidden=3, max_len=6)


@dataclass(frozen=True)
class DiagnosisDecision:
    p_benign: float
    p_malignant: float

    def __post_init__(self):
        for p in (self.p_benign, self.p_malignant):
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"probability {p} outside [0,1]")
        if abs(self.p_benign + self.p_malignant - 1.0) > 1e-9:
            raise ValueError("decision probabilities must sum to 1")


@dataclass(frozen=True)
class AttentionMap:
    values: np.ndarray

    def __post_init__(self):
        v = self.values
        if v.ndim != 2:
            raise ValueError(f"attention map must be 2-d, got shape {v.shape}")
        if not (v > 0.0).all():
            raise ValueError("attention entries must be strictly positive")
        if abs(float(v.sum()) - 1.0) > 1e-9:
            raise ValueError("attention entries must sum to 1")


def _glorot(rng, shape, fan_in, fan_out):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, shape)


def _conv_param(rng, c_out, c_in, k):
    return _glorot(rng, (c_out, c_in, k, k), c_in * k * k, c_out * k * k)


def init_generator_parameters(config, rng):
    """Fresh parameter store: Glorot-uniform weights, zero biases."""
    c1, c2, c3 = config.encoder_channels
    k, e, h, v = config.channels, config.embed_dim, config.hidden_dim, config.vocab_size
    a = config.attention_hidden
    p = ParameterStore()

    def linear(name, n_in, n_out):
        p.add(f"{name}.w", _glorot(rng, (n_in, n_out), n_in, n_out))
        p.add(f"{name}.b", np.zeros(n_out))

    for name, (co, ci) in (("enc/c1", (c1, 1)), ("enc/c2", (c2, c1)), ("enc/c3", (c3, c2))):
        p.add(f"{name}.w", _conv_param(rng, co, ci, 3))
        p.add(f"{name}.b", np.zeros(co))
    linear("diag", k, 2)
    linear("embed_diag", 2, k)
    for name, (co, ci) in (("vis/c1", (a, k)), ("vis/c2", (1, a)),
                           ("text/c1", (k, k)), ("text/c2", (k, k))):
        p.add(f"{name}.w", _conv_param(rng, co, ci, 3))
        p.add(f"{name}.b", np.zeros(co))
    p.add("lstm/embed", _glorot(rng, (v, e), v, e))
    for layer, n_in in (("l1", e), ("l2", h)):
        p.add(f"lstm/{layer}.wx", _glorot(rng, (n_in, 4 * h), n_in, 4 * h))
        p.add(f"lstm/{layer}.wh", _glorot(rng, (h, 4 * h), h, 4 * h))
        p.add(f"lstm/{layer}.b", np.zeros(4 * h))
    linear("lstm/out", h, v)
    return p


VisualForward = namedtuple("VisualForward", [
    "features", "diagnosis_probs", "channel_weights", "weighted_features",
    "attention", "text_feature"])


class JustificationModel:
    """Bundles the parameter store with the forward pipeline."""

    GENERATOR_PREFIXES = ("embed_diag.", "vis/", "text/", "lstm/")
    FROZEN_PREFIXES = ("enc/", "diag.")

    def __init__(self, config, params=None, seed=0):
        self.config = config
        self.params = params if params is not None else \
            init_generator_parameters(config, Rng(seed).spawn("init"))

    def _bias(self, name, channels):
        return reshape(self.params[name], (1, channels, 1, 1))

    def _as_image_batch(self, images):
        if isinstance(images, Tensor):
            x = images
        else:
            arr = np.asarray(images, dtype=np.float64)
            if arr.ndim == 2:
                arr = arr[None, None]
            x = Tensor(arr)
        s = self.config.image_size
        if x.data.ndim != 4 or x.data.shape[1] != 1 or x.data.shape[2:] != (s, s):
            raise ShapeError(f"expected (N,1,{s},{s}) image batch, got {x.data.shape}")
        return x

    def encode_visual_features(self, images):
        x = self._as_image_batch(images)
        p = self.params
        for i, c in enumerate(self.config.encoder_channels, start=1):
            x = conv2d(x, p[f"enc/c{i}.w"], padding="same")
            x = relu(add(x, self._bias(f"enc/c{i}.b", c)))
            x = max_pool2d(x, (2, 2))
        return x

    def predict_diagnosis(self, features):
        p = self.params
        logits = add(matmul(mean_pool(features), p["diag.w"]), p["diag.b"])
        return vector_softmax(logits)

    def embed_diagnosis(self, diagnosis_probs):
        p = self.params
        return sigmoid(add(matmul(diagnosis_probs, p["embed_diag.w"]), p["embed_diag.b"]))

    def apply_channel_attention(self, features, channel_weights):
        if features.data.shape[1] != channel_weights.data.shape[-1]:
            raise ShapeError(
                f"channel mismatch: features {features.data.shape} "
                f"vs weights {channel_weights.data.shape}")
        return broadcast_channel_scale(features, channel_weights)

    def visual_justification(self, weighted_features):
        p = self.params
        h = conv2d(weighted_features, p["vis/c1.w"], padding="same")
        h = relu(add(h, self._bias("vis/c1.b", self.config.attention_hidden)))
        score = add(conv2d(h, p["vis/c2.w"], padding="same"), self._bias("vis/c2.b", 1))
        return spatial_softmax(score)

    def encode_text_feature(self, weighted_features, attention, channel_weights):
        p = self.params
        k = self.config.channels
        fused = broadcast_channel_scale(
            broadcast_spatial_scale(weighted_features, attention), channel_weights)
        combo = add(fused, weighted_features)
        t = conv2d(combo, p["text/c1.w"], padding="same")
        t = relu(add(t, self._bias("text/c1.b", k)))
        t = add(conv2d(t, p["text/c2.w"], padding="same"), self._bias("text/c2.b", k))
        return mean_pool(t)

    def forward_visual(self, images):
        f_v = self.encode_visual_features(images)
        probs = self.predict_diagnosis(f_v)
        weights = self.embed_diagnosis(probs)
        f_embed = self.apply_channel_attention(f_v, weights)
        attention = self.visual_justification(f_embed)
        f_text = self.encode_text_feature(f_embed, attention, weights)
        return VisualForward(f_v, probs, weights, f_embed, attention, f_text)

    # ------------------------------------------------------------------
    # decoder

    def _lstm_step(self, x, state):
        p = self.params
        h = self.config.hidden_dim
        (h1, c1), (h2, c2) = state
        new_state = []
        for layer, (hp, cp) in (("l1", (h1, c1)), ("l2", (h2, c2))):
            z = add(add(matmul(x, p[f"lstm/{layer}.wx"]),
                        matmul(hp, p[f"lstm/{layer}.wh"])), p[f"lstm/{layer}.b"])
            gi = sigmoid(slice_cols(z, 0, h))
            gf = sigmoid(slice_cols(z, h, 2 * h))
            gg = tanh(slice_cols(z, 2 * h, 3 * h))
            go = sigmoid(slice_cols(z, 3 * h, 4 * h))
            cn = add(mul(gf, cp), mul(gi, gg))
            hn = mul(go, tanh(cn))
            new_state.append((hn, cn))
            x = hn
        return x, new_state

    def _initial_state(self, n):
        h = self.config.hidden_dim
        return [(Tensor(np.zeros((n, h))), Tensor(np.zeros((n, h)))) for _ in range(2)]

    def _output_row(self, hidden):
        p = self.params
        return vector_softmax(add(matmul(hidden, p["lstm/out.w"]), p["lstm/out.b"]))

    def decode_teacher_forced(self, text_feature, targets):
        """Softmax rows for each target column.

        `targets` is an (N, T) int array of word indices followed by EOS and
        PAD fill; row t is predicted from the text feature at t=0 and from
        the embedding of targets[:, t-1] afterwards.
        """
        targets = np.asarray(targets, dtype=np.int64)
        if targets.ndim != 2 or targets.shape[0] != text_feature.data.shape[0]:
            raise ShapeError(f"bad target shape {targets.shape}")
        if targets.size and (targets.min() < 0 or targets.max() >= self.config.vocab_size):
            raise ValueError("reference token index outside the vocabulary")
        n, t_max = targets.shape
        state = self._initial_state(n)
        x = text_feature
        rows = []
        for t in range(t_max):
            hidden, state = self._lstm_step(x, state)
            rows.append(self._output_row(hidden))
            if t + 1 < t_max:
                x = embedding_lookup(self.params["lstm/embed"], targets[:, t])
        return rows

    def decode_greedy(self, text_feature):
        """Deterministic argmax decoding; returns one TokenSequence per row."""
        n = text_feature.data.shape[0]
        limit = self.config.max_len - 2
        with pause_recording():
            state = self._initial_state(n)
            x = text_feature
            emitted = np.full((n, limit), EOS, dtype=np.int64)
            for t in range(limit):
                hidden, state = self._lstm_step(x, state)
                ids = self._output_row(hidden).data.argmax(axis=1)
                emitted[:, t] = ids
                x = embedding_lookup(self.params["lstm/embed"], ids)
        sequences = []
        for row in emitted:
            words = []
            for idx in row:
                if idx == EOS:
                    break
                words.append(int(idx))
            sequences.append(TokenSequence((BOS,) + tuple(words) + (EOS,)))
        return sequences

    def per_step_distributions(self, text_feature, reference):
        """Teacher-forced softmax rows for a single reference sequence."""
        targets = np.asarray(reference.target_ids, dtype=np.int64)[None, :]
        return self.decode_teacher_forced(text_feature, targets)


def textual_difference_loss(rows, reference):
    """Sum over reference positions of cross-entropy against the target word."""
    targets = reference.target_ids
    if len(rows) < len(targets):
        raise ValueError(f"{len(rows)} distribution rows for {len(targets)} targets")
    total = None
    for row, target in zip(rows, targets):
        term = masked_cross_entropy(row, np.array([target]))
        total = term if total is None else add(total, term)
    return total


def sequence_loss(rows, targets, weights):
    """Batched textual difference: per-pair time sums averaged over the batch."""
    n = targets.shape[0]
    total = None
    for t, row in enumerate(rows):
        term = masked_cross_entropy(row, targets[:, t], weights[:, t])
        total = term if total is None else add(total, term)
    return scale(total, 1.0 / n)


def pad_targets(sequences, length=None):
    """Stack target id lists into (N, T) with PAD fill plus a weight mask."""
    rows = [np.asarray(s.target_ids, dtype=np.int64) for s in sequences]
    t_max = length if length is not None else max(len(r) for r in rows)
    targets = np.full((len(rows), t_max), PAD, dtype=np.int64)
    weights = np.zeros((len(rows), t_max))
    for i, r in enumerate(rows):
        if len(r) > t_max:
            raise ValueError(f"sequence of {len(r)} targets exceeds length {t_max}")
        targets[i, :len(r)] = r
        weights[i, :len(r)] = 1.0
    return targets, weights


def attention_to_image(attention_values, size):
    """Upsample a grid map to `size` and min-max normalize for export."""
    return normalize_to_unit(bilinear_resize(attention_values, size, size))


def config_from_parameters(params, image_size=64, max_len=24):
    """Recover the network sizing from checkpoint tensor shapes."""
    channels = tuple(params[f"enc/c{i}.w"].data.shape[0] for i in (1, 2, 3))
    vocab_size, embed_dim = params["lstm/embed"].data.shape
    hidden_dim = params["lstm/l1.wh"].data.shape[0]
    attention_hidden = params["vis/c1.w"].data.shape[0]
    return GeneratorConfig(vocab_size=vocab_size, image_size=image_size,
                           encoder_channels=channels, embed_dim=embed_dim,
                           hidden_dim=hidden_dim, attention_hidden=attention_hidden,
                           max_len=max_len)
