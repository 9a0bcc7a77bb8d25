"""Randomized gradient verification for every op and the full training loss.

Each op case builds a small random graph through the `forward_op` dispatch
table (so a corrupted backward rule registered there is caught), reduces it
to a scalar, and compares reverse-mode gradients against central finite
differences.  The end-to-end case assembles the complete combined loss on a
miniature model and checks every generator parameter.  Inputs that feed
kinked or tie-breaking ops (relu, max pooling) are sampled away from the
kink so the difference quotient is valid.
"""

import numpy as np

from .constraint import (constraint_loss_batch, init_constraint_parameters,
                         classify_soft, combined_loss, soft_rows_for_batch)
from .dataset import BOS, EOS, TokenSequence
from .generator import (JustificationModel, pad_targets, sequence_loss,
                        toy_config)
from .numerics import Tensor, backward, grad_check, pause_recording
from .numerics.gradcheck import GradCheckReport
from .numerics.ops import forward_op
from .rng import Rng


def _t(rng, shape, lo=-1.0, hi=1.0):
    return Tensor(rng.uniform(lo, hi, shape), requires_grad=True)


def _away_from_zero(rng, shape, margin=0.2):
    signs = np.where(rng.fill_uniform(shape) < 0.5, -1.0, 1.0)
    return Tensor(signs * rng.uniform(margin, 1.0, shape), requires_grad=True)


def _sum(x):
    return forward_op("sum_all", (x,))


def op_cases(rng):
    """(name, fn, params) triples; fn rebuilds its graph on every call."""
    cases = []

    def case(name, params, build):
        cases.append((name, lambda: _sum(build()), params))

    a = _t(rng, (3, 4))
    b = _t(rng, (3, 4))
    row = _t(rng, (4,))
    case("add", {"a": a, "b": b}, lambda: forward_op("add", (a, b)))
    case("add_broadcast", {"a": a, "row": row}, lambda: forward_op("add", (a, row)))
    case("sub", {"a": a, "b": b}, lambda: forward_op("sub", (a, b)))
    case("mul", {"a": a, "b": b}, lambda: forward_op("mul", (a, b)))
    case("scale", {"a": a}, lambda: forward_op("scale", (a,), c=-1.7))

    m1 = _t(rng, (3, 5))
    m2 = _t(rng, (5, 2))
    case("matmul", {"m1": m1, "m2": m2}, lambda: forward_op("matmul", (m1, m2)))

    k = _away_from_zero(rng, (2, 6))
    case("relu", {"k": k}, lambda: forward_op("relu", (k,)))
    case("sigmoid", {"a": a}, lambda: forward_op("sigmoid", (a,)))
    case("tanh", {"b": b}, lambda: forward_op("tanh", (b,)))

    img = _t(rng, (2, 2, 6, 6))
    ker = _t(rng, (3, 2, 3, 3))
    case("conv2d_same", {"img": img, "ker": ker},
         lambda: forward_op("conv2d", (img, ker), padding="same"))
    case("conv2d_valid", {"img": img, "ker": ker},
         lambda: forward_op("conv2d", (img, ker), padding="valid"))
    case("conv2d_stride2", {"img": img, "ker": ker},
         lambda: forward_op("conv2d", (img, ker), padding="same", stride=2))

    pool_in = _t(rng, (2, 2, 6, 6))
    case("max_pool2d", {"pool_in": pool_in},
         lambda: forward_op("max_pool2d", (pool_in,), window=(2, 2)))

    sm = _t(rng, (2, 1, 3, 3))
    weights = Tensor(rng.uniform(0.5, 1.5, (2, 1, 3, 3)))
    case("spatial_softmax", {"sm": sm},
         lambda: forward_op("mul", (forward_op("spatial_softmax", (sm,)), weights)))
    vs = _t(rng, (3, 5))
    vweights = Tensor(rng.uniform(0.5, 1.5, (3, 5)))
    case("vector_softmax", {"vs": vs},
         lambda: forward_op("mul", (forward_op("vector_softmax", (vs,)), vweights)))

    feat = _t(rng, (2, 3, 4, 4))
    chan = _t(rng, (2, 3))
    smap = _t(rng, (2, 1, 4, 4))
    case("broadcast_channel_scale", {"feat": feat, "chan": chan},
         lambda: forward_op("broadcast_channel_scale", (feat, chan)))
    case("broadcast_spatial_scale", {"feat": feat, "smap": smap},
         lambda: forward_op("broadcast_spatial_scale", (feat, smap)))

    c1 = _t(rng, (2, 3))
    c2 = _t(rng, (2, 4))
    case("concat", {"c1": c1, "c2": c2},
         lambda: forward_op("concat", (c1, c2), axis=1))
    case("mean_pool", {"feat": feat}, lambda: forward_op("mean_pool", (feat,)))

    table = _t(rng, (7, 3))
    idx = np.array([[1, 4, 2], [6, 0, 4]])
    case("embedding_lookup", {"table": table},
         lambda: forward_op("embedding_lookup", (table,), indices=idx))

    case("slice_cols", {"m1": m1},
         lambda: forward_op("slice_cols", (m1,), start=1, stop=4))
    case("reshape", {"feat": feat},
         lambda: forward_op("reshape", (feat,), shape=(2, 48)))
    case("sum_all", {"a": a}, lambda: forward_op("sum_all", (a,)))

    logits = _t(rng, (3, 5))
    targets = np.array([2, 0, 4])
    ce_weights = np.array([1.0, 0.0, 0.5])
    cases.append(("masked_cross_entropy", lambda: forward_op(
        "masked_cross_entropy",
        (forward_op("vector_softmax", (logits,)),),
        indices=targets, weights=ce_weights), {"logits": logits}))
    return cases


def check_ops(seed=0, h=1e-5, tol=1e-4):
    """Gradient-check every op; returns (name, report) pairs."""
    rng = Rng(seed)
    results = []
    for name, fn, params in op_cases(rng):
        results.append((name, grad_check(fn, params, h=h, tol=tol)))
    return results


def _toy_setup(seed):
    cfg = toy_config(vocab_size=11)
    model = JustificationModel(cfg, seed=seed)
    # Glorot magnitudes leave the attention and decision branches of the
    # miniature model with gradients near the difference-quotient roundoff
    # floor; inflating those weights keeps every group well above it.
    for name, tensor in model.params.items():
        if name.endswith(".w") and name.split(".")[0].split("/")[0] in \
                ("diag", "embed_diag", "vis", "text"):
            tensor.data *= 6.0
    rng = Rng(seed).spawn("data")
    images = Tensor(rng.uniform(0.0, 1.0, (2, 1, cfg.image_size, cfg.image_size)))
    refs = [TokenSequence((BOS, 4, 7, 5, EOS)), TokenSequence((BOS, 9, 6, EOS))]
    targets, weights = pad_targets(refs)
    vcon = init_constraint_parameters(cfg.vocab_size, Rng(seed).spawn("vcon"),
                                      embed_dim=4)
    margin_ids = np.array([1, 3])
    shape_ids = np.array([0, 2])
    word_counts = [len(r.word_ids) for r in refs]
    return cfg, model, images, targets, weights, vcon, margin_ids, shape_ids, word_counts


def end_to_end_loss(seed=0, alpha=2.0):
    """Builder for the combined loss on the miniature model."""
    (cfg, model, images, targets, weights, vcon,
     margin_ids, shape_ids, word_counts) = _toy_setup(seed)

    def fn():
        fwd = model.forward_visual(images)
        rows = model.decode_teacher_forced(fwd.text_feature, targets)
        text_loss = sequence_loss(rows, targets, weights)
        soft = soft_rows_for_batch(rows, word_counts, cfg.vocab_size)
        margin, shape = classify_soft(vcon, soft, cfg.max_len)
        lexicon_loss = constraint_loss_batch(margin, shape, margin_ids, shape_ids)
        return combined_loss(text_loss, lexicon_loss, alpha)

    return fn, model, vcon


def check_end_to_end(seed=0, h=1e-5, tol=1e-4, include_constraint=False):
    """Finite-difference check of the combined loss for every model parameter."""
    fn, model, vcon = end_to_end_loss(seed)
    params = dict(model.params.items())
    if include_constraint:
        params.update(vcon.items())
    return grad_check(fn, params, h=h, tol=tol)


def check_constraint_rows(seed=0, h=1e-5, tol=1e-4):
    """Finite differences of the constraint loss w.r.t. probability rows.

    Rows are renormalized after each perturbation so the comparison stays on
    the probability simplex the analytic gradient lives on; the row logits
    are the checked parameters.
    """
    cfg = toy_config(vocab_size=11)
    rng = Rng(seed)
    vcon = init_constraint_parameters(cfg.vocab_size, rng.spawn("vcon"), embed_dim=4)
    margin_ids = np.array([2, 4])
    shape_ids = np.array([1, 3])
    row_params = {f"row{t}": Tensor(rng.uniform(-1.0, 1.0, (2, cfg.vocab_size)),
                                    requires_grad=True) for t in range(3)}

    def fn():
        soft = [forward_op("vector_softmax", (row_params[f"row{t}"],)) for t in range(3)]
        margin, shape = classify_soft(vcon, soft, cfg.max_len)
        return constraint_loss_batch(margin, shape, margin_ids, shape_ids)

    return grad_check(fn, row_params, h=h, tol=tol)


def check_channel_weight_paths(seed=0, h=1e-5):
    """Finite-difference sensitivity of the loss to the channel weights.

    Verifies the gradient reaches the decision embedding through both its
    uses (feature rescaling and the fused text-feature product): the
    analytic gradient matches differences and is nonzero.
    """
    (cfg, model, images, targets, weights, vcon,
     margin_ids, shape_ids, word_counts) = _toy_setup(seed)
    bump = Tensor(np.zeros((2, cfg.channels)), requires_grad=True)

    def fn():
        fwd_features = model.encode_visual_features(images)
        probs = model.predict_diagnosis(fwd_features)
        chan = forward_op("add", (model.embed_diagnosis(probs), bump))
        f_embed = model.apply_channel_attention(fwd_features, chan)
        attention = model.visual_justification(f_embed)
        f_text = model.encode_text_feature(f_embed, attention, chan)
        rows = model.decode_teacher_forced(f_text, targets)
        return sequence_loss(rows, targets, weights)

    report = grad_check(fn, {"channel_weights": bump}, h=h)
    loss = fn()
    backward(loss)
    grad_norm = float(np.abs(bump.grad).max())
    return report, grad_norm


def run_full_check(seed=0):
    """Everything the verification command reports: (ok, lines)."""
    lines = []
    ok = True
    for name, report in check_ops(seed):
        ok &= report.ok
        for line in report.lines():
            lines.append(f"op {name}: {line}")
    e2e = check_end_to_end(seed)
    ok &= e2e.ok
    for line in e2e.lines():
        lines.append(f"model {line}")
    rows_report = check_constraint_rows(seed)
    ok &= rows_report.ok
    for line in rows_report.lines():
        lines.append(f"constraint {line}")
    paths_report, grad_norm = check_channel_weight_paths(seed)
    ok &= paths_report.ok and grad_norm > 0.0
    for line in paths_report.lines():
        lines.append(f"paths {line}")
    lines.append(f"paths channel-weight gradient magnitude {grad_norm:.3e} "
                 f"{'PASS' if grad_norm > 0 else 'FAIL'}")
    return ok, lines
