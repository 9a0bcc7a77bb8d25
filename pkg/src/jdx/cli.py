"""Command-line driver: synth, train, eval, infer, gradcheck.

Every command is deterministic for a given flag set, so reruns regenerate
byte-identical artifacts.  The evaluation fan-out honours the JDX_THREADS
environment variable (default 1).
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from .dataset import load_dataset, save_dataset, split, synthesize_dataset, Vocabulary
from .generator import JustificationModel, attention_to_image, config_from_parameters
from .imageutil import read_pgm, write_pgm
from .metrics import EvalReport
from .numerics import ParameterStore, Tensor, load_checkpoint, pause_recording
from .training import (RunConfig, evaluate_model, train_full, write_checkpoints)
from .verify import run_full_check


def _fail(message):
    print(f"error: {message}", file=sys.stderr)
    return 1


def cmd_synth(args):
    samples = synthesize_dataset(args.count, args.seed)
    train, test = split(samples, 0.8, args.seed)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        return _fail(f"cannot create {out}: {exc}")
    save_dataset(out, train, test)
    print(f"wrote {len(train)} train / {len(test)} test samples to {out}")
    return 0


def _config_from_args(args):
    return RunConfig(seed=args.seed, dataset_dir=Path(args.dataset),
                     out_dir=Path(args.out), batch_size=args.batch_size,
                     learning_rate=args.lr, alpha=args.alpha,
                     epochs_diag=args.epochs_diag, epochs_vcon=args.epochs_vcon,
                     epochs_gen=args.epochs_gen, max_len=args.max_len)


def cmd_train(args):
    config = _config_from_args(args)
    try:
        train, _, vocab = load_dataset(config.dataset_dir)
    except (FileNotFoundError, ValueError) as exc:
        return _fail(str(exc))
    if config.alpha < 0:
        return _fail(f"alpha must be non-negative, got {config.alpha}")
    model, vcon_params, log = train_full(train, vocab, config)
    write_checkpoints(config.out_dir, model, vcon_params, log)
    vocab.save(config.out_dir / "vocab.txt")
    print(f"wrote checkpoints and training log to {config.out_dir}")
    return 0


def _load_model(out_dir, max_len):
    arrays = load_checkpoint(Path(out_dir) / "model.jdx")
    params = ParameterStore()
    for name, array in arrays.items():
        if not name.startswith("vcon/"):
            params.add(name, array)
    config = config_from_parameters(params, max_len=max_len)
    return JustificationModel(config, params=params)


def cmd_eval(args):
    try:
        train, test, _ = load_dataset(Path(args.dataset))
        vocab = Vocabulary.load(Path(args.out) / "vocab.txt")
        model = _load_model(args.out, args.max_len)
    except (FileNotFoundError, ValueError) as exc:
        return _fail(str(exc))
    report = evaluate_model(model, test, train, vocab)
    report.write(Path(args.out) / "report.tsv")
    sys.stdout.write(report.to_tsv())
    return 0


def cmd_infer(args):
    out = Path(args.out)
    try:
        vocab = Vocabulary.load(out / "vocab.txt")
        model = _load_model(out, args.max_len)
        image = read_pgm(Path(args.image))
    except (FileNotFoundError, ValueError) as exc:
        return _fail(str(exc))
    size = model.config.image_size
    if image.shape != (size, size):
        return _fail(f"expected a {size}x{size} image, got {image.shape}")
    with pause_recording():
        fwd = model.forward_visual(Tensor(image[None, None]))
        sequence = model.decode_greedy(fwd.text_feature)[0]
    sentence = vocab.decode(sequence.ids)
    p_benign, p_malignant = fwd.diagnosis_probs.data[0]
    with open(out / "sentence.txt", "w", encoding="utf-8") as fh:
        fh.write(sentence + "\n")
    with open(out / "decision.tsv", "w", encoding="utf-8") as fh:
        fh.write(f"benign\t{p_benign:.6f}\nmalignant\t{p_malignant:.6f}\n")
    write_pgm(out / "attention.pgm", attention_to_image(fwd.attention.data[0, 0], size))
    print(sentence)
    return 0


def cmd_gradcheck(args):
    ok, lines = run_full_check(seed=args.seed)
    for line in lines:
        print(line)
    print("gradient check:", "PASS" if ok else "FAIL")
    return 0 if ok else 1


def build_parser():
    parser = argparse.ArgumentParser(
        prog="jdx",
        description="Synthetic diagnosis-justification pipeline: dataset "
                    "synthesis, three-phase training, evaluation, inference.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset tree")
    p.add_argument("--count", type=int, default=605)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train", help="run the three training phases")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--alpha", type=float, default=2.0)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=0.0005)
    p.add_argument("--epochs-diag", type=int, default=25)
    p.add_argument("--epochs-vcon", type=int, default=60)
    p.add_argument("--epochs-gen", type=int, default=40)
    p.add_argument("--max-len", type=int, default=24)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a trained model on the test split")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--max-len", type=int, default=24)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("infer", help="decision, sentence, and attention for one image")
    p.add_argument("image")
    p.add_argument("--out", required=True)
    p.add_argument("--max-len", type=int, default=24)
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("gradcheck", help="finite-difference verification of all gradients")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_gradcheck)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
