"""``sabground`` command-line entry point."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import pnm
from .ablation import format_table, run_ladder
from .checkpoint import CheckpointError, load_checkpoint, read_checkpoint
from .config import ConfigError, from_dict, load_config
from .data import generate_dataset, read_manifest
from .gradcheck import SCOPES, TOLERANCE, run_scope
from .model import gate_vector, model_forward, visualize_channels
from .train import build_model, evaluate, format_record, train

log = logging.getLogger("sabground")


class CommandError(RuntimeError):
    """Failure reported to the user as a one-line message with exit status 2."""


def _load_samples(path):
    try:
        return read_manifest(path).samples
    except (OSError, ValueError) as exc:
        raise CommandError(f"cannot read dataset {path}: {exc}") from exc


def _model_from_checkpoint(path):
    try:
        info = read_checkpoint(path)
        cfg = from_dict(info.config)
        model = build_model(cfg)
        load_checkpoint(path, model)
    except (OSError, CheckpointError, ConfigError) as exc:
        raise CommandError(f"cannot load checkpoint {path}: {exc}") from exc
    return cfg, model


def cmd_gen_data(args):
    if args.size < 32 or args.size % 32:
        raise CommandError(f"--size must be a positive multiple of 32, got {args.size}")
    if args.count < 1:
        raise CommandError("--count must be at least 1")
    try:
        generate_dataset(args.seed, args.count, args.size, out_dir=args.out)
    except OSError as exc:
        raise CommandError(f"cannot write dataset to {args.out}: {exc}") from exc
    print(f"wrote {args.count} samples to {args.out}")
    return 0


def cmd_train(args):
    out = Path(args.out)
    if args.resume:
        # The run's frozen config travels with the checkpoint; only paths come from the command line.
        try:
            info = read_checkpoint(args.resume)
            cfg = from_dict(info.config)
        except (OSError, CheckpointError, ConfigError) as exc:
            raise CommandError(f"cannot resume from {args.resume}: {exc}") from exc
        start = info.step
    else:
        cfg = load_config(args.config)
        start = 0
    cfg = cfg.replace(paths={"data": str(args.data), "out": str(out)})
    steps = args.steps if args.steps is not None else max(0, cfg.optim.total_steps - start)
    samples = _load_samples(args.data)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.to_json() + "\n", encoding="utf-8")

    with open(out / "train.log", "a", encoding="utf-8") as logfile:
        def on_log(rec):
            line = format_record(rec)
            print(line, flush=True)
            logfile.write(line + "\n")
            logfile.flush()

        try:
            result = train(cfg, samples, steps=steps, out_dir=out, resume=args.resume, on_log=on_log)
        except FloatingPointError as exc:
            print(f"error: {exc}; last good checkpoint kept at {out / 'last.ckpt'}", file=sys.stderr)
            return 3
        summary = f"final_step={result.step} train_miou={result.train_miou:.4f} held_in_miou={result.slice_miou:.4f}"
        print(summary)
        logfile.write(summary + "\n")

    with open(out / "history.tsv", "w", encoding="utf-8") as fh:
        fh.write("step\tlr\tloss\tmiou\n")
        for r in result.history:
            fh.write(f"{r['step']}\t{r['lr']:.6g}\t{r['loss']:.6f}\t{r['miou']:.4f}\n")
    if result.history:
        from .plotting import plot_training

        plot_training(result.history, result.evals, out / "training.png")
    return 0


def cmd_eval(args):
    _, model = _model_from_checkpoint(args.checkpoint)
    samples = _load_samples(args.data)
    score = evaluate(model, samples, metric=args.metric)
    print(f"{args.metric}={score:.4f}")
    return 0


def cmd_ablate(args):
    if args.seeds < 1:
        raise CommandError(f"--seeds must be at least 1, got {args.seeds}")
    cfg = load_config(args.config)
    train_samples = _load_samples(args.data)
    eval_samples = _load_samples(args.eval_data) if args.eval_data else train_samples[: cfg.train.eval_slice]

    def report(rung, seed, score):
        print(f"rung={rung.label} seed={seed} miou={score:.4f}", flush=True)

    rungs = run_ladder(cfg, args.ladder, train_samples, eval_samples, seeds=args.seeds, steps=args.steps, on_result=report)
    table = format_table(rungs, args.ladder)
    print(table, end="")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"ablation_{args.ladder}.tsv").write_text(table, encoding="utf-8")
        from .plotting import plot_ladder

        plot_ladder(rungs, f"{args.ladder} ladder, {args.seeds} seed(s)", out / f"ablation_{args.ladder}.png")
    return 0


def cmd_gradcheck(args):
    results = run_scope(args.scope, seeds=args.seeds)
    worst = 0.0
    for r in results:
        status = "ok" if r.max_rel_error < TOLERANCE else "FAIL"
        print(f"op={r.name} seeds={r.seeds} max_rel_error={r.max_rel_error:.3e} {status}")
        worst = max(worst, r.max_rel_error)
    print(f"scope={args.scope} max_rel_error={worst:.3e}")
    return 0 if worst < TOLERANCE else 1


def cmd_visualize(args):
    cfg, model = _model_from_checkpoint(args.checkpoint)
    try:
        image = pnm.read_image(args.image)
    except (OSError, ValueError) as exc:
        raise CommandError(f"cannot read image {args.image}: {exc}") from exc
    try:
        maps = visualize_channels(model, image, args.level)
    except IndexError as exc:
        raise CommandError(str(exc)) from exc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, m in enumerate(maps):
        pnm.write_gray(out / f"channel_{i:03d}.pgm", m)
    mask = model_forward(model, image, args.question, args.answer).mask[0]
    pnm.write_mask(out / "mask.pgm", mask)
    if cfg.model.attention == "cross":
        gate = gate_vector(model, args.question, args.answer)
        (out / "gate.txt").write_text("\n".join(f"{g:.9f}" for g in gate) + "\n", encoding="utf-8")
    else:
        gate = None
        (out / "gate.txt").write_text("# self-attention blocks have no sentence gate\n", encoding="utf-8")
    if args.montage:
        from .plotting import plot_channel_montage

        plot_channel_montage(maps, mask, gate, args.montage)
    print(f"wrote {len(maps)} channel maps, mask.pgm and gate.txt to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sabground", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="render a synthetic shapes grounding dataset")
    g.add_argument("--seed", type=int, default=1)
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--size", type=int, default=64)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a grounding model")
    t.add_argument("--config", help="JSON config; defaults when omitted")
    t.add_argument("--data", required=True, help="manifest file or dataset directory")
    t.add_argument("--out", required=True, help="directory for logs, checkpoints and figures")
    t.add_argument("--steps", type=int, help="optimizer steps to take (default: rest of the schedule)")
    t.add_argument("--resume", help="checkpoint to continue from; its config overrides --config")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a checkpoint on a dataset")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--metric", choices=("miou", "rankcorr"), default="miou")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="run a cumulative ablation ladder over several seeds")
    a.add_argument("--data", required=True)
    a.add_argument("--ladder", choices=("modifications", "scales"), required=True)
    a.add_argument("--seeds", type=int, default=5)
    a.add_argument("--config")
    a.add_argument("--steps", type=int, help="steps per run (default: config schedule length)")
    a.add_argument("--eval-data", help="dataset to score rungs on (default: held-in slice of --data)")
    a.add_argument("--out", help="directory for the TSV table and figure")
    a.set_defaults(func=cmd_ablate)

    c = sub.add_parser("gradcheck", help="finite-difference gradient checks in float64")
    c.add_argument("--scope", choices=sorted(SCOPES), required=True)
    c.add_argument("--seeds", type=int, default=10)
    c.set_defaults(func=cmd_gradcheck)

    v = sub.add_parser("visualize", help="dump per-channel feature maps, the gate and the predicted mask")
    v.add_argument("--checkpoint", required=True)
    v.add_argument("--image", required=True, help="PPM image")
    v.add_argument("--question", required=True)
    v.add_argument("--answer", required=True)
    v.add_argument("--level", type=int, default=3, help="pyramid level 0..3, fine to coarse")
    v.add_argument("--out", required=True)
    v.add_argument("--montage", help="optional PNG montage path (written outside --out's file set)")
    v.set_defaults(func=cmd_visualize)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (CommandError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
