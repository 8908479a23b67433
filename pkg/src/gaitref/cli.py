"""gaitref command line: synth, train, refine, eval, ablate.

Every command takes ``--config PATH`` (flat ``key = value`` file), ``--seed``
and ``--out``; any config key can also be given as ``--set key=value``.
Flags override the file. The resolved config is written to the output
directory as ``config.txt``.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .config import RunConfig, load_saved_config, read_config_file
from .datamodel import ConfigError, DegenerateInputError, mean_joint_error
from .evaluator import ProtocolError, evaluate
from .fileio import (
    FormatError,
    build_dataset_index,
    load_checkpoint,
    save_checkpoint,
    write_record,
    write_skeleton,
)
from .model import GaitModel, refine_records
from .refiner import apply_smoothing

log = logging.getLogger("gaitref")

EXIT_OK, EXIT_CONFIG, EXIT_FORMAT, EXIT_PROTOCOL = 0, 2, 3, 4
CHECKPOINT_FILE = "model.grfw"
CONFIG_FILE = "config.txt"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gaitref", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="flat key = value config file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key (repeatable)")
        return sp

    s = common(sub.add_parser("synth", help="write a synthetic dataset"))
    s.add_argument("--ids", type=int)
    s.add_argument("--seqs", type=int)
    s.add_argument("--frames", type=int)
    s.add_argument("--jitter-sigma", type=float)
    s.add_argument("--jitter-prob", type=float)
    s.add_argument("--appearance-var", type=float)

    t = common(sub.add_parser("train", help="train a model on a dataset directory"))
    t.add_argument("--data")
    t.add_argument("--mode")
    t.add_argument("--iterations", type=int)

    r = common(sub.add_parser("refine", help="write refined or smoothed skeletons"))
    r.add_argument("--data")
    r.add_argument("--checkpoint")
    r.add_argument("--method")
    r.add_argument("--window", type=int)
    r.add_argument("--sigma", type=float)

    e = common(sub.add_parser("eval", help="probe/gallery retrieval metrics for a checkpoint"))
    e.add_argument("--data")
    e.add_argument("--checkpoint")
    e.add_argument("--gallery-seqs")
    e.add_argument("--probe-seqs")

    a = common(sub.add_parser("ablate", help="fusion / corrector-input / smoothing sweep on the synthetic benchmark"))
    a.add_argument("--variants")
    a.add_argument("--seeds")
    a.add_argument("--iterations", type=int)
    return p


_NOT_KEYS = {"command", "config", "set", "verbose"}


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.defaults(args.command)
    if args.config:
        cfg.update_text(read_config_file(args.config), args.config)
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v
    cfg.update_text(overrides, "--set")
    keys = cfg.keys
    flags = {k: v for k, v in vars(args).items() if k not in _NOT_KEYS and v is not None}
    cfg.update({k: keys[k].parse(v) if isinstance(v, str) and k in keys else v for k, v in flags.items()})
    return cfg


def _out_dir(cfg: RunConfig) -> Path:
    if not cfg.out:
        raise ConfigError("an output directory is required (--out)")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.write(out / CONFIG_FILE)
    return out


def _load_records(cfg: RunConfig, sequences: Sequence[str] = ()):
    if not cfg.data:
        raise ConfigError("a dataset directory is required (--data)")
    index = build_dataset_index(cfg.data)
    entries = [e for e in index if not sequences or e.sequence_id in sequences]
    if not entries:
        raise ProtocolError(f"no sequences selected from {cfg.data}")
    return [e.load() for e in entries], entries


def _load_model(checkpoint_dir) -> GaitModel:
    ckpt = Path(checkpoint_dir)
    saved = load_saved_config(ckpt / CONFIG_FILE)
    if saved.command != "train":
        raise ConfigError(f"{ckpt / CONFIG_FILE} is not a training config")
    state = load_checkpoint(ckpt / CHECKPOINT_FILE)
    if "fusion.cls_w" not in state:
        raise FormatError("checkpoint has no classifier weights", ckpt / CHECKPOINT_FILE)
    model = GaitModel(saved.model_config(state["fusion.cls_w"].shape[1]), saved.seed)
    model.load_state_dict(state)
    return model


# --- commands ----------------------------------------------------------------

def cmd_synth(cfg: RunConfig) -> int:
    from .synth import synth_gait

    out = _out_dir(cfg)
    if cfg.ids < 1 or cfg.seqs < 1:
        raise ConfigError("ids and seqs must be >= 1")
    for i in range(cfg.ids):
        for s in range(cfg.seqs):
            rec = synth_gait(i, cfg.frames, cfg.jitter_sigma, cfg.jitter_prob,
                             (cfg.seed * 1000 + i) * 1000 + s, appearance_var=cfg.appearance_var,
                             identity_spread=cfg.identity_spread, sequence_id=f"{s:02d}")
            write_record(rec, out / rec.subject_id / rec.sequence_id)
    log.info("wrote %d sequences to %s", cfg.ids * cfg.seqs, out)
    return EXIT_OK


def cmd_train(cfg: RunConfig) -> int:
    from .recognizer import train

    records, _ = _load_records(cfg, cfg.sequences)
    num_ids = len({r.subject_id for r in records})
    model = GaitModel(cfg.model_config(num_ids), cfg.seed)
    out = _out_dir(cfg)
    t0 = time.process_time()
    every = max(1, cfg.iterations // 20)

    def progress(rec):
        if rec.iteration % every == 0:
            log.info("iter %d  triplet %.4f  cls %.4f  total %.4f", rec.iteration, rec.triplet, rec.cls, rec.total)

    result = train(records, model, cfg.train_config(), progress)
    save_checkpoint(model.state_dict(), out / CHECKPOINT_FILE)
    with open(out / "loss.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "triplet", "cls", "total"])
        for r in result.curve:
            w.writerow([r.iteration, repr(r.triplet), repr(r.cls), repr(r.total)])
    with open(out / "labels.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["subject", "label"])
        for sid, lab in result.label_map.items():
            w.writerow([sid, lab])
    log.info("trained %d iterations in %.1f s CPU; checkpoint in %s", cfg.iterations,
             time.process_time() - t0, out)
    return EXIT_OK


def cmd_refine(cfg: RunConfig) -> int:
    records, entries = _load_records(cfg, cfg.sequences)
    out = _out_dir(cfg)
    if cfg.method == "gaitref":
        if not cfg.checkpoint:
            raise ConfigError("method gaitref needs --checkpoint")
        model = _load_model(cfg.checkpoint)
        refined = refine_records(model, records)
        tag = "#refined-by gaitref"
    else:
        refined = [apply_smoothing(r.skeleton.joints, cfg.method, cfg.window, cfg.sigma) for r in records]
        tag = f"#refined-by {cfg.method} window={cfg.window} sigma={cfg.sigma!r}"
    rows = []
    for rec, entry, joints in zip(records, entries, refined):
        target = out / entry.subject_id / entry.sequence_id
        target.mkdir(parents=True, exist_ok=True)
        write_skeleton(rec.skeleton.with_joints(joints), target / "skel.txt", [tag])
        if rec.clean_skeleton is not None:
            rows.append((entry.subject_id, entry.sequence_id,
                         mean_joint_error(rec.skeleton.joints, rec.clean_skeleton.joints),
                         mean_joint_error(joints, rec.clean_skeleton.joints)))
    if rows:
        with open(out / "jitter_report.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["subject", "sequence", "input_error", "refined_error"])
            for row in rows:
                w.writerow([row[0], row[1], repr(row[2]), repr(row[3])])
        before = float(np.mean([r[2] for r in rows]))
        after = float(np.mean([r[3] for r in rows]))
        print(f"mean joint error to clean: input {before:.5f}  refined {after:.5f}  "
              f"change {100 * (after - before) / before:+.1f}%")
    return EXIT_OK


def cmd_eval(cfg: RunConfig) -> int:
    if not cfg.checkpoint:
        raise ConfigError("eval needs --checkpoint")
    if not cfg.gallery_seqs or not cfg.probe_seqs:
        raise ConfigError("eval needs gallery_seqs and probe_seqs")
    model = _load_model(cfg.checkpoint)
    gallery, _ = _load_records(cfg, cfg.gallery_seqs)
    probes, _ = _load_records(cfg, cfg.probe_seqs)
    report = evaluate(model, probes, gallery, cfg.exclude_same_view, cfg.reduction, cfg.ks)
    out = _out_dir(cfg)
    report.write_csv(out / "metrics.csv", out / "probe_traces.csv")
    (out / "metrics.txt").write_text(report.table() + "\n")
    print(report.table())
    return EXIT_OK


def cmd_ablate(cfg: RunConfig) -> int:
    from .benchmark import make_data, run, variant

    bench = cfg.benchmark_config()
    plan = [(name,) + variant(name) for name in cfg.variants]
    if not plan or not cfg.seeds:
        raise ConfigError("ablate needs at least one variant and one seed")
    for _, mode, overrides in plan:
        bench.model_config(mode, **overrides)  # reject bad variants before any training
    out = _out_dir(cfg)
    data = make_data(bench)
    rows = []
    for name, mode, overrides in plan:
        for seed in cfg.seeds:
            res = run(bench, data, mode, seed, **overrides)
            rows.append((name, seed, res))
            log.info("%s seed %d rank-1 %.4f", name, seed, res.rank1)
    with open(out / "ablation_runs.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["variant", "seed", "rank1", "mAP", "mINP", "train_seconds"])
        for name, seed, res in rows:
            w.writerow([name, seed, repr(res.rank1), repr(res.report.mAP), repr(res.report.mINP),
                        f"{res.seconds:.1f}"])
    lines = [f"{'variant':<18} {'rank1':>7} {'mAP':>7} {'mINP':>7}"]
    for name, _, _ in plan:
        rs = [res for n, _, res in rows if n == name]
        lines.append(f"{name:<18} {100 * np.mean([r.rank1 for r in rs]):7.2f} "
                     f"{100 * np.mean([r.report.mAP for r in rs]):7.2f} "
                     f"{100 * np.mean([r.report.mINP for r in rs]):7.2f}")
    table = "\n".join(lines)
    (out / "ablation.txt").write_text(table + "\n")
    print(table)
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "refine": cmd_refine, "eval": cmd_eval,
            "ablate": cmd_ablate}


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as exc:
        print(f"gaitref: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        log.info("resolved config:\n%s", cfg.to_text())
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"gaitref: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FormatError, DegenerateInputError) as exc:
        print(f"gaitref: format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except ProtocolError as exc:
        print(f"gaitref: protocol error: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL


if __name__ == "__main__":
    sys.exit(main())
