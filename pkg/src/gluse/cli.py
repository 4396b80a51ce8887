"""Command-line interface: synth | train | distill | eval | count | cam."""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import distill as D
from . import formats as F
from .backbone import build_model
from .cam import export_heatmap, gradcam
from .errors import GluseError
from .metrics import evaluate, write_confusion_csv
from .profiler import cost_report
from .tensor import Tensor, no_grad


def _add_synth(sub):
    p = sub.add_parser("synth", help="generate a synthetic GLDS dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--per-class", type=int, default=50)
    p.add_argument("--size", type=int, default=32, choices=(32, 64))
    p.add_argument("--seed", type=int, default=0)


def _add_train_like(sub, name, help_text):
    p = sub.add_parser(name, help=help_text)
    p.add_argument("--config", required=True, help="key=value run config file")
    p.add_argument("--out", required=True, help="output checkpoint (.glck)")
    p.add_argument("--history", required=True, help="epoch history CSV path")
    p.add_argument("--verbose", action="store_true")


def _add_eval(sub):
    p = sub.add_parser("eval", help="evaluate a checkpoint on a GLDS test split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--seed", type=int, default=0, help="split seed")
    p.add_argument("--confusion", help="write the confusion matrix CSV here")
    p.add_argument("--full", action="store_true",
                   help="evaluate on the whole file instead of the test split")


def _add_count(sub):
    p = sub.add_parser("count", help="parameter/FLOP report for one variant")
    p.add_argument("--attention", default="gluse",
                   choices=("none", "se", "gated_se", "gluse"))
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--reduction", type=int, default=4)
    p.add_argument("--no-bn", action="store_true")
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--out", help="also write a key=value report here")


def _add_cam(sub):
    p = sub.add_parser("cam", help="Grad-CAM heatmap for one sample")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--sample", type=int, required=True)
    p.add_argument("--target", type=int, required=True)
    p.add_argument("--out", required=True, help="output PGM path")
    p.add_argument("--csv", help="optional CSV heatmap path")


def _dataset_config(cfg: dict) -> tuple[F.LabeledDataset, D.DistillConfig, dict]:
    if not cfg["data"]:
        raise GluseError("run config must set data=<path to .glds>")
    ds = F.read_dataset(cfg["data"])
    dcfg = D.DistillConfig(
        tau=float(cfg["tau"]), delta=float(cfg["delta"]),
        w_min=float(cfg["w_min"]), batch_size=int(cfg["batch_size"]),
        lr=float(cfg["lr"]), weight_decay=float(cfg["weight_decay"]),
        max_epochs=int(cfg["max_epochs"]),
        early_stop_patience=int(cfg["early_stop_patience"]),
        scheduler_patience=int(cfg["scheduler_patience"]),
        scheduler_factor=float(cfg["scheduler_factor"]),
        seed=int(cfg["seed"]))
    return ds, dcfg, cfg


def _run_training(args, with_teachers: bool) -> int:
    cfg = F.read_run_config(args.config)
    ds, dcfg, cfg = _dataset_config(cfg)
    k = int(cfg["classes"]) or ds.num_classes
    train_idx, test_idx = F.split_dataset(ds, dcfg.seed)
    student = build_model(cfg["attention"], k, int(cfg["reduction"]),
                          cfg["bn"].lower() == "true", seed=dcfg.seed)
    t1 = t2 = None
    if with_teachers:
        if not cfg["t1_logits"] or not cfg["t2_logits"]:
            raise GluseError("distill requires t1_logits and t2_logits in the config")
        table1, name1 = F.read_logits(cfg["t1_logits"], len(ds), k)
        table2, name2 = F.read_logits(cfg["t2_logits"], len(ds), k)
        t1 = D.LogitTableTeacher(table1, name1)
        t2 = D.LogitTableTeacher(table2, name2)
    history, best = D.train(
        student, ds.images[train_idx], ds.labels[train_idx], train_idx,
        ds.images[test_idx], ds.labels[test_idx], k, dcfg, t1, t2,
        history_path=args.history, verbose=args.verbose)
    if best is not None:
        D.restore_state(student, best)
    F.save_checkpoint(student, args.out)
    print(f"epochs={len(history)} best_val_acc={max(h.val_acc for h in history):.4f} "
          f"checkpoint={args.out}")
    return 0


def _run_eval(args) -> int:
    model = F.load_checkpoint(args.checkpoint)
    ds = F.read_dataset(args.data)
    if args.full:
        images, labels = ds.images, ds.labels
    else:
        _, test_idx = F.split_dataset(ds, args.seed)
        images, labels = ds.images[test_idx], ds.labels[test_idx]
    preds = []
    with no_grad():
        for start in range(0, len(images), 64):
            logits = model.forward(Tensor(images[start:start + 64]), mode="eval")
            preds.append(logits.data.argmax(axis=1))
    res = evaluate(np.concatenate(preds), labels, model.num_classes)
    print(f"accuracy={res.accuracy:.6f} precision={res.precision:.6f} "
          f"recall={res.recall:.6f} n={len(labels)}")
    if args.confusion:
        write_confusion_csv(res.matrix, args.confusion)
    return 0


def _run_count(args) -> int:
    m = build_model(args.attention, args.classes, args.reduction,
                    not args.no_bn)
    report = cost_report(m, (3, args.height, args.width))
    print(report.as_text())
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(report.as_keyvalues())
    return 0


def _run_cam(args) -> int:
    model = F.load_checkpoint(args.checkpoint)
    ds = F.read_dataset(args.data)
    if not (0 <= args.sample < len(ds)):
        raise GluseError(f"sample {args.sample} outside dataset of {len(ds)}")
    h = gradcam(model, ds.images[args.sample], args.target, args.sample)
    export_heatmap(h, args.out, "pgm")
    if args.csv:
        export_heatmap(h, args.csv, "csv")
    print(f"heatmap={args.out} sample={args.sample} target={args.target}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="gluse",
        description="Channel-attention ResNet kit with dual-teacher distillation")
    sub = parser.add_subparsers(dest="verb", required=True)
    _add_synth(sub)
    _add_train_like(sub, "train", "supervised training from a run config")
    _add_train_like(sub, "distill", "dual-teacher distillation from a run config")
    _add_eval(sub)
    _add_count(sub)
    _add_cam(sub)

    try:
        args = parser.parse_args(argv)
        if args.verb == "synth":
            spec = F.SynthSpec(args.classes, args.per_class, args.size)
            ds = F.synth_dataset(spec, args.seed)
            F.write_dataset(ds, args.out)
            print(f"wrote {args.out}: n={len(ds)} k={ds.num_classes} "
                  f"size={args.size}")
            return 0
        if args.verb == "train":
            return _run_training(args, with_teachers=False)
        if args.verb == "distill":
            return _run_training(args, with_teachers=True)
        if args.verb == "eval":
            return _run_eval(args)
        if args.verb == "count":
            return _run_count(args)
        if args.verb == "cam":
            return _run_cam(args)
        parser.error(f"unknown verb {args.verb!r}")
    except GluseError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: IOError: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
