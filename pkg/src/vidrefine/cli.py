"""Command line: synth, train, eval, infer, gradcheck.

Settings resolve as flags > ``--config`` JSON file > built-in defaults. The
config file has optional sections ``model``, ``network``, ``train``,
``scene`` and ``corruption`` whose keys are the fields of the matching
config objects.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path

from . import io
from .grid_codec import ModelConfig, decode_detections
from .optimizer import OptState
from .rnn import forward, init_params
from .synthdata import CorruptionConfig, SceneConfig, make_dataset
from .trainer import TrainConfig, evaluate_pseudo, evaluate_split, train

NETWORK_DEFAULTS = {"hidden": [150, 150], "dropout": 0.5, "candidate": "sigmoid", "init_seed": 0}

# flag dest -> (config section, field)
FLAG_MAP = {
    "S": ("model", "S"), "B": ("model", "B"), "C": ("model", "C"), "T": ("model", "T"),
    "alpha": ("model", "alpha"), "beta": ("model", "beta"), "gamma": ("model", "gamma"),
    "lambda_coord": ("model", "lambda_coord"), "lambda_noobj": ("model", "lambda_noobj"),
    "detect_threshold": ("model", "detect_threshold"), "nms_iou": ("model", "nms_iou"),
    "active_classes": ("model", "active_classes"),
    "hidden": ("network", "hidden"), "dropout": ("network", "dropout"),
    "candidate": ("network", "candidate"), "init_seed": ("network", "init_seed"),
    "epochs": ("train", "epochs"), "batch_size": ("train", "batch_size"), "lr": ("train", "lr"),
    "momentum": ("train", "momentum"), "rho": ("train", "rho"), "eps": ("train", "eps"),
    "shuffle_seed": ("train", "shuffle_seed"), "dropout_seed": ("train", "dropout_seed"),
    "workers": ("train", "workers"), "clip_norm": ("train", "clip_norm"),
    "n_objects": ("scene", "n_objects"), "speed": ("scene", "speed"), "size": ("scene", "size"),
    "jitter_std": ("scene", "jitter_std"),
    "class_flip_prob": ("corruption", "class_flip_prob"), "miss_prob": ("corruption", "miss_prob"),
    "conf_noise_std": ("corruption", "conf_noise_std"), "loc_jitter_std": ("corruption", "loc_jitter_std"),
}

SECTIONS = {
    "model": ModelConfig, "train": TrainConfig, "scene": SceneConfig, "corruption": CorruptionConfig,
}


class CliError(Exception):
    pass


def _settings(args) -> dict[str, dict]:
    merged: dict[str, dict] = {name: {} for name in (*SECTIONS, "network")}
    merged["network"].update(NETWORK_DEFAULTS)
    if getattr(args, "config", None):
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, ValueError) as e:
            raise CliError(f"cannot read config {args.config}: {e}") from None
        for section, values in data.items():
            if section not in merged or not isinstance(values, dict):
                raise CliError(f"unknown config section {section!r}")
            merged[section].update(values)
    for dest, (section, key) in FLAG_MAP.items():
        value = getattr(args, dest, None)
        if value is not None:
            merged[section][key] = value
    for section, cls in SECTIONS.items():
        allowed = {f.name for f in fields(cls)}
        unknown = set(merged[section]) - allowed
        if unknown:
            raise CliError(f"unknown {section} settings: {sorted(unknown)}")
        for key in ("active_classes", "n_objects", "speed", "size"):
            if isinstance(merged[section].get(key), list):
                merged[section][key] = tuple(merged[section][key])
    unknown = set(merged["network"]) - set(NETWORK_DEFAULTS)
    if unknown:
        raise CliError(f"unknown network settings: {sorted(unknown)}")
    return merged


def _model_config(settings, base: ModelConfig | None = None) -> ModelConfig:
    values = dict(settings["model"])
    if base is not None:
        for key in ("S", "B", "C"):
            if key in values and values[key] != getattr(base, key):
                raise io.ConfigMismatchError(f"{key}={values[key]} conflicts with dataset {key}={getattr(base, key)}")
            values[key] = getattr(base, key)
        values.setdefault("T", base.T)
    return ModelConfig(**values)


def cmd_synth(args) -> int:
    s = _settings(args)
    cfg = _model_config(s)
    dataset = make_dataset(
        args.n, SceneConfig(**s["scene"]), CorruptionConfig(**s["corruption"]), cfg, args.seed, prefix=args.prefix
    )
    io.save_dataset(args.out, dataset, cfg)
    print(f"wrote {len(dataset)} sequences (S={cfg.S}, B={cfg.B}, C={cfg.C}, T={cfg.T}) to {args.out}")
    return 0


def cmd_train(args) -> int:
    s = _settings(args)
    dataset, data_cfg = io.load_dataset(args.data)
    cfg = _model_config(s, data_cfg)
    net_s = s["network"]
    net = init_params(cfg.frame_dim, tuple(net_s["hidden"]), cfg.frame_dim, rng_seed=net_s["init_seed"],
                      dropout_prob=net_s["dropout"], candidate=net_s["candidate"])
    tcfg = TrainConfig(**s["train"])
    opt = OptState.for_params(net.params(), lr=tcfg.lr, rho=tcfg.rho, mu=tcfg.momentum,
                              eps=tcfg.eps, clip_norm=tcfg.clip_norm)
    history_path = args.history or f"{args.out}.history.jsonl"
    with open(history_path, "w") as stream:
        trained, history = train(dataset, net, cfg, tcfg, opt_state=opt, log_stream=stream)
    seeds = {"init": net_s["init_seed"], "shuffle": tcfg.shuffle_seed, "dropout": tcfg.dropout_seed}
    io.save_checkpoint(args.out, io.Checkpoint(trained, cfg, opt, seeds))
    last = history[-1].as_dict() if history else {}
    print(json.dumps({"checkpoint": args.out, "history": history_path, "epochs": len(history), **last}))
    return 0


def cmd_eval(args) -> int:
    ckpt = io.load_checkpoint(args.checkpoint)
    dataset, data_cfg = io.load_dataset(args.data)
    io.check_compatible(ckpt.cfg, data_cfg)
    report = evaluate_split(dataset, ckpt.net, ckpt.cfg)
    print(report.table())
    records = report.records()
    if args.baseline:
        raw = evaluate_pseudo(dataset, ckpt.cfg)
        print(f"{'pseudo mAP':>12}  {100 * raw.mAP:8.2f}")
        records.append(json.dumps({"kind": "baseline_map", "map": raw.mAP}))
    if args.records:
        Path(args.records).write_text("\n".join(records) + "\n")
    return 0


def cmd_infer(args) -> int:
    ckpt = io.load_checkpoint(args.checkpoint)
    dataset, data_cfg = io.load_dataset(args.data)
    io.check_compatible(ckpt.cfg, data_cfg)
    if args.sequence is None:
        if len(dataset) != 1:
            raise CliError(f"{args.data} holds {len(dataset)} sequences; choose one with --sequence")
        seq = dataset[0]
    else:
        found = [s for s in dataset if s.seq_id == args.sequence]
        if not found:
            raise CliError(f"no sequence {args.sequence!r} in {args.data}")
        seq = found[0]
    preds, _ = forward(ckpt.net, seq.pseudo)
    lines = []
    for t, frame in enumerate(preds):
        for d in decode_detections(frame, ckpt.cfg):
            lines.append(json.dumps({
                "seq_id": seq.seq_id, "frame": t, "class_id": d.class_id, "score": d.score,
                "cx": d.box.cx, "cy": d.box.cy, "w": d.box.w, "h": d.box.h,
            }))
    text = "\n".join(lines) + ("\n" if lines else "")
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_suite

    worst = run_suite(range(args.seeds))
    ok = True
    for name, err in worst.items():
        passed = err <= args.tol
        ok &= passed
        print(f"{name:>14}  max_rel_err={err:.3e}  {'ok' if passed else 'FAIL'}")
    return 0 if ok else 1


def _add_config_flags(p: argparse.ArgumentParser, groups: tuple[str, ...]) -> None:
    p.add_argument("--config", help="JSON config file")
    for dest, (section, _) in FLAG_MAP.items():
        if section not in groups:
            continue
        flag = "--" + dest.replace("_", "-")
        if dest in ("hidden", "active_classes"):
            p.add_argument(flag, dest=dest, type=int, nargs="+")
        elif dest in ("n_objects",):
            p.add_argument(flag, dest=dest, type=int, nargs=2)
        elif dest in ("speed", "size"):
            p.add_argument(flag, dest=dest, type=float, nargs=2)
        elif dest == "candidate":
            p.add_argument(flag, dest=dest, choices=("sigmoid", "tanh"))
        elif dest in ("S", "B", "C", "T", "epochs", "batch_size", "shuffle_seed", "dropout_seed",
                      "workers", "init_seed"):
            p.add_argument(flag, dest=dest, type=int)
        else:
            p.add_argument(flag, dest=dest, type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vidrefine", description="GRU refinement of video detections")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=100, help="number of sequences")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--prefix", default="seq")
    _add_config_flags(p, ("model", "scene", "corruption"))
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a refiner on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--history", help="history log path (default: <out>.history.jsonl)")
    _add_config_flags(p, ("model", "network", "train"))
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="per-class AP and mAP of a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--records", help="write line-delimited JSON records here")
    p.add_argument("--baseline", action="store_true", help="also score the raw pseudo-labels")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="refined per-frame detections for one sequence")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--sequence", help="sequence id (required if the file holds several)")
    p.add_argument("--out", help="output path (default: stdout)")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("gradcheck", help="finite-difference check of all gradients")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CliError, ValueError, OSError, RuntimeError) as e:
        reason = str(e).replace("\n", " ")
        print(f"error: {type(e).__name__}: {reason}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
