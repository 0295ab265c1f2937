"""Command line entry point.

Every subcommand prints one JSON line with its result on stdout; logs go to
stderr.  Exit codes: 0 success, 1 runtime failure, 2 usage error.  Each run
writes ``config.json`` into ``--out``; ``--config that/config.json`` replays it.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import events as EV
from . import harness as H
from . import synth
from .encoder import ABLATION_MASKS, EncoderParams, ModuleMask, encode
from .trainer import TrainConfig
from .video import load_clip, save_clip

log = logging.getLogger("bdq")

# arguments that describe where things go, not what is computed
_NOT_CONFIG = {"config", "func", "jobs", "verbose"}


class UsageError(Exception):
    pass


def _floats(text):
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}")
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _ints(text):
    vals = _floats(text)
    if any(v != int(v) for v in vals):
        raise argparse.ArgumentTypeError(f"expected integers: {text!r}")
    return [int(v) for v in vals]


def _mask(text):
    try:
        return ModuleMask.parse(text).label
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc))


def _nonneg_int(text):
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError("seed must be a non-negative integer")
    return v


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _shared(p, data=True, seed_required=True):
    p.add_argument("--seed", type=_nonneg_int, required=seed_required, default=0 if not seed_required else None,
                   help="seed for every random stream")
    p.add_argument("--out", required=True, help="output directory (nothing is written elsewhere)")
    if data:
        p.add_argument("--data", required=True, help="dataset directory with manifest.tsv")
    p.add_argument("--config", help="replay the settings stored in a previous run's config.json")
    p.add_argument("--jobs", type=int, default=1, help="parallel cells (default 1)")


def _train_flags(p):
    d = TrainConfig()
    p.add_argument("--epochs", type=int, default=d.epochs)
    p.add_argument("--lr", type=float, default=d.lr)
    p.add_argument("--momentum", type=float, default=d.momentum)
    p.add_argument("--batch", type=int, default=d.batch_size)
    p.add_argument("--t", type=int, default=d.t, help="frames per clip")
    p.add_argument("--crop", type=int, default=d.crop, help="square crop side")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bdq", description="Trainable Blur/Difference/Quantization video encoder.")
    ap.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = ap.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("synth", help="generate the synthetic dataset")
    _shared(p, data=False)
    d = synth.SynthConfig()
    p.add_argument("--actions", type=int, default=d.num_actions)
    p.add_argument("--identities", type=int, default=d.num_identities)
    p.add_argument("--clips-per-pair", type=int, default=d.clips_per_pair)
    p.add_argument("--frames", type=int, default=d.T)
    p.add_argument("--size", type=int, default=d.size)
    p.add_argument("--noise", type=float, default=d.noise_std)
    p.add_argument("--static", action="store_true", help="no motion (limitation study)")
    p.add_argument("--dtype", choices=("f32", "u8"), default="f32")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="adversarially train an encoder")
    _shared(p)
    p.add_argument("--alpha", type=float, default=TrainConfig().alpha)
    p.add_argument("--mask", type=_mask, default="B+D+Q")
    _train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("encode", help="encode one .bdqv clip")
    p.add_argument("--params", help="encoder checkpoint (default: untrained encoder)")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True, help="output .bdqv file")
    p.add_argument("--mask", type=_mask, default="B+D+Q")
    p.add_argument("--dtype", choices=("f32", "u8"), default="f32")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("validate", help="freeze an encoder and train fresh action/privacy nets")
    _shared(p)
    p.add_argument("--params", help="encoder checkpoint; omit for the raw-video baseline")
    p.add_argument("--mask", type=_mask, default="B+D+Q")
    _train_flags(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("ablate", help="validate an encoder under all 7 module masks")
    _shared(p)
    p.add_argument("--params", required=True)
    _train_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("alpha-sweep", help="train and validate one encoder per alpha")
    _shared(p)
    p.add_argument("--alphas", type=_floats, default=[0.0, 1.0, 2.0, 4.0, 8.0])
    p.add_argument("--mask", type=_mask, default="B+D+Q")
    _train_flags(p)
    p.set_defaults(func=cmd_alpha_sweep)

    p = sub.add_parser("adversaries", help="probe an encoder with held-out privacy nets")
    _shared(p)
    p.add_argument("--params", required=True)
    p.add_argument("--mask", type=_mask, default="B+D+Q")
    _train_flags(p)
    p.set_defaults(func=cmd_adversaries)

    p = sub.add_parser("attack", help="reconstruction attack: trained vs reference encoder")
    _shared(p)
    p.add_argument("--params", required=True, help="trained encoder checkpoint")
    p.add_argument("--reference", help="encoder checkpoint for the comparison arm (default: untrained encoder)")
    p.add_argument("--mask", type=_mask, default="B+D+Q")
    a = H.AttackConfig()
    p.add_argument("--attack-epochs", type=int, default=a.epochs)
    p.add_argument("--attack-lr", type=float, default=a.lr)
    p.add_argument("--attack-width", type=int, default=a.width)
    p.add_argument("--attack-frames", type=int, default=a.frames)
    p.add_argument("--batch", type=int, default=a.batch_size)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("events", help="event-camera threshold sweep")
    _shared(p)
    p.add_argument("--thresholds", type=_floats, default=list(EV.THRESHOLDS))
    p.add_argument("--scale", type=float, default=EV.DEFAULT_SCALE)
    _train_flags(p)
    p.set_defaults(func=cmd_events)

    p = sub.add_parser("downsample", help="low-resolution baseline")
    _shared(p)
    p.add_argument("--sizes", type=_ints, default=list(H.DOWNSAMPLE_SIZES))
    _train_flags(p)
    p.set_defaults(func=cmd_downsample)

    p = sub.add_parser("report", help="merge trade-off CSVs into a report and plot-data file")
    p.add_argument("--rows", nargs="+", required=True, help="CSV files with method/action_acc/privacy_acc columns")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return ap


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _train_cfg(args, **over) -> TrainConfig:
    cfg = TrainConfig(alpha=getattr(args, "alpha", TrainConfig().alpha), epochs=args.epochs, lr=args.lr,
                      momentum=args.momentum, batch_size=args.batch, t=args.t, crop=args.crop, seed=args.seed,
                      mask=ModuleMask.parse(getattr(args, "mask", "bdq")).label.replace("+", "").lower())
    cfg = replace(cfg, **over)
    cfg.validate()
    return cfg


def _dataset(args):
    path = Path(args.data)
    if not (path / "manifest.tsv").exists():
        raise UsageError(f"{path} has no manifest.tsv (run `bdq synth` first)")
    return synth.load_dataset(path)


def _encoder(path):
    if path is None:
        return EncoderParams.default()
    return H.load_encoder(path)


def _config_record(args) -> dict:
    return {"command": args.command,
            "args": {k: v for k, v in sorted(vars(args).items()) if k not in _NOT_CONFIG | {"command"}}}


def _config_path(argv):
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if tok.startswith("--config="):
            return tok.split("=", 1)[1]
    return None


def _apply_config(parser, argv):
    """Install a stored config's values as defaults; explicit flags still win."""
    path = _config_path(argv)
    if path is None:
        return
    command = next((t for t in argv if not t.startswith("-")), None)
    subs = parser._subparsers._group_actions[0].choices
    if command not in subs:
        return  # let argparse report it
    try:
        rec = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}")
    if rec.get("command") != command:
        raise UsageError(f"config is for {rec.get('command')!r}, not {command!r}")
    sub = subs[command]
    stored = {k: v for k, v in rec.get("args", {}).items() if k != "command"}
    known = {a.dest for a in sub._actions}
    unknown = set(stored) - known
    if unknown:
        raise UsageError(f"config has unknown settings {sorted(unknown)}")
    sub.set_defaults(**stored)
    for a in sub._actions:
        if a.dest in stored:
            a.required = False


def _pmap(fn, items, jobs):
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


class _Cell:
    """Picklable cell runner for --jobs."""

    def __init__(self, fn, *args):
        self.fn, self.args = fn, args

    def __call__(self, item):
        return self.fn(item, *self.args)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_synth(args):
    cfg = synth.SynthConfig(num_actions=args.actions, num_identities=args.identities,
                            clips_per_pair=args.clips_per_pair, T=args.frames, size=args.size,
                            noise_std=args.noise, seed=args.seed, static=args.static)
    out = _out_dir(args)
    ds = synth.generate(cfg)
    synth.write_dataset(ds, out, dtype=args.dtype)
    H.write_json(out / "synth_config.json", synth.config_dict(cfg))
    return {"clips": len(ds), "train": ds.splits.count("train"), "val": ds.splits.count("val"),
            "manifest": str(out / "manifest.tsv")}


def cmd_train(args):
    cfg = _train_cfg(args)
    ds = _dataset(args)
    out = _out_dir(args)
    state = H.train_encoder(ds, cfg, out)
    last = state.log[-1]
    return {"epochs": state.epoch, "sigma": float(state.encoder.sigma.data),
            "boundaries": sorted(float(b) for b in state.encoder.boundaries.data),
            "train_action_acc": last["train_action_acc"], "train_privacy_acc": last["train_privacy_acc"],
            "encoder": str(out / "encoder.bdqp")}


def cmd_encode(args):
    enc = _encoder(args.params)
    clip = load_clip(args.input)
    out = encode(clip, enc, ModuleMask.parse(args.mask))
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    save_clip(out, args.out, dtype=args.dtype)
    return {"frames": out.T, "shape": list(out.shape), "out": args.out}


def cmd_validate(args):
    cfg = _train_cfg(args)
    ds = _dataset(args)
    out = _out_dir(args)
    if args.params is None:
        row = H.raw_baseline(ds, cfg)
    else:
        row = H.validate_encoder(_encoder(args.params), ds, cfg, ModuleMask.parse(args.mask))
    H.write_rows(out / "summary.csv", [row], H.ROW_FIELDS)
    return asdict(row)


def _ablate_cell(mask_label, params, ds, cfg):
    return H.validate_encoder(_encoder(params), ds, cfg, ModuleMask.parse(mask_label))


def cmd_ablate(args):
    cfg = _train_cfg(args)
    ds = _dataset(args)
    out = _out_dir(args)
    labels = [m.label for m in ABLATION_MASKS]
    rows = _pmap(_Cell(_ablate_cell, args.params, ds, cfg), labels, args.jobs)
    H.write_rows(out / "summary.csv", rows, H.ROW_FIELDS)
    return {"rows": [asdict(r) for r in rows]}


def _alpha_cell(alpha, ds, cfg, out):
    cell = H.alpha_cell(ds, replace(cfg, alpha=float(alpha)), out / f"alpha_{alpha:g}")
    return H.sweep_record(cell)


def cmd_alpha_sweep(args):
    cfg = _train_cfg(args)
    ds = _dataset(args)
    out = _out_dir(args)
    recs = _pmap(_Cell(_alpha_cell, ds, cfg, out), args.alphas, args.jobs)
    H.write_rows(out / "summary.csv", recs)
    return {"rows": [{k: r[k] for k in ("alpha", "action_acc", "privacy_acc", "sigma", "boundary_spread")}
                     for r in recs]}


def cmd_adversaries(args):
    cfg = _train_cfg(args)
    ds = _dataset(args)
    out = _out_dir(args)
    specs = H.adversary_specs(ds.num_identities, ds.items[0].clip.shape[-1])
    rows = H.multi_adversary_probe(_encoder(args.params), ds, specs, cfg, ModuleMask.parse(args.mask), out)
    return {"rows": [{**asdict(r), "gap": r.gap} for r in rows]}


def cmd_attack(args):
    ds = _dataset(args)
    out = _out_dir(args)
    acfg = H.AttackConfig(epochs=args.attack_epochs, lr=args.attack_lr, batch_size=args.batch,
                          width=args.attack_width, frames=args.attack_frames, seed=args.seed)
    cfg = TrainConfig(seed=args.seed)
    res = H.reconstruction_attack(_encoder(args.params), ds, cfg, acfg, _encoder(args.reference),
                                  ModuleMask.parse(args.mask), out)
    return {**asdict(res), "gap": res.gap}


def _event_cell(th, ds, cfg, scale):
    return EV.event_sweep(ds, [th], cfg, scale)[0]


def cmd_events(args):
    cfg = _train_cfg(args)
    EV.EventConfig(min(args.thresholds), args.scale)  # fail fast on bad values
    ds = _dataset(args)
    out = _out_dir(args)
    rows = _pmap(_Cell(_event_cell, ds, cfg, args.scale), args.thresholds, args.jobs)
    EV.write_rows(out / "summary.csv", rows, EV.SWEEP_FIELDS)
    return {"rows": rows}


def _down_cell(size, ds, cfg):
    return H.downsample_baseline(ds, [size], cfg)[0]


def cmd_downsample(args):
    cfg = _train_cfg(args)
    ds = _dataset(args)
    side = min(ds.items[0].clip.shape[1:3])
    bad = [s for s in args.sizes if s < 1 or s > side]
    if bad:
        raise UsageError(f"sizes {bad} outside 1..{side}")
    out = _out_dir(args)
    rows = _pmap(_Cell(_down_cell, ds, cfg), args.sizes, args.jobs)
    H.write_rows(out / "summary.csv", rows, H.ROW_FIELDS)
    return {"rows": [asdict(r) for r in rows]}


def cmd_report(args):
    rows = []
    for path in args.rows:
        for rec in H.read_rows(path):
            if "method" not in rec:
                raise UsageError(f"{path}: no 'method' column")
            rows.append(rec)
    table, plot = H.tradeoff_report(rows, _out_dir(args))
    return {"rows": len(rows), "table": str(table), "plot_data": str(plot)}


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    return str(o)


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    logging.basicConfig(level=logging.DEBUG if "-v" in argv or "--verbose" in argv else logging.INFO,
                        stream=sys.stderr, format="%(asctime)s %(name)s %(levelname)s %(message)s", force=True)
    try:
        _apply_config(parser, argv)
        args = parser.parse_args(argv)
    except UsageError as exc:
        log.error("%s", exc)
        return 2
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if getattr(args, "jobs", 1) < 1:
            raise UsageError("--jobs must be at least 1")
        result = args.func(args)
        if hasattr(args, "jobs") and args.command != "report":
            H.write_json(Path(args.out) / "config.json", _config_record(args))
    except SystemExit as exc:
        return int(exc.code or 0)
    except UsageError as exc:
        log.error("%s", exc)
        return 2
    except Exception as exc:  # noqa: BLE001 - report any runtime failure as exit 1
        log.error("%s failed: %s", args.command, exc)
        log.debug("traceback", exc_info=True)
        return 1
    print(json.dumps({"command": args.command, "ok": True, **result}, default=_json_default))
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
