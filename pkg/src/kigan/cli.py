"""Command-line entry point: ``kigan <command> [options]``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric error.
"""

from __future__ import annotations

import os

# BLAS thread caps must be in place before numpy loads.
_THREADS = os.environ.get("KIGAN_THREADS", "1")
if _THREADS.isdigit() and int(_THREADS) > 0:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _THREADS)

import argparse
import json
import sys
from pathlib import Path

from .config import POOLING_METHODS, TrainConfig
from .errors import ConfigError, DataError, KIGANError, NumericError
from .manifest import RunManifest

HORIZONS = {"12": (12,), "18": (18,), "both": (12, 18)}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def _threads():
    raw = os.environ.get("KIGAN_THREADS", "1")
    if not raw.isdigit() or int(raw) < 1:
        raise ConfigError(f"KIGAN_THREADS must be a positive integer, got {raw!r}")
    return int(raw)


def _read_json(path):
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    return data


def train_config_from_args(args, base=None):
    """Flags override the JSON file, which overrides defaults (or ``base``)."""
    raw = base.to_dict() if base is not None else {}
    file_cfg = _read_json(getattr(args, "config", None))
    model = dict(raw.get("model", {}))
    model.update(file_cfg.pop("model", {}) or {})
    raw.update(file_cfg)
    flags = {
        "seed": getattr(args, "seed", None),
        "pred_len": getattr(args, "pred_len", None),
        "k": getattr(args, "k", None),
        "epochs": getattr(args, "epochs", None),
        "stride": getattr(args, "stride", None),
    }
    raw.update({key: val for key, val in flags.items() if val is not None})
    if getattr(args, "pooling", None):
        model["pooling"] = args.pooling
    for name in ("motion", "physical", "traffic"):
        if getattr(args, f"mask_{name}", False):
            model[f"mask_{name}"] = True
    raw["model"] = model
    return TrainConfig.from_dict(raw)


def _windows(data_dir, cfg, pred_len=None):
    from .data import load_windows

    windows = load_windows(
        data_dir,
        obs_len=cfg.obs_len,
        pred_len=cfg.pred_len if pred_len is None else pred_len,
        stride=cfg.stride,
        step=cfg.resample_step,
        include_pedestrians=cfg.include_pedestrians,
    )
    if not windows:
        raise DataError(f"no complete windows in {data_dir}")
    return windows


def _out_dir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ------------------------------------------------------------------ commands


def cmd_gen_data(args):
    from .synth import ScenarioConfig, simulate

    raw = _read_json(args.config)
    if args.seed is not None:
        raw["seed"] = args.seed
    scenario = ScenarioConfig.from_dict(raw)
    track_csv, signal_csv = simulate(scenario)
    out = _out_dir(args)
    paths = [out / "tracks.csv", out / "signals.csv"]
    paths[0].write_bytes(track_csv)
    paths[1].write_bytes(signal_csv)
    m = RunManifest("gen-data", list(args.argv), _scenario_dict(scenario), scenario.seed)
    m.inputs = _inputs([args.config])
    m.record_outputs(paths)
    m.write(out)
    print(f"wrote {paths[0]} and {paths[1]}")


def _scenario_dict(scenario):
    from dataclasses import asdict

    d = asdict(scenario)
    for key in ("approaches", "speed_range", "spawn_times"):
        d[key] = list(d[key])
    return d


def _inputs(paths):
    from .manifest import path_digests

    return path_digests([p for p in paths if p])


def cmd_train(args):
    from .training import Trainer, checkpoint_load

    if args.resume:
        trainer = checkpoint_load(args.resume)
        cfg = train_config_from_args(args, base=trainer.config)
        trainer = checkpoint_load(args.resume, cfg)
    else:
        cfg = train_config_from_args(args)
        trainer = Trainer(cfg)
    windows = _windows(args.data, cfg)
    val = _windows(args.val, cfg) if args.val else None
    out = _out_dir(args)

    def report(tr, rec):
        print(f"epoch {rec.epoch}: d_loss={rec.d_loss:.4f} g_loss={rec.g_loss:.4f} "
              f"variety={rec.variety:.4f} ade={rec.ade:.4f} fde={rec.fde:.4f}", flush=True)

    trainer.fit(windows, val, on_epoch=report)
    ckpt = out / "checkpoint.kigan"
    log_path = out / "trainlog.csv"
    trainer.save(ckpt)
    log_path.write_text(trainer.log.to_csv())
    m = RunManifest("train", list(args.argv), cfg.to_dict(), cfg.seed)
    m.inputs = _inputs([args.data, args.val, args.config, args.resume])
    m.record_outputs([ckpt, log_path])
    m.extra = dict(pooling=cfg.model.pooling, windows=len(windows), d_steps=trainer.log.d_steps,
                   g_steps=trainer.log.g_steps)
    m.write(out)


def cmd_eval(args):
    from .evaluation import evaluate
    from .training import checkpoint_load

    trainer = checkpoint_load(args.checkpoint)
    cfg = trainer.config
    k = args.k if args.k is not None else cfg.eval_k
    seed = args.seed if args.seed is not None else cfg.eval_seed
    horizons = HORIZONS[args.horizons] if args.horizons else (args.pred_len or cfg.pred_len,)
    out = _out_dir(args)
    rows, paths, reports = [], [], {}
    for h in horizons:
        report = evaluate(trainer.generator, _windows(args.data, cfg, pred_len=h), k, seed)
        p = out / f"metrics_{h}.json"
        p.write_text(report.to_json() + "\n")
        paths.append(p)
        rows.append(report.csv_row(header=not rows))
        reports[h] = dict(ade=report.ade, fde=report.fde)
        print(f"pred_len {h}, k {k}: ADE {report.ade:.4f} m, FDE {report.fde:.4f} m")
    csv_path = out / "metrics.csv"
    csv_path.write_text("".join(rows))
    paths.append(csv_path)
    m = RunManifest("eval", list(args.argv), cfg.to_dict(), seed)
    m.inputs = _inputs([args.checkpoint, args.data])
    m.record_outputs(paths)
    m.extra = dict(k=k, pred_len=list(horizons), metrics=reports)
    m.write(out)


def cmd_ablate(args):
    from .ablation import encoder_table, pooling_table, run_ablation

    cfg = train_config_from_args(args)
    horizons = HORIZONS[args.horizons] if args.horizons else (cfg.pred_len,)
    seeds = [cfg.seed + i for i in range(args.repeats)]
    out = _out_dir(args)
    enc, pool, raw = {}, {}, {}
    for h in horizons:
        train_w = _windows(args.data, cfg, pred_len=h)
        val_w = _windows(args.val, cfg, pred_len=h) if args.val else train_w
        enc[h], pool[h] = run_ablation(train_w, val_w, cfg, seeds)
        raw[h] = [dict(label=r.label, pooling=r.pooling, ade=r.ade, fde=r.fde) for r in enc[h] + pool[h][:-1]]
    paths = [out / "ablation_encoders.csv", out / "ablation_pooling.csv", out / "ablation.json"]
    paths[0].write_text(encoder_table(enc), encoding="utf-8")
    paths[1].write_text(pooling_table(pool), encoding="utf-8")
    paths[2].write_text(json.dumps(raw, indent=2) + "\n")
    sys.stdout.write(paths[0].read_text(encoding="utf-8") + paths[1].read_text(encoding="utf-8"))
    m = RunManifest("ablate", list(args.argv), cfg.to_dict(), cfg.seed)
    m.inputs = _inputs([args.data, args.val, args.config])
    m.record_outputs(paths)
    m.extra = dict(seeds=seeds, horizons=list(horizons))
    m.write(out)


def cmd_gradcheck(args):
    from .checks import run_suite

    results = run_suite(seed=args.seed or 0)
    lines = [r.line() for r in results]
    print("\n".join(lines))
    if args.out:
        out = _out_dir(args)
        p = out / "gradcheck.txt"
        p.write_text("\n".join(lines) + "\n")
        m = RunManifest("gradcheck", list(args.argv), {}, args.seed or 0)
        m.record_outputs([p])
        m.extra = dict(failed=[r.name for r in results if not r.ok])
        m.write(out)
    failed = [r.name for r in results if not r.ok]
    if failed:
        raise NumericError(f"gradient check failed for: {', '.join(failed)}")


def cmd_predict(args):
    from .evaluation import predict, predictions_csv
    from .training import checkpoint_load

    trainer = checkpoint_load(args.checkpoint)
    cfg = trainer.config
    k = args.k if args.k is not None else cfg.eval_k
    seed = args.seed if args.seed is not None else cfg.eval_seed
    windows = _windows(args.data, cfg, pred_len=args.pred_len)
    out = _out_dir(args)
    pred_dir = out / "predictions"
    pred_dir.mkdir(exist_ok=True)
    paths = []
    for i, p in enumerate(predict(trainer.generator, windows, k, seed)):
        path = pred_dir / f"window_{i:04d}.csv"
        path.write_text(predictions_csv(p))
        paths.append(path)
    m = RunManifest("predict", list(args.argv), cfg.to_dict(), seed)
    m.inputs = _inputs([args.checkpoint, args.data])
    m.record_outputs(paths)
    m.extra = dict(k=k, windows=len(windows))
    m.write(out)
    print(f"wrote {len(paths)} prediction files to {pred_dir}")


# ------------------------------------------------------------------ parser


def _model_flags(p):
    p.add_argument("--config", help="JSON file mirroring TrainConfig")
    p.add_argument("--seed", type=int)
    p.add_argument("--pooling", choices=POOLING_METHODS)
    p.add_argument("--pred-len", type=int, choices=(12, 18))
    p.add_argument("--k", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--mask-motion", action="store_true")
    p.add_argument("--mask-physical", action="store_true")
    p.add_argument("--mask-traffic", action="store_true")


def build_parser():
    parser = _Parser(prog="kigan", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="simulate an intersection and write track/signal CSVs")
    p.add_argument("--config", help="JSON scenario config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model on a recording directory")
    p.add_argument("data")
    p.add_argument("--val", help="separate validation recording directory")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--out", required=True)
    _model_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="best-of-k ADE/FDE of a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("data")
    p.add_argument("--k", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--pred-len", type=int, choices=(12, 18))
    p.add_argument("--horizons", choices=tuple(HORIZONS))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="encoder-mask and pooling sweeps")
    p.add_argument("data")
    p.add_argument("--val")
    p.add_argument("--horizons", choices=tuple(HORIZONS))
    p.add_argument("--repeats", type=int, default=1, help="seeds per variant (median is reported)")
    p.add_argument("--out", required=True)
    _model_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference suite")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("predict", help="write per-window trajectory CSVs")
    p.add_argument("checkpoint")
    p.add_argument("data")
    p.add_argument("--k", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--pred-len", type=int, choices=(12, 18))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)
    return parser


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        _threads()
        args = build_parser().parse_args(argv)
        args.argv = argv
        args.func(args)
    except KIGANError as exc:
        print(f"kigan: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FloatingPointError as exc:
        print(f"kigan: numeric error: {exc}", file=sys.stderr)
        return NumericError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
