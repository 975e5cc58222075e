"""Command-line entry point: ``tpool {train,eval,verify,synth,pool}``."""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import metrics, pooling, seqdata, verify
from .errors import ConfigError, DataError, FormatError, NumericError, ParseError, ShapeError, TrainError
from .tced import build_model, evaluate, load_model, predict, save_model, train
from .tced.model import TrainConfig
from .tced.train import HISTORY_COLUMNS

log = logging.getLogger("tpool")

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_DATA = 0, 1, 2, 3
_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}
_NONE = {"none", ""}


@dataclass
class RunConfig:
    data_dir: Path
    num_classes: int
    out_dir: Path
    test_fold: int | None = None
    downsample: int = 1
    train: TrainConfig = field(default_factory=TrainConfig)


_RUN_KEYS = ("data_dir", "num_classes", "out_dir", "test_fold", "downsample")
_TRAIN_DEFAULTS = TrainConfig()


def parse_config(text: str, source: str = "<config>") -> dict[str, tuple[str, int]]:
    """Flat ``key = value`` lines; ``#`` starts a comment. Returns key -> (value, line)."""
    out: dict[str, tuple[str, int]] = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"{source}:{n}: expected 'key = value', got {raw.strip()!r}")
        if key in out:
            raise ConfigError(f"{source}:{n}: duplicate key {key!r}")
        out[key] = (value.strip(), n)
    return out


def _coerce(key: str, value: str, proto, where: str):
    try:
        if isinstance(proto, bool):
            v = value.lower()
            if v not in _TRUE | _FALSE:
                raise ValueError
            return v in _TRUE
        if isinstance(proto, int):
            return int(value)
        if isinstance(proto, float):
            return float(value)
        if isinstance(proto, tuple):
            return tuple(int(p) for p in value.replace(",", " ").split())
        return value
    except ValueError:
        raise ConfigError(f"{where}: invalid value {value!r} for key {key!r}") from None


def run_config_from_text(text: str, source: str = "<config>", base: Path | None = None) -> RunConfig:
    """Build a RunConfig; relative paths resolve against ``base``."""
    raw = parse_config(text, source)
    train_names = {f.name for f in fields(TrainConfig)}
    for key, (_, n) in raw.items():
        if key not in train_names and key not in _RUN_KEYS:
            raise ConfigError(f"{source}:{n}: unknown key {key!r}")
    for key in ("data_dir", "num_classes", "out_dir"):
        if key not in raw:
            raise ConfigError(f"{source}: missing required key {key!r}")
    base = Path(base) if base is not None else Path.cwd()

    def where(key):
        return f"{source}:{raw[key][1]}"

    def path(key):
        p = Path(raw[key][0])
        return (p if p.is_absolute() else base / p).resolve()

    tc = {k: _coerce(k, v, getattr(_TRAIN_DEFAULTS, k), where(k))
          for k, (v, _) in raw.items() if k in train_names}
    test_fold = None
    if "test_fold" in raw and raw["test_fold"][0].lower() not in _NONE:
        test_fold = _coerce("test_fold", raw["test_fold"][0], 0, where("test_fold"))
    downsample = _coerce("downsample", raw["downsample"][0], 0, where("downsample")) if "downsample" in raw else 1
    try:
        train_cfg = TrainConfig(**tc)
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    if downsample < 1:
        raise ConfigError(f"{where('downsample')}: downsample must be >= 1")
    return RunConfig(path("data_dir"), _coerce("num_classes", raw["num_classes"][0], 0, where("num_classes")),
                     path("out_dir"), test_fold, downsample, train_cfg)


def load_run_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    return run_config_from_text(text, str(path), path.parent)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (tuple, list)):
        return ", ".join(str(i) for i in v)
    if v is None:
        return "none"
    return str(v)


def dump_run_config(rc: RunConfig) -> str:
    lines = ["# resolved run configuration"]
    for key in _RUN_KEYS:
        lines.append(f"{key} = {_fmt(getattr(rc, key))}")
    for f in fields(TrainConfig):
        lines.append(f"{f.name} = {_fmt(getattr(rc.train, f.name))}")
    return "\n".join(lines) + "\n"


def write_history(history, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_COLUMNS)
        for rec in history:
            w.writerow([rec["epoch"]] + [repr(float(rec[c])) for c in HISTORY_COLUMNS[1:]])


def _report(names, per, mean):
    for name, s in zip(names, per):
        print(f"{name} {s}")
    print(f"mean-over-sequences acc/edit/F1@0.10: {mean}")


def cmd_train(args) -> int:
    rc = load_run_config(args.config)
    if args.out_dir:
        rc.out_dir = Path(args.out_dir).resolve()
    ds = seqdata.load_dataset(rc.data_dir, rc.num_classes, rc.downsample)
    if rc.test_fold is None:
        train_idx, test_idx = list(range(len(ds.items))), []
    else:
        train_idx, test_idx = ds.split(rc.test_fold)
    model = build_model(rc.train, ds.d, rc.num_classes)
    model, history = train(model, ds, rc.train, train_idx)
    rc.out_dir.mkdir(parents=True, exist_ok=True)
    save_model(model, rc.out_dir / "model.tpck")
    write_history(history, rc.out_dir / "history.csv")
    (rc.out_dir / "config.cfg").write_text(dump_run_config(rc), encoding="utf-8")
    last = history[-1]
    print(f"trained {len(history)} epochs on {len(train_idx)} sequences; final loss {last['loss']:.5f}")
    if test_idx:
        per, mean = evaluate(model, ds, test_idx)
        print(f"test fold {rc.test_fold} mean-over-sequences acc/edit/F1@0.10: {mean}")
    print(f"wrote {rc.out_dir}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model = load_model(args.checkpoint) if args.checkpoint else None
    C = model.n_classes if model is not None else args.classes
    if C is None:
        raise ConfigError("--classes is required with --predictions")
    ds = seqdata.load_dataset(args.data, C, args.downsample)
    if args.fold is not None and not 0 <= args.fold < len(ds.folds):
        raise ConfigError(f"--fold {args.fold} out of range for {len(ds.folds)} folds")
    idx = sorted(ds.folds[args.fold]) if args.fold is not None else list(range(len(ds.items)))
    preds = []
    for i in idx:
        x, y = ds.items[i]
        if model is not None:
            if x.d != model.input_dim:
                raise ShapeError(f"{ds.names[i]}: features have {x.d} channels, model expects {model.input_dim}")
            preds.append(predict(model, x.frames))
        else:
            p = seqdata.load_labels(Path(args.predictions) / f"{ds.names[i]}.txt", C).labels
            if p.size != y.T:
                raise ShapeError(f"{ds.names[i]}: {p.size} predicted frames, {y.T} ground-truth frames")
            preds.append(p)
    per = [metrics.score_sequence(p, ds.items[i][1].labels, args.ignore_label) for p, i in zip(preds, idx)]
    _report([ds.names[i] for i in idx], per, metrics.mean_scores(per))
    if args.dump:
        out = Path(args.dump)
        out.mkdir(parents=True, exist_ok=True)
        for p, i in zip(preds, idx):
            seqdata.store_labels(p, out / f"{ds.names[i]}.txt")
    return EXIT_OK


def cmd_verify(args) -> int:
    checks = verify.run_all(args.seeds, args.seed, args.inject_fault, not args.skip_gradients)
    for c in checks:
        print(c.line())
    print("output dimensions at d=128:")
    for kind, got, published in verify.dimension_table(128):
        print(f"  {kind:<18} {got:>6}  (published {published})")
    failed = [c for c in checks if not c.passed]
    if failed:
        print(f"FAILED ({len(failed)}, seed {args.seed}): " + ", ".join(c.name for c in failed))
        return EXIT_VERIFY
    print("all checks passed")
    return EXIT_OK


def cmd_synth(args) -> int:
    ds = seqdata.synth_covariance_dataset(args.seed, args.n, args.T, args.d,
                                          (args.seg_min, args.seg_max), args.rho, args.folds)
    seqdata.store_dataset(ds, args.out, args.format)
    print(f"wrote {len(ds.items)} sequences to {args.out}")
    return EXIT_OK


def _read_weights(path, kind: str, window: int) -> pooling.PoolingWeights:
    try:
        rows = [np.array(line.split(), dtype=np.float64)
                for line in Path(path).read_text().splitlines() if line.strip()]
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    uniform = pooling.PoolingWeights.uniform(window)
    if kind.startswith("coupled"):
        if len(rows) != 1:
            raise ConfigError(f"{path}: coupled pooling takes one row of weights")
        return pooling.PoolingWeights(rows[0], uniform.p, uniform.q)
    if len(rows) != 2:
        raise ConfigError(f"{path}: decoupled pooling takes two rows of weights (p, then q)")
    return pooling.PoolingWeights(uniform.omega, rows[0], rows[1])


def cmd_pool(args) -> int:
    if args.kind not in pooling.KINDS:
        raise ConfigError(f"unknown pooling kind {args.kind!r}; choose from {', '.join(pooling.KINDS)}")
    x = seqdata.load_features(args.features)
    weights = None
    if args.weights:
        if args.kind == "max":
            raise ConfigError("max pooling takes no weights")
        weights = _read_weights(args.weights, args.kind, args.window)
    cfg = pooling.PoolingConfig(args.kind, args.window, args.stride, learnable=weights is not None)
    out, _ = pooling.pool_forward(x.frames, cfg, weights)
    seqdata.store_features(out, args.out, "binary")
    print(f"pooled {x.T}x{x.d} -> {out.shape[0]}x{out.shape[1]} ({args.kind}), wrote {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tpool", description="Local temporal bilinear pooling toolkit.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train an encoder-decoder from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", help="override out_dir from the config")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint or prediction files against labels")
    p.add_argument("--data", required=True, help="dataset directory")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--checkpoint")
    src.add_argument("--predictions", help="directory of per-sequence label files")
    p.add_argument("--classes", type=int, help="class count (needed with --predictions)")
    p.add_argument("--fold", type=int, help="evaluate only this fold")
    p.add_argument("--ignore-label", type=int, help="exclude frames with this gt label from accuracy")
    p.add_argument("--downsample", type=int, default=1)
    p.add_argument("--dump", help="write per-frame predictions here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("verify", help="run numerical self-checks")
    p.add_argument("--seeds", type=int, default=100, help="random kernel-equivalence instances")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--skip-gradients", action="store_true", help="omit the finite-difference audit")
    p.add_argument("--inject-fault", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("synth", help="write a synthetic covariance-switching dataset")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--T", type=int, default=200)
    p.add_argument("--d", type=int, default=8)
    p.add_argument("--rho", type=float, default=0.9)
    p.add_argument("--seg-min", type=int, default=10)
    p.add_argument("--seg-max", type=int, default=20)
    p.add_argument("--folds", type=int)
    p.add_argument("--format", choices=("binary", "csv"), default="binary")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pool", help="apply one pooling operator to a feature file")
    p.add_argument("features")
    p.add_argument("--kind", required=True)
    p.add_argument("--window", type=int, default=5)
    p.add_argument("--stride", type=int, default=2)
    p.add_argument("--weights", help="text file: one row for coupled, rows p and q for decoupled")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pool)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, PermissionError, IsADirectoryError, NotADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ShapeError, ParseError, FormatError, NumericError, TrainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
