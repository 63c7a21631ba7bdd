"""Command-line entry point: ``dnada {analyze,train,eval,plotdata}``.

Exit codes: 0 success, 1 invalid arguments or config, 2 data/runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import datapipe as dp
from .checkpoint import load_checkpoint, save_checkpoint
from .distshift import dataset_report
from .trainer import LossBreakdown, TrainConfig, confusion, evaluate, fit

log = logging.getLogger("dnada")

LOSS_COLUMNS = [f.name for f in fields(LossBreakdown)]
SYNTH_DEFAULTS = {"synth_n": 500, "synth_classes": 2, "synth_dim": 8, "synth_shift": 4.0}
FLAG_ALIASES = {"timesteps": "T"}


class ValidationError(Exception):
    pass


def read_config_file(path) -> dict:
    """Flat ``key = value`` file; keys use flag spelling (``-`` or ``_``)."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _coerce(name: str, value, typ):
    if isinstance(value, str):
        if typ is bool or typ == "bool":
            low = value.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValidationError(f"{name}: expected a boolean, got {value!r}")
            return low in ("true", "1", "yes")
        try:
            return int(value) if typ in (int, "int") else float(value)
        except ValueError:
            raise ValidationError(f"{name}: cannot parse {value!r}") from None
    return value


def resolve_train_config(args) -> TrainConfig:
    values = {}
    cfg_file = read_config_file(args.config) if getattr(args, "config", None) else {}
    types = {f.name: f.type for f in fields(TrainConfig)}
    for key, value in cfg_file.items():
        key = FLAG_ALIASES.get(key, key)
        if key in types:
            values[key] = _coerce(key, value, types[key])
        elif key not in SYNTH_DEFAULTS and key not in ("manifest", "source_user", "target_user"):
            raise ValidationError(f"unknown config key {key!r}")
    for name in types:
        flag = "timesteps" if name == "T" else name
        v = getattr(args, flag, None)
        if v is not None:
            values[name] = v
    try:
        return TrainConfig(**values).validate()
    except ValueError as exc:
        raise ValidationError(str(exc)) from None


def _synth_params(args) -> dict:
    cfg_file = read_config_file(args.config) if getattr(args, "config", None) else {}
    out = {}
    for k, default in SYNTH_DEFAULTS.items():
        v = getattr(args, k, None)
        if v is None and k in cfg_file:
            v = _coerce(k, cfg_file[k], type(default))
        out[k] = default if v is None else v
    return out


# --- data ------------------------------------------------------------------

def load_manifest(path) -> dict:
    path = Path(path)
    doc = json.loads(path.read_text())
    users = doc.get("users")
    if not isinstance(users, dict) or not users:
        raise ValidationError(f"{path}: manifest needs a non-empty 'users' mapping")
    for uid, entry in users.items():
        if "csv" not in entry or "sample_rate_hz" not in entry:
            raise ValidationError(f"{path}: user {uid!r} needs 'csv' and 'sample_rate_hz'")
        entry["csv"] = str((path.parent / entry["csv"]).resolve())
    doc.setdefault("window_seconds", 3.0)
    doc.setdefault("overlap", 0.5)
    return doc


def user_features(manifest: dict, user: str, domain: int) -> list[dp.FeatureVector]:
    if user not in manifest["users"]:
        raise ValidationError(f"unknown user {user!r}; manifest has {sorted(manifest['users'])}")
    entry = manifest["users"][user]
    schema = dp.CsvSchema(entry.get("timestamp", "timestamp"), entry.get("channels", ()),
                          entry.get("activity", "activity"))
    rows = dp.load_csv(entry["csv"], schema)
    if rows.activity is None:
        raise dp.DataError(f"{entry['csv']}: no activity column")
    wins = dp.make_windows(rows, float(entry["sample_rate_hz"]), manifest["window_seconds"],
                           manifest["overlap"], user)
    return [dp.extract_features(w, domain) for w in wins]


def raw_domains(data: dict):
    """Source and labeled target feature lists from a manifest or the synthetic fixture."""
    if data["kind"] == "synthetic":
        p = data["params"]
        return dp.synth_domains(p["synth_n"], p["synth_classes"], p["synth_dim"],
                                p["synth_shift"], data["seed"])
    manifest = load_manifest(data["manifest"])
    return (user_features(manifest, data["source_user"], 0),
            user_features(manifest, data["target_user"], 1))


def data_spec(args, seed: int) -> dict:
    if getattr(args, "synthetic", False):
        return {"kind": "synthetic", "params": _synth_params(args), "seed": seed}
    if not getattr(args, "manifest", None):
        raise ValidationError("either --manifest or --synthetic is required")
    if not args.source_user or not args.target_user:
        raise ValidationError("--source-user and --target-user are required with --manifest")
    return {"kind": "manifest", "manifest": str(Path(args.manifest).resolve()),
            "source_user": args.source_user, "target_user": args.target_user}


def _write_csv(path: Path, header, rows):
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(x) -> str:
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


# --- commands --------------------------------------------------------------

def cmd_analyze(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    n_boot = args.n_boot if args.n_boot is not None else 5000
    if n_boot < 1:
        raise ValidationError("--n-boot must be positive")
    seed = args.seed or 0
    manifest = load_manifest(args.manifest)
    source = user_features(manifest, args.source_user, 0)
    target = user_features(manifest, args.target_user, 1)
    if not args.raw_features:
        mu, sd = dp.fit_normalizer(source, target)
        source, target = dp.normalize(source, mu, sd), dp.normalize(target, mu, sd)
    rep = dataset_report(source, target, n_boot, seed)
    _write_csv(out / "report.csv", ["activity", "observed_distance", "proportion", "n_boot"],
               [[r.activity, _fmt(r.observed_distance), _fmt(r.proportion), r.n_boot]
                for r in rep.reports])
    _write_csv(out / "bootstrap.csv", ["activity", "iteration", "distance", "observed_distance"],
               [[r.activity, i, _fmt(d), _fmt(r.observed_distance)]
                for r in rep.reports for i, d in enumerate(r.bootstrap_distances)])
    summary = {"source_user": args.source_user, "target_user": args.target_user,
               "avg_distance": rep.avg_distance, "avg_proportion": rep.avg_proportion,
               "activities": [r.activity for r in rep.reports]}
    (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True))
    (out / "resolved_config.json").write_text(json.dumps(
        {"command": "analyze", "manifest": str(Path(args.manifest).resolve()),
         "source_user": args.source_user, "target_user": args.target_user,
         "n_boot": n_boot, "seed": seed, "raw_features": bool(args.raw_features)},
        indent=1, sort_keys=True))
    log.info("avg distance %.4f, avg proportion %.4f", rep.avg_distance, rep.avg_proportion)
    return 0


def cmd_train(args) -> int:
    cfg = resolve_train_config(args)
    data = data_spec(args, cfg.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved_config.json").write_text(
        json.dumps({"command": "train", "train": asdict(cfg), "data": data}, indent=1, sort_keys=True))
    if args.dry_run:
        return 0
    source, target = raw_domains(data)
    split = dp.build_split(source, target, seed=cfg.seed)
    res = fit(split, cfg, progress=True)
    save_checkpoint(out / "checkpoint.json", res.models, cfg, res.opt_state,
                    extra={"data": data, "best_epoch": res.best_epoch,
                           "best_val": res.best_val})
    write_history(out, res.history)
    log.info("best epoch %d, validation accuracy %.4f", res.best_epoch, res.best_val)
    return 0


def write_history(out: Path, history: list[dict]):
    header = ["epoch", *LOSS_COLUMNS, "val_acc"]
    _write_csv(out / "history.csv", header, [[_fmt(r[k]) for k in header] for r in history])
    with (out / "history.jsonl").open("w") as fh:
        for r in history:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def cmd_eval(args) -> int:
    models, cfg, _, extra = load_checkpoint(args.checkpoint)
    if args.synthetic or args.manifest:
        data = data_spec(args, cfg.seed if args.seed is None else args.seed)
        if data["kind"] == "synthetic" and extra.get("data", {}).get("kind") == "synthetic":
            # same fixture as training unless flags override it
            saved = extra["data"]
            data = {**saved, "params": {**saved["params"], **{
                k: v for k, v in vars(args).items() if k in SYNTH_DEFAULTS and v is not None}}}
            if args.seed is not None:
                data["seed"] = args.seed
    else:
        data = extra.get("data")
        if not data:
            raise ValidationError("checkpoint records no data source; pass --manifest or --synthetic")
    if args.infer_passes is not None:
        cfg.infer_passes = args.infer_passes
    _, target = raw_domains(data)
    _, test = dp.split_target(target)
    if not test:
        raise dp.DataError("empty test set")
    if test[0].x0.size != models.dim:
        raise dp.DataError(f"checkpoint expects {models.dim} features, data has {test[0].x0.size}")
    if models.norm_mean is not None:
        test = dp.normalize(test, models.norm_mean, models.norm_std)
    rng = np.random.default_rng([cfg.seed, 0xE7A1])
    acc = evaluate(models, test, cfg, rng)
    cm = confusion(models, test, cfg, np.random.default_rng([cfg.seed, 0xE7A1]))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "accuracy.json").write_text(json.dumps(
        {"accuracy": acc, "n_test": len(test), "checkpoint": str(Path(args.checkpoint).resolve())},
        indent=1, sort_keys=True))
    n = cm.shape[0]
    _write_csv(out / "confusion.csv", ["true\\pred", *range(n)],
               [[i, *cm[i].tolist()] for i in range(n)])
    (out / "resolved_config.json").write_text(json.dumps(
        {"command": "eval", "train": asdict(cfg), "data": data}, indent=1, sort_keys=True))
    log.info("target test accuracy %.4f on %d samples", acc, len(test))
    return 0


def cmd_plotdata(args) -> int:
    src = Path(args.input)
    if not src.is_file():
        raise dp.DataError(f"no such file: {src}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if src.suffix == ".jsonl":
        try:
            rows = [json.loads(l) for l in src.read_text().splitlines() if l.strip()]
        except json.JSONDecodeError as exc:
            raise dp.DataError(f"{src}: {exc}") from None
        return _loss_tables(rows, out)
    with src.open(newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        rows = list(reader)
    if set(["epoch", *LOSS_COLUMNS]) <= set(header):
        return _loss_tables(rows, out)
    if {"activity", "distance", "observed_distance"} <= set(header):
        return _histogram_tables(rows, out, args.bins)
    raise dp.DataError(f"{src}: neither a training history nor a bootstrap dump")


def _loss_tables(rows: list[dict], out: Path) -> int:
    header = ["epoch", *LOSS_COLUMNS]
    try:
        body = [[int(float(r["epoch"])), *(_fmt(float(r[k])) for k in LOSS_COLUMNS)] for r in rows]
        val = [[int(float(r["epoch"])), _fmt(float(r["val_acc"]))] for r in rows if "val_acc" in r]
    except (KeyError, ValueError) as exc:
        raise dp.DataError(f"history row unparseable: {exc}") from None
    _write_csv(out / "loss_curve.csv", header, body)
    _write_csv(out / "val_curve.csv", ["epoch", "val_acc"], val)
    return 0


def _histogram_tables(rows: list[dict], out: Path, bins: int) -> int:
    by_act: dict[str, list[float]] = {}
    observed = {}
    try:
        for r in rows:
            by_act.setdefault(r["activity"], []).append(float(r["distance"]))
            observed[r["activity"]] = float(r["observed_distance"])
    except ValueError as exc:
        raise dp.DataError(f"bootstrap row unparseable: {exc}") from None
    body = []
    for act in sorted(by_act, key=lambda a: int(a)):
        counts, edges = np.histogram(by_act[act], bins=bins)
        body += [[act, _fmt(edges[i]), _fmt(edges[i + 1]), int(counts[i]), _fmt(observed[act])]
                 for i in range(len(counts))]
    _write_csv(out / "histogram.csv",
               ["activity", "bin_left", "bin_right", "count", "observed_distance"], body)
    return 0


# --- argument parsing ------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dnada", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def data_flags(sp):
        sp.add_argument("--manifest")
        sp.add_argument("--source-user")
        sp.add_argument("--target-user")
        sp.add_argument("--synthetic", action="store_true", help="use the offline synthetic fixture")
        sp.add_argument("--synth-n", type=int, help="samples per class and domain (default 500)")
        sp.add_argument("--synth-classes", type=int)
        sp.add_argument("--synth-dim", type=int)
        sp.add_argument("--synth-shift", type=float)

    a = sub.add_parser("analyze", help="cross-user distance report with bootstrap")
    a.add_argument("--manifest", required=True)
    a.add_argument("--source-user", required=True)
    a.add_argument("--target-user", required=True)
    a.add_argument("--n-boot", type=int, default=None, help="bootstrap iterations (default 5000)")
    a.add_argument("--seed", type=int)
    a.add_argument("--raw-features", action="store_true", help="skip pooled z-normalization")
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_analyze)

    t = sub.add_parser("train", help="pseudo-label target data and fit the model")
    data_flags(t)
    t.add_argument("--config")
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--timesteps", type=int)
    t.add_argument("--sqrt-mode", action=argparse.BooleanOptionalAction, default=None)
    t.add_argument("--fixed-unit-var", action=argparse.BooleanOptionalAction, default=None)
    t.add_argument("--grl-into-generator", action=argparse.BooleanOptionalAction, default=None)
    t.add_argument("--infer-passes", type=int)
    t.add_argument("--batch-size", type=int)
    for name in ("lambda_act", "lambda_binary", "lambda_adv", "lambda_act_source",
                 "gamma_a", "gamma_u", "gamma_as", "lambda_grl", "beta_start", "beta_end"):
        t.add_argument("--" + name.replace("_", "-"), type=float)
    t.add_argument("--temb-dim", type=int)
    t.add_argument("--dry-run", action="store_true", help="validate and echo the resolved config only")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="target-test accuracy of a checkpoint")
    e.add_argument("--checkpoint", required=True)
    data_flags(e)
    e.add_argument("--seed", type=int)
    e.add_argument("--infer-passes", type=int)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    pd_ = sub.add_parser("plotdata", help="plot-ready tables from a history or bootstrap dump")
    pd_.add_argument("input")
    pd_.add_argument("--bins", type=int, default=30)
    pd_.add_argument("--out", required=True)
    pd_.set_defaults(func=cmd_plotdata)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ValidationError as exc:
        log.error("%s", exc)
        return 1
    except (dp.DataError, FileNotFoundError, ValueError, OSError) as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
