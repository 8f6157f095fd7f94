"""Command-line entry point: ``ppgauth <subcommand> [options]``.

Every subcommand accepts ``--config FILE.json`` (keys are option names,
dashes or underscores) and ``--seed``. Flags given on the command line win
over config values.
"""

import argparse
import hashlib
import json
import logging
import math
import os
import sys
from dataclasses import asdict

import numpy as np

from ppgauth import __version__
from ppgauth.checkpoint import load_checkpoint, save_checkpoint
from ppgauth.dataset import SplitSpec, build_dataset, filter_by, load_dataset, save_dataset, stratified_split
from ppgauth.errors import PPGAuthError, UsageError
from ppgauth.metrics import metrics_report, write_roc_csvs
from ppgauth.signal_io import bandpass, band_edges, load_csv, resample, write_csv
from ppgauth.streaming import StreamConfig
from ppgauth.study import Condition, compare_conditions, make_cohort, model_config_for, power_estimate, random_profile, sweep_rates
from ppgauth.training import TrainConfig, evaluate, train, write_history_csv

log = logging.getLogger("ppgauth")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common(p, seed_default=0):
    p.add_argument("--config", metavar="JSON", help="JSON file of option defaults")
    p.add_argument("--seed", type=int, default=seed_default)


def _model_args(p, hidden=256, layers=3, epochs=40):
    g = p.add_argument_group("model / training")
    g.add_argument("--hidden-dim", type=int, default=hidden)
    g.add_argument("--layers", type=int, default=layers)
    g.add_argument("--dropout", type=float, default=0.47)
    g.add_argument("--epochs", "--max-epochs", dest="epochs", type=int, default=epochs)
    g.add_argument("--batch-size", type=int, default=32)
    g.add_argument("--lr", type=float, default=9.23e-4)
    g.add_argument("--weight-decay", type=float, default=8.21e-6)
    g.add_argument("--schedule", choices=("plateau", "exponential"), default="plateau")
    g.add_argument("--clip-norm", type=float, default=5.0, help="<= 0 disables clipping")
    g.add_argument("--split", type=float, nargs=3, default=(0.6, 0.2, 0.2), metavar=("TRAIN", "VAL", "TEST"))


def _model_kwargs(a):
    return dict(hidden_dim=a.hidden_dim, num_layers=a.layers, dropout_rate=a.dropout)


def _train_cfg(a):
    return TrainConfig(
        max_epochs=a.epochs, batch_size=a.batch_size, lr0=a.lr, weight_decay=a.weight_decay,
        seed=a.seed, schedule=a.schedule, clip_norm=a.clip_norm if a.clip_norm > 0 else None,
    )


def _split(a):
    return SplitSpec(tuple(a.split), seed=a.seed)


def build_parser():
    parser = _Parser(prog="ppgauth", description="PPG continuous-authentication toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, metavar="COMMAND")
    sub.required = True
    cmds = {}

    p = cmds["synth"] = sub.add_parser("synth", help="generate a synthetic cohort as CSV + manifest")
    _common(p, seed_default=7)
    p.add_argument("--subjects", type=int, default=6)
    p.add_argument("--minutes", type=float, default=20.0)
    p.add_argument("--rate", type=float, default=25.0)
    p.add_argument("--kind", choices=("morphology", "lag"), default="morphology")
    p.add_argument("--sessions", type=int, default=1)
    p.add_argument("--out", required=True, help="output directory")

    p = cmds["ingest"] = sub.add_parser("ingest", help="CSV -> windowed dataset manifest")
    _common(p)
    p.add_argument("--csv", required=True)
    p.add_argument("--out", required=True, help="dataset manifest (.json)")
    p.add_argument("--rate", type=float, default=None, help="override the inferred sample rate")
    p.add_argument("--window-s", type=float, default=4.0)
    p.add_argument("--overlap", type=float, default=0.5)
    p.add_argument("--no-filter", action="store_true", help="skip the band-pass")

    p = cmds["preprocess"] = sub.add_parser("preprocess", help="resample and band-pass a CSV")
    _common(p)
    p.add_argument("--csv", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resample", type=float, default=None, metavar="HZ")
    p.add_argument("--band", type=float, nargs=2, default=None, metavar=("LOW", "HIGH"))

    p = cmds["train"] = sub.add_parser("train", help="train a classifier on a dataset manifest")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--history", default=None, help="per-epoch CSV")
    _model_args(p)

    p = cmds["eval"] = sub.add_parser("eval", help="score a checkpoint on a split")
    _common(p, seed_default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--subset", choices=("train", "val", "test", "all"), default="test")
    p.add_argument("--threshold", type=float, default=0.8)
    p.add_argument("--out", default=None, help="metrics JSON")
    p.add_argument("--roc-dir", default=None, help="write per-class ROC CSVs here")

    p = cmds["sweep"] = sub.add_parser("sweep", help="sampling-rate sweep")
    _common(p)
    src = p.add_mutually_exclusive_group()
    src.add_argument("--csv", help="source recordings")
    src.add_argument("--synth-subjects", type=int, default=6)
    p.add_argument("--synth-minutes", type=float, default=20.0)
    p.add_argument("--synth-rate", type=float, default=100.0)
    p.add_argument("--synth-sessions", type=int, default=4)
    p.add_argument("--synth-seed", type=int, default=7)
    p.add_argument("--rates", type=float, nargs="+", default=(100.0, 25.0, 5.0))
    p.add_argument("--out-json", default=None)
    p.add_argument("--out-csv", default=None)
    _model_args(p, hidden=32, layers=1)

    p = cmds["compare"] = sub.add_parser("compare", help="paired condition comparison")
    _common(p)
    p.add_argument("--data", required=True)
    for side in ("a", "b"):
        p.add_argument(f"--{side}-name", default=side.upper())
        p.add_argument(f"--{side}-channels", nargs="+", default=None)
        p.add_argument(f"--{side}-activities", nargs="+", default=None)
    p.add_argument("--eval-activities", nargs="+", default=None)
    p.add_argument("--out", default=None)
    _model_args(p, hidden=32, layers=1)

    p = cmds["power"] = sub.add_parser("power", help="estimated sensor power at a rate")
    _common(p)
    p.add_argument("--rate", type=float, required=True)
    p.add_argument("--floor-mw", type=float, default=38.0)
    p.add_argument("--json", action="store_true")

    p = cmds["serve"] = sub.add_parser("serve", help="run the authentication gateway")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=7447)
    p.add_argument("--threshold", type=float, default=0.8)
    p.add_argument("--warmup-s", type=float, default=120.0)
    p.add_argument("--majority-k", type=int, default=5)
    p.add_argument("--log", default=None, help="combined JSON-lines decision log")
    p.add_argument("--session-dir", default=None, help="per-session JSON-lines logs")
    p.add_argument("--echo", action="store_true", help="print decisions to stdout")

    p = cmds["simulate"] = sub.add_parser("simulate", help="replay signal to a gateway")
    _common(p)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=7447)
    p.add_argument("--csv", default=None, help="replay the first matching record of a CSV")
    p.add_argument("--subject", default=None)
    p.add_argument("--activity", default=None)
    p.add_argument("--duration-s", type=float, default=300.0, help="length of a synthetic stream")
    p.add_argument("--rate", type=float, default=25.0)
    p.add_argument("--speed", type=float, default=1.0, help="x real time; 'inf' for no pacing")
    p.add_argument("--session-id", type=int, default=0)
    p.add_argument("--frame-samples", type=int, default=25)

    return parser, cmds


def _config_path(argv):
    for k, tok in enumerate(argv):
        if tok == "--config" and k + 1 < len(argv):
            return argv[k + 1]
        if tok.startswith("--config="):
            return tok.split("=", 1)[1]
    return None


def _apply_config(argv, parser, cmds):
    """Install config-file values as subcommand defaults before parsing, so
    they can satisfy required options while explicit flags still win."""
    path = _config_path(argv)
    command = next((tok for tok in argv if tok in cmds), None)
    if not path or command is None:
        return
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise UsageError("config must be a JSON object")
    sub = cmds[command]
    actions = {a.dest: a for a in sub._actions}
    for key, value in cfg.items():
        dest = key.replace("-", "_")
        if dest in ("config", "help") or dest not in actions:
            raise UsageError(f"unknown config key {key!r} for {command}")
        actions[dest].required = False
        sub.set_defaults(**{dest: value})


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def cmd_synth(a):
    os.makedirs(a.out, exist_ok=True)
    cohort = make_cohort(a.subjects, a.minutes, a.rate, a.seed, a.kind, sessions=a.sessions)
    csv_path = os.path.join(a.out, "records.csv")
    write_csv(cohort.records, csv_path)
    manifest = {
        "generator": {"subjects": a.subjects, "minutes": a.minutes, "rate_hz": a.rate,
                      "kind": a.kind, "sessions": a.sessions, "seed": a.seed},
        "profiles": {sid: asdict(p) for sid, p in cohort.profiles.items()},
        "records": [{"record_id": r.record_id, "subject": r.subject_id, "activity": r.activity,
                     "rate_hz": r.rate_hz, "n_samples": len(r)} for r in cohort.records],
        "csv": "records.csv",
        "csv_sha256": _sha256(csv_path),
    }
    path = os.path.join(a.out, "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
    print(path)


def cmd_ingest(a):
    records = load_csv(a.csv, a.rate)
    ds = build_dataset(records, a.window_s, a.overlap, filter_band=not a.no_filter)
    save_dataset(ds, a.out)
    counts = dict(zip(ds.label_names, ds.counts().tolist()))
    print(json.dumps({"records": len(records), "windows": len(ds), "per_class": counts}))


def cmd_preprocess(a):
    records = load_csv(a.csv)
    out = []
    for rec in records:
        if a.resample:
            rec = resample(rec, a.resample)
        low, high = a.band if a.band else band_edges(rec.rate_hz)
        out.append(bandpass(rec, low, high))
    write_csv(out, a.out)
    print(a.out)


def cmd_train(a):
    ds = load_dataset(a.data)
    tr, va, te = stratified_split(ds, _split(a))
    cfg = model_config_for(tr, **_model_kwargs(a))
    params, history = train(cfg, _train_cfg(a), tr, va)
    test = evaluate(params, te)
    w0 = ds.windows[0]
    meta = {"split": list(a.split), "seed": a.seed, "rate_hz": w0.rate_hz,
            "window_s": w0.values.shape[0] / w0.rate_hz, "test_accuracy": test.accuracy}
    save_checkpoint(params, a.out, history, ds.label_names, meta)
    if a.history:
        write_history_csv(history, a.history)
    print(json.dumps({"checkpoint": a.out, "epochs": len(history), "test_accuracy": test.accuracy}))


def cmd_eval(a):
    params, header = load_checkpoint(a.checkpoint, with_header=True)
    meta = header.get("metadata", {})
    ds = load_dataset(a.data)
    seed = a.seed if a.seed is not None else meta.get("seed", 0)
    fractions = tuple(meta.get("split", (0.6, 0.2, 0.2)))
    if a.subset == "all":
        part = ds
    else:
        tr, va, te = stratified_split(ds, SplitSpec(fractions, seed))
        part = {"train": tr, "val": va, "test": te}[a.subset]
    res = evaluate(params, part)
    report = metrics_report(res.probs, res.labels, a.threshold, ds.label_names)
    if a.out:
        report.to_json(a.out)
    if a.roc_dir:
        write_roc_csvs(res.probs, res.labels, a.roc_dir)
    print(json.dumps({"accuracy": report.accuracy, "macro_f1": report.macro_f1,
                      "far": report.far, "frr": report.frr, "eer": report.eer}))


def cmd_sweep(a):
    if a.csv:
        records = load_csv(a.csv)
    else:
        records = make_cohort(a.synth_subjects, a.synth_minutes, a.synth_rate, a.synth_seed,
                              sessions=a.synth_sessions).records
    report = sweep_rates(records, a.rates, _model_kwargs(a), _train_cfg(a), _split(a))
    if a.out_json:
        report.to_json(a.out_json)
    if a.out_csv:
        report.to_csv(a.out_csv)
    for row in report.rows:
        print(json.dumps(asdict(row)))


def _channels(values):
    if values is None:
        return None
    return tuple(int(v) if v.isdigit() else v for v in values)


def cmd_compare(a):
    ds = load_dataset(a.data)
    ca = Condition(a.a_name, a.a_activities and tuple(a.a_activities), _channels(a.a_channels))
    cb = Condition(a.b_name, a.b_activities and tuple(a.b_activities), _channels(a.b_channels))
    ev = tuple(a.eval_activities) if a.eval_activities else None
    out = compare_conditions(ds, ca, cb, _model_kwargs(a), _train_cfg(a), _split(a), ev)
    if a.out:
        with open(a.out, "w", encoding="utf-8") as fh:
            json.dump(out, fh, indent=2)
    print(json.dumps(out))


def cmd_power(a):
    mw, estimated = power_estimate(a.rate, a.floor_mw, with_flag=True)
    if a.json:
        print(json.dumps({"rate_hz": a.rate, "power_mw": mw, "estimated": estimated}))
    else:
        print(f"{mw:.10g}")


def _stream_config(a, meta):
    return StreamConfig(
        rate_hz=meta.get("rate_hz", 25.0), window_s=meta.get("window_s", 4.0),
        warmup_s=a.warmup_s, threshold=a.threshold, majority_k=a.majority_k,
    )


def cmd_serve(a):
    from ppgauth.gateway import gateway_serve

    params, header = load_checkpoint(a.checkpoint, with_header=True)
    cfg = _stream_config(a, header.get("metadata", {}))
    gateway_serve((a.host, a.port), params, cfg, log_path=a.log, session_dir=a.session_dir,
                  echo=a.echo)


def cmd_simulate(a):
    from ppgauth.gateway import simulate_device

    if a.csv:
        records = load_csv(a.csv)
        match = [r for r in records
                 if (a.subject is None or r.subject_id == a.subject)
                 and (a.activity is None or r.activity == a.activity)]
        if not match:
            raise UsageError("no record matches --subject/--activity")
        source = match[0]
    else:
        source = random_profile(np.random.default_rng(a.seed), a.seed)
    n = simulate_device(source, (a.host, a.port), speed=a.speed, session_id=a.session_id,
                        frame_samples=a.frame_samples, duration_s=a.duration_s, rate_hz=a.rate)
    print(json.dumps({"frames": n}))


COMMANDS = {
    "synth": cmd_synth, "ingest": cmd_ingest, "preprocess": cmd_preprocess, "train": cmd_train,
    "eval": cmd_eval, "sweep": cmd_sweep, "compare": cmd_compare, "power": cmd_power,
    "serve": cmd_serve, "simulate": cmd_simulate,
}


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser, cmds = build_parser()
    try:
        _apply_config(argv, parser, cmds)
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if isinstance(getattr(args, "speed", None), float) and math.isnan(args.speed):
            raise UsageError("--speed must be a number")
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (PPGAuthError, ValueError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
