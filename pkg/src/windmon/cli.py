"""Command-line pipeline: simulate | ingest | filter | train | pretrain |
finetune | evaluate | monitor | sweep.

Each subcommand takes an optional JSON config file plus flags (flags win),
writes its artifacts atomically into --out-dir, and appends a reproducibility
record to <out-dir>/manifest.jsonl. Exit codes: 0 success, 2 config error,
3 data error, 4 numeric error.

Heavy imports happen inside the handlers so that --threads can pin the BLAS
pool before numpy loads.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

from .errors import ConfigError, DataError, DomainError, NumericError, WindmonError

__version__ = "0.1.0"

logger = logging.getLogger("windmon")


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}")
    if not isinstance(cfg, dict):
        raise ConfigError(f"config file {path} must contain a JSON object")
    return cfg


def _setting(args, cfg: dict, key: str, default=None):
    """Flag value if given, else config-file value, else default."""
    value = getattr(args, key, None)
    if value is not None:
        return value
    return cfg.get(key, default)


def _append_manifest(out_dir: Path, record: dict):
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "manifest.jsonl", "a", encoding="utf-8") as fh:
        fh.write(json.dumps(record) + "\n")


def _run_command(args, worker) -> int:
    """Shared wrapper: timing, manifest, error-to-exit-code mapping."""
    out_dir = Path(args.out_dir)
    started = time.time()
    record = {
        "subcommand": args.subcommand,
        "version": __version__,
        "config_path": getattr(args, "config", None),
        "seed": getattr(args, "seed", None),
        "threads": getattr(args, "threads", None),
        "started_unix": started,
    }
    inputs, outputs = worker(out_dir)
    record["inputs"] = inputs
    record["outputs"] = outputs
    record["elapsed_s"] = round(time.time() - started, 3)
    _append_manifest(out_dir, record)
    return 0


# ---------------------------------------------------------------------------
# subcommand handlers
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    from . import data

    cfg = _load_config(args.config)
    faults = [data.SimFault(**f) for f in cfg.pop("faults", [])]
    if args.seed is not None:
        cfg["seed"] = args.seed
    sim_config = data.SimConfig(faults=faults, **cfg)

    def worker(out_dir: Path):
        fleet, events, truth = data.simulate_fleet(sim_config)
        outputs = []
        for ds in fleet:
            path = out_dir / f"{ds.unit_id}.csv"
            data.save_raw_csv(ds, path)
            outputs.append(str(path))
        events_path = out_dir / "events.csv"
        events.save_csv(events_path)
        outputs.append(str(events_path))
        truth_path = out_dir / "truth.json"
        from .ioutil import atomic_write_text

        atomic_write_text(truth_path, truth.to_json())
        outputs.append(str(truth_path))
        if args.write_schema:
            schema_path = out_dir / "schema.json"
            data.sim_schema(sim_config.cadence_minutes).save(schema_path)
            outputs.append(str(schema_path))
        print(f"simulated {len(fleet)} unit(s) into {out_dir}")
        return [], outputs

    return _run_command(args, worker)


def cmd_ingest(args) -> int:
    from . import data

    schema = data.Schema.load(args.schema)

    def worker(out_dir: Path):
        dataset, report = data.ingest(args.csv, schema, unit_id=args.unit_id)
        path = out_dir / f"{dataset.unit_id}.csv"
        data.save_dataset(dataset, path)
        print(
            f"ingested {report.rows_kept}/{report.rows_read} rows "
            f"({report.rows_dropped_missing} missing, "
            f"{report.rows_dropped_unparseable} unparseable) -> {path}"
        )
        return [args.csv, args.schema], [str(path)]

    return _run_command(args, worker)


def cmd_filter(args) -> int:
    from . import data

    def worker(out_dir: Path):
        dataset = data.load_dataset(args.data)
        events = data.EventLog.load_csv(args.events)
        filtered, report = data.filter_events(dataset, events, args.pre_outage_days)
        path = out_dir / f"{dataset.unit_id}_filtered.csv"
        data.save_dataset(filtered, path)
        print(
            f"kept {report.rows_out}/{report.rows_in} rows; removed "
            + (json.dumps(report.removed) if report.removed else "nothing")
        )
        return [args.data, args.events], [str(path)]

    return _run_command(args, worker)


def _resolve_arch(name_or_path: str, input_dim: int, std_floor: float):
    from . import model

    if name_or_path.upper() in ("A1", "A2"):
        return model.preset(name_or_path, input_dim=input_dim, std_floor=std_floor), name_or_path.upper()
    with open(name_or_path, "r", encoding="utf-8") as fh:
        arch = model.ArchitectureSpec.from_dict(json.load(fh))
    if arch.input_dim != input_dim:
        raise ConfigError(
            f"architecture expects input_dim {arch.input_dim} but data has {input_dim} features"
        )
    return arch, None


def _train_config(args, cfg: dict, defaults: dict | None = None):
    from .training import TrainConfig

    defaults = defaults or {}

    def pick(key, fallback):
        return _setting(args, cfg, key, defaults.get(key, fallback))

    return TrainConfig(
        learning_rate=float(pick("learning_rate", 0.001)),
        batch_size=int(pick("batch_size", 32)),
        max_epochs=int(pick("max_epochs", 100)),
        early_stop_patience=int(pick("early_stop_patience", 10)),
        seed=int(pick("seed", 0)),
    )


def _save_training_artifacts(out_dir, stem, bundle, history, extra_outputs=()):
    from .ioutil import atomic_write_text

    bundle_path = out_dir / f"{stem}.bundle.json"
    bundle.save(bundle_path)
    history_path = out_dir / f"{stem}.history.csv"
    atomic_write_text(history_path, history.to_csv())
    return [str(bundle_path), str(history_path), *extra_outputs]


def cmd_train(args) -> int:
    from . import data, model, training

    cfg = _load_config(args.config)

    def worker(out_dir: Path):
        dataset = data.load_dataset(args.data)
        spec = training.SplitSpec(
            test_fraction=float(_setting(args, cfg, "test_fraction", 0.2)),
            validation_fraction=float(_setting(args, cfg, "validation_fraction", 0.1)),
        )
        config = _train_config(args, cfg)
        train, val, test = training.split_chronological(dataset, spec, config.seed)
        stats = data.fit_normalization(train)
        train_n = data.apply_normalization(train, stats)
        val_n = data.apply_normalization(val, stats)
        std_floor = float(_setting(args, cfg, "std_floor", 0.001))
        arch, preset_name = _resolve_arch(
            _setting(args, cfg, "arch", "A1"), train_n.n_features, std_floor
        )
        params, history = training.train_pmlp(arch, train_n, val_n, config)
        bundle = model.ModelBundle(
            arch=arch,
            params=params,
            normalization=stats.to_dict(),
            metadata={
                "trained_on": dataset.unit_id,
                "mode": "from_scratch",
                "arch_preset": preset_name,
                "seed": config.seed,
                "epochs_run": len(history.train_nll),
                "best_epoch": history.best_epoch,
                "stopped_early": history.stopped_early,
                "rated_power": _setting(args, cfg, "rated_power"),
            },
        )
        test_path = out_dir / f"{dataset.unit_id}_test.csv"
        data.save_dataset(test, test_path)
        outputs = _save_training_artifacts(
            out_dir, dataset.unit_id, bundle, history, [str(test_path)]
        )
        print(
            f"trained on {len(train)} rows, validated on {len(val)}; "
            f"best epoch {history.best_epoch}, "
            f"val NLL {history.val_nll[history.best_epoch]:.4f}"
        )
        return [args.data], outputs

    return _run_command(args, worker)


def cmd_pretrain(args) -> int:
    from . import data, model, training

    cfg = _load_config(args.config)

    def worker(out_dir: Path):
        fleet = [data.load_dataset(p) for p in args.data]
        config = _train_config(args, cfg, defaults={"max_epochs": 500})
        val_fraction = float(_setting(args, cfg, "validation_fraction", 0.1))

        pooled = training.TrainingSet(
            features=__import__("numpy").concatenate([u.features for u in fleet]),
            target_power=__import__("numpy").concatenate([u.target_power for u in fleet]),
        )
        # normalization comes from the pooled rows so all units share a scale
        pooled_ds = data.TurbineDataset(
            unit_id="fleet",
            timestamps=fleet[0].timestamps[:1],
            features=pooled.features[:1],
            target_power=pooled.target_power[:1],
            feature_names=list(fleet[0].feature_names),
        )
        stats_source = data.TurbineDataset(
            unit_id="fleet",
            timestamps=None,  # placeholder, replaced below
            features=None,
            target_power=None,
            feature_names=None,
        )
        raise NotImplementedError

    return _run_command(args, worker)


def cmd_finetune(args) -> int:
    raise NotImplementedError


def cmd_evaluate(args) -> int:
    raise NotImplementedError


def cmd_monitor(args) -> int:
    raise NotImplementedError


def cmd_sweep(args) -> int:
    raise NotImplementedError


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="windmon",
        description="Fleet condition monitoring: probabilistic power model + CUSUM alarms",
    )
    parser.add_argument("--version", action="version", version=f"windmon {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file; flags override its entries")
        p.add_argument("--out-dir", required=True, help="directory for output artifacts")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=None,
                       help="BLAS thread cap, applied before numpy loads")

    p = sub.add_parser("simulate", help="generate a synthetic fleet")
    common(p)
    p.add_argument("--write-schema", action="store_true",
                   help="also write the ingestion schema for the simulated files")
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("ingest", help="raw SCADA CSV -> processed dataset")
    common(p)
    p.add_argument("--csv", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--unit-id", default=None)
    p.set_defaults(handler=cmd_ingest)

    p = sub.add_parser("filter", help="remove event-affected rows")
    common(p)
    p.add_argument("--data", required=True, help="processed dataset CSV")
    p.add_argument("--events", required=True, help="events CSV")
    p.add_argument("--pre-outage-days", type=float, default=7.0)
    p.set_defaults(handler=cmd_filter)

    for name, helptext in (
        ("train", "fit a single-unit model from scratch"),
        ("pretrain", "fit one shared model on pooled fleet data"),
        ("finetune", "continue a pre-trained model on one unit"),
    ):
        p = sub.add_parser(name, help=helptext)
        common(p)
        if name == "pretrain":
            p.add_argument("--data", required=True, nargs="+",
                           help="processed dataset CSVs, one per unit")
        else:
            p.add_argument("--data", required=True, help="processed dataset CSV")
        if name == "finetune":
            p.add_argument("--bundle", required=True, help="pre-trained model bundle")
        else:
            p.add_argument("--arch", default=None, help="A1, A2, or an architecture JSON file")
        p.add_argument("--learning-rate", dest="learning_rate", type=float, default=None)
        p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
        p.add_argument("--max-epochs", dest="max_epochs", type=int, default=None)
        p.add_argument("--early-stop-patience", dest="early_stop_patience", type=int, default=None)
        p.set_defaults(handler={"train": cmd_train, "pretrain": cmd_pretrain,
                                "finetune": cmd_finetune}[name])

    p = sub.add_parser("evaluate", help="score a bundle on a processed test CSV")
    common(p)
    p.add_argument("--bundle", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--rated-power", dest="rated_power", type=float, default=None)
    p.add_argument("--n-bins", dest="n_bins", type=int, default=None)
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("monitor", help="stream a dataset through the CUSUM chart")
    common(p)
    p.add_argument("--bundle", required=True)
    p.add_argument("--data", required=True, help="processed CSV or line-delimited JSON stream")
    p.add_argument("--allowance", type=float, default=None)
    p.add_argument("--interval", dest="decision_interval", type=float, default=None)
    p.add_argument("--reset-on-alarm", action="store_true")
    p.set_defaults(handler=cmd_monitor)

    p = sub.add_parser("sweep", help="precision/recall over a decision-interval grid")
    common(p)
    p.add_argument("--bundle", required=True)
    p.add_argument("--windows", required=True,
                   help="JSON manifest: list of {path, label, onset?} windows")
    p.add_argument("--grid", default=None, help="comma-separated decision intervals")
    p.add_argument("--allowance", type=float, default=None)
    p.set_defaults(handler=cmd_sweep)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except (NumericError, DomainError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 4
    except WindmonError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
