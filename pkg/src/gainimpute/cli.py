"""Command-line interface.

Subcommands: synth, ingest, impute, eval, bkt, divergence, report.
All take --config (JSON mirroring ExperimentConfig), plus --seed and --out
overrides.  Exit codes: 0 ok, 2 config error, 3 data error, 4 runtime
failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

from . import __version__, harness
from .errors import ConfigError, DataError, GainImputeError
from .ingest import serialize_log
from .synth import spec_to_json, synth_generate
from .tensors import sparsity_level, truncate_attempts

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_RUNTIME = 4


def _common(parser: argparse.ArgumentParser):
    parser.add_argument("--config", required=True, help="experiment config JSON")
    parser.add_argument("--seed", type=int, default=None, help="override config seed")
    parser.add_argument("--out", default=None, help="override output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gainimpute",
        description="Impute sparse learner-performance tensors and analyze the effects",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_text in [
        ("synth", "generate a synthetic interaction log"),
        ("ingest", "parse a log and report tensor statistics"),
        ("impute", "train one model on the full tensor and write imputed values"),
        ("eval", "cross-validated imputation RMSE sweep"),
        ("bkt", "compare knowledge-tracing fits on original vs imputed data"),
        ("divergence", "KL divergence of fitted parameters, original vs imputed"),
        ("report", "recompute summary tables from a previous eval's raw output"),
    ]:
        p = sub.add_parser(name, help=help_text)
        _common(p)
        if name == "eval":
            p.add_argument("--model", default=None, help="comma-separated model subset")
            p.add_argument(
                "--max-attempt-range",
                default=None,
                metavar="a..b",
                help="inclusive attempt range, e.g. 1..5",
            )
    return parser


def _load_config(args) -> harness.ExperimentConfig:
    cfg = harness.ExperimentConfig.from_json_file(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out_dir = args.out
    if getattr(args, "model", None):
        cfg.models = [m.strip() for m in args.model.split(",") if m.strip()]
        if not cfg.models:
            raise ConfigError("--model produced an empty model list")
    rng_spec = getattr(args, "max_attempt_range", None)
    if rng_spec:
        try:
            lo, hi = rng_spec.split("..")
            lo, hi = int(lo), int(hi)
        except ValueError as exc:
            raise ConfigError(f"bad --max-attempt-range {rng_spec!r}; want a..b") from exc
        if lo < 1 or hi < lo:
            raise ConfigError(f"bad --max-attempt-range {rng_spec!r}")
        cfg.max_attempts = list(range(lo, hi + 1))
    return cfg


def _out_dir(cfg: harness.ExperimentConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_synth(cfg: harness.ExperimentConfig) -> int:
    if cfg.synth is None:
        raise ConfigError("synth command needs a synth block in the config")
    out = _out_dir(cfg)
    records = synth_generate(cfg.synth)
    (out / "records.csv").write_text(serialize_log(records))
    (out / "synth_truth.json").write_text(spec_to_json(cfg.synth))
    print(f"wrote {len(records)} records to {out / 'records.csv'}")
    return EXIT_OK


def cmd_ingest(cfg: harness.ExperimentConfig) -> int:
    result = harness.load_base_tensor(cfg)
    out = _out_dir(cfg)
    (out / "index_map.json").write_text(result.index_mapping_json())
    t = result.tensor
    stats = {
        "num_learners": t.num_learners,
        "num_questions": t.num_questions,
        "max_attempts": t.max_attempts,
        "observed_cells": t.observed_count(),
        "sparsity_level": sparsity_level(t),
        "duplicates": result.duplicates,
        "overflow_attempts": result.overflow,
    }
    (out / "stats.json").write_text(json.dumps(stats, indent=2, sort_keys=True))
    print(json.dumps(stats, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_impute(cfg: harness.ExperimentConfig) -> int:
    registry = harness.default_registry()
    name = cfg.models[0] if len(cfg.models) == 1 else None
    if name is None or name not in registry:
        raise ConfigError("impute needs exactly one known model in the config")
    result = harness.load_base_tensor(cfg)
    t = truncate_attempts(result.tensor, max(cfg.max_attempts))
    imputer = registry[name]
    seed = harness.derive_seed(cfg.seed, name, "impute")
    model = imputer.train(t, cfg.model_params.get(name, {}), seed)
    dense = imputer.impute(model, t)

    out = _out_dir(cfg)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["learner_id", "question_id", "attempt", "value"])
    for u, lid in enumerate(result.learners):
        for j, qid in enumerate(result.questions):
            for i in range(t.max_attempts):
                writer.writerow([lid, qid, i + 1, repr(float(dense.values[u, j, i]))])
    (out / "imputed.csv").write_text(buf.getvalue())
    (out / "index_map.json").write_text(result.index_mapping_json())
    print(f"wrote imputed values for {name} to {out / 'imputed.csv'}")
    return EXIT_OK


def cmd_eval(cfg: harness.ExperimentConfig) -> int:
    result = harness.run_attempt_sweep(cfg)
    written = harness.emit_report(result, _out_dir(cfg))
    for path in written:
        print(f"wrote {path}")
    return EXIT_OK


def cmd_bkt(cfg: harness.ExperimentConfig) -> int:
    result = harness.run_bkt_comparison(cfg)
    written = harness.emit_report(result, _out_dir(cfg))
    for path in written:
        print(f"wrote {path}")
    return EXIT_OK


def cmd_divergence(cfg: harness.ExperimentConfig) -> int:
    report = harness.run_divergence_analysis(cfg)
    out = _out_dir(cfg)
    written = harness.emit_report(report, out)
    manifest = harness._manifest(cfg)
    (out / "manifest.json").write_text(manifest)
    written.append(out / "manifest.json")
    for path in written:
        print(f"wrote {path}")
    return EXIT_OK


def cmd_report(cfg: harness.ExperimentConfig) -> int:
    """Rebuild summary and plot files from raw_rmse.csv of a previous eval."""
    out = _out_dir(cfg)
    raw_path = out / "raw_rmse.csv"
    if not raw_path.exists():
        raise DataError(f"no raw results at {raw_path}; run eval first")
    rows = []
    with raw_path.open() as fh:
        for record in csv.DictReader(fh):
            rows.append(
                harness.RunRow(
                    model=record["model"],
                    max_attempt=int(record["max_attempt"]),
                    cycle=int(record["cycle"]),
                    fold=int(record["fold"]),
                    rmse=float(record["rmse"]),
                    error=record["error"] or None,
                )
            )
    if not rows:
        raise DataError(f"{raw_path} contains no runs")
    report = harness.RunReport(rows=rows, sparsity=[], config=cfg)
    summary = harness._csv_text(
        ["model", "max_attempt", "mean_rmse", "stderr", "n_runs"],
        [list(r) for r in report.aggregates()],
    )
    (out / "summary_rmse.csv").write_text(summary)
    print(f"wrote {out / 'summary_rmse.csv'}")
    for model in sorted({r.model for r in rows}):
        lines = [
            f"{m} {mean!r} {stderr!r}"
            for mdl, m, mean, stderr, n in report.aggregates()
            if mdl == model and n > 0
        ]
        path = out / f"plot_rmse_{model}.dat"
        path.write_text("\n".join(lines) + ("\n" if lines else ""))
        print(f"wrote {path}")
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "impute": cmd_impute,
    "eval": cmd_eval,
    "bkt": cmd_bkt,
    "divergence": cmd_divergence,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _load_config(args)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except GainImputeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
