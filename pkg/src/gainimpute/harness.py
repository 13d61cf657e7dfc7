"""Experiment orchestration: CV evaluation, attempt sweeps, BKT comparison,
divergence analysis, and deterministic report emission.

Every stochastic step draws its seed from a stable hash of the experiment
seed plus the step's coordinates (model, max attempt, cycle, fold), so a
config fully determines every byte of the emitted reports.
"""

from __future__ import annotations

import dataclasses
import hashlib
import io
import json
import platform
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np
import scipy

from . import __version__, bkt, factorization, gain, gan_baselines
from . import divergence as dv
from .errors import ConfigError, DataError
from .ingest import build_tensor, hold_out, make_folds, parse_log
from .synth import SynthSpec, spec_from_dict, spec_to_json, synth_generate
from .tensors import (
    DenseTensor,
    PerformanceTensor,
    SparsityProfile,
    sparsity_increase_rate,
    sparsity_level,
    truncate_attempts,
)

KNOWN_MODELS = ("gain", "gan", "infogan", "ambientgan", "tf", "cpd", "bptf")


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from the experiment seed and step coordinates."""
    digest = hashlib.sha256(repr(parts).encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


@dataclass
class ExperimentConfig:
    models: list[str]
    max_attempts: list[int]
    dataset: str | None = None
    synth: SynthSpec | None = None
    folds: int = 5
    cycles: int = 5
    seed: int = 0
    model_params: dict[str, dict] = field(default_factory=dict)
    binarize_threshold: float = 0.5
    bootstrap: int = 100
    bkt_fit: dict = field(default_factory=dict)
    out_dir: str = "out"

    def __post_init__(self):
        if not self.models:
            raise ConfigError("model list must be non-empty")
        if self.folds < 2:
            raise ConfigError(f"folds must be >= 2, got {self.folds}")
        if self.cycles < 1:
            raise ConfigError(f"cycles must be >= 1, got {self.cycles}")
        if not self.max_attempts or any(m < 1 for m in self.max_attempts):
            raise ConfigError("max_attempts must be a non-empty list of counts >= 1")
        if (self.dataset is None) == (self.synth is None):
            raise ConfigError("exactly one of dataset/synth must be given")

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        try:
            synth = spec_from_dict(raw["synth"]) if raw.get("synth") else None
            return cls(
                models=list(raw["models"]),
                max_attempts=list(raw["max_attempts"]),
                dataset=raw.get("dataset"),
                synth=synth,
                folds=raw.get("folds", 5),
                cycles=raw.get("cycles", 5),
                seed=raw.get("seed", 0),
                model_params=dict(raw.get("model_params", {})),
                binarize_threshold=raw.get("binarize_threshold", 0.5),
                bootstrap=raw.get("bootstrap", 100),
                bkt_fit=dict(raw.get("bkt_fit", {})),
                out_dir=raw.get("out_dir", "out"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid experiment config: {exc}") from exc

    @classmethod
    def from_json_file(cls, path) -> "ExperimentConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        if self.synth is not None:
            out["synth"] = json.loads(spec_to_json(self.synth))
        return out


@dataclass
class Imputer:
    """Adapter pairing a train function with its matching impute function."""

    name: str
    train: Callable[[PerformanceTensor, dict, int], Any]
    impute: Callable[[Any, PerformanceTensor], DenseTensor]


def default_registry() -> dict[str, Imputer]:
    def gain_train(t, params, seed):
        model, _ = gain.train(t, gain.GainConfig(seed=seed, **params))
        return model

    def gan_cfg(params, seed):
        return gan_baselines.GanConfig(seed=seed, **params)

    return {
        "gain": Imputer("gain", gain_train, gain.impute),
        "gan": Imputer(
            "gan",
            lambda t, p, s: gan_baselines.gan_train(t, gan_cfg(p, s)),
            gan_baselines.gan_impute,
        ),
        "infogan": Imputer(
            "infogan",
            lambda t, p, s: gan_baselines.infogan_train(t, gan_cfg(p, s)),
            gan_baselines.infogan_impute,
        ),
        "ambientgan": Imputer(
            "ambientgan",
            lambda t, p, s: gan_baselines.ambientgan_train(t, gan_cfg(p, s)),
            gan_baselines.ambientgan_impute,
        ),
        "tf": Imputer(
            "tf",
            lambda t, p, s: factorization.tf_train(t, seed=s, **p),
            factorization.factor_impute,
        ),
        "cpd": Imputer(
            "cpd",
            lambda t, p, s: factorization.cpd_train(t, seed=s, **p),
            factorization.factor_impute,
        ),
        "bptf": Imputer(
            "bptf",
            lambda t, p, s: factorization.bptf_train(t, seed=s, **p),
            factorization.factor_impute,
        ),
    }


def load_base_tensor(cfg: ExperimentConfig):
    """Tensor plus id mappings from either the dataset CSV or the synth spec."""
    max_attempt = max(cfg.max_attempts)
    if cfg.dataset is not None:
        path = Path(cfg.dataset)
        if not path.exists():
            raise DataError(f"dataset file not found: {path}")
        records = parse_log(path.read_text())
    else:
        records = synth_generate(cfg.synth)
        max_attempt = max(max_attempt, cfg.synth.max_attempts)
    return build_tensor(records, max_attempt=max_attempt)


@dataclass
class RunRow:
    model: str
    max_attempt: int
    cycle: int
    fold: int
    rmse: float
    error: str | None = None


@dataclass
class RunReport:
    rows: list[RunRow]
    sparsity: list[tuple[int, float]]
    config: ExperimentConfig
    seeds: dict[str, int] = field(default_factory=dict)

    def raw_values(self, model: str, max_attempt: int) -> list[float]:
        return [
            r.rmse
            for r in self.rows
            if r.model == model and r.max_attempt == max_attempt and r.error is None
        ]

    def aggregates(self) -> list[tuple[str, int, float, float, int]]:
        """(model, max_attempt, mean RMSE, standard error, run count) rows."""
        out = []
        for model in sorted({r.model for r in self.rows}):
            for m in sorted({r.max_attempt for r in self.rows if r.model == model}):
                values = np.asarray(self.raw_values(model, m))
                if values.size == 0:
                    out.append((model, m, float("nan"), float("nan"), 0))
                    continue
                stderr = (
                    float(values.std(ddof=1) / np.sqrt(values.size))
                    if values.size > 1
                    else 0.0
                )
                out.append((model, m, float(values.mean()), stderr, int(values.size)))
        return out


def evaluate_imputation(dense: DenseTensor, test) -> float:
    if not test:
        raise DataError("empty test fold")
    errs = [dense.values[coord] - outcome for coord, outcome in test]
    return float(np.sqrt(np.mean(np.square(errs))))


def run_imputation_experiment(
    cfg: ExperimentConfig,
    registry: dict[str, Imputer] | None = None,
    base: PerformanceTensor | None = None,
) -> RunReport:
    """Models x max-attempts x cycles x folds; failures are recorded per run."""
    registry = registry or default_registry()
    for name in cfg.models:
        if name not in registry:
            raise ConfigError(f"unknown model {name!r}; known: {sorted(registry)}")
    t = base if base is not None else load_base_tensor(cfg).tensor
    bad = [m for m in cfg.max_attempts if m > t.max_attempts]
    if bad:
        raise ConfigError(
            f"max_attempts {bad} exceed the tensor's attempt dimension {t.max_attempts}"
        )

    rows: list[RunRow] = []
    seeds: dict[str, int] = {}
    sparsity = []
    for m in sorted(set(cfg.max_attempts)):
        t_m = truncate_attempts(t, m)
        sparsity.append((m, sparsity_level(t_m)))
        for cycle in range(cfg.cycles):
            fold_seed = derive_seed(cfg.seed, "folds", m, cycle)
            seeds[f"folds/m{m}/c{cycle}"] = fold_seed
            fa = make_folds(t_m, cfg.folds, fold_seed)
            for fold in range(cfg.folds):
                train_t, test = hold_out(t_m, fa, fold)
                for name in cfg.models:
                    imputer = registry[name]
                    seed = derive_seed(cfg.seed, name, m, cycle, fold)
                    seeds[f"{name}/m{m}/c{cycle}/f{fold}"] = seed
                    params = cfg.model_params.get(name, {})
                    try:
                        model = imputer.train(train_t, params, seed)
                        dense = imputer.impute(model, train_t)
                        rmse = evaluate_imputation(dense, test)
                        rows.append(RunRow(name, m, cycle, fold, rmse))
                    except Exception as exc:  # recorded, not fatal to the sweep
                        rows.append(
                            RunRow(name, m, cycle, fold, float("nan"), str(exc))
                        )
    return RunReport(rows=rows, sparsity=sparsity, config=cfg, seeds=seeds)


@dataclass
class BktComparisonRow:
    max_attempt: int
    original_rmse: float
    imputed_rmse: float
    difference: float


@dataclass
class BktComparisonResult:
    model: str
    rows: list[BktComparisonRow]
    t_stat: float | None
    p_value: float | None
    ttest_error: str | None
    config: ExperimentConfig


def _single_model(cfg: ExperimentConfig) -> str:
    if len(cfg.models) != 1:
        raise ConfigError("this analysis needs exactly one imputation model selected")
    return cfg.models[0]


def _bkt_config(cfg: ExperimentConfig, seed: int) -> bkt.BktFitConfig:
    return bkt.BktFitConfig(seed=seed, **cfg.bkt_fit)


def run_bkt_comparison(
    cfg: ExperimentConfig,
    registry: dict[str, Imputer] | None = None,
    base: PerformanceTensor | None = None,
) -> BktComparisonResult:
    """Fit the learner model on original vs imputed data per max attempt."""
    registry = registry or default_registry()
    name = _single_model(cfg)
    if name not in registry:
        raise ConfigError(f"unknown model {name!r}")
    imputer = registry[name]
    t = base if base is not None else load_base_tensor(cfg).tensor

    rows = []
    for m in sorted(set(cfg.max_attempts)):
        if m > t.max_attempts:
            raise ConfigError(f"max attempt {m} exceeds tensor width {t.max_attempts}")
        t_m = truncate_attempts(t, m)
        fits_orig = bkt.fit_all_questions(t_m, _bkt_config(cfg, derive_seed(cfg.seed, "bkt", m, 0)))
        rmse_orig = bkt.bkt_rmse(fits_orig, t_m)
        model = imputer.train(
            t_m, cfg.model_params.get(name, {}), derive_seed(cfg.seed, name, m, "bkt")
        )
        dense = imputer.impute(model, t_m)
        t_imp = bkt.binarize(dense, cfg.binarize_threshold)
        fits_imp = bkt.fit_all_questions(t_imp, _bkt_config(cfg, derive_seed(cfg.seed, "bkt", m, 1)))
        rmse_imp = bkt.bkt_rmse(fits_imp, t_imp)
        rows.append(BktComparisonRow(m, rmse_orig, rmse_imp, rmse_imp - rmse_orig))

    t_stat = p_value = None
    error = None
    try:
        t_stat, p_value = bkt.paired_t_test_one_sided(
            [r.original_rmse for r in rows], [r.imputed_rmse for r in rows]
        )
    except ValueError as exc:
        error = str(exc)
    return BktComparisonResult(name, rows, t_stat, p_value, error, cfg)


def run_divergence_analysis(
    cfg: ExperimentConfig,
    registry: dict[str, Imputer] | None = None,
    base: PerformanceTensor | None = None,
) -> dv.KlReport:
    """Bootstrap parameter distributions on original vs imputed, then KL."""
    registry = registry or default_registry()
    name = _single_model(cfg)
    imputer = registry[name]
    t = base if base is not None else load_base_tensor(cfg).tensor
    m = max(cfg.max_attempts)
    if m > t.max_attempts:
        raise ConfigError(f"max attempt {m} exceeds tensor width {t.max_attempts}")
    t_m = truncate_attempts(t, m)

    model = imputer.train(
        t_m, cfg.model_params.get(name, {}), derive_seed(cfg.seed, name, m, "divergence")
    )
    dense = imputer.impute(model, t_m)
    t_imp = bkt.binarize(dense, cfg.binarize_threshold)

    boot_seed = derive_seed(cfg.seed, "bootstrap", m)
    fit_cfg = _bkt_config(cfg, 0)
    original, skipped = dv.parameter_distributions(t_m, fit_cfg, cfg.bootstrap, boot_seed)
    imputed, _ = dv.parameter_distributions(t_imp, fit_cfg, cfg.bootstrap, boot_seed)
    return dv.kl_report(original, imputed, skipped)


@dataclass
class SweepResult:
    profile: SparsityProfile
    rates: list[float]
    run_report: RunReport


def run_attempt_sweep(
    cfg: ExperimentConfig,
    registry: dict[str, Imputer] | None = None,
    base: PerformanceTensor | None = None,
) -> SweepResult:
    """Sparsity level and increase rate per setting alongside the RMSE sweep."""
    t = base if base is not None else load_base_tensor(cfg).tensor
    report = run_imputation_experiment(cfg, registry, base=t)
    profile = SparsityProfile(report.sparsity)
    rates = sparsity_increase_rate(profile) if len(profile.entries) >= 2 else []
    return SweepResult(profile=profile, rates=rates, run_report=report)


# ---------------------------------------------------------------------------
# report emission


def _write(path: Path, text: str):
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise DataError(f"cannot write report file {path}: {exc}") from exc


def _manifest(cfg: ExperimentConfig, seeds: dict[str, int] | None = None) -> str:
    return json.dumps(
        {
            "config": cfg.to_dict(),
            "seeds": seeds or {},
            "versions": {
                "gainimpute": __version__,
                "numpy": np.__version__,
                "scipy": scipy.__version__,
                "python": platform.python_version(),
            },
        },
        indent=2,
        sort_keys=True,
    )


def _csv_text(header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(repr(v) if isinstance(v, float) else str(v) for v in row) + "\n")
    return buf.getvalue()


def emit_report(result, out_dir) -> list[Path]:
    """Write the CSV/plot-data/manifest files for one analysis result."""
    out = Path(out_dir)
    written: list[Path] = []

    def emit(name: str, text: str):
        path = out / name
        _write(path, text)
        written.append(path)

    if isinstance(result, SweepResult):
        written += emit_report(result.run_report, out_dir)
        rate_rows = [
            [m, level, result.rates[idx - 1] if idx > 0 else ""]
            for idx, (m, level) in enumerate(result.profile.entries)
        ]
        # overwrites the rate-less table the inner report wrote
        emit("sparsity.csv", _csv_text(["max_attempt", "level", "increase_rate"], rate_rows))
        return written

    if isinstance(result, RunReport):
        emit(
            "raw_rmse.csv",
            _csv_text(
                ["model", "max_attempt", "cycle", "fold", "rmse", "error"],
                [
                    [r.model, r.max_attempt, r.cycle, r.fold, r.rmse, r.error or ""]
                    for r in result.rows
                ],
            ),
        )
        emit(
            "summary_rmse.csv",
            _csv_text(
                ["model", "max_attempt", "mean_rmse", "stderr", "n_runs"],
                [list(row) for row in result.aggregates()],
            ),
        )
        emit(
            "sparsity.csv",
            _csv_text(["max_attempt", "level"], [list(x) for x in result.sparsity]),
        )
        for model in sorted({r.model for r in result.rows}):
            lines = [
                f"{m} {mean!r} {stderr!r}"
                for mdl, m, mean, stderr, n in result.aggregates()
                if mdl == model and n > 0
            ]
            emit(f"plot_rmse_{model}.dat", "\n".join(lines) + ("\n" if lines else ""))
        emit("manifest.json", _manifest(result.config, result.seeds))
        return written

    if isinstance(result, BktComparisonResult):
        emit(
            "bkt_comparison.csv",
            _csv_text(
                ["max_attempt", "original_rmse", "imputed_rmse", "difference"],
                [
                    [r.max_attempt, r.original_rmse, r.imputed_rmse, r.difference]
                    for r in result.rows
                ],
            ),
        )
        emit(
            "bkt_ttest.json",
            json.dumps(
                {
                    "model": result.model,
                    "t": result.t_stat,
                    "p": result.p_value,
                    "error": result.ttest_error,
                    "alternative": "imputed < original",
                },
                indent=2,
                sort_keys=True,
            ),
        )
        emit("manifest.json", _manifest(result.config))
        return written

    if isinstance(result, dv.KlReport):
        emit("kl_per_question.csv", result.to_csv())
        emit("kl_summary.json", result.summary_json())
        return written

    raise TypeError(f"cannot emit report for {type(result)!r}")
