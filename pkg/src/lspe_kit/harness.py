"""
Experiment runner: config parsing, sweeps over the oversampling ratio,
validation of the analytic errors, single-instance estimation and the moment
oracle report.

Config files are flat ``key = value`` text.  Keys before the first
``[section]`` header apply to every mode; a ``[sweep]``, ``[validate]``,
``[estimate]`` or ``[moments]`` section overrides them for that mode.  Lines
starting with ``#`` are comments.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields, replace
from dataclasses import field as dc_field
from pathlib import Path

import numpy as np

from .analysis import analytic_smse, bound_violations, empirical_errors, format_moment_report, moment_oracles, prior_constants
from .errors import ConfigError, InputError
from .fileio import read_matrix, read_measurements, write_matrix
from .kernel import Field, Rng
from .lspe import EstimatorSpec, PreparedEstimator, extract
from .model import Ensemble, MeasurementSystem, NoiseModel, SignalPrior, build_system

MODES = ("sweep", "validate", "estimate", "moments")
CSV_COLUMNS = ("estimator", "n", "m", "delta", "nmse_mean", "smse_analytic", "smse_empirical",
               "eer_empirical", "eer_bound", "trials", "seed")

# stream ids under the user seed
SYSTEM_STREAM, TRIAL_STREAM, ESTIMATE_STREAM, MOMENT_STREAM = 0, 1, 2, 3


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str
    n: int = 16
    n_grid: tuple = (8, 16, 32, 64)
    delta: float = 8.0
    delta_grid: tuple = (2.0, 4.0, 6.0, 8.0, 10.0)
    estimators: tuple = ()
    ensemble: str = "iid_gaussian"
    field: Field = Field.COMPLEX
    sigma_x_sq: float = 1.0
    noise_z_var: float = 0.0
    noise_y_mean: float = 0.0
    noise_y_var: float = 0.0
    trials: int = 500
    seed: int = 1
    threads: int = 1
    average_matrices: int = 1
    tol: float | None = None
    max_iter: int | None = None
    samples: int = 1_000_000
    matrix: str | None = None
    measurements: str | None = None
    output: str | None = None
    base_dir: Path = dc_field(default=Path("."), compare=False)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if any(d < 1 for d in self.delta_grid) or self.delta < 1:
            raise ConfigError("oversampling ratios must be >= 1")
        if self.threads < 1 or self.average_matrices < 1:
            raise ConfigError("threads and average_matrices must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")

    @property
    def estimator_specs(self) -> list[EstimatorSpec]:
        names = self.estimators
        if not names:
            names = ("lspe-c", "si:identity") if self.field is Field.COMPLEX else ("lspe-r", "si:identity")
        return [EstimatorSpec.parse(s) for s in names]

    @property
    def eig_tol(self) -> float:
        # the per-trial rank-one bound is checked in validate mode, which needs round-off accurate eigenvectors
        if self.tol is not None:
            return self.tol
        return 1e-14 if self.mode == "validate" else 1e-10

    @property
    def eig_max_iter(self) -> int:
        if self.max_iter is not None:
            return self.max_iter
        return 5000 if self.mode == "validate" else 1000

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p


def _as_list(conv):
    def parse(text):
        items = [t for t in (s.strip() for s in text.split(",")) if t]
        if not items:
            raise ValueError("empty list")
        return tuple(conv(t) for t in items)
    return parse


def _uint(text):
    value = int(text)
    if value < 0:
        raise ValueError("negative")
    return value


KEY_TYPES = {
    "n": _uint, "n_grid": _as_list(_uint), "delta": float, "delta_grid": _as_list(float),
    "estimators": _as_list(str), "estimator": _as_list(str), "ensemble": str, "field": Field.parse,
    "sigma_x_sq": float, "noise_z_var": float, "noise_y_mean": float, "noise_y_var": float,
    "trials": _uint, "seed": _uint, "threads": _uint, "average_matrices": _uint, "tol": float,
    "max_iter": _uint, "samples": _uint, "matrix": str, "measurements": str, "output": str,
}


def parse_config(text: str, mode: str, path: str | None = None) -> ExperimentConfig:
    """Parse config text for ``mode``; errors carry the offending line number."""
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}", path=path)
    sections: dict[str | None, dict] = {None: {}}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"malformed section header {raw.strip()!r}", lineno, path)
            current = line[1:-1].strip()
            if current not in MODES:
                raise ConfigError(f"unknown section [{current}]", lineno, path)
            if current in sections:
                raise ConfigError(f"duplicate section [{current}]", lineno, path)
            sections[current] = {}
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno, path)
        if key not in KEY_TYPES:
            raise ConfigError(f"unknown key {key!r}", lineno, path)
        if key in sections[current]:
            raise ConfigError(f"duplicate key {key!r}", lineno, path)
        sections[current][key] = (value, lineno)

    if len(sections) > 1 and mode not in sections:
        raise ConfigError(f"no [{mode}] section in config", path=path)
    merged = dict(sections[None])
    merged.update(sections.get(mode, {}))

    kwargs = {}
    for key, (value, lineno) in merged.items():
        try:
            parsed = KEY_TYPES[key](value)
        except (ValueError, InputError) as exc:
            raise ConfigError(f"bad value for {key!r}: {value!r} ({exc})", lineno, path) from None
        if key == "estimator":
            key = "estimators"
        kwargs[key] = parsed
        if key == "estimators":
            for name in parsed:
                try:
                    EstimatorSpec.parse(name)
                except InputError as exc:
                    raise ConfigError(str(exc), lineno, path) from None
        if key == "ensemble":
            try:
                Ensemble.parse(parsed, 1, 1, Field.COMPLEX)
            except InputError as exc:
                raise ConfigError(str(exc), lineno, path) from None
    base_dir = Path(path).parent if path else Path(".")
    try:
        return ExperimentConfig(mode=mode, base_dir=base_dir, **kwargs)
    except ConfigError as exc:
        raise ConfigError(str(exc), path=path) from None


def load_config(path, mode: str) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", path=str(path)) from None
    return parse_config(text, mode, str(path))


# ---------------------------------------------------------------------------
# Result rows and CSV
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ResultRow:
    estimator: str
    n: int
    m: int
    delta: float
    nmse_mean: float
    smse_analytic: float
    smse_empirical: float
    eer_empirical: float
    eer_bound: float
    trials: int
    seed: int

    def sort_key(self):
        return (self.estimator, self.delta, self.n)


def _fmt(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return "%.17g" % value


def format_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in sorted(rows, key=ResultRow.sort_key):
        writer.writerow([_fmt(getattr(row, c)) for c in CSV_COLUMNS])
    return buf.getvalue()


def read_csv(text: str) -> list[ResultRow]:
    reader = csv.DictReader(io.StringIO(text))
    types = {f.name: f.type for f in fields(ResultRow)}
    out = []
    for rec in reader:
        out.append(ResultRow(**{k: (int(v) if types[k] == "int" else v if types[k] == "str" else float(v))
                                for k, v in rec.items()}))
    return out


# ---------------------------------------------------------------------------
# Runners
# ---------------------------------------------------------------------------

def _noise(cfg: ExperimentConfig, m: int) -> NoiseModel:
    return NoiseModel.white(m, cfg.noise_z_var, cfg.noise_y_mean, cfg.noise_y_var)


def point_system(cfg: ExperimentConfig, point: int, n: int, delta: float, instance: int = 0) -> MeasurementSystem:
    """The measurement system of one grid point, seeded by (seed, point, instance)."""
    m = int(round(delta * n))
    ens_text = cfg.ensemble
    if ens_text.startswith("file:"):
        ens_text = "file:" + str(cfg.resolve(ens_text[5:]))
    ens = Ensemble.parse(ens_text, m, n, cfg.field)
    prior = SignalPrior(n, cfg.sigma_x_sq, cfg.field)
    rng = Rng(cfg.seed, SYSTEM_STREAM).spawn(point).spawn(instance)
    return build_system(ens, prior, _noise(cfg, m), rng)


def trial_stream(cfg: ExperimentConfig, point: int, instance: int = 0) -> Rng:
    """Trial streams are shared by all estimators at a point (common random numbers)."""
    return Rng(cfg.seed, TRIAL_STREAM).spawn(point).spawn(instance)


@dataclass(frozen=True)
class PointResult:
    row: ResultRow
    reports: tuple  # one ErrorReport per matrix instance


def run_point(cfg: ExperimentConfig, spec: EstimatorSpec, point: int, n: int, delta: float,
              keep_samples: bool = False, trial_threads: int = 1) -> PointResult:
    reports = []
    for k in range(cfg.average_matrices):
        sys = point_system(cfg, point, n, delta, k)
        reports.append(empirical_errors(sys, spec, cfg.trials, trial_stream(cfg, point, k),
                                        tol=cfg.eig_tol, max_iter=cfg.eig_max_iter,
                                        threads=trial_threads, keep_samples=keep_samples))
    count = len(reports)

    def avg(name):
        return math.fsum(getattr(r, name) for r in reports) / count

    smse_a = avg("smse_analytic")
    row = ResultRow(
        estimator=str(spec), n=n, m=int(round(delta * n)), delta=float(delta),
        nmse_mean=avg("nmse_mean"), smse_analytic=smse_a, smse_empirical=avg("smse_empirical"),
        eer_empirical=avg("eer_empirical"), eer_bound=4.0 * smse_a,
        trials=cfg.trials * count, seed=cfg.seed,
    )
    return PointResult(row, tuple(reports))


def _run_points(cfg: ExperimentConfig, points, keep_samples=False) -> list[PointResult]:
    """``points`` is a list of (point_index, n, delta); every estimator runs at every point."""
    jobs = [(spec, p, n, d) for (p, n, d) in points for spec in cfg.estimator_specs]
    for spec in cfg.estimator_specs:
        _check_field(spec, cfg.field)

    def job(args):
        spec, p, n, d = args
        return run_point(cfg, spec, p, n, d, keep_samples)

    if cfg.threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            results = list(pool.map(job, jobs))
    else:
        results = [job(j) for j in jobs]
    return sorted(results, key=lambda r: r.row.sort_key())


def _check_field(spec: EstimatorSpec, fld: Field):
    if spec.kind in ("lspe-c", "lspe-exp") and fld is not Field.COMPLEX:
        raise ConfigError(f"estimator {spec} needs field = complex")
    if spec.kind == "lspe-r" and fld is not Field.REAL:
        raise ConfigError("estimator lspe-r needs field = real")


def run_sweep(cfg: ExperimentConfig) -> list[ResultRow]:
    """N-MSE and errors versus the oversampling ratio, one system per ratio."""
    points = [(p, cfg.n, d) for p, d in enumerate(cfg.delta_grid)]
    return [r.row for r in _run_points(cfg, points)]


def run_validate_detailed(cfg: ExperimentConfig, keep_samples: bool = True) -> list[PointResult]:
    points = [(p, n, cfg.delta) for p, n in enumerate(cfg.n_grid)]
    return _run_points(cfg, points, keep_samples)


def run_validate(cfg: ExperimentConfig) -> list[ResultRow]:
    """Analytic versus empirical errors at fixed ratio M/N over the configured N grid."""
    return [r.row for r in run_validate_detailed(cfg, keep_samples=False)]


def validation_summary(results: list[PointResult], tol: float) -> str:
    """Human-readable check of every validate row (gaps, bound, dB ratio band)."""
    lines = ["estimator\tn\tm\trel_gap\tbound_violations(raw)\teer/bound_dB\tband[-12,-4]"]
    for res in results:
        row = res.row
        counts = [bound_violations(r.samples, row.n, tol) for r in res.reports if r.samples is not None]
        viol = f"{sum(c[0] for c in counts)}({sum(c[1] for c in counts)})"
        scale = prior_constants(SignalPrior(row.n, 1.0, Field.COMPLEX)).c_xx
        if abs(row.smse_analytic) <= 1e-9 * scale:
            gap, db, band = "exact", "n/a", "n/a"
        else:
            gap = f"{abs(row.smse_empirical - row.smse_analytic) / row.smse_analytic:.4f}"
            db_val = 10 * math.log10(row.eer_empirical / row.eer_bound)
            db, band = f"{db_val:.2f}", "in" if -12 <= db_val <= -4 else "out"
        lines.append(f"{row.estimator}\t{row.n}\t{row.m}\t{gap}\t{viol}\t{db}\t{band}")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class EstimateResult:
    x_hat: np.ndarray
    lambda1: float
    converged: bool
    iters: int
    smse_analytic: float
    estimator: str
    beta: float | None


def run_estimate(cfg: ExperimentConfig) -> EstimateResult:
    """Estimate a signal from a matrix file and a measurement file.

    Writes the estimate as an N x 1 matrix file to ``cfg.output`` (if set) and
    a JSON sidecar ``<output>.json`` with the eigenvalue, convergence and the
    analytic S-MSE.
    """
    if not cfg.matrix or not cfg.measurements:
        raise ConfigError("estimate mode needs 'matrix' and 'measurements'")
    a = read_matrix(cfg.resolve(cfg.matrix))
    y = read_measurements(cfg.resolve(cfg.measurements))
    m, n = a.shape
    if y.shape[0] != m:
        raise InputError(f"dimension mismatch: measurement file has {y.shape[0]} values "
                         f"but the matrix has M = {m} rows")
    specs = cfg.estimator_specs
    if len(cfg.estimators) > 1:
        raise ConfigError("estimate mode takes exactly one estimator")
    spec = specs[0]
    # a real matrix file is treated as a real system only when the estimator or the config asks for it
    real = not np.iscomplexobj(a) and (spec.kind == "lspe-r" or cfg.field is Field.REAL)
    fld = Field.REAL if real else Field.COMPLEX
    _check_field(spec, fld)
    sys = MeasurementSystem(a, SignalPrior(n, cfg.sigma_x_sq, fld), _noise(cfg, m))
    prepared = PreparedEstimator(spec, sys)
    d = prepared.matrices(y[None])[0]
    est = extract(d, cfg.eig_tol, cfg.eig_max_iter, Rng(cfg.seed, ESTIMATE_STREAM))
    smse_a = analytic_smse(prepared)
    result = EstimateResult(est.x_hat, est.lambda1, est.converged, est.iters, smse_a, str(spec), prepared.beta)
    if cfg.output:
        out = cfg.resolve(cfg.output)
        write_matrix(out, est.x_hat[:, None])
        sidecar = {
            "estimator": str(spec), "lambda1": est.lambda1, "converged": est.converged,
            "iters": est.iters, "smse_analytic": None if math.isnan(smse_a) else smse_a,
            "eer_bound": None if math.isnan(smse_a) else 4.0 * smse_a, "beta": prepared.beta,
        }
        Path(str(out) + ".json").write_text(json.dumps(sidecar, indent=2) + "\n", encoding="utf-8")
    return result


def run_moments(cfg: ExperimentConfig):
    report = moment_oracles(Rng(cfg.seed, MOMENT_STREAM), samples=cfg.samples)
    if cfg.output:
        cfg.resolve(cfg.output).write_text(format_moment_report(report), encoding="utf-8")
    return report


def with_overrides(cfg: ExperimentConfig, **kw) -> ExperimentConfig:
    kw = {k: v for k, v in kw.items() if v is not None}
    return replace(cfg, **kw) if kw else cfg
