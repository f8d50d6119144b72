"""Monte Carlo orchestration: configuration, trial fan-out, aggregation,
and CSV/JSON result emission.

Reproducibility contract: one master seed; every (snr, trial) pair gets its
own generator derived by hashing (seed, snr index, trial index), so results
are byte-identical regardless of worker count or execution order.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import mlp as mlp_engine
from .baselines import (
    default_loading,
    hiepm_ideal_beam,
    hierarchical_sweep,
    load_reference_curve,
    naive_sweep,
)
from .beammaps import (
    export_power_spectrum,
    gap_1bit,
    gap_full,
    lws_map,
    mean_power_margin,
    mlp_map,
    threshold_select,
)
from .channel import ChannelParams, affine_beta, estimate_effective_flip_prob
from .geometry import AngleGrid, Query
from .questioner import AlignmentConfig, run_alignment

ALGORITHMS = ("lws", "mlp", "hybrid", "naive", "hierarchical", "hiepm")
MODEL_DIR_ENV = "BEAMALIGN_MODEL_DIR"


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass
class ExperimentConfig:
    theta_min: float = -60.0
    theta_max: float = 60.0
    M: int = 64
    N_R: int = 64
    k: int = 10
    d_over_lambda: float = 0.5
    algorithm: str = "lws"
    rule: str = "1bit"
    fading: str = "known"
    channel: str = "physical"
    snr_db: tuple = (0.0,)
    trials: int = 1000
    n: int = 10
    epsilon: float = 0.05
    p: float = 0.1
    hybrid_kmax: int = 0          # 0 -> default M // 4
    mu_alpha: float = 1.0
    sigma_alpha: float = 0.0625
    sigma0_sq: float = 0.0        # 0 -> default loading for hiepm
    beta0: float = 0.05           # ideal-channel noise profile (stand-in)
    beta1: float = 0.2
    seed: int = 0
    model_dir: str = "models"
    output: str = "results.csv"
    format: str = "csv"
    workers: int = 1

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if self.rule not in ("1bit", "full"):
            raise ConfigError(f"rule must be 1bit or full, got {self.rule!r}")
        if self.fading not in ("known", "kalman", "mmse"):
            raise ConfigError(f"fading must be known, kalman or mmse, got {self.fading!r}")
        if self.channel not in ("physical", "ideal"):
            raise ConfigError(f"channel must be physical or ideal, got {self.channel!r}")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if not 0.0 < self.epsilon < 1.0:
            raise ConfigError("epsilon must lie in (0, 1)")
        if self.format not in ("csv", "json"):
            raise ConfigError(f"format must be csv or json, got {self.format!r}")
        if self.channel == "ideal" and self.rule != "1bit":
            raise ConfigError("the abstract oracle channel supports the 1-bit rule only")
        if self.fading != "known" and self.rule != "full":
            raise ConfigError("gain estimation applies to the full rule only")

    @property
    def grid(self) -> AngleGrid:
        try:
            return AngleGrid(self.theta_min, self.theta_max, M=self.M, k=self.k,
                             N_R=self.N_R, d_over_lambda=self.d_over_lambda)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def effective_hybrid_kmax(self) -> int:
        return self.hybrid_kmax or self.M // 4

    def resolved_model_dir(self) -> str:
        return os.environ.get(MODEL_DIR_ENV, self.model_dir)


@dataclass
class ResultRow:
    algorithm: str
    rule: str
    fading: str
    snr_db: float
    mean_quadratic_loss: float
    std_error: float
    mean_tau: float
    accuracy: float
    trials: int
    seed: int


RESULT_COLUMNS = [f.name for f in dataclasses.fields(ResultRow)]


@dataclass
class ResultTable:
    config: "ExperimentConfig"
    rows: list[ResultRow] = field(default_factory=list)


def config_echo(config: ExperimentConfig) -> list[str]:
    """Stable key=value lines describing the run, including convention notes."""
    lines = []
    for f in dataclasses.fields(config):
        value = getattr(config, f.name)
        if isinstance(value, (tuple, list)):
            value = ",".join(format(v, ".12g") for v in value)
        lines.append(f"{f.name}={value}")
    lines.append("note.theta_sampling=uniform over [theta_min, theta_max]")
    lines.append("note.sortpm=shortest sorted prefix with cumulative mass >= 1/2")
    if config.rule == "1bit":
        lines.append("note.threshold=oracle (noise-free in-region probe powers)")
    if config.channel == "ideal":
        lines.append("note.beta=affine stand-in beta(s)=clip(beta0+beta1*s, 0, 0.45); "
                     "the model only requires bounded Lipschitz beta")
    if config.fading == "mmse":
        lines.append("note.estimator=batch-MMSE (conjugate Gaussian posterior)")
    if config.algorithm == "hybrid":
        lines.append(f"note.hybrid=mlp for K <= {config.effective_hybrid_kmax}, lws above")
    if config.algorithm == "hiepm":
        lines.append(f"note.sigma0_sq={config.sigma0_sq or default_loading(config.grid):.6g}")
    return lines


def _load_models(config: ExperimentConfig, grid: AngleGrid) -> dict[int, mlp_engine.MlpModel]:
    """Models required by the mlp/hybrid algorithms, keyed by query size.

    sortPM prefixes never exceed ceil(M/2) sub-intervals, so that is the
    model range the pure-mlp algorithm needs; hybrid uses LWS past its
    crossover size and only needs models up to it.
    """
    kmax = (grid.M + 1) // 2 if config.algorithm == "mlp" else config.effective_hybrid_kmax
    model_dir = config.resolved_model_dir()
    return {K: mlp_engine.load_for(model_dir, grid, K, config.rule)
            for K in range(1, kmax + 1)}


def _make_mapper(config: ExperimentConfig, grid: AngleGrid):
    if config.algorithm == "lws":
        return lws_map
    if config.algorithm == "hiepm":
        s0 = config.sigma0_sq or None
        return lambda q, g: hiepm_ideal_beam(q, g, s0)
    if config.algorithm in ("mlp", "hybrid"):
        models = _load_models(config, grid)
        kmax = config.effective_hybrid_kmax

        def mapper(q: Query, g: AngleGrid):
            if config.algorithm == "hybrid" and q.K > kmax:
                return lws_map(q, g)
            model = models.get(q.K)
            if model is None:
                raise mlp_engine.ModelNotFoundError(f"no model for query size {q.K}")
            return mlp_map(q, g, model)

        return mapper
    return None   # sweep baselines bypass the adaptive loop


def trial_rng(seed: int, snr_index: int, trial_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, snr_index, trial_index]))


def _run_one(config: ExperimentConfig, grid: AngleGrid, mapper, snr_index: int,
             trial_index: int):
    """One seeded trial; returns (quadratic_loss, tau, step_accuracy or nan)."""
    rng = trial_rng(config.seed, snr_index, trial_index)
    theta_true = rng.uniform(grid.theta_min, grid.theta_max)
    snr = config.snr_db[snr_index]
    if config.fading == "known":
        alpha = complex(config.mu_alpha)
    else:
        std = np.sqrt(config.sigma_alpha / 2.0)
        alpha = complex(config.mu_alpha + rng.normal(scale=std)
                        + 1j * rng.normal(scale=std))
    params = ChannelParams.from_snr_db(snr, alpha=alpha)
    if config.algorithm == "naive":
        res = naive_sweep(theta_true, config.n, grid, params, rng)
    elif config.algorithm == "hierarchical":
        res = hierarchical_sweep(theta_true, config.n, grid, params, rng)
    else:
        cfg = AlignmentConfig(grid=grid, mapper=mapper, params=params,
                              rule=config.rule, epsilon=config.epsilon,
                              n=config.n, p=config.p, fading=config.fading,
                              fading_prior=(complex(config.mu_alpha), config.sigma_alpha),
                              channel=config.channel,
                              beta=affine_beta(config.beta0, config.beta1))
        res = run_alignment(theta_true, cfg, rng)
    return res.quadratic_loss, res.tau, res.steps_correct()


def run_experiment(config: ExperimentConfig) -> ResultTable:
    grid = config.grid
    try:
        mapper = _make_mapper(config, grid)
    except ConfigError:
        raise
    table = ResultTable(config=config)
    jobs = [(si, ti) for si in range(len(config.snr_db)) for ti in range(config.trials)]
    if config.workers > 1:
        results = _run_pool(config, jobs)
    else:
        results = {}
        for si, ti in jobs:
            results[(si, ti)] = _run_one(config, grid, mapper, si, ti)
    for si, snr in enumerate(config.snr_db):
        losses = np.array([results[(si, ti)][0] for ti in range(config.trials)])
        taus = np.array([results[(si, ti)][1] for ti in range(config.trials)])
        accs = np.array([results[(si, ti)][2] for ti in range(config.trials)])
        std_err = float(losses.std(ddof=1) / np.sqrt(config.trials)) if config.trials > 1 else 0.0
        table.rows.append(ResultRow(
            algorithm=config.algorithm, rule=config.rule, fading=config.fading,
            snr_db=float(snr),
            mean_quadratic_loss=float(losses.mean()),
            std_error=std_err,
            mean_tau=float(taus.mean()),
            accuracy=float(np.nanmean(accs)) if not np.all(np.isnan(accs)) else float("nan"),
            trials=config.trials, seed=config.seed))
    return table


# -- worker pool ------------------------------------------------------------

_POOL_STATE: dict = {}


def _pool_init(config_dict):
    config = ExperimentConfig(**config_dict)
    grid = config.grid
    _POOL_STATE["config"] = config
    _POOL_STATE["grid"] = grid
    _POOL_STATE["mapper"] = _make_mapper(config, grid)


def _pool_run(job):
    si, ti = job
    return (si, ti) + tuple(_run_one(_POOL_STATE["config"], _POOL_STATE["grid"],
                                     _POOL_STATE["mapper"], si, ti))


def _run_pool(config: ExperimentConfig, jobs):
    from concurrent.futures import ProcessPoolExecutor
    config_dict = dataclasses.asdict(config)
    config_dict["snr_db"] = tuple(config.snr_db)
    results = {}
    with ProcessPoolExecutor(max_workers=config.workers, initializer=_pool_init,
                             initargs=(config_dict,)) as pool:
        for si, ti, loss, tau, acc in pool.map(_pool_run, jobs, chunksize=16):
            results[(si, ti)] = (loss, tau, acc)
    return results


# -- emission ---------------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, float):
        return format(x, ".12g")
    return str(x)


def emit(table: ResultTable, fmt: str | None = None, path=None) -> str:
    """Write the result table; returns the path. Column order is stable and
    the configuration is echoed as a comment/metadata block."""
    config = table.config
    fmt = fmt or config.format
    path = path if path is not None else config.output
    if fmt == "csv":
        lines = [f"# {line}" for line in config_echo(config)]
        lines.append(",".join(RESULT_COLUMNS))
        for row in table.rows:
            lines.append(",".join(_fmt(getattr(row, c)) for c in RESULT_COLUMNS))
        payload = "\n".join(lines) + "\n"
    elif fmt == "json":
        rows = []
        for row in table.rows:
            rec = {}
            for c in RESULT_COLUMNS:
                v = getattr(row, c)
                rec[c] = float(format(v, ".12g")) if isinstance(v, float) else v
            rows.append(rec)
        payload = json.dumps({"config": config_echo(config), "columns": RESULT_COLUMNS,
                              "rows": rows}, indent=2) + "\n"
    else:
        raise ConfigError(f"unknown output format {fmt!r}")
    with open(path, "w") as fh:
        fh.write(payload)
    return path


def read_result_csv(path):
    """Parse a result CSV back into (comment lines, list of row dicts)."""
    comments, rows, header = [], [], None
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                comments.append(line[1:].strip())
            elif header is None:
                header = line.split(",")
            else:
                values = line.split(",")
                rec = dict(zip(header, values))
                rows.append(rec)
    return comments, rows


# -- diagnostics ------------------------------------------------------------

def canonical_query(K: int, M: int, style: str = "contiguous") -> Query:
    """Deterministic query family for the per-K diagnostics.

    contiguous: centered block of K sub-intervals. spread: evenly spaced
    with step M//K starting at 2 (the reference layout for K=20, M=64).
    """
    if not 1 <= K <= M:
        raise ValueError(f"K={K} outside [1..{M}]")
    if style == "contiguous":
        start = (M - K) // 2 + 1
        return Query(range(start, start + K))
    if style == "spread":
        step = max(1, M // K)
        start = min(2, M - (K - 1) * step)
        if start < 1:
            start = 1
        return Query(start + step * np.arange(K))
    raise ValueError(f"unknown query style {style!r}")


def diagnose(grid: AngleGrid, kmax: int | None = None, mappers: dict | None = None,
             query_style: str = "contiguous", snr_db: float | None = None,
             flip_trials: int = 0, seed: int = 0) -> list[dict]:
    """Gap curves (and optionally empirical response accuracy) across K.

    mappers: {name: query->beamformer}; defaults to the linear weighted sum.
    When snr_db and flip_trials are given, adds the empirical accuracy
    1 - beta_hat(K/M) of the 1-bit threshold measurement at that SNR.
    """
    kmax = kmax or max(1, grid.M // 4)
    mappers = mappers or {"lws": lws_map}
    rows = []
    for K in range(1, kmax + 1):
        query = canonical_query(K, grid.M, query_style)
        for name, mapper in mappers.items():
            w = mapper(query, grid)
            row = {
                "K": K,
                "mapper": name,
                "gap_1bit": gap_1bit(query, grid, w),
                "gap_full": gap_full(query, grid, w),
                "threshold": threshold_select(query, grid, w),
                "mean_power_margin": mean_power_margin(query, grid, w),
            }
            if snr_db is not None and flip_trials > 0:
                rng = np.random.default_rng(np.random.SeedSequence([seed, K]))
                row["accuracy"] = 1.0 - estimate_effective_flip_prob(
                    mapper, grid, K, snr_db, flip_trials, rng)
            rows.append(row)
    return rows


def write_diagnose_csv(rows: list[dict], path) -> None:
    cols = list(rows[0].keys())
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(row[c]) for c in cols) + "\n")


def export_spectra(grid: AngleGrid, K: int, mappers: dict, out_prefix: str,
                   query_style: str = "contiguous") -> list[str]:
    """Power-spectrum CSV per mapper for the canonical size-K query."""
    query = canonical_query(K, grid.M, query_style)
    paths = []
    for name, mapper in mappers.items():
        path = f"{out_prefix}_{name}.csv"
        export_power_spectrum(mapper(query, grid), grid, path)
        paths.append(path)
    return paths


# -- comparison / merge ------------------------------------------------------

def compare(inputs: list[tuple[str, str]], path) -> None:
    """Merge result tables and external (snr_db, loss) reference curves into
    one long-format CSV with a series column."""
    lines = ["series,snr_db,mean_quadratic_loss,std_error"]
    for in_path, label in inputs:
        with open(in_path) as fh:
            head = fh.readline()
        if head.startswith("#") or head.startswith("algorithm,"):
            _, rows = read_result_csv(in_path)
            for rec in rows:
                lines.append(",".join([label, rec["snr_db"],
                                       rec["mean_quadratic_loss"], rec["std_error"]]))
        else:
            for snr, loss in load_reference_curve(in_path):
                lines.append(f"{label},{_fmt(snr)},{_fmt(loss)},nan")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


# -- config file -------------------------------------------------------------

_FLOAT_KEYS = {"theta_min", "theta_max", "d_over_lambda", "epsilon", "p",
               "mu_alpha", "sigma_alpha", "sigma0_sq", "beta0", "beta1"}
_INT_KEYS = {"M", "N_R", "k", "trials", "n", "hybrid_kmax", "seed", "workers"}
_STR_KEYS = {"algorithm", "rule", "fading", "channel", "model_dir", "output", "format"}


def parse_config_file(path) -> dict:
    """key=value configuration; '#' starts a comment; snr_db is a comma list."""
    values: dict = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
            key, _, val = line.partition("=")
            key, val = key.strip(), val.strip()
            values[key] = val
    return coerce_config_values(values)


def coerce_config_values(values: dict) -> dict:
    out = {}
    for key, val in values.items():
        try:
            if key in _FLOAT_KEYS:
                out[key] = float(val)
            elif key in _INT_KEYS:
                out[key] = int(val)
            elif key in _STR_KEYS:
                out[key] = str(val)
            elif key == "snr_db":
                if isinstance(val, (tuple, list)):
                    out[key] = tuple(float(v) for v in val)
                else:
                    out[key] = tuple(float(v) for v in str(val).split(","))
            else:
                raise ConfigError(f"unknown configuration key {key!r}")
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {val!r} ({exc})") from exc
    return out


def build_config(file_values: dict | None = None, overrides: dict | None = None) -> ExperimentConfig:
    merged = {}
    merged.update(file_values or {})
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        return ExperimentConfig(**merged)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
