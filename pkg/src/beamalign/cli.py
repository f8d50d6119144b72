"""Command-line front end: simulate, train, diagnose, compare.

Exit codes: 0 success, 1 configuration error, 2 missing model, 3 runtime
failure.
"""

from __future__ import annotations

import argparse
import sys

from . import mlp as mlp_engine
from .beammaps import lws_map, mlp_map
from .experiment import (
    ConfigError,
    ExperimentConfig,
    build_config,
    coerce_config_values,
    compare,
    diagnose,
    emit,
    export_spectra,
    parse_config_file,
    run_experiment,
    write_diagnose_csv,
)
from .geometry import AngleGrid

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NO_MODEL = 2
EXIT_RUNTIME = 3


def _add_grid_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--M", type=int, help="number of sub-intervals")
    p.add_argument("--NR", type=int, dest="N_R", help="number of antennas")
    p.add_argument("--k", type=int, help="secondary sub-intervals per sub-interval")
    p.add_argument("--theta-min", type=float, dest="theta_min")
    p.add_argument("--theta-max", type=float, dest="theta_max")
    p.add_argument("--d-over-lambda", type=float, dest="d_over_lambda")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="beamalign",
                                     description="Adaptive beam alignment simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a Monte Carlo experiment")
    sim.add_argument("--config", help="key=value configuration file")
    _add_grid_flags(sim)
    sim.add_argument("--algorithm", choices=["lws", "mlp", "hybrid", "naive",
                                             "hierarchical", "hiepm"])
    sim.add_argument("--rule", choices=["1bit", "full"])
    sim.add_argument("--fading", choices=["known", "kalman", "mmse"])
    sim.add_argument("--channel", choices=["physical", "ideal"])
    sim.add_argument("--snr", dest="snr_db", help="comma-separated SNR list in dB")
    sim.add_argument("--trials", type=int)
    sim.add_argument("--n", type=int, help="pilot budget per trial")
    sim.add_argument("--epsilon", type=float)
    sim.add_argument("--p", type=float, help="1-bit update flip probability")
    sim.add_argument("--seed", type=int)
    sim.add_argument("--model-dir", dest="model_dir")
    sim.add_argument("--out", dest="output")
    sim.add_argument("--format", choices=["csv", "json"])
    sim.add_argument("--workers", type=int)

    tr = sub.add_parser("train", help="train the query->beamformer network for one K")
    _add_grid_flags(tr)
    tr.add_argument("--K", type=int, required=True)
    tr.add_argument("--rule", choices=["1bit", "full"], default="1bit")
    tr.add_argument("--epochs", type=int, default=200)
    tr.add_argument("--patience", type=int, default=10)
    tr.add_argument("--lr", type=float, default=1e-4)
    tr.add_argument("--batch-size", type=int, default=800)
    tr.add_argument("--dataset-size", type=int, default=10_000)
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--out", required=True, help="model directory")
    tr.add_argument("--quiet", action="store_true")

    dg = sub.add_parser("diagnose", help="gap/accuracy curves and spectrum export")
    _add_grid_flags(dg)
    dg.add_argument("--kmax", type=int, help="largest query size (default M/4)")
    dg.add_argument("--mapper", choices=["lws", "mlp", "both"], default="lws")
    dg.add_argument("--rule", choices=["1bit", "full"], default="1bit",
                    help="which trained models to load for the mlp mapper")
    dg.add_argument("--model-dir", dest="model_dir", default="models")
    dg.add_argument("--query-style", choices=["contiguous", "spread"],
                    default="contiguous")
    dg.add_argument("--snr", type=float, default=None,
                    help="also estimate response accuracy at this SNR")
    dg.add_argument("--flip-trials", type=int, default=0)
    dg.add_argument("--seed", type=int, default=0)
    dg.add_argument("--spectrum-K", type=int, default=0,
                    help="export power spectra for this query size")
    dg.add_argument("--out", required=True)

    cp = sub.add_parser("compare", help="merge result tables and reference curves")
    cp.add_argument("--inputs", nargs="+", required=True,
                    help="CSV paths (result tables or snr,loss references)")
    cp.add_argument("--labels", nargs="*", default=None)
    cp.add_argument("--out", required=True)
    return parser


def _cmd_simulate(args) -> int:
    file_values = parse_config_file(args.config) if args.config else {}
    override_keys = ["theta_min", "theta_max", "M", "N_R", "k", "d_over_lambda",
                     "algorithm", "rule", "fading", "channel", "snr_db", "trials",
                     "n", "epsilon", "p", "seed", "model_dir", "output", "format",
                     "workers"]
    overrides = {k: getattr(args, k, None) for k in override_keys}
    if overrides.get("snr_db") is not None:
        overrides.update(coerce_config_values({"snr_db": overrides["snr_db"]}))
    config = build_config(file_values, overrides)
    table = run_experiment(config)
    path = emit(table)
    print(f"wrote {path} ({len(table.rows)} rows, {config.trials} trials each)")
    return EXIT_OK


def _grid_from_args(args, defaults: ExperimentConfig) -> AngleGrid:
    return AngleGrid(
        args.theta_min if args.theta_min is not None else defaults.theta_min,
        args.theta_max if args.theta_max is not None else defaults.theta_max,
        M=args.M if args.M is not None else defaults.M,
        k=args.k if args.k is not None else defaults.k,
        N_R=args.N_R if args.N_R is not None else defaults.N_R,
        d_over_lambda=(args.d_over_lambda if args.d_over_lambda is not None
                       else defaults.d_over_lambda),
    )


def _cmd_train(args) -> int:
    import os
    defaults = ExperimentConfig()
    grid = _grid_from_args(args, defaults)
    cfg = mlp_engine.TrainConfig(learning_rate=args.lr, batch_size=args.batch_size,
                                 max_epochs=args.epochs, patience=args.patience,
                                 dataset_size=args.dataset_size, seed=args.seed)
    log = None if args.quiet else (lambda msg: print(msg, flush=True))
    model = mlp_engine.train(cfg, grid, args.K, rule=args.rule, log=log)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, mlp_engine.model_filename(grid, args.K, args.rule))
    mlp_engine.save(model, path)
    print(f"wrote {path} (best val loss "
          f"{model.metadata['best_val_loss']:.6f} at epoch {model.metadata['best_epoch']})")
    return EXIT_OK


def _cmd_diagnose(args) -> int:
    defaults = ExperimentConfig()
    grid = _grid_from_args(args, defaults)
    mappers = {}
    if args.mapper in ("lws", "both"):
        mappers["lws"] = lws_map
    if args.mapper in ("mlp", "both"):
        kmax = args.kmax or max(1, grid.M // 4)
        ks = list(range(1, kmax + 1))
        if args.spectrum_K:
            ks.append(args.spectrum_K)
        models = {K: mlp_engine.load_for(args.model_dir, grid, K, args.rule)
                  for K in sorted(set(ks))}
        mappers["mlp"] = lambda q, g: mlp_map(q, g, models[q.K])
    rows = diagnose(grid, kmax=args.kmax, mappers=mappers,
                    query_style=args.query_style, snr_db=args.snr,
                    flip_trials=args.flip_trials, seed=args.seed)
    write_diagnose_csv(rows, args.out)
    print(f"wrote {args.out} ({len(rows)} rows)")
    if args.spectrum_K:
        prefix = args.out[:-4] if args.out.endswith(".csv") else args.out
        paths = export_spectra(grid, args.spectrum_K, mappers,
                               f"{prefix}_spectrum_K{args.spectrum_K}",
                               query_style=args.query_style)
        for p in paths:
            print(f"wrote {p}")
    return EXIT_OK


def _cmd_compare(args) -> int:
    labels = args.labels or []
    if labels and len(labels) != len(args.inputs):
        raise ConfigError("--labels must match --inputs in length")
    pairs = [(path, labels[i] if labels else f"series{i}")
             for i, path in enumerate(args.inputs)]
    compare(pairs, args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {"simulate": _cmd_simulate, "train": _cmd_train,
                "diagnose": _cmd_diagnose, "compare": _cmd_compare}
    try:
        return handlers[args.command](args)
    except (ConfigError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except mlp_engine.ModelNotFoundError as exc:
        print(f"missing model: {exc}", file=sys.stderr)
        return EXIT_NO_MODEL
    except FileNotFoundError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:   # runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
