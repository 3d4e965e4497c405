"""Command-line pipeline: generate, partition, build, train, impute, detect, bench.

Every subcommand is deterministic under its --seed; measured wall times go to
stderr or to a separate timing file so reports compare byte for byte between
runs. Exit codes: 0 success, 1 usage error, 2 data/validation error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import __version__, analysis, builder, datagen, partition, trainer
from .builder import GRAPH_SCHEMA_VERSION
from .datagen import DATASET_SCHEMA_VERSION, KINDS, KIND_INDEX
from .errors import DataError, GridModelError, NumericalError
from .nlpca import MODEL_VERSION
from .seeds import derive_seed


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parse_hours(spec: str, n_hours: int) -> np.ndarray:
    """Parse an hour window 'A:B' (half open) or a single count 'N'."""
    try:
        if ":" in spec:
            a, b = spec.split(":", 1)
            lo = int(a) if a else 0
            hi = int(b) if b else n_hours
        else:
            lo, hi = 0, int(spec)
    except ValueError as exc:
        raise UsageError(f"bad hour window {spec!r}; expected 'A:B'") from exc
    lo, hi = max(lo, 0), min(hi, n_hours)
    if hi <= lo:
        raise UsageError(f"hour window {spec!r} is empty for a {n_hours}-hour dataset")
    return np.arange(lo, hi)


def _load_config(path):
    if path is None:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise DataError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise DataError(f"config file {path} is not valid JSON ({exc})")
    if not isinstance(cfg, dict):
        raise DataError(f"config file {path} must hold a JSON object")
    return cfg


def _setting(args, config, name, default):
    """Precedence: explicit flag > config file > built-in default."""
    value = getattr(args, name.replace("-", "_"), None)
    if value is not None:
        return value
    if name in config:
        return config[name]
    return default


def _em_config(args, config) -> trainer.EmConfig:
    return trainer.EmConfig(
        em_iters=int(_setting(args, config, "em-iters", 5)),
        epochs=int(_setting(args, config, "epochs", 1500)),
        refine_epochs=int(_setting(args, config, "refine-epochs", 400)),
        lr=float(_setting(args, config, "lr", 0.1)),
        seed=int(_setting(args, config, "seed", 0)),
        max_outer=int(_setting(args, config, "max-outer", 8)),
        tol=float(_setting(args, config, "tol", 1e-5)),
        invert_steps=int(_setting(args, config, "invert-steps", 300)),
        invert_lr=float(_setting(args, config, "invert-lr", 0.05)),
    )


def _write_json(path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
        fh.write("\n")


def cmd_gen_data(args, config):
    seed = int(_setting(args, config, "seed", 0))
    dataset = datagen.generate(int(args.buses), int(args.hours), seed)
    datagen.save_csv(dataset, args.out)
    print(f"wrote {args.out}: {args.buses} buses x {args.hours} hours (seed {seed})")


def cmd_partition(args, config):
    graph = partition.load_edges_csv(args.topology)
    result = partition.partition(
        graph,
        int(_setting(args, config, "depth", 4)),
        min_size=int(_setting(args, config, "min-size", 2)),
    )
    os.makedirs(args.out, exist_ok=True)
    partition.save_partition_csv(
        result,
        os.path.join(args.out, "partition.csv"),
        os.path.join(args.out, "adjacency.csv"),
    )
    sizes = [len(s) for s in result.sections]
    print(
        f"wrote {args.out}: {result.n_sections} sections, "
        f"sizes {min(sizes)}..{max(sizes)}"
    )


def cmd_build(args, config):
    result = partition.load_partition_csv(
        os.path.join(args.partition, "partition.csv"),
        os.path.join(args.partition, "adjacency.csv"),
    )
    dataset = datagen.load_csv(args.dataset)
    blueprint = builder.build_blueprint(result, noise=dataset.noise_sigma)
    builder.save_blueprint(blueprint, args.out)
    graph_probe = builder.instantiate(
        blueprint,
        models={
            j.id: _probe_decoder(j) for j in blueprint.joints
        },
    )
    report = graph_probe.validation
    print(
        f"wrote {args.out}: {len(blueprint.variables)} variables, "
        f"{len(blueprint.sensors)} sensors, {len(blueprint.joints)} joint factors; "
        f"validation {'ok' if report.ok else 'FAILED'}"
    )


def _probe_decoder(joint_spec):
    """Zero-weight decoder with the right dims, for structural validation only."""
    import numpy as _np

    from .nlpca import DecoderNetwork

    d, q, m = joint_spec.output_dim, joint_spec.latent_dim, joint_spec.hidden_dim
    return DecoderNetwork(
        w1=_np.zeros((m, q)),
        b1=_np.zeros(m),
        w2=_np.zeros((d, m)),
        b2=_np.zeros(d),
        noise_cov=_np.eye(d),
    )


def cmd_train(args, config):
    blueprint, _, _ = builder.load_blueprint(args.model)
    dataset = datagen.load_csv(args.dataset)
    cfg = _em_config(args, config)
    hours = _parse_hours(
        str(_setting(args, config, "train-hours", f"0:{dataset.n_hours}")),
        dataset.n_hours,
    )
    t0 = time.perf_counter()
    result = trainer.em_train(blueprint, dataset, hours, cfg)
    elapsed = time.perf_counter() - t0
    os.makedirs(args.out, exist_ok=True)
    builder.save_model_bundle(blueprint, result.models, result.prior_means, args.out)
    _write_json(os.path.join(args.out, "report.json"), result.report.to_dict())
    print(f"training wall time: {elapsed:.1f}s", file=sys.stderr)
    final = result.report.iterations[-1].mean_rmse
    print(f"wrote {args.out}: {len(result.models)} models, final rmse {final:.6g}")


def cmd_impute(args, config):
    blueprint, models, prior_means = builder.load_model_bundle(args.model)
    dataset = datagen.load_csv(args.dataset)
    cfg = _em_config(args, config)
    hours = _parse_hours(
        str(_setting(args, config, "hours", f"0:{dataset.n_hours}")), dataset.n_hours
    )
    ratio = float(_setting(args, config, "missing-ratio", 0.1))
    seed = int(_setting(args, config, "seed", 0))
    removed = trainer.make_removal_mask(dataset, hours, ratio, seed)
    result = trainer.evaluate(blueprint, models, prior_means, dataset, hours, removed, cfg)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "estimates.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("hour,bus,kind,estimate,std,hidden\n")
        for row, hour in enumerate(hours):
            for bus in range(dataset.n_buses):
                for k, kind in enumerate(KINDS):
                    est = result.series.estimates[row, bus, k]
                    std = result.series.posterior_std[row, bus, k]
                    fh.write(
                        f"{hour},{bus},{kind},{est:.12g},{std:.12g},"
                        f"{1 if removed[row, bus, k] else 0}\n"
                    )
    _write_json(
        os.path.join(args.out, "summary.json"),
        {
            "missing_ratio": ratio,
            "seed": seed,
            "rmse": result.rmse,
            "per_kind_rmse": result.per_kind_rmse,
            "n_scored": result.n_scored,
        },
    )
    print(f"rmse={result.rmse:.8g} over {result.n_scored} hidden entries")


def cmd_detect(args, config):
    blueprint, models, prior_means = builder.load_model_bundle(args.model)
    dataset = datagen.load_csv(args.dataset)
    cfg = _em_config(args, config)
    hours = _parse_hours(
        str(_setting(args, config, "hours", f"0:{dataset.n_hours}")), dataset.n_hours
    )
    threshold = float(_setting(args, config, "threshold", 0.99))
    flags = analysis.detect_anomalies(
        blueprint, models, prior_means, dataset, hours, threshold, cfg
    )
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "flags.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("sensor,bus,kind,z,probability,flagged,sigma,mean_residual\n")
        for f in flags:
            fh.write(
                f"{f.sensor},{f.bus},{f.kind},{f.z:.12g},{f.probability:.12g},"
                f"{1 if f.flagged else 0},{f.sigma:.12g},{f.mean_residual:.12g}\n"
            )
    flagged = [f for f in flags if f.flagged]
    if flagged:
        names = ", ".join(f.sensor for f in flagged)
        print(f"flagged {len(flagged)} sensor(s): {names}")
    else:
        print("no sensors flagged")


def cmd_bench(args, config):
    sizes = [int(s) for s in str(args.sizes).split(",") if s]
    if not sizes:
        raise UsageError("--sizes needs a comma-separated list, e.g. 10,20,40")
    seed = int(_setting(args, config, "seed", 0))
    rows = analysis.scaling_benchmark(
        sizes,
        seed=seed,
        with_rmse=not args.skip_rmse,
        repeats=int(_setting(args, config, "repeats", 30)),
    )
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "scaling.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("sections,variables,graph_parameters,centralized_parameters,rmse_at_10pct\n")
        for r in rows:
            rm = "" if r.rmse_at_10pct is None else f"{r.rmse_at_10pct:.12g}"
            fh.write(
                f"{r.sections},{r.variables},{r.graph_parameters},"
                f"{r.centralized_parameters},{rm}\n"
            )
    # wall-clock measurements are inherently non-deterministic; kept separate
    with open(os.path.join(args.out, "timing.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("sections,sweep_seconds\n")
        for r in rows:
            fh.write(f"{r.sections},{r.sweep_seconds:.6g}\n")
    for r in rows:
        print(
            f"sections={r.sections} variables={r.variables} "
            f"graph_params={r.graph_parameters} central_params={r.centralized_parameters}"
        )


def build_parser() -> _Parser:
    parser = _Parser(
        prog="gridbp",
        description=(
            "Probabilistic grid modelling: belief propagation over a factor "
            "graph whose pairwise couplings are learned latent-manifold models."
        ),
    )
    parser.add_argument(
        "--version",
        action="version",
        version=(
            f"gridbp {__version__} "
            f"(graph schema {GRAPH_SCHEMA_VERSION}, dataset schema "
            f"{DATASET_SCHEMA_VERSION}, model format {MODEL_VERSION})"
        ),
    )
    sub = parser.add_subparsers(dest="command", metavar="command")

    def common(p):
        p.add_argument("--config", help="JSON config file; flags override its keys")
        p.add_argument("--seed", type=int, help="master seed (default 0)")
        p.add_argument("--threads", type=int, default=1, help="worker cap (default 1)")

    p = sub.add_parser("gen-data", help="generate a synthetic dataset directory")
    p.add_argument("--buses", type=int, required=True, help="number of grid buses")
    p.add_argument("--hours", type=int, required=True, help="number of hourly samples")
    p.add_argument("--out", required=True, help="output directory")
    common(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("partition", help="spectral partition of a topology CSV")
    p.add_argument("--topology", required=True, help="edge list CSV (from,to)")
    p.add_argument("--depth", type=int, help="bisection rounds (default 4)")
    p.add_argument("--min-size", type=int, help="sections below this stop splitting (default 2)")
    p.add_argument("--out", required=True, help="output directory")
    common(p)
    p.set_defaults(func=cmd_partition)

    p = sub.add_parser("build", help="derive the factor-graph blueprint")
    p.add_argument("--partition", required=True, help="partition output directory")
    p.add_argument("--dataset", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="output graph document path")
    common(p)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("train", help="expectation-maximization training")
    p.add_argument("--model", required=True, help="blueprint graph document")
    p.add_argument("--dataset", required=True, help="dataset directory")
    p.add_argument("--em-iters", type=int, help="EM iterations (default 5)")
    p.add_argument("--epochs", type=int, help="decoder epochs, first fit (default 1500)")
    p.add_argument("--refine-epochs", type=int, help="decoder epochs, later fits (default 400)")
    p.add_argument("--train-hours", help="hour window 'A:B' (default all)")
    p.add_argument("--out", required=True, help="output bundle directory")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("impute", help="masked-entry estimation experiment")
    p.add_argument("--model", required=True, help="trained bundle directory")
    p.add_argument("--dataset", required=True, help="dataset directory")
    p.add_argument("--missing-ratio", type=float, help="hidden fraction (default 0.1)")
    p.add_argument("--hours", help="hour window 'A:B' (default all)")
    p.add_argument("--out", required=True, help="output directory")
    common(p)
    p.set_defaults(func=cmd_impute)

    p = sub.add_parser("detect", help="sensor residual Z tests")
    p.add_argument("--model", required=True, help="trained bundle directory")
    p.add_argument("--dataset", required=True, help="dataset directory")
    p.add_argument("--threshold", type=float, help="flag probability (default 0.99)")
    p.add_argument("--hours", help="hour window 'A:B' (default all)")
    p.add_argument("--out", required=True, help="output directory")
    common(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("bench", help="parameter/timing scaling table")
    p.add_argument("--sizes", required=True, help="comma-separated section counts")
    p.add_argument("--skip-rmse", action="store_true", help="skip the imputation column")
    p.add_argument("--out", required=True, help="output directory")
    common(p)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "func", None) is None:
            parser.print_help()
            return 1
        config = _load_config(getattr(args, "config", None))
        args.func(args, config)
        return 0
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename or exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except (DataError, GridModelError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
