import argparse
import logging
import os
import sys

import numpy as np

from affine_dpm import clustering, constants
from affine_dpm.dataio import (
    RunManifest,
    config_affine,
    config_alpha,
    config_base_measure,
    config_grid,
    config_hyperprior,
    config_sampler,
    load_config,
    read_data,
    read_json,
    write_data,
    write_json,
)
from affine_dpm.density import (
    distance_matrix,
    normalize_matrix,
    predictive_density,
    rescaled_estimate,
    write_density_csv,
)
from affine_dpm.experiment import StudySettings, analyze, default_prior, run_study
from affine_dpm.mathcore import RngStream
from affine_dpm.model import AffineMap, EmpiricalBayesRule, map_base_measure, map_hyperprior
from affine_dpm.sampler import read_draws, run_chain, traces, write_draws
from affine_dpm.scenarios import ScenarioSpec, simulate

validation_errors = (ValueError, OSError, KeyError)
numeric_errors = (RuntimeError, ArithmeticError)


def add_global_args(parser):
    parser.add_argument(
        "--seed",
        help="Master random seed (default: the sampler seed of the configuration, else 0)",
        type=int,
    )
    parser.add_argument(
        "--workers", "-w", help="Number of worker processes for replicates", type=int, default=1
    )
    parser.add_argument("--out-dir", "-o", help="Output directory", default=".")
    parser.add_argument("--config", "-c", help="JSON configuration file")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("--verbose", "-v", help="Log debug messages", action="store_true")
    verbosity.add_argument(
        "--quiet", "-q", help="Only log warnings and errors", action="store_true"
    )


def add_sampler_args(parser):
    parser.add_argument("--n-iter", help="Number of iterations", type=int)
    parser.add_argument("--burn-in", help="Number of burn-in iterations", type=int)
    parser.add_argument("--thin", help="Keep every thin-th draw after burn-in", type=int)
    parser.add_argument("--aux-m", help="Auxiliary components per allocation move", type=int)


def _sampler(args, config):
    return config_sampler(
        config,
        n_iter=args.n_iter,
        burn_in=args.burn_in,
        thin=args.thin,
        aux_m=args.aux_m,
        seed=args.seed,
    )


def _first(*values):
    return next(v for v in values if v is not None)


def _output(args, name):
    return os.path.join(args.out_dir, name)


def _read_map(path, d):
    if path is None:
        return AffineMap.identity(d)
    return AffineMap.from_dict(read_json(path))


def simulate_command(args, config):
    spec = ScenarioSpec(args.scenario, args.n, args.c)
    data = simulate(spec, RngStream(args.seed, constants.simulation_stream))
    path = _output(args, args.output)
    write_data(data, path)
    return {"data": path}, {"scenario": spec.to_dict()}


def fit_command(args, config):
    data = read_data(args.data)
    d = data.shape[1]
    pi, hyperprior, alpha = default_prior(d)
    pi = config_base_measure(config) or pi
    if "base_measure" in config or "empirical_bayes" in config:
        hyperprior = None
    hyperprior = config_hyperprior(config) or hyperprior
    alpha = config_alpha(config) if "alpha" in config else alpha
    g = config_affine(config)
    if g is not None:
        logging.info("Fitting the affinely transformed data with the mapped hyperparameters")
        data = g(data)
        # empirical Bayes commutes with g, so the rule is resolved on the mapped data
        if isinstance(pi, EmpiricalBayesRule):
            pi = pi.resolve(data)
        else:
            pi = map_base_measure(pi, g)
        hyperprior = None if hyperprior is None else map_hyperprior(hyperprior, g)
    chain = _sampler(args, config)
    draws = run_chain(data, pi, hyperprior, alpha, chain)
    outputs = {"draws": _output(args, "draws.jsonl"), "traces": _output(args, "traces.csv")}
    write_draws(draws, outputs["draws"])
    traces(draws).to_csv(outputs["traces"], index=False, float_format="%.17g")
    return outputs, {"n_draws": len(draws), "chain": chain.to_dict()}


def density_command(args, config):
    draws = read_draws(args.draws)
    data = None if args.data is None else read_data(args.data)
    grid = config_grid(config, data)
    estimate = predictive_density(draws, grid, RngStream(args.seed, constants.density_stream))
    path = _output(args, "density.csv")
    write_density_csv(estimate, path)
    return {"density": path}, {"mass": estimate.mass}


def compare_command(args, config):
    draw_sets = [read_draws(path) for path in args.draws]
    d = draw_sets[0].dim
    maps = args.maps or [None] * len(draw_sets)
    if len(maps) != len(draw_sets):
        raise ValueError(f"{len(draw_sets)} draw files but {len(maps)} maps")
    maps = [_read_map(path, d) for path in maps]
    data = None if args.data is None else read_data(args.data)
    grid = config_grid(config, data)
    estimates = [
        rescaled_estimate(draws, g, grid, RngStream(args.seed, constants.density_stream))
        for draws, g in zip(draw_sets, maps)
    ]
    raw = distance_matrix(estimates, args.metric)
    normalized, all_zero = normalize_matrix(raw)
    outputs = {
        "distances": _output(args, "distances.csv"),
        "normalized": _output(args, "normalized_distances.csv"),
    }
    np.savetxt(outputs["distances"], raw, delimiter=",", fmt="%.17g")
    np.savetxt(outputs["normalized"], normalized, delimiter=",", fmt="%.17g")
    value = float(raw[0, 1]) if len(estimates) > 1 else 0.0
    logging.info(f"{args.metric} distance between the first two fits: {value:.6g}")
    return outputs, {"metric": args.metric, "distance": value, "all_zero": all_zero}


def cluster_command(args, config):
    draws = read_draws(args.draws)
    similarity = clustering.psm(draws)
    partition = clustering.optimal_partition(draws, similarity)
    ball = clustering.credible_ball(draws, partition, args.level)
    outputs = {
        "psm": _output(args, "psm.csv"),
        "partition": _output(args, "partition.json"),
        "credible_ball": _output(args, "credible_ball.json"),
    }
    clustering.write_psm_csv(similarity, outputs["psm"])
    write_json(partition.to_dict(), outputs["partition"])
    write_json(ball.to_dict(), outputs["credible_ball"])
    return outputs, {"n_clusters": partition.n_clusters, "radius": ball.radius}


def experiment_command(args, config):
    chain = _sampler(args, config)
    kwargs = {}
    if args.replicates is not None:
        kwargs["replicates"] = args.replicates
    if args.sample_sizes:
        kwargs["sample_sizes"] = tuple(args.sample_sizes)
    settings = StudySettings(args.study, args.scale, args.seed, chain=chain, **kwargs)
    result = run_study(settings, workers=args.workers)
    return result.write(args.out_dir), {"settings": settings.to_dict()}


def analyze_command(args, config):
    label_column = args.label_column or config.get("analysis", {}).get("label_column")
    if label_column is None:
        data, labels = read_data(args.data), None
    else:
        data, labels = read_data(args.data, label_column)
    sampler = config.get("sampler", {})
    chain = config_sampler(
        config,
        n_iter=_first(args.n_iter, sampler.get("n_iter"), constants.analysis_n_iter),
        burn_in=_first(args.burn_in, sampler.get("burn_in"), constants.analysis_burn_in),
        thin=args.thin,
        aux_m=args.aux_m,
        seed=args.seed,
    )
    result = analyze(data, config, labels, chain)
    outputs = {
        "standardized": _output(args, "standardized.csv"),
        "draws": _output(args, "draws.jsonl"),
        "traces": _output(args, "traces.csv"),
        "psm": _output(args, "psm.csv"),
        "partition": _output(args, "partition.json"),
        "credible_ball": _output(args, "credible_ball.json"),
        "summary": _output(args, "summary.json"),
    }
    write_data(result.data, outputs["standardized"])
    write_draws(result.draws, outputs["draws"])
    result.traces.to_csv(outputs["traces"], index=False, float_format="%.17g")
    clustering.write_psm_csv(result.similarity, outputs["psm"])
    write_json(result.partition.to_dict(), outputs["partition"])
    write_json(result.ball.to_dict(), outputs["credible_ball"])
    write_json(result.summary, outputs["summary"])
    if result.confusion is not None:
        outputs["confusion"] = _output(args, "confusion.csv")
        result.confusion.to_csv(outputs["confusion"])
    return outputs, {
        "alpha_prior_mean": result.summary["alpha_prior_mean"],
        "prior_expected_clusters": result.summary["prior_expected_clusters"],
        "robustness": result.robustness.report,
    }


def replay_command(args, config):
    manifest = RunManifest.read(args.manifest)
    argv = list(manifest.arguments["argv"])
    logging.info(f"Replaying {manifest.command} with seed {manifest.seed}")
    code = main(argv)
    if code != 0:
        raise RuntimeError(f"replayed command exited with code {code}")
    return {"manifest": args.manifest}, {"replayed": manifest.command}


def build_parser():
    parser = argparse.ArgumentParser(
        description="Dirichlet process mixtures of Gaussians under affine transformations"
    )
    commands = parser.add_subparsers(dest="command", required=True)

    simulate_parser = commands.add_parser("simulate", help="Simulate a scenario dataset")
    simulate_parser.add_argument("scenario", choices=["mog2d", "student_t"])
    simulate_parser.add_argument("--n", "-n", help="Sample size", type=int, default=100)
    simulate_parser.add_argument("--c", help="Rescaling constant", type=float, default=1.0)
    simulate_parser.add_argument("--output", help="Output file name", default="data.csv")
    simulate_parser.set_defaults(func=simulate_command)

    fit_parser = commands.add_parser("fit", help="Run the Gibbs sampler on a data file")
    fit_parser.add_argument("data", help="CSV data file")
    add_sampler_args(fit_parser)
    fit_parser.set_defaults(func=fit_command)

    density_parser = commands.add_parser("density", help="Posterior predictive density on a grid")
    density_parser.add_argument("draws", help="Draws file written by fit")
    density_parser.add_argument("--data", help="Data file used to build the default grid")
    density_parser.set_defaults(func=density_command)

    compare_parser = commands.add_parser("compare", help="Distances between rescaled fits")
    compare_parser.add_argument("draws", nargs="+", help="Draws files written by fit")
    compare_parser.add_argument(
        "--maps", nargs="+", help="JSON files {C, b} of the map each fit was applied to"
    )
    compare_parser.add_argument("--data", help="Original-scale data file for the default grid")
    compare_parser.add_argument("--metric", choices=["l1", "hellinger"], default="l1")
    compare_parser.set_defaults(func=compare_command)

    cluster_parser = commands.add_parser("cluster", help="PSM, optimal partition and credible ball")
    cluster_parser.add_argument("draws", help="Draws file written by fit")
    cluster_parser.add_argument(
        "--level", help="Credible ball level", type=float, default=constants.credible_level
    )
    cluster_parser.set_defaults(func=cluster_command)

    experiment_parser = commands.add_parser("experiment", help="Run a replicate study")
    experiment_parser.add_argument("study", choices=list(constants.studies))
    experiment_parser.add_argument("--scale", choices=list(constants.scales), default="desk")
    experiment_parser.add_argument(
        "--replicates", help="Override the number of replicates", type=int
    )
    experiment_parser.add_argument(
        "--sample-sizes", nargs="+", type=int, help="Override the sample sizes"
    )
    add_sampler_args(experiment_parser)
    experiment_parser.set_defaults(func=experiment_command)

    analyze_parser = commands.add_parser("analyze", help="Standardise, fit and cluster a dataset")
    analyze_parser.add_argument("data", help="CSV data file with a header")
    analyze_parser.add_argument("--label-column", help="Column of reference labels")
    add_sampler_args(analyze_parser)
    analyze_parser.set_defaults(func=analyze_command)

    replay_parser = commands.add_parser("replay", help="Re-run the command of a manifest")
    replay_parser.add_argument("manifest", help="manifest.json written by a previous command")
    replay_parser.set_defaults(func=replay_command)

    for sub in commands.choices.values():
        add_global_args(sub)
    return parser


def configure_logging(args):
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s: %(message)s", force=True)


def main(argv=None):
    """Entry point of the `affine-dpm` command. Returns the exit code."""
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    configure_logging(args)
    try:
        os.makedirs(args.out_dir, exist_ok=True)
        config = load_config(args.config)
        args.seed = _first(args.seed, config.get("sampler", {}).get("seed"), 0)
        outputs, summary = args.func(args, config)
        if args.command != "replay":
            arguments = {k: v for k, v in vars(args).items() if k != "func"}
            arguments["argv"] = argv
            manifest = RunManifest(
                args.command, arguments, config, args.seed, outputs=outputs, summary=summary
            )
            manifest.write(args.out_dir)
    except np.linalg.LinAlgError as e:
        logging.error(f"numeric failure: {e}")
        return 3
    except validation_errors as e:
        logging.error(f"invalid input: {e}")
        return 2
    except numeric_errors as e:
        logging.error(f"numeric failure: {e}")
        return 3
    return 0
