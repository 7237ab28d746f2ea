"""Command-line entry point.

Subcommands:
  run     execute an experiment (optionally with its unquantized twin)
  verify  Monte Carlo checks of the per-round inequalities + property suite
  bound   tabulate measured gap against the theoretical decay envelope
  graph   emit or inspect an edge-list file

Exit codes: 0 success, 1 verification failure, 2 gradient-bound violation,
64 configuration error.
"""
from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .algorithm import collect_ensemble, run_experiment
from .config import ExperimentConfig, load_config
from .diagnostics import (InequalityReport, RateBoundInputs, Trace,
                          check_consensus_recursion, check_descent_recursion,
                          rate_bound)
from .errors import ConfigError, GradientBoundError
from .graph import (NetworkTopology, generate_random_connected_graph,
                    lazy_metropolis, load_edge_list, path_topology,
                    save_edge_list, spectral_gap)
from .objective import (RegressionObjective, generate_instance,
                        save_instance_csv, well_conditioned_instance)
from .quantizer import (QuantizerConfig, QuantizerSchedule, decode_matrix,
                        quantize_matrix, unpack_indices)
from .schedules import StepSchedule

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_GRADIENT_BOUND = 2
EXIT_CONFIG = 64


def build_topology(cfg: ExperimentConfig) -> NetworkTopology:
    if cfg.graph.edges_file:
        return load_edge_list(cfg.graph.edges_file)
    return generate_random_connected_graph(
        cfg.n, cfg.graph.edge_probability, cfg.seed, cfg.graph.retry_limit)


def build_objective_from_config(cfg: ExperimentConfig) -> RegressionObjective:
    return generate_instance(cfg.n, cfg.d, cfg.seed,
                             cfg.data.feature_high, cfg.data.target_high)


def _trace_name(replica: int, replicas: int) -> str:
    return "trace.csv" if replicas == 1 else f"trace_r{replica}.csv"


def _run_one_replica(cfg_dict: dict, replica: int) -> str:
    """Worker for the replica pool; rebuilds everything deterministically."""
    cfg = ExperimentConfig.from_json_dict(cfg_dict)
    topo = build_topology(cfg)
    mixing = lazy_metropolis(topo)
    objective = build_objective_from_config(cfg)
    out = Path(cfg.output_dir) / _trace_name(replica, cfg.replicas)
    try:
        trace = run_experiment(
            objective, mixing, iterations=cfg.iterations, seed=cfg.seed,
            bits=cfg.bits, beta_clamp=cfg.beta_clamp, eta_mode=cfg.eta_mode,
            quantized=True, replica=replica, record_stride=cfg.record_stride)
    except Exception as exc:
        partial = getattr(exc, "partial_trace", None)
        if partial is not None:
            partial.to_csv(out)
        raise
    trace.to_csv(out)
    return str(out)


def cmd_run(cfg: ExperimentConfig) -> int:
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg.save(out_dir / "config.json")
    topo = build_topology(cfg)
    save_edge_list(topo, out_dir / "graph.edges")
    objective = build_objective_from_config(cfg)
    save_instance_csv(objective, out_dir / "instance.csv")
    mixing = lazy_metropolis(topo)
    cfg_dict = cfg.to_json_dict()
    try:
        if cfg.jobs > 1 and cfg.replicas > 1:
            with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
                list(pool.map(_run_one_replica, [cfg_dict] * cfg.replicas,
                              range(cfg.replicas)))
        else:
            for rep in range(cfg.replicas):
                _run_one_replica(cfg_dict, rep)
        baseline_final = None
        if cfg.baseline:
            try:
                baseline = run_experiment(
                    objective, mixing, iterations=cfg.iterations, seed=cfg.seed,
                    bits=cfg.bits, beta_clamp=cfg.beta_clamp, eta_mode=cfg.eta_mode,
                    quantized=False, record_stride=cfg.record_stride)
            except Exception as exc:
                partial = getattr(exc, "partial_trace", None)
                if partial is not None:
                    partial.to_csv(out_dir / "baseline_trace.csv")
                raise
            baseline.to_csv(out_dir / "baseline_trace.csv")
            baseline_final = baseline.final()
    except GradientBoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_GRADIENT_BOUND
    final = Trace.from_csv(out_dir / _trace_name(0, cfg.replicas)).final()
    line = (f"final f_gap (k={final.k}): last={final.f_gap_last:.6g} "
            f"avg_max={final.f_gap_avg_max:.6g}")
    if baseline_final is not None:
        line += f" baseline_avg_max={baseline_final.f_gap_avg_max:.6g}"
    print(line)
    return EXIT_OK


def quantizer_property_checks(seed: int = 0, draws: int = 100_000) -> list[dict]:
    """Spot checks of the rounding rule: exact support bound, unbiasedness,
    variance bound, codec round-trip."""
    rng = np.random.default_rng(seed)
    steps = StepSchedule(mu=4.0, spectral_gap=0.5)
    checks = []
    for bits, dims in [(1, 3), (6, 2), (16, 5)]:
        qsched = QuantizerSchedule(1.0, steps, QuantizerConfig(bits, dims))
        k = 3
        rangek, delta = qsched.range_at(k), qsched.delta_at(k)
        x = rng.uniform(-rangek, rangek, size=dims)
        block = np.repeat(x[None, :], draws // 10, axis=0)
        msgs = quantize_matrix(block, qsched, k, rng)
        decoded = decode_matrix(msgs, qsched)
        err = decoded - block
        support_ok = bool(np.abs(err).max() <= delta)
        se = delta / (2.0 * np.sqrt(len(block)))
        mean_ok = bool(np.abs(err.mean(axis=0)).max() <= 3.0 * se)
        var_ok = bool((err ** 2).mean() <= delta ** 2 / 4.0 + 3.0 * se * delta)
        roundtrip_ok = all(
            np.array_equal(unpack_indices(m.payload, bits, dims), m.indices)
            for m in msgs[:100])
        checks.append({"name": f"quantizer_b{bits}_d{dims}",
                       "passed": support_ok and mean_ok and var_ok and roundtrip_ok,
                       "detail": {"support": support_ok, "mean": mean_ok,
                                  "variance": var_ok, "roundtrip": roundtrip_ok}})
    return checks


def cmd_verify(n: int, d: int, rounds: int, replicas: int, bits: int,
               seed: int, sigma2_offset: float = 0.0) -> int:
    """Run the inequality Monte Carlo and the property suite; JSON to stdout."""
    objective = well_conditioned_instance(n, d)
    topo = path_topology(n)
    mixing = lazy_metropolis(topo)
    checks: list[dict] = []
    mix_ok = True
    try:
        mixing.validate(topo)
    except Exception as exc:  # noqa: BLE001 - reported, not raised
        mix_ok = False
        checks.append({"name": "mixing_matrix", "passed": False, "detail": str(exc)})
    if mix_ok:
        checks.append({"name": "mixing_matrix", "passed": True,
                       "detail": {"sigma2": mixing.sigma2}})
    checks.extend(quantizer_property_checks(seed))
    ens = collect_ensemble(objective, mixing, iterations=rounds, seed=seed,
                           bits=bits, replicas=replicas)
    override = None if sigma2_offset == 0.0 else ens.sigma2 + sigma2_offset
    for checker in (check_consensus_recursion, check_descent_recursion):
        report: InequalityReport = checker(ens, sigma2_override=override)
        checks.append({
            "name": report.name,
            "passed": report.passed,
            "detail": {"replicas": report.replicas, "rounds": report.rounds,
                       "violations": report.violations,
                       "worst_margin": report.worst_margin},
        })
    passed = all(c["passed"] for c in checks)
    print(json.dumps({"passed": passed, "checks": checks}, indent=2))
    return EXIT_OK if passed else EXIT_VERIFY_FAILED


def cmd_bound(cfg: ExperimentConfig, horizons: list[int]) -> int:
    """CSV of (T, measured_gap, theoretical_bound, ratio) on a fresh run."""
    print("T,measured_gap,theoretical_bound,ratio")
    if not horizons:
        return EXIT_OK
    if min(horizons) < 1:
        raise ConfigError("invalid field T: horizons must be >= 1")
    horizons = sorted(set(horizons))
    k_max = max(horizons)
    topo = build_topology(cfg)
    mixing = lazy_metropolis(topo)
    objective = build_objective_from_config(cfg)
    trace = run_experiment(
        objective, mixing, iterations=k_max, seed=cfg.seed, bits=cfg.bits,
        beta_clamp=cfg.beta_clamp, eta_mode=cfg.eta_mode, quantized=True,
        record_stride=cfg.record_stride, extra_record_points=horizons + [1])
    by_k = {rec.k: rec for rec in trace.records}
    inputs = RateBoundInputs(
        mu=objective.mu, lipschitz=objective.lipschitz,
        grad_bound=objective.grad_bound, dims=objective.dims, n=objective.n,
        bits=cfg.bits, sigma2=1.0 - spectral_gap(mixing),
        v1=by_k[1].lyapunov)
    for horizon in horizons:
        measured = by_k[horizon].f_gap_avg_max
        bound = rate_bound(inputs, horizon)
        print(f"{horizon},{measured:.17g},{bound:.17g},{measured / bound:.17g}")
    return EXIT_OK


def write_gnuplot_series(path, ks, values) -> None:
    """Two-column whitespace-separated series, directly plottable."""
    with Path(path).open("w") as fh:
        for k, v in zip(ks, values):
            fh.write(f"{int(k)} {v:.17g}\n")


def cmd_graph(args) -> int:
    if args.load:
        topo = load_edge_list(args.load)
        mixing = lazy_metropolis(topo)
        print(f"n={topo.n} m={topo.edge_count} sigma2={mixing.sigma2:.12g} "
              f"spectral_gap={spectral_gap(mixing):.12g}")
        return EXIT_OK
    topo = generate_random_connected_graph(args.n, args.edge_probability,
                                           args.seed, args.retry_limit)
    save_edge_list(topo, args.out)
    print(f"wrote {args.out}: n={topo.n} m={topo.edge_count}")
    return EXIT_OK


def _add_config_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", type=str, default=None, help="JSON config file")
    sub.add_argument("--n", type=int, default=None, help="agent count")
    sub.add_argument("--dims", type=int, default=None, help="problem dimension")
    sub.add_argument("--bits", type=int, default=None, help="bits per dimension")
    sub.add_argument("--iterations", type=int, default=None, help="round count")
    sub.add_argument("--seed", type=int, default=None, help="master seed")
    sub.add_argument("--output-dir", type=str, default=None)
    sub.add_argument("--edge-probability", type=float, default=None)
    sub.add_argument("--edges-file", type=str, default=None,
                     help="load the graph from an edge-list file")
    sub.add_argument("--baseline", action="store_true", default=None,
                     help="also run the unquantized twin")
    sub.add_argument("--beta-clamp", type=float, default=None)
    sub.add_argument("--no-beta-clamp", action="store_true",
                     help="use the raw consensus step sequence")
    sub.add_argument("--eta-mode", choices=["body", "appendix"], default=None)
    sub.add_argument("--replicas", type=int, default=None)
    sub.add_argument("--record-stride", type=int, default=None)
    sub.add_argument("--jobs", type=int, default=None)


def _config_from_args(args) -> ExperimentConfig:
    overrides = dict(
        n=args.n, d=args.dims, bits=args.bits, iterations=args.iterations,
        seed=args.seed, output_dir=args.output_dir, baseline=args.baseline,
        eta_mode=args.eta_mode, replicas=args.replicas, jobs=args.jobs,
        record_stride=args.record_stride,
        graph__edge_probability=args.edge_probability,
        graph__edges_file=args.edges_file,
    )
    if args.no_beta_clamp:
        overrides["beta_clamp"] = "off"
    elif args.beta_clamp is not None:
        overrides["beta_clamp"] = args.beta_clamp
    return load_config(args.config, **overrides)


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qdgm",
        description="Distributed gradient descent under growing-range "
                    "stochastic quantization")
    parser.add_argument("--version", action="version", version=__version__)
    subs = parser.add_subparsers(dest="command", required=True)

    run_p = subs.add_parser("run", help="run an experiment")
    _add_config_flags(run_p)

    verify_p = subs.add_parser("verify", help="Monte Carlo inequality checks")
    verify_p.add_argument("--n", type=int, default=4)
    verify_p.add_argument("--dims", type=int, default=2)
    verify_p.add_argument("--rounds", type=int, default=200)
    verify_p.add_argument("--replicas", type=int, default=500)
    verify_p.add_argument("--bits", type=int, default=6)
    verify_p.add_argument("--seed", type=int, default=7)
    verify_p.add_argument("--sigma2-offset", type=float, default=0.0,
                          help=argparse.SUPPRESS)  # sabotage-detection hook

    bound_p = subs.add_parser("bound", help="measured gap vs decay envelope")
    _add_config_flags(bound_p)
    bound_p.add_argument("--T", dest="horizons", type=str, default="",
                         help="comma-separated list of horizons")

    graph_p = subs.add_parser("graph", help="emit or inspect an edge list")
    graph_p.add_argument("--n", type=int, default=40)
    graph_p.add_argument("--edge-probability", type=float, default=0.158)
    graph_p.add_argument("--seed", type=int, default=7)
    graph_p.add_argument("--retry-limit", type=int, default=1000)
    graph_p.add_argument("--out", type=str, default="graph.edges")
    graph_p.add_argument("--load", type=str, default=None,
                         help="print stats for an existing edge-list file")
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(_config_from_args(args))
        if args.command == "verify":
            return cmd_verify(args.n, args.dims, args.rounds, args.replicas,
                              args.bits, args.seed, args.sigma2_offset)
        if args.command == "bound":
            horizons = [int(t) for t in args.horizons.split(",") if t.strip()]
            return cmd_bound(_config_from_args(args), horizons)
        if args.command == "graph":
            return cmd_graph(args)
        raise AssertionError(f"unhandled command {args.command}")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except GradientBoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_GRADIENT_BOUND


if __name__ == "__main__":
    sys.exit(main())
