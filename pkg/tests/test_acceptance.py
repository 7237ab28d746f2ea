"""End-to-end acceptance suite.

Each test covers one numbered criterion at its stated tolerance and registers
a pass/fail line that the conftest hook prints in the terminal summary. The
heavyweight 40-agent benchmark run (100k rounds, 16-bit messages, plus its
unquantized twin) is shared across criteria through a module fixture.
"""
import math
import time

import numpy as np
import pytest

from conftest import report_acceptance
from qdgm.algorithm import collect_ensemble, initial_state, run_experiment, \
    run_round, RoundState
from qdgm.cli import main as cli_main
from qdgm.diagnostics import (RateBoundInputs, check_consensus_recursion,
                              check_descent_recursion, fit_loglog_slope,
                              rate_bound)
from qdgm.graph import (NetworkTopology, generate_random_connected_graph,
                        lazy_metropolis, path_topology)
from qdgm.objective import (build_objective, generate_instance,
                            well_conditioned_instance)
from qdgm.quantizer import (QuantizerConfig, QuantizerSchedule, pack_indices,
                            unpack_indices, _stochastic_round)
from qdgm.schedules import StepSchedule

BENCH = dict(n=40, d=5, bits=16, seed=7, edge_probability=0.158)
LONG_RUN = 100_000


@pytest.fixture(scope="module")
def benchmark_setup():
    objective = generate_instance(BENCH["n"], BENCH["d"], BENCH["seed"])
    topology = generate_random_connected_graph(
        BENCH["n"], BENCH["edge_probability"], BENCH["seed"])
    return objective, lazy_metropolis(topology)


@pytest.fixture(scope="module")
def benchmark_runs(benchmark_setup):
    objective, mixing = benchmark_setup
    quantized = run_experiment(objective, mixing, iterations=LONG_RUN,
                               seed=BENCH["seed"], bits=BENCH["bits"])
    baseline = run_experiment(objective, mixing, iterations=LONG_RUN,
                              seed=BENCH["seed"], bits=BENCH["bits"],
                              quantized=False)
    return objective, mixing, quantized, baseline


def test_criterion_1_quantizer_contract():
    # per-draw support bound exact; mean and second moment within 3 SE
    start = time.time()
    rng = np.random.default_rng(2024)
    draws = 100_000
    failures = []
    for trial in range(50):
        lower = float(rng.uniform(-10, 10))
        upper = lower + float(rng.uniform(0.05, 20))
        bits = int(rng.integers(1, 17))
        x = float(rng.uniform(lower, upper))
        nbins = 2 ** bits - 1
        delta = (upper - lower) / nbins
        idx = _stochastic_round(np.full(draws, x), lower, delta, nbins,
                                rng.random(draws))
        err = (lower + idx * delta) - x
        se_mean = delta / (2.0 * math.sqrt(draws))
        second = float((err ** 2).mean())
        se_second = float((err ** 2).std(ddof=1) / math.sqrt(draws))
        if np.abs(err).max() > delta:
            failures.append((trial, "support"))
        if abs(err.mean()) > 3 * se_mean:
            failures.append((trial, "mean"))
        if second > delta ** 2 / 4.0 + 3 * se_second:
            failures.append((trial, "variance"))
    elapsed = time.time() - start
    ok = not failures and elapsed < 10.0
    report_acceptance(1, ok, f"50 triples x {draws} draws, "
                             f"failures={failures}, {elapsed:.1f}s")
    assert not failures
    assert elapsed < 10.0


def test_criterion_2_growing_range_invariant(benchmark_setup):
    objective, mixing = benchmark_setup
    start = time.time()
    trace = run_experiment(objective, mixing, iterations=10_000,
                           seed=BENCH["seed"], bits=BENCH["bits"],
                           record_stride=1)
    elapsed = time.time() - start
    max_coord = trace.column("max_coord")[1:]
    range_k = trace.column("range_k")[1:]
    violations = int(np.sum(max_coord > range_k))
    ok = violations == 0 and elapsed < 120.0
    report_acceptance(2, ok, f"10k rounds, range violations={violations}, "
                             f"worst ratio={float((max_coord / range_k).max()):.3f}, "
                             f"{elapsed:.1f}s")
    assert violations == 0
    assert elapsed < 120.0


def test_criterion_3_mixing_matrix_spectrum():
    worst_sum = 0.0
    worst_eig = 0.0
    rng = np.random.default_rng(5)
    for trial in range(20):
        n = int(rng.integers(5, 41))
        p = float(rng.uniform(0.15, 0.9))
        topo = generate_random_connected_graph(n, p, seed=trial)
        mix = lazy_metropolis(topo)
        a = mix.entries
        worst_sum = max(worst_sum,
                        float(np.abs(a.sum(axis=0) - 1).max()),
                        float(np.abs(a.sum(axis=1) - 1).max()))
        # independent eigensolve through the general non-symmetric path
        evals = np.sort(np.real(np.linalg.eigvals(a)))[::-1]
        worst_eig = max(worst_eig, abs(mix.sigma2 - evals[1]))
    path3 = lazy_metropolis(path_topology(3))
    hand_ok = (path3.entries[0, 0] == 0.75 and path3.entries[1, 1] == 0.5
               and path3.entries[0, 1] == 0.25
               and abs(path3.sigma2 - 0.75) < 1e-12)
    ok = worst_sum <= 1e-12 and worst_eig <= 1e-10 and hand_ok
    report_acceptance(3, ok, f"20 graphs: stochasticity residual {worst_sum:.2e}, "
                             f"sigma2 mismatch {worst_eig:.2e}, hand values {hand_ok}")
    assert worst_sum <= 1e-12
    assert worst_eig <= 1e-10
    assert hand_ok


def test_criterion_4_measured_decay_slope(benchmark_runs):
    # Known-red: the harmonic gradient step sized against the curvature of
    # the summed objective moves the mean iterate's slowest eigenmode at
    # k^(-8/n), about k^(-0.2) at 40 agents, so the window slope lands near
    # -0.25..-0.35 regardless of seed or graph. The -0.40 target is kept as
    # stated rather than loosened to match the implementation.
    _, _, quantized, _ = benchmark_runs
    ks = quantized.column("k")
    gaps = quantized.column("f_gap_avg_max")
    slope = fit_loglog_slope(ks, gaps, 1e3, 1e5)
    ok = slope <= -0.40
    report_acceptance(4, ok, f"log-log slope over [1e3, 1e5] = {slope:.3f} "
                             f"(required <= -0.40)")
    assert slope <= -0.40, (
        f"measured slope {slope:.3f} > -0.40: the averaged-output gap on the "
        f"40-agent benchmark decays at the slow-eigenmode exponent -8/n ~ "
        f"-0.2 (window-measured {slope:.3f}); no seed or graph changes this "
        f"structural rate")


def test_criterion_5_quantized_matches_baseline(benchmark_runs):
    objective, _, quantized, baseline = benchmark_runs
    f_q = objective.f_star + quantized.final().f_gap_avg_max
    f_b = objective.f_star + baseline.final().f_gap_avg_max
    rel = abs(f_q - f_b) / abs(f_b)
    ok = rel <= 1e-2
    report_acceptance(5, ok, f"final averaged objective: quantized {f_q:.6f} "
                             f"vs baseline {f_b:.6f}, rel diff {rel:.2e}")
    assert rel <= 1e-2


def test_criterion_6_recursion_inequalities_monte_carlo():
    start = time.time()
    objective = well_conditioned_instance(4, 2)
    mixing = lazy_metropolis(path_topology(4))
    ens = collect_ensemble(objective, mixing, iterations=200, seed=321,
                           bits=6, replicas=500)
    consensus = check_consensus_recursion(ens)
    descent = check_descent_recursion(ens)
    elapsed = time.time() - start
    ok = consensus.violations == 0 and descent.violations == 0 and elapsed < 120
    report_acceptance(6, ok, f"M=500, K=200: consensus violations="
                             f"{consensus.violations}, descent violations="
                             f"{descent.violations}, {elapsed:.1f}s")
    assert consensus.violations == 0
    assert descent.violations == 0
    assert elapsed < 120.0


def test_criterion_7_bound_dominates_measurements(benchmark_runs):
    objective, mixing, quantized, _ = benchmark_runs
    by_k = {rec.k: rec for rec in quantized.records}
    inputs = RateBoundInputs(
        mu=objective.mu, lipschitz=objective.lipschitz,
        grad_bound=objective.grad_bound, dims=objective.dims, n=objective.n,
        bits=BENCH["bits"], sigma2=mixing.sigma2, v1=by_k[1].lyapunov)
    worst_ratio = 0.0
    for rec in quantized.records:
        if rec.k < 1:
            continue
        bound = rate_bound(inputs, rec.k)
        worst_ratio = max(worst_ratio, rec.f_gap_avg_max / bound)
    # two-implementation check of the envelope formula
    def oracle(T):
        q = (inputs.grad_bound * inputs.dims / (2 ** inputs.bits - 1)) ** 2
        return (inputs.mu * inputs.v1 / (8 * (T + 1) ** 2) + 2 / (T + 1)
                + 16 / (3 * inputs.mu * (1 - inputs.sigma2)) * q
                * math.log(T) ** 2 / (T + 1) ** 0.5
                + 4 * inputs.n ** 2 * (inputs.lipschitz + 8 * inputs.lipschitz ** 2)
                / (1 - inputs.sigma2) ** 2 * q * math.log(T) ** 2 / (T + 1) ** 0.75
                + 8 * inputs.lipschitz
                * (inputs.lipschitz + 8 * inputs.lipschitz ** 2 / inputs.mu)
                / (3 * inputs.mu ** 3) / (T + 1) ** 0.5)
    oracle_rel = max(abs(rate_bound(inputs, T) - oracle(T)) / oracle(T)
                     for T in (1, 10, 1000, LONG_RUN))
    ok = worst_ratio <= 1.0 and oracle_rel <= 1e-12
    report_acceptance(7, ok, f"worst measured/bound ratio {worst_ratio:.2e}, "
                             f"oracle agreement {oracle_rel:.2e}")
    assert worst_ratio <= 1.0
    assert oracle_rel <= 1e-12


def test_criterion_8_codec_and_gradient_descent_reduction():
    rng = np.random.default_rng(77)
    checked = 0
    for bits in (1, 2, 8, 16):
        for dims in (1, 5, 7):
            indices = rng.integers(0, 2 ** bits, size=(10_000 // 12 + 1, dims))
            for row in indices:
                payload = pack_indices(row, bits)
                if not np.array_equal(unpack_indices(payload, bits, dims), row):
                    report_acceptance(8, False, f"codec mismatch b={bits} d={dims}")
                    raise AssertionError("codec round-trip failed")
                checked += 1
    # single agent, iterate on the transmission grid: the update collapses
    # to an exact gradient step
    obj = build_objective(np.array([[1.0]]), np.array([0.8]))
    mixing = lazy_metropolis(NetworkTopology.from_edges(1, []))
    steps = StepSchedule(obj.mu, 1.0)
    qsched = QuantizerSchedule(obj.grad_bound, steps, QuantizerConfig(8, 1))
    worst = 0.0
    for k in (1, 3, 9, 40, 200):
        rangek, delta = qsched.range_at(k), qsched.delta_at(k)
        m = int(round((0.8 + rangek) / delta))
        x_val = -rangek + m * delta
        state = RoundState(k, np.array([[x_val]]), np.zeros((1, 1)),
                           k * (k + 1) // 2)
        nxt = run_round(state, mixing, obj, steps, qsched, seed=1)
        gd = x_val - steps.alpha(k) * 2.0 * (x_val - 0.8)
        worst = max(worst, abs(nxt.x[0, 0] - gd))
    # and the exact-exchange twin is plain gradient descent along a full run
    state = initial_state(1, 1)
    oracle = 0.0
    for k in range(200):
        state = run_round(state, mixing, obj, steps, qsched, seed=1,
                          quantized=False)
        oracle = oracle - steps.alpha(k) * 2.0 * (oracle - 0.8)
        worst = max(worst, abs(state.x[0, 0] - oracle))
    ok = worst <= 1e-12
    report_acceptance(8, ok, f"{checked} codec round-trips exact; gradient-"
                             f"descent reduction max deviation {worst:.2e}")
    assert worst <= 1e-12


def test_criterion_9_byte_identical_reruns(tmp_path):
    args = ["run", "--iterations", "300", "--bits", "16", "--seed", "7"]
    assert cli_main(args + ["--output-dir", str(tmp_path / "a")]) == 0
    assert cli_main(args + ["--output-dir", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "trace.csv").read_bytes()
    b = (tmp_path / "b" / "trace.csv").read_bytes()
    ok = a == b and len(a) > 0
    report_acceptance(9, ok, f"two CLI runs, trace.csv {len(a)} bytes, "
                             f"identical={a == b}")
    assert a == b
