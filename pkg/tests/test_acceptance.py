"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines and timings.  Criterion 9 is a soft directional check: a miss emits a
warning and archives the measured curves instead of failing the build.
"""

import json
import os
import time
import warnings
from statistics import median

import numpy as np

from grnnkit import cli
from grnnkit.graphs import GsoKind, Permutation, build_gso, sbm
from grnnkit.models import (
    ArchSpec,
    count_parameters,
    init_gnn,
    init_model,
    init_rnn,
    rnn_hidden_size_for_budget,
)
from grnnkit.processes import INFECTED, kstep_dataset, noisy_diffusion, sir_simulate
from grnnkit.rng import child_rng
from grnnkit.spectral import FrequencyResponse, eigendecompose, evaluate_response, gft
from grnnkit.stability import (
    check_equivariance,
    estimate_gate_constants,
    lemma_filter_sweep,
    normalize_for_stability,
    normalize_response,
    theorem1_sweep,
    theorem2_sweep,
)
from grnnkit.training import TrainConfig, predict, rrmse, train
from grnnkit.graphs import Graph

from helpers import central_diff_grads, max_rel_err, model_loss_fn

ARTIFACTS = os.path.join(os.path.dirname(__file__), "_artifacts")


def _report(num, ok, detail, elapsed, limit):
    status = "PASS" if ok else "FAIL"
    print(f"[criterion {num:2d}] {status}  {detail}  ({elapsed:.1f}s / limit {limit:.0f}s)")
    assert ok, f"criterion {num}: {detail}"
    assert elapsed < limit, f"criterion {num} exceeded its runtime budget"


def test_criterion_1_permutation_equivariance():
    t0 = time.time()
    worst = 0.0
    for mode_idx, gating in enumerate(("none", "node", "edge")):
        for trial in range(20):
            rng = child_rng(101, mode_idx * 1000 + trial)
            g = sbm(20, 2, 0.8, 0.2, rng)
            s = build_gso(g, GsoKind.NORMALIZED_ADJACENCY)
            model = init_model(ArchSpec(f_in=1, f_state=4, k_in=3, k_state=3,
                                        gating=gating, gate_state=3, n=20), rng)
            x_seq = rng.standard_normal((10, 20, 1))
            p = Permutation.random(20, rng)
            worst = max(worst, check_equivariance(model, s, x_seq, p))
    _report(1, worst <= 1e-9, f"max deviation {worst:.3e} over 60 triples", time.time() - t0, 30)


def test_criterion_2_gft_identity():
    t0 = time.time()
    worst = 0.0
    for trial in range(50):
        rng = child_rng(202, trial)
        n = int(rng.integers(8, 30))
        g = sbm(n, 2, 0.7, 0.2, rng)
        s = build_gso(g, GsoKind.NORMALIZED_ADJACENCY)
        es = eigendecompose(s)
        k = int(rng.integers(1, 7))
        taps = rng.standard_normal(k)
        x = rng.standard_normal(n)
        from grnnkit.spectral import filter_matrix

        lhs = gft(es, filter_matrix(FrequencyResponse(taps), s) @ x)
        rhs = evaluate_response(FrequencyResponse(taps), es.eigenvalues) * gft(es, x)
        worst = max(worst, float(np.linalg.norm(lhs - rhs)))
    _report(2, worst <= 1e-9, f"max GFT identity residual {worst:.3e} over 50 triples",
            time.time() - t0, 10)


def test_criterion_3_gradient_correctness():
    t0 = time.time()
    from grnnkit.autodiff import Tape, backward
    from grnnkit.models import grnn_forward
    from grnnkit.training import sequence_l1_loss

    g = sbm(6, 2, 0.9, 0.4, np.random.default_rng(303))
    s = build_gso(g, GsoKind.NORMALIZED_ADJACENCY)
    rng = np.random.default_rng(304)
    x_seq = rng.standard_normal((3, 6, 1))
    target = rng.standard_normal((3, 6, 1))
    worst_overall = {}
    for gating in ("none", "time", "node", "edge"):
        model = init_model(ArchSpec(f_in=1, f_state=2, k_in=2, k_state=2,
                                    gating=gating, gate_state=2, n=6), rng)
        names, loss_fn = model_loss_fn(model, s, x_seq, target)
        arrays = dict(model.parameters())

        tape = Tape()
        tvars = {n_: tape.leaf(arrays[n_]) for n_ in names}
        y_seq, _, _ = grnn_forward(model, s, x_seq, params=tvars)
        loss = sequence_l1_loss(y_seq, [target[t] for t in range(3)])
        grads = backward(tape, loss)

        ordered = [arrays[n_] for n_ in names]
        numeric = central_diff_grads(lambda arrs: loss_fn(arrs), ordered, h=1e-5)
        worst = 0.0
        for name, num in zip(names, numeric):
            worst = max(worst, max_rel_err(grads.wrt(tvars[name]), num, clamp=1e-8))
        worst_overall[gating] = worst
    bad = {k: v for k, v in worst_overall.items() if v > 1e-5}
    detail = ", ".join(f"{k}={v:.2e}" for k, v in worst_overall.items())
    _report(3, not bad, f"max rel err per architecture: {detail}", time.time() - t0, 120)


EPS_GRID = [1e-4, 3e-4, 1e-3, 3e-3, 1e-2]


def test_criterion_4_filter_stability_lemma():
    t0 = time.time()
    g = sbm(20, 2, 0.8, 0.2, np.random.default_rng(404))
    s = build_gso(g, GsoKind.NORMALIZED_ADJACENCY)
    fr = normalize_response(FrequencyResponse([1.0, 0.5, 0.25, 0.125, 0.0625]), s)
    report = lemma_filter_sweep(fr, s, EPS_GRID, trials=10, seed=405)
    slope = report.extras["loglog_slope"]
    ok = report.extras["bound_ok"] and 0.9 <= slope <= 1.1
    _report(4, ok, f"bound_ok={report.extras['bound_ok']}, loglog slope {slope:.3f}",
            time.time() - t0, 120)


def test_criterion_5_theorem1_bound():
    t0 = time.time()
    g = sbm(20, 2, 0.8, 0.2, np.random.default_rng(505))
    s = build_gso(g, GsoKind.NORMALIZED_ADJACENCY)
    model = normalize_for_stability(
        init_model(ArchSpec(f_in=1, f_state=1, k_in=3, k_state=3),
                   np.random.default_rng(506)), s)
    report = theorem1_sweep(model, s, EPS_GRID, T=10, trials=10, seed=507)
    ok = report.extras["bound_ok"] and report.extras["state_bound_ok"]
    _report(5, ok, f"bound_ok={report.extras['bound_ok']}, "
                   f"state_bound_ok={report.extras['state_bound_ok']}",
            time.time() - t0, 300)


def test_criterion_6_theorem2_bound():
    t0 = time.time()
    g = sbm(15, 3, 0.8, 0.2, np.random.default_rng(606))
    s = build_gso(g, GsoKind.NORMALIZED_ADJACENCY)
    model = normalize_for_stability(
        init_model(ArchSpec(f_in=1, f_state=1, k_in=3, k_state=3, gating="node",
                            gate_state=1, gate_readout_taps=2, n=15),
                   np.random.default_rng(607)), s)
    consts = estimate_gate_constants(model, s, probes=8, seed=608)
    report = theorem2_sweep(model, s, [1e-4, 3e-4, 1e-3], T=8, trials=10, seed=609,
                            q=consts["Q"], phi1=consts["phi1"], phi2=consts["phi2"])
    ok = report.extras["bound_ok"]
    detail = (f"bound_ok={ok} with estimated Q={consts['Q']:.3f}, "
              f"phi1={consts['phi1']:.3f}, phi2={consts['phi2']:.3f} (evidence)")
    _report(6, ok, detail, time.time() - t0, 300)


def test_criterion_7_parameter_counts():
    t0 = time.time()
    grnn = init_model(ArchSpec(f_in=1, f_state=5, k_in=5, k_state=5,
                               out_features=(1,), out_taps=(1,)),
                      np.random.default_rng(707))
    gnn = init_gnn(1, [8, 1], [10, 10], np.random.default_rng(708))
    ok = count_parameters(grnn) == 155 and count_parameters(gnn) == 160
    _report(7, ok, f"GRNN={count_parameters(grnn)} (need 155), "
                   f"GNN={count_parameters(gnn)} (need 160)", time.time() - t0, 10)


def _kstep_setup(seed):
    rng = child_rng(seed, 1)
    g = sbm(20, 2, 0.8, 0.2, rng)
    s = build_gso(g, GsoKind.NORMALIZED_ADJACENCY)
    gen = lambda r: noisy_diffusion(s, None, 30, 0.01, 0.01, r)
    ds = kstep_dataset(gen, 5, {"train": 1000, "val": 120, "test": 200}, seed)
    return s, ds


def test_criterion_8_desk_scale_learning():
    t0 = time.time()
    grnn_beats_copy, grnn_beats_rnn_at200 = [], []
    for seed in range(5):
        s, ds = _kstep_setup(800 + seed)
        x_test, y_test = ds.part("test")
        x_train, y_train = ds.part("train")
        cfg = TrainConfig(lr=1e-3, epochs=10, batch_size=50, seed=800 + seed)

        grnn = init_model(ArchSpec(f_in=1, f_state=5, k_in=5, k_state=5),
                          child_rng(800 + seed, 2))
        grnn, grnn_trace = train(grnn, x_train, y_train, cfg, s=s)
        grnn_rrmse = rrmse(predict(grnn, s, x_test), y_test)
        copy_rrmse = rrmse(x_test, y_test)

        hidden = rnn_hidden_size_for_budget(20, 20, count_parameters(grnn))
        rnn = init_rnn(20, hidden, 20, child_rng(800 + seed, 3))
        rnn, rnn_trace = train(rnn, x_train, y_train, cfg, s=s)

        assert len(grnn_trace) >= 200 and len(rnn_trace) >= 200
        grnn_beats_copy.append(copy_rrmse - grnn_rrmse)
        grnn_beats_rnn_at200.append(rnn_trace[199][2] - grnn_trace[199][2])
    med_copy = median(grnn_beats_copy)
    med_rnn = median(grnn_beats_rnn_at200)
    ok = med_copy > 0 and med_rnn > 0
    _report(8, ok, f"median copy-last margin {med_copy:.4f} (>0), "
                   f"median RNN step-200 loss margin {med_rnn:.4f} (>0)",
            time.time() - t0, 900)


def _gating_improvement(experiment, alpha, seed, tmp_base):
    out = os.path.join(tmp_base, f"{experiment}_{alpha}_{seed}")
    summary = cli.run({"experiment": experiment, "seed": seed,
                       "process": {"alpha": alpha}}, out)
    return summary["improvement_over_grnn"]


def test_criterion_9_gating_directions(tmp_path):
    t0 = time.time()
    os.makedirs(ARTIFACTS, exist_ok=True)
    curves = {}
    seeds = range(5)

    ar_improvement = {}
    for alpha in (0.1, 0.5, 0.9):
        vals = [_gating_improvement("Ar1TimeGating", alpha, 900 + s, str(tmp_path))
                for s in seeds]
        ar_improvement[alpha] = median(vals)
    curves["ar1_time_gating"] = ar_improvement

    frac_improvement = {}
    for alpha in (0.01, 0.2, 1.0):
        vals = [_gating_improvement("FractionalNodeGating", alpha, 950 + s, str(tmp_path))
                for s in seeds]
        frac_improvement[alpha] = median(vals)
    curves["fractional_node_gating"] = frac_improvement

    with open(os.path.join(ARTIFACTS, "acceptance9_curves.json"), "w") as fh:
        json.dump(curves, fh, indent=1, sort_keys=True)

    ar_ok = ar_improvement[0.9] > ar_improvement[0.1]
    frac_ok = (frac_improvement[0.2] >= frac_improvement[0.01]
               and frac_improvement[0.2] >= frac_improvement[1.0])
    elapsed = time.time() - t0
    detail = (f"time-gating improvement at alpha 0.1/0.5/0.9 = "
              f"{ar_improvement[0.1]:.4f}/{ar_improvement[0.5]:.4f}/{ar_improvement[0.9]:.4f}; "
              f"node-gating at 0.01/0.2/1.0 = "
              f"{frac_improvement[0.01]:.4f}/{frac_improvement[0.2]:.4f}/{frac_improvement[1.0]:.4f}")
    status = "PASS" if (ar_ok and frac_ok) else "SOFT-FAIL (warning)"
    print(f"[criterion  9] {status}  {detail}  ({elapsed:.1f}s / limit 1800s)")
    if not (ar_ok and frac_ok):
        warnings.warn(f"criterion 9 directional check missed: {detail}; "
                      f"curves archived at {ARTIFACTS}/acceptance9_curves.json")
    assert elapsed < 1800


def test_criterion_10_sir_machinery():
    t0 = time.time()
    # deterministic wave on a path: labels at t+8 match the BFS-distance oracle
    n = 30
    g = Graph.from_edges(n, [(i, i + 1, 1.0) for i in range(n - 1)])
    run = sir_simulate(g, 0.0, 1.0, 4, 11, np.random.default_rng(0), initial_infected=[0])
    dist = {0: 0}
    frontier = [0]
    while frontier:
        nxt = []
        for u in frontier:
            for v in g.neighbors(u):
                if v not in dist:
                    dist[v] = dist[u] + 1
                    nxt.append(v)
        frontier = nxt
    bfs_ok = all((run.states[11, node] == INFECTED) == (dist[node] <= 11 <= dist[node] + 3)
                 for node in range(n))

    # stochastic stand-in: conservation and exact recovery age over 100 runs
    g2 = sbm(134, 5, 0.10, 0.01, np.random.default_rng(1000))
    conservation_ok, recovery_ok = True, True
    for seed in range(100):
        r = sir_simulate(g2, 0.05, 0.3, 4, 15, np.random.default_rng(seed))
        counts = np.stack([(r.states == c).sum(axis=1) for c in (0, 1, 2)])
        conservation_ok &= bool(np.all(counts.sum(axis=0) == g2.n))
        for node in np.flatnonzero(r.infected_day >= 0):
            d0 = r.infected_day[node]
            infected_days = np.flatnonzero(r.states[:, node] == INFECTED)
            if infected_days[-1] != min(d0 + 3, 15):
                recovery_ok = False
    ok = bfs_ok and conservation_ok and recovery_ok
    _report(10, ok, f"BFS oracle={bfs_ok}, S+I+R=n={conservation_ok}, "
                    f"recovery at age 4={recovery_ok}", time.time() - t0, 60)


def test_criterion_11_replay_determinism(tmp_path):
    t0 = time.time()
    config = {
        "experiment": "KStepDiffusion", "seed": 1111,
        "process": {"k": 3, "t_total": 12},
        "model": {"f_state": 3, "k_in": 3, "k_state": 3},
        "gnn": {"features": [3, 1], "taps": [3, 3]},
        "train": {"epochs": 2, "batch_size": 20,
                  "sizes": {"train": 60, "val": 10, "test": 20}},
        "graph": {"n": 12, "communities": 2},
    }
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    cli.run(config, out_a)
    with open(out_a / "config.json") as fh:
        resolved = json.load(fh)
    cli.run(resolved, out_b)
    names = ["metrics.csv", "trace_grnn.csv", "trace_gnn.csv", "trace_rnn.csv"]
    same = all((out_a / nm).read_bytes() == (out_b / nm).read_bytes() for nm in names)

    lemma_cfg = {"experiment": "StabilityLemma", "seed": 1112}
    cli.run(lemma_cfg, tmp_path / "la")
    cli.run(lemma_cfg, tmp_path / "lb")
    same &= (tmp_path / "la" / "stability.csv").read_bytes() == \
        (tmp_path / "lb" / "stability.csv").read_bytes()
    _report(11, same, "replayed metrics/trace/stability CSVs byte-identical",
            time.time() - t0, 300)
