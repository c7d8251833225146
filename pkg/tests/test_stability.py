import numpy as np
import pytest

from grnnkit.errors import AssumptionViolated, DegenerateProbes
from grnnkit.graphs import GsoKind, Permutation, build_gso, sbm
from grnnkit.models import ArchSpec, init_model
from grnnkit.spectral import FrequencyResponse, eigendecompose, filter_norm
from grnnkit.stability import (
    check_equivariance,
    estimate_gate_constants,
    lemma_bound,
    lemma_filter_sweep,
    loglog_slope,
    normalize_for_stability,
    normalize_response,
    quadratic_residual_fit,
    state_norm_bound_check,
    theorem1_bound,
    theorem1_sweep,
    theorem2_bound,
    theorem2_sweep,
    unit_norm_input,
)


@pytest.fixture
def gso():
    g = sbm(12, 2, 0.8, 0.2, np.random.default_rng(0))
    return build_gso(g, GsoKind.NORMALIZED_ADJACENCY)


def test_equivariance_identity_permutation_is_exact(gso):
    rng = np.random.default_rng(1)
    model = init_model(ArchSpec(f_in=1, f_state=3, k_in=2, k_state=2), rng)
    x_seq = rng.standard_normal((5, 12, 1))
    assert check_equivariance(model, gso, x_seq, Permutation.identity(12)) == 0.0


def test_equivariance_all_gating_modes(gso):
    rng = np.random.default_rng(2)
    for gating in ("none", "node", "edge", "time"):
        model = init_model(ArchSpec(f_in=1, f_state=3, k_in=2, k_state=2,
                                    gating=gating, gate_state=2, n=12), rng)
        x_seq = rng.standard_normal((6, 12, 1))
        p = Permutation.random(12, rng)
        dev = check_equivariance(model, gso, x_seq, p)
        assert dev <= 1e-9, gating


def test_normalize_response_and_assumption_check(gso):
    fr = FrequencyResponse([2.0, 1.0, -0.5])
    normed = normalize_response(fr, gso)
    assert abs(filter_norm(normed, eigendecompose(gso)) - 1.0) < 1e-12
    with pytest.raises(AssumptionViolated):
        lemma_filter_sweep(fr, gso, [1e-3], 1, seed=0)  # not normalized


def test_lemma_bound_formula():
    assert lemma_bound(0.5, 2.0, 16, 1e-3) == 2 * 0.5 * (1 + 2.0 * 4.0) * 1e-3


def test_theorem_bounds_formulas():
    c, delta, n, t, eps = 0.7, 1.5, 25, 4, 1e-3
    assert theorem1_bound(c, delta, n, t, eps) == c * (1 + 5 * delta) * (16 + 12) * eps
    # t = 1 reduces to 4 C (1 + sqrt(N) delta) eps
    assert theorem1_bound(c, delta, n, 1, eps) == 4 * c * (1 + 5 * delta) * eps
    # q = 0 recovers the ungated (3t + t^2) expression
    assert theorem2_bound(c, delta, n, t, eps, 0.0, 1.0, 1.0) == \
        theorem1_bound(c, delta, n, t, eps)
    full = theorem2_bound(c, delta, n, t, eps, 0.5, 0.3, 0.2)
    mis = 1 + delta * 5
    expected = (c * mis * (3 * t + t**2)
                + 0.5 * (0.2 + 0.3 * c * mis) * t**3
                + 0.5 * 0.3 * c * mis * t**4) * eps
    assert full == expected


def test_lemma_sweep_zero_eps_and_constant_filter(gso):
    fr = normalize_response(FrequencyResponse([0.5, 0.3, 0.1]), gso)
    report = lemma_filter_sweep(fr, gso, [0.0, 1e-3], 2, seed=3)
    zero_rows = [r for r in report.rows if r["eps"] == 0.0]
    assert all(r["measured"] == 0.0 and r["bound"] == 0.0 for r in zero_rows)
    const = FrequencyResponse([1.0])  # already unit height, C = 0
    report2 = lemma_filter_sweep(const, gso, [1e-3, 1e-2], 2, seed=4)
    assert all(r["measured"] <= 1e-15 for r in report2.rows)


def test_lemma_sweep_bound_and_slope(gso):
    fr = normalize_response(FrequencyResponse([1.0, 0.5, 0.25, 0.125, 0.0625]), gso)
    report = lemma_filter_sweep(fr, gso, [1e-4, 3e-4, 1e-3, 3e-3, 1e-2], 10, seed=5)
    assert report.extras["bound_ok"]
    assert 0.9 <= report.extras["loglog_slope"] <= 1.1


def test_theorem1_sweep_structure(gso):
    rng = np.random.default_rng(6)
    model = normalize_for_stability(
        init_model(ArchSpec(f_in=1, f_state=1, k_in=3, k_state=3), rng), gso)
    report = theorem1_sweep(model, gso, [0.0, 1e-3, 5e-4], T=6, trials=3, seed=7)
    zero_rows = [r for r in report.rows if r["eps"] == 0.0]
    assert all(r["measured"] == 0.0 for r in zero_rows)
    assert report.extras["bound_ok"]
    assert report.extras["state_bound_ok"]
    # t = 1 rows carry the 4 C (1 + sqrt(N) delta) eps bound exactly
    for r in report.rows:
        if r["t"] == 1 and r["eps"] > 0:
            assert r["bound"] == theorem1_bound(r["C"], r["delta"], 12, 1, r["eps"])
    # halving eps halves the measured discrepancy (first-order dominance)
    mean_at = {}
    for eps in (1e-3, 5e-4):
        vals = [r["measured"] for r in report.rows if r["eps"] == eps and r["t"] == 6]
        mean_at[eps] = np.mean(vals)
    ratio = mean_at[1e-3] / mean_at[5e-4]
    assert 1.5 <= ratio <= 2.5


def test_theorem1_sweep_rejects_unnormalized(gso):
    rng = np.random.default_rng(8)
    raw = init_model(ArchSpec(f_in=1, f_state=1, k_in=3, k_state=3), rng)
    with pytest.raises(AssumptionViolated):
        theorem1_sweep(raw, gso, [1e-3], T=3, trials=1, seed=9)


def test_theorem1_sweep_rejects_gated(gso):
    rng = np.random.default_rng(10)
    gated = init_model(ArchSpec(f_in=1, f_state=1, k_in=2, k_state=2,
                                gating="node", gate_state=1), rng)
    with pytest.raises(AssumptionViolated):
        theorem1_sweep(gated, gso, [1e-3], T=3, trials=1, seed=11)


def test_state_norm_bound(gso):
    rng = np.random.default_rng(12)
    model = normalize_for_stability(
        init_model(ArchSpec(f_in=1, f_state=1, k_in=3, k_state=3), rng), gso)
    x_seq = unit_norm_input(12, 8, rng)
    ok, worst = state_norm_bound_check(model, gso, x_seq)
    assert ok and worst <= 0.0


def test_theorem2_sweep_node_gated(gso):
    rng = np.random.default_rng(13)
    model = normalize_for_stability(
        init_model(ArchSpec(f_in=1, f_state=1, k_in=2, k_state=2, gating="node",
                            gate_state=1, gate_readout_taps=2, n=12), rng), gso)
    consts = estimate_gate_constants(model, gso, probes=6, seed=14)
    assert consts["Q"] > 0 and consts["phi1"] > 0
    report = theorem2_sweep(model, gso, [1e-4, 1e-3], T=4, trials=3, seed=15,
                            q=consts["Q"], phi1=consts["phi1"], phi2=consts["phi2"])
    assert report.extras["bound_ok"]
    zero = theorem2_sweep(model, gso, [0.0], T=2, trials=1, seed=16,
                          q=consts["Q"], phi1=consts["phi1"], phi2=consts["phi2"])
    assert all(r["measured"] == 0.0 for r in zero.rows)


def test_estimate_gate_constants_time_mode(gso):
    rng = np.random.default_rng(17)
    model = init_model(ArchSpec(f_in=1, f_state=1, k_in=2, k_state=2, gating="time",
                                gate_state=1, n=12), rng)
    consts = estimate_gate_constants(model, gso, probes=6, seed=18)
    # scalar gate: operator difference equals |q1 - q2|, so Q <= 1
    assert consts["Q"] <= 1.0 + 1e-12
    assert consts["phi2"] == 0.0  # readout never touches the graph


def test_estimate_gate_constants_zero_taps_give_zero_phi1(gso):
    rng = np.random.default_rng(19)
    model = init_model(ArchSpec(f_in=1, f_state=1, k_in=2, k_state=2, gating="node",
                                gate_state=1, n=12), rng)
    model.input_gate.readout.bank.taps[...] = 0.0
    consts = estimate_gate_constants(model, gso, probes=4, seed=20)
    assert consts["phi1"] == 0.0  # constant gates
    assert consts["Q"] == 0.0


def test_estimate_gate_constants_needs_probes(gso):
    rng = np.random.default_rng(21)
    model = init_model(ArchSpec(f_in=1, f_state=1, k_in=2, k_state=2, gating="node",
                                gate_state=1, n=12), rng)
    with pytest.raises(DegenerateProbes):
        estimate_gate_constants(model, gso, probes=1, seed=22)


def test_quadratic_residual_fit_detects_linear_violation():
    ok_rows = [{"eps": e, "t": 1, "measured": 0.5 * e + 2.0 * e**2, "bound": 0.6 * e}
               for e in (1e-4, 1e-3, 1e-2)]
    ok, _, _ = quadratic_residual_fit(ok_rows)
    assert ok
    bad_rows = [{"eps": e, "t": 1, "measured": 2.0 * e, "bound": 0.5 * e}
                for e in (1e-4, 1e-3, 1e-2)]
    ok2, _, worst = quadratic_residual_fit(bad_rows)
    assert not ok2 and worst > 0


def test_loglog_slope_on_synthetic_rows():
    rows = [{"eps": e, "measured": 3.0 * e} for e in (1e-4, 3e-4, 1e-3)]
    assert abs(loglog_slope(rows) - 1.0) < 1e-12
    rows2 = [{"eps": e, "measured": 3.0 * e**2} for e in (1e-4, 3e-4, 1e-3)]
    assert abs(loglog_slope(rows2) - 2.0) < 1e-12


def test_report_round_trip(tmp_path, gso):
    fr = normalize_response(FrequencyResponse([0.5, 0.25]), gso)
    report = lemma_filter_sweep(fr, gso, [1e-3], 2, seed=23)
    report.to_csv(tmp_path / "rows.csv")
    report.to_json(tmp_path / "summary.json")
    import csv as csv_mod
    import json

    with open(tmp_path / "rows.csv") as fh:
        rows = list(csv_mod.reader(fh))
    assert rows[0][:5] == ["eps", "t", "trial", "measured", "bound"]
    assert len(rows) == 1 + len(report.rows)
    with open(tmp_path / "summary.json") as fh:
        summary = json.load(fh)
    assert summary["kind"] == "lemma" and "bound_ok" in summary
