"""Empirical checks of equivariance and the three perturbation-stability bounds.

Perturbed graphs are constructed from an explicit error matrix, so the
permutation minimization in the graph distance is avoided (P = I throughout)
and the harness compares outputs directly.  Gate Lipschitz constants are
sampled lower bounds, so bound satisfaction is reported as evidence (a
necessary condition), not proof.
"""

import csv
import json
from dataclasses import dataclass, replace

import numpy as np

from .errors import AssumptionViolated, DegenerateProbes
from .filters import FilterBank
from .graphs import (
    Permutation,
    apply_relative_perturbation,
    as_matrix,
    permute_gso,
    permute_signal,
    sample_perturbation,
)
from .linalg import operator_norm
from .models import (
    GatedGrnnModel,
    GateSubGrnn,
    GrnnCore,
    OutputMap,
    TimeGateReadout,
    edge_gates,
    grnn_forward,
    node_gates,
    time_gates,
)
from .rng import child_rng
from .spectral import (
    FrequencyResponse,
    eigendecompose,
    filter_distance,
    filter_norm,
    integral_lipschitz_constant,
    misalignment_delta,
    occupied_interval,
)


# ---------------------------------------------------------------------------
# equivariance


def _permute_time_readout(c, n, p: Permutation):
    """Re-index a time-gate readout so it scores the relabeled nodes identically."""
    c = np.asarray(c)
    h = c.size // n
    c_mat = c.reshape(h, n)
    inv = p.inverse().perm
    return c_mat[:, inv].reshape(-1)


def permute_model(model: GatedGrnnModel, p: Permutation):
    """Models are label-free except the time-gate readout, which indexes nodes."""
    if model.gating != "time":
        return model
    n = p.n
    gates = []
    for gate in (model.input_gate, model.forget_gate):
        new_c = _permute_time_readout(gate.readout.c, n, p)
        gates.append(replace(gate, readout=TimeGateReadout(c=new_c)))
    return replace(model, input_gate=gates[0], forget_gate=gates[1])


def check_equivariance(model, s, x_seq, p: Permutation, tol=1e-9):
    """Max over t of ||y_t(P^T S P, P^T x) - P^T y_t(S, x)||."""
    y_ref, _, _ = grnn_forward(model, s, x_seq)
    s_perm = permute_gso(s, p)
    x_perm = np.stack([permute_signal(x_seq[t], p) for t in range(len(x_seq))])
    y_perm, _, _ = grnn_forward(permute_model(model, p), s_perm, x_perm)
    dev = 0.0
    for t in range(len(x_seq)):
        dev = max(dev, float(np.max(np.abs(y_perm[t] - permute_signal(y_ref[t], p)))))
    return dev


# ---------------------------------------------------------------------------
# reports


@dataclass
class StabilityReport:
    kind: str
    rows: list  # dicts with eps, t, trial, measured, bound, C, delta, Q, phi1, phi2
    constants: dict
    extras: dict

    def to_csv(self, path):
        cols = ["eps", "t", "trial", "measured", "bound", "C", "delta", "Q", "phi1", "phi2"]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(cols)
            for row in self.rows:
                writer.writerow([repr(row.get(c, "")) if isinstance(row.get(c), float)
                                 else row.get(c, "") for c in cols])

    def summary(self):
        out = {"kind": self.kind, "constants": self.constants}
        out.update(self.extras)
        return out

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=1, sort_keys=True, default=float)


def quadratic_residual_fit(rows, group_by_t=False):
    """Smallest-curvature explanation of bound overshoot.

    Fits c >= 0 in measured <= bound + c * eps^2 by least squares of the
    residuals on eps^2 (pooled, or per t when group_by_t).  Returns
    (ok, c_by_group, worst_violation): ok means every cell satisfies the
    inequality with the fitted c.
    """
    groups = {}
    for row in rows:
        key = row["t"] if group_by_t else None
        groups.setdefault(key, []).append(row)
    c_by_group, ok, worst = {}, True, 0.0
    for key, cells in groups.items():
        eps2 = np.array([r["eps"] ** 2 for r in cells])
        resid = np.array([r["measured"] - r["bound"] for r in cells])
        denom = float(np.sum(eps2 * eps2))
        c = max(0.0, float(np.sum(resid * eps2) / denom)) if denom > 0 else 0.0
        c_by_group[key] = c
        for r, e2 in zip(cells, eps2):
            slack = r["measured"] - (r["bound"] + c * e2)
            tol = 1e-12 * max(1.0, abs(r["bound"]))
            if slack > tol:
                ok = False
                worst = max(worst, float(slack))
    return ok, c_by_group, worst


def loglog_slope(rows, decades=2):
    """LS slope of log mean-measured vs log eps over the smallest `decades` decades."""
    by_eps = {}
    for row in rows:
        if row["eps"] > 0.0:
            by_eps.setdefault(row["eps"], []).append(row["measured"])
    if not by_eps:
        return float("nan")
    eps = np.array(sorted(by_eps))
    lo = eps[0]
    sel = eps[eps <= lo * 10.0 ** decades + 1e-300]
    means = np.array([np.mean(by_eps[e]) for e in sel])
    if np.any(means <= 0) or sel.size < 2:
        return float("nan")
    x, y = np.log(sel), np.log(means)
    x = x - x.mean()
    return float(np.sum(x * (y - y.mean())) / np.sum(x * x))


def lemma_bound(c, delta, n, eps):
    """First-order filter-distance bound 2 C (1 + delta sqrt(N)) eps."""
    return 2.0 * c * (1.0 + delta * np.sqrt(n)) * eps


def theorem1_bound(c, delta, n, t, eps):
    """Ungated output bound C (1 + sqrt(N) delta) (t^2 + 3t) eps."""
    return c * (1.0 + np.sqrt(n) * delta) * (t**2 + 3 * t) * eps


def theorem2_bound(c, delta, n, t, eps, q, phi1, phi2):
    """Gated output bound: the ungated t^2 term plus gate-driven t^3/t^4 terms.

    With q = 0 the gate terms vanish and the expression reduces to the
    ungated bound's (3t + t^2) scaling.
    """
    mis = 1.0 + delta * np.sqrt(n)
    return (c * mis * (3 * t + t**2)
            + q * (phi2 + phi1 * c * mis) * t**3
            + q * phi1 * c * mis * t**4) * eps


# ---------------------------------------------------------------------------
# filter normalization (AS1)


def normalize_response(fr: FrequencyResponse, s) -> FrequencyResponse:
    """Divide taps by the filter's operator norm on S so ||A|| = 1."""
    es = eigendecompose(s)
    nrm = filter_norm(fr, es)
    if nrm == 0.0:
        raise AssumptionViolated("cannot normalize an identically-zero filter")
    return FrequencyResponse(fr.taps / nrm)


def _normalized_bank(bank: FilterBank, es) -> FilterBank:
    fr = FrequencyResponse(bank.response_taps())
    nrm = filter_norm(fr, es)
    if nrm == 0.0:
        raise AssumptionViolated("cannot normalize an identically-zero filter bank")
    return FilterBank(bank.taps / nrm)


def normalize_for_stability(model: GatedGrnnModel, s) -> GatedGrnnModel:
    """Rescale every single-feature filter bank to unit operator norm on S.

    Covers the core A/B, the output bank(s) and, for gated models, both gate
    sub-GRNN cores.  Gate readout blocks are left alone (they belong to the
    gate parameter maps, whose Lipschitz constants are estimated instead).
    """
    es = eigendecompose(s)
    core = GrnnCore(
        a_bank=_normalized_bank(model.core.a_bank, es),
        b_bank=_normalized_bank(model.core.b_bank, es),
        sigma=model.core.sigma,
    )
    layers = tuple((_normalized_bank(bank, es), tag) for bank, tag in model.output.layers)
    output = OutputMap(layers=layers, rho=model.output.rho, pool=model.output.pool)
    gates = {}
    for name, gate in (("input_gate", model.input_gate), ("forget_gate", model.forget_gate)):
        if gate is None:
            gates[name] = None
            continue
        gcore = GrnnCore(
            a_bank=_normalized_bank(gate.core.a_bank, es),
            b_bank=_normalized_bank(gate.core.b_bank, es),
            sigma=gate.core.sigma,
        )
        gates[name] = GateSubGrnn(core=gcore, readout=gate.readout)
    return replace(model, core=core, output=output, **gates)


def _single_feature_banks(model: GatedGrnnModel):
    banks = [("A", model.core.a_bank), ("B", model.core.b_bank)]
    for i, (bank, _) in enumerate(model.output.layers):
        banks.append((f"C{i}", bank))
    for tag, gate in (("in", model.input_gate), ("fg", model.forget_gate)):
        if gate is not None:
            banks.append((f"A_{tag}", gate.core.a_bank))
            banks.append((f"B_{tag}", gate.core.b_bank))
    return banks


def _check_assumptions(model, s, x_seq, norm_tol=1e-9):
    """AS1 (unit filter height), AS2 (sigma), AS4 (input scale); z0 = 0 is built in."""
    failures = []
    es = eigendecompose(s)
    for name, bank in _single_feature_banks(model):
        if bank.f_in != 1 or bank.f_out != 1:
            failures.append(f"AS1: bank {name} is not single-feature")
            continue
        nrm = filter_norm(FrequencyResponse(bank.response_taps()), es)
        if abs(nrm - 1.0) > norm_tol:
            failures.append(f"AS1: ||{name}|| = {nrm:.12f} != 1")
    if model.core.sigma != "tanh":
        failures.append(f"AS2: state nonlinearity {model.core.sigma!r} (need tanh)")
    if model.output.rho not in ("identity", "tanh"):
        failures.append(f"AS2: rho {model.output.rho!r} does not fix 0")
    max_norm = max(float(np.linalg.norm(x_seq[t].reshape(-1))) for t in range(len(x_seq)))
    if max_norm > 1.0 + 1e-12:
        failures.append(f"AS4: max ||x_t|| = {max_norm} > 1")
    if failures:
        raise AssumptionViolated("; ".join(failures))


def unit_norm_input(n, T, rng, f=1):
    """Random input sequence rescaled so max_t ||x_t|| = 1 (AS4)."""
    x = rng.standard_normal((T, n, f))
    norms = np.linalg.norm(x.reshape(T, -1), axis=1)
    return x / np.max(norms)


def _max_il_constant(banks, interval):
    lo, hi = interval
    return max(
        integral_lipschitz_constant(FrequencyResponse(b.response_taps()), lo, hi)
        for b in banks
    )


def state_norm_bound_check(model, s, x_seq):
    """Hidden-state norms never exceed sum_{j<i} ||B||^j ||A|| ||x|| at any step."""
    es = eigendecompose(s)
    norm_a = filter_norm(FrequencyResponse(model.core.a_bank.response_taps()), es)
    norm_b = filter_norm(FrequencyResponse(model.core.b_bank.response_taps()), es)
    x_norm = max(float(np.linalg.norm(x_seq[t].reshape(-1))) for t in range(len(x_seq)))
    _, z_seq, _ = grnn_forward(model, s, x_seq)
    ok, worst = True, 0.0
    bound, geom = 0.0, 1.0  # bound at i: sum_{j<i} ||B||^j ||A|| ||x||
    for i in range(len(x_seq)):
        bound = bound + geom * norm_a * x_norm
        geom = geom * norm_b
        z_norm = float(np.linalg.norm(z_seq[i].reshape(-1)))
        slack = z_norm - bound
        worst = max(worst, slack)
        if slack > 1e-9:
            ok = False
    return ok, worst


# ---------------------------------------------------------------------------
# sweeps


def lemma_filter_sweep(fr: FrequencyResponse, s, eps_grid, trials, seed) -> StabilityReport:
    """Filter distance vs the 2C(1 + delta sqrt(N)) eps bound, per (eps, trial)."""
    m = as_matrix(s)
    n = m.shape[0]
    s_eig = eigendecompose(m)
    if abs(filter_norm(fr, s_eig) - 1.0) > 1e-9:
        raise AssumptionViolated("AS1: filter must be normalized to unit height on S")
    rows = []
    for eps in eps_grid:
        for trial in range(trials):
            rng = child_rng(seed, trial)  # same direction across the eps grid
            pert = sample_perturbation(n, eps, rng)
            s_tilde = apply_relative_perturbation(m, pert)
            measured = filter_distance(fr, m, s_tilde)
            if eps == 0.0:
                delta, c_il, bound = 0.0, 0.0, 0.0
            else:
                delta = misalignment_delta(s_eig, eigendecompose(pert.error)).delta
                c_il = integral_lipschitz_constant(fr, *occupied_interval(m, s_tilde))
                bound = lemma_bound(c_il, delta, n, eps)
            rows.append({"eps": float(eps), "t": 0, "trial": trial,
                         "measured": float(measured), "bound": float(bound),
                         "C": float(c_il), "delta": float(delta)})
    ok, c_fit, worst = quadratic_residual_fit(rows)
    slope = loglog_slope(rows)
    return StabilityReport(
        kind="lemma",
        rows=rows,
        constants={"N": n},
        extras={"bound_ok": ok, "quad_coeff": c_fit[None], "worst_violation": worst,
                "loglog_slope": slope},
    )


def theorem1_sweep(model: GatedGrnnModel, s, eps_grid, T, trials, seed,
                   x_seq=None) -> StabilityReport:
    """Output discrepancy of an ungated GRNN vs C(1 + sqrt(N) delta)(t^2 + 3t) eps."""
    if model.gating != "none":
        raise AssumptionViolated("theorem1_sweep expects an ungated GRNN")
    m = as_matrix(s)
    n = m.shape[0]
    if x_seq is None:
        x_seq = unit_norm_input(n, T, child_rng(seed, 987))
    _check_assumptions(model, m, x_seq)
    s_eig = eigendecompose(m)
    y_ref, _, _ = grnn_forward(model, m, x_seq)
    state_ok, state_worst = state_norm_bound_check(model, m, x_seq)
    banks = [b for _, b in _single_feature_banks(model)]
    rows = []
    for eps in eps_grid:
        for trial in range(trials):
            rng = child_rng(seed, trial)  # same direction across the eps grid
            pert = sample_perturbation(n, eps, rng)
            s_tilde = apply_relative_perturbation(m, pert)
            y_tilde, _, _ = grnn_forward(model, s_tilde, x_seq)
            if eps == 0.0:
                delta, c_il = 0.0, 0.0
            else:
                delta = misalignment_delta(s_eig, eigendecompose(pert.error)).delta
                c_il = _max_il_constant(banks, occupied_interval(m, s_tilde))
            for t in range(1, T + 1):
                measured = float(np.linalg.norm((y_ref[t - 1] - y_tilde[t - 1]).reshape(-1)))
                bound = theorem1_bound(c_il, delta, n, t, eps)
                rows.append({"eps": float(eps), "t": t, "trial": trial,
                             "measured": measured, "bound": float(bound),
                             "C": float(c_il), "delta": float(delta)})
    ok, c_fit, worst = quadratic_residual_fit(rows, group_by_t=True)
    slope = loglog_slope(rows)
    return StabilityReport(
        kind="theorem1",
        rows=rows,
        constants={"N": n, "T": T},
        extras={"bound_ok": ok, "quad_coeff": {str(k): v for k, v in c_fit.items()},
                "worst_violation": worst, "loglog_slope": slope,
                "state_bound_ok": state_ok, "state_bound_worst_slack": state_worst},
    )


def theorem2_sweep(model: GatedGrnnModel, s, eps_grid, T, trials, seed,
                   q, phi1, phi2, x_seq=None) -> StabilityReport:
    """Gated-GRNN discrepancy vs the three-term t^2/t^3/t^4 bound (estimated constants)."""
    if model.gating == "none":
        raise AssumptionViolated("theorem2_sweep expects a gated GRNN")
    m = as_matrix(s)
    n = m.shape[0]
    if x_seq is None:
        x_seq = unit_norm_input(n, T, child_rng(seed, 987))
    _check_assumptions(model, m, x_seq)
    s_eig = eigendecompose(m)
    y_ref, _, _ = grnn_forward(model, m, x_seq)
    banks = [b for _, b in _single_feature_banks(model)]
    rows = []
    for eps in eps_grid:
        for trial in range(trials):
            rng = child_rng(seed, trial)  # same direction across the eps grid
            pert = sample_perturbation(n, eps, rng)
            s_tilde = apply_relative_perturbation(m, pert)
            y_tilde, _, _ = grnn_forward(model, s_tilde, x_seq)
            if eps == 0.0:
                delta, c_il = 0.0, 0.0
            else:
                delta = misalignment_delta(s_eig, eigendecompose(pert.error)).delta
                c_il = _max_il_constant(banks, occupied_interval(m, s_tilde))
            for t in range(1, T + 1):
                measured = float(np.linalg.norm((y_ref[t - 1] - y_tilde[t - 1]).reshape(-1)))
                bound = theorem2_bound(c_il, delta, n, t, eps, q, phi1, phi2)
                rows.append({"eps": float(eps), "t": t, "trial": trial,
                             "measured": measured, "bound": float(bound),
                             "C": float(c_il), "delta": float(delta),
                             "Q": float(q), "phi1": float(phi1), "phi2": float(phi2)})
    ok, c_fit, worst = quadratic_residual_fit(rows, group_by_t=True)
    return StabilityReport(
        kind="theorem2",
        rows=rows,
        constants={"N": n, "T": T, "Q": float(q), "phi1": float(phi1), "phi2": float(phi2),
                   "gating": model.gating},
        extras={"bound_ok": ok, "quad_coeff": {str(k): v for k, v in c_fit.items()},
                "worst_violation": worst,
                "note": "estimated gate constants: satisfaction is evidence, not proof"},
    )


# ---------------------------------------------------------------------------
# gate constant estimation (AS5-AS7)


def _gate_param_fn(model: GatedGrnnModel):
    """The input-gate parameter map theta = Phi_S(z) for the model's gating mode."""
    gate = model.input_gate
    if model.gating == "time":
        return lambda sm, z: np.atleast_1d(time_gates(gate.readout.c, z))
    if model.gating == "node":
        return lambda sm, z: node_gates(gate.readout.bank, sm, z)
    if model.gating == "edge":
        return lambda sm, z: edge_gates(gate.readout.proj, gate.readout.vec, z)
    raise AssumptionViolated("ungated models have no gate constants")


def _gate_operator_norm_diff(model, sm, theta_a, theta_b):
    """||Q_theta_a - Q_theta_b|| in the induced norm, exact per gating mode."""
    if model.gating == "time":
        return float(np.abs(theta_a - theta_b).max())  # q * identity
    if model.gating == "node":
        return float(np.abs(theta_a - theta_b).max())  # diag(q)
    # edge gating scales S entrywise inside the shift; use the first-shift
    # operator difference as a sampled surrogate
    return operator_norm(sm * theta_a - sm * theta_b)


def estimate_gate_constants(model: GatedGrnnModel, s, probes, seed):
    """Sampled lower bounds for Q (AS5), phi1 (AS6) and phi2 (AS7).

    Probes are random gate states (and perturbed graphs for phi2); ratios are
    maximized over all probe pairs.  True Lipschitz constants of learned maps
    are not computable in general, so these are necessary-condition inputs.
    """
    if probes < 2:
        raise DegenerateProbes("need at least two probes")
    m = as_matrix(s)
    n = m.shape[0]
    h = model.input_gate.core.f_state
    rng = child_rng(seed, 0)
    phi = _gate_param_fn(model)
    states = [rng.standard_normal((n, h)) for _ in range(probes)]
    thetas = [phi(m, z) for z in states]

    big_q, phi1 = 0.0, 0.0
    distinct_states = 0
    for i in range(probes):
        for j in range(i + 1, probes):
            d_theta = float(np.linalg.norm((thetas[i] - thetas[j]).reshape(-1)))
            d_state = float(np.linalg.norm((states[i] - states[j]).reshape(-1)))
            if d_state < 1e-14:
                continue
            distinct_states += 1
            phi1 = max(phi1, d_theta / d_state)  # 0 stays 0 for constant gate maps
            if d_theta >= 1e-14:
                big_q = max(big_q, _gate_operator_norm_diff(model, m, thetas[i], thetas[j]) / d_theta)
    if distinct_states == 0:
        raise DegenerateProbes("all probe pairs were identical")

    phi2 = 0.0
    for k in range(probes):
        pert = sample_perturbation(n, 1e-3, child_rng(seed, 100 + k))
        m_tilde = apply_relative_perturbation(m, pert)
        ds = operator_norm(m - m_tilde)
        if ds < 1e-14:
            continue
        for z in states:
            dz = float(np.linalg.norm(z.reshape(-1)))
            d_out = float(np.linalg.norm((phi(m, z) - phi(m_tilde, z)).reshape(-1)))
            phi2 = max(phi2, d_out / (ds * dz))
    return {"Q": float(big_q), "phi1": float(phi1), "phi2": float(phi2)}
