"""Config-driven experiment runner.

Subcommands: generate, train, eval, stability, equivariance, compare.
Every run writes the fully-resolved config next to its artifacts, so running
again on that config replays the experiment bit for bit (same seed, same
PRNG streams, same float formatting in the CSVs).
"""

import argparse
import copy
import csv
import json
import os
import sys

import numpy as np

from .errors import ConfigError, IncompatibleRuns
from .graphs import (
    Gso,
    GsoKind,
    Permutation,
    build_gso,
    knn_covariance_graph,
    sbm,
    without_isolated_nodes,
)
from .models import (
    ArchSpec,
    count_parameters,
    init_gnn,
    init_model,
    init_rnn,
    rnn_hidden_size_for_budget,
    save_checkpoint,
)
from .processes import (
    ar1_process,
    fractional_diffusion,
    kstep_dataset,
    noisy_diffusion,
    sir_dataset,
)
from .rng import child_rng
from .spectral import FrequencyResponse
from .stability import (
    StabilityReport,
    check_equivariance,
    estimate_gate_constants,
    lemma_filter_sweep,
    normalize_for_stability,
    normalize_response,
    theorem1_sweep,
    theorem2_sweep,
)
from .training import (
    TrainConfig,
    binary_f1,
    class_weights_from_counts,
    predict,
    rrmse,
    train,
    write_trace_csv,
)

EXPERIMENTS = (
    "KStepDiffusion",
    "Ar1TimeGating",
    "FractionalNodeGating",
    "CovarianceEdgeGating",
    "SirEpidemic",
    "StabilityLemma",
    "StabilityThm1",
    "StabilityThm2",
    "Equivariance",
)

TRAINING_EXPERIMENTS = EXPERIMENTS[:5]

_EPS_GRID = [1e-4, 3e-4, 1e-3, 3e-3, 1e-2]

# Desk-scale defaults keep the full-scale ratios (k, taps, state widths,
# probabilities) but shrink node counts and dataset sizes; --paper-scale
# swaps in the full-size values (slow).
DEFAULTS = {
    "KStepDiffusion": {
        "graph": {"n": 20, "communities": 2, "p_intra": 0.8, "p_inter": 0.2,
                  "gso": "normalized_adjacency"},
        "process": {"k": 5, "t_total": 30, "xi2": 0.01, "eta2": 0.01},
        "model": {"f_state": 5, "k_in": 5, "k_state": 5},
        "gnn": {"features": [8, 1], "taps": [10, 10]},
        "rnn": {"hidden": "auto"},
        "train": {"lr": 1e-3, "epochs": 10, "batch_size": 50,
                  "sizes": {"train": 1000, "val": 120, "test": 200}},
        "paper_scale": {
            "graph": {"n": 80, "communities": 5},
            "train": {"batch_size": 100, "sizes": {"train": 10000, "val": 2400, "test": 200}},
        },
    },
    "Ar1TimeGating": {
        "graph": {"n": 20, "communities": 2, "p_intra": 0.8, "p_inter": 0.2,
                  "gso": "normalized_adjacency"},
        "process": {"k": 10, "t_total": 25, "xi2": 0.01, "eta2": 0.01, "alpha": 0.5},
        "model": {"f_state": 10, "k_in": 4, "k_state": 4, "gating": "time"},
        "train": {"lr": 1e-3, "epochs": 10, "batch_size": 50,
                  "sizes": {"train": 2500, "val": 600, "test": 200}},
        "paper_scale": {
            "train": {"batch_size": 100,
                      "sizes": {"train": 10000, "val": 2400, "test": 200}},
        },
    },
    "FractionalNodeGating": {
        "graph": {"n": 20, "communities": 2, "p_intra": 0.1, "p_inter": 0.8,
                  "gso": "normalized_adjacency"},
        "process": {"k": 10, "t_total": 25, "xi2": 0.01, "eta2": 0.01, "alpha": 0.2},
        "model": {"f_state": 10, "k_in": 4, "k_state": 4, "gating": "node"},
        "train": {"lr": 1e-3, "epochs": 10, "batch_size": 50,
                  "sizes": {"train": 2500, "val": 600, "test": 200}},
        "paper_scale": {
            "train": {"batch_size": 100,
                      "sizes": {"train": 10000, "val": 2400, "test": 200}},
        },
    },
    "CovarianceEdgeGating": {
        "graph": {"n": 20, "neighbors": 15, "cov_samples": 2500, "mean": 1.0,
                  "var_diag": 3.0, "var_off": 1.0, "gso": "normalized_adjacency"},
        "process": {"k": 5, "t_total": 25, "xi2": 0.01, "eta2": 0.01},
        "model": {"f_state": 10, "k_in": 4, "k_state": 4, "gating": "edge"},
        "train": {"lr": 1e-3, "epochs": 10, "batch_size": 50,
                  "sizes": {"train": 2500, "val": 600, "test": 200}},
        "paper_scale": {
            "graph": {"cov_samples": 10000},
            "train": {"batch_size": 100,
                      "sizes": {"train": 10000, "val": 2400, "test": 200}},
        },
    },
    "SirEpidemic": {
        # density tuned so the outbreak is still active at the label horizon;
        # staggered window starts expose rising/peak/fading phases
        "graph": {"n": 134, "communities": 5, "p_intra": 0.10, "p_inter": 0.01,
                  "gso": "normalized_adjacency"},
        "process": {"k_ahead": 8, "obs_window": 4, "p_seed": 0.05, "p_inf": 0.3,
                    "recovery_days": 4, "start_offsets": [0, 1, 2, 3]},
        "model": {"f_state": 12, "k_in": 5, "k_state": 5, "gating": "none"},
        "train": {"lr": 5e-4, "epochs": 10, "batch_size": 100,
                  "sizes": {"train": 1000, "val": 120, "test": 200}},
        "paper_scale": {},
    },
    "StabilityLemma": {
        "graph": {"n": 20, "communities": 2, "p_intra": 0.8, "p_inter": 0.2,
                  "gso": "normalized_adjacency"},
        "sweep": {"eps_grid": _EPS_GRID, "trials": 10,
                  "taps": [1.0, 0.5, 0.25, 0.125, 0.0625]},
        "paper_scale": {},
    },
    "StabilityThm1": {
        "graph": {"n": 20, "communities": 2, "p_intra": 0.8, "p_inter": 0.2,
                  "gso": "normalized_adjacency"},
        "model": {"k_in": 3, "k_state": 3},
        "sweep": {"eps_grid": _EPS_GRID, "trials": 10, "t_max": 10},
        "paper_scale": {},
    },
    "StabilityThm2": {
        "graph": {"n": 15, "communities": 3, "p_intra": 0.8, "p_inter": 0.2,
                  "gso": "normalized_adjacency"},
        # 2-tap gate readout so the gate parameter map actually depends on S
        "model": {"k_in": 3, "k_state": 3, "gating": "node", "gate_readout_taps": 2},
        "sweep": {"eps_grid": [1e-4, 3e-4, 1e-3], "trials": 10, "t_max": 8, "probes": 8},
        "paper_scale": {},
    },
    "Equivariance": {
        "graph": {"n": 20, "communities": 2, "p_intra": 0.8, "p_inter": 0.2,
                  "gso": "normalized_adjacency"},
        "model": {"f_state": 4, "k_in": 3, "k_state": 3},
        "sweep": {"trials": 20, "t_max": 10, "modes": ["none", "node", "edge"],
                  "tol": 1e-9},
        "paper_scale": {},
    },
}


# ---------------------------------------------------------------------------
# config plumbing


def _deep_merge(base, override):
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def resolve_config(user_config, paper_scale=False):
    """Fill defaults for the named experiment; raise ConfigError on bad fields."""
    if "experiment" not in user_config:
        raise ConfigError("missing field: experiment")
    name = user_config["experiment"]
    if name not in EXPERIMENTS:
        raise ConfigError(f"experiment: unknown value {name!r} (choose from {EXPERIMENTS})")
    base = copy.deepcopy(DEFAULTS[name])
    paper_over = base.pop("paper_scale")
    if paper_scale or user_config.get("paper_scale"):
        base = _deep_merge(base, paper_over)
    cfg = _deep_merge(base, {k: v for k, v in user_config.items() if k != "paper_scale"})
    cfg["experiment"] = name
    cfg["paper_scale"] = bool(paper_scale or user_config.get("paper_scale"))
    if "seed" not in cfg:
        raise ConfigError("missing field: seed (mandatory for reproducibility)")
    validate_config(cfg)
    return cfg


def validate_config(cfg):
    name = cfg["experiment"]
    if not isinstance(cfg["seed"], int):
        raise ConfigError("seed: must be an integer")
    graph = cfg.get("graph", {})
    for prob_key in ("p_intra", "p_inter"):
        if prob_key in graph and not (0.0 <= graph[prob_key] <= 1.0):
            raise ConfigError(f"graph.{prob_key}: {graph[prob_key]} outside [0,1]")
    if name in TRAINING_EXPERIMENTS:
        model = cfg["model"]
        for key in ("f_state", "k_in", "k_state"):
            if model.get(key, 1) < 1:
                raise ConfigError(f"model.{key}: must be >= 1")
        sizes = cfg["train"]["sizes"]
        for part in ("train", "val", "test"):
            if sizes.get(part, -1) < 0:
                raise ConfigError(f"train.sizes.{part}: must be >= 0")
        if name == "KStepDiffusion":
            feats = cfg["gnn"]["features"]
            taps = cfg["gnn"]["taps"]
            if len(feats) != len(taps):
                raise ConfigError("gnn.features: length must match gnn.taps")
    if "process" in cfg and "k" in cfg["process"]:
        if cfg["process"]["k"] >= cfg["process"].get("t_total", np.inf):
            raise ConfigError("process.k: must be smaller than process.t_total")


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True, default=float)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])


# ---------------------------------------------------------------------------
# shared pieces


def _build_graph_and_gso(cfg, rng):
    graph_cfg = cfg["graph"]
    name = cfg["experiment"]
    if name == "CovarianceEdgeGating":
        n = graph_cfg["n"]
        mean = graph_cfg["mean"] * np.ones(n)
        cov = np.full((n, n), graph_cfg["var_off"])
        np.fill_diagonal(cov, graph_cfg["var_diag"])
        samples = rng.multivariate_normal(mean, cov, size=graph_cfg["cov_samples"],
                                          method="cholesky")
        g = knn_covariance_graph(samples, graph_cfg["neighbors"])
    else:
        g = sbm(graph_cfg["n"], graph_cfg["communities"], graph_cfg["p_intra"],
                graph_cfg["p_inter"], rng)
    if name == "SirEpidemic":
        g = without_isolated_nodes(g)
    s = build_gso(g, GsoKind(graph_cfg["gso"]))
    return g, s


def _dataset_for(cfg, s, g):
    name = cfg["experiment"]
    seed = cfg["seed"]
    pr = cfg["process"]
    if name == "SirEpidemic":
        return sir_dataset(g, cfg["train"]["sizes"], seed, k_ahead=pr["k_ahead"],
                           obs_window=pr["obs_window"], p_seed=pr["p_seed"],
                           p_inf=pr["p_inf"], recovery_days=pr["recovery_days"],
                           start_offsets=tuple(pr.get("start_offsets", (0,))))
    t_total, xi2, eta2 = pr["t_total"], pr["xi2"], pr["eta2"]
    if name == "Ar1TimeGating":
        gen = lambda rng: ar1_process(s.n, pr["alpha"], t_total, xi2, eta2, rng)
    elif name == "FractionalNodeGating":
        gen = lambda rng: fractional_diffusion(s, pr["alpha"], t_total, xi2, eta2, rng)
    else:
        gen = lambda rng: noisy_diffusion(s, None, t_total, xi2, eta2, rng)
    return kstep_dataset(gen, pr["k"], cfg["train"]["sizes"], seed)


def _grnn_arch(cfg, n):
    model = cfg["model"]
    return ArchSpec(
        f_in=model.get("f_in", 1),
        f_state=model["f_state"],
        k_in=model["k_in"],
        k_state=model["k_state"],
        out_features=tuple(model.get("out_features", (1,))),
        out_taps=tuple(model.get("out_taps", (1,))),
        gating=model.get("gating", "none"),
        gate_state=model.get("gate_state"),
        gate_readout_taps=model.get("gate_readout_taps", 1),
        n=n,
    )


def _train_one(tag, model, ds, cfg, s, out_dir, loss="l1", class_weights=None):
    tc = TrainConfig(
        lr=cfg["train"]["lr"],
        epochs=cfg["train"]["epochs"],
        batch_size=cfg["train"]["batch_size"],
        loss=loss,
        seed=cfg["seed"],
        class_weights=class_weights,
    )
    x_train, y_train = ds.part("train")
    model, trace = train(model, x_train, y_train, tc, s=s)
    write_trace_csv(os.path.join(out_dir, f"trace_{tag}.csv"), trace)
    save_checkpoint(model, os.path.join(out_dir, f"ckpt_{tag}"),
                    extra={"seed": cfg["seed"], "tag": tag})
    return model, trace


# ---------------------------------------------------------------------------
# experiment runners


def _run_kstep(cfg, out_dir):
    rng = child_rng(cfg["seed"], 1)
    g, s = _build_graph_and_gso(cfg, rng)
    ds = _dataset_for(cfg, s, g)
    x_test, y_test = ds.part("test")

    results = {}
    traces = {}

    grnn = init_model(_grnn_arch(cfg, s.n), child_rng(cfg["seed"], 2))
    grnn, traces["grnn"] = _train_one("grnn", grnn, ds, cfg, s, out_dir)
    results["grnn"] = {"params": count_parameters(grnn),
                       "test_rrmse": rrmse(predict(grnn, s, x_test), y_test)}

    gnn = init_gnn(1, cfg["gnn"]["features"], cfg["gnn"]["taps"], child_rng(cfg["seed"], 3))
    gnn, traces["gnn"] = _train_one("gnn", gnn, ds, cfg, s, out_dir)
    results["gnn"] = {"params": count_parameters(gnn),
                      "test_rrmse": rrmse(predict(gnn, s, x_test), y_test)}

    hidden = cfg["rnn"]["hidden"]
    if hidden == "auto":
        hidden = rnn_hidden_size_for_budget(s.n, s.n, count_parameters(grnn))
    rnn = init_rnn(s.n, hidden, s.n, child_rng(cfg["seed"], 4))
    rnn, traces["rnn"] = _train_one("rnn", rnn, ds, cfg, s, out_dir)
    results["rnn"] = {"params": count_parameters(rnn),
                      "test_rrmse": rrmse(predict(rnn, s, x_test), y_test)}

    # copy-last-input baseline: predict x_{t+k} := x_t
    results["copy_last"] = {"params": 0, "test_rrmse": rrmse(x_test, y_test)}

    rows = [(tag, r["params"], r["test_rrmse"]) for tag, r in results.items()]
    _write_csv(os.path.join(out_dir, "metrics.csv"), ["arch", "params", "test_rrmse"], rows)
    summary = {"experiment": cfg["experiment"], "metrics": results,
               "loss_at_last_step": {tag: tr[-1][2] for tag, tr in traces.items()}}
    _write_json(os.path.join(out_dir, "metrics.json"), summary)
    return summary


def _run_gating(cfg, out_dir):
    """Shared runner for the AR(1)/fractional/covariance gating comparisons."""
    rng = child_rng(cfg["seed"], 1)
    g, s = _build_graph_and_gso(cfg, rng)
    ds = _dataset_for(cfg, s, g)
    x_test, y_test = ds.part("test")

    base_arch = _grnn_arch(cfg, s.n)
    gating = base_arch.gating
    results = {}

    from dataclasses import replace as _replace
    ungated = init_model(_replace(base_arch, gating="none"), child_rng(cfg["seed"], 2))
    ungated, _ = _train_one("grnn", ungated, ds, cfg, s, out_dir)
    results["grnn"] = {"params": count_parameters(ungated),
                       "test_rrmse": rrmse(predict(ungated, s, x_test), y_test)}

    gated = init_model(base_arch, child_rng(cfg["seed"], 3))
    gated, _ = _train_one(f"{gating}_gated", gated, ds, cfg, s, out_dir)
    results[f"{gating}_gated"] = {"params": count_parameters(gated),
                                  "test_rrmse": rrmse(predict(gated, s, x_test), y_test)}

    base = results["grnn"]["test_rrmse"]
    improvement = (base - results[f"{gating}_gated"]["test_rrmse"]) / base
    rows = [(tag, r["params"], r["test_rrmse"]) for tag, r in results.items()]
    _write_csv(os.path.join(out_dir, "metrics.csv"), ["arch", "params", "test_rrmse"], rows)
    summary = {"experiment": cfg["experiment"], "metrics": results,
               "alpha": cfg["process"].get("alpha"),
               "improvement_over_grnn": improvement}
    _write_json(os.path.join(out_dir, "metrics.json"), summary)
    return summary


def _run_sir(cfg, out_dir):
    rng = child_rng(cfg["seed"], 1)
    g, s = _build_graph_and_gso(cfg, rng)
    ds = _dataset_for(cfg, s, g)
    x_train, y_train = ds.part("train")
    x_test, y_test = ds.part("test")

    counts = np.array([(y_train == 0).sum(), (y_train == 1).sum()], dtype=np.float64)
    weights = class_weights_from_counts(counts)

    from dataclasses import replace as _replace
    arch = _replace(_grnn_arch(cfg, s.n), f_in=3, out_features=(2,), out_taps=(1,))
    model = init_model(arch, child_rng(cfg["seed"], 2))
    model, _ = _train_one("grnn", model, ds, cfg, s, out_dir,
                          loss="cross_entropy", class_weights=weights)

    logits = predict(model, s, x_test)[:, -1]  # (S, n, 2) at the last observed day
    pred = np.argmax(logits, axis=-1)
    metrics = binary_f1(pred, y_test)
    results = {"grnn": {"params": count_parameters(model), **metrics.to_dict()}}
    rows = [("grnn", results["grnn"]["params"], metrics.f1, metrics.precision,
             metrics.recall, metrics.accuracy)]
    _write_csv(os.path.join(out_dir, "metrics.csv"),
               ["arch", "params", "f1", "precision", "recall", "accuracy"], rows)
    summary = {"experiment": cfg["experiment"], "metrics": results,
               "class_weights": weights.tolist(), "n_after_pruning": g.n}
    _write_json(os.path.join(out_dir, "metrics.json"), summary)
    return summary


def _report_artifacts(report: StabilityReport, out_dir):
    report.to_csv(os.path.join(out_dir, "stability.csv"))
    report.to_json(os.path.join(out_dir, "summary.json"))
    return report.summary()


def _run_stability_lemma(cfg, out_dir):
    rng = child_rng(cfg["seed"], 1)
    g, s = _build_graph_and_gso(cfg, rng)
    fr = normalize_response(FrequencyResponse(np.asarray(cfg["sweep"]["taps"])), s)
    report = lemma_filter_sweep(fr, s, cfg["sweep"]["eps_grid"], cfg["sweep"]["trials"],
                                cfg["seed"])
    return _report_artifacts(report, out_dir)


def _run_stability_thm1(cfg, out_dir):
    rng = child_rng(cfg["seed"], 1)
    g, s = _build_graph_and_gso(cfg, rng)
    arch = ArchSpec(f_in=1, f_state=1, k_in=cfg["model"]["k_in"],
                    k_state=cfg["model"]["k_state"])
    model = normalize_for_stability(init_model(arch, child_rng(cfg["seed"], 2)), s)
    report = theorem1_sweep(model, s, cfg["sweep"]["eps_grid"], cfg["sweep"]["t_max"],
                            cfg["sweep"]["trials"], cfg["seed"])
    return _report_artifacts(report, out_dir)


def _run_stability_thm2(cfg, out_dir):
    rng = child_rng(cfg["seed"], 1)
    g, s = _build_graph_and_gso(cfg, rng)
    arch = ArchSpec(f_in=1, f_state=1, k_in=cfg["model"]["k_in"],
                    k_state=cfg["model"]["k_state"], gating=cfg["model"]["gating"],
                    gate_state=1, gate_readout_taps=cfg["model"].get("gate_readout_taps", 1),
                    n=s.n)
    model = normalize_for_stability(init_model(arch, child_rng(cfg["seed"], 2)), s)
    consts = estimate_gate_constants(model, s, cfg["sweep"]["probes"], cfg["seed"])
    report = theorem2_sweep(model, s, cfg["sweep"]["eps_grid"], cfg["sweep"]["t_max"],
                            cfg["sweep"]["trials"], cfg["seed"],
                            consts["Q"], consts["phi1"], consts["phi2"])
    return _report_artifacts(report, out_dir)


def _run_equivariance(cfg, out_dir):
    sweep = cfg["sweep"]
    rows = []
    worst = 0.0
    for mode_idx, mode in enumerate(sweep["modes"]):
        for trial in range(sweep["trials"]):
            rng = child_rng(cfg["seed"], mode_idx * 1000 + trial)
            g, s = _build_graph_and_gso(cfg, rng)
            arch = ArchSpec(f_in=1, f_state=cfg["model"]["f_state"],
                            k_in=cfg["model"]["k_in"], k_state=cfg["model"]["k_state"],
                            gating=mode, n=s.n)
            model = init_model(arch, rng)
            x_seq = rng.standard_normal((sweep["t_max"], s.n, 1))
            p = Permutation.random(s.n, rng)
            dev = check_equivariance(model, s, x_seq, p, tol=sweep["tol"])
            worst = max(worst, dev)
            rows.append((mode, trial, dev))
    _write_csv(os.path.join(out_dir, "equivariance.csv"), ["mode", "trial", "max_deviation"], rows)
    summary = {"experiment": "Equivariance", "max_deviation": worst,
               "tol": sweep["tol"], "ok": worst <= sweep["tol"]}
    _write_json(os.path.join(out_dir, "summary.json"), summary)
    return summary


_RUNNERS = {
    "KStepDiffusion": _run_kstep,
    "Ar1TimeGating": _run_gating,
    "FractionalNodeGating": _run_gating,
    "CovarianceEdgeGating": _run_gating,
    "SirEpidemic": _run_sir,
    "StabilityLemma": _run_stability_lemma,
    "StabilityThm1": _run_stability_thm1,
    "StabilityThm2": _run_stability_thm2,
    "Equivariance": _run_equivariance,
}


def run(config, out_dir, paper_scale=False):
    """Resolve, persist and execute a config; returns the summary dict."""
    cfg = resolve_config(config, paper_scale=paper_scale)
    os.makedirs(out_dir, exist_ok=True)
    _write_json(os.path.join(out_dir, "config.json"), cfg)
    summary = _RUNNERS[cfg["experiment"]](cfg, out_dir)
    return summary


def generate(config, out_dir, paper_scale=False):
    """Build and export just the dataset for a training experiment."""
    cfg = resolve_config(config, paper_scale=paper_scale)
    if cfg["experiment"] not in TRAINING_EXPERIMENTS:
        raise ConfigError(f"experiment: {cfg['experiment']} has no dataset to generate")
    os.makedirs(out_dir, exist_ok=True)
    _write_json(os.path.join(out_dir, "config.json"), cfg)
    rng = child_rng(cfg["seed"], 1)
    g, s = _build_graph_and_gso(cfg, rng)
    ds = _dataset_for(cfg, s, g)
    ds.save(os.path.join(out_dir, "dataset"))
    with open(os.path.join(out_dir, "graph.json"), "w") as fh:
        fh.write(g.to_json())
    Gso(s.matrix, s.kind).to_csv(os.path.join(out_dir, "gso.csv"))
    return {"out": out_dir, "samples": int(ds.inputs.shape[0])}


def evaluate_run(run_dir, out_path=None):
    """Recompute a training run's metrics from its persisted config.

    Rebuilds the graph/dataset from the stored seed and re-runs training,
    returning the metrics summary (identical to the original by determinism).
    """
    with open(os.path.join(run_dir, "config.json")) as fh:
        cfg = json.load(fh)
    import tempfile

    with tempfile.TemporaryDirectory() as tmp:
        summary = _RUNNERS[cfg["experiment"]](cfg, tmp)
        if out_path:
            _write_json(out_path, summary)
    return summary


def compare(run_dirs, out_path=None):
    """Per-architecture metric deltas of later runs against the first."""
    if len(run_dirs) < 2:
        raise IncompatibleRuns("need at least two run directories")
    summaries = []
    for d in run_dirs:
        path = os.path.join(d, "metrics.json")
        if not os.path.exists(path):
            raise IncompatibleRuns(f"{d} has no metrics.json")
        with open(path) as fh:
            summaries.append(json.load(fh))
    base = summaries[0]["metrics"]
    rows = []
    for d, summ in zip(run_dirs[1:], summaries[1:]):
        for arch, metrics in summ["metrics"].items():
            if arch not in base:
                continue
            for key, value in metrics.items():
                if key == "params" or not isinstance(value, (int, float)):
                    continue
                if key not in base[arch]:
                    raise IncompatibleRuns(f"metric {key} missing from base run")
                b = float(base[arch][key])
                improvement = (b - float(value)) / b if b != 0 else 0.0
                rows.append((d, arch, key, b, float(value), improvement))
    if not rows:
        raise IncompatibleRuns("no shared architectures/metrics to compare")
    if out_path:
        _write_csv(out_path, ["run", "arch", "metric", "base", "value", "improvement"], rows)
    return rows


# ---------------------------------------------------------------------------
# argparse front end


def _load_config(path):
    with open(path) as fh:
        return json.load(fh)


def main(argv=None):
    parser = argparse.ArgumentParser(prog="grnnkit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", required=True, help="JSON config path")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--paper-scale", action="store_true", help="use paper-size settings")

    for name in ("generate", "train", "stability", "equivariance"):
        add_common(sub.add_parser(name))
    p_eval = sub.add_parser("eval")
    p_eval.add_argument("--run", required=True, help="existing run directory")
    p_eval.add_argument("--out", default=None, help="file for the recomputed metrics JSON")
    p_cmp = sub.add_parser("compare")
    p_cmp.add_argument("runs", nargs="+", help="run directories (first is the base)")
    p_cmp.add_argument("--out", default=None, help="CSV path for the comparison table")

    args = parser.parse_args(argv)
    if args.command == "eval":
        summary = evaluate_run(args.run, out_path=args.out)
        print(json.dumps(summary, indent=1, sort_keys=True, default=float))
        return 0
    if args.command == "compare":
        rows = compare(args.runs, out_path=args.out)
        print(f"{'run':30s} {'arch':12s} {'metric':10s} {'base':>10s} {'value':>10s} {'improv':>8s}")
        for run_dir, arch, metric, b, v, imp in rows:
            print(f"{run_dir:30s} {arch:12s} {metric:10s} {b:10.4f} {v:10.4f} {imp:8.3f}")
        return 0

    config = _load_config(args.config)
    if args.seed is not None:
        config["seed"] = args.seed
    if args.command == "generate":
        result = generate(config, args.out, paper_scale=args.paper_scale)
    else:
        cfg_resolved = resolve_config(config, paper_scale=args.paper_scale)
        name = cfg_resolved["experiment"]
        if args.command == "train" and name not in TRAINING_EXPERIMENTS:
            raise ConfigError(f"experiment: {name} is not a training experiment")
        if args.command == "stability" and not name.startswith("Stability"):
            raise ConfigError(f"experiment: {name} is not a stability sweep")
        if args.command == "equivariance" and name != "Equivariance":
            raise ConfigError("experiment: equivariance command needs the Equivariance experiment")
        result = run(config, args.out, paper_scale=args.paper_scale)
    print(json.dumps(result, indent=1, sort_keys=True, default=float))
    return 0


if __name__ == "__main__":
    sys.exit(main())
