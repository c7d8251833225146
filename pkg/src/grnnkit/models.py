"""GRNN cells, gated variants, output maps, dense baselines and checkpoints.

A model stores its parameters as plain float64 arrays.  Forward passes accept
an optional ``params`` dict mapping parameter names to tape ``Var``s; when
given, those override the stored arrays so the same forward code serves both
inference and training, executing the identical numpy calls in the same order.
"""

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import val
from .errors import DimensionMismatch, InvalidSpec
from .filters import FilterBank, edge_gated_lsigf, lsigf

GATING_MODES = ("none", "time", "node", "edge")


@dataclass(frozen=True)
class GrnnCore:
    """State recurrence z_t = sigma(A_S(x_t) + B_S(z_{t-1}))."""

    a_bank: FilterBank  # F_X -> F_Z
    b_bank: FilterBank  # F_Z -> F_Z
    sigma: str = "tanh"

    def __post_init__(self):
        if not (self.a_bank.f_out == self.b_bank.f_in == self.b_bank.f_out):
            raise InvalidSpec(
                f"state width mismatch: A maps to {self.a_bank.f_out}, "
                f"B is {self.b_bank.f_in}->{self.b_bank.f_out}"
            )

    @property
    def f_in(self):
        return self.a_bank.f_in

    @property
    def f_state(self):
        return self.a_bank.f_out


@dataclass(frozen=True)
class OutputMap:
    """GNN readout: per-layer (bank, nonlinearity), optional node pooling, final rho."""

    layers: tuple  # ((FilterBank, tag), ...)
    rho: str = "identity"
    pool: str = "none"  # "none" -> per-node outputs, "mean" -> graph-level

    def __post_init__(self):
        for (bank_a, _), (bank_b, _) in zip(self.layers, self.layers[1:]):
            if bank_a.f_out != bank_b.f_in:
                raise InvalidSpec("output layer feature dimensions do not chain")

    @property
    def f_in(self):
        return self.layers[0][0].f_in

    @property
    def f_out(self):
        return self.layers[-1][0].f_out

    def parameters(self):
        return [(f"out.{i}", bank.taps) for i, (bank, _) in enumerate(self.layers)]


@dataclass(frozen=True)
class TimeGateReadout:
    c: np.ndarray  # length state_width * n, column-major (node-fastest) layout


@dataclass(frozen=True)
class NodeGateReadout:
    bank: FilterBank  # state_width -> 1


@dataclass(frozen=True)
class EdgeGateReadout:
    proj: np.ndarray  # (state_width, proj_width)
    vec: np.ndarray  # (2 * proj_width,)


@dataclass(frozen=True)
class GateSubGrnn:
    """Auxiliary GRNN producing a gate state, plus the gate readout block."""

    core: GrnnCore
    readout: object


@dataclass(frozen=True)
class GatedGrnnModel:
    core: GrnnCore
    output: OutputMap
    gating: str = "none"
    input_gate: GateSubGrnn = None
    forget_gate: GateSubGrnn = None
    arch: "ArchSpec" = None

    def __post_init__(self):
        if self.gating not in GATING_MODES:
            raise InvalidSpec(f"unknown gating mode {self.gating!r}")
        if self.gating != "none" and (self.input_gate is None or self.forget_gate is None):
            raise InvalidSpec("gated models need both gate sub-GRNNs")

    def parameters(self):
        """Ordered (name, array) pairs; the order defines the checkpoint blob."""
        out = [("core.a", self.core.a_bank.taps), ("core.b", self.core.b_bank.taps)]
        for i, (bank, _) in enumerate(self.output.layers):
            out.append((f"out.{i}", bank.taps))
        for tag, gate in (("gate_in", self.input_gate), ("gate_fg", self.forget_gate)):
            if gate is None:
                continue
            out.append((f"{tag}.a", gate.core.a_bank.taps))
            out.append((f"{tag}.b", gate.core.b_bank.taps))
            r = gate.readout
            if isinstance(r, TimeGateReadout):
                out.append((f"{tag}.c", r.c))
            elif isinstance(r, NodeGateReadout):
                out.append((f"{tag}.c", r.bank.taps))
            else:
                out.append((f"{tag}.proj", r.proj))
                out.append((f"{tag}.vec", r.vec))
        return out


# ---------------------------------------------------------------------------
# gate computations


def time_gates(c, gate_state):
    """Scalar gate sigmoid(c . vec(Z)); batched states give one gate per sample."""
    cv, zv = val(c), val(gate_state)
    n, h = zv.shape[-2], zv.shape[-1]
    if cv.shape[0] != n * h:
        raise DimensionMismatch(f"time gate readout has {cv.shape[0]} entries, state needs {n * h}")
    flat = ad.vec_cm(gate_state)
    if zv.ndim == 2:
        return ad.sigmoid(ad.dot(flat, c))
    return ad.sigmoid(ad.matmul(flat, ad.reshape(c, (n * h, 1))))  # (B, 1)


def node_gates(bank, s, gate_state):
    """Per-node gates sigmoid(C_S(Z)) in (0,1)^n; shape (..., n)."""
    out = lsigf(bank, s, gate_state)
    if val(out).shape[-1] != 1:
        raise DimensionMismatch("node gate bank must map the gate state to one feature")
    q = ad.sigmoid(out)
    return ad.reshape(q, val(q).shape[:-1])


def edge_gates(proj, vec, gate_state):
    """Per-pair gates: rows i and j of Z are projected, concatenated and scored.

    Returns the full (..., n, n) matrix; entries at structural non-edges are
    computed but only ever multiply zeros of S.
    """
    projv, vecv = val(proj), val(vec)
    h = val(gate_state).shape[-1]
    if projv.shape[0] != h:
        raise DimensionMismatch(f"edge projection expects {projv.shape[0]} features, state has {h}")
    hp = projv.shape[1]
    if vecv.shape[0] != 2 * hp:
        raise DimensionMismatch(f"edge score vector must have {2 * hp} entries, got {vecv.shape[0]}")
    pr = ad.matmul(gate_state, proj)  # (..., n, H')
    head = ad.reshape(ad.slice_axis0(vec, 0, hp), (hp, 1))
    tail = ad.reshape(ad.slice_axis0(vec, hp, 2 * hp), (hp, 1))
    u = ad.matmul(pr, head)  # score of the row-i half
    w = ad.matmul(pr, tail)  # score of the row-j half
    return ad.sigmoid(ad.add(u, ad.swap_last(w)))


# ---------------------------------------------------------------------------
# forward passes


def grnn_step(core: GrnnCore, s, x_t, z_prev, a_taps=None, b_taps=None):
    """One ungated state update."""
    a = a_taps if a_taps is not None else core.a_bank
    b = b_taps if b_taps is not None else core.b_bank
    pre = ad.add(lsigf(a, s, x_t), lsigf(b, s, z_prev))
    return ad.apply_nonlinearity(core.sigma, pre)


def apply_output_map(om: OutputMap, s, h, params=None, prefix="out"):
    """GNN readout on a single state/snapshot; also the GNN baseline forward."""
    pv = params or {}
    for i, (bank, tag) in enumerate(om.layers):
        taps = pv.get(f"{prefix}.{i}", bank.taps)
        h = lsigf(taps, s, h)
        if tag != "identity":
            h = ad.apply_nonlinearity(tag, h)
    if om.pool == "mean":
        h = ad.mean(h, axis=-2)
    if om.rho != "identity":
        h = ad.apply_nonlinearity(om.rho, h)
    return h


gnn_baseline_forward = apply_output_map


def _zero_state(x_t, width):
    shape = val(x_t).shape[:-1] + (width,)
    return np.zeros(shape)


def _scalar_gate_factor(q, like):
    """Reshape a (B,1) batched scalar gate so it broadcasts over (B, n, H)."""
    if val(q).ndim == 0:
        return q
    b = val(q).shape[0]
    return ad.reshape(q, (b,) + (1,) * (val(like).ndim - 1))


def grnn_forward(model: GatedGrnnModel, s, x_seq, z0=None, params=None, collect_gates=False):
    """Run the full recurrence over a sequence.

    x_seq: (T, n, F_X) or (T, B, n, F_X), or a list of per-step arrays.
    Returns (y_seq, z_seq, gate_traces); stacked arrays in plain mode, lists of
    tape Vars when params carry Vars.  gate_traces holds the realized gate
    values per step (None entries when ungated).
    """
    pv = params or {}
    taped = any(isinstance(v, ad.Var) for v in pv.values())
    core = model.core
    a = pv.get("core.a", core.a_bank.taps)
    b = pv.get("core.b", core.b_bank.taps)
    steps = [x_seq[t] for t in range(len(x_seq))]
    if not steps:
        raise DimensionMismatch("empty input sequence")

    z = z0 if z0 is not None else _zero_state(steps[0], core.f_state)
    gates_needed = model.gating != "none"
    if gates_needed:
        gi, gf = model.input_gate, model.forget_gate
        zi = _zero_state(steps[0], gi.core.f_state)
        zf = _zero_state(steps[0], gf.core.f_state)

    y_seq, z_seq, gate_traces = [], [], []
    for x_t in steps:
        if not gates_needed:
            z = grnn_step(core, s, x_t, z, a_taps=a, b_taps=b)
            gate_traces.append(None)
        else:
            zi = grnn_step(gi.core, s, x_t, zi,
                           a_taps=pv.get("gate_in.a", gi.core.a_bank.taps),
                           b_taps=pv.get("gate_in.b", gi.core.b_bank.taps))
            zf = grnn_step(gf.core, s, x_t, zf,
                           a_taps=pv.get("gate_fg.a", gf.core.a_bank.taps),
                           b_taps=pv.get("gate_fg.b", gf.core.b_bank.taps))
            if model.gating == "time":
                q_in = time_gates(pv.get("gate_in.c", gi.readout.c), zi)
                q_fg = time_gates(pv.get("gate_fg.c", gf.readout.c), zf)
                a_term = lsigf(a, s, x_t)
                b_term = lsigf(b, s, z)
                pre = ad.add(ad.mul(_scalar_gate_factor(q_in, a_term), a_term),
                             ad.mul(_scalar_gate_factor(q_fg, b_term), b_term))
            elif model.gating == "node":
                q_in = node_gates(pv.get("gate_in.c", gi.readout.bank), s, zi)
                q_fg = node_gates(pv.get("gate_fg.c", gf.readout.bank), s, zf)
                a_term = lsigf(a, s, x_t)
                b_term = lsigf(b, s, z)
                pre = ad.add(ad.mul(ad.reshape(q_in, val(q_in).shape + (1,)), a_term),
                             ad.mul(ad.reshape(q_fg, val(q_fg).shape + (1,)), b_term))
            else:  # edge: the gate matrix scales S inside the convolutions
                q_in = edge_gates(pv.get("gate_in.proj", gi.readout.proj),
                                  pv.get("gate_in.vec", gi.readout.vec), zi)
                q_fg = edge_gates(pv.get("gate_fg.proj", gf.readout.proj),
                                  pv.get("gate_fg.vec", gf.readout.vec), zf)
                pre = ad.add(edge_gated_lsigf(a, s, x_t, q_in),
                             edge_gated_lsigf(b, s, z, q_fg))
            z = ad.apply_nonlinearity(core.sigma, pre)
            gate_traces.append({"q_in": val(q_in).copy(), "q_fg": val(q_fg).copy()})
        y = apply_output_map(model.output, s, z, params=pv)
        y_seq.append(y)
        z_seq.append(z)

    if taped:
        return y_seq, z_seq, gate_traces
    return np.stack([val(y) for y in y_seq]), np.stack([val(z) for z in z_seq]), gate_traces


# ---------------------------------------------------------------------------
# architecture specs, initialization, counting


@dataclass(frozen=True)
class ArchSpec:
    """Hyperparameters that fully determine a GatedGrnnModel's shapes."""

    f_in: int
    f_state: int
    k_in: int
    k_state: int
    out_features: tuple = (1,)
    out_taps: tuple = (1,)
    out_nonlins: tuple = None  # defaults to identity everywhere
    sigma: str = "tanh"
    rho: str = "identity"
    pool: str = "none"
    gating: str = "none"
    gate_state: int = None  # defaults to f_state
    gate_k_in: int = None  # defaults to k_in
    gate_k_state: int = None  # defaults to k_state
    gate_readout_taps: int = 1
    edge_proj: int = None  # defaults to gate_state
    n: int = None  # node count; required by time gating only

    def resolved(self):
        d = asdict(self)
        d["gate_state"] = self.gate_state or self.f_state
        d["gate_k_in"] = self.gate_k_in or self.k_in
        d["gate_k_state"] = self.gate_k_state or self.k_state
        d["edge_proj"] = self.edge_proj or d["gate_state"]
        if self.out_nonlins is None:
            d["out_nonlins"] = tuple("identity" for _ in self.out_features)
        return d

    def to_dict(self):
        d = asdict(self)
        for key in ("out_features", "out_taps", "out_nonlins"):
            if d[key] is not None:
                d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("out_features", "out_taps", "out_nonlins"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        return cls(**d)


def _uniform_bank(rng, k, f_in, f_out):
    bound = 1.0 / np.sqrt(f_in * k)
    return FilterBank(rng.uniform(-bound, bound, size=(k, f_in, f_out)))


def _uniform_vec(rng, size, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=size)


def init_model(arch: ArchSpec, rng) -> GatedGrnnModel:
    """Draw all parameters i.i.d. uniform on [-1/sqrt(fan_in*K), 1/sqrt(fan_in*K)].

    Draw order (fixed, also the checkpoint order): core A, core B, output
    layers, then input-gate A/B/readout, then forget-gate A/B/readout.
    """
    d = arch.resolved()
    if len(d["out_features"]) != len(d["out_taps"]):
        raise InvalidSpec("out_features and out_taps must have equal length")
    if d["gating"] not in GATING_MODES:
        raise InvalidSpec(f"unknown gating mode {d['gating']!r}")
    if d["gating"] == "time" and not d["n"]:
        raise InvalidSpec("time gating needs the node count n in the architecture spec")

    core = GrnnCore(
        a_bank=_uniform_bank(rng, d["k_in"], d["f_in"], d["f_state"]),
        b_bank=_uniform_bank(rng, d["k_state"], d["f_state"], d["f_state"]),
        sigma=d["sigma"],
    )
    layers = []
    f_prev = d["f_state"]
    for f_out, k, tag in zip(d["out_features"], d["out_taps"], d["out_nonlins"]):
        layers.append((_uniform_bank(rng, k, f_prev, f_out), tag))
        f_prev = f_out
    output = OutputMap(layers=tuple(layers), rho=d["rho"], pool=d["pool"])

    input_gate = forget_gate = None
    if d["gating"] != "none":
        gates = []
        for _ in range(2):
            gcore = GrnnCore(
                a_bank=_uniform_bank(rng, d["gate_k_in"], d["f_in"], d["gate_state"]),
                b_bank=_uniform_bank(rng, d["gate_k_state"], d["gate_state"], d["gate_state"]),
                sigma="tanh",
            )
            if d["gating"] == "time":
                size = d["gate_state"] * d["n"]
                readout = TimeGateReadout(c=_uniform_vec(rng, size, size))
            elif d["gating"] == "node":
                readout = NodeGateReadout(
                    bank=_uniform_bank(rng, d["gate_readout_taps"], d["gate_state"], 1)
                )
            else:
                proj = _uniform_vec(rng, (d["gate_state"], d["edge_proj"]), d["gate_state"])
                vec = _uniform_vec(rng, 2 * d["edge_proj"], 2 * d["edge_proj"])
                readout = EdgeGateReadout(proj=proj, vec=vec)
            gates.append(GateSubGrnn(core=gcore, readout=readout))
        input_gate, forget_gate = gates

    return GatedGrnnModel(core=core, output=output, gating=d["gating"],
                          input_gate=input_gate, forget_gate=forget_gate, arch=arch)


def count_parameters(model):
    """Exact number of scalar parameters; 0 for an empty model."""
    if model is None:
        return 0
    return int(sum(arr.size for _, arr in model.parameters()))


# ---------------------------------------------------------------------------
# dense (graph-agnostic) RNN baseline


@dataclass(frozen=True)
class RnnBaseline:
    """Classical recurrence z_t = sigma(x_t W_in + z_{t-1} W_state), y_t = rho(z_t W_out)."""

    w_in: np.ndarray  # (N_in, H)
    w_state: np.ndarray  # (H, H)
    w_out: np.ndarray  # (H, N_out)
    sigma: str = "tanh"
    rho: str = "identity"

    def parameters(self):
        return [("w_in", self.w_in), ("w_state", self.w_state), ("w_out", self.w_out)]


def init_gnn(f_in, out_features, out_taps, rng, out_nonlins=None, rho="identity",
             pool="none") -> OutputMap:
    """Snapshot GNN baseline: lsigf + nonlinearity per layer, no recurrence."""
    if out_nonlins is None:
        # tanh between layers, linear at the output (regression heads)
        out_nonlins = tuple("tanh" if i + 1 < len(out_features) else "identity"
                            for i in range(len(out_features)))
    layers = []
    f_prev = f_in
    for f_out, k, tag in zip(out_features, out_taps, out_nonlins):
        layers.append((_uniform_bank(rng, k, f_prev, f_out), tag))
        f_prev = f_out
    return OutputMap(layers=tuple(layers), rho=rho, pool=pool)


def init_rnn(n_in, hidden, n_out, rng, sigma="tanh", rho="identity") -> RnnBaseline:
    return RnnBaseline(
        w_in=_uniform_vec(rng, (n_in, hidden), n_in),
        w_state=_uniform_vec(rng, (hidden, hidden), hidden),
        w_out=_uniform_vec(rng, (hidden, n_out), hidden),
        sigma=sigma,
        rho=rho,
    )


def rnn_hidden_size_for_budget(n_in, n_out, budget):
    """Hidden width whose parameter count is closest to the budget."""
    best, best_gap = 1, abs(n_in + 1 + n_out - budget)
    for h in range(1, budget + 1):
        count = n_in * h + h * h + h * n_out
        gap = abs(count - budget)
        if gap < best_gap:
            best, best_gap = h, gap
        if count > budget and gap > best_gap:
            break
    return best


def rnn_baseline_step(model: RnnBaseline, x_t, z_prev, params=None):
    pv = params or {}
    pre = ad.add(ad.matmul(x_t, pv.get("w_in", model.w_in)),
                 ad.matmul(z_prev, pv.get("w_state", model.w_state)))
    return ad.apply_nonlinearity(model.sigma, pre)


def rnn_forward(model: RnnBaseline, x_seq, z0=None, params=None):
    """x_seq: (T, B, N_in) or (T, N_in) treated as batch of one row vector."""
    pv = params or {}
    taped = any(isinstance(v, ad.Var) for v in pv.values())
    steps = [x_seq[t] for t in range(len(x_seq))]
    hidden = model.w_state.shape[0]
    first = val(steps[0])
    z = np.zeros(first.shape[:-1] + (hidden,)) if z0 is None else z0
    y_seq = []
    for x_t in steps:
        z = rnn_baseline_step(model, x_t, z, params=pv)
        y = ad.matmul(z, pv.get("w_out", model.w_out))
        if model.rho != "identity":
            y = ad.apply_nonlinearity(model.rho, y)
        y_seq.append(y)
    if taped:
        return y_seq
    return np.stack([val(y) for y in y_seq])


# ---------------------------------------------------------------------------
# checkpoints: JSON manifest + little-endian f64 blob


def save_checkpoint(model, stem, extra=None):
    """Write <stem>.json (manifest) and <stem>.bin (params, '<f8', manifest order)."""
    stem = str(stem)
    params = model.parameters()
    if isinstance(model, RnnBaseline):
        kind = "rnn"
        arch = {
            "n_in": model.w_in.shape[0],
            "hidden": model.w_state.shape[0],
            "n_out": model.w_out.shape[1],
            "sigma": model.sigma,
            "rho": model.rho,
        }
    elif isinstance(model, OutputMap):
        kind = "gnn"
        arch = {
            "f_in": model.f_in,
            "out_features": [bank.f_out for bank, _ in model.layers],
            "out_taps": [bank.order for bank, _ in model.layers],
            "out_nonlins": [tag for _, tag in model.layers],
            "rho": model.rho,
            "pool": model.pool,
        }
    else:
        kind = "grnn"
        if model.arch is None:
            raise InvalidSpec("only models built from an ArchSpec can be checkpointed")
        arch = model.arch.to_dict()
    manifest = {
        "format": "grnnkit-ckpt-v1",
        "kind": kind,
        "arch": arch,
        "params": [{"name": name, "shape": list(arr.shape)} for name, arr in params],
        "extra": extra or {},
    }
    blob = b"".join(np.ascontiguousarray(arr, dtype="<f8").tobytes() for _, arr in params)
    with open(stem + ".json", "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    with open(stem + ".bin", "wb") as fh:
        fh.write(blob)


def load_checkpoint(stem):
    stem = str(stem)
    with open(stem + ".json") as fh:
        manifest = json.load(fh)
    raw = np.fromfile(stem + ".bin", dtype="<f8")
    if manifest["kind"] == "rnn":
        arch = manifest["arch"]
        model = init_rnn(arch["n_in"], arch["hidden"], arch["n_out"],
                         np.random.default_rng(0), sigma=arch["sigma"], rho=arch["rho"])
    elif manifest["kind"] == "gnn":
        arch = manifest["arch"]
        model = init_gnn(arch["f_in"], arch["out_features"], arch["out_taps"],
                         np.random.default_rng(0), out_nonlins=tuple(arch["out_nonlins"]),
                         rho=arch["rho"], pool=arch["pool"])
    else:
        model = init_model(ArchSpec.from_dict(manifest["arch"]), np.random.default_rng(0))
    offset = 0
    for meta, (name, arr) in zip(manifest["params"], model.parameters()):
        if meta["name"] != name or list(arr.shape) != meta["shape"]:
            raise InvalidSpec(f"checkpoint manifest mismatch at {meta['name']}")
        size = arr.size
        arr[...] = raw[offset:offset + size].reshape(arr.shape)
        offset += size
    if offset != raw.size:
        raise InvalidSpec("checkpoint blob size does not match manifest")
    return model, manifest
