"""Synthetic graph processes: noisy diffusion, AR(1), fractional diffusion, SIR.

Noise model: the per-step disturbance is w_t = u_t 1 + v_t with a scalar
u_t ~ N(0, xi2) shared by all nodes (the "temporal" part) and per-node
v_t ~ N(0, eta2 I) (the "spatial" part), so each entry has variance
xi2 + eta2.  Draw order per step is u first, then v, which pins the stream.
"""

import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, InvalidAlpha, InvalidProbability, SequenceTooShort
from .graphs import Graph, as_matrix
from .rng import child_rng
from .spectral import eigendecompose

SUSCEPTIBLE, INFECTED, RECOVERED = 0, 1, 2


def _draw_x0(x0, n, rng):
    if x0 is None:
        return rng.standard_normal(n)
    if callable(x0):
        return np.asarray(x0(rng), dtype=np.float64)
    return np.asarray(x0, dtype=np.float64)


def _noise(n, xi2, eta2, rng):
    u = rng.normal(0.0, np.sqrt(xi2)) if xi2 > 0 else 0.0
    v = rng.normal(0.0, np.sqrt(eta2), size=n) if eta2 > 0 else np.zeros(n)
    return u + v


def _label_free_shift(m, x):
    """S x with each row's products summed in ascending value order.

    The per-row product multiset does not depend on the node labeling, so
    sorting before the reduction makes the step commute with permutations
    bit for bit (a fixed-index accumulation order would not).
    """
    return np.sort(m * x[None, :], axis=1).sum(axis=1)


def noisy_diffusion(s, x0, T, xi2, eta2, rng):
    """x_t = S x_{t-1} + w_t; returns (T, n) with row 0 = x_0."""
    if T < 1:
        raise ValueError("need T >= 1")
    if xi2 < 0 or eta2 < 0:
        raise ValueError("variances must be nonnegative")
    m = as_matrix(s)
    n = m.shape[0]
    seq = np.empty((T, n))
    seq[0] = _draw_x0(x0, n, rng)
    for t in range(1, T):
        seq[t] = _label_free_shift(m, seq[t - 1]) + _noise(n, xi2, eta2, rng)
    return seq


def ar1_process(n, alpha, T, xi2, eta2, rng, x0=None):
    """Per-node scalar recurrence x_t = alpha x_{t-1} + w_t."""
    if not (0.0 < alpha <= 1.0):
        raise InvalidAlpha(f"need 0 < alpha <= 1, got {alpha}")
    if T < 1:
        raise ValueError("need T >= 1")
    seq = np.empty((T, n))
    seq[0] = _draw_x0(x0, n, rng)
    for t in range(1, T):
        seq[t] = alpha * seq[t - 1] + _noise(n, xi2, eta2, rng)
    return seq


def matrix_fractional_power(s, alpha):
    """S^alpha computed spectrally with f(lam) = sign(lam) |lam|^alpha.

    Keeps the operator real and symmetric when the spectrum has negative
    eigenvalues; alpha = 1 returns the matrix itself (exactly).
    """
    m = as_matrix(s)
    if alpha == 1.0:
        return m.copy()
    es = eigendecompose(m)  # raises NotSymmetric for asymmetric input
    lam = es.eigenvalues
    f = np.sign(lam) * np.abs(lam) ** alpha
    out = (es.eigenvectors * f[None, :]) @ es.eigenvectors.T
    return 0.5 * (out + out.T)  # exact symmetry despite rounding


def fractional_diffusion(s, alpha, T, xi2, eta2, rng, x0=None):
    """x_t = S^alpha x_{t-1} + w_t for 0 < alpha <= 1."""
    if not (0.0 < alpha <= 1.0):
        raise InvalidAlpha(f"need 0 < alpha <= 1, got {alpha}")
    return noisy_diffusion(matrix_fractional_power(s, alpha), x0, T, xi2, eta2, rng)


# ---------------------------------------------------------------------------
# datasets


@dataclass(frozen=True)
class GraphProcessDataset:
    """Aligned input/target tensors with consecutive train/val/test slices."""

    inputs: np.ndarray  # (S, T, n, F)
    targets: np.ndarray  # (S, T, n, F) sequences or (S, ...) labels
    split: dict  # {"train": int, "val": int, "test": int}
    targets_kind: str = "sequence"  # "sequence" | "node_labels"

    def __post_init__(self):
        total = self.split["train"] + self.split["val"] + self.split["test"]
        if total != self.inputs.shape[0]:
            raise DimensionMismatch(f"split sizes sum to {total}, dataset has {self.inputs.shape[0]}")
        if self.targets.shape[0] != self.inputs.shape[0]:
            raise DimensionMismatch("inputs and targets disagree on sample count")

    def _bounds(self, part):
        order = ("train", "val", "test")
        lo = sum(self.split[p] for p in order[: order.index(part)])
        return lo, lo + self.split[part]

    def part(self, name):
        lo, hi = self._bounds(name)
        return self.inputs[lo:hi], self.targets[lo:hi]

    def save(self, directory):
        os.makedirs(directory, exist_ok=True)
        manifest = {
            "format": "grnnkit-dataset-v1",
            "split": self.split,
            "targets_kind": self.targets_kind,
            "files": {},
        }
        for part in ("train", "val", "test"):
            x, y = self.part(part)
            for tag, arr in (("inputs", x), ("targets", y)):
                fname = f"{part}_{tag}.npy"
                np.save(os.path.join(directory, fname), np.asarray(arr, dtype=np.float64))
                manifest["files"][f"{part}_{tag}"] = fname
        with open(os.path.join(directory, "manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=1, sort_keys=True)

    @classmethod
    def load(cls, directory):
        with open(os.path.join(directory, "manifest.json")) as fh:
            manifest = json.load(fh)
        xs, ys = [], []
        for part in ("train", "val", "test"):
            xs.append(np.load(os.path.join(directory, manifest["files"][f"{part}_inputs"])))
            ys.append(np.load(os.path.join(directory, manifest["files"][f"{part}_targets"])))
        return cls(
            inputs=np.concatenate(xs, axis=0),
            targets=np.concatenate(ys, axis=0),
            split={k: int(v) for k, v in manifest["split"].items()},
            targets_kind=manifest["targets_kind"],
        )


def kstep_dataset(generator, k, sizes, seed):
    """Pair each generated sequence with itself shifted k steps forward.

    generator(rng) must return a (T, n) or (T, n, F) array; inputs keep steps
    [0, T-k) and targets steps [k, T), so both have length T - k.  Sequence i
    uses an independent stream derived from (seed, i).
    """
    if k < 1:
        raise SequenceTooShort("need k >= 1")
    split = dict(sizes)
    total = split["train"] + split["val"] + split["test"]
    inputs, targets = [], []
    for i in range(total):
        seq = np.asarray(generator(child_rng(seed, i)), dtype=np.float64)
        if seq.ndim == 2:
            seq = seq[:, :, None]
        if seq.shape[0] <= k:
            raise SequenceTooShort(f"sequence length {seq.shape[0]} cannot be shifted by {k}")
        inputs.append(seq[:-k])
        targets.append(seq[k:])
    return GraphProcessDataset(
        inputs=np.stack(inputs), targets=np.stack(targets), split=split, targets_kind="sequence"
    )


# ---------------------------------------------------------------------------
# SIR epidemic


@dataclass(frozen=True)
class SirRun:
    """States per day (day, node) in {0=S, 1=I, 2=R} plus infection days (-1 = never)."""

    states: np.ndarray
    infected_day: np.ndarray


def sir_simulate(g: Graph, p_seed, p_inf, recovery_days, horizon, rng,
                 initial_infected=None) -> SirRun:
    """Discrete-day SIR on a contact graph.

    Day 0 seeds each node independently with p_seed (or exactly the given
    ``initial_infected`` set).  Each later day, first every node that has been
    infected for recovery_days full days turns recovered (and no longer
    spreads), then every still-infected node infects each susceptible
    neighbor independently with p_inf.  Recovery is absorbing.
    """
    for name, p in (("p_seed", p_seed), ("p_inf", p_inf)):
        if not (0.0 <= p <= 1.0):
            raise InvalidProbability(f"{name}={p} outside [0,1]")
    if recovery_days < 1 or horizon < 0:
        raise ValueError("need recovery_days >= 1 and horizon >= 0")
    n = g.n
    neighbors = [g.neighbors(i) for i in range(n)]
    states = np.zeros((horizon + 1, n), dtype=np.int64)
    infected_day = np.full(n, -1, dtype=np.int64)
    if initial_infected is not None:
        seeds = np.asarray(sorted(initial_infected), dtype=np.intp)
    else:
        seeds = np.flatnonzero(rng.random(n) < p_seed)
    states[0, seeds] = INFECTED
    infected_day[seeds] = 0
    for day in range(1, horizon + 1):
        cur = states[day - 1].copy()
        for i in np.flatnonzero(cur == INFECTED):
            if day - infected_day[i] >= recovery_days:
                cur[i] = RECOVERED
        new_infections = []
        for i in np.flatnonzero(cur == INFECTED):
            for j in neighbors[i]:
                if cur[j] == SUSCEPTIBLE and rng.random() < p_inf:
                    new_infections.append(j)
        for j in new_infections:
            if cur[j] == SUSCEPTIBLE:
                cur[j] = INFECTED
                infected_day[j] = day
        states[day] = cur
    return SirRun(states=states, infected_day=infected_day)


def one_hot_states(states):
    """(D, n) integer states -> (D, n, 3) one-hot features."""
    d, n = states.shape
    out = np.zeros((d, n, 3))
    for c in (SUSCEPTIBLE, INFECTED, RECOVERED):
        out[:, :, c] = states == c
    return out


def sir_dataset(g: Graph, sizes, seed, k_ahead=8, obs_window=4,
                p_seed=0.05, p_inf=0.3, recovery_days=4, start_offsets=(0,)):
    """One-hot state windows paired with per-node infection labels k days ahead.

    Sample i observes days [o, o + obs_window) of its own simulation, where o
    cycles through start_offsets, and is labeled 1 where the node is infected
    on day o + obs_window - 1 + k_ahead.  Staggered offsets expose different
    epidemic phases to the classifier.
    """
    if k_ahead < 1:
        raise SequenceTooShort("need k_ahead >= 1")
    split = dict(sizes)
    total = split["train"] + split["val"] + split["test"]
    offsets = tuple(int(o) for o in start_offsets)
    horizon = max(offsets) + obs_window - 1 + k_ahead
    inputs, labels = [], []
    for i in range(total):
        run = sir_simulate(g, p_seed, p_inf, recovery_days, horizon, child_rng(seed, i))
        o = offsets[i % len(offsets)]
        label_day = o + obs_window - 1 + k_ahead
        inputs.append(one_hot_states(run.states[o:o + obs_window]))
        labels.append((run.states[label_day] == INFECTED).astype(np.int64))
    return GraphProcessDataset(
        inputs=np.stack(inputs), targets=np.stack(labels), split=split, targets_kind="node_labels"
    )
