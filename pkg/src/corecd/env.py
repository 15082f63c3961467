"""Causal-discovery POMDP: intervene on an SCM, edit a graph estimate, get SHD-delta rewards."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .graph import Dag
from .scm import (
    FunctionClass,
    Scm,
    apply_intervention,
    clear_intervention,
    sample_observation,
    sample_scm,
)


class ConfigurationError(ValueError):
    pass


class MaskedActionError(ValueError):
    """A structural action forbidden by the current mask was submitted."""


class ActionPair(NamedTuple):
    intervene: int
    structural: int


class EdgeOp(NamedTuple):
    kind: str  # "void" | "add" | "remove"
    i: int = -1
    j: int = -1

    def __str__(self) -> str:
        if self.kind == "void":
            return "void"
        return f"{self.kind}({self.i}->{self.j})"


VOID = EdgeOp("void")


def num_pairs(n: int) -> int:
    return n * (n - 1)


def ordered_pairs(n: int) -> list[tuple[int, int]]:
    return [(i, j) for i in range(n) for j in range(n) if i != j]


def pair_index(i: int, j: int, n: int) -> int:
    return i * (n - 1) + (j if j < i else j - 1)


def num_structural_actions(n: int) -> int:
    return 2 * num_pairs(n) + 1


def block_size(n: int) -> int:
    return n + (n + 1) + num_pairs(n)


def decode_structural(a_st: int, n: int) -> EdgeOp:
    m = num_pairs(n)
    if not 0 <= a_st <= 2 * m:
        raise IndexError(f"structural action {a_st} out of range [0, {2 * m}]")
    if a_st == 0:
        return VOID
    k = a_st - 1
    kind = "add"
    if k >= m:
        k -= m
        kind = "remove"
    i, r = divmod(k, n - 1)
    j = r if r < i else r + 1
    return EdgeOp(kind, i, j)


def encode_structural(op: EdgeOp, n: int) -> int:
    if op.kind == "void":
        return 0
    k = pair_index(op.i, op.j, n)
    return 1 + k + (num_pairs(n) if op.kind == "remove" else 0)


def edge_vector(adj: np.ndarray) -> np.ndarray:
    """Off-diagonal entries of ``adj`` in ordered-pair order."""
    n = adj.shape[0]
    return adj[~np.eye(n, dtype=bool)]


def mask_from_edges(edges: np.ndarray) -> np.ndarray:
    """Structural mask given the estimate's edge vector (or a batch of them)."""
    edges = np.asarray(edges, dtype=bool)
    void = np.ones(edges.shape[:-1] + (1,), dtype=bool)
    return np.concatenate([void, ~edges, edges], axis=-1)


def structural_mask(estimate: Dag) -> np.ndarray:
    return mask_from_edges(edge_vector(estimate.adj))


def reward(op: EdgeOp, truth: Dag) -> int:
    if op.kind == "void":
        return 0
    hit = 1 if truth.adj[op.i, op.j] else -1
    return hit if op.kind == "add" else -hit


@dataclass
class EpisodeHistory:
    """Observation/action history laid out as ``horizon`` fixed-width blocks.

    Block ``t`` holds the observation seen before acting at step ``t``
    (scaled by ``1/scale``), the one-hot intervention taken at ``t`` and the
    signed edge change made at ``t``. Unfilled blocks stay zero.
    """

    n: int
    horizon: int
    scale: float = 1.0
    step: int = 0
    encoded: np.ndarray = field(init=False)
    observations: list = field(default_factory=list)

    def __post_init__(self):
        self.encoded = np.zeros(self.horizon * block_size(self.n))

    @property
    def block(self) -> int:
        return block_size(self.n)

    def clear(self) -> None:
        self.encoded[:] = 0.0
        self.observations.clear()
        self.step = 0

    def record_observation(self, t: int, obs: np.ndarray) -> None:
        self.observations.append(np.array(obs, dtype=float))
        if t < self.horizon:
            start = t * self.block
            self.encoded[start:start + self.n] = obs / self.scale

    def record_action(self, t: int, intervene: int, op: EdgeOp) -> None:
        start = t * self.block + self.n
        self.encoded[start + intervene] = 1.0
        if op.kind != "void":
            sign = 1.0 if op.kind == "add" else -1.0
            self.encoded[start + self.n + 1 + pair_index(op.i, op.j, self.n)] = sign
        self.step = t + 1


def encode_history(history: EpisodeHistory) -> np.ndarray:
    return history.encoded.copy()


class CausalDiscoveryEnv:
    """One episode at a time over SCMs drawn from a list of ground-truth DAGs.

    Each step takes ``(intervention, structural)``: interventions ``0..n-1``
    clamp that variable to ``intervention_value``, ``n`` returns to the
    observational model. One sample is drawn per step, and the reward is the
    change in SHD between the estimate and the observational ground truth.
    """

    def __init__(
        self,
        n: int,
        horizon: int,
        graphs: list[Dag] | None = None,
        fclass: FunctionClass | None = None,
        intervention_value: float = 20.0,
        rng: np.random.Generator | None = None,
        record_trace: bool = False,
    ):
        if horizon < 1:
            raise ConfigurationError("horizon must be at least 1")
        if graphs is not None and any(g.n != n for g in graphs):
            raise ConfigurationError("all graphs must have n nodes")
        self.n = n
        self.horizon = horizon
        self.graphs = graphs
        self.fclass = fclass or FunctionClass()
        self.intervention_value = float(intervention_value)
        self.rng = rng if rng is not None else np.random.default_rng()
        self.record_trace = record_trace
        scale = abs(self.intervention_value) or 1.0
        self.history = EpisodeHistory(n, horizon, scale)
        self.num_intervention_actions = n + 1
        self.num_structural_actions = num_structural_actions(n)
        self.obs_dim = horizon * block_size(n)
        self._offdiag = ~np.eye(n, dtype=bool)
        self.scm: Scm | None = None
        self.truth: Dag | None = None
        self._est = np.zeros((n, n), dtype=bool)
        self.t = 0
        self.trace: list[dict] = []
        self.last_observation: np.ndarray | None = None

    @property
    def estimate(self) -> Dag:
        return Dag(self._est)

    @property
    def edges(self) -> np.ndarray:
        return self._est[self._offdiag]

    @property
    def mask(self) -> np.ndarray:
        return mask_from_edges(self.edges)

    @property
    def done(self) -> bool:
        return self.t >= self.horizon

    def reset(self, graph: Dag | None = None, scm: Scm | None = None) -> np.ndarray:
        """Start an episode; a fresh SCM is drawn unless one is supplied."""
        if scm is None:
            if graph is None:
                if not self.graphs:
                    raise ConfigurationError("no graphs to sample episodes from")
                graph = self.graphs[self.rng.integers(len(self.graphs))]
            scm = sample_scm(graph, self.fclass, self.rng)
        if scm.n != self.n:
            raise ConfigurationError(f"SCM has {scm.n} variables, environment expects {self.n}")
        self.scm = clear_intervention(scm)
        self.truth = self.scm.graph
        self._est = np.zeros((self.n, self.n), dtype=bool)
        self.t = 0
        self.history.clear()
        self.trace = []
        obs = sample_observation(self.scm, self.rng)
        self.last_observation = obs
        self.history.record_observation(0, obs)
        return self.history.encoded.copy()

    def step(self, action) -> tuple[np.ndarray, int, bool]:
        if self.scm is None:
            raise RuntimeError("reset() must be called before step()")
        if self.done:
            raise RuntimeError("episode is over; call reset()")
        a_in, a_st = int(action[0]), int(action[1])
        if not 0 <= a_in <= self.n:
            raise IndexError(f"intervention action {a_in} out of range [0, {self.n}]")
        op = decode_structural(a_st, self.n)
        if op.kind == "add" and self._est[op.i, op.j]:
            raise MaskedActionError(f"cannot {op}: edge already in estimate")
        if op.kind == "remove" and not self._est[op.i, op.j]:
            raise MaskedActionError(f"cannot {op}: edge not in estimate")

        if a_in < self.n:
            self.scm = apply_intervention(self.scm, a_in, self.intervention_value)
        else:
            self.scm = clear_intervention(self.scm)
        obs = sample_observation(self.scm, self.rng)

        r = reward(op, self.truth)
        if op.kind == "add":
            self._est[op.i, op.j] = True
        elif op.kind == "remove":
            self._est[op.i, op.j] = False

        t = self.t
        self.history.record_action(t, a_in, op)
        self.history.record_observation(t + 1, obs)
        self.last_observation = obs
        self.t = t + 1
        if self.record_trace:
            self.trace.append({
                "step": t,
                "intervention": a_in if a_in < self.n else None,
                "structural": str(op),
                "reward": r,
                "observation": obs.tolist(),
                "estimate": self.estimate.to_bitstring(),
            })
        return self.history.encoded.copy(), r, self.done

    def write_trace(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.trace:
                fh.write(json.dumps(rec) + "\n")
