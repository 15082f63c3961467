"""Structural causal models with additive parent weights and hard interventions."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .graph import Dag, GraphError

FUNCTION_CLASSES = ("linear", "linear_noise", "interaction")
WEIGHT_LOW, WEIGHT_HIGH = 0.5, 2.0


@dataclass(frozen=True)
class FunctionClass:
    """Family the structural equations are drawn from.

    ``noise`` parameterises the Gaussian term of ``linear_noise``; it is read
    as a variance unless ``noise_is_variance`` is false.
    """

    tag: str = "linear"
    noise: float = 0.5
    noise_is_variance: bool = True
    root_default: float = 0.0

    def __post_init__(self):
        if self.tag not in FUNCTION_CLASSES:
            raise ValueError(f"unknown function class {self.tag!r}; expected one of {FUNCTION_CLASSES}")
        if not self.noise >= 0:
            raise ValueError("noise must be non-negative")
        if not math.isfinite(self.root_default):
            raise ValueError("root_default must be finite")

    @property
    def noise_std(self) -> float:
        if self.tag != "linear_noise":
            return 0.0
        return math.sqrt(self.noise) if self.noise_is_variance else self.noise


@dataclass(frozen=True, eq=False)
class Scm:
    graph: Dag
    weights: tuple  # per node: array aligned with parents[i]
    parents: tuple  # per node: sorted parent indices
    interaction_pair: tuple  # per node: (k, l) or None
    fclass: FunctionClass
    order: tuple  # topological order of the observational graph
    intervention: tuple | None = None  # (target, value)

    @property
    def n(self) -> int:
        return self.graph.n

    def equations(self) -> str:
        """Render the (observational) structural equations one per line."""
        lines = []
        for i in range(self.n):
            terms = [f"{w:.2f}*X{j}" for j, w in zip(self.parents[i], self.weights[i])]
            if self.interaction_pair[i] is not None:
                k, l = self.interaction_pair[i]
                terms.append(f"X{k}*X{l}")
            if self.fclass.tag == "linear_noise":
                terms.append(f"U{i}")
            rhs = " + ".join(terms) if terms else f"{self.fclass.root_default:g}"
            lines.append(f"X{i} <- {rhs}")
        if self.intervention is not None:
            t, v = self.intervention
            lines.append(f"do(X{t} = {v:g})")
        return "\n".join(lines)


def _check_acyclic(g: Dag) -> list[int]:
    order = g.topological_order()
    if order is None:
        raise GraphError("structural causal models require an acyclic graph")
    return order


def sample_scm(g: Dag, fclass: FunctionClass, rng: np.random.Generator) -> Scm:
    """Draw fresh weights (and interaction pairs) for every node of ``g``."""
    order = _check_acyclic(g)
    parents, weights, pairs = [], [], []
    for i in range(g.n):
        pa = g.parents(i)
        parents.append(pa)
        weights.append(rng.uniform(WEIGHT_LOW, WEIGHT_HIGH, size=len(pa)))
        if fclass.tag == "interaction" and len(pa) >= 2:
            k, l = sorted(rng.choice(pa, size=2, replace=False).tolist())
            pairs.append((k, l))
        else:
            pairs.append(None)
    return Scm(g, tuple(weights), tuple(parents), tuple(pairs), fclass, tuple(order))


def scm_from_weights(g: Dag, weights: dict, fclass: FunctionClass | None = None,
                     interaction_pairs: dict | None = None) -> Scm:
    """Build an SCM with fixed coefficients; ``weights`` maps ``(parent, child)`` to a float."""
    fclass = fclass or FunctionClass()
    order = _check_acyclic(g)
    interaction_pairs = interaction_pairs or {}
    parents, ws, pairs = [], [], []
    for i in range(g.n):
        pa = g.parents(i)
        missing = [int(j) for j in pa if (int(j), i) not in weights]
        if missing:
            raise ValueError(f"no weight given for edges {[(j, i) for j in missing]}")
        parents.append(pa)
        ws.append(np.array([weights[(int(j), i)] for j in pa], dtype=float))
        pairs.append(interaction_pairs.get(i))
    extra = set(weights) - set(g.edges())
    if extra:
        raise ValueError(f"weights given for non-edges {sorted(extra)}")
    return Scm(g, tuple(ws), tuple(parents), tuple(pairs), fclass, tuple(order))


def apply_intervention(m: Scm, target: int, value: float) -> Scm:
    if not 0 <= target < m.n:
        raise IndexError(f"intervention target {target} out of range for n={m.n}")
    return replace(m, intervention=(int(target), float(value)))


def clear_intervention(m: Scm) -> Scm:
    if m.intervention is None:
        return m
    return replace(m, intervention=None)


def induced_graph(m: Scm) -> Dag:
    """Graph of the current (possibly intervened) model."""
    if m.intervention is None:
        return m.graph
    return m.graph.remove_incoming(m.intervention[0])


def evaluate_node(m: Scm, i: int, x: np.ndarray, noise: float = 0.0) -> float:
    """Structural equation of node ``i`` given current values ``x`` and its noise draw."""
    pa = m.parents[i]
    if len(pa) == 0:
        return m.fclass.root_default + noise
    val = float(np.dot(m.weights[i], x[pa]))
    pair = m.interaction_pair[i]
    if pair is not None:
        val += x[pair[0]] * x[pair[1]]
    return val + noise


def sample_observation(m: Scm, rng: np.random.Generator) -> np.ndarray:
    """One ancestral sample of all endogenous variables."""
    n = m.n
    std = m.fclass.noise_std
    # noise is drawn for every node so the stream does not depend on the target
    noise = rng.normal(0.0, std, size=n) if std > 0 else np.zeros(n)
    target, value = m.intervention if m.intervention is not None else (-1, 0.0)
    x = np.zeros(n)
    for i in m.order:
        if i == target:
            x[i] = value
        else:
            x[i] = evaluate_node(m, i, x, noise[i])
    return x


# Example models from the 5-variable inference traces.
EQ7_WEIGHTS = {
    (1, 0): 0.54, (3, 0): 0.91, (4, 0): 0.83,
    (2, 1): 1.52, (3, 1): 1.84,
    (3, 2): 1.38,
}
EQ8_WEIGHTS = {
    (3, 1): 1.61,
    (1, 2): 0.83, (3, 2): 1.60, (4, 2): 1.5,
    (0, 3): 1.39,
    (0, 4): 0.54,
}


def preset_scm(name: str, fclass: FunctionClass | None = None) -> Scm:
    presets = {"eq7": EQ7_WEIGHTS, "eq8": EQ8_WEIGHTS}
    if name not in presets:
        raise KeyError(f"unknown SCM preset {name!r}; choose from {sorted(presets)}")
    weights = presets[name]
    return scm_from_weights(Dag.from_edges(5, weights), weights, fclass)
