"""Trivial reference estimators: the empty graph and a random ER DAG."""

from __future__ import annotations

import time

import numpy as np

from .graph import Dag, generate_er_dag, shd
from .trainer import EvalReport, report_from_shds

BASELINES = ("empty", "random")


def empty_baseline(n: int) -> Dag:
    if n < 1:
        raise ValueError("n must be positive")
    return Dag.empty(n)


def random_baseline(n: int, p: float, rng: np.random.Generator) -> Dag:
    return generate_er_dag(n, p, rng)


def evaluate_baseline(kind: str, graphs: list[Dag], p: float = 0.2, draws_per_graph: int = 3,
                      seed: int = 0) -> EvalReport:
    """Score a baseline on every test graph, ``draws_per_graph`` times each.

    The random baseline draws a fresh ER(``p``) DAG per (graph, draw) from a
    stream seeded by ``(seed, graph index, draw index)``.
    """
    if kind not in BASELINES:
        raise ValueError(f"unknown baseline {kind!r}; choose from {BASELINES}")
    if not graphs:
        raise ValueError("no graphs to evaluate on")
    n = graphs[0].n
    start = time.perf_counter()
    shds = np.zeros((len(graphs), draws_per_graph))
    for gi, g in enumerate(graphs):
        for di in range(draws_per_graph):
            if kind == "empty":
                est = empty_baseline(n)
            else:
                est = random_baseline(n, p, np.random.default_rng([seed, gi, di]))
            shds[gi, di] = shd(g, est)
    meta = {"baseline": kind, "draws_per_graph": draws_per_graph, "seed": seed}
    if kind == "random":
        meta["assumption"] = f"random DAGs drawn from the dataset generator, ER(p={p}) over a random order"
    return report_from_shds(graphs, shds, time.perf_counter() - start, meta)
