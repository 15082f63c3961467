"""Training loop, greedy evaluation, inference traces and transfer grids."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ConfigError, TrainConfig
from .dqn import (
    DualQ,
    ReplayBuffer,
    Transition,
    greedy_actions,
    init_dual_q,
    linear_epsilon,
    select_action,
    sync_targets,
    train_step,
)
from .env import CausalDiscoveryEnv, ConfigurationError, block_size
from .graph import Dag, GraphDataset, shd
from .neural import load_checkpoint, save_checkpoint
from .scm import FunctionClass, Scm

log = logging.getLogger(__name__)

METRICS_HEADER = ["step", "episode_return_mean", "loss_st", "loss_in",
                  "eval_mean_shd", "eval_std_shd", "epsilon"]


@dataclass
class EvalReport:
    mean_shd: float
    std_shd: float
    per_graph: list = field(default_factory=list)
    seconds_per_graph: float = 0.0
    n_rollouts: int = 0
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "mean_shd": self.mean_shd,
            "std_shd": self.std_shd,
            "n_rollouts": self.n_rollouts,
            "seconds_per_graph": self.seconds_per_graph,
            "per_graph": self.per_graph,
            "meta": self.meta,
        }

    def line(self) -> str:
        return f"{self.mean_shd:.2f} ± {self.std_shd:.2f}"


def report_from_shds(graphs: list[Dag], shds: np.ndarray, seconds: float, meta: dict | None = None) -> EvalReport:
    """Aggregate a (graphs x draws) SHD array into a report."""
    shds = np.asarray(shds, dtype=float).reshape(len(graphs), -1)
    per_graph = [
        {"graph": g.to_bitstring(), "edges": g.num_edges, "shd": row.tolist(), "mean_shd": float(row.mean())}
        for g, row in zip(graphs, shds)
    ]
    return EvalReport(
        mean_shd=float(shds.mean()),
        std_shd=float(shds.std()),
        per_graph=per_graph,
        seconds_per_graph=seconds / max(len(graphs), 1),
        n_rollouts=int(shds.size),
        meta=dict(meta or {}),
    )


class GreedyPolicy:
    """Acts greedily on both Q-heads."""

    def __init__(self, dq: DualQ):
        self.dq = dq

    def actions(self, envs, hs: np.ndarray, masks: np.ndarray):
        return greedy_actions(self.dq, hs, masks)


class VoidPolicy:
    """Never intervenes and never edits the estimate."""

    def actions(self, envs, hs, masks):
        k = len(envs)
        return np.full(k, envs[0].n), np.zeros(k, dtype=int)


def evaluate(
    policy,
    graphs: list[Dag],
    fclass: FunctionClass,
    intervention_value: float,
    horizon: int,
    draws_per_graph: int = 3,
    seed: int = 0,
    chunk: int = 1024,
) -> EvalReport:
    """Roll out ``policy`` once per (graph, fresh SCM draw) and score the final estimates.

    A ``DualQ`` is wrapped in :class:`GreedyPolicy`. Each rollout gets its own
    RNG stream seeded by ``(seed, graph index, draw index)``, so results do
    not depend on chunking and no outside RNG is touched.
    """
    if not graphs:
        raise ConfigurationError("cannot evaluate on an empty graph list")
    if isinstance(policy, DualQ):
        policy = GreedyPolicy(policy)
    n = graphs[0].n
    jobs = [(gi, di) for gi in range(len(graphs)) for di in range(draws_per_graph)]
    shds = np.zeros(len(jobs))
    start = time.perf_counter()
    for lo in range(0, len(jobs), chunk):
        envs = []
        hs = []
        for gi, di in jobs[lo:lo + chunk]:
            env = CausalDiscoveryEnv(n, horizon, fclass=fclass, intervention_value=intervention_value,
                                     rng=np.random.default_rng([seed, gi, di]))
            hs.append(env.reset(graph=graphs[gi]))
            envs.append(env)
        hs = np.stack(hs)
        for _ in range(horizon):
            masks = np.stack([e.mask for e in envs])
            a_in, a_st = policy.actions(envs, hs, masks)
            for k, env in enumerate(envs):
                hs[k] = env.step((a_in[k], a_st[k]))[0]
        for k, env in enumerate(envs):
            shds[lo + k] = shd(env.truth, env.estimate)
    elapsed = time.perf_counter() - start
    return report_from_shds(graphs, shds, elapsed, {
        "fclass": fclass.tag, "intervention_value": intervention_value,
        "horizon": horizon, "draws_per_graph": draws_per_graph, "seed": seed,
    })


@dataclass
class TrainResult:
    best: DualQ
    last: DualQ
    best_report: EvalReport | None
    metrics: list
    evals: list  # (step, EvalReport)
    best_series: list  # best mean SHD so far, one entry per evaluation


def _window_mean(values: list) -> float:
    vals = [v for v in values if not math.isnan(v)]
    return float(np.mean(vals)) if vals else float("nan")


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return repr(float(v)) if isinstance(v, float) else str(v)


def train(cfg: TrainConfig, dataset: GraphDataset, out_dir: str | Path | None = None,
          eval_seed: int | None = None) -> TrainResult:
    """Train both Q-heads on episodes drawn from ``dataset.train``.

    Every ``eval_every`` steps (and at the end) the greedy policy is scored
    on ``dataset.test``; the lowest mean SHD seen so far selects the best
    model. With ``out_dir`` set, ``best.ckpt``, ``last.ckpt`` and
    ``metrics.csv`` are written there.
    """
    cfg.validate()
    if dataset.n != cfg.n:
        raise ConfigError(f"dataset has n={dataset.n}, config expects n={cfg.n}")
    if not dataset.train or not dataset.test:
        raise ConfigError("dataset needs non-empty train and test splits")

    env_ss, act_ss, buf_ss, init_ss = np.random.SeedSequence(cfg.seed).spawn(4)
    env_rng, act_rng, buf_rng = (np.random.default_rng(s) for s in (env_ss, act_ss, buf_ss))
    fclass = cfg.function_class()
    env = CausalDiscoveryEnv(cfg.n, cfg.horizon, dataset.train, fclass, cfg.intervention_value, env_rng)
    dq = init_dual_q(cfg.n, env.obs_dim, list(cfg.hidden), np.random.default_rng(init_ss), cfg.lr)
    buffer = ReplayBuffer(cfg.buffer_capacity, env.obs_dim, cfg.n)
    train_in = not cfg.random_interventions or cfg.ablation_train_in
    eval_seed = cfg.seed if eval_seed is None else eval_seed

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    def run_eval(model: DualQ) -> EvalReport:
        return evaluate(model, dataset.test, fclass, cfg.intervention_value, cfg.horizon,
                        cfg.eval_draws, eval_seed)

    def ckpt_meta(step: int, eps: float, report: EvalReport | None) -> dict:
        return {
            "config": cfg.to_dict(),
            "step": step,
            "epsilon": eps,
            "rng": {"env": env_rng.bit_generator.state, "act": act_rng.bit_generator.state,
                    "buffer": buf_rng.bit_generator.state},
            "eval": None if report is None else {"mean_shd": report.mean_shd, "std_shd": report.std_shd},
        }

    metrics: list[dict] = []
    evals: list = []
    best_series: list[float] = []
    best, best_report = dq.copy(), None
    returns: list[float] = []
    losses_st: list[float] = []
    losses_in: list[float] = []
    n_updates = 0
    ep_return = 0.0
    eps = cfg.eps_start
    h = env.reset()
    started = time.perf_counter()

    for step in range(1, cfg.total_steps + 1):
        eps = linear_epsilon(step - 1, cfg.total_steps, cfg.eps_start, cfg.eps_end, cfg.eps_decay_fraction)
        action = select_action(dq, h, env.mask, eps, act_rng, cfg.random_interventions)
        h_next, r, done = env.step(action)
        buffer.push(Transition(h, action, r, h_next, done, env.edges))
        ep_return += r

        if len(buffer) >= max(cfg.warmup, cfg.batch_size) and step % cfg.train_every == 0:
            batch = buffer.sample_batch(cfg.batch_size, buf_rng)
            l_st, l_in = train_step(dq, batch, cfg.gamma, train_in)
            losses_st.append(l_st)
            losses_in.append(l_in)
            n_updates += 1
            if n_updates % cfg.sync_every == 0:
                sync_targets(dq)

        if done:
            returns.append(ep_return)
            ep_return = 0.0
            h = env.reset()
        else:
            h = h_next

        report = None
        if step % cfg.eval_every == 0 or step == cfg.total_steps:
            report = run_eval(dq)
            evals.append((step, report))
            if best_report is None or report.mean_shd < best_report.mean_shd:
                best, best_report = dq.copy(), report
                if out is not None:
                    _save_dq(out / "best.ckpt", best, ckpt_meta(step, eps, report))
            best_series.append(best_report.mean_shd)
            log.info("step %d: eval SHD %s (best %.3f), eps %.3f, %.0fs", step, report.line(),
                     best_report.mean_shd, eps, time.perf_counter() - started)

        if step % cfg.log_every == 0 or report is not None:
            metrics.append({
                "step": step,
                "episode_return_mean": _window_mean(returns),
                "loss_st": _window_mean(losses_st),
                "loss_in": _window_mean(losses_in),
                "eval_mean_shd": report.mean_shd if report else float("nan"),
                "eval_std_shd": report.std_shd if report else float("nan"),
                "epsilon": eps,
            })
            returns, losses_st, losses_in = [], [], []

    if out is not None:
        _save_dq(out / "last.ckpt", dq, ckpt_meta(cfg.total_steps, eps, evals[-1][1] if evals else None))
        write_metrics(out / "metrics.csv", metrics)
    return TrainResult(best, dq, best_report, metrics, evals, best_series)


def write_metrics(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRICS_HEADER)
        for row in rows:
            w.writerow([_fmt(row[k]) for k in METRICS_HEADER])


def _save_dq(path, dq: DualQ, meta: dict) -> None:
    save_checkpoint(path, dq.nets(), dq.opts(), meta)


def save_model(path, dq: DualQ, cfg: TrainConfig, **meta) -> None:
    _save_dq(path, dq, {"config": cfg.to_dict(), **meta})


def load_model(path) -> tuple[DualQ, TrainConfig, dict]:
    nets, opts, meta = load_checkpoint(path)
    dq = DualQ(nets["q_st"], nets["q_in"], nets["target_st"], nets["target_in"],
               opts["q_st"], opts["q_in"])
    cfg = TrainConfig.from_dict(meta["config"])
    return dq, cfg, meta


def infer(dq: DualQ, scm: Scm, horizon: int, intervention_value: float,
          rng: np.random.Generator | None = None) -> tuple[Dag, list[dict]]:
    """One greedy episode on a given SCM; returns the final estimate and per-step trace."""
    if scm.n != dq.n:
        raise ConfigurationError(f"model expects {dq.n} variables, SCM has {scm.n}")
    expected = horizon * block_size(scm.n)
    if dq.q_st.in_dim != expected:
        raise ConfigurationError(f"model input width {dq.q_st.in_dim} != {expected} for horizon {horizon}")
    env = CausalDiscoveryEnv(scm.n, horizon, fclass=scm.fclass, intervention_value=intervention_value,
                             rng=rng if rng is not None else np.random.default_rng(0), record_trace=True)
    h = env.reset(scm=scm)
    for _ in range(horizon):
        a_in, a_st = greedy_actions(dq, h[None, :], env.mask[None, :])
        h = env.step((a_in[0], a_st[0]))[0]
    return env.estimate, env.trace


def format_trace(trace: list[dict], truth: Dag, estimate: Dag) -> str:
    lines = []
    for rec in trace:
        target = "nothing" if rec["intervention"] is None else f"do(X{rec['intervention']})"
        lines.append(f"step {rec['step']:>2}  {target:<10} {rec['structural']:<16} reward {rec['reward']:+d}")
    lines.append(f"estimate: {estimate.edges()}")
    lines.append(f"truth:    {truth.edges()}")
    lines.append(f"SHD: {shd(truth, estimate)}")
    return "\n".join(lines)


def transfer_matrix(models: dict, fclasses: list[FunctionClass], graphs: list[Dag],
                    draws_per_graph: int = 3, seed: int = 0) -> dict:
    """Evaluate every model on every function class.

    ``models`` maps a row label to ``(DualQ, TrainConfig)``; the model's own
    horizon and intervention value are used.
    """
    ns = {cfg.n for _, cfg in models.values()}
    if len(ns) > 1:
        raise ConfigurationError(f"models disagree on n: {sorted(ns)}")
    grid = {}
    for name, (dq, cfg) in models.items():
        grid[name] = {
            fc.tag: evaluate(dq, graphs, fc, cfg.intervention_value, cfg.horizon, draws_per_graph, seed)
            for fc in fclasses
        }
    return grid


def format_grid(grid: dict) -> str:
    cols = list(next(iter(grid.values())).keys()) if grid else []
    width = max([len(r) for r in grid] + [8])
    lines = [" " * width + " | " + " | ".join(f"{c:^14}" for c in cols)]
    for name, row in grid.items():
        lines.append(f"{name:<{width}} | " + " | ".join(f"{row[c].line():^14}" for c in cols))
    return "\n".join(lines)


def grid_to_dict(grid: dict) -> dict:
    return {name: {c: rep.to_dict() for c, rep in row.items()} for name, row in grid.items()}


def dump_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2))

