"""Dual deep Q-learning: one Q-network for interventions, one for structural edits."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .env import ActionPair, mask_from_edges, num_pairs, num_structural_actions
from .neural import (
    MlpParams,
    OptimizerState,
    TrainingError,
    backward,
    forward,
    forward_cached,
    init_optimizer,
    init_params,
    optimizer_step,
)


class BufferNotReady(RuntimeError):
    """Raised when sampling more transitions than the buffer holds."""


@dataclass
class Transition:
    history_before: np.ndarray
    action: ActionPair
    reward: int
    history_after: np.ndarray
    done: bool
    estimate_after: np.ndarray  # edge vector of the estimate after the step


@dataclass
class Batch:
    h: np.ndarray
    a_in: np.ndarray
    a_st: np.ndarray
    reward: np.ndarray
    h_next: np.ndarray
    done: np.ndarray
    next_edges: np.ndarray

    def __len__(self) -> int:
        return len(self.reward)


class ReplayBuffer:
    """Fixed-capacity FIFO ring of transitions stored column-wise."""

    def __init__(self, capacity: int, obs_dim: int, n: int, dtype=np.float32):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.h = np.zeros((capacity, obs_dim), dtype=dtype)
        self.h_next = np.zeros((capacity, obs_dim), dtype=dtype)
        self.a_in = np.zeros(capacity, dtype=np.int64)
        self.a_st = np.zeros(capacity, dtype=np.int64)
        self.reward = np.zeros(capacity)
        self.done = np.zeros(capacity, dtype=bool)
        self.next_edges = np.zeros((capacity, num_pairs(n)), dtype=bool)
        self.inserted = 0

    def __len__(self) -> int:
        return min(self.inserted, self.capacity)

    def push(self, t: Transition) -> None:
        k = self.inserted % self.capacity
        self.h[k] = t.history_before
        self.h_next[k] = t.history_after
        self.a_in[k], self.a_st[k] = t.action
        self.reward[k] = t.reward
        self.done[k] = t.done
        self.next_edges[k] = t.estimate_after
        self.inserted += 1

    def __getitem__(self, idx: int) -> Transition:
        """Transition by age, ``0`` being the oldest one still stored."""
        size = len(self)
        if not 0 <= idx < size:
            raise IndexError(idx)
        k = (self.inserted - size + idx) % self.capacity
        return Transition(self.h[k].copy(), ActionPair(int(self.a_in[k]), int(self.a_st[k])),
                          int(self.reward[k]), self.h_next[k].copy(), bool(self.done[k]),
                          self.next_edges[k].copy())

    def sample_batch(self, k: int, rng: np.random.Generator) -> Batch:
        size = len(self)
        if size < k or size == 0:
            raise BufferNotReady(f"buffer holds {size} transitions, {k} requested")
        idx = rng.integers(size, size=k)
        return Batch(self.h[idx], self.a_in[idx], self.a_st[idx], self.reward[idx],
                     self.h_next[idx], self.done[idx], self.next_edges[idx])


def push(buffer: ReplayBuffer, t: Transition) -> None:
    buffer.push(t)


def sample_batch(buffer: ReplayBuffer, k: int, rng: np.random.Generator) -> Batch:
    return buffer.sample_batch(k, rng)


@dataclass(eq=False)
class DualQ:
    q_st: MlpParams
    q_in: MlpParams
    target_st: MlpParams
    target_in: MlpParams
    opt_st: OptimizerState
    opt_in: OptimizerState
    grads: dict = field(default_factory=dict, repr=False)

    def grad_buffer(self, p: MlpParams) -> np.ndarray:
        buf = self.grads.get(id(p))
        if buf is None or buf.shape != p.flat.shape or buf.dtype != p.flat.dtype:
            buf = self.grads[id(p)] = np.empty_like(p.flat)
        return buf

    @property
    def n(self) -> int:
        return self.q_in.out_dim - 1

    def nets(self) -> dict:
        return {"q_st": self.q_st, "q_in": self.q_in,
                "target_st": self.target_st, "target_in": self.target_in}

    def opts(self) -> dict:
        return {"q_st": self.opt_st, "q_in": self.opt_in}

    def copy(self) -> DualQ:
        def copy_opt(o: OptimizerState) -> OptimizerState:
            return OptimizerState(o.m.copy(), o.v.copy(), o.t, o.lr, o.beta1, o.beta2, o.eps)
        return DualQ(self.q_st.copy(), self.q_in.copy(), self.target_st.copy(),
                     self.target_in.copy(), copy_opt(self.opt_st), copy_opt(self.opt_in))


def head_sizes(n: int, obs_dim: int, hidden: list[int]) -> tuple[list[int], list[int]]:
    """Layer sizes of the structural and intervention heads."""
    trunk = [obs_dim] + [int(h) for h in hidden]
    return trunk + [num_structural_actions(n)], trunk + [n + 1]


def init_dual_q(n: int, obs_dim: int, hidden: list[int], rng: np.random.Generator,
                lr: float = 1e-4, dtype=np.float32) -> DualQ:
    st_sizes, in_sizes = head_sizes(n, obs_dim, hidden)
    q_st = init_params(st_sizes, rng, dtype)
    q_in = init_params(in_sizes, rng, dtype)
    return DualQ(q_st, q_in, q_st.copy(), q_in.copy(),
                 init_optimizer(q_st, lr), init_optimizer(q_in, lr))


def masked_argmax(q: np.ndarray, mask: np.ndarray) -> np.ndarray | int:
    """Argmax over allowed entries; ties go to the lowest index."""
    return np.argmax(np.where(mask, q, -np.inf), axis=-1)


def select_action(
    dq: DualQ,
    h: np.ndarray,
    mask: np.ndarray,
    epsilon: float,
    rng: np.random.Generator,
    random_intervention: bool = False,
) -> ActionPair:
    """Epsilon-greedy choice, exploring each head independently.

    With ``random_intervention`` the intervention is a uniformly random
    target variable and the intervention head is not consulted.
    """
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must lie in [0, 1], got {epsilon}")
    n = dq.n
    u_in, u_st = rng.random(2)
    if random_intervention:
        a_in = int(rng.integers(n))
    elif u_in < epsilon:
        a_in = int(rng.integers(n + 1))
    else:
        a_in = int(np.argmax(forward(dq.q_in, h)))
    if u_st < epsilon:
        a_st = int(rng.choice(np.flatnonzero(mask)))
    else:
        a_st = int(masked_argmax(forward(dq.q_st, h), mask))
    return ActionPair(a_in, a_st)


def greedy_actions(dq: DualQ, hs: np.ndarray, masks: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Greedy actions for a batch of histories."""
    a_in = np.argmax(forward(dq.q_in, hs), axis=1)
    a_st = masked_argmax(forward(dq.q_st, hs), masks)
    return a_in, a_st


def td_targets(batch: Batch, dq: DualQ, gamma: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-head bootstrapped targets from the target networks.

    Each head bootstraps with its own maximum over valid next actions; the
    structural maximum respects the mask of the stored next estimate.
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    r = batch.reward.astype(float)
    if gamma == 0.0:
        return r.copy(), r.copy()
    live = ~batch.done
    y_st, y_in = r.copy(), r.copy()
    if live.any():
        hn = batch.h_next[live]
        q_st = forward(dq.target_st, hn)
        next_mask = mask_from_edges(batch.next_edges[live])
        y_st[live] += gamma * np.where(next_mask, q_st, -np.inf).max(axis=1)
        y_in[live] += gamma * forward(dq.target_in, hn).max(axis=1)
    return y_st, y_in


def _fit_head(dq: DualQ, p: MlpParams, opt: OptimizerState, h: np.ndarray, actions: np.ndarray,
              targets: np.ndarray) -> float:
    q, cache = forward_cached(p, h)
    rows = np.arange(len(actions))
    err = q[rows, actions] - targets
    loss = float(np.mean(err * err))
    if not np.isfinite(loss):
        raise TrainingError("non-finite loss")
    grad_out = np.zeros_like(q)
    grad_out[rows, actions] = 2.0 * err / len(actions)
    optimizer_step(p, backward(p, h, grad_out, cache, out=dq.grad_buffer(p)), opt)
    return loss


def train_step(dq: DualQ, batch: Batch, gamma: float, train_in: bool = True) -> tuple[float, float]:
    """One Adam step per head on the squared TD error of the taken actions.

    Returns ``(loss_st, loss_in)``; ``loss_in`` is NaN when the intervention
    head is frozen.
    """
    y_st, y_in = td_targets(batch, dq, gamma)
    loss_st = _fit_head(dq, dq.q_st, dq.opt_st, batch.h, batch.a_st, y_st)
    loss_in = float("nan")
    if train_in:
        loss_in = _fit_head(dq, dq.q_in, dq.opt_in, batch.h, batch.a_in, y_in)
    return loss_st, loss_in


def sync_targets(dq: DualQ) -> DualQ:
    dq.target_st.load_from(dq.q_st)
    dq.target_in.load_from(dq.q_in)
    return dq


def linear_epsilon(step: int, total_steps: int, start: float = 1.0, end: float = 0.05,
                   fraction: float = 0.1) -> float:
    """Linear decay from ``start`` to ``end`` over the first ``fraction`` of training."""
    horizon = fraction * total_steps
    if horizon <= 0 or step >= horizon:
        return end
    return start + (end - start) * step / horizon
