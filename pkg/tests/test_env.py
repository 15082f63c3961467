import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from corecd.env import (
    VOID,
    CausalDiscoveryEnv,
    ConfigurationError,
    EdgeOp,
    EpisodeHistory,
    MaskedActionError,
    block_size,
    decode_structural,
    encode_history,
    encode_structural,
    num_structural_actions,
    ordered_pairs,
    reward,
    structural_mask,
)
from corecd.graph import Dag, enumerate_all_dags, generate_er_dag, shd
from corecd.scm import FunctionClass, preset_scm, sample_scm


def apply_op(est: Dag, op: EdgeOp) -> Dag:
    adj = est.adj.copy()
    if op.kind != "void":
        adj[op.i, op.j] = op.kind == "add"
    return Dag(adj)


def random_valid_op(est: Dag, rng) -> EdgeOp:
    valid = np.flatnonzero(structural_mask(est))
    return decode_structural(int(rng.choice(valid)), est.n)


def test_decode_examples():
    assert decode_structural(0, 3) == VOID
    assert decode_structural(1, 3) == EdgeOp("add", 0, 1)
    assert decode_structural(7, 3) == EdgeOp("remove", 0, 1)
    assert decode_structural(12, 3) == EdgeOp("remove", 2, 1)
    with pytest.raises(IndexError):
        decode_structural(13, 3)
    with pytest.raises(IndexError):
        decode_structural(-1, 3)


@pytest.mark.parametrize("n", [2, 3, 5, 10])
def test_structural_codec_is_bijective(n):
    pairs = ordered_pairs(n)
    assert pairs == sorted(pairs)
    ops = [decode_structural(a, n) for a in range(num_structural_actions(n))]
    assert len(set(ops)) == len(ops)
    assert [(op.i, op.j) for op in ops[1:len(pairs) + 1]] == pairs
    assert all(encode_structural(op, n) == a for a, op in enumerate(ops))


def test_mask_examples():
    m = structural_mask(Dag.empty(3))
    assert m[0] and m[1:7].all() and not m[7:].any()
    full = Dag(~np.eye(3, dtype=bool))
    m = structural_mask(full)
    assert m[0] and not m[1:7].any() and m[7:].all()
    m = structural_mask(Dag.from_edges(3, [(0, 1)]))
    assert not m[1] and m[7]


@settings(max_examples=200)
@given(st.integers(2, 6), st.integers(0, 2**32 - 1))
def test_mask_invariants(n, seed):
    est = generate_er_dag(n, 0.5, np.random.default_rng(seed))
    m = structural_mask(est)
    k = n * (n - 1)
    assert m[0] and m.sum() == k + 1
    assert np.array_equal(m[1:k + 1], ~m[k + 1:])


def test_reward_examples():
    truth = Dag.from_edges(3, [(0, 1)])
    assert reward(EdgeOp("add", 0, 1), truth) == 1
    assert reward(EdgeOp("add", 1, 0), truth) == -1
    assert reward(EdgeOp("remove", 0, 1), truth) == -1
    assert reward(EdgeOp("remove", 1, 0), truth) == 1
    assert reward(VOID, truth) == 0


def test_reward_equals_shd_difference():
    rng = np.random.default_rng(2024)
    failures = 0
    for _ in range(10_000):
        n = int(rng.integers(3, 6))
        truth = generate_er_dag(n, 0.3, rng)
        # estimates need not be acyclic
        est = Dag((rng.random((n, n)) < 0.3) & ~np.eye(n, dtype=bool)) if rng.random() < 0.5 else generate_er_dag(n, 0.3, rng)
        op = random_valid_op(est, rng)
        if reward(op, truth) != shd(truth, est) - shd(truth, apply_op(est, op)):
            failures += 1
    assert failures == 0


def test_history_encoding_layout():
    h = EpisodeHistory(3, 5, scale=20.0)
    assert np.array_equal(encode_history(h), np.zeros(65))
    h.record_observation(0, np.array([20.0, 0.0, 10.0]))
    h.record_action(0, 0, EdgeOp("add", 0, 1))
    enc = encode_history(h)
    assert enc[:3].tolist() == [1.0, 0.0, 0.5]
    assert enc[3:7].tolist() == [1, 0, 0, 0]
    assert enc[7:13].tolist() == [1, 0, 0, 0, 0, 0]
    assert not enc[13:].any()
    h.record_action(1, 3, EdgeOp("remove", 2, 1))
    assert enc is not h.encoded
    assert h.encoded[13 + 3 + 3] == 1.0
    assert h.encoded[13 + 7 + 5] == -1.0


def make_env(n=3, horizon=5, fclass=None, seed=0, graphs=None, **kw):
    graphs = graphs if graphs is not None else enumerate_all_dags(n)
    return CausalDiscoveryEnv(n, horizon, graphs, fclass, rng=np.random.default_rng(seed), **kw)


def test_reset_state():
    env = make_env()
    h = env.reset()
    assert h.shape == (65,) and env.obs_dim == 65
    assert env.estimate.num_edges == 0
    assert not h.any()  # linear class: first observation is zero, no actions yet
    assert env.truth.is_acyclic()


def test_reset_needs_graphs():
    env = CausalDiscoveryEnv(3, 5, graphs=[])
    with pytest.raises(ConfigurationError):
        env.reset()
    with pytest.raises(ConfigurationError):
        CausalDiscoveryEnv(3, 0)


def test_nothing_void_step():
    env = make_env()
    env.reset()
    h, r, done = env.step((3, 0))
    assert r == 0 and not done and env.estimate.num_edges == 0
    assert h[3 + 3] == 1.0  # "nothing" slot of the one-hot


def test_intervene_and_add():
    truth = Dag.from_edges(3, [(0, 1)])
    env = make_env(graphs=[truth], record_trace=True)
    env.reset()
    h, r, _ = env.step((0, encode_structural(EdgeOp("add", 0, 1), 3)))
    assert r == 1
    assert env.last_observation[0] == 20.0
    # the post-step observation lands in block 1, scaled by 1/c
    assert h[block_size(3)] == 1.0
    rec = env.trace[0]
    assert rec["intervention"] == 0 and rec["structural"] == "add(0->1)" and rec["reward"] == 1
    assert rec["estimate"] == "010000000"


def test_reward_uses_observational_truth():
    # do(X1) cuts 0->1 from the intervened model, yet adding it is still rewarded
    truth = Dag.from_edges(3, [(0, 1)])
    env = make_env(graphs=[truth])
    env.reset()
    _, r, _ = env.step((1, encode_structural(EdgeOp("add", 0, 1), 3)))
    assert r == 1


def test_masked_and_out_of_range_actions():
    env = make_env()
    env.reset()
    with pytest.raises(MaskedActionError):
        env.step((3, encode_structural(EdgeOp("remove", 0, 1), 3)))
    env.step((3, 1))
    with pytest.raises(MaskedActionError):
        env.step((3, 1))
    with pytest.raises(IndexError):
        env.step((4, 0))
    with pytest.raises(IndexError):
        env.step((0, 13))


def test_done_after_exactly_horizon_steps():
    rng = np.random.default_rng(5)
    for horizon in (1, 5, 8):
        env = make_env(n=4, horizon=horizon, seed=horizon)
        for _ in range(20):
            env.reset()
            dones = []
            while not env.done:
                a_st = int(rng.choice(np.flatnonzero(env.mask)))
                dones.append(env.step((int(rng.integers(5)), a_st))[2])
            assert dones == [False] * (horizon - 1) + [True]
        with pytest.raises(RuntimeError):
            env.step((4, 0))


def test_masked_rollouts_never_violate():
    env = make_env(n=4, horizon=8, seed=1)
    rng = np.random.default_rng(1)
    env.reset()
    for _ in range(10_000):
        if env.done:
            env.reset()
        before = env.estimate
        op = decode_structural(int(rng.choice(np.flatnonzero(env.mask))), 4)
        if op.kind == "add":
            assert not before.adj[op.i, op.j]
        elif op.kind == "remove":
            assert before.adj[op.i, op.j]
        env.step((int(rng.integers(5)), encode_structural(op, 4)))


def test_episode_return_bounded_by_missing_edges():
    env = make_env(n=4, horizon=8, seed=2)
    rng = np.random.default_rng(2)
    for _ in range(500):
        env.reset()
        total = 0
        while not env.done:
            total += env.step((int(rng.integers(5)), int(rng.choice(np.flatnonzero(env.mask)))))[1]
        assert total <= env.truth.num_edges
        assert total == env.truth.num_edges - shd(env.truth, env.estimate)


def test_transition_determinism():
    outs = []
    for _ in range(2):
        env = make_env(n=4, horizon=8, fclass=FunctionClass("linear_noise"), seed=11)
        env.reset()
        outs.append([env.step((1, 2)), env.step((4, 0))])
    for (h1, r1, d1), (h2, r2, d2) in zip(*outs):
        assert np.array_equal(h1, h2) and r1 == r2 and d1 == d2


def test_blocks_beyond_step_are_zero():
    env = make_env(n=3, horizon=5, fclass=FunctionClass("linear_noise"), seed=3)
    h = env.reset()
    b = block_size(3)
    assert h[:3].any() and not h[3:].any()
    for t in range(4):
        h = env.step((t % 4, 0))[0]
        assert not h[(t + 2) * b:].any()


def test_reset_with_explicit_scm_and_trace_file(tmp_path):
    env = CausalDiscoveryEnv(5, 3, rng=np.random.default_rng(0), record_trace=True)
    env.reset(scm=preset_scm("eq7"))
    env.step((3, 0))
    env.step((5, 0))
    env.write_trace(tmp_path / "t.jsonl")
    recs = [json.loads(line) for line in (tmp_path / "t.jsonl").read_text().splitlines()]
    assert len(recs) == 2
    assert recs[0]["observation"] == pytest.approx([60.72608, 78.752, 27.6, 20.0, 0.0])
    assert recs[1]["intervention"] is None and recs[1]["observation"] == [0.0] * 5
    with pytest.raises(ConfigurationError):
        env.reset(scm=sample_scm(Dag.empty(3), FunctionClass(), np.random.default_rng(0)))
