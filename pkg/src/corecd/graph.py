"""Directed graphs over labelled nodes, SHD, DAG generation and graph datasets."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAX_ENUMERATION_NODES = 5
DATASET_MAGIC = "corecd-dataset v1"

# n <= 4 is enumerated exhaustively (25 / 543 graphs)
MAX_EXHAUSTIVE_DATASET_NODES = 4

# Draw budget for ER datasets, as a multiple of the requested unique count.
# Collisions are frequent at n=5 (16000 unique graphs need ~1.6M draws).
DEFAULT_DRAW_FACTOR = 200


class GraphError(ValueError):
    """Malformed graph (wrong shape, self-loops, cycles where forbidden)."""


class DimensionError(ValueError):
    pass


class CapabilityError(ValueError):
    pass


class DatasetExhaustedError(RuntimeError):
    def __init__(self, requested: int, found: int, draws: int):
        super().__init__(
            f"only found {found} unique graphs out of {requested} requested after {draws} draws"
        )
        self.requested = requested
        self.found = found
        self.draws = draws


class DatasetFormatError(ValueError):
    def __init__(self, message: str, lineno: int | None = None):
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)
        self.lineno = lineno


class DatasetSchemaError(DatasetFormatError):
    pass


class DatasetValidationError(DatasetFormatError):
    pass


@dataclass(frozen=True, eq=False)
class Dag:
    """Directed graph stored as an ``n x n`` boolean adjacency, ``adj[i, j]`` meaning ``i -> j``.

    Despite the name, only self-loops are forbidden at construction time;
    policy estimates can be cyclic. Use :meth:`is_acyclic` where it matters.
    """

    adj: np.ndarray

    def __post_init__(self):
        adj = np.array(self.adj, dtype=bool)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1] or adj.shape[0] < 1:
            raise GraphError(f"adjacency must be a non-empty square matrix, got shape {adj.shape}")
        if adj.diagonal().any():
            raise GraphError("self-loops are not allowed")
        adj.setflags(write=False)
        object.__setattr__(self, "adj", adj)

    @classmethod
    def empty(cls, n: int) -> Dag:
        return cls(np.zeros((n, n), dtype=bool))

    @classmethod
    def from_edges(cls, n: int, edges) -> Dag:
        adj = np.zeros((n, n), dtype=bool)
        for i, j in edges:
            adj[i, j] = True
        return cls(adj)

    @classmethod
    def from_bitstring(cls, bits: str, n: int | None = None) -> Dag:
        if n is None:
            n = math.isqrt(len(bits))
        if len(bits) != n * n or set(bits) - {"0", "1"}:
            raise GraphError(f"expected a 0/1 string of length {n * n}, got {bits!r}")
        adj = np.frombuffer(bits.encode("ascii"), dtype=np.uint8) == ord("1")
        return cls(adj.reshape(n, n))

    @property
    def n(self) -> int:
        return self.adj.shape[0]

    @property
    def num_edges(self) -> int:
        return int(self.adj.sum())

    def edges(self) -> list[tuple[int, int]]:
        return [(int(i), int(j)) for i, j in zip(*np.nonzero(self.adj))]

    def parents(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.adj[:, j])

    def topological_order(self) -> list[int] | None:
        """Kahn's algorithm; ``None`` if the graph has a cycle."""
        indeg = self.adj.sum(axis=0).astype(int)
        ready = [i for i in range(self.n) if indeg[i] == 0]
        order = []
        while ready:
            i = ready.pop(0)
            order.append(i)
            for j in np.flatnonzero(self.adj[i]):
                indeg[j] -= 1
                if indeg[j] == 0:
                    ready.append(int(j))
        return order if len(order) == self.n else None

    def is_acyclic(self) -> bool:
        return self.topological_order() is not None

    def to_bitstring(self) -> str:
        return "".join("1" if b else "0" for b in self.adj.ravel())

    def remove_incoming(self, j: int) -> Dag:
        adj = self.adj.copy()
        adj[:, j] = False
        return Dag(adj)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dag):
            return NotImplemented
        return self.adj.shape == other.adj.shape and bool(np.array_equal(self.adj, other.adj))

    def __hash__(self) -> int:
        return hash((self.n, self.adj.tobytes()))

    def __repr__(self) -> str:
        return f"Dag(n={self.n}, edges={self.edges()})"


def shd(a: Dag, b: Dag) -> int:
    """Structural Hamming distance: number of directed edges present in exactly one graph."""
    if a.n != b.n:
        raise DimensionError(f"graphs have different sizes ({a.n} vs {b.n})")
    return int(np.count_nonzero(a.adj != b.adj))


def _offdiag_slots(n: int) -> np.ndarray:
    """Flat (row-major) indices of the off-diagonal entries, in order."""
    return np.flatnonzero(~np.eye(n, dtype=bool))


def _acyclic_mask(adjs: np.ndarray) -> np.ndarray:
    """Vectorised acyclicity test for a stack of adjacency matrices.

    A directed graph on n nodes is acyclic iff its adjacency is nilpotent, i.e.
    repeatedly pruning sink-free rows empties the graph within n rounds.
    """
    n = adjs.shape[-1]
    alive = np.ones(adjs.shape[:-1], dtype=bool)
    a = adjs.astype(bool)
    for _ in range(n):
        # a node is removable once none of its (alive) children remain
        has_child = (a & alive[:, None, :]).any(axis=2)
        alive &= has_child
    return ~alive.any(axis=1)


def enumerate_all_dags(n: int) -> list[Dag]:
    """Every labelled DAG on ``n`` nodes, ordered lexicographically by flattened adjacency."""
    if n < 1:
        raise ValueError("n must be positive")
    if n > MAX_ENUMERATION_NODES:
        raise CapabilityError(
            f"exhaustive enumeration is limited to n <= {MAX_ENUMERATION_NODES}, got {n}"
        )
    slots = _offdiag_slots(n)
    m = len(slots)
    out: list[Dag] = []
    chunk = 1 << 16
    # first off-diagonal slot is the most significant bit, so counting up
    # walks the bitstrings in lexicographic order
    shifts = np.arange(m - 1, -1, -1, dtype=np.int64)
    for start in range(0, 1 << m, chunk):
        codes = np.arange(start, min(start + chunk, 1 << m), dtype=np.int64)
        bits = ((codes[:, None] >> shifts) & 1).astype(bool)
        adjs = np.zeros((len(codes), n * n), dtype=bool)
        adjs[:, slots] = bits
        adjs = adjs.reshape(-1, n, n)
        for adj in adjs[_acyclic_mask(adjs)]:
            out.append(Dag(adj))
    return out


def generate_er_dag(n: int, p: float, rng: np.random.Generator) -> Dag:
    """Erdős–Rényi DAG: random topological order, each forward edge kept with probability ``p``."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"edge probability must lie in [0, 1], got {p}")
    order = rng.permutation(n)
    upper = np.triu(rng.random((n, n)) < p, k=1)
    adj = np.zeros((n, n), dtype=bool)
    adj[np.ix_(order, order)] = upper
    return Dag(adj)


def _er_batch(n: int, p: float, size: int, rng: np.random.Generator) -> np.ndarray:
    """``size`` ER DAG adjacencies at once; same construction as :func:`generate_er_dag`."""
    order = np.argsort(rng.random((size, n)), axis=1)
    upper = (rng.random((size, n, n)) < p) & np.triu(np.ones((n, n), dtype=bool), k=1)
    rows = np.arange(size)[:, None, None]
    adj = np.zeros((size, n, n), dtype=bool)
    adj[rows, order[:, :, None], order[:, None, :]] = upper
    return adj


@dataclass(eq=False)
class GraphDataset:
    n: int
    train: list[Dag]
    test: list[Dag]
    edge_prob: float
    seed: int
    meta: dict = field(default_factory=dict)

    def split(self, name: str) -> list[Dag]:
        if name not in ("train", "test"):
            raise ValueError(f"unknown split {name!r}")
        return self.train if name == "train" else self.test

    def __eq__(self, other) -> bool:
        if not isinstance(other, GraphDataset):
            return NotImplemented
        return (
            self.n == other.n
            and self.edge_prob == other.edge_prob
            and self.seed == other.seed
            and self.train == other.train
            and self.test == other.test
        )

    def mean_edges(self, name: str) -> float:
        graphs = self.split(name)
        return float(np.mean([g.num_edges for g in graphs])) if graphs else 0.0


# Train/test sizes used for each graph size; n <= 4 take the full enumeration.
PAPER_SPLITS = {
    3: (19, 6),
    4: (401, 142),
    5: (15000, 1000),
    8: (90000, 1000),
    10: (100000, 1000),
}
PAPER_POOL_SIZES = {3: 25, 4: 543, 5: 16000, 8: 91000, 10: 101000}


def default_split(n: int) -> tuple[int, int]:
    if n in PAPER_SPLITS:
        return PAPER_SPLITS[n]
    if n <= MAX_EXHAUSTIVE_DATASET_NODES:
        total = len(enumerate_all_dags(n))
        test = max(1, round(total * 0.25))
        return total - test, test
    raise ValueError(f"no default split for n={n}; pass train/test sizes explicitly")


def build_dataset(
    n: int,
    total: int | None = None,
    split: tuple[int, int] | None = None,
    p: float = 0.2,
    seed: int = 0,
    draw_factor: int = DEFAULT_DRAW_FACTOR,
) -> GraphDataset:
    """Build a disjoint train/test split of unique DAGs.

    For ``n <= 4`` the pool is the full enumeration (``total`` is ignored);
    otherwise ER graphs are drawn until ``total`` unique ones are found. The
    pool is shuffled with ``seed`` and the first ``train + test`` graphs are
    split off.
    """
    if split is None:
        split = default_split(n)
    n_train, n_test = split
    if n_train < 0 or n_test < 0:
        raise ValueError("split sizes must be non-negative")
    rng = np.random.default_rng(seed)

    if n <= MAX_EXHAUSTIVE_DATASET_NODES:
        pool = enumerate_all_dags(n)
        if n_train + n_test > len(pool):
            raise DatasetExhaustedError(n_train + n_test, len(pool), 0)
    else:
        if total is None:
            total = n_train + n_test
        if n_train + n_test > total:
            raise ValueError(f"split {split} exceeds pool size {total}")
        pool = _unique_er_pool(n, p, total, rng, draw_factor)

    perm = rng.permutation(len(pool))
    shuffled = [pool[i] for i in perm]
    return GraphDataset(
        n=n,
        train=shuffled[:n_train],
        test=shuffled[n_train:n_train + n_test],
        edge_prob=float(p),
        seed=int(seed),
    )


def _unique_er_pool(
    n: int, p: float, total: int, rng: np.random.Generator, draw_factor: int
) -> list[Dag]:
    budget = draw_factor * total
    seen: set[bytes] = set()
    pool: list[Dag] = []
    draws = 0
    batch = 4096
    while len(pool) < total and draws < budget:
        size = min(batch, budget - draws)
        adjs = _er_batch(n, p, size, rng)
        draws += size
        for adj in adjs:
            key = np.packbits(adj).tobytes()
            if key in seen:
                continue
            seen.add(key)
            pool.append(Dag(adj))
            if len(pool) == total:
                break
    if len(pool) < total:
        raise DatasetExhaustedError(total, len(pool), draws)
    return pool


def save_dataset(ds: GraphDataset, path: str | Path) -> None:
    lines = [
        f"{DATASET_MAGIC} n={ds.n} p={ds.edge_prob!r} seed={ds.seed} "
        f"train={len(ds.train)} test={len(ds.test)}"
    ]
    lines += [g.to_bitstring() for g in ds.train]
    lines.append("---")
    lines += [g.to_bitstring() for g in ds.test]
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def _parse_header(line: str) -> dict:
    if not line.startswith(DATASET_MAGIC + " "):
        raise DatasetFormatError(f"missing '{DATASET_MAGIC}' header", 1)
    fields = {}
    for tok in line[len(DATASET_MAGIC) + 1:].split():
        key, sep, value = tok.partition("=")
        if not sep:
            raise DatasetFormatError(f"bad header token {tok!r}", 1)
        fields[key] = value
    missing = {"n", "p", "seed", "train", "test"} - fields.keys()
    if missing:
        raise DatasetFormatError(f"header lacks {sorted(missing)}", 1)
    try:
        return {
            "n": int(fields["n"]),
            "p": float(fields["p"]),
            "seed": int(fields["seed"]),
            "train": int(fields["train"]),
            "test": int(fields["test"]),
        }
    except ValueError as exc:
        raise DatasetFormatError(f"bad header value: {exc}", 1) from None


def load_dataset(path: str | Path) -> GraphDataset:
    try:
        text = Path(path).read_text(encoding="ascii")
    except UnicodeDecodeError as exc:
        raise DatasetFormatError(f"dataset files are ASCII only: {exc}") from None
    lines = text.splitlines()
    if not lines:
        raise DatasetFormatError("empty file", 1)
    hdr = _parse_header(lines[0])
    n = hdr["n"]
    expected = 1 + hdr["train"] + 1 + hdr["test"]
    if len(lines) < expected:
        raise DatasetFormatError(
            f"truncated file: expected {expected} lines, found {len(lines)}", len(lines) + 1
        )
    if len(lines) > expected:
        raise DatasetFormatError("unexpected trailing content", expected + 1)
    sep_line = 2 + hdr["train"]
    if lines[sep_line - 1] != "---":
        raise DatasetFormatError("expected '---' separator", sep_line)

    seen: set[str] = set()

    def parse(lineno: int) -> Dag:
        bits = lines[lineno - 1]
        if set(bits) - {"0", "1"}:
            raise DatasetFormatError(f"non-binary graph line {bits!r}", lineno)
        if len(bits) != n * n:
            raise DatasetSchemaError(f"graph has {len(bits)} bits, n={n} requires {n * n}", lineno)
        try:
            g = Dag.from_bitstring(bits, n)
        except GraphError as exc:
            raise DatasetValidationError(str(exc), lineno) from None
        if not g.is_acyclic():
            raise DatasetValidationError("graph is cyclic", lineno)
        if bits in seen:
            raise DatasetValidationError("duplicate graph", lineno)
        seen.add(bits)
        return g

    train = [parse(k) for k in range(2, sep_line)]
    test = [parse(k) for k in range(sep_line + 1, expected + 1)]
    return GraphDataset(n=n, train=train, test=test, edge_prob=hdr["p"], seed=hdr["seed"])
