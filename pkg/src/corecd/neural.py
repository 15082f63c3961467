"""Small ReLU MLPs with hand-written backprop and an Adam optimizer.

All parameters of a network live in one flat vector; per-layer weight and
bias arrays are views into it, so the optimizer updates everything at once.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


class NetworkConfigError(ValueError):
    pass


class DimensionError(ValueError):
    pass


class TrainingError(RuntimeError):
    def __init__(self, message: str, layer: int | None = None):
        super().__init__(message if layer is None else f"{message} (layer {layer})")
        self.layer = layer


def _views(flat: np.ndarray, sizes: list[int]) -> list[tuple[np.ndarray, np.ndarray]]:
    layers = []
    off = 0
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        w = flat[off:off + fan_out * fan_in].reshape(fan_out, fan_in)
        off += fan_out * fan_in
        b = flat[off:off + fan_out]
        off += fan_out
        layers.append((w, b))
    return layers


def num_params(sizes: list[int]) -> int:
    return sum(o * i + o for i, o in zip(sizes[:-1], sizes[1:]))


@dataclass(eq=False)
class MlpParams:
    sizes: list[int]
    flat: np.ndarray
    layers: list = field(init=False, repr=False)

    def __post_init__(self):
        self.sizes = [int(s) for s in self.sizes]
        if self.flat.shape != (num_params(self.sizes),):
            raise NetworkConfigError("flat parameter vector does not match layer sizes")
        self.layers = _views(self.flat, self.sizes)

    @property
    def in_dim(self) -> int:
        return self.sizes[0]

    @property
    def out_dim(self) -> int:
        return self.sizes[-1]

    def copy(self) -> MlpParams:
        return MlpParams(list(self.sizes), self.flat.copy())

    def load_from(self, other: MlpParams) -> None:
        """Overwrite this network's parameters in place."""
        if other.sizes != self.sizes:
            raise DimensionError(f"layer sizes differ: {other.sizes} vs {self.sizes}")
        self.flat[:] = other.flat

    def grad_views(self, grad_flat: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
        return _views(grad_flat, self.sizes)


def init_params(layer_sizes, rng: np.random.Generator, dtype=np.float64) -> MlpParams:
    """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), zero biases."""
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2:
        raise NetworkConfigError("need at least an input and an output size")
    if any(s <= 0 for s in sizes):
        raise NetworkConfigError(f"layer sizes must be positive, got {sizes}")
    p = MlpParams(sizes, np.zeros(num_params(sizes), dtype=dtype))
    for w, _ in p.layers:
        bound = np.sqrt(1.0 / w.shape[1])
        w[...] = rng.uniform(-bound, bound, size=w.shape)
    return p


def zero_params(layer_sizes, dtype=np.float64) -> MlpParams:
    sizes = [int(s) for s in layer_sizes]
    return MlpParams(sizes, np.zeros(num_params(sizes), dtype=dtype))


def _check_input(p: MlpParams, x: np.ndarray) -> None:
    if x.shape[-1] != p.in_dim:
        raise DimensionError(f"input has width {x.shape[-1]}, network expects {p.in_dim}")


def forward_cached(p: MlpParams, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Forward pass that also returns the input of every layer (post-activation)."""
    x = np.asarray(x, dtype=p.flat.dtype)
    _check_input(p, x)
    acts = [x]
    h = x
    last = len(p.layers) - 1
    for k, (w, b) in enumerate(p.layers):
        h = h @ w.T + b
        if k < last:
            np.maximum(h, 0.0, out=h)
            acts.append(h)
    return h, acts


def forward(p: MlpParams, x: np.ndarray) -> np.ndarray:
    return forward_cached(p, x)[0]


def backward(
    p: MlpParams,
    x: np.ndarray,
    grad_out: np.ndarray,
    cache: list[np.ndarray] | None = None,
    out: np.ndarray | None = None,
) -> np.ndarray:
    """Gradient of ``sum(forward(p, x) * grad_out)`` with respect to all parameters.

    Works on a single input or a batch (rows); batch gradients are summed.
    Returns a flat vector laid out like ``p.flat``. Pass ``cache`` from
    :func:`forward_cached` to skip recomputing the forward pass.
    """
    x = np.asarray(x, dtype=p.flat.dtype)
    _check_input(p, x)
    if cache is None:
        _, cache = forward_cached(p, x)
    delta = np.asarray(grad_out, dtype=p.flat.dtype)
    if delta.shape[-1] != p.out_dim:
        raise DimensionError(f"grad_out has width {delta.shape[-1]}, network outputs {p.out_dim}")
    if delta.ndim == 1:
        delta = delta[None, :]
        cache = [a[None, :] if a.ndim == 1 else a for a in cache]
    grad = np.zeros_like(p.flat) if out is None else out
    gviews = p.grad_views(grad)
    for k in range(len(p.layers) - 1, -1, -1):
        a_prev = cache[k]
        gw, gb = gviews[k]
        np.matmul(delta.T, a_prev, out=gw)
        delta.sum(axis=0, out=gb)
        if k > 0:
            delta = delta @ p.layers[k][0]
            delta *= cache[k] > 0
    return grad


@dataclass(eq=False)
class OptimizerState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    scratch: np.ndarray | None = field(default=None, repr=False)


# moments below this are flushed to zero now and then; left alone, rows that
# never receive gradient decay into subnormals, which are very slow on x86
_FLUSH_BELOW = 1e-30
_FLUSH_EVERY = 500


def init_optimizer(p: MlpParams, lr: float = 1e-4, beta1: float = 0.9,
                   beta2: float = 0.999, eps: float = 1e-8) -> OptimizerState:
    return OptimizerState(np.zeros_like(p.flat), np.zeros_like(p.flat), 0, lr, beta1, beta2, eps)


def _first_bad_layer(p: MlpParams, grads: np.ndarray) -> int:
    for k, (gw, gb) in enumerate(p.grad_views(grads)):
        if not (np.isfinite(gw).all() and np.isfinite(gb).all()):
            return k
    return -1


# elementwise work is done in slices this long so the temporaries stay in cache
_CHUNK = 1 << 15


def optimizer_step(p: MlpParams, grads: np.ndarray, st: OptimizerState) -> tuple[MlpParams, OptimizerState]:
    """Adam update with bias correction, applied in place."""
    if grads.shape != p.flat.shape:
        raise DimensionError("gradient vector does not match parameters")
    if not np.isfinite(grads).all():
        raise TrainingError("non-finite gradient", _first_bad_layer(p, grads))
    size = p.flat.size
    if st.scratch is None or st.scratch.shape != (min(size, _CHUNK),):
        st.scratch = np.empty(min(size, _CHUNK), dtype=p.flat.dtype)
    st.t += 1
    b1, b2 = st.beta1, st.beta2
    v_scale = 1.0 / (1.0 - b2 ** st.t)
    step = st.lr / (1.0 - b1 ** st.t)
    flush = st.t % _FLUSH_EVERY == 0
    for lo in range(0, size, _CHUNK):
        hi = min(lo + _CHUNK, size)
        g, m, v, w = grads[lo:hi], st.m[lo:hi], st.v[lo:hi], p.flat[lo:hi]
        tmp = st.scratch[:hi - lo]
        m *= b1
        np.multiply(g, 1.0 - b1, out=tmp)
        m += tmp
        v *= b2
        np.square(g, out=tmp)
        tmp *= 1.0 - b2
        v += tmp
        np.multiply(v, v_scale, out=tmp)
        np.sqrt(tmp, out=tmp)
        tmp += st.eps
        np.divide(m, tmp, out=tmp)
        tmp *= step
        w -= tmp
        if flush:
            m[np.abs(m) < _FLUSH_BELOW] = 0.0
            v[v < _FLUSH_BELOW] = 0.0
    return p, st


CKPT_VERSION = "corecd-ckpt v1"


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, nets: dict, opts: dict | None = None, meta: dict | None = None) -> None:
    """Write named networks, optimizer states and JSON metadata to one ``.npz`` container."""
    opts = opts or {}
    header = {"version": CKPT_VERSION, "nets": {}, "opts": {}, "meta": meta or {}}
    arrays = {}
    for name, p in nets.items():
        header["nets"][name] = p.sizes
        arrays[f"net/{name}"] = p.flat
    for name, st in opts.items():
        header["opts"][name] = {"t": st.t, "lr": st.lr, "beta1": st.beta1,
                                "beta2": st.beta2, "eps": st.eps}
        arrays[f"opt/{name}/m"] = st.m
        arrays[f"opt/{name}/v"] = st.v
    arrays["header"] = np.frombuffer(json.dumps(header).encode("utf-8"), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> tuple[dict, dict, dict]:
    try:
        with np.load(path, allow_pickle=False) as data:
            header = json.loads(bytes(data["header"]).decode("utf-8"))
            if header.get("version") != CKPT_VERSION:
                raise CheckpointError(f"unsupported checkpoint version {header.get('version')!r}")
            nets = {name: MlpParams(sizes, data[f"net/{name}"].copy())
                    for name, sizes in header["nets"].items()}
            opts = {name: OptimizerState(data[f"opt/{name}/m"].copy(), data[f"opt/{name}/v"].copy(), **hp)
                    for name, hp in header["opts"].items()}
    except (OSError, KeyError, ValueError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return nets, opts, header["meta"]
