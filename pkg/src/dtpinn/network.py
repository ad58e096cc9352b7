"""Fully connected tanh network with exact input derivatives via jets.

A jet stacks, for a batch of inputs, the network value together with first
and second directional derivatives along ``D`` input directions. Activations
are held as one array of shape (K, B, width) with K = 1 (value only),
1 + D (first order) or 1 + 2D (second order), so every affine layer is a
single GEMM. Reverse mode runs over the same stacked representation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._backend import kernels

HIDDEN_WIDTH = 50


@dataclass
class MlpParams:
    """Layer sizes plus a flat parameter vector.

    Layer ``i`` owns a weight matrix of shape (sizes[i+1], sizes[i]) followed
    by a bias of length sizes[i+1]; the flat layout is the concatenation in
    that order.
    """

    sizes: tuple
    theta: np.ndarray

    def __post_init__(self):
        self.sizes = tuple(int(s) for s in self.sizes)
        if self.theta.shape != (n_params(self.sizes),):
            raise ValueError("parameter vector does not match architecture")

    @property
    def dtype(self):
        return self.theta.dtype

    @property
    def depth(self):
        """Number of hidden layers."""
        return len(self.sizes) - 2

    def layers(self, theta=None):
        return unflatten(self.sizes, self.theta if theta is None else theta)

    def with_theta(self, theta):
        return MlpParams(self.sizes, theta)

    def astype(self, dtype):
        return MlpParams(self.sizes, self.theta.astype(dtype))


@dataclass
class JetCache:
    inputs: list = field(default_factory=list)   # stacked activations entering each layer
    pre: list = field(default_factory=list)      # stacked pre-activations of hidden layers
    tanh: list = field(default_factory=list)
    n_dir: int = 0
    order: int = 0


ForwardCache = JetCache


def architecture(d_in, depth=4, width=HIDDEN_WIDTH, d_out=1):
    return (d_in,) + (width,) * depth + (d_out,)


def n_params(sizes):
    return sum(sizes[i] * sizes[i + 1] + sizes[i + 1] for i in range(len(sizes) - 1))


def unflatten(sizes, theta):
    out = []
    pos = 0
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        W = theta[pos:pos + fan_in * fan_out].reshape(fan_out, fan_in)
        pos += fan_in * fan_out
        b = theta[pos:pos + fan_out]
        pos += fan_out
        out.append((W, b))
    return out


def init_weights(sizes, seed=0, dtype=np.float64) -> MlpParams:
    """Glorot-uniform weights and zero biases, drawn in fp64 then narrowed."""
    rng = np.random.default_rng(seed)
    parts = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        parts.append(rng.uniform(-bound, bound, size=fan_in * fan_out))
        parts.append(np.zeros(fan_out))
    return MlpParams(tuple(sizes), np.concatenate(parts).astype(dtype))


def _check(params, X):
    X = np.asarray(X)
    if X.ndim != 2 or X.shape[1] != params.sizes[0]:
        raise ValueError(f"expected inputs of shape (B, {params.sizes[0]}), got {X.shape}")
    if not np.all(np.isfinite(params.theta)):
        raise FloatingPointError("network parameters contain NaN or Inf")
    return np.ascontiguousarray(X, dtype=params.dtype)


def jet_forward(params: MlpParams, X, tangents=None, order=2):
    """Value and directional derivatives of the network output.

    ``tangents`` has shape (B, D, d_in) (or (D, d_in), shared by the batch).
    Returns ``(u, u1, u2, cache)`` with u of shape (B,), u1 and u2 of shape
    (B, D); u2 is None when ``order`` < 2 and both are None with no tangents.
    """
    X = _check(params, X)
    B = X.shape[0]
    if tangents is None:
        D, order = 0, 0
    else:
        tangents = np.asarray(tangents, dtype=params.dtype)
        if tangents.ndim == 2:
            tangents = np.broadcast_to(tangents[:, None, :], (tangents.shape[0], B, X.shape[1]))
        else:
            tangents = tangents.transpose(1, 0, 2)
        D = tangents.shape[0]
    K = 1 + D * order
    J = np.zeros((K, B, X.shape[1]), dtype=params.dtype)
    J[0] = X
    if D:
        J[1:1 + D] = tangents
    cache = JetCache(n_dir=D, order=order)
    layers = params.layers()
    for li, (W, b) in enumerate(layers):
        cache.inputs.append(J)
        Z = (J.reshape(-1, J.shape[-1]) @ W.T).reshape(K, B, -1)
        Z[0] += b
        if li == len(layers) - 1:
            J = Z
            break
        A = np.empty_like(Z)
        t = np.tanh(Z[0])
        kernels.jet_tanh_forward(Z, D, order, A, t)
        cache.pre.append(Z)
        cache.tanh.append(t)
        J = A
    u = J[0, :, 0]
    u1 = J[1:1 + D, :, 0].T if D else None
    u2 = J[1 + D:, :, 0].T if order == 2 else None
    return u, u1, u2, cache


def jet_backward(params: MlpParams, cache: JetCache, gu=None, gu1=None, gu2=None):
    """Gradient w.r.t. the flat parameters of <gu,u> + <gu1,u1> + <gu2,u2>."""
    D, order = cache.n_dir, cache.order
    K = 1 + D * order
    B = cache.inputs[0].shape[1]
    dtype = params.dtype
    G = np.zeros((K, B, 1), dtype=dtype)
    if gu is not None:
        G[0, :, 0] = gu
    if gu1 is not None:
        if D == 0:
            raise ValueError("first-order cotangent given but jets carry no directions")
        G[1:1 + D, :, 0] = np.asarray(gu1).reshape(B, D).T
    if gu2 is not None:
        if order < 2:
            raise ValueError("second-order cotangent given but jets are first order")
        G[1 + D:, :, 0] = np.asarray(gu2).reshape(B, D).T

    layers = params.layers()
    grads = []
    for li in range(len(layers) - 1, -1, -1):
        W, _ = layers[li]
        Ain = cache.inputs[li]
        gW = G.reshape(-1, G.shape[-1]).T @ Ain.reshape(-1, Ain.shape[-1])
        gb = G[0].sum(axis=0)
        grads.append((gW, gb))
        if li == 0:
            break
        Gin = (G.reshape(-1, G.shape[-1]) @ W).reshape(K, B, -1)
        # back through tanh of layer li-1
        GZ = np.empty_like(Gin)
        kernels.jet_tanh_backward(Gin, cache.pre[li - 1], cache.tanh[li - 1], D, order, GZ)
        G = GZ
    grads.reverse()
    return np.concatenate([np.concatenate([gW.ravel(), gb]) for gW, gb in grads])


def forward(params: MlpParams, X):
    """Network values at the rows of X, and the cache for :func:`backward_weights`."""
    u, _, _, cache = jet_forward(params, X)
    return u, cache


def predict(params: MlpParams, X):
    """Network values only; no cache, activations updated in place."""
    X = _check(params, X)
    layers = params.layers()
    h = X
    for W, b in layers[:-1]:
        h = h @ W.T
        h += b
        np.tanh(h, out=h)
    W, b = layers[-1]
    return (h @ W.T + b)[:, 0]


def backward_weights(params: MlpParams, cache: JetCache, cotangent):
    return jet_backward(params, cache, gu=cotangent)


def laplacian_jets(params: MlpParams, X, n_space=None):
    """Sum of second derivatives along the first ``n_space`` coordinate axes."""
    X = np.asarray(X)
    n_space = X.shape[1] if n_space is None else n_space
    tangents = np.eye(X.shape[1])[:n_space]
    u, u1, u2, _ = jet_forward(params, X, tangents, order=2)
    return u2.sum(axis=1)


def time_derivative_jets(params: MlpParams, X_t):
    """Derivative along the last input coordinate (time)."""
    X_t = np.asarray(X_t)
    e_t = np.zeros((1, X_t.shape[1]))
    e_t[0, -1] = 1.0
    _, u1, _, _ = jet_forward(params, X_t, e_t, order=1)
    return u1[:, 0]


def backward_through_jets(params: MlpParams, cache: JetCache, gu=None, gu1=None, gu2=None):
    return jet_backward(params, cache, gu, gu1, gu2)


def write_checkpoint(path, params: MlpParams):
    """Text checkpoint: architecture header, then each layer's W (row-major) and b."""
    with open(path, "w") as fh:
        fh.write("mlp " + " ".join(str(s) for s in params.sizes) + f" {params.dtype.name}\n")
        for W, b in params.layers():
            fh.write(f"W {W.shape[0]} {W.shape[1]}\n")
            for row in W:
                fh.write(" ".join(f"{float(v):.17g}" for v in row) + "\n")
            fh.write(f"b {b.shape[0]}\n")
            fh.write(" ".join(f"{float(v):.17g}" for v in b) + "\n")


def read_checkpoint(path) -> MlpParams:
    with open(path) as fh:
        head = fh.readline().split()
        if not head or head[0] != "mlp":
            raise ValueError(f"{path}: not a network checkpoint")
        sizes = tuple(int(t) for t in head[1:-1])
        dtype = np.dtype(head[-1])
        parts = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            tag, r, c = fh.readline().split()
            if tag != "W" or (int(r), int(c)) != (fan_out, fan_in):
                raise ValueError(f"{path}: unexpected weight block header")
            parts.extend(float(v) for _ in range(fan_out) for v in fh.readline().split())
            tag, n = fh.readline().split()
            if tag != "b" or int(n) != fan_out:
                raise ValueError(f"{path}: unexpected bias block header")
            parts.extend(float(v) for v in fh.readline().split())
    return MlpParams(sizes, np.array(parts, dtype=np.float64).astype(dtype))
