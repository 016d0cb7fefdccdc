"""Minimal reverse-mode automatic differentiation and the MLP dynamics nets.

The operator set is exactly what the solvers and training loops need:
elementwise arithmetic, matmul, tanh, reductions, slicing/reshape and a
fused softmax cross-entropy.  Values are float64 numpy arrays.  A Tape
records nodes in creation order (a topological order by construction),
so the reverse sweep is a single pass over the list.

Code written against the module-level helpers (tanh, ssum, ...) and the
arithmetic operators runs unchanged on plain numpy arrays and on Var
nodes; that is what lets one solver implementation serve both plain
integration and backprop-through-the-solver training.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import BadDimsError, DimMismatchError, NotScalarLossError

__all__ = [
    "Var",
    "Tape",
    "Mlp",
    "tanh",
    "ssum",
    "smean",
    "dot_sum",
    "sq_error",
    "softmax_cross_entropy",
    "mlp_init",
    "mlp_forward",
    "forward_layers",
    "unflatten_params",
    "param_count",
    "grad",
    "finite_diff_check",
    "save_checkpoint",
    "load_checkpoint",
]

_TAPE = None


class Tape:
    """Creation-ordered record of one forward computation."""

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        global _TAPE
        self._prev = _TAPE
        _TAPE = self
        return self

    def __exit__(self, *exc):
        global _TAPE
        _TAPE = self._prev
        return False

    def backward(self, loss):
        """Reverse sweep seeding d(loss)/d(loss) = 1; visits each node once."""
        if not isinstance(loss, Var) or np.size(loss.value) != 1:
            raise NotScalarLossError("loss must be a scalar Var")
        loss.grad = np.ones_like(loss.value)
        for node in reversed(self.nodes):
            g = node.grad
            if g is None:
                continue
            for parent, vjp in zip(node._parents, node._vjps):
                pg = vjp(g)
                parent.grad = pg if parent.grad is None else parent.grad + pg


class Var:
    """A node in the computation graph holding a float64 ndarray value."""

    __slots__ = ("value", "grad", "_parents", "_vjps")
    # keep numpy from absorbing us in mixed ndarray (op) Var expressions
    __array_ufunc__ = None

    def __init__(self, value, parents=(), vjps=()):
        self.value = np.asarray(value, dtype=float)
        self.grad = None
        self._parents = parents
        self._vjps = vjps
        if parents and _TAPE is not None:
            _TAPE.nodes.append(self)

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var({self.value!r})"

    # --- arithmetic ---

    def __add__(self, other):
        if isinstance(other, Var):
            return Var(
                self.value + other.value,
                (self, other),
                (lambda g: _unbroadcast(g, self.value.shape),
                 lambda g: _unbroadcast(g, other.value.shape)),
            )
        return Var(self.value + other, (self,),
                   (lambda g: _unbroadcast(g, self.value.shape),))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Var):
            return Var(
                self.value - other.value,
                (self, other),
                (lambda g: _unbroadcast(g, self.value.shape),
                 lambda g: _unbroadcast(-g, other.value.shape)),
            )
        return Var(self.value - other, (self,),
                   (lambda g: _unbroadcast(g, self.value.shape),))

    def __rsub__(self, other):
        return Var(other - self.value, (self,),
                   (lambda g: _unbroadcast(-g, self.value.shape),))

    def __neg__(self):
        return Var(-self.value, (self,), (lambda g: -g,))

    def __mul__(self, other):
        if isinstance(other, Var):
            sv, ov = self.value, other.value
            return Var(
                sv * ov,
                (self, other),
                (lambda g: _unbroadcast(g * ov, sv.shape),
                 lambda g: _unbroadcast(g * sv, ov.shape)),
            )
        return Var(self.value * other, (self,),
                   (lambda g: _unbroadcast(g * other, self.value.shape),))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Var):
            sv, ov = self.value, other.value
            return Var(
                sv / ov,
                (self, other),
                (lambda g: _unbroadcast(g / ov, sv.shape),
                 lambda g: _unbroadcast(-g * sv / (ov * ov), ov.shape)),
            )
        return Var(self.value / other, (self,),
                   (lambda g: _unbroadcast(g / other, self.value.shape),))

    def __rtruediv__(self, other):
        sv = self.value
        return Var(other / sv, (self,),
                   (lambda g: _unbroadcast(-g * other / (sv * sv), sv.shape),))

    def __pow__(self, exponent):
        sv = self.value
        return Var(sv ** exponent, (self,),
                   (lambda g: g * exponent * sv ** (exponent - 1),))

    def __matmul__(self, other):
        ov = other.value if isinstance(other, Var) else np.asarray(other, float)
        sv = self.value
        out = sv @ ov

        def d_left(g):
            if sv.ndim == 1:
                return g @ ov.T if ov.ndim == 2 else g * ov
            if ov.ndim == 1:  # matrix @ vector
                return np.outer(g, ov)
            return g @ ov.T

        def d_right(g):
            if sv.ndim == 1:
                return np.outer(sv, g) if ov.ndim == 2 else g * sv
            return sv.T @ g

        if isinstance(other, Var):
            return Var(out, (self, other), (d_left, d_right))
        return Var(out, (self,), (d_left,))

    def __rmatmul__(self, other):
        sv = self.value
        ov = np.asarray(other, float)
        out = ov @ sv

        def d_right(g):
            if ov.ndim == 1:
                return np.outer(ov, g) if sv.ndim == 2 else g * ov
            return ov.T @ g

        return Var(out, (self,), (d_right,))

    # --- shaping ---

    def __getitem__(self, idx):
        sv = self.value

        def vjp(g):
            out = np.zeros_like(sv)
            out[idx] = g
            return out

        return Var(sv[idx], (self,), (vjp,))

    def reshape(self, *shape):
        sv = self.value
        return Var(sv.reshape(*shape), (self,), (lambda g: g.reshape(sv.shape),))

    # --- nonlinearities / reductions ---

    def tanh(self):
        out = np.tanh(self.value)
        return Var(out, (self,), (lambda g: g * (1.0 - out * out),))

    def sum(self):
        sv = self.value
        return Var(np.sum(sv), (self,), (lambda g: g * np.ones_like(sv),))

    def mean(self):
        sv = self.value
        n = sv.size
        return Var(np.mean(sv), (self,), (lambda g: (g / n) * np.ones_like(sv),))


def _unbroadcast(g, shape):
    """Sum a broadcast gradient back down to the original shape."""
    g = np.asarray(g)
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# --- generic helpers (work on Var and ndarray alike) ---

def tanh(x):
    return x.tanh() if isinstance(x, Var) else np.tanh(x)


def ssum(x):
    return x.sum() if isinstance(x, Var) else np.sum(x)


def smean(x):
    return x.mean() if isinstance(x, Var) else np.mean(x)


def dot_sum(x, w):
    """sum(x * w) with constant weights w; the seed of one VJP sweep."""
    if isinstance(x, Var):
        sv = x.value
        return Var(np.sum(sv * w), (x,), (lambda g: g * w,))
    return np.sum(x * w)


def sq_error(x, target):
    """sum((x - target)**2) against a constant target, fused."""
    if isinstance(x, Var):
        diff = x.value - target
        return Var(np.sum(diff * diff), (x,), (lambda g: g * 2.0 * diff,))
    diff = x - target
    return np.sum(diff * diff)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy of rows of logits against integer labels."""
    lv = logits.value if isinstance(logits, Var) else logits
    labels = np.asarray(labels)
    if lv.ndim != 2 or len(labels) != lv.shape[0]:
        raise DimMismatchError("logits must be (n, classes) matching labels")
    shifted = lv - lv.max(axis=1, keepdims=True)
    log_z = np.log(np.sum(np.exp(shifted), axis=1))
    n = lv.shape[0]
    value = np.mean(log_z - shifted[np.arange(n), labels])
    if not isinstance(logits, Var):
        return value

    def vjp(g):
        p = np.exp(shifted - log_z[:, None])
        p[np.arange(n), labels] -= 1.0
        return g * p / n

    return Var(value, (logits,), (vjp,))


# --- MLP ---

@dataclass
class Mlp:
    """Fully-connected net: tanh on hidden layers, identity on the output."""

    dims: list
    weights: list
    biases: list

    def flat_params(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b)
        return np.concatenate(parts)

    def set_flat_params(self, flat: np.ndarray) -> None:
        layers = unflatten_params(self.dims, np.asarray(flat, float))
        self.weights = [w for w, _ in layers]
        self.biases = [b for _, b in layers]


def param_count(dims) -> int:
    return sum(din * dout + dout for din, dout in zip(dims[:-1], dims[1:]))


def mlp_init(dims, seed: int) -> Mlp:
    """Weights uniform in [-sqrt(1/d_in), sqrt(1/d_in)], biases zero.

    Each layer draws from its own seeded stream so adding or resizing a
    layer leaves the others' initial values unchanged.
    """
    dims = list(dims)
    if len(dims) < 2 or any(d <= 0 for d in dims):
        raise BadDimsError(f"need >= 2 positive dims, got {dims}")
    weights, biases = [], []
    for i, (din, dout) in enumerate(zip(dims[:-1], dims[1:])):
        rng = np.random.default_rng([seed, i])
        bound = np.sqrt(1.0 / din)
        weights.append(rng.uniform(-bound, bound, size=(din, dout)))
        biases.append(np.zeros(dout))
    return Mlp(dims=dims, weights=weights, biases=biases)


def unflatten_params(dims, flat):
    """Split a flat vector (ndarray or Var) into [(W, b), ...] layer views."""
    layers = []
    pos = 0
    for din, dout in zip(dims[:-1], dims[1:]):
        w = flat[pos : pos + din * dout].reshape(din, dout)
        pos += din * dout
        b = flat[pos : pos + dout]
        pos += dout
        layers.append((w, b))
    return layers


def forward_layers(layers, x):
    """Forward pass through [(W, b), ...]; generic over Var/ndarray."""
    h = x
    last = len(layers) - 1
    for i, (w, b) in enumerate(layers):
        h = h @ w + b
        if i < last:
            h = tanh(h)
    return h


def mlp_forward(net: Mlp, x):
    xv = x.value if isinstance(x, Var) else np.asarray(x, float)
    if xv.shape[-1] != net.dims[0]:
        raise DimMismatchError(
            f"input dim {xv.shape[-1]} != first layer dim {net.dims[0]}"
        )
    return forward_layers(list(zip(net.weights, net.biases)), x)


# --- gradients ---

def grad(loss_fn, params) -> np.ndarray:
    """Reverse-mode gradient of loss_fn (flat-vector -> scalar) at params."""
    leaf = Var(np.asarray(params, dtype=float))
    with Tape() as tape:
        loss = loss_fn(leaf)
    tape.backward(loss)
    if leaf.grad is None:
        return np.zeros_like(leaf.value)
    return leaf.grad


def finite_diff_check(loss_fn, params, eps: float) -> float:
    """Max relative deviation of grad() from central finite differences.

    The denominator is guarded at 1e-8 so zero-gradient coordinates do
    not blow the ratio up.
    """
    params = np.asarray(params, dtype=float)
    g = grad(loss_fn, params)
    fd = np.empty_like(params)
    for i in range(len(params)):
        p = params.copy()
        p[i] += eps
        hi = float(_as_value(loss_fn(p)))
        p[i] -= 2 * eps
        lo = float(_as_value(loss_fn(p)))
        fd[i] = (hi - lo) / (2 * eps)
    denom = np.maximum(np.abs(g), 1e-8)
    return float(np.max(np.abs(fd - g) / denom))


def _as_value(x):
    return x.value if isinstance(x, Var) else x


# --- checkpoints ---

def save_checkpoint(net: Mlp, path, seed=None) -> None:
    """JSON checkpoint: {dims, seed, count, params} with float64 params."""
    flat = net.flat_params()
    obj = {
        "dims": list(net.dims),
        "seed": seed,
        "count": int(flat.size),
        "params": flat.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(obj, fh)


def load_checkpoint(path) -> Mlp:
    with open(path) as fh:
        obj = json.load(fh)
    flat = np.asarray(obj["params"], dtype=float)
    if flat.size != obj["count"] or flat.size != param_count(obj["dims"]):
        raise BadDimsError("checkpoint parameter count does not match dims")
    net = mlp_init(obj["dims"], seed=0)
    net.set_flat_params(flat)
    return net
