"""Minimal dense-tensor autodiff used by the policy networks.

Everything is float64 and row-major. Ops record onto an explicit Tape
(one tape per forward pass); backward() replays the tape in reverse and
returns a gradient for every parameter in the store, with exact zeros
for parameters that never entered the forward pass.

Broadcasting is deliberately restricted to scalar-with-tensor; the only
structured exception is add_bias (row vector added to a matrix), which
is its own primitive.
"""

from __future__ import annotations

import hashlib

import numpy as np


class ShapeMismatchError(ValueError):
    """Operand shapes are incompatible for the requested op."""


class DomainError(ValueError):
    """Operand values are outside the op's domain (e.g. log of x <= 0)."""


class Tensor:
    """A named, shaped float64 array. `name` is set for parameters only."""

    __slots__ = ("data", "name")

    def __init__(self, data, name=None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim and not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        if self.data.size != 1:
            raise ShapeMismatchError(f"item() needs a scalar, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={tuple(self.shape)}{tag})"


def as_tensor(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


# --- tape -------------------------------------------------------------

_ACTIVE_TAPE = None


class Tape:
    """Append-only record of primitive ops for one forward pass.

    Each node is (output Tensor, [(input Tensor, vjp), ...]) where vjp maps
    the gradient w.r.t. the output to the gradient w.r.t. that input.
    """

    def __init__(self):
        self.nodes = []

    def record(self, out, input_vjps):
        self.nodes.append((out, input_vjps))

    def __enter__(self):
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise RuntimeError("a tape is already active; tapes do not nest")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, exc_type, exc, tb):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None
        return False


def _record(out, input_vjps):
    if _ACTIVE_TAPE is not None:
        # only differentiable (Tensor) inputs are tracked
        _ACTIVE_TAPE.record(out, [(t, f) for t, f in input_vjps if isinstance(t, Tensor)])
    return out


class ParamStore:
    """Named parameter tensors shared by all agents. Shapes are frozen at add()."""

    def __init__(self):
        self._entries = {}
        self.version = 0

    def add(self, name, array):
        if name in self._entries:
            raise KeyError(f"parameter {name!r} already exists")
        self._entries[name] = Tensor(np.array(array, dtype=np.float64), name=name)
        return self._entries[name]

    def __getitem__(self, name):
        return self._entries[name]

    def __contains__(self, name):
        return name in self._entries

    def names(self):
        return list(self._entries)

    def items(self):
        return self._entries.items()

    def apply_delta(self, deltas, scale=1.0):
        """In-place update: p += scale * deltas[name]. Bumps version once."""
        for name, d in deltas.items():
            p = self._entries[name]
            arr = d.data if isinstance(d, Tensor) else np.asarray(d, dtype=np.float64)
            if arr.shape != p.data.shape:
                raise ShapeMismatchError(
                    f"delta for {name!r} has shape {arr.shape}, parameter is {p.data.shape}"
                )
            p.data += scale * arr
        self.version += 1


def backward(tape: Tape, loss: Tensor, store: ParamStore):
    """Reverse-mode gradients of a scalar loss w.r.t. every store entry.

    Parameters that did not participate in the forward pass get an exact
    zero gradient of the right shape.
    """
    if loss.data.size != 1:
        raise ShapeMismatchError(f"loss must be scalar, got shape {loss.shape}")
    grads = {id(loss): np.ones_like(loss.data)}
    for out, input_vjps in reversed(tape.nodes):
        g_out = grads.get(id(out))
        if g_out is None:
            continue
        for t, vjp in input_vjps:
            g = vjp(g_out)
            acc = grads.get(id(t))
            if acc is None:
                grads[id(t)] = np.array(g, dtype=np.float64, copy=True)
            else:
                acc += g
    out = {}
    for name, p in store.items():
        g = grads.get(id(p))
        if g is None:
            out[name] = Tensor(np.zeros_like(p.data))
        else:
            out[name] = Tensor(g)
    return out


# --- primitives --------------------------------------------------------


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatchError(f"matmul shapes {tuple(a.shape)} x {tuple(b.shape)}")
    out = Tensor(a.data @ b.data)
    return _record(out, [(a, lambda g, b=b: g @ b.data.T), (b, lambda g, a=a: a.data.T @ g)])


def _is_scalar_shape(x):
    return x.data.size == 1


def _binary_shapes(a, b, op):
    if a.shape == b.shape or _is_scalar_shape(a) or _is_scalar_shape(b):
        return
    raise ShapeMismatchError(f"{op} shapes {tuple(a.shape)} vs {tuple(b.shape)}")


def _unbroadcast(g, like):
    """Reduce a gradient back to a scalar operand's shape if it broadcast."""
    if g.shape == like.data.shape:
        return g
    return np.sum(g).reshape(like.data.shape)


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "add")
    out = Tensor(a.data + b.data)
    return _record(out, [(a, lambda g, a=a: _unbroadcast(g, a)),
                         (b, lambda g, b=b: _unbroadcast(g, b))])


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "mul")
    out = Tensor(a.data * b.data)
    return _record(out, [(a, lambda g, a=a, b=b: _unbroadcast(g * b.data, a)),
                         (b, lambda g, a=a, b=b: _unbroadcast(g * a.data, b))])


def neg(x):
    x = as_tensor(x)
    out = Tensor(-x.data)
    return _record(out, [(x, lambda g: -g)])


def relu(x):
    x = as_tensor(x)
    out = Tensor(np.maximum(x.data, 0.0))
    return _record(out, [(x, lambda g, x=x: g * (x.data > 0.0))])


def sigmoid(x):
    x = as_tensor(x)
    # stable piecewise evaluation
    z = x.data
    s = np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))),
                 np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))
    out = Tensor(s)
    return _record(out, [(x, lambda g, s=s: g * s * (1.0 - s))])


def exp(x):
    x = as_tensor(x)
    out = Tensor(np.exp(x.data))
    return _record(out, [(x, lambda g, out=out: g * out.data)])


def log(x):
    x = as_tensor(x)
    if np.any(x.data <= 0.0):
        raise DomainError("log of non-positive entry")
    out = Tensor(np.log(x.data))
    return _record(out, [(x, lambda g, x=x: g / x.data)])


def reshape(x, shape):
    x = as_tensor(x)
    if int(np.prod(shape)) != x.data.size:
        raise ShapeMismatchError(f"cannot reshape {tuple(x.shape)} to {tuple(shape)}")
    out = Tensor(x.data.reshape(shape))
    return _record(out, [(x, lambda g, x=x: g.reshape(x.data.shape))])


def add_bias(x, b):
    """x[R, C] + b[C] broadcast over rows. Gradient of b sums over rows."""
    x, b = as_tensor(x), as_tensor(b)
    if x.data.ndim != 2 or b.data.ndim != 1 or x.shape[1] != b.shape[0]:
        raise ShapeMismatchError(f"add_bias shapes {tuple(x.shape)} + {tuple(b.shape)}")
    out = Tensor(x.data + b.data[None, :])
    return _record(out, [(x, lambda g: g), (b, lambda g: g.sum(axis=0))])


def scatter_edges(values, pairs, n):
    """Build a dense [n, n] matrix with values[i] at pairs[i] = (u, v).

    Used to place per-edge outputs of the edge-weight network back onto
    the node graph's adjacency; gradient gathers from the same positions.
    """
    values = as_tensor(values)
    if values.data.ndim != 1 or len(pairs) != values.shape[0]:
        raise ShapeMismatchError(
            f"scatter_edges needs one value per pair, got {tuple(values.shape)} "
            f"for {len(pairs)} pairs")
    rows = np.fromiter((u for u, _ in pairs), dtype=np.intp, count=len(pairs))
    cols = np.fromiter((v for _, v in pairs), dtype=np.intp, count=len(pairs))
    dense = np.zeros((n, n))
    dense[rows, cols] = values.data
    out = Tensor(dense)
    return _record(out, [(values, lambda g, rows=rows, cols=cols: g[rows, cols])])


def neighbor_agg(h, weights, mask=None, mode="mean"):
    """Aggregate in-neighbor messages: row v = AGG_u of w[u, v] * h[u].

    `weights` is a dense [V, V] matrix (Tensor when edge weights are
    learned, plain array otherwise) with w[u, v] the weight of the edge
    u -> v. `mask` marks which entries are structural edges; it defaults
    to the nonzero pattern of `weights`. Mean divides by in-neighbor
    count, so nodes with no in-neighbors yield a zero row.

    Differentiable w.r.t. both h and weights.
    """
    if mode not in ("sum", "mean"):
        raise ValueError(f"unknown agg mode {mode!r}")
    h = as_tensor(h)
    w_arr = weights.data if isinstance(weights, Tensor) else np.asarray(weights, dtype=np.float64)
    V = h.shape[0]
    if h.data.ndim != 2 or w_arr.shape != (V, V):
        raise ShapeMismatchError(
            f"neighbor_agg shapes h={tuple(h.shape)} weights={w_arr.shape}")
    if mask is None:
        mask = w_arr != 0.0
    else:
        mask = np.asarray(mask, dtype=bool)
    if mode == "mean":
        deg = mask.sum(axis=0).astype(np.float64)
        div = np.where(deg > 0.0, deg, 1.0)
    else:
        div = np.ones(V)
    w_eff = np.where(mask, w_arr, 0.0)   # off-mask entries never aggregate
    out = Tensor((w_eff.T @ h.data) / div[:, None])

    def vjp_h(g, w_eff=w_eff, div=div):
        return w_eff @ (g / div[:, None])

    def vjp_w(g, h=h, div=div, mask=mask):
        return (h.data @ (g / div[:, None]).T) * mask

    inputs = [(h, vjp_h)]
    if isinstance(weights, Tensor):
        inputs.append((weights, vjp_w))
    return _record(out, inputs)


def _row_softmax(z):
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_logprob(logits, actions):
    """Joint log-probability: sum over rows v of ln softmax(logits[v])[a_v].

    Numerically stabilized by max-subtraction; gradient is onehot - softmax.
    """
    logits = as_tensor(logits)
    if logits.data.ndim != 2:
        raise ShapeMismatchError(f"logits must be [V, A], got {tuple(logits.shape)}")
    V, A = logits.shape
    acts = np.asarray(actions, dtype=np.intp)
    if acts.shape != (V,):
        raise ShapeMismatchError(f"need one action per row: {acts.shape} vs V={V}")
    if np.any(acts < 0) or np.any(acts >= A):
        raise IndexError(f"action index out of range [0, {A})")
    z = logits.data
    zmax = z.max(axis=1)
    lse = zmax + np.log(np.exp(z - zmax[:, None]).sum(axis=1))
    out = Tensor(np.sum(z[np.arange(V), acts] - lse))

    def vjp(g, z=z, acts=acts):
        p = _row_softmax(z)
        p[np.arange(len(acts)), acts] -= 1.0
        return -float(g) * p

    return _record(out, [(logits, vjp)])


def softmax_entropy(logits):
    """Sum over rows of the Shannon entropy of softmax(logits[v])."""
    logits = as_tensor(logits)
    if logits.data.ndim != 2:
        raise ShapeMismatchError(f"logits must be [V, A], got {tuple(logits.shape)}")
    p = _row_softmax(logits.data)
    logp = np.log(np.maximum(p, 1e-300))
    row_h = -(p * logp).sum(axis=1)
    out = Tensor(np.sum(row_h))

    def vjp(g, p=p, logp=logp, row_h=row_h):
        return -float(g) * p * (logp + row_h[:, None])

    return _record(out, [(logits, vjp)])


# --- checkpoint file ---------------------------------------------------
#
# Plain-text format, one header line per tensor followed by one line of
# repr()-formatted values (shortest round-tripping decimal form, so a
# save/load cycle is bit-exact).


def save_checkpoint(store: ParamStore, path, meta=None):
    lines = ["# powergraph checkpoint v1"]
    for key, val in sorted((meta or {}).items()):
        lines.append(f"meta {key} {val}")
    lines.append(f"meta version {store.version}")
    for name in sorted(store.names()):
        t = store[name]
        dims = " ".join(str(d) for d in t.shape)
        lines.append(f"param {name} {len(t.shape)} {dims}")
        lines.append(" ".join(repr(float(v)) for v in t.data.reshape(-1)))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def load_checkpoint(path):
    """Returns (ParamStore, meta dict). Values round-trip bit-exactly."""
    store = ParamStore()
    meta = {}
    with open(path) as f:
        lines = [ln.rstrip("\n") for ln in f]
    i = 0
    while i < len(lines):
        ln = lines[i]
        if not ln or ln.startswith("#"):
            i += 1
            continue
        if ln.startswith("meta "):
            _, key, val = ln.split(" ", 2)
            meta[key] = val
            i += 1
            continue
        if ln.startswith("param "):
            parts = ln.split()
            name, ndim = parts[1], int(parts[2])
            shape = tuple(int(d) for d in parts[3:3 + ndim])
            vals = np.array([float(v) for v in lines[i + 1].split()], dtype=np.float64)
            store.add(name, vals.reshape(shape))
            i += 2
            continue
        raise ValueError(f"unrecognized checkpoint line: {ln!r}")
    if "version" in meta:
        store.version = int(meta.pop("version"))
    return store, meta


def config_digest(resolved_items):
    """Stable digest of resolved (key, value) config pairs."""
    h = hashlib.sha256()
    for k, v in sorted(resolved_items):
        h.update(f"{k}={v!r}\n".encode())
    return h.hexdigest()[:16]
