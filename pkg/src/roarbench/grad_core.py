"""Dense float64 tensors with reverse-mode autodiff and AMSGrad-Adam.

A Tape records primitive ops while active (used as a context manager);
backward() replays the record once in reverse. Ops called with no active
tape just compute, which is how inference paths run.
"""

import itertools
import json

import numpy as np

from .errors import ContractViolation, NumericFailure, UsageError

_UID = itertools.count()
_TAPE_STACK = []


class Tensor:
    """A float64 ndarray with an identity the tape can track."""

    __slots__ = ("data", "uid")

    def __init__(self, data):
        self.data = np.asarray(data, dtype=np.float64)
        self.uid = next(_UID)

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, uid={self.uid})"


class Tape:
    """Ordered op record; consumed by exactly one backward pass."""

    def __init__(self):
        self._entries = []
        self._consumed = False

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        if popped is not self:
            raise UsageError("tapes must be exited in LIFO order")
        return False

    def backward(self, loss, wrt):
        """Gradients of scalar `loss` w.r.t. each tensor in `wrt`.

        Tensors not reachable from the loss get zero gradients.
        """
        if self._consumed:
            raise UsageError("tape already consumed by a backward pass")
        self._consumed = True
        if not isinstance(loss, Tensor) or loss.data.shape != ():
            raise ContractViolation("backward requires a scalar Tensor loss")
        grads = {loss.uid: np.array(1.0)}
        for out_uid, pulls in reversed(self._entries):
            g = grads.pop(out_uid, None)
            if g is None:
                continue
            for in_uid, pull in pulls:
                contrib = pull(g)
                if in_uid in grads:
                    grads[in_uid] = grads[in_uid] + contrib
                else:
                    grads[in_uid] = contrib
        out = []
        for t in wrt:
            g = grads.get(t.uid)
            if g is None:
                out.append(np.zeros_like(t.data))
            else:
                out.append(np.broadcast_to(g, t.data.shape).astype(np.float64))
        return out


def tensor(data):
    return Tensor(data)


def _data(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def _check_finite(op, arr):
    if not np.all(np.isfinite(arr)):
        raise NumericFailure(op)


def _emit(op, out_data, pulls):
    """Wrap a result and record input pulls on the active tape."""
    _check_finite(op, out_data)
    out = Tensor(out_data)
    if _TAPE_STACK:
        recorded = [(t.uid, fn) for t, fn in pulls if isinstance(t, Tensor)]
        if recorded:
            _TAPE_STACK[-1]._entries.append((out.uid, recorded))
    return out


def _unbroadcast(g, shape):
    """Sum a broadcast gradient back down to the operand's shape."""
    g = np.asarray(g, dtype=np.float64)
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def matmul(a, b):
    """2-D @ 2-D, or batched 3-D @ 2-D."""
    ad, bd = _data(a), _data(b)
    if ad.ndim not in (2, 3) or bd.ndim != 2 or ad.shape[-1] != bd.shape[0]:
        raise ContractViolation(
            f"matmul shapes do not conform: {ad.shape} @ {bd.shape}")
    out = ad @ bd

    def pull_a(g):
        return g @ bd.T

    def pull_b(g):
        if ad.ndim == 2:
            return ad.T @ g
        return np.tensordot(ad, g, axes=([0, 1], [0, 1]))

    return _emit("matmul", out, [(a, pull_a), (b, pull_b)])


def add(a, b):
    ad, bd = _data(a), _data(b)
    try:
        out = ad + bd
    except ValueError as exc:
        raise ContractViolation(f"add shapes do not broadcast: {exc}")
    return _emit("add", out, [
        (a, lambda g: _unbroadcast(g, ad.shape)),
        (b, lambda g: _unbroadcast(g, bd.shape)),
    ])


def subtract(a, b):
    ad, bd = _data(a), _data(b)
    try:
        out = ad - bd
    except ValueError as exc:
        raise ContractViolation(f"subtract shapes do not broadcast: {exc}")
    return _emit("subtract", out, [
        (a, lambda g: _unbroadcast(g, ad.shape)),
        (b, lambda g: _unbroadcast(-g, bd.shape)),
    ])


def multiply(a, b):
    ad, bd = _data(a), _data(b)
    try:
        out = ad * bd
    except ValueError as exc:
        raise ContractViolation(f"multiply shapes do not broadcast: {exc}")
    return _emit("multiply", out, [
        (a, lambda g: _unbroadcast(g * bd, ad.shape)),
        (b, lambda g: _unbroadcast(g * ad, bd.shape)),
    ])


def tanh(a):
    out = np.tanh(_data(a))
    return _emit("tanh", out, [(a, lambda g: g * (1.0 - out * out))])


def sigmoid(a):
    ad = _data(a)
    out = np.empty_like(ad)
    pos = ad >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-ad[pos]))
    ex = np.exp(ad[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _emit("sigmoid", out, [(a, lambda g: g * out * (1.0 - out))])


def exp(a):
    out = np.exp(_data(a))
    return _emit("exp", out, [(a, lambda g: g * out)])


def log(a):
    out = np.log(_data(a))
    return _emit("log", out, [(a, lambda g: g / _data(a))])


def softmax(a):
    """Softmax over the last axis, computed with max subtraction."""
    ad = _data(a)
    shifted = ad - ad.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def pull(g):
        return out * (g - (g * out).sum(axis=-1, keepdims=True))

    return _emit("softmax", out, [(a, pull)])


def masked_softmax(a, allowed):
    """Softmax over the last axis restricted to `allowed` positions.

    Disallowed positions get exactly 0. Every row must allow at least one
    position.
    """
    ad = _data(a)
    mask = np.asarray(allowed, dtype=bool)
    if mask.shape != ad.shape:
        raise ContractViolation("masked_softmax mask shape mismatch")
    if not mask.any(axis=-1).all():
        raise ContractViolation("masked_softmax row with no allowed position")
    neg = np.where(mask, ad, -np.inf)
    shifted = ad - neg.max(axis=-1, keepdims=True)
    e = np.exp(shifted) * mask
    out = e / e.sum(axis=-1, keepdims=True)

    def pull(g):
        return out * (g - (g * out).sum(axis=-1, keepdims=True))

    return _emit("masked_softmax", out, [(a, pull)])


def concatenate(tensors, axis):
    datas = [_data(t) for t in tensors]
    try:
        out = np.concatenate(datas, axis=axis)
    except ValueError as exc:
        raise ContractViolation(f"concatenate shapes do not conform: {exc}")
    pulls = []
    offset = 0
    for t, d in zip(tensors, datas):
        start, size = offset, d.shape[axis]

        def pull(g, start=start, size=size):
            index = [slice(None)] * g.ndim
            index[axis] = slice(start, start + size)
            return g[tuple(index)]

        pulls.append((t, pull))
        offset += size
    return _emit("concatenate", out, pulls)


def narrow(a, axis, start, length):
    """Contiguous slice [start, start+length) along one axis."""
    ad = _data(a)
    if not 0 <= start <= start + length <= ad.shape[axis]:
        raise ContractViolation("narrow range outside the axis")
    index = [slice(None)] * ad.ndim
    index[axis] = slice(start, start + length)
    out = ad[tuple(index)]

    def pull(g):
        full = np.zeros_like(ad)
        full[tuple(index)] = g
        return full

    return _emit("narrow", out, [(a, pull)])


def select_index(a, index, axis):
    """Take one index along an axis, dropping that axis."""
    ad = _data(a)
    if not 0 <= index < ad.shape[axis]:
        raise ContractViolation("select_index out of range")
    out = np.take(ad, index, axis=axis)

    def pull(g):
        full = np.zeros_like(ad)
        sl = [slice(None)] * ad.ndim
        sl[axis] = index
        full[tuple(sl)] = g
        return full

    return _emit("select_index", out, [(a, pull)])


def take_per_row(a, idx):
    """out[n] = a[n, idx[n]] for a 2-D tensor."""
    ad = _data(a)
    idx = np.asarray(idx, dtype=np.int64)
    if ad.ndim != 2 or idx.shape != (ad.shape[0],):
        raise ContractViolation("take_per_row expects (N,C) and (N,) index")
    rows = np.arange(ad.shape[0])
    out = ad[rows, idx]

    def pull(g):
        full = np.zeros_like(ad)
        np.add.at(full, (rows, idx), g)
        return full

    return _emit("take_per_row", out, [(a, pull)])


def reshape(a, shape):
    ad = _data(a)
    out = ad.reshape(shape)
    return _emit("reshape", out, [(a, lambda g: g.reshape(ad.shape))])


def reduce_sum(a, axis=None):
    ad = _data(a)
    out = ad.sum(axis=axis)

    def pull(g):
        if axis is None:
            return np.full_like(ad, g)
        return np.broadcast_to(np.expand_dims(g, axis), ad.shape).copy()

    return _emit("sum", out, [(a, pull)])


def reduce_mean(a, axis=None):
    ad = _data(a)
    out = ad.mean(axis=axis)
    count = ad.size if axis is None else ad.shape[axis]

    def pull(g):
        if axis is None:
            return np.full_like(ad, g / count)
        return np.broadcast_to(np.expand_dims(g, axis), ad.shape) / count

    return _emit("mean", out, [(a, pull)])


def l2_norm(a, axis):
    """sqrt(sum(a^2)) over one axis; subgradient 0 where the norm is 0."""
    ad = _data(a)
    out = np.sqrt((ad * ad).sum(axis=axis))

    def pull(g):
        denom = np.where(out == 0.0, 1.0, out)
        scale = np.expand_dims(g / denom, axis)
        return np.where(np.expand_dims(out == 0.0, axis), 0.0, scale * ad)

    return _emit("l2_norm", out, [(a, pull)])


def embedding(weights, ids):
    """Row gather: out[..., :] = weights[ids[...], :]."""
    wd = _data(weights)
    ids = np.asarray(ids, dtype=np.int64)
    if wd.ndim != 2:
        raise ContractViolation("embedding weights must be 2-D")
    if ids.size and (ids.min() < 0 or ids.max() >= wd.shape[0]):
        raise ContractViolation("embedding id outside the vocabulary")
    out = wd[ids]

    def pull(g):
        full = np.zeros_like(wd)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, wd.shape[1]))
        return full

    return _emit("embedding", out, [(weights, pull)])


def one_hot(ids, depth):
    """Constant one-hot ndarray (float64), shape ids.shape + (depth,)."""
    ids = np.asarray(ids, dtype=np.int64)
    out = np.zeros(ids.shape + (depth,), dtype=np.float64)
    np.put_along_axis(out, ids[..., None], 1.0, axis=-1)
    return out


def cross_entropy_with_logits(logits, labels):
    """Mean cross-entropy over the batch, fused with log-softmax."""
    ld = _data(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if ld.ndim != 2 or labels.shape != (ld.shape[0],):
        raise ContractViolation("cross_entropy expects (N,C) logits, (N,) labels")
    if labels.min() < 0 or labels.max() >= ld.shape[1]:
        raise ContractViolation("label outside the class range")
    n = ld.shape[0]
    shifted = ld - ld.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1)) + ld.max(axis=1)
    out = np.mean(lse - ld[np.arange(n), labels])

    def pull(g):
        soft = np.exp(shifted)
        soft /= soft.sum(axis=1, keepdims=True)
        soft[np.arange(n), labels] -= 1.0
        return g * soft / n

    return _emit("cross_entropy_with_logits", out, [(logits, pull)])


class AmsgradAdam:
    """Adam with the AMSGrad max-second-moment correction (the default).

    Weight decay is added to the gradients before the moment updates, not
    decoupled.
    """

    def __init__(self, params, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8,
                 weight_decay=1e-5, amsgrad=True):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.amsgrad = amsgrad
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.vhat = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads):
        if len(grads) != len(self.params):
            raise ContractViolation("optimizer grads misaligned with params")
        for g in grads:
            if not np.all(np.isfinite(g)):
                raise NumericFailure("optimizer_step", "non-finite gradient")
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for i, (p, g) in enumerate(zip(self.params, grads)):
            g = g + self.weight_decay * p.data
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            if self.amsgrad:
                np.maximum(self.vhat[i], self.v[i], out=self.vhat[i])
                denom = np.sqrt(self.vhat[i] / bc2) + self.eps
            else:
                denom = np.sqrt(self.v[i] / bc2) + self.eps
            p.data -= self.lr * (self.m[i] / bc1) / denom


CHECKPOINT_FORMAT_VERSION = 1


def checkpoint_document(named_params):
    doc = {"format_version": CHECKPOINT_FORMAT_VERSION}
    for name, p in named_params.items():
        if name == "format_version":
            raise ContractViolation("parameter name collides with format_version")
        data = _data(p)
        doc[name] = {"shape": list(data.shape), "values": data.reshape(-1).tolist()}
    return doc


def save_checkpoint(path, named_params):
    with open(path, "w") as fh:
        json.dump(checkpoint_document(named_params), fh, sort_keys=True,
                  separators=(",", ":"))


def load_checkpoint(path):
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise ContractViolation(
            f"unsupported checkpoint format_version: {doc.get('format_version')!r}")
    params = {}
    for name, entry in doc.items():
        if name == "format_version":
            continue
        shape = tuple(entry["shape"])
        values = np.asarray(entry["values"], dtype=np.float64)
        if values.size != int(np.prod(shape, dtype=np.int64)):
            raise ContractViolation(f"checkpoint entry '{name}' shape mismatch")
        params[name] = values.reshape(shape)
    return params
