"""Dense-tensor reverse-mode engine with an explicit tape.

All values are 64-bit floats. A :class:`Tape` records one forward pass;
``backward`` replays the records in reverse and accumulates gradients into
leaf slots (parameters keep a persistent gradient buffer). Each record's
closure captures only the arrays its backward rule needs, and records are
released as soon as they have run, so activation buffers are freed at the
earliest point reference counting allows.
"""
from __future__ import annotations

import math
import struct

import numpy as np

from . import graphs as _graphs

__all__ = [
    "Var",
    "Parameter",
    "Tape",
    "NonFiniteGradientError",
    "glorot_init",
    "adam_step",
    "finite_diff_check",
    "save_parameters",
    "load_parameters",
]

_NORM_GUARD = 1e-12


class NonFiniteGradientError(RuntimeError):
    """A parameter gradient contained NaN or infinity."""


def _as_f64(value) -> np.ndarray:
    return np.ascontiguousarray(value, dtype=np.float64)


class Slot:
    """Gradient cell for one tensor; ``grad`` is lazily allocated."""

    __slots__ = ("grad",)

    def __init__(self, grad: np.ndarray | None = None):
        self.grad = grad


class Var:
    """A value on the tape plus the slot its gradient accumulates into."""

    __slots__ = ("value", "slot")

    def __init__(self, value: np.ndarray, slot: Slot | None):
        self.value = value
        self.slot = slot

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape


class Parameter:
    """Trainable tensor with persistent gradient and Adam moment buffers."""

    __slots__ = ("name", "value", "grad", "adam_m", "adam_v", "step_count")

    def __init__(self, name: str, value):
        self.name = name
        self.value = _as_f64(value)
        self.grad = np.zeros_like(self.value)
        self.adam_m = np.zeros_like(self.value)
        self.adam_v = np.zeros_like(self.value)
        self.step_count = 0


def _segmented_matmul(av: np.ndarray, bv: np.ndarray, segments) -> np.ndarray:
    if segments is None:
        return av @ bv
    bounds = np.concatenate([[0], np.cumsum(np.asarray(segments, dtype=np.int64))])
    if bounds[-1] != av.shape[0]:
        raise ValueError(f"segments sum to {bounds[-1]}, expected {av.shape[0]} rows")
    shape = (av.shape[0],) if bv.ndim == 1 else (av.shape[0], bv.shape[1])
    value = np.empty(shape)
    for start, stop in zip(bounds[:-1], bounds[1:]):
        value[start:stop] = av[start:stop] @ bv
    return value


def _acc(slot: Slot | None, g: np.ndarray, fresh: bool, tracker) -> None:
    """Accumulate a gradient contribution into ``slot``.

    ``fresh`` marks arrays computed solely for this contribution, which may
    be adopted without copying.
    """
    if slot is None:
        return
    if slot.grad is None:
        slot.grad = g if fresh else g.copy()
        if tracker is not None:
            tracker.note(slot.grad, "grads")
    else:
        slot.grad += g


class Tape:
    """Record of one forward pass, replayable in reverse for gradients.

    ``tracker`` (optional) must expose ``note(array, tag)`` and is informed
    of every activation, gradient and CSR buffer the pass allocates.
    ``probe`` (optional dict) collects stability margins ("relu_margin",
    "rowmax_gap", "score_boundary_gap", "score_min_gap") so callers can
    reject inputs too close to a non-differentiable switch.
    """

    def __init__(self, tracker=None, probe: dict | None = None):
        self._nodes: list = []
        self._consumed = False
        self.tracker = tracker
        self.probe = probe

    # ------------------------------------------------------------------
    # plumbing
    # ------------------------------------------------------------------
    def note(self, arr: np.ndarray, tag: str) -> None:
        if self.tracker is not None:
            self.tracker.note(arr, tag)

    def _out(self, value: np.ndarray, prim: str) -> Var:
        self.note(value, "acts")
        return Var(value, Slot())

    def _push(self, prim: str, out_slot: Slot, fn) -> None:
        self._nodes.append((prim, out_slot, fn))

    def probe_min(self, key: str, value: float) -> None:
        if self.probe is not None:
            cur = self.probe.get(key)
            self.probe[key] = value if cur is None else min(cur, value)

    def leaf(self, value, needs_grad: bool = False) -> Var:
        """Wrap an input array; gradients are kept only if requested."""
        return Var(_as_f64(value), Slot() if needs_grad else None)

    def param(self, p: Parameter) -> Var:
        """Bind a parameter; gradients accumulate into ``p.grad``."""
        return Var(p.value, Slot(p.grad))

    def backward(self, loss: Var) -> None:
        """Accumulate d(loss)/d(leaf) for every leaf reachable from ``loss``."""
        if self._consumed:
            raise RuntimeError("tape already consumed; build a new one per pass")
        self._consumed = True
        if loss.value.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.value.shape}")
        if loss.slot is None:
            raise ValueError("loss does not participate in the tape")
        loss.slot.grad = np.ones_like(loss.value)
        nodes = self._nodes
        for i in range(len(nodes) - 1, -1, -1):
            _, out_slot, fn = nodes[i]
            g = out_slot.grad
            if g is not None:
                fn(g)
            out_slot.grad = None  # complete: every consumer has already run
            nodes[i] = None  # release saved activations promptly
        self._nodes = []

    # ------------------------------------------------------------------
    # primitives
    # ------------------------------------------------------------------
    def matmul(self, a: Var, b: Var, segments=None) -> Var:
        """a @ b; with ``segments`` the product is computed per row block.

        BLAS results depend on the total row count, so block-diagonal batches
        are multiplied segment by segment to stay bit-identical with
        per-graph runs. The backward pass is mathematically unaffected and
        uses whole-matrix products.
        """
        av, bv = a.value, b.value
        if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
            raise ValueError(f"matmul shape mismatch: {av.shape} @ {bv.shape}")
        out = self._out(_segmented_matmul(av, bv, segments), "matmul")
        a_slot, b_slot, tr = a.slot, b.slot, self.tracker
        a_saved = av if b_slot is not None else None
        b_saved = bv if a_slot is not None else None

        def bw(g):
            if a_slot is not None:
                _acc(a_slot, g @ b_saved.T, True, tr)
            if b_slot is not None:
                _acc(b_slot, a_saved.T @ g, True, tr)

        self._push("matmul", out.slot, bw)
        return out

    def add(self, a: Var, b: Var) -> Var:
        av, bv = a.value, b.value
        broadcast = av.shape != bv.shape
        if broadcast and not (
            av.ndim == 2 and bv.ndim == 2 and bv.shape == (1, av.shape[1])
        ):
            raise ValueError(f"add shape mismatch: {av.shape} + {bv.shape}")
        out = self._out(av + bv, "add")
        a_slot, b_slot, tr = a.slot, b.slot, self.tracker

        def bw(g):
            _acc(a_slot, g, False, tr)
            if b_slot is not None:
                _acc(b_slot, g.sum(axis=0, keepdims=True) if broadcast else g, broadcast, tr)

        self._push("add", out.slot, bw)
        return out

    def relu(self, a: Var) -> Var:
        av = a.value
        if self.probe is not None and av.size:
            self.probe_min("relu_margin", float(np.min(np.abs(av))))
        h = np.maximum(av, 0.0)
        out = self._out(h, "relu")
        a_slot, tr = a.slot, self.tracker
        saved = h if a_slot is not None else None

        def bw(g):
            if a_slot is not None:
                _acc(a_slot, g * (saved > 0.0), True, tr)

        self._push("relu", out.slot, bw)
        return out

    def tanh_elem(self, a: Var) -> Var:
        t = np.tanh(a.value)
        out = self._out(t, "tanh")
        a_slot, tr = a.slot, self.tracker
        saved = t if a_slot is not None else None

        def bw(g):
            if a_slot is not None:
                _acc(a_slot, g * (1.0 - saved * saved), True, tr)

        self._push("tanh", out.slot, bw)
        return out

    def scale_rows(self, a: Var, v: Var) -> Var:
        av, vv = a.value, v.value
        if av.ndim != 2 or vv.shape != (av.shape[0],):
            raise ValueError(f"scale_rows shape mismatch: {av.shape} vs {vv.shape}")
        out = self._out(av * vv[:, None], "scale_rows")
        a_slot, v_slot, tr = a.slot, v.slot, self.tracker
        a_saved = av if v_slot is not None else None
        v_saved = vv if a_slot is not None else None

        def bw(g):
            if a_slot is not None:
                _acc(a_slot, g * v_saved[:, None], True, tr)
            if v_slot is not None:
                _acc(v_slot, (g * a_saved).sum(axis=1), True, tr)

        self._push("scale_rows", out.slot, bw)
        return out

    def row_mean(self, a: Var) -> Var:
        av = a.value
        if av.ndim != 2 or av.shape[0] == 0:
            raise ValueError("row_mean needs a non-empty 2-D input")
        n = av.shape[0]
        out = self._out(av.mean(axis=0, keepdims=True), "row_mean")
        a_slot, tr = a.slot, self.tracker

        def bw(g):
            if a_slot is not None:
                _acc(a_slot, np.repeat(g / n, n, axis=0), True, tr)

        self._push("row_mean", out.slot, bw)
        return out

    def row_max(self, a: Var) -> Var:
        av = a.value
        if av.ndim != 2 or av.shape[0] == 0:
            raise ValueError("row_max needs a non-empty 2-D input")
        argmax = np.argmax(av, axis=0)  # first index on ties
        cols = np.arange(av.shape[1])
        top = av[argmax, cols]
        if self.probe is not None and av.shape[0] > 1:
            second = np.partition(av, -2, axis=0)[-2]
            # exact zero-zero ties come from ReLU clamping and are stable
            live = ~((top == 0.0) & (second == 0.0))
            if np.any(live):
                self.probe_min("rowmax_gap", float(np.min((top - second)[live])))
        out = self._out(top[None, :], "row_max")
        a_slot, tr = a.slot, self.tracker
        shape = av.shape

        def bw(g):
            if a_slot is not None:
                z = np.zeros(shape)
                z[argmax, cols] = g[0]
                _acc(a_slot, z, True, tr)

        self._push("row_max", out.slot, bw)
        return out

    def concat_cols(self, a: Var, b: Var) -> Var:
        av, bv = a.value, b.value
        if av.ndim != 2 or bv.ndim != 2 or av.shape[0] != bv.shape[0]:
            raise ValueError(f"concat_cols shape mismatch: {av.shape} vs {bv.shape}")
        out = self._out(np.concatenate([av, bv], axis=1), "concat_cols")
        a_slot, b_slot, tr = a.slot, b.slot, self.tracker
        split = av.shape[1]

        def bw(g):
            if a_slot is not None:
                _acc(a_slot, g[:, :split].copy(), True, tr)
            if b_slot is not None:
                _acc(b_slot, g[:, split:].copy(), True, tr)

        self._push("concat_cols", out.slot, bw)
        return out

    def concat_rows(self, vars: list[Var]) -> Var:
        if not vars:
            raise ValueError("concat_rows needs at least one input")
        cols = vars[0].value.shape[1]
        for v in vars:
            if v.value.ndim != 2 or v.value.shape[1] != cols:
                raise ValueError("concat_rows inputs must share their column count")
        out = self._out(np.concatenate([v.value for v in vars], axis=0), "concat_rows")
        slots = [v.slot for v in vars]
        offsets = np.concatenate([[0], np.cumsum([v.value.shape[0] for v in vars])])
        tr = self.tracker

        def bw(g):
            for slot, lo, hi in zip(slots, offsets[:-1], offsets[1:]):
                if slot is not None:
                    _acc(slot, g[lo:hi].copy(), True, tr)

        self._push("concat_rows", out.slot, bw)
        return out

    def sum_tensors(self, vars: list[Var]) -> Var:
        if not vars:
            raise ValueError("sum_tensors needs at least one input")
        shape = vars[0].value.shape
        for v in vars:
            if v.value.shape != shape:
                raise ValueError(f"sum_tensors shape mismatch: {v.value.shape} vs {shape}")
        total = vars[0].value.copy()
        for v in vars[1:]:
            total += v.value
        out = self._out(total, "sum_tensors")
        slots = [v.slot for v in vars]
        tr = self.tracker

        def bw(g):
            for slot in slots:
                _acc(slot, g, False, tr)

        self._push("sum_tensors", out.slot, bw)
        return out

    def gather_rows(self, a: Var, idx) -> Var:
        av = a.value
        idx = np.asarray(idx, dtype=np.int64)
        if av.ndim != 2 or idx.ndim != 1:
            raise ValueError("gather_rows needs a 2-D input and 1-D indices")
        if idx.size and (idx.min() < 0 or idx.max() >= av.shape[0]):
            raise ValueError("gather index out of range")
        out = self._out(av[idx], "gather_rows")
        a_slot, tr = a.slot, self.tracker
        shape = av.shape
        distinct = bool(idx.size == 0 or np.all(np.diff(idx) > 0))

        def bw(g):
            if a_slot is not None:
                z = np.zeros(shape)
                if distinct:
                    z[idx] = g
                else:
                    np.add.at(z, idx, g)
                _acc(a_slot, z, True, tr)

        self._push("gather_rows", out.slot, bw)
        return out

    def vecdot(self, a: Var, p: Var, segments=None) -> Var:
        av, pv = a.value, p.value
        if av.ndim != 2 or pv.shape != (av.shape[1],):
            raise ValueError(f"vecdot shape mismatch: {av.shape} . {pv.shape}")
        out = self._out(_segmented_matmul(av, pv, segments), "vecdot")
        a_slot, p_slot, tr = a.slot, p.slot, self.tracker
        a_saved = av if p_slot is not None else None
        p_saved = pv if a_slot is not None else None

        def bw(g):
            if a_slot is not None:
                _acc(a_slot, np.outer(g, p_saved), True, tr)
            if p_slot is not None:
                _acc(p_slot, g @ a_saved, True, tr)

        self._push("vecdot", out.slot, bw)
        return out

    def div_by_norm(self, y: Var, p: Var) -> Var:
        """y / max(||p||_2, guard); the guard, when active, is a constant."""
        yv, pv = y.value, p.value
        raw = float(np.linalg.norm(pv))
        guarded = raw < _NORM_GUARD
        norm = _NORM_GUARD if guarded else raw
        out = self._out(yv / norm, "div_by_norm")
        y_slot, p_slot, tr = y.slot, p.slot, self.tracker
        y_saved = yv if (p_slot is not None and not guarded) else None
        p_saved = pv if (p_slot is not None and not guarded) else None

        def bw(g):
            if y_slot is not None:
                _acc(y_slot, g / norm, True, tr)
            if p_slot is not None and not guarded:
                coef = -float(np.vdot(g, y_saved)) / norm**3
                _acc(p_slot, coef * p_saved, True, tr)

        self._push("div_by_norm", out.slot, bw)
        return out

    def softmax_xent(self, logits: Var, labels) -> Var:
        """Mean softmax cross-entropy over rows; scalar output."""
        lv = logits.value
        if lv.ndim == 1:
            lv = lv[None, :]
        if lv.ndim != 2:
            raise ValueError(f"logits must be 1-D or 2-D, got shape {logits.value.shape}")
        labels = np.asarray(labels, dtype=np.int64).reshape(-1)
        n, c = lv.shape
        if labels.shape != (n,):
            raise ValueError(f"expected {n} labels, got {labels.shape}")
        if labels.size and (labels.min() < 0 or labels.max() >= c):
            raise ValueError(f"label out of range for {c} classes")
        shifted = lv - lv.max(axis=1, keepdims=True)
        logsumexp = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        logp = shifted - logsumexp
        rows = np.arange(n)
        loss = float(-logp[rows, labels].mean())
        out = self._out(np.array(loss), "softmax_xent")
        probs = np.exp(logp)
        l_slot, tr = logits.slot, self.tracker
        one_d = logits.value.ndim == 1

        def bw(g):
            if l_slot is not None:
                d = probs.copy()
                d[rows, labels] -= 1.0
                d *= float(g) / n
                _acc(l_slot, d[0] if one_d else d, True, tr)

        self._push("softmax_xent", out.slot, bw)
        return out

    def spmm_mean(self, graph: _graphs.SparseGraph, x: Var) -> Var:
        out = self._out(_graphs.spmm_mean(graph, x.value), "spmm_mean")
        x_slot, tr = x.slot, self.tracker
        inv_deg = 1.0 / (graph.degrees + 1) if x_slot is not None else None

        def bw(g):
            if x_slot is not None:
                scaled = g * inv_deg[:, None]
                _acc(x_slot, _graphs.neighbor_sum(graph, scaled) + scaled, True, tr)

        self._push("spmm_mean", out.slot, bw)
        return out


def glorot_init(rows: int, cols: int, seed: int) -> np.ndarray:
    """Glorot/Xavier uniform init: U(-a, a) with a = sqrt(6 / (rows + cols))."""
    if rows < 1 or cols < 1:
        raise ValueError("glorot_init needs rows, cols >= 1")
    bound = math.sqrt(6.0 / (rows + cols))
    return np.random.default_rng(seed).uniform(-bound, bound, size=(rows, cols))


def adam_step(
    params,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam update; gradients are zeroed afterwards."""
    for p in params:
        g = p.grad
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient in parameter {p.name!r}")
        p.step_count += 1
        t = p.step_count
        p.adam_m *= beta1
        p.adam_m += (1.0 - beta1) * g
        p.adam_v *= beta2
        p.adam_v += (1.0 - beta2) * g * g
        m_hat = p.adam_m / (1.0 - beta1**t)
        v_hat = p.adam_v / (1.0 - beta2**t)
        p.value -= lr * m_hat / (np.sqrt(v_hat) + eps)
        p.grad[...] = 0.0


def finite_diff_check(fn, x: np.ndarray, h: float = 1e-5) -> float:
    """Worst-coordinate relative error between fn's gradient and central differences.

    ``fn(x)`` must return ``(value, gradient)`` where the gradient is the
    analytic (tape) gradient of the scalar value with respect to ``x``. The
    relative error is |a - b| / max(1, |a|, |b|).
    """
    _, grad = fn(x)
    grad = np.asarray(grad, dtype=np.float64)
    flat = x.reshape(-1)
    worst = 0.0
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        f_plus = fn(x)[0]
        flat[i] = orig - h
        f_minus = fn(x)[0]
        flat[i] = orig
        numeric = (f_plus - f_minus) / (2.0 * h)
        analytic = grad.flat[i]
        err = abs(numeric - analytic) / max(1.0, abs(numeric), abs(analytic))
        worst = max(worst, err)
    return worst


_MAGIC = b"SPPOOLP\x01"
_VERSION = 1


def save_parameters(params, path) -> None:
    """Flat binary dump: magic, version, count, then per-parameter records.

    Each record: u32 name length, UTF-8 name, u32 ndim, u64 dims, then the
    values as little-endian float64.
    """
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _VERSION, len(params)))
        for p in params:
            name = p.name.encode("utf-8")
            fh.write(struct.pack("<I", len(name)))
            fh.write(name)
            fh.write(struct.pack("<I", p.value.ndim))
            fh.write(struct.pack(f"<{p.value.ndim}Q", *p.value.shape))
            fh.write(np.ascontiguousarray(p.value, dtype="<f8").tobytes())


def load_parameters(path) -> list[tuple[str, np.ndarray]]:
    """Read a parameter file written by :func:`save_parameters`."""
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ValueError(f"{path}: not a parameter file (bad magic)")
        version, count = struct.unpack("<II", fh.read(8))
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported parameter file version {version}")
        out = []
        for _ in range(count):
            (name_len,) = struct.unpack("<I", fh.read(4))
            name = fh.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{ndim}Q", fh.read(8 * ndim))
            n_values = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(fh.read(8 * n_values), dtype="<f8").reshape(shape)
            out.append((name, data.astype(np.float64)))
        return out
