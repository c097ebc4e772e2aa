"""Dense float64 tensors with reverse-mode autodiff on an explicit tape.

Everything here is desk scale (a few hundred thousand rows at most), so each
primitive is a thin shape-checked wrapper over a numpy kernel that records a
backward closure on the tape.  Graph operators never materialize an N x N
matrix; they are applied through :func:`Tape.scatter_matmul` driven by a
precomputed sparse operator (see :func:`graph_operator`).

Probability-domain primitives (``log``, ``binary_cross_entropy``) clamp their
inputs to ``[PROB_EPS, 1 - PROB_EPS]`` so log-odds of saturated predictions
stay finite.  The clamp means ``log`` is only meant for probabilities.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy import sparse

PROB_EPS = 1e-12


class NumericsError(RuntimeError):
    """Shape mismatch, non-finite value, or misuse of the tape."""


def _check_matrix(name: str, arr: np.ndarray) -> np.ndarray:
    out = np.asarray(arr, dtype=np.float64)
    if out.ndim != 2:
        raise NumericsError(f"{name}: expected a 2-D array, got shape {out.shape}")
    if not np.all(np.isfinite(out)):
        raise NumericsError(f"{name}: non-finite values in input")
    return out


class Tensor:
    """A 2-D float64 value recorded on a tape."""

    __slots__ = ("data", "node_id", "tape")

    def __init__(self, data: np.ndarray, node_id: int, tape: "Tape"):
        self.data = data
        self.node_id = node_id
        self.tape = tape

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.shape != (1, 1):
            raise NumericsError(f"item(): tensor has shape {self.data.shape}, not (1, 1)")
        return float(self.data[0, 0])


class RowSelector:
    """Precomputed gather/scatter between ``n_src`` rows and an index list.

    Building the selection matrix once lets repeated gathers and their
    scatter-add adjoints run as sparse matmuls instead of ``np.add.at``.
    """

    def __init__(self, indices: np.ndarray, n_src: int):
        idx = np.asarray(indices, dtype=np.int64)
        if idx.ndim != 1:
            raise NumericsError("RowSelector: indices must be 1-D")
        if idx.size and (idx.min() < 0 or idx.max() >= n_src):
            raise NumericsError(
                f"RowSelector: index out of range [0, {n_src}) (min {idx.min()}, max {idx.max()})"
            )
        self.indices = idx
        self.n_src = int(n_src)
        m = idx.size
        data = np.ones(m, dtype=np.float64)
        mat = sparse.csr_matrix((data, (np.arange(m), idx)), shape=(m, n_src))
        self._mat = mat
        self._mat_t = mat.T.tocsr()

    def gather(self, a: np.ndarray) -> np.ndarray:
        return a[self.indices]

    def scatter_add(self, g: np.ndarray) -> np.ndarray:
        return np.asarray(self._mat_t @ g)


class GraphOperator:
    """A fixed sparse linear operator (edge list with coefficients).

    ``apply`` computes ``out[d] += coeff_e * h[s]`` over edges ``e=(s, d)``;
    ``apply_t`` is the adjoint.  All coefficients are constants, so gradients
    never flow into the operator itself.
    """

    def __init__(self, mat: sparse.csr_matrix):
        self.mat = mat.tocsr()
        self._mat_t = self.mat.T.tocsr()

    @property
    def shape(self) -> tuple[int, int]:
        return self.mat.shape

    def apply(self, h: np.ndarray) -> np.ndarray:
        return np.asarray(self.mat @ h)

    def apply_t(self, g: np.ndarray) -> np.ndarray:
        return np.asarray(self._mat_t @ g)


def graph_operator(
    src: np.ndarray, dst: np.ndarray, coeff: np.ndarray, n_out: int, n_in: int
) -> GraphOperator:
    """Build a GraphOperator from parallel edge arrays; duplicates sum."""
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    coeff = np.asarray(coeff, dtype=np.float64)
    if not (src.shape == dst.shape == coeff.shape):
        raise NumericsError("graph_operator: src, dst, coeff must have equal length")
    mat = sparse.csr_matrix((coeff, (dst, src)), shape=(n_out, n_in))
    mat.sum_duplicates()
    return GraphOperator(mat)


class _Node:
    __slots__ = ("backward", "parents")

    def __init__(self, backward: Callable, parents: tuple[int, ...]):
        self.backward = backward
        self.parents = parents


class Tape:
    """Records primitive applications for one forward pass.

    Backward visits nodes in reverse recording order exactly once and
    accumulates gradients additively, so parameters shared between branches
    receive the sum of their contributions.  Unused registered parameters get
    zero gradients of matching shape.
    """

    def __init__(self):
        self._nodes: list[_Node | None] = []
        self._values: list[np.ndarray] = []
        self._param_nodes: dict[str, Tensor] = {}

    # ---- node bookkeeping -------------------------------------------------

    def _record(self, value: np.ndarray, backward, parents: tuple[int, ...]) -> Tensor:
        if not np.all(np.isfinite(value)):
            raise NumericsError("primitive produced non-finite output")
        node_id = len(self._values)
        self._values.append(value)
        self._nodes.append(_Node(backward, parents) if backward is not None else None)
        return Tensor(value, node_id, self)

    def constant(self, array) -> Tensor:
        return self._record(_check_matrix("constant", array), None, ())

    def parameter(self, array, name: str) -> Tensor:
        if name in self._param_nodes:
            raise NumericsError(f"parameter {name!r} registered twice")
        t = self._record(_check_matrix(f"parameter {name!r}", array), None, ())
        self._param_nodes[name] = t
        return t

    # ---- primitives -------------------------------------------------------

    def matmul(self, a: Tensor, b: Tensor) -> Tensor:
        if a.cols != b.rows:
            raise NumericsError(f"matmul: inner dims differ, {a.shape} x {b.shape}")
        out = a.data @ b.data

        def back(g, acc):
            acc[a.node_id] += g @ b.data.T
            acc[b.node_id] += a.data.T @ g

        return self._record(out, back, (a.node_id, b.node_id))

    def _broadcast_back(self, g: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
        if g.shape == shape:
            return g
        if shape[0] == 1:
            return g.sum(axis=0, keepdims=True)
        if shape[1] == 1:
            return g.sum(axis=1, keepdims=True)
        raise NumericsError(f"cannot reduce gradient {g.shape} to {shape}")

    def _check_broadcast(self, op: str, a: Tensor, b: Tensor) -> None:
        ok = a.shape == b.shape
        ok = ok or (b.rows == 1 and b.cols == a.cols)
        ok = ok or (b.cols == 1 and b.rows == a.rows)
        if not ok:
            raise NumericsError(f"{op}: incompatible shapes {a.shape} and {b.shape}")

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        self._check_broadcast("add", a, b)
        out = a.data + b.data

        def back(g, acc):
            acc[a.node_id] += g
            acc[b.node_id] += self._broadcast_back(g, b.shape)

        return self._record(out, back, (a.node_id, b.node_id))

    def sub(self, a: Tensor, b: Tensor) -> Tensor:
        self._check_broadcast("sub", a, b)
        out = a.data - b.data

        def back(g, acc):
            acc[a.node_id] += g
            acc[b.node_id] -= self._broadcast_back(g, b.shape)

        return self._record(out, back, (a.node_id, b.node_id))

    def mul(self, a: Tensor, b: Tensor) -> Tensor:
        self._check_broadcast("mul", a, b)
        out = a.data * b.data

        def back(g, acc):
            acc[a.node_id] += self._broadcast_back(g * b.data, a.shape)
            acc[b.node_id] += self._broadcast_back(g * a.data, b.shape)

        return self._record(out, back, (a.node_id, b.node_id))

    def scalar_mul(self, c: float, a: Tensor) -> Tensor:
        c = float(c)
        out = c * a.data

        def back(g, acc):
            acc[a.node_id] += c * g

        return self._record(out, back, (a.node_id,))

    def relu(self, a: Tensor) -> Tensor:
        mask = a.data > 0.0
        out = np.where(mask, a.data, 0.0)

        def back(g, acc):
            acc[a.node_id] += g * mask

        return self._record(out, back, (a.node_id,))

    def sigmoid(self, a: Tensor) -> Tensor:
        x = a.data
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)

        def back(g, acc):
            acc[a.node_id] += g * out * (1.0 - out)

        return self._record(out, back, (a.node_id,))

    def log(self, a: Tensor) -> Tensor:
        # Probability-domain log: input clamped to [PROB_EPS, 1 - PROB_EPS].
        xc = np.clip(a.data, PROB_EPS, 1.0 - PROB_EPS)
        out = np.log(xc)

        def back(g, acc):
            acc[a.node_id] += g / xc

        return self._record(out, back, (a.node_id,))

    def sum(self, a: Tensor) -> Tensor:
        out = np.array([[a.data.sum()]])

        def back(g, acc):
            acc[a.node_id] += g[0, 0]

        return self._record(out, back, (a.node_id,))

    def rowwise_normalize(self, a: Tensor) -> Tensor:
        # Each row divided by its sum; rows summing below PROB_EPS use the
        # clamped denominator (gradient treats the clamp as constant).
        s = np.maximum(a.data.sum(axis=1, keepdims=True), PROB_EPS)
        out = a.data / s

        def back(g, acc):
            dot = (g * a.data).sum(axis=1, keepdims=True)
            acc[a.node_id] += g / s - dot / (s * s)

        return self._record(out, back, (a.node_id,))

    def gather_rows(self, a: Tensor, selector: RowSelector | np.ndarray) -> Tensor:
        if not isinstance(selector, RowSelector):
            selector = RowSelector(selector, a.rows)
        if selector.n_src != a.rows:
            raise NumericsError(
                f"gather_rows: selector built for {selector.n_src} rows, tensor has {a.rows}"
            )
        out = selector.gather(a.data)
        sel = selector

        def back(g, acc):
            acc[a.node_id] += sel.scatter_add(g)

        return self._record(out, back, (a.node_id,))

    def scatter_add_rows(self, a: Tensor, selector: RowSelector | np.ndarray, n_rows: int | None = None) -> Tensor:
        if not isinstance(selector, RowSelector):
            if n_rows is None:
                raise NumericsError("scatter_add_rows: n_rows required with a raw index array")
            selector = RowSelector(selector, n_rows)
        if selector.indices.size != a.rows:
            raise NumericsError(
                f"scatter_add_rows: {selector.indices.size} indices for {a.rows} rows"
            )
        out = selector.scatter_add(a.data)
        sel = selector

        def back(g, acc):
            acc[a.node_id] += sel.gather(g)

        return self._record(out, back, (a.node_id,))

    def scatter_matmul(self, op: GraphOperator, h: Tensor) -> Tensor:
        if op.shape[1] != h.rows:
            raise NumericsError(
                f"scatter_matmul: operator expects {op.shape[1]} rows, tensor has {h.rows}"
            )
        out = op.apply(h.data)

        def back(g, acc):
            acc[h.node_id] += op.apply_t(g)

        return self._record(out, back, (h.node_id,))

    def hconcat(self, a: Tensor, b: Tensor) -> Tensor:
        if a.rows != b.rows:
            raise NumericsError(f"hconcat: row counts differ, {a.shape} vs {b.shape}")
        out = np.hstack([a.data, b.data])
        split = a.cols

        def back(g, acc):
            acc[a.node_id] += g[:, :split]
            acc[b.node_id] += g[:, split:]

        return self._record(out, back, (a.node_id, b.node_id))

    def binary_cross_entropy(self, p: Tensor, targets: np.ndarray, mean: bool = False) -> Tensor:
        y = _check_matrix("binary_cross_entropy targets", targets)
        if y.shape != p.shape:
            raise NumericsError(f"binary_cross_entropy: target shape {y.shape} != {p.shape}")
        pc = np.clip(p.data, PROB_EPS, 1.0 - PROB_EPS)
        terms = -(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc))
        scale = 1.0 / p.data.size if mean else 1.0
        out = np.array([[terms.sum() * scale]])

        def back(g, acc):
            acc[p.node_id] += g[0, 0] * scale * (pc - y) / (pc * (1.0 - pc))

        return self._record(out, back, (p.node_id,))

    # ---- backward ---------------------------------------------------------

    def backward(self, loss: Tensor) -> dict[str, np.ndarray]:
        if loss.tape is not self:
            raise NumericsError("backward: loss recorded on a different tape")
        if loss.data.shape != (1, 1):
            raise NumericsError(f"backward: loss must be scalar, got shape {loss.data.shape}")
        needed = self._reachable(loss.node_id)
        acc: dict[int, np.ndarray] = {nid: np.zeros_like(self._values[nid]) for nid in needed}
        acc[loss.node_id] = np.ones((1, 1))

        for nid in range(loss.node_id, -1, -1):
            node = self._nodes[nid]
            if node is None or nid not in acc:
                continue
            node.backward(acc[nid], acc)

        grads: dict[str, np.ndarray] = {}
        for name, t in self._param_nodes.items():
            grads[name] = acc.get(t.node_id, np.zeros_like(t.data))
        return grads

    def _reachable(self, root: int) -> set[int]:
        seen = {root}
        stack = [root]
        while stack:
            nid = stack.pop()
            node = self._nodes[nid]
            if node is None:
                continue
            for p in node.parents:
                if p not in seen:
                    seen.add(p)
                    stack.append(p)
        return seen


def grad_check(
    f: Callable[[Sequence[np.ndarray]], tuple[float, Sequence[np.ndarray]]],
    params: Sequence[np.ndarray],
    eps: float = 1e-5,
) -> float:
    """Max relative error between analytic gradients and central differences.

    ``f`` maps a list of parameter arrays to ``(loss, grads)`` where grads are
    analytic gradients in the same order.  The relative error for each
    coordinate is ``|analytic - numeric| / max(1, |numeric|)``.
    """
    if not (1e-7 <= eps <= 1e-3):
        raise NumericsError(f"grad_check: eps {eps} outside [1e-7, 1e-3]")
    params = [np.asarray(p, dtype=np.float64) for p in params]
    loss0, grads = f(params)
    if not np.isfinite(loss0):
        raise NumericsError("grad_check: non-finite loss at base point")
    grads = [np.asarray(g, dtype=np.float64) for g in grads]
    worst = 0.0
    for k, p in enumerate(params):
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            ix = it.multi_index
            orig = p[ix]
            p[ix] = orig + eps
            lo_plus, _ = f(params)
            p[ix] = orig - eps
            lo_minus, _ = f(params)
            p[ix] = orig
            if not (np.isfinite(lo_plus) and np.isfinite(lo_minus)):
                raise NumericsError("grad_check: non-finite loss at perturbed point")
            numeric = (lo_plus - lo_minus) / (2.0 * eps)
            analytic = grads[k][ix]
            err = abs(analytic - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    return worst
