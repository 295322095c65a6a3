"""Dense/sparse kernels, activations, Adam and a finite-difference checker.

Dense matrices are float64 ``numpy`` arrays; sparse matrices are
``scipy.sparse.csr_matrix`` with sorted indices.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
import scipy.sparse as sp

from .errors import FormatError, NumericError, ShapeError

ACTIVATIONS = ("tanh", "relu", "leaky_relu", "sigmoid", "identity")


def xavier_init(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    if rows < 1 or cols < 1:
        raise ShapeError(f"xavier_init needs positive dims, got ({rows}, {cols})")
    bound = math.sqrt(6.0 / (rows + cols))
    return rng.uniform(-bound, bound, size=(rows, cols))


def spmm(a: sp.spmatrix, b: np.ndarray) -> np.ndarray:
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"spmm shape mismatch: {a.shape} x {b.shape}")
    return np.asarray(sp.csr_matrix(a) @ b, dtype=np.float64)


def apply_activation(m: np.ndarray, kind: str, slope: float = 0.2) -> np.ndarray:
    if kind == "tanh":
        return np.tanh(m)
    if kind == "relu":
        return np.maximum(m, 0.0)
    if kind == "leaky_relu":
        if not 0.0 < slope < 1.0:
            raise ValueError(f"leaky_relu slope must be in (0, 1), got {slope}")
        return np.where(m >= 0.0, m, slope * m)
    if kind == "sigmoid":
        return 0.5 * (1.0 + np.tanh(0.5 * m))
    if kind == "identity":
        return np.array(m, dtype=np.float64, copy=True)
    raise ValueError(f"unknown activation {kind!r}")


def activation_grad(pre: np.ndarray, out: np.ndarray, kind: str, slope: float = 0.2) -> np.ndarray:
    """Elementwise derivative, given both the pre-activation and the output."""
    if kind == "tanh":
        return 1.0 - out * out
    if kind == "relu":
        return (pre > 0.0).astype(np.float64)
    if kind == "leaky_relu":
        return np.where(pre >= 0.0, 1.0, slope)
    if kind == "sigmoid":
        return out * (1.0 - out)
    if kind == "identity":
        return np.ones_like(pre)
    raise ValueError(f"unknown activation {kind!r}")


def l2_normalize_rows(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(normalized, norms)``; all-zero rows pass through unchanged."""
    norms = np.sqrt(np.einsum("ij,ij->i", m, m))
    safe = np.where(norms > 0.0, norms, 1.0)
    return m / safe[:, None], norms


def l2_normalize_rows_backward(grad_out: np.ndarray, normalized: np.ndarray,
                               norms: np.ndarray) -> np.ndarray:
    # d(x/|x|) = (I - y y^T) / |x|
    proj = np.einsum("ij,ij->i", grad_out, normalized)
    safe = np.where(norms > 0.0, norms, 1.0)
    grad = (grad_out - normalized * proj[:, None]) / safe[:, None]
    zero = norms == 0.0
    if zero.any():
        grad[zero] = grad_out[zero]
    return grad


def mask_coordinates(mask: sp.csr_matrix) -> tuple[np.ndarray, np.ndarray]:
    """Row and column index of every stored entry, in CSR order."""
    rows = np.repeat(np.arange(mask.shape[0]), np.diff(mask.indptr))
    return rows, mask.indices.astype(np.int64)


def masked_row_softmax(scores, mask: sp.csr_matrix) -> sp.csr_matrix:
    """Row-wise softmax restricted to the nonzero pattern of ``mask``.

    ``scores`` is either a dense (n x n) array, a sparse matrix with the same
    pattern as ``mask``, or a 1-d array of values in the mask's CSR order.
    Rows with an empty mask produce no entries.
    """
    mask = sp.csr_matrix(mask)
    mask.sort_indices()
    rows, cols = mask_coordinates(mask)
    if sp.issparse(scores):
        s = sp.csr_matrix(scores)
        s.sort_indices()
        if not (np.array_equal(s.indptr, mask.indptr) and np.array_equal(s.indices, mask.indices)):
            raise ShapeError("sparse scores must share the mask's pattern")
        vals = np.asarray(s.data, dtype=np.float64)
    else:
        scores = np.asarray(scores, dtype=np.float64)
        if scores.ndim == 1:
            if len(scores) != len(cols):
                raise ShapeError("score vector length must equal mask nnz")
            vals = scores
        else:
            if scores.shape != mask.shape:
                raise ShapeError(f"scores {scores.shape} vs mask {mask.shape}")
            vals = scores[rows, cols]
    weights = segment_softmax(vals, mask.indptr)
    return sp.csr_matrix((weights, mask.indices.copy(), mask.indptr.copy()), shape=mask.shape)


def segment_softmax(vals: np.ndarray, indptr: np.ndarray) -> np.ndarray:
    counts = np.diff(indptr)
    if len(vals) == 0:
        return np.empty(0, dtype=np.float64)
    starts = indptr[:-1][counts > 0]
    rowmax = np.maximum.reduceat(vals, starts)
    e = np.exp(vals - np.repeat(rowmax, counts[counts > 0]))
    sums = np.add.reduceat(e, starts)
    return e / np.repeat(sums, counts[counts > 0])


def segment_softmax_backward(weights: np.ndarray, grad_weights: np.ndarray,
                             indptr: np.ndarray) -> np.ndarray:
    counts = np.diff(indptr)
    if len(weights) == 0:
        return np.empty(0, dtype=np.float64)
    starts = indptr[:-1][counts > 0]
    dots = np.add.reduceat(weights * grad_weights, starts)
    return weights * (grad_weights - np.repeat(dots, counts[counts > 0]))


def rowwise_dot(a: np.ndarray, b: np.ndarray, rows: np.ndarray, cols: np.ndarray,
                chunk: int = 1 << 15) -> np.ndarray:
    """``out[k] = a[rows[k]] . b[cols[k]]`` without materializing all pairs at once."""
    out = np.empty(len(rows), dtype=np.float64)
    for start in range(0, len(rows), chunk):
        stop = start + chunk
        out[start:stop] = np.einsum("ij,ij->i", a[rows[start:stop]], b[cols[start:stop]])
    return out


@dataclass
class AdamState:
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: Mapping, state: AdamState):
    """One bias-corrected Adam update, applied in place. Returns ``(params, state)``."""
    for name, g in grads.items():
        if name not in params:
            raise ShapeError(f"gradient for unknown parameter {name!r}")
        if params[name].shape != g.shape:
            raise ShapeError(f"{name}: parameter {params[name].shape} vs gradient {g.shape}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, g in grads.items():
        p = params[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


@dataclass
class GradCheckResult:
    max_error: float
    per_param: dict

    def worst(self) -> str:
        return max(self.per_param, key=self.per_param.get)


def finite_diff_check(loss_fn: Callable[[dict], float], params: dict, analytic_grads: Mapping,
                      h: float = 1e-5, max_coords: int | None = None,
                      rng: np.random.Generator | None = None) -> GradCheckResult:
    """Compare analytic gradients against central differences.

    Per coordinate the relative error is
    ``|g_a - g_n| / max(1e-8, |g_a| + |g_n|)``; the result holds the maximum
    per parameter and overall. ``max_coords`` limits the coordinates probed
    per parameter (sampled with ``rng``).
    """
    if h <= 0:
        raise ValueError("h must be positive")
    rng = rng or np.random.default_rng(0)
    per_param = {}
    for name, p in params.items():
        flat = p.reshape(-1)
        ga = np.asarray(analytic_grads[name]).reshape(-1)
        idx = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            idx = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        worst = 0.0
        for k in idx:
            old = flat[k]
            flat[k] = old + h
            fp = loss_fn(params)
            flat[k] = old - h
            fm = loss_fn(params)
            flat[k] = old
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NumericError(f"non-finite loss while perturbing {name}[{k}]")
            gn = (fp - fm) / (2.0 * h)
            err = abs(ga[k] - gn) / max(1e-8, abs(ga[k]) + abs(gn))
            worst = max(worst, err)
        per_param[name] = worst
    return GradCheckResult(max(per_param.values(), default=0.0), per_param)


def write_matrix(f, name: str, m: np.ndarray) -> None:
    m = np.atleast_2d(np.asarray(m, dtype=np.float64))
    if any(c.isspace() for c in name):
        raise FormatError(f"matrix name {name!r} contains whitespace")
    f.write(f"{name} {m.shape[0]} {m.shape[1]}\n")
    for row in m:
        f.write(" ".join(repr(float(x)) for x in row))
        f.write("\n")


def read_matrices(lines) -> dict:
    """Parse ``name rows cols`` blocks from an iterator of lines."""
    out = {}
    it = iter(lines)
    for header in it:
        if not header.strip():
            continue
        parts = header.split()
        if len(parts) != 3:
            raise FormatError(f"bad matrix header {header.strip()!r}")
        name = parts[0]
        try:
            rows, cols = int(parts[1]), int(parts[2])
        except ValueError:
            raise FormatError(f"bad matrix header {header.strip()!r}") from None
        data = np.empty((rows, cols), dtype=np.float64)
        for r in range(rows):
            line = next(it, None)
            if line is None:
                raise FormatError(f"matrix {name!r} truncated at row {r}")
            try:
                vals = [float(x) for x in line.split()]
            except ValueError:
                raise FormatError(f"matrix {name!r} row {r} is not numeric") from None
            if len(vals) != cols:
                raise FormatError(f"matrix {name!r} row {r} has {len(vals)} values, expected {cols}")
            data[r] = vals
        if name in out:
            raise FormatError(f"duplicate matrix {name!r}")
        out[name] = data
    return out


def save_matrices(path, matrices: Mapping, header: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("#config " + json.dumps(header or {}, sort_keys=True) + "\n")
        for name, m in matrices.items():
            write_matrix(f, name, m)


def load_matrices(path) -> tuple[dict, dict]:
    with open(path, encoding="utf-8") as f:
        first = f.readline()
        if not first.startswith("#config "):
            raise FormatError(f"{path}: missing config header")
        try:
            header = json.loads(first[len("#config "):])
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: bad config header: {exc}") from None
        return read_matrices(f), header
