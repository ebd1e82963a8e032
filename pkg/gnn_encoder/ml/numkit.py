"""Dense float64 kernels and a finite-difference gradient checker.

Every function here is pure; arrays are never modified in place.
"""
import hashlib
from typing import Callable, Iterable, Mapping, Union

import numpy as np
import numpy.typing as npt

from gnn_encoder.models.errors import DimensionError, NumericError
from gnn_encoder.models.training import GradReport

RealVector = npt.NDArray[np.float64]
RealMatrix = npt.NDArray[np.float64]
Real = Union[float, np.ndarray]

RELATIVE_FLOOR = 1e-8


def as_vector(values, length: int | None = None, name: str = "vector") -> RealVector:
    """Validate and convert to a finite, nonempty float64 vector."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise DimensionError(name, "(n>0,)", arr.shape)
    if length is not None and arr.shape[0] != length:
        raise DimensionError(name, (length,), arr.shape)
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name} contains non-finite entries")
    return arr


def as_matrix(values, shape: tuple[int, int] | None = None, name: str = "matrix") -> RealMatrix:
    """Validate and convert to a finite float64 matrix."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] == 0:
        raise DimensionError(name, "(rows>0, cols>0)", arr.shape)
    if shape is not None and arr.shape != shape:
        raise DimensionError(name, shape, arr.shape)
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name} contains non-finite entries")
    return arr


def leaky_relu(x: Real, slope: float) -> Real:
    """``x`` for ``x >= 0``, ``slope * x`` otherwise."""
    if isinstance(x, np.ndarray):
        return np.where(x >= 0, x, slope * x)
    return x if x >= 0 else slope * x


def leaky_relu_grad(x: Real, slope: float) -> Real:
    # derivative at exactly 0 is taken as 1
    if isinstance(x, np.ndarray):
        return np.where(x >= 0, 1.0, slope)
    return 1.0 if x >= 0 else slope


def elu(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))


def elu_grad(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, 1.0, np.exp(np.minimum(x, 0.0)))


def sigmoid(x: Real) -> Real:
    """Logistic function, evaluated without overflow for large ``|x|``."""
    if isinstance(x, np.ndarray):
        out = np.empty_like(x, dtype=np.float64)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        return out
    if x >= 0:
        return 1.0 / (1.0 + np.exp(-x))
    ex = np.exp(x)
    return ex / (1.0 + ex)


def masked_softmax(scores) -> RealVector:
    """Softmax over a neighbourhood's scores, shifted by the max for stability."""
    arr = np.asarray(scores, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("empty neighborhood")
    shifted = np.exp(arr - arr.max())
    return shifted / shifted.sum()


def log_sum_exp(values: np.ndarray) -> float:
    top = values.max()
    return float(top + np.log(np.exp(values - top).sum()))


def affine(W, x, b) -> RealVector:
    """``W @ x + b``."""
    W = np.asarray(W, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if W.ndim != 2 or x.ndim != 1 or W.shape[1] != x.shape[0]:
        raise DimensionError("affine input", (W.shape[1] if W.ndim == 2 else "?",), x.shape)
    if b.shape != (W.shape[0],):
        raise DimensionError("affine bias", (W.shape[0],), b.shape)
    return W @ x + b


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = RELATIVE_FLOOR) -> np.ndarray:
    """``|a - b| / max(|a|, |b|, floor)`` elementwise."""
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return np.abs(a - b) / denom


def finite_difference_check(
    loss_fn: Callable[[RealVector], float],
    params,
    analytic_grad,
    step: float,
    tol: float,
    floor: float = RELATIVE_FLOOR,
    skip: Iterable[int] = (),
) -> GradReport:
    """Compare an analytic gradient with central differences, coordinate by coordinate.

    ``skip`` names coordinates left out of the comparison, e.g. perturbations that
    would straddle the LeakyReLU kink within ``step``.
    """
    if step <= 0:
        raise ValueError(f"step must be positive, got {step}")
    theta = np.array(params, dtype=np.float64)
    analytic = np.asarray(analytic_grad, dtype=np.float64)
    if analytic.shape != theta.shape:
        raise DimensionError("analytic gradient", theta.shape, analytic.shape)

    skipped = set(skip)
    numeric = np.zeros_like(theta)
    shifted = theta.copy()
    for i in range(theta.size):
        if i in skipped:
            continue
        shifted[i] = theta[i] + step
        plus = loss_fn(shifted)
        shifted[i] = theta[i] - step
        minus = loss_fn(shifted)
        shifted[i] = theta[i]
        if not (np.isfinite(plus) and np.isfinite(minus)):
            raise NumericError(f"non-finite loss while perturbing coordinate {i}")
        numeric[i] = (plus - minus) / (2.0 * step)

    errors = relative_error(numeric, analytic, floor)
    if skipped:
        errors[list(skipped)] = 0.0
    worst = int(np.argmax(errors)) if errors.size else 0
    max_err = float(errors[worst]) if errors.size else 0.0
    return GradReport(
        max_rel_error=max_err,
        passed=max_err <= tol,
        worst_index=worst,
        tol=tol,
        checked=theta.size - len(skipped),
    )


def flatten_tensors(tensors: Mapping[str, np.ndarray]) -> RealVector:
    """Concatenate tensors into one vector in sorted-name order."""
    if not tensors:
        return np.zeros(0)
    return np.concatenate([np.asarray(tensors[name], dtype=np.float64).ravel() for name in sorted(tensors)])


def unflatten_tensors(vector: RealVector, like: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Inverse of :func:`flatten_tensors` against a template of shapes."""
    out: dict[str, np.ndarray] = {}
    offset = 0
    for name in sorted(like):
        shape = np.shape(like[name])
        size = int(np.prod(shape, dtype=np.int64))
        out[name] = np.array(vector[offset:offset + size], dtype=np.float64).reshape(shape)
        offset += size
    if offset != len(vector):
        raise DimensionError("flat parameter vector", (offset,), (len(vector),))
    return out


def tensor_slices(like: Mapping[str, np.ndarray]) -> dict[str, slice]:
    """Where each named tensor lives inside the flattened vector."""
    slices: dict[str, slice] = {}
    offset = 0
    for name in sorted(like):
        size = int(np.prod(np.shape(like[name]), dtype=np.int64))
        slices[name] = slice(offset, offset + size)
        offset += size
    return slices


def grouped_reports(
    loss_fn: Callable[[RealVector], float],
    tensors: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    step: float,
    tol: float,
    floor: float = RELATIVE_FLOOR,
    depth: int = 1,
) -> dict[str, GradReport]:
    """Run one finite-difference check per parameter group.

    Groups are tensor-name prefixes cut at ``depth`` dots (``query.table`` is
    in group ``query`` at depth 1).
    """
    theta = flatten_tensors(tensors)
    analytic = flatten_tensors(grads)
    slices = tensor_slices(tensors)
    groups: dict[str, list[int]] = {}
    for name, sl in slices.items():
        group = ".".join(name.split(".")[:depth])
        groups.setdefault(group, []).extend(range(sl.start, sl.stop))

    reports: dict[str, GradReport] = {}
    for group, coords in groups.items():
        coords_arr = np.array(coords)

        def sub_loss(sub: RealVector, coords_arr=coords_arr) -> float:
            full = theta.copy()
            full[coords_arr] = sub
            return loss_fn(full)

        reports[group] = finite_difference_check(
            sub_loss, theta[coords_arr], analytic[coords_arr], step, tol, floor
        )
    return reports


def tensor_fingerprint(tensors: Mapping[str, np.ndarray]) -> bytes:
    """SHA-256 over names, shapes and little-endian float64 bytes, in sorted-name order."""
    digest = hashlib.sha256()
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        digest.update(name.encode("utf-8"))
        digest.update(np.asarray(arr.shape, dtype="<u8").tobytes())
        digest.update(arr.tobytes())
    return digest.digest()
