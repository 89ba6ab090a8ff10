"""Homogeneous polynomial kernels, their explicit feature maps, weighted
multi-kernel combinations, Gram PSD verification, and a small dense kernel
ridge regression baseline.

The feature map follows the multinomial expansion: the component of
phi_r(x) at multi-index alpha is sqrt(r!/(alpha!)) * x^alpha, in the
canonical multi-index order of :mod:`kvnn.tensors`, so that
<phi_r(x), phi_r(x')> = (x . x')^r.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensors import (
    check_finite,
    enumerate_multi_indices,
    monomial_eval,
    multinomial_coefficient,
)


class EigenSolverError(RuntimeError):
    """The symmetric eigensolver failed; distinct from a PSD failure."""


@dataclass(frozen=True)
class MultiKernelWeights:
    """Non-negative per-order weights a_1..a_p of a summed polynomial kernel.

    The combined kernel is K(x,x') = sum_r a_r^2 (x.x')^r.
    """

    a: tuple[float, ...]

    def __post_init__(self):
        if len(self.a) < 1:
            raise ValueError("need at least one order weight")
        if any(w < 0 for w in self.a):
            raise ValueError(f"order weights must be non-negative, got {self.a}")

    @property
    def max_order(self) -> int:
        return len(self.a)


KernelSpec = int | MultiKernelWeights  # plain order r, or weighted combination


def _checked_pair(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"kernel arguments must be equal-length vectors, got {x.shape} vs {y.shape}")
    return x, y


def poly_kernel(r: int, x, y) -> float:
    """(x . y)^r for integer order r >= 1."""
    if r < 1:
        raise ValueError(f"kernel order must be >= 1, got {r}")
    x, y = _checked_pair(x, y)
    return float(np.dot(x, y)) ** r


def feature_map(r: int, x) -> np.ndarray:
    """Explicit embedding of length C(d+r-1, r) realizing poly_kernel(r, ., .)."""
    if r < 1:
        raise ValueError(f"kernel order must be >= 1, got {r}")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"expected a vector, got shape {x.shape}")
    return np.array(
        [
            math.sqrt(multinomial_coefficient(m)) * monomial_eval(x, m)
            for m in enumerate_multi_indices(len(x), r)
        ]
    )


def multi_kernel(weights: MultiKernelWeights, x, y) -> float:
    """sum_r a_r^2 (x . y)^r."""
    x, y = _checked_pair(x, y)
    dot = float(np.dot(x, y))
    return sum(w * w * dot**r for r, w in enumerate(weights.a, start=1))


def multi_feature_map(weights: MultiKernelWeights, x) -> np.ndarray:
    """Concatenation (a_1 phi_1(x), ..., a_p phi_p(x)) realizing multi_kernel."""
    return np.concatenate(
        [w * feature_map(r, x) for r, w in enumerate(weights.a, start=1)]
    )


def kernel_eval(kernel: KernelSpec, x, y) -> float:
    if isinstance(kernel, MultiKernelWeights):
        return multi_kernel(kernel, x, y)
    return poly_kernel(kernel, x, y)


def gram_matrix(kernel: KernelSpec, points: np.ndarray) -> np.ndarray:
    """Dense Gram matrix over rows of points; exploits kernel symmetry."""
    points = np.asarray(points, dtype=np.float64)
    dots = points @ points.T
    if isinstance(kernel, MultiKernelWeights):
        gram = np.zeros_like(dots)
        for r, w in enumerate(kernel.a, start=1):
            gram += (w * w) * dots**r
        return gram
    return dots**kernel


@dataclass(frozen=True)
class PsdReport:
    min_eig: float
    max_eig: float
    tol: float
    passed: bool


def psd_report(gram: np.ndarray, tol: float) -> PsdReport:
    """Eigenvalue-range PSD check with a tolerance scaled by the top eigenvalue."""
    gram = np.asarray(gram, dtype=np.float64)
    try:
        eigs = np.linalg.eigvalsh(gram)
    except np.linalg.LinAlgError as exc:
        raise EigenSolverError(f"symmetric eigensolver did not converge: {exc}") from exc
    min_eig, max_eig = float(eigs[0]), float(eigs[-1])
    return PsdReport(min_eig, max_eig, tol, min_eig >= -tol * max(1.0, max_eig))


def gram_psd_check(kernel: KernelSpec, points: np.ndarray, tol: float = 1e-8) -> PsdReport:
    points = np.asarray(points, dtype=np.float64)
    if points.shape[0] < 2:
        raise ValueError("PSD check needs at least two points")
    return psd_report(gram_matrix(kernel, points), tol)


@dataclass
class KrrModel:
    """Kernel ridge model: stores every training input as a center.

    The coefficient count equals the sample count by construction; this
    N-scaling is the storage cost the learnable-atom representation avoids.
    """

    kernel: KernelSpec
    centers: np.ndarray  # (N, d)
    gamma: np.ndarray  # (N,)
    ridge: float = field(default=0.0)


def krr_fit(samples: np.ndarray, targets: np.ndarray, kernel: KernelSpec, ridge: float) -> KrrModel:
    """Solve (G + ridge*I) gamma = y with a direct dense solve."""
    samples = check_finite(samples, "samples")
    targets = np.asarray(targets, dtype=np.float64)
    if samples.ndim != 2 or samples.shape[0] < 1:
        raise ValueError(f"samples must be a non-empty (N, d) matrix, got {samples.shape}")
    if targets.shape != (samples.shape[0],):
        raise ValueError(f"targets of shape {targets.shape} do not match N={samples.shape[0]}")
    if ridge < 0:
        raise ValueError(f"ridge must be >= 0, got {ridge}")
    gram = gram_matrix(kernel, samples)
    system = gram + ridge * np.eye(len(samples))
    try:
        gamma = np.linalg.solve(system, targets)
    except np.linalg.LinAlgError as exc:
        raise ValueError(
            f"kernel system is singular at ridge={ridge}; use a ridge > 0"
        ) from exc
    return KrrModel(kernel, samples.copy(), gamma, ridge)


def krr_predict(model: KrrModel, x) -> float:
    """f(x) = sum_j gamma_j K(x, x_j) over all stored centers."""
    x = np.asarray(x, dtype=np.float64)
    dots = model.centers @ x
    if isinstance(model.kernel, MultiKernelWeights):
        k = np.zeros_like(dots)
        for r, w in enumerate(model.kernel.a, start=1):
            k += (w * w) * dots**r
    else:
        k = dots**model.kernel
    return float(model.gamma @ k)
