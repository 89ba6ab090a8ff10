"""Optimizers, losses, depth-graded weight decay, and the finite-difference
gradient audit harness.

Decay grows geometrically with layer depth: layer l gets base * growth**l.
The adaptive optimizer uses decoupled decay so the schedule keeps its
meaning regardless of gradient scale across interaction orders.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .layers import Network


@dataclass(frozen=True)
class DecaySchedule:
    """Effective decay for layer l (0-based) is base * growth**l."""

    base: float = 1e-5
    growth: float = 1.3

    def __post_init__(self):
        if self.base < 0:
            raise ValueError(f"base decay must be >= 0, got {self.base}")
        if self.growth < 1:
            raise ValueError(f"decay growth must be >= 1, got {self.growth}")

    def effective(self, layer: int) -> float:
        return self.base * self.growth**layer


def _check_grads(grads: dict[str, np.ndarray]) -> None:
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise RuntimeError(f"non-finite gradient in {name}; aborting step")


def sgd_step(
    params: list[tuple[str, int, np.ndarray]],
    grads: dict[str, np.ndarray],
    lr: float,
    decay: DecaySchedule = DecaySchedule(0.0),
) -> None:
    """In-place theta <- theta - lr * (g + lambda_l * theta)."""
    if lr <= 0:
        raise ValueError(f"learning rate must be > 0, got {lr}")
    _check_grads(grads)
    for name, layer, arr in params:
        g = grads.get(name)
        if g is None:
            continue
        arr -= lr * (g + decay.effective(layer) * arr)


@dataclass
class AdamState:
    """First/second moment buffers mirroring the parameter store."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_step(
    params: list[tuple[str, int, np.ndarray]],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
    decay: DecaySchedule = DecaySchedule(0.0),
) -> None:
    """Adam with bias correction and decoupled per-layer weight decay."""
    if lr <= 0:
        raise ValueError(f"learning rate must be > 0, got {lr}")
    _check_grads(grads)
    b1, b2 = betas
    state.step += 1
    t = state.step
    for name, layer, arr in params:
        g = grads.get(name)
        if g is None:
            continue
        if name not in state.m:
            state.m[name] = np.zeros_like(arr)
            state.v[name] = np.zeros_like(arr)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        arr -= lr * m_hat / (np.sqrt(v_hat) + eps)
        lam = decay.effective(layer)
        if lam:
            arr -= lr * lam * arr

def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm."""
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > max_norm > 0:
        factor = max_norm / total
        for g in grads.values():
            g *= factor
    return total


def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error and its gradient with respect to pred."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred - target
    value = float(np.mean(diff * diff))
    return value, (2.0 / diff.size) * diff


def psnr(pred: np.ndarray, target: np.ndarray, peak: float = 1.0) -> float:
    """10 log10(peak^2 / MSE); +inf when the two signals match exactly."""
    if peak <= 0:
        raise ValueError(f"peak must be > 0, got {peak}")
    mse, _ = mse_loss(pred, target)
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


@dataclass(frozen=True)
class AuditReport:
    max_rel_error: float
    worst_param: str
    n_checked: int
    tolerance: float
    passed: bool

    def __str__(self):
        status = "pass" if self.passed else "FAIL"
        return (
            f"gradient audit: {status} (max rel {self.max_rel_error:.3e} at "
            f"{self.worst_param}, {self.n_checked} entries, tol {self.tolerance:.1e})"
        )


def grad_audit(
    net: Network,
    inputs: np.ndarray,
    h: float = 1e-5,
    tolerance: float = 1e-6,
    n_sample: int = 200,
    seed: int = 0,
) -> AuditReport:
    """Central-difference check of the analytic backward pass.

    The audited functional is a fixed random weighting of the outputs, so
    its exact gradient is the backward pass with that weighting as the
    upstream signal. Checks a random subsample of parameter entries, every
    parameter of one randomly chosen filter, and a sample of input entries.
    Relative errors use a floor of 1e-3 times the largest audited gradient
    so near-zero entries are judged against the gradient's scale.
    """
    params = net.parameters()
    total_entries = sum(arr.size for _, _, arr in params)
    if total_entries > 10_000:
        raise ValueError(f"audit guard: {total_entries} parameters (limit 10000)")
    rng = np.random.default_rng(seed)
    out, cache = net.forward(inputs)
    weights = rng.standard_normal(out.shape)
    grads, input_grad = net.backward(cache, weights)

    def functional() -> float:
        value, _ = net.forward(inputs)
        return float(np.sum(weights * value))

    flat: list[tuple[str, np.ndarray, tuple]] = []
    for name, _, arr in params:
        for idx in np.ndindex(arr.shape):
            flat.append((name, arr, idx))
    picks = set(map(int, rng.choice(len(flat), size=min(n_sample, len(flat)), replace=False)))
    # every parameter of one randomly chosen filter/block
    chosen = rng.integers(len(params))
    chosen_name = params[chosen][0]
    for k, (name, _, _) in enumerate(flat):
        if name == chosen_name:
            picks.add(k)

    scale = max(max(float(np.max(np.abs(g))) for g in grads.values()), 1e-12)
    floor = 1e-3 * scale
    worst, worst_name, checked = 0.0, "", 0

    def rel(analytic: float, numeric: float) -> float:
        return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)

    for k in sorted(picks):
        name, arr, idx = flat[k]
        old = arr[idx]
        arr[idx] = old + h
        plus = functional()
        arr[idx] = old - h
        minus = functional()
        arr[idx] = old
        numeric = (plus - minus) / (2 * h)
        err = rel(float(grads[name][idx]), numeric)
        checked += 1
        if err > worst:
            worst, worst_name = err, f"{name}{list(idx)}"

    inputs_flat = inputs.reshape(-1)
    grad_flat = input_grad.reshape(-1)
    for k in map(int, rng.choice(inputs_flat.size, size=min(50, inputs_flat.size), replace=False)):
        old = inputs_flat[k]
        inputs_flat[k] = old + h
        plus = functional()
        inputs_flat[k] = old - h
        minus = functional()
        inputs_flat[k] = old
        numeric = (plus - minus) / (2 * h)
        err = rel(float(grad_flat[k]), numeric)
        checked += 1
        if err > worst:
            worst, worst_name = err, f"input[{k}]"

    return AuditReport(worst, worst_name, checked, tolerance, worst <= tolerance)
