"""Explicit dense truncated Volterra mapping.

This is the correctness oracle for every kernelized representation in the
package: coefficients are stored as full d^r arrays with no compression,
and evaluation is a plain full contraction. Clarity beats space here.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensors import check_finite, read_kvt, write_kvt

# Full d^r storage: keep the oracle cheap enough to enumerate exhaustively.
MAX_ORACLE_DIM = 8
MAX_ORACLE_ORDER = 3


@dataclass
class VolterraCoefficients:
    """Coefficient tensors h_1..h_p of a degree-p truncated Volterra map.

    h_r has r axes of extent d. The constant term is fixed to zero and has
    no field.
    """

    input_dim: int
    order: int
    tensors: list[np.ndarray]

    def __post_init__(self):
        if self.order < 1:
            raise ValueError(f"order must be >= 1, got {self.order}")
        if len(self.tensors) != self.order:
            raise ValueError(f"expected {self.order} coefficient tensors, got {len(self.tensors)}")
        for r, h in enumerate(self.tensors, start=1):
            if h.shape != (self.input_dim,) * r:
                raise ValueError(
                    f"h_{r} must have shape {(self.input_dim,) * r}, got {h.shape}"
                )
            check_finite(h, f"h_{r}")


def eval_volterra(coeffs: VolterraCoefficients, x: np.ndarray) -> float:
    """f(x) = sum_r sum_{i_1..i_r} h_r(i_1,..,i_r) x_{i_1}..x_{i_r}."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (coeffs.input_dim,):
        raise ValueError(f"input of shape {x.shape} does not match d={coeffs.input_dim}")
    total = 0.0
    for h in coeffs.tensors:
        contracted = h
        while contracted.ndim > 0:
            contracted = contracted @ x
        total += float(contracted)
    return total


def eval_volterra_order(coeffs: VolterraCoefficients, r: int, x: np.ndarray) -> float:
    """Only the degree-r homogeneous component of eval_volterra."""
    if not 1 <= r <= coeffs.order:
        raise ValueError(f"order {r} outside 1..{coeffs.order}")
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (coeffs.input_dim,):
        raise ValueError(f"input of shape {x.shape} does not match d={coeffs.input_dim}")
    contracted = coeffs.tensors[r - 1]
    while contracted.ndim > 0:
        contracted = contracted @ x
    return float(contracted)


def symmetrize(h: np.ndarray) -> np.ndarray:
    """Average h over all axis permutations.

    The result is exactly symmetric by construction: each index multiset is
    averaged once (in a fixed order) and the same float is written to every
    permuted position. Already-symmetric inputs are exact fixed points.
    """
    h = np.asarray(h, dtype=np.float64)
    r = h.ndim
    if r == 0:
        return h.copy()
    d = h.shape[0]
    if h.shape != (d,) * r:
        raise ValueError(f"tensor is not cubical: shape {h.shape}")
    out = np.empty_like(h)
    for combo in itertools.combinations_with_replacement(range(d), r):
        positions = set(itertools.permutations(combo))
        vals = [h[p] for p in sorted(positions)]
        first = vals[0]
        avg = first if all(v == first for v in vals) else sum(vals) / len(vals)
        for p in positions:
            out[p] = avg
    return out


def random_volterra(seed: int, d: int, p: int, scale: float = 1.0) -> VolterraCoefficients:
    """Reproducible symmetric coefficients with entries drawn from [-scale, scale]."""
    if d > MAX_ORACLE_DIM or p > MAX_ORACLE_ORDER:
        raise ValueError(
            f"oracle guard: need d <= {MAX_ORACLE_DIM} and p <= {MAX_ORACLE_ORDER}, "
            f"got d={d}, p={p}"
        )
    rng = np.random.default_rng(seed)
    tensors = [
        symmetrize(rng.uniform(-scale, scale, size=(d,) * r)) for r in range(1, p + 1)
    ]
    return VolterraCoefficients(d, p, tensors)


def save_volterra(coeffs: VolterraCoefficients, directory) -> None:
    """KVT1 payload per order plus a JSON manifest listing d, p, and files."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = []
    for r, h in enumerate(coeffs.tensors, start=1):
        name = f"h{r}.kvt"
        write_kvt(directory / name, h)
        files.append(name)
    manifest = {"input_dim": coeffs.input_dim, "order": coeffs.order, "tensors": files}
    (directory / "volterra.json").write_text(json.dumps(manifest, indent=2) + "\n")


def load_volterra(directory) -> VolterraCoefficients:
    directory = Path(directory)
    manifest = json.loads((directory / "volterra.json").read_text())
    tensors = [read_kvt(directory / name) for name in manifest["tensors"]]
    return VolterraCoefficients(manifest["input_dim"], manifest["order"], tensors)
