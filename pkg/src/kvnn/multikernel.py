"""Learnable multi-kernel Volterra representation.

A map is a per-order collection of kernel atoms gamma * (x . w)^r. Summed
over atoms and orders it represents a truncated Volterra mapping; each
order-r branch spans degree-r homogeneous polynomials, and a branch of
C(d+r-1, r) atoms with generic centers spans all of them. `fit_exact`
turns that spanning argument into a linear solve; `atoms_to_tensor`
converts a branch to its dense symmetric coefficient tensor, connecting
back to the brute-force oracle in :mod:`kvnn.volterra`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensors import (
    check_finite,
    enumerate_multi_indices,
    monomial_eval,
    multi_index_count,
    multinomial_coefficient,
)
from .volterra import MAX_ORACLE_DIM, MAX_ORACLE_ORDER

MAX_FIT_DIM = 6
MAX_FIT_ORDER = 3
FIT_COND_LIMIT = 1e10
FIT_MAX_RETRIES = 16


class FitConditioningError(RuntimeError):
    """Center resampling exhausted without a well-conditioned design matrix."""


@dataclass
class KernelAtom:
    """One term gamma * (x . w)^r with learnable center w and coefficient gamma."""

    order: int
    center: np.ndarray
    gamma: float

    def __post_init__(self):
        if self.order < 1:
            raise ValueError(f"atom order must be >= 1, got {self.order}")
        self.center = check_finite(self.center, "atom center")
        if self.center.ndim != 1:
            raise ValueError(f"atom center must be a vector, got shape {self.center.shape}")


@dataclass
class OrderBranch:
    """All atoms of one order, stored as a center matrix and coefficient vector."""

    order: int
    centers: np.ndarray  # (M, d)
    gammas: np.ndarray  # (M,)

    def __post_init__(self):
        self.centers = check_finite(self.centers, "branch centers")
        self.gammas = check_finite(self.gammas, "branch coefficients")
        if self.order < 1:
            raise ValueError(f"branch order must be >= 1, got {self.order}")
        if self.centers.ndim != 2 or self.centers.shape[0] < 1:
            raise ValueError(f"centers must be a non-empty (M, d) matrix, got {self.centers.shape}")
        if self.gammas.shape != (self.centers.shape[0],):
            raise ValueError(
                f"{self.centers.shape[0]} centers but {self.gammas.shape} coefficients"
            )

    @property
    def count(self) -> int:
        return self.centers.shape[0]

    @property
    def input_dim(self) -> int:
        return self.centers.shape[1]

    @property
    def atoms(self) -> list[KernelAtom]:
        return [
            KernelAtom(self.order, self.centers[i], float(self.gammas[i]))
            for i in range(self.count)
        ]

    @classmethod
    def from_atoms(cls, atoms: list[KernelAtom]) -> "OrderBranch":
        if not atoms:
            raise ValueError("branch needs at least one atom")
        order = atoms[0].order
        dim = len(atoms[0].center)
        if any(a.order != order or len(a.center) != dim for a in atoms):
            raise ValueError("all atoms in a branch must share order and dimension")
        return cls(order, np.stack([a.center for a in atoms]), np.array([a.gamma for a in atoms]))


@dataclass
class MKVolterraMap:
    """One branch per order 1..p; a None entry marks a skipped order."""

    input_dim: int
    order: int
    branches: list[OrderBranch | None]

    def __post_init__(self):
        if self.order < 1:
            raise ValueError(f"map order must be >= 1, got {self.order}")
        if len(self.branches) != self.order:
            raise ValueError(f"expected {self.order} branch slots, got {len(self.branches)}")
        for r, branch in enumerate(self.branches, start=1):
            if branch is None:
                continue
            if branch.order != r:
                raise ValueError(f"branch at slot {r} has order {branch.order}")
            if branch.input_dim != self.input_dim:
                raise ValueError(
                    f"branch {r} dimension {branch.input_dim} != map dimension {self.input_dim}"
                )

    def branch(self, r: int) -> OrderBranch | None:
        if not 1 <= r <= self.order:
            raise ValueError(f"order {r} outside 1..{self.order}")
        return self.branches[r - 1]


def eval_atom(atom: KernelAtom, x) -> float:
    """gamma * (x . w)^r."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != atom.center.shape:
        raise ValueError(f"input shape {x.shape} does not match center {atom.center.shape}")
    return atom.gamma * float(np.dot(x, atom.center)) ** atom.order


def branch_eval_batch(branch: OrderBranch, points: np.ndarray) -> np.ndarray:
    """Evaluate a branch on rows of points: ((points @ W^T)^r) @ gammas."""
    points = np.asarray(points, dtype=np.float64)
    proj = points @ branch.centers.T
    return proj**branch.order @ branch.gammas


def eval_order(mk_map: MKVolterraMap, r: int, x) -> float:
    """Only the order-r branch; zero for a skipped order."""
    branch = mk_map.branch(r)
    if branch is None:
        return 0.0
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (mk_map.input_dim,):
        raise ValueError(f"input shape {x.shape} does not match d={mk_map.input_dim}")
    return float(branch_eval_batch(branch, x[None, :])[0])


def eval_mk(mk_map: MKVolterraMap, x) -> float:
    """f(x) = sum_r sum_i gamma_{r,i} (x . w_{r,i})^r."""
    return sum(eval_order(mk_map, r, x) for r in range(1, mk_map.order + 1))


def eval_mk_batch(mk_map: MKVolterraMap, points: np.ndarray) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64)
    total = np.zeros(points.shape[0])
    for branch in mk_map.branches:
        if branch is not None:
            total += branch_eval_batch(branch, points)
    return total


def atoms_to_tensor(branch: OrderBranch) -> np.ndarray:
    """sum_i gamma_i * w_i^(outer r): the branch's dense coefficient tensor.

    Exactly symmetric by construction since every rank-one term is.
    """
    d, r = branch.input_dim, branch.order
    if d > MAX_ORACLE_DIM or r > MAX_ORACLE_ORDER:
        raise ValueError(
            f"oracle guard: need d <= {MAX_ORACLE_DIM} and r <= {MAX_ORACLE_ORDER}, "
            f"got d={d}, r={r}"
        )
    total = np.zeros((d,) * r)
    for i in range(branch.count):
        term = branch.gammas[i]
        for _ in range(r):
            term = np.multiply.outer(term, branch.centers[i])
        total += term
    return total


def _sphere_centers(rng: np.random.Generator, count: int, dim: int) -> np.ndarray:
    vecs = rng.standard_normal((count, dim))
    return vecs / np.linalg.norm(vecs, axis=1, keepdims=True)


def _monomial_design(centers: np.ndarray, r: int) -> np.ndarray:
    """Row alpha, column i: multinomial(alpha) * w_i^alpha.

    These are the monomial-basis coefficients of (x . w_i)^r, so solving
    against a target's monomial coefficients reproduces it exactly.
    """
    indices = enumerate_multi_indices(centers.shape[1], r)
    design = np.empty((len(indices), centers.shape[0]))
    for row, m in enumerate(indices):
        coef = multinomial_coefficient(m)
        for col in range(centers.shape[0]):
            design[row, col] = coef * monomial_eval(centers[col], m)
    return design


def _monomial_targets(target: np.ndarray, r: int) -> np.ndarray:
    """Monomial coefficients of the symmetric tensor's polynomial."""
    d = target.shape[0]
    out = np.empty(multi_index_count(d, r))
    for row, m in enumerate(enumerate_multi_indices(d, r)):
        rep = tuple(i for i, a in enumerate(m.alpha) for _ in range(a))
        out[row] = multinomial_coefficient(m) * target[rep]
    return out


def fit_exact(target: np.ndarray, r: int, seed: int = 0) -> OrderBranch:
    """Represent a symmetric degree-r coefficient tensor with C(d+r-1, r) atoms.

    Centers are sampled uniformly on the unit sphere (center scale trades
    against gamma, so normalizing removes that gauge freedom); coefficients
    come from a dense solve of the monomial-basis design system. Random
    centers span generically, but the solve is re-seeded up to 16 times if
    the design matrix condition number exceeds 1e10.
    """
    target = check_finite(target, "fit target")
    d = target.shape[0] if target.ndim else 0
    if target.shape != (d,) * r or r < 1:
        raise ValueError(f"target of shape {target.shape} is not a rank-{r} cubical tensor")
    if d > MAX_FIT_DIM or r > MAX_FIT_ORDER:
        raise ValueError(
            f"fit guard: need d <= {MAX_FIT_DIM} and r <= {MAX_FIT_ORDER}, got d={d}, r={r}"
        )
    count = multi_index_count(d, r)
    targets = _monomial_targets(target, r)
    for attempt in range(FIT_MAX_RETRIES):
        rng = np.random.default_rng(seed + attempt)
        centers = _sphere_centers(rng, count, d)
        design = _monomial_design(centers, r)
        cond = np.linalg.cond(design)
        if cond > FIT_COND_LIMIT:
            continue
        gammas = np.linalg.solve(design, targets)
        # one refinement step claws back digits lost to conditioning
        residual = targets - design @ gammas
        gammas += np.linalg.solve(design, residual)
        return OrderBranch(r, centers, gammas)
    raise FitConditioningError(
        f"no well-conditioned center set for d={d}, r={r} after {FIT_MAX_RETRIES} "
        f"resamples from seed {seed} (last condition number {cond:.3e})"
    )


def init_mk(
    seed: int,
    d: int,
    p: int,
    counts: tuple[int, ...],
    gain: float = 1.0,
) -> MKVolterraMap:
    """Random map with the given per-order atom counts; a count of 0 skips an order.

    Centers are N(0, (gain/sqrt(d))^2) per entry so projections of
    unit-variance inputs are O(gain) at every order, and coefficients are
    N(0, 1/M_r) so each branch output stays O(1) at init.
    """
    if len(counts) != p:
        raise ValueError(f"expected {p} atom counts, got {len(counts)}")
    if any(c < 0 for c in counts):
        raise ValueError(f"atom counts must be >= 0, got {counts}")
    rng = np.random.default_rng(seed)
    branches: list[OrderBranch | None] = []
    for r, count in enumerate(counts, start=1):
        if count == 0:
            branches.append(None)
            continue
        centers = rng.normal(0.0, gain / np.sqrt(d), size=(count, d))
        gammas = rng.normal(0.0, 1.0 / np.sqrt(count), size=count)
        branches.append(OrderBranch(r, centers, gammas))
    return MKVolterraMap(d, p, branches)


def save_map(mk_map: MKVolterraMap, directory) -> None:
    """JSON manifest plus KVT1 payloads (per branch: center matrix, coefficients)."""
    from .tensors import write_kvt

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for r in range(1, mk_map.order + 1):
        branch = mk_map.branch(r)
        if branch is None:
            entries.append(None)
            continue
        centers_file, gammas_file = f"order{r}_centers.kvt", f"order{r}_gammas.kvt"
        write_kvt(directory / centers_file, branch.centers)
        write_kvt(directory / gammas_file, branch.gammas)
        entries.append({"order": r, "centers": centers_file, "gammas": gammas_file})
    manifest = {"input_dim": mk_map.input_dim, "order": mk_map.order, "branches": entries}
    (directory / "map.json").write_text(json.dumps(manifest, indent=2) + "\n")


def load_map(directory) -> MKVolterraMap:
    from .tensors import read_kvt

    directory = Path(directory)
    manifest = json.loads((directory / "map.json").read_text())
    branches: list[OrderBranch | None] = []
    for entry in manifest["branches"]:
        if entry is None:
            branches.append(None)
            continue
        branches.append(
            OrderBranch(
                entry["order"],
                read_kvt(directory / entry["centers"]),
                read_kvt(directory / entry["gammas"]),
            )
        )
    return MKVolterraMap(manifest["input_dim"], manifest["order"], branches)
