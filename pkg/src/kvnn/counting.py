"""Exact parameter and FLOP accounting over a topology description.

FLOP convention (pinned here because it changes the numbers):
  * one multiply-accumulate = 2 FLOPs;
  * powers are computed by repeated multiplication, so an order-r atom
    spends (r-1) extra multiplies on top of its dot product;
  * each atom spends one multiply on its coefficient, and combining k
    branch terms costs k-1 additions (plus 1 for a bias);
  * batch-norm affine costs 2 FLOPs per output element at inference;
  * ReLU costs nothing.
"""

from __future__ import annotations

from dataclasses import dataclass

from .topology import BlockSpec, Topology

FLOP_CONVENTION = (
    "MAC=2 FLOPs; powers by repeated multiplication ((r-1) extra multiplies "
    "per order-r atom); +1 multiply per atom coefficient; k-1 additions to "
    "combine k terms (+1 for bias); batchnorm affine 2 FLOPs/element; ReLU free"
)


def block_params(block: BlockSpec) -> int:
    """Learnable scalars in one block."""
    if block.type == "conv":
        count = block.c_out * block.patch_dim
        if block.bias:
            count += block.c_out
    elif block.type == "kvnn":
        atoms = sum(block.atom_counts)
        count = block.c_out * atoms * (block.patch_dim + 1)
        if block.bias:
            count += block.c_out
    else:  # pragma: no cover - BlockSpec already validates
        raise ValueError(f"unknown block type {block.type!r}")
    if block.batchnorm:
        count += 2 * block.c_out
    return count


def count_params(topology: Topology) -> int:
    return sum(block_params(b) for b in topology.blocks)


def _block_flops_per_location(block: BlockSpec) -> int:
    d = block.patch_dim
    if block.type == "conv":
        flops = 2 * d
        if block.bias:
            flops += 1
        return flops
    atoms = sum(block.atom_counts)
    flops = 2 * d * atoms  # one dot product per atom
    for r, count in enumerate(block.atom_counts, start=1):
        flops += count * (r - 1)  # raising each projection to the r-th power
    flops += atoms  # coefficient multiplies
    flops += atoms - 1  # summing branch terms
    if block.bias:
        flops += 1
    return flops


@dataclass(frozen=True)
class FlopReport:
    total: int
    per_block: tuple[int, ...]
    input_shape: tuple[int, int, int]
    convention: str = FLOP_CONVENTION

    @property
    def gflops(self) -> float:
        return self.total / 1e9


def count_flops(topology: Topology, input_shape: tuple[int, int, int]) -> FlopReport:
    """Total forward FLOPs for one input of the given (C, H, W) shape."""
    channels, height, width = input_shape
    per_block = []
    for block in topology.blocks:
        if block.c_in != channels:
            raise ValueError(
                f"input has {channels} channels but block expects {block.c_in}"
            )
        kh, kw = block.kernel
        h_out = (height + 2 * block.pad - kh) // block.stride + 1
        w_out = (width + 2 * block.pad - kw) // block.stride + 1
        if h_out < 1 or w_out < 1:
            raise ValueError(f"block kernel {block.kernel} does not fit {height}x{width}")
        locations = h_out * w_out
        flops = locations * block.c_out * _block_flops_per_location(block)
        if block.batchnorm:
            flops += 2 * locations * block.c_out
        per_block.append(flops)
        channels, height, width = block.c_out, h_out, w_out
    return FlopReport(sum(per_block), tuple(per_block), tuple(input_shape))
