"""Declarative network topology: an ordered list of blocks in JSON.

Block fields: type ("conv" or "kvnn"), c_in, c_out, kernel ([kh, kw] or a
single int), stride, pad, bias, batchnorm, and for kvnn blocks the branch
structure p/n/m (max order, quadratic atom count, cubic atom count). Conv
blocks may set relu for a coupled activation; kvnn blocks never carry one
(the power terms are the nonlinearity). The same file feeds parameter and
FLOP counting, network construction, and training.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

BLOCK_TYPES = ("conv", "kvnn")


@dataclass(frozen=True)
class BlockSpec:
    type: str
    c_in: int
    c_out: int
    kernel: tuple[int, int] = (3, 3)
    stride: int = 1
    pad: int = 0
    bias: bool = False
    batchnorm: bool = False
    relu: bool = False
    p: int = 1
    n: int = 0
    m: int = 0

    def __post_init__(self):
        if self.type not in BLOCK_TYPES:
            raise ValueError(f"unknown block type {self.type!r}; expected one of {BLOCK_TYPES}")
        if self.c_in < 1 or self.c_out < 1:
            raise ValueError(f"channel counts must be >= 1, got c_in={self.c_in}, c_out={self.c_out}")
        if self.kernel[0] < 1 or self.kernel[1] < 1 or self.stride < 1 or self.pad < 0:
            raise ValueError(f"bad geometry: kernel={self.kernel}, stride={self.stride}, pad={self.pad}")
        if self.type == "kvnn":
            if self.p not in (1, 2, 3):
                raise ValueError(f"kvnn max order must be 1, 2, or 3, got {self.p}")
            if self.p >= 2 and self.n < 1:
                raise ValueError(f"kvnn block with p={self.p} needs n >= 1 quadratic atoms")
            if self.p == 3 and self.m < 1:
                raise ValueError("kvnn block with p=3 needs m >= 1 cubic atoms")
            if self.p < 3 and self.m != 0:
                raise ValueError(f"m={self.m} given but p={self.p} has no cubic branch")
            if self.p < 2 and self.n != 0:
                raise ValueError(f"n={self.n} given but p={self.p} has no quadratic branch")
            if self.relu:
                raise ValueError("kvnn blocks carry no external activation")

    @property
    def patch_dim(self) -> int:
        return self.c_in * self.kernel[0] * self.kernel[1]

    @property
    def atom_counts(self) -> tuple[int, ...]:
        """Per-order atom counts (1, n, m) truncated to the block's max order."""
        return (1, self.n, self.m)[: self.p]

    def to_dict(self) -> dict:
        out = {
            "type": self.type,
            "c_in": self.c_in,
            "c_out": self.c_out,
            "kernel": list(self.kernel),
            "stride": self.stride,
            "pad": self.pad,
            "bias": self.bias,
            "batchnorm": self.batchnorm,
        }
        if self.type == "conv":
            out["relu"] = self.relu
        else:
            out.update(p=self.p, n=self.n, m=self.m)
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "BlockSpec":
        raw = dict(raw)
        if "type" not in raw:
            raise ValueError("block is missing a type")
        kernel = raw.get("kernel", 3)
        if isinstance(kernel, int):
            kernel = (kernel, kernel)
        else:
            kernel = tuple(int(k) for k in kernel)
            if len(kernel) != 2:
                raise ValueError(f"kernel must be an int or [kh, kw], got {raw.get('kernel')}")
        known = {
            "type", "c_in", "c_out", "kernel", "stride", "pad",
            "bias", "batchnorm", "relu", "p", "n", "m",
        }
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown block fields: {sorted(unknown)}")
        raw["kernel"] = kernel
        return cls(**raw)


@dataclass
class Topology:
    blocks: list[BlockSpec] = field(default_factory=list)

    def __post_init__(self):
        for prev, cur in zip(self.blocks, self.blocks[1:]):
            if prev.c_out != cur.c_in:
                raise ValueError(
                    f"channel mismatch between consecutive blocks: {prev.c_out} -> {cur.c_in}"
                )

    def to_dict(self) -> dict:
        return {"blocks": [b.to_dict() for b in self.blocks]}

    @classmethod
    def from_dict(cls, raw: dict) -> "Topology":
        return cls([BlockSpec.from_dict(b) for b in raw["blocks"]])

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "Topology":
        return cls.from_dict(json.loads(Path(path).read_text()))


def conv_denoiser(depth: int, channels: int, kernel: int = 3, image_channels: int = 1) -> Topology:
    """Standard residual-denoiser stack: conv+relu head, conv+bn+relu body, conv tail."""
    if depth < 2:
        raise ValueError(f"denoiser needs depth >= 2, got {depth}")
    pad = kernel // 2
    blocks = [BlockSpec("conv", image_channels, channels, (kernel, kernel), 1, pad, bias=True, relu=True)]
    for _ in range(depth - 2):
        blocks.append(
            BlockSpec("conv", channels, channels, (kernel, kernel), 1, pad,
                      bias=True, batchnorm=True, relu=True)
        )
    blocks.append(BlockSpec("conv", channels, image_channels, (kernel, kernel), 1, pad, bias=True))
    return Topology(blocks)


def kvnn_denoiser(
    depth: int,
    channels: int,
    kernel: int = 3,
    image_channels: int = 1,
    p: int = 2,
    n: int = 1,
    m: int = 0,
) -> Topology:
    """Conv-replacement stack of kvnn blocks (no coupled activations, no bias)."""
    if depth < 2:
        raise ValueError(f"denoiser needs depth >= 2, got {depth}")
    pad = kernel // 2
    def block(c_in, c_out):
        return BlockSpec("kvnn", c_in, c_out, (kernel, kernel), 1, pad, p=p, n=n, m=m)
    blocks = [block(image_channels, channels)]
    for _ in range(depth - 2):
        blocks.append(block(channels, channels))
    blocks.append(block(channels, image_channels))
    return Topology(blocks)
