"""Convolution-style layers built from multi-kernel atom maps.

A filter evaluates one multi-kernel map on every extracted patch and
produces one output channel; a layer runs C_out such filters in parallel.
Patches are materialized im2col-style so the forward pass is a plain
matrix of dot products, and the backward pass is written out analytically:

    f(x)      = sum_{r,i} gamma_{r,i} (x . w_{r,i})^r  (+ bias)
    df/dgamma = (x . w)^r
    df/dw     = gamma * r * (x . w)^(r-1) * x
    df/dx     = sum gamma * r * (x . w)^(r-1) * w

Everything is float64 and pure: forward/backward never mutate the layer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .multikernel import MKVolterraMap, OrderBranch, eval_mk
from .topology import BlockSpec, Topology


@dataclass(frozen=True)
class Geometry:
    """Patch-extraction geometry of one layer."""

    c_in: int
    kernel: tuple[int, int]
    stride: int = 1
    pad: int = 0

    @property
    def patch_dim(self) -> int:
        return self.c_in * self.kernel[0] * self.kernel[1]

    def output_size(self, height: int, width: int) -> tuple[int, int]:
        kh, kw = self.kernel
        h_out = (height + 2 * self.pad - kh) // self.stride + 1
        w_out = (width + 2 * self.pad - kw) // self.stride + 1
        if h_out < 1 or w_out < 1:
            raise ValueError(
                f"kernel {self.kernel} with pad {self.pad} does not fit a "
                f"{height}x{width} input"
            )
        return h_out, w_out


def extract_patches_batch(images: np.ndarray, geometry: Geometry) -> np.ndarray:
    """im2col over a (B, C, H, W) batch: one row per output location,
    row-major over (image, row, col).

    Within a row the layout is channel-major, then kernel row, then kernel
    column — the flattening of a (c_in, kh, kw) patch in C order.
    """
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 4 or images.shape[1] != geometry.c_in:
        raise ValueError(
            f"expected input of shape (B, {geometry.c_in}, H, W), got {images.shape}"
        )
    batch, _, height, width = images.shape
    h_out, w_out = geometry.output_size(height, width)
    kh, kw = geometry.kernel
    padded = np.pad(
        images, ((0, 0), (0, 0), (geometry.pad, geometry.pad), (geometry.pad, geometry.pad))
    )
    windows = np.lib.stride_tricks.sliding_window_view(padded, (kh, kw), axis=(2, 3))
    windows = windows[:, :, :: geometry.stride, :: geometry.stride][:, :, :h_out, :w_out]
    # (b, c, h_out, w_out, kh, kw) -> (b, h_out, w_out, c, kh, kw) -> rows
    return np.ascontiguousarray(
        windows.transpose(0, 2, 3, 1, 4, 5).reshape(batch * h_out * w_out, -1)
    )


def extract_patches(image: np.ndarray, geometry: Geometry) -> np.ndarray:
    """Single-image im2col; see extract_patches_batch for the row layout."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3:
        raise ValueError(f"expected input of shape (C, H, W), got {image.shape}")
    return extract_patches_batch(image[None], geometry)


def scatter_patch_grads_batch(
    patch_grads: np.ndarray, geometry: Geometry, batch: int, height: int, width: int
) -> np.ndarray:
    """Adjoint of extract_patches_batch: accumulate rows back over
    overlapping patches; returns a (B, C, H, W) gradient."""
    h_out, w_out = geometry.output_size(height, width)
    kh, kw = geometry.kernel
    grads = patch_grads.reshape(batch, h_out, w_out, geometry.c_in, kh, kw)
    # one permute-copy so each (i, j) tap below is a contiguous slab
    grads = np.ascontiguousarray(grads.transpose(4, 5, 0, 3, 1, 2))
    padded = np.zeros(
        (batch, geometry.c_in, height + 2 * geometry.pad, width + 2 * geometry.pad)
    )
    s = geometry.stride
    for i in range(kh):
        for j in range(kw):
            padded[:, :, i : i + s * h_out : s, j : j + s * w_out : s] += grads[i, j]
    if geometry.pad:
        return padded[
            :, :, geometry.pad : geometry.pad + height, geometry.pad : geometry.pad + width
        ].copy()
    return padded


def scatter_patch_grads(
    patch_grads: np.ndarray, geometry: Geometry, height: int, width: int
) -> np.ndarray:
    """Single-image adjoint of extract_patches."""
    return scatter_patch_grads_batch(patch_grads, geometry, 1, height, width)[0]


def _ipow(arr: np.ndarray, exponent: int) -> np.ndarray:
    """Small integer powers by repeated multiplication."""
    if exponent == 0:
        return np.ones_like(arr)
    if exponent == 1:
        return arr
    if exponent == 2:
        return arr * arr
    if exponent == 3:
        return arr * arr * arr
    return arr**exponent


@dataclass(frozen=True)
class FilterConfig:
    """Branch structure of one filter: max order p, n quadratic and m cubic atoms."""

    p: int
    n: int = 0
    m: int = 0
    include_bias: bool = False

    def __post_init__(self):
        if self.p not in (1, 2, 3):
            raise ValueError(f"max order must be 1, 2, or 3, got {self.p}")
        if self.p >= 2 and self.n < 1:
            raise ValueError(f"p={self.p} needs n >= 1 quadratic atoms")
        if self.p == 3 and self.m < 1:
            raise ValueError("p=3 needs m >= 1 cubic atoms")

    @property
    def atom_counts(self) -> tuple[int, ...]:
        return (1, self.n, self.m)[: self.p]


@dataclass
class KvnnFilter:
    """One output channel: a multi-kernel map over the patch dimension.

    The bias lives in a length-1 array so optimizer updates stay in place.
    """

    map: MKVolterraMap
    config: FilterConfig
    bias: np.ndarray = field(default_factory=lambda: np.zeros(1))

    def __post_init__(self):
        self.bias = np.atleast_1d(np.asarray(self.bias, dtype=np.float64))
        expected = self.config.atom_counts
        for r in range(1, self.config.p + 1):
            branch = self.map.branch(r)
            count = 0 if branch is None else branch.count
            if count != expected[r - 1]:
                raise ValueError(
                    f"order-{r} branch has {count} atoms, config expects {expected[r - 1]}"
                )


def filter_forward(filt: KvnnFilter, patch: np.ndarray) -> float:
    """Branch outputs summed across orders, plus bias when enabled."""
    out = eval_mk(filt.map, patch)
    if filt.config.include_bias:
        out += float(filt.bias[0])
    return out


def init_filter(seed: int, patch_dim: int, config: FilterConfig, gain: float = 1.0) -> KvnnFilter:
    from .multikernel import init_mk

    return KvnnFilter(init_mk(seed, patch_dim, config.p, config.atom_counts, gain), config)


@dataclass
class GradientBundle:
    """Per-parameter gradients keyed like the layer's parameter store, plus
    the gradient with respect to the layer input."""

    grads: dict[str, np.ndarray]
    input_grad: np.ndarray


class KvnnLayer:
    """C_out filters applied in parallel to the same patch matrix."""

    def __init__(self, geometry: Geometry, filters: list[KvnnFilter]):
        if not filters:
            raise ValueError("layer needs at least one filter")
        config = filters[0].config
        for filt in filters:
            if filt.map.input_dim != geometry.patch_dim:
                raise ValueError(
                    f"filter dimension {filt.map.input_dim} != patch dimension "
                    f"{geometry.patch_dim}"
                )
            if filt.config != config:
                raise ValueError("all filters in a layer must share one config")
        self.geometry = geometry
        self.filters = filters
        self.config = config

    @property
    def c_out(self) -> int:
        return len(self.filters)

    @classmethod
    def init(cls, seed: int, geometry: Geometry, config: FilterConfig, c_out: int,
             gain: float = 1.0) -> "KvnnLayer":
        seeds = np.random.SeedSequence(seed).generate_state(c_out)
        return cls(geometry, [init_filter(int(s), geometry.patch_dim, config, gain) for s in seeds])

    def parameters(self) -> list[tuple[str, np.ndarray]]:
        """Flat name -> array view list; arrays are the live parameters."""
        out = []
        for c, filt in enumerate(self.filters):
            for r in range(1, self.config.p + 1):
                branch = filt.map.branch(r)
                if branch is None:
                    continue
                out.append((f"f{c}.r{r}.centers", branch.centers))
                out.append((f"f{c}.r{r}.gammas", branch.gammas))
            if self.config.include_bias:
                out.append((f"f{c}.bias", filt.bias))
        return out

    def _stacked(self, r: int) -> tuple[np.ndarray, np.ndarray]:
        branches = [f.map.branch(r) for f in self.filters]
        return (
            np.stack([b.centers for b in branches]),  # (C, M, d)
            np.stack([b.gammas for b in branches]),  # (C, M)
        )

    def _all_centers(self) -> tuple[np.ndarray, np.ndarray, list[tuple[int, int, int]]]:
        """Every order's centers stacked into one (K, d) matrix.

        Returns the matrix, the matching (C, M) gamma arrays flattened to
        (K,), and per-order (start, stop, M) column slices — so the whole
        layer needs a single projection GEMM.
        """
        blocks, gammas, slices = [], [], []
        start = 0
        for r in range(1, self.config.p + 1):
            centers_r, gammas_r = self._stacked(r)
            c, mr, d = centers_r.shape
            blocks.append(centers_r.reshape(c * mr, d))
            gammas.append(gammas_r.reshape(c * mr))
            slices.append((start, start + c * mr, mr))
            start += c * mr
        return np.concatenate(blocks), np.concatenate(gammas), slices

    def forward_patches(
        self, patches: np.ndarray, cache: dict | None = None
    ) -> np.ndarray:
        """(N, d) patch rows -> (N, C_out) filter responses.

        Pass a dict as cache to keep the projections for reuse in
        backward_patches.
        """
        n = patches.shape[0]
        all_w, all_g, slices = self._all_centers()
        proj = patches @ all_w.T  # (N, K), columns in (order, channel, atom) order
        if cache is not None:
            cache["proj"] = proj
        out = np.zeros((n, self.c_out))
        for r, (start, stop, mr) in enumerate(slices, start=1):
            powered = _ipow(proj[:, start:stop], r) * all_g[start:stop]
            out += powered.reshape(n, self.c_out, mr).sum(axis=2)
        if self.config.include_bias:
            out += np.array([float(f.bias[0]) for f in self.filters])
        return out

    def backward_patches(
        self,
        patches: np.ndarray,
        upstream: np.ndarray,
        cache: dict | None = None,
        need_input_grad: bool = True,
    ) -> tuple[dict[str, np.ndarray], np.ndarray | None]:
        """Gradients for all parameters and (optionally) the patch matrix.

        upstream is (N, C_out), the loss gradient at each output location;
        cache, if given, holds the projections saved by forward_patches.
        """
        n, d = patches.shape
        grads: dict[str, np.ndarray] = {}
        all_w, all_g, slices = self._all_centers()
        if cache is not None and "proj" in cache:
            proj = cache["proj"]
        else:
            proj = patches @ all_w.T
        scaled = np.empty_like(proj)  # upstream * r * gamma * proj^(r-1) per column
        for r, (start, stop, mr) in enumerate(slices, start=1):
            up = upstream if mr == 1 else upstream.repeat(mr, axis=1)
            weighted = up if r == 1 else up * _ipow(proj[:, start:stop], r - 1)
            dgamma = (weighted * proj[:, start:stop]).sum(axis=0)
            scaled[:, start:stop] = weighted * (r * all_g[start:stop])
            for ci in range(self.c_out):
                grads[f"f{ci}.r{r}.gammas"] = dgamma[ci * mr : (ci + 1) * mr]
        dcenters = scaled.T @ patches  # (K, d)
        for r, (start, stop, mr) in enumerate(slices, start=1):
            block = dcenters[start:stop].reshape(self.c_out, mr, d)
            for ci in range(self.c_out):
                grads[f"f{ci}.r{r}.centers"] = block[ci]
        if self.config.include_bias:
            dbias = upstream.sum(axis=0)
            for ci in range(self.c_out):
                grads[f"f{ci}.bias"] = dbias[ci : ci + 1].copy()
        dpatches = scaled @ all_w if need_input_grad else None
        return grads, dpatches


class ConvLayer:
    """Plain convolution over the same patch machinery, with optional ReLU."""

    def __init__(self, geometry: Geometry, weight: np.ndarray, bias: np.ndarray | None,
                 relu: bool = False):
        weight = np.asarray(weight, dtype=np.float64)
        if weight.ndim != 2 or weight.shape[1] != geometry.patch_dim:
            raise ValueError(
                f"weight must be (C_out, {geometry.patch_dim}), got {weight.shape}"
            )
        self.geometry = geometry
        self.weight = weight
        self.bias = None if bias is None else np.asarray(bias, dtype=np.float64)
        if self.bias is not None and self.bias.shape != (weight.shape[0],):
            raise ValueError(f"bias shape {self.bias.shape} != ({weight.shape[0]},)")
        self.relu = relu

    @property
    def c_out(self) -> int:
        return self.weight.shape[0]

    @classmethod
    def init(cls, seed: int, geometry: Geometry, c_out: int, bias: bool, relu: bool,
             gain: float = 1.0) -> "ConvLayer":
        rng = np.random.default_rng(seed)
        weight = rng.normal(0.0, gain / np.sqrt(geometry.patch_dim), size=(c_out, geometry.patch_dim))
        return cls(geometry, weight, np.zeros(c_out) if bias else None, relu)

    def parameters(self) -> list[tuple[str, np.ndarray]]:
        out = [("weight", self.weight)]
        if self.bias is not None:
            out.append(("bias", self.bias))
        return out

    def forward_patches(self, patches: np.ndarray, cache: dict | None = None) -> np.ndarray:
        pre = patches @ self.weight.T
        if self.bias is not None:
            pre = pre + self.bias
        if cache is not None:
            cache["pre"] = pre
        return np.maximum(pre, 0.0) if self.relu else pre

    def backward_patches(self, patches, upstream, cache: dict | None = None,
                         need_input_grad: bool = True):
        if self.relu:
            if cache is not None and "pre" in cache:
                pre = cache["pre"]
            else:
                pre = patches @ self.weight.T
                if self.bias is not None:
                    pre = pre + self.bias
            upstream = upstream * (pre > 0.0)
        grads = {"weight": upstream.T @ patches}
        if self.bias is not None:
            grads["bias"] = upstream.sum(axis=0)
        return grads, upstream @ self.weight if need_input_grad else None


Layer = KvnnLayer | ConvLayer


def layer_forward(layer: Layer, image: np.ndarray) -> np.ndarray:
    """(C_in, H, W) -> (C_out, H_out, W_out)."""
    _, height, width = image.shape
    h_out, w_out = layer.geometry.output_size(height, width)
    patches = extract_patches(image, layer.geometry)
    out = layer.forward_patches(patches)
    return out.T.reshape(layer.c_out, h_out, w_out)


def layer_backward(layer: Layer, image: np.ndarray, upstream: np.ndarray) -> GradientBundle:
    """Gradients for one image given the upstream (C_out, H_out, W_out) signal."""
    _, height, width = image.shape
    h_out, w_out = layer.geometry.output_size(height, width)
    if upstream.shape != (layer.c_out, h_out, w_out):
        raise ValueError(
            f"upstream shape {upstream.shape} != {(layer.c_out, h_out, w_out)}"
        )
    patches = extract_patches(image, layer.geometry)
    flat_up = upstream.reshape(layer.c_out, h_out * w_out).T
    grads, dpatches = layer.backward_patches(patches, flat_up)
    input_grad = scatter_patch_grads(dpatches, layer.geometry, height, width)
    return GradientBundle(grads, input_grad)


@dataclass
class Network:
    """Ordered stack of layers built from a topology description."""

    blocks: list[Layer]
    topology: Topology

    @classmethod
    def from_topology(cls, topology: Topology, seed: int, gain: float = 1.0) -> "Network":
        seeds = np.random.SeedSequence(seed).generate_state(max(len(topology.blocks), 1))
        layers: list[Layer] = []
        for spec, layer_seed in zip(topology.blocks, seeds):
            if spec.batchnorm:
                raise ValueError(
                    "batchnorm blocks are countable but not trainable in this package"
                )
            geometry = Geometry(spec.c_in, spec.kernel, spec.stride, spec.pad)
            if spec.type == "conv":
                layers.append(ConvLayer.init(int(layer_seed), geometry, spec.c_out, spec.bias, spec.relu, gain))
            else:
                config = FilterConfig(spec.p, spec.n, spec.m, include_bias=spec.bias)
                layers.append(KvnnLayer.init(int(layer_seed), geometry, config, spec.c_out, gain))
        return cls(layers, topology)

    def parameters(self) -> list[tuple[str, int, np.ndarray]]:
        """(name, layer_index, array) triples; layer index drives depth-wise decay."""
        out = []
        for idx, layer in enumerate(self.blocks):
            for name, arr in layer.parameters():
                out.append((f"b{idx}.{name}", idx, arr))
        return out

    def forward(self, images: np.ndarray) -> tuple[np.ndarray, list["_LayerCache"]]:
        """Batched forward over (B, C, H, W); returns output and per-layer caches.

        Patch rows from the whole batch are stacked into one matrix per
        layer so each step is a single matrix product.
        """
        images = np.asarray(images, dtype=np.float64)
        batch = images.shape[0]
        cache: list[_LayerCache] = []
        current = images
        for layer in self.blocks:
            _, height, width = current.shape[1:]
            h_out, w_out = layer.geometry.output_size(height, width)
            patches = extract_patches_batch(current, layer.geometry)
            scratch: dict = {}
            flat = layer.forward_patches(patches, scratch)  # (B*N, C_out)
            cache.append(_LayerCache(patches, (height, width), h_out * w_out, scratch))
            current = (
                flat.reshape(batch, h_out * w_out, layer.c_out)
                .transpose(0, 2, 1)
                .reshape(batch, layer.c_out, h_out, w_out)
            )
        return current, cache

    def backward(
        self, cache: list["_LayerCache"], upstream: np.ndarray, need_input_grad: bool = True
    ) -> tuple[dict[str, np.ndarray], np.ndarray | None]:
        """Accumulate parameter gradients over the batch.

        The input gradient is skipped when need_input_grad is false (a
        training loop never uses it; audits do).
        """
        grads: dict[str, np.ndarray] = {}
        batch = upstream.shape[0]
        current: np.ndarray | None = np.asarray(upstream, dtype=np.float64)
        for idx in range(len(self.blocks) - 1, -1, -1):
            layer = self.blocks[idx]
            entry = cache[idx]
            flat_up = (
                current.reshape(batch, layer.c_out, entry.locations)
                .transpose(0, 2, 1)
                .reshape(batch * entry.locations, layer.c_out)
            )
            want_dx = need_input_grad or idx > 0
            layer_grads, dpatches = layer.backward_patches(
                entry.patches, flat_up, entry.scratch, need_input_grad=want_dx
            )
            for name, g in layer_grads.items():
                grads[f"b{idx}.{name}"] = g
            if not want_dx:
                current = None
                break
            height, width = entry.input_hw
            current = scatter_patch_grads_batch(dpatches, layer.geometry, batch, height, width)
        return grads, current


@dataclass
class _LayerCache:
    patches: np.ndarray
    input_hw: tuple[int, int]
    locations: int
    scratch: dict


def save_network(net: Network, directory) -> None:
    """Topology JSON plus one KVT1 payload per named parameter."""
    from pathlib import Path

    from .tensors import write_kvt

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    net.topology.save(directory / "topology.json")
    for name, _, arr in net.parameters():
        write_kvt(directory / f"{name}.kvt", arr)


def load_network(directory) -> Network:
    """Rebuild a network from save_network output."""
    from pathlib import Path

    from .tensors import read_kvt

    directory = Path(directory)
    topology = Topology.load(directory / "topology.json")
    net = Network.from_topology(topology, seed=0)
    for name, _, arr in net.parameters():
        stored = read_kvt(directory / f"{name}.kvt")
        if stored.shape != arr.shape:
            raise ValueError(
                f"{name}: stored shape {stored.shape} does not match topology "
                f"shape {arr.shape}"
            )
        arr[...] = stored
    return net
