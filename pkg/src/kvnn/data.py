"""Synthetic grayscale image sets, additive white Gaussian noise, and the
PGM/KVT persistence pair.

Noise levels are quoted on the 0-255 intensity scale and applied to [0,1]
data as sigma/255. Noisy values are intentionally not clamped back into
[0,1]: clamping would change the noise distribution.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensors import read_kvt, write_kvt

# pixel statistics the generator is tested against (100-image averages)
IMAGE_MEAN_BAND = (0.30, 0.70)
IMAGE_VAR_BAND = (0.01, 0.20)


@dataclass
class NoiseSpec:
    """Fixed sigma, or a per-patch sigma drawn uniformly from [lo, hi)."""

    mode: str
    sigma: float = 0.0
    lo: float = 0.0
    hi: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.mode == "fixed":
            if self.sigma < 0:
                raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        elif self.mode == "uniform":
            if not 0 <= self.lo < self.hi:
                raise ValueError(f"need 0 <= lo < hi, got [{self.lo}, {self.hi})")
        else:
            raise ValueError(f"unknown noise mode {self.mode!r}")

    @classmethod
    def fixed(cls, sigma: float, seed: int = 0) -> "NoiseSpec":
        return cls("fixed", sigma=sigma, seed=seed)

    @classmethod
    def uniform(cls, lo: float, hi: float, seed: int = 0) -> "NoiseSpec":
        return cls("uniform", lo=lo, hi=hi, seed=seed)

    def sample_sigmas(self, count: int, rng: np.random.Generator) -> np.ndarray:
        """One 0-255-scale sigma per patch; constant in fixed mode."""
        if self.mode == "fixed":
            return np.full(count, self.sigma)
        return rng.uniform(self.lo, self.hi, size=count)

    def to_dict(self) -> dict:
        if self.mode == "fixed":
            return {"mode": "fixed", "sigma": self.sigma, "seed": self.seed}
        return {"mode": "uniform", "lo": self.lo, "hi": self.hi, "seed": self.seed}

    @classmethod
    def from_dict(cls, raw: dict) -> "NoiseSpec":
        return cls(**raw)


def add_awgn(
    arrays: list[np.ndarray], spec: NoiseSpec, rng: np.random.Generator | None = None
) -> list[np.ndarray]:
    """y = x + N(0, (sigma/255)^2) per element, fresh sigma per array in
    uniform mode. Pass an rng to draw a new noise realization per call;
    otherwise the spec's seed makes the call reproducible."""
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    sigmas = spec.sample_sigmas(len(arrays), rng)
    return [
        arr + rng.normal(0.0, s / 255.0, size=arr.shape)
        for arr, s in zip(arrays, sigmas)
    ]


@dataclass
class ImageSet:
    """Named single-channel images with values in [0,1]."""

    images: list[np.ndarray]
    names: list[str]

    def __post_init__(self):
        if len(self.images) != len(self.names):
            raise ValueError("images and names differ in length")
        for name, img in zip(self.names, self.images):
            if img.ndim != 2:
                raise ValueError(f"{name}: expected a 2-d image, got shape {img.shape}")
            if img.min() < 0.0 or img.max() > 1.0:
                raise ValueError(f"{name}: values outside [0,1]")


def _smooth_gradient(rng, size):
    direction = rng.uniform(0, 2 * np.pi)
    yy, xx = np.mgrid[0:size, 0:size] / size
    ramp = np.cos(direction) * xx + np.sin(direction) * yy
    lo, hi = sorted(rng.uniform(0.1, 0.9, size=2))
    span = ramp.max() - ramp.min()
    return lo + (hi - lo) * (ramp - ramp.min()) / (span if span else 1.0)


def gen_synthetic_images(seed: int, count: int, size: int = 32) -> ImageSet:
    """Reproducible mix of gradients, rectangles, sinusoid textures, and edges.

    Flat regions, oriented structure, and sharp transitions all appear so a
    denoiser has to preserve both smoothness and detail. Averaged over 100
    images, the per-image mean lies in IMAGE_MEAN_BAND and the variance in
    IMAGE_VAR_BAND.
    """
    if size < 16:
        raise ValueError(f"size must be >= 16, got {size}")
    rng = np.random.default_rng(seed)
    images, names = [], []
    for k in range(count):
        img = _smooth_gradient(rng, size)
        for _ in range(rng.integers(1, 4)):
            h = rng.integers(size // 8, size // 2)
            w = rng.integers(size // 8, size // 2)
            top = rng.integers(0, size - h)
            left = rng.integers(0, size - w)
            img[top : top + h, left : left + w] = rng.uniform(0.05, 0.95)
        if rng.random() < 0.7:
            yy, xx = np.mgrid[0:size, 0:size]
            freq = rng.uniform(0.2, 0.8)
            phase = rng.uniform(0, 2 * np.pi)
            angle = rng.uniform(0, np.pi)
            wave = 0.5 + 0.5 * np.sin(freq * (np.cos(angle) * xx + np.sin(angle) * yy) + phase)
            mask_w = rng.integers(size // 4, size)
            left = rng.integers(0, size - mask_w + 1)
            amp = rng.uniform(0.15, 0.4)
            img[:, left : left + mask_w] = (
                (1 - amp) * img[:, left : left + mask_w] + amp * wave[:, left : left + mask_w]
            )
        if rng.random() < 0.5:
            split = rng.integers(size // 4, 3 * size // 4)
            shift = rng.uniform(-0.4, 0.4)
            if rng.random() < 0.5:
                img[:, split:] = np.clip(img[:, split:] + shift, 0.0, 1.0)
            else:
                img[split:, :] = np.clip(img[split:, :] + shift, 0.0, 1.0)
        images.append(np.clip(img, 0.0, 1.0))
        names.append(f"synthetic_{seed}_{k:04d}")
    return ImageSet(images, names)


def write_pgm(path, image: np.ndarray) -> None:
    """8-bit binary (P5) PGM; input in [0,1] is scaled and rounded to 0-255."""
    img8 = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    height, width = img8.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{width} {height}\n255\n".encode("ascii"))
        fh.write(img8.tobytes())


def read_pgm(path) -> np.ndarray:
    """Inverse of write_pgm up to the 8-bit quantization; returns [0,1] floats."""
    data = Path(path).read_bytes()
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    if fields[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM file")
    width, height, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise ValueError(f"{path}: only maxval 255 is supported, got {maxval}")
    pixels = np.frombuffer(data[pos + 1 : pos + 1 + width * height], dtype=np.uint8)
    return pixels.reshape(height, width).astype(np.float64) / 255.0


def save_image_set(image_set: ImageSet, directory, pgm: bool = False) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, img in zip(image_set.names, image_set.images):
        write_kvt(directory / f"{name}.kvt", img)
        if pgm:
            write_pgm(directory / f"{name}.pgm", img)
    manifest = {"names": image_set.names}
    (directory / "images.json").write_text(json.dumps(manifest, indent=2) + "\n")


def load_image_set(directory) -> ImageSet:
    directory = Path(directory)
    names = json.loads((directory / "images.json").read_text())["names"]
    return ImageSet([read_kvt(directory / f"{n}.kvt") for n in names], names)
