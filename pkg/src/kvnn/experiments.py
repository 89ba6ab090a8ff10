"""Desk-scale experiments: AWGN denoising, a multiplicative-interaction toy
classification task, and the stored-centers-vs-atoms regression contrast.

Every experiment resolves its configuration up front, derives all random
streams from the single config seed, and writes a manifest sufficient to
re-run it bit-identically: config hash, derived seeds, package version,
and results. Nothing time- or host-dependent goes into an output file.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .data import ImageSet, NoiseSpec, add_awgn, gen_synthetic_images
from .kernels import krr_fit, krr_predict
from .layers import Network, load_network, save_network
from .multikernel import OrderBranch, _sphere_centers, branch_eval_batch
from .tensors import multi_index_count, write_kvt
from .topology import Topology
from .training import AdamState, DecaySchedule, adam_step, clip_grad_norm, mse_loss, psnr, sgd_step
from .volterra import random_volterra


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; the last checkpoint is kept on disk."""


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()


def write_manifest(path: Path, config: dict, seeds: dict, results: dict) -> None:
    manifest = {
        "version": __version__,
        "config": config,
        "config_sha256": config_hash(config),
        "seeds": seeds,
        "results": results,
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


@dataclass
class DenoiseConfig:
    topology: dict | str
    noise: dict = field(default_factory=lambda: NoiseSpec.fixed(25).to_dict())
    seed: int = 0
    image_size: int = 32
    train_images: int = 192
    eval_images: int = 16
    patch_size: int = 32
    batch_size: int = 16
    steps: int = 1200
    lr: float = 2e-3
    optimizer: str = "adam"
    decay_base: float = 1e-5
    decay_growth: float = 1.3
    clip_norm: float = 5.0
    residual: bool = True
    eval_sigma: float = 25.0
    metrics_every: int = 100
    checkpoint_every: int = 200
    out_dir: str | None = None

    def resolved_topology(self) -> Topology:
        if isinstance(self.topology, str):
            return Topology.load(self.topology)
        return Topology.from_dict(self.topology)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["topology"] = self.resolved_topology().to_dict()
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "DenoiseConfig":
        return cls(**raw)

    @classmethod
    def load(cls, path) -> "DenoiseConfig":
        raw = json.loads(Path(path).read_text())
        cfg = cls.from_dict(raw)
        if isinstance(cfg.topology, str):
            # topology paths resolve relative to the config file
            topo = Path(cfg.topology)
            if not topo.is_absolute():
                cfg.topology = str(Path(path).parent / topo)
        return cfg


@dataclass
class DenoiseReport:
    psnr_noisy: float
    psnr_denoised: float
    params: int
    final_loss: float
    out_dir: str | None


def _crop(rng: np.random.Generator, image: np.ndarray, size: int) -> np.ndarray:
    h, w = image.shape
    if h == size and w == size:
        return image
    top = rng.integers(0, h - size + 1)
    left = rng.integers(0, w - size + 1)
    return image[top : top + size, left : left + size]


def _denoise(net: Network, noisy: np.ndarray, residual: bool) -> np.ndarray:
    """Batched (B, H, W) -> denoised (B, H, W)."""
    if not net.blocks:
        return noisy.copy()  # the empty network is the identity denoiser
    out, _ = net.forward(noisy[:, None, :, :])
    pred = out[:, 0]
    return noisy - pred if residual else pred


def run_denoise_experiment(config: DenoiseConfig) -> DenoiseReport:
    """Train the configured stack on noisy/clean patch pairs and evaluate at
    the evaluation sigma on a held-out set."""
    topology = config.resolved_topology()
    spec = NoiseSpec.from_dict(config.noise)
    root = np.random.SeedSequence(config.seed)
    train_seed, eval_seed, init_seed, batch_seed, noise_seed, eval_noise_seed = (
        int(s.generate_state(1)[0]) for s in root.spawn(6)
    )
    train_set = gen_synthetic_images(train_seed, config.train_images, config.image_size)
    eval_set = gen_synthetic_images(eval_seed, config.eval_images, config.image_size)

    net = Network.from_topology(topology, init_seed)
    params = net.parameters()
    n_params = sum(arr.size for _, _, arr in params)
    state = AdamState()
    decay = DecaySchedule(config.decay_base, config.decay_growth)
    batch_rng = np.random.default_rng(batch_seed)
    noise_rng = np.random.default_rng(noise_seed)

    out_dir = Path(config.out_dir) if config.out_dir else None
    metrics_rows: list[tuple[int, float, float, float]] = []
    eval_subset = eval_set.images[: min(4, len(eval_set.images))]

    def quick_psnr() -> float:
        clean = np.stack(eval_subset)
        noisy = np.stack(
            add_awgn(list(clean), NoiseSpec.fixed(config.eval_sigma),
                     np.random.default_rng(eval_noise_seed))
        )
        denoised = _denoise(net, noisy, config.residual)
        return float(np.mean([psnr(d, c) for d, c in zip(denoised, clean)]))

    loss_value = math.nan
    for step in range(config.steps):
        idx = batch_rng.integers(0, len(train_set.images), size=config.batch_size)
        clean = np.stack(
            [_crop(batch_rng, train_set.images[i], config.patch_size) for i in idx]
        )
        noisy = np.stack(add_awgn(list(clean), spec, noise_rng))
        x = noisy[:, None, :, :]
        target = (noisy - clean) if config.residual else clean
        out, cache = net.forward(x)
        loss_value, dloss = mse_loss(out[:, 0], target)
        if not math.isfinite(loss_value):
            raise TrainingDiverged(
                f"loss became {loss_value} at step {step}; last checkpoint retained"
                + (f" in {out_dir}" if out_dir else "")
            )
        grads, _ = net.backward(cache, dloss[:, None, :, :], need_input_grad=False)
        if config.clip_norm:
            clip_grad_norm(grads, config.clip_norm)
        if config.optimizer == "adam":
            adam_step(params, grads, state, config.lr, decay=decay)
        elif config.optimizer == "sgd":
            sgd_step(params, grads, config.lr, decay)
        else:
            raise ValueError(f"unknown optimizer {config.optimizer!r}")
        if (step + 1) % config.metrics_every == 0 or step == config.steps - 1:
            metrics_rows.append((step + 1, loss_value, quick_psnr(), config.lr))
        if out_dir and (step + 1) % config.checkpoint_every == 0:
            save_network(net, out_dir / "checkpoint")

    # held-out evaluation at the evaluation sigma
    clean = np.stack(eval_set.images)
    noisy = np.stack(
        add_awgn(list(clean), NoiseSpec.fixed(config.eval_sigma),
                 np.random.default_rng(eval_noise_seed))
    )
    denoised = _denoise(net, noisy, config.residual)
    psnr_noisy = float(np.mean([psnr(n, c) for n, c in zip(noisy, clean)]))
    psnr_denoised = float(np.mean([psnr(d, c) for d, c in zip(denoised, clean)]))

    results = {
        "psnr_noisy": psnr_noisy,
        "psnr_denoised": psnr_denoised,
        "final_loss": loss_value,
        "param_count": n_params,
    }
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "metrics.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "loss", "psnr", "lr"])
            writer.writerows([(s, repr(l), repr(p), repr(lr)) for s, l, p, lr in metrics_rows])
        save_network(net, out_dir / "model")
        (out_dir / "model" / "extra.json").write_text(
            json.dumps({"residual": config.residual}) + "\n"
        )
        pred_dir = out_dir / "predictions"
        pred_dir.mkdir(exist_ok=True)
        for name, img in zip(eval_set.names, denoised):
            write_kvt(pred_dir / f"{name}.kvt", img)
        write_manifest(
            out_dir / "manifest.json",
            config.to_dict(),
            {
                "train": train_seed, "eval": eval_seed, "init": init_seed,
                "batch": batch_seed, "noise": noise_seed, "eval_noise": eval_noise_seed,
            },
            results,
        )
    return DenoiseReport(psnr_noisy, psnr_denoised, n_params, loss_value, str(out_dir) if out_dir else None)


def evaluate_model(model_dir, image_set: ImageSet, sigma: float, seed: int,
                   out_dir=None) -> dict:
    """Denoise an image set with a saved model; PSNR is computed from the
    exact arrays that get serialized, so recomputing offline matches it."""
    net = load_network(model_dir)
    extra = json.loads((Path(model_dir) / "extra.json").read_text())
    clean = np.stack(image_set.images)
    noisy = np.stack(add_awgn(list(clean), NoiseSpec.fixed(sigma), np.random.default_rng(seed)))
    denoised = _denoise(net, noisy, extra["residual"])
    per_image = {
        name: psnr(d, c) for name, d, c in zip(image_set.names, denoised, clean)
    }
    report = {
        "sigma": sigma,
        "noise_seed": seed,
        "psnr_noisy": float(np.mean([psnr(n, c) for n, c in zip(noisy, clean)])),
        "psnr_denoised": float(np.mean(list(per_image.values()))),
        "per_image": per_image,
    }
    if out_dir:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        for name, img in zip(image_set.names, denoised):
            write_kvt(out_dir / f"{name}.kvt", img)
        (out_dir / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report


@dataclass
class ToyConfig:
    """Sign-of-product labels: y = sign((u.x)(v.x)), solvable only above order 1."""

    dim: int = 6
    n_train: int = 1500
    n_test: int = 500
    margin: float = 0.1
    quad_atoms: int = 4
    steps: int = 1500
    lr: float = 0.05
    seed: int = 0
    out_dir: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ToyReport:
    linear_train_acc: float
    linear_test_acc: float
    quad_train_acc: float
    quad_test_acc: float


def _toy_dataset(rng: np.random.Generator, config: ToyConfig, count: int):
    """Rejection-sample until every kept point clears the label margin."""
    u = rng.standard_normal(config.dim)
    u /= np.linalg.norm(u)
    v = rng.standard_normal(config.dim)
    v -= (v @ u) * u
    v /= np.linalg.norm(v)
    xs, ys = [], []
    while len(xs) < count:
        x = rng.standard_normal((4 * count, config.dim))
        q = (x @ u) * (x @ v)
        keep = np.abs(q) > config.margin
        xs.extend(x[keep])
        ys.extend(np.sign(q[keep]))
    return np.array(xs[:count]), np.array(ys[:count]), (u, v)


def _train_toy_model(order: int, x_train, y_train, x_test, y_test, config: ToyConfig,
                     seed: int) -> tuple[float, float]:
    from .layers import FilterConfig, Geometry, KvnnLayer
    from .topology import BlockSpec

    # a 1x1 "convolution" over an image whose columns are the samples is a
    # batched dense evaluation of one filter
    geometry = Geometry(config.dim, (1, 1))
    filt_config = FilterConfig(order, config.quad_atoms if order >= 2 else 0)
    layer = KvnnLayer.init(seed, geometry, filt_config, c_out=1)
    topo = Topology([BlockSpec("kvnn", config.dim, 1, (1, 1), p=order,
                               n=config.quad_atoms if order >= 2 else 0)])
    net = Network([layer], topo)
    params = net.parameters()
    state = AdamState()

    def scores(x: np.ndarray) -> np.ndarray:
        out, _ = net.forward(x.T[None, :, None, :])
        return out[0, 0, 0]

    for _ in range(config.steps):
        out, cache = net.forward(x_train.T[None, :, None, :])
        s = out[0, 0, 0]
        ys = y_train * s
        dl = -(y_train / (1.0 + np.exp(ys))) / len(y_train)
        grads, _ = net.backward(cache, dl[None, None, None, :], need_input_grad=False)
        adam_step(params, grads, state, config.lr)

    train_acc = float(np.mean(np.sign(scores(x_train)) == y_train))
    test_acc = float(np.mean(np.sign(scores(x_test)) == y_test))
    return train_acc, test_acc


def run_toy_classification(config: ToyConfig) -> ToyReport:
    """Train matched order-1 and order-2 models on the sign-of-product task."""
    root = np.random.SeedSequence(config.seed)
    data_seed, lin_seed, quad_seed = (int(s.generate_state(1)[0]) for s in root.spawn(3))
    rng = np.random.default_rng(data_seed)
    x_all, y_all, _ = _toy_dataset(rng, config, config.n_train + config.n_test)
    x_train, y_train = x_all[: config.n_train], y_all[: config.n_train]
    x_test, y_test = x_all[config.n_train :], y_all[config.n_train :]

    lin = _train_toy_model(1, x_train, y_train, x_test, y_test, config, lin_seed)
    quad = _train_toy_model(2, x_train, y_train, x_test, y_test, config, quad_seed)
    report = ToyReport(lin[0], lin[1], quad[0], quad[1])
    if config.out_dir:
        out_dir = Path(config.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_manifest(
            out_dir / "manifest.json",
            config.to_dict(),
            {"data": data_seed, "linear": lin_seed, "quad": quad_seed},
            asdict(report),
        )
    return report


@dataclass
class KrrContrastReport:
    n_train: int
    krr_stored_centers: int
    atom_count: int
    atom_budget: int
    krr_test_mse: float
    kvnn_test_mse: float


def run_krr_contrast(seed: int = 0, dim: int = 4, n_train: int = 40, n_test: int = 200,
                     ridge: float = 1e-6) -> KrrContrastReport:
    """Same degree-2 regression target, two representations: a ridge model
    that stores every training sample against a least-squares fit of
    C(d+1, 2) quadratic atoms on the same samples."""
    if dim > 5:
        raise ValueError(f"contrast guard: dim <= 5, got {dim}")
    target = random_volterra(seed, dim, 2).tensors[1]

    def f(x: np.ndarray) -> np.ndarray:
        return np.einsum("ij,ni,nj->n", target, x, x)

    root = np.random.SeedSequence(seed)
    train_rng, test_rng, center_rng = (np.random.default_rng(int(s.generate_state(1)[0]))
                                       for s in root.spawn(3))
    x_train = train_rng.standard_normal((n_train, dim))
    y_train = f(x_train)
    x_test = test_rng.standard_normal((n_test, dim))
    y_test = f(x_test)

    model = krr_fit(x_train, y_train, kernel=2, ridge=ridge)
    krr_pred = np.array([krr_predict(model, x) for x in x_test])
    krr_mse = float(np.mean((krr_pred - y_test) ** 2))

    budget = multi_index_count(dim, 2)
    centers = _sphere_centers(center_rng, budget, dim)
    design = (x_train @ centers.T) ** 2
    gammas, *_ = np.linalg.lstsq(design, y_train, rcond=None)
    branch = OrderBranch(2, centers, gammas)
    kvnn_pred = branch_eval_batch(branch, x_test)
    kvnn_mse = float(np.mean((kvnn_pred - y_test) ** 2))

    return KrrContrastReport(
        n_train, len(model.centers), branch.count, budget, krr_mse, kvnn_mse
    )
