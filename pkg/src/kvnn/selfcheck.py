"""Aggregate invariant suite behind the `selfcheck` CLI command.

Each check exercises one identity the package is built on, against an
independent computation, and reports a scalar worst-case metric. Output is
deterministic for a fixed seed so reruns can be compared byte for byte.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .kernels import MultiKernelWeights, feature_map, gram_psd_check, multi_feature_map, multi_kernel, poly_kernel
from .layers import ConvLayer, FilterConfig, Geometry, KvnnLayer, Network, layer_backward, layer_forward
from .multikernel import atoms_to_tensor, eval_mk_batch, fit_exact, init_mk
from .tensors import enumerate_multi_indices, monomial_eval, multinomial_coefficient
from .topology import BlockSpec, Topology
from .training import grad_audit
from .volterra import VolterraCoefficients, eval_volterra, random_volterra


@dataclass
class CheckResult:
    name: str
    metric: float
    threshold: float
    passed: bool

    def line(self) -> str:
        status = "ok  " if self.passed else "FAIL"
        return f"[{status}] {self.name}: {self.metric:.3e} (limit {self.threshold:.1e})"


def _positive_pairs(rng, count, dim):
    """Positive entries keep all expansion terms same-signed, so the strict
    relative tolerance is meaningful (no catastrophic cancellation)."""
    return rng.uniform(0.2, 1.2, size=(count, 2, dim))


def check_multinomial_identity(rng) -> CheckResult:
    worst = 0.0
    for d in range(2, 7):
        for r in range(1, 5):
            for x, y in _positive_pairs(rng, 20, d):
                lhs = sum(
                    multinomial_coefficient(m) * monomial_eval(x, m) * monomial_eval(y, m)
                    for m in enumerate_multi_indices(d, r)
                )
                rhs = float(np.dot(x, y)) ** r
                worst = max(worst, abs(lhs - rhs) / abs(rhs))
    return CheckResult("multinomial expansion identity", worst, 1e-12, worst <= 1e-12)


def check_feature_maps(rng) -> CheckResult:
    worst = 0.0
    for d in range(2, 6):
        for x, y in _positive_pairs(rng, 25, d):
            for r in range(1, 5):
                direct = poly_kernel(r, x, y)
                via_map = float(np.dot(feature_map(r, x), feature_map(r, y)))
                worst = max(worst, abs(direct - via_map) / abs(direct))
            weights = MultiKernelWeights(tuple(rng.uniform(0, 2, size=3)))
            direct = multi_kernel(weights, x, y)
            via_map = float(np.dot(multi_feature_map(weights, x), multi_feature_map(weights, y)))
            if direct:
                worst = max(worst, abs(direct - via_map) / abs(direct))
    return CheckResult("kernel vs feature map", worst, 1e-12, worst <= 1e-12)


def check_psd(rng) -> CheckResult:
    worst = 0.0
    points = rng.standard_normal((100, 6))
    for _ in range(5):
        weights = MultiKernelWeights(tuple(rng.uniform(0, 1.5, size=3)))
        report = gram_psd_check(weights, points, tol=1e-8)
        deficit = max(0.0, -report.min_eig) / max(1.0, report.max_eig)
        worst = max(worst, deficit)
    return CheckResult("multi-kernel Gram PSD", worst, 1e-8, worst <= 1e-8)


def check_oracle_equivalence(rng) -> CheckResult:
    worst = 0.0
    for _ in range(10):
        d = int(rng.integers(2, 7))
        p = int(rng.integers(2, 4))
        counts = tuple(int(rng.integers(1, 7)) for _ in range(p))
        mk_map = init_mk(int(rng.integers(2**31)), d, p, counts)
        dense = VolterraCoefficients(
            d, p, [atoms_to_tensor(mk_map.branch(r)) for r in range(1, p + 1)]
        )
        points = rng.standard_normal((200, d))
        got = eval_mk_batch(mk_map, points)
        want = np.array([eval_volterra(dense, x) for x in points])
        worst = max(worst, float(np.max(np.abs(got - want)) / np.max(np.abs(want))))
    return CheckResult("atom map vs dense tensors", worst, 1e-10, worst <= 1e-10)


def check_exact_fit(rng) -> CheckResult:
    worst = 0.0
    for d, r in ((3, 2), (4, 3), (5, 2)):
        target = random_volterra(int(rng.integers(2**31)), d, r).tensors[r - 1]
        branch = fit_exact(target, r, seed=int(rng.integers(2**31)))
        recon = atoms_to_tensor(branch)
        worst = max(worst, float(np.max(np.abs(recon - target)) / np.max(np.abs(target))))
    return CheckResult("finite atomic representation", worst, 1e-8, worst <= 1e-8)


def check_gradients(rng) -> CheckResult:
    topo = Topology(
        [
            BlockSpec("kvnn", 1, 3, (3, 3), 1, 1, p=3, n=2, m=2),
            BlockSpec("kvnn", 3, 1, (3, 3), 1, 1, p=2, n=1, bias=True),
        ]
    )
    net = Network.from_topology(topo, seed=int(rng.integers(2**31)))
    inputs = rng.standard_normal((2, 1, 7, 7))
    report = grad_audit(net, inputs, n_sample=120, seed=int(rng.integers(2**31)))
    return CheckResult("analytic vs finite-difference gradients", report.max_rel_error, 1e-6, report.passed)


def check_linear_reduction(rng) -> CheckResult:
    geometry = Geometry(2, (3, 3), 1, 1)
    conv = ConvLayer.init(int(rng.integers(2**31)), geometry, 3, bias=False, relu=False)
    kv = KvnnLayer.init(int(rng.integers(2**31)), geometry, FilterConfig(1), 3)
    for c in range(3):
        branch = kv.filters[c].map.branch(1)
        branch.centers[0, :] = conv.weight[c]
        branch.gammas[0] = 1.0
    image = rng.standard_normal((2, 9, 9))
    fwd_conv = layer_forward(conv, image)
    fwd_kv = layer_forward(kv, image)
    scale = np.max(np.abs(fwd_conv))
    worst = float(np.max(np.abs(fwd_conv - fwd_kv)) / scale)
    upstream = rng.standard_normal(fwd_conv.shape)
    back_conv = layer_backward(conv, image, upstream)
    back_kv = layer_backward(kv, image, upstream)
    gscale = np.max(np.abs(back_conv.input_grad))
    worst = max(worst, float(np.max(np.abs(back_conv.input_grad - back_kv.input_grad)) / gscale))
    return CheckResult("order-1 filter equals convolution", worst, 1e-12, worst <= 1e-12)


CHECKS = (
    check_multinomial_identity,
    check_feature_maps,
    check_psd,
    check_oracle_equivalence,
    check_exact_fit,
    check_gradients,
    check_linear_reduction,
)


@dataclass
class SelfcheckReport:
    seed: int
    results: list[CheckResult]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def lines(self) -> list[str]:
        out = [r.line() for r in self.results]
        out.append("selfcheck: " + ("all checks passed" if self.passed else "FAILURES above"))
        return out

    def to_json(self) -> str:
        payload = {
            "seed": self.seed,
            "passed": self.passed,
            "checks": [
                {"name": r.name, "metric": r.metric, "threshold": r.threshold, "passed": r.passed}
                for r in self.results
            ],
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def run_selfcheck(seed: int = 0) -> SelfcheckReport:
    results = []
    for k, check in enumerate(CHECKS):
        results.append(check(np.random.default_rng(seed + 1000 * k)))
    return SelfcheckReport(seed, results)
