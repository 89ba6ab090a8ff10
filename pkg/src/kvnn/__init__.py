"""kvnn: multi-kernel Volterra filtering layers with exact polynomial
oracles, manual backpropagation, and a desk-scale experiment harness."""

__version__ = "0.1.0"

from .kernels import MultiKernelWeights, feature_map, multi_kernel, poly_kernel
from .multikernel import (
    KernelAtom,
    MKVolterraMap,
    OrderBranch,
    atoms_to_tensor,
    eval_atom,
    eval_mk,
    eval_order,
    fit_exact,
    init_mk,
)
from .tensors import enumerate_multi_indices, monomial_eval, multinomial_coefficient
from .volterra import VolterraCoefficients, eval_volterra, random_volterra, symmetrize

__all__ = [
    "__version__",
    "MultiKernelWeights",
    "feature_map",
    "multi_kernel",
    "poly_kernel",
    "KernelAtom",
    "MKVolterraMap",
    "OrderBranch",
    "atoms_to_tensor",
    "eval_atom",
    "eval_mk",
    "eval_order",
    "fit_exact",
    "init_mk",
    "enumerate_multi_indices",
    "monomial_eval",
    "multinomial_coefficient",
    "VolterraCoefficients",
    "eval_volterra",
    "random_volterra",
    "symmetrize",
]
