"""Kernel feature selection by projected gradient descent on a KRR objective."""

from .gradient import GradientReport, KrrObjective, finite_diff_gradient, full_gradient, pairwise_gradient
from .kernels import KernelSpec, gaussian, gram_matrix, h_eval, h_prime_eval, laplace, mixture, parse_kernel, weighted_dist
from .krr import Dataset, KrrFit, SolverError, objective_value, solve_krr
from .optimize import (Beta, OptimizationError, SelectionConfig, SelectionResult, hier_select, pgd_select,
                       pgd_select_pinned, project_l1_nonneg)

__version__ = "0.1.0"

__all__ = [
    "Beta", "Dataset", "GradientReport", "KernelSpec", "KrrFit", "KrrObjective", "OptimizationError",
    "SelectionConfig", "SelectionResult", "SolverError", "finite_diff_gradient", "full_gradient",
    "gaussian", "gram_matrix", "h_eval", "h_prime_eval", "hier_select", "laplace", "mixture",
    "objective_value", "pairwise_gradient", "parse_kernel", "pgd_select", "pgd_select_pinned",
    "project_l1_nonneg", "solve_krr", "weighted_dist",
]
