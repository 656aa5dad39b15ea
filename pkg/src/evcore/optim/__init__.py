from .bregman import BregmanResult, bregman_minimize_divergence, kl_divergence
from .grg import BoxBounds, ConstraintJacobianMismatch, ConstraintSet, grg_maximize
from .linesearch import GOLDEN, golden_section, line_minimize, quadratic_fit_line_search, quadratic_step
from .markov import (AnnealSchedule, dobroushin_coefficient, gibbs_distribution, metropolis_accept_prob,
                     metropolis_anneal, metropolis_kernel)
from .partan import OptimResult, numerical_gradient, partan_minimize

__all__ = [
    "AnnealSchedule", "BoxBounds", "BregmanResult", "ConstraintJacobianMismatch", "ConstraintSet", "GOLDEN",
    "OptimResult", "bregman_minimize_divergence", "dobroushin_coefficient", "gibbs_distribution",
    "golden_section", "grg_maximize", "kl_divergence", "line_minimize", "metropolis_accept_prob",
    "metropolis_anneal", "metropolis_kernel", "numerical_gradient", "partan_minimize",
    "quadratic_fit_line_search", "quadratic_step",
]
