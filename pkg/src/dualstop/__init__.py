"""Dual upper bounds for optimal stopping with randomized pseudo martingales."""

from .dual import DualEstimate, estimate, exact_moments, exact_objective, pathwise_max, variance_profile
from .families import BasisMatrix, FamilySpec, HermiteSpec, build_basis, eval_family
from .lp import LPProblem, LPSolution, build_lp, minimize, solve_lp
from .models import (BermudanCallModel, PathBundle, StylizedModel, TreeModel, load_tree, simulate,
                     stylized_tree, tree_bundle)
from .randomizers import RandomizerSpec, check_asl, make_eta
from .snell import SnellData, backward_induct, bs_value, snell_for, stopping_family, tree_snell

__version__ = "0.1.0"
