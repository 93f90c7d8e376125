"""Risk-averse optimal control on scenario trees.

Builds multistage problems whose stage costs are composed through coherent
risk measures, and solves them with a primal-dual proximal method, plus a
SuperMann-globalized variant using Anderson-accelerated directions.
"""

from .tree import ScenarioTree, build_from_iid, build_from_markov
from .risk import (ConeDescriptor, RiskConicRep, build_avar, evaluate_risk,
                   project_dual_cone)
from .model import (Raocp, Dynamics, StageCost, TerminalCost,
                    build_server_benchmark, validate)
from .splitting import (PrimalDualVector, ImageVector, apply_L,
                        apply_L_adjoint, estimate_operator_norm, default_alpha)
from .prox import (dp_offline, project_s1, build_kernel_projectors,
                   project_s2, project_soc, project_s3, prox_f, prox_g_conj)
from .cp import solve_cp, SolveReport
from .supermann import SupermannParams, solve_supermann

__all__ = [
    "ScenarioTree", "build_from_iid", "build_from_markov",
    "ConeDescriptor", "RiskConicRep", "build_avar", "evaluate_risk",
    "project_dual_cone",
    "Raocp", "Dynamics", "StageCost", "TerminalCost",
    "build_server_benchmark", "validate",
    "PrimalDualVector", "ImageVector", "apply_L", "apply_L_adjoint",
    "estimate_operator_norm", "default_alpha",
    "dp_offline", "project_s1", "build_kernel_projectors", "project_s2",
    "project_soc", "project_s3", "prox_f", "prox_g_conj",
    "solve_cp", "SolveReport", "SupermannParams", "solve_supermann",
]

__version__ = "0.1.0"
