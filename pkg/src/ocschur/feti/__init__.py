"""FETI-DP domain decomposition for ``K + alpha V`` on structured meshes."""
from ocschur.feti.augmentation import AugmentationSpace, build_edge_rbm_augmentation
from ocschur.feti.partition import FetiPartition, Subdomain, partition_structured
from ocschur.feti.solver import (CoarseProblem, FetiConfig, FetiDpSolver, FetiFactorSolver,
                                 FetiStats, dirichlet_preconditioner_apply, feti_dp_solve)
from ocschur.feti.study import scalability_study
from ocschur.feti.subdomain import (OperatorSpec, SubdomainOperator,
                                    assemble_subdomain_operators, reassemble_global)

__all__ = [
    "AugmentationSpace", "CoarseProblem", "FetiConfig", "FetiDpSolver", "FetiFactorSolver",
    "FetiPartition", "FetiStats", "OperatorSpec", "Subdomain", "SubdomainOperator",
    "assemble_subdomain_operators", "build_edge_rbm_augmentation",
    "dirichlet_preconditioner_apply", "feti_dp_solve", "partition_structured",
    "reassemble_global", "scalability_study",
]
