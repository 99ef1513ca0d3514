"""Dual-capacity upper bounds on finite-state channels from Q-graph test
distributions and average-reward dynamic programs."""

from .channels import (Fsc, check_joint_indecomposable, is_indecomposable, make_dec, make_ising,
                       make_post, make_trapdoor)
from .dp import (BellmanCertificate, bellman_residual, finite_horizon_bounds, point_based_rvi,
                 relative_value_iteration)
from .errors import DomainError, Refusal, ResourceError, SchemaError, SearchFailure
from .input_driven import upper_bound_input_driven
from .optimizer import SearchSpec, optimize_test_dist, rank_qgraph_pool
from .qgraph import QGraph, dec_qgraph, enumerate_qgraphs, markov_qgraph
from .results import BoundResult
from .testdist import TestDist, family_for
from .unifilar import SolverOptions, special_case_bound, upper_bound_unifilar

__version__ = "0.1.0"
