"""Constructive KAM linearization of Z x_lam R actions on tori."""

from .action_factory import (
    ActionPair,
    group_relation_residual,
    make_affine,
    make_conjugated_perturbation,
    normalize_input,
)
from .diffeo import TorusMap, compose, conjugate_action, invert
from .kam_engine import ActionState, KamSchedule, inductive_step, run, theoretical_parameters, verify_decay
from .spectral_field import OperatorSpec, SpectralField
from .torus_algebra import ToralAutomorphism, eigen_decompose, estimate_diophantine

__version__ = "0.1.0"
