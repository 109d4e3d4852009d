"""Quasi-periodic solutions of the nonlinear Maryland lattice model.

The linear part H = eps * Laplacian + cot(pi (theta + j.alpha)) is
diagonalized on a finite box and its eigenfunctions are relabelled by
localization centre; time-quasi-periodic solutions of the nonlinear
equation are then built by a multiscale Newton iteration with frequency
updates, and the linearized operator is probed with Green's function
diagnostics.
"""
from .config import ExperimentConfig, derive_seed
from .exceptions import (AsymmetricBox, BlockTooSmall, ConfigError, CorruptArtifact,
                         CoverageGap, DidNotConverge, HypothesisViolated, IllConditioned,
                         MarylandError, MatchingIncomplete, MissingArtifacts, NoProgress,
                         PoleOnGrid, RegionTooLarge, SingularPhase, SingularRestriction)
from .green import (LdtProbeReport, classify_boxes, compare_scales, green_norm_and_decay,
                    ldt_probe, neumann_verify, resolvent_reconstruct_check)
from .lattice import ModeIndex, ModeList, Region, elementary_region_family, enumerate_region
from .nonlinear import (Coeffs, OverlapTensor, ResonantSet, linearized_operator, nonlinear_term,
                        residual, weight_operator)
from .resonance import (check_first_melnikov, check_magnitude_bounds, check_omega_hypotheses,
                        check_pair_separation, check_second_melnikov, separation_report,
                        transversality_scan)
from .solver import CWBSolver, SolutionReport, cwb_solve, decay_fit, quadratic_rate, time_residual
from .spectrum import (EigenSystem, MarylandDiagonalizer, MarylandParams, diagonalize_and_relabel,
                       diophantine_check, eigenvalue_profile, rellich_iterate, spatial_box)

__version__ = "0.1.0"
