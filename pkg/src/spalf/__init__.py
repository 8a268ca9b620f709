"""First-passage fields of spectrally positive additive Levy fields."""

from .errors import ArgumentError, NumericError, ResourceError, SpalfError
from .exponent import (ExponentOracle, Jump, ModelSpec, eval_phi, esscher_exponent, jacobian_phi, mean_matrix,
                       special_product)
from .paths import HittingResult, PathBundle, check_dominance, check_infimum_property, smallest_solution
from .lattice import StepLaw, WalkBundle, approximate_levy, ballot_exact, discrete_joint_law_check, poissonize
from .inversion import (DriftClass, InversionResult, big_phi, check_hypothesis_H, classify_drift,
                        example2d_closed_form, example2d_model, invert_exponent, perron_root, phi_at_zero)
from .montecarlo import (MCEstimate, VerificationRecord, replicate_paths, sample_hitting, simulate_hitting,
                         verify_bivariate_laplace, verify_finiteness, verify_increments, verify_laplace_T)
from .kemperman import (first_passage_density_formula, kemperman_d1_analytic, levy_measure_d1,
                        verify_kemperman_theorem)
from .lamperti import BranchingState, check_load_identity, extinction_probability, solve_lamperti

__version__ = "0.1.0"
