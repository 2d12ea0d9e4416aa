"""Robust rate-splitting precoder design for dual-polarized satellite-terrestrial networks."""
from .channel import (BASIS, ArrayConfig, EffectiveChannelEnsemble, PolarimetricChannel, PolarizationBasis,
                      SatUserGeometry, ScenarioParams, TerrestrialChannel, build_ensemble, chi_to_xpd,
                      draw_scenario, effective_channel, link_budget, rotation_matrix, sample_sat_polarimetric,
                      sample_terrestrial, steering_vector, xpd_to_chi)
from .conic import Cone, ConicProgram, SolveResult, SolverOptions, SolveStatus, solve
from .harness import ResultRow, ScenarioConfig, emit, load_config, run_sweep
from .rates import (MDP_RSMA, RSMA_DUAL_PM, RSMA_OMA, RSMA_PD, SDMA, SDMA_OMA, PrecoderSolution, RateReport,
                    SchemeSpec, ergodic_rates, validate_allocation)
from .schemes import (RunTrace, SchemeConfig, evaluate, optimize, optimize_mdp_rsma, optimize_oma_variants,
                      optimize_rsma_dual_pm_istn, optimize_rsma_pd_istn, optimize_schemes, optimize_sdma_istn)
from .subproblem import build, complex_to_real, psd_factor
from .wmmse import WmmseCoefficients, step1_coefficients

__version__ = "0.1.0"
