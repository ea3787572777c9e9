"""Monotone operator splitting with nonlinear resolvent kernels and a
momentum-style correction term, plus runtime convergence certificates."""

from .space import (Metric, PairSpace, as_vector, check_four_point_identity,
                    inner_s, norm_s, probe_metric)
from .operators import (EvalCounter, LinearOp, SetValuedOp, SingleValuedOp,
                        estimate_operator_norm, inverse_of, prox_catalog,
                        resolvent_of_inverse, verify_operator_properties)
from .engine import (Certificate, CertificateError, DivergenceError,
                     InclusionProblem, IterRecord, KernelSchedule,
                     SolveTrace, SolverState, StoppingRule, certify,
                     certify_momentum, solve, step, step_with_momentum)
from .diagnostics import (Tolerances, lyapunov, residual, trace_to_csv,
                          verdict, write_summary)
from .methods import (FhrbConfig, MethodInstance, PdResConfig, PdTriConfig,
                      PrimalDualProblem, build_fhrb, build_fhrb_momentum,
                      build_fhrdr, build_forward_backward,
                      build_pd_resolvent_compensated, build_pd_triangular,
                      build_preset, pd_fixed_point_residual, preset,
                      saddle_view)
from .problems import (TestProblem, generate_problem, instrument_problem,
                       load_problem, make_constructed_saddle,
                       make_lasso_saddle, make_scalar_inclusion,
                       make_skew_lipschitz, make_tv_denoise, save_problem)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
