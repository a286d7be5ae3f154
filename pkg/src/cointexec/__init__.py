"""Optimal liquidation of co-integrated assets with linear price impact."""
from .model import (DimensionError, InventoryTarget, MarketModel, ModelValidationError,
                    OrderFlowModel, PenaltySpec, ValidationReport, load_model, nasdaq_model,
                    save_model, sub_covariance, validate_model)
from .riccati import (RiccatiBlowUpError, RiccatiProblem, RiccatiSolution, asymptotic_coefficients,
                      build_problem, oracle_bound_solution, solve_riccati)
from .value_terms import (ValueTerms, ac_target_schedule, compute_value_terms,
                          evaluate_value_function, time_ordered_D)
from .strategies import (SolvedStrategy, StrategySpec, build_strategy, clipped_speed,
                         optimal_speed, series_tail_speed)
from .simulator import SimConfig, SimRun, compare_strategies, run_strategy, simulate_paths

__version__ = "0.1.0"
