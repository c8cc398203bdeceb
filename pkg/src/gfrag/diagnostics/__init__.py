"""Verification suite: exact identities, Monte Carlo checks and trend statistics."""

from .exact import (EnumerationBudgetError, many_to_one_sides, monotone_indicator, ones,
                    stopped_sides, verify_many_to_one_exact, verify_many_to_one_stopped,
                    verify_spine_killing, verify_supermartingale_step, verify_threshold)
from .explosion import cramer_rate, explosion_demo, histogram_counts
from .montecarlo import (cell_system_sup_finite, closed_form_marginal_ks, drift_only_kernel,
                         eta_constant, height_moment_bound, lq_supremum_tail, power_mean_check,
                         ramanujan_statistic, scaling_self_consistency, tree_convergence_stats,
                         verify_many_to_one_mc)
from .reports import ConvergenceSeries, VerificationReport, wilson_interval

__all__ = [name for name in dir() if not name.startswith("_")]
