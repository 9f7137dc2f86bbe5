"""Statistical auditing of algorithmic filtering on social media feeds.

Feeds are modelled as Markov chains over content states. The package tests
whether a platform's filtered chains stay within a tolerance of reference
chains, using only observed trajectories.
"""

from .calibration import Calibration, GridPoint, calibrate_constant, default_calibration, default_grid
from .counterfactual import (CounterfactualConfig, CounterfactualPairing, CounterfactualVerdict, combine,
                             counterfactual_tester, counterfactual_variability, required_horizon_cf)
from .errors import *  # noqa: F401,F403
from .iid import Decision, IIDTestConfig, IIDVerdict, iid_tester, required_m
from .markov import (CoverTimeEstimate, MarkovChain, Trajectory, counting_measure, estimate_cover_time,
                     extract_successors, joint_k_cover_stop, mixing_time_estimate, simulate_trajectory,
                     stationary_distribution, validate_chain)
from .oracle import (ScenarioTruth, empirical_g_moments, linf_matrix_distance, plugin_chain_estimate,
                     total_filter_variability, verdict_probability)
from .regulatory import FeedBatch, Reason, RegulatoryConfig, Verdict, regulatory_tester, required_horizon
from .sim import Scenario, ScenarioSpec, generate_feeds, inject_adversarial_users, make_scenario

__version__ = "0.1.0"
