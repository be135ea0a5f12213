"""Neural feedback policies for dynamic portfolio allocation.

A small feed-forward network maps ``(t, y)`` to the stock weight and is
trained by maximizing empirical terminal utility over simulated GBM or
Heston markets; closed-form Merton and myopic weights serve as baselines.
"""

__version__ = "0.1.0"

from .market import (GBM_SPX, HESTON_SPX, MarketParams, TimeGrid, check_feller, make_noise,
                     make_time_grid, simulate_batch)
from .policy_net import PolicyParams, forward, init_params, param_count, silu
from .utility import UtilitySpec, isoelastic_utility

__all__ = [
    "GBM_SPX", "HESTON_SPX", "MarketParams", "TimeGrid", "check_feller", "make_noise",
    "make_time_grid", "simulate_batch", "PolicyParams", "forward", "init_params", "param_count",
    "silu", "UtilitySpec", "isoelastic_utility",
]
