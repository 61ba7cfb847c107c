"""Bayesian finite mixtures over time for binned particle size distributions.

The package fits truncated normal mixtures on log-diameter to binned counts
at each time point, with a choice of priors that share information across
time, a reversible-jump sampler for the number of components, post-hoc
relabelling, and a small CLI (``psdmix``) that ties the pieces together.
"""
from .binned import (BinGrid, BinnedSeries, make_log_grid, read_series, refine_grid,
                     rescale_counts, write_series)
from .errors import ConfigError, NumericalFailure, ParameterError, PsdmixError, StageError
from .mixture import (ChainConfig, MixtureState, Stage2Hyperparams, Trace, read_trace,
                      run_chain, write_trace)
from .relabel import (PermutationSeries, map_anchor, relabel_by_allocation,
                      relabel_by_distance)
from .rjmcmc import RJConfig, Stage1Hyperparams, rjmcmc_run, select_k_for_stage2
from .rng import RngStream
from .simulate import TruthSeries, simulate_d1, simulate_d2, simulate_event_day
from .summary import SummarySeries, gelman_rubin, summarize
from .temporal import (HierConfig, InformedConfig, PenalisedConfig, run_hierarchical,
                       run_informed, run_penalised)

__version__ = "0.1.0"
