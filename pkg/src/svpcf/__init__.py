"""Subsampling collaborative-filtering data and measuring how well
algorithm leaderboards survive it."""

__version__ = "0.1.0"

from .data import (SCENARIOS, CsvSchema, Dataset, SplitBundle, filter_min_interactions,
                   ingest_csv, make_split)
from .samplers import BASELINE_STRATEGIES, SampleResult, SampleSpec, sample
from .svp import SVP_STRATEGIES, SvpConfig, importance_table, svp_sample
from .algorithms import DEFAULT_SLATE, Algorithm, TrainConfig, train
from .metrics import evaluate
from .evaluation import PERCENTS, Leaderboard, compute_p_mle, compute_psi, kendall_tau
from .synthetic import SynthConfig, generate_synthetic
