"""Differentially private optimization toolkit.

DP-SGD, DP-Adam (biased), and DP-Adam with the noise-bias correction of the
second-moment estimate; Renyi-DP accounting for the subsampled Gaussian
mechanism; a Monte-Carlo moment lab; and a desk-scale training harness over
analytic-gradient models.
"""

from .accountant import (DEFAULT_ORDERS, PrivacySpend, RdpLedger, compose,
                         ledger_from_text, ledger_to_text, max_steps,
                         new_ledger, per_step_rdp, rdp_gaussian,
                         rdp_subsampled_gaussian, to_epsilon)
from .errors import (BudgetExhaustedError, InvalidArgumentError,
                     NumericAbortError, ParseError)
from .harness import (ExperimentConfig, RunRecord, RunResult, load_csv,
                      read_runlog, run_moments, run_sweep, run_train,
                      split_dataset, tune_lr, write_runlog)
from .models import (Dataset, GradientBatch, Model, accuracy,
                     finite_diff_grad, loss, make_synthetic,
                     per_example_grads, sample_batch)
from .momentlab import (MomentSimConfig, MomentTrace, mass_within,
                        simulate_moments, update_distributions,
                        verify_first_moment, verify_second_moment)
from .numerics import (RNG_ALGORITHM, Histogram, SummaryStats,
                       gaussian_vector, histogram, l2_norm, rng_stream,
                       stream_key, summarize)
from .optimizers import (AdamConfig, OptimizerState, UpdateDirection,
                         adam_moments, apply_update, compute_phi, init_state,
                         load_state, noise_bias, save_state, sgd_step,
                         update_corrected, update_standard)
from .privatizer import (PrivacyConfig, PrivatizedGradient, clip, noise_std,
                         privatize)

__version__ = "0.1.0"
