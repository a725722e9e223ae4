"""Sequential Monte Carlo samplers for Bayesian neural networks with mini-batch data annealing."""

from .annealing import ScheduleConfig, SdaState, batch_size, sda_advance
from .data import Dataset, SubsetWindow, make_synthetic, parse_idx
from .kernels import KernelConfig, incremental_log_weight, leapfrog, propose
from .model import NetSpec, PriorSpec, param_count
from .numerics import DomainError, RngStream
from .smc import ParticleEnsemble, SamplerError, ess, estimate, init_ensemble, normalize, smc_step
from .target import TargetContext, grad_log_target, log_target

__version__ = "0.1.0"
