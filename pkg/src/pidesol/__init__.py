"""Meshfree iterative neural solver for high-dimensional parabolic PIDEs.

The pieces, bottom up: a scalar tape plus second-order jets (autodiff), a
gated space-time network with compiled batched kernels and a pure-python
fallback (network, kernels), four benchmark problems (problems), the
single-jump regression target (target), collocation samplers (sampler), the
frozen-target training loop with block distillation (trainer), Monte Carlo
reference solvers (oracle), and the experiment runner with its CLI (bench,
cli).
"""

from .autodiff import AdError, DomainError, Jet2, Tape, grad_check, grad_params, jet_eval
from .bench import ExperimentConfig, TestSet, build_test_set, emit_slice, mae, run_experiment
from .kernels import BACKEND
from .network import (
    DgmConfig,
    DgmNetwork,
    FuncField,
    HardConstraint,
    HpinnField,
    dgm_forward,
    hjb_local_operator,
    hpinn_eval,
    init_params,
    load_checkpoint,
    local_operator,
    param_count,
    save_checkpoint,
)
from .oracle import McConfig, PathSample, fk_estimate, fk_propagate, hjb_log_mc, reference_value, simulate_jump_diffusion
from .problems import (
    Box,
    NuSpec,
    PideProblem,
    default_risk_problem,
    hjb_problem,
    linear_bs_problem,
    linear_quadratic_problem,
    problem_from_config,
    problem_to_config,
)
from .sampler import SamplerSpec, sample_paths, sample_rad, sample_uniform
from .target import TargetSample, XiParam, g_xi, nonlocal_mc, sample_jump, variance_ratio
from .trainer import (
    AdamConfig,
    TrainConfig,
    TrainState,
    block_target_eval,
    distill,
    empirical_loss,
    gradient_step,
    inner_recursion,
    train,
)

__version__ = "0.1.0"
