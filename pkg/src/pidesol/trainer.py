"""Iterative training loop: frozen-target inner recursion plus block distillation.

One epoch freezes the live parameters, runs n-1 inner steps of N optimizer
updates each against targets built from the frozen field (refreezing after
every inner step), and appends the resulting candidate to the current block.
Every K epochs the geometric Polyak average of the block is distilled back
into a single network by short regression, and that network becomes the live
one.  Gradients flow only through the live network's plain forward pass;
targets are constants by construction.
"""

import math
import time
import warnings
from dataclasses import dataclass, field as dc_field
from typing import Optional

import numpy as np

from .kernels import backward as kernel_backward
from .kernels import forward as kernel_forward
from .network import DgmConfig, HpinnField, init_params, make_z
from .problems import PideProblem
from .sampler import SamplerSpec, rad_weights, sample_points, sample_uniform
from .target import XiParam, g_xi_batch, sample_jump


@dataclass(frozen=True)
class AdamConfig:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError("betas must lie in (0, 1)")
        if self.eps <= 0.0:
            raise ValueError("eps must be positive")


@dataclass(frozen=True)
class TrainConfig:
    """Loop hyperparameters.

    lr: learning rate. alpha: relaxation weight of the outer update.
    h: time scale of the truncated expansion; the target scale is
    xi = h/(n-1).  n: inner steps per epoch (n-1 frozen phases).  N: gradient
    steps per inner step.  M: batch size.  K: block length between
    distillations.  k_star: total epochs.
    """

    lr: float = 5e-4
    alpha: float = 0.4
    h: float = 0.5
    n: int = 20
    N: int = 32
    M: int = 1024
    K: int = 10
    k_star: int = 100
    distill_steps: int = 200
    distill_lr: float = 1e-3
    seed: int = 0
    optimizer: str = "adam"

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("need n >= 2 inner steps")
        if self.h <= 0 or self.alpha <= 0:
            raise ValueError("alpha and h must be positive")
        if min(self.N, self.M, self.K) < 0 or self.k_star < 0:
            raise ValueError("negative loop sizes")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    @property
    def xi(self) -> XiParam:
        return XiParam.from_h_n(self.h, self.n)


def validate_alpha(config: TrainConfig, problem: PideProblem):
    """Contraction bound 0 < alpha < 2h/(1+e^(-c0 h)).

    Hard error when the problem registers a contraction rate c0 (linear
    benchmarks); otherwise the bound cannot be evaluated and alpha > h only
    draws a warning, since the averaging weights leave the simplex there.
    """
    if problem.linear and problem.c0 is not None:
        bound = 2.0 * config.h / (1.0 + math.exp(-problem.c0 * config.h))
        if not 0.0 < config.alpha < bound:
            raise ValueError(
                f"alpha={config.alpha} outside the contraction range "
                f"(0, {bound:.6g}) for c0={problem.c0}, h={config.h}")
    elif config.alpha > config.h:
        warnings.warn(
            f"alpha={config.alpha} exceeds h={config.h}; no contraction "
            "rate is registered for this problem, proceeding anyway",
            stacklevel=2)


@dataclass
class TrainState:
    model: DgmConfig
    problem: PideProblem
    live: np.ndarray
    frozen: np.ndarray
    adam_m: np.ndarray
    adam_v: np.ndarray
    step_count: int = 0
    epoch: int = 0
    block_start: Optional[np.ndarray] = None
    block_snapshots: list = dc_field(default_factory=list)
    rng: Optional[np.random.Generator] = None

    def __post_init__(self):
        self._hc = self.problem.hard_constraint()
        if self.block_start is None:
            self.block_start = self.live.copy()
        self._frozen_field = None

    def live_field(self) -> HpinnField:
        return HpinnField(self.model, self.live, self._hc)

    def frozen_field(self) -> HpinnField:
        if self._frozen_field is None:
            self._frozen_field = HpinnField(self.model, self.frozen, self._hc)
        return self._frozen_field

    def refreeze(self):
        self.frozen = self.live.copy()
        self._frozen_field = None


def init_state(problem: PideProblem, net: DgmConfig, config: TrainConfig,
               init_seed=None) -> TrainState:
    seq = np.random.SeedSequence(config.seed)
    s_init, s_sample = seq.spawn(2)
    theta = init_params(net, s_init if init_seed is None else init_seed)
    return TrainState(
        model=net, problem=problem, live=theta, frozen=theta.copy(),
        adam_m=np.zeros_like(theta), adam_v=np.zeros_like(theta),
        rng=np.random.default_rng(s_sample))


def empirical_loss(live_field, frozen_field, batch, problem: PideProblem,
                   xi: XiParam) -> float:
    """(1/M) sum (u_live(y_m) - g(y_m, e_m))^2 with constant targets."""
    t, x, e = batch
    g = _targets(frozen_field, t, x, e, problem, xi)
    u = live_field.values(t, x)
    return float(np.mean((u - g) ** 2))


def _targets(frozen_field, t, x, e, problem, xi):
    g = g_xi_batch(frozen_field, t, x, e, problem, xi)
    bad = ~np.isfinite(g)
    if bad.any():
        i = int(np.argmax(bad))
        raise FloatingPointError(
            f"non-finite target at sample {i}: t={t[i]}, x={x[i]}, e={e[i]}")
    return g


def _loss_grad(model, hc, theta, t, x, target):
    """Mean-squared loss against a constant target and its parameter gradient.

    u = A + B v_theta, so dL/dtheta = (2/M) sum r_m B_m dv_m/dtheta with
    r = u - target; the per-sample weights feed the batched reverse pass.
    """
    z = make_z(t, x)
    v, cache = kernel_forward(theta, model.d, model.L, model.n_hid, z, True)
    a = hc.A(t, x)
    b = hc.B(t, x)
    r = a + b * v - target
    loss = float(np.mean(r * r))
    w = (2.0 / t.size) * r * b
    grad = kernel_backward(theta, model.d, model.L, model.n_hid, z, cache, w)
    return loss, grad


def adam_update(theta, grad, m, v, step, cfg: AdamConfig):
    """One bias-corrected step; arrays mutated in place, step is 1-based."""
    m *= cfg.beta1
    m += (1.0 - cfg.beta1) * grad
    v *= cfg.beta2
    v += (1.0 - cfg.beta2) * grad * grad
    mhat = m / (1.0 - cfg.beta1 ** step)
    vhat = v / (1.0 - cfg.beta2 ** step)
    theta -= cfg.lr * mhat / (np.sqrt(vhat) + cfg.eps)


def gradient_step(state: TrainState, batch, problem: PideProblem,
                  config: TrainConfig) -> float:
    """One optimizer update of the live parameters; returns the batch loss."""
    t, x, e = batch
    target = _targets(state.frozen_field(), t, x, e, problem, config.xi)
    loss, grad = _loss_grad(state.model, state._hc, state.live, t, x, target)
    if config.optimizer == "sgd":
        state.live -= config.lr * grad
    else:
        state.step_count += 1
        adam_update(state.live, grad, state.adam_m, state.adam_v,
                    state.step_count, AdamConfig(lr=config.lr))
    return loss


class _Pool:
    """Residual-weighted candidate pool, rebuilt every refresh_every inner steps."""

    def __init__(self, spec, problem, config):
        self.spec = spec
        self.problem = problem
        self.M = config.M
        self.t = self.x = self.p = None

    def draw(self, state, config):
        rng = state.rng
        if self.spec.kind != "rad":
            return sample_points(self.spec, self.problem, self.M, rng,
                                 self._residual_fn(state, config))
        if self.p is None:
            raise RuntimeError("pool used before refresh")
        idx = rng.choice(self.t.size, size=self.M, replace=True, p=self.p)
        return self.t[idx], self.x[idx]

    def _residual_fn(self, state, config):
        if self.spec.kind == "uniform":
            return None
        live = state.live_field()
        frozen = state.frozen_field()
        problem, xi = self.problem, config.xi

        def fn(t, x):
            e = sample_jump(problem.nu, state.rng, size=t.size)
            g = g_xi_batch(frozen, t, x, e, problem, xi)
            return np.abs(live.values(t, x) - g)

        return fn

    def maybe_rebuild(self, state, config, inner_index):
        if self.spec.kind != "rad" or inner_index % self.spec.refresh_every:
            return
        pool_size = self.spec.pool_size or 20 * self.M
        t, x = sample_uniform(self.problem.box, pool_size, state.rng)
        res = self._residual_fn(state, config)(t, x)
        self.t, self.x = t, x
        self.p = rad_weights(res, self.spec.k, self.spec.c)


def inner_recursion(state: TrainState, problem: PideProblem,
                    config: TrainConfig, spec: SamplerSpec,
                    losses_out=None) -> np.ndarray:
    """n-1 frozen phases of N gradient steps each; returns the candidate."""
    pool = _Pool(spec, problem, config)
    for i in range(config.n - 1):
        pool.maybe_rebuild(state, config, i)
        step_losses = []
        for _ in range(config.N):
            t, x = pool.draw(state, config)
            e = sample_jump(problem.nu, state.rng, size=config.M)
            step_losses.append(gradient_step(state, (t, x, e), problem, config))
        state.refreeze()
        if losses_out is not None:
            losses_out.append(
                float(np.mean(step_losses)) if step_losses else math.nan)
    return state.live.copy()


def block_weights(alpha, h, K):
    """((1-a/h)^K, [(a/h)(1-a/h)^(K-j) for j=1..K]); sums to 1 for 0<a<=h."""
    r = alpha / h
    w_start = (1.0 - r) ** K
    w = [r * (1.0 - r) ** (K - j) for j in range(1, K + 1)]
    return w_start, np.array(w)


def block_target_eval(start_field, snapshot_fields, alpha, h, t, x):
    """Unrolled Polyak average of the block, evaluated pointwise."""
    if not snapshot_fields:
        raise ValueError("empty block")
    w_start, w = block_weights(alpha, h, len(snapshot_fields))
    out = w_start * start_field.values(t, x)
    for wj, fld in zip(w, snapshot_fields):
        out = out + wj * fld.values(t, x)
    return out


def distill(state: TrainState, problem: PideProblem, config: TrainConfig,
            spec: SamplerSpec) -> np.ndarray:
    """Regress the block's Polyak average into one network.

    Student starts at the last candidate; fresh Adam moments for this
    sub-problem only.  Clears the block and rebases block_start.
    """
    if len(state.block_snapshots) != config.K:
        raise ValueError("distill needs a full block")
    hc = state._hc
    start = HpinnField(state.model, state.block_start, hc)
    snaps = [HpinnField(state.model, th, hc) for th in state.block_snapshots]
    student = state.block_snapshots[-1].copy()
    m = np.zeros_like(student)
    v = np.zeros_like(student)
    adam = AdamConfig(lr=config.distill_lr)
    for step in range(1, config.distill_steps + 1):
        t, x = sample_points(spec, problem, config.M, state.rng)
        target = block_target_eval(start, snaps, config.alpha, config.h, t, x)
        _, grad = _loss_grad(state.model, hc, student, t, x, target)
        adam_update(student, grad, m, v, step, adam)
    state.live = student
    state.refreeze()
    state.block_snapshots = []
    state.block_start = student.copy()
    return student


def train(problem: PideProblem, net: DgmConfig, config: TrainConfig,
          spec: SamplerSpec = SamplerSpec(), test_eval=None, callback=None,
          row_sink=None):
    """Full loop; returns (final field, metric rows).

    Rows are dicts with keys epoch, inner_step, loss, test_mae, wall_seconds;
    test_mae is None except on each epoch's last row, where it is evaluated
    after any distillation.  row_sink, when given, receives each row as soon
    as it exists, so partial logs survive an abort.  Deterministic given
    config.seed in single-threaded mode.
    """
    validate_alpha(config, problem)
    state = init_state(problem, net, config)
    rows = []
    t0 = time.perf_counter()
    for epoch in range(1, config.k_star + 1):
        state.epoch = epoch
        state.refreeze()
        losses = []
        candidate = inner_recursion(state, problem, config, spec, losses)
        state.block_snapshots.append(candidate)
        if len(state.block_snapshots) == config.K:
            distill(state, problem, config, spec)
        mae = None
        if test_eval is not None:
            mae = float(test_eval(state.live_field()))
        wall = time.perf_counter() - t0
        for i, loss in enumerate(losses, start=1):
            if not math.isfinite(loss):
                raise FloatingPointError(
                    f"non-finite loss at epoch {epoch}, inner step {i}")
            row = {
                "epoch": epoch, "inner_step": i, "loss": loss,
                "test_mae": mae if i == len(losses) else None,
                "wall_seconds": wall}
            rows.append(row)
            if row_sink is not None:
                row_sink(row)
        if callback is not None:
            callback(epoch, state, losses[-1] if losses else math.nan, mae,
                     wall)
    return state.live_field(), rows
