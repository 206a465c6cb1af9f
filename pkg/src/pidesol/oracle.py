"""Independent Monte Carlo reference solvers.

Everything here is deliberately decoupled from the network and trainer: the
only shared code is the problem coefficient functions and the jump sampler.
Paths follow Euler-Maruyama on a uniform grid; within a step, jump counts are
Poisson with the left-point intensity and every jump displacement uses the
left-point state.  Discount and source integrals use left-point rectangles,
matching the Euler order.

The batch engine is chunk-vectorized on a single RNG stream, so results are
deterministic for a fixed seed in single-threaded mode.
"""

import math
from dataclasses import dataclass

import numpy as np

from .problems import PideProblem
from .target import sample_jump

CHUNK = 16384


@dataclass(frozen=True)
class McConfig:
    paths: int
    steps: int
    antithetic: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.paths < 1 or self.steps < 1:
            raise ValueError("need paths >= 1 and steps >= 1")
        if self.antithetic and self.paths % 2:
            raise ValueError("antithetic mode needs an even path count")


@dataclass
class PathSample:
    times: np.ndarray
    states: np.ndarray
    discount_integral: float
    source_integral: float
    jumps: int


def simulate_jump_diffusion(problem: PideProblem, start, mc: McConfig,
                            rng) -> PathSample:
    """One full trajectory from start=(t0, x0) to T, kept step by step."""
    t0, x0 = start
    t0 = float(t0)
    if t0 >= problem.T:
        raise ValueError("start time must be below T")
    x0 = np.asarray(x0, float)
    dt = (problem.T - t0) / mc.steps
    times = t0 + dt * np.arange(mc.steps + 1)
    states = np.empty((mc.steps + 1, problem.d))
    states[0] = x0
    disc = 0.0
    src = 0.0
    jumps = 0
    for i in range(mc.steps):
        tb = times[i:i + 1]
        xb = states[i].reshape(1, -1)
        src += math.exp(-disc) * float(problem.f(tb, xb)[0]) * dt
        b = np.broadcast_to(np.asarray(problem.drift(tb, xb), float),
                            (1, problem.d))[0]
        sig = np.asarray(problem.sigma(tb, xb), float)[0]
        z = rng.standard_normal(sig.shape[1])
        xn = states[i] + b * dt + sig @ z * math.sqrt(dt)
        lam = float(problem.lam(tb, xb)[0])
        count = int(rng.poisson(lam * dt))
        for _ in range(count):
            e = sample_jump(problem.nu, rng)
            xn = xn + problem.gamma(tb, xb, e.reshape(1, -1))[0]
        jumps += count
        disc += float(problem.c(tb, xb)[0]) * dt
        states[i + 1] = xn
    return PathSample(times=times, states=states, discount_integral=disc,
                      source_integral=src, jumps=jumps)


def _batch_paths(problem, t0, x0, t1, steps, n, rng, antithetic):
    """Endpoint states plus discount/source integrals for n paths.

    Antithetic pairs (p, p + n/2) share jump counts and jump sizes and flip
    the Gaussian increments; exact pairing assumes the intensity is
    state-independent, which holds for every registered benchmark.
    """
    d = problem.d
    dt = (t1 - t0) / steps
    x = np.broadcast_to(np.asarray(x0, float), (n, d)).copy()
    disc = np.zeros(n)
    src = np.zeros(n)
    half = n // 2
    for i in range(steps):
        tb = np.full(n, t0 + i * dt)
        src += np.exp(-disc) * problem.f(tb, x) * dt
        b = np.broadcast_to(np.asarray(problem.drift(tb, x), float), x.shape)
        sig = np.asarray(problem.sigma(tb, x), float)
        if antithetic:
            zh = rng.standard_normal((half, sig.shape[2]))
            z = np.concatenate([zh, -zh])
        else:
            z = rng.standard_normal((n, sig.shape[2]))
        xn = x + b * dt + np.einsum("pdq,pq->pd", sig, z) * math.sqrt(dt)
        lam = problem.lam(tb, x)
        if antithetic:
            counts_h = rng.poisson(lam[:half] * dt)
            for j in range(int(counts_h.max(initial=0))):
                idx = np.where(counts_h > j)[0]
                e = sample_jump(problem.nu, rng, size=idx.size)
                xn[idx] += problem.gamma(tb[idx], x[idx], e)
                xn[idx + half] += problem.gamma(tb[idx + half],
                                                x[idx + half], e)
        else:
            counts = rng.poisson(lam * dt)
            for j in range(int(counts.max(initial=0))):
                idx = np.where(counts > j)[0]
                e = sample_jump(problem.nu, rng, size=idx.size)
                xn[idx] += problem.gamma(tb[idx], x[idx], e)
        disc += problem.c(tb, x) * dt
        x = xn
    return x, disc, src


def _mc_reduce(vals):
    mean = float(vals.mean())
    se = 0.0 if vals.size < 2 else float(vals.std(ddof=1) / math.sqrt(vals.size))
    return mean, se


def _path_functional(problem, point, t1, mc, rng, payoff):
    """Chunked MC of a per-path functional payoff(XT, disc, src).

    Antithetic pairs live inside one chunk, so each chunk is folded to its
    pair means before concatenation; the result is then an i.i.d. sample.
    """
    t0, x0 = point
    parts = []
    done = 0
    while done < mc.paths:
        # chunk sizes stay even in antithetic mode (paths and CHUNK are even)
        n = min(CHUNK, mc.paths - done)
        xt, disc, src = _batch_paths(problem, float(t0), x0, t1, mc.steps, n,
                                     rng, mc.antithetic)
        vals = payoff(xt, disc, src)
        if mc.antithetic:
            vals = 0.5 * (vals[:n // 2] + vals[n // 2:])
        parts.append(vals)
        done += n
    return np.concatenate(parts)


def fk_estimate(problem: PideProblem, point, mc: McConfig, rng):
    """(value, standard error) of the discounted terminal-plus-source average.

    Linear problems only; the representation does not hold once ell or the
    zero-order term couples nonlinearly to u.
    """
    if not problem.linear:
        raise ValueError("problem is nonlinear; use hjb_log_mc instead")
    t0, _ = point
    if float(t0) >= problem.T:
        raise ValueError("start time must be below T")
    vals = _path_functional(
        problem, point, problem.T, mc, rng,
        lambda xt, disc, src: src + np.exp(-disc) * problem.phi(xt))
    return _mc_reduce(vals)


def hjb_log_mc(point, problem: PideProblem, mc: McConfig, rng):
    """(value, standard error) from the exponential-moment representation.

    Averages exp(-eta (int f ds + phi(X_T))) over jump-diffusion paths and
    returns -(1/eta) log mean; the standard error is the delta-method
    propagation se_mean / (eta * mean).
    """
    eta = problem.eta
    if eta <= 0.0:
        raise ValueError("needs eta > 0")
    t0, _ = point
    if float(t0) >= problem.T:
        raise ValueError("start time must be below T")
    vals = _path_functional(
        problem, point, problem.T, mc, rng,
        lambda xt, disc, src: np.exp(-eta * (src + problem.phi(xt))))
    mean, se_mean = _mc_reduce(vals)
    if mean <= 0.0:
        raise ValueError("MC mean of the exponential moment is nonpositive; "
                         "increase paths or rescale")
    return -math.log(mean) / eta, se_mean / (eta * mean)


def fk_propagate(problem: PideProblem, terminal_fn, point, h, mc: McConfig,
                 rng, include_source=True):
    """(value, SE) of the one-step propagator applied to a terminal field:
    E[ int_t^{t+h} e^{-int c} f ds + e^{-int c} terminal_fn(t+h, X_{t+h}) ].

    Pass the same-seeded rng twice to difference two fields on shared paths.
    """
    t0, _ = point
    t1 = float(t0) + h
    if t1 > problem.T + 1e-12:
        raise ValueError("propagation leaves the time horizon")

    def payoff(xt, disc, src):
        tail = np.exp(-disc) * terminal_fn(np.full(len(xt), t1), xt)
        return src + tail if include_source else tail

    vals = _path_functional(problem, point, t1, mc, rng, payoff)
    return _mc_reduce(vals)


_REFERENCES = {
    "default_risk_nojump_d100": 57.300,
    "default_risk_jump_d100": 55.810,
}


def reference_value(tag: str) -> float:
    """Published reference level for plots; not a computation."""
    try:
        return _REFERENCES[tag]
    except KeyError:
        raise ValueError(f"unknown reference tag {tag!r}") from None
