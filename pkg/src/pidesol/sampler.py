"""Collocation-point samplers: uniform box, residual-adaptive, path-based.

A batch is a pair (t, x) with t shape (M,) in [0, T) and x shape (M, d)
inside the problem's box.  The residual-adaptive sampler reweights a uniform
candidate pool by the current regression mismatch; the path sampler scatters
points along geometric Brownian motion trajectories, which concentrates
collocation mass where multiplicative dynamics actually send the state.
"""

from dataclasses import dataclass, asdict

import numpy as np

from .problems import Box, PideProblem


@dataclass(frozen=True)
class SamplerSpec:
    """kind is one of "uniform", "rad", "path".

    rad: pool_size candidates (0 means 20*M at call time), weight exponent k,
    floor c, pool refreshed every refresh_every inner steps.
    path: `paths` trajectories on `steps` grid times with per-step GBM drift
    mu and volatility sigma; mix is the fraction of each batch drawn from the
    residual-adaptive sampler instead of the trajectories.
    """

    kind: str = "uniform"
    pool_size: int = 0
    k: float = 1.0
    c: float = 1.0
    refresh_every: int = 1
    paths: int = 256
    steps: int = 50
    mix: float = 0.5
    mu: float = 0.0
    sigma: float = 0.0

    def __post_init__(self):
        if self.kind not in ("uniform", "rad", "path"):
            raise ValueError(f"unknown sampler kind {self.kind!r}")
        if self.k < 0 or self.c < 0:
            raise ValueError("need k >= 0 and c >= 0")
        if not 0.0 <= self.mix <= 1.0:
            raise ValueError("mix must lie in [0, 1]")
        if self.refresh_every < 1:
            raise ValueError("refresh_every must be >= 1")

    def to_config(self):
        return asdict(self)

    @staticmethod
    def from_config(cfg):
        return SamplerSpec(**cfg)


def sample_uniform(box: Box, M, rng):
    """M i.i.d. points uniform on [0,T) x box; t=T hits are redrawn."""
    if M < 1:
        raise ValueError("need M >= 1")
    t = rng.uniform(0.0, box.T, size=M)
    while True:
        hit = t >= box.T
        if not hit.any():
            break
        t[hit] = rng.uniform(0.0, box.T, size=int(hit.sum()))
    x = rng.uniform(box.lo, box.hi, size=(M, box.lo.size))
    return t, x


def rad_weights(residuals, k, c):
    """w_i = eps_i^k / mean(eps^k) + c; all-zero weights degrade to uniform."""
    eps = np.abs(np.asarray(residuals, float))
    ek = eps ** k
    mean = ek.mean()
    if mean == 0.0:
        return np.full(eps.size, 1.0 / eps.size)
    w = ek / mean + c
    total = w.sum()
    if total == 0.0:
        return np.full(eps.size, 1.0 / eps.size)
    return w / total


def sample_rad(residual_fn, box: Box, M, spec: SamplerSpec, rng):
    """Resample M points from a uniform candidate pool weighted by residual."""
    pool_size = spec.pool_size if spec.pool_size > 0 else 20 * M
    if pool_size < M:
        raise ValueError("pool smaller than batch")
    t, x = sample_uniform(box, pool_size, rng)
    p = rad_weights(residual_fn(t, x), spec.k, spec.c)
    idx = rng.choice(pool_size, size=M, replace=True, p=p)
    return t[idx], x[idx]


def sample_paths(problem: PideProblem, M, spec: SamplerSpec, rng,
                 residual_fn=None):
    """Blend of trajectory points and residual-adaptive points.

    Trajectories are exact GBM steps from problem.x0 on a uniform grid of
    spec.steps times in [0, T); states are clipped to the sampling box so the
    emitted points stay inside it.  A mix fraction of the batch comes from
    sample_rad (uniform when no residual_fn is supplied).
    """
    x0 = np.asarray(problem.x0, float)
    if np.any(x0 <= 0.0):
        raise ValueError("path sampling needs a positive start point")
    n_rad = int(round(spec.mix * M))
    n_path = M - n_rad

    parts = []
    if n_path > 0:
        dt = problem.box.T / spec.steps
        grid = dt * np.arange(spec.steps)  # t < T
        z = rng.standard_normal((spec.paths, spec.steps - 1, x0.size))
        incr = (spec.mu - 0.5 * spec.sigma ** 2) * dt \
            + spec.sigma * np.sqrt(dt) * z
        logx = np.concatenate(
            [np.zeros((spec.paths, 1, x0.size)), np.cumsum(incr, axis=1)],
            axis=1)
        states = x0 * np.exp(logx)
        states = np.clip(states, problem.box.lo, problem.box.hi)
        tt = np.broadcast_to(grid[None, :], (spec.paths, spec.steps)).ravel()
        xx = states.reshape(-1, x0.size)
        pool = tt.size
        replace = pool < n_path
        idx = rng.choice(pool, size=n_path, replace=replace)
        parts.append((tt[idx], xx[idx]))
    if n_rad > 0:
        if residual_fn is None:
            parts.append(sample_uniform(problem.box, n_rad, rng))
        else:
            parts.append(sample_rad(residual_fn, problem.box, n_rad, spec, rng))
    t = np.concatenate([p[0] for p in parts])
    x = np.concatenate([p[1] for p in parts])
    return t, x


def sample_points(spec: SamplerSpec, problem: PideProblem, M, rng,
                  residual_fn=None):
    """Dispatch on spec.kind; rad degrades to uniform without a residual_fn."""
    if spec.kind == "uniform":
        return sample_uniform(problem.box, M, rng)
    if spec.kind == "rad":
        if residual_fn is None:
            return sample_uniform(problem.box, M, rng)
        return sample_rad(residual_fn, problem.box, M, spec, rng)
    return sample_paths(problem, M, spec, rng, residual_fn)
