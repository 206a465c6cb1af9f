"""Single-jump regression target and the jump-term Monte Carlo estimator.

The regression target for a frozen field u at a sample (t, x) with one jump
draw e is

    g = u(t,x) + xi * [ dt_u + F(t,x,u,grad u,Hess u)
                        + lam(t,x) * ell(u(t, x + gamma(t,x,e)) - u(t,x)) ]

i.e. the nonlocal integral is replaced by its one-sample estimate.  For an
exact solution the bracket has conditional mean zero, so E[g | t,x] = u(t,x)
and the target is unbiased; its variance is xi^2 * m times the variance of the
m-sample jump estimator, which is what variance_ratio measures.

Targets are plain numbers with respect to the live network: nothing here
touches live parameters, so no gradient can flow into them.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .network import hjb_local_operator_batch, local_operator_batch
from .problems import NuSpec, PideProblem


@dataclass(frozen=True)
class XiParam:
    """Target scale xi, optionally recorded as h/(n-1)."""

    xi: float
    h: Optional[float] = None
    n: Optional[int] = None

    def __post_init__(self):
        if self.xi == 0.0:
            raise ValueError("xi must be nonzero")
        if self.h is not None and self.n is not None:
            derived = self.h / (self.n - 1)
            if abs(self.xi - derived) > 1e-12 * max(1.0, abs(derived)):
                raise ValueError("xi does not equal h/(n-1)")

    @staticmethod
    def from_h_n(h, n):
        if n < 2:
            raise ValueError("need n >= 2")
        return XiParam(xi=h / (n - 1), h=h, n=n)


@dataclass(frozen=True)
class TargetSample:
    point: tuple  # (t, x)
    jump: np.ndarray


def sample_jump(nu: NuSpec, rng, size=None):
    """Draw from the jump law; returns (dim,) for size=None else (size, dim)."""
    single = size is None
    m = 1 if single else int(size)
    if nu.kind == "gaussian":
        z = rng.standard_normal((m, nu.dim))
        out = nu.mean + z @ nu.chol.T
    elif nu.kind == "correlated_lognormal":
        z0 = rng.standard_normal((m, 1))
        zi = rng.standard_normal((m, nu.dim))
        out = nu.mu + nu.sigma * (np.sqrt(nu.rho) * z0 + np.sqrt(1.0 - nu.rho) * zi)
    elif nu.kind == "asset_normal":
        p = nu.rates / nu.rates.sum()
        idx = rng.choice(nu.dim, size=m, p=p)
        eps = nu.mus[idx] + nu.sigmas[idx] * rng.standard_normal(m)
        out = np.zeros((m, nu.dim))
        out[np.arange(m), idx] = eps
    else:
        raise ValueError(f"unknown jump law {nu.kind!r}")
    return out[0] if single else out


def local_part_batch(field, t, x, problem: PideProblem):
    """(u values, dt_u + F evaluated through the registered operator)."""
    if problem.local_kind == "directional":
        drift = np.asarray(problem.drift(t, x), float)
        drift = np.broadcast_to(drift, x.shape)
        sig = np.ascontiguousarray(problem.sigma(t, x), dtype=float)
        u0, op = local_operator_batch(field, t, x, drift, sig)
    elif problem.local_kind == "hjb":
        u0, op = hjb_local_operator_batch(field, t, x, problem.eta)
    else:
        raise ValueError(f"unknown local operator kind {problem.local_kind!r}")
    return u0, op + problem.zero_order(t, x, u0)


def g_xi_batch(field, t, x, e, problem: PideProblem, xi: XiParam):
    """Vectorized targets for a batch of samples and one jump draw per sample."""
    t = np.asarray(t, float)
    x = np.asarray(x, float)
    e = np.asarray(e, float)
    u0, local = local_part_batch(field, t, x, problem)
    xshift = x + problem.gamma(t, x, e)
    ujump = field.values(t, xshift)
    jump = problem.lam(t, x) * problem.apply_ell(ujump - u0)
    return u0 + xi.xi * (local + jump)


def g_xi(point, jump, u_frozen, problem: PideProblem, xi: XiParam) -> float:
    """Single-sample target; u_frozen is any field with values/jet_values."""
    t, x = point
    out = g_xi_batch(u_frozen, np.array([float(t)]),
                     np.asarray(x, float).reshape(1, -1),
                     np.asarray(jump, float).reshape(1, -1), problem, xi)
    return float(out[0])


def nonlocal_mc(u, point, problem: PideProblem, m, rng):
    """m-sample Monte Carlo estimate of the nonlocal term
    lam(t,x) * mean_j ell(u(t, x + gamma(t,x,E_j)) - u(t,x))."""
    if m < 1:
        raise ValueError("need m >= 1")
    t, x = point
    t = np.full(m, float(t))
    x = np.broadcast_to(np.asarray(x, float), (m, problem.d))
    e = sample_jump(problem.nu, rng, size=m)
    u0 = u.values(t[:1], x[:1])[0]
    ujump = u.values(t, x + problem.gamma(t, x, e))
    lam = problem.lam(t[:1], x[:1])[0]
    return float(lam * problem.apply_ell(ujump - u0).mean())


def variance_ratio(point, u, problem: PideProblem, xi: XiParam, m, trials, rng,
                   chunk=20000):
    """sampleVar(single-jump target) / sampleVar(m-sample jump estimator).

    For an exact solution this converges to xi^2 * m.  Raises if the jump
    integrand is degenerate (constant in the jump draw).
    """
    if trials < 2:
        raise ValueError("need at least two trials")
    t0, x0 = point
    tb = np.array([float(t0)])
    xb = np.asarray(x0, float).reshape(1, -1)
    u0, local = local_part_batch(u, tb, xb, problem)
    u0 = float(u0[0])
    base = u0 + xi.xi * float(local[0])
    lam = float(problem.lam(tb, xb)[0])

    def jump_values(k):
        # ell(u(t, x+gamma(E)) - u(t,x)) for k fresh draws
        e = sample_jump(problem.nu, rng, size=k)
        tt = np.full(k, float(t0))
        xx = np.broadcast_to(xb[0], (k, problem.d))
        uj = u.values(tt, xx + problem.gamma(tt, xx, e))
        return problem.apply_ell(uj - u0)

    g_vals = np.empty(trials)
    done = 0
    while done < trials:
        k = min(chunk, trials - done)
        g_vals[done:done + k] = base + xi.xi * lam * jump_values(k)
        done += k

    est_vals = np.empty(trials)
    done = 0
    per = max(1, chunk // m)
    while done < trials:
        k = min(per, trials - done)
        vals = jump_values(k * m).reshape(k, m)
        est_vals[done:done + k] = lam * vals.mean(axis=1)
        done += k

    var_est = est_vals.var(ddof=1)
    if var_est == 0.0:
        raise ValueError("degenerate jump integrand: estimator variance is zero")
    return float(g_vals.var(ddof=1) / var_est)
