"""Benchmark parabolic PIDEs.

Each problem bundles the coefficients of

    dt_u + F(t, x, u, grad u, Hess u)
         + lam(t,x) * Int ell(u(t, x + gamma(t,x,e)) - u(t,x)) nu(de) = 0

on [0,T) x D with terminal data u(T,.) = phi, plus everything the solver and
the oracles need: sampling box, hard-constraint pair (A, B), jump law spec,
and (where one exists) the closed-form solution.

F is never exposed as a raw Hessian functional.  Each problem registers which
directional evaluator applies ("directional" with its drift/diffusion, or
"hjb" with its eta) plus a zeroth-order remainder, so the solver only ever
needs univariate second derivatives.
"""

from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional

import numpy as np

from .autodiff import exp as gexp, maximum as gmaximum
from .network import FuncField, HardConstraint


@dataclass(frozen=True)
class NuSpec:
    """Jump-size distribution.

    kinds:
      gaussian             N(mean, cov) in R^l
      correlated_lognormal E_i = mu + sigma (sqrt(rho) Z0 + sqrt(1-rho) Z_i),
                           one common factor across components
      asset_normal         picks component i with probability rate_i/sum(rates),
                           draws E_i ~ N(mu_i, sigma_i^2) in that slot only
    """

    kind: str
    dim: int
    mean: Optional[np.ndarray] = None
    cov: Optional[np.ndarray] = None
    mu: float = 0.0
    sigma: float = 0.0
    rho: float = 0.0
    mus: Optional[np.ndarray] = None
    sigmas: Optional[np.ndarray] = None
    rates: Optional[np.ndarray] = None
    chol: Optional[np.ndarray] = None

    @staticmethod
    def gaussian(mean, cov):
        mean = np.asarray(mean, float)
        cov = np.asarray(cov, float)
        if cov.shape != (len(mean), len(mean)) or not np.allclose(cov, cov.T):
            raise ValueError("covariance must be square symmetric")
        # PSD check via eigenvalues; cholesky of the shifted matrix stays exact
        w = np.linalg.eigvalsh(cov)
        if w.min() < -1e-12 * max(1.0, w.max()):
            raise ValueError("covariance must be positive semidefinite")
        chol = np.linalg.cholesky(cov) if w.min() > 0 else _psd_factor(cov)
        return NuSpec(kind="gaussian", dim=len(mean), mean=mean, cov=cov, chol=chol)

    @staticmethod
    def correlated_lognormal(mu, sigma, rho, dim):
        if not 0.0 <= rho <= 1.0:
            raise ValueError("rho must lie in [0, 1]")
        return NuSpec(kind="correlated_lognormal", dim=dim,
                      mu=float(mu), sigma=float(sigma), rho=float(rho))

    @staticmethod
    def asset_normal(mus, sigmas, rates):
        mus = np.asarray(mus, float)
        sigmas = np.asarray(sigmas, float)
        rates = np.asarray(rates, float)
        if np.any(rates < 0) or rates.sum() <= 0:
            raise ValueError("rates must be nonnegative with positive sum")
        return NuSpec(kind="asset_normal", dim=len(mus),
                      mus=mus, sigmas=sigmas, rates=rates)


def _psd_factor(cov):
    w, V = np.linalg.eigh(cov)
    return V * np.sqrt(np.clip(w, 0.0, None))


@dataclass(frozen=True)
class Box:
    """Space-time sampling region [0, T) x prod_j [lo_j, hi_j]."""

    T: float
    lo: np.ndarray
    hi: np.ndarray

    def contains(self, t, x):
        t = np.asarray(t)
        x = np.asarray(x)
        return (t >= 0) & (t < self.T) & np.all(x >= self.lo, -1) & np.all(x <= self.hi, -1)


@dataclass
class PideProblem:
    name: str
    T: float
    d: int
    q: int
    drift: Callable            # (t, x) -> (M, d)
    sigma: Callable            # (t, x) -> (M, d, q)
    lam: Callable              # (t, x) -> (M,)
    gamma: Callable            # (t, x, e) -> (M, d)
    nu: NuSpec
    phi: Callable              # (x) -> (M,), generic arithmetic
    f: Callable                # (t, x) -> (M,)
    c: Callable                # (t, x) -> (M,) discount used by the oracles
    zero_order: Callable       # (t, x, u) -> (M,), the non-derivative part of F
    box: Box
    local_kind: str            # "directional" or "hjb"
    ell: str                   # "identity" or "exp"
    eta: float = 0.0
    linear: bool = True
    c0: Optional[float] = None  # contraction rate when the problem is linear
    x0: Optional[np.ndarray] = None
    solution: Optional[Callable] = None  # (t, x) -> (M,), generic arithmetic
    params: dict = dc_field(default_factory=dict)
    g: Optional[Callable] = None

    def hard_constraint(self) -> HardConstraint:
        T = self.T
        phi = self.phi
        return HardConstraint(A=lambda t, x: phi(x), B=lambda t, x: (T - t) * (1.0 / T))

    def solution_field(self):
        if self.solution is None:
            raise ValueError(f"problem {self.name} has no closed-form solution")
        return FuncField(self.solution)

    def apply_ell(self, z):
        """Jump transform ell applied to an increment array."""
        if self.ell == "identity":
            return z
        arg = self.eta * np.asarray(z)
        if np.any(np.abs(arg) > 700.0):
            raise OverflowError("ell: |eta * increment| too large, would overflow exp")
        return -np.expm1(-arg) / self.eta


# ---------------------------------------------------------------------------
# linear PIDE with quadratic terminal data and a closed-form solution
# ---------------------------------------------------------------------------

def _growth_factor(b, tau):
    # (e^{2 b tau} - 1) / (2 b), continuous limit tau at b = 0
    if abs(b) < 1e-14:
        return tau
    return np.expm1(2.0 * b * tau) / (2.0 * b)


def linear_quadratic_problem(d, q=None, b=1.0, c=2.0, sigma=0.28, lam=0.25,
                             sigma_j=0.4, T=0.5, box_half_width=1.5):
    """drift b*x, constant diffusion sigma * ones(d, q), additive Gaussian
    jumps with covariance sigma_j * I, discount c, terminal |x|^2."""
    if q is None:
        q = d
    if c <= 0:
        raise ValueError("c must be positive")
    Sigma = np.full((d, q), sigma)
    cov_j = sigma_j * np.eye(d)
    nu = NuSpec.gaussian(np.zeros(d), cov_j)
    trace_term = float(np.trace(Sigma @ Sigma.T) + lam * np.trace(cov_j))

    def _growth_tau(tau):
        # (e^{2 b tau} - 1) / (2 b) with the b -> 0 limit, jet-friendly
        if abs(b) < 1e-14:
            return tau
        return (gexp(2.0 * b * tau) - 1.0) * (1.0 / (2.0 * b))

    def sol(t, x):
        tau = T - t
        quad = (x * x).sum(axis=1)
        return gexp((2.0 * b - c) * tau) * quad \
            + gexp(-c * tau) * trace_term * _growth_tau(tau)

    return PideProblem(
        name="linear_quadratic",
        T=T, d=d, q=q,
        drift=lambda t, x: b * x,
        sigma=lambda t, x: np.broadcast_to(Sigma, (len(t), d, q)),
        lam=lambda t, x: np.full(len(t), lam),
        gamma=lambda t, x, e: e,
        nu=nu,
        phi=lambda x: (x * x).sum(axis=1),
        f=lambda t, x: np.zeros(len(t)),
        c=lambda t, x: np.full(len(t), c),
        zero_order=lambda t, x, u: -c * u,
        box=Box(T=T, lo=np.full(d, -box_half_width), hi=np.full(d, box_half_width)),
        local_kind="directional",
        ell="identity",
        linear=True,
        c0=c,
        x0=np.zeros(d),
        solution=sol,
        params=dict(kind="linear_quadratic", d=d, q=q, b=b, c=c, sigma=sigma,
                    lam=lam, sigma_j=sigma_j, T=T, box_half_width=box_half_width),
    )


def linear_quadratic_solution(point, params) -> float:
    """Closed-form value e^{(2b-c)(T-t)} |x|^2
    + e^{-c(T-t)} (Tr[SS^T] + lam Tr[cov_J]) (e^{2b(T-t)} - 1) / (2b)."""
    t, x = point
    x = np.asarray(x, float)
    b, c = params["b"], params["c"]
    d, q = params["d"], params["q"]
    tau = params["T"] - t
    trace_term = params["sigma"] ** 2 * d * q + params["lam"] * params["sigma_j"] * d
    return float(np.exp((2 * b - c) * tau) * (x * x).sum()
                 + np.exp(-c * tau) * trace_term * _growth_factor(b, tau))


# ---------------------------------------------------------------------------
# nonlinear HJB with exponential jump transform
# ---------------------------------------------------------------------------

def hjb_problem(d, eta=1.0, lam=0.5, mu_j=0.0, sigma_j=0.2, f=2.0, T=1.0,
                box_half_width=1.5):
    """dt_u + Lap u - eta |grad u|^2 + f
    - (lam/eta) Int (e^{-eta (u(x+e)-u(x))} - 1) nu(de) = 0, phi = |x|^2."""
    if eta <= 0:
        raise ValueError("eta must be positive")
    cov_j = sigma_j * np.eye(d)
    nu = NuSpec.gaussian(np.full(d, mu_j), cov_j)
    sqrt2 = np.sqrt(2.0)

    return PideProblem(
        name="hjb",
        T=T, d=d, q=d,
        drift=lambda t, x: np.zeros_like(x),
        sigma=lambda t, x: np.broadcast_to(sqrt2 * np.eye(d), (len(t), d, d)),
        lam=lambda t, x: np.full(len(t), lam),
        gamma=lambda t, x, e: e,
        nu=nu,
        phi=lambda x: (x * x).sum(axis=1),
        f=lambda t, x: np.full(len(t), f),
        c=lambda t, x: np.zeros(len(t)),
        zero_order=lambda t, x, u: np.full(len(t), f),
        box=Box(T=T, lo=np.full(d, -box_half_width), hi=np.full(d, box_half_width)),
        local_kind="hjb",
        ell="exp",
        eta=eta,
        linear=False,
        x0=np.zeros(d),
        params=dict(kind="hjb", d=d, eta=eta, lam=lam, mu_j=mu_j, sigma_j=sigma_j,
                    f=f, T=T, box_half_width=box_half_width),
    )


# ---------------------------------------------------------------------------
# nonlinear Black-Scholes with default risk
# ---------------------------------------------------------------------------

def intensity_Q(y, vh=50.0, vl=70.0, gamma_h=0.2, gamma_l=0.02):
    """Piecewise-linear default intensity: gamma_h below vh, gamma_l above vl,
    linear in between.  Continuous and nonincreasing."""
    if not vh < vl:
        raise ValueError("needs vh < vl")
    y = np.asarray(y, float)
    slope = (gamma_h - gamma_l) / (vh - vl)
    mid = slope * (y - vh) + gamma_h
    return np.where(y < vh, gamma_h, np.where(y >= vl, gamma_l, mid))


def default_risk_problem(d=100, T=1.0, mu_bar=0.02, sigma=0.2, delta=2.0 / 3.0,
                         R=0.02, lam=0.1, mu_j=-0.2, sigma_j=0.15, rho_j=0.5,
                         vh=50.0, vl=70.0, gamma_h=0.2, gamma_l=0.02,
                         box_hi=200.0):
    """Basket of defaultable assets: GBM dynamics, common-factor lognormal
    jumps x * (e^E - 1), value-dependent discount (1-delta) Q(u) + R,
    terminal min_i x_i."""
    if not 0.0 <= delta <= 1.0:
        raise ValueError("delta must lie in [0, 1]")
    if not (vh < vl and gamma_h > gamma_l):
        raise ValueError("needs vh < vl and gamma_h > gamma_l")
    nu = NuSpec.correlated_lognormal(mu_j, sigma_j, rho_j, d)

    def sigma_fn(t, x):
        out = np.zeros((len(t), d, d))
        idx = np.arange(d)
        out[:, idx, idx] = sigma * x
        return out

    def zero_order(t, x, u):
        return -((1.0 - delta) * intensity_Q(u, vh, vl, gamma_h, gamma_l) + R) * u

    def phi(x):
        # min over assets; written as a reduction with maximum() so it also
        # runs on jets (min(a,b) = -max(-a,-b) needs pairwise forms, but the
        # problem is only ever trained with plain evaluations of phi at
        # jump-shifted points, and the hard constraint needs phi on jets)
        return _jet_min(x)

    return PideProblem(
        name="default_risk",
        T=T, d=d, q=d,
        drift=lambda t, x: mu_bar * x,
        sigma=sigma_fn,
        lam=lambda t, x: np.full(len(t), lam),
        gamma=lambda t, x, e: x * np.expm1(e),
        nu=nu,
        phi=phi,
        f=lambda t, x: np.zeros(len(t)),
        c=lambda t, x: np.full(len(t), R),  # linear part only; Q couples to u
        zero_order=zero_order,
        box=Box(T=T, lo=np.zeros(d), hi=np.full(d, box_hi)),
        local_kind="directional",
        ell="identity",
        linear=False,
        x0=np.full(d, 100.0),
        params=dict(kind="default_risk", d=d, T=T, mu_bar=mu_bar, sigma=sigma,
                    delta=delta, R=R, lam=lam, mu_j=mu_j, sigma_j=sigma_j,
                    rho_j=rho_j, vh=vh, vl=vl, gamma_h=gamma_h, gamma_l=gamma_l,
                    box_hi=box_hi),
    )


def _jet_min(x):
    """min over the last axis, valid for arrays and JetArray batches."""
    if isinstance(x, np.ndarray):
        return x.min(axis=-1)
    out = x[:, 0]
    for j in range(1, x.shape[1]):
        nxt = x[:, j]
        # min(a, b) = b - max(b - a, 0)
        out = nxt - gmaximum(nxt - out, 0.0)
    return out


# ---------------------------------------------------------------------------
# linear basket Black-Scholes with per-asset jumps
# ---------------------------------------------------------------------------

def linear_bs_problem(d, T=1.0, r=0.05, K=30.0, sigma_i=0.15, lam_i=0.5,
                      mu_ji=0.2, sigma_ji=0.3, rho_offdiag=0.1, weights=None,
                      box_hi=100.0):
    """Basket call under jump-diffusion: drift (r - lam_i kappa_i) x_i,
    correlated diffusion diag(sigma_i x_i) chol(rho), one asset jumping at a
    time with lognormal factor e^E, discount r, payoff (sum w x - K)^+."""
    if weights is None:
        weights = np.full(d, 1.0 / d)
    weights = np.asarray(weights, float)
    if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
        raise ValueError("weights must be nonnegative and sum to one")
    sig = np.full(d, sigma_i)
    lams = np.full(d, lam_i)
    mus = np.full(d, mu_ji)
    sjs = np.full(d, sigma_ji)
    kappa = np.exp(mus + 0.5 * sjs ** 2) - 1.0
    corr = rho_offdiag * np.ones((d, d)) + (1.0 - rho_offdiag) * np.eye(d)
    chol = np.linalg.cholesky(corr)
    lam_tot = float(lams.sum())
    nu = NuSpec.asset_normal(mus, sjs, lams)
    drift_coef = r - lams * kappa

    def sigma_fn(t, x):
        return x[:, :, None] * (sig[:, None] * chol)[None, :, :]

    def phi(x):
        basket = (x * weights).sum(axis=1)
        return gmaximum(basket - K, 0.0)

    return PideProblem(
        name="linear_bs",
        T=T, d=d, q=d,
        drift=lambda t, x: drift_coef * x,
        sigma=sigma_fn,
        lam=lambda t, x: np.full(len(t), lam_tot),
        gamma=lambda t, x, e: x * np.expm1(e),
        nu=nu,
        phi=phi,
        f=lambda t, x: np.zeros(len(t)),
        c=lambda t, x: np.full(len(t), r),
        zero_order=lambda t, x, u: -r * u,
        box=Box(T=T, lo=np.zeros(d), hi=np.full(d, box_hi)),
        local_kind="directional",
        ell="identity",
        linear=True,
        c0=r if r > 0 else None,
        x0=np.full(d, K),
        solution=None,
        params=dict(kind="linear_bs", d=d, T=T, r=r, K=K, sigma_i=sigma_i,
                    lam_i=lam_i, mu_ji=mu_ji, sigma_ji=sigma_ji,
                    rho_offdiag=rho_offdiag, box_hi=box_hi),
        g=None,
    )


def bs_compensator(mu_ji, sigma_ji):
    """kappa = E[e^E - 1] = exp(mu + sigma^2/2) - 1 for E ~ N(mu, sigma^2)."""
    return float(np.exp(mu_ji + 0.5 * sigma_ji ** 2) - 1.0)


# ---------------------------------------------------------------------------
# JSON round trip
# ---------------------------------------------------------------------------

_FACTORIES = {
    "linear_quadratic": linear_quadratic_problem,
    "hjb": hjb_problem,
    "default_risk": default_risk_problem,
    "linear_bs": linear_bs_problem,
}


def problem_to_config(problem: PideProblem) -> dict:
    """Scalar-parameter dict that round-trips through problem_from_config."""
    return dict(problem.params)


def problem_from_config(config: dict) -> PideProblem:
    config = dict(config)
    kind = config.pop("kind")
    if kind not in _FACTORIES:
        raise ValueError(f"unknown problem kind {kind!r}")
    return _FACTORIES[kind](**config)
