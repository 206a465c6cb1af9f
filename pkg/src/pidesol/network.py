"""Gated space-time network, hard-constrained solution field and the
directional evaluation of the local differential operator.

The solution ansatz is u(t,x) = A(t,x) + B(t,x) * net(t,x) where A carries the
terminal data and B vanishes at t = T, so the terminal condition holds for any
parameters.  The local operator

    dt_u + b . grad u + 1/2 Tr[sigma sigma^T Hess u]

is evaluated as the second derivative psi''(0) of the univariate composition

    psi(h) = sum_i u(t + h^2/(2q), x + (h/sqrt 2) sigma_i + (h^2/(2q)) b)

with one jet pass per diffusion column sigma_i, which avoids ever assembling a
Hessian.  A log-transform variant covers dt_u + Lap u - eta |grad u|^2.
"""

import json
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import kernels
from .autodiff import DomainError, JetArray, tanh as generic_tanh
from .layout import LAYOUT_VERSION, param_blocks, param_count as _layout_count, param_views


@dataclass(frozen=True)
class DgmConfig:
    d: int
    L: int
    n_hid: int
    activation: str = "tanh"

    def __post_init__(self):
        if self.d < 1 or self.L < 1 or self.n_hid < 1:
            raise ValueError("DgmConfig needs d >= 1, L >= 1, n_hid >= 1")
        if self.activation != "tanh":
            raise ValueError("only tanh is supported")


def param_count(config: DgmConfig) -> int:
    return _layout_count(config.d, config.L, config.n_hid)


def init_params(config: DgmConfig, seed) -> np.ndarray:
    """Glorot-uniform weights (bound sqrt(6/(fan_in+fan_out))), zero biases.

    Blocks are drawn in layout order so the result is deterministic in seed.
    """
    rng = np.random.default_rng(seed)
    theta = np.zeros(param_count(config))
    for name, shape, start, stop in param_blocks(config.d, config.L, config.n_hid):
        if name.startswith("b"):
            continue
        if len(shape) == 2:
            fan_in, fan_out = shape[1], shape[0]
        else:  # w_out
            fan_in, fan_out = shape[0], 1
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        theta[start:stop] = rng.uniform(-bound, bound, stop - start)
    return theta


@dataclass
class DgmNetwork:
    config: DgmConfig
    theta: np.ndarray

    def __post_init__(self):
        self.theta = np.ascontiguousarray(self.theta, dtype=float)
        if self.theta.shape != (param_count(self.config),):
            raise ValueError("theta length does not match the architecture")


@dataclass
class HardConstraint:
    """u = A + B * net with B(T, x) = 0 and A(T, x) equal to the terminal data.

    A and B must be evaluable on plain arrays and on JetArray inputs.
    """

    A: Callable
    B: Callable


def _as_batch(point):
    t, x = point
    x = np.asarray(x, float)
    return np.array([float(t)]), x.reshape(1, -1)


def make_z(t, x):
    z = np.empty((len(t), x.shape[1] + 1))
    z[:, 0] = t
    z[:, 1:] = x
    return z


def dgm_forward_batch(net: DgmNetwork, t, x, need_cache=False):
    z = make_z(t, x)
    cfg = net.config
    return kernels.forward(net.theta, cfg.d, cfg.L, cfg.n_hid, z, need_cache)


def dgm_forward(net: DgmNetwork, point) -> float:
    """Raw network value at a single (t, x), before the hard constraint."""
    t, x = _as_batch(point)
    if x.shape[1] != net.config.d:
        raise ValueError(f"point has dimension {x.shape[1]}, network expects {net.config.d}")
    v, _ = dgm_forward_batch(net, t, x)
    return float(v[0])


def _lift_jet(value, like):
    if isinstance(value, JetArray):
        return value
    return JetArray(np.broadcast_to(np.asarray(value, float), like.shape).copy())


class HpinnField:
    """Hard-constrained solution field u = A + B * net, batch evaluable.

    values(t, x) evaluates on arrays; jet_values(tj, xj) pushes second-order
    input jets (triples of arrays) through network and constraint alike.
    """

    def __init__(self, config: DgmConfig, theta, hc: HardConstraint):
        self.config = config
        self.theta = np.ascontiguousarray(theta, dtype=float)
        self.hc = hc

    def network(self):
        return DgmNetwork(self.config, self.theta)

    def values(self, t, x):
        cfg = self.config
        v, _ = kernels.forward(self.theta, cfg.d, cfg.L, cfg.n_hid, make_z(t, x), False)
        return self.hc.A(t, x) + self.hc.B(t, x) * v

    def jet_values(self, tj, xj):
        cfg = self.config
        t0, t1, t2 = (np.asarray(a, float) for a in tj)
        x0, x1, x2 = (np.asarray(a, float) for a in xj)
        v = kernels.jet(self.theta, cfg.d, cfg.L, cfg.n_hid,
                        make_z(t0, x0), make_z(t1, x1), make_z(t2, x2))
        tJ = JetArray(t0, t1, t2)
        xJ = JetArray(x0, x1, x2)
        vJ = JetArray(*v)
        out = _lift_jet(self.hc.A(tJ, xJ), vJ) + _lift_jet(self.hc.B(tJ, xJ), vJ) * vJ
        return out.val, out.d1, out.d2


class FuncField:
    """Solution field given by a closed-form expression.

    fn(t, x) must be written with generic arithmetic so it evaluates on plain
    arrays and on JetArray inputs alike (see autodiff.exp and friends).
    """

    def __init__(self, fn):
        self.fn = fn

    def values(self, t, x):
        out = self.fn(np.asarray(t, float), np.asarray(x, float))
        return np.broadcast_to(np.asarray(out, float), np.shape(t)).copy()

    def jet_values(self, tj, xj):
        tJ = JetArray(*(np.asarray(a, float) for a in tj))
        xJ = JetArray(*(np.asarray(a, float) for a in xj))
        out = self.fn(tJ, xJ)
        out = _lift_jet(out, tJ)
        return out.val, out.d1, out.d2


def hpinn_eval(net: DgmNetwork, hc: HardConstraint, point) -> float:
    """A(t,x) + B(t,x) * net(t,x) at one point; equals A at t = T exactly."""
    t, x = _as_batch(point)
    field = HpinnField(net.config, net.theta, hc)
    return float(field.values(t, x)[0])


def local_operator_batch(field, t, x, drift, sigma):
    """dt_u + drift . grad u + 1/2 Tr[sigma sigma^T Hess u] on a batch.

    drift: (M, d); sigma: (M, d, q).  Returns (u values, operator values);
    the plain value comes for free as the jet constant term.
    """
    t = np.asarray(t, float)
    x = np.asarray(x, float)
    M, dim = x.shape
    q = sigma.shape[2]
    t1 = np.zeros(M)
    t2 = np.full(M, 1.0 / q)
    x2 = drift / q
    inv_sqrt2 = 1.0 / math.sqrt(2.0)
    acc = np.zeros(M)
    val = None
    for i in range(q):
        v0, v1, v2 = field.jet_values((t, t1, t2), (x, sigma[:, :, i] * inv_sqrt2, x2))
        acc += v2
        val = v0
    return val, acc


def local_operator(net: DgmNetwork, hc: HardConstraint, point, b, sigma) -> float:
    """Single-point version; b and sigma are functions of (t, x)."""
    t, x = point
    x = np.asarray(x, float)
    drift = np.asarray(b(t, x), float).reshape(1, -1)
    sig = np.asarray(sigma(t, x), float)
    if sig.ndim != 2:
        raise ValueError("sigma(t,x) must be a (d, q) matrix")
    field = HpinnField(net.config, net.theta, hc)
    _, op = local_operator_batch(field, np.array([float(t)]), x.reshape(1, -1),
                                 drift, sig.reshape(1, *sig.shape))
    return float(op[0])


def hjb_local_operator_batch(field, t, x, eta):
    """dt_u + Lap u - eta |grad u|^2 via the exponential transform.

    Uses psi_v(h) = sum_i exp(-eta u(t + h^2/(2d), x + h e_i)); the result is
    -(exp(eta u)/eta) psi_v''(0).
    """
    if eta == 0.0:
        raise ValueError("eta must be nonzero")
    t = np.asarray(t, float)
    x = np.asarray(x, float)
    M, dim = x.shape
    t1 = np.zeros(M)
    t2 = np.full(M, 1.0 / dim)
    x2 = np.zeros_like(x)
    acc = np.zeros(M)
    val = None
    g0 = None
    for i in range(dim):
        x1 = np.zeros_like(x)
        x1[:, i] = 1.0
        v0, v1, v2 = field.jet_values((t, t1, t2), (x, x1, x2))
        if val is None:
            val = v0
            if np.any(np.abs(eta * v0) > 700.0):
                raise DomainError("exp: eta*u overflows, rescale the problem")
            g0 = np.exp(-eta * val)
        acc += g0 * (eta * eta * v1 * v1 - eta * v2)
    op = -np.exp(eta * val) / eta * acc
    return val, op


def hjb_local_operator(net: DgmNetwork, hc: HardConstraint, point, eta) -> float:
    t, x = _as_batch(point)
    field = HpinnField(net.config, net.theta, hc)
    _, op = hjb_local_operator_batch(field, t, x, eta)
    return float(op[0])


# ---------------------------------------------------------------------------
# scalar reference program (runs on floats, tape Vars or Jet2 numbers)
# ---------------------------------------------------------------------------

def dgm_scalar_program(config: DgmConfig, theta, z):
    """The network recurrence written over generic scalars.

    theta and z are sequences whose entries support +, -, * and tanh (floats,
    tape Vars, Jet2).  Slow; used as the independent reference the batched
    kernels are tested against.
    """
    d, L, n = config.d, config.L, config.n_hid
    dp1 = d + 1
    blocks = {name: (start, shape) for name, shape, start, stop
              in param_blocks(d, L, n)}

    def matvec(name, vec, width):
        start, _ = blocks[name]
        out = []
        for i in range(n):
            row = start + i * width
            acc = theta[row] * vec[0]
            for j in range(1, width):
                acc = acc + theta[row + j] * vec[j]
            out.append(acc)
        return out

    def bias(name, i):
        return theta[blocks[name][0] + i]

    S = [generic_tanh(a + bias("b1", i))
         for i, a in enumerate(matvec("W1", z, dp1))]
    for l in range(L):
        acts = {}
        for g in ("z", "g", "r"):
            uz = matvec(f"U_{g}{l}", z, dp1)
            ws = matvec(f"W_{g}{l}", S, n)
            acts[g] = [generic_tanh(uz[i] + ws[i] + bias(f"b_{g}{l}", i))
                       for i in range(n)]
        SR = [S[i] * acts["r"][i] for i in range(n)]
        uz = matvec(f"U_h{l}", z, dp1)
        ws = matvec(f"W_h{l}", SR, n)
        H = [generic_tanh(uz[i] + ws[i] + bias(f"b_h{l}", i)) for i in range(n)]
        S = [(1.0 - acts["g"][i]) * H[i] + acts["z"][i] * S[i] for i in range(n)]
    start, _ = blocks["w_out"]
    out = theta[blocks["b_out"][0]]
    for i in range(n):
        out = out + theta[start + i] * S[i]
    return out


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path, net: DgmNetwork):
    """JSON header line + raw little-endian float64 parameter bytes."""
    header = {
        "d": net.config.d,
        "L": net.config.L,
        "n_hid": net.config.n_hid,
        "layout_version": LAYOUT_VERSION,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("ascii"))
        fh.write(b"\n")
        fh.write(net.theta.astype("<f8").tobytes())


def load_checkpoint(path) -> DgmNetwork:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("ascii"))
        if header.get("layout_version") != LAYOUT_VERSION:
            raise ValueError(f"unsupported layout_version {header.get('layout_version')}")
        config = DgmConfig(d=header["d"], L=header["L"], n_hid=header["n_hid"])
        raw = fh.read()
    theta = np.frombuffer(raw, dtype="<f8").astype(float)
    if theta.shape[0] != param_count(config):
        raise ValueError("checkpoint payload does not match its header")
    return DgmNetwork(config, theta)
