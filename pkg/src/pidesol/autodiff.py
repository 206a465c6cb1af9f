"""Scalar automatic differentiation: reverse-mode tape and forward second-order jets.

Two independent derivative routes on purpose.  The tape computes d(loss)/d(theta)
by one forward pass that records every primitive and one backward sweep over the
record.  Jets carry (value, first, second derivative) of a univariate quantity
through the same primitives, which is how the directional second derivative
psi''(0) is evaluated without ever forming a Hessian.  The two routes share no
code, so each can serve as an oracle for the other in tests.

JetArray is the batched version of Jet2 (numpy arrays in each slot) used by the
vectorized operator evaluation; it follows the exact same Taylor rules.
"""

import math

import numpy as np


class AdError(RuntimeError):
    """Non-finite intermediate on the tape; carries node index and op kind."""

    def __init__(self, index, op):
        super().__init__(f"non-finite value at tape node {index} (op '{op}')")
        self.index = index
        self.op = op


class DomainError(ValueError):
    """A primitive was evaluated outside its domain (named in the message)."""


# ---------------------------------------------------------------------------
# forward second-order jets (scalar)
# ---------------------------------------------------------------------------

class Jet2:
    """Second-order jet (val, d1, d2) of a scalar function of one variable.

    Arithmetic follows the exact Taylor rules, e.g. for a product
    (fg)'' = f''g + 2f'g' + fg''; there is no truncation error.
    """

    __slots__ = ("val", "d1", "d2")

    def __init__(self, val, d1=0.0, d2=0.0):
        self.val = float(val)
        self.d1 = float(d1)
        self.d2 = float(d2)

    def __repr__(self):
        return f"Jet2({self.val}, {self.d1}, {self.d2})"

    @staticmethod
    def seed(h0):
        """The independent variable h at h0: (h0, 1, 0)."""
        return Jet2(h0, 1.0, 0.0)

    @staticmethod
    def _lift(other):
        if isinstance(other, Jet2):
            return other
        return Jet2(float(other))

    def __add__(self, other):
        o = self._lift(other)
        return Jet2(self.val + o.val, self.d1 + o.d1, self.d2 + o.d2)

    __radd__ = __add__

    def __neg__(self):
        return Jet2(-self.val, -self.d1, -self.d2)

    def __sub__(self, other):
        o = self._lift(other)
        return Jet2(self.val - o.val, self.d1 - o.d1, self.d2 - o.d2)

    def __rsub__(self, other):
        return self._lift(other) - self

    def __mul__(self, other):
        o = self._lift(other)
        return Jet2(
            self.val * o.val,
            self.val * o.d1 + self.d1 * o.val,
            self.val * o.d2 + 2.0 * self.d1 * o.d1 + self.d2 * o.val,
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = self._lift(other)
        if o.val == 0.0:
            raise DomainError("div: division by a jet with zero value")
        f0 = self.val / o.val
        f1 = (self.d1 - f0 * o.d1) / o.val
        f2 = (self.d2 - 2.0 * f1 * o.d1 - f0 * o.d2) / o.val
        return Jet2(f0, f1, f2)

    def __rtruediv__(self, other):
        return self._lift(other) / self

    def __pow__(self, p):
        p = float(p)
        if p == int(p):
            k = int(p)
            if self.val == 0.0 and k < 2:
                if k == 0:
                    return Jet2(1.0)
                if k == 1:
                    return Jet2(self.val, self.d1, self.d2)
                raise DomainError("pow: negative power of zero")
            try:
                y0 = self.val ** k
                y1c = k * self.val ** (k - 1)
                y2c = k * (k - 1) * self.val ** (k - 2) if k >= 2 or self.val != 0.0 else 0.0
            except OverflowError:
                y0 = y1c = y2c = math.inf
        else:
            if self.val <= 0.0:
                raise DomainError("pow: non-integer power of a nonpositive value")
            try:
                y0 = self.val ** p
                y1c = p * self.val ** (p - 1.0)
                y2c = p * (p - 1.0) * self.val ** (p - 2.0)
            except OverflowError:
                y0 = y1c = y2c = math.inf
        return Jet2(y0, y1c * self.d1, y1c * self.d2 + y2c * self.d1 * self.d1)

    def exp(self):
        # keep inf semantics in line with the numpy-backed JetArray
        try:
            e = math.exp(self.val)
        except OverflowError:
            e = math.inf
        return Jet2(e, e * self.d1, e * (self.d2 + self.d1 * self.d1))

    def log(self):
        if self.val <= 0.0:
            raise DomainError("log: nonpositive argument")
        return Jet2(
            math.log(self.val),
            self.d1 / self.val,
            (self.d2 - self.d1 * self.d1 / self.val) / self.val,
        )

    def sqrt(self):
        if self.val <= 0.0:
            raise DomainError("sqrt: nonpositive argument")
        r = math.sqrt(self.val)
        y1 = self.d1 / (2.0 * r)
        return Jet2(r, y1, (self.d2 - 2.0 * y1 * y1) / (2.0 * r))

    def tanh(self):
        t = math.tanh(self.val)
        s = 1.0 - t * t
        return Jet2(t, s * self.d1, s * self.d2 - 2.0 * t * s * self.d1 * self.d1)

    def sin(self):
        s, c = math.sin(self.val), math.cos(self.val)
        return Jet2(s, c * self.d1, c * self.d2 - s * self.d1 * self.d1)

    def cos(self):
        s, c = math.sin(self.val), math.cos(self.val)
        return Jet2(c, -s * self.d1, -s * self.d2 - c * self.d1 * self.d1)

    def maximum(self, const):
        # max with a constant; at a tie the constant branch (zero derivative)
        # is taken, the kink itself has measure zero
        c = float(const)
        if self.val > c:
            return Jet2(self.val, self.d1, self.d2)
        return Jet2(c)


def jet_eval(f, h0):
    """Evaluate (f(h0), f'(h0), f''(h0)) exactly by running f on a seeded jet."""
    out = f(Jet2.seed(h0))
    if not isinstance(out, Jet2):
        out = Jet2(out)
    return out


# ---------------------------------------------------------------------------
# forward second-order jets (batched over numpy arrays)
# ---------------------------------------------------------------------------

class JetArray:
    """Batched Jet2: three equally-shaped arrays (val, d1, d2).

    Same Taylor rules as Jet2, broadcast over numpy arrays.  Used to push
    hard-constraint functions, terminal conditions and closed-form solutions
    through the directional evaluation alongside the network kernels.
    """

    __slots__ = ("val", "d1", "d2")

    def __init__(self, val, d1=None, d2=None):
        self.val = np.asarray(val, dtype=float)
        self.d1 = np.zeros_like(self.val) if d1 is None else np.asarray(d1, float)
        self.d2 = np.zeros_like(self.val) if d2 is None else np.asarray(d2, float)

    def _lift(self, other):
        if isinstance(other, JetArray):
            return other
        other = np.asarray(other, float)
        return JetArray(other, np.zeros_like(other), np.zeros_like(other))

    @property
    def shape(self):
        return self.val.shape

    def __getitem__(self, key):
        return JetArray(self.val[key], self.d1[key], self.d2[key])

    def sum(self, axis=None):
        return JetArray(self.val.sum(axis), self.d1.sum(axis), self.d2.sum(axis))

    def __add__(self, other):
        o = self._lift(other)
        return JetArray(self.val + o.val, self.d1 + o.d1, self.d2 + o.d2)

    __radd__ = __add__

    def __neg__(self):
        return JetArray(-self.val, -self.d1, -self.d2)

    def __sub__(self, other):
        o = self._lift(other)
        return JetArray(self.val - o.val, self.d1 - o.d1, self.d2 - o.d2)

    def __rsub__(self, other):
        return self._lift(other) - self

    def __mul__(self, other):
        o = self._lift(other)
        return JetArray(
            self.val * o.val,
            self.val * o.d1 + self.d1 * o.val,
            self.val * o.d2 + 2.0 * self.d1 * o.d1 + self.d2 * o.val,
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = self._lift(other)
        if np.any(o.val == 0.0):
            raise DomainError("div: division by a jet with zero value")
        f0 = self.val / o.val
        f1 = (self.d1 - f0 * o.d1) / o.val
        f2 = (self.d2 - 2.0 * f1 * o.d1 - f0 * o.d2) / o.val
        return JetArray(f0, f1, f2)

    def __rtruediv__(self, other):
        return self._lift(other) / self

    def __pow__(self, p):
        p = float(p)
        if p == 2.0:
            return self * self
        if p != int(p) and np.any(self.val <= 0.0):
            raise DomainError("pow: non-integer power of a nonpositive value")
        y0 = self.val ** p
        y1c = p * self.val ** (p - 1.0)
        y2c = p * (p - 1.0) * self.val ** (p - 2.0)
        return JetArray(y0, y1c * self.d1, y1c * self.d2 + y2c * self.d1 * self.d1)

    def exp(self):
        e = np.exp(self.val)
        return JetArray(e, e * self.d1, e * (self.d2 + self.d1 * self.d1))

    def log(self):
        if np.any(self.val <= 0.0):
            raise DomainError("log: nonpositive argument")
        return JetArray(
            np.log(self.val),
            self.d1 / self.val,
            (self.d2 - self.d1 * self.d1 / self.val) / self.val,
        )

    def sqrt(self):
        if np.any(self.val <= 0.0):
            raise DomainError("sqrt: nonpositive argument")
        r = np.sqrt(self.val)
        y1 = self.d1 / (2.0 * r)
        return JetArray(r, y1, (self.d2 - 2.0 * y1 * y1) / (2.0 * r))

    def tanh(self):
        t = np.tanh(self.val)
        s = 1.0 - t * t
        return JetArray(t, s * self.d1, s * self.d2 - 2.0 * t * s * self.d1 * self.d1)

    def sin(self):
        s, c = np.sin(self.val), np.cos(self.val)
        return JetArray(s, c * self.d1, c * self.d2 - s * self.d1 * self.d1)

    def cos(self):
        s, c = np.sin(self.val), np.cos(self.val)
        return JetArray(c, -s * self.d1, -s * self.d2 - c * self.d1 * self.d1)

    def maximum(self, const):
        keep = self.val > const
        return JetArray(
            np.maximum(self.val, const),
            np.where(keep, self.d1, 0.0),
            np.where(keep, self.d2, 0.0),
        )


# generic math that works on floats, numpy arrays, Jet2, JetArray and Var
def exp(v):
    return v.exp() if hasattr(v, "exp") else np.exp(v)


def log(v):
    return v.log() if hasattr(v, "log") else np.log(v)


def sqrt(v):
    return v.sqrt() if hasattr(v, "sqrt") else np.sqrt(v)


def tanh(v):
    return v.tanh() if hasattr(v, "tanh") else np.tanh(v)


def sin(v):
    return v.sin() if hasattr(v, "sin") else np.sin(v)


def cos(v):
    return v.cos() if hasattr(v, "cos") else np.cos(v)


def maximum(v, const):
    return v.maximum(const) if hasattr(v, "maximum") else np.maximum(v, const)


# ---------------------------------------------------------------------------
# reverse mode on an explicit tape
# ---------------------------------------------------------------------------

class Tape:
    """Append-only record of primitive evaluations.

    Each node stores its op kind and (parent index, local partial) pairs.
    Nodes are appended in evaluation order, so the list itself is a
    topological order and the backward sweep touches each node exactly once.
    """

    def __init__(self):
        self.ops = []
        self.edges = []

    def var(self, value):
        value = float(value)
        return Var(self, self._push("input", value, ()), value)

    def _push(self, op, value, edges):
        if not math.isfinite(value):
            raise AdError(len(self.ops), op)
        self.ops.append(op)
        self.edges.append(edges)
        return len(self.ops) - 1

    def backward(self, out):
        """Adjoints of every node with respect to the output node."""
        adj = np.zeros(len(self.ops))
        adj[out.idx] = 1.0
        for i in range(out.idx, -1, -1):
            a = adj[i]
            if a == 0.0:
                continue
            for parent, partial in self.edges[i]:
                adj[parent] += a * partial
        return adj


class Var:
    __slots__ = ("tape", "idx", "val")

    def __init__(self, tape, idx, val):
        self.tape = tape
        self.idx = idx
        self.val = val

    def __repr__(self):
        return f"Var({self.val})"

    def _new(self, op, value, edges):
        return Var(self.tape, self.tape._push(op, value, edges), value)

    def __add__(self, other):
        if isinstance(other, Var):
            return self._new("add", self.val + other.val,
                             ((self.idx, 1.0), (other.idx, 1.0)))
        return self._new("add", self.val + float(other), ((self.idx, 1.0),))

    __radd__ = __add__

    def __neg__(self):
        return self._new("neg", -self.val, ((self.idx, -1.0),))

    def __sub__(self, other):
        if isinstance(other, Var):
            return self._new("sub", self.val - other.val,
                             ((self.idx, 1.0), (other.idx, -1.0)))
        return self._new("sub", self.val - float(other), ((self.idx, 1.0),))

    def __rsub__(self, other):
        return self._new("sub", float(other) - self.val, ((self.idx, -1.0),))

    def __mul__(self, other):
        if isinstance(other, Var):
            return self._new("mul", self.val * other.val,
                             ((self.idx, other.val), (other.idx, self.val)))
        c = float(other)
        return self._new("mul", self.val * c, ((self.idx, c),))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Var):
            if other.val == 0.0:
                raise DomainError("div: division by zero value")
            inv = 1.0 / other.val
            return self._new("div", self.val * inv,
                             ((self.idx, inv), (other.idx, -self.val * inv * inv)))
        c = float(other)
        if c == 0.0:
            raise DomainError("div: division by zero value")
        return self._new("div", self.val / c, ((self.idx, 1.0 / c),))

    def __rtruediv__(self, other):
        if self.val == 0.0:
            raise DomainError("div: division by zero value")
        c = float(other)
        inv = 1.0 / self.val
        return self._new("div", c * inv, ((self.idx, -c * inv * inv),))

    def __pow__(self, p):
        p = float(p)
        if p != int(p) and self.val <= 0.0:
            raise DomainError("pow: non-integer power of a nonpositive value")
        try:
            y = self.val ** p
            dp = p * self.val ** (p - 1.0)
        except OverflowError:
            y = math.inf
            dp = math.inf
        return self._new("pow", y, ((self.idx, dp),))

    def exp(self):
        # math.exp raises instead of returning inf; fold overflow into the
        # tape's non-finite check so the node index is reported
        try:
            e = math.exp(self.val)
        except OverflowError:
            e = math.inf
        return self._new("exp", e, ((self.idx, e),))

    def log(self):
        if self.val <= 0.0:
            raise DomainError("log: nonpositive argument")
        return self._new("log", math.log(self.val), ((self.idx, 1.0 / self.val),))

    def sqrt(self):
        if self.val <= 0.0:
            raise DomainError("sqrt: nonpositive argument")
        r = math.sqrt(self.val)
        return self._new("sqrt", r, ((self.idx, 0.5 / r),))

    def tanh(self):
        t = math.tanh(self.val)
        return self._new("tanh", t, ((self.idx, 1.0 - t * t),))

    def sin(self):
        return self._new("sin", math.sin(self.val), ((self.idx, math.cos(self.val)),))

    def cos(self):
        return self._new("cos", math.cos(self.val), ((self.idx, -math.sin(self.val)),))

    def maximum(self, const):
        c = float(const)
        if self.val > c:
            return self._new("max", self.val, ((self.idx, 1.0),))
        return self._new("max", c, ())


def grad_params(loss, theta):
    """Gradient of a scalar tape program with respect to a flat parameter vector.

    loss receives a list of Var leaves (one per entry of theta) and must return
    a single Var.  One forward pass builds the tape, one backward sweep
    accumulates the adjoints.
    """
    tape = Tape()
    leaves = [tape.var(v) for v in np.asarray(theta, float)]
    out = loss(leaves)
    if not isinstance(out, Var):
        raise TypeError("loss must return a Var built from its inputs")
    adj = tape.backward(out)
    return np.array([adj[leaf.idx] for leaf in leaves])


def grad_check(loss, theta, step):
    """Max relative disagreement between the tape gradient and central differences.

    Returns max_i |analytic_i - fd_i| / (|analytic_i| + step).  The difference
    quotients run the loss on plain floats when it accepts them and on a fresh
    tape otherwise.
    """
    if step <= 0.0:
        raise ValueError("step must be positive")
    theta = np.asarray(theta, float)
    analytic = grad_params(loss, theta)
    worst = 0.0
    for i in range(len(theta)):
        hi = theta.copy()
        lo = theta.copy()
        hi[i] += step
        lo[i] -= step
        fd = (_loss_float(loss, hi) - _loss_float(loss, lo)) / (2.0 * step)
        err = abs(analytic[i] - fd) / (abs(analytic[i]) + step)
        worst = max(worst, err)
    return worst


def _loss_float(loss, theta):
    # plain floats when the loss allows it (cheapest by far for the finite
    # difference loop), a throwaway tape when it calls Var methods
    try:
        out = loss(list(map(float, theta)))
    except (AttributeError, TypeError):
        tape = Tape()
        out = loss([tape.var(v) for v in theta])
    return out.val if isinstance(out, Var) else float(out)
