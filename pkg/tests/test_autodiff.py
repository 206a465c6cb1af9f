import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pidesol.autodiff import (
    AdError,
    DomainError,
    Jet2,
    JetArray,
    Tape,
    grad_check,
    grad_params,
    jet_eval,
)

finite = st.floats(min_value=-10, max_value=10, allow_nan=False)


def test_jet_seed():
    j = Jet2.seed(1.7)
    assert (j.val, j.d1, j.d2) == (1.7, 1.0, 0.0)


def test_jet_square_at_zero():
    j = jet_eval(lambda h: h * h, 0.0)
    assert (j.val, j.d1, j.d2) == (0.0, 0.0, 2.0)


def test_jet_sin_at_zero():
    j = jet_eval(lambda h: h.sin(), 0.0)
    np.testing.assert_allclose([j.val, j.d1, j.d2], [0.0, 1.0, 0.0], atol=1e-15)


def test_jet_exp_chain():
    j = jet_eval(lambda h: (2.0 * h).exp(), 0.0)
    np.testing.assert_allclose([j.val, j.d1, j.d2], [1.0, 2.0, 4.0], rtol=1e-15)


@given(finite, finite, finite, finite, finite, finite)
def test_jet_product_rule(a0, a1, a2, b0, b1, b2):
    a = Jet2(a0, a1, a2)
    b = Jet2(b0, b1, b2)
    c = a * b
    assert c.val == a0 * b0
    assert c.d1 == a0 * b1 + a1 * b0
    # float addition is not associative; spell the three terms in the
    # implementation's order so the equality can stay exact
    assert c.d2 == a0 * b2 + 2.0 * a1 * b1 + a2 * b0


@given(finite, st.floats(min_value=0.1, max_value=10), finite, finite)
def test_jet_div_mul_roundtrip(a0, b0, a1, b1):
    a = Jet2(a0, a1, 0.3)
    b = Jet2(b0, b1, -0.2)
    q = a / b
    c = q * b
    # the quotient jet can be orders of magnitude larger than a (b1/b0 big),
    # and the product rule cancels those terms back down; roundoff survives
    # at the scale of the intermediates, so the tolerance must carry it
    amp = (abs(q.val) + abs(q.d1) + abs(q.d2)) * (abs(b.val) + abs(b.d1) + abs(b.d2))
    tol = 16.0 * np.finfo(float).eps * max(1.0, amp)
    np.testing.assert_allclose([c.val, c.d1, c.d2], [a.val, a.d1, a.d2],
                               rtol=1e-12, atol=tol)


def test_jet_domain_errors():
    with pytest.raises(DomainError, match="div"):
        Jet2(1.0, 0.0, 0.0) / Jet2(0.0, 1.0, 0.0)
    with pytest.raises(DomainError, match="log"):
        Jet2(-1.0, 0.0, 0.0).log()
    with pytest.raises(DomainError, match="sqrt"):
        Jet2(-4.0, 0.0, 0.0).sqrt()


def test_jet_transcendental_fd():
    # second derivative of a messy composition vs central differences
    def f(h):
        return (h.sin() + (0.3 * h + 1.2).exp()).tanh() * (h * h + 0.5).sqrt()

    j = jet_eval(f, 0.4)
    eps = 1e-5

    def fv(h):
        return f(Jet2(h, 0.0, 0.0)).val

    d1 = (fv(0.4 + eps) - fv(0.4 - eps)) / (2 * eps)
    d2 = (fv(0.4 + eps) - 2 * fv(0.4) + fv(0.4 - eps)) / eps ** 2
    np.testing.assert_allclose(j.d1, d1, rtol=1e-8)
    np.testing.assert_allclose(j.d2, d2, rtol=1e-4)


def test_jet_maximum_tie_takes_constant():
    # at the kink the constant branch wins: derivatives vanish
    j = Jet2(2.0, 5.0, 7.0).maximum(2.0)
    assert (j.val, j.d1, j.d2) == (2.0, 0.0, 0.0)
    j = Jet2(3.0, 5.0, 7.0).maximum(2.0)
    assert (j.val, j.d1, j.d2) == (3.0, 5.0, 7.0)


def test_jetarray_matches_scalar(rng):
    a = rng.standard_normal((4, 3))
    b = rng.standard_normal((4, 3))
    c = rng.standard_normal((4, 3))
    ja = JetArray(a, b, c)
    out = (ja * ja).sum(axis=1)
    for i in range(4):
        acc = Jet2(0.0, 0.0, 0.0)
        for j in range(3):
            s = Jet2(a[i, j], b[i, j], c[i, j])
            acc = acc + s * s
        np.testing.assert_allclose([out.val[i], out.d1[i], out.d2[i]],
                                   [acc.val, acc.d1, acc.d2], rtol=1e-14)


def test_tape_quadratic():
    theta = np.array([3.0])
    g = grad_params(lambda tv: tv[0] * tv[0], theta)
    np.testing.assert_allclose(g, [6.0])


def test_tape_sum_is_ones(rng):
    theta = rng.standard_normal(7)

    def loss(tv):
        acc = tv[0]
        for v in tv[1:]:
            acc = acc + v
        return acc

    np.testing.assert_allclose(grad_params(loss, theta), np.ones(7))


def test_tape_linearity(rng):
    theta = rng.standard_normal(5)

    def f(tv):
        return tv[0] * tv[1] + tv[2].tanh()

    def g(tv):
        return tv[3].exp() * tv[4]

    gf = grad_params(f, theta)
    gg = grad_params(g, theta)
    gc = grad_params(lambda tv: 2.5 * f(tv) + (-1.25) * g(tv), theta)
    np.testing.assert_allclose(gc, 2.5 * gf - 1.25 * gg, rtol=1e-12, atol=1e-12)


def test_tape_deterministic(rng):
    theta = rng.standard_normal(6)

    def loss(tv):
        acc = tv[0].sin()
        for v in tv[1:]:
            acc = acc * v.tanh() + v
        return acc

    g1 = grad_params(loss, theta)
    g2 = grad_params(loss, theta)
    assert g1.tobytes() == g2.tobytes()


def test_tape_nonfinite_reports_node():
    theta = np.array([800.0])
    with pytest.raises(AdError) as exc:
        grad_params(lambda tv: tv[0].exp() * tv[0].exp(), theta)
    assert exc.value.op in ("exp", "mul")
    assert exc.value.index >= 0


def test_grad_check_quadratic():
    theta = np.array([1.5, -2.0])
    err = grad_check(lambda tv: tv[0] * tv[0] + 3.0 * tv[1] * tv[1], theta, 1e-5)
    assert err <= 1e-8


def test_grad_check_constant():
    theta = np.array([1.0, 2.0])
    err = grad_check(lambda tv: tv[0] * 0.0 + 7.0, theta, 1e-5)
    assert err == 0.0


@settings(deadline=None, max_examples=25)
@given(st.integers(min_value=0, max_value=2 ** 31 - 1))
def test_grad_check_random_programs(seed):
    r = np.random.default_rng(seed)
    theta = r.standard_normal(4)

    def loss(tv):
        return (tv[0] * tv[1]).tanh() + (0.1 * tv[2] * tv[2]).exp() * tv[3]

    assert grad_check(loss, theta, 1e-5) <= 1e-6
