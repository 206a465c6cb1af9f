"""Pure-numpy DGM kernels: batched forward, backward and second-order jet forward.

This is the fallback backend and the ground truth the compiled extension is
tested against.  All arrays are float64 and C-contiguous.  The parameter
layout comes from pidesol.layout.

Network recurrence, for input row z = (t, x):

    S^1      = tanh(W1 z + b1)
    Z^l      = tanh(U_z z + W_z S^l + b_z)
    G^l      = tanh(U_g z + W_g S^l + b_g)
    R^l      = tanh(U_r z + W_r S^l + b_r)
    H^l      = tanh(U_h z + W_h (S^l * R^l) + b_h)
    S^{l+1}  = (1 - G^l) * H^l + Z^l * S^l
    out      = w_out . S^{L+1} + b_out
"""

import numpy as np

from ..layout import param_views


def forward(theta, d, L, n_hid, z, need_cache=False):
    """Evaluate the network on a batch z of shape (M, d+1).

    Returns (values (M,), cache).  The cache holds the post-activation states
    S (L+1, M, n_hid) and the gate activations (L, 4, M, n_hid) in Z, G, R, H
    order, as consumed by backward().
    """
    V = param_views(theta, d, L, n_hid)
    M = z.shape[0]
    S = np.tanh(z @ V.W1.T + V.b1)
    Ss = np.empty((L + 1, M, n_hid))
    gates = np.empty((L, 4, M, n_hid))
    Ss[0] = S
    for l, ((Uz, Wz, bz), (Ug, Wg, bg), (Ur, Wr, br), (Uh, Wh, bh)) in enumerate(V.layers):
        Z = np.tanh(z @ Uz.T + S @ Wz.T + bz)
        G = np.tanh(z @ Ug.T + S @ Wg.T + bg)
        R = np.tanh(z @ Ur.T + S @ Wr.T + br)
        H = np.tanh(z @ Uh.T + (S * R) @ Wh.T + bh)
        gates[l, 0] = Z
        gates[l, 1] = G
        gates[l, 2] = R
        gates[l, 3] = H
        S = (1.0 - G) * H + Z * S
        Ss[l + 1] = S
    v = S @ V.w_out + V.b_out[0]
    return v, (Ss, gates) if need_cache else None


def backward(theta, d, L, n_hid, z, cache, w):
    """Accumulate grad = sum_m w[m] * d out_m / d theta from a forward cache."""
    V = param_views(theta, d, L, n_hid)
    Ss, gates = cache
    grad = np.zeros_like(theta)
    Gv = param_views(grad, d, L, n_hid)

    S_last = Ss[L]
    Gv.w_out += S_last.T @ w
    Gv.b_out += w.sum()
    dS = w[:, None] * V.w_out[None, :]

    for l in range(L - 1, -1, -1):
        S_in = Ss[l]
        Z, G, R, H = gates[l]
        (Uz, Wz, bz), (Ug, Wg, bg), (Ur, Wr, br), (Uh, Wh, bh) = V.layers[l]
        (GUz, GWz, Gbz), (GUg, GWg, Gbg), (GUr, GWr, Gbr), (GUh, GWh, Gbh) = Gv.layers[l]

        dS_in = dS * Z

        dah = dS * (1.0 - G) * (1.0 - H * H)
        GUh += dah.T @ z
        GWh += dah.T @ (S_in * R)
        Gbh += dah.sum(axis=0)
        dSR = dah @ Wh
        dS_in += dSR * R

        dar = dSR * S_in * (1.0 - R * R)
        GUr += dar.T @ z
        GWr += dar.T @ S_in
        Gbr += dar.sum(axis=0)
        dS_in += dar @ Wr

        dag = -dS * H * (1.0 - G * G)
        GUg += dag.T @ z
        GWg += dag.T @ S_in
        Gbg += dag.sum(axis=0)
        dS_in += dag @ Wg

        daz = dS * S_in * (1.0 - Z * Z)
        GUz += daz.T @ z
        GWz += daz.T @ S_in
        Gbz += daz.sum(axis=0)
        dS_in += daz @ Wz

        dS = dS_in

    S1 = Ss[0]
    da1 = dS * (1.0 - S1 * S1)
    Gv.W1 += da1.T @ z
    Gv.b1 += da1.sum(axis=0)
    return grad


def _tanh3(a0, a1, a2):
    y0 = np.tanh(a0)
    s = 1.0 - y0 * y0
    return y0, s * a1, s * a2 - 2.0 * y0 * s * a1 * a1


def _mul3(u, v):
    return (
        u[0] * v[0],
        u[0] * v[1] + u[1] * v[0],
        u[0] * v[2] + 2.0 * u[1] * v[1] + u[2] * v[0],
    )


def jet(theta, d, L, n_hid, z0, z1, z2):
    """Forward pass on second-order input jets.

    z0, z1, z2 are (M, d+1) arrays carrying value, first and second derivative
    of the input row with respect to one scalar.  Returns the jet of the
    network output as three (M,) arrays.  Parameters are constants.
    """
    V = param_views(theta, d, L, n_hid)

    def affine(U, b, s=None, W=None):
        a0 = z0 @ U.T + b
        a1 = z1 @ U.T
        a2 = z2 @ U.T
        if s is not None:
            a0 += s[0] @ W.T
            a1 += s[1] @ W.T
            a2 += s[2] @ W.T
        return a0, a1, a2

    S = _tanh3(*affine(V.W1, V.b1))
    for (Uz, Wz, bz), (Ug, Wg, bg), (Ur, Wr, br), (Uh, Wh, bh) in V.layers:
        Z = _tanh3(*affine(Uz, bz, S, Wz))
        G = _tanh3(*affine(Ug, bg, S, Wg))
        R = _tanh3(*affine(Ur, br, S, Wr))
        SR = _mul3(S, R)
        H = _tanh3(*affine(Uh, bh, SR, Wh))
        one_minus_G = (1.0 - G[0], -G[1], -G[2])
        gh = _mul3(one_minus_G, H)
        zs = _mul3(Z, S)
        S = (gh[0] + zs[0], gh[1] + zs[1], gh[2] + zs[2])
    v0 = S[0] @ V.w_out + V.b_out[0]
    v1 = S[1] @ V.w_out
    v2 = S[2] @ V.w_out
    return v0, v1, v2
