"""Flat parameter layout for the gated DGM network.

Every parameter of the network lives in one contiguous float64 vector so
that optimizers, checkpoints and the compiled kernels all agree on where
each matrix sits.  The order is fixed:

    W1 (n_hid, d+1) row-major, b1 (n_hid,)
    for each layer l = 0..L-1, for each gate in (z, g, r, h):
        U (n_hid, d+1), W (n_hid, n_hid), b (n_hid,)
    w_out (n_hid,), b_out (1,)

The compiled extension re-derives the same offsets arithmetically; the
cross-backend tests guard against drift.
"""

from types import SimpleNamespace

GATES = ("z", "g", "r", "h")
LAYOUT_VERSION = 1


def param_count(d: int, L: int, n_hid: int) -> int:
    """Total number of parameters: n_hid(d+2) + 4L(n_hid(d+1)+n_hid^2+n_hid) + n_hid + 1."""
    return n_hid * (d + 2) + 4 * L * (n_hid * (d + 1) + n_hid * n_hid + n_hid) + n_hid + 1


def param_blocks(d, L, n_hid):
    """Yield (name, shape, start, stop) for every parameter block in layout order."""
    dp1 = d + 1
    blocks = [("W1", (n_hid, dp1)), ("b1", (n_hid,))]
    for layer in range(L):
        for gate in GATES:
            blocks.append((f"U_{gate}{layer}", (n_hid, dp1)))
            blocks.append((f"W_{gate}{layer}", (n_hid, n_hid)))
            blocks.append((f"b_{gate}{layer}", (n_hid,)))
    blocks.append(("w_out", (n_hid,)))
    blocks.append(("b_out", (1,)))
    start = 0
    for name, shape in blocks:
        size = 1
        for s in shape:
            size *= s
        yield name, shape, start, start + size
        start += size


def param_views(theta, d, L, n_hid):
    """Zero-copy views into a flat parameter (or gradient) vector.

    Returns a namespace with W1, b1, layers (list over layers of 4 (U, W, b)
    triples in z, g, r, h order), w_out and b_out.
    """
    if theta.shape != (param_count(d, L, n_hid),):
        raise ValueError(
            f"parameter vector has shape {theta.shape}, "
            f"layout needs ({param_count(d, L, n_hid)},)"
        )
    raw = {}
    for name, shape, start, stop in param_blocks(d, L, n_hid):
        raw[name] = theta[start:stop].reshape(shape)
    layers = []
    for layer in range(L):
        layers.append(
            tuple(
                (raw[f"U_{g}{layer}"], raw[f"W_{g}{layer}"], raw[f"b_{g}{layer}"])
                for g in GATES
            )
        )
    return SimpleNamespace(
        W1=raw["W1"], b1=raw["b1"], layers=layers,
        w_out=raw["w_out"], b_out=raw["b_out"],
    )
