"""One-residual-block 1D conv net over a fixed-length measurement window.

    h0 = relu(conv0(x))                 # C  -> W channels, k=3, same pad
    r  = conv2(relu(conv1(h0)))         # W -> W -> W
    h1 = relu(h0 + r)                   # the residual block
    g  = mean_t h1                      # global average over the window
    mean = head_mean @ g + b            # regression head
    xi   = head_xi @ g + b              # optional log-std head

Forward and reverse passes are both explicit so gradients can be checked
against central differences.
"""

from __future__ import annotations

import numpy as np

from .bundle import ShapeError, WeightBundle


def _conv_same(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """k=3 same-padded conv; returns output and the padded-window stack."""
    c, t = x.shape
    xp = np.zeros((c, t + 2))
    xp[:, 1:-1] = x
    # windows[c, j, t] = xp[c, t + j]
    windows = np.stack([xp[:, j : j + t] for j in range(3)], axis=1)
    y = np.tensordot(w, windows, axes=([1, 2], [0, 1])) + b[:, None]
    return y, windows


def _conv_backward(dy: np.ndarray, windows: np.ndarray, w: np.ndarray):
    """Gradients of a same-padded k=3 conv wrt weights, bias, and input."""
    t = dy.shape[1]
    dw = np.tensordot(dy, windows, axes=([1], [2]))  # (W, C, 3)
    db = dy.sum(axis=1)
    c = windows.shape[0]
    dxp = np.zeros((c, t + 2))
    for j in range(3):
        dxp[:, j : j + t] += w[:, :, j].T @ dy
    return dw, db, dxp[:, 1:-1]


def _check_input(bundle: WeightBundle, window: np.ndarray) -> np.ndarray:
    window = np.asarray(window, dtype=float)
    c, t = bundle.dims["in_channels"], bundle.dims["window"]
    if window.shape != (c, t):
        raise ShapeError(f"window shape {window.shape}, expected ({c}, {t})")
    return window


def resnet1d_forward(bundle: WeightBundle, window: np.ndarray, with_cache: bool = False):
    """Run the net on a (channels x time) window.

    Returns (mean, xi); xi is None without a covariance head.  Deterministic:
    same bundle + window always give the same output.
    """
    if bundle.arch != "resnet1d":
        raise ShapeError(f"expected resnet1d bundle, got {bundle.arch!r}")
    x = _check_input(bundle, window)
    p = bundle.params
    z0, win0 = _conv_same(x, p["conv0.w"], p["conv0.b"])
    h0 = np.maximum(z0, 0.0)
    z1, win1 = _conv_same(h0, p["conv1.w"], p["conv1.b"])
    a1 = np.maximum(z1, 0.0)
    r, win2 = _conv_same(a1, p["conv2.w"], p["conv2.b"])
    z2 = h0 + r
    h1 = np.maximum(z2, 0.0)
    g = h1.mean(axis=1)
    mean = p["head_mean.w"] @ g + p["head_mean.b"]
    xi = p["head_xi.w"] @ g + p["head_xi.b"] if "head_xi.w" in p else None
    if not with_cache:
        return mean, xi
    cache = {"z0": z0, "win0": win0, "h0": h0, "z1": z1, "win1": win1,
             "a1": a1, "win2": win2, "z2": z2, "h1": h1, "g": g}
    return mean, xi, cache


def resnet1d_backward(bundle: WeightBundle, cache: dict, d_mean: np.ndarray, d_xi=None):
    """Reverse pass: parameter gradients given output gradients."""
    p = bundle.params
    grads = {}
    g = cache["g"]
    grads["head_mean.w"] = np.outer(d_mean, g)
    grads["head_mean.b"] = np.asarray(d_mean, dtype=float).copy()
    dg = p["head_mean.w"].T @ d_mean
    if "head_xi.w" in p:
        if d_xi is None:
            d_xi = np.zeros(bundle.dims["out"])
        grads["head_xi.w"] = np.outer(d_xi, g)
        grads["head_xi.b"] = np.asarray(d_xi, dtype=float).copy()
        dg = dg + p["head_xi.w"].T @ d_xi
    t = cache["h1"].shape[1]
    dh1 = np.repeat(dg[:, None], t, axis=1) / t
    dz2 = dh1 * (cache["z2"] > 0)
    # residual block: z2 = h0 + conv2(relu(conv1(h0)))
    dr = dz2
    dw2, db2, da1 = _conv_backward(dr, cache["win2"], p["conv2.w"])
    dz1 = da1 * (cache["z1"] > 0)
    dw1, db1, dh0_inner = _conv_backward(dz1, cache["win1"], p["conv1.w"])
    dh0 = dz2 + dh0_inner  # skip path plus block path
    dz0 = dh0 * (cache["z0"] > 0)
    dw0, db0, _ = _conv_backward(dz0, cache["win0"], p["conv0.w"])
    grads.update({
        "conv0.w": dw0, "conv0.b": db0,
        "conv1.w": dw1, "conv1.b": db1,
        "conv2.w": dw2, "conv2.b": db2,
    })
    return grads
