"""Stacked GRU with a per-step linear head, forward and BPTT.

Gate layout follows the common (r, z, n) packing in w_ih/w_hh rows:

    r = sigmoid(W_ir x + b_ir + W_hr h + b_hr)
    z = sigmoid(W_iz x + b_iz + W_hz h + b_hz)
    n = tanh(W_in x + b_in + r * (W_hn h + b_hn))
    h' = (1 - z) * n + z * h

Initial hidden state is zero for every layer.
"""

from __future__ import annotations

import numpy as np

from .bundle import ShapeError, WeightBundle


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def zero_state(bundle: WeightBundle) -> list[np.ndarray]:
    """Fresh all-zero hidden state for every layer."""
    return [np.zeros(h) for h in bundle.dims["hidden"]]


def gru_step(bundle: WeightBundle, x: np.ndarray, state: list[np.ndarray]):
    """Advance the stack one step; returns (output, new_state).

    Equivalent to one row of gru_forward when the state is carried along.
    """
    p = bundle.params
    hidden = list(bundle.dims["hidden"])
    x = np.asarray(x, dtype=float)
    if x.shape != (bundle.dims["in_dim"],):
        raise ShapeError(f"step input shape {x.shape}, expected ({bundle.dims['in_dim']},)")
    new_state = []
    for layer, hsz in enumerate(hidden):
        gi = p[f"gru{layer}.w_ih"] @ x + p[f"gru{layer}.b_ih"]
        gh = p[f"gru{layer}.w_hh"] @ state[layer] + p[f"gru{layer}.b_hh"]
        r = _sigmoid(gi[:hsz] + gh[:hsz])
        z = _sigmoid(gi[hsz : 2 * hsz] + gh[hsz : 2 * hsz])
        n = np.tanh(gi[2 * hsz :] + r * gh[2 * hsz :])
        h_new = (1.0 - z) * n + z * state[layer]
        new_state.append(h_new)
        x = h_new
    return p["head.w"] @ x + p["head.b"], new_state


def gru_forward(bundle: WeightBundle, seq: np.ndarray, with_cache: bool = False):
    """Run the stack over a (steps x in_dim) sequence -> (steps x out_dim)."""
    if bundle.arch != "gru_vp":
        raise ShapeError(f"expected gru_vp bundle, got {bundle.arch!r}")
    seq = np.asarray(seq, dtype=float)
    if seq.ndim != 2 or seq.shape[1] != bundle.dims["in_dim"]:
        raise ShapeError(f"sequence shape {seq.shape}, expected (steps, {bundle.dims['in_dim']})")
    p = bundle.params
    hidden = list(bundle.dims["hidden"])
    n_layers = len(hidden)
    steps = seq.shape[0]

    h = [np.zeros(hsz) for hsz in hidden]
    caches = [] if with_cache else None
    feats = np.zeros((steps, hidden[-1]))
    for t in range(steps):
        x = seq[t]
        step_cache = [] if with_cache else None
        for layer in range(n_layers):
            hsz = hidden[layer]
            w_ih, w_hh = p[f"gru{layer}.w_ih"], p[f"gru{layer}.w_hh"]
            b_ih, b_hh = p[f"gru{layer}.b_ih"], p[f"gru{layer}.b_hh"]
            gi = w_ih @ x + b_ih
            gh = w_hh @ h[layer] + b_hh
            r = _sigmoid(gi[:hsz] + gh[:hsz])
            z = _sigmoid(gi[hsz : 2 * hsz] + gh[hsz : 2 * hsz])
            hn = gh[2 * hsz :]
            n = np.tanh(gi[2 * hsz :] + r * hn)
            h_new = (1.0 - z) * n + z * h[layer]
            if with_cache:
                step_cache.append({"x": x, "h_prev": h[layer].copy(), "r": r, "z": z,
                                   "n": n, "hn": hn})
            h[layer] = h_new
            x = h_new
        feats[t] = h[-1]
        if with_cache:
            caches.append(step_cache)
    out = feats @ p["head.w"].T + p["head.b"]
    if not with_cache:
        return out
    return out, {"steps": caches, "feats": feats, "seq": seq}


def gru_backward(bundle: WeightBundle, cache: dict, d_out: np.ndarray):
    """BPTT: gradients for all parameters plus the input sequence.

    Returns (grads, d_seq).
    """
    p = bundle.params
    hidden = list(bundle.dims["hidden"])
    n_layers = len(hidden)
    steps = len(cache["steps"])
    d_out = np.asarray(d_out, dtype=float)

    grads = {name: np.zeros_like(arr) for name, arr in p.items()}
    grads["head.w"] = d_out.T @ cache["feats"]
    grads["head.b"] = d_out.sum(axis=0)
    d_feats = d_out @ p["head.w"]

    d_h = [np.zeros(hsz) for hsz in hidden]  # dL/dh carried across time
    d_seq = np.zeros_like(cache["seq"])
    for t in range(steps - 1, -1, -1):
        d_h[-1] = d_h[-1] + d_feats[t]
        d_x_next = None
        for layer in range(n_layers - 1, -1, -1):
            hsz = hidden[layer]
            sc = cache["steps"][t][layer]
            dh = d_h[layer]
            if d_x_next is not None:
                dh = dh + d_x_next  # upper layer's input gradient
            r, z, n, hn, h_prev, x = sc["r"], sc["z"], sc["n"], sc["hn"], sc["h_prev"], sc["x"]
            dz = dh * (h_prev - n)
            dn = dh * (1.0 - z)
            dh_prev = dh * z
            da_n = dn * (1.0 - n * n)
            dr = da_n * hn
            d_hn = da_n * r
            da_z = dz * z * (1.0 - z)
            da_r = dr * r * (1.0 - r)
            dgi = np.concatenate([da_r, da_z, da_n])
            dgh = np.concatenate([da_r, da_z, d_hn])
            grads[f"gru{layer}.w_ih"] += np.outer(dgi, x)
            grads[f"gru{layer}.b_ih"] += dgi
            grads[f"gru{layer}.w_hh"] += np.outer(dgh, h_prev)
            grads[f"gru{layer}.b_hh"] += dgh
            dh_prev = dh_prev + p[f"gru{layer}.w_hh"].T @ dgh
            dx = p[f"gru{layer}.w_ih"].T @ dgi
            d_h[layer] = dh_prev
            d_x_next = dx
        d_seq[t] = d_x_next
    return grads, d_seq
