"""Minimal fully-connected network with hand-written reverse-mode gradients.

Parameters are a list of (W, b) pairs; hidden layers use ReLU, the output is
linear. forward() returns a cache that backward() consumes to produce exact
gradients of any scalar loss given d(loss)/d(output). Gradients are verified
against central finite differences in the test suite.
"""

from __future__ import annotations

import numpy as np

Params = list  # [(W, b), ...] with W (in, out), b (out,)


def init_mlp(sizes, rng: np.random.Generator, final_scale: float = 0.01,
             final_bias=None) -> Params:
    """Orthogonal init (gain sqrt(2)) for hidden layers, small final layer."""
    params = []
    last = len(sizes) - 2
    for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        a = rng.normal(size=(n_in, n_out))
        u, _, vt = np.linalg.svd(a, full_matrices=False)
        w = u @ vt                     # semi-orthogonal
        gain = final_scale if i == last else np.sqrt(2.0)
        b = np.zeros(n_out)
        if i == last and final_bias is not None:
            b = np.asarray(final_bias, dtype=np.float64).copy()
        params.append((w * gain, b))
    return params


def forward(params: Params, x: np.ndarray):
    """x (B, in) -> (y (B, out), cache of pre-activations and inputs)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    acts = [x]
    pre = []
    h = x
    for i, (w, b) in enumerate(params):
        z = h @ w + b
        pre.append(z)
        h = np.maximum(z, 0.0) if i < len(params) - 1 else z
        acts.append(h)
    return h, (acts, pre)


def backward(params: Params, cache, dy: np.ndarray) -> Params:
    """Gradients of sum(loss) given d(loss)/d(output) of shape (B, out)."""
    acts, pre = cache
    grads = [None] * len(params)
    g = np.asarray(dy, dtype=np.float64)
    for i in range(len(params) - 1, -1, -1):
        w, _ = params[i]
        grads[i] = (acts[i].T @ g, g.sum(axis=0))
        if i > 0:
            g = (g @ w.T) * (pre[i - 1] > 0.0)
    return grads


def flatten(params: Params) -> np.ndarray:
    return np.concatenate([a.ravel() for w_b in params for a in w_b])


def unflatten(flat: np.ndarray, like: Params) -> Params:
    out = []
    k = 0
    for w, b in like:
        nw, nb = w.size, b.size
        out.append((flat[k:k + nw].reshape(w.shape).copy(),
                    flat[k + nw:k + nw + nb].reshape(b.shape).copy()))
        k += nw + nb
    return out


def clip_grads(grads: Params, max_norm: float) -> Params:
    total = np.sqrt(sum(float(np.sum(a * a)) for w_b in grads for a in w_b))
    if total <= max_norm or total == 0.0:
        return grads
    s = max_norm / total
    return [(w * s, b * s) for w, b in grads]


class Adam:
    """Adam optimizer over a Params list."""

    def __init__(self, params: Params, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [(np.zeros_like(w), np.zeros_like(b)) for w, b in params]
        self.v = [(np.zeros_like(w), np.zeros_like(b)) for w, b in params]

    def step(self, params: Params, grads: Params) -> Params:
        self.t += 1
        bias1 = 1.0 - self.beta1 ** self.t
        bias2 = 1.0 - self.beta2 ** self.t
        out = []
        for i, ((w, b), (gw, gb)) in enumerate(zip(params, grads)):
            mw, mb = self.m[i]
            vw, vb = self.v[i]
            mw = self.beta1 * mw + (1 - self.beta1) * gw
            mb = self.beta1 * mb + (1 - self.beta1) * gb
            vw = self.beta2 * vw + (1 - self.beta2) * gw * gw
            vb = self.beta2 * vb + (1 - self.beta2) * gb * gb
            self.m[i] = (mw, mb)
            self.v[i] = (vw, vb)
            out.append((w - self.lr * (mw / bias1) / (np.sqrt(vw / bias2) + self.eps),
                        b - self.lr * (mb / bias1) / (np.sqrt(vb / bias2) + self.eps)))
        return out
