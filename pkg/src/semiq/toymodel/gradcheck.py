"""Central finite-difference checks for the hand-written backward pass."""

from __future__ import annotations

import numpy as np

from .model import ModelDims, ToyModelParams, caption_loss, forward, init_params, log_softmax, loss_and_grad


def numeric_grad(params: ToyModelParams, batch, name, h=1e-5) -> np.ndarray:
    f, p, cin, cout = batch
    arr = params.arrays[name]
    out = np.zeros_like(arr)
    for idx in np.ndindex(arr.shape):
        old = arr[idx]
        arr[idx] = old + h
        lp = caption_loss(forward(params, f, p, cin), cout)
        arr[idx] = old - h
        lm = caption_loss(forward(params, f, p, cin), cout)
        arr[idx] = old
        out[idx] = (lp - lm) / (2 * h)
    return out


def relative_errors(params: ToyModelParams, batch, h=1e-5) -> dict:
    """``name -> ||g - g_fd|| / max(||g||, ||g_fd||)`` for every parameter group."""
    _, grads = loss_and_grad(params, batch)
    errs = {}
    for name in params.arrays:
        fd = numeric_grad(params, batch, name, h)
        scale = max(np.linalg.norm(fd), np.linalg.norm(grads[name]), 1e-12)
        errs[name] = float(np.linalg.norm(grads[name] - fd) / scale)
    return errs


def brute_force_loss(params: ToyModelParams, features, prompt_ids, caption_out) -> float:
    """Sum of ``-log p(c_j | prefix, c_<j)`` computed one position at a time.

    Each step reruns the model on the caption prefix alone, so the result does
    not rely on the causal mask.
    """
    f = np.atleast_2d(features)
    p = np.atleast_2d(prompt_ids)
    t = np.atleast_2d(caption_out)
    total = 0.0
    for b in range(t.shape[0]):
        prefix = [1]  # <bos>
        for tok in t[b]:
            if tok == 0:
                break
            logits = forward(params, f[b], p[b], np.array(prefix))
            total -= log_softmax(logits[-1])[tok]
            prefix.append(int(tok))
    return float(total)


def small_instance(seed=0, n_layers=1):
    """Tiny model and batch: d=8, V=12, two audio and two text prefix rows."""
    dims = ModelDims(feat_dim=6, vocab_size=12, d=8, prefix_audio=2, prefix_text=2, mapper_hidden=5, ff_hidden=7, max_len=6, n_layers=n_layers)
    params = init_params(dims, seed=seed + 3)
    rng = np.random.default_rng(seed)
    B = 3
    f = rng.normal(size=(B, 6))
    pr = rng.integers(3, 12, (B, 4))
    pr[0, 3] = 0
    cin = rng.integers(3, 12, (B, 5))
    cin[:, 0] = 1
    cout = np.concatenate([cin[:, 1:], rng.integers(3, 12, (B, 1))], axis=1)
    cout[1, 3:] = 0
    cin[1, 4:] = 0
    return params, (f, pr, cin, cout)
