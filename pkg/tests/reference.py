"""Independent float64 reference forward with an explicit attention mask.

Written from the model weights only: one monolithic pass over all tokens, a
boolean mask deciding who sees whom, per-head loops, no KV caching.
"""

import numpy as np


def _rms(x):
    return x / np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + 1e-6)


def _rope(x, pos, base, hd):
    # x: (T, hd); pairs (2i, 2i+1) rotated by pos * base^(-2i/hd)
    out = x.copy()
    for i in range(hd // 2):
        theta = pos * base ** (-2.0 * i / hd)
        c, s = np.cos(theta), np.sin(theta)
        a, b = x[:, 2 * i], x[:, 2 * i + 1]
        out[:, 2 * i] = a * c - b * s
        out[:, 2 * i + 1] = a * s + b * c
    return out


def _gelu(x):
    return 0.5 * x * (1.0 + np.tanh(np.sqrt(2.0 / np.pi) * (x + 0.044715 * x ** 3)))


def masked_forward(model, tokens, positions, mask):
    """Logits for every token; ``mask[i, j]`` says whether token i may attend to j."""
    cfg = model.config
    hd, nh = cfg.head_dim, cfg.num_heads
    emb = model.tok_emb.astype(np.float64)
    x = emb[np.asarray(tokens)]
    pos = np.asarray(positions, dtype=np.float64)
    for layer in model.layers:
        h = _rms(x)
        q_all = h @ layer["wq"]
        k_all = h @ layer["wk"]
        v_all = h @ layer["wv"]
        heads = []
        for hi in range(nh):
            sl = slice(hi * hd, (hi + 1) * hd)
            q = _rope(q_all[:, sl], pos, cfg.rope_base, hd)
            k = _rope(k_all[:, sl], pos, cfg.rope_base, hd)
            s = q @ k.T / np.sqrt(hd)
            s = np.where(mask, s, -np.inf)
            s = s - s.max(axis=1, keepdims=True)
            p = np.exp(s)
            p /= p.sum(axis=1, keepdims=True)
            heads.append(p @ v_all[:, sl])
        x = x + np.concatenate(heads, axis=1) @ layer["wo"]
        x = x + _gelu(_rms(x) @ layer["w1"]) @ layer["w2"]
    return _rms(x) @ emb.T


def block_causal(block_lengths, suffix_len, offsets=None):
    """Tokens, mask and positions layout for independent blocks followed by a suffix.

    Each block sees only itself (causally); the suffix sees every block and
    itself causally. Returns (mask, positions).
    """
    offsets = offsets or [0] * len(block_lengths)
    n = sum(block_lengths) + suffix_len
    mask = np.zeros((n, n), dtype=bool)
    positions = []
    col = 0
    for t, off in zip(block_lengths, offsets):
        for i in range(t):
            mask[col + i, col:col + i + 1] = True
        positions.extend(range(off, off + t))
        col += t
    start = max((o + t for o, t in zip(offsets, block_lengths)), default=0)
    for i in range(suffix_len):
        mask[col + i, :col + i + 1] = True
    positions.extend(range(start, start + suffix_len))
    return mask, np.array(positions)


def rel_err(a, ref):
    return float(np.max(np.abs(np.asarray(a, np.float64) - ref)) / np.max(np.abs(ref)))
