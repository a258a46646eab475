"""Brute-force reference implementations used only by the tests.

Nothing here imports the fast paths' internals: formulas are re-derived with
plain loops so that agreement is evidence, not tautology.
"""

from __future__ import annotations

import math
from collections import Counter

import numpy as np

# -- policies and schedule ---------------------------------------------------------


def wait_k(k, I, J):  # noqa: E741
    out = []
    for i in range(1, I + 1):
        v = k + i - 1
        out.append(v if v < J else J)
    return out


def hmt(L, N, I, J):  # noqa: E741
    rows = []
    for i in range(1, I + 1):
        row = []
        for n in range(1, N + 1):
            v = L + (i - 1) + (n - 1)
            row.append(J if v > J else v)
        rows.append(row)
    return rows


def alpha(alpha_min, d, n_update):
    frac = 1.0 - n_update / d
    if frac < 0.0:
        frac = 0.0
    return alpha_min + (1.0 - alpha_min) * frac


def future(J, g, a):
    return int(math.floor((J - g) * a))


# -- metrics ------------------------------------------------------------------------


def average_lagging(reads, J, I):  # noqa: E741
    tau = len(reads)
    for i, g in enumerate(reads, start=1):
        if g >= J:
            tau = i
            break
    total = 0.0
    for i in range(1, tau + 1):
        total += reads[i - 1] - (i - 1) * J / I
    return total / tau


def hallucinated_count(hyp, reads, ref, align):
    n = 0
    for i in range(len(hyp)):
        if i >= len(ref):
            n += 1
        elif align[i] > reads[i] and hyp[i] != ref[i]:
            n += 1
    return n


def bleu(hyps, refs, max_n=4):
    """Corpus BLEU, evaluated term by term."""
    clipped = [0] * max_n
    total = [0] * max_n
    hl = rl = 0
    for h, r in zip(hyps, refs):
        hl += len(h)
        rl += len(r)
        for n in range(1, max_n + 1):
            hc = Counter(tuple(h[i : i + n]) for i in range(len(h) - n + 1))
            rc = Counter(tuple(r[i : i + n]) for i in range(len(r) - n + 1))
            for g, c in hc.items():
                clipped[n - 1] += min(c, rc.get(g, 0))
            total[n - 1] += max(0, len(h) - n + 1)
    if clipped[0] == 0:
        return 0.0
    precisions = []
    for n in range(max_n):
        if n > 0 and clipped[n] == 0:
            precisions.append(1 / (total[n] + 1))
        else:
            precisions.append(clipped[n] / total[n])
    geo = math.exp(sum(math.log(p) for p in precisions) / max_n)
    bp = 1.0 if hl > rl else math.exp(1 - rl / hl)
    return 100 * bp * geo


# -- naive transformer ---------------------------------------------------------------


def _ln(x, g, b, eps=1e-5):
    mu = sum(x) / len(x)
    var = sum((v - mu) ** 2 for v in x) / len(x)
    return np.array([(v - mu) / math.sqrt(var + eps) for v in x]) * g + b


def _pos(t, D):
    out = np.zeros(D)
    for i in range(D):
        angle = t / 10000.0 ** (2 * (i // 2) / D)
        out[i] = math.sin(angle) if i % 2 == 0 else math.cos(angle)
    return out


def _attend(p, prefix, query, keys, H):
    """Multi-head attention of one query vector over a list of key/value vectors."""
    D = len(query)
    dh = D // H
    q = query @ p[f"{prefix}.wq"] + p[f"{prefix}.bq"]
    ks = [k @ p[f"{prefix}.wk"] + p[f"{prefix}.bk"] for k in keys]
    vs = [k @ p[f"{prefix}.wv"] + p[f"{prefix}.bv"] for k in keys]
    out = np.zeros(D)
    for h in range(H):
        sl = slice(h * dh, (h + 1) * dh)
        scores = [float(np.dot(q[sl], k[sl])) / math.sqrt(dh) for k in ks]
        m = max(scores)
        w = [math.exp(s - m) for s in scores]
        z = sum(w)
        for wt, v in zip(w, vs):
            out[sl] += (wt / z) * v[sl]
    return out @ p[f"{prefix}.wo"] + p[f"{prefix}.bo"]


def _ffn(p, prefix, x):
    h = np.maximum(x @ p[f"{prefix}.w1"] + p[f"{prefix}.b1"], 0.0)
    return h @ p[f"{prefix}.w2"] + p[f"{prefix}.b2"]


def naive_encode_prefix(p, cfg, src):
    """Encoder states for ``src`` alone, one position at a time (causal)."""
    D = cfg.d_model
    xs = [p["src_embed"][t] * math.sqrt(D) + _pos(j, D) for j, t in enumerate(src)]
    for layer in range(cfg.n_enc_layers):
        pre = f"enc.{layer}"
        normed = [_ln(x, p[f"{pre}.ln1.g"], p[f"{pre}.ln1.b"]) for x in xs]
        xs = [x + _attend(p, f"{pre}.self", normed[j], normed[: j + 1], cfg.n_heads) for j, x in enumerate(xs)]
        xs = [x + _ffn(p, f"{pre}.ffn", _ln(x, p[f"{pre}.ln2.g"], p[f"{pre}.ln2.b"])) for x in xs]
    return [_ln(x, p["enc.ln.g"], p["enc.ln.b"]) for x in xs]


def naive_forward(p, cfg, src, tgt_in, readable):
    """Log-probabilities (I, V) where step i sees source positions ``readable[i]`` (1-indexed).

    The source prefix up to the furthest readable position is re-encoded from
    scratch for every step.
    """
    D = cfg.d_model
    I = len(tgt_in)  # noqa: E741
    memories = []
    for i in range(I):
        pos = sorted(readable[i])
        enc = naive_encode_prefix(p, cfg, src[: pos[-1]])
        memories.append([enc[j - 1] for j in pos])
    ys = [p["tgt_embed"][t] * math.sqrt(D) + _pos(i, D) for i, t in enumerate(tgt_in)]
    for layer in range(cfg.n_dec_layers):
        pre = f"dec.{layer}"
        normed = [_ln(y, p[f"{pre}.ln1.g"], p[f"{pre}.ln1.b"]) for y in ys]
        ys = [y + _attend(p, f"{pre}.self", normed[i], normed[: i + 1], cfg.n_heads) for i, y in enumerate(ys)]
        ys = [
            y + _attend(p, f"{pre}.cross", _ln(y, p[f"{pre}.ln2.g"], p[f"{pre}.ln2.b"]), memories[i], cfg.n_heads)
            for i, y in enumerate(ys)
        ]
        ys = [y + _ffn(p, f"{pre}.ffn", _ln(y, p[f"{pre}.ln3.g"], p[f"{pre}.ln3.b"])) for y in ys]
    out = []
    for y in ys:
        z = _ln(y, p["dec.ln.g"], p["dec.ln.b"]) @ p["out.w"] + p["out.b"]
        m = max(z)
        lse = m + math.log(sum(math.exp(v - m) for v in z))
        out.append(z - lse)
    return np.array(out)


# -- finite differences --------------------------------------------------------------


def fd_gradient(f, params, h=1e-5, names=None):
    """Central differences of scalar ``f()`` w.r.t. every entry of ``params[name]``."""
    grads = {}
    for name in names or params:
        arr = params[name]
        g = np.zeros_like(arr)
        for idx in range(arr.size):
            orig = arr.flat[idx]
            arr.flat[idx] = orig + h
            up = f()
            arr.flat[idx] = orig - h
            down = f()
            arr.flat[idx] = orig
            g.flat[idx] = (up - down) / (2 * h)
        grads[name] = g
    return grads
