"""Tiny pre-LN encoder-decoder transformer in NumPy with a hand-written backward pass.

Parameters live in a flat ``dict[str, np.ndarray]`` so the optimizer,
checkpoints and gradient checks can iterate over them by name. The encoder
self-attention is causal, so the encoder state at position j only depends on
source tokens 1..j.

Shapes: B batch, J source length, I target steps, D model dim, H heads.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .data import PAD
from .masking import MaskBatch

Params = dict[str, np.ndarray]

LN_EPS = 1e-5


@dataclass
class ModelConfig:
    src_vocab: int = 64
    tgt_vocab: int = 64
    d_model: int = 64
    n_heads: int = 4
    n_enc_layers: int = 2
    n_dec_layers: int = 2
    d_ff: int = 128
    dropout: float = 0.1
    label_smoothing: float = 0.1
    max_positions: int = 256
    dtype: str = "float32"

    def validate(self) -> None:
        dims = ("src_vocab", "tgt_vocab", "d_model", "n_heads", "n_enc_layers", "n_dec_layers", "d_ff", "max_positions")
        for name in dims:
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ValueError("label_smoothing must lie in [0, 1)")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"unsupported dtype {self.dtype!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LossReport:
    total: float
    per_token: float
    tokens: int


def sinusoidal_positions(T: int, D: int, dtype=np.float64) -> np.ndarray:
    pos = np.arange(T)[:, None]
    i = np.arange(D)[None, :]
    angle = pos / np.power(10000.0, 2 * (i // 2) / D)
    pe = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return pe.astype(dtype)


# -- parameters -------------------------------------------------------------------


def init_params(cfg: ModelConfig, seed: int = 0) -> Params:
    """Xavier-uniform matrices, N(0, 1/D) embeddings, zero biases, unit LN gains."""
    cfg.validate()
    rng = np.random.default_rng(seed)
    D, F = cfg.d_model, cfg.d_ff
    dt = np.dtype(cfg.dtype)
    p: Params = {}

    def mat(name, fan_in, fan_out):
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        p[name] = rng.uniform(-lim, lim, size=(fan_in, fan_out)).astype(dt)

    def zeros(name, n):
        p[name] = np.zeros(n, dtype=dt)

    def ln(prefix):
        p[f"{prefix}.g"] = np.ones(D, dtype=dt)
        p[f"{prefix}.b"] = np.zeros(D, dtype=dt)

    def attn(prefix):
        for w in ("q", "k", "v", "o"):
            mat(f"{prefix}.w{w}", D, D)
            zeros(f"{prefix}.b{w}", D)

    def ffn(prefix):
        mat(f"{prefix}.w1", D, F)
        zeros(f"{prefix}.b1", F)
        mat(f"{prefix}.w2", F, D)
        zeros(f"{prefix}.b2", D)

    p["src_embed"] = (rng.standard_normal((cfg.src_vocab, D)) * D**-0.5).astype(dt)
    p["tgt_embed"] = (rng.standard_normal((cfg.tgt_vocab, D)) * D**-0.5).astype(dt)
    for layer in range(cfg.n_enc_layers):
        ln(f"enc.{layer}.ln1")
        attn(f"enc.{layer}.self")
        ln(f"enc.{layer}.ln2")
        ffn(f"enc.{layer}.ffn")
    ln("enc.ln")
    for layer in range(cfg.n_dec_layers):
        ln(f"dec.{layer}.ln1")
        attn(f"dec.{layer}.self")
        ln(f"dec.{layer}.ln2")
        attn(f"dec.{layer}.cross")
        ln(f"dec.{layer}.ln3")
        ffn(f"dec.{layer}.ffn")
    ln("dec.ln")
    mat("out.w", D, cfg.tgt_vocab)
    zeros("out.b", cfg.tgt_vocab)
    return p


def param_groups(params: Params) -> dict[str, list[str]]:
    """Parameter names grouped by module (embeddings, each layer's sublayers, output)."""
    groups: dict[str, list[str]] = {}
    for name in params:
        key = name.rsplit(".", 1)[0] if "." in name else name
        groups.setdefault(key, []).append(name)
    return groups


# -- building blocks ----------------------------------------------------------------


def _layer_norm(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * rstd
    return xhat * g + b, (xhat, rstd, g)


def _layer_norm_back(dy, cache):
    xhat, rstd, g = cache
    dg = (dy * xhat).reshape(-1, xhat.shape[-1]).sum(axis=0)
    db = dy.reshape(-1, xhat.shape[-1]).sum(axis=0)
    gh = dy * g
    dx = rstd * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
    return dx, dg, db


def masked_softmax(scores: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Softmax over the last axis with masked entries set to -inf first.

    Rows with no permitted entry come out as all zeros.
    """
    s = np.where(mask, scores, -np.inf)
    m = s.max(axis=-1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(s - m)
    z = e.sum(axis=-1, keepdims=True)
    return e / np.where(z == 0.0, 1.0, z)


def _split(x, H):
    B, T, D = x.shape
    return x.reshape(B, T, H, D // H).transpose(0, 2, 1, 3)


def _merge(x):
    B, H, T, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, T, H * dh)


def _attention(p, prefix, xq, xkv, mask, H):
    wq, bq = p[f"{prefix}.wq"], p[f"{prefix}.bq"]
    wk, bk = p[f"{prefix}.wk"], p[f"{prefix}.bk"]
    wv, bv = p[f"{prefix}.wv"], p[f"{prefix}.bv"]
    wo, bo = p[f"{prefix}.wo"], p[f"{prefix}.bo"]
    q = _split(xq @ wq + bq, H)
    k = _split(xkv @ wk + bk, H)
    v = _split(xkv @ wv + bv, H)
    scale = 1.0 / np.sqrt(q.shape[-1])
    a = masked_softmax((q @ k.transpose(0, 1, 3, 2)) * scale, mask[:, None, :, :])
    o = _merge(a @ v)
    return o @ wo + bo, (xq, xkv, q, k, v, a, o, scale)


def _attention_back(p, prefix, dy, cache, grads):
    xq, xkv, q, k, v, a, o, scale = cache
    H = q.shape[1]
    D = dy.shape[-1]
    grads[f"{prefix}.wo"] += o.reshape(-1, D).T @ dy.reshape(-1, D)
    grads[f"{prefix}.bo"] += dy.reshape(-1, D).sum(axis=0)
    do = _split(dy @ p[f"{prefix}.wo"].T, H)
    da = do @ v.transpose(0, 1, 3, 2)
    dv = a.transpose(0, 1, 3, 2) @ do
    ds = a * (da - (da * a).sum(axis=-1, keepdims=True)) * scale
    dq = _merge(ds @ k)
    dk = _merge(ds.transpose(0, 1, 3, 2) @ q)
    dv = _merge(dv)
    xq2, xkv2 = xq.reshape(-1, D), xkv.reshape(-1, D)
    grads[f"{prefix}.wq"] += xq2.T @ dq.reshape(-1, D)
    grads[f"{prefix}.bq"] += dq.reshape(-1, D).sum(axis=0)
    grads[f"{prefix}.wk"] += xkv2.T @ dk.reshape(-1, D)
    grads[f"{prefix}.bk"] += dk.reshape(-1, D).sum(axis=0)
    grads[f"{prefix}.wv"] += xkv2.T @ dv.reshape(-1, D)
    grads[f"{prefix}.bv"] += dv.reshape(-1, D).sum(axis=0)
    dxq = dq @ p[f"{prefix}.wq"].T
    dxkv = dk @ p[f"{prefix}.wk"].T + dv @ p[f"{prefix}.wv"].T
    return dxq, dxkv


def _ffn(p, prefix, x):
    h = x @ p[f"{prefix}.w1"] + p[f"{prefix}.b1"]
    r = np.maximum(h, 0.0)
    return r @ p[f"{prefix}.w2"] + p[f"{prefix}.b2"], (x, h, r)


def _ffn_back(p, prefix, dy, cache, grads):
    x, h, r = cache
    D, F = x.shape[-1], h.shape[-1]
    grads[f"{prefix}.w2"] += r.reshape(-1, F).T @ dy.reshape(-1, D)
    grads[f"{prefix}.b2"] += dy.reshape(-1, D).sum(axis=0)
    dh = (dy @ p[f"{prefix}.w2"].T) * (h > 0)
    grads[f"{prefix}.w1"] += x.reshape(-1, D).T @ dh.reshape(-1, F)
    grads[f"{prefix}.b1"] += dh.reshape(-1, F).sum(axis=0)
    return dh @ p[f"{prefix}.w1"].T


class _Dropout:
    """Inverted dropout; a no-op when ``rate`` is 0 or no generator is given."""

    def __init__(self, rate: float, rng: Optional[np.random.Generator]):
        self.rate = rate if rng is not None else 0.0
        self.rng = rng

    def __call__(self, x):
        if self.rate == 0.0:
            return x, None
        keep = (self.rng.random(x.shape) >= self.rate).astype(x.dtype) / (1.0 - self.rate)
        return x * keep, keep

    @staticmethod
    def back(dy, keep):
        return dy if keep is None else dy * keep


def _check_finite(x: np.ndarray, where: str) -> None:
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"non-finite activations in {where}")


# -- forward / backward -----------------------------------------------------------------


def encode(params: Params, cfg: ModelConfig, src: np.ndarray, enc_mask: np.ndarray, dropout=None, cache=None):
    """Encoder states (B, J, D) after the final layer norm."""
    drop = dropout or _Dropout(0.0, None)
    D = cfg.d_model
    J = src.shape[1]
    if J > cfg.max_positions:
        raise ValueError(f"source length {J} exceeds max_positions={cfg.max_positions}")
    pe = sinusoidal_positions(J, D, params["src_embed"].dtype)
    x = params["src_embed"][src] * np.sqrt(D) + pe
    x, k0 = drop(x)
    if cache is not None:
        cache["enc.embed"] = (src, k0)
    for layer in range(cfg.n_enc_layers):
        pre = f"enc.{layer}"
        h, c1 = _layer_norm(x, params[f"{pre}.ln1.g"], params[f"{pre}.ln1.b"])
        h, c2 = _attention(params, f"{pre}.self", h, h, enc_mask, cfg.n_heads)
        h, k1 = drop(h)
        x = x + h
        h, c3 = _layer_norm(x, params[f"{pre}.ln2.g"], params[f"{pre}.ln2.b"])
        h, c4 = _ffn(params, f"{pre}.ffn", h)
        h, k2 = drop(h)
        x = x + h
        if cache is not None:
            cache[pre] = (c1, c2, k1, c3, c4, k2)
    out, c = _layer_norm(x, params["enc.ln.g"], params["enc.ln.b"])
    if cache is not None:
        cache["enc.ln"] = c
    _check_finite(out, "encoder")
    return out


def decode_states(params, cfg, tgt_in, enc_out, dec_mask, cross_mask, dropout=None, cache=None, attn_out=None):
    """Decoder states (B, I, D) after the final layer norm.

    If ``attn_out`` is a list, the top layer's cross-attention weights (B, H, I, J)
    are appended to it.
    """
    drop = dropout or _Dropout(0.0, None)
    D = cfg.d_model
    I = tgt_in.shape[1]  # noqa: E741
    if I > cfg.max_positions:
        raise ValueError(f"target length {I} exceeds max_positions={cfg.max_positions}")
    pe = sinusoidal_positions(I, D, params["tgt_embed"].dtype)
    x = params["tgt_embed"][tgt_in] * np.sqrt(D) + pe
    x, k0 = drop(x)
    if cache is not None:
        cache["dec.embed"] = (tgt_in, k0)
    for layer in range(cfg.n_dec_layers):
        pre = f"dec.{layer}"
        h, c1 = _layer_norm(x, params[f"{pre}.ln1.g"], params[f"{pre}.ln1.b"])
        h, c2 = _attention(params, f"{pre}.self", h, h, dec_mask, cfg.n_heads)
        h, k1 = drop(h)
        x = x + h
        h, c3 = _layer_norm(x, params[f"{pre}.ln2.g"], params[f"{pre}.ln2.b"])
        h, c4 = _attention(params, f"{pre}.cross", h, enc_out, cross_mask, cfg.n_heads)
        if attn_out is not None and layer == cfg.n_dec_layers - 1:
            attn_out.append(c4[5])
        h, k2 = drop(h)
        x = x + h
        h, c5 = _layer_norm(x, params[f"{pre}.ln3.g"], params[f"{pre}.ln3.b"])
        h, c6 = _ffn(params, f"{pre}.ffn", h)
        h, k3 = drop(h)
        x = x + h
        if cache is not None:
            cache[pre] = (c1, c2, k1, c3, c4, k2, c5, c6, k3)
    out, c = _layer_norm(x, params["dec.ln.g"], params["dec.ln.b"])
    if cache is not None:
        cache["dec.ln"] = c
    _check_finite(out, "decoder")
    return out


def log_softmax(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=-1, keepdims=True)
    s = z - m
    return s - np.log(np.exp(s).sum(axis=-1, keepdims=True))


def forward(
    params: Params,
    cfg: ModelConfig,
    src: np.ndarray,
    tgt_in: np.ndarray,
    masks: MaskBatch,
    rng: Optional[np.random.Generator] = None,
    cache: Optional[dict] = None,
    attn_out: Optional[list] = None,
) -> np.ndarray:
    """Per-step log-probabilities (B, I, V_tgt).

    Dropout is active only when ``rng`` is given. Pass a dict as ``cache`` to
    keep the intermediates needed by :func:`backward`.
    """
    drop = _Dropout(cfg.dropout, rng)
    enc_out = encode(params, cfg, src, masks.enc_self_mask, drop, cache)
    h = decode_states(params, cfg, tgt_in, enc_out, masks.dec_self_mask, masks.cross_mask, drop, cache, attn_out)
    logits = h @ params["out.w"] + params["out.b"]
    lp = log_softmax(logits)
    _check_finite(lp, "output log-probabilities")
    if cache is not None:
        cache["enc_out"] = enc_out
        cache["dec_out"] = h
        cache["masks"] = masks
        cache["shapes"] = (src.shape, tgt_in.shape)
    return lp


def loss(
    logprobs: np.ndarray,
    tgt_out: np.ndarray,
    pad_mask: Optional[np.ndarray] = None,
    eps: float = 0.0,
) -> tuple[LossReport, np.ndarray]:
    """Label-smoothed cross-entropy summed over non-pad steps.

    The smoothed target puts ``1 - eps`` on the gold token and spreads ``eps``
    uniformly over the vocabulary. Returns the report and the gradient of the
    per-token mean with respect to the logits.
    """
    if pad_mask is None:
        pad_mask = tgt_out == PAD
    keep = ~np.asarray(pad_mask, dtype=bool)
    n = int(keep.sum())
    if n == 0:
        raise ValueError("target contains only padding; nothing to learn from")
    V = logprobs.shape[-1]
    gold = np.take_along_axis(logprobs, tgt_out[..., None], axis=-1)[..., 0]
    per_pos = -(1.0 - eps) * gold - (eps / V) * logprobs.sum(axis=-1)
    total = float(per_pos[keep].sum())

    q = np.zeros_like(logprobs)
    np.put_along_axis(q, tgt_out[..., None], 1.0 - eps, axis=-1)
    q += eps / V
    dlogits = (np.exp(logprobs) - q) * (keep[..., None] / n)
    return LossReport(total, total / n, n), dlogits.astype(logprobs.dtype)


def _embedding_grad(ids, dx, V):
    # one-hot product; much faster than np.add.at for small vocabularies
    onehot = (ids.reshape(-1)[:, None] == np.arange(V)[None, :]).astype(dx.dtype)
    return onehot.T @ dx.reshape(-1, dx.shape[-1])


def backward(params: Params, cfg: ModelConfig, cache: dict, dlogits: np.ndarray) -> Params:
    """Gradients of the loss for every parameter, given d(loss)/d(logits)."""
    grads = {k: np.zeros_like(v) for k, v in params.items()}
    D = cfg.d_model
    h = cache["dec_out"]
    V = dlogits.shape[-1]
    grads["out.w"] += h.reshape(-1, D).T @ dlogits.reshape(-1, V)
    grads["out.b"] += dlogits.reshape(-1, V).sum(axis=0)
    dx = dlogits @ params["out.w"].T

    dx, dg, db = _layer_norm_back(dx, cache["dec.ln"])
    grads["dec.ln.g"] += dg
    grads["dec.ln.b"] += db
    denc = np.zeros_like(cache["enc_out"])
    for layer in reversed(range(cfg.n_dec_layers)):
        pre = f"dec.{layer}"
        c1, c2, k1, c3, c4, k2, c5, c6, k3 = cache[pre]
        dh = _Dropout.back(dx, k3)
        dh = _ffn_back(params, f"{pre}.ffn", dh, c6, grads)
        dh, dg, db = _layer_norm_back(dh, c5)
        grads[f"{pre}.ln3.g"] += dg
        grads[f"{pre}.ln3.b"] += db
        dx = dx + dh
        dh = _Dropout.back(dx, k2)
        dh, dkv = _attention_back(params, f"{pre}.cross", dh, c4, grads)
        denc += dkv
        dh, dg, db = _layer_norm_back(dh, c3)
        grads[f"{pre}.ln2.g"] += dg
        grads[f"{pre}.ln2.b"] += db
        dx = dx + dh
        dh = _Dropout.back(dx, k1)
        dq, dkv = _attention_back(params, f"{pre}.self", dh, c2, grads)
        dh, dg, db = _layer_norm_back(dq + dkv, c1)
        grads[f"{pre}.ln1.g"] += dg
        grads[f"{pre}.ln1.b"] += db
        dx = dx + dh
    tgt_in, k0 = cache["dec.embed"]
    dx = _Dropout.back(dx, k0) * np.sqrt(D)
    grads["tgt_embed"] += _embedding_grad(tgt_in, dx, cfg.tgt_vocab)

    dx, dg, db = _layer_norm_back(denc, cache["enc.ln"])
    grads["enc.ln.g"] += dg
    grads["enc.ln.b"] += db
    for layer in reversed(range(cfg.n_enc_layers)):
        pre = f"enc.{layer}"
        c1, c2, k1, c3, c4, k2 = cache[pre]
        dh = _Dropout.back(dx, k2)
        dh = _ffn_back(params, f"{pre}.ffn", dh, c4, grads)
        dh, dg, db = _layer_norm_back(dh, c3)
        grads[f"{pre}.ln2.g"] += dg
        grads[f"{pre}.ln2.b"] += db
        dx = dx + dh
        dh = _Dropout.back(dx, k1)
        dq, dkv = _attention_back(params, f"{pre}.self", dh, c2, grads)
        dh, dg, db = _layer_norm_back(dq + dkv, c1)
        grads[f"{pre}.ln1.g"] += dg
        grads[f"{pre}.ln1.b"] += db
        dx = dx + dh
    src, k0 = cache["enc.embed"]
    dx = _Dropout.back(dx, k0) * np.sqrt(D)
    grads["src_embed"] += _embedding_grad(src, dx, cfg.src_vocab)
    for name, g in grads.items():
        _check_finite(g, f"gradient of {name}")
    return grads


def loss_and_grads(params, cfg, src, tgt_in, tgt_out, masks, rng=None, eps=None):
    """One forward/backward pass. Returns (LossReport, grads)."""
    cache: dict = {}
    lp = forward(params, cfg, src, tgt_in, masks, rng=rng, cache=cache)
    report, dlogits = loss(lp, tgt_out, masks.tgt_pad, cfg.label_smoothing if eps is None else eps)
    return report, backward(params, cfg, cache, dlogits)
