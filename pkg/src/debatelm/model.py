"""From-scratch transformer encoder with exact reverse-mode gradients.

Parameters live in a flat dict name -> ndarray; every forward helper
returns the cache its backward twin needs, and backward passes are written
against the same expressions, so finite-difference checks agree to
near machine precision in float64.

Architecture follows the standard post-layer-norm encoder recipe: token +
position embeddings, per-layer multi-head self-attention and GELU
feed-forward blocks with residual connections, an MLM head whose output
projection is tied to the input embedding matrix, a tanh pooler over the
[CLS] state, and optional token- / sequence-classification heads.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy.special import erf

from debatelm.errors import ConfigError, NumericError
from debatelm.masking import LABEL_IGNORE, MaskedBatch
from debatelm.rng import seed_stream

LN_EPS = 1e-12
ATTN_MASK_VALUE = -1e30  # additive bias on padded keys; exp() underflows to exactly 0
INIT_STD = 0.02

Params = dict[str, np.ndarray]


@dataclass
class EncoderConfig:
    layers: int
    hidden: int
    heads: int
    intermediate: int
    max_position: int
    vocab_size: int
    dropout: float = 0.0

    def validate(self) -> None:
        if self.layers < 1:
            raise ConfigError("layers must be >= 1")
        if self.hidden % self.heads != 0:
            raise ConfigError(f"hidden ({self.hidden}) must be divisible by heads ({self.heads})")
        if not 0 <= self.dropout < 1:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.vocab_size < 6:
            raise ConfigError("vocab_size must cover the 5 special tokens")
        if self.max_position < 2:
            raise ConfigError("max_position must be >= 2")

    def as_dict(self) -> dict:
        return asdict(self)


PRESETS = {
    "toy": dict(layers=2, hidden=64, heads=4),
    "base": dict(layers=12, hidden=768, heads=12),
    "large": dict(layers=24, hidden=1024, heads=16),
}


def preset_config(name: str, vocab_size: int, max_position: int = 512, dropout: float | None = None) -> EncoderConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown architecture preset {name!r}; choose from {sorted(PRESETS)}")
    p = PRESETS[name]
    if dropout is None:
        dropout = 0.0 if name == "toy" else 0.1
    cfg = EncoderConfig(
        layers=p["layers"],
        hidden=p["hidden"],
        heads=p["heads"],
        intermediate=4 * p["hidden"],
        max_position=max_position,
        vocab_size=vocab_size,
        dropout=dropout,
    )
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# Parameter construction


def parameter_shapes(config: EncoderConfig, heads: Sequence[tuple[str, int]] = ()) -> dict[str, tuple]:
    """All trainable tensors; `heads` adds ('token'|'seq', n_classes) heads."""
    h, i = config.hidden, config.intermediate
    shapes: dict[str, tuple] = {
        "embed.word": (config.vocab_size, h),
        "embed.pos": (config.max_position, h),
        "embed.ln.g": (h,),
        "embed.ln.b": (h,),
    }
    for l in range(config.layers):
        p = f"layer{l}."
        shapes.update(
            {
                p + "attn.wq": (h, h),
                p + "attn.bq": (h,),
                p + "attn.wk": (h, h),
                p + "attn.bk": (h,),
                p + "attn.wv": (h, h),
                p + "attn.bv": (h,),
                p + "attn.wo": (h, h),
                p + "attn.bo": (h,),
                p + "ln1.g": (h,),
                p + "ln1.b": (h,),
                p + "ffn.w1": (h, i),
                p + "ffn.b1": (i,),
                p + "ffn.w2": (i, h),
                p + "ffn.b2": (h,),
                p + "ln2.g": (h,),
                p + "ln2.b": (h,),
            }
        )
    shapes.update(
        {
            "mlm.dense.w": (h, h),
            "mlm.dense.b": (h,),
            "mlm.ln.g": (h,),
            "mlm.ln.b": (h,),
            "mlm.out_bias": (config.vocab_size,),
            "pooler.w": (h, h),
            "pooler.b": (h,),
        }
    )
    for head_kind, n_classes in heads:
        shapes[f"head.{head_kind}.w"] = (h, n_classes)
        shapes[f"head.{head_kind}.b"] = (n_classes,)
    return shapes


def truncated_normal(rng: np.random.Generator, shape: tuple, std: float, dtype) -> np.ndarray:
    """Normal(0, std) with |x| > 2*std resampled."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2 * std
    return out.astype(dtype)


def init_tensor(name: str, shape: tuple, seed: int, dtype=np.float32) -> np.ndarray:
    """Init one tensor from its own named stream: truncated-normal weights,
    zero biases, unit layer-norm gains."""
    if name.endswith(".g"):
        return np.ones(shape, dtype=dtype)
    if name.endswith((".b", ".bq", ".bk", ".bv", ".bo", ".b1", ".b2", "out_bias")):
        return np.zeros(shape, dtype=dtype)
    return truncated_normal(seed_stream(seed, "init", name), shape, INIT_STD, dtype)


def init_params(config: EncoderConfig, seed: int, dtype=np.float32,
                heads: Sequence[tuple[str, int]] = ()) -> Params:
    config.validate()
    return {
        name: init_tensor(name, shape, seed, dtype)
        for name, shape in parameter_shapes(config, heads).items()
    }


def attach_head(params: Params, config: EncoderConfig, head_kind: str, n_classes: int,
                seed: int) -> Params:
    """Add a freshly initialized classification head to an existing parameter set."""
    if head_kind not in ("token", "seq"):
        raise ConfigError("head_kind must be 'token' or 'seq'")
    dtype = params["embed.word"].dtype
    out = dict(params)
    out[f"head.{head_kind}.w"] = init_tensor(
        f"head.{head_kind}.w", (config.hidden, n_classes), seed, dtype)
    out[f"head.{head_kind}.b"] = init_tensor(
        f"head.{head_kind}.b", (n_classes,), seed, dtype)
    return out


def check_shapes(params: Params, config: EncoderConfig) -> None:
    expected = parameter_shapes(config)
    for name, shape in expected.items():
        if name not in params:
            raise ConfigError(f"missing parameter tensor {name!r}")
        if tuple(params[name].shape) != shape:
            raise ConfigError(f"{name}: expected shape {shape}, got {tuple(params[name].shape)}")


def _assert_finite(x: np.ndarray, where: str) -> None:
    if not np.isfinite(x).all():
        raise NumericError(f"non-finite activation in {where}")


# ---------------------------------------------------------------------------
# Differentiable building blocks


def layer_norm_forward(x, g, b):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return g * xhat + b, (xhat, inv, g)


def layer_norm_backward(dy, cache):
    xhat, inv, g = cache
    dxhat = dy * g
    dg = (dy * xhat).reshape(-1, xhat.shape[-1]).sum(0)
    db = dy.reshape(-1, dy.shape[-1]).sum(0)
    dx = inv * (
        dxhat
        - dxhat.mean(-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(-1, keepdims=True)
    )
    return dx, dg, db


_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x):
    return 0.5 * x * (1.0 + erf(x / _SQRT2))


def gelu_forward(x):
    """GELU plus the cache its backward needs (the erf term is reused)."""
    e = erf(x / _SQRT2)
    return 0.5 * x * (1.0 + e), (x, e)


def gelu_backward(dy, cache):
    x, e = cache
    return dy * (0.5 * (1.0 + e) + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x))


def gelu_grad(x):
    return 0.5 * (1.0 + erf(x / _SQRT2)) + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def _linear(x, w, b):
    """(..., H) @ (H, K) as one flat GEMM."""
    shape = x.shape
    out = x.reshape(-1, shape[-1]) @ w
    out += b
    return out.reshape(*shape[:-1], w.shape[1])


def softmax_last(x):
    shifted = x - x.max(-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(-1, keepdims=True)


def _dropout(x, p, rng):
    if p <= 0.0 or rng is None:
        return x, None
    keep = (rng.random(x.shape) >= p).astype(x.dtype)
    scale = 1.0 / (1.0 - p)
    return x * keep * scale, keep * scale


def _dropout_backward(dy, mask):
    return dy if mask is None else dy * mask


def _split_heads(x, heads):
    b, s, h = x.shape
    return x.reshape(b, s, heads, h // heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    b, heads, s, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, s, heads * dh)


# ---------------------------------------------------------------------------
# Encoder forward / backward


def encoder_forward(params: Params, config: EncoderConfig, input_ids, attention_mask,
                    *, dropout_rng: np.random.Generator | None = None,
                    check_finite: bool = True):
    """Run the encoder trunk; returns (sequence_output (B,S,H), cache).

    attention_mask enters as an additive bias of ATTN_MASK_VALUE on padded
    keys, which underflows to exactly zero attention weight, so appended
    padding cannot perturb real positions.
    """
    input_ids = np.asarray(input_ids)
    b, s = input_ids.shape
    if s > config.max_position:
        raise ConfigError(f"sequence length {s} exceeds max_position {config.max_position}")
    dtype = params["embed.word"].dtype
    p_drop = config.dropout if dropout_rng is not None else 0.0

    emb = params["embed.word"][input_ids] + params["embed.pos"][:s][None, :, :]
    x, emb_ln_cache = layer_norm_forward(emb, params["embed.ln.g"], params["embed.ln.b"])
    x, emb_drop = _dropout(x, p_drop, dropout_rng)
    if check_finite:
        _assert_finite(x, "embeddings")

    mask_bias = ((1.0 - np.asarray(attention_mask, dtype=dtype)) * ATTN_MASK_VALUE)[:, None, None, :]
    scale = 1.0 / math.sqrt(config.hidden // config.heads)

    layer_caches = []
    for l in range(config.layers):
        p = f"layer{l}."
        x_in = x
        q = _linear(x_in, params[p + "attn.wq"], params[p + "attn.bq"])
        k = _linear(x_in, params[p + "attn.wk"], params[p + "attn.bk"])
        v = _linear(x_in, params[p + "attn.wv"], params[p + "attn.bv"])
        qh, kh, vh = (_split_heads(t, config.heads) for t in (q, k, v))
        scores = (qh @ kh.transpose(0, 1, 3, 2)) * scale + mask_bias
        probs = softmax_last(scores)
        probs_d, attn_drop = _dropout(probs, p_drop, dropout_rng)
        ctx = _merge_heads(probs_d @ vh)
        attn_out = _linear(ctx, params[p + "attn.wo"], params[p + "attn.bo"])
        attn_out, out_drop = _dropout(attn_out, p_drop, dropout_rng)
        x, ln1_cache = layer_norm_forward(x_in + attn_out, params[p + "ln1.g"], params[p + "ln1.b"])

        ffn_in = x
        pre = _linear(ffn_in, params[p + "ffn.w1"], params[p + "ffn.b1"])
        act, gelu_cache = gelu_forward(pre)
        ffn_out = _linear(act, params[p + "ffn.w2"], params[p + "ffn.b2"])
        ffn_out, ffn_drop = _dropout(ffn_out, p_drop, dropout_rng)
        x, ln2_cache = layer_norm_forward(ffn_in + ffn_out, params[p + "ln2.g"], params[p + "ln2.b"])
        if check_finite:
            _assert_finite(x, f"layer {l}")

        layer_caches.append(
            dict(x_in=x_in, qh=qh, kh=kh, vh=vh, probs=probs, probs_d=probs_d, ctx=ctx,
                 attn_drop=attn_drop, out_drop=out_drop, ln1=ln1_cache, ffn_in=ffn_in,
                 gelu=gelu_cache, act=act, ffn_drop=ffn_drop, ln2=ln2_cache)
        )

    cache = dict(input_ids=input_ids, emb_ln=emb_ln_cache, emb_drop=emb_drop,
                 layers=layer_caches, scale=scale, seq_len=s)
    return x, cache


def encoder_backward(params: Params, config: EncoderConfig, cache, d_seq_out,
                     grads: Params) -> None:
    """Accumulate gradients of all trunk tensors into `grads` given d(sequence_output)."""
    scale = cache["scale"]
    dx = d_seq_out
    for l in reversed(range(config.layers)):
        p = f"layer{l}."
        c = cache["layers"][l]
        # FFN sublayer
        dsum, dg2, db2 = layer_norm_backward(dx, c["ln2"])
        grads[p + "ln2.g"] += dg2
        grads[p + "ln2.b"] += db2
        dffn_out = _dropout_backward(dsum, c["ffn_drop"])
        h = dffn_out.shape[-1]
        d2d = dffn_out.reshape(-1, h)
        act2d = c["act"].reshape(-1, c["act"].shape[-1])
        grads[p + "ffn.w2"] += act2d.T @ d2d
        grads[p + "ffn.b2"] += d2d.sum(0)
        dact = (d2d @ params[p + "ffn.w2"].T).reshape(c["act"].shape)
        dpre = gelu_backward(dact, c["gelu"])
        dpre2d = dpre.reshape(-1, dpre.shape[-1])
        ffn_in2d = c["ffn_in"].reshape(-1, h)
        grads[p + "ffn.w1"] += ffn_in2d.T @ dpre2d
        grads[p + "ffn.b1"] += dpre2d.sum(0)
        dx = dsum + (dpre2d @ params[p + "ffn.w1"].T).reshape(dsum.shape)

        # Attention sublayer
        dsum, dg1, db1 = layer_norm_backward(dx, c["ln1"])
        grads[p + "ln1.g"] += dg1
        grads[p + "ln1.b"] += db1
        dattn_out = _dropout_backward(dsum, c["out_drop"])
        da2d = dattn_out.reshape(-1, h)
        ctx2d = c["ctx"].reshape(-1, h)
        grads[p + "attn.wo"] += ctx2d.T @ da2d
        grads[p + "attn.bo"] += da2d.sum(0)
        dctx = _split_heads((da2d @ params[p + "attn.wo"].T).reshape(dattn_out.shape),
                            config.heads)
        dprobs_d = dctx @ c["vh"].transpose(0, 1, 3, 2)
        dvh = c["probs_d"].transpose(0, 1, 3, 2) @ dctx
        dprobs = _dropout_backward(dprobs_d, c["attn_drop"])
        dscores = c["probs"] * (dprobs - (dprobs * c["probs"]).sum(-1, keepdims=True))
        dqh = (dscores @ c["kh"]) * scale
        dkh = (dscores.transpose(0, 1, 3, 2) @ c["qh"]) * scale
        dq, dk, dv = _merge_heads(dqh), _merge_heads(dkh), _merge_heads(dvh)
        x_in2d = c["x_in"].reshape(-1, h)
        dx_in = dsum
        for mat, dvec in (("attn.wq", dq), ("attn.wk", dk), ("attn.wv", dv)):
            dv2d = dvec.reshape(-1, h)
            grads[p + mat] += x_in2d.T @ dv2d
            grads[p + mat.replace("w", "b")] += dv2d.sum(0)
            dx_in = dx_in + (dv2d @ params[p + mat].T).reshape(dsum.shape)
        dx = dx_in

    dx = _dropout_backward(dx, cache["emb_drop"])
    demb, dg, db = layer_norm_backward(dx, cache["emb_ln"])
    grads["embed.ln.g"] += dg
    grads["embed.ln.b"] += db
    s = cache["seq_len"]
    grads["embed.pos"][:s] += demb.sum(0)
    h = demb.shape[-1]
    np.add.at(grads["embed.word"], cache["input_ids"].ravel(), demb.reshape(-1, h))


# ---------------------------------------------------------------------------
# Heads and losses


def log_softmax_last(x):
    shifted = x - x.max(-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(-1, keepdims=True))


def mlm_loss(logits: np.ndarray, labels: np.ndarray) -> tuple[float, int]:
    """Mean cross-entropy over positions whose label is not the sentinel.

    Returns (loss, target_count); zero targets is defined as (0.0, 0).
    """
    labels = np.asarray(labels)
    mask = labels != LABEL_IGNORE
    count = int(mask.sum())
    if count == 0:
        return 0.0, 0
    logp = log_softmax_last(logits[mask])
    nll = -logp[np.arange(count), labels[mask]]
    return float(nll.mean()), count


def mlm_head_forward(params: Params, x: np.ndarray):
    """MLM head on gathered target states x (N,H): dense+GELU+LN, then the
    transpose of the word embedding plus an output bias."""
    pre = x @ params["mlm.dense.w"] + params["mlm.dense.b"]
    act, gelu_cache = gelu_forward(pre)
    h2, ln_cache = layer_norm_forward(act, params["mlm.ln.g"], params["mlm.ln.b"])
    logits = h2 @ params["embed.word"].T + params["mlm.out_bias"]
    return logits, (x, gelu_cache, h2, ln_cache)


def mlm_head_backward(params: Params, head_cache, dlogits, grads: Params):
    x, gelu_cache, h2, ln_cache = head_cache
    grads["embed.word"] += dlogits.T @ h2  # tied output projection
    grads["mlm.out_bias"] += dlogits.sum(0)
    dh2 = dlogits @ params["embed.word"]
    dact, dg, db = layer_norm_backward(dh2, ln_cache)
    grads["mlm.ln.g"] += dg
    grads["mlm.ln.b"] += db
    dpre = gelu_backward(dact, gelu_cache)
    grads["mlm.dense.w"] += x.T @ dpre
    grads["mlm.dense.b"] += dpre.sum(0)
    return dpre @ params["mlm.dense.w"].T


def pooler_forward(params: Params, seq_out: np.ndarray):
    cls = seq_out[:, 0, :]
    pooled = np.tanh(cls @ params["pooler.w"] + params["pooler.b"])
    return pooled, (cls, pooled)


def pooler_backward(params: Params, pool_cache, d_pooled, grads: Params):
    cls, pooled = pool_cache
    dpre = d_pooled * (1.0 - pooled * pooled)
    grads["pooler.w"] += cls.T @ dpre
    grads["pooler.b"] += dpre.sum(0)
    return dpre @ params["pooler.w"].T  # d(cls state)


def forward(params: Params, config: EncoderConfig, batch: MaskedBatch,
            *, dropout_rng=None, check_finite: bool = True):
    """Full forward pass: per-position vocabulary logits and pooled [CLS].

    Returns (logits (B,S,V), pooled (B,H)). Training uses the cheaper
    loss_and_grads path that only projects target positions.
    """
    seq_out, _ = encoder_forward(params, config, batch.input_ids, batch.attention_mask,
                                 dropout_rng=dropout_rng, check_finite=check_finite)
    b, s, h = seq_out.shape
    logits, _ = mlm_head_forward(params, seq_out.reshape(-1, h))
    pooled, _ = pooler_forward(params, seq_out)
    return logits.reshape(b, s, config.vocab_size), pooled


def _zero_grads(params: Params) -> Params:
    return {name: np.zeros_like(t) for name, t in params.items()}


def loss_and_grads(params: Params, config: EncoderConfig, batch: MaskedBatch,
                   *, head: str = "mlm", class_labels: np.ndarray | None = None,
                   dropout_rng=None, check_finite: bool = True):
    """Loss plus exact gradients for every parameter tensor.

    head='mlm' reads targets from batch.labels; head='token' expects
    class_labels (B,S) with LABEL_IGNORE at unlabeled positions;
    head='seq' expects class_labels (B,) and classifies the pooled state.
    Tensors the loss does not touch keep exactly-zero gradients.
    """
    seq_out, cache = encoder_forward(params, config, batch.input_ids, batch.attention_mask,
                                     dropout_rng=dropout_rng, check_finite=check_finite)
    grads = _zero_grads(params)
    b, s, h = seq_out.shape

    if head == "mlm":
        labels = np.asarray(batch.labels)
        rows, cols = np.nonzero(labels != LABEL_IGNORE)
        count = len(rows)
        if count == 0:
            return 0.0, 0, grads
        x = seq_out[rows, cols]
        logits, head_cache = mlm_head_forward(params, x)
        targets = labels[rows, cols]
        logp = log_softmax_last(logits)
        loss = float(-logp[np.arange(count), targets].mean())
        dlogits = np.exp(logp)
        dlogits[np.arange(count), targets] -= 1.0
        dlogits /= count
        dx = mlm_head_backward(params, head_cache, dlogits, grads)
        d_seq_out = np.zeros_like(seq_out)
        d_seq_out[rows, cols] = dx
    elif head == "token":
        labels = np.asarray(class_labels)
        w, bias = params["head.token.w"], params["head.token.b"]
        rows, cols = np.nonzero(labels != LABEL_IGNORE)
        count = len(rows)
        if count == 0:
            return 0.0, 0, grads
        x = seq_out[rows, cols]
        logits = x @ w + bias
        targets = labels[rows, cols]
        logp = log_softmax_last(logits)
        loss = float(-logp[np.arange(count), targets].mean())
        dlogits = np.exp(logp)
        dlogits[np.arange(count), targets] -= 1.0
        dlogits /= count
        grads["head.token.w"] += x.T @ dlogits
        grads["head.token.b"] += dlogits.sum(0)
        d_seq_out = np.zeros_like(seq_out)
        d_seq_out[rows, cols] = dlogits @ w.T
    elif head == "seq":
        labels = np.asarray(class_labels)
        count = int(labels.shape[0])
        pooled, pool_cache = pooler_forward(params, seq_out)
        w, bias = params["head.seq.w"], params["head.seq.b"]
        logits = pooled @ w + bias
        logp = log_softmax_last(logits)
        loss = float(-logp[np.arange(count), labels].mean())
        dlogits = np.exp(logp)
        dlogits[np.arange(count), labels] -= 1.0
        dlogits /= count
        grads["head.seq.w"] += pooled.T @ dlogits
        grads["head.seq.b"] += dlogits.sum(0)
        d_pooled = dlogits @ w.T
        d_cls = pooler_backward(params, pool_cache, d_pooled, grads)
        d_seq_out = np.zeros_like(seq_out)
        d_seq_out[:, 0, :] = d_cls
    else:
        raise ConfigError(f"unknown head {head!r}")

    encoder_backward(params, config, cache, d_seq_out, grads)
    if check_finite:
        for name, g in grads.items():
            if not np.isfinite(g).all():
                raise NumericError(f"non-finite gradient for {name}")
    return loss, count, grads


def predict_classes(params: Params, config: EncoderConfig, batch: MaskedBatch, head: str):
    """Argmax class predictions; (B,S) for token heads, (B,) for sequence heads."""
    seq_out, _ = encoder_forward(params, config, batch.input_ids, batch.attention_mask)
    if head == "token":
        logits = seq_out @ params["head.token.w"] + params["head.token.b"]
        return logits.argmax(-1)
    if head == "seq":
        pooled, _ = pooler_forward(params, seq_out)
        logits = pooled @ params["head.seq.w"] + params["head.seq.b"]
        return logits.argmax(-1)
    raise ConfigError(f"unknown head {head!r}")
