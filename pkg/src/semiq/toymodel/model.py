"""Prefix-conditioned causal captioner with a hand-written backward pass.

Layout of one forward pass for a batch of ``B`` examples::

    audio features --tanh MLP--> P_a x d  \
    mean prompt embedding --tanh MLP--> P_t x d   } soft prompt, k = P_a + P_t rows
    caption tokens --embed + position--> L x d    } appended after the soft prompt
    -> n_layers x [causal self-attention (1 head, residual)
                   + ReLU feed-forward (residual)]
    -> vocabulary projection on the L caption rows

With ``n_layers == 1`` the block parameters carry plain names (``attn_q``,
``ff_w1``...); deeper stacks prefix them with ``block<i>.``.

All arrays are float64. Parameters live in a plain ``dict`` so the optimiser,
checkpoint code and gradient checks can walk them uniformly.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from ..audio import LOG_FLOOR, MelSpectrogram
from ..errors import DivergenceError, InvalidInputError, ShapeError
from .vocab import Vocabulary

PAD_ID, BOS_ID, EOS_ID = Vocabulary.pad_id, Vocabulary.bos_id, Vocabulary.eos_id


@dataclass(frozen=True)
class ModelDims:
    feat_dim: int
    vocab_size: int
    d: int = 32
    prefix_audio: int = 4
    prefix_text: int = 4
    mapper_hidden: int = 64
    ff_hidden: int = 128
    max_len: int = 16
    n_layers: int = 1

    @property
    def k(self) -> int:
        return self.prefix_audio + self.prefix_text

    def __post_init__(self):
        if min(self.prefix_audio, self.prefix_text) < 1:
            raise InvalidInputError("prefix lengths must be >= 1")
        if self.n_layers < 1:
            raise InvalidInputError("n_layers must be >= 1")


_MAPPER_SHAPES = {
    "audio_w1": lambda m: (m.feat_dim, m.mapper_hidden),
    "audio_b1": lambda m: (m.mapper_hidden,),
    "audio_w2": lambda m: (m.mapper_hidden, m.prefix_audio * m.d),
    "audio_b2": lambda m: (m.prefix_audio * m.d,),
    "text_w1": lambda m: (m.d, m.mapper_hidden),
    "text_b1": lambda m: (m.mapper_hidden,),
    "text_w2": lambda m: (m.mapper_hidden, m.prefix_text * m.d),
    "text_b2": lambda m: (m.prefix_text * m.d,),
    "tok_emb": lambda m: (m.vocab_size, m.d),
    "pos_emb": lambda m: (m.max_len, m.d),
}

_BLOCK_SHAPES = {
    "attn_q": lambda m: (m.d, m.d),
    "attn_k": lambda m: (m.d, m.d),
    "attn_v": lambda m: (m.d, m.d),
    "attn_o": lambda m: (m.d, m.d),
    "ff_w1": lambda m: (m.d, m.ff_hidden),
    "ff_b1": lambda m: (m.ff_hidden,),
    "ff_w2": lambda m: (m.ff_hidden, m.d),
    "ff_b2": lambda m: (m.d,),
}

_OUTPUT_SHAPES = {
    "out_w": lambda m: (m.d, m.vocab_size),
    "out_b": lambda m: (m.vocab_size,),
}


def block_prefix(i: int, dims: ModelDims) -> str:
    # the single-block model keeps unprefixed names
    return "" if dims.n_layers == 1 else f"block{i}."


def param_shapes(dims: ModelDims) -> dict:
    shapes = {n: f(dims) for n, f in _MAPPER_SHAPES.items()}
    for i in range(dims.n_layers):
        pre = block_prefix(i, dims)
        shapes.update({pre + n: f(dims) for n, f in _BLOCK_SHAPES.items()})
    shapes.update({n: f(dims) for n, f in _OUTPUT_SHAPES.items()})
    return shapes


@dataclass
class ToyModelParams:
    dims: ModelDims
    arrays: dict

    def copy(self) -> "ToyModelParams":
        return ToyModelParams(self.dims, {k: v.copy() for k, v in self.arrays.items()})

    def __getitem__(self, name):
        return self.arrays[name]

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.arrays.values())

    def n_parameters(self) -> int:
        return sum(v.size for v in self.arrays.values())

    def dims_dict(self) -> dict:
        return asdict(self.dims)


def init_params(dims: ModelDims, seed=0, emb_scale=1.0) -> ToyModelParams:
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, shape in param_shapes(dims).items():
        if len(shape) == 1:
            arrays[name] = np.zeros(shape)
        elif name in ("tok_emb", "pos_emb"):
            arrays[name] = rng.normal(0.0, emb_scale / math.sqrt(dims.d), shape)
        else:
            arrays[name] = rng.normal(0.0, 1.0 / math.sqrt(shape[0]), shape)
    return ToyModelParams(dims, arrays)


def zero_params(dims: ModelDims) -> ToyModelParams:
    return ToyModelParams(dims, {n: np.zeros(shape) for n, shape in param_shapes(dims).items()})


# ---------------------------------------------------------------- features


def encode_audio(mel: MelSpectrogram) -> np.ndarray:
    """Per-band mean and standard deviation over frames (``2 * n_mels`` values)."""
    frames = mel.frames
    return np.concatenate([frames.mean(axis=0), frames.std(axis=0)])


@dataclass
class FeatureScaler:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, features) -> "FeatureScaler":
        f = np.asarray(features, dtype=np.float64)
        return cls(f.mean(axis=0), np.maximum(f.std(axis=0), 1e-8))

    def __call__(self, features) -> np.ndarray:
        return (np.asarray(features, dtype=np.float64) - self.mean) / self.std


SILENCE_DB = 10.0 * math.log10(LOG_FLOOR)


# ----------------------------------------------------------------- forward


def _batched(features, prompt_ids, caption_ids):
    f = np.asarray(features, dtype=np.float64)
    p = np.asarray(prompt_ids, dtype=np.int64)
    c = np.asarray(caption_ids, dtype=np.int64)
    single = c.ndim == 1
    if single:
        f, p, c = f[None], p[None], c[None]
    return f, p, c, single


def forward(params: ToyModelParams, features, prompt_ids, caption_ids, return_cache=False):
    """Logits ``[B, L, V]`` (``[L, V]`` for unbatched input).

    Row ``i`` of the logits sees only the soft prompt and caption tokens
    ``0..i``; ``caption_ids`` must start with ``<bos>``.
    """
    m = params.dims
    P = params.arrays
    f, prompt, cap, single = _batched(features, prompt_ids, caption_ids)
    B, L = cap.shape
    if f.shape != (B, m.feat_dim):
        raise ShapeError(f"features shape {f.shape}, expected ({B}, {m.feat_dim})")
    if prompt.shape[0] != B:
        raise ShapeError("prompt batch size differs from caption batch size")
    if L > m.max_len:
        raise ShapeError(f"caption length {L} exceeds max_len {m.max_len}")
    if L == 0 or np.any(cap[:, 0] != BOS_ID):
        raise InvalidInputError("every caption must begin with <bos>")
    if cap.max(initial=0) >= m.vocab_size or prompt.max(initial=0) >= m.vocab_size:
        raise ShapeError("token id outside the vocabulary")

    d, k = m.d, m.k
    ha = np.tanh(f @ P["audio_w1"] + P["audio_b1"])
    pa = (ha @ P["audio_w2"] + P["audio_b2"]).reshape(B, m.prefix_audio, d)

    pmask = (prompt != PAD_ID).astype(np.float64)
    pcount = np.maximum(pmask.sum(axis=1, keepdims=True), 1.0)
    pmean = (P["tok_emb"][prompt] * pmask[..., None]).sum(axis=1) / pcount
    ht = np.tanh(pmean @ P["text_w1"] + P["text_b1"])
    pt = (ht @ P["text_w2"] + P["text_b2"]).reshape(B, m.prefix_text, d)

    ec = P["tok_emb"][cap] + P["pos_emb"][:L]
    h0 = np.concatenate([pa, pt, ec], axis=1)
    T = k + L

    causal = np.tril(np.ones((T, T), dtype=bool))
    h = h0
    blocks = []
    for i in range(m.n_layers):
        h, bc = _block_forward(P, block_prefix(i, m), h, causal, d)
        blocks.append(bc)
    hc = h[:, k:]
    logits = hc @ P["out_w"] + P["out_b"]

    if return_cache:
        cache = dict(f=f, prompt=prompt, cap=cap, ha=ha, pmask=pmask, pcount=pcount, pmean=pmean, ht=ht,
                     h0=h0, blocks=blocks, hc=hc)
        return logits, cache
    return logits[0] if single else logits


def _block_forward(P, pre, h0, causal, d):
    """Residual attention + residual ReLU feed-forward; returns output and cache."""
    q = h0 @ P[pre + "attn_q"]
    kk = h0 @ P[pre + "attn_k"]
    v = h0 @ P[pre + "attn_v"]
    s = np.where(causal, q @ kk.transpose(0, 2, 1) / math.sqrt(d), -np.inf)
    s = s - s.max(axis=-1, keepdims=True)
    a = np.exp(s)
    a /= a.sum(axis=-1, keepdims=True)
    z = a @ v
    h1 = h0 + z @ P[pre + "attn_o"]
    u = h1 @ P[pre + "ff_w1"] + P[pre + "ff_b1"]
    r = np.maximum(u, 0.0)
    h2 = h1 + r @ P[pre + "ff_w2"] + P[pre + "ff_b2"]
    return h2, dict(h0=h0, q=q, kk=kk, v=v, a=a, z=z, h1=h1, u=u, r=r)


def _block_backward(P, pre, c, dh2, d, g):
    r, u, h1 = c["r"], c["u"], c["h1"]
    g[pre + "ff_w2"] = np.einsum("bth,btd->hd", r, dh2)
    g[pre + "ff_b2"] = dh2.sum(axis=(0, 1))
    du = (dh2 @ P[pre + "ff_w2"].T) * (u > 0)
    g[pre + "ff_w1"] = np.einsum("btd,bth->dh", h1, du)
    g[pre + "ff_b1"] = du.sum(axis=(0, 1))
    dh1 = dh2 + du @ P[pre + "ff_w1"].T

    h0, q, kk, v, a, z = c["h0"], c["q"], c["kk"], c["v"], c["a"], c["z"]
    g[pre + "attn_o"] = np.einsum("bte,btd->ed", z, dh1)
    dz = dh1 @ P[pre + "attn_o"].T
    da = dz @ v.transpose(0, 2, 1)
    dv = a.transpose(0, 2, 1) @ dz
    ds = a * (da - (da * a).sum(axis=-1, keepdims=True))
    scale = 1.0 / math.sqrt(d)
    dq = ds @ kk * scale
    dk = ds.transpose(0, 2, 1) @ q * scale
    g[pre + "attn_q"] = np.einsum("bte,btd->ed", h0, dq)
    g[pre + "attn_k"] = np.einsum("bte,btd->ed", h0, dk)
    g[pre + "attn_v"] = np.einsum("bte,btd->ed", h0, dv)
    return dh1 + dq @ P[pre + "attn_q"].T + dk @ P[pre + "attn_k"].T + dv @ P[pre + "attn_v"].T


def log_softmax(logits):
    mx = logits.max(axis=-1, keepdims=True)
    shifted = logits - mx
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def caption_loss(logits, target_ids) -> float:
    """Summed next-token cross-entropy over non-``<pad>`` targets."""
    logits = np.asarray(logits, dtype=np.float64)
    t = np.asarray(target_ids, dtype=np.int64)
    if t.size == 0 or not np.any(t != PAD_ID):
        raise InvalidInputError("empty target sequence")
    if logits.shape[:-1] != t.shape:
        raise ShapeError(f"logits {logits.shape} do not align with targets {t.shape}")
    lp = log_softmax(logits)
    picked = np.take_along_axis(lp, t[..., None], axis=-1)[..., 0]
    return float(-(picked * (t != PAD_ID)).sum())


def backward(params: ToyModelParams, cache: dict, logits, target_ids) -> dict:
    """Gradients of :func:`caption_loss` with respect to every parameter array."""
    m = params.dims
    P = params.arrays
    d, k = m.d, m.k
    t = np.asarray(target_ids, dtype=np.int64)
    if t.ndim == 1:
        t = t[None]
    B, L = t.shape
    mask = (t != PAD_ID).astype(np.float64)
    g = {}

    prob = np.exp(log_softmax(logits))
    dlogits = prob
    np.put_along_axis(dlogits, t[..., None], np.take_along_axis(prob, t[..., None], axis=-1) - 1.0, axis=-1)
    dlogits *= mask[..., None]

    hc = cache["hc"]
    g["out_w"] = np.einsum("bld,blv->dv", hc, dlogits)
    g["out_b"] = dlogits.sum(axis=(0, 1))
    dh = np.zeros_like(cache["h0"])
    dh[:, k:] = dlogits @ P["out_w"].T
    for i in reversed(range(m.n_layers)):
        dh = _block_backward(P, block_prefix(i, m), cache["blocks"][i], dh, d, g)
    dh0 = dh

    dpa = dh0[:, : m.prefix_audio].reshape(B, -1)
    dpt = dh0[:, m.prefix_audio : k].reshape(B, -1)
    dec = dh0[:, k:]

    tok = np.zeros_like(P["tok_emb"])
    np.add.at(tok, cache["cap"], dec)
    pos = np.zeros_like(P["pos_emb"])
    pos[:L] = dec.sum(axis=0)
    g["pos_emb"] = pos

    ha = cache["ha"]
    g["audio_w2"] = ha.T @ dpa
    g["audio_b2"] = dpa.sum(axis=0)
    dza = (dpa @ P["audio_w2"].T) * (1.0 - ha * ha)
    g["audio_w1"] = cache["f"].T @ dza
    g["audio_b1"] = dza.sum(axis=0)

    ht = cache["ht"]
    g["text_w2"] = ht.T @ dpt
    g["text_b2"] = dpt.sum(axis=0)
    dzt = (dpt @ P["text_w2"].T) * (1.0 - ht * ht)
    g["text_w1"] = cache["pmean"].T @ dzt
    g["text_b1"] = dzt.sum(axis=0)
    dpmean = dzt @ P["text_w1"].T
    per_tok = (dpmean / cache["pcount"])[:, None, :] * cache["pmask"][..., None]
    np.add.at(tok, cache["prompt"], per_tok)
    g["tok_emb"] = tok

    for name, grad in g.items():
        if not np.all(np.isfinite(grad)):
            raise DivergenceError(f"non-finite gradient in {name}")
    return g


def loss_and_grad(params: ToyModelParams, batch) -> tuple:
    """``batch`` is ``(features, prompt_ids, caption_in, caption_out)``."""
    f, p, cin, cout = batch
    logits, cache = forward(params, f, p, cin, return_cache=True)
    loss = caption_loss(logits, np.atleast_2d(cout))
    return loss, backward(params, cache, logits, cout)


# ---------------------------------------------------------------- decoding


def generate_ids(params: ToyModelParams, features, prompt_ids, max_len=None) -> np.ndarray:
    """Greedy decoding for a batch. Returns ``[B, <=max_len]`` ids, ``<pad>`` after ``<eos>``.

    ``max_len`` counts generated tokens (``<bos>`` excluded); ties resolve to
    the lowest token id.
    """
    m = params.dims
    f = np.atleast_2d(np.asarray(features, dtype=np.float64))
    p = np.atleast_2d(np.asarray(prompt_ids, dtype=np.int64))
    B = f.shape[0]
    max_len = m.max_len - 1 if max_len is None else min(int(max_len), m.max_len - 1)
    seq = np.full((B, 1), BOS_ID, dtype=np.int64)
    done = np.zeros(B, dtype=bool)
    out = []
    for _ in range(max_len):
        logits = forward(params, f, p, seq, return_cache=False)
        nxt = np.argmax(logits[:, -1], axis=-1)
        nxt = np.where(done, PAD_ID, nxt)
        out.append(nxt)
        done |= nxt == EOS_ID
        seq = np.concatenate([seq, np.where(nxt == PAD_ID, EOS_ID, nxt)[:, None]], axis=1)
        if done.all():
            break
    return np.stack(out, axis=1) if out else np.zeros((B, 0), dtype=np.int64)


def generate(params: ToyModelParams, vocab: Vocabulary, features, prompt_ids, max_len=None):
    """Greedy caption(s) as text: a string for one example, a list for a batch."""
    single = np.asarray(prompt_ids).ndim == 1
    ids = generate_ids(params, features, prompt_ids, max_len)
    texts = []
    for row in ids:
        toks = []
        for i in row:
            if i in (EOS_ID, PAD_ID):
                break
            toks.append(i)
        texts.append(vocab.detokenize(toks))
    return texts[0] if single else texts
