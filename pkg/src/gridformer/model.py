"""Lead-time-conditioned vision transformer over per-variable token grids.

The network embeds each physical variable with its own patch embedder (plus a
per-variable identity embedding), collapses the V tokens at each spatial
position into one token by cross-attention against a learnable query, adds a
learnable spatial positional embedding and a lead-time embedding, runs a
pre-norm transformer, and decodes every token back to a patch of all
vocabulary variables.  The sequence entering the backbone always has length
h*w regardless of how many variables arrive, which is what lets one set of
weights train on sources with different variable subsets.

Two structural variants reuse the same backbone: a token-subset forward for
rectangular regions of the full grid, and a multi-snapshot pooling head that
maps a history of input fields to a single output map per target.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import tensor as tz
from .grid import GridError, VariableVocabulary
from .tensor import ParamStore, Tensor


LEAD_TIME_SCALE = 168.0  # hours; normalizes the lead-time input to O(1)


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters plus the variable vocabulary.

    Desk-scale defaults; the reference configuration at publication scale
    (embed_dim 1024, depth 8, heads 16, 32 x 64 grid, dropout 0.1) is kept in
    configs/paper_scale.yaml for documentation.
    """

    vocabulary: tuple[str, ...]
    image_size: tuple[int, int] = (16, 32)   # H, W the positional embedding is built for
    patch_size: int = 2
    embed_dim: int = 64
    depth: int = 2
    heads: int = 4
    mlp_ratio: float = 4.0
    head_hidden_dim: int = 64
    head_depth: int = 2
    dropout: float = 0.0
    drop_path: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "vocabulary", tuple(self.vocabulary))
        object.__setattr__(self, "image_size", tuple(self.image_size))
        VariableVocabulary(self.vocabulary)  # validates uniqueness
        h, w = self.image_size
        if h % self.patch_size or w % self.patch_size:
            raise ModelError(f"patch size {self.patch_size} does not divide grid {h} x {w}")
        if self.embed_dim % self.heads:
            raise ModelError(f"embed dim {self.embed_dim} not divisible by {self.heads} heads")
        if self.head_depth != 2:
            raise ModelError("the prediction head is a 2-layer MLP")

    @property
    def tokens_hw(self) -> tuple[int, int]:
        return (self.image_size[0] // self.patch_size,
                self.image_size[1] // self.patch_size)

    @property
    def n_tokens(self) -> int:
        h, w = self.tokens_hw
        return h * w

    def var_index(self, name: str) -> int:
        try:
            return self.vocabulary.index(name)
        except ValueError:
            raise ModelError(f"variable {name!r} is not in the model vocabulary") from None

    def to_dict(self) -> dict:
        return {
            "vocabulary": list(self.vocabulary),
            "image_size": list(self.image_size),
            "patch_size": self.patch_size,
            "embed_dim": self.embed_dim,
            "depth": self.depth,
            "heads": self.heads,
            "mlp_ratio": self.mlp_ratio,
            "head_hidden_dim": self.head_hidden_dim,
            "head_depth": self.head_depth,
            "dropout": self.dropout,
            "drop_path": self.drop_path,
        }

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        d = dict(d)
        d["vocabulary"] = tuple(d["vocabulary"])
        d["image_size"] = tuple(d["image_size"])
        return ModelConfig(**d)


# -- parameters -------------------------------------------------------------------

def _attn_param_names(prefix: str) -> list[tuple[str, str]]:
    # no key bias: a bias shared by all keys shifts every attention score
    # equally and cancels in the softmax, leaving a gradient-free parameter
    return [(f"{prefix}.wq", "w"), (f"{prefix}.wk", "w"), (f"{prefix}.wv", "w"),
            (f"{prefix}.wo", "w"), (f"{prefix}.bq", "b"), (f"{prefix}.bv", "b"),
            (f"{prefix}.bo", "b")]


def init_params(config: ModelConfig, seed: int, dtype=None) -> ParamStore:
    """Seeded parameter initialization; names are stable across runs."""
    rng = np.random.default_rng(seed)
    dtype = dtype or tz.default_dtype()
    d = config.embed_dim
    p2 = config.patch_size ** 2
    hidden = int(d * config.mlp_ratio)
    store = ParamStore()

    def normal(shape, std=0.02):
        return Tensor(rng.normal(0.0, std, size=shape).astype(dtype), dtype=dtype)

    def zeros(shape):
        return Tensor(np.zeros(shape, dtype=dtype), dtype=dtype)

    def ones(shape):
        return Tensor(np.ones(shape, dtype=dtype), dtype=dtype)

    for name in config.vocabulary:
        store.add(f"embed.{name}.weight", normal((p2, d)))
        store.add(f"embed.{name}.bias", zeros((d,)))
    store.add("varpos", normal((len(config.vocabulary), d)))
    store.add("pos_embed", normal((config.n_tokens, d)))
    store.add("lead_embed.weight", normal((1, d)))
    store.add("lead_embed.bias", zeros((d,)))

    store.add("agg.query", normal((d,)))
    for name, kind in _attn_param_names("agg"):
        store.add(name, normal((d, d)) if kind == "w" else zeros((d,)))

    for i in range(config.depth):
        b = f"blocks.{i}"
        store.add(f"{b}.ln1.gamma", ones((d,)))
        store.add(f"{b}.ln1.beta", zeros((d,)))
        for name, kind in _attn_param_names(f"{b}.attn"):
            store.add(name, normal((d, d)) if kind == "w" else zeros((d,)))
        store.add(f"{b}.ln2.gamma", ones((d,)))
        store.add(f"{b}.ln2.beta", zeros((d,)))
        store.add(f"{b}.mlp.fc1.weight", normal((d, hidden)))
        store.add(f"{b}.mlp.fc1.bias", zeros((hidden,)))
        store.add(f"{b}.mlp.fc2.weight", normal((hidden, d)))
        store.add(f"{b}.mlp.fc2.bias", zeros((d,)))

    store.add("norm.gamma", ones((d,)))
    store.add("norm.beta", zeros((d,)))
    store.add("head.fc1.weight", normal((d, config.head_hidden_dim)))
    store.add("head.fc1.bias", zeros((config.head_hidden_dim,)))
    store.add("head.fc2.weight", normal((config.head_hidden_dim, len(config.vocabulary) * p2)))
    store.add("head.fc2.bias", zeros((len(config.vocabulary) * p2,)))
    return store


DECAY_EXEMPT_PARAMS = ("pos_embed", "varpos")  # positional embeddings skip weight decay


def add_projection_params(store: ParamStore, config: ModelConfig, n_targets: int,
                          out_shape: tuple[int, int], seed: int, dtype=None) -> ParamStore:
    """Fresh history-pooling attention and linear map head for projection tasks."""
    rng = np.random.default_rng(seed)
    dtype = dtype or tz.default_dtype()
    d = config.embed_dim
    h, w = out_shape

    def normal(shape, std=0.02):
        return Tensor(rng.normal(0.0, std, size=shape).astype(dtype), dtype=dtype)

    store.add("hist.query", normal((d,)))
    for name, kind in _attn_param_names("hist"):
        store.add(name, normal((d, d)) if kind == "w" else
                  Tensor(np.zeros((d,), dtype=dtype), dtype=dtype))
    store.add("proj_head.weight", normal((d, n_targets * h * w)))
    store.add("proj_head.bias", Tensor(np.zeros((n_targets * h * w,), dtype=dtype), dtype=dtype))
    return store


# -- patch <-> field --------------------------------------------------------------

def patchify(values: np.ndarray, patch_size: int) -> np.ndarray:
    """(..., H, W) -> (..., h*w, p*p) non-overlapping patches, row-major."""
    p = patch_size
    *lead, hh, ww = values.shape
    if hh % p or ww % p:
        raise ModelError(f"patch size {p} does not divide field {hh} x {ww}")
    h, w = hh // p, ww // p
    x = values.reshape(*lead, h, p, w, p)
    x = np.moveaxis(x, -3, -2)                     # (..., h, w, p, p)
    return np.ascontiguousarray(x.reshape(*lead, h * w, p * p))


def unpatchify(patches: np.ndarray, h: int, w: int, patch_size: int) -> np.ndarray:
    """Bit-exact inverse of `patchify` for a known token grid h x w."""
    p = patch_size
    *lead, s, p2 = patches.shape
    if s != h * w or p2 != p * p:
        raise ModelError(f"cannot unpatchify {patches.shape} into {h} x {w} tokens of {p} x {p}")
    x = patches.reshape(*lead, h, w, p, p)
    x = np.moveaxis(x, -2, -3)                     # (..., h, p, w, p)
    return np.ascontiguousarray(x.reshape(*lead, h * p, w * p))


def _unpatchify_t(patches: Tensor, n_vars: int, h: int, w: int, p: int) -> Tensor:
    """(B, h*w, n_vars*p*p) tokens -> (B, n_vars, H, W) fields, inside the graph."""
    b = patches.shape[0]
    x = patches.reshape(b, h, w, n_vars, p, p)
    x = tz.transpose(x, (0, 3, 1, 4, 2, 5))        # (B, V, h, p, w, p)
    return x.reshape(b, n_vars, h * p, w * p)


# -- forward pieces ----------------------------------------------------------------

def tokenize_and_embed(values: np.ndarray, variables: Sequence[str],
                       params: ParamStore, config: ModelConfig) -> Tensor:
    """Per-variable patch embedding: (B, V, H, W) -> (B, V, S, D) tokens.

    Each vocabulary variable owns its p^2 -> D linear map; its identity
    embedding row is added to every one of its tokens.
    """
    values = np.asarray(values)
    if values.ndim != 4:
        raise ModelError(f"expected (B, V, H, W) values, got shape {values.shape}")
    if values.shape[1] != len(variables):
        raise ModelError(f"{values.shape[1]} fields but {len(variables)} variable names")
    patches = patchify(values, config.patch_size)   # (B, V, S, p^2)
    per_var = []
    for i, name in enumerate(variables):
        if name not in config.vocabulary:
            raise ModelError(f"variable {name!r} is not in the model vocabulary")
        x = Tensor(patches[:, i])
        emb = x @ params[f"embed.{name}.weight"] + params[f"embed.{name}.bias"]
        emb = emb + params["varpos"][config.var_index(name)]
        per_var.append(emb)
    return tz.stack(per_var, axis=1)


def aggregate_variables(tokens: Tensor, params: ParamStore, config: ModelConfig) -> Tensor:
    """Per-position cross-attention pooling: (B, V, S, D) -> (B, S, D).

    One learnable query (shared across positions) attends over the V variable
    tokens at each position, so the output length never depends on V.
    """
    b, v, s, d = tokens.shape
    kv = tz.transpose(tokens, (0, 2, 1, 3))          # (B, S, V, D)
    q = params["agg.query"].reshape(1, 1, 1, d)
    out = tz.multi_head_attention(
        q, kv, kv, config.heads,
        params["agg.wq"], params["agg.wk"], params["agg.wv"], params["agg.wo"],
        bq=params["agg.bq"], bv=params["agg.bv"], bo=params["agg.bo"])
    return out.reshape(b, s, d)


def embed_lead_time(dt_hours, params: ParamStore) -> Tensor:
    """Map lead times (hours) to embedding vectors: (B,) -> (B, D)."""
    dt = np.atleast_1d(np.asarray(dt_hours, dtype=params["lead_embed.weight"].data.dtype))
    if np.any(dt <= 0.0):
        raise ModelError(f"lead time must be positive, got {dt.min()} h")
    x = Tensor((dt / LEAD_TIME_SCALE).reshape(-1, 1))
    return x @ params["lead_embed.weight"] + params["lead_embed.bias"]


def _block(x: Tensor, i: int, params: ParamStore, config: ModelConfig,
           train: bool, rng) -> Tensor:
    b = f"blocks.{i}"
    # stochastic-depth rate scales linearly with depth, reaching drop_path last
    dp_rate = config.drop_path * i / max(config.depth - 1, 1)
    h = tz.layer_norm(x, params[f"{b}.ln1.gamma"], params[f"{b}.ln1.beta"])
    h = tz.multi_head_attention(
        h, h, h, config.heads,
        params[f"{b}.attn.wq"], params[f"{b}.attn.wk"],
        params[f"{b}.attn.wv"], params[f"{b}.attn.wo"],
        bq=params[f"{b}.attn.bq"], bv=params[f"{b}.attn.bv"], bo=params[f"{b}.attn.bo"])
    h = tz.dropout(h, config.dropout, rng, train)
    x = x + tz.drop_path(h, dp_rate, rng, train)
    h = tz.layer_norm(x, params[f"{b}.ln2.gamma"], params[f"{b}.ln2.beta"])
    h = tz.gelu(h @ params[f"{b}.mlp.fc1.weight"] + params[f"{b}.mlp.fc1.bias"])
    h = h @ params[f"{b}.mlp.fc2.weight"] + params[f"{b}.mlp.fc2.bias"]
    h = tz.dropout(h, config.dropout, rng, train)
    return x + tz.drop_path(h, dp_rate, rng, train)


def _encode(values: np.ndarray, variables: Sequence[str], params: ParamStore,
            config: ModelConfig, lead: Tensor | None, pos_index: np.ndarray | None,
            train: bool, rng, trace: dict | None) -> Tensor:
    """Shared trunk: tokens -> aggregated sequence -> transformer -> (B, S, D)."""
    tokens = tokenize_and_embed(values, variables, params, config)
    x = aggregate_variables(tokens, params, config)
    if trace is not None:
        trace["backbone_seq_len"] = x.shape[1]
    pos = params["pos_embed"]
    if pos_index is not None:
        pos = tz.index_select(pos, 0, pos_index)
    x = x + pos
    if lead is not None:
        x = x + lead.reshape(lead.shape[0], 1, lead.shape[1])
    x = tz.dropout(x, config.dropout, rng, train)
    for i in range(config.depth):
        x = _block(x, i, params, config, train, rng)
    return tz.layer_norm(x, params["norm.gamma"], params["norm.beta"])


def _head(x: Tensor, params: ParamStore) -> Tensor:
    h = tz.gelu(x @ params["head.fc1.weight"] + params["head.fc1.bias"])
    return h @ params["head.fc2.weight"] + params["head.fc2.bias"]


def forward_batch(values: np.ndarray, variables: Sequence[str], dt_hours,
                  params: ParamStore, config: ModelConfig, *,
                  train: bool = False, rng=None, trace: dict | None = None) -> Tensor:
    """Full pipeline on (B, V, H, W) inputs -> (B, |vocab|, H, W) predictions."""
    values = np.asarray(values)
    hh, ww = values.shape[-2:]
    h, w = hh // config.patch_size, ww // config.patch_size
    if h * w != config.n_tokens:
        raise ModelError(f"input grid {hh} x {ww} implies {h * w} tokens but the positional "
                         f"embedding holds {config.n_tokens}; interpolate it first")
    dt = np.broadcast_to(np.atleast_1d(np.asarray(dt_hours, dtype=np.float64)),
                         (values.shape[0],))
    lead = embed_lead_time(dt, params)
    x = _encode(values, variables, params, config, lead, None, train, rng, trace)
    y = _head(x, params)
    return _unpatchify_t(y, len(config.vocabulary), h, w, config.patch_size)


def select_variables(pred: Tensor, config: ModelConfig, targets: Sequence[str]) -> Tensor:
    """Slice (B, |vocab|, H, W) predictions down to the requested variables."""
    idx = np.array([config.var_index(t) for t in targets], dtype=np.int64)
    return tz.index_select(pred, 1, idx)


def forward(values: np.ndarray, variables: Sequence[str], dt_hours: float,
            params: ParamStore, config: ModelConfig, targets: Sequence[str] | None = None,
            *, train: bool = False, rng=None, trace: dict | None = None) -> Tensor:
    """Single-sample forward: (V, H, W) -> (V', H, W) for the requested targets."""
    values = np.asarray(values)
    if values.ndim != 3:
        raise ModelError(f"expected a (V, H, W) sample, got shape {values.shape}")
    pred = forward_batch(values[None], variables, dt_hours, params, config,
                         train=train, rng=rng, trace=trace)
    if targets is not None:
        pred = select_variables(pred, config, targets)
    return pred[0]


# -- token-subset (regional) forward ----------------------------------------------

def rect_from_mask(mask: np.ndarray) -> tuple[slice, slice]:
    """Validate a boolean token mask as one contiguous rectangle; return its slices."""
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2:
        raise ModelError(f"token mask must be 2-d over the token grid, got {mask.shape}")
    rows = np.nonzero(mask.any(axis=1))[0]
    cols = np.nonzero(mask.any(axis=0))[0]
    if rows.size == 0:
        raise ModelError("token mask selects no positions")
    r = slice(int(rows[0]), int(rows[-1]) + 1)
    c = slice(int(cols[0]), int(cols[-1]) + 1)
    expect = np.zeros_like(mask)
    expect[r, c] = True
    if not np.array_equal(mask, expect):
        raise ModelError("token mask is not a contiguous rectangle")
    return r, c


def forward_token_subset(values: np.ndarray, variables: Sequence[str], dt_hours,
                         mask: np.ndarray, params: ParamStore, config: ModelConfig, *,
                         train: bool = False, rng=None, trace: dict | None = None) -> Tensor:
    """Run the pipeline on the retained token rectangle only.

    `values` covers just the retained patches, (B?, V, hr*p, wc*p); `mask` is a
    boolean (h, w) map over the full token grid marking where those patches
    live so the right positional-embedding rows are gathered.  The prediction
    covers exactly the retained patches.
    """
    values = np.asarray(values)
    squeeze = values.ndim == 3
    if squeeze:
        values = values[None]
    r, c = rect_from_mask(mask)
    h, w = config.tokens_hw
    if r.stop > h or c.stop > w:
        raise ModelError(f"token mask {mask.shape} exceeds the {h} x {w} token grid")
    hr, wc = r.stop - r.start, c.stop - c.start
    p = config.patch_size
    if values.shape[-2:] != (hr * p, wc * p):
        raise ModelError(f"cropped values {values.shape[-2:]} do not match the "
                         f"{hr} x {wc} retained token rectangle (patch {p})")
    pos_index = (np.arange(r.start, r.stop)[:, None] * w
                 + np.arange(c.start, c.stop)[None, :]).reshape(-1)

    dt = np.broadcast_to(np.atleast_1d(np.asarray(dt_hours, dtype=np.float64)),
                         (values.shape[0],))
    lead = embed_lead_time(dt, params)
    x = _encode(values, variables, params, config, lead, pos_index, train, rng, trace)
    y = _head(x, params)
    out = _unpatchify_t(y, len(config.vocabulary), hr, wc, p)
    return out[0] if squeeze else out


# -- positional-embedding resizing --------------------------------------------------

def interpolate_pos_embed(pos: np.ndarray, src_hw: tuple[int, int],
                          dst_hw: tuple[int, int]) -> np.ndarray:
    """Bilinear resize of a (h1*w1, D) positional table to (h2*w2, D).

    Index-space interpolation with endpoints pinned, so the identity resize is
    bit-exact and per-axis-linear tables stay linear.
    """
    h1, w1 = src_hw
    h2, w2 = dst_hw
    d = pos.shape[-1]
    if pos.shape != (h1 * w1, d):
        raise ModelError(f"positional table {pos.shape} does not match grid {src_hw}")
    if (h1, w1) == (h2, w2):
        return pos.copy()
    grid = pos.reshape(h1, w1, d)

    def axis_coords(n_src: int, n_dst: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if n_dst == 1 or n_src == 1:
            lo = np.zeros(n_dst, dtype=np.int64)
            return lo, lo.copy(), np.zeros(n_dst)
        x = np.arange(n_dst) * (n_src - 1) / (n_dst - 1)
        lo = np.floor(x).astype(np.int64)
        lo = np.minimum(lo, n_src - 2)
        return lo, lo + 1, x - lo

    r0, r1, wr = axis_coords(h1, h2)
    c0, c1, wc = axis_coords(w1, w2)
    top = grid[r0][:, c0] * (1 - wc)[None, :, None] + grid[r0][:, c1] * wc[None, :, None]
    bot = grid[r1][:, c0] * (1 - wc)[None, :, None] + grid[r1][:, c1] * wc[None, :, None]
    out = top * (1 - wr)[:, None, None] + bot * wr[:, None, None]
    return np.ascontiguousarray(out.reshape(h2 * w2, d), dtype=pos.dtype)


def resize_pos_embed(params: ParamStore, config: ModelConfig,
                     new_image_size: tuple[int, int]) -> tuple[ParamStore, ModelConfig]:
    """Adapt a parameter store to a new grid; every other tensor is copied as-is."""
    new_cfg = replace(config, image_size=tuple(new_image_size))
    out = ParamStore()
    for name, t in params.items():
        if name == "pos_embed":
            resized = interpolate_pos_embed(t.data, config.tokens_hw, new_cfg.tokens_hw)
            out.add(name, Tensor(resized, dtype=t.data.dtype))
        else:
            out.add(name, Tensor(t.data.copy(), dtype=t.data.dtype))
    return out, new_cfg


# -- history-pooled projection forward ----------------------------------------------

def projection_forward(history: np.ndarray, variables: Sequence[str],
                       params: ParamStore, config: ModelConfig, n_targets: int, *,
                       train: bool = False, rng=None, trace: dict | None = None) -> Tensor:
    """Map a (B?, T, V, H, W) history of inputs to (B?, n_targets, H, W) fields.

    Every slice runs through the shared trunk (no lead-time conditioning),
    tokens are mean-pooled per slice, and a learnable query cross-attends over
    the T pooled vectors before a linear map to the output grid.  The T slices
    form an unordered set: no temporal positional signal is added.
    """
    history = np.asarray(history)
    squeeze = history.ndim == 4
    if squeeze:
        history = history[None]
    if history.ndim != 5:
        raise ModelError(f"expected (B, T, V, H, W) history, got shape {history.shape}")
    b, t = history.shape[:2]
    if t == 0:
        raise ModelError("history must contain at least one snapshot")
    hh, ww = history.shape[-2:]

    flat = history.reshape(b * t, *history.shape[2:])
    x = _encode(flat, variables, params, config, None, None, train, rng, trace)
    pooled = x.mean(axis=1)                          # (B*T, D)
    d = pooled.shape[-1]
    seq = pooled.reshape(b, t, d)

    q = params["hist.query"].reshape(1, 1, d)
    agg, attn = tz.multi_head_attention(
        q, seq, seq, config.heads,
        params["hist.wq"], params["hist.wk"], params["hist.wv"], params["hist.wo"],
        bq=params["hist.bq"], bv=params["hist.bv"], bo=params["hist.bo"],
        return_weights=True)
    if trace is not None:
        trace["history_attn"] = attn.data
    agg = agg.reshape(b, d)

    y = agg @ params["proj_head.weight"] + params["proj_head.bias"]
    out = y.reshape(b, n_targets, hh, ww)
    return out[0] if squeeze else out
