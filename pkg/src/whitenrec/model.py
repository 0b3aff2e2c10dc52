"""Self-attentive next-item model with hand-written backward passes.

Layout conventions: item matrices are (n_items, d_model); a batch of
sequences is right-padded to shape (batch, length) so that causal attention
never lets a real position see padding.  The user representation is the
hidden state at each sequence's last real position.
"""
from collections import OrderedDict
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .exceptions import ConfigError, DegenerateInputError, NumericError

LN_EPS = 1e-8


class Variant(str, Enum):
    ID = "id"
    TEXT = "text"
    TEXT_PLUS_ID = "text_plus_id"
    WHITEN = "whiten"
    WHITEN_PLUS = "whiten_plus"

    @property
    def uses_ids(self):
        return self in (Variant.ID, Variant.TEXT_PLUS_ID)

    @property
    def feature_inputs(self):
        """Names of the frozen feature matrices this variant reads."""
        return {
            Variant.ID: (),
            Variant.TEXT: ("text",),
            Variant.TEXT_PLUS_ID: ("text",),
            Variant.WHITEN: ("full",),
            Variant.WHITEN_PLUS: ("full", "relaxed"),
        }[self]


class Combine(str, Enum):
    SUM = "sum"
    CONCAT = "concat"


class TargetStyle(str, Enum):
    LAST_ONLY = "last_only"
    ALL_POSITIONS = "all_positions"


def _parse(enum, value, what):
    if isinstance(value, enum):
        return value
    try:
        return enum(str(value).lower())
    except ValueError:
        valid = ", ".join(m.value for m in enum)
        raise ConfigError(f"unknown {what} {value!r}; expected one of {valid}") from None


@dataclass
class ModelConfig:
    variant: Variant
    n_items: int
    d_model: int = 64
    n_blocks: int = 2
    n_heads: int = 2
    max_seq_len: int = 50
    head_depth: int = 2
    combine: Combine = Combine.SUM
    dropout: float = 0.2
    feature_dim: int = 0

    def __post_init__(self):
        self.variant = _parse(Variant, self.variant, "variant")
        self.combine = _parse(Combine, self.combine, "combine mode")
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if self.max_seq_len < 2:
            raise ConfigError("max_seq_len must be at least 2")
        if not 0 <= self.head_depth <= 3:
            raise ConfigError("head_depth must be between 0 and 3")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.combine is Combine.CONCAT and self.variant is not Variant.WHITEN_PLUS:
            raise ConfigError("concat combining only applies to the whiten_plus variant")
        if self.variant.feature_inputs and self.feature_dim < 1:
            raise ConfigError(f"variant {self.variant.value} needs item features")


# ---------------------------------------------------------------- primitives

def _relu(x):
    return np.maximum(x, 0.0)


def _softmax(x):
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _log_softmax(x):
    z = x - x.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _layer_norm(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + LN_EPS)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv)


def _layer_norm_backward(dy, g, cache):
    xhat, inv = cache
    d = xhat.shape[-1]
    dxhat = dy * g
    dx = inv / d * (d * dxhat - dxhat.sum(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True))
    return dx, (dy * xhat).reshape(-1, d).sum(axis=0), dy.reshape(-1, d).sum(axis=0)


def _dropout_mask(shape, rate, rng):
    if rng is None or rate == 0.0:
        return None
    return (rng.random(shape) >= rate) / (1.0 - rate)


def _flat(x):
    return x.reshape(-1, x.shape[-1])


# ---------------------------------------------------------------- network

class SeqRecNet:
    """Parameters plus forward/backward passes for one model configuration.

    ``params`` holds every trainable tensor in declaration order; ``frozen``
    holds the fixed item feature matrices (raw text or whitened text), which
    are never updated and never receive gradients.
    """

    def __init__(self, config, params=None, frozen=None):
        self.config = config
        self.params = params if params is not None else OrderedDict()
        self.frozen = dict(frozen or {})
        for name in config.variant.feature_inputs:
            if name not in self.frozen:
                raise ConfigError(f"variant {config.variant.value} requires the {name!r} feature matrix")
            if self.frozen[name].shape != (config.n_items, config.feature_dim):
                raise ConfigError(f"feature matrix {name!r} has shape {self.frozen[name].shape}, "
                                  f"expected {(config.n_items, config.feature_dim)}")

    # -- construction

    @classmethod
    def initialize(cls, config, frozen, rng):
        c = config
        d = c.d_model
        p = OrderedDict()

        def linear(name, fan_in, fan_out):
            std = np.sqrt(2.0 / (fan_in + fan_out))
            p[f"{name}.W"] = rng.normal(0.0, std, size=(fan_in, fan_out))
            p[f"{name}.b"] = np.zeros(fan_out)

        if c.variant.uses_ids:
            p["item_emb"] = rng.normal(0.0, 1.0 / np.sqrt(d), size=(c.n_items, d))
        if c.variant.feature_inputs:
            fan_in = c.feature_dim
            for i in range(c.head_depth + 1):
                linear(f"head{i}", fan_in, d)
                fan_in = d
            if c.combine is Combine.CONCAT:
                linear("combine", 2 * d, d)
            elif c.variant is Variant.WHITEN_PLUS:
                # two summed branches of one head: start the sum at single-branch scale
                p[f"head{c.head_depth}.W"] *= 0.5
        p["pos_emb"] = rng.normal(0.0, 1.0 / np.sqrt(d), size=(c.max_seq_len, d))
        for k in range(c.n_blocks):
            for proj in ("q", "k", "v", "o"):
                linear(f"block{k}.attn_{proj}", d, d)
            # key bias cancels inside the softmax, so it is not a parameter
            del p[f"block{k}.attn_k.b"]
            p[f"block{k}.ln1.g"] = np.ones(d)
            p[f"block{k}.ln1.b"] = np.zeros(d)
            linear(f"block{k}.ffn1", d, d)
            linear(f"block{k}.ffn2", d, d)
            p[f"block{k}.ln2.g"] = np.ones(d)
            p[f"block{k}.ln2.b"] = np.zeros(d)
        return cls(config, p, frozen)

    def n_parameters(self):
        return int(sum(v.size for v in self.params.values()))

    def copy(self):
        return SeqRecNet(self.config, OrderedDict((k, v.copy()) for k, v in self.params.items()),
                         self.frozen)

    # -- item encoder

    def _head(self, X):
        p = self.params
        depth = self.config.head_depth
        h = X
        cache = []
        for i in range(depth + 1):
            z = h @ p[f"head{i}.W"] + p[f"head{i}.b"]
            cache.append((h, z))
            h = _relu(z) if i < depth else z
        return h, cache

    def _head_backward(self, dout, cache, grads):
        p = self.params
        depth = self.config.head_depth
        d = dout
        for i in range(depth, -1, -1):
            h, z = cache[i]
            if i < depth:
                d = d * (z > 0)
            grads[f"head{i}.W"] += h.T @ d
            grads[f"head{i}.b"] += d.sum(axis=0)
            if i:
                d = d @ p[f"head{i}.W"].T

    def encode_items(self, return_cache=False):
        """Item representation matrix of shape (n_items, d_model)."""
        c = self.config
        v = c.variant
        cache = {}
        if v is Variant.ID:
            V = self.params["item_emb"]
        elif v in (Variant.TEXT, Variant.TEXT_PLUS_ID):
            V, cache["text"] = self._head(self.frozen["text"])
            if v is Variant.TEXT_PLUS_ID:
                V = V + self.params["item_emb"]
        elif v is Variant.WHITEN:
            V, cache["full"] = self._head(self.frozen["full"])
        else:
            Vf, cache["full"] = self._head(self.frozen["full"])
            Vr, cache["relaxed"] = self._head(self.frozen["relaxed"])
            if c.combine is Combine.SUM:
                V = Vf + Vr
            else:
                both = np.concatenate([Vf, Vr], axis=1)
                cache["concat"] = both
                V = both @ self.params["combine.W"] + self.params["combine.b"]
        return (V, cache) if return_cache else V

    def _items_backward(self, dV, cache, grads):
        c = self.config
        v = c.variant
        if v.uses_ids:
            grads["item_emb"] += dV
        if v in (Variant.TEXT, Variant.TEXT_PLUS_ID):
            self._head_backward(dV, cache["text"], grads)
        elif v is Variant.WHITEN:
            self._head_backward(dV, cache["full"], grads)
        elif v is Variant.WHITEN_PLUS:
            if c.combine is Combine.CONCAT:
                grads["combine.W"] += cache["concat"].T @ dV
                grads["combine.b"] += dV.sum(axis=0)
                dboth = dV @ self.params["combine.W"].T
                d = c.d_model
                dVf, dVr = dboth[:, :d], dboth[:, d:]
            else:
                dVf = dVr = dV
            self._head_backward(dVf, cache["full"], grads)
            self._head_backward(dVr, cache["relaxed"], grads)

    # -- sequence encoder

    def _attention(self, x, k, mask, rng):
        p = self.params
        B, L, d = x.shape
        h = self.config.n_heads
        dk = d // h
        pre = f"block{k}.attn_"
        q = (x @ p[pre + "q.W"] + p[pre + "q.b"]).reshape(B, L, h, dk).transpose(0, 2, 1, 3)
        kk = (x @ p[pre + "k.W"]).reshape(B, L, h, dk).transpose(0, 2, 1, 3)
        v = (x @ p[pre + "v.W"] + p[pre + "v.b"]).reshape(B, L, h, dk).transpose(0, 2, 1, 3)
        scores = np.where(mask, q @ kk.transpose(0, 1, 3, 2) / np.sqrt(dk), -np.inf)
        a = _softmax(scores)
        o = (a @ v).transpose(0, 2, 1, 3).reshape(B, L, d)
        out = o @ p[pre + "o.W"] + p[pre + "o.b"]
        drop = _dropout_mask(out.shape, self.config.dropout, rng)
        if drop is not None:
            out = out * drop
        return out, (x, q, kk, v, a, o, drop)

    def _attention_backward(self, dout, k, cache, grads):
        p = self.params
        x, q, kk, v, a, o, drop = cache
        B, L, d = x.shape
        h = self.config.n_heads
        dk = d // h
        pre = f"block{k}.attn_"
        if drop is not None:
            dout = dout * drop
        grads[pre + "o.W"] += _flat(o).T @ _flat(dout)
        grads[pre + "o.b"] += _flat(dout).sum(axis=0)
        do = (dout @ p[pre + "o.W"].T).reshape(B, L, h, dk).transpose(0, 2, 1, 3)
        da = do @ v.transpose(0, 1, 3, 2)
        dv = a.transpose(0, 1, 3, 2) @ do
        ds = a * (da - (da * a).sum(axis=-1, keepdims=True)) / np.sqrt(dk)
        dq = ds @ kk
        dkk = ds.transpose(0, 1, 3, 2) @ q

        def merge(t):
            return t.transpose(0, 2, 1, 3).reshape(B * L, d)

        dq, dkk, dv = merge(dq), merge(dkk), merge(dv)
        xf = _flat(x)
        grads[pre + "q.W"] += xf.T @ dq
        grads[pre + "q.b"] += dq.sum(axis=0)
        grads[pre + "k.W"] += xf.T @ dkk
        grads[pre + "v.W"] += xf.T @ dv
        grads[pre + "v.b"] += dv.sum(axis=0)
        dx = dq @ p[pre + "q.W"].T + dkk @ p[pre + "k.W"].T + dv @ p[pre + "v.W"].T
        return dx.reshape(B, L, d)

    def _block(self, x, k, mask, rng):
        p = self.params
        pre = f"block{k}."
        att, att_cache = self._attention(x, k, mask, rng)
        h1, ln1 = _layer_norm(x + att, p[pre + "ln1.g"], p[pre + "ln1.b"])
        f1 = h1 @ p[pre + "ffn1.W"] + p[pre + "ffn1.b"]
        r = _relu(f1)
        f2 = r @ p[pre + "ffn2.W"] + p[pre + "ffn2.b"]
        drop = _dropout_mask(f2.shape, self.config.dropout, rng)
        if drop is not None:
            f2 = f2 * drop
        h2, ln2 = _layer_norm(h1 + f2, p[pre + "ln2.g"], p[pre + "ln2.b"])
        return h2, (att_cache, ln1, h1, f1, r, drop, ln2)

    def _block_backward(self, dh2, k, cache, grads):
        p = self.params
        pre = f"block{k}."
        att_cache, ln1, h1, f1, r, drop, ln2 = cache
        dres2, dg, db = _layer_norm_backward(dh2, p[pre + "ln2.g"], ln2)
        grads[pre + "ln2.g"] += dg
        grads[pre + "ln2.b"] += db
        df2 = dres2 if drop is None else dres2 * drop
        grads[pre + "ffn2.W"] += _flat(r).T @ _flat(df2)
        grads[pre + "ffn2.b"] += _flat(df2).sum(axis=0)
        df1 = (df2 @ p[pre + "ffn2.W"].T) * (f1 > 0)
        grads[pre + "ffn1.W"] += _flat(h1).T @ _flat(df1)
        grads[pre + "ffn1.b"] += _flat(df1).sum(axis=0)
        dh1 = dres2 + df1 @ p[pre + "ffn1.W"].T
        dres1, dg, db = _layer_norm_backward(dh1, p[pre + "ln1.g"], ln1)
        grads[pre + "ln1.g"] += dg
        grads[pre + "ln1.b"] += db
        return dres1 + self._attention_backward(dres1, k, att_cache, grads)

    def encode_batch(self, V, items, rng=None):
        """Hidden states (batch, length, d_model) for right-padded item indices.

        ``rng`` enables dropout (training mode); ``None`` means evaluation.
        """
        B, L = items.shape
        if L > self.config.max_seq_len:
            raise DegenerateInputError(f"sequence length {L} exceeds max_seq_len")
        x = V[items] + self.params["pos_emb"][:L]
        drop = _dropout_mask(x.shape, self.config.dropout, rng)
        if drop is not None:
            x = x * drop
        mask = np.tril(np.ones((L, L), dtype=bool))
        caches = []
        for k in range(self.config.n_blocks):
            x, cache = self._block(x, k, mask, rng)
            caches.append(cache)
        return x, (items, drop, caches)

    def _encode_backward(self, dH, enc_cache, dV, grads):
        items, drop, caches = enc_cache
        for k in range(self.config.n_blocks - 1, -1, -1):
            dH = self._block_backward(dH, k, caches[k], grads)
        if drop is not None:
            dH = dH * drop
        L = items.shape[1]
        grads["pos_emb"][:L] += dH.sum(axis=0)
        np.add.at(dV, items.ravel(), _flat(dH))

    # -- objective

    def forward_loss(self, items, targets, rng=None, batch_index=0):
        """Mean cross-entropy over all positions with ``targets >= 0``.

        Scores cover the full item set (no negative sampling).
        """
        V, item_cache = self.encode_items(return_cache=True)
        H, enc_cache = self.encode_batch(V, items, rng)
        sel = targets >= 0
        n_sup = int(sel.sum())
        if n_sup == 0:
            raise DegenerateInputError("batch has no supervised position")
        S = H[sel]
        with np.errstate(invalid="ignore", over="ignore"):
            logp = _log_softmax(S @ V.T)
        tgt = targets[sel]
        loss = float(-logp[np.arange(n_sup), tgt].mean())
        if not np.isfinite(loss):
            raise NumericError(f"non-finite loss in batch {batch_index}")
        return loss, (V, item_cache, enc_cache, S, sel, logp, tgt, H.shape)

    def backward(self, cache):
        """Gradients of the last :meth:`forward_loss` for every trainable tensor."""
        V, item_cache, enc_cache, S, sel, logp, tgt, hshape = cache
        grads = OrderedDict((k, np.zeros_like(v)) for k, v in self.params.items())
        n_sup = S.shape[0]
        dlogits = np.exp(logp)
        dlogits[np.arange(n_sup), tgt] -= 1.0
        dlogits /= n_sup
        dV = dlogits.T @ S
        dH = np.zeros(hshape)
        dH[sel] = dlogits @ V
        self._encode_backward(dH, enc_cache, dV, grads)
        self._items_backward(dV, item_cache, grads)
        return grads

    # -- inference

    def user_vectors(self, sequences, V=None, batch_size=512):
        """Last-position representation for each sequence (truncated to the most recent items)."""
        if V is None:
            V = self.encode_items()
        L_max = self.config.max_seq_len
        seqs = [np.asarray(s, dtype=np.int64)[-L_max:] for s in sequences]
        lengths = np.array([len(s) for s in seqs], dtype=np.int64)
        if lengths.size and lengths.min() < 1:
            raise DegenerateInputError("cannot encode an empty sequence")
        # batches of similar length waste less work on padding
        order = np.argsort(lengths, kind="stable")
        out = np.empty((len(seqs), self.config.d_model))
        for start in range(0, len(seqs), batch_size):
            idx = order[start:start + batch_size]
            lens = lengths[idx]
            items = np.zeros((len(idx), lens.max()), dtype=np.int64)
            for row, i in enumerate(idx):
                items[row, :lens[row]] = seqs[i]
            H, _ = self.encode_batch(V, items)
            out[idx] = H[np.arange(len(idx)), lens - 1]
        return out

    def scores(self, sequences, V=None):
        """Dot-product score of every item for each sequence, shape (n_seq, n_items)."""
        if V is None:
            V = self.encode_items()
        return self.user_vectors(sequences, V) @ V.T


def make_batch(prefixes, max_seq_len, target_style=TargetStyle.ALL_POSITIONS):
    """Right-padded ``(items, targets)`` arrays for next-item training.

    Each prefix ``p`` (length >= 2) contributes inputs ``p[:-1]`` and targets
    ``p[1:]``, keeping the most recent ``max_seq_len`` steps.  Unsupervised
    slots hold ``-1``.
    """
    style = _parse(TargetStyle, target_style, "target style")
    inputs = []
    outputs = []
    for p in prefixes:
        p = np.asarray(p, dtype=np.int64)
        if len(p) < 2:
            raise DegenerateInputError("training prefix needs at least 2 items")
        inputs.append(p[:-1][-max_seq_len:])
        outputs.append(p[1:][-max_seq_len:])
    L = max(len(s) for s in inputs)
    items = np.zeros((len(inputs), L), dtype=np.int64)
    targets = np.full((len(inputs), L), -1, dtype=np.int64)
    for i, (s, t) in enumerate(zip(inputs, outputs)):
        items[i, :len(s)] = s
        if style is TargetStyle.ALL_POSITIONS:
            targets[i, :len(t)] = t
        else:
            targets[i, len(t) - 1] = t[-1]
    return items, targets
