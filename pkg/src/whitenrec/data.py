"""Interaction datasets, file formats, splitting protocols and synthetic generators.

File formats (UTF-8 text):

* embeddings: header ``#embeddings v1 <item_count> <dim>``, then one line per
  item ``<item_token>\\t<f_0>\\t...\\t<f_{dim-1}>``.
* sequences: one user per line, ``<user_token>\\t<item>,<item>,...`` in
  chronological order.
* id-map: ``<item_token>\\t<dense_index>`` per line.
"""
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .diagnostics import mean_pairwise_cosine
from .exceptions import DegenerateInputError, EmptyEvaluationError, NumericError, ParseError
from .linalg import as_matrix

EMBEDDING_MAGIC = "#embeddings"
EMBEDDING_VERSION = "v1"


@dataclass
class Embeddings:
    """Item feature matrix with one row per item token, in file order."""

    tokens: list
    matrix: np.ndarray

    def __post_init__(self):
        self.matrix = as_matrix(self.matrix, "embedding matrix")
        if len(self.tokens) != self.matrix.shape[0]:
            raise ValueError("token count does not match matrix rows")

    @property
    def dim(self):
        return self.matrix.shape[1]

    def reindex(self, item_tokens):
        """Rows reordered (and subset) to follow ``item_tokens``."""
        pos = {t: i for i, t in enumerate(self.tokens)}
        missing = [t for t in item_tokens if t not in pos]
        if missing:
            raise KeyError(f"no embedding for item token {missing[0]!r}")
        return self.matrix[[pos[t] for t in item_tokens]]


def _parse_float(tok, path, lineno):
    try:
        v = float(tok)
    except ValueError:
        raise ParseError(f"invalid float {tok!r}", path, lineno) from None
    if not math.isfinite(v):
        raise ParseError(f"non-finite value {tok!r}", path, lineno)
    return v


def load_embeddings(path):
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError("empty file", path, 1)
    head = lines[0].split()
    if len(head) != 4 or head[0] != EMBEDDING_MAGIC or head[1] != EMBEDDING_VERSION:
        raise ParseError(
            f"expected header '{EMBEDDING_MAGIC} {EMBEDDING_VERSION} <item_count> <dim>'", path, 1)
    try:
        count, dim = int(head[2]), int(head[3])
    except ValueError:
        raise ParseError("item count and dim must be integers", path, 1) from None
    if count < 1 or dim < 1:
        raise ParseError("item count and dim must be positive", path, 1)
    body = [(i + 2, ln) for i, ln in enumerate(lines[1:]) if ln.strip()]
    if not body:
        raise ParseError("no embedding rows", path, 2)
    if len(body) != count:
        raise ParseError(f"header declares {count} items, found {len(body)}", path, body[-1][0])
    tokens = []
    matrix = np.empty((count, dim))
    seen = set()
    for row, (lineno, ln) in enumerate(body):
        parts = ln.rstrip("\n").split("\t")
        if len(parts) != dim + 1:
            raise ParseError(f"expected {dim} values, found {len(parts) - 1}", path, lineno)
        if parts[0] in seen:
            raise ParseError(f"duplicate item token {parts[0]!r}", path, lineno)
        seen.add(parts[0])
        tokens.append(parts[0])
        matrix[row] = [_parse_float(t, path, lineno) for t in parts[1:]]
    return Embeddings(tokens, matrix)


def save_embeddings(path, tokens, matrix):
    matrix = as_matrix(matrix, "matrix")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{EMBEDDING_MAGIC} {EMBEDDING_VERSION} {matrix.shape[0]} {matrix.shape[1]}\n")
        for tok, row in zip(tokens, matrix):
            fh.write(tok + "\t" + "\t".join(repr(float(v)) for v in row) + "\n")


@dataclass
class SequenceData:
    """Raw chronological item sequences with dense item indices."""

    user_tokens: list
    sequences: list
    item_tokens: list

    @property
    def n_items(self):
        return len(self.item_tokens)


def five_core(sequences, min_count=5):
    """Drop short users and rare items repeatedly until nothing changes.

    ``sequences`` is a list of integer arrays; returns ``(kept_user_ids, sequences)``.
    """
    seqs = [np.asarray(s, dtype=np.int64) for s in sequences]
    users = list(range(len(seqs)))
    while True:
        counts = {}
        for s in seqs:
            for item, c in zip(*np.unique(s, return_counts=True)):
                counts[int(item)] = counts.get(int(item), 0) + int(c)
        rare = {i for i, c in counts.items() if c < min_count}
        if rare:
            rare_arr = np.fromiter(rare, dtype=np.int64)
            seqs = [s[~np.isin(s, rare_arr)] for s in seqs]
        keep = [k for k, s in enumerate(seqs) if len(s) >= min_count]
        changed = bool(rare) or len(keep) != len(seqs)
        seqs = [seqs[k] for k in keep]
        users = [users[k] for k in keep]
        if not changed:
            return users, seqs


def load_sequences(path, min_length=5, item_vocab=None):
    """Read a sequence file and apply iterative ``min_length``-core filtering.

    Item indices are re-compacted densely after filtering.  When
    ``item_vocab`` (e.g. embedding tokens) is given, unknown item tokens are
    a parse error and dense indices follow vocabulary order; otherwise they
    follow first appearance.
    """
    path = Path(path)
    vocab_pos = None if item_vocab is None else {t: i for i, t in enumerate(item_vocab)}
    token_ids = {}
    order = []
    users, raw = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, ln in enumerate(fh, start=1):
            ln = ln.rstrip("\n")
            if not ln.strip():
                continue
            parts = ln.split("\t")
            if len(parts) != 2 or not parts[1]:
                raise ParseError("expected '<user>\\t<item>,<item>,...'", path, lineno)
            seq = []
            for tok in parts[1].split(","):
                tok = tok.strip()
                if not tok:
                    raise ParseError("empty item token", path, lineno)
                if vocab_pos is not None and tok not in vocab_pos:
                    raise ParseError(f"unknown item token {tok!r}", path, lineno)
                if tok not in token_ids:
                    token_ids[tok] = len(order)
                    order.append(tok)
                seq.append(token_ids[tok])
            users.append(parts[0])
            raw.append(seq)
    if not raw:
        raise ParseError("no sequences", path, 1)
    kept, seqs = five_core(raw, min_length)
    present = sorted({int(i) for s in seqs for i in s},
                     key=(lambda i: vocab_pos[order[i]]) if vocab_pos is not None else None)
    remap = np.full(len(order), -1, dtype=np.int64)
    remap[present] = np.arange(len(present))
    return SequenceData(
        user_tokens=[users[k] for k in kept],
        sequences=[remap[s] for s in seqs],
        item_tokens=[order[i] for i in present],
    )


def save_sequences(path, user_tokens, sequences, item_tokens):
    with open(path, "w", encoding="utf-8") as fh:
        for user, seq in zip(user_tokens, sequences):
            fh.write(user + "\t" + ",".join(item_tokens[int(i)] for i in seq) + "\n")


def save_id_map(path, item_tokens):
    with open(path, "w", encoding="utf-8") as fh:
        for i, tok in enumerate(item_tokens):
            fh.write(f"{tok}\t{i}\n")


def load_id_map(path):
    tokens = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, ln in enumerate(fh, start=1):
            if not ln.strip():
                continue
            parts = ln.rstrip("\n").split("\t")
            if len(parts) != 2:
                raise ParseError("expected '<item_token>\\t<dense_index>'", path, lineno)
            try:
                tokens[int(parts[1])] = parts[0]
            except ValueError:
                raise ParseError(f"invalid index {parts[1]!r}", path, lineno) from None
    if sorted(tokens) != list(range(len(tokens))):
        raise ParseError("id-map indices are not dense", path)
    return [tokens[i] for i in range(len(tokens))]


@dataclass
class InteractionDataset:
    """Leave-one-out split of user sequences.

    ``train[u]`` is the training prefix, ``valid[u]`` the second-to-last item
    and ``test[u]`` the last item of user ``u``.  ``valid_mask``/``test_mask``
    select the users that take part in each evaluation split (all of them in
    the warm setting; only cold-target users in the cold-start setting).
    """

    n_items: int
    train: list
    valid: np.ndarray
    test: np.ndarray
    valid_mask: np.ndarray = None
    test_mask: np.ndarray = None
    cold_items: np.ndarray = None
    item_tokens: list = field(default=None, repr=False)

    def __post_init__(self):
        n = len(self.train)
        if self.valid_mask is None:
            self.valid_mask = np.ones(n, dtype=bool)
        if self.test_mask is None:
            self.test_mask = np.ones(n, dtype=bool)

    @property
    def n_users(self):
        return len(self.train)

    def eval_split(self, split):
        """``(user_ids, prefixes, targets)`` for ``"valid"`` or ``"test"``.

        The test prefix is the training prefix followed by the validation item.
        Users whose prefix is empty are skipped.
        """
        split = str(split).lower()
        if split in ("valid", "validation"):
            mask, targets = self.valid_mask, self.valid
            prefixes = self.train
        elif split == "test":
            mask, targets = self.test_mask, self.test
            prefixes = [np.append(t, v) for t, v in zip(self.train, self.valid)]
        else:
            raise ValueError(f"unknown split {split!r}; expected 'valid' or 'test'")
        users = [u for u in np.flatnonzero(mask) if len(prefixes[u]) > 0]
        return (np.asarray(users, dtype=np.int64),
                [prefixes[u] for u in users],
                np.asarray([targets[u] for u in users], dtype=np.int64))


def _infer_items(sequences, n_items):
    top = max(int(np.max(s)) for s in sequences) + 1
    if n_items is None:
        return top
    if top > n_items:
        raise ValueError(f"item index {top - 1} out of range for {n_items} items")
    return n_items


def leave_one_out(sequences, n_items=None):
    """Last item for test, second-to-last for validation, the rest for training."""
    seqs = [np.asarray(s, dtype=np.int64) for s in sequences]
    for u, s in enumerate(seqs):
        if len(s) < 3:
            raise DegenerateInputError(f"user {u} has {len(s)} interactions; need at least 3")
    return InteractionDataset(
        n_items=_infer_items(seqs, n_items),
        train=[s[:-2].copy() for s in seqs],
        valid=np.array([s[-2] for s in seqs], dtype=np.int64),
        test=np.array([s[-1] for s in seqs], dtype=np.int64),
    )


def cold_start_split(sequences, fraction=0.15, seed=0, n_items=None):
    """Hold out ``floor(fraction * n_items)`` random items as cold.

    Cold items are removed from every training prefix; the validation and
    test splits keep only users whose target is cold.
    """
    data = leave_one_out(sequences, n_items)
    n_cold = int(math.floor(fraction * data.n_items))
    if n_cold < 1:
        raise DegenerateInputError(
            f"fraction {fraction} of {data.n_items} items selects no cold item")
    rng = np.random.default_rng(seed)
    cold = np.sort(rng.choice(data.n_items, size=n_cold, replace=False))
    data.train = [t[~np.isin(t, cold)] for t in data.train]
    data.valid_mask = np.isin(data.valid, cold)
    data.test_mask = np.isin(data.test, cold)
    data.cold_items = cold
    if not data.valid_mask.any() and not data.test_mask.any():
        raise EmptyEvaluationError("no user has a cold validation or test target")
    return data


def gen_anisotropic_embeddings(n, d, target_cosine=0.8, seed=0, tol=0.02, max_steps=50):
    """Synthetic item features ``x_i = c * u + w_i`` with a shared unit direction ``u``.

    ``w_i`` is standard normal; ``c`` is found by bisection so the mean
    pairwise cosine lands within ``tol`` of ``target_cosine``.
    """
    if d < 4 or n < d:
        raise ValueError(f"need d >= 4 and n >= d, got n={n}, d={d}")
    if not -0.05 <= target_cosine < 1.0:
        raise ValueError("target_cosine must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    u = rng.standard_normal(d)
    u /= np.linalg.norm(u)
    W = rng.standard_normal((n, d))

    def build(c):
        return c * u + W

    lo, hi = 0.0, 1.0
    if abs(mean_pairwise_cosine(build(lo)) - target_cosine) <= tol:
        return build(lo)
    while mean_pairwise_cosine(build(hi)) < target_cosine:
        hi *= 2.0
        if hi > 1e8:
            raise NumericError(f"cannot reach mean cosine {target_cosine}")
    # bisect well past ``tol`` so the result sits near the target, not at the band edge
    measured = None
    for _ in range(max_steps):
        mid = 0.5 * (lo + hi)
        measured = mean_pairwise_cosine(build(mid))
        if abs(measured - target_cosine) <= tol * 1e-2:
            break
        if measured < target_cosine:
            lo = mid
        else:
            hi = mid
    if abs(measured - target_cosine) <= tol:
        return build(mid)
    raise NumericError(
        f"calibration failed after {max_steps} bisection steps "
        f"(last mean cosine {measured:.4f}, target {target_cosine})")


def residual_features(X):
    """Centered features with the dominant mean direction projected out.

    Scaled so a typical inner product between two residuals has unit variance.
    """
    X = as_matrix(X, "X")
    mu = X.mean(axis=0)
    R = X - mu
    norm = np.linalg.norm(mu)
    if norm > 0:
        u = mu / norm
        R = R - np.outer(R @ u, u)
    per_dim = np.sqrt(np.mean(R * R) * X.shape[1] / max(X.shape[1] - 1, 1))
    if per_dim > 0:
        R = R / per_dim
    return R / (X.shape[1] - 1) ** 0.25


def gen_sequences(embeddings, n_users, mean_len=10, seed=0, beta=4.0, gamma=0.5,
                  max_len=50, min_len=5):
    """Sample user sequences whose structure lives in the residual feature space.

    Each user has a latent vector ``p``; the next item is drawn (without
    repeating an item the user already has) with probability proportional to
    ``exp(beta * <p + gamma * r_prev, r_item>)`` where ``r`` are the
    residual features of :func:`residual_features`.
    """
    if mean_len < min_len:
        raise ValueError(f"mean_len must be at least {min_len}")
    R = residual_features(embeddings)
    n, d = R.shape
    rng = np.random.default_rng(seed)
    lengths = np.clip(rng.poisson(mean_len, size=n_users), min_len, min(max_len, n))
    P = rng.standard_normal((n_users, d)) / (d - 1) ** 0.25
    seqs = np.zeros((n_users, lengths.max()), dtype=np.int64)
    used = np.zeros((n_users, n), dtype=bool)
    rows = np.arange(n_users)
    query = P
    for t in range(lengths.max()):
        logits = beta * (query @ R.T)
        logits[used] = -np.inf
        choice = np.argmax(logits + rng.gumbel(size=logits.shape), axis=1)
        seqs[:, t] = choice
        used[rows, choice] = True
        query = P + gamma * R[choice]
    return [seqs[k, :lengths[k]].copy() for k in range(n_users)]
