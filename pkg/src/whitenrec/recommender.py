"""Estimators: the self-attentive recommender family and a popularity baseline."""
import logging
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .diagnostics import condition_number
from .evaluation import evaluate
from .exceptions import ConfigError, DegenerateInputError, NumericError
from .linalg import as_matrix
from .model import ModelConfig, SeqRecNet, TargetStyle, Variant, _parse, make_batch
from .whitening import Whitener

logger = logging.getLogger(__name__)

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


@dataclass
class TrainHistory:
    loss: list = field(default_factory=list)
    val_ndcg: list = field(default_factory=list)
    kappa: list = field(default_factory=list)
    best_epoch: int = 0
    stopped_epoch: int = 0

    def to_csv(self):
        rows = ["epoch,loss,val_ndcg@20,kappa"]
        for e, (l, n, k) in enumerate(zip(self.loss, self.val_ndcg, self.kappa), start=1):
            rows.append(f"{e},{l!r},{n!r},{k!r}")
        return "\n".join(rows) + "\n"


class Adam:
    """Adam with decoupled weight decay over an ordered dict of arrays (updated in place)."""

    def __init__(self, params, lr=1e-3, weight_decay=0.0, betas=ADAM_BETAS, eps=ADAM_EPS):
        self.lr = lr
        self.weight_decay = weight_decay
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, p in params.items():
            g = grads[k]
            self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * g * g
            update = (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
            p -= self.lr * (update + self.weight_decay * p)


def _training_prefixes(dataset):
    return [np.asarray(t, dtype=np.int64) for t in dataset.train if len(t) >= 2]


def _length_bucketed_batches(lengths, batch_size, rng, pool_batches=8):
    """Shuffled batches whose members have similar lengths.

    Users are shuffled, cut into pools of ``pool_batches`` batches, sorted by
    length inside each pool, batched, and the batch order shuffled again.
    """
    order = rng.permutation(len(lengths))
    pool = batch_size * pool_batches
    batches = []
    for start in range(0, len(order), pool):
        chunk = order[start:start + pool]
        chunk = chunk[np.argsort(lengths[chunk], kind="stable")]
        batches += [chunk[i:i + batch_size] for i in range(0, len(chunk), batch_size)]
    return [batches[i] for i in rng.permutation(len(batches))]


class SeqRecommender(BaseEstimator):
    """Next-item recommender with a causal self-attention sequence encoder.

    The ``variant`` selects the item encoder:

    ``"id"``
        a learned item embedding table.
    ``"text"``
        a projection head over frozen raw item features.
    ``"text_plus_id"``
        projection head output plus the embedding table.
    ``"whiten"``
        projection head over fully whitened features (one group).
    ``"whiten_plus"``
        one shared head applied to both the fully whitened and the
        ``relaxed_groups``-group whitened features, outputs summed (or
        concatenated and mapped back with ``combine="concat"``).

    Whitening statistics are fitted on every item's features, including items
    never seen in training.

    Training minimizes full-softmax cross-entropy with Adam and stops once
    validation NDCG@``eval_k`` has not improved for ``patience`` epochs; the
    parameters of the best epoch are kept.
    """

    def __init__(self, variant="whiten", whitening="zca", relaxed_groups=4, eps=1e-5,
                 head_depth=2, combine="sum", d_model=64, n_blocks=2, n_heads=2,
                 max_seq_len=50, dropout=0.2, learning_rate=1e-3, weight_decay=0.0,
                 batch_size=256, max_epochs=200, patience=10,
                 target_style="all_positions", eval_k=20, random_state=0):
        self.variant = variant
        self.whitening = whitening
        self.relaxed_groups = relaxed_groups
        self.eps = eps
        self.head_depth = head_depth
        self.combine = combine
        self.d_model = d_model
        self.n_blocks = n_blocks
        self.n_heads = n_heads
        self.max_seq_len = max_seq_len
        self.dropout = dropout
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.target_style = target_style
        self.eval_k = eval_k
        self.random_state = random_state

    # -- setup

    def _frozen_inputs(self, variant, n_items, item_features):
        if not variant.feature_inputs:
            return {}, 0
        if item_features is None:
            raise ConfigError(f"variant {variant.value} needs item_features")
        X = as_matrix(item_features, "item_features")
        if X.shape[0] != n_items:
            raise ConfigError(f"item_features has {X.shape[0]} rows for {n_items} items")
        self.whiteners_ = {}
        if variant in (Variant.TEXT, Variant.TEXT_PLUS_ID):
            return {"text": X.copy()}, X.shape[1]
        frozen = {}
        groups = {"full": 1}
        if variant is Variant.WHITEN_PLUS:
            if int(self.relaxed_groups) <= 1:
                raise ConfigError("whiten_plus needs relaxed_groups > 1")
            groups["relaxed"] = int(self.relaxed_groups)
        for name, G in groups.items():
            w = Whitener(method=self.whitening, n_groups=G, eps=self.eps)
            frozen[name] = w.fit_transform(X)
            self.whiteners_[name] = w
        return frozen, X.shape[1]

    def build_network(self, n_items, item_features=None):
        variant = _parse(Variant, self.variant, "variant")
        frozen, dim = self._frozen_inputs(variant, n_items, item_features)
        config = ModelConfig(
            variant=variant, n_items=n_items, d_model=self.d_model, n_blocks=self.n_blocks,
            n_heads=self.n_heads, max_seq_len=self.max_seq_len, head_depth=self.head_depth,
            combine=self.combine, dropout=self.dropout, feature_dim=dim)
        rng = np.random.default_rng(self.random_state)
        return SeqRecNet.initialize(config, frozen, rng), rng

    # -- training

    def fit(self, dataset, item_features=None, epoch_callback=None):
        """Train on ``dataset.train`` and early-stop on the validation split."""
        if self.patience < 1:
            raise ConfigError("patience must be at least 1")
        style = _parse(TargetStyle, self.target_style, "target style")
        net, rng = self.build_network(dataset.n_items, item_features)
        prefixes = _training_prefixes(dataset)
        if not prefixes:
            raise DegenerateInputError("no training prefix has at least 2 items")
        if not dataset.valid_mask.any():
            raise DegenerateInputError("validation split is empty")
        lengths = np.array([min(len(p), net.config.max_seq_len + 1) for p in prefixes])
        opt = Adam(net.params, lr=self.learning_rate, weight_decay=self.weight_decay)
        history = TrainHistory()
        best = (-np.inf, None)
        stale = 0
        self.net_ = net
        self.n_parameters_ = net.n_parameters()
        self.variant_name = net.config.variant.value
        for epoch in range(1, self.max_epochs + 1):
            total, count = 0.0, 0
            for b, idx in enumerate(_length_bucketed_batches(lengths, self.batch_size, rng)):
                batch = [prefixes[i] for i in idx]
                items, targets = make_batch(batch, net.config.max_seq_len, style)
                try:
                    loss, cache = net.forward_loss(items, targets, rng, batch_index=b)
                except NumericError as exc:
                    raise NumericError(f"training diverged in epoch {epoch}: {exc}") from exc
                n_sup = int((targets >= 0).sum())
                total += loss * n_sup
                count += n_sup
                opt.step(net.params, net.backward(cache))
            V = net.encode_items()
            if not np.all(np.isfinite(V)):
                raise NumericError(f"training diverged in epoch {epoch}: non-finite item matrix")
            score = evaluate(self, dataset, "valid", [self.eval_k]).ndcg[self.eval_k]
            history.loss.append(total / count)
            history.val_ndcg.append(score)
            history.kappa.append(condition_number(V).condition_number)
            history.stopped_epoch = epoch
            logger.info("epoch %d loss %.5f val ndcg@%d %.5f", epoch, total / count,
                        self.eval_k, score)
            if epoch_callback is not None:
                epoch_callback(epoch, history)
            if score > best[0]:
                best = (score, net.copy())
                history.best_epoch = epoch
                stale = 0
            else:
                stale += 1
                if stale >= self.patience:
                    break
        self.net_ = best[1]
        self.history_ = history
        return self

    # -- inference

    @classmethod
    def from_network(cls, net, **params):
        """Wrap an already-trained :class:`SeqRecNet` (e.g. loaded from a checkpoint)."""
        c = net.config
        obj = cls(variant=c.variant.value, head_depth=c.head_depth, combine=c.combine.value,
                  d_model=c.d_model, n_blocks=c.n_blocks, n_heads=c.n_heads,
                  max_seq_len=c.max_seq_len, dropout=c.dropout, **params)
        obj.net_ = net
        obj.n_parameters_ = net.n_parameters()
        obj.variant_name = c.variant.value
        return obj

    def item_matrix(self):
        check_is_fitted(self, "net_")
        return self.net_.encode_items()

    def user_vectors(self, sequences):
        check_is_fitted(self, "net_")
        return self.net_.user_vectors(sequences)

    def score_sequences(self, sequences):
        """Scores over the full item set for each history, shape (n_seq, n_items)."""
        check_is_fitted(self, "net_")
        return self.net_.scores(sequences)

    def predict(self, sequences, k=10):
        """Top-``k`` item indices per history (ties broken by lower index)."""
        scores = self.score_sequences(sequences)
        return np.argsort(-scores, axis=1, kind="stable")[:, :k]


class PopularityRecommender(BaseEstimator):
    """Scores every item by its interaction count in the training prefixes."""

    variant_name = "popularity"
    n_parameters_ = 0

    def fit(self, dataset, item_features=None):
        counts = np.zeros(dataset.n_items)
        for t in dataset.train:
            np.add.at(counts, np.asarray(t, dtype=np.int64), 1.0)
        self.counts_ = counts
        return self

    def score_sequences(self, sequences):
        check_is_fitted(self, "counts_")
        return np.tile(self.counts_, (len(sequences), 1))

    def predict(self, sequences, k=10):
        return np.argsort(-self.score_sequences(sequences), axis=1, kind="stable")[:, :k]


def grad_check(variant="whiten", seed=0, d_model=8, n_blocks=1, n_heads=1, n_items=5,
               feature_dim=4, head_depth=2, combine="sum", step=1e-5, dropout=0.0):
    """Largest relative gap between analytic and central-difference gradients.

    Builds a small random model and batch; every trainable scalar is
    perturbed by ``+/- step``.  Dropout, when enabled, reuses one mask.
    """
    if d_model > 16 or n_items > 16:
        raise ValueError("grad_check is limited to d_model <= 16 and n_items <= 16")
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n_items, feature_dim))
    frozen = {"text": X,
              "full": Whitener("zca", 1, 1e-5).fit_transform(X),
              "relaxed": Whitener("zca", 2, 1e-5).fit_transform(X)}
    config = ModelConfig(variant, n_items, d_model=d_model, n_blocks=n_blocks, n_heads=n_heads,
                         max_seq_len=4, head_depth=head_depth, combine=combine,
                         dropout=dropout, feature_dim=feature_dim)
    net = SeqRecNet.initialize(config, {k: frozen[k] for k in config.variant.feature_inputs}, rng)
    prefixes = [rng.integers(0, n_items, size=rng.integers(2, 6)) for _ in range(3)]
    items, targets = make_batch(prefixes, config.max_seq_len)
    drop_seed = seed + 1

    def loss_and_cache():
        drop_rng = np.random.default_rng(drop_seed) if dropout else None
        return net.forward_loss(items, targets, drop_rng)

    frozen_before = {k: v.copy() for k, v in net.frozen.items()}
    grads = net.backward(loss_and_cache()[1])
    worst = 0.0
    for name, p in net.params.items():
        g = grads[name]
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + step
            up = loss_and_cache()[0]
            p[idx] = old - step
            down = loss_and_cache()[0]
            p[idx] = old
            fd = (up - down) / (2.0 * step)
            err = abs(g[idx] - fd) / max(abs(g[idx]), abs(fd), 1e-8)
            worst = max(worst, err)
    for k, v in net.frozen.items():
        if not np.array_equal(v, frozen_before[k]):
            raise AssertionError(f"frozen input {k!r} changed during gradient check")
    return worst
