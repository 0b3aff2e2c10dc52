"""Full-ranking Recall@K / NDCG@K evaluation."""
import time
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DegenerateInputError, NumericError


def rank_of_target(scores, target):
    """1-based rank of ``target``; equal scores are ordered by ascending item index."""
    scores = np.asarray(scores, dtype=np.float64)
    return int(ranks_of_targets(scores[None, :], np.array([target]))[0])


def ranks_of_targets(scores, targets):
    """Vectorized :func:`rank_of_target` over rows of a (users, items) score matrix."""
    scores = np.asarray(scores, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.int64)
    if not np.all(np.isfinite(scores)):
        raise NumericError("scores contain NaN or Inf")
    if targets.min(initial=0) < 0 or targets.max(initial=0) >= scores.shape[1]:
        raise IndexError("target index out of range")
    rows = np.arange(scores.shape[0])
    t = scores[rows, targets][:, None]
    higher = (scores > t).sum(axis=1)
    tied_before = ((scores == t) & (np.arange(scores.shape[1]) < targets[:, None])).sum(axis=1)
    return 1 + higher + tied_before


def recall_at_k(rank, k):
    return (np.asarray(rank) <= k).astype(np.float64)


def ndcg_at_k(rank, k):
    rank = np.asarray(rank, dtype=np.float64)
    return np.where(rank <= k, 1.0 / np.log2(rank + 1.0), 0.0)


@dataclass
class EvalReport:
    ks: list
    recall: dict
    ndcg: dict
    n_users: int
    variant: str = ""
    split: str = ""
    seconds: float = 0.0
    n_parameters: int = 0
    extras: dict = field(default_factory=dict)

    def as_dict(self, timing=False):
        # wall-clock time is left out by default so saved reports are reproducible
        out = {"variant": self.variant, "split": self.split, "n_users": self.n_users,
               "n_parameters": self.n_parameters}
        if timing:
            out["seconds"] = self.seconds
        for k in self.ks:
            out[f"recall@{k}"] = self.recall[k]
            out[f"ndcg@{k}"] = self.ndcg[k]
        out.update(self.extras)
        return out

    def to_text(self):
        return "".join(f"{k} = {v}\n" for k, v in self.as_dict().items())

    def csv_header(self):
        return ",".join(self.as_dict())

    def csv_row(self):
        return ",".join(str(v) for v in self.as_dict().values())


def parse_report_text(text):
    """Inverse of :meth:`EvalReport.to_text` into a flat ``dict`` of strings."""
    out = {}
    for line in text.splitlines():
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def metrics_from_ranks(ranks, ks):
    ks = sorted(int(k) for k in ks)
    ranks = np.asarray(ranks)
    # fixed-order summation keeps reports bit-reproducible
    recall = {k: float(np.sum(recall_at_k(ranks, k)) / ranks.size) for k in ks}
    ndcg = {k: float(np.sum(ndcg_at_k(ranks, k)) / ranks.size) for k in ks}
    return ks, recall, ndcg


def evaluate(model, dataset, split="test", ks=(10, 20, 50)):
    """Rank every item for each evaluated user and average Recall/NDCG.

    ``model`` needs a ``score_sequences(prefixes)`` method returning a
    (n_users, n_items) score matrix.  Items already in a user's history stay
    in the candidate set.
    """
    start = time.perf_counter()
    users, prefixes, targets = dataset.eval_split(split)
    if len(users) == 0:
        raise DegenerateInputError(f"split {split!r} has no users to evaluate")
    ranks = ranks_of_targets(model.score_sequences(prefixes), targets)
    ks, recall, ndcg = metrics_from_ranks(ranks, ks)
    return EvalReport(
        ks=ks, recall=recall, ndcg=ndcg, n_users=len(users),
        variant=getattr(model, "variant_name", type(model).__name__),
        split=str(split), seconds=time.perf_counter() - start,
        n_parameters=int(getattr(model, "n_parameters_", 0)),
    )
