"""Leave-one-out ranking evaluation (hit ratio and NDCG at a cutoff) plus
the ItemPop and ItemKNN heuristic baselines.

Scorers take an array of item indices and return an array of scores, so
per-user evaluation is a couple of vector ops. Per-user evaluations are
independent; the aggregate is a mean and does not depend on order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from deepicf.errors import EvalError
from deepicf.model import score_items


@dataclass
class EvalReport:
    """Per-user ranks of the held-out item among its candidates, plus the
    aggregate metrics. For every user: hit if the rank is within the
    cutoff, gain 1/log2(rank+1)."""

    k: int
    per_user: list                # (user, rank) pairs
    hr_at_k: float
    ndcg_at_k: float

    def summary(self):
        return f"HR@{self.k}={self.hr_at_k:.4f} NDCG@{self.k}={self.ndcg_at_k:.4f}"

    def write_csv(self, path):
        with open(path, "w", encoding="utf-8") as f:
            f.write("user,rank\n")
            for user, rank in self.per_user:
                f.write(f"{user},{rank}\n")
            f.write(f"# HR@{self.k}={self.hr_at_k:.6f}"
                    f" NDCG@{self.k}={self.ndcg_at_k:.6f}\n")


def rank_test_item(scorer, test_item, negatives):
    """1-based rank of the test item among itself plus the negatives.

    Candidates are ordered by descending score with ties broken by
    ascending item index, so ranking is deterministic. A non-finite score
    is an error naming the item.
    """
    negatives = np.asarray(negatives, dtype=np.int64)
    candidates = np.concatenate(([int(test_item)], negatives))
    scores = np.asarray(scorer(candidates), dtype=np.float64)
    if scores.shape != candidates.shape:
        raise EvalError(
            f"scorer returned shape {scores.shape} for {candidates.shape} items")
    bad = ~np.isfinite(scores)
    if bad.any():
        raise EvalError(
            f"non-finite score for item {int(candidates[bad.argmax()])}")
    # primary key: score descending; secondary: item index ascending
    order = np.lexsort((candidates, -scores))
    return int(np.nonzero(candidates[order] == int(test_item))[0][0]) + 1


def metrics_at_k(rank, k):
    """(hit, ndcg) for a single ranked test item: hit is 1 iff the rank is
    within the cutoff, and the gain is the single-relevant-item NDCG
    1/log2(rank+1)."""
    if rank < 1 or k < 1:
        raise EvalError(f"rank and k must be >= 1, got rank={rank}, k={k}")
    if rank <= k:
        return 1, 1.0 / math.log2(rank + 1)
    return 0, 0.0


def evaluate(scorer_factory, split, k=10):
    """Average per-user metrics over every user in the split.

    ``scorer_factory(user)`` must return a scorer over item index arrays.
    The result is a pure function of (factory, split, k).
    """
    per_user = []
    hits = 0
    gain = 0.0
    num_users = split.train.num_users
    for user in range(num_users):
        scorer = scorer_factory(user)
        rank = rank_test_item(scorer, int(split.test_items[user]),
                              split.eval_negatives[user])
        hr, ndcg = metrics_at_k(rank, k)
        hits += hr
        gain += ndcg
        per_user.append((user, rank))
    return EvalReport(k=k, per_user=per_user,
                      hr_at_k=hits / num_users, ndcg_at_k=gain / num_users)


def item_pop_scorer(train):
    """Non-personalized baseline: an item's score is its training
    interaction count."""
    counts = train.item_counts().astype(np.float64)

    def factory(user):
        def scorer(items):
            return counts[np.asarray(items, dtype=np.int64)]
        return scorer
    return factory


class ItemKnnModel:
    """Cosine similarity between items over binary user-incidence vectors.

    ``sim(i, j) = |users(i) & users(j)| / sqrt(|users(i)| * |users(j)|)``,
    with items that nobody interacted with pinned at similarity 0. A
    user's score for a candidate sums the similarities to every item in
    the user's history (all neighbors by default; ``top_n`` truncates each
    candidate's similarity row to its strongest entries, diagonal
    excluded).
    """

    def __init__(self, train, top_n=None):
        if top_n is not None and top_n < 1:
            raise EvalError(f"top_n must be >= 1, got {top_n}")
        self.train = train
        self.top_n = top_n
        num_users, num_items = train.num_users, train.num_items
        rows, cols = [], []
        for u in range(num_users):
            items = train.history_items(u)
            rows.extend([u] * items.size)
            cols.extend(items.tolist())
        incidence = sp.csr_matrix(
            (np.ones(len(rows)), (rows, cols)),
            shape=(num_users, num_items))
        self._cooccur = (incidence.T @ incidence).tocsr()
        counts = np.asarray(incidence.sum(axis=0)).ravel()
        inv_sqrt = np.zeros(num_items)
        active = counts > 0
        inv_sqrt[active] = 1.0 / np.sqrt(counts[active])
        self._inv_sqrt = inv_sqrt

    def similarity_row(self, item):
        """Dense similarity row of one item, diagonal zeroed, optionally
        truncated to the strongest ``top_n`` neighbors."""
        row = np.asarray(self._cooccur[item].todense()).ravel()
        row = row * (self._inv_sqrt[item] * self._inv_sqrt)
        row[item] = 0.0
        if self.top_n is not None and self.top_n < row.size:
            keep = np.argpartition(row, -self.top_n)[-self.top_n:]
            truncated = np.zeros_like(row)
            truncated[keep] = row[keep]
            row = truncated
        return row

    def similarity(self, i, j):
        if i == j:
            return 0.0
        return float(self.similarity_row(i)[j])

    def scorer_factory(self):
        def factory(user):
            hist = self.train.history_items(user)

            def scorer(items):
                items = np.asarray(items, dtype=np.int64)
                if hist.size == 0:
                    return np.zeros(items.shape[0])
                if self.top_n is None:
                    sub = self._cooccur[items][:, hist].toarray()
                    weighted = sub * self._inv_sqrt[hist][None, :]
                    scores = weighted.sum(axis=1) * self._inv_sqrt[items]
                    # a candidate inside the history would pick up its own
                    # diagonal entry; the predictor ignores the diagonal
                    for pos in np.nonzero(np.isin(items, hist))[0]:
                        c = int(items[pos])
                        scores[pos] -= (self._cooccur[c, c]
                                        * self._inv_sqrt[c] * self._inv_sqrt[c])
                    return scores
                return np.array([
                    float(self.similarity_row(int(c))[hist].sum())
                    for c in items])
            return scorer
        return factory


def item_knn_fit_and_score(train, top_n=None):
    """Fit the cosine model and return (model, scorer factory)."""
    model = ItemKnnModel(train, top_n=top_n)
    return model, model.scorer_factory()


def model_scorer_factory(params, config, split):
    """Scorer factory over a trained model: candidates are scored against
    the user's training history (the candidate itself is always masked)."""
    histories = split.train.item_arrays()

    def factory(user):
        hist = histories[user]

        def scorer(items):
            return score_items(params, config, hist, user, items)
        return scorer
    return factory
