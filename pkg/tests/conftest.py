import os
from pathlib import Path

import numpy as np
import pytest

from deepicf.data import InteractionDataset, parse_interactions


def synthetic_lines(num_users=30, num_items=300, min_len=5, max_len=12,
                    seed=7, sep="\t"):
    """Random interaction log lines with per-user increasing timestamps."""
    rng = np.random.default_rng(seed)
    lines = []
    for u in range(num_users):
        size = int(rng.integers(min_len, max_len))
        items = rng.choice(num_items, size=size, replace=False)
        for t, i in enumerate(items):
            rating = int(rng.integers(1, 6))
            lines.append(f"u{u}{sep}i{i}{sep}{rating}{sep}{1000 + t}")
    return lines


def synthetic_dataset(**kwargs):
    return parse_interactions(iter(synthetic_lines(**kwargs)), fmt="tab")


def make_dataset(histories, num_items=None):
    """Dataset straight from dense-index histories: lists of (item, ts)."""
    max_item = max((i for h in histories for i, _ in h), default=-1)
    num_items = (max_item + 1) if num_items is None else num_items
    return InteractionDataset(
        user_ids=[f"u{u}" for u in range(len(histories))],
        item_ids=[f"i{i}" for i in range(num_items)],
        items_per_user=[[i for i, _ in h] for h in histories],
        times_per_user=[[t for _, t in h] for h in histories])


def ml1m_ratings_path():
    """Path to the MovieLens-1M ratings file, if the user supplied one."""
    candidates = [os.environ.get("ML1M_RATINGS")]
    root = Path(__file__).resolve().parent.parent
    candidates += [root / "data" / "ml-1m" / "ratings.dat",
                   root / "data" / "ratings.dat"]
    for cand in candidates:
        if cand and Path(cand).is_file():
            return Path(cand)
    return None


@pytest.fixture(scope="session")
def small_split():
    """A split shared by tests that only read it."""
    from deepicf.data import leave_one_out_split
    return leave_one_out_split(synthetic_dataset(), seed=3)
