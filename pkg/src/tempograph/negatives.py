"""Negative destination sampling for link evaluation.

All strategies keep the positive's source node and corrupt only the
destination. `random` draws uniformly over the destination id space
(the item range for bipartite data, every node otherwise). `historical`
draws from destinations the source actually contacted in the training
span; `inductive` draws from pairs first observed in the evaluation
span. Both fall back to a random draw when their pool is empty and
report how often that happened. Draws never collide with a positive
pair of the current batch. Each positive event owns one counter-based
RNG stream, so results are independent of batch boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import walks as wk

_MAX_RETRIES = 100


@dataclass
class NegativeSampler:
    strategy: str
    num_nodes: int
    dst_id_start: int | None
    train_pairs: frozenset
    eval_pairs: frozenset | None = None
    seed: int = 0
    _hist: dict = field(init=False, repr=False)
    _pool: dict = field(init=False, repr=False)

    def __post_init__(self):
        if self.strategy not in ("random", "historical", "inductive"):
            raise ValueError(f"unknown strategy: {self.strategy}")
        self._hist = _group_by_src(self.train_pairs)
        if self.strategy == "inductive":
            if self.eval_pairs is None:
                raise ValueError("inductive sampling needs eval_pairs")
            fresh = {p for p in self.eval_pairs
                     if p not in self.train_pairs}
            self._pool = _group_by_src(fresh)
        else:
            self._pool = {}

    def _random_draw(self, rng, u, batch_set):
        lo = self.dst_id_start if self.dst_id_start is not None else 0
        for _ in range(_MAX_RETRIES):
            cand = int(rng.integers(lo, self.num_nodes))
            if (u, cand) not in batch_set:
                return cand
        return cand

    def sample(self, src, dst, eidx, tag=0):
        """One negative destination per positive; returns (dsts, fallbacks).

        `tag` salts the per-event stream (training epochs pass their
        index) without touching the tag-0 streams evaluation uses.
        """
        batch_set = set(zip((int(x) for x in src), (int(x) for x in dst)))
        out = np.zeros(len(src), dtype=np.int64)
        fallbacks = 0
        for i in range(len(src)):
            u = int(src[i])
            rng = wk.walk_rng(self.seed, wk.DOMAIN_NEGATIVES, int(eidx[i]),
                              0, tag)
            if self.strategy == "random":
                out[i] = self._random_draw(rng, u, batch_set)
                continue
            table = self._hist if self.strategy == "historical" \
                else self._pool
            cands = [d for d in table.get(u, ())
                     if (u, d) not in batch_set]
            if cands:
                out[i] = cands[int(rng.integers(0, len(cands)))]
            else:
                out[i] = self._random_draw(rng, u, batch_set)
                fallbacks += 1
        return out, fallbacks


def _group_by_src(pairs):
    table = {}
    for u, v in pairs:
        table.setdefault(u, set()).add(v)
    return {u: sorted(vs) for u, vs in table.items()}


def pairs_of(events) -> frozenset:
    return frozenset((e.src, e.dst) for e in events)
