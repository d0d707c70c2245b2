"""Memorization baseline: score 1 for any previously seen directed pair.

Evaluation replays the train and validation spans into the bank, then
walks the test span batch by batch, scoring positives against sampled
negatives before absorbing the batch's positive pairs.
"""

from __future__ import annotations

import numpy as np

from . import metrics as mt
from . import negatives as ng


class EdgeBank:
    def __init__(self):
        self.pairs = set()

    def add_pairs(self, src, dst):
        self.pairs.update(zip((int(x) for x in src),
                              (int(x) for x in dst)))

    def add_events(self, events):
        self.pairs.update((e.src, e.dst) for e in events)

    def predict(self, src, dst) -> np.ndarray:
        return np.array([1.0 if (int(u), int(v)) in self.pairs else 0.0
                         for u, v in zip(src, dst)])


def evaluate_edgebank(events, split, strategy, seed, batch_size,
                      num_nodes=None, dst_id_start=None):
    """Per-batch mean AP/AUC of the bank on the test span."""
    train, val, test = split.slices(events)
    if not test:
        raise ValueError("empty test span")
    if num_nodes is None:
        num_nodes = 1 + max(max(e.src, e.dst) for e in events)
    sampler = ng.NegativeSampler(
        strategy=strategy, num_nodes=num_nodes, dst_id_start=dst_id_start,
        train_pairs=ng.pairs_of(train),
        eval_pairs=ng.pairs_of(test) if strategy == "inductive" else None,
        seed=seed)
    bank = EdgeBank()
    bank.add_events(train)
    bank.add_events(val)

    aps, aucs, fallbacks = [], [], 0
    for lo in range(0, len(test), batch_size):
        batch = test[lo:lo + batch_size]
        src = np.array([e.src for e in batch])
        dst = np.array([e.dst for e in batch])
        eidx = split.val_end + lo + np.arange(len(batch))
        neg, fb = sampler.sample(src, dst, eidx)
        fallbacks += fb
        scores = np.concatenate([bank.predict(src, dst),
                                 bank.predict(src, neg)])
        labels = np.concatenate([np.ones(len(batch)),
                                 np.zeros(len(batch))])
        aps.append(mt.average_precision(scores, labels))
        aucs.append(mt.auc_roc(scores, labels))
        bank.add_pairs(src, dst)
    return {"ap": float(np.mean(aps)), "auc": float(np.mean(aucs)),
            "fallbacks": fallbacks, "batches": len(aps)}
