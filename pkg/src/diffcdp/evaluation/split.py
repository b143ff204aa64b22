"""Template-disjoint train/val/test partitioning."""

from dataclasses import dataclass

import numpy as np

from ..errors import InvalidArgumentError
from ..seeding import rng as seeded_rng


@dataclass(frozen=True)
class SplitSpec:
    train: tuple
    val: tuple
    test: tuple
    fractions: tuple = (0.7, 0.1, 0.2)
    seed: int = 0

    def partition_of(self, template_id):
        for name in ("train", "val", "test"):
            if template_id in getattr(self, name):
                return name
        raise KeyError(template_id)

    def to_dict(self):
        return {"train": list(self.train), "val": list(self.val), "test": list(self.test),
                "fractions": list(self.fractions), "seed": self.seed}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["train"]), tuple(d["val"]), tuple(d["test"]),
                   tuple(d["fractions"]), int(d["seed"]))


def largest_remainder(n, fractions):
    """Integer counts summing to ``n``, proportional to ``fractions``."""
    quotas = np.asarray(fractions, dtype=np.float64) * n
    counts = np.floor(quotas).astype(int)
    remainders = quotas - counts
    # ties go to the earlier partition
    for i in sorted(range(len(counts)), key=lambda i: (-remainders[i], i))[: n - counts.sum()]:
        counts[i] += 1
    return counts.tolist()


def split_ids(template_ids, fractions=(0.7, 0.1, 0.2), seed=0):
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f <= 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise InvalidArgumentError(f"fractions must be three positive numbers summing to 1, got {fractions}")
    ids = sorted(set(int(i) for i in template_ids))
    if len(ids) < len(fractions):
        raise InvalidArgumentError(f"need at least {len(fractions)} templates, got {len(ids)}")
    counts = largest_remainder(len(ids), fractions)
    if min(counts) == 0:
        # every partition must own at least one template
        for i in range(len(counts)):
            if counts[i] == 0:
                counts[int(np.argmax(counts))] -= 1
                counts[i] = 1
    shuffled = [ids[i] for i in seeded_rng(seed, "split").permutation(len(ids))]
    a, b = counts[0], counts[0] + counts[1]
    return SplitSpec(tuple(sorted(shuffled[:a])), tuple(sorted(shuffled[a:b])),
                     tuple(sorted(shuffled[b:])), fractions, seed)


def split_by_template(manifest, fractions=(0.7, 0.1, 0.2), seed=0):
    """Shuffle template ids by ``seed`` and cut them into train/val/test."""
    return split_ids(manifest.template_ids(), fractions, seed)
