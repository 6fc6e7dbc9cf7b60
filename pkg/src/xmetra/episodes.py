"""Pseudo-task construction: class-balanced MTOD episodes, similarity-anchored
QA episodes, the target dev split and the two task distributions.
"""

from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from xmetra.data.tfidf import TfidfIndex, cosine, cosine_matrix
from xmetra.exceptions import ContractError, InputError, SamplingError, SpecError


class Stage(str, Enum):
    META_TRAIN = "meta_train"
    META_ADAPT = "meta_adapt"


class Shortfall(str, Enum):
    ERROR = "error"      # class too small -> SamplingError
    REPLACE = "replace"  # top up by sampling with replacement
    SKIP = "skip"        # leave the class out of this task


@dataclass(frozen=True)
class EpisodeSpec:
    """``k``/``q``: per-class shots for MTOD, total support/query size for QA."""

    k: int = 6
    q: int = 6
    seed: int = 0
    shortfall: Shortfall = Shortfall.ERROR

    def __post_init__(self):
        if self.k < 1 or self.q < 1:
            raise SpecError(f"k and q must be >= 1, got k={self.k}, q={self.q}")
        object.__setattr__(self, "shortfall", Shortfall(self.shortfall))

    def check_qa(self):
        if self.k % self.q:
            raise SpecError(f"k={self.k} is not a multiple of q={self.q}; QA support is k/q neighbours per query")


@dataclass
class PseudoTask:
    support: list
    query: list
    support_idx: np.ndarray
    query_idx: np.ndarray
    metadata: dict = field(default_factory=dict)


def _label(ex):
    return ex.intent


def _by_class(pool):
    groups = defaultdict(list)
    for i, ex in enumerate(pool):
        groups[_label(ex)].append(i)
    return groups


def _draw(rng, idx, n, shortfall, cls, role):
    if len(idx) >= n:
        return list(rng.choice(idx, n, replace=False))
    if shortfall is Shortfall.REPLACE and idx:
        return list(rng.permutation(idx)) + list(rng.choice(idx, n - len(idx), replace=True))
    if shortfall is Shortfall.SKIP:
        return None
    raise SamplingError(f"intent class {cls!r} has {len(idx)} {role} examples, needs {n}")


def sample_mtod_task(support_pool, query_pool, spec, rng):
    """k support and q query items per intent class.

    Every class present in either pool is considered, not just the
    intersection; a class absent from the support pool contributes no
    support shots and is listed in ``metadata["no_support"]``.  When the
    two pools are the same object, each class is partitioned so S and Q
    never share an example.
    """
    same = support_pool is query_pool
    sup_groups = _by_class(support_pool)
    qry_groups = sup_groups if same else _by_class(query_pool)
    classes = sorted(set(sup_groups) | set(qry_groups), key=str)
    s_idx, q_idx = [], []
    meta = {"no_support": [], "no_query": [], "skipped": []}
    for cls in classes:
        if same:
            idx = list(sup_groups[cls])
            need = spec.k + spec.q
            if len(idx) >= need:
                picked = list(rng.choice(idx, need, replace=False))
                s, q = picked[:spec.k], picked[spec.k:]
            elif spec.shortfall is Shortfall.REPLACE and len(idx) >= 2:
                perm = list(rng.permutation(idx))
                cut = max(1, min(len(perm) - 1, round(len(perm) * spec.k / need)))
                s = _draw(rng, perm[:cut], spec.k, spec.shortfall, cls, "support")
                q = _draw(rng, perm[cut:], spec.q, spec.shortfall, cls, "query")
            elif spec.shortfall is Shortfall.ERROR:
                raise SamplingError(f"intent class {cls!r} has {len(idx)} examples, needs {need} for disjoint S/Q")
            else:
                meta["skipped"].append(cls)
                continue
        else:
            s = q = []
            if cls in sup_groups:
                s = _draw(rng, sup_groups[cls], spec.k, spec.shortfall, cls, "support")
            else:
                meta["no_support"].append(cls)
            if cls in qry_groups:
                q = _draw(rng, qry_groups[cls], spec.q, spec.shortfall, cls, "query")
            else:
                meta["no_query"].append(cls)
            if s is None or q is None:
                meta["skipped"].append(cls)
                continue
        s_idx += [int(i) for i in s]
        q_idx += [int(i) for i in q]
    if not q_idx:
        raise SamplingError(f"no intent class can supply {spec.q} query examples (skipped: {meta['skipped']})")
    s_idx, q_idx = np.array(s_idx, dtype=np.int64), np.array(q_idx, dtype=np.int64)
    return PseudoTask([support_pool[i] for i in s_idx], [query_pool[i] for i in q_idx], s_idx, q_idx, meta)


def triplet_text(ex):
    src = getattr(ex, "source", None)
    return (src if src is not None else ex).text


def similarity(t1, t2, encoder):
    """Cosine of the encoded ``question context answer`` concatenations."""
    return cosine(encoder(triplet_text(t1)), encoder(triplet_text(t2)))


class SimilarityIndex:
    """Pairwise similarities between a query pool and a support pool.

    With no ``encoder`` a :class:`TfidfIndex` is fitted on the union of
    both pools' texts.
    """

    def __init__(self, query_pool, support_pool=None, encoder=None):
        support_pool = query_pool if support_pool is None else support_pool
        q_text = [triplet_text(t) for t in query_pool]
        s_text = q_text if support_pool is query_pool else [triplet_text(t) for t in support_pool]
        if encoder is None:
            docs = q_text if s_text is q_text else q_text + s_text
            index = TfidfIndex().fit(docs)
            Q = index.transform(q_text)
            S = Q if s_text is q_text else index.transform(s_text)
        else:
            Q = np.array([encoder(t) for t in q_text])
            S = Q if s_text is q_text else np.array([encoder(t) for t in s_text])
        self.matrix = cosine_matrix(Q, S)


def sample_qa_task(pool, spec, similarity_index, rng, query_pool=None):
    """Draw q anchors for Q, then the k/q most similar unused items per anchor for S.

    ``pool`` supplies support candidates; anchors come from ``query_pool``
    (defaults to ``pool``, in which case Q is excluded from the candidates).
    Ties in similarity go to the lowest pool index.
    """
    spec.check_qa()
    query_pool = pool if query_pool is None else query_pool
    same = query_pool is pool
    if same and len(pool) < spec.k + spec.q:
        raise SamplingError(f"pool of {len(pool)} cannot supply {spec.k} support + {spec.q} query items")
    if len(query_pool) < spec.q or (not same and len(pool) < spec.k):
        raise SamplingError("pool exhausted")
    sim = similarity_index.matrix if hasattr(similarity_index, "matrix") else np.asarray(similarity_index)
    q_idx = np.array(rng.choice(len(query_pool), spec.q, replace=False), dtype=np.int64)
    available = np.ones(len(pool), dtype=bool)
    if same:
        available[q_idx] = False
    per = spec.k // spec.q
    order_idx = np.arange(len(pool))
    s_idx = []
    for a in q_idx:
        scores = np.where(available, sim[a], -np.inf)
        order = np.lexsort((order_idx, -scores))[:per]
        if not np.all(available[order]):
            raise SamplingError("pool exhausted while drawing support neighbours")
        available[order] = False
        s_idx += [int(i) for i in order]
    s_idx = np.array(s_idx, dtype=np.int64)
    return PseudoTask([pool[i] for i in s_idx], [query_pool[i] for i in q_idx], s_idx, q_idx,
                      {"anchors": q_idx.tolist()})


def split_dev(dev, fraction, seed):
    """Seeded shuffle of ``dev`` split into ``(query slice, adapt slice)``."""
    if not 0.0 < fraction <= 1.0:
        raise ContractError(f"fraction must lie in (0, 1], got {fraction}")
    n = len(dev)
    if n == 0:
        raise InputError("empty dev corpus")
    perm = np.random.default_rng([seed, 0x5D]).permutation(n)
    cut = n if fraction == 1.0 else int(round(fraction * n))
    head, tail = sorted(perm[:cut].tolist()), sorted(perm[cut:].tolist())
    if hasattr(dev, "subset"):
        return dev.subset(head), dev.subset(tail)
    return [dev[i] for i in head], [dev[i] for i in tail]


@dataclass
class TaskDistribution:
    """Seeded sampler over pseudo-tasks for one stage.

    META_TRAIN draws support from the source pool and query from the
    target slice; META_ADAPT draws both from the same target slice.
    """

    stage: Stage
    support_pool: list
    query_pool: list
    spec: EpisodeSpec
    total_tasks: int = 2500
    family: str = "mtod"
    similarity_index: object = None

    def __post_init__(self):
        self.stage = Stage(self.stage)
        if self.total_tasks < 0:
            raise ContractError("total_tasks must be non-negative")
        if self.stage is Stage.META_ADAPT and self.support_pool is not self.query_pool:
            raise ContractError("META_ADAPT draws support and query from the same pool")
        if self.family == "qa":
            self.spec.check_qa()
            if self.similarity_index is None:
                same = self.support_pool is self.query_pool
                self.similarity_index = SimilarityIndex(self.query_pool, None if same else self.support_pool)

    @classmethod
    def meta_train(cls, source_pool, target_slice, spec, total_tasks=2500, family="mtod", similarity_index=None):
        return cls(Stage.META_TRAIN, list(source_pool), list(target_slice), spec, total_tasks, family, similarity_index)

    @classmethod
    def meta_adapt(cls, target_slice, spec, total_tasks=2500, family="mtod", similarity_index=None):
        pool = list(target_slice)
        return cls(Stage.META_ADAPT, pool, pool, spec, total_tasks, family, similarity_index)

    def sample(self, rng):
        if self.family == "qa":
            return sample_qa_task(self.support_pool, self.spec, self.similarity_index, rng, self.query_pool)
        return sample_mtod_task(self.support_pool, self.query_pool, self.spec, rng)


def draw_task_batch(dist, b, rng):
    """``b`` independently sampled pseudo-tasks (deterministic given ``rng``)."""
    if b < 1:
        raise ContractError(f"batch size must be >= 1, got {b}")
    return [dist.sample(rng) for _ in range(b)]


__all__ = [
    "EpisodeSpec", "PseudoTask", "Shortfall", "SimilarityIndex", "Stage", "TaskDistribution",
    "draw_task_batch", "sample_mtod_task", "sample_qa_task", "similarity", "split_dev", "triplet_text",
]
