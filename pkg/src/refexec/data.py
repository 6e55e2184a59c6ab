"""Corpus construction, dataset splits, and QA generation.

Referring-expression instances are mined per scene: a candidate program is
kept only when its crisp denotation is a singleton AND is identical under
the narrow, default, and wide relation thresholds.  Threshold nesting
(narrow-true => default-true => wide-true) makes that equality a margin
condition: the target satisfies every relation strictly, every distractor
misses one strictly.  Question golds use the same three-regime equality on
the crisp answer.

Target categories are kept disjoint from reference categories.  The soft
executor masks an object out of its own reference set, while the crisp
semantics quantifies over references excluding the candidate itself; with
disjoint categories the two coincide exactly, so oracle-feature execution
reproduces every gold.

Splits:
    iid            70/10/20 by scene
    fraction(p)    iid, then train cut to round(p * corpus size) instances
    pairs          scene-disjoint; top-5% most frequent (target-category,
                   relation, reference-category) triples stay in train,
                   the rest only in test; filter instances train with train
                   scenes
    scene_type     one scene type held out entirely for test
    sparse_dense   train/val on M=10 scenes, test on M in [20, 40]
"""
from __future__ import annotations

import json
import os
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from . import dsl
from .language import Lexicon, build_lexicon, generate_utterance
from .relations import (DEFAULT_THRESHOLDS, NARROW_THRESHOLDS, WIDE_THRESHOLDS,
                        binary_truth, ternary_truth)
from .scene import (SCENE_TYPES, Scene, SceneConfig, SceneGenerationError,
                    TaskInstance, generate_scene, scene_config_to_json,
                    scene_config_from_json)
from .vocab import ANCHOR_PREFIX, Vocabulary

FAMILY_MIX = {"filter": 0.15, "relate": 0.40, "between": 0.15, "anchor": 0.30}
SPLIT_KINDS = ("iid", "fraction", "pairs", "scene_type", "sparse_dense")
PAIRS_TRAIN_SHARE = 0.05        # share of triple types kept on the train side
DENSE_SEED_OFFSET = 1_000_000   # dense scene ids never collide with sparse ones
QA_TYPES = ("exist", "count", "object", "relation")

_REGIMES = (("narrow", NARROW_THRESHOLDS),
            ("default", DEFAULT_THRESHOLDS),
            ("wide", WIDE_THRESHOLDS))


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class CorpusConfig:
    n_scenes: int = 1000
    instances_per_scene: int = 10
    scene: SceneConfig = field(default_factory=lambda: SceneConfig(
        n_objects=10, between_prob=0.5))
    seed: int = 0
    scene_seed_start: int = 0

    def to_json(self) -> dict:
        return {"n_scenes": self.n_scenes,
                "instances_per_scene": self.instances_per_scene,
                "scene": scene_config_to_json(self.scene),
                "seed": self.seed,
                "scene_seed_start": self.scene_seed_start}

    @classmethod
    def from_json(cls, payload: dict) -> "CorpusConfig":
        payload = dict(payload)
        scene = scene_config_from_json(payload.pop("scene"))
        return cls(scene=scene, **payload)


@dataclass(frozen=True)
class SplitSpec:
    kind: str = "iid"
    fraction: float | None = None     # for kind == "fraction"
    holdout: str | None = None        # for kind == "scene_type"
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SPLIT_KINDS:
            raise DataError(f"unknown split kind {self.kind!r}")
        if self.kind == "fraction":
            if self.fraction is None or not 0 < self.fraction <= 1:
                raise DataError("fraction split needs fraction in (0, 1]")
        if self.kind == "scene_type" and not self.holdout:
            raise DataError("scene_type split needs a holdout type")

    def to_json(self) -> dict:
        return {"kind": self.kind, "fraction": self.fraction,
                "holdout": self.holdout, "seed": self.seed}

    @classmethod
    def from_json(cls, payload: dict) -> "SplitSpec":
        return cls(**payload)


@dataclass
class Corpus:
    scenes: dict[int, Scene]
    instances: list[TaskInstance]
    config: CorpusConfig
    vocabulary: Vocabulary


@dataclass
class DatasetSplits:
    train: list[TaskInstance]
    val: list[TaskInstance]
    test: list[TaskInstance]
    scenes: dict[int, Scene]
    vocabulary: Vocabulary
    spec: SplitSpec
    meta: dict = field(default_factory=dict)

    def split(self, name: str) -> list[TaskInstance]:
        return {"train": self.train, "val": self.val, "test": self.test}[name]


@dataclass(frozen=True)
class QAInstance:
    scene_seed: int
    question: str
    program_text: str
    answer: str
    qtype: str
    view_dependent: bool

    def to_json(self) -> dict:
        return {"scene_seed": self.scene_seed, "question": self.question,
                "program_text": self.program_text, "answer": self.answer,
                "qtype": self.qtype, "view_dependent": self.view_dependent}

    @classmethod
    def from_json(cls, payload: dict) -> "QAInstance":
        return cls(**payload)


# ---------------------------------------------------------------------------
# crisp truth tables per scene, at all three threshold regimes
# ---------------------------------------------------------------------------

class SceneTruths:
    def __init__(self, scene: Scene, vocabulary: Vocabulary):
        self.scene = scene
        self.vocabulary = vocabulary
        self.m = scene.m
        arrays = scene.arrays()
        labels = np.array([vocabulary.category_id(c) for c in scene.categories])
        self.category_mask = {
            c: labels == vocabulary.category_id(c) for c in vocabulary.categories}
        self.binary = {
            regime: {rel: binary_truth(arrays, rel, thresholds)
                     for rel in vocabulary.binary_relations}
            for regime, thresholds in _REGIMES}
        self.ternary = {
            regime: {rel: ternary_truth(arrays, rel, thresholds)
                     for rel in vocabulary.ternary_relations}
            for regime, thresholds in _REGIMES}

    def present_categories(self) -> list[str]:
        return [c for c, mask in self.category_mask.items() if mask.any()]

    def category_count(self, category: str) -> int:
        return int(self.category_mask[category].sum())

    def relate_set(self, tcat: str, rcat: str, rel: str, regime: str) -> frozenset[int]:
        """{i of tcat : rel(i, j) for every j of rcat, j != i}; empty refs -> empty."""
        t_mask = self.category_mask[tcat]
        r_mask = self.category_mask[rcat]
        truth = self.binary[regime][rel]
        out = []
        r_idx = np.flatnonzero(r_mask)
        for i in np.flatnonzero(t_mask):
            refs = r_idx[r_idx != i]
            if refs.size and truth[i, refs].all():
                out.append(int(i))
        return frozenset(out)

    def ternary_set(self, tcat: str, r1cat: str, r2cat: str, rel: str,
                    regime: str) -> frozenset[int]:
        t_mask = self.category_mask[tcat]
        truth = self.ternary[regime][rel]
        r1_idx = np.flatnonzero(self.category_mask[r1cat])
        r2_idx = np.flatnonzero(self.category_mask[r2cat])
        out = []
        for i in np.flatnonzero(t_mask):
            refs1 = r1_idx[r1_idx != i]
            refs2 = r2_idx[r2_idx != i]
            if refs1.size and refs2.size and \
                    truth[np.ix_([i], refs1, refs2)].all():
                out.append(int(i))
        return frozenset(out)

    def robust_relate(self, tcat: str, rcat: str, rel: str) -> frozenset[int] | None:
        sets = [self.relate_set(tcat, rcat, rel, regime) for regime, _ in _REGIMES]
        return sets[0] if sets[0] == sets[1] == sets[2] else None

    def robust_ternary(self, tcat: str, r1cat: str, r2cat: str,
                       rel: str) -> frozenset[int] | None:
        sets = [self.ternary_set(tcat, r1cat, r2cat, rel, regime)
                for regime, _ in _REGIMES]
        return sets[0] if sets[0] == sets[1] == sets[2] else None


# ---------------------------------------------------------------------------
# candidate mining
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Candidate:
    family: str
    program: dsl.Node
    target: int
    triple: tuple[str, str, str] | None
    weight: float


def _zipf_weight(vocabulary: Vocabulary, *names: str) -> float:
    weight = 1.0
    for name in names:
        if vocabulary.is_category(name):
            weight /= 1.0 + vocabulary.category_id(name)
        elif vocabulary.is_binary(name):
            weight /= 1.0 + vocabulary.binary_id(name)
        elif vocabulary.is_ternary(name):
            weight /= 1.0 + vocabulary.ternary_id(name)
    return weight


def _filt(category: str) -> dsl.Node:
    return dsl.Filter(dsl.Scene(), category)


def enumerate_candidates(truths: SceneTruths) -> dict[str, list[Candidate]]:
    """All margin-robust, singleton-denotation programs for one scene."""
    vocab = truths.vocabulary
    present = truths.present_categories()
    out: dict[str, list[Candidate]] = {f: [] for f in FAMILY_MIX}

    for cat in present:
        mask = truths.category_mask[cat]
        if mask.sum() == 1:
            out["filter"].append(Candidate(
                family="filter", program=_filt(cat),
                target=int(np.flatnonzero(mask)[0]), triple=None,
                weight=_zipf_weight(vocab, cat)))

    for tcat in present:
        for rcat in present:
            if rcat == tcat:
                continue
            for rel in vocab.binary_relations:
                den = truths.robust_relate(tcat, rcat, rel)
                if den and len(den) == 1:
                    out["relate"].append(Candidate(
                        family="relate",
                        program=dsl.Relate(_filt(tcat), _filt(rcat), rel),
                        target=next(iter(den)), triple=(tcat, rel, rcat),
                        weight=_zipf_weight(vocab, tcat, rel, rcat)))

    if "between" in vocab.ternary_relations:
        for tcat in present:
            others = [c for c in present if c != tcat]
            for a, r1cat in enumerate(others):
                for r2cat in others[a + 1:]:   # between is symmetric in refs
                    den = truths.robust_ternary(tcat, r1cat, r2cat, "between")
                    if den and len(den) == 1:
                        out["between"].append(Candidate(
                            family="between",
                            program=dsl.TernaryRelate(
                                _filt(tcat), _filt(r1cat), _filt(r2cat), "between"),
                            target=next(iter(den)), triple=(tcat, "between", r1cat),
                            weight=_zipf_weight(vocab, tcat, r1cat, r2cat)))

    directions = [n.removeprefix(ANCHOR_PREFIX) for n in vocab.anchor_relations]
    for tcat in present:
        for rcat in present:
            if rcat == tcat:
                continue
            for acat in present:
                if acat == tcat:
                    continue
                for direction in directions:
                    rel = ANCHOR_PREFIX + direction
                    den = truths.robust_ternary(tcat, rcat, acat, rel)
                    if den and len(den) == 1:
                        program = dsl.Anchor(
                            _filt(acat),
                            dsl.Relate(_filt(tcat), _filt(rcat), direction))
                        out["anchor"].append(Candidate(
                            family="anchor", program=program,
                            target=next(iter(den)), triple=(tcat, rel, rcat),
                            weight=_zipf_weight(vocab, tcat, rel, rcat, acat)))
    return out


def _weighted_sample(candidates: list[Candidate], k: int,
                     rng: np.random.Generator) -> list[Candidate]:
    """Weight-proportional sampling without replacement (exponential keys)."""
    if k >= len(candidates):
        return list(candidates)
    keys = rng.exponential(size=len(candidates)) / np.array(
        [c.weight for c in candidates])
    order = np.argsort(keys)
    return [candidates[i] for i in order[:k]]


def _family_quota(pools: dict[str, list], n: int) -> dict[str, int] | None:
    """Largest-remainder allocation of n slots over FAMILY_MIX, capped by pool
    size, spare slots redistributed to the largest-mix family with capacity."""
    families = sorted(FAMILY_MIX)
    floors = {f: int(FAMILY_MIX[f] * n) for f in families}
    remainders = sorted(families, key=lambda f: (-(FAMILY_MIX[f] * n - floors[f]), f))
    want = dict(floors)
    for f in remainders[:n - sum(floors.values())]:
        want[f] += 1
    quota = {f: min(want[f], len(pools[f])) for f in families}
    short = n - sum(quota.values())
    while short > 0:
        eligible = [f for f in families if len(pools[f]) > quota[f]]
        if not eligible:
            return None
        best = max(eligible, key=lambda f: (FAMILY_MIX[f], f))
        quota[best] += 1
        short -= 1
    return quota


def _pick_instances(candidates: dict[str, list[Candidate]], n: int,
                    rng: np.random.Generator) -> list[Candidate] | None:
    pools = {f: list(c) for f, c in candidates.items()}
    quota = _family_quota(pools, n)
    if quota is None:
        return None
    chosen: list[Candidate] = []
    for family in sorted(pools):
        chosen += _weighted_sample(pools[family], quota[family], rng)
    order = rng.permutation(len(chosen))
    return [chosen[i] for i in order]


def build_corpus(config: CorpusConfig | None = None,
                 vocabulary: Vocabulary | None = None,
                 lexicon: Lexicon | None = None,
                 progress: "callable | None" = None) -> Corpus:
    """Mine `n_scenes` scenes with `instances_per_scene` robust instances each.

    Scene seeds run sequentially from `scene_seed_start`; scenes that cannot
    supply enough robust candidates (or fail to generate) are skipped, so the
    accepted seed set is deterministic.
    """
    from .vocab import DEFAULT_VOCABULARY
    config = config or CorpusConfig()
    vocabulary = vocabulary or DEFAULT_VOCABULARY
    lexicon = lexicon or build_lexicon(vocabulary)

    required = {"filter", "relate"}
    if "between" in vocabulary.ternary_relations:
        required.add("between")
    if vocabulary.anchor_relations:
        required.add("anchor")

    scenes: dict[int, Scene] = {}
    instances: list[TaskInstance] = []
    seed = config.scene_seed_start
    attempts = 0
    while len(scenes) < config.n_scenes:
        attempts += 1
        if attempts > config.n_scenes * 20 + 100:
            raise DataError(
                f"corpus mining stalled: {len(scenes)}/{config.n_scenes} scenes "
                f"after {attempts} seeds")
        scene_seed, seed = seed, seed + 1
        try:
            scene = generate_scene(config.scene, seed=scene_seed)
        except SceneGenerationError:
            continue
        truths = SceneTruths(scene, vocabulary)
        candidates = enumerate_candidates(truths)
        if any(not candidates[f] for f in required):
            continue
        rng = np.random.default_rng((config.seed, scene_seed))
        picks = _pick_instances(candidates, config.instances_per_scene, rng)
        if picks is None:
            continue
        scenes[scene_seed] = scene
        for slot, cand in enumerate(picks):
            lowered = dsl.lower_anchor(cand.program, vocabulary)
            instances.append(TaskInstance(
                scene_seed=scene_seed,
                utterance=generate_utterance(
                    cand.program, lexicon, seed=scene_seed * 1009 + slot),
                program_text=dsl.print_program(cand.program),
                target=cand.target,
                family=cand.family,
                view_dependent=dsl.is_view_dependent(lowered, vocabulary),
                triple=cand.triple,
            ))
        if progress is not None and len(scenes) % 100 == 0:
            progress(len(scenes))
    return Corpus(scenes=scenes, instances=instances, config=config,
                  vocabulary=vocabulary)


# ---------------------------------------------------------------------------
# splits
# ---------------------------------------------------------------------------

def _scene_partition(scene_seeds: list[int], seed: int,
                     shares: tuple[float, float, float] = (0.7, 0.1, 0.2)
                     ) -> tuple[list[int], list[int], list[int]]:
    order = list(scene_seeds)
    np.random.default_rng(seed).shuffle(order)
    n = len(order)
    n_train = int(round(shares[0] * n))
    n_val = int(round(shares[1] * n))
    return order[:n_train], order[n_train:n_train + n_val], order[n_train + n_val:]


def _by_scene(instances: list[TaskInstance],
              seeds: "set[int]") -> list[TaskInstance]:
    return [inst for inst in instances if inst.scene_seed in seeds]


def _assert_disjoint(splits: DatasetSplits) -> None:
    train = {i.scene_seed for i in splits.train}
    val = {i.scene_seed for i in splits.val}
    test = {i.scene_seed for i in splits.test}
    if train & test or val & test:
        raise DataError("split leakage: test shares scenes with train/val")


def split_corpus(corpus: Corpus, spec: SplitSpec,
                 dense_corpus: Corpus | None = None) -> DatasetSplits:
    instances = corpus.instances
    scene_seeds = sorted(corpus.scenes)

    if spec.kind in ("iid", "fraction"):
        tr, va, te = _scene_partition(scene_seeds, spec.seed)
        train = _by_scene(instances, set(tr))
        val = _by_scene(instances, set(va))
        test = _by_scene(instances, set(te))
        meta = {}
        if spec.kind == "fraction":
            n_keep = int(round(spec.fraction * len(instances)))
            if n_keep > len(train):
                raise DataError(
                    f"fraction {spec.fraction} needs {n_keep} train instances, "
                    f"pool has {len(train)}")
            order = np.random.default_rng(spec.seed + 1).permutation(len(train))
            train = [train[i] for i in order[:n_keep]]
            meta = {"fraction": spec.fraction, "train_kept": n_keep}
        splits = DatasetSplits(train, val, test, dict(corpus.scenes),
                               corpus.vocabulary, spec, meta)

    elif spec.kind == "pairs":
        counts = Counter(i.triple for i in instances if i.triple is not None)
        ranked = [t for t, _ in sorted(
            counts.items(), key=lambda kv: (-kv[1], kv[0]))]
        n_train_types = max(1, int(round(PAIRS_TRAIN_SHARE * len(ranked))))
        train_triples = set(ranked[:n_train_types])
        test_triples = set(ranked[n_train_types:])
        tr, va, te = _scene_partition(scene_seeds, spec.seed)
        tr_set, va_set, te_set = set(tr), set(va), set(te)
        train = [i for i in instances if i.scene_seed in tr_set
                 and (i.triple is None or i.triple in train_triples)]
        val = [i for i in instances if i.scene_seed in va_set
               and (i.triple is None or i.triple in train_triples)]
        test = [i for i in instances if i.scene_seed in te_set
                and i.triple in test_triples]
        splits = DatasetSplits(
            train, val, test, dict(corpus.scenes), corpus.vocabulary, spec,
            {"train_triples": sorted(map(list, train_triples)),
             "n_triple_types": len(ranked)})
        audit_pairs_split(splits)

    elif spec.kind == "scene_type":
        if spec.holdout not in SCENE_TYPES:
            raise DataError(f"unknown scene type {spec.holdout!r}")
        held = [s for s in scene_seeds if corpus.scenes[s].scene_type == spec.holdout]
        rest = [s for s in scene_seeds if corpus.scenes[s].scene_type != spec.holdout]
        if not held:
            raise DataError(f"holdout scene type {spec.holdout!r} absent from corpus")
        if not rest:
            raise DataError("holdout would empty the train side")
        tr, va, _ = _scene_partition(rest, spec.seed, shares=(0.85, 0.15, 0.0))
        splits = DatasetSplits(
            _by_scene(instances, set(tr)), _by_scene(instances, set(va)),
            _by_scene(instances, set(held)), dict(corpus.scenes),
            corpus.vocabulary, spec, {"holdout": spec.holdout})

    elif spec.kind == "sparse_dense":
        if dense_corpus is None:
            raise DataError("sparse_dense split needs a dense corpus")
        overlap = set(corpus.scenes) & set(dense_corpus.scenes)
        if overlap:
            raise DataError(f"sparse/dense scene id overlap: {sorted(overlap)[:5]}")
        tr, va, _ = _scene_partition(scene_seeds, spec.seed, shares=(0.85, 0.15, 0.0))
        scenes = dict(corpus.scenes)
        scenes.update(dense_corpus.scenes)
        splits = DatasetSplits(
            _by_scene(instances, set(tr)), _by_scene(instances, set(va)),
            list(dense_corpus.instances), scenes, corpus.vocabulary, spec,
            {"dense_m_range": sorted({dense_corpus.scenes[s].m
                                      for s in dense_corpus.scenes})})
    else:  # pragma: no cover - SplitSpec already validated
        raise DataError(f"unknown split kind {spec.kind!r}")

    _assert_disjoint(splits)
    return splits


def audit_pairs_split(splits: DatasetSplits) -> None:
    """Verify no relational triple type crosses from train into test."""
    train_triples = {i.triple for i in splits.train if i.triple is not None}
    test_triples = {i.triple for i in splits.test if i.triple is not None}
    crossing = train_triples & test_triples
    if crossing:
        raise DataError(f"pairs audit failed, shared triples: {sorted(crossing)[:5]}")
    untyped = [i for i in splits.test if i.triple is None]
    if untyped:
        raise DataError("pairs audit failed: untyped instance in test")


def group_by_scene(instances: list[TaskInstance],
                   scenes: dict[int, Scene]) -> list[tuple[Scene, list[TaskInstance]]]:
    by_seed: dict[int, list[TaskInstance]] = {}
    for inst in instances:
        by_seed.setdefault(inst.scene_seed, []).append(inst)
    return [(scenes[s], group) for s, group in sorted(by_seed.items())]


def to_packs(splits: DatasetSplits, name: str) -> list:
    """Scene-grouped training packs for one split."""
    from .training import ScenePack
    return [ScenePack(scene=scene, instances=tuple(group))
            for scene, group in group_by_scene(splits.split(name), splits.scenes)]


# ---------------------------------------------------------------------------
# QA generation
# ---------------------------------------------------------------------------

def _qa_bodies(truths: SceneTruths, vocabulary: Vocabulary, *, head: dsl.Node,
               tcat: str | None):
    """Yield (body AST, robust denotation, reference categories, view_dep)
    for one target slot."""
    present = truths.present_categories()
    directions = [n.removeprefix(ANCHOR_PREFIX) for n in vocabulary.anchor_relations]
    refs = [c for c in present if c != tcat]
    for rcat in refs:
        for rel in vocabulary.binary_relations:
            den = (truths.robust_relate(tcat, rcat, rel) if tcat is not None
                   else _robust_unfiltered_relate(truths, rcat, rel))
            if den is not None:
                yield dsl.Relate(head, _filt(rcat), rel), den, {rcat}, False
    if "between" in vocabulary.ternary_relations:
        for a, r1cat in enumerate(refs):
            for r2cat in refs[a + 1:]:
                den = (truths.robust_ternary(tcat, r1cat, r2cat, "between")
                       if tcat is not None
                       else _robust_unfiltered_ternary(truths, r1cat, r2cat, "between"))
                if den is not None:
                    yield (dsl.TernaryRelate(head, _filt(r1cat), _filt(r2cat),
                                             "between"), den, {r1cat, r2cat}, False)
    for rcat in refs:
        for acat in refs:
            for direction in directions:
                rel = ANCHOR_PREFIX + direction
                den = (truths.robust_ternary(tcat, rcat, acat, rel)
                       if tcat is not None
                       else _robust_unfiltered_ternary(truths, rcat, acat, rel))
                if den is not None:
                    yield (dsl.Anchor(_filt(acat),
                                      dsl.Relate(head, _filt(rcat), direction)),
                           den, {rcat, acat}, True)


def _robust_unfiltered_relate(truths: SceneTruths, rcat: str,
                              rel: str) -> frozenset[int] | None:
    sets = []
    for regime, _ in _REGIMES:
        r_idx = np.flatnonzero(truths.category_mask[rcat])
        truth = truths.binary[regime][rel]
        den = []
        for i in range(truths.m):
            refs = r_idx[r_idx != i]
            if refs.size and truth[i, refs].all():
                den.append(i)
        sets.append(frozenset(den))
    return sets[0] if sets[0] == sets[1] == sets[2] else None


def _robust_unfiltered_ternary(truths: SceneTruths, r1cat: str, r2cat: str,
                               rel: str) -> frozenset[int] | None:
    sets = []
    for regime, _ in _REGIMES:
        truth = truths.ternary[regime][rel]
        r1_idx = np.flatnonzero(truths.category_mask[r1cat])
        r2_idx = np.flatnonzero(truths.category_mask[r2cat])
        den = []
        for i in range(truths.m):
            refs1 = r1_idx[r1_idx != i]
            refs2 = r2_idx[r2_idx != i]
            if refs1.size and refs2.size and truth[np.ix_([i], refs1, refs2)].all():
                den.append(i)
        sets.append(frozenset(den))
    return sets[0] if sets[0] == sets[1] == sets[2] else None


@dataclass(frozen=True)
class _QACandidate:
    qtype: str
    program: dsl.Node
    answer: str
    view_dependent: bool
    is_positive: bool = True     # for exist balance


def enumerate_qa_candidates(truths: SceneTruths,
                            vocabulary: Vocabulary) -> list[_QACandidate]:
    out: list[_QACandidate] = []
    present = truths.present_categories()

    for tcat in present:
        for body, den, _, view in _qa_bodies(truths, vocabulary,
                                             head=_filt(tcat), tcat=tcat):
            out.append(_QACandidate("exist", dsl.QueryExist(body),
                                    "yes" if den else "no", view,
                                    is_positive=bool(den)))
            out.append(_QACandidate("count", dsl.QueryCount(body),
                                    str(len(den)), view))
    for cat in present:
        out.append(_QACandidate(
            "count", dsl.QueryCount(_filt(cat)),
            str(truths.category_count(cat)), False))

    labels = truths.scene.categories
    for body, den, refcats, view in _qa_bodies(truths, vocabulary,
                                               head=dsl.Scene(), tcat=None):
        den_cats = {labels[i] for i in den}
        # A denoted item sharing a reference category is excluded: the soft
        # executor masks it out of its own reference set, the crisp answer
        # does not, and the two would disagree.
        if len(den_cats) == 1 and not den_cats & refcats:
            out.append(_QACandidate(
                "object", dsl.QueryObject(body), labels[next(iter(den))], view))

    # Relation questions need the *answer set* stable across regimes: the one
    # holding relation must hold strictly (narrow) while every competitor
    # fails strictly (wide).  A competitor that is borderline-true at the
    # default thresholds would tie the gold at score zero.
    for tcat in present:
        for rcat in present:
            if rcat == tcat:
                continue
            holdings = [frozenset(
                rel for rel in vocabulary.binary_relations
                if _universal_pair(truths, tcat, rcat, rel, regime))
                for regime, _ in _REGIMES]
            if holdings[0] == holdings[1] == holdings[2] and len(holdings[0]) == 1:
                out.append(_QACandidate(
                    "relation",
                    dsl.QueryRelation(_filt(tcat), _filt(rcat)),
                    next(iter(holdings[0])), False))
    for tcat in present:
        others = [c for c in present if c != tcat]
        for a, r1cat in enumerate(others):
            for r2cat in others[a + 1:]:
                holdings = [frozenset(
                    rel for rel in vocabulary.ternary_relations
                    if _universal_triple(truths, tcat, r1cat, r2cat, rel, regime))
                    for regime, _ in _REGIMES]
                if holdings[0] == holdings[1] == holdings[2] and len(holdings[0]) == 1:
                    gold = next(iter(holdings[0]))
                    out.append(_QACandidate(
                        "relation",
                        dsl.QueryTRelation(_filt(tcat), _filt(r1cat), _filt(r2cat)),
                        gold, gold.startswith(ANCHOR_PREFIX)))
    return out


def _universal_pair(truths: SceneTruths, tcat: str, rcat: str, rel: str,
                    regime: str) -> bool:
    t_idx = np.flatnonzero(truths.category_mask[tcat])
    r_idx = np.flatnonzero(truths.category_mask[rcat])
    return bool(truths.binary[regime][rel][np.ix_(t_idx, r_idx)].all())


def _universal_triple(truths: SceneTruths, tcat: str, r1cat: str, r2cat: str,
                      rel: str, regime: str) -> bool:
    t_idx = np.flatnonzero(truths.category_mask[tcat])
    r1_idx = np.flatnonzero(truths.category_mask[r1cat])
    r2_idx = np.flatnonzero(truths.category_mask[r2cat])
    return bool(truths.ternary[regime][rel][np.ix_(t_idx, r1_idx, r2_idx)].all())


def build_qa_dataset(scenes: list[Scene], vocabulary: Vocabulary,
                     n_items: int = 200, seed: int = 0,
                     lexicon: Lexicon | None = None) -> list[QAInstance]:
    """Sample a type-balanced QA set with margin-robust golds.

    Exist questions are balanced yes/no as far as the scenes allow; every
    item's question text regenerates from its program via the lexicon.
    """
    lexicon = lexicon or build_lexicon(vocabulary)
    pools: dict[str, list[tuple[int, _QACandidate]]] = {q: [] for q in QA_TYPES}
    for scene in scenes:
        truths = SceneTruths(scene, vocabulary)
        for cand in enumerate_qa_candidates(truths, vocabulary):
            pools[cand.qtype].append((scene.seed, cand))

    rng = np.random.default_rng(seed)
    per_type = n_items // len(QA_TYPES)
    quota = {q: per_type for q in QA_TYPES}
    for q in list(QA_TYPES)[:n_items % len(QA_TYPES)]:
        quota[q] += 1

    chosen: list[tuple[int, _QACandidate]] = []
    for qtype in QA_TYPES:
        pool = pools[qtype]
        if len(pool) < quota[qtype]:
            raise DataError(
                f"not enough {qtype} QA candidates: {len(pool)} < {quota[qtype]}")
        if qtype == "exist":
            yes = [p for p in pool if p[1].is_positive]
            no = [p for p in pool if not p[1].is_positive]
            half = quota[qtype] // 2
            n_no = min(half, len(no))
            n_yes = quota[qtype] - n_no
            chosen += _sample_rows(yes, n_yes, rng)
            chosen += _sample_rows(no, n_no, rng)
        elif qtype == "count":
            chosen += _sample_balanced(pool, quota[qtype],
                                       key=lambda p: p[1].answer, rng=rng)
        else:
            chosen += _sample_rows(pool, quota[qtype], rng)

    items = []
    for index, (scene_seed, cand) in enumerate(chosen):
        lowered = dsl.lower_anchor(cand.program, vocabulary)
        items.append(QAInstance(
            scene_seed=scene_seed,
            question=generate_utterance(cand.program, lexicon,
                                        seed=scene_seed * 7919 + index),
            program_text=dsl.print_program(cand.program),
            answer=cand.answer,
            qtype=cand.qtype,
            view_dependent=dsl.is_view_dependent(lowered, vocabulary),
        ))
    return items


def build_balanced_object_items(scenes: list[Scene], vocabulary: Vocabulary,
                                n_items: int = 500, n_answers: int = 4,
                                seed: int = 0,
                                lexicon: Lexicon | None = None) -> list[QAInstance]:
    """Object questions whose golds are balanced over exactly `n_answers`
    categories, so the chance rate of an answer-blind model is 1/n_answers."""
    lexicon = lexicon or build_lexicon(vocabulary)
    by_answer: dict[str, list[tuple[int, _QACandidate]]] = {}
    for scene in scenes:
        truths = SceneTruths(scene, vocabulary)
        for cand in enumerate_qa_candidates(truths, vocabulary):
            if cand.qtype == "object":
                by_answer.setdefault(cand.answer, []).append((scene.seed, cand))
    ranked = sorted(by_answer, key=lambda c: (-len(by_answer[c]), c))
    if len(ranked) < n_answers:
        raise DataError(
            f"only {len(ranked)} answer categories available, need {n_answers}")
    per_answer = n_items // n_answers
    rng = np.random.default_rng(seed)
    chosen: list[tuple[int, _QACandidate]] = []
    for category in ranked[:n_answers]:
        pool = by_answer[category]
        if len(pool) < per_answer:
            raise DataError(
                f"answer category {category!r} has {len(pool)} items, "
                f"need {per_answer}")
        chosen += _sample_rows(pool, per_answer, rng)
    items = []
    for index, (scene_seed, cand) in enumerate(chosen):
        lowered = dsl.lower_anchor(cand.program, vocabulary)
        items.append(QAInstance(
            scene_seed=scene_seed,
            question=generate_utterance(cand.program, lexicon,
                                        seed=scene_seed * 6007 + index),
            program_text=dsl.print_program(cand.program),
            answer=cand.answer,
            qtype="object",
            view_dependent=dsl.is_view_dependent(lowered, vocabulary),
        ))
    return items


def _sample_rows(rows: list, k: int, rng: np.random.Generator) -> list:
    if k >= len(rows):
        return list(rows)
    idx = rng.choice(len(rows), size=k, replace=False)
    return [rows[i] for i in sorted(idx)]


def _sample_balanced(rows: list, k: int, key, rng: np.random.Generator) -> list:
    """Draw k rows spreading the draw as evenly as possible across key groups."""
    groups: dict = {}
    for row in rows:
        groups.setdefault(key(row), []).append(row)
    for group in groups.values():
        order = rng.permutation(len(group))
        group[:] = [group[i] for i in order]
    chosen: list = []
    names = sorted(groups, key=str)
    while len(chosen) < k and any(groups[n] for n in names):
        for name in names:
            if len(chosen) == k:
                break
            if groups[name]:
                chosen.append(groups[name].pop())
    return chosen


# ---------------------------------------------------------------------------
# dataset directory IO
# ---------------------------------------------------------------------------

def save_dataset(path: str, splits: DatasetSplits,
                 corpus_configs: dict[str, CorpusConfig],
                 qa_items: list[QAInstance] | None = None) -> None:
    """Write meta.json, scenes.jsonl, {train,val,test}.jsonl (and qa.jsonl).

    Scenes are stored as (seed, generator-config) pairs and regenerated on
    load; generation is deterministic, so this is lossless for generated
    corpora.
    """
    os.makedirs(path, exist_ok=True)
    meta = {
        "vocabulary": splits.vocabulary.to_json(),
        "spec": splits.spec.to_json(),
        "meta": _jsonable(splits.meta),
        "counts": {k: len(splits.split(k)) for k in ("train", "val", "test")},
    }
    with open(os.path.join(path, "meta.json"), "w") as fh:
        json.dump(meta, fh, indent=2)
    config_keys = {}
    with open(os.path.join(path, "scenes.jsonl"), "w") as fh:
        for seed, scene in sorted(splits.scenes.items()):
            key = _config_key_for_scene(seed, corpus_configs)
            config_keys[key] = corpus_configs[key]
            fh.write(json.dumps({"seed": seed, "config": key,
                                 "scene_type": scene.scene_type,
                                 "m": scene.m}) + "\n")
    with open(os.path.join(path, "configs.json"), "w") as fh:
        json.dump({k: scene_config_to_json(c.scene)
                   for k, c in config_keys.items()}, fh, indent=2)
    for name in ("train", "val", "test"):
        with open(os.path.join(path, f"{name}.jsonl"), "w") as fh:
            for inst in splits.split(name):
                fh.write(json.dumps(inst.to_json()) + "\n")
    if qa_items is not None:
        with open(os.path.join(path, "qa.jsonl"), "w") as fh:
            for item in qa_items:
                fh.write(json.dumps(item.to_json()) + "\n")


def _config_key_for_scene(seed: int, configs: dict[str, CorpusConfig]) -> str:
    if "dense" in configs and seed >= DENSE_SEED_OFFSET:
        return "dense"
    return "sparse"


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, set, frozenset)):
        return [_jsonable(v) for v in value]
    return value


def load_dataset(path: str) -> tuple[DatasetSplits, list[QAInstance] | None]:
    with open(os.path.join(path, "meta.json")) as fh:
        meta = json.load(fh)
    vocabulary = Vocabulary.from_json(meta["vocabulary"])
    spec = SplitSpec.from_json(meta["spec"])
    with open(os.path.join(path, "configs.json")) as fh:
        configs = {k: scene_config_from_json(v) for k, v in json.load(fh).items()}
    scenes: dict[int, Scene] = {}
    with open(os.path.join(path, "scenes.jsonl")) as fh:
        for line in fh:
            row = json.loads(line)
            scene = generate_scene(configs[row["config"]], seed=row["seed"])
            if scene.m != row["m"] or scene.scene_type != row["scene_type"]:
                raise DataError(
                    f"scene {row['seed']} regeneration mismatch; "
                    "dataset was built with a different generator")
            scenes[row["seed"]] = scene
    parts = {}
    for name in ("train", "val", "test"):
        items = []
        with open(os.path.join(path, f"{name}.jsonl")) as fh:
            for line in fh:
                items.append(TaskInstance.from_json(json.loads(line)))
        parts[name] = items
    qa_path = os.path.join(path, "qa.jsonl")
    qa_items = None
    if os.path.exists(qa_path):
        qa_items = []
        with open(qa_path) as fh:
            for line in fh:
                qa_items.append(QAInstance.from_json(json.loads(line)))
    splits = DatasetSplits(parts["train"], parts["val"], parts["test"],
                           scenes, vocabulary, spec, meta.get("meta", {}))
    return splits, qa_items
