"""Synthetic 3D scenes: oriented boxes with category-colored point clouds.

A scene is a set of labeled objects in a square room with the floor at z = 0.
Placement deliberately creates material for every relation family: stacked
pairs (above/below), spread-out singles (near/far), collinear triples
(between), and the facing directions needed for view-dependent relations.
Point clouds are sampled inside each oriented box over an L-shaped support
(full-height front slab plus a low back slab) so that the facing direction is
recoverable from geometry alone, and colored by a per-category palette with
jitter so that the category is recoverable as well.
"""
from __future__ import annotations

import base64
import dataclasses
import json
from collections import Counter
from dataclasses import dataclass, field, replace

import numpy as np

from .relations import SceneArrays, box_axes
from .vocab import DEFAULT_VOCABULARY, Vocabulary

MAX_OBJECTS = 88
DEFAULT_POINTS = 1024

# Palette colors (RGB in [0, 1]) and base half extents per default category.
CATEGORY_COLORS = {
    "bed": (0.85, 0.15, 0.15),
    "cabinet": (0.15, 0.35, 0.85),
    "chair": (0.15, 0.75, 0.20),
    "lamp": (0.95, 0.85, 0.10),
    "sofa": (0.60, 0.20, 0.75),
    "table": (0.55, 0.35, 0.15),
}
CATEGORY_SIZES = {
    "bed": (0.95, 0.75, 0.25),
    "cabinet": (0.40, 0.30, 0.55),
    "chair": (0.25, 0.25, 0.40),
    "lamp": (0.12, 0.12, 0.28),
    "sofa": (0.80, 0.40, 0.35),
    "table": (0.50, 0.50, 0.35),
}
_FALLBACK_COLOR = (0.5, 0.5, 0.5)
_FALLBACK_SIZE = (0.35, 0.35, 0.35)

SCENE_TYPES = ("bedroom", "kitchen", "living_room", "office")
# Category preference per scene type; weights renormalize over the vocabulary.
_SCENE_TYPE_BIAS = {
    "bedroom": {"bed": 3.0, "lamp": 2.0, "cabinet": 1.5},
    "kitchen": {"table": 3.0, "chair": 2.5, "cabinet": 2.0},
    "living_room": {"sofa": 3.0, "table": 2.0, "lamp": 1.5},
    "office": {"chair": 3.0, "table": 2.5, "cabinet": 2.0},
}

# L-shaped point support: the front slab spans the leading fraction of the
# box along the facing axis at full height; the rest of the box is filled
# only up to a fraction of its height.  The asymmetry encodes orientation.
_FRONT_FRACTION = 0.35
_BACK_HEIGHT_FRACTION = 0.45
_COLOR_JITTER = 0.05


class SceneGenerationError(RuntimeError):
    pass


@dataclass
class SceneObject:
    """One oriented box with an optional (N, 6) xyzrgb point cloud."""

    category: str
    centroid: np.ndarray      # (3,)
    half_extents: np.ndarray  # (3,) in the box frame (facing, side, up)
    facing: np.ndarray        # (3,) horizontal unit vector
    points: np.ndarray | None = None  # (N, 6) float32

    def validate(self, n_points: int | None = None) -> None:
        if self.centroid.shape != (3,) or self.half_extents.shape != (3,) \
                or self.facing.shape != (3,):
            raise ValueError("object geometry fields must be 3-vectors")
        if not (self.half_extents > 0).all():
            raise ValueError("half extents must be positive")
        if abs(np.linalg.norm(self.facing) - 1.0) > 1e-6 or abs(self.facing[2]) > 1e-9:
            raise ValueError("facing must be a horizontal unit vector")
        if self.points is not None:
            if self.points.ndim != 2 or self.points.shape[1] != 6:
                raise ValueError("points must be (N, 6)")
            if n_points is not None and self.points.shape[0] != n_points:
                raise ValueError(f"expected {n_points} points, got {self.points.shape[0]}")
            local = (self.points[:, :3].astype(np.float64) - self.centroid) @ box_axes(self.facing).T
            if (np.abs(local) > self.half_extents + 1e-4).any():
                raise ValueError("points must lie inside the oriented box")

    @property
    def horizontal_radius(self) -> float:
        return float(np.hypot(self.half_extents[0], self.half_extents[1]))


@dataclass
class Scene:
    scene_type: str
    seed: int
    objects: list[SceneObject]

    @property
    def m(self) -> int:
        return len(self.objects)

    @property
    def categories(self) -> list[str]:
        return [o.category for o in self.objects]

    def arrays(self) -> SceneArrays:
        return SceneArrays(
            centroids=np.stack([o.centroid for o in self.objects]),
            half_extents=np.stack([o.half_extents for o in self.objects]),
            facings=np.stack([o.facing for o in self.objects]),
        )

    def validate(self) -> None:
        if not (2 <= self.m <= MAX_OBJECTS):
            raise ValueError(f"scene must have 2..{MAX_OBJECTS} objects, got {self.m}")
        if len(set(self.categories)) < 2:
            raise ValueError("scene must contain at least two categories")
        for obj in self.objects:
            obj.validate()


@dataclass(frozen=True)
class SceneConfig:
    n_objects: int = 10
    n_objects_max: int | None = None   # draw M uniformly from [n_objects, n_objects_max]
    n_points: int = DEFAULT_POINTS
    room_half: float = 4.5             # room spans [-room_half, room_half]^2
    scene_type: str | None = None      # None: drawn from SCENE_TYPES
    categories: tuple[str, ...] = DEFAULT_VOCABULARY.categories
    stack_prob: float = 0.22           # chance an object is placed on a base
    high_stack_prob: float = 0.25      # chance a stacked object floats high
    between_prob: float = 0.30         # chance an object is placed on a segment
    clearance: float = 0.05
    max_attempts: int = 60


def scene_config_to_json(config: SceneConfig) -> dict:
    payload = dataclasses.asdict(config)
    payload["categories"] = list(config.categories)
    return payload


def scene_config_from_json(payload: dict) -> SceneConfig:
    payload = dict(payload)
    payload["categories"] = tuple(payload["categories"])
    return SceneConfig(**payload)


def _category_weights(categories: tuple[str, ...], scene_type: str) -> np.ndarray:
    bias = _SCENE_TYPE_BIAS.get(scene_type, {})
    base = np.array([1.0 / (i + 1) for i in range(len(categories))])
    mult = np.array([bias.get(c, 1.0) for c in categories])
    w = base * mult
    return w / w.sum()


def _sample_facing(rng: np.random.Generator) -> np.ndarray:
    theta = rng.uniform(0.0, 2.0 * np.pi)
    return np.array([np.cos(theta), np.sin(theta), 0.0])


def _horizontally_clear(pos: np.ndarray, radius: float, placed: list[SceneObject],
                        clearance: float, skip_vertical: list[int] | None = None,
                        z_interval: tuple[float, float] | None = None) -> bool:
    for idx, other in enumerate(placed):
        if skip_vertical and idx in skip_vertical:
            continue
        d = np.hypot(pos[0] - other.centroid[0], pos[1] - other.centroid[1])
        if d < radius + other.horizontal_radius + clearance:
            if z_interval is None:
                return False
            other_lo = other.centroid[2] - other.half_extents[2]
            other_hi = other.centroid[2] + other.half_extents[2]
            if not (z_interval[0] > other_hi + clearance or z_interval[1] < other_lo - clearance):
                return False
    return True


def _sample_points(obj: SceneObject, n: int, rng: np.random.Generator) -> np.ndarray:
    """L-shaped support in the box frame plus palette color with jitter."""
    h = obj.half_extents
    front_lo = h[0] * (1.0 - 2.0 * _FRONT_FRACTION)
    front_vol = (h[0] - front_lo) * h[1] * h[2]
    back_vol = (front_lo + h[0]) * h[1] * (h[2] * _BACK_HEIGHT_FRACTION)
    p_front = front_vol / (front_vol + back_vol)
    u = rng.random(n)
    local = np.empty((n, 3))
    local[:, 1] = rng.uniform(-h[1], h[1], n)
    in_front = u < p_front
    n_front = int(in_front.sum())
    local[in_front, 0] = rng.uniform(front_lo, h[0], n_front)
    local[in_front, 2] = rng.uniform(-h[2], h[2], n_front)
    n_back = n - n_front
    local[~in_front, 0] = rng.uniform(-h[0], front_lo, n_back)
    local[~in_front, 2] = rng.uniform(-h[2], -h[2] + 2.0 * h[2] * _BACK_HEIGHT_FRACTION, n_back)
    world = obj.centroid + local @ box_axes(obj.facing)
    color = np.array(CATEGORY_COLORS.get(obj.category, _FALLBACK_COLOR))
    rgb = np.clip(color + rng.uniform(-_COLOR_JITTER, _COLOR_JITTER, (n, 3)), 0.0, 1.0)
    return np.concatenate([world, rgb], axis=1).astype(np.float32)


def generate_scene(config: SceneConfig, seed: int) -> Scene:
    """Deterministically generate one scene; raises SceneGenerationError with
    the seed in the message when placement cannot satisfy the constraints."""
    rng = np.random.default_rng(seed)
    scene_type = config.scene_type or SCENE_TYPES[rng.integers(len(SCENE_TYPES))]
    if config.n_objects_max is not None:
        m = int(rng.integers(config.n_objects, config.n_objects_max + 1))
    else:
        m = config.n_objects
    if not (2 <= m <= MAX_OBJECTS):
        raise SceneGenerationError(f"seed {seed}: object count {m} outside 2..{MAX_OBJECTS}")
    weights = _category_weights(config.categories, scene_type)

    for _ in range(config.max_attempts):
        cats = [config.categories[i] for i in rng.choice(len(config.categories), m, p=weights)]
        if len(set(cats)) < 2:
            continue
        # At least two categories must be unambiguous (single-member) so that
        # relations over unique references are expressible in every scene.
        if sum(1 for n in Counter(cats).values() if n == 1) < 2:
            continue
        objects = _place_objects(cats, config, rng)
        if objects is None:
            continue
        for obj in objects:
            obj.points = _sample_points(obj, config.n_points, rng)
        scene = Scene(scene_type=scene_type, seed=seed, objects=objects)
        scene.validate()
        return scene
    raise SceneGenerationError(f"seed {seed}: placement failed after {config.max_attempts} attempts")


def _room_half(cats: list[str], config: SceneConfig) -> float:
    # Grow the room when the requested objects cannot plausibly pack into the
    # configured footprint (dense scenes).
    area = 0.0
    for cat in cats:
        r = float(np.hypot(*CATEGORY_SIZES.get(cat, _FALLBACK_SIZE)[:2])) * 1.2
        area += (2.0 * r + 2.0 * config.clearance) ** 2
    return max(config.room_half, 0.5 * float(np.sqrt(2.4 * area)))


def _place_objects(cats: list[str], config: SceneConfig,
                   rng: np.random.Generator) -> list[SceneObject] | None:
    placed: list[SceneObject] = []
    bases_used: set[int] = set()
    room_half = _room_half(cats, config)
    config = replace(config, room_half=room_half)
    counts = Counter(cats)
    singleton_cats = {c for c, n in counts.items() if n == 1}
    # Singleton categories go down first so they are available as unambiguous
    # segment endpoints for the between placements that follow.
    cats = sorted(cats, key=lambda c: counts[c])
    for cat in cats:
        base_size = np.array(CATEGORY_SIZES.get(cat, _FALLBACK_SIZE))
        h = base_size * rng.uniform(0.8, 1.2, 3)
        radius = float(np.hypot(h[0], h[1]))
        facing = _sample_facing(rng)
        obj = None
        # Stacked placement: small object over an existing wider base.
        if placed and rng.random() < config.stack_prob:
            candidates = [i for i, o in enumerate(placed)
                          if i not in bases_used and o.horizontal_radius >= radius * 0.9
                          and o.centroid[2] + o.half_extents[2] < 1.2]
            if candidates:
                bi = candidates[int(rng.integers(len(candidates)))]
                base = placed[bi]
                if rng.random() < config.high_stack_prob:
                    gap = rng.uniform(1.8, 2.6)   # high float: above without near
                else:
                    gap = rng.uniform(0.15, 0.40)
                top = base.centroid[2] + base.half_extents[2]
                cz = top + gap + h[2]
                # keep the footprint well inside the above/below gate
                gate = max(h[0] + base.half_extents[0], h[1] + base.half_extents[1])
                off = rng.uniform(0.0, 0.3 * gate)
                ang = rng.uniform(0.0, 2.0 * np.pi)
                pos = base.centroid[:2] + off * np.array([np.cos(ang), np.sin(ang)])
                pos = np.clip(pos, -config.room_half + radius, config.room_half - radius)
                zint = (cz - h[2], cz + h[2])
                if _horizontally_clear(np.array([*pos, cz]), radius, placed,
                                       config.clearance, z_interval=zint):
                    obj = SceneObject(cat, np.array([pos[0], pos[1], cz]), h, facing)
                    bases_used.add(bi)
        # Between placement: drop onto the segment spanned by two objects.
        # Prefer endpoints whose categories occur exactly once in the scene so
        # the segment is referable without ambiguity (a multi-member endpoint
        # category empties the universally quantified denotation).
        if obj is None and len(placed) >= 2 and rng.random() < config.between_prob:
            pairs = [(j, k) for j in range(len(placed))
                     for k in range(j + 1, len(placed))
                     if placed[j].category != placed[k].category
                     and cat not in (placed[j].category, placed[k].category)]
            unique_pairs = [(j, k) for j, k in pairs
                            if placed[j].category in singleton_cats
                            and placed[k].category in singleton_cats]
            pool = unique_pairs or pairs
            for _ in range(20 if pool else 0):
                j, k = pool[int(rng.integers(len(pool)))]
                a, b = placed[j].centroid, placed[k].centroid
                span = np.linalg.norm(b[:2] - a[:2])
                if span < 2.0 * radius + placed[j].horizontal_radius + placed[k].horizontal_radius:
                    continue
                t = rng.uniform(0.3, 0.7)
                mid = a + t * (b - a)
                seg = (b - a)[:2]
                perp = np.array([-seg[1], seg[0]]) / (np.linalg.norm(seg) + 1e-12)
                off = rng.uniform(-0.2, 0.2)
                pos = mid[:2] + off * perp
                if np.abs(pos).max() > config.room_half - radius:
                    continue
                cz = h[2]
                candidate = np.array([pos[0], pos[1], cz])
                if _horizontally_clear(candidate, radius, placed, config.clearance):
                    # require true 3D proximity to the segment, margins included
                    t3 = np.dot(candidate - a, b - a) / np.dot(b - a, b - a)
                    d3 = np.linalg.norm(candidate - (a + t3 * (b - a)))
                    if d3 <= 0.38 and 0.16 < t3 < 0.84:
                        obj = SceneObject(cat, candidate, h, facing)
                        break
        # Plain floor placement.
        if obj is None:
            for _ in range(40):
                pos = rng.uniform(-config.room_half + radius, config.room_half - radius, 2)
                candidate = np.array([pos[0], pos[1], h[2]])
                if _horizontally_clear(candidate, radius, placed, config.clearance):
                    obj = SceneObject(cat, candidate, h, facing)
                    break
        if obj is None:
            return None
        placed.append(obj)
    return placed


# ---------------------------------------------------------------------------
# Serialization: {"scene_type", "seed", "objects": [{category, centroid,
# half_extents, facing, points(base64 little-endian float32 N x 6)}]}

def scene_to_json(scene: Scene, include_points: bool = True) -> dict:
    out = {"scene_type": scene.scene_type, "seed": scene.seed, "objects": []}
    for obj in scene.objects:
        entry = {
            "category": obj.category,
            "centroid": [float(v) for v in obj.centroid],
            "half_extents": [float(v) for v in obj.half_extents],
            "facing": [float(v) for v in obj.facing],
        }
        if include_points and obj.points is not None:
            raw = np.ascontiguousarray(obj.points, dtype="<f4").tobytes()
            entry["points"] = base64.b64encode(raw).decode("ascii")
        out["objects"].append(entry)
    return out


def scene_from_json(data: dict) -> Scene:
    objects = []
    for entry in data["objects"]:
        points = None
        if "points" in entry:
            raw = base64.b64decode(entry["points"])
            flat = np.frombuffer(raw, dtype="<f4")
            if flat.size % 6 != 0:
                raise ValueError("point payload size is not a multiple of 6")
            points = flat.reshape(-1, 6).copy()
        objects.append(SceneObject(
            category=entry["category"],
            centroid=np.array(entry["centroid"], dtype=np.float64),
            half_extents=np.array(entry["half_extents"], dtype=np.float64),
            facing=np.array(entry["facing"], dtype=np.float64),
            points=points,
        ))
    scene = Scene(scene_type=data["scene_type"], seed=int(data["seed"]), objects=objects)
    scene.validate()
    return scene


def scene_to_text(scene: Scene, include_points: bool = True) -> str:
    return json.dumps(scene_to_json(scene, include_points=include_points))


def scene_from_text(text: str) -> Scene:
    return scene_from_json(json.loads(text))


@dataclass(frozen=True)
class TaskInstance:
    """One grounding task: an utterance / program over a scene with a unique
    ground-truth target object."""

    scene_seed: int
    utterance: str
    program_text: str
    target: int
    family: str
    view_dependent: bool
    # (target category, relation, reference category) for relation-bearing
    # instances; None for bare category lookups.
    triple: tuple[str, str, str] | None = None

    def to_json(self) -> dict:
        return {
            "scene_seed": self.scene_seed,
            "utterance": self.utterance,
            "program": self.program_text,
            "target": self.target,
            "family": self.family,
            "view_dependent": self.view_dependent,
            "triple": list(self.triple) if self.triple else None,
        }

    @classmethod
    def from_json(cls, data: dict) -> "TaskInstance":
        triple = tuple(data["triple"]) if data.get("triple") else None
        return cls(
            scene_seed=int(data["scene_seed"]),
            utterance=data["utterance"],
            program_text=data["program"],
            target=int(data["target"]),
            family=data["family"],
            view_dependent=bool(data["view_dependent"]),
            triple=triple,
        )
