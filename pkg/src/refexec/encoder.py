"""Point-cloud encoders, concept heads, and checkpoint IO.

Two PointNet-style encoders with deliberately different capacities:

    E^obj : per-point MLP (6 -> 64 -> 64, ReLU) -> max-pool -> linear -> D_o
    E^rel : per-point linear (3 -> 32) -> max-pool -> linear -> D_p,
            over a deterministic 256-point subsample of the cloud

Pair features f_rel[i, j] = MLP^binary(concat(e_rel[i], e_rel[j])) are stored
densely (M x M x D_r).  Ternary features are never stored as an M^3 tensor:
g_ternary[i, j] = MLP^ternary(f_rel[i, j]) is kept at M x M x D_t and the
triple feature concat(g[i,j], g[j,k], g[i,k]) is assembled on demand.  Since
each head is a single linear map, the ternary logit splits into three pair
lookups, logit[i,j,k] = A[i,j] + B[j,k] + C[i,k] + bias, which is how
`LearnedFeatures.ternary_rows` serves the executor in row chunks.

All head outputs pass through log-sigmoid, so every concept score is a
log-probability in (-inf, 0].
"""
from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from .scene import Scene
from .vocab import Vocabulary

CHECKPOINT_MAGIC = b"NS3D"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    d_obj: int = 64
    d_pos: int = 32
    d_rel: int = 32
    d_ternary: int = 16
    obj_hidden: int = 64
    binary_hidden: int = 64
    ternary_hidden: int = 32
    n_point_sample: int = 256
    seed: int = 0

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, payload: dict) -> "EncoderConfig":
        return cls(**payload)


@dataclass
class FeatureBundle:
    """Per-scene encoder outputs; heads live on the model."""
    f_obj: torch.Tensor       # M x D_o
    e_rel: torch.Tensor       # M x D_p
    f_rel: torch.Tensor       # M x M x D_r
    g_ternary: torch.Tensor   # M x M x D_t

    @property
    def m(self) -> int:
        return self.f_obj.shape[0]


def ternary_slice(g_ternary: torch.Tensor, i: int, j: int, k: int) -> torch.Tensor:
    """Triple feature for (i, j, k): concat(g[i,j], g[j,k], g[i,k])."""
    return torch.cat([g_ternary[i, j], g_ternary[j, k], g_ternary[i, k]])


def subsample_indices(points_xyz: np.ndarray, n_sample: int) -> np.ndarray:
    """Deterministic, order-independent point subsample.

    Sorts the cloud lexicographically by (x, y, z) and takes an evenly
    strided subset, so any permutation of the same points selects the same
    set.  Returns indices into the original order.
    """
    n = points_xyz.shape[0]
    if n <= n_sample:
        return np.arange(n)
    order = np.lexsort((points_xyz[:, 2], points_xyz[:, 1], points_xyz[:, 0]))
    picks = np.linspace(0, n - 1, n_sample).round().astype(np.int64)
    return order[picks]


def prepare_scene_tensors(scene: Scene, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Stack object clouds into an (M, N, 6) tensor for the encoders."""
    clouds = []
    for obj in scene.objects:
        if obj.points is None:
            raise ValueError(f"object {obj.category!r} has no point cloud")
        clouds.append(torch.from_numpy(obj.points).to(dtype))
    return torch.stack(clouds)


def presubsample_positions(points: torch.Tensor, n_sample: int) -> torch.Tensor:
    """Apply the deterministic positional subsample ahead of time.

    Returns an (M, min(N, n_sample), 3) tensor that `encode_positions` will
    consume unchanged, so the per-epoch sort cost is paid once per scene.
    """
    xyz = points[..., :3]
    if xyz.shape[-2] <= n_sample:
        return xyz
    rows = []
    for cloud in xyz:
        idx = subsample_indices(cloud.detach().cpu().numpy().astype(np.float64), n_sample)
        rows.append(cloud[torch.from_numpy(idx)])
    return torch.stack(rows)


class GroundingModel(nn.Module):
    """Encoders plus per-concept classifier heads for one vocabulary."""

    def __init__(self, vocabulary: Vocabulary,
                 config: EncoderConfig | None = None,
                 dtype: torch.dtype = torch.float32):
        super().__init__()
        self.vocabulary = vocabulary
        self.config = config or EncoderConfig()
        c = self.config
        self.obj_point_mlp = nn.Sequential(
            nn.Linear(6, c.obj_hidden), nn.ReLU(),
            nn.Linear(c.obj_hidden, c.obj_hidden), nn.ReLU(),
        )
        self.obj_out = nn.Linear(c.obj_hidden, c.d_obj)
        self.pos_point = nn.Linear(3, c.d_pos)
        self.pos_out = nn.Linear(c.d_pos, c.d_pos)
        self.binary_mlp = nn.Sequential(
            nn.Linear(2 * c.d_pos, c.binary_hidden), nn.ReLU(),
            nn.Linear(c.binary_hidden, c.d_rel),
        )
        self.ternary_mlp = nn.Sequential(
            nn.Linear(c.d_rel, c.ternary_hidden), nn.ReLU(),
            nn.Linear(c.ternary_hidden, c.d_ternary),
        )
        self.category_heads = nn.ModuleDict(
            {name: nn.Linear(c.d_obj, 1) for name in vocabulary.categories})
        self.relation_heads = nn.ModuleDict(
            {name: nn.Linear(c.d_rel, 1) for name in vocabulary.binary_relations})
        self.ternary_heads = nn.ModuleDict(
            {name: nn.Linear(3 * c.d_ternary, 1) for name in vocabulary.ternary_relations})
        self._reset_parameters(c.seed)
        if dtype is not torch.float32:
            self.to(dtype)

    def _reset_parameters(self, seed: int) -> None:
        gen = torch.Generator().manual_seed(seed)
        for module in self.modules():
            if isinstance(module, nn.Linear):
                bound = float(module.in_features) ** -0.5
                with torch.no_grad():
                    module.weight.uniform_(-bound, bound, generator=gen)
                    module.bias.uniform_(-bound, bound, generator=gen)

    @property
    def dtype(self) -> torch.dtype:
        return self.obj_out.weight.dtype

    def encode_objects(self, points: torch.Tensor) -> torch.Tensor:
        """(M, N, 6) clouds -> (M, D_o) object features."""
        per_point = self.obj_point_mlp(points)
        pooled = per_point.max(dim=-2).values
        return self.obj_out(pooled)

    def encode_positions(self, points_xyz: torch.Tensor) -> torch.Tensor:
        """(M, N, 3) coordinates -> (M, D_p) positional embeddings."""
        n_sample = self.config.n_point_sample
        if points_xyz.shape[-2] > n_sample:
            rows = []
            for cloud in points_xyz:
                idx = subsample_indices(
                    cloud.detach().cpu().numpy().astype(np.float64), n_sample)
                rows.append(cloud[torch.from_numpy(idx)])
            points_xyz = torch.stack(rows)
        per_point = self.pos_point(points_xyz)
        pooled = per_point.max(dim=-2).values
        return self.pos_out(pooled)

    def relation_features(self, e_rel: torch.Tensor) -> torch.Tensor:
        """(M, D_p) embeddings -> (M, M, D_r) ordered-pair features."""
        m = e_rel.shape[0]
        left = e_rel[:, None, :].expand(m, m, -1)
        right = e_rel[None, :, :].expand(m, m, -1)
        return self.binary_mlp(torch.cat([left, right], dim=-1))

    def encode_scene(self, points: torch.Tensor,
                     points_xyz: torch.Tensor | None = None) -> FeatureBundle:
        """Full per-scene bundle; pass pre-subsampled coordinates to skip the
        (deterministic) subsample sort on repeated encodes of one scene."""
        f_obj = self.encode_objects(points)
        e_rel = self.encode_positions(
            points[..., :3] if points_xyz is None else points_xyz)
        f_rel = self.relation_features(e_rel)
        g_ternary = self.ternary_mlp(f_rel)
        return FeatureBundle(f_obj=f_obj, e_rel=e_rel, f_rel=f_rel, g_ternary=g_ternary)


class LearnedFeatures:
    """Feature-provider view of a model + encoded scene for the executor.

    Scores are cached per concept, so repeated program executions against the
    same scene reuse one forward pass.  Gradients flow through every cached
    tensor; build a fresh instance after each parameter update.
    """

    def __init__(self, model: GroundingModel, bundle: FeatureBundle):
        self.model = model
        self.bundle = bundle
        self.vocabulary = model.vocabulary
        self._category: dict[str, torch.Tensor] = {}
        self._relation: dict[str, torch.Tensor] = {}
        self._ternary_parts: dict[str, tuple[torch.Tensor, ...]] = {}
        self._logits_matrix: torch.Tensor | None = None

    @classmethod
    def from_scene(cls, model: GroundingModel, scene: Scene) -> "LearnedFeatures":
        points = prepare_scene_tensors(scene, model.dtype)
        return cls(model, model.encode_scene(points))

    @property
    def m(self) -> int:
        return self.bundle.m

    @property
    def dtype(self) -> torch.dtype:
        return self.bundle.f_obj.dtype

    def category_logits_matrix(self) -> torch.Tensor:
        """Raw head logits, (M, C) in vocabulary order (pre log-sigmoid)."""
        if self._logits_matrix is None:
            cols = [self.model.category_heads[name](self.bundle.f_obj)
                    for name in self.vocabulary.categories]
            self._logits_matrix = torch.cat(cols, dim=-1)
        return self._logits_matrix

    def category_scores(self, name: str) -> torch.Tensor:
        if name not in self._category:
            idx = self.vocabulary.category_id(name)
            self._category[name] = nn.functional.logsigmoid(
                self.category_logits_matrix()[:, idx])
        return self._category[name]

    def all_category_scores(self) -> torch.Tensor:
        return nn.functional.logsigmoid(self.category_logits_matrix())

    def relation_scores(self, name: str) -> torch.Tensor:
        if name not in self._relation:
            self.vocabulary.binary_id(name)
            logits = self.model.relation_heads[name](self.bundle.f_rel).squeeze(-1)
            self._relation[name] = nn.functional.logsigmoid(logits)
        return self._relation[name]

    def _ternary_decomposition(self, name: str) -> tuple[torch.Tensor, ...]:
        # logit[i,j,k] = A[i,j] + B[j,k] + C[i,k] + bias for a linear head
        # over concat(g[i,j], g[j,k], g[i,k]).
        if name not in self._ternary_parts:
            self.vocabulary.ternary_id(name)
            head = self.model.ternary_heads[name]
            d = self.model.config.d_ternary
            w1, w2, w3 = head.weight[0].split(d)
            g = self.bundle.g_ternary
            self._ternary_parts[name] = (
                g @ w1, g @ w2, g @ w3, head.bias[0])
        return self._ternary_parts[name]

    def ternary_rows(self, name: str, rows: torch.Tensor) -> torch.Tensor:
        a, b, c, bias = self._ternary_decomposition(name)
        logits = a[rows][:, :, None] + b[None, :, :] + c[rows][:, None, :] + bias
        return nn.functional.logsigmoid(logits)


def _header_json(model: GroundingModel) -> dict:
    blocks = [{"name": name, "shape": list(param.shape)}
              for name, param in model.named_parameters()]
    return {
        "dims": model.config.to_json(),
        "vocabulary_hash": model.vocabulary.content_hash,
        "seed": model.config.seed,
        "dtype": str(model.dtype).removeprefix("torch."),
        "blocks": blocks,
        "vocabulary": model.vocabulary.to_json(),
    }


def save_checkpoint(model: GroundingModel, path: str) -> None:
    """magic, version u32, header-length u32, JSON header, then f32 blocks."""
    header = json.dumps(_header_json(model)).encode("utf-8")
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<II", CHECKPOINT_VERSION, len(header)))
    buf.write(header)
    for _, param in model.named_parameters():
        block = param.detach().cpu().to(torch.float32).numpy()
        buf.write(np.ascontiguousarray(block, dtype="<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path: str) -> GroundingModel:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"bad magic {raw[:4]!r}")
    version, header_len = struct.unpack_from("<II", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        header = json.loads(raw[12:12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt header: {exc}") from exc
    vocabulary = Vocabulary.from_json(header["vocabulary"])
    if vocabulary.content_hash != header["vocabulary_hash"]:
        raise CheckpointError("vocabulary hash mismatch")
    config = EncoderConfig.from_json(header["dims"])
    dtype = getattr(torch, header["dtype"])
    model = GroundingModel(vocabulary, config, dtype=dtype)
    params = dict(model.named_parameters())
    if [b["name"] for b in header["blocks"]] != list(params):
        raise CheckpointError("parameter block list does not match model")
    offset = 12 + header_len
    state = {}
    for block in header["blocks"]:
        shape = tuple(block["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + 4 * count
        if end > len(raw):
            raise CheckpointError(f"truncated block {block['name']!r}")
        values = np.frombuffer(raw, dtype="<f4", count=count, offset=offset)
        state[block["name"]] = torch.from_numpy(
            values.reshape(shape).copy()).to(dtype)
        offset = end
    if offset != len(raw):
        raise CheckpointError("trailing bytes after final parameter block")
    model.load_state_dict(state)
    return model
