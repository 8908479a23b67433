"""Model configuration and the container tying encoders, corrector and fusion head together."""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np

from . import numerics as nx
from .datamodel import ConfigError, SkeletonGraph
from .encoders import (
    ConvSpec,
    FeatureBundle,
    SilhouetteEncoderParams,
    SkeletonEncoderParams,
    encode_silhouette,
    encode_skeleton,
)
from .numerics import Parameter, Tensor
from .refiner import CorrectionNetParams, apply_smoothing, correct_skeleton, normalize_joints

MODES = ("silhouette", "skeleton", "gaitmix", "gaitref")
COMBINES = ("concat", "padding")


@dataclass(frozen=True)
class ModelConfig:
    mode: str = "gaitref"
    combine: str = "concat"
    channels: int = 32
    embed_dim: int = 32
    num_classes: int = 8
    hpp_scale: int = 5
    sil_layers: Optional[tuple] = None  # None -> default stack for `channels`
    sil_input_pool: int = 1
    sil_frame_stride: int = 1
    skel_hidden: tuple = (64, 64, 128, 128)
    decoder_hidden: tuple = (128, 64, 64)
    temporal_kernel: int = 9
    layout: str = "coco17"
    use_FJ: bool = True
    use_FJP: bool = True
    use_FS: bool = True
    detach_FS: bool = False
    normalize_refined: bool = True  # rescale J' to the encoder's input convention before re-encoding
    input_smoothing: str = "none"
    smoothing_window: int = 3
    smoothing_sigma: float = 1.0
    slope: float = 0.01

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.combine not in COMBINES:
            raise ConfigError(f"combine must be one of {COMBINES}, got {self.combine!r}")
        if self.channels <= 0 or self.embed_dim <= 0 or self.num_classes <= 0:
            raise ConfigError("channels, embed_dim and num_classes must be positive")
        if self.mode == "gaitref" and not (self.use_FJ or self.use_FJP or self.use_FS):
            raise ConfigError("corrector needs at least one of use_FJ, use_FJP, use_FS")
        if self.sil_layers is not None:
            object.__setattr__(self, "sil_layers", tuple(ConvSpec(*l) if not isinstance(l, ConvSpec) else l
                                                         for l in self.sil_layers))

    @property
    def uses_silhouette(self) -> bool:
        return self.mode != "skeleton"

    @property
    def uses_skeleton(self) -> bool:
        return self.mode != "silhouette"

    @property
    def num_parts(self) -> int:
        strips = 2 ** (self.hpp_scale - 1)
        if self.mode == "silhouette":
            return strips
        if self.mode == "skeleton":
            return 1
        if self.combine == "padding":
            return strips
        return strips + (1 if self.mode == "gaitmix" else 2)

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.sil_layers is not None:
            d["sil_layers"] = [list(asdict(l).values()) for l in self.sil_layers]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        d = dict(d)
        for key in ("skel_hidden", "decoder_hidden"):
            if key in d:
                d[key] = tuple(d[key])
        if d.get("sil_layers") is not None:
            d["sil_layers"] = tuple(ConvSpec(*l) for l in d["sil_layers"])
        return cls(**d)


@dataclass
class ModelOutput:
    embeddings: Tensor           # (B, parts, d)
    logits: Tensor               # (B, num_classes)
    bundle: FeatureBundle
    refined: Optional[Tensor] = None  # J' (B, N, K, 2)
    delta: Optional[Tensor] = None
    F_J_refined: Optional[Tensor] = None


class GaitModel:
    """All trainable weights plus the forward pass for one of the four model modes.

    In ``gaitref`` mode ``skeleton_encoder`` encodes both the raw and the
    refined skeletons (one object, shared weights).
    """

    def __init__(self, config: ModelConfig, seed: int = 0):
        from .recognizer import FusionParams

        self.config = config
        self.seed = seed
        rng = np.random.default_rng([int(seed), 0xD17])
        c = config
        self.graph = SkeletonGraph.from_layout(c.layout)
        self.silhouette_encoder = (SilhouetteEncoderParams(c.channels, rng, c.sil_layers, c.hpp_scale,
                                                           c.sil_input_pool, c.slope, c.sil_frame_stride)
                                   if c.uses_silhouette else None)
        self.skeleton_encoder = (SkeletonEncoderParams(self.graph, c.channels, rng, c.skel_hidden,
                                                       c.temporal_kernel, c.slope)
                                 if c.uses_skeleton else None)
        self.corrector = (CorrectionNetParams(self.graph, c.channels, 2 ** (c.hpp_scale - 1), rng,
                                              c.decoder_hidden, c.use_FJ, c.use_FJP, c.use_FS,
                                              c.temporal_kernel, c.slope, c.detach_FS)
                          if c.mode == "gaitref" else None)
        self.fusion = FusionParams(c.channels, c.embed_dim, c.num_classes, rng, c.mode, c.combine)

    def parameters(self) -> "OrderedDict[str, Parameter]":
        out: "OrderedDict[str, Parameter]" = OrderedDict()
        for part, prefix in ((self.silhouette_encoder, "sil."), (self.skeleton_encoder, ""),
                             (self.corrector, ""), (self.fusion, "")):
            if part is not None:
                for name, p in part.parameters().items():
                    out[prefix + name] = p
        return out

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, p.numpy()) for k, p in self.parameters().items())

    def load_state_dict(self, state) -> None:
        params = self.parameters()
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise ConfigError(f"checkpoint mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for k, p in params.items():
            p.assign(state[k])

    def preprocess_skeleton(self, joints: np.ndarray) -> np.ndarray:
        """Input smoothing baseline; callers apply it once before ``forward``."""
        c = self.config
        return apply_smoothing(joints, c.input_smoothing, c.smoothing_window, c.smoothing_sigma)

    def encode(self, silhouettes, joints) -> FeatureBundle:
        bundle = FeatureBundle()
        if self.silhouette_encoder is not None:
            bundle.F_S = encode_silhouette(silhouettes, self.silhouette_encoder)
        if self.skeleton_encoder is not None:
            bundle.F_J, bundle.F_J_pre = encode_skeleton(joints, self.skeleton_encoder)
            bundle.F_J_pooled = bundle.F_J
        return bundle

    def forward(self, silhouettes, joints) -> ModelOutput:
        """``silhouettes`` (B, N, H, W), ``joints`` (B, N, K, 2); either may be None if unused."""
        from .recognizer import fuse

        if joints is not None:
            if not isinstance(joints, Tensor):
                joints = np.asarray(joints, dtype=np.float64)
                joints = Tensor(joints[None] if joints.ndim == 3 else joints)
        if silhouettes is not None and not isinstance(silhouettes, Tensor):
            silhouettes = np.asarray(silhouettes, dtype=np.float64)
            silhouettes = Tensor(silhouettes[None] if silhouettes.ndim == 3 else silhouettes)
        bundle = self.encode(silhouettes, joints)
        refined = delta = fj_ref = None
        if self.corrector is not None:
            refined, delta = correct_skeleton(joints, bundle, self.corrector)
            enc_in = normalize_joints(refined) if self.config.normalize_refined else refined
            fj_ref, _ = encode_skeleton(enc_in, self.skeleton_encoder)
        emb, logits = fuse(bundle, fj_ref, self.fusion)
        return ModelOutput(emb, logits, bundle, refined, delta, fj_ref)

    __call__ = forward


def iter_batches(model: GaitModel, records, batch_size: int = 8):
    """Yield (record indices, silhouettes, preprocessed joints) for equal-length groups of records."""
    groups: dict = {}
    for i, r in enumerate(records):
        groups.setdefault(min(len(r.silhouette), len(r.skeleton)), []).append(i)
    cfg = model.config
    for n, idx in groups.items():
        for s in range(0, len(idx), batch_size):
            chunk = idx[s:s + batch_size]
            sil = (np.stack([records[i].silhouette.frames[:n] for i in chunk]).astype(np.float64)
                   if cfg.uses_silhouette else None)
            skel = (np.stack([model.preprocess_skeleton(records[i].skeleton.joints[:n]) for i in chunk])
                    if cfg.uses_skeleton else None)
            yield chunk, sil, skel


def refine_records(model: GaitModel, records, batch_size: int = 8) -> list:
    """Refined joints J' (N, K, 2) per record; needs a gaitref model."""
    if model.corrector is None:
        raise ConfigError(f"refinement needs a gaitref model, got mode {model.config.mode!r}")
    out = [None] * len(records)
    for chunk, sil, skel in iter_batches(model, records, batch_size):
        refined = model.forward(sil, skel).refined.data
        for j, i in enumerate(chunk):
            out[i] = refined[j]
    return out
