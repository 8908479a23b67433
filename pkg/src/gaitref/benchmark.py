"""Desk-scale synthetic benchmark: data generation, split, training and scoring.

Every identity contributes ``seqs_per_id`` walks. The first ``train_seqs`` of
each identity are used for training; of the held-out walks the next
``gallery_seqs`` form the gallery and the rest are probes.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional, Sequence

import numpy as np

from .datamodel import ConfigError, SampleRecord, mean_joint_error, normalize_skeleton
from .encoders import ConvSpec
from .evaluator import RetrievalReport, evaluate
from .model import GaitModel, ModelConfig, refine_records
from .recognizer import LossRecord, TrainConfig, train
from .synth import synth_gait

log = logging.getLogger(__name__)

# Light encoder settings that keep 2000 CPU iterations in the tens of seconds.
LIGHT_SIL_LAYERS = (ConvSpec(8, 3, 1, 1), ConvSpec(16, 3, 1, 1))


@dataclass(frozen=True)
class BenchmarkConfig:
    # data
    num_ids: int = 20
    seqs_per_id: int = 8
    frames: int = 60
    jitter_sigma: float = 0.08
    jitter_frame_prob: float = 0.3
    appearance_var: float = 0.5
    identity_spread: float = 1.0
    data_seed: int = 0
    train_seqs: int = 4
    gallery_seqs: int = 2
    # training
    iterations: int = 2000
    lr: float = 3e-3
    milestones: tuple = (1500,)
    lambda1: float = 1.0
    lambda2: float = 1.0
    margin: float = 0.2
    batch_ids: int = 4
    batch_seqs: int = 2
    clip_len: int = 24
    # model
    channels: int = 16
    embed_dim: int = 16
    sil_layers: tuple = LIGHT_SIL_LAYERS
    sil_input_pool: int = 4
    sil_frame_stride: int = 2
    skel_hidden: tuple = (16, 16)
    decoder_hidden: tuple = (16, 16)
    temporal_kernel: int = 9

    def __post_init__(self):
        if self.train_seqs < 2 or self.gallery_seqs < 1:
            raise ConfigError("need >= 2 training and >= 1 gallery sequence per identity")
        if self.train_seqs + self.gallery_seqs >= self.seqs_per_id:
            raise ConfigError("no sequences left for probes")
        object.__setattr__(self, "milestones", tuple(self.milestones))
        object.__setattr__(self, "sil_layers", tuple(ConvSpec(*l) if not isinstance(l, ConvSpec) else l
                                                     for l in self.sil_layers))

    def model_config(self, mode: str, **overrides) -> ModelConfig:
        base = dict(mode=mode, channels=self.channels, embed_dim=self.embed_dim, num_classes=self.num_ids,
                    sil_layers=self.sil_layers, sil_input_pool=self.sil_input_pool,
                    sil_frame_stride=self.sil_frame_stride, skel_hidden=self.skel_hidden,
                    decoder_hidden=self.decoder_hidden, temporal_kernel=self.temporal_kernel)
        base.update(overrides)
        return ModelConfig(**base)

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(lambda1=self.lambda1, lambda2=self.lambda2, margin=self.margin, lr=self.lr,
                           milestones=self.milestones, iterations=self.iterations, batch_ids=self.batch_ids,
                           batch_seqs=self.batch_seqs, clip_len=self.clip_len, seed=seed)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sil_layers"] = [list(asdict(l).values()) for l in self.sil_layers]
        return d

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


@dataclass
class BenchmarkData:
    train: list
    gallery: list
    probes: list

    @property
    def held_out(self) -> list:
        return self.gallery + self.probes


def make_records(cfg: BenchmarkConfig) -> list[list[SampleRecord]]:
    """records[i][s] is walk ``s`` of identity ``i``."""
    out = []
    for i in range(cfg.num_ids):
        walks = []
        for s in range(cfg.seqs_per_id):
            rng_seed = (cfg.data_seed * 1000 + i) * 1000 + s
            walks.append(synth_gait(i, cfg.frames, cfg.jitter_sigma, cfg.jitter_frame_prob, rng_seed,
                                    appearance_var=cfg.appearance_var,
                                    identity_spread=cfg.identity_spread, sequence_id=f"{s:02d}"))
        out.append(walks)
    return out


def make_data(cfg: BenchmarkConfig) -> BenchmarkData:
    recs = make_records(cfg)
    t, g = cfg.train_seqs, cfg.train_seqs + cfg.gallery_seqs
    return BenchmarkData([r for walks in recs for r in walks[:t]],
                         [r for walks in recs for r in walks[t:g]],
                         [r for walks in recs for r in walks[g:]])


@dataclass
class RunResult:
    mode: str
    seed: int
    report: RetrievalReport
    curve: list = field(repr=False)
    seconds: float = 0.0
    input_error: Optional[float] = None    # mean joint error of the jittered input on held-out walks
    refined_error: Optional[float] = None  # same for the refined skeletons
    normalized_refined_error: Optional[float] = None  # refined skeletons rescaled to height 2, mean at origin
    model: Optional[GaitModel] = field(default=None, repr=False)

    @property
    def rank1(self) -> float:
        return self.report.rank1

    @property
    def error_reduction(self) -> Optional[float]:
        if self.input_error is None or self.refined_error is None:
            return None
        return 1.0 - self.refined_error / self.input_error


def skeleton_errors(model: GaitModel, records: Sequence[SampleRecord]) -> tuple[float, float, float]:
    """Mean per-joint error to the clean skeleton: jittered input, refined, refined after renormalizing."""
    refined = refine_records(model, records)
    before = float(np.mean([mean_joint_error(r.skeleton.joints, r.clean_skeleton.joints) for r in records]))
    after = float(np.mean([mean_joint_error(j, r.clean_skeleton.joints) for j, r in zip(refined, records)]))
    renorm = float(np.mean([mean_joint_error(normalize_skeleton(r.skeleton.with_joints(j)).joints,
                                             r.clean_skeleton.joints) for j, r in zip(refined, records)]))
    return before, after, renorm


def run(cfg: BenchmarkConfig, data: BenchmarkData, mode: str, seed: int, progress=None,
        **model_overrides) -> RunResult:
    model = GaitModel(cfg.model_config(mode, **model_overrides), seed)
    t0 = time.process_time()
    result = train(data.train, model, cfg.train_config(seed), progress)
    seconds = time.process_time() - t0
    report = evaluate(model, data.probes, data.gallery)
    out = RunResult(mode, seed, report, result.curve, seconds, model=model)
    if mode == "gaitref":
        errors = skeleton_errors(model, data.held_out)
        out.input_error, out.refined_error, out.normalized_refined_error = errors
    log.info("%s seed %d: rank-1 %.3f, %.1f s", mode, seed, report.rank1, seconds)
    return out


def mean_rank1(results: Sequence[RunResult]) -> float:
    return float(np.mean([r.rank1 for r in results]))


def loss_ratio(curve: Sequence[LossRecord], window: int = 50) -> float:
    """Mean total loss of the last ``window`` iterations over that of the first ``window``."""
    tot = np.array([r.total for r in curve])
    w = max(1, min(window, len(tot) // 2))
    return float(tot[-w:].mean() / tot[:w].mean())


# Named variants for the fusion and corrector-input ablations.
ABLATIONS = {
    "silhouette": ("silhouette", {}),
    "gaitmix-concat": ("gaitmix", {}),
    "gaitmix-padding": ("gaitmix", {"combine": "padding"}),
    "gaitref-concat": ("gaitref", {}),
    "gaitref-padding": ("gaitref", {"combine": "padding"}),
    "scn-full": ("gaitref", {}),
    "scn-no-FJ": ("gaitref", {"use_FJ": False}),
    "scn-no-FJP": ("gaitref", {"use_FJP": False}),
    "scn-no-FS": ("gaitref", {"use_FS": False}),
    "scn-none": ("gaitref", {"use_FJ": False, "use_FJP": False, "use_FS": False}),
    "gaitmix-average": ("gaitmix", {"input_smoothing": "average"}),
    "gaitmix-gaussian": ("gaitmix", {"input_smoothing": "gaussian"}),
}


def variant(name: str) -> tuple[str, dict]:
    try:
        return ABLATIONS[name]
    except KeyError:
        raise ConfigError(f"unknown ablation variant {name!r}; known: {', '.join(ABLATIONS)}") from None


def with_overrides(cfg: BenchmarkConfig, **kw) -> BenchmarkConfig:
    return replace(cfg, **kw)


class RunCache:
    """Trains each distinct (mode, overrides, seed) once on one shared dataset."""

    def __init__(self, cfg: BenchmarkConfig, progress=None):
        self.cfg = cfg
        self.data = make_data(cfg)
        self.progress = progress
        self._runs: dict = {}

    def get(self, name: str, seed: int) -> RunResult:
        mode, overrides = variant(name)
        key = (mode, tuple(sorted(overrides.items())), seed)
        if key not in self._runs:
            self._runs[key] = run(self.cfg, self.data, mode, seed, self.progress, **overrides)
        return self._runs[key]

    def seeds(self, name: str, seeds: Sequence[int]) -> list[RunResult]:
        return [self.get(name, s) for s in seeds]

    @property
    def total_seconds(self) -> float:
        return float(sum(r.seconds for r in self._runs.values()))
