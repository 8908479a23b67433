"""Silhouette and skeleton feature encoders.

Tensor layouts: silhouette batches are ``(B, N, H, W)``; skeleton batches
are ``(B, N, K, 2)``. Graph-convolution blocks work channel-first,
``(B, C, N, K)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import numerics as nx
from .datamodel import ConfigError, SkeletonGraph
from .numerics import DimensionError, Parameter, Tensor


def init_weight(rng: np.random.Generator, shape, fan_in: int, slope: float = 0.01) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / ((1 + slope ** 2) * fan_in)), size=shape)


def add_channel_bias(x: Tensor, bias: Parameter) -> Tensor:
    """``x`` is (B, C, ...); ``bias`` is (C,)."""
    shape = (1, bias.shape[0]) + (1,) * (x.ndim - 2)
    return nx.add(x, nx.broadcast_repeat(nx.reshape(bias, shape), x.shape))


# --- silhouettes -----------------------------------------------------------

@dataclass(frozen=True)
class ConvSpec:
    out_channels: int
    kernel: int = 3
    stride: int = 1
    pool: int = 1  # max-pool factor applied after the activation


def default_conv_stack(channels: int) -> tuple[ConvSpec, ...]:
    return (ConvSpec(16, 3, 1, 2), ConvSpec(32, 3, 1, 2), ConvSpec(channels, 3, 1, 1))


class SilhouetteEncoderParams:
    """Conv stack -> temporal max -> horizontal strip pooling into ``2**(hpp_scale-1)`` parts."""

    def __init__(self, channels: int, rng: np.random.Generator, layers: Optional[tuple] = None,
                 hpp_scale: int = 5, input_pool: int = 1, slope: float = 0.01, frame_stride: int = 1):
        if channels <= 0:
            raise ConfigError("channels must be positive")
        if frame_stride < 1:
            raise ConfigError("frame_stride must be >= 1")
        layers = tuple(ConvSpec(*l) if not isinstance(l, ConvSpec) else l
                       for l in (layers or default_conv_stack(channels)))
        if layers[-1].out_channels != channels:
            raise ConfigError("last conv layer must output `channels` channels")
        self.channels = channels
        self.layers = layers
        self.hpp_scale = hpp_scale
        self.input_pool = input_pool
        self.frame_stride = frame_stride
        self.slope = slope
        self.weights: list[tuple[Parameter, Parameter]] = []
        c_in = 1
        for i, spec in enumerate(layers):
            k = spec.kernel
            w = Parameter(init_weight(rng, (spec.out_channels, c_in, k, k), c_in * k * k, slope), f"conv{i}.w")
            b = Parameter(np.zeros(spec.out_channels), f"conv{i}.b")
            self.weights.append((w, b))
            c_in = spec.out_channels

    @property
    def num_strips(self) -> int:
        return 2 ** (self.hpp_scale - 1)

    def parameters(self) -> dict[str, Parameter]:
        return {p.name: p for pair in self.weights for p in pair}


def horizontal_pool(fmap: Tensor, strips: int) -> Tensor:
    """(B, C, M, W) -> (B, strips, C): each band of M/strips rows reduced by max + mean."""
    B, C, M, W = fmap.shape
    if M % strips:
        raise DimensionError(f"feature map height {M} is not divisible into {strips} strips")
    bands = nx.reshape(fmap, (B, C, strips, (M // strips) * W))
    pooled = nx.add(nx.max_pool_over_axis(bands, 3), nx.mean_pool_over_axes(bands, 3))
    return nx.transpose(pooled, (0, 2, 1))


def encode_silhouette(frames, params: SilhouetteEncoderParams) -> Tensor:
    """Silhouette batch (B, N, H, W) or a single (N, H, W) sequence -> F_S (B, strips, C)."""
    x = frames if isinstance(frames, Tensor) else Tensor(frames)
    if x.ndim == 3:
        x = nx.reshape(x, (1,) + x.shape)
    if x.shape[1] == 0:
        raise DimensionError("empty silhouette sequence")
    if params.frame_stride > 1:
        # the temporal max is order-free, so a strided subset of frames is a cheaper set
        x = nx.take(x, np.arange(0, x.shape[1], params.frame_stride), axis=1)
    B, N, H, W = x.shape
    x = nx.reshape(x, (B * N, 1, H, W))
    if params.input_pool > 1:
        x = nx.max_pool2d(x, params.input_pool)
    for spec, (w, b) in zip(params.layers, params.weights):
        x = nx.conv2d(x, w, spec.stride, spec.kernel // 2)
        x = nx.leaky_relu(add_channel_bias(x, b), params.slope)
        if spec.pool > 1:
            x = nx.max_pool2d(x, spec.pool)
    _, C, M, Wf = x.shape
    x = nx.max_pool_over_axis(nx.reshape(x, (B, N, C, M, Wf)), 1)
    return horizontal_pool(x, params.num_strips)


# --- skeletons -------------------------------------------------------------

@dataclass
class BlockWeights:
    spatial_w: Parameter   # (C_out, C_in)
    spatial_b: Parameter   # (C_out,)
    temporal_w: Parameter  # (C_out, C_out, kt, 1)
    temporal_b: Parameter  # (C_out,)

    @property
    def c_in(self) -> int:
        return self.spatial_w.shape[1]

    @property
    def c_out(self) -> int:
        return self.spatial_w.shape[0]

    def parameters(self):
        return (self.spatial_w, self.spatial_b, self.temporal_w, self.temporal_b)


def make_block(rng, c_in: int, c_out: int, kt: int, prefix: str, slope: float = 0.01,
               zero_temporal: bool = False) -> BlockWeights:
    tw = np.zeros((c_out, c_out, kt, 1)) if zero_temporal else init_weight(rng, (c_out, c_out, kt, 1), c_out * kt, slope)
    return BlockWeights(
        Parameter(init_weight(rng, (c_out, c_in), c_in, slope), f"{prefix}.spatial_w"),
        Parameter(np.zeros(c_out), f"{prefix}.spatial_b"),
        Parameter(tw, f"{prefix}.temporal_w"),
        Parameter(np.zeros(c_out), f"{prefix}.temporal_b"),
    )


def _node_mix(x: Tensor, a_t: Tensor) -> Tensor:
    B, C, N, K = x.shape
    return nx.reshape(nx.matmul(nx.reshape(x, (B * C * N, K)), a_t), (B, C, N, K))


def _project(x: Tensor, w: Parameter) -> Tensor:
    return nx.channel_mix(x, w)


def stgcn_block(x: Tensor, graph: SkeletonGraph, weights: BlockWeights, activate: bool = True,
                slope: float = 0.01) -> Tensor:
    """One spatial-temporal graph conv block on channel-first input (B, C_in, N, K).

    Spatial step: neighbour averaging with the normalized adjacency followed
    by a per-node linear map (the two commute, so the cheaper order is used).
    Temporal step: per-joint convolution over frames with 'same' padding.
    """
    B, C, N, K = x.shape
    if K != graph.num_joints:
        raise DimensionError(f"input has {K} joints, graph has {graph.num_joints}")
    if C != weights.c_in:
        raise DimensionError(f"input has {C} channels, block expects {weights.c_in}")
    a_t = Tensor(graph.normalized_adjacency.T)
    if weights.c_out < C:
        h = _node_mix(_project(x, weights.spatial_w), a_t)
    else:
        h = _project(_node_mix(x, a_t), weights.spatial_w)
    return finish_block(h, graph, weights, activate, slope)


def finish_block(h: Tensor, graph: SkeletonGraph, weights: BlockWeights, activate: bool = True,
                 slope: float = 0.01, mixed: bool = True) -> Tensor:
    """Rest of a block once the channel projection is done (``mixed``: node averaging too)."""
    if not mixed:
        h = _node_mix(h, Tensor(graph.normalized_adjacency.T))
    h = add_channel_bias(h, weights.spatial_b)
    kt = weights.temporal_w.shape[2]
    h = nx.conv2d(h, weights.temporal_w, 1, (kt // 2, 0))
    h = add_channel_bias(h, weights.temporal_b)
    return nx.leaky_relu(h, slope) if activate else h


class SkeletonEncoderParams:
    def __init__(self, graph: SkeletonGraph, channels: int, rng: np.random.Generator,
                 hidden: tuple[int, ...] = (64, 64, 128, 128), temporal_kernel: int = 9,
                 slope: float = 0.01, prefix: str = "skel"):
        self.graph = graph
        self.hidden = tuple(hidden) + (channels,)
        self.channels = channels
        self.slope = slope
        self.blocks: list[BlockWeights] = []
        c_in = 2
        for i, c_out in enumerate(self.hidden):
            self.blocks.append(make_block(rng, c_in, c_out, temporal_kernel, f"{prefix}.block{i}", slope))
            c_in = c_out

    def parameters(self) -> dict[str, Parameter]:
        return {p.name: p for b in self.blocks for p in b.parameters()}


def encode_skeleton(joints, params: SkeletonEncoderParams) -> tuple[Tensor, Tensor]:
    """Joints (B, N, K, 2) -> (F_J (B, C), F_J_pre (B, N, K, C))."""
    x = joints if isinstance(joints, Tensor) else Tensor(joints)
    if x.ndim == 3:
        x = nx.reshape(x, (1,) + x.shape)
    h = nx.transpose(x, (0, 3, 1, 2))
    for block in params.blocks:
        h = stgcn_block(h, params.graph, block, True, params.slope)
    return nx.mean_pool_over_axes(h, (2, 3)), nx.transpose(h, (0, 2, 3, 1))


@dataclass
class FeatureBundle:
    F_S: Optional[Tensor] = None       # (B, strips, C)
    F_J: Optional[Tensor] = None       # (B, C)
    F_J_pre: Optional[Tensor] = None   # (B, N, K, C)
    F_J_pooled: Optional[Tensor] = None  # (B, C), copy of F_J fed to the corrector
    extras: dict = field(default_factory=dict)
