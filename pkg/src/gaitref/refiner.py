"""Skeleton correction network and the fixed smoothing baselines."""

from __future__ import annotations

import numpy as np

from . import numerics as nx
from .datamodel import ConfigError, SkeletonGraph
from .encoders import FeatureBundle, finish_block, make_block, stgcn_block
from .numerics import DimensionError, Parameter, Tensor


class CorrectionNetParams:
    """Decoder predicting per-joint displacements from J and encoder features.

    The last block has no activation and starts with a zero temporal kernel,
    so an untrained corrector returns its input unchanged.
    """

    def __init__(self, graph: SkeletonGraph, channels: int, num_strips: int, rng: np.random.Generator,
                 hidden: tuple[int, ...] = (128, 64, 64), use_FJ: bool = True, use_FJP: bool = True,
                 use_FS: bool = True, temporal_kernel: int = 9, slope: float = 0.01,
                 detach_FS: bool = False, allow_bare_input: bool = False):
        if not (use_FJ or use_FJP or use_FS) and not allow_bare_input:
            raise ConfigError("corrector needs at least one of F_J, F_J^P, F_S as input")
        self.graph = graph
        self.channels = channels
        self.num_strips = num_strips
        self.use_FJ, self.use_FJP, self.use_FS = use_FJ, use_FJP, use_FS
        self.detach_FS = detach_FS
        self.slope = slope
        self.hidden = tuple(hidden) + (2,)
        self.blocks = []
        c_in = self.input_width
        for i, c_out in enumerate(self.hidden):
            last = i == len(self.hidden) - 1
            self.blocks.append(make_block(rng, c_in, c_out, temporal_kernel, f"corr.block{i}", slope,
                                          zero_temporal=last))
            c_in = c_out

    @property
    def input_width(self) -> int:
        c = self.channels
        return 2 + c * self.use_FJ + c * self.use_FJP + self.num_strips * c * self.use_FS

    def parameters(self) -> dict[str, Parameter]:
        return {p.name: p for b in self.blocks for p in b.parameters()}


def _spread(v: Tensor, N: int, K: int) -> Tensor:
    """(B, D) -> (B, D, N, K) by repetition over frames and joints."""
    B, D = v.shape
    return nx.broadcast_repeat(nx.reshape(v, (B, D, 1, 1)), (B, D, N, K))


def _node_parts(joints: Tensor, bundle: FeatureBundle, params: CorrectionNetParams) -> list[Tensor]:
    """Inputs that vary per node, channel-first (B, c, N, K)."""
    B, N, K, _ = joints.shape
    parts = [nx.transpose(joints, (0, 3, 1, 2))]
    if params.use_FJ:
        if bundle.F_J_pre.shape[:3] != (B, N, K):
            raise DimensionError(f"F_J_pre {bundle.F_J_pre.shape} does not match joints {joints.shape}")
        parts.append(nx.transpose(bundle.F_J_pre, (0, 3, 1, 2)))
    return parts


def _shared_parts(bundle: FeatureBundle, params: CorrectionNetParams) -> list[Tensor]:
    """Inputs repeated at every node, as (B, c) vectors."""
    parts = []
    if params.use_FJP:
        parts.append(bundle.F_J_pooled)
    if params.use_FS:
        fs = nx.detach(bundle.F_S) if params.detach_FS else bundle.F_S
        parts.append(nx.reshape(fs, (fs.shape[0], fs.shape[1] * fs.shape[2])))
    return parts


def corrector_input(joints: Tensor, bundle: FeatureBundle, params: CorrectionNetParams) -> Tensor:
    """Per-node decoder input, channel-first (B, width, N, K)."""
    B, N, K, _ = joints.shape
    parts = _node_parts(joints, bundle, params) + [_spread(v, N, K) for v in _shared_parts(bundle, params)]
    return nx.concat(parts, axis=1) if len(parts) > 1 else parts[0]


def _first_projection(joints: Tensor, bundle: FeatureBundle, params: CorrectionNetParams) -> Tensor:
    """First-layer channel projection of :func:`corrector_input`.

    The shared columns are projected once per sequence and then repeated,
    instead of projecting hundreds of identical channels at every node.
    """
    B, N, K, _ = joints.shape
    w = params.blocks[0].spatial_w
    node = _node_parts(joints, bundle, params)
    node = nx.concat(node, axis=1) if len(node) > 1 else node[0]
    c = node.shape[1]
    h = nx.channel_mix(node, nx.take(w, np.arange(c), axis=1))
    shared = _shared_parts(bundle, params)
    if shared:
        v = nx.concat(shared, axis=1) if len(shared) > 1 else shared[0]
        w_shared = nx.take(w, np.arange(c, w.shape[1]), axis=1)
        h = nx.add(h, _spread(nx.matmul(v, nx.transpose(w_shared, (1, 0))), N, K))
    return h


def correct_skeleton(joints, bundle: FeatureBundle, params: CorrectionNetParams) -> tuple[Tensor, Tensor]:
    """Returns (J', delta) with J' = J + delta; both (B, N, K, 2)."""
    j = joints if isinstance(joints, Tensor) else Tensor(joints)
    last = len(params.blocks) - 1
    h = finish_block(_first_projection(j, bundle, params), params.graph, params.blocks[0],
                     activate=last > 0, slope=params.slope, mixed=False)
    for i, block in enumerate(params.blocks[1:], 1):
        h = stgcn_block(h, params.graph, block, activate=i < last, slope=params.slope)
    delta = nx.transpose(h, (0, 2, 3, 1))
    return nx.add(j, delta), delta


def normalize_joints(joints: Tensor) -> Tensor:
    """Differentiable per-sequence normalization of (B, N, K, 2) joints: mean at the origin, height 2."""
    B, N, K, _ = joints.shape
    flat = nx.reshape(joints, (B, N * K, 2))
    y = nx.reshape(nx.take(flat, [1], axis=2), (B, N * K))
    extent = nx.add(nx.max_pool_over_axis(y, 1), nx.max_pool_over_axis(nx.scale(y, -1.0), 1))
    gain = nx.scale(nx.reciprocal(extent), 2.0)
    mean = nx.mean_pool_over_axes(flat, (1,))
    centered = nx.sub(flat, nx.broadcast_repeat(nx.reshape(mean, (B, 1, 2)), (B, N * K, 2)))
    scaled = nx.mul(centered, nx.broadcast_repeat(nx.reshape(gain, (B, 1, 1)), (B, N * K, 2)))
    return nx.reshape(scaled, (B, N, K, 2))


# --- fixed smoothers -------------------------------------------------------

def _check_window(window: int) -> None:
    if window < 1 or window % 2 == 0:
        raise ConfigError(f"smoothing window must be odd and >= 1, got {window}")


def _filter(joints: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Weighted moving window over frames (axis -3), boundary frames repeated."""
    j = np.asarray(joints, dtype=np.float64)
    half = len(weights) // 2
    n = j.shape[-3]
    idx = np.clip(np.arange(n)[:, None] + np.arange(-half, half + 1)[None, :], 0, n - 1)
    windows = np.take(j, idx, axis=-3)  # (..., N, window, K, 2)
    return np.tensordot(windows, weights, axes=([-3], [0]))


def smooth_average(joints: np.ndarray, window: int = 3) -> np.ndarray:
    _check_window(window)
    return _filter(joints, np.full(window, 1.0 / window))


def gaussian_weights(window: int, sigma: float) -> np.ndarray:
    _check_window(window)
    if sigma <= 0:
        raise ConfigError("sigma must be positive")
    off = np.arange(window) - window // 2
    w = np.exp(-0.5 * (off / sigma) ** 2)
    return w / w.sum()


def smooth_gaussian(joints: np.ndarray, window: int = 3, sigma: float = 1.0) -> np.ndarray:
    return _filter(joints, gaussian_weights(window, sigma))


def apply_smoothing(joints: np.ndarray, method: str, window: int = 3, sigma: float = 1.0) -> np.ndarray:
    if method in ("none", "", None):
        return np.asarray(joints, dtype=np.float64)
    if method in ("average", "avg"):
        return smooth_average(joints, window)
    if method == "gaussian":
        return smooth_gaussian(joints, window, sigma)
    raise ConfigError(f"unknown smoothing method {method!r}")
