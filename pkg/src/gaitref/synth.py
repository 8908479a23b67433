"""Procedural side-view walker used as desk-scale gait data.

Identity is carried by limb proportions, stride period and swing style; each
sequence draws its own starting phase and, optionally, clothing-like
inflation of the rendered silhouette.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datamodel import (
    SIL_HEIGHT,
    SIL_WIDTH,
    ConfigError,
    SampleRecord,
    SilhouetteSequence,
    SkeletonSequence,
    normalize_skeleton,
)

# Rasterizer scale in pixels per normalized unit (normalized height is 2).
PIXELS_PER_UNIT = 25.0


@dataclass(frozen=True)
class WalkerParams:
    torso: float
    head: float
    thigh: float
    shank: float
    upper_arm: float
    forearm: float
    shoulder_offset: float
    hip_offset: float
    period: float
    leg_swing: float
    knee_flex: float
    arm_swing: float
    elbow_flex: float
    lean: float
    bob: float


def walker_params(identity_seed: int, spread: float = 1.0) -> WalkerParams:
    """Per-identity body and gait parameters.

    ``spread`` in (0, 1] shrinks every range around its midpoint, making
    identities harder to tell apart.
    """
    if not 0.0 < spread <= 1.0:
        raise ConfigError(f"spread must be in (0, 1], got {spread}")
    rng = np.random.default_rng([int(identity_seed), 0x6A17])

    def u(lo, hi):
        mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo) * spread
        return rng.uniform(mid - half, mid + half)

    return WalkerParams(
        torso=u(0.48, 0.64),
        head=u(0.18, 0.26),
        thigh=u(0.38, 0.52),
        shank=u(0.36, 0.50),
        upper_arm=u(0.24, 0.36),
        forearm=u(0.20, 0.32),
        shoulder_offset=u(0.03, 0.10),
        hip_offset=u(0.02, 0.07),
        period=u(22.0, 34.0),
        leg_swing=u(0.28, 0.52),
        knee_flex=u(0.40, 0.80),
        arm_swing=u(0.15, 0.60),
        elbow_flex=u(0.10, 0.55),
        lean=u(-0.04, 0.14),
        bob=u(0.008, 0.03),
    )


def _rot(angle):
    return np.stack([np.sin(angle), -np.cos(angle)], axis=-1)


def walker_joints(p: WalkerParams, n_frames: int, phase0: float) -> np.ndarray:
    """COCO-17 joints in world units (y up), shape (n_frames, 17, 2)."""
    phi = 2 * np.pi * np.arange(n_frames) / p.period + phase0
    one = np.ones_like(phi)
    pelvis = np.stack([0 * phi, p.thigh + p.shank + p.bob * np.cos(2 * phi)], axis=-1)
    hip_dx = np.array([p.hip_offset, 0.0])
    sho_dx = np.array([p.shoulder_offset, 0.0])
    neck = pelvis + p.torso * np.stack([np.sin(p.lean) * one, np.cos(p.lean) * one], axis=-1)
    head = neck + p.head * np.stack([np.sin(1.5 * p.lean) * one, np.cos(1.5 * p.lean) * one], axis=-1)

    j = np.zeros((n_frames, 17, 2))
    for side, sign, offset in (("l", 1.0, 0.0), ("r", -1.0, np.pi)):
        ph = phi + offset
        hip = pelvis + sign * hip_dx
        thigh_ang = p.leg_swing * np.sin(ph)
        knee = hip + p.thigh * _rot(thigh_ang)
        bend = p.knee_flex * 0.5 * (1 - np.cos(ph - 0.9 * np.pi / 2))
        ankle = knee + p.shank * _rot(thigh_ang - bend)
        sho = neck + sign * sho_dx
        arm_ang = p.arm_swing * np.sin(ph + np.pi)
        elbow = sho + p.upper_arm * _rot(arm_ang)
        wrist = elbow + p.forearm * _rot(arm_ang + p.elbow_flex)
        base = 0 if side == "l" else 1
        j[:, 5 + base] = sho
        j[:, 7 + base] = elbow
        j[:, 9 + base] = wrist
        j[:, 11 + base] = hip
        j[:, 13 + base] = knee
        j[:, 15 + base] = ankle
        j[:, 1 + base] = head + np.array([0.45 * p.head, 0.25 * p.head]) + sign * 0.3 * sho_dx
        j[:, 3 + base] = head + np.array([-0.05 * p.head, 0.15 * p.head]) + sign * 0.6 * sho_dx
    j[:, 0] = head + np.array([0.7 * p.head, 0.0])
    return j


def _capsules(j: np.ndarray, p: WalkerParams, inflate: np.ndarray):
    """Segments (N, S, 2, 2) and radii (S,) in normalized units."""
    hip_c = 0.5 * (j[:, 11] + j[:, 12])
    sho_c = 0.5 * (j[:, 5] + j[:, 6])
    head_c = 0.5 * (j[:, 3] + j[:, 4])
    segs, radii = [], []

    def add(a, b, r):
        segs.append(np.stack([a, b], axis=1))
        radii.append(r)

    scale = np.linalg.norm(sho_c - hip_c, axis=-1).mean() / p.torso
    add(hip_c, sho_c, 0.30 * p.torso * scale * inflate[0])
    add(head_c, head_c, 0.55 * p.head * scale)
    add(sho_c, head_c, 0.15 * p.head * scale)
    for s in (0, 1):
        add(j[:, 11 + s], j[:, 13 + s], 0.17 * p.thigh * scale * inflate[1])
        add(j[:, 13 + s], j[:, 15 + s], 0.12 * p.shank * scale * inflate[1])
        add(j[:, 5 + s], j[:, 7 + s], 0.15 * p.upper_arm * scale * inflate[2])
        add(j[:, 7 + s], j[:, 9 + s], 0.13 * p.forearm * scale * inflate[2])
    return np.stack(segs, axis=1), np.array(radii)


def rasterize(joints: np.ndarray, p: WalkerParams, inflate=(1.0, 1.0, 1.0)) -> np.ndarray:
    """Draw limb capsules of a normalized skeleton into (N, 64, 44) binary frames."""
    segs, radii = _capsules(joints, p, np.asarray(inflate, dtype=float))
    yc = 0.5 * (joints[..., 1].max() + joints[..., 1].min()) + 0.05
    # pixel centers in normalized coordinates
    rows = (SIL_HEIGHT / 2 - 0.5 - np.arange(SIL_HEIGHT)) / PIXELS_PER_UNIT + yc
    cols = (np.arange(SIL_WIDTH) - SIL_WIDTH / 2 + 0.5) / PIXELS_PER_UNIT
    grid = np.stack(np.meshgrid(cols, rows), axis=-1)  # (H, W, 2) as (x, y)
    px, py = grid[..., 0].reshape(1, -1), grid[..., 1].reshape(1, -1)
    mask = np.zeros((joints.shape[0], px.shape[1]), dtype=bool)
    for s, r in enumerate(radii):
        ax, ay = segs[:, s, 0, 0:1], segs[:, s, 0, 1:2]
        bx, by = segs[:, s, 1, 0:1] - ax, segs[:, s, 1, 1:2] - ay
        denom = np.maximum(bx * bx + by * by, 1e-12)
        t = np.clip(((px - ax) * bx + (py - ay) * by) / denom, 0.0, 1.0)
        dx, dy = px - ax - t * bx, py - ay - t * by
        mask |= dx * dx + dy * dy <= r * r
    return mask.reshape(-1, SIL_HEIGHT, SIL_WIDTH).astype(np.uint8)


def synth_gait(identity_seed: int, n_frames: int, jitter_sigma: float, jitter_frame_prob: float,
               rng_seed: int, *, appearance_var: float = 0.0, identity_spread: float = 1.0,
               subject_id: str | None = None, sequence_id: str = "") -> SampleRecord:
    """One walking sequence for identity ``identity_seed``.

    Frames are jittered independently with probability ``jitter_frame_prob``;
    a jittered frame gets i.i.d. N(0, jitter_sigma^2) noise on every joint
    coordinate. ``appearance_var`` > 0 inflates torso/leg/arm capsules by a
    per-sequence factor in [1, 1 + appearance_var], mimicking clothing.
    """
    if n_frames < 8:
        raise ConfigError("n_frames must be >= 8")
    if not 0.0 <= jitter_frame_prob <= 1.0:
        raise ConfigError(f"jitter_frame_prob must be in [0, 1], got {jitter_frame_prob}")
    if not jitter_sigma >= 0.0:
        raise ConfigError(f"jitter_sigma must be >= 0, got {jitter_sigma}")
    if not appearance_var >= 0.0:
        raise ConfigError("appearance_var must be >= 0")

    p = walker_params(identity_seed, identity_spread)
    rng = np.random.default_rng([int(identity_seed), int(rng_seed), 0x5E9])
    phase0 = rng.uniform(0, 2 * np.pi)
    inflate = 1.0 + appearance_var * rng.uniform(0, 1, size=3)
    sid = subject_id if subject_id is not None else f"{identity_seed:03d}"

    clean = normalize_skeleton(SkeletonSequence(walker_joints(p, n_frames, phase0), sid, "coco17"))
    hit = rng.uniform(size=n_frames) < jitter_frame_prob
    noise = rng.normal(0.0, 1.0, size=clean.joints.shape) * jitter_sigma
    jittered = clean.joints + noise * hit[:, None, None]
    sil = SilhouetteSequence(rasterize(clean.joints, p, inflate), sid)
    meta = {"identity_seed": int(identity_seed), "rng_seed": int(rng_seed), "period": p.period}
    return SampleRecord(sil, clean.with_joints(jittered), clean, sequence_id, meta)
