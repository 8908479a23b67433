import numpy as np
import pytest

from gaitref.datamodel import SIL_HEIGHT, SIL_WIDTH, ConfigError
from gaitref.synth import synth_gait, walker_params


def test_record_shapes_and_values():
    r = synth_gait(3, 40, 0.05, 0.3, 7)
    assert r.silhouette.frames.shape == (40, SIL_HEIGHT, SIL_WIDTH)
    assert set(np.unique(r.silhouette.frames)) <= {0, 1}
    assert r.skeleton.joints.shape == r.clean_skeleton.joints.shape == (40, 17, 2)
    assert r.subject_id == "003"
    ys = r.clean_skeleton.joints[..., 1]
    assert np.isclose(ys.max() - ys.min(), 2.0)
    # the body is drawn, and it stays inside the frame
    area = r.silhouette.frames.sum(axis=(1, 2))
    assert (area > 100).all()
    assert not r.silhouette.frames[:, 0].any() and not r.silhouette.frames[:, -1].any()


def test_zero_jitter_gives_clean_skeleton():
    r = synth_gait(1, 30, 0.0, 0.9, 2)
    assert np.array_equal(r.skeleton.joints, r.clean_skeleton.joints)
    r = synth_gait(1, 30, 0.3, 0.0, 2)
    assert np.array_equal(r.skeleton.joints, r.clean_skeleton.joints)


def test_same_seeds_bit_identical():
    a, b = synth_gait(5, 24, 0.08, 0.3, 11, appearance_var=0.5), synth_gait(5, 24, 0.08, 0.3, 11, appearance_var=0.5)
    assert a == b
    assert a.skeleton.joints.tobytes() == b.skeleton.joints.tobytes()
    c = synth_gait(5, 24, 0.08, 0.3, 12)
    assert not np.array_equal(a.skeleton.joints, c.skeleton.joints)


def test_invalid_arguments():
    with pytest.raises(ConfigError):
        synth_gait(0, 7, 0.1, 0.3, 0)
    with pytest.raises(ConfigError):
        synth_gait(0, 20, 0.1, 1.5, 0)
    with pytest.raises(ConfigError):
        synth_gait(0, 20, -0.1, 0.3, 0)
    with pytest.raises(ConfigError):
        walker_params(0, spread=0.0)


def test_identities_differ_and_sequences_of_one_identity_share_body():
    p0, p1 = walker_params(0), walker_params(1)
    assert p0 != p1
    assert walker_params(0) == p0
    narrow = walker_params(0, spread=0.1)
    assert abs(narrow.period - 28.0) <= 0.6 + 1e-9


def test_jitter_displacement_matches_closed_form():
    """Monte Carlo over 1000 sequences: a jittered frame moves a joint by a 2-D Gaussian step.

    Mean Euclidean step is sigma * sqrt(pi / 2) (Rayleigh mean); per coordinate
    the mean absolute step is sigma * sqrt(2 / pi) (folded normal).
    """
    sigma, prob = 0.1, 0.3
    dist, per_coord = [], []
    for s in range(1000):
        r = synth_gait(s % 20, 60, sigma, prob, 10_000 + s)
        d = r.skeleton.joints - r.clean_skeleton.joints
        dist.append(np.linalg.norm(d, axis=-1).mean())
        per_coord.append(np.abs(d).mean())
    assert np.mean(dist) == pytest.approx(prob * sigma * np.sqrt(np.pi / 2), rel=0.05)
    assert np.mean(per_coord) == pytest.approx(prob * sigma * np.sqrt(2 / np.pi), rel=0.05)


def _autocorr_peak(x, lo, hi):
    x = x - x.mean()
    ac = np.array([np.dot(x[:-lag], x[lag:]) / (len(x) - lag) for lag in range(lo, hi + 1)])
    return lo + int(np.argmax(ac))


@pytest.mark.parametrize("ident", range(6))
def test_clean_trajectories_repeat_with_stride_period(ident):
    r = synth_gait(ident, 160, 0.0, 0.0, 3)
    period = r.meta["period"]
    ankle_x = r.clean_skeleton.joints[:, 15, 0]
    peak = _autocorr_peak(ankle_x, int(period * 0.6), int(period * 1.4))
    assert abs(peak - period) <= 1.0


def test_appearance_variation_changes_silhouette_only():
    plain = synth_gait(2, 20, 0.05, 0.3, 4)
    dressed = synth_gait(2, 20, 0.05, 0.3, 4, appearance_var=1.0)
    assert np.array_equal(plain.clean_skeleton.joints, dressed.clean_skeleton.joints)
    assert dressed.silhouette.frames.sum() > plain.silhouette.frames.sum()
