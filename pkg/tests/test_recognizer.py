import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gaitref import numerics as nx
from gaitref.datamodel import ConfigError
from gaitref.encoders import ConvSpec, FeatureBundle
from gaitref.model import GaitModel, ModelConfig
from gaitref.numerics import ContractError, Parameter, Tape, Tensor
from gaitref.refiner import normalize_joints
from gaitref.recognizer import (
    AdamState,
    BatchSampler,
    FusionParams,
    TrainConfig,
    adam_step,
    classification_loss,
    fuse,
    lr_at,
    part_distance_matrix,
    total_loss,
    train,
    triplet_loss,
)
from gaitref.synth import synth_gait

from gradcheck import max_relative_error
from oracles import oracle_cross_entropy, oracle_triplet, part_mean_distance

TINY = dict(channels=4, embed_dim=3, num_classes=3, hpp_scale=3, sil_layers=(ConvSpec(3, 3, 1, 2), ConvSpec(4, 3, 1, 1)),
            sil_input_pool=2, skel_hidden=(4,), decoder_hidden=(4,), temporal_kernel=3)


def _bundle(rng, B=2, C=4, S=16):
    return FeatureBundle(F_S=Tensor(rng.normal(size=(B, S, C))), F_J=Tensor(rng.normal(size=(B, C))))


# --- fusion ----------------------------------------------------------------

@pytest.mark.parametrize("mode,combine,parts", [("gaitmix", "concat", 17), ("gaitref", "concat", 18),
                                                ("gaitmix", "padding", 16), ("gaitref", "padding", 16),
                                                ("silhouette", "concat", 16), ("skeleton", "concat", 1)])
def test_fused_part_counts(mode, combine, parts):
    rng = np.random.default_rng(0)
    params = FusionParams(4, 5, 7, rng, mode, combine)
    emb, logits = fuse(_bundle(rng), Tensor(rng.normal(size=(2, 4))), params)
    assert emb.shape == (2, parts, 5) and logits.shape == (2, 7)
    assert ModelConfig(mode=mode, combine=combine).num_parts == parts


def test_gaitref_fusion_needs_refined_feature():
    rng = np.random.default_rng(0)
    with pytest.raises(ContractError):
        fuse(_bundle(rng), None, FusionParams(4, 5, 7, rng, "gaitref"))


def test_padding_adds_skeleton_feature_to_every_strip():
    rng = np.random.default_rng(1)
    b = _bundle(rng)
    p = FusionParams(4, 5, 7, rng, "gaitmix", "padding")
    p.mlp_w.assign(np.eye(4, 5))
    emb, _ = fuse(b, None, p)
    want = b.F_S.data + b.F_J.data[:, None, :]
    assert np.allclose(emb.data[..., :4], want)


def test_logits_are_part_average_of_shared_classifier():
    rng = np.random.default_rng(2)
    p = FusionParams(4, 5, 7, rng, "gaitmix")
    p.mlp_b.assign(rng.normal(size=5))
    emb, logits = fuse(_bundle(rng), None, p)
    assert np.allclose(logits.data, (emb.data @ p.cls_w.data).mean(axis=1))


# --- losses ----------------------------------------------------------------

def test_part_distance_matrix_matches_loops():
    rng = np.random.default_rng(3)
    e = rng.normal(size=(4, 3, 2))
    d = part_distance_matrix(Tensor(e)).data
    for i in range(4):
        for j in range(4):
            assert d[i, j] == pytest.approx(part_mean_distance(e[i], e[j]), abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 31), st.integers(2, 16), st.integers(1, 3), st.floats(0.05, 1.0))
def test_triplet_loss_equals_exhaustive_enumeration(seed, batch, parts, margin):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, max(2, batch // 2), size=batch)
    emb = rng.normal(size=(batch, parts, 3)) * rng.uniform(0.1, 2.0)
    loss, stats = triplet_loss(Tensor(emb), labels, margin)
    assert loss.item() == pytest.approx(oracle_triplet(emb, list(labels), margin), abs=1e-12)


def test_triplet_loss_limits():
    labels = [0, 0, 1, 1, 2, 2]
    loss, stats = triplet_loss(Tensor(np.ones((6, 4, 3))), labels, 0.2)
    assert loss.item() == pytest.approx(0.2, abs=1e-15) and stats.num_active == stats.num_triplets
    centers = np.array([0.0, 10.0, 20.0])
    sep = np.stack([np.full((4, 3), centers[y]) for y in labels])
    sep += np.random.default_rng(0).normal(scale=0.01, size=sep.shape)
    loss, stats = triplet_loss(Tensor(sep), labels, 0.2)
    assert loss.item() == 0.0 and stats.num_active == 0
    loss, stats = triplet_loss(Tensor(np.ones((3, 1, 2))), [0, 1, 2], 0.2)
    assert loss.item() == 0.0 and not stats.valid


def test_cross_entropy_matches_log_sum_exp():
    rng = np.random.default_rng(4)
    logits = rng.normal(scale=20.0, size=(5, 7))
    y = rng.integers(0, 7, size=5)
    assert classification_loss(Tensor(logits), y).item() == pytest.approx(oracle_cross_entropy(logits, y), abs=1e-12)
    with pytest.raises(ContractError):
        classification_loss(Tensor(logits), [0, 1, 2, 3, 7])


@pytest.mark.parametrize("lam2", [1.0, 0.1])
def test_total_loss_is_linear(lam2):
    cfg = TrainConfig(lambda1=1.0, lambda2=lam2)
    assert total_loss(0.7, 2.0, cfg) == pytest.approx(0.7 + lam2 * 2.0)
    t = total_loss(Tensor(0.7), Tensor(2.0), cfg)
    assert t.item() == pytest.approx(0.7 + lam2 * 2.0)


def test_loss_gradients_match_finite_differences():
    rng = np.random.default_rng(5)
    emb = Parameter(rng.normal(size=(6, 2, 3)))
    logits = Parameter(rng.normal(size=(6, 4)))
    labels = [0, 0, 1, 1, 2, 2]
    f = lambda: total_loss(triplet_loss(emb, labels, 0.5)[0], classification_loss(logits, labels),
                           TrainConfig(lambda2=0.1))
    assert max_relative_error(f, [emb, logits]) < 1e-6


# --- optimizer ---------------------------------------------------------------

def test_adam_matches_hand_computation():
    x = {"w": np.array([1.0, -2.0])}
    g = {"w": np.array([0.5, 0.25])}
    state = AdamState()
    m = v = np.zeros(2)
    w = x["w"].copy()
    for t in range(1, 4):
        x, state = adam_step(x, g, state, 0.1)
        m = 0.9 * m + 0.1 * g["w"]
        v = 0.999 * v + 0.001 * g["w"] ** 2
        w = w - 0.1 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        assert np.allclose(x["w"], w, rtol=0, atol=1e-15)
    assert state.step == 3
    # first step moves every coordinate by lr
    y, _ = adam_step({"w": np.zeros(3)}, {"w": np.array([3.0, -1e-3, 7.0])}, AdamState(), 0.01)
    assert np.allclose(np.abs(y["w"]), 0.01, atol=1e-7)


def test_adam_minimizes_quadratic():
    x = {"w": np.array([3.0, -4.0])}
    state = AdamState()
    for _ in range(2000):
        x, state = adam_step(x, {"w": 2 * x["w"]}, state, 0.05)
    assert np.abs(x["w"]).max() < 1e-2


def test_lr_schedule():
    assert lr_at(1.0, 0, (10, 20)) == 1.0
    assert lr_at(1.0, 10, (10, 20)) == pytest.approx(0.1)
    assert lr_at(1.0, 25, (10, 20)) == pytest.approx(0.01)


# --- model and training ------------------------------------------------------

def _records(n_ids=3, seqs=3, frames=16):
    return [synth_gait(i, frames, 0.05, 0.3, s, sequence_id=f"{s:02d}") for i in range(n_ids) for s in range(seqs)]


def test_gaitref_shares_one_skeleton_encoder():
    m = GaitModel(ModelConfig(mode="gaitref", **TINY), 0)
    rng = np.random.default_rng(0)
    sil = (rng.random((1, 8, 64, 44)) > 0.5).astype(float)
    joints = normalize_joints(Tensor(rng.normal(size=(1, 8, 17, 2)))).data
    out = m.forward(sil, joints)
    assert out.F_J_refined is not None
    names = list(m.parameters())
    assert len(names) == len(set(names))
    assert sum(n.startswith("skel.") for n in names) == len(m.skeleton_encoder.parameters())
    # refined == raw at init, so both skeleton parts coincide
    assert np.allclose(out.F_J_refined.data, out.bundle.F_J.data, rtol=0, atol=1e-12)
    raw = GaitModel(ModelConfig(mode="gaitref", normalize_refined=False, **TINY), 0)
    joints = rng.normal(size=(1, 8, 17, 2))
    out = raw.forward(sil, joints)
    assert np.array_equal(out.F_J_refined.data, out.bundle.F_J.data)


def test_refined_feature_ignores_scale_and_offset_of_refined_skeleton():
    m = GaitModel(ModelConfig(mode="gaitref", **TINY), 0)
    rng = np.random.default_rng(1)
    j = rng.normal(size=(1, 8, 17, 2))
    a = m.skeleton_encoder
    from gaitref.encoders import encode_skeleton

    f1 = encode_skeleton(normalize_joints(Tensor(j)), a)[0].data
    f2 = encode_skeleton(normalize_joints(Tensor(3.5 * j + np.array([0.3, -2.0]))), a)[0].data
    assert np.allclose(f1, f2, atol=1e-12)


def test_full_gaitref_graph_gradients():
    rng = np.random.default_rng(6)
    m = GaitModel(ModelConfig(mode="gaitref", **TINY), 0)
    for p in m.parameters().values():
        p.assign(p.data + rng.normal(scale=0.2, size=p.shape))
    sil = rng.normal(size=(4, 6, 64, 44))  # continuous input keeps max-pools away from ties
    skel = rng.normal(size=(4, 6, 17, 2))
    labels = [0, 0, 1, 1]

    def f():
        out = m.forward(sil, skel)
        return total_loss(triplet_loss(out.embeddings, labels, 0.2)[0], classification_loss(out.logits, labels),
                          TrainConfig())

    kinks = []
    assert max_relative_error(f, list(m.parameters().values()), max_entries=6, kinks=kinks) < 1e-4
    assert len(kinks) <= 3


def test_one_step_moves_every_component():
    recs = _records()
    m = GaitModel(ModelConfig(mode="gaitref", **TINY), 0)
    before = m.state_dict()
    train(recs, m, TrainConfig(iterations=1, batch_ids=2, batch_seqs=2, clip_len=8, lr=1e-3))
    after = m.state_dict()
    for prefix in ("sil.", "skel.", "corr.", "fusion."):
        assert any(not np.array_equal(before[k], after[k]) for k in before if k.startswith(prefix)), prefix


def test_training_is_bit_reproducible():
    recs = _records()
    cfg = TrainConfig(iterations=3, batch_ids=2, batch_seqs=2, clip_len=8, lr=1e-3, seed=5)
    states, curves = [], []
    for _ in range(2):
        m = GaitModel(ModelConfig(mode="gaitref", **TINY), 3)
        res = train(recs, m, cfg)
        states.append(m.state_dict())
        curves.append([r.total for r in res.curve])
    assert curves[0] == curves[1]
    for k in states[0]:
        assert states[0][k].tobytes() == states[1][k].tobytes()


def test_sampler_batches_and_errors():
    recs = _records()
    s = BatchSampler(recs, TrainConfig(batch_ids=3, batch_seqs=2, clip_len=10))
    items, labels = s.sample()
    assert len(items) == 6 and sorted(np.bincount(labels)) == [2, 2, 2]
    assert all(0 <= start <= 6 for _, start in items)
    with pytest.raises(ConfigError):
        BatchSampler(recs, TrainConfig(batch_ids=4))
    with pytest.raises(ConfigError):
        BatchSampler(recs, TrainConfig(batch_ids=2, clip_len=40))
    with pytest.raises(ConfigError):
        TrainConfig(batch_seqs=1)


def test_training_lowers_loss_on_tiny_problem():
    recs = _records(3, 3, 16)
    m = GaitModel(ModelConfig(mode="gaitmix", **TINY), 0)
    res = train(recs, m, TrainConfig(iterations=150, batch_ids=3, batch_seqs=2, clip_len=12, lr=1e-2))
    tot = [r.total for r in res.curve]
    assert np.mean(tot[-20:]) < 0.5 * np.mean(tot[:20])


def test_model_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(mode="rgb")
    with pytest.raises(ConfigError):
        ModelConfig(combine="sum")
    cfg = ModelConfig(mode="gaitmix", **TINY)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg


@pytest.mark.parametrize("name", ["silhouette", "gaitmix-concat", "gaitref-concat"])
def test_benchmark_training_halves_total_loss(bench_runs, name):
    from conftest import BENCH_SEEDS
    from gaitref.benchmark import loss_ratio

    ratios = [loss_ratio(r.curve) for r in bench_runs.seeds(name, BENCH_SEEDS)]
    assert np.mean(ratios) < 0.5, ratios
