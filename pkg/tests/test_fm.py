"""FM predictors against the pairwise-enumeration oracle, plus serialization."""

import numpy as np
import pytest

from xferfm.data import CF, CTR, SparseInstance
from xferfm.fm import (
    FmModel, linear_score, load_model, predict_cf, predict_ctr, save_model,
    score_dataset, sigmoid,
)

from conftest import oracle_logit, random_dataset, random_instance, random_model, tiny_space


def test_sigmoid_basics(rng):
    assert sigmoid(0.0) == 0.5
    assert sigmoid(40.0) == pytest.approx(1.0, abs=1e-12)
    assert sigmoid(-40.0) == pytest.approx(0.0, abs=1e-12)
    assert np.isfinite(sigmoid(1e3)) and np.isfinite(sigmoid(-1e3))
    x = rng.normal(scale=10.0, size=100)
    np.testing.assert_allclose(sigmoid(x) + sigmoid(-x), 1.0, atol=1e-12)


def test_zero_model_predicts_half():
    m = FmModel.zeros(CF, 6, 2)
    inst = SparseInstance((0,), (3,), (), 1, CF)
    assert predict_cf(m, inst) == 0.5


def test_bias_only_path():
    m = FmModel.zeros(CF, 6, 2)
    m.w0 = 1.0
    inst = SparseInstance((0,), (3,), (), 1, CF)
    assert predict_cf(m, inst) == pytest.approx(sigmoid(1.0))


def test_k1_hand_example():
    # one user vector 0.5, one publisher vector 0.4, all weights zero
    m = FmModel.zeros(CF, 2, 1)
    m.V[0, 0] = 0.5
    m.V[1, 0] = 0.4
    inst = SparseInstance((0,), (1,), (), 1, CF)
    assert linear_score(m, inst) == pytest.approx(0.2)
    assert predict_cf(m, inst) == pytest.approx(sigmoid(0.2))


def test_k2_three_group_hand_example(rng):
    m = FmModel.zeros(CTR, 3, 2)
    a, b, c = rng.normal(size=(3, 2))
    m.V[0], m.V[1], m.V[2] = a, b, c
    inst = SparseInstance((0,), (1,), (2,), 1, CTR)
    expect = float(a @ b + a @ c + b @ c)
    assert linear_score(m, inst) == pytest.approx(expect)


def test_logit_matches_pair_enumeration_oracle(rng):
    space = tiny_space(n_user=5, n_pub=4, n_ad=3)
    for _ in range(300):
        task = CF if rng.random() < 0.5 else CTR
        n = space.cf_dims if task == CF else space.n_features
        m = random_model(rng, task, n, int(rng.integers(1, 5)))
        inst = random_instance(rng, space, task)
        assert linear_score(m, inst) == pytest.approx(
            oracle_logit(m, inst), rel=1e-12, abs=1e-12)


def test_ctr_reduces_to_cf_when_ad_block_zero(rng):
    space = tiny_space()
    m = random_model(rng, CTR, space.n_features, 3)
    m.V[space.cf_dims:] = 0.0
    m.w[space.cf_dims:] = 0.0
    sub = FmModel(task=CF, K=3, w0=m.w0, w=m.w[:space.cf_dims],
                  V=m.V[:space.cf_dims])
    inst = random_instance(rng, space, CTR)
    cf_inst = SparseInstance(inst.user_idx, inst.pub_idx, (), inst.label, CF)
    assert predict_ctr(m, inst) == pytest.approx(predict_cf(sub, cf_inst))


def test_zeroing_one_group_removes_its_interactions(rng):
    space = tiny_space()
    m = random_model(rng, CTR, space.n_features, 2)
    m.V[space.user_dims:space.cf_dims] = 0.0    # kill the publisher block
    inst = random_instance(rng, space, CTR)
    # oracle with publisher vectors removed must agree
    assert linear_score(m, inst) == pytest.approx(oracle_logit(m, inst))


def test_task_and_range_errors(rng):
    space = tiny_space()
    m = random_model(rng, CF, space.cf_dims, 2)
    ctr_inst = random_instance(rng, space, CTR)
    with pytest.raises(ValueError):
        linear_score(m, ctr_inst)
    bad = SparseInstance((0,), (space.cf_dims + 99,), (), 1, CF)
    with pytest.raises(ValueError):
        linear_score(m, bad)
    with pytest.raises(ValueError):
        predict_cf(random_model(rng, CTR, space.n_features, 2),
                   random_instance(rng, space, CF))


def test_score_dataset_matches_per_instance(rng):
    space = tiny_space()
    m = random_model(rng, CTR, space.n_features, 3)
    d = random_dataset(rng, space, CTR, 40)
    batch = score_dataset(m, d)
    for i, inst in enumerate(d.instances):
        assert batch[i] == pytest.approx(predict_ctr(m, inst), rel=1e-12)


def test_save_load_roundtrip_bit_exact(tmp_path, rng):
    m = random_model(rng, CTR, 7, 3)
    path = tmp_path / "m.txt"
    save_model(m, path, space_hash="abc123")
    m2, h = load_model(path)
    assert h == "abc123"
    assert m2.task == CTR and m2.K == 3
    assert m2.w0 == m.w0
    assert np.array_equal(m2.w, m.w)
    assert np.array_equal(m2.V, m.V)


def test_load_rejects_wrong_magic(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("not a model\n")
    with pytest.raises(ValueError):
        load_model(p)
