import csv
import json

import numpy as np
import pytest
from sklearn.base import clone

from lcool.langevin import CoolingConfig, FringeDetector, cool
from lcool.metrics import manifold_residual, manifold_residual_values, raw_target_offset, score_angles
from lcool.nn import Layer, MlpModel, forward
from lcool.rng import Rng
from lcool.score import CycleScore, CycleScoreConfig
from lcool.toy_data import make_offmanifold_tests
from lcool.translate import (
    PIPELINE_COLUMNS,
    CycleGanTranslator,
    ToyCycleGan,
    cycle_consistency_loss,
    init_toy_cyclegan,
    run_lcool_cycle_pipeline,
    run_lcool_pipeline,
    train_cyclegan_toy,
    translate,
    write_pipeline_csv,
    write_trail_csv,
    write_trails_combined,
)

COOL_CFG = CoolingConfig(alpha=0.005, temperature=0.001, n_steps=100)
ALL = FringeDetector(proportion=1.0)


def _ident():
    return MlpModel([Layer(np.eye(2), np.zeros(2))])


def _identity_gan():
    m = init_toy_cyclegan(Rng(0), hidden=4)
    m.g, m.f = _ident(), _ident()
    return m


# -- training ---------------------------------------------------------------


def test_zero_steps_is_initialisation(toy_source, toy_target):
    m = train_cyclegan_toy(toy_source, toy_target, steps=0, rng=Rng(3))
    ref = init_toy_cyclegan(Rng(3).child(0))
    assert m.to_dict() == ref.to_dict()
    assert m.cycle_error(toy_source.points).mean() > 0.05  # untrained baseline


def test_training_is_deterministic(toy_source, toy_target):
    a = train_cyclegan_toy(toy_source, toy_target, steps=30, rng=Rng(8))
    b = train_cyclegan_toy(toy_source, toy_target, steps=30, rng=Rng(8))
    assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())


def test_trained_cyclegan_quality(toy_gan, toy_source):
    assert toy_gan.cycle_error(toy_source.points).mean() < 0.05
    y = translate(toy_gan, toy_source.points)
    assert raw_target_offset(y).mean() < 0.08
    assert np.mean(raw_target_offset(y) <= 0.1) >= 0.9


def test_offmanifold_translation_is_atypical(toy_gan, toy_source):
    on = manifold_residual(translate(toy_gan, toy_source.points), "target").mean
    off = manifold_residual_values(translate(toy_gan, [0.5, 0.65]), "target")[0]
    assert off > on


def test_checkpoint_dict_roundtrip(toy_gan):
    back = ToyCycleGan.from_dict(json.loads(json.dumps(toy_gan.to_dict())))
    x = np.array([[0.2, 0.3], [0.9, 0.1]])
    assert translate(back, x).tobytes() == translate(toy_gan, x).tobytes()


def test_cycle_loss_nonnegative_and_zero_iff_exact(toy_gan, toy_source, toy_target):
    assert cycle_consistency_loss(_identity_gan(), toy_source.points, toy_target.points) == 0.0
    loss = cycle_consistency_loss(toy_gan, toy_source.points, toy_target.points)
    assert loss > 0.0


def test_discriminators_output_probabilities(toy_gan):
    p = forward(toy_gan.d_target, np.random.default_rng(0).uniform(-5, 5, (100, 2)))
    assert np.all((p >= 0) & (p <= 1))


def test_translate_identity():
    np.testing.assert_array_equal(translate(_identity_gan(), [0.3, 0.4]), [0.3, 0.4])


def test_cyclegan_translator_estimator(toy_source, toy_target):
    est = CycleGanTranslator(steps=20, random_state=4)
    assert clone(est).get_params() == est.get_params()
    est.fit(toy_source.points, toy_target.points[:500])
    ref = train_cyclegan_toy(toy_source, toy_target.points[:500], steps=20, rng=Rng(4))
    np.testing.assert_array_equal(est.transform(toy_source.points[:5]), translate(ref, toy_source.points[:5]))
    np.testing.assert_array_equal(est.inverse_transform(toy_target.points[:5]), forward(ref.f, toy_target.points[:5]))
    assert isinstance(est.cycle_score_provider(), CycleScore)


# -- pipeline ---------------------------------------------------------------


def test_pipeline_zero_steps_equals_baseline(toy_gan, toy_dae):
    res = run_lcool_pipeline(toy_gan, toy_dae, ALL, CoolingConfig(n_steps=0), make_offmanifold_tests())
    for r in res:
        np.testing.assert_array_equal(r.y_cooled, r.y_baseline)


def test_pipeline_without_fringe_is_plain_translation(toy_gan, toy_dae):
    tests = make_offmanifold_tests()
    res = run_lcool_pipeline(toy_gan, toy_dae, FringeDetector(threshold=1e9), COOL_CFG, tests)
    assert not any(r.fringe for r in res)
    np.testing.assert_array_equal([r.y_cooled for r in res], translate(toy_gan, tests.points))
    assert all(r.trail is None for r in res)


def test_pipeline_cooling_improves_target_residual(toy_gan, toy_dae):
    res = run_lcool_pipeline(toy_gan, toy_dae, ALL, COOL_CFG, make_offmanifold_tests())
    assert np.mean([r.tgt_residual_cooled for r in res]) < np.mean([r.tgt_residual_baseline for r in res])


def test_fringe_gating_is_pure_routing(toy_gan, toy_dae):
    tests = make_offmanifold_tests()
    res = run_lcool_pipeline(toy_gan, toy_dae, ALL, COOL_CFG, tests)
    trails = [cool(x, toy_dae, COOL_CFG, i) for i, x in enumerate(tests.points)]
    y = translate(toy_gan, np.array([t.end for t in trails]))
    for i, (r, t) in enumerate(zip(res, trails)):
        assert r.trail.points.tobytes() == t.points.tobytes()
        np.testing.assert_array_equal(r.y_cooled, y[i])


def test_baseline_independent_of_cooling_config(toy_gan, toy_dae):
    tests = make_offmanifold_tests()
    a = run_lcool_pipeline(toy_gan, toy_dae, ALL, COOL_CFG, tests)
    b = run_lcool_pipeline(toy_gan, toy_dae, ALL, CoolingConfig(0.01, 0.01, 20, seed=5), tests)
    for ra, rb in zip(a, b):
        assert ra.y_baseline.tobytes() == rb.y_baseline.tobytes()


def test_cycle_pipeline_vanishing_gamma_only_noise(toy_gan):
    tests = make_offmanifold_tests()
    res = run_lcool_cycle_pipeline(toy_gan, CycleScoreConfig(1e-12), ALL, COOL_CFG, tests)
    for i, r in enumerate(res):
        noise_only = cool(tests.points[i], lambda x: np.zeros_like(x), COOL_CFG, i)
        np.testing.assert_allclose(r.cooled, noise_only.end, atol=1e-9)


def test_dae_and_cycle_trails_share_noise(toy_gan, toy_dae):
    tests = make_offmanifold_tests()
    cyc = CycleScore(toy_gan.g, toy_gan.f)
    a = run_lcool_pipeline(toy_gan, toy_dae, ALL, COOL_CFG, tests)
    b = run_lcool_cycle_pipeline(toy_gan, CycleScoreConfig(), ALL, COOL_CFG, tests)
    for ra, rb in zip(a, b):
        pa, pb = ra.trail.points, rb.trail.points
        na = pa[1:] - pa[:-1] - COOL_CFG.alpha * toy_dae.grad_log_density(pa[:-1])
        nb = pb[1:] - pb[:-1] - COOL_CFG.alpha * cyc.grad_log_density(pb[:-1])
        np.testing.assert_allclose(na, nb, atol=1e-12)


def test_cycle_vs_dae_direction_disagreement_recorded(toy_gan, toy_dae):
    angles = score_angles(toy_dae, CycleScore(toy_gan.g, toy_gan.f), make_offmanifold_tests().points)
    print("DAE vs cycle first-step angles (deg):", np.round(angles, 2))
    assert np.all(np.isfinite(angles)) and np.any(angles > 0)


# -- file formats -----------------------------------------------------------


def test_pipeline_csv_format(tmp_path, toy_gan, toy_dae):
    res = run_lcool_pipeline(toy_gan, toy_dae, ALL, CoolingConfig(n_steps=5), make_offmanifold_tests())
    write_pipeline_csv(res, tmp_path / "p.csv")
    rows = list(csv.DictReader(open(tmp_path / "p.csv")))
    assert tuple(rows[0].keys()) == PIPELINE_COLUMNS
    assert len(rows) == 3
    assert float(rows[1]["xc1"]) == res[1].cooled[0]
    assert float(rows[2]["tgt_residual_cooled"]) == res[2].tgt_residual_cooled


def test_trail_csv_formats(tmp_path):
    trails = [cool([0.5, 0.65], lambda x: -x, CoolingConfig(n_steps=3), i) for i in range(2)]
    write_trail_csv(trails[0], tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "step,x1,x2,score_norm" and len(lines) == 5
    assert lines[-1].endswith(",")  # final point carries no score evaluation
    write_trails_combined(trails, tmp_path / "all.csv")
    rows = list(csv.DictReader(open(tmp_path / "all.csv")))
    assert [r["sample_id"] for r in rows] == ["0"] * 4 + ["1"] * 4
