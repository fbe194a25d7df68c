from dataclasses import replace

import numpy as np
import pytest

from cstyle.datagen import default_family, generate_dataset, make_domain_family
from cstyle.errors import ConfigError, ShapeError
from cstyle.pipeline import (SweepRow, TrainConfig, alpha_sweep, bound_diagnostics, cluster_sweep, evaluate,
                             infer, linear_fit_deviation, loo_average, run_leave_one_out, sweep_trend, train)
from cstyle.style_stats import GaussianStyle
from cstyle.unified import UnifiedDomain

QUICK = TrainConfig(epochs=4, initial_epochs=2, update_interval=2, seed=0)


@pytest.fixture(scope="module")
def small():
    return generate_dataset(default_family(0), 4, 8, seed=0)


@pytest.fixture(scope="module")
def trained(small):
    return train(small.select_domains([0, 1, 2]), QUICK)


def test_config_validation():
    for kwargs in (dict(epochs=0), dict(initial_epochs=0), dict(initial_epochs=40), dict(alpha=1.5),
                   dict(mode="mixup"), dict(unified_method="median"), dict(update_interval=9)):
        with pytest.raises(ConfigError):
            TrainConfig(**kwargs)


def test_schedule(trained):
    _, unified, report = trained
    assert [e.epoch for e in report.epochs] == [1, 2, 3, 4]
    assert [e.refresh for e in report.epochs] == [False, True, False, True]
    assert [r[0] for r in report.refreshes] == [2, 4]
    assert unified is not None and unified.channels == 8
    assert report.initial_style_params.shape == (8 * 27 + 8,)


def test_conststyle_without_aligned_epochs_equals_erm(small):
    data = small.select_domains([0, 1])
    cfg = TrainConfig(epochs=3, initial_epochs=3, update_interval=3, seed=4)
    erm, _, _ = train(data, replace(cfg, mode="erm"))
    cs, unified, _ = train(data, cfg)
    assert erm.params.tobytes() == cs.params.tobytes()
    assert unified is not None


def test_training_is_deterministic(small):
    data = small.select_domains([0, 1])
    a, ua, _ = train(data, QUICK)
    b, ub, _ = train(data, QUICK)
    assert a.params.tobytes() == b.params.tobytes()
    np.testing.assert_array_equal(ua.mean, ub.mean)


def test_alpha_one_predictions_match_plain(trained, small):
    net, unified, _ = trained
    np.testing.assert_array_equal(infer(net, unified, small, alpha=1.0), infer(net, None, small))


def test_infer_shapes(trained, small):
    net, unified, _ = trained
    assert infer(net, unified, small).shape == (len(small),)
    assert infer(net, unified, small.inputs[0]).shape == (1,)
    bad = UnifiedDomain(GaussianStyle(np.zeros(4), np.eye(4)), "average")
    with pytest.raises(ShapeError):
        infer(net, bad, small)


def test_alpha_sweep_leaves_model_untouched(trained, small):
    net, unified, _ = trained
    before = net.params.copy()
    reports = alpha_sweep(net, unified, small, [0.0, 0.5, 1.0], [3])
    np.testing.assert_array_equal(net.params, before)
    plain = evaluate(net, None, small, domain_ids=[3], reference=unified)
    assert reports[-1].accuracy == plain.accuracy
    assert [r.alpha for r in reports] == [0.0, 0.5, 1.0]


def test_evaluate_report(trained, small):
    net, unified, _ = trained
    rep = evaluate(net, unified, small)
    assert [r.domain_id for r in rep.rows] == [0, 1, 2, 3]
    assert rep.confusion.sum() == len(small)
    assert np.trace(rep.confusion) == sum(r.correct for r in rep.rows)
    assert all(r.frechet_to_unified >= 0 for r in rep.rows)
    with pytest.raises(ConfigError):
        evaluate(net, unified, small, domain_ids=[9])


def test_leave_one_out_structure(small):
    cfg = TrainConfig(epochs=2, initial_epochs=1, update_interval=1)
    reports = run_leave_one_out(small, cfg)
    assert [r.holdout for r in reports] == [0, 1, 2, 3]
    assert all(len(r.rows) == 1 and r.rows[0].domain_id == r.holdout for r in reports)
    assert loo_average(reports) == pytest.approx(np.mean([r.accuracy for r in reports]))
    with pytest.raises(ConfigError):
        run_leave_one_out(small.select_domains([0]), cfg)


def test_identical_domains_show_no_gap():
    specs = make_domain_family(2, [0.0, 0.0], seed=0)
    data = generate_dataset(specs, 4, 40, seed=1)
    cfg = TrainConfig(epochs=15, initial_epochs=5, update_interval=5)
    net, unified, _ = train(data.select_domains([0]), cfg)
    rep = evaluate(net, unified, data, cfg.alpha)
    assert abs(rep.domain_accuracy(0) - rep.domain_accuracy(1)) < 0.03


def test_cluster_sweep_rows(small):
    rows = cluster_sweep(small, TrainConfig(epochs=2, initial_epochs=1, update_interval=1), [1, 2], holdout=3)
    assert [k for k, _ in rows] == [1, 2]
    assert all(r.holdout == 3 for _, r in rows)


def test_sweep_trend():
    rows = [SweepRow(i, d, e, c) for i, d, e, c in
            [(0, 0.1, 1.0, 1.0), (1, 0.5, 0.8, 0.9), (2, 0.9, 0.5, 0.85), (3, 1.4, 0.3, 0.7)]]
    t = sweep_trend(rows)
    assert t["distances_increasing"]
    assert t["erm_spearman"] == pytest.approx(-1.0)
    assert t["erm_drop"] == pytest.approx(0.7) and t["conststyle_drop"] == pytest.approx(0.3)
    flat = sweep_trend([SweepRow(i, i, 1.0, 1.0) for i in range(3)])
    assert flat["erm_spearman"] == 0.0


def test_linear_fit_deviation():
    assert linear_fit_deviation([(1, 2.0), (2, 4.0), (3, 6.0)]) == pytest.approx(0.0, abs=1e-12)
    assert linear_fit_deviation([(1, 1.0), (2, 1.0), (3, 3.0), (4, 3.0)]) > 0.25


def test_bound_diagnostics():
    unified = GaussianStyle(np.zeros(4), np.eye(4))
    eps = np.random.default_rng(0).standard_normal((30, 4)) + 1.0
    (row,) = bound_diagnostics(unified, {5: eps})
    assert row.domain_id == 5 and row.d_mu > 0 and row.frechet_to_unified > 0
