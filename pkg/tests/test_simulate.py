import os

from dataclasses import replace

import numpy as np
import pytest

from expectile_group_lasso.design import GroupedCoefficients, GroupSpec
from expectile_group_lasso.loss import LossSpec
from expectile_group_lasso.simulate import (
    BUILTIN_ERRORS, BUILTIN_STRUCTURES, EstimatorConfig, ScenarioError, ScenarioSpec, gamma_sweep, generate,
    load_scenarios, run, signal_sweep)
from expectile_group_lasso.simulate.engine import (
    RECORD_COLUMNS, SUMMARY_COLUMNS, THRESHOLDS, resolve_tau, scenario_tau, selection_metrics)
from expectile_group_lasso.simulate.scenario import P0_RULES, P_RULES, evaluate_rule
from expectile_group_lasso.solver import PenaltySpec, adaptive_weights, fit_penalized, fit_unpenalized

from .conftest import TARGET_LAMBDA_CONSTANT, BASELINE

SCENARIOS = os.path.join(os.path.dirname(os.path.abspath(__file__)), '..', 'scenarios')


@pytest.fixture
def small_spec():
    return ScenarioSpec(n=60, seed=3, tau=0.5)


@pytest.mark.parametrize('structure,n,expected', (
    ('ungrouped_fixed', 100, (10, 5)),
    ('ungrouped_growing', 50, (25, 14)),
    ('ungrouped_growing', 200, (100, 28)),
    ('grouped_fixed', 200, (10, 4)),
    ('grouped_growing', 400, (80, 8)),
))
def test_default_sizes(structure, n, expected):
    assert ScenarioSpec(n=n, structure=structure).sizes() == expected


@pytest.mark.parametrize('rule,n,expected', (
    ('floor(n/2)', 51, 25),
    ('floor(n/5)', 99, 19),
    ('floor(n/log(n))', 200, 37),
    ('floor(n/(2*log(n)))', 400, 33),
    ('2*floor(sqrt(n))', 50, 14),
    ('2*floor(sqrt(n))', 49, 14),
    ('2*floor(n^(1/4))', 200, 6),
    ('2*floor(n^(1/4))', 81, 6),
    ('2*floor(sqrt(n)/5)', 400, 8),
    (' floor( n/2 ) ', 10, 5),
    (7, 100, 7),
    ('7', 100, 7),
))
def test_evaluate_rule(rule, n, expected):
    rules = dict(P_RULES, **P0_RULES)
    assert evaluate_rule(rule, n, rules, 'p') == expected


@pytest.mark.parametrize('rule', ('floor(n/3)', True, 2.5, None, 'n'))
def test_evaluate_rule_invalid(rule):
    with pytest.raises(ScenarioError):
        evaluate_rule(rule, 100, P_RULES, 'p')


def test_log_rule_needs_two_observations():
    with pytest.raises(ScenarioError):
        evaluate_rule('floor(n/log(n))', 1, P_RULES, 'p')


@pytest.mark.parametrize('kwargs', (
    {'n': 1},
    {'n': True},
    {'n': 2.5},
    {'structure': 'banded'},
    {'error_dist': 'student'},
    {'gamma': 0.0},
    {'q': 1.0},
    {'tau': 1.0},
    {'lambda_constant': 0.0},
    {'beta': ['a']},
    {'seed': -1},
    {'seed': 'x'},
    {'lam': 'log(n)'},
    {'p': 0},
    {'p': 3, 'p0': 4},
    {'p0': 'floor(n/2)'},
))
def test_scenario_spec_invalid(kwargs):
    values = {'n': 100}
    values.update(kwargs)

    with pytest.raises(ScenarioError):
        ScenarioSpec(**values)


def test_scenario_spec():
    spec = ScenarioSpec(n=100, structure='ungrouped_growing', beta=[1, 2], seed='4', lam='0.05',
                        lambda_constant=2.0)

    assert spec.beta == (1.0, 2.0)
    assert spec.seed == 4
    assert spec.label == 'ungrouped_growing-std_normal-n100-p50'
    assert spec.schedule()(100) == pytest.approx(0.1)
    assert spec.to_dict()['lambda'] == '0.05'
    assert spec.model.name == 'ungrouped_growing'
    assert ScenarioSpec(n=100, name='custom').label == 'custom'


def test_scenario_default_schedule():
    spec = ScenarioSpec(n=BASELINE['n'], gamma=BASELINE['gamma'], lambda_constant=TARGET_LAMBDA_CONSTANT)

    assert spec.schedule()(200) == pytest.approx(5.0 * 200 ** -0.65625)


def test_scenario_from_dict():
    spec = ScenarioSpec.from_dict(dict(BASELINE, **{'lambda': 0.1, 'error_dist': 'shifted_exp'}))

    assert spec.lam == '0.1'
    assert spec.error_dist == 'shifted_exp'
    assert spec.sizes() == (10, 5)
    assert ScenarioSpec.from_dict(spec.to_dict()) == spec


@pytest.mark.parametrize('data', ([], {'structure': 'ungrouped_fixed'}, {'n': 100, 'alpha': 1}))
def test_scenario_from_dict_invalid(data):
    with pytest.raises(ScenarioError):
        ScenarioSpec.from_dict(data)


def test_load_scenarios_with_defaults():
    scenarios = load_scenarios(os.path.join(SCENARIOS, 'baseline.json'))

    assert [s.label for s in scenarios] == ['baseline-std_normal', 'baseline-shifted_chi2', 'baseline-shifted_exp']
    assert all(s.n == 200 and s.gamma == 0.625 and s.lambda_constant == 1.0 for s in scenarios)


def test_load_bundled_scenarios():
    full = load_scenarios(os.path.join(SCENARIOS, 'full_scale.json'))
    signal = load_scenarios(os.path.join(SCENARIOS, 'signal.json'))

    assert {s.structure for s in full} == set(BUILTIN_STRUCTURES)
    assert {s.error_dist for s in full} == set(BUILTIN_ERRORS)
    assert all(s.lambda_constant == TARGET_LAMBDA_CONSTANT for s in full)
    assert [s.sizes() for s in full if s.label == 'growing-log-normal-n400'] == [(66, 8)]
    assert signal[0].sizes() == (10, 1)


def test_load_scenarios_single_yaml(tmp_path):
    path = tmp_path / 'scenario.yaml'
    path.write_text('n: 80\nstructure: grouped_fixed\nerror_dist: cauchy\n')

    (spec,) = load_scenarios(str(path))

    assert spec.structure == 'grouped_fixed'
    assert spec.n == 80


@pytest.mark.parametrize('content', ('[1, 2]', '{"scenarios": []}', '{"scenarios": [{"n": 10}], "defaults": 1}',
                                     '{"n": 10, "structure": "x"}', '{"n": '))
def test_load_scenarios_invalid(tmp_path, content):
    path = tmp_path / 'scenario.json'
    path.write_text(content)

    with pytest.raises(ScenarioError):
        load_scenarios(str(path))


def test_load_scenarios_missing_file(tmp_path):
    with pytest.raises(ScenarioError):
        load_scenarios(str(tmp_path / 'missing.json'))


def test_generate_deterministic(small_spec):
    first = generate(small_spec, 4)
    second = generate(small_spec, 4)
    other = generate(small_spec, 5)

    np.testing.assert_array_equal(first.design.X, second.design.X)
    np.testing.assert_array_equal(first.y, second.y)
    assert not np.array_equal(first.y, other.y)
    assert first.attempts == 1
    assert first.tau == 0.5
    np.testing.assert_array_equal(first.beta0.beta, [1.0, -2.0, 0.5, 4.0, -6.0, 0, 0, 0, 0, 0])


def test_generate_grouped():
    spec = ScenarioSpec(n=400, structure='grouped_growing', seed=2)

    draw = generate(spec, 0)

    assert draw.tau == 0.5
    assert draw.design.groups.sizes == (5,) * 80
    assert draw.design.n == draw.design.r == 400
    assert np.count_nonzero(draw.beta0.norms()) == 8
    assert np.all(draw.beta0.beta[40:] == 0.0)


def test_generate_too_many_columns():
    with pytest.raises(ScenarioError):
        generate(ScenarioSpec(n=20, p=5, structure='grouped_fixed', p0=4, tau=0.5), 0)


def test_generate_beta_mismatch():
    with pytest.raises(ScenarioError):
        generate(ScenarioSpec(n=50, beta=(1.0, 2.0), tau=0.5), 0)


def test_scenario_tau():
    assert scenario_tau('std_normal', 1) == pytest.approx(0.5, abs=5e-3)
    assert scenario_tau('shifted_chi2', 1) > 0.5
    assert scenario_tau('shifted_exp', 1) == pytest.approx(0.5, abs=5e-3)


def test_resolve_tau():
    assert resolve_tau(ScenarioSpec(n=50, tau=0.3)) == 0.3
    assert resolve_tau(ScenarioSpec(n=200, structure='grouped_fixed', error_dist='cauchy')) == 0.5
    assert resolve_tau(ScenarioSpec(n=50, seed=1), 10 ** 5) == pytest.approx(0.5, abs=2e-2)


def test_resolve_tau_grouped_asymmetric_errors(caplog):
    assert resolve_tau(ScenarioSpec(n=200, structure='grouped_fixed', error_dist='cauchy')) == 0.5
    assert 'asymmetric' not in caplog.text

    assert resolve_tau(ScenarioSpec(n=200, structure='grouped_fixed', error_dist='shifted_chi2')) == 0.5
    assert 'grouped_fixed structure fixes tau=0.5 but shifted_chi2 errors are asymmetric' in caplog.text

    caplog.clear()
    assert resolve_tau(ScenarioSpec(n=200, structure='grouped_fixed', error_dist='shifted_exp', tau=0.4)) == 0.4
    assert 'asymmetric' not in caplog.text


def test_selection_metrics():
    groups = GroupSpec.ungrouped(4)

    metrics = selection_metrics(GroupedCoefficients([0.5, 0.1, 0.0, 0.0], groups),
                                GroupedCoefficients([1.0, 0.0, 2.0, 0.0], groups))

    assert metrics == {
        'true_nonzero': 1,
        'false_nonzero': 1,
        'true_groups': 2,
        'p': 4,
        'pct_true': 50.0,
        'pct_false': 50.0,
        'abs_all': pytest.approx(2.6),
        'abs_active': pytest.approx(2.5),
    }


def test_selection_metrics_grouped():
    groups = GroupSpec((2, 2))

    metrics = selection_metrics(GroupedCoefficients([0.0, 0.0, 1.0, 1.0], groups),
                                GroupedCoefficients([0.0, 0.0, 0.0, 0.0], groups))

    assert metrics['true_groups'] == 0
    assert metrics['pct_true'] == 0.0
    assert metrics['false_nonzero'] == 1
    assert metrics['pct_false'] == 50.0
    assert metrics['abs_active'] == 0.0


def test_run_single_replication_matches_pipeline(small_spec):
    report = run(small_spec, 1)

    draw = generate(small_spec, 0, tau=0.5)
    spec = LossSpec(0.5)
    pilot = fit_unpenalized(draw.design, draw.y, spec)
    weights = adaptive_weights(pilot.beta, small_spec.gamma)
    lam = 60 ** -0.65625
    fit = fit_penalized(draw.design, draw.y, spec, PenaltySpec(lam, small_spec.gamma, weights))

    (record,) = report.records
    assert record.lam == pytest.approx(lam)
    assert record.active == fit.active.indices
    assert record.iterations == fit.iterations
    assert report.lam == record.lam
    assert report.mean_true_nonzero == record.true_nonzero
    assert report.mean_abs_all == pytest.approx(record.abs_all / 10)


def test_run_independent_of_workers(small_spec):
    assert run(small_spec, 4, workers=2) == run(small_spec, 4, workers=1)


def test_run_records(small_spec):
    report = run(small_spec, 6)

    assert report.replications == 6
    assert (report.p, report.p0) == (10, 5)
    for record in report.records:
        assert 0 <= record.true_nonzero <= record.true_groups == 5
        assert 0 <= record.false_nonzero <= record.p - record.true_groups
        assert record.true_nonzero + record.false_nonzero == len(record.active)
        assert record.pct_true == pytest.approx(100.0 * record.true_nonzero / 5)
        assert record.abs_all >= record.abs_active >= 0.0
    assert report.mean_abs_all == pytest.approx(sum(r.abs_all for r in report.records) / 60)
    assert report.degenerate is False

    tables = report.tables()
    assert tuple(tables['simulation'].columns) == SUMMARY_COLUMNS
    assert tuple(tables['replications'].columns) == RECORD_COLUMNS
    assert len(tables['replications']) == 6


def test_run_invalid(small_spec):
    with pytest.raises(ScenarioError):
        run(small_spec, 0)


def test_run_above_lambda_max(small_spec):
    report = run(small_spec, 3, EstimatorConfig(lambda_max_factor=1.5))

    assert report.mean_true_nonzero == 0.0
    assert report.mean_false_nonzero == 0.0
    assert report.pct_true == 0.0
    assert all(r.lam > 0 for r in report.records)


def test_run_baseline_quick():
    spec = ScenarioSpec.from_dict(dict(BASELINE, error_dist='std_normal', lambda_constant=TARGET_LAMBDA_CONSTANT))

    report = run(spec, 20)

    assert report.mean_true_nonzero >= 4.8
    assert report.mean_false_nonzero <= 0.5
    assert report.nonconverged == 0


@pytest.mark.slow
@pytest.mark.parametrize('error_dist', ('std_normal', 'shifted_chi2'))
def test_run_baseline_target_constant(error_dist):
    spec = ScenarioSpec.from_dict(dict(BASELINE, error_dist=error_dist, lambda_constant=TARGET_LAMBDA_CONSTANT))

    report = run(spec, 100, workers=4)

    assert report.mean_true_nonzero >= 4.9
    assert report.mean_false_nonzero <= 0.2
    assert report.nonconverged == 0


@pytest.mark.slow
def test_run_baseline_literal_schedule():
    spec = ScenarioSpec.from_dict(dict(BASELINE, error_dist='std_normal'))

    report = run(spec, 100, workers=4)

    # the unscaled schedule keeps every signal but lets noise groups through
    assert report.mean_true_nonzero >= 4.9
    assert 0.2 < report.mean_false_nonzero < 1.0


def test_gamma_sweep_single_value_equals_run(small_spec):
    sweep = gamma_sweep(small_spec, [0.5], 2)

    assert sweep.sweep == 'gamma'
    assert sweep.values == (0.5,)
    assert sweep.reports[0] == run(replace(small_spec, gamma=0.5), 2)
    assert sweep.rows()[0]['gamma'] == 0.5

    with pytest.raises(ScenarioError):
        gamma_sweep(small_spec, [], 2)


def test_signal_sweep():
    spec = ScenarioSpec(n=100, p=10, p0=1, tau=0.5, gamma=0.6, seed=7, lambda_constant=TARGET_LAMBDA_CONSTANT)

    sweep = signal_sweep(spec, [200.0, 0.0], 3)

    assert sweep.values == (0.0, 200.0)
    degenerate, strong = sweep.reports
    assert degenerate.degenerate is True
    assert degenerate.pct_true == 0.0
    assert strong.pct_true == 100.0
    assert sweep.thresholds == {level: 2.0 for level in THRESHOLDS}
    assert [row['beta_norm'] for row in sweep.rows()] == [0.0, 2.0]
    assert set(sweep.tables()) == {'sweep', 'replications', 'thresholds'}


def test_signal_sweep_not_reached():
    spec = ScenarioSpec(n=100, p=10, p0=1, tau=0.5, seed=7, lambda_constant=TARGET_LAMBDA_CONSTANT)

    sweep = signal_sweep(spec, [0.0], 2)

    assert sweep.thresholds == {99.0: None, 95.0: None}


def test_signal_sweep_invalid(small_spec):
    with pytest.raises(ScenarioError):
        signal_sweep(ScenarioSpec(n=200, structure='grouped_fixed'), [50.0], 1)

    with pytest.raises(ScenarioError):
        signal_sweep(small_spec, [], 1)


@pytest.mark.slow
def test_signal_threshold():
    (spec,) = load_scenarios(os.path.join(SCENARIOS, 'signal.json'))

    sweep = signal_sweep(spec, range(30, 95, 5), 200, workers=4)

    assert sweep.thresholds[95.0] is not None
    assert 0.45 <= sweep.thresholds[95.0] <= 0.75
    assert sweep.thresholds[99.0] is None or sweep.thresholds[99.0] >= sweep.thresholds[95.0]
