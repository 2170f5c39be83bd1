import json

import numpy as np
import pandas as pd
import pytest

from app import EXIT_ERROR, EXIT_MAX_ITER, EXIT_OK, main, parse_groups
from config import Config
from conftest import simulate_crossed
from errors import ConfigError

SCHEMA = json.dumps({'response': 'y', 'covariates': ['x1', 'x2'], 'ways': ['way1', 'way2'], 'family': 'gaussian'})


@pytest.fixture
def toy_csv(tmp_path):
    path = tmp_path / 'toy.csv'
    simulate_crossed('gaussian', (6, 5), reps=3, p=2, seed=21).write_csv(str(path))
    return str(path)


def run_fit(toy_csv, out, *extra):
    return main(['fit', '--input', toy_csv, '--schema', SCHEMA, '--groups', '2,2', '--out', str(out), *extra])


def test_fit_writes_a_converged_model(toy_csv, tmp_path):
    assert run_fit(toy_csv, tmp_path / 'a', '--format', 'csv') == EXIT_OK
    model = json.loads((tmp_path / 'a' / 'model.json').read_text())
    assert model['converged'] is True
    assert np.all(np.diff(model['objective_trace']) >= -1e-10)
    assert [c['name'] for c in model['inference']['coefficients']] == ['x1', 'x2']
    assert len(model['level_effects'][0]['effects']) == 6
    assert (tmp_path / 'a' / 'summary.txt').exists()
    levels = pd.read_csv(tmp_path / 'a' / 'level_effects.csv')
    assert len(levels) == 11
    assert set(levels['group']) <= {1, 2}


def test_fit_output_is_byte_identical_across_runs(toy_csv, tmp_path):
    assert run_fit(toy_csv, tmp_path / 'a') == EXIT_OK
    assert run_fit(toy_csv, tmp_path / 'b') == EXIT_OK
    assert (tmp_path / 'a' / 'model.json').read_bytes() == (tmp_path / 'b' / 'model.json').read_bytes()


def test_iteration_cap_exits_with_two(toy_csv, tmp_path):
    assert run_fit(toy_csv, tmp_path / 'a', '--max-iter', '1') == EXIT_MAX_ITER
    assert json.loads((tmp_path / 'a' / 'model.json').read_text())['converged'] is False


def test_rank_deficient_input_reports_column(tmp_path, capsys):
    rng = np.random.default_rng(0)
    x1 = rng.standard_normal(12)
    frame = pd.DataFrame({'y': rng.standard_normal(12), 'x1': x1, 'x2': 2.0 * x1,
                          'way1': np.tile(['a', 'b', 'c'], 4), 'way2': np.repeat(['u', 'v'], 6)})
    path = tmp_path / 'collinear.csv'
    frame.to_csv(path, index=False)
    code = main(['fit', '--input', str(path), '--schema', SCHEMA, '--groups', '1', '--out', str(tmp_path / 'out')])
    assert code == EXIT_ERROR
    record = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert record['error'] == 'RankDeficiencyError'
    assert record['column'] == 'x2'


def test_missing_input_is_an_error(tmp_path, capsys):
    code = main(['fit', '--input', str(tmp_path / 'nope.csv'), '--schema', SCHEMA])
    assert code == EXIT_ERROR
    assert 'ConfigError' in capsys.readouterr().err


def test_predict_flags_unknown_levels(toy_csv, tmp_path):
    assert run_fit(toy_csv, tmp_path / 'fit') == EXIT_OK
    rows = tmp_path / 'rows.csv'
    rows.write_text('x1,x2,way1,way2\n0.1,0.2,1,2\n0.0,0.0,zz,1\n', encoding='utf-8')
    model = str(tmp_path / 'fit' / 'model.json')
    out = tmp_path / 'pred'

    assert main(['predict', '--model', model, '--rows', str(rows), '--out', str(out)]) == EXIT_ERROR
    assert main(['predict', '--model', model, '--rows', str(rows), '--out', str(out),
                 '--allow-new-levels']) == EXIT_OK
    predictions = pd.read_csv(out / 'predictions.csv')
    assert predictions['unknown_level'].tolist() == [False, True]
    assert json.loads((out / 'predictions.json').read_text())['unknown_level_rows'] == 1


def test_smooth_with_one_group_is_certain(toy_csv, tmp_path):
    schema = json.dumps({'response': 'y', 'covariates': ['x1', 'x2'], 'ways': ['way1', 'way2'],
                         'family': 'gaussian'})
    assert main(['fit', '--input', toy_csv, '--schema', schema, '--groups', '1',
                 '--out', str(tmp_path / 'fit')]) == EXIT_OK
    assert main(['smooth', '--input', toy_csv, '--schema', schema, '--model', str(tmp_path / 'fit' / 'model.json'),
                 '--out', str(tmp_path / 'smooth')]) == EXIT_OK
    smoothed = json.loads((tmp_path / 'smooth' / 'smoothed.json').read_text())
    for way in smoothed['ways']:
        assert all(row == [1.0] for row in way['probabilities'])
    assert len(smoothed['beta_smoothed']) == 2


def test_simulate_without_replications_fails(tmp_path, capsys):
    code = main(['simulate', '--design', 'two_way_logistic', '--N', '400', '--replications', '0',
                 '--out', str(tmp_path)])
    assert code == EXIT_ERROR
    assert 'replications' in capsys.readouterr().err


def test_small_simulation_writes_outputs(tmp_path):
    code = main(['simulate', '--design', 'two_way_logistic', '--N', '400', '--replications', '2',
                 '--max-iter', '50', '--threads', '1', '--out', str(tmp_path)])
    assert code == EXIT_OK
    table = pd.read_csv(tmp_path / 'two_way_logistic_s1_table.csv')
    assert table['N'].tolist() == [400]
    assert 'CGE_MSE_beta1' in table.columns
    estimates = pd.read_csv(tmp_path / 'two_way_logistic_s1_N400_estimates.csv')
    assert estimates['replication'].tolist() == [1, 2]
    summary = json.loads((tmp_path / 'two_way_logistic_s1.json').read_text())
    assert summary['results'][0]['replications_ok'] == 2


def test_print_config_applies_precedence(tmp_path, capsys):
    config = tmp_path / 'run.json'
    config.write_text(json.dumps({'fit': {'lambda': 20.0, 'seed': 4}, 'level': 0.9}), encoding='utf-8')
    assert main(['fit', '--config', str(config), '--lambda', '50', '--print-config']) == EXIT_OK
    printed = json.loads(capsys.readouterr().out)
    assert printed['fit']['lambda'] == 50.0
    assert printed['fit']['seed'] == 4
    assert printed['level'] == 0.9
    assert printed['command'] == 'fit'


@pytest.mark.parametrize('value, expected', [('auto', 'auto'), (None, 'auto'), ('3', [3]), ('2,4', [2, 4])])
def test_parse_groups(value, expected):
    assert parse_groups(value) == expected


def test_parse_groups_rejects_words():
    with pytest.raises(ConfigError):
        parse_groups('two')


def last_record(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def test_usage_errors_are_json_records(capsys):
    assert main(['fit', '--family', 'negbin']) == EXIT_ERROR
    record = last_record(capsys)
    assert record['error'] == 'ConfigError'
    assert '--family' in record['message']
    assert main(['train']) == EXIT_ERROR
    assert last_record(capsys)['error'] == 'ConfigError'


def test_malformed_smoothed_file_is_a_load_error(toy_csv, tmp_path, capsys):
    assert run_fit(toy_csv, tmp_path / 'fit') == EXIT_OK
    rows = tmp_path / 'rows.csv'
    rows.write_text('x1,x2,way1,way2\n0.1,0.2,1,2\n', encoding='utf-8')
    broken = tmp_path / 'smoothed.json'
    broken.write_text('{"ways": [', encoding='utf-8')
    capsys.readouterr()
    code = main(['predict', '--model', str(tmp_path / 'fit' / 'model.json'), '--rows', str(rows),
                 '--smoothed', str(broken), '--out', str(tmp_path / 'pred')])
    assert code == EXIT_ERROR
    assert last_record(capsys)['error'] == 'LoadError'

    broken.write_text('{"beta_smoothed": [0.0, 0.0]}', encoding='utf-8')
    code = main(['predict', '--model', str(tmp_path / 'fit' / 'model.json'), '--rows', str(rows),
                 '--smoothed', str(broken), '--out', str(tmp_path / 'pred')])
    assert code == EXIT_ERROR
    assert last_record(capsys)['error'] == 'LoadError'


def test_model_file_missing_fields_is_a_load_error(tmp_path, capsys):
    model = tmp_path / 'model.json'
    model.write_text(json.dumps({'schema_version': Config.SCHEMA_VERSION, 'family': {'kind': 'gaussian'}}),
                     encoding='utf-8')
    rows = tmp_path / 'rows.csv'
    rows.write_text('x1,x2,way1,way2\n0.1,0.2,1,2\n', encoding='utf-8')
    code = main(['predict', '--model', str(model), '--rows', str(rows), '--out', str(tmp_path / 'pred')])
    assert code == EXIT_ERROR
    assert last_record(capsys)['error'] == 'LoadError'


def test_non_numeric_observed_category_is_a_load_error(tmp_path, capsys):
    data = tmp_path / 'ordered.csv'
    simulate_crossed('ordered', (6, 5), reps=4, p=2, seed=8).write_csv(str(data))
    schema = json.dumps({'response': 'y', 'covariates': ['x1', 'x2'], 'ways': ['way1', 'way2'],
                         'family': 'ordered-probit', 'n_categories': 3})
    assert main(['fit', '--input', str(data), '--schema', schema, '--groups', '2,2',
                 '--out', str(tmp_path / 'fit')]) in (EXIT_OK, EXIT_MAX_ITER)
    rows = tmp_path / 'rows.csv'
    rows.write_text('y,x1,x2,way1,way2\nthree,0.1,0.2,1,2\n', encoding='utf-8')
    capsys.readouterr()
    code = main(['predict', '--model', str(tmp_path / 'fit' / 'model.json'), '--rows', str(rows),
                 '--out', str(tmp_path / 'pred')])
    assert code == EXIT_ERROR
    record = last_record(capsys)
    assert record['error'] == 'LoadError'
    assert record['column'] == 'y'
