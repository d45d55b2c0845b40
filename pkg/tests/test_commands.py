import json
import logging
from pathlib import Path

import pytest
import yaml

from gmsolver.commands import get_command, get_command_names
from gmsolver.commands.base import EXIT_CONFIG, EXIT_OK, EXIT_PROPERTY, EXIT_SOLVER, setup_command_logger
from gmsolver.config import ConfigStore, load_run_config
from gmsolver.errors import ConfigError
from gmsolver.main import log_level, main

CONFIGS = Path(__file__).resolve().parents[1] / 'configs'


def _write_config(tmp_path, data, name='run.yaml'):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data))
    return str(path)


def _run(command, config, out):
    code = main([command, str(config), '--out', str(out)])
    report_path = Path(out) / 'report.json'
    report = json.loads(report_path.read_text()) if report_path.exists() else None
    return code, report


def _degree_config(tmp_path):
    data = yaml.safe_load((CONFIGS / 'degree.yaml').read_text())
    data['degree'].update({'n_starts': 16, 'boundary_samples': 64, 't_grid': [0.0, 1.0]})
    return _write_config(tmp_path, data, 'degree.yaml')


# === Registry and configuration ===

def test_registry_order():
    assert get_command_names() == ['eigen', 'certify', 'solve-sign', 'solve-nodal', 'degree']
    assert get_command('degree').get_info()['requires_nodal'] is True
    assert get_command('missing') is None


def test_config_store_lookup():
    store = ConfigStore({'model': {'rho': 0.5}})
    assert store.get('model.rho') == 0.5
    assert store.get('model.alpha1') == 0.5
    assert store.get('model.missing', 'fallback') == 'fallback'
    store.set('grid.nodes', [10])
    assert store.get_all()['grid']['nodes'] == [10]


def test_config_rejects_unknown_sections(tmp_path):
    with pytest.raises(ConfigError):
        ConfigStore.load(_write_config(tmp_path, {'solvers': {'tol': 1.0}}))


def test_run_config_overrides_output(tmp_path):
    config = load_run_config(str(CONFIGS / 'default.yaml'), out_dir=str(tmp_path))
    assert config.out_dir == str(tmp_path)
    assert config.nodes == (100,)
    assert not config.constants_forced


@pytest.mark.parametrize("level, expected", [
    ('quiet', logging.WARNING),
    ('info', logging.INFO),
    ('DEBUG', logging.DEBUG),
    ('bogus', logging.INFO),
])
def test_log_level_from_environment(monkeypatch, level, expected):
    monkeypatch.setenv('GM_LOG', level)
    assert log_level() == expected


def test_command_logger_splits_levels(tmp_path):
    setup_command_logger('certify', str(tmp_path / 'first'))
    command_logger = setup_command_logger('certify', str(tmp_path))
    assert len(command_logger.handlers) == 2
    command_logger.debug('inner iteration')
    command_logger.info('certificate passed')
    for handler in command_logger.handlers:
        handler.flush()

    own = (tmp_path / 'certify.log').read_text()
    shared = (tmp_path / 'main.log').read_text()
    assert 'inner iteration' in own and 'certificate passed' in own
    assert 'inner iteration' not in shared and 'certificate passed' in shared
    for handler in command_logger.handlers:
        handler.close()
    command_logger.handlers.clear()


# === Exit codes ===

def test_missing_config_file(tmp_path):
    assert main(['eigen', str(tmp_path / 'absent.yaml'), '--out', str(tmp_path / 'out')]) == EXIT_CONFIG


def test_malformed_yaml(tmp_path):
    path = tmp_path / 'broken.yaml'
    path.write_text("grid: [unclosed\n")
    assert main(['eigen', str(path), '--out', str(tmp_path / 'out')]) == EXIT_CONFIG


@pytest.mark.parametrize("model", [
    {'alpha1': 1.5},
    {'rho': -1.0},
    {'alpha1': 0.6, 'beta1': 0.2},
])
def test_invalid_model(tmp_path, model):
    config = _write_config(tmp_path, {'model': model})
    code, report = _run('certify', config, tmp_path / 'out')
    assert code == EXIT_CONFIG
    assert report is None


@pytest.mark.parametrize("continuation", [
    {'seed_perturbation': 'wide'},
    {'seed_perturbation': -0.1},
    {'epsilons': ['half']},
])
def test_invalid_continuation(tmp_path, continuation):
    config = _write_config(tmp_path, {'continuation': continuation})
    code, report = _run('solve-nodal', config, tmp_path / 'out')
    assert code == EXIT_CONFIG
    assert report is None


def test_nodal_commands_require_beta1_zero(tmp_path):
    config = _write_config(tmp_path, {'model': {'beta1': 0.1}})
    assert main(['solve-nodal', config, '--out', str(tmp_path / 'out')]) == EXIT_CONFIG
    assert main(['degree', config, '--out', str(tmp_path / 'out')]) == EXIT_CONFIG


# === Commands ===

def test_eigen(tmp_path):
    code, report = _run('eigen', CONFIGS / 'default.yaml', tmp_path)
    assert code == EXIT_OK
    assert report['command'] == 'eigen'
    assert report['exit_code'] == 0
    assert abs(report['lambda1'] - 1.0) <= 1e-10
    assert report['phi1_relative_deviation'] == pytest.approx(0.0, abs=1e-10)
    assert (tmp_path / 'phi1.csv').exists()
    assert (tmp_path / 'main.log').exists()


def test_certify(tmp_path):
    code, report = _run('certify', CONFIGS / 'default.yaml', tmp_path)
    assert code == EXIT_OK
    certificate = report['calibration']['certificate']
    assert certificate['pass'] is True
    assert set(certificate['inequalities']) == {
        'supersolution_u', 'supersolution_v', 'subsolution_u_source',
        'subsolution_v_chain', 'subsolution_u', 'subsolution_v',
    }
    for name in ('w', 'y', 'z', 'u_lower', 'u_upper'):
        assert (tmp_path / f'{name}.csv').exists()


def test_certify_broken_constants(tmp_path):
    code, report = _run('certify', CONFIGS / 'certify_broken.yaml', tmp_path)
    assert code == EXIT_PROPERTY
    assert report['constants_forced'] is True
    inequalities = report['calibration']['certificate']['inequalities']
    failed = sorted(name for name, entry in inequalities.items() if not entry['pass'])
    assert failed == ['subsolution_u_source']


def test_solve_sign(tmp_path):
    code, report = _run('solve-sign', CONFIGS / 'default.yaml', tmp_path)
    assert code == EXIT_OK
    positive = report['positive']
    assert positive['converged'] is True
    assert positive['u_min'] == pytest.approx(4.0, abs=1e-8)
    assert positive['v_max'] == pytest.approx(2.0, abs=1e-8)
    assert report['negative']['u_max'] == pytest.approx(-4.0, abs=1e-8)
    assert report['negative_residual'] <= 1e-12
    assert report['separation_positive']['margin_u'] == pytest.approx(3.75, abs=1e-8)
    assert report['separation_negative']['pass'] is True


def test_solve_sign_iteration_cap(tmp_path):
    config = _write_config(tmp_path, {'solver': {'max_iter': 1, 'newton_polish': False}})
    code, report = _run('solve-sign', config, tmp_path / 'out')
    assert code == EXIT_SOLVER
    assert report['positive']['converged'] is False


def test_solve_nodal(tmp_path):
    code, report = _run('solve-nodal', CONFIGS / 'nodal.yaml', tmp_path)
    assert code == EXIT_OK
    assert report['continuation']['complete'] is True
    assert [step['epsilon'] for step in report['continuation']['steps']] == [0.5, 0.25, 0.125]
    assert report['manufactured_recovery'] <= 1e-6
    assert report['synchrony']['pass'] is True
    assert report['synchrony']['nodal'] is True
    assert report['locator']['n_seeds'] == 16
    assert len(report['singular_mass']) == 3
    assert report['ball_constraint_binds'] is False
    assert (tmp_path / 'u_star.csv').exists()


def test_degree(tmp_path):
    code, report = _run('degree', _degree_config(tmp_path), tmp_path / 'out')

    assert code == EXIT_OK
    assert report['no_solution_t0'] is True
    assert report['witness']['node_count'] == 4
    assert report['witness_fine_grid']['node_count'] == 20
    assert report['H_t0']['admissible'] is True
    assert report['H_t0']['value'] == 0
    assert report['N_t0']['admissible'] is False
    assert report['N_t0_at_phi1'] <= 1e-12
    assert report['sweep_N']['admissible'] is False


@pytest.mark.parametrize("command, config, field", [
    ('eigen', 'default.yaml', 'phi1.csv'),
    ('certify', 'default.yaml', 'z.csv'),
    ('solve-sign', 'default.yaml', 'u_plus.csv'),
    ('solve-nodal', 'nodal.yaml', 'u_star.csv'),
    ('degree', None, None),
])
def test_reports_are_reproducible(tmp_path, command, config, field):
    path = _degree_config(tmp_path) if config is None else str(CONFIGS / config)
    first, second = tmp_path / 'a', tmp_path / 'b'
    assert main([command, path, '--out', str(first)]) == EXIT_OK
    assert main([command, path, '--out', str(second)]) == EXIT_OK
    assert (first / 'report.json').read_bytes() == (second / 'report.json').read_bytes()
    if field is not None:
        assert (first / field).read_bytes() == (second / field).read_bytes()
