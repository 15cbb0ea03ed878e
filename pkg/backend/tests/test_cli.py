import json

import pytest

import run as cli
from services.schedule_builder import dump_schedule


@pytest.fixture
def scenario_file(tmp_path, artifact):
    def write(**changes):
        with open(artifact('case_study.json'), encoding='utf-8') as fh:
            data = json.load(fh)
        data.update(changes)
        path = tmp_path / 'scenario.json'
        path.write_text(json.dumps(data), encoding='utf-8')
        return str(path)
    return write


@pytest.fixture
def schedule_file(tmp_path, nominal_schedule):
    path = str(tmp_path / 'schedule.json')
    dump_schedule(nominal_schedule, path)
    return path


def test_validate_case_study(artifact):
    outcome = cli.run(['validate', artifact('case_study.json')])
    assert outcome.exit_code == cli.EXIT_OK
    assert outcome.payload['valid'] is True


def test_validate_partly_empty_pipeline(scenario_file):
    outcome = cli.run(['validate', scenario_file(pipeline_volume=90)])
    assert outcome.exit_code == cli.EXIT_FAILED
    assert outcome.payload['errors']


def test_validate_missing_file(tmp_path):
    outcome = cli.run(['validate', str(tmp_path / 'absent.json')])
    assert outcome.exit_code == cli.EXIT_USAGE
    assert outcome.payload['error'] == 'not_found'


def test_validate_malformed_json(tmp_path):
    path = tmp_path / 'broken.json'
    path.write_text('{"name": "x",\n  "pipeline_volume": }', encoding='utf-8')
    outcome = cli.run(['validate', str(path)])
    assert outcome.exit_code == cli.EXIT_USAGE
    assert outcome.payload['error'] == 'parse'
    assert outcome.payload['line'] == 2


def test_unknown_command():
    assert cli.run(['frobnicate']).exit_code == cli.EXIT_USAGE


def test_verify_nominal_plan(artifact, schedule_file):
    outcome = cli.run(['verify', artifact('case_study.json'), schedule_file])
    assert outcome.exit_code == cli.EXIT_OK
    assert outcome.payload['passed'] is True


def test_verify_tampered_plan(artifact, schedule_file):
    with open(schedule_file, encoding='utf-8') as fh:
        data = json.load(fh)
    data['runs'][0]['deliveries'][0]['volume'] = 9.0
    with open(schedule_file, 'w', encoding='utf-8') as fh:
        json.dump(data, fh)

    outcome = cli.run(['verify', artifact('case_study.json'), schedule_file])
    assert outcome.exit_code == cli.EXIT_FAILED
    assert 'eq19' in outcome.payload['failed_tags']
    assert '[eq19] run 1' in outcome.summary


def test_verify_under_maintenance(artifact, schedule_file):
    outcome = cli.run(['verify', artifact('case_study_maintenance.json'), schedule_file])
    assert outcome.exit_code == cli.EXIT_FAILED
    assert 'eq11' in outcome.payload['failed_tags']


def test_verify_malformed_schedule(artifact, tmp_path):
    path = tmp_path / 'schedule.json'
    path.write_text(json.dumps({'runs': 'nope'}), encoding='utf-8')
    outcome = cli.run(['verify', artifact('case_study.json'), str(path)])
    assert outcome.exit_code == cli.EXIT_USAGE
    assert outcome.payload['error'] == 'schema'


def test_dump_model_listing(artifact):
    outcome = cli.run(['dump-model', artifact('case_study.json'), '--algebraic'])
    assert outcome.exit_code == cli.EXIT_OK
    assert outcome.summary.startswith('\\ model case_study')
    assert outcome.payload['binaries'] == 489


def test_dump_model_files(artifact, tmp_path):
    mps = tmp_path / 'model.mps'
    listing = tmp_path / 'model.lp.txt'
    outcome = cli.run(['dump-model', artifact('case_study.json'), '--mps', str(mps), '--algebraic', str(listing)])
    assert outcome.exit_code == cli.EXIT_OK
    assert mps.read_text(encoding='utf-8').startswith('NAME')
    assert '[eq1]' in listing.read_text(encoding='utf-8')
    assert outcome.payload['by_tag']['eqSU'] == 6
    assert outcome.payload['by_tag']['eqVI'] > 0


def test_dump_model_minimal(artifact):
    outcome = cli.run(['dump-model', artifact('case_study.json'), '--minimal'])
    assert outcome.exit_code == cli.EXIT_OK
    assert 'eqSU' not in outcome.payload['by_tag']
    assert 'eqVI' not in outcome.payload['by_tag']


def test_plan_rejects_minimal(artifact):
    assert cli.run(['plan', artifact('case_study.json'), '--minimal']).exit_code == cli.EXIT_USAGE


def test_dump_model_of_invalid_scenario(scenario_file):
    outcome = cli.run(['dump-model', scenario_file(pipeline_volume=90)])
    assert outcome.exit_code == cli.EXIT_FAILED
    assert outcome.payload['error'] == 'invalid'


def test_json_output(artifact, capsys):
    cli.run(['--json', 'validate', artifact('case_study.json')])
    printed = json.loads(capsys.readouterr().out)
    assert printed['exit_code'] == 0
    assert printed['valid'] is True


def test_summary_goes_to_stderr_on_failure(scenario_file, capsys):
    cli.run(['validate', scenario_file(pipeline_volume=90)])
    captured = capsys.readouterr()
    assert captured.out == ''
    assert captured.err


@pytest.mark.solver
def test_plan_small_line(small_scenario_file, tmp_path):
    scenario = small_scenario_file(1)
    out = tmp_path / 'plan.json'
    svg = tmp_path / 'plan.svg'
    outcome = cli.run(['plan', scenario, '--tie-break', '--time-limit', '120', '--out', str(out), '--svg', str(svg)])
    assert outcome.exit_code == cli.EXIT_OK
    assert outcome.payload['makespan_rounded'] >= 0
    assert svg.read_text(encoding='utf-8').lstrip().startswith('<?xml')

    verified = cli.run(['verify', scenario, str(out)])
    assert verified.exit_code == cli.EXIT_OK


@pytest.mark.solver
def test_compare_resume(small_scenario_file, tmp_path):
    realizations = tmp_path / 'outage.json'
    realizations.write_text(json.dumps({'realizations': [{
        'event': 'outage', 'time': 20,
        'overrides': [{'terminal': 'S2', 'parameter': 'rate_max', 'value': 0, 'until': 40},
                      {'terminal': 'S2', 'parameter': 'rate_min', 'value': 0, 'until': 40}]}]}), encoding='utf-8')
    outcome = cli.run(['compare', small_scenario_file(2, events=2), str(realizations), '--tie-break',
                       '--time-limit', '120', '--plan-out', str(tmp_path)])
    assert outcome.exit_code == cli.EXIT_OK
    assert 'event_aware' in outcome.payload
    assert (tmp_path / 'event_aware.json').exists()
    assert (tmp_path / 'reactive_resume.json').exists()
