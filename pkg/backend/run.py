#!/usr/bin/env python
"""
Pipeline Scheduler
Command-line runner: validate, plan, verify, compare, dump-model
"""

import argparse
import json
import os
import sys
from dataclasses import dataclass, field

# Add current directory to Python path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2


def check_dependencies():
    """Check if required packages are installed"""
    required = ['numpy', 'scipy', 'pandas', 'matplotlib', 'marshmallow', 'dotenv']

    missing = []
    for package in required:
        try:
            __import__(package)
        except ImportError:
            missing.append(package)

    if missing:
        print("Missing required packages:", file=sys.stderr)
        for pkg in missing:
            print(f"   - {pkg}", file=sys.stderr)
        print("Install them with: pip install -r requirements.txt", file=sys.stderr)
        return False
    return True


@dataclass
class CommandOutcome:
    exit_code: int
    summary: str
    payload: dict = field(default_factory=dict)


def _write_text(path, text):
    folder = os.path.dirname(path)
    if folder:
        os.makedirs(folder, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as fh:
        fh.write(text)


def _load_scenario(path):
    """Scenario or a usage outcome; missing files and malformed JSON are I/O errors"""
    from models import ScenarioParseError, ScenarioSchemaError
    from services.scenario_loader import load_scenario

    try:
        return load_scenario(path), None
    except FileNotFoundError:
        return None, CommandOutcome(EXIT_USAGE, f"Scenario file not found: {path}", {'error': 'not_found'})
    except ScenarioParseError as e:
        return None, CommandOutcome(EXIT_USAGE, f"Cannot parse {path}: {e}",
                                    {'error': 'parse', 'line': e.line, 'column': e.column})
    except ScenarioSchemaError as e:
        return None, CommandOutcome(EXIT_USAGE, f"{path}: {e}", {'error': 'schema', 'messages': e.messages})


def _solver_config(args):
    from services.solver_backend import SolverConfig
    return SolverConfig.from_env(backend=getattr(args, 'backend', None),
                                 solver_path=getattr(args, 'solver', None),
                                 time_limit=getattr(args, 'time_limit', None),
                                 mip_gap=getattr(args, 'gap', None),
                                 threads=getattr(args, 'threads', None))


def _build_options(args):
    from services.milp_builder import BuildOptions
    tie_break = getattr(args, 'tie_break', False)
    if getattr(args, 'minimal', False):
        return BuildOptions.minimal(tie_break=tie_break)
    return BuildOptions(tie_break=tie_break)


# =============================================================================
# COMMANDS
# =============================================================================

def cmd_validate(args) -> CommandOutcome:
    from services.scenario_validator import ScenarioValidator

    s, failure = _load_scenario(args.scenario)
    if failure:
        return failure
    result = ScenarioValidator().validate(s)
    payload = {'valid': result.valid, 'errors': result.errors, 'warnings': result.warnings,
               'summary': result.summary}
    if not result.valid:
        return CommandOutcome(EXIT_FAILED, result.detailed_report, payload)
    return CommandOutcome(EXIT_OK, result.detailed_report, payload)


def cmd_plan(args) -> CommandOutcome:
    from models import PlanningError, SolverNotFoundError, SolverCrashError, ScheduleExtractionError
    from services.replanner import plan_event_aware
    from services.renderer import render_text, render_svg
    from services.schedule_builder import dump_schedule, schedule_to_dict, makespan

    s, failure = _load_scenario(args.scenario)
    if failure:
        return failure
    try:
        schedule = plan_event_aware(s, _solver_config(args), _build_options(args))
    except (SolverNotFoundError, ValueError) as e:
        return CommandOutcome(EXIT_USAGE, str(e), {'error': 'solver'})
    except PlanningError as e:
        stats = e.stats or {}
        lines = [str(e)]
        if stats:
            lines.append(f"Model: {stats.get('variables')} variables, {stats.get('binaries')} binaries, "
                         f"{stats.get('constraints')} constraints")
            lines += [f"  {tag}: {count}" for tag, count in stats.get('by_tag', {}).items()]
        return CommandOutcome(EXIT_FAILED, '\n'.join(lines),
                              {'error': 'planning', 'status': e.status.value if e.status else None,
                               'model_stats': stats})
    except (SolverCrashError, ScheduleExtractionError) as e:
        return CommandOutcome(EXIT_FAILED, str(e), {'error': 'solver'})

    if args.out:
        dump_schedule(schedule, args.out)
    if args.svg:
        _write_text(args.svg, render_svg(schedule, s))
    summary = render_text(schedule) if args.text else (
        f"Planned {len(schedule.runs)} runs, makespan {(makespan(schedule) if schedule.runs else 0.0):.2f} h, "
        f"cost {schedule.cost.total:.2f}")
    return CommandOutcome(EXIT_OK, summary, schedule_to_dict(schedule))


def cmd_verify(args) -> CommandOutcome:
    from models import ScheduleFormatError
    from services.schedule_builder import load_schedule
    from services.verifier import simulate, report_to_dict

    s, failure = _load_scenario(args.scenario)
    if failure:
        return failure
    try:
        schedule = load_schedule(args.schedule)
    except FileNotFoundError:
        return CommandOutcome(EXIT_USAGE, f"Schedule file not found: {args.schedule}", {'error': 'not_found'})
    except ScheduleFormatError as e:
        return CommandOutcome(EXIT_USAGE, str(e), {'error': 'schema', 'messages': e.messages})

    report = simulate(schedule, s)
    payload = report_to_dict(report)
    if report.passed:
        return CommandOutcome(EXIT_OK, f"Schedule verified: {len(report.checks)} checks passed", payload)
    lines = [f"Schedule failed verification on {', '.join(report.failed_tags)}"]
    lines += [f"  [{c.tag}] {c.location}: {c.detail}" for c in report.failures]
    return CommandOutcome(EXIT_FAILED, '\n'.join(lines), payload)


def cmd_compare(args) -> CommandOutcome:
    from models import PlanningError, ScenarioParseError, ScenarioSchemaError, SolverNotFoundError
    from services.renderer import render_svg
    from services.replanner import compare_regimes, render_comparison, comparison_to_dict
    from services.scenario_loader import load_realizations
    from services.schedule_builder import dump_schedule

    s, failure = _load_scenario(args.scenario)
    if failure:
        return failure
    try:
        realizations = load_realizations(args.realizations)
    except FileNotFoundError:
        return CommandOutcome(EXIT_USAGE, f"Realization file not found: {args.realizations}", {'error': 'not_found'})
    except (ScenarioParseError, ScenarioSchemaError) as e:
        return CommandOutcome(EXIT_USAGE, f"{args.realizations}: {e}", {'error': 'schema'})

    try:
        aware, outcome, report = compare_regimes(s, realizations, args.baseline,
                                                 _solver_config(args), _build_options(args))
    except SolverNotFoundError as e:
        return CommandOutcome(EXIT_USAGE, str(e), {'error': 'solver'})
    except (PlanningError, ScenarioSchemaError) as e:
        return CommandOutcome(EXIT_FAILED, str(e), {'error': 'planning'})

    if args.plan_out:
        dump_schedule(aware, os.path.join(args.plan_out, 'event_aware.json'))
        dump_schedule(outcome.schedule, os.path.join(args.plan_out, f"reactive_{args.baseline}.json"))
    if args.svg_dir:
        _write_text(os.path.join(args.svg_dir, 'event_aware.svg'), render_svg(aware, s))
        _write_text(os.path.join(args.svg_dir, f"reactive_{args.baseline}.svg"), render_svg(outcome.schedule, s))

    summary = render_comparison(report)
    if not outcome.feasible:
        summary += f"{outcome.message}\n"
    payload = comparison_to_dict(report)
    payload['baseline_message'] = outcome.message
    return CommandOutcome(EXIT_OK, summary, payload)


def cmd_dump_model(args) -> CommandOutcome:
    from services.milp_builder import build_model, model_stats, render_algebraic
    from services.mps_writer import write_mps
    from services.scenario_validator import validate

    s, failure = _load_scenario(args.scenario)
    if failure:
        return failure
    violations = validate(s)
    if violations:
        return CommandOutcome(EXIT_FAILED, '\n'.join(['Scenario is invalid:'] + [f"  {v}" for v in violations]),
                              {'error': 'invalid', 'violations': violations})

    m = build_model(s, _build_options(args))
    stats = model_stats(m)
    if args.mps:
        document = write_mps(m)
        _write_text(args.mps, document.text)
        stats['mps_free_format'] = document.free_format
    if args.algebraic:
        text = render_algebraic(m)
        if args.algebraic == '-':
            return CommandOutcome(EXIT_OK, text, stats)
        _write_text(args.algebraic, text)
    summary = (f"Model '{m.scenario}': {stats['variables']} variables ({stats['binaries']} binary), "
               f"{stats['constraints']} constraints, {stats['nonzeros']} nonzeros")
    return CommandOutcome(EXIT_OK, summary, stats)


COMMANDS = {
    'validate': cmd_validate,
    'plan': cmd_plan,
    'verify': cmd_verify,
    'compare': cmd_compare,
    'dump-model': cmd_dump_model,
}


# =============================================================================
# ARGUMENTS
# =============================================================================

def _solver_flags(parser):
    parser.add_argument('--backend', choices=('highs', 'cbc'), help='MILP backend (default from PIPESCHED_BACKEND)')
    parser.add_argument('--solver', help='solver executable for the cbc backend')
    parser.add_argument('--time-limit', type=float, help='seconds')
    parser.add_argument('--gap', type=float, help='relative MIP gap')
    parser.add_argument('--threads', type=int)
    parser.add_argument('--tie-break', action='store_true', help='prefer the shortest makespan among equal costs')


def build_parser():
    parser = argparse.ArgumentParser(prog='run.py', description='Event-aware multi-source pipeline scheduler')
    parser.add_argument('--log-level', default=None, help='DEBUG, INFO, WARNING or ERROR')
    parser.add_argument('--json', action='store_true', help='print a machine-readable result')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('validate', help='check a scenario file')
    p.add_argument('scenario')

    p = sub.add_parser('plan', help='plan with every event known up front')
    p.add_argument('scenario')
    _solver_flags(p)
    p.add_argument('--out', help='schedule JSON to write')
    p.add_argument('--svg', help='SVG Gantt chart to write')
    p.add_argument('--text', action='store_true', help='print the text Gantt chart')

    p = sub.add_parser('verify', help='replay a schedule against a scenario')
    p.add_argument('scenario')
    p.add_argument('schedule')

    p = sub.add_parser('compare', help='event-aware plan against the reactive baseline')
    p.add_argument('scenario')
    p.add_argument('realizations')
    p.add_argument('--baseline', choices=('resume', 'resolve'), default='resume')
    _solver_flags(p)
    p.add_argument('--plan-out', help='folder for both schedules')
    p.add_argument('--svg-dir', help='folder for both SVG charts')

    p = sub.add_parser('dump-model', help='write the MILP model')
    p.add_argument('scenario')
    p.add_argument('--mps', help='MPS file to write')
    p.add_argument('--algebraic', nargs='?', const='-', help='algebraic listing (file, or stdout when no file)')
    p.add_argument('--minimal', action='store_true',
                   help='core rows only: no supply bounds and no cuts')
    return parser


def run(argv=None) -> CommandOutcome:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return CommandOutcome(EXIT_USAGE if e.code else EXIT_OK, '', {'error': 'usage'})

    from extensions import logger, set_log_level
    if args.log_level:
        set_log_level(args.log_level)
    logger.debug(f"Running command {args.command}")
    try:
        outcome = COMMANDS[args.command](args)
    except OSError as e:
        outcome = CommandOutcome(EXIT_USAGE, f"I/O error: {e}", {'error': 'io'})
    outcome.payload.setdefault('exit_code', outcome.exit_code)
    if args.json:
        print(json.dumps(outcome.payload, indent=2))
    elif outcome.summary:
        stream = sys.stdout if outcome.exit_code == EXIT_OK else sys.stderr
        print(outcome.summary.rstrip('\n'), file=stream)
    return outcome


def main(argv=None):
    """Main entry point"""
    if not check_dependencies():
        return EXIT_USAGE
    return run(argv).exit_code


if __name__ == '__main__':
    sys.exit(main())
