import os
import sys
from dotenv import load_dotenv

# Load environment variables FIRST - before anything else
load_dotenv()

import argparse
import json
import logging

import pandas as pd

from config import Config
from dataset import Schema, load_csv
from errors import CGEError, ConfigError, LoadError
from estimator import fit, fit_ordered_null, recover_intercept
from families import FamilySpec
from inference import infer, predict, predict_baseline, summary
from models import FitConfig, FittedModel
from run_config import RunConfig
from simharness import SimDesign, ordered_metrics, ordered_split_study, run_replications
from smoother import SmoothedEffects, smooth
from utils import ensure_output_dir, read_json, write_json, write_table, write_text

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_MAX_ITER = 2


def setup_logging(level=None):
    logging.basicConfig(
        level=getattr(logging, (level or Config.LOG_LEVEL), logging.INFO),
        stream=sys.stderr,
        format='%(levelname)s %(name)s: %(message)s',
    )


def parse_groups(value):
    """'auto', one integer for every way, or a comma list"""
    if value is None or value == 'auto':
        return 'auto'
    if isinstance(value, (list, tuple)):
        items = list(value)
    else:
        items = [v for v in str(value).split(',') if v.strip()]
    try:
        return [int(v) for v in items]
    except (TypeError, ValueError) as e:
        raise ConfigError(f"--groups must be 'auto' or a comma list of integers, got {value!r}") from e


def parse_sizes(value):
    if isinstance(value, (list, tuple)):
        return [int(v) for v in value]
    try:
        return [int(v) for v in str(value).split(',') if v.strip()]
    except ValueError as e:
        raise ConfigError(f"--N must be a comma list of integers, got {value!r}") from e


def fit_config(run):
    settings = run.fit
    return FitConfig(
        group_counts=parse_groups(settings['groups']),
        lambda_=float(settings['lambda']),
        max_iter=int(settings['max_iter']),
        tol_obj=float(settings['tol']),
        max_halvings=int(settings['max_halvings']),
        seed=int(settings['seed']),
        init=settings['init'],
        n_starts=int(settings['starts']),
        newton_steps=int(settings['newton_steps']),
    ).validate()


class CLIArgumentParser(argparse.ArgumentParser):
    """Usage errors become ConfigError so they reach the JSON error record"""

    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def build_parser():
    parser = CLIArgumentParser(prog='cge', description='Crossed grouped-effects regression')
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='JSON run configuration file')
    common.add_argument('--print-config', action='store_true', help='Print the merged configuration and exit')
    common.add_argument('--input', help='CSV with a header row')
    common.add_argument('--schema', help='Schema as inline JSON or a path to a JSON file')
    common.add_argument('--family', choices=sorted(Config.FAMILY_ALIASES))
    common.add_argument('--groups', dest='fit.groups', help="'auto' or comma list of group counts per way")
    common.add_argument('--lambda', dest='fit.lambda', type=float)
    common.add_argument('--max-iter', dest='fit.max_iter', type=int)
    common.add_argument('--tol', dest='fit.tol', type=float)
    common.add_argument('--seed', dest='fit.seed', type=int)
    common.add_argument('--starts', dest='fit.starts', type=int)
    common.add_argument('--init', dest='fit.init', choices=['quantile', 'random'])
    common.add_argument('--newton-steps', dest='fit.newton_steps', type=int)
    common.add_argument('--level', type=float, help='Confidence level of the Wald intervals')
    common.add_argument('--out', help='Output directory')
    common.add_argument('--format', choices=['json', 'csv'])
    common.add_argument('--threads', type=int, help='Worker threads for simulation replications')
    common.add_argument('--allow-new-levels', action='store_true', default=None)
    common.add_argument('--model', help='Model JSON written by fit')
    common.add_argument('--rows', help='CSV of rows to predict')
    common.add_argument('--smoothed', help='smoothed.json to predict with smoothed effects')

    commands = parser.add_subparsers(dest='command', required=True)
    commands.add_parser('fit', parents=[common], help='Fit a model from a CSV')
    commands.add_parser('smooth', parents=[common], help='Smoothed effects and re-estimated beta')
    commands.add_parser('predict', parents=[common], help='Predict rows with a fitted model')
    simulate = commands.add_parser('simulate', parents=[common], help='Replicated simulation study')
    simulate.add_argument('--design', dest='simulate.design',
                          choices=['two_way_logistic', 'three_way_poisson', 'ordered_two_way', 'ordered_split'])
    simulate.add_argument('--N', dest='simulate.N', help='Comma list of sample sizes')
    simulate.add_argument('--scenario', dest='simulate.scenario', choices=['s1', 's2'])
    simulate.add_argument('--replications', dest='simulate.replications', type=int)
    return parser


def load_run_config(args):
    overrides = {key: value for key, value in vars(args).items() if key not in ('config', 'print_config')}
    run = RunConfig(args.config).apply_overrides(overrides)
    if run.simulate['N'] is not None:
        run.config['simulate']['N'] = parse_sizes(run.simulate['N'])
    return run


def _load_model(path):
    try:
        data = read_json(path)
    except json.JSONDecodeError as e:
        raise LoadError(f"Model file {path} is not valid JSON: {e}") from e
    try:
        return FittedModel.from_dict(data), data
    except (KeyError, TypeError, ValueError) as e:
        raise LoadError(f"Model file {path} is missing or has a malformed field: {e}") from e


def _load_smoothed(path):
    try:
        return SmoothedEffects.from_dict(read_json(path))
    except json.JSONDecodeError as e:
        raise LoadError(f"Smoothed effects file {path} is not valid JSON: {e}") from e
    except (KeyError, TypeError, ValueError) as e:
        raise LoadError(f"Smoothed effects file {path} is missing or has a malformed field: {e}") from e


def cmd_fit(run):
    schema = Schema.parse(run['schema'])
    ds = load_csv(run['input'], schema, family=run['family'])
    cfg = fit_config(run)

    baseline = None
    if ds.family.kind == 'ordered_probit':
        cuts, beta0 = fit_ordered_null(ds, ds.family.n_categories)
        ds = ds.with_family(FamilySpec.ordered(cuts))
        baseline = {'thresholds': [float(c) for c in cuts], 'beta': [float(b) for b in beta0]}

    model = fit(ds, cfg).sorted_labels()
    inference = infer(model, ds, float(run['level']))

    out = ensure_output_dir(run['out'])
    record = model.to_dict()
    record['inference'] = inference.to_dict(list(model.covariate_names))
    record['intercept'] = recover_intercept(model)
    record['level_effects'] = [
        {'way': name, 'levels': list(labels), 'effects': [float(a) for a in model.level_effects(k)]}
        for k, (name, labels) in enumerate(zip(model.way_names, model.level_labels))
    ]
    record['fit_config'] = cfg.to_dict()
    if baseline is not None:
        record['baseline'] = baseline
    write_json(record, os.path.join(out, 'model.json'))
    write_text(summary(model, ds, inference), os.path.join(out, 'summary.txt'))
    if run['format'] == 'csv':
        coefficients = pd.DataFrame(record['inference']['coefficients'])
        write_table(coefficients, os.path.join(out, 'coefficients.csv'))
        write_table(_level_table(model), os.path.join(out, 'level_effects.csv'))
    return EXIT_OK if model.converged else EXIT_MAX_ITER


def _level_table(model, smoothed=None):
    frames = []
    for k, name in enumerate(model.way_names):
        frame = pd.DataFrame({
            'way': name,
            'level': list(model.level_labels[k]),
            'group': model.gamma[k] + 1,
            'effect': model.level_effects(k),
        })
        if smoothed is not None:
            frame['smoothed_effect'] = smoothed.effects[k]
            for g in range(smoothed.probabilities[k].shape[1]):
                frame[f'prob_group{g + 1}'] = smoothed.probabilities[k][:, g]
        frames.append(frame)
    return pd.concat(frames, ignore_index=True)


def cmd_smooth(run):
    model, _ = _load_model(run['model'])
    schema = Schema.parse(run['schema'])
    ds = load_csv(run['input'], schema, family=model.family).aligned(model.level_labels)
    smoothed = smooth(model, ds)
    out = ensure_output_dir(run['out'])
    write_json(smoothed.to_dict(model), os.path.join(out, 'smoothed.json'))
    if run['format'] == 'csv':
        write_table(_level_table(model, smoothed), os.path.join(out, 'smoothed_effects.csv'))
    return EXIT_OK


def cmd_predict(run):
    model, data = _load_model(run['model'])
    try:
        rows = pd.read_csv(run['rows'], dtype=str, keep_default_na=False, encoding='utf-8')
    except (pd.errors.EmptyDataError, pd.errors.ParserError) as e:
        raise LoadError(f"Failed to read rows {run['rows']}: {e}") from e
    smoothed = _load_smoothed(run['smoothed']) if run['smoothed'] else None
    result = predict(model, rows, smoothed=smoothed, allow_new_levels=bool(run['allow_new_levels']))

    baseline = data.get('baseline')
    if baseline is not None:
        family = FamilySpec.ordered(baseline['thresholds'])
        base = predict_baseline(family, baseline['beta'], rows, model.covariate_names)
        result['baseline_prediction'] = base['prediction']

    out = ensure_output_dir(run['out'])
    report = {'rows': len(result), 'unknown_level_rows': int(result['unknown_level'].sum())}
    if model.response_name in rows.columns and model.family.kind == 'ordered_probit':
        try:
            observed = rows[model.response_name].astype(float).to_numpy()
        except ValueError as e:
            raise LoadError(f"Observed responses in {run['rows']} must be numeric: {e}",
                            column=model.response_name) from e
        K = model.family.n_categories
        mae, ac0, ac1 = ordered_metrics(result['prediction'].to_numpy(), observed, K)
        report['metrics'] = {'CGE': {'MAE': mae, 'AC0': ac0, 'AC1': ac1}}
        if baseline is not None:
            mae, ac0, ac1 = ordered_metrics(result['baseline_prediction'].to_numpy(), observed, K)
            report['metrics']['baseline'] = {'MAE': mae, 'AC0': ac0, 'AC1': ac1}
    write_table(result, os.path.join(out, 'predictions.csv'))
    write_json(report, os.path.join(out, 'predictions.json'))
    return EXIT_OK


def cmd_simulate(run):
    settings = run.simulate
    cfg = fit_config(run)
    out = ensure_output_dir(run['out'])
    sizes = parse_sizes(settings['N'])
    if int(settings['replications']) < 1:
        raise ConfigError(f"--replications must be positive, got {settings['replications']}")
    name = f"{settings['design']}_{settings['scenario']}"

    if settings['design'] == 'ordered_split':
        studies = {}
        for N in sizes:
            per_split, means = ordered_split_study(N, settings['scenario'], cfg.seed,
                                                   splits=int(settings['replications']), cfg=cfg)
            write_table(per_split, os.path.join(out, f'{name}_N{N}_splits.csv'))
            studies[str(N)] = {method: row.to_dict() for method, row in means.iterrows()}
        write_json({'design': 'ordered_split', 'scenario': settings['scenario'], 'results': studies},
                   os.path.join(out, f'{name}.json'))
        return EXIT_OK

    results, rows = [], []
    for N in sizes:
        design = SimDesign(design=settings['design'], N=N, scenario=settings['scenario'],
                           replications=int(settings['replications']), seed=cfg.seed, fit=cfg,
                           level=float(run['level']), threads=int(run['threads']))
        result = run_replications(design)
        write_table(result.records, os.path.join(out, f'{name}_N{N}_estimates.csv'))
        results.append(result.to_dict())
        rows.append(result.table_row())
    write_json({'results': results}, os.path.join(out, f'{name}.json'))
    write_table(pd.DataFrame(rows), os.path.join(out, f'{name}_table.csv'))
    return EXIT_OK


COMMANDS = {
    'fit': cmd_fit,
    'smooth': cmd_smooth,
    'predict': cmd_predict,
    'simulate': cmd_simulate,
}


def error_record(error):
    record = {'error': type(error).__name__, 'message': str(error)}
    if isinstance(error, CGEError):
        record.update({k: v for k, v in error.context().items() if v is not None})
    return json.dumps(record, sort_keys=True, default=str)


def main(argv=None):
    setup_logging()
    try:
        args = build_parser().parse_args(argv)
        run = load_run_config(args)
        if args.print_config:
            print(run.to_json())
            return EXIT_OK
        run.validate()
        return COMMANDS[run['command']](run)
    except (CGEError, OSError) as e:
        logger.debug("command failed", exc_info=True)
        print(error_record(e), file=sys.stderr)
        return EXIT_ERROR
    except Exception as e:
        logger.debug("unexpected failure", exc_info=True)
        print(error_record(e), file=sys.stderr)
        return EXIT_ERROR


if __name__ == '__main__':
    sys.exit(main())
