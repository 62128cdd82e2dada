#!/usr/bin/env python3
"""
Command-line entry point

Subcommands: synth, train-source, adapt-target, score, eval, bench.
Exit codes: 0 success, 1 usage or unexpected error, 2 data or validation error, 130 interrupted.
"""

import argparse
import json
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

import pandas as pd
from rich.console import Console
from rich.table import Table

from utils.file_manager import FileManager
from utils.logger import setup_logger

from .adaptors import SOURCE, TARGET
from .checkpoint import ModelKind, load_bundle, save_bundle
from .config import RunConfig, load_run_config
from .errors import CtalVaeError, DataValidationError, UnknownDomainError
from .flow_model import (
    Label,
    Normalizer,
    build_sequences,
    fit_normalizer,
    label_sequences,
    parse_flows,
    schema_from_header,
    write_flows,
)
from .pipeline import (
    Metrics,
    adapt_target,
    classify,
    evaluate,
    fit_threshold,
    score,
    select_shots,
    split_sequences,
    train_source,
)
from .synthbench import domain_schema, emit_report, generate_domain, run_benchmark, seeded_spec

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2

console = Console()


class CliParser(argparse.ArgumentParser):
    """ArgumentParser whose usage errors exit with status 1"""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> CliParser:
    common = CliParser(add_help=False)
    common.add_argument('--config', '-c', type=str, help='JSON or YAML run configuration')
    common.add_argument('--seed', type=int, help='Seed (overrides train.seed)')
    common.add_argument('--log-level', choices=['error', 'info', 'debug'], help='Overrides CTALVAE_LOG')
    common.add_argument('--log-json', action='store_true', help='Emit JSON log records')

    parser = CliParser(
        prog='ctalvae',
        description='Few-shot cross-domain anomaly detection for network flows',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  ctalvae synth --out data/
  ctalvae train-source --flows data/source.csv --out source.ckpt
  ctalvae adapt-target --ckpt source.ckpt --shots data/target_shots.csv --out target.ckpt
  ctalvae score --ckpt target.ckpt --flows data/target.csv --out scores.csv
  ctalvae eval --scores scores.csv --labels data/target_labels.csv --ckpt target.ckpt
  ctalvae bench --config config/default.json --out out/
        """
    )
    sub = parser.add_subparsers(dest='command', required=True, parser_class=CliParser)

    synth = sub.add_parser('synth', parents=[common], help='Write synthetic source/target flows and labels')
    synth.add_argument('--out', '-o', required=True, help='Output directory')

    train = sub.add_parser('train-source', parents=[common], help='Phase 1: train on source flows')
    train.add_argument('--flows', required=True, help='Source flow CSV')
    train.add_argument('--out', '-o', required=True, help='Checkpoint path')
    train.add_argument('--kind', choices=[k.value for k in ModelKind], default=ModelKind.CTAL_VAE.value)
    train.add_argument('--epochs', type=int, help='Overrides train.epochs')

    adapt = sub.add_parser('adapt-target', parents=[common], help='Phase 2: few-shot target adaptation')
    adapt.add_argument('--ckpt', required=True, help='Source checkpoint')
    adapt.add_argument('--shots', required=True, help='Benign target flow CSV holding the shots')
    adapt.add_argument('--out', '-o', required=True, help='Adapted checkpoint path')
    adapt.add_argument('--domain', default=TARGET)
    adapt.add_argument('--epochs', type=int, help='Overrides adapt.epochs')
    adapt.add_argument('--n-shots', type=int, help='Overrides adapt.n_shots')

    scorer = sub.add_parser('score', parents=[common], help='Score flow windows of one domain')
    scorer.add_argument('--ckpt', required=True)
    scorer.add_argument('--flows', required=True)
    scorer.add_argument('--out', '-o', required=True, help='scores.csv path')
    scorer.add_argument('--domain', default=TARGET)

    ev = sub.add_parser('eval', parents=[common], help='Threshold scores and compute metrics')
    ev.add_argument('--scores', required=True)
    ev.add_argument('--labels', required=True, help='CSV with receiver,start_ts,label')
    rule = ev.add_mutually_exclusive_group(required=True)
    rule.add_argument('--threshold', type=float)
    rule.add_argument('--fit-q', type=float, help='Fit a nearest-rank quantile threshold')
    rule.add_argument('--ckpt', help='Use the threshold stored in a checkpoint')
    ev.add_argument('--domain', default=TARGET)
    ev.add_argument('--benign-scores', help='Scores CSV to fit --fit-q on')
    ev.add_argument('--out', '-o', help='Metrics JSON path')

    bench = sub.add_parser('bench', parents=[common], help='Compare ctal_vae, vae and ae on synthetic domains')
    bench.add_argument('--out', '-o', help='Report directory (defaults to paths.out_dir)')
    bench.add_argument('--workers', type=int, help='Parallel seeds')
    bench.add_argument('--seeds', type=str, help='Comma-separated seeds')

    return parser


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    overrides: Dict[str, Any] = {'train.seed': args.seed}
    if args.command == 'train-source':
        overrides['train.epochs'] = args.epochs
    elif args.command == 'adapt-target':
        overrides['adapt.epochs'] = args.epochs
        overrides['adapt.n_shots'] = args.n_shots
    elif args.command == 'bench':
        overrides['workers'] = args.workers
        if args.seeds:
            try:
                overrides['seeds'] = [int(s) for s in args.seeds.split(',')]
            except ValueError:
                raise DataValidationError(f"--seeds must be comma-separated integers, got {args.seeds!r}")
    return overrides


def _frame_csv(frame: pd.DataFrame) -> str:
    return frame.to_csv(index=False, lineterminator='\n')


def _metrics_table(title: str, rows: Dict[str, Metrics]) -> Table:
    table = Table(title=title)
    for column in ('model', 'accuracy', 'mcc', 'sensitivity', 'tp', 'tn', 'fp', 'fn'):
        table.add_column(column, justify='left' if column == 'model' else 'right')
    for name, m in rows.items():
        table.add_row(name, f"{m.accuracy:.4f}", f"{m.mcc:.4f}", f"{m.sensitivity:.4f}",
                      str(m.tp), str(m.tn), str(m.fp), str(m.fn))
    return table


def cmd_synth(args, cfg: RunConfig, logger) -> int:
    files = FileManager(args.out)
    files.create_directory()
    T = cfg.core.T

    for spec in (cfg.source, cfg.target):
        spec = seeded_spec(spec, cfg.seed)
        flows, truth = generate_domain(spec)
        schema = domain_schema(spec)
        write_flows(files.base_path / f"{spec.name}.csv", flows, schema)
        labels = pd.DataFrame({'row': range(len(truth)), 'label': [t.value for t in truth]})
        files.write_text(f"{spec.name}_flow_labels.csv", _frame_csv(labels))

        if spec.name == cfg.target.name:
            windows = build_sequences(flows, Normalizer.identity(spec.feature_dim), T)
            shots = select_shots(windows, cfg.adapt.n_shots)
            write_flows(files.base_path / f"{spec.name}_shots.csv",
                        [flows[i] for seq in shots for i in seq.flow_ids], schema)
            seq_labels = pd.DataFrame({
                'receiver': [s.receiver for s in windows],
                'start_ts': [s.start_ts for s in windows],
                'label': [lab.value for lab in label_sequences(windows, truth)],
            })
            files.write_text(f"{spec.name}_labels.csv", _frame_csv(seq_labels))
        logger.info(f"Wrote {len(flows)} {spec.name} flows to {files.base_path}")
    return EXIT_OK


def cmd_train_source(args, cfg: RunConfig, logger) -> int:
    schema = schema_from_header(args.flows)
    flows = parse_flows(args.flows, schema)
    normalizer = fit_normalizer(flows)
    sequences = build_sequences(flows, normalizer, cfg.core.T)
    train, held = split_sequences(sequences, cfg.source_split, cfg.seed)
    logger.info(f"Source: {len(flows)} flows, {len(train)} training and {len(held)} held-out windows")

    bundle = train_source(train, cfg.train, cfg.seed, cfg.core, ModelKind(args.kind), normalizer, schema)
    if held:
        bundle.thresholds[SOURCE] = fit_threshold(score(bundle, SOURCE, held), cfg.threshold_q)
        logger.info(f"Source threshold fitted at q={cfg.threshold_q}: {bundle.thresholds[SOURCE]:.6g}")
    save_bundle(bundle, args.out)

    table = Table(title=f"{args.kind} source training")
    for column in ('epoch', 'total', 'rec', 'kl', 'con'):
        table.add_column(column, justify='right')
    for record in (bundle.history[0], bundle.history[-1]):
        table.add_row(str(record.epoch), *(
            '-' if v is None else f"{v:.6f}" for v in (record.total, record.rec, record.kl, record.con)
        ))
    console.print(table)
    return EXIT_OK


def cmd_adapt_target(args, cfg: RunConfig, logger) -> int:
    bundle = load_bundle(args.ckpt)
    schema = schema_from_header(args.shots)
    flows = parse_flows(args.shots, schema)
    normalizer = fit_normalizer(flows)
    anchors = select_shots(build_sequences(flows, normalizer, bundle.core_config.T), cfg.adapt.n_shots)

    adapted = adapt_target(
        bundle, anchors, cfg.adapt_train_config(), cfg.seed, args.domain,
        normalizer, schema, cfg.adapt.n_shots, cfg.threshold_q
    )
    save_bundle(adapted, args.out)
    console.print(f"Adapted domain [bold]{args.domain}[/bold] on {len(anchors)} shots; "
                  f"threshold {adapted.thresholds[args.domain]:.6g}")
    return EXIT_OK


def cmd_score(args, cfg: RunConfig, logger) -> int:
    bundle = load_bundle(args.ckpt)
    bundle.adaptor(args.domain)
    if args.domain not in bundle.normalizers:
        raise UnknownDomainError(f"checkpoint has no normalizer for domain {args.domain!r}")

    flows = parse_flows(args.flows, bundle.schemas.get(args.domain))
    sequences = build_sequences(flows, bundle.normalizers[args.domain], bundle.core_config.T)
    scores = score(bundle, args.domain, sequences)
    frame = pd.DataFrame({
        'receiver': [s.receiver for s in sequences],
        'start_ts': [s.start_ts for s in sequences],
        'score': scores,
    })
    FileManager().write_text(args.out, _frame_csv(frame))
    logger.info(f"Scored {len(scores)} windows of {args.domain} into {args.out}")
    return EXIT_OK


def _read_table(path: str, columns: List[str]) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path, dtype={'receiver': str}, float_precision='round_trip')
    except pd.errors.EmptyDataError:
        raise DataValidationError(f"{path} is empty")
    except pd.errors.ParserError as e:
        raise DataValidationError(f"{path} is not a valid CSV: {e}")
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise DataValidationError(f"{path} lacks column(s): {', '.join(missing)}")
    if 'score' in columns and not pd.api.types.is_numeric_dtype(frame['score']):
        raise DataValidationError(f"{path} has non-numeric scores")
    return frame


def cmd_eval(args, cfg: RunConfig, logger) -> int:
    scores = _read_table(args.scores, ['receiver', 'start_ts', 'score'])
    labels = _read_table(args.labels, ['receiver', 'start_ts', 'label'])
    try:
        joined = scores.merge(labels, on=['receiver', 'start_ts'], how='inner', validate='one_to_one')
    except pd.errors.MergeError as e:
        raise DataValidationError(f"duplicate (receiver, start_ts) keys: {e}")
    if len(joined) != len(scores):
        raise DataValidationError(f"{len(scores) - len(joined)} scored windows have no label")
    try:
        truth = [Label(v) for v in joined['label']]
    except ValueError as e:
        raise DataValidationError(f"bad label value: {e}")

    if args.threshold is not None:
        threshold = args.threshold
    elif args.ckpt:
        bundle = load_bundle(args.ckpt)
        if args.domain not in bundle.thresholds:
            raise UnknownDomainError(f"checkpoint has no threshold for domain {args.domain!r}")
        threshold = bundle.thresholds[args.domain]
    else:
        if args.benign_scores:
            pool = _read_table(args.benign_scores, ['score'])['score'].tolist()
        else:
            pool = [s for s, t in zip(joined['score'], truth) if t is Label.BENIGN]
        threshold = fit_threshold(pool, args.fit_q)

    metrics = evaluate(classify(joined['score'].tolist(), threshold), truth)
    logger.info(f"Threshold {threshold:.6g}: {metrics.to_dict()}")
    console.print(_metrics_table(f"threshold {threshold:.6g}", {args.domain: metrics}))
    if args.out:
        FileManager().write_json(args.out, {'threshold': threshold, **metrics.to_dict()})
    return EXIT_OK


def cmd_bench(args, cfg: RunConfig, logger) -> int:
    out_dir = args.out or cfg.paths.out_dir
    report = run_benchmark(cfg.source, cfg.target, cfg.bench_config(), cfg.seeds)
    emit_report(report, out_dir)

    table = Table(title=f"Median over seeds {report.seeds}")
    for column in ('model', 'accuracy', 'mcc', 'sensitivity'):
        table.add_column(column, justify='left' if column == 'model' else 'right')
    for kind, medians in report.medians.items():
        table.add_row(kind, *(f"{medians[m]:.4f}" for m in ('accuracy', 'mcc', 'sensitivity')))
    console.print(table)
    return EXIT_OK


COMMANDS = {
    'synth': cmd_synth,
    'train-source': cmd_train_source,
    'adapt-target': cmd_adapt_target,
    'score': cmd_score,
    'eval': cmd_eval,
    'bench': cmd_bench,
}


def run_cli(argv: Optional[List[str]] = None) -> int:
    """Parse argv, run one subcommand and return the exit code"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code is None else int(e.code)

    logger = setup_logger(level=args.log_level, json_format=args.log_json)
    logger.set_context(command=args.command)
    try:
        cfg = load_run_config(args.config, _overrides(args))
        if cfg.paths.log_file:
            logger = setup_logger(level=args.log_level, log_file=cfg.paths.log_file,
                                  log_dir=str(Path(cfg.paths.out_dir)), json_format=args.log_json)
        logger.info(f"Effective config: {json.dumps(cfg.to_dict(), sort_keys=True)}")
        return COMMANDS[args.command](args, cfg, logger)
    except (CtalVaeError, DataValidationError, OSError) as e:
        logger.error(f"{args.command} failed: {e}")
        return EXIT_DATA
    except KeyboardInterrupt:
        logger.error("Interrupted")
        return 130
    except Exception:
        logger.exception(f"Unexpected error in {args.command}")
        return EXIT_USAGE
    finally:
        logger.clear_context()


def main():
    """Main entry point"""
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
