import argparse
import json
import logging
import os
import sys
from typing import Any, Dict, Optional, Sequence, Tuple

import yaml

from analysis.homophily_theory import epsilon_curve, export_curve_csv, monte_carlo_column
from analysis.wl_lab import relabel_copy, rook_graph_4x4, shrikhande_graph, theorem_demo
from model.ingnn import FUSION_MODES, STRC_MODES, IngnnConfig
from train.experiments import DEFAULT_GRID, ablation_suite, grid_search, importance_table
from train.generate_synthetic import GaussianClassSpec, SynSpec, homophily_sweep, make_bundle
from train.prepare_dataset import (
    SPLIT_POLICIES,
    DatasetBundle,
    describe_bundle,
    export_csv,
    export_run,
    load_bundle,
    save_bundle,
)
from train.train_model import (
    Schedule,
    TrainConfig,
    build_model,
    evaluate,
    fit_model,
    ingnn_runner,
    load_model,
    mlp_baseline,
    repeat_runs,
    save_model,
    split_for_run,
    summarize,
)
from train.utils import load_config_file, load_preset, resolve_output_dir, split_config

logger = logging.getLogger(__name__)

# --- Configuration ---
RUNRECORD_FILE = 'runrecord.json'
METRICS_FILE = 'metrics.csv'
CHECKPOINT_FILE = 'checkpoint.bin'
CURVE_FILE = 'epsilon_curve.csv'
WL_DEMO_FILE = 'wl_demo.json'
GRID_STEP = 0.05


def unit_interval(value: str) -> float:
    h = float(value)
    if not 0.0 <= h <= 1.0:
        raise argparse.ArgumentTypeError(f"homophily must lie in [0, 1], got {value}")
    return h


def _section(title: str) -> None:
    print(f"\n--- {title} ---")


def _print_dataset(bundle: DatasetBundle) -> None:
    stats = describe_bundle(bundle)
    _section(f"Dataset {stats['name']}")
    print(f"{stats['nodes']} nodes, {stats['edges']} edges, {stats['features']} features, {stats['classes']} classes")
    print(f"Average degree: {stats['degree']:.2f}, edge homophily: {stats['edge_homophily']:.4f}")


def add_run_options(parser: argparse.ArgumentParser) -> None:
    """Flags that mirror IngnnConfig, TrainConfig and Schedule fields; unset flags leave config values alone."""
    parser.add_argument('--config', help="flat YAML file of config values")
    parser.add_argument('--preset', help="named preset from configs/ (e.g. cora)")
    model = parser.add_argument_group('model')
    model.add_argument('--hidden', type=int)
    model.add_argument('--prop-steps', dest='prop_steps', type=int, help="s1, powers of the normalized adjacency")
    model.add_argument('--adj-powers', dest='adj_powers', type=int, help="s2, length of the structure chain")
    model.add_argument('--dropout', type=float)
    model.add_argument('--row-normalize-features', dest='row_normalize_features',
                       action=argparse.BooleanOptionalAction, default=None)
    model.add_argument('--fusion-mode', dest='fusion_mode', choices=FUSION_MODES)
    model.add_argument('--disable', help="comma-separated branches to drop: ego, agg, strc")
    model.add_argument('--self-loops', dest='self_loops', action=argparse.BooleanOptionalAction, default=None)
    model.add_argument('--strc-mode', dest='strc_mode', choices=STRC_MODES)
    train = parser.add_argument_group('training')
    train.add_argument('--lr', type=float)
    train.add_argument('--weight-decay', dest='weight_decay', type=float)
    train.add_argument('--bilevel', action=argparse.BooleanOptionalAction, default=None)
    train.add_argument('--split-policy', dest='split_policy', choices=SPLIT_POLICIES)
    train.add_argument('--num-runs', dest='num_runs', type=int)
    train.add_argument('--w-epochs-per-round', dest='w_epochs_per_round', type=int)
    train.add_argument('--p-epochs-per-round', dest='p_epochs_per_round', type=int)
    train.add_argument('--p-lr', dest='p_lr', type=float)
    train.add_argument('--patience', type=int)
    train.add_argument('--max-epochs', dest='max_epochs', type=int)


RUN_FIELDS = ('hidden', 'prop_steps', 'adj_powers', 'dropout', 'row_normalize_features', 'fusion_mode',
              'disable', 'self_loops', 'strc_mode', 'lr', 'weight_decay', 'bilevel', 'split_policy',
              'num_runs', 'w_epochs_per_round', 'p_epochs_per_round', 'p_lr', 'patience', 'max_epochs')


def merged_values(args: argparse.Namespace) -> Dict[str, Any]:
    """Preset, then --config file, then explicit flags; later sources win."""
    values: Dict[str, Any] = {}
    if getattr(args, 'preset', None):
        values.update(load_preset(args.preset))
    if getattr(args, 'config', None):
        values.update(load_config_file(args.config))
    values.update({k: getattr(args, k) for k in RUN_FIELDS if getattr(args, k, None) is not None})
    return values


def run_configs(args: argparse.Namespace) -> Tuple[IngnnConfig, TrainConfig, Schedule]:
    routed = split_config(merged_values(args), IngnnConfig, TrainConfig, Schedule)
    return IngnnConfig(**routed[IngnnConfig]), TrainConfig(**routed[TrainConfig]), Schedule(**routed[Schedule])


def _dataset_out(args: argparse.Namespace, name: str) -> str:
    out = os.path.join(resolve_output_dir(args.out), name)
    os.makedirs(out, exist_ok=True)
    return out


def cmd_train(args: argparse.Namespace) -> int:
    config, train_cfg, schedule = run_configs(args)
    bundle = load_bundle(args.dataset)
    out = _dataset_out(args, bundle.name)
    _print_dataset(bundle)

    if args.repeat:
        if args.model == 'mlp':
            runner = lambda b, s, run_seed: mlp_baseline(b, s, config.hidden, train_cfg, schedule, run_seed,
                                                         config.dropout, config.row_normalize_features)
        else:
            runner = ingnn_runner(config, train_cfg, schedule)
        records = repeat_runs(bundle, runner, train_cfg, args.seed)
        for i, record in enumerate(records):
            export_run(record, os.path.join(out, f"runrecord_{i}.json"))
        stats = summarize(records)
        export_csv([stats], os.path.join(out, 'summary.csv'))
        _section(f"{bundle.name}: {args.model} over {stats['runs']} runs")
        print(f"Test accuracy: {stats['mean_test']:.4f} ± {stats['std_test']:.4f}")
        return 0 if stats['runs'] == len(records) else 1

    split = split_for_run(bundle, train_cfg.split_policy, args.seed, args.split_index)
    if args.model == 'mlp':
        record = mlp_baseline(bundle, split, config.hidden, train_cfg, schedule, args.seed,
                              config.dropout, config.row_normalize_features)
    else:
        model = build_model(config, bundle, args.seed)
        record = fit_model(model, bundle, split, train_cfg, schedule, args.seed)
        if record.status == 'completed':
            save_model(model, os.path.join(out, CHECKPOINT_FILE), args.seed, bundle.name,
                       train_cfg.split_policy, args.split_index)
    export_run(record, os.path.join(out, RUNRECORD_FILE))
    export_csv(record.metrics_frame(), os.path.join(out, METRICS_FILE))

    _section(f"{bundle.name}: {args.model}")
    if record.status != 'completed':
        print(f"Training {record.status}: {record.message}", file=sys.stderr)
        return 1
    print(f"Best valid accuracy: {record.best_valid_acc:.4f} (epoch {record.best_epoch})")
    print(f"Test accuracy: {record.test_acc:.4f}" if record.test_acc is not None else "Test accuracy: n/a")
    if record.fusion_weights:
        print(f"Fusion weights (ego, agg, strc): {[round(w, 4) for w in record.fusion_weights]}")
    print(f"Outputs written to {out}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    bundle = load_bundle(args.dataset)
    model, meta = load_model(args.checkpoint)
    policy = args.split_policy or meta.get('split_policy', 'planetoid')
    index = args.split_index if args.split_index is not None else int(meta.get('split_index', 0))
    split = split_for_run(bundle, policy, int(meta.get('seed', args.seed)), index)
    acc = evaluate(model, bundle, getattr(split, args.split))
    out = _dataset_out(args, bundle.name)
    with open(os.path.join(out, f"eval_{args.split}.json"), 'w') as f:
        json.dump({'dataset': bundle.name, 'split': args.split, 'accuracy': acc, 'checkpoint': args.checkpoint},
                  f, indent=2, sort_keys=True)
    _section(f"{bundle.name}: evaluation")
    print(f"{args.split} accuracy: {acc:.4f}")
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    if args.sweep == (args.homophily is not None):
        raise ValueError("pass exactly one of --homophily or --sweep")
    spec = SynSpec(num_nodes=args.num_nodes, num_classes=args.num_classes, homophily=args.homophily or 0.0,
                   avg_degree=args.avg_degree, feature_dim=args.feature_dim, seed=args.seed)
    bundles = homophily_sweep(spec) if args.sweep else [make_bundle(spec)]
    out = resolve_output_dir(args.out)
    _section("Synthetic graphs")
    for bundle in bundles:
        save_bundle(bundle, os.path.join(out, bundle.name))
        stats = describe_bundle(bundle)
        print(f"{bundle.name}: {stats['nodes']} nodes, {stats['edges']} edges, "
              f"edge homophily {stats['edge_homophily']:.4f}")
    return 0


def cmd_wl_demo(args: argparse.Namespace) -> int:
    g1 = rook_graph_4x4()
    g2 = relabel_copy(g1, args.seed) if args.pair == 'self' else shrikhande_graph()
    report = theorem_demo(g1, g2)
    out = resolve_output_dir(args.out)
    with open(os.path.join(out, WL_DEMO_FILE), 'w') as f:
        json.dump(report, f, indent=2, sort_keys=True)

    _section("Strongly regular parameters")
    print(f"g1: {report['srg']['g1']}")
    print(f"g2: {report['srg']['g2']}")
    _section("1-WL")
    print(f"Distinguishes: {report['wl1_distinguishes']}")
    _section("Neighbourhood subgraphs")
    print(f"g1: {report['neighborhoods']['g1']}")
    print(f"g2: {report['neighborhoods']['g2']}")
    print(f"Isomorphic: {report['neighborhoods']['isomorphic']}")
    _section("Verdict")
    print(report['verdict'])
    return 0


def cmd_theory(args: argparse.Namespace) -> int:
    spec = GaussianClassSpec(mu1=args.mu1, sigma1=args.sigma1, mu2=args.mu2, sigma2=args.sigma2, degree=args.degree)
    steps = int(round(1.0 / args.grid_step))
    grid = [i / steps for i in range(steps + 1)]
    curve = epsilon_curve(spec, grid)
    mc = monte_carlo_column(spec, grid, args.monte_carlo, args.seed, args.mc_method) if args.monte_carlo else None
    path = export_curve_csv(curve, os.path.join(resolve_output_dir(args.out), CURVE_FILE), mc)

    _section("Misclassification rate")
    print(f"eps_raw = {curve.eps_raw:.6f}")
    print(f"eps_agg(0) = {curve.eps_agg[0]:.6f}, eps_agg(1) = {curve.eps_agg[-1]:.6f}")
    if curve.h_lower is not None and curve.h_upper is not None:
        print(f"Aggregation hurts for h in ({curve.h_lower:.6f}, {curve.h_upper:.6f})")
    else:
        print(f"No crossing found (H_l={curve.h_lower}, H_u={curve.h_upper})")
    print(f"Curve written to {path}")
    return 0


def _write_table(frame, out: str, filename: str, title: str) -> None:
    path = export_csv(frame, os.path.join(out, filename))
    _section(title)
    print(frame.to_string(index=False))
    print(f"Written to {path}")


def cmd_ablation(args: argparse.Namespace) -> int:
    config, train_cfg, schedule = run_configs(args)
    bundle = load_bundle(args.dataset)
    records, summary = ablation_suite(bundle, config, train_cfg, schedule, args.seed)
    out = _dataset_out(args, bundle.name)
    with open(os.path.join(out, 'ablation_runs.json'), 'w') as f:
        json.dump({name: [r.to_dict() for r in runs] for name, runs in records.items()}, f, indent=2, sort_keys=True)
    _write_table(summary, out, 'ablation.csv', f"Ablation on {bundle.name}")
    return 0


def cmd_grid(args: argparse.Namespace) -> int:
    config, train_cfg, schedule = run_configs(args)
    grid = DEFAULT_GRID
    if args.grid:
        with open(args.grid, 'r') as f:
            grid = yaml.safe_load(f) or {}
        if not isinstance(grid, dict):
            raise ValueError(f"{args.grid} must map config keys to lists of values")
        grid = {k: v if isinstance(v, list) else [v] for k, v in grid.items()}
    bundle = load_bundle(args.dataset)
    best, table = grid_search(bundle, grid, config, train_cfg, schedule, args.seed)
    out = _dataset_out(args, bundle.name)
    with open(os.path.join(out, 'best_config.yaml'), 'w') as f:
        yaml.safe_dump(best, f, sort_keys=True)
    _write_table(table, out, 'grid.csv', f"Grid search on {bundle.name}")
    print(f"Best: {best}")
    return 0


def cmd_importance(args: argparse.Namespace) -> int:
    config, train_cfg, schedule = run_configs(args)
    bundles = [load_bundle(d) for d in args.dataset]
    table = importance_table(bundles, config, train_cfg, schedule, args.seed)
    _write_table(table, resolve_output_dir(args.out), 'importance.csv', "Feature importance after fusion")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='ingnn', description="INGNN node classification and analysis lab",
                                     formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    parser.add_argument('-v', '--verbose', action='store_true', help="debug logging")
    sub = parser.add_subparsers(dest='command', required=True)

    def command(name: str, handler, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument('--seed', type=int, default=0)
        p.add_argument('--out', help="output directory (INGNN_OUT overrides)")
        p.set_defaults(handler=handler)
        return p

    p = command('train', cmd_train, "train INGNN or the MLP baseline on a dataset bundle")
    p.add_argument('--dataset', required=True, help="dataset bundle directory")
    p.add_argument('--model', choices=('ingnn', 'mlp'), default='ingnn')
    p.add_argument('--split-index', dest='split_index', type=int, default=0)
    p.add_argument('--repeat', action='store_true', help="train over num_runs splits and report mean ± std")
    add_run_options(p)

    p = command('eval', cmd_eval, "evaluate a saved checkpoint on one split")
    p.add_argument('--dataset', required=True)
    p.add_argument('--checkpoint', required=True)
    p.add_argument('--split', choices=('train', 'valid', 'test'), default='test')
    p.add_argument('--split-index', dest='split_index', type=int, default=None)
    p.add_argument('--split-policy', dest='split_policy', choices=SPLIT_POLICIES)

    p = command('synth', cmd_synth, "generate synthetic graphs with controlled homophily")
    p.add_argument('--homophily', type=unit_interval)
    p.add_argument('--sweep', action='store_true', help="eleven graphs, h = 0.0, 0.1, ..., 1.0")
    p.add_argument('--num-nodes', dest='num_nodes', type=int, default=SynSpec.num_nodes)
    p.add_argument('--num-classes', dest='num_classes', type=int, default=SynSpec.num_classes)
    p.add_argument('--avg-degree', dest='avg_degree', type=int, default=SynSpec.avg_degree)
    p.add_argument('--feature-dim', dest='feature_dim', type=int, default=SynSpec.feature_dim)

    p = command('wl-demo', cmd_wl_demo, "rook's graph vs Shrikhande: 1-WL against neighbourhood structure")
    p.add_argument('--pair', choices=('default', 'self'), default='default')

    p = command('theory', cmd_theory, "misclassification rate before and after aggregation")
    p.add_argument('--mu1', type=float, default=0.0)
    p.add_argument('--sigma1', type=float, default=1.0)
    p.add_argument('--mu2', type=float, default=2.0)
    p.add_argument('--sigma2', type=float, default=1.0)
    p.add_argument('--degree', type=int, default=5)
    p.add_argument('--grid-step', dest='grid_step', type=float, default=GRID_STEP)
    p.add_argument('--monte-carlo', dest='monte_carlo', type=int, default=0, help="samples per class; 0 disables")
    p.add_argument('--mc-method', dest='mc_method', choices=('gaussian', 'graph'), default='gaussian')

    for name, handler, help_text in (('ablation', cmd_ablation, "run the seven ablation variants"),
                                     ('grid', cmd_grid, "hyperparameter grid search")):
        p = command(name, handler, help_text)
        p.add_argument('--dataset', required=True)
        if name == 'grid':
            p.add_argument('--grid', help="YAML mapping of config keys to value lists")
        add_run_options(p)

    p = command('importance', cmd_importance, "feature importance scores per dataset")
    p.add_argument('--dataset', required=True, nargs='+')
    add_run_options(p)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format='%(asctime)s %(levelname)s %(name)s: %(message)s')
    try:
        return args.handler(args)
    except Exception as e:
        logger.debug("command failed", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == '__main__':
    sys.exit(main())
