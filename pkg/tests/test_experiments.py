import logging
import os

import numpy as np
import pytest
from scipy.stats import spearmanr

from model.ingnn import IngnnConfig
from train.experiments import (
    ABLATIONS,
    IMPORTANCE_COLUMNS,
    ablation_suite,
    ablation_variants,
    expand_grid,
    grid_search,
    importance_row,
    importance_table,
)
from train.generate_synthetic import SynSpec, make_bundle
from train.prepare_dataset import describe_bundle, load_bundle
from train.train_model import RunRecord, Schedule, TrainConfig, ingnn_runner, mlp_runner, repeat_runs, summarize
from train.utils import load_preset, split_config

SCHEDULE = Schedule(w_epochs_per_round=4, p_epochs_per_round=2, patience=10, max_epochs=20)
TRAIN = TrainConfig(lr=0.05, num_runs=1)
BASE = IngnnConfig(hidden=4)


def test_expand_grid():
    points = expand_grid({'hidden': [4, 8], 'lr': [0.1]})
    assert points == [{'hidden': 4, 'lr': 0.1}, {'hidden': 8, 'lr': 0.1}]
    with pytest.raises(ValueError):
        expand_grid({})
    with pytest.raises(ValueError):
        expand_grid({'hidden': []})


def test_singleton_grid(rings):
    best, table = grid_search(rings, {'hidden': [4]}, BASE, TRAIN, SCHEDULE, seed=0)
    assert best == {'hidden': 4}
    assert len(table) == 1
    assert {'hidden', 'mean_valid', 'mean_test'} <= set(table.columns)


def test_grid_picks_best_mean_valid(rings):
    best, table = grid_search(rings, {'hidden': [2, 4], 'lr': [0.05, 0.001]}, BASE, TRAIN, SCHEDULE, seed=0)
    assert len(table) == 4
    winner = table.iloc[int(np.argmax(table['mean_valid'].to_numpy()))]
    assert best == {'hidden': int(winner['hidden']), 'lr': float(winner['lr'])}


def test_grid_rejects_unknown_keys(rings):
    with pytest.raises(ValueError):
        grid_search(rings, {'width': [4]}, BASE, TRAIN, SCHEDULE, seed=0)


def test_ablation_variants():
    variants = {name: (config, train_cfg) for name, config, train_cfg in ablation_variants(BASE, TRAIN)}
    assert list(variants) == [name for name, _, _ in ABLATIONS]
    assert variants['w/o agg'][0].disable == ('agg',)
    assert variants['w/o fusion'][0].fusion_mode == 'equal_sum'
    assert variants['w/o bi-level'][1].bilevel is False
    assert variants['base'][0] == BASE


def test_ablation_variants_skip_configs_with_no_branch_left(caplog):
    base = IngnnConfig(hidden=4, disable=('ego', 'agg'))
    with caplog.at_level(logging.WARNING, logger='train.experiments'):
        variants = ablation_variants(base, TRAIN)
    names = [name for name, _, _ in variants]
    assert 'w/o strc' not in names
    assert names == [name for name, _, _ in ABLATIONS if name != 'w/o strc']
    assert dict((name, config) for name, config, _ in variants)['w/o ego'].disable == ('ego', 'agg')
    assert 'w/o strc' in caplog.text


def test_ablation_suite_runs_with_two_branches_disabled(rings):
    _, summary = ablation_suite(rings, IngnnConfig(hidden=4, disable=('agg', 'strc')), TRAIN, SCHEDULE, seed=0)
    assert 'w/o ego' not in summary['variant'].tolist()
    assert len(summary) == 6
    assert summary.loc[summary['variant'] == 'base', 'delta'].iloc[0] == 0.0


def test_ablation_suite(rings):
    records, summary = ablation_suite(rings, BASE, TRAIN, SCHEDULE, seed=0)
    assert len(summary) == 7
    assert summary.loc[summary['variant'] == 'base', 'delta'].iloc[0] == 0.0
    assert all(len(runs) == 1 for runs in records.values())
    # every variant sees the same run seed
    assert len({runs[0].seed for runs in records.values()}) == 1


def test_importance_row_skips_undefined_scores():
    defined = RunRecord('d', 'ingnn', 0, {}, {}, {}, importance=[0.2, 0.3, 0.5])
    undefined = RunRecord('d', 'ingnn', 1, {}, {}, {}, importance=[float('nan')] * 3)
    row = importance_row('d', [defined, undefined])
    assert (row['I_ego'], row['I_agg'], row['I_strc']) == pytest.approx((0.2, 0.3, 0.5))
    assert np.isnan(importance_row('d', [undefined])['I_ego'])


def test_importance_table(rings):
    table = importance_table([rings], BASE, TRAIN, SCHEDULE, seed=0)
    assert list(table.columns) == IMPORTANCE_COLUMNS
    assert table.loc[0, ['I_ego', 'I_agg', 'I_strc']].sum() == pytest.approx(1.0)


@pytest.mark.slow
def test_aggregation_beats_features_alone_on_homophilous_graph():
    bundle = make_bundle(SynSpec(num_nodes=500, num_classes=5, homophily=1.0, feature_dim=20,
                                 class_separation=0.5, feature_std=1.0, seed=0))
    train_cfg = TrainConfig(lr=0.01, split_policy='fractional', num_runs=2)
    schedule = Schedule(patience=50, max_epochs=300)
    ingnn = summarize(repeat_runs(bundle, ingnn_runner(IngnnConfig(hidden=32), train_cfg, schedule), train_cfg, 0))
    mlp = summarize(repeat_runs(bundle, mlp_runner(32, train_cfg, schedule), train_cfg, 0))
    assert ingnn['mean_test'] > mlp['mean_test']


CORA_BUNDLE = os.environ.get('INGNN_CORA_BUNDLE', os.path.join(os.path.dirname(__file__), '..', 'data', 'cora'))
SWEEP_SEED = 0


def preset_configs(name):
    routed = split_config(load_preset(name), IngnnConfig, TrainConfig)
    return IngnnConfig(**routed[IngnnConfig]), TrainConfig(**routed[TrainConfig])


def sweep_bundle(h):
    return make_bundle(SynSpec(num_nodes=1490, num_classes=5, homophily=h, seed=SWEEP_SEED))


def variant_summary(bundle, name, config, train_cfg):
    variants = {n: (c, t) for n, c, t in ablation_variants(config, train_cfg)}
    variant_config, variant_train_cfg = variants[name]
    runner = ingnn_runner(variant_config, variant_train_cfg, Schedule())
    return summarize(repeat_runs(bundle, runner, variant_train_cfg, seed=0))


@pytest.mark.slow
def test_sweep_accuracy_at_the_homophily_extremes():
    config, train_cfg = preset_configs('syn')
    perfect = summarize(repeat_runs(sweep_bundle(1.0), ingnn_runner(config, train_cfg, Schedule()), train_cfg, 0))
    assert perfect['mean_test'] >= 0.95

    heterophilous = sweep_bundle(0.0)
    ingnn = summarize(repeat_runs(heterophilous, ingnn_runner(config, train_cfg, Schedule()), train_cfg, 0))
    mlp = summarize(repeat_runs(heterophilous, mlp_runner(config.hidden, train_cfg, Schedule(), config.dropout),
                                train_cfg, 0))
    assert ingnn['mean_test'] >= mlp['mean_test']


@pytest.mark.slow
def test_cora_regression():
    if not os.path.exists(os.path.join(CORA_BUNDLE, 'meta.json')):
        pytest.skip(f"Cora bundle not found at {CORA_BUNDLE}; convert Cora to the bundle format "
                    f"(see README) or point INGNN_CORA_BUNDLE at it")
    bundle = load_bundle(CORA_BUNDLE)
    assert describe_bundle(bundle)['edge_homophily'] == pytest.approx(0.81, abs=0.005)
    config, train_cfg = preset_configs('cora')
    assert train_cfg.split_policy == 'planetoid' and train_cfg.num_runs == 5
    stats = summarize(repeat_runs(bundle, ingnn_runner(config, train_cfg, Schedule()), train_cfg, 0))
    assert stats['runs'] == 5
    assert stats['mean_test'] >= 0.78


@pytest.mark.slow
@pytest.mark.parametrize('h, removed', [(0.8, 'w/o agg'), (0.2, 'w/o ego')])
def test_ablation_direction(h, removed):
    config, train_cfg = preset_configs('syn')
    bundle = sweep_bundle(h)
    base = variant_summary(bundle, 'base', config, train_cfg)
    ablated = variant_summary(bundle, removed, config, train_cfg)
    assert base['runs'] == ablated['runs'] == 5
    assert base['mean_test'] - ablated['mean_test'] > max(base['std_test'], ablated['std_test'])


@pytest.mark.slow
def test_aggregation_importance_rises_with_homophily():
    config, train_cfg = preset_configs('syn')
    levels = [0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8]
    table = importance_table([sweep_bundle(h) for h in levels], config, train_cfg, Schedule(), seed=0)
    assert table['I_agg'].notna().all()
    rho = spearmanr(levels, table['I_agg']).correlation
    assert rho >= 0.8
