import itertools
import logging
from dataclasses import replace
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from model.ingnn import BRANCHES, IngnnConfig
from train.prepare_dataset import DatasetBundle
from train.train_model import RunRecord, Schedule, TrainConfig, ingnn_runner, repeat_runs, summarize
from train.utils import split_config

logger = logging.getLogger(__name__)

# --- Configuration ---
# Hyperparameter options searched for every dataset
DEFAULT_GRID = {
    'hidden': [64, 128],
    'prop_steps': [2, 5, 10, 20],
    'adj_powers': [1, 2, 5],
    'lr': [0.01, 0.001],
    'weight_decay': [0.001, 0.0005],
    'row_normalize_features': [True, False],
}

# (variant name, IngnnConfig overrides, TrainConfig overrides)
ABLATIONS = [
    ('base', {}, {}),
    ('w/o ego', {'disable': ('ego',)}, {}),
    ('w/o agg', {'disable': ('agg',)}, {}),
    ('w/o strc', {'disable': ('strc',)}, {}),
    ('w/o fusion', {'fusion_mode': 'equal_sum'}, {}),
    ('w/o bi-level', {}, {'bilevel': False}),
    ('concat', {'fusion_mode': 'concat'}, {}),
]
IMPORTANCE_COLUMNS = ['dataset', 'I_ego', 'I_agg', 'I_strc']


def expand_grid(grid: Mapping[str, Sequence[Any]]) -> List[Dict[str, Any]]:
    if not grid or any(len(values) == 0 for values in grid.values()):
        raise ValueError("grid must name at least one key and every key needs at least one value")
    keys = list(grid)
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]


def _configs_for(point: Dict[str, Any], base: IngnnConfig, train_cfg: TrainConfig) -> Tuple[IngnnConfig, TrainConfig]:
    routed = split_config(point, IngnnConfig, TrainConfig)
    return replace(base, **routed[IngnnConfig]), replace(train_cfg, **routed[TrainConfig])


def grid_search(bundle: DatasetBundle, grid: Mapping[str, Sequence[Any]], base: IngnnConfig,
                train_cfg: TrainConfig, schedule: Schedule, seed: int) -> Tuple[Dict[str, Any], pd.DataFrame]:
    """
    Evaluate every grid point over train_cfg.num_runs splits and pick the one
    with the highest mean valid accuracy (first point on ties).
    Returns the winning point and one table row per point.
    """
    points = expand_grid(grid)
    rows = []
    for point in tqdm(points, desc=f"Grid search on {bundle.name}", unit='config'):
        config, point_train_cfg = _configs_for(point, base, train_cfg)
        records = repeat_runs(bundle, ingnn_runner(config, point_train_cfg, schedule), point_train_cfg, seed)
        rows.append({**point, **summarize(records)})

    table = pd.DataFrame(rows)
    best = int(np.nanargmax(table['mean_valid'].to_numpy())) if table['mean_valid'].notna().any() else 0
    logger.info(f"Best grid point for {bundle.name}: {points[best]} "
                f"(mean valid {table['mean_valid'].iloc[best]:.4f})")
    return points[best], table


def ablation_variants(base: IngnnConfig, train_cfg: TrainConfig) -> List[Tuple[str, IngnnConfig, TrainConfig]]:
    """Variants that would leave no branch enabled are skipped with a warning."""
    variants = []
    for name, model_overrides, train_overrides in ABLATIONS:
        overrides = dict(model_overrides)
        if 'disable' in overrides:
            overrides['disable'] = tuple(base.disable) + tuple(overrides['disable'])
            if set(overrides['disable']) >= set(BRANCHES):
                logger.warning(f"Skipping ablation variant {name!r}: base already disables {list(base.disable)}")
                continue
        variants.append((name, replace(base, **overrides), replace(train_cfg, **train_overrides)))
    return variants


def ablation_suite(bundle: DatasetBundle, base: IngnnConfig, train_cfg: TrainConfig, schedule: Schedule,
                   seed: int) -> Tuple[Dict[str, List[RunRecord]], pd.DataFrame]:
    """
    Train the base model and six variants that each remove or swap one design
    element. Every variant sees the same splits and run seeds. The summary
    carries delta = variant mean test accuracy minus base.
    """
    records: Dict[str, List[RunRecord]] = {}
    rows = []
    for name, config, variant_train_cfg in ablation_variants(base, train_cfg):
        logger.info(f"--- Ablation variant: {name} ---")
        records[name] = repeat_runs(bundle, ingnn_runner(config, variant_train_cfg, schedule), variant_train_cfg, seed)
        rows.append({'variant': name, **summarize(records[name])})

    summary = pd.DataFrame(rows)
    summary['delta'] = summary['mean_test'] - summary.loc[summary['variant'] == 'base', 'mean_test'].iloc[0]
    return records, summary


def importance_row(name: str, records: Sequence[RunRecord]) -> Dict[str, Any]:
    """Mean importance scores over runs that produced defined scores."""
    scores = np.array([r.importance for r in records if len(r.importance) == 3 and not np.any(np.isnan(r.importance))])
    if scores.size == 0:
        logger.warning(f"{name}: no run produced defined importance scores")
        return {'dataset': name, 'I_ego': float('nan'), 'I_agg': float('nan'), 'I_strc': float('nan')}
    mean = scores.mean(axis=0)
    return {'dataset': name, 'I_ego': float(mean[0]), 'I_agg': float(mean[1]), 'I_strc': float(mean[2])}


def importance_table(bundles: Sequence[DatasetBundle], config: IngnnConfig, train_cfg: TrainConfig,
                     schedule: Schedule, seed: int,
                     configs: Optional[Mapping[str, IngnnConfig]] = None) -> pd.DataFrame:
    """Feature importance after fusion, one row per dataset; `configs` overrides per dataset name."""
    rows = []
    for bundle in bundles:
        bundle_config = (configs or {}).get(bundle.name, config)
        records = repeat_runs(bundle, ingnn_runner(bundle_config, train_cfg, schedule), train_cfg, seed)
        rows.append(importance_row(bundle.name, records))
    return pd.DataFrame(rows, columns=IMPORTANCE_COLUMNS)
