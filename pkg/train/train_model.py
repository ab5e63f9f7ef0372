import logging
import math
import time
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from graph.graph_core import DataSplit
from model.checkpoint import CheckpointFormatError, load_tensors, save_tensors
from model.ingnn import INGNN, IngnnConfig
from model.layers import Adam, Parameter, softmax_cross_entropy
from model.mlp import MLP
from train.prepare_dataset import DatasetBundle, sample_splits
from train.utils import derive_rng, derive_seed

logger = logging.getLogger(__name__)

# --- Configuration ---
# Alternating schedule and stopping rule of the bi-level scheme
W_EPOCHS_PER_ROUND = 20
P_EPOCHS_PER_ROUND = 10
P_LEARNING_RATE = 0.01
PATIENCE = 100
MAX_EPOCHS = 3000
NUM_RUNS = 5
INIT_SCHEME = 'glorot_uniform'
METRIC_COLUMNS = ['epoch', 'phase', 'train_loss', 'train_acc', 'valid_loss', 'valid_acc']

Model = Union[INGNN, MLP]


@dataclass
class Schedule:
    w_epochs_per_round: int = W_EPOCHS_PER_ROUND
    p_epochs_per_round: int = P_EPOCHS_PER_ROUND
    p_lr: float = P_LEARNING_RATE
    patience: int = PATIENCE
    max_epochs: int = MAX_EPOCHS

    def __post_init__(self):
        for name, value in asdict(self).items():
            if value <= 0:
                raise ValueError(f"schedule field {name} must be positive, got {value}")


@dataclass
class TrainConfig:
    lr: float = 0.01
    weight_decay: float = 0.0005
    bilevel: bool = True
    split_policy: str = 'planetoid'
    num_runs: int = NUM_RUNS

    def __post_init__(self):
        if self.lr <= 0 or self.weight_decay < 0:
            raise ValueError(f"need lr > 0 and weight_decay >= 0, got {self.lr}, {self.weight_decay}")
        if self.num_runs < 1:
            raise ValueError(f"num_runs must be >= 1, got {self.num_runs}")


@dataclass
class RunRecord:
    dataset: str
    model: str
    seed: int
    config: Dict[str, Any]
    train_config: Dict[str, Any]
    schedule: Dict[str, Any]
    metrics: List[Dict[str, Any]] = field(default_factory=list)
    best_epoch: int = -1
    best_valid_acc: float = 0.0
    test_acc: Optional[float] = None
    fusion_logits: List[float] = field(default_factory=list)
    fusion_weights: List[float] = field(default_factory=list)
    importance: List[float] = field(default_factory=list)
    init: str = INIT_SCHEME
    status: str = 'completed'
    message: str = ''
    # wall-clock values live only here so every other field is reproducible
    timing: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'RunRecord':
        return cls(**data)

    def metrics_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.metrics, columns=METRIC_COLUMNS)


def accuracy(logits: np.ndarray, labels: np.ndarray, index: np.ndarray) -> float:
    """Argmax accuracy over `index`; ties go to the lowest class id."""
    index = np.asarray(index, dtype=np.int64)
    if index.size == 0:
        raise ValueError("accuracy over an empty index set is undefined")
    pred = np.argmax(logits[index], axis=1)
    return float((pred == np.asarray(labels)[index]).mean())


def evaluate(model: Model, bundle: DatasetBundle, index: np.ndarray) -> float:
    logits, _ = model.forward(bundle.graph, bundle.features, mode='eval')
    return accuracy(logits, bundle.labels.values, index)


def build_model(config: IngnnConfig, bundle: DatasetBundle, seed: int) -> INGNN:
    return INGNN(config, bundle.num_nodes, bundle.num_features, bundle.num_classes,
                 init_rng=derive_rng(seed, 'init'), dropout_rng=derive_rng(seed, 'dropout'))


def _assert_zero(params: Sequence[Parameter], phase: str) -> None:
    for p in params:
        if np.any(p.grad != 0):
            raise AssertionError(f"{phase}-phase produced a gradient for {p.name}")


def _phase_for(epoch: int, schedule: Schedule, alternating: bool) -> str:
    if not alternating:
        return 'W'
    cycle = schedule.w_epochs_per_round + schedule.p_epochs_per_round
    return 'W' if epoch % cycle < schedule.w_epochs_per_round else 'P'


def fit_model(model: Model, bundle: DatasetBundle, split: DataSplit, train_cfg: TrainConfig,
              schedule: Schedule, seed: int, model_name: str = 'ingnn') -> RunRecord:
    """
    Train W on the train set and the fusion logits P on the valid set,
    alternating w_epochs_per_round W-epochs with p_epochs_per_round P-epochs.
    P-epochs run with dropout and BatchNorm in eval mode. Early stopping on
    valid accuracy; the best-valid parameters are restored before the single
    test evaluation. With bilevel disabled, W and P share one optimizer on the
    train set.
    """
    split.validate(bundle.num_nodes)
    started = time.perf_counter()
    labels = bundle.labels.values
    graph, x = bundle.graph, bundle.features
    weights, fusion = model.weight_parameters(), model.fusion_parameters()
    config = model.config.to_dict() if isinstance(model, INGNN) else {}

    record = RunRecord(dataset=bundle.name, model=model_name, seed=int(seed), config=config,
                       train_config=asdict(train_cfg), schedule=asdict(schedule))

    alternating = bool(train_cfg.bilevel and fusion)
    if train_cfg.bilevel or not fusion:
        opt_w = Adam(weights, lr=train_cfg.lr, weight_decay=train_cfg.weight_decay)
        opt_p = Adam(fusion, lr=schedule.p_lr, weight_decay=0.0) if fusion else None
    else:
        opt_w = Adam(weights + fusion, lr=train_cfg.lr, weight_decay=train_cfg.weight_decay)
        opt_p = None

    best_state = model.state_dict()
    best_valid, bad_epochs = -1.0, 0
    for epoch in range(schedule.max_epochs):
        phase = _phase_for(epoch, schedule, alternating)
        for p in weights + fusion:
            p.zero_grad()

        if phase == 'W':
            logits, cache = model.forward(graph, x, mode='train')
            loss, grad = softmax_cross_entropy(logits, labels, split.train)
            if not math.isfinite(loss):
                return _diverged(record, epoch, phase, loss, started)
            if alternating or not fusion:
                model.backward(cache, grad, wrt='weights')
                _assert_zero(fusion, 'W')
            else:
                model.backward(cache, grad, wrt='all')
            opt_w.step()
        else:
            logits, cache = model.forward(graph, x, mode='eval')
            loss, grad = softmax_cross_entropy(logits, labels, split.valid)
            if not math.isfinite(loss):
                return _diverged(record, epoch, phase, loss, started)
            model.backward(cache, grad, wrt='fusion')
            _assert_zero(weights, 'P')
            opt_p.step()

        logits, _ = model.forward(graph, x, mode='eval')
        train_loss, _ = softmax_cross_entropy(logits, labels, split.train)
        valid_loss, _ = softmax_cross_entropy(logits, labels, split.valid)
        train_acc = accuracy(logits, labels, split.train)
        valid_acc = accuracy(logits, labels, split.valid)
        if not (math.isfinite(train_loss) and math.isfinite(valid_loss)):
            return _diverged(record, epoch, phase, train_loss if not math.isfinite(train_loss) else valid_loss, started)
        record.metrics.append({'epoch': epoch, 'phase': phase, 'train_loss': train_loss, 'train_acc': train_acc,
                               'valid_loss': valid_loss, 'valid_acc': valid_acc})

        if valid_acc > best_valid:
            best_valid, bad_epochs = valid_acc, 0
            best_state = model.state_dict()
            record.best_epoch = epoch
        else:
            bad_epochs += 1
            if bad_epochs >= schedule.patience:
                logger.info(f"Early stop at epoch {epoch}: no valid improvement for {schedule.patience} epochs")
                break

    model.load_state_dict(best_state)
    record.best_valid_acc = best_valid
    logits, cache = model.forward(graph, x, mode='eval')
    record.test_acc = accuracy(logits, labels, split.test) if split.test.size else None
    if isinstance(model, INGNN):
        record.fusion_logits = model.params.fusion_logits.value.tolist()
        record.fusion_weights = model.fusion_weights().tolist()
        record.importance = list(model.importance(cache))
    record.timing = _timing(started)
    logger.info(f"{bundle.name} [{model_name}] seed={seed}: best valid {best_valid:.4f} at epoch "
                f"{record.best_epoch}, test {record.test_acc}")
    return record


def _timing(started: float) -> Dict[str, Any]:
    return {'wall_time_s': round(time.perf_counter() - started, 3),
            'finished_at': datetime.now(timezone.utc).isoformat()}


def _diverged(record: RunRecord, epoch: int, phase: str, loss: float, started: float) -> RunRecord:
    record.status = 'diverged'
    record.message = f"non-finite loss ({loss}) at epoch {epoch} during the {phase}-phase"
    record.timing = _timing(started)
    logger.error(f"{record.dataset}: training aborted, {record.message}")
    return record


def bilevel_train(bundle: DatasetBundle, split: DataSplit, config: IngnnConfig, train_cfg: TrainConfig,
                  schedule: Schedule, seed: int) -> RunRecord:
    model = build_model(config, bundle, seed)
    return fit_model(model, bundle, split, train_cfg, schedule, seed)


def mlp_baseline(bundle: DatasetBundle, split: DataSplit, hidden: int, train_cfg: TrainConfig,
                 schedule: Schedule, seed: int, dropout: float = 0.5,
                 row_normalize_features: bool = False) -> RunRecord:
    model = MLP(bundle.num_features, hidden, bundle.num_classes, dropout,
                init_rng=derive_rng(seed, 'init'), dropout_rng=derive_rng(seed, 'dropout'),
                row_normalize_features=row_normalize_features)
    record = fit_model(model, bundle, split, train_cfg, schedule, seed, model_name='mlp')
    record.config = {'hidden': hidden, 'dropout': dropout, 'row_normalize_features': row_normalize_features}
    return record


def split_for_run(bundle: DatasetBundle, policy: str, seed: int, index: int) -> DataSplit:
    """Stored split `index` when the bundle ships splits, otherwise a freshly sampled one."""
    if bundle.splits:
        return bundle.splits[index % len(bundle.splits)]
    return sample_splits(bundle.labels, policy, seed, index)


Runner = Callable[[DatasetBundle, DataSplit, int], RunRecord]


def repeat_runs(bundle: DatasetBundle, runner: Runner, train_cfg: TrainConfig, seed: int) -> List[RunRecord]:
    """Run `runner` over num_runs splits, each with its own derived seed."""
    records = []
    for i in range(train_cfg.num_runs):
        split = split_for_run(bundle, train_cfg.split_policy, seed, i)
        records.append(runner(bundle, split, derive_seed(seed, i)))
    return records


def ingnn_runner(config: IngnnConfig, train_cfg: TrainConfig, schedule: Schedule) -> Runner:
    return lambda bundle, split, run_seed: bilevel_train(bundle, split, config, train_cfg, schedule, run_seed)


def mlp_runner(hidden: int, train_cfg: TrainConfig, schedule: Schedule, dropout: float = 0.5) -> Runner:
    return lambda bundle, split, run_seed: mlp_baseline(bundle, split, hidden, train_cfg, schedule, run_seed, dropout)


def summarize(records: Sequence[RunRecord]) -> Dict[str, float]:
    """Mean and (population) std of test and best-valid accuracy over completed runs."""
    done = [r for r in records if r.status == 'completed' and r.test_acc is not None]
    if not done:
        return {'runs': 0, 'mean_test': float('nan'), 'std_test': float('nan'),
                'mean_valid': float('nan'), 'std_valid': float('nan')}
    test = np.array([r.test_acc for r in done])
    valid = np.array([r.best_valid_acc for r in done])
    return {'runs': len(done), 'mean_test': float(test.mean()), 'std_test': float(test.std()),
            'mean_valid': float(valid.mean()), 'std_valid': float(valid.std())}


def save_model(model: INGNN, path: str, seed: int, dataset: str = '', split_policy: str = 'planetoid',
               split_index: int = 0) -> str:
    """Checkpoint with every parameter and BatchNorm running statistic, plus what load_model needs."""
    meta = {'config': model.config.to_dict(), 'num_nodes': model.num_nodes, 'num_features': model.num_features,
            'num_classes': model.num_classes, 'seed': int(seed), 'dataset': dataset,
            'split_policy': split_policy, 'split_index': int(split_index)}
    save_tensors(path, model.state_dict(), meta)
    return path


def load_model(path: str) -> Tuple[INGNN, Dict[str, Any]]:
    tensors, meta = load_tensors(path)
    missing = [k for k in ('config', 'num_nodes', 'num_features', 'num_classes') if k not in meta]
    if missing:
        raise CheckpointFormatError(f"{path}: checkpoint metadata lacks {missing}")
    seed = int(meta.get('seed', 0))
    model = INGNN(IngnnConfig(**meta['config']), meta['num_nodes'], meta['num_features'], meta['num_classes'],
                  init_rng=derive_rng(seed, 'init'), dropout_rng=derive_rng(seed, 'dropout'))
    model.load_state_dict(tensors)
    return model, meta
