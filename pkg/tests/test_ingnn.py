import numpy as np
import pytest
import torch

from graph.graph_core import Graph, normalized_adjacency, relabel
from model.ingnn import INGNN, IngnnConfig, fusion_weights, importance_scores, preprocess_features


def random_instance(seed, n=6, f=4, c=3, p=0.5):
    rng = np.random.default_rng(seed)
    edges = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < p]
    edges.append((0, 1))
    return Graph.from_edges(n, edges), rng.normal(size=(n, f)), rng.normal(size=(n, c))


def make_model(config, graph, x, num_classes=3, seed=0):
    model = INGNN(config, graph.num_nodes, x.shape[1], num_classes,
                  init_rng=np.random.default_rng(seed), dropout_rng=np.random.default_rng(seed + 1))
    model.params.fusion_logits.value[:] = np.random.default_rng(seed + 2).normal(size=3)
    for j, bn in enumerate(model.params.bn_chain):
        bn.freeze_stats(mean=0.1 * j, var=1.5 + j)
    return model


def finite_difference_check(model, graph, x, r, mode, h=1e-5):
    def loss():
        logits, _ = model.forward(graph, x, mode=mode)
        return float((logits * r).sum())

    model.params.zero_grad()
    _, cache = model.forward(graph, x, mode=mode)
    model.backward(cache, r, wrt='all')
    worst = 0.0
    for p in model.params.all_parameters():
        analytic = p.grad.copy()
        numeric = np.zeros_like(p.value)
        for idx in np.ndindex(p.shape):
            saved = p.value[idx]
            p.value[idx] = saved + h
            up = loss()
            p.value[idx] = saved - h
            down = loss()
            p.value[idx] = saved
            numeric[idx] = (up - down) / (2 * h)
        scale = max(1.0, np.abs(numeric).max())
        worst = max(worst, np.abs(analytic - numeric).max() / scale)
    return worst


CONFIGS = [
    dict(),
    dict(adj_powers=3, prop_steps=3),
    dict(fusion_mode='equal_sum'),
    dict(fusion_mode='concat', adj_powers=2),
    dict(disable='ego'),
    dict(disable='agg'),
    dict(disable='strc'),
    dict(self_loops=True, row_normalize_features=True),
    dict(strc_mode='literal', adj_powers=2),
]


@pytest.mark.parametrize('overrides', CONFIGS)
def test_gradients_match_finite_differences_eval(overrides):
    """End-to-end gradients with frozen BatchNorm statistics."""
    graph, x, r = random_instance(0)
    model = make_model(IngnnConfig(hidden=5, dropout=0.0, **overrides), graph, x)
    assert finite_difference_check(model, graph, x, r, 'eval') < 1e-4


@pytest.mark.parametrize('seed', range(20))
def test_gradients_match_finite_differences_random_instances(seed):
    graph, x, r = random_instance(seed)
    model = make_model(IngnnConfig(hidden=4, adj_powers=2, prop_steps=2, dropout=0.0), graph, x, seed=seed)
    assert finite_difference_check(model, graph, x, r, 'eval') < 1e-4


@pytest.mark.parametrize('overrides', [dict(), dict(adj_powers=2), dict(strc_mode='literal')])
def test_gradients_match_finite_differences_train_mode(overrides):
    """Batch statistics in train mode; dropout off so the forward pass is deterministic."""
    graph, x, r = random_instance(1)
    model = make_model(IngnnConfig(hidden=4, dropout=0.0, **overrides), graph, x)
    assert finite_difference_check(model, graph, x, r, 'train') < 1e-4


def test_gradients_match_torch_autograd():
    graph, x, r = random_instance(5, n=7)
    config = IngnnConfig(hidden=4, prop_steps=3, adj_powers=2, dropout=0.0)
    model = make_model(config, graph, x)
    model.params.zero_grad()
    _, cache = model.forward(graph, x, mode='eval')
    model.backward(cache, r, wrt='all')

    t = lambda a: torch.tensor(np.array(a), dtype=torch.float64, requires_grad=True)
    w_ego, w_strc, w_pred = (t(m.weight.value) for m in (model.params.w_ego, model.params.w_strc, model.params.w_pred))
    gammas = [t(bn.gamma.value) for bn in model.params.bn_chain]
    betas = [t(bn.beta.value) for bn in model.params.bn_chain]
    p = t(model.params.fusion_logits.value)
    adj = torch.tensor(graph.adjacency().toarray())
    a_hat = torch.tensor(normalized_adjacency(graph).toarray())
    tx = torch.tensor(x)

    h_ego = tx @ w_ego
    h, h_agg = h_ego, torch.zeros_like(h_ego)
    for _ in range(config.prop_steps):
        h = a_hat @ h
        h_agg = h_agg + h
    u, total = adj @ w_strc, 0
    for j, bn in enumerate(model.params.bn_chain):
        if j > 0:
            u = adj @ s
        s = gammas[j] * (u - torch.tensor(bn.running_mean)) / torch.sqrt(torch.tensor(bn.running_var) + bn.eps) + betas[j]
        total = total + s
    pi = torch.softmax(p, dim=0)
    logits = torch.relu(pi[0] * h_ego + pi[1] * h_agg + pi[2] * total) @ w_pred
    (logits * torch.tensor(r)).sum().backward()

    np.testing.assert_allclose(model.params.w_ego.weight.grad, w_ego.grad.numpy(), rtol=1e-8, atol=1e-10)
    np.testing.assert_allclose(model.params.w_strc.weight.grad, w_strc.grad.numpy(), rtol=1e-8, atol=1e-10)
    np.testing.assert_allclose(model.params.w_pred.weight.grad, w_pred.grad.numpy(), rtol=1e-8, atol=1e-10)
    np.testing.assert_allclose(model.params.fusion_logits.grad, p.grad.numpy(), rtol=1e-8, atol=1e-10)
    for bn, g, b in zip(model.params.bn_chain, gammas, betas):
        np.testing.assert_allclose(bn.gamma.grad, g.grad.numpy(), rtol=1e-8, atol=1e-10)
        np.testing.assert_allclose(bn.beta.grad, b.grad.numpy(), rtol=1e-8, atol=1e-10)


def test_weight_phase_leaves_fusion_gradient_zero_and_vice_versa():
    graph, x, r = random_instance(2)
    model = make_model(IngnnConfig(hidden=4, dropout=0.0), graph, x)
    model.params.zero_grad()
    _, cache = model.forward(graph, x, mode='train')
    model.backward(cache, r, wrt='weights')
    assert np.all(model.params.fusion_logits.grad == 0)
    assert np.any(model.params.w_ego.weight.grad != 0)

    model.params.zero_grad()
    _, cache = model.forward(graph, x, mode='eval')
    model.backward(cache, r, wrt='fusion')
    assert np.any(model.params.fusion_logits.grad != 0)
    assert all(np.all(p.grad == 0) for p in model.weight_parameters())


def test_stale_cache_is_rejected():
    graph, x, r = random_instance(3)
    model = make_model(IngnnConfig(hidden=3), graph, x)
    _, cache = model.forward(graph, x)
    model.forward(graph, x)
    with pytest.raises(RuntimeError):
        model.backward(cache, r)


def test_logits_shape_and_finiteness():
    graph, x, _ = random_instance(4)
    model = make_model(IngnnConfig(hidden=8, adj_powers=5, prop_steps=10), graph, x)
    logits, _ = model.forward(graph, x, mode='train')
    assert logits.shape == (6, 3)
    assert np.all(np.isfinite(logits))


@pytest.mark.parametrize('seed', range(3))
def test_node_permutation_equivariance(seed):
    """Relabeling nodes (and the rows of W_strc) permutes the logits the same way."""
    graph, x, _ = random_instance(seed, n=8)
    config = IngnnConfig(hidden=4, adj_powers=2, prop_steps=2)
    model = make_model(config, graph, x)
    perm = np.random.default_rng(seed).permutation(8)

    permuted = make_model(config, graph, x)
    state = model.state_dict()
    state['w_strc'] = np.empty_like(state['w_strc'])
    state['w_strc'][perm] = model.params.w_strc.weight.value
    permuted.load_state_dict(state)
    x2 = np.empty_like(x)
    x2[perm] = x

    logits, _ = model.forward(graph, x, mode='eval')
    logits2, _ = permuted.forward(relabel(graph, perm), x2, mode='eval')
    np.testing.assert_allclose(logits2[perm], logits, atol=1e-10)


def test_fusion_weights_respect_disabled_branches():
    pi = fusion_weights(np.array([0.0, 5.0, -1.0]), ('ego', 'strc'))
    assert pi[1] == 0.0
    assert pi.sum() == pytest.approx(1.0)
    np.testing.assert_allclose(fusion_weights(np.zeros(3), ('ego', 'agg', 'strc'), 'equal_sum'), [1 / 3] * 3)


def test_fusion_gradient_zero_for_non_adaptive_modes():
    graph, x, r = random_instance(6)
    model = make_model(IngnnConfig(hidden=3, fusion_mode='equal_sum', dropout=0.0), graph, x)
    assert model.fusion_parameters() == []
    model.params.zero_grad()
    _, cache = model.forward(graph, x)
    model.backward(cache, r, wrt='all')
    assert np.all(model.params.fusion_logits.grad == 0)


def test_config_rejects_all_branches_disabled():
    with pytest.raises(ValueError):
        IngnnConfig(disable=('ego', 'agg', 'strc'))
    with pytest.raises(ValueError):
        IngnnConfig(disable='typo')
    assert IngnnConfig(disable='strc, ego').disable == ('ego', 'strc')


def test_literal_mode_size_guard():
    with pytest.raises(ValueError):
        INGNN(IngnnConfig(strc_mode='literal'), 600, 2, 2, np.random.default_rng(0), np.random.default_rng(1))


def test_importance_scores_sum_to_one():
    rng = np.random.default_rng(0)
    scores = importance_scores(rng.normal(size=(4, 3)), rng.normal(size=(4, 3)), rng.normal(size=(4, 3)),
                               np.array([0.2, 0.3, 0.5]))
    assert sum(scores) == pytest.approx(1.0)
    with pytest.warns(RuntimeWarning):
        assert np.all(np.isnan(importance_scores(np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((2, 2)),
                                                 np.array([1 / 3] * 3))))


def test_model_importance_excludes_disabled_branch():
    graph, x, _ = random_instance(7)
    model = make_model(IngnnConfig(hidden=4, disable='strc'), graph, x)
    _, cache = model.forward(graph, x)
    scores = model.importance(cache)
    assert scores[2] == 0.0
    assert sum(scores) == pytest.approx(1.0)


def test_preprocess_row_normalization():
    out = preprocess_features(np.array([[1.0, -3.0], [0.0, 0.0]]), True)
    np.testing.assert_allclose(out, [[0.25, -0.75], [0.0, 0.0]])


def test_state_dict_round_trip_includes_running_stats():
    graph, x, _ = random_instance(8)
    model = make_model(IngnnConfig(hidden=3, adj_powers=2), graph, x)
    model.forward(graph, x, mode='train')
    state = model.state_dict()
    assert 'bn1.running_var' in state
    clone = make_model(IngnnConfig(hidden=3, adj_powers=2), graph, x, seed=9)
    clone.load_state_dict(state)
    np.testing.assert_array_equal(clone.forward(graph, x)[0], model.forward(graph, x)[0])


DISABLED_PARAMS = {
    'ego': lambda p: [p.w_ego.weight],
    'agg': lambda p: [],
    'strc': lambda p: [p.w_strc.weight] + [q for bn in p.bn_chain for q in bn.parameters()],
}


@pytest.mark.parametrize('disable', [('ego',), ('agg',), ('strc',), ('ego', 'strc'), ('agg', 'strc'), ('ego', 'agg')])
@pytest.mark.parametrize('mode', ['train', 'eval'])
def test_disabled_branch_parameters_get_zero_gradient(disable, mode):
    graph, x, r = random_instance(9)
    model = make_model(IngnnConfig(hidden=4, adj_powers=2, disable=disable), graph, x)
    model.params.zero_grad()
    _, cache = model.forward(graph, x, mode=mode)
    model.backward(cache, r, wrt='all')
    for branch in disable:
        for p in DISABLED_PARAMS[branch](model.params):
            assert np.all(p.grad == 0), p.name
    assert np.any(model.params.w_pred.weight.grad != 0)


def test_agg_has_its_own_projection_only_when_ego_is_disabled():
    graph, x, r = random_instance(10)
    assert make_model(IngnnConfig(hidden=4), graph, x).params.w_agg is None
    model = make_model(IngnnConfig(hidden=4, disable='ego', dropout=0.0), graph, x)
    assert 'w_agg' in model.state_dict()
    model.params.zero_grad()
    _, cache = model.forward(graph, x, mode='train')
    model.backward(cache, r, wrt='weights')
    assert np.any(model.params.w_agg.weight.grad != 0)
    assert np.all(model.params.w_ego.weight.grad == 0)
    assert np.all(cache.h_ego == 0)
