import numpy as np
import pytest

from fedreact.baselines import (ClientRound, ec_mma_round, flsc_round, ifca_round,
                                sc_mma_round, snapshot_cluster_round)
from fedreact.metrics import rand_score
from fedreact.numerics import rng_stream
from fedreact.taskmodel import TaskModelParams, TrainConfig, task_loss


def _clf(w, b=0.0):
    return TaskModelParams("classification", np.atleast_2d(np.asarray(w, float)),
                           np.atleast_1d(np.asarray(b, float)))


def _reg(w, b=0.0):
    return TaskModelParams("regression", np.asarray(w, float), np.array([float(b)]))


def test_snapshot_identical_params_any_partition_same_models():
    m = _clf([0.4, 0.6], 0.2)
    labels, models = snapshot_cluster_round([m] * 5, [4] * 5, 2)
    for model in models.values():
        np.testing.assert_array_equal(model.vector, m.vector)


def test_snapshot_orthogonal_groups_recovers_groupwise_means():
    group_a = [_clf([1.0, 0.0], 0.0), _clf([2.0, 0.0], 0.0)]
    group_b = [_clf([0.0, 1.0], 0.0), _clf([0.0, 4.0], 0.0)]
    labels, models = snapshot_cluster_round(group_a + group_b, [1, 1, 1, 1], 2)
    assert rand_score(labels, [0, 0, 1, 1]) == 1.0
    c_a = labels[0]
    np.testing.assert_allclose(models[c_a].vector, [1.5, 0.0, 0.0])
    np.testing.assert_allclose(models[labels[2]].vector, [0.0, 2.5, 0.0])


def test_snapshot_c_equals_k_keeps_every_client():
    params = [_clf([1.0, float(i)]) for i in range(4)]
    labels, models = snapshot_cluster_round(params, [2] * 4, 4)
    assert sorted(labels) == [0, 1, 2, 3]
    for i, lab in enumerate(labels):
        np.testing.assert_array_equal(models[lab].vector, params[i].vector)


def test_ec_mma_with_zero_variance_equals_sc_mma():
    # noise-free blocks: within-block variance is 0, so a_t = 0 and the
    # evolutionary round degenerates to the snapshot round
    params = [_clf([1.0, 0.0]), _clf([1.0, 0.0]), _clf([0.0, 1.0]), _clf([0.0, 1.0])]
    sizes = [3, 3, 3, 3]
    labels_sc, models_sc = sc_mma_round(params, sizes, 2)
    psi, a_t, labels_ec, models_ec = ec_mma_round(np.zeros((4, 4)), params, sizes, 2)
    assert a_t == 0.0
    np.testing.assert_array_equal(labels_sc, labels_ec)
    for c in models_sc:
        np.testing.assert_array_equal(models_sc[c].vector, models_ec[c].vector)


def test_first_round_sc_and_ec_assignments_coincide():
    # psi_0 = 0: the smoothed matrix is (1 - a_1) W_1, a positive rescaling
    # of W_1, so the merge order and hence the labels match snapshot's
    rng = rng_stream(0, "base")
    params = [_clf(rng.standard_normal(4)) for _ in range(6)]
    sizes = [2] * 6
    labels_sc, _ = sc_mma_round(params, sizes, 2)
    _, a_t, labels_ec, _ = ec_mma_round(np.zeros((6, 6)), params, sizes, 2)
    np.testing.assert_array_equal(labels_sc, labels_ec)


def test_both_clusterings_recover_stationary_blocks():
    rng = rng_stream(1, "base")
    base_a = np.array([3.0, 0.0, 0.0])
    base_b = np.array([0.0, 3.0, 0.0])
    params = [_clf(base_a + 0.05 * rng.standard_normal(3)) for _ in range(4)] + \
             [_clf(base_b + 0.05 * rng.standard_normal(3)) for _ in range(4)]
    truth = [0] * 4 + [1] * 4
    labels_sc, _ = sc_mma_round(params, [1] * 8, 2)
    _, _, labels_ec, _ = ec_mma_round(np.zeros((8, 8)), params, [1] * 8, 2)
    assert rand_score(labels_sc, truth) == 1.0
    assert rand_score(labels_ec, truth) == 1.0


def _client(k, feats, y, seed):
    return ClientRound(k, feats, y, len(y), rng_stream(seed, "client", k))


def test_ifca_single_cluster_is_plain_fedavg():
    rng = rng_stream(2, "ifca")
    feats = [rng.standard_normal((8, 2)) for _ in range(3)]
    targets = [f @ np.array([1.0, -1.0]) for f in feats]
    model = _reg([0.1, 0.1], 0.0)
    clients = [_client(k, feats[k], targets[k], 3) for k in range(3)]
    new_models, chosen = ifca_round([model], clients, TrainConfig(steps=5, lr=0.01))
    assert set(chosen.values()) == {0}
    # oracle: train each client separately from the same init and average
    from fedreact.taskmodel import linreg_train
    trained = [linreg_train(model, feats[k], targets[k], TrainConfig(steps=5, lr=0.01),
                            rng_stream(3, "client", k)) for k in range(3)]
    want = np.mean([p.vector for p in trained], axis=0)
    np.testing.assert_allclose(new_models[0].vector, want, atol=1e-12)


def test_ifca_client_joins_zero_loss_cluster():
    rng = rng_stream(4, "ifca")
    feats = rng.standard_normal((10, 2))
    w_true = np.array([2.0, -1.0])
    targets = feats @ w_true
    exact = _reg(w_true, 0.0)   # zero loss on this client
    wrong = _reg([-5.0, 5.0], 3.0)
    clients = [_client(0, feats, targets, 5)]
    _, chosen = ifca_round([wrong, exact], clients, TrainConfig(steps=1, lr=0.001))
    assert chosen[0] == 1


def test_ifca_empty_cluster_keeps_previous_model():
    rng = rng_stream(6, "ifca")
    feats = rng.standard_normal((6, 2))
    targets = feats @ np.array([1.0, 1.0])
    good = _reg([1.0, 1.0], 0.0)
    unused = _reg([9.0, 9.0], 9.0)
    clients = [_client(0, feats, targets, 7)]
    new_models, _ = ifca_round([good, unused], clients, TrainConfig(steps=2, lr=0.001))
    np.testing.assert_array_equal(new_models[1].vector, unused.vector)


def _two_cluster_sim(seed, rounds=20, clients_per=4):
    """Separable regression toy: clusters use opposite readout directions."""
    rng = rng_stream(seed, "sim")
    readouts = [np.array([1.0, 0.0]), np.array([-1.0, 0.0])]
    truth = [k // clients_per for k in range(2 * clients_per)]
    models = [_reg(0.01 * rng.standard_normal(2), 0.0) for _ in range(2)]
    cfg = TrainConfig(steps=50, batch=16, lr=0.05)
    final_rand = 0.0
    for t in range(rounds):
        clients = []
        for k in range(2 * clients_per):
            feats = rng.standard_normal((16, 2))
            targets = feats @ readouts[truth[k]]
            clients.append(ClientRound(k, feats, targets, 16,
                                       rng_stream(seed, "train", k, t)))
        models, chosen = ifca_round(models, clients, cfg)
        final_rand = rand_score([chosen[k] for k in sorted(chosen)], truth)
    return final_rand


def test_ifca_converges_on_separable_two_cluster_toy():
    wins = sum(_two_cluster_sim(seed) == 1.0 for seed in range(5))
    assert wins >= 4


def test_flsc_tau_one_matches_ifca_trajectory():
    rng = rng_stream(8, "flsc")
    feats = [rng.standard_normal((10, 2)) for _ in range(4)]
    targets = [f @ np.array([1.0, 2.0]) for f in feats]
    models = [_reg([0.1, 0.0]), _reg([0.0, 0.1])]
    cfg = TrainConfig(steps=10, lr=0.01)
    clients_a = [_client(k, feats[k], targets[k], 9) for k in range(4)]
    clients_b = [_client(k, feats[k], targets[k], 9) for k in range(4)]
    ifca_models, chosen = ifca_round(models, clients_a, cfg)
    flsc_models, top1, picks = flsc_round(models, clients_b, cfg, tau=1)
    assert chosen == top1
    for a, b in zip(ifca_models, flsc_models):
        np.testing.assert_array_equal(a.vector, b.vector)


def test_flsc_tau_equals_c_makes_all_models_equal():
    rng = rng_stream(10, "flsc")
    feats = [rng.standard_normal((10, 2)) for _ in range(3)]
    targets = [f @ np.array([0.5, 0.5]) for f in feats]
    models = [_reg([0.3, 0.0]), _reg([0.0, 0.3])]
    clients = [_client(k, feats[k], targets[k], 11) for k in range(3)]
    new_models, _, picks = flsc_round(models, clients, TrainConfig(steps=5, lr=0.01),
                                      tau=2)
    assert all(p == (0, 1) or p == (1, 0) for p in picks.values())
    np.testing.assert_array_equal(new_models[0].vector, new_models[1].vector)


def test_flsc_soft_membership_recovers_three_clusters():
    # tau=2 memberships need more models than data clusters to specialize;
    # with 6 models each cluster captures its own pair and the hard (top-1)
    # projection separates the ground truth
    rng = rng_stream(12, "flsc")
    readouts = [np.array([1.0, 0.0]), np.array([-1.0, 0.0]), np.array([0.0, 1.5])]
    truth = [k // 3 for k in range(9)]
    models = [_reg(0.01 * rng.standard_normal(2)) for _ in range(6)]
    cfg = TrainConfig(steps=50, batch=16, lr=0.05)
    for t in range(25):
        clients = []
        for k in range(9):
            feats = rng.standard_normal((16, 2))
            targets = feats @ readouts[truth[k]]
            clients.append(ClientRound(k, feats, targets, 16,
                                       rng_stream(12, "train", k, t)))
        models, top1, _ = flsc_round(models, clients, cfg, tau=2)
    hard = [top1[k] for k in sorted(top1)]
    assert rand_score(hard, truth) >= 0.9
