import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import ssdrl.agent as agent_mod
from ssdrl.agent import (
    QFunction,
    ReplayBuffer,
    TrainConfig,
    Transition,
    TransitionBatch,
    build_q_function,
    encode_state,
    evaluate,
    infer_label,
    pretrain_vae,
    q_target,
    run_episode,
    select_action,
    td_loss_and_grads,
    td_update,
    train,
)
from ssdrl.environment import FingerprintSample, GridWorld, generate_dataset
from ssdrl.features import FeatureConfig, feature_dim
from ssdrl.nn_core import SGD, Adam, DenseNet, ShapeError, finite_diff_check, make_rng
from ssdrl.vae import VaeModel

CHI2_7DF_99 = 18.475  # 0.99 quantile of chi-square with 7 degrees of freedom


def tiny_q(seed=0, obs_dim=2, hidden=2):
    # 3 * obs_dim + 2 inputs -> hidden -> 8
    net = DenseNet([3 * obs_dim + 2, hidden, 8], ["tanh", "identity"], make_rng(seed))
    return QFunction(net, obs_dim)


def random_batch(rng, n, dim=8, terminal_p=0.3):
    return TransitionBatch(
        rng.normal(size=(n, dim)),
        rng.integers(0, 8, size=n),
        rng.normal(size=n),
        rng.normal(size=(n, dim)),
        rng.random(n) < terminal_p,
    )


def test_epsilon_schedule():
    cfg = TrainConfig()
    assert cfg.epsilon(0, 100) == 1.0
    assert cfg.epsilon(25, 100) == pytest.approx(0.55)
    assert cfg.epsilon(50, 100) == pytest.approx(0.1)
    assert cfg.epsilon(99, 100) == pytest.approx(0.1)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(gamma=1.0)
    with pytest.raises(ValueError):
        TrainConfig(mode="unsupervised")
    with pytest.raises(ValueError):
        TrainConfig(epochs=-1)


def test_encode_state():
    w = GridWorld(rows=5, cols=3)
    s = encode_state(w, np.ones((3, 4)), (4, 1))
    assert s.shape == (14,)
    assert np.array_equal(s[-2:], [1.0, 0.5])


def test_select_action_uniform_when_epsilon_one():
    q = tiny_q()
    rng = make_rng(1)
    s = np.zeros(8)
    counts = np.bincount([select_action(q, s, 1.0, rng) for _ in range(10_000)], minlength=8)
    chi2 = np.sum((counts - 1250.0) ** 2 / 1250.0)
    assert chi2 < CHI2_7DF_99


def test_select_action_greedy_forced():
    net = DenseNet([8, 8], ["identity"])
    net.layers[0].bias[0] = 1.0
    q = QFunction(net, 2)
    rng = make_rng(0)
    assert all(select_action(q, make_rng(i).normal(size=8), 0.0, rng) == 0 for i in range(50))


def test_select_action_ties_lowest_index():
    q = QFunction(DenseNet([8, 8], ["identity"]), 2)
    assert select_action(q, np.zeros(8), 0.0, make_rng(0)) == 0
    q.head.layers[0].bias[[3, 5]] = 2.0
    assert select_action(q, np.zeros(8), 0.0, make_rng(0)) == 3


def test_select_action_greedy_deterministic():
    q = tiny_q(3)
    s = make_rng(1).normal(size=8)
    assert len({select_action(q, s, 0.0, make_rng(i)) for i in range(20)}) == 1
    with pytest.raises(ValueError):
        select_action(q, s, 1.5, make_rng(0))


@given(st.floats(0.01, 100.0), st.integers(0, 1000))
def test_greedy_invariant_to_head_scale(c, seed):
    q = tiny_q(seed)
    s = make_rng(seed).normal(size=8)
    a = select_action(q, s, 0.0, None)
    last = q.head.layers[-1]
    last.weight *= c
    last.bias *= c
    assert select_action(q, s, 0.0, None) == a


def test_q_target_examples():
    q = tiny_q()
    s = np.zeros(8)
    assert q_target(2.5, s, True, q, 0.9) == 2.5
    assert q_target(-1.0, s, False, q, 0.0) == -1.0
    net = DenseNet([8, 8], ["identity"])
    net.layers[0].bias[:] = [0, 2, 1, 0, 0, 0, 0, 0]
    assert q_target(1.0, s, False, QFunction(net, 2), 0.9) == pytest.approx(2.8)
    with pytest.raises(ValueError):
        q_target(1.0, s, False, q, 1.0)


@settings(max_examples=50)
@given(st.integers(0, 10_000))
def test_terminal_target_ignores_next_state(seed):
    rng = make_rng(seed)
    q = tiny_q(seed)
    b = random_batch(rng, 6, terminal_p=1.0)
    xi = q_target(b.r, b.s_next, b.terminal, q, 0.9)
    xi2 = q_target(b.r, b.s_next + rng.normal(size=b.s_next.shape) * 10, b.terminal, q, 0.9)
    assert np.array_equal(xi, xi2)
    assert np.array_equal(xi, b.r)


def test_batch_target_matches_scalar():
    rng = make_rng(4)
    q = tiny_q(4)
    b = random_batch(rng, 7)
    xi = q_target(b.r, b.s_next, b.terminal, q, 0.8)
    for i in range(7):
        assert xi[i] == pytest.approx(q_target(b.r[i], b.s_next[i], b.terminal[i], q, 0.8), rel=1e-14)


def test_td_fixed_point():
    rng = make_rng(5)
    q = tiny_q(5)
    b = random_batch(rng, 5, terminal_p=1.0)
    b.r = q.forward(b.s, cache=False)[np.arange(5), b.a]
    before = [p.copy() for p in q.params()]
    loss, grads = td_loss_and_grads(q, b, 0.9)
    assert loss == pytest.approx(0.0, abs=1e-28)
    assert all(np.allclose(g, 0.0, atol=1e-15) for g in grads)
    td_update(q, b, SGD(0.1), 0.9)
    assert all(np.allclose(a, p, atol=1e-15) for a, p in zip(before, q.params()))


def test_td_descent_single_param():
    q = QFunction(DenseNet([8, 8], ["identity"]), 2)
    t = [Transition(np.zeros(8), 2, 1.0, np.zeros(8), True)]
    opt = SGD(0.1)
    pre = td_update(q, t, opt, 0.9)
    post, _ = td_loss_and_grads(q, t, 0.9)
    assert pre == pytest.approx(1.0)
    assert post < pre


@pytest.mark.parametrize("seed", range(3))
def test_td_gradient_finite_difference(seed):
    rng = make_rng(seed)
    q = tiny_q(seed)
    assert q.head.n_params <= 50
    b = random_batch(rng, 6)
    xi = q_target(b.r, b.s_next, b.terminal, q, 0.9)
    frozen = TransitionBatch(b.s, b.a, xi, b.s_next, np.ones(6, bool))

    def loss_fn():
        return td_loss_and_grads(q, frozen, 0.9)

    assert finite_diff_check(loss_fn, q.head) < 1e-4


def test_td_rejects_empty():
    with pytest.raises(ValueError):
        td_loss_and_grads(tiny_q(), [], 0.9)


def test_replay_fifo_eviction():
    buf = ReplayBuffer(5, make_rng(0))
    for i in range(8):
        buf.add(Transition(np.full(3, i), i % 8, float(i), np.zeros(3), False))
    assert len(buf) == 5 and buf.inserted == 8
    assert buf.contents().r.tolist() == [3.0, 4.0, 5.0, 6.0, 7.0]


def test_replay_rejects_bad_transitions():
    buf = ReplayBuffer(5, make_rng(0))
    with pytest.raises(ValueError):
        buf.add(Transition(np.zeros(3), 8, 0.0, np.zeros(3), False))
    with pytest.raises(ValueError):
        buf.add(Transition(np.zeros(3), 0, np.inf, np.zeros(3), False))
    with pytest.raises(ValueError):
        buf.sample(2)
    with pytest.raises(ValueError):
        ReplayBuffer(0)


def test_replay_uniform_sampling():
    buf = ReplayBuffer(8, make_rng(0))
    for i in range(8):
        buf.add(Transition(np.zeros(2), 0, float(i), np.zeros(2), False))
    rng = make_rng(1)
    draws = np.concatenate([buf.sample(32, rng).r for _ in range(500)]).astype(int)
    counts = np.bincount(draws, minlength=8)
    expected = len(draws) / 8
    assert np.sum((counts - expected) ** 2 / expected) < CHI2_7DF_99


def test_infer_label_zero_classifier():
    w = GridWorld(rows=3, cols=3)
    vae = VaeModel(169, 9, 2, (4,), 13)
    vae.encoder_y.layers[-1].weight[:] = 0.0
    assert infer_label(vae, np.zeros((3, 169)), w) == (0, 0)
    with pytest.raises(RuntimeError):
        infer_label(None, np.zeros((3, 169)), w)


def test_infer_label_in_bounds():
    w = GridWorld(rows=3, cols=4)
    vae = VaeModel(169, 12, 2, (8,), 13, rng=make_rng(2))
    rng = make_rng(3)
    for _ in range(50):
        assert w.contains(infer_label(vae, rng.random((3, 169)), w))


def test_infer_label_learns_noiseless_grid():
    w = GridWorld(rows=3, cols=3, noise_sigma=0.0)
    data = generate_dataset(w, 1, 0, make_rng(0))
    cfg = TrainConfig(mode="semi_supervised", vae_epochs=300, vae_learning_rate=0.01)
    fc = FeatureConfig()
    vae, _ = pretrain_vae(data, w, fc, cfg, make_rng(1))
    from ssdrl.features import featurize_array

    hits = sum(infer_label(vae, featurize_array(fc, s.readings), w) == s.label for s in data)
    assert hits >= 8


def test_qfunction_shapes():
    with pytest.raises(ShapeError):
        QFunction(DenseNet([5, 8], ["identity"]), 2)
    with pytest.raises(ShapeError):
        QFunction(DenseNet([8, 7], ["identity"]), 2)
    q = build_q_function(TrainConfig(), 169, make_rng(0))
    assert q.head.sizes == [509, 64, 32, 8]


def semi_q(freeze=True):
    vae = VaeModel(4, 6, 2, (5,), 2, rng=make_rng(0))
    cfg = TrainConfig(mode="semi_supervised", head_hidden=3, freeze_encoder=freeze)
    return build_q_function(cfg, 4, make_rng(1), vae), vae


def test_semi_q_uses_vae_hidden_layer():
    q, vae = semi_q()
    assert q.head.sizes == [7, 3, 8]
    assert q.encoder.layers[0] is vae.encoder_y.layers[0]
    s = make_rng(2).random(14)
    h = vae.hidden(s[:-2].reshape(3, 4).mean(axis=0))
    assert np.allclose(q.forward(s), q.head.forward(np.concatenate([h, s[-2:]]), cache=False))


def test_compact_state_equivalence():
    q, _ = semi_q()
    s = make_rng(3).random((5, 14))
    c = q.compact(s)
    assert c.shape == (5, 7)
    assert np.array_equal(q.forward(c, cache=False), q.forward(s, cache=False))
    # unfrozen encoders keep full states
    q2, _ = semi_q(freeze=False)
    assert q2.compact(s).shape == (5, 14)


def test_unfrozen_encoder_gradients():
    q, _ = semi_q(freeze=False)
    rng = make_rng(4)
    b = random_batch(rng, 4, dim=14)
    b.s = rng.random((4, 14))
    xi = q_target(b.r, rng.random((4, 14)), b.terminal, q, 0.9)
    frozen = TransitionBatch(b.s, b.a, xi, b.s_next, np.ones(4, bool))
    assert len(q.params()) == 6
    assert finite_diff_check(lambda: td_loss_and_grads(q, frozen, 0.9), [q.encoder, q.head]) < 1e-5


def episode_setup(horizon=10, label=(2, 2)):
    w = GridWorld(rows=5, cols=5, noise_sigma=0.0)
    sample = generate_dataset(w, 1, 0, make_rng(0))[w.cell_index(label)]
    cfg = TrainConfig(horizon=horizon, hidden=(8,), warmup=4, batch_size=4)
    q = build_q_function(cfg, 169, make_rng(1))
    return w, sample, cfg, q


def test_episode_zero_horizon():
    w, sample, cfg, q = episode_setup(horizon=0)
    buf = ReplayBuffer(100, make_rng(0))
    stats = run_episode(w, sample, q, None, cfg, buf, Adam(1e-3), make_rng(0), 1.0)
    assert len(buf) == 0 and stats.steps == 0 and stats.total_reward == 0.0


def test_episode_starting_on_target():
    w, sample, cfg, q = episode_setup()
    # find a seed whose first draw starts on (2, 2)
    seed = next(s for s in range(1000) if w.index_cell(make_rng(s).integers(25)) == (2, 2))
    buf = ReplayBuffer(100, make_rng(0))
    stats = run_episode(w, sample, q, None, cfg, buf, Adam(1e-3), make_rng(seed), 1.0)
    assert stats.reached and stats.steps == 0
    assert stats.final_reward == w.cap_reward()
    assert len(buf) == 0


def test_replay_grows_by_steps():
    w, sample, cfg, q = episode_setup()
    buf = ReplayBuffer(1000, make_rng(0))
    rng = make_rng(5)
    total = 0
    for _ in range(10):
        stats = run_episode(w, sample, q, None, cfg, buf, Adam(1e-3), rng, 1.0)
        total += stats.steps
        assert len(buf) == total
        assert stats.steps <= cfg.horizon


def test_unlabeled_episode_uses_inferred_cell():
    w = GridWorld(rows=3, cols=3)
    vae = VaeModel(169, 9, 2, (64,), 13, rng=make_rng(0))
    vae.encoder_y.layers[-1].weight[:] = 0.0
    vae.encoder_y.layers[-1].bias[:] = 0.0
    vae.encoder_y.layers[-1].bias[4] = 5.0  # always infer the centre cell
    cfg = TrainConfig(mode="semi_supervised", head_hidden=4, horizon=6)
    q = build_q_function(cfg, 169, make_rng(1), vae)
    sample = FingerprintSample(np.full((3, 13), -60.0))
    stats = run_episode(w, sample, q, vae, cfg, None, None, make_rng(2), 1.0, learn=False)
    assert not stats.labeled
    assert stats.start_distance == pytest.approx(w.cell_distance(stats_start(w, 2), (1, 1)))


def stats_start(world, seed):
    return world.index_cell(make_rng(seed).integers(world.n_cells))


def test_train_zero_epochs():
    w = GridWorld(rows=3, cols=3)
    data = generate_dataset(w, 1, 0, make_rng(0))
    agent = train(data, TrainConfig(epochs=0), make_rng(1), w)
    assert agent.metrics == [] and agent.q is None


def test_train_rejects_bad_input():
    w = GridWorld(rows=3, cols=3)
    with pytest.raises(ValueError):
        train([], TrainConfig(), make_rng(0), w)
    with pytest.raises(ValueError):
        train(generate_dataset(w, 0, 3, make_rng(0)), TrainConfig(), make_rng(0), w)


def test_supervised_convergence_3x3():
    w = GridWorld(rows=3, cols=3, noise_sigma=0.0)
    data = generate_dataset(w, 1, 0, make_rng(0))
    agent = train(data, TrainConfig(epochs=200, hidden=(32,)), make_rng(1), w)
    first, last = agent.metrics[0].mean_distance_m, np.mean([m.mean_distance_m for m in agent.metrics[-10:]])
    assert last < first
    greedy = evaluate(agent, data, make_rng(2))
    assert np.mean([s.final_distance for s in greedy]) < np.mean([s.start_distance for s in greedy])


def test_train_metrics_deterministic(tmp_path):
    w = GridWorld(rows=3, cols=3)
    data = generate_dataset(w, 1, 5, make_rng(0))
    cfg = TrainConfig(mode="semi_supervised", epochs=3, vae_epochs=2, head_hidden=4, vae_hidden=8)
    train(data, cfg, make_rng(1), w, metrics_path=tmp_path / "a.csv")
    train(data, cfg, make_rng(1), w, metrics_path=tmp_path / "b.csv")
    a = (tmp_path / "a.csv").read_bytes()
    assert a == (tmp_path / "b.csv").read_bytes()
    lines = a.decode().splitlines()
    assert lines[0] == "epoch,mode,mean_reward,mean_distance_m,epsilon,labeled_fraction"
    assert len(lines) == 4


def test_supervised_never_touches_unlabeled(monkeypatch):
    w = GridWorld(rows=3, cols=3)
    data = generate_dataset(w, 1, 6, make_rng(0))
    seen = []
    real_reset = agent_mod.reset

    def counting_reset(world, sample, *args, **kwargs):
        seen.append(sample.label)
        return real_reset(world, sample, *args, **kwargs)

    monkeypatch.setattr(agent_mod, "reset", counting_reset)
    train(data, TrainConfig(epochs=2, hidden=(4,)), make_rng(1), w)
    assert len(seen) == 18 and None not in seen
    seen.clear()
    train(data, TrainConfig(mode="semi_supervised", epochs=1, vae_epochs=1, vae_hidden=4, head_hidden=4), make_rng(1), w)
    assert seen.count(None) == 6


def test_evaluate_needs_labels():
    w = GridWorld(rows=3, cols=3)
    data = generate_dataset(w, 1, 1, make_rng(0))
    agent = train(data, TrainConfig(epochs=1, hidden=(4,)), make_rng(1), w)
    with pytest.raises(ValueError):
        evaluate(agent, data, make_rng(0))
