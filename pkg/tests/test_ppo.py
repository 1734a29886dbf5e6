import logging
import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_force_gae
from tankrl import ppo
from tankrl.policy import ActorCritic, actor_forward, critic_forward, sample_and_logprob
from tankrl.ppo import PpoConfig, RolloutBuffer, UpdateAborted

RAW = PpoConfig(reward_scale=1.0)


def net(seed=0):
    return ActorCritic(rng=np.random.default_rng(seed))


def make_buffer(params, inputs, residual, reward, boundary=None):
    """Buffer with log-probs/values taken from `params` so that ratios start at 1."""
    inputs = np.asarray(inputs, dtype=float)
    residual = np.asarray(residual, dtype=float)
    n = len(residual)
    with torch.no_grad():
        lp, _ = params.log_prob(torch.from_numpy(inputs), torch.from_numpy(residual))
    v = critic_forward(params, inputs)
    if boundary is None:
        boundary = np.zeros(n, dtype=bool)
        boundary[-1] = True
    return RolloutBuffer(
        obs=np.zeros((n, 4)), inputs=inputs, next_obs=np.zeros((n, 4)), next_inputs=inputs.copy(),
        residual=residual, applied=residual, reward=np.asarray(reward, dtype=float),
        log_prob=lp.numpy(), value=v, next_value=v.copy(), boundary=np.asarray(boundary, dtype=bool))


def random_buffer(seed, n=600):
    rng = np.random.default_rng(seed)
    p = net(seed)
    x = rng.uniform(-1, 1, (n, 3))
    a, _ = sample_and_logprob(p, x, rng)
    return p, make_buffer(p, x, a, -rng.uniform(0, 5, n), np.arange(n) % 200 == 199)


def tensor_batch(buf, adv):
    return ppo._batch(buf, np.arange(len(buf)), adv)


# GAE

def test_gae_two_step_example():
    adv, ret = ppo.gae([1.0, 1.0], [0.0, 0.0], [0.0, 0.0], [False, True], gamma=0.5, lam=1.0)
    np.testing.assert_allclose(adv, [1.5, 1.0], atol=1e-15)
    np.testing.assert_allclose(ret, [1.5, 1.0], atol=1e-15)


def test_gae_lambda_zero_is_td_residual():
    r = np.array([0.3, -1.0, 2.0])
    v = np.array([0.5, 0.1, -0.4])
    nv = np.array([0.1, -0.4, 0.9])
    adv, _ = ppo.gae(r, v, nv, [False, False, True], gamma=0.9, lam=0.0)
    np.testing.assert_allclose(adv, r + 0.9 * nv - v, atol=1e-15)


def test_gae_gamma_zero():
    r = np.array([0.3, -1.0, 2.0])
    v = np.array([0.5, 0.1, -0.4])
    adv, ret = ppo.gae(r, v, np.full(3, 7.0), [False, False, True], gamma=0.0, lam=0.97)
    np.testing.assert_allclose(adv, r - v, atol=1e-15)
    np.testing.assert_allclose(ret, r, atol=1e-15)


def test_gae_bootstraps_at_truncation():
    adv, _ = ppo.gae([0.0], [0.0], [10.0], [True], gamma=0.99, lam=0.97)
    assert adv[0] == pytest.approx(9.9)


def test_gae_restarts_at_boundary():
    a, _ = ppo.gae([1.0, 1.0, 5.0, 5.0], np.zeros(4), np.zeros(4), [False, True, False, True], 0.9, 1.0)
    np.testing.assert_allclose(a, [1.9, 1.0, 9.5, 5.0])


@pytest.mark.parametrize("boundary", [[], [True, False]])
def test_gae_rejects_empty_or_open_segment(boundary):
    with pytest.raises(ValueError):
        ppo.gae(np.zeros(len(boundary)), np.zeros(len(boundary)), np.zeros(len(boundary)), boundary, 0.9, 0.9)


@settings(max_examples=100, deadline=None)
@given(data=st.data(), gamma=st.floats(0.0, 1.0), lam=st.floats(0.0, 1.0))
def test_gae_matches_brute_force(data, gamma, lam):
    lengths = data.draw(st.lists(st.integers(1, 10), min_size=1, max_size=4))
    n = sum(lengths)
    vals = st.floats(-10, 10)
    r = np.array(data.draw(st.lists(vals, min_size=n, max_size=n)))
    v = np.array(data.draw(st.lists(vals, min_size=n, max_size=n)))
    nv = np.array(data.draw(st.lists(vals, min_size=n, max_size=n)))
    boundary = np.zeros(n, dtype=bool)
    boundary[np.cumsum(lengths) - 1] = True
    adv, ret = ppo.gae(r, v, nv, boundary, gamma, lam)
    start = 0
    for length in lengths:
        sl = slice(start, start + length)
        ref = brute_force_gae(r[sl], v[sl], nv[sl], gamma, lam)
        np.testing.assert_allclose(adv[sl], ref, atol=1e-10, rtol=0)
        start += length
    np.testing.assert_allclose(ret, adv + v, atol=1e-12)


def test_compute_gae_applies_reward_scale():
    p, buf = random_buffer(0, n=200)
    adv, ret = ppo.compute_gae(buf, PpoConfig(reward_scale=0.01))
    ref, _ = ppo.gae(0.01 * buf.reward, buf.value, buf.next_value, buf.boundary, 0.99, 0.97)
    np.testing.assert_array_equal(adv, ref)
    np.testing.assert_array_equal(ret, adv + buf.value)


# advantage normalization

@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=300))
def test_normalized_advantages_are_standard(values):
    a = np.array(values)
    if np.std(a) < 1e-6:
        return
    z = ppo.normalize_advantages(a)
    assert abs(z.mean()) <= 1e-8
    assert abs(z.std() - 1.0) <= 1e-6


def test_normalize_constant_batch_is_zero():
    np.testing.assert_array_equal(ppo.normalize_advantages([3.0, 3.0, 3.0]), [0.0, 0.0, 0.0])


# loss

def test_ratio_is_one_before_any_step():
    p, buf = random_buffer(1)
    with torch.no_grad():
        lp, _ = p.log_prob(torch.from_numpy(buf.inputs), torch.from_numpy(buf.residual))
    assert np.abs(np.exp(lp.numpy() - buf.log_prob) - 1).max() <= 1e-12
    ppo.compute_gae(buf, RAW)
    adv = ppo.normalize_advantages(buf.advantages)
    _, stats = ppo.ppo_loss(p, tensor_batch(buf, adv), RAW)
    assert stats["mean_ratio"] == pytest.approx(1.0, abs=1e-12)
    assert stats["clip_frac"] == 0.0
    assert stats["policy_loss"] == pytest.approx(-adv.mean(), abs=1e-12)


def test_single_transition_hand_computed_loss():
    p = net()
    with torch.no_grad():
        p.value_head.weight.zero_()
        p.value_head.bias.fill_(0.7)
    x = np.array([[0.1, -0.2, 0.3]])
    a = 0.3
    # policy at init: mean 0, std 0.5
    logp_now = -0.5 * (0.3 / 0.5) ** 2 - math.log(0.5) - 0.5 * math.log(2 * math.pi)
    old_lp = logp_now - 0.1
    batch = {"inputs": torch.from_numpy(x), "residual": torch.tensor([a], dtype=torch.float64),
             "old_log_prob": torch.tensor([old_lp], dtype=torch.float64),
             "advantages": torch.tensor([2.0], dtype=torch.float64),
             "returns": torch.tensor([1.5], dtype=torch.float64)}
    ratio = math.exp(0.1)
    entropy = 0.5 * math.log(2 * math.pi * math.e) + math.log(0.5)
    expected = -min(ratio * 2.0, 1.2 * 2.0) + (0.7 - 1.5) ** 2 - 0.02 * entropy
    loss, stats = ppo.ppo_loss(p, batch, PpoConfig())
    assert loss.item() == pytest.approx(expected, abs=1e-10)
    assert stats["approx_kl"] == pytest.approx(ratio - 1 - 0.1, abs=1e-12)


def test_clip_limits_positive_advantage():
    p = net()
    x = np.zeros((1, 3))
    logp_now = -math.log(0.5) - 0.5 * math.log(2 * math.pi)
    batch = {"inputs": torch.from_numpy(x), "residual": torch.zeros(1, dtype=torch.float64),
             "old_log_prob": torch.tensor([logp_now - math.log(2.0)], dtype=torch.float64),
             "advantages": torch.tensor([3.0], dtype=torch.float64),
             "returns": torch.tensor([critic_forward(p, x)[0]], dtype=torch.float64)}
    cfg = PpoConfig(entropy_coef=0.0)
    loss, stats = ppo.ppo_loss(p, batch, cfg)
    assert stats["mean_ratio"] == pytest.approx(2.0, abs=1e-12)
    assert loss.item() == pytest.approx(-1.2 * 3.0, abs=1e-12)
    assert stats["clip_frac"] == 1.0


@given(ratio=st.floats(0.01, 5.0), adv=st.floats(-10, 10), eps=st.floats(0.01, 0.5))
def test_clipped_surrogate_is_pessimistic(ratio, adv, eps):
    r = torch.tensor(ratio, dtype=torch.float64)
    surr = torch.min(r * adv, torch.clamp(r, 1 - eps, 1 + eps) * adv).item()
    assert surr <= ratio * adv + 1e-12
    assert surr <= max(ratio * adv, (1 - eps) * adv, (1 + eps) * adv) + 1e-12


def test_non_finite_ratio_aborts_with_diagnostics():
    p, buf = random_buffer(2, n=200)
    buf.log_prob[5] = -1e6
    ppo.compute_gae(buf, RAW)
    with pytest.raises(UpdateAborted) as info:
        ppo.ppo_loss(p, tensor_batch(buf, buf.advantages), RAW)
    assert info.value.diagnostics["indices"] == [5]


# Adam

def scalar_module(value=0.0):
    m = torch.nn.Module()
    m.w = torch.nn.Parameter(torch.tensor([value], dtype=torch.float64))
    return m


def test_adam_zero_gradient_leaves_params():
    m = scalar_module(1.5)
    opt = ppo.make_optimizer(m, PpoConfig())
    for _ in range(5):
        m.w.grad = torch.zeros(1, dtype=torch.float64)
        assert ppo.adam_step(m, opt)
    assert m.w.item() == 1.5
    assert opt.state[m.w]["exp_avg"].item() == 0.0


def test_adam_first_step_is_minus_lr():
    m = scalar_module()
    opt = ppo.make_optimizer(m, PpoConfig())
    m.w.grad = torch.ones(1, dtype=torch.float64)
    ppo.adam_step(m, opt)
    assert m.w.item() == pytest.approx(-3e-4 / (1 + 1e-8), abs=1e-15)


def test_adam_constant_gradient_step_size():
    m = scalar_module()
    opt = ppo.make_optimizer(m, PpoConfig())
    prev = 0.0
    for _ in range(1000):
        m.w.grad = torch.full((1,), 0.37, dtype=torch.float64)
        ppo.adam_step(m, opt)
        step, prev = m.w.item() - prev, m.w.item()
    assert step == pytest.approx(-3e-4, rel=1e-6)


def test_adam_skips_non_finite_gradient(caplog):
    m = scalar_module(2.0)
    opt = ppo.make_optimizer(m, PpoConfig())
    m.w.grad = torch.tensor([math.nan], dtype=torch.float64)
    with caplog.at_level(logging.WARNING):
        assert not ppo.adam_step(m, opt)
    assert m.w.item() == 2.0
    assert "non-finite gradient" in caplog.text


# update loop

def test_zero_learning_rate_leaves_params():
    p, buf = random_buffer(3)
    before = p.flat_parameters()
    stats = ppo.update_policy(p, buf, PpoConfig(learning_rate=0.0, epochs=2), np.random.default_rng(0))
    assert np.array_equal(p.flat_parameters(), before)
    assert stats["mean_ratio"] == pytest.approx(1.0, abs=1e-12)


def test_update_is_deterministic():
    results = []
    for _ in range(2):
        p, buf = random_buffer(4)
        stats = ppo.update_policy(p, buf, PpoConfig(epochs=3), np.random.default_rng(7))
        results.append((p.flat_parameters(), stats))
    assert np.array_equal(results[0][0], results[1][0])
    assert results[0][1] == results[1][1]


def test_update_moves_mean_toward_rewarded_direction():
    p = net(5)
    x = np.repeat(np.array([[-0.5, -0.5, 0.2], [0.4, 0.3, -0.6]]), 128, axis=0)
    a = np.tile([0.5, -0.5], 128)
    reward = (a > 0).astype(float)
    boundary = np.ones(len(a), dtype=bool)
    buf = make_buffer(p, x, a, reward, boundary)
    before = actor_forward(p, x[[0, 1]])[0]
    ppo.update_policy(p, buf, PpoConfig(reward_scale=1.0, epochs=2), np.random.default_rng(0))
    after = actor_forward(p, x[[0, 1]])[0]
    assert np.all(after > before)


def test_update_reports_diagnostics():
    p, buf = random_buffer(6)
    stats = ppo.update_policy(p, buf, PpoConfig(epochs=1), np.random.default_rng(0))
    assert set(ppo.DIAG_HEADER[2:]) <= set(stats)
    assert stats["skipped_steps"] == 0


def test_diag_csv(tmp_path):
    row = {"update": 1, "steps": 1000, "mean_ratio": 1.0, "clip_frac": 0.1, "policy_loss": -0.2,
           "value_loss": 0.5, "entropy": 0.7, "approx_kl": 1e-3}
    path = tmp_path / "diag.csv"
    ppo.write_diag_csv(path, [row])
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(ppo.DIAG_HEADER)
    assert lines[1] == "1,1000,1.0,0.1,-0.2,0.5,0.7,0.001"


def test_config_validation():
    with pytest.raises(ValueError):
        PpoConfig(gamma=0.0)
    with pytest.raises(ValueError):
        PpoConfig(gae_lambda=1.5)
    with pytest.raises(ValueError):
        PpoConfig(clip_eps=0.0)
