import pytest
import torch
from hypothesis import given, settings, strategies as st

from dreal import build_network
from dreal.actors import AttentionAction, mean_substitute
from dreal.config import ConfigError, NetworkConfig, RewardConfig
from dreal.backbone import Prediction
from dreal.reward import block_rewards, bypass_forward, compute_reward, is_correct, select_bypass_blocks

from helpers import toy_batch, toy_network


def test_ratio_case():
    assert abs(compute_reward(0.8, 0.4, True) - 0.5) <= 1e-9


def test_incorrect_is_minus_gamma_exactly():
    assert compute_reward(0.8, 0.4, False, RewardConfig(gamma=1.0)) == -1.0
    assert compute_reward(0.3, 0.9, False, RewardConfig(gamma=0.25)) == -0.25
    r = compute_reward(torch.rand(16), torch.rand(16), torch.zeros(16, dtype=torch.bool))
    assert torch.equal(r, torch.full((16,), -1.0))


def test_no_op_bypass_gives_zero_reward():
    p = torch.tensor([0.3, 0.6, 0.99], dtype=torch.float64)
    r = compute_reward(p, p, torch.ones(3, dtype=torch.bool))
    assert r.abs().max() <= 1e-6


def test_reward_config_validation():
    with pytest.raises(ConfigError, match="gamma"):
        RewardConfig(gamma=-0.5)
    with pytest.raises(ConfigError, match="ratio_epsilon"):
        RewardConfig(ratio_epsilon=1e-3)
    with pytest.raises(ConfigError, match="ratio_epsilon"):
        RewardConfig(ratio_epsilon=0.0)


probs = st.floats(0.0, 1.0, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(probs, probs, st.booleans(), st.floats(0.0, 5.0))
def test_reward_bounds(p_full, p_byp, correct, gamma):
    r = compute_reward(p_full, p_byp, correct, RewardConfig(gamma=gamma))
    if correct:
        assert r <= 1.0
        assert r == 1.0 - p_byp / (p_full + RewardConfig().ratio_epsilon)
    else:
        assert r == -gamma


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-20, 20), min_size=3, max_size=8), st.floats(1e-3, 1e3), st.data())
def test_branch_is_invariant_to_logit_scaling(logits, scale, data):
    logits = torch.tensor([logits], dtype=torch.float64)
    label = torch.tensor([data.draw(st.integers(0, logits.shape[1] - 1))])
    assert torch.equal(is_correct(logits, label), is_correct(logits * scale, label))


def test_ties_count_as_correct():
    logits = torch.tensor([[1.0, 1.0, 0.0]])
    assert is_correct(logits, torch.tensor([1])).item()
    assert not is_correct(logits, torch.tensor([2])).item()


@pytest.mark.parametrize("epoch,block", [(0, 0), (5, 2), (7, 1)])
def test_round_robin_examples(epoch, block):
    stages = NetworkConfig.resnet(3, (8, 16), (8, 8, 3), reduction_ratio=2).stages
    assert select_bypass_blocks(epoch, stages) == [(0, block), (1, block)]


def test_round_robin_covers_every_block_once():
    stages = NetworkConfig.resnet((2, 3, 5), (8, 16, 32), (8, 8, 3), reduction_ratio=2).stages
    for s, spec in enumerate(stages):
        for start in (0, 4, 11):
            chosen = [select_bypass_blocks(e, stages, [s])[0] for e in range(start, start + spec.num_blocks)]
            assert sorted(chosen) == [(s, b) for b in range(spec.num_blocks)]
    assert select_bypass_blocks(3, stages, [2]) == [(2, 3)]
    with pytest.raises(ValueError):
        select_bypass_blocks(-1, stages)


def test_constant_action_bypass_matches_full_pass():
    net = toy_network("channel").eval()
    with torch.no_grad():
        net.block((0, 1)).attention.actors[0].fc1.weight.zero_()
    x, _ = toy_batch(net.config)
    full, _ = net(x)
    out = bypass_forward(net, x, [(0, 1)])
    assert torch.equal(out[(0, 1)].logits, full)


def test_each_pass_differs_in_exactly_one_block():
    net = toy_network("channel").eval()
    x, _ = toy_batch(net.config)
    seen = []
    for blk_id in net.config.block_ids():
        net.block(blk_id).register_forward_hook(
            lambda m, inp, out, bid=blk_id: seen.append((bid, out[1][0], out[2][0])))
    with torch.no_grad():
        net(x)
    full = {bid: action.values for bid, _, action in seen}
    n = len(full)
    seen.clear()
    out = bypass_forward(net, x, [(0, 1), (1, 0)])
    assert len(seen) == 2 * n
    for p, bid in enumerate([(0, 1), (1, 0)]):
        for other, state, action in seen[p * n:(p + 1) * n]:
            if other < bid:
                assert torch.equal(action.values, full[other])
            elif other == bid:
                substituted = mean_substitute(AttentionAction("channel", full[bid])).values
                assert torch.equal(action.values, substituted)
            else:
                # downstream blocks apply their own live action
                with torch.no_grad():
                    live = net.block(other).attention.actors[0](state)
                assert torch.equal(action.values, live.values)
        with torch.no_grad():
            logits, _ = net(x, {bid: mean_substitute})
        assert torch.equal(out[bid].logits, logits)


def test_three_stages_cost_three_extra_passes():
    cfg = NetworkConfig.resnet(3, (8, 16, 32), (8, 8, 3), num_classes=4, reduction_ratio=2)
    torch.manual_seed(0)
    net = build_network(cfg).double()
    calls = []
    net.register_forward_pre_hook(lambda m, inp: calls.append(1))
    x, _ = toy_batch(cfg)
    bypass_forward(net, x, select_bypass_blocks(4, cfg.stages))
    assert len(calls) == 3


@pytest.mark.parametrize("kind", ["channel", "style", "spatial_channel"])
def test_bypass_never_mutates_the_network(kind):
    net = toy_network(kind).train()
    before = {k: v.clone() for k, v in net.state_dict().items()}
    x, _ = toy_batch(net.config)
    out = bypass_forward(net, x, [(0, 0), (1, 1)])
    assert all(not p.logits.requires_grad for p in out.values())
    for k, v in net.state_dict().items():
        assert torch.equal(v, before[k]), k
    assert all(p.grad is None for p in net.parameters())


def test_unknown_bypass_block():
    net = toy_network("channel")
    x, _ = toy_batch(net.config)
    with pytest.raises(KeyError):
        bypass_forward(net, x, [(0, 9)])


def test_block_rewards_records():
    logits = torch.tensor([[2.0, 0.0], [0.0, 2.0]], dtype=torch.float64)
    labels = torch.tensor([0, 0])
    full = Prediction(logits)
    byp = {(0, 0): Prediction(torch.zeros(2, 2, dtype=torch.float64))}
    rec = block_rewards(full, byp, labels)[(0, 0)]
    assert rec.correct.tolist() == [True, False]
    p0 = float(full.probabilities[0, 0])
    assert abs(float(rec.reward[0]) - (1 - 0.5 / (p0 + 1e-10))) <= 1e-15
    assert float(rec.reward[1]) == -1.0
