"""Quick oracle checks runnable without pytest (``dreal selftest``)."""
from __future__ import annotations

import numpy as np
import torch

from . import actors, oracles
from .critic import CriticState, RecurrentCritic, critic_param_count
from .reward import compute_reward
from .config import RewardConfig


def _check_operators(rng) -> float:
    worst = 0.0
    for _ in range(3):
        B, C, H, W = 3, int(rng.integers(2, 9)), int(rng.integers(2, 7)), int(rng.integers(2, 7))
        hid = max(1, C // 2)
        Fm = rng.normal(size=(B, C, H, W))
        w0, b0 = rng.normal(size=(hid, C)), rng.normal(size=hid)
        w1, b1 = rng.normal(size=(C, hid)), rng.normal(size=C)
        k, kb = rng.normal(size=(1, 2, 7, 7)), rng.normal(size=1)
        cw, cb = rng.normal(size=(C, 2)), rng.normal(size=C)
        g, bt = rng.uniform(0.5, 2, size=C), rng.normal(size=C)
        t = lambda a: torch.from_numpy(np.asarray(a, dtype=np.float64))
        pairs = [
            (actors.channel_attention(t(Fm), t(w0), t(b0), t(w1), t(b1)), oracles.channel_attention(Fm, w0, b0, w1, b1)),
            (actors.cbam_channel_attention(t(Fm), t(w0), t(b0), t(w1), t(b1)),
             oracles.cbam_channel_attention(Fm, w0, b0, w1, b1)),
            (actors.spatial_attention(t(Fm), t(k), t(kb)), oracles.spatial_attention(Fm, k, kb)),
            (actors.style_attention(t(Fm), t(cw), t(cb), t(g), t(bt)), oracles.style_attention(Fm, cw, cb, g, bt)),
        ]
        for got, want in pairs:
            worst = max(worst, float(np.abs(got.numpy() - want).max()))
    return worst


def _check_critic(rng) -> float:
    worst = 0.0
    for _ in range(20):
        size = int(rng.integers(1, 9))
        critic = RecurrentCritic(size).double()
        with torch.no_grad():
            critic.weight.copy_(torch.from_numpy(rng.normal(size=(4, 2 * size + 1))))
            critic.bias.copy_(torch.from_numpy(rng.normal(size=4)))
        f, a = rng.normal(size=(2, size)), rng.uniform(size=(2, size))
        h, c = rng.normal(size=2), rng.normal(size=2)
        with torch.no_grad():
            st = critic.step(torch.from_numpy(f), torch.from_numpy(a),
                             CriticState(torch.from_numpy(h), torch.from_numpy(c)))
        for b in range(2):
            hw, cw = oracles.lstm_cell(list(f[b]) + list(a[b]), h[b], c[b],
                                       critic.weight.detach().numpy(), critic.bias.detach().numpy())
            worst = max(worst, abs(float(st.h[b]) - hw), abs(float(st.c[b]) - cw))
    return worst


def run(seed: int = 0, verbose: bool = True) -> bool:
    rng = np.random.default_rng(seed)
    checks = [
        ("attention operators vs loop oracles", _check_operators(rng), 1e-10),
        ("critic step vs scalar LSTM oracle", _check_critic(rng), 1e-10),
        ("reward (0.8, 0.4) -> 0.5", abs(compute_reward(0.8, 0.4, True) - 0.5), 1e-9),
        ("reward incorrect -> -gamma", abs(compute_reward(0.8, 0.4, False, RewardConfig(gamma=1.0)) + 1.0), 0.0),
        ("critic parameter count C=16", abs(critic_param_count(16) - 136), 0.0),
    ]
    ok = True
    for name, err, tol in checks:
        passed = err <= tol
        ok &= passed
        if verbose:
            print(f"{'PASS' if passed else 'FAIL'}  {name}  (error {err:.3g}, tolerance {tol:g})")
    return ok
