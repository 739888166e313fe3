"""Shared test utilities: toy configs and a central finite-difference gradient."""
import torch

from dreal import build_network
from dreal.config import NetworkConfig


def toy_config(kind="channel", blocks=2, channels=(8, 16), size=8, num_classes=4, r=2):
    return NetworkConfig.resnet(blocks, channels, (size, size, 3), num_classes=num_classes,
                                attention_kind=kind, reduction_ratio=r)


def toy_network(kind="channel", seed=0, dtype=torch.float64, **kw):
    torch.manual_seed(seed)
    return build_network(toy_config(kind, **kw)).to(dtype)


def toy_batch(cfg, n=6, seed=1, dtype=torch.float64):
    g = torch.Generator().manual_seed(seed)
    h, w, c = cfg.input_shape
    x = torch.randn(n, c, h, w, generator=g, dtype=dtype)
    y = torch.randint(0, cfg.num_classes, (n,), generator=g)
    return x, y


def finite_difference(fn, param, h=1e-6):
    """Central differences of the scalar ``fn()`` w.r.t. every entry of ``param``."""
    grad = torch.zeros_like(param)
    flat = param.data.view(-1)
    g = grad.view(-1)
    with torch.no_grad():
        for i in range(flat.numel()):
            old = flat[i].item()
            flat[i] = old + h
            up = float(fn())
            flat[i] = old - h
            down = float(fn())
            flat[i] = old
            g[i] = (up - down) / (2 * h)
    return grad


def relative_error(a, b, floor=1e-5):
    """Norm-relative error ``|a - b| / max(|a|, |b|, floor)``.

    The floor sits above central-difference noise, so gradients that are
    analytically zero (e.g. a bias ahead of train-mode BN) compare as equal.
    """
    scale = max(float(a.norm()), float(b.norm()), floor)
    return float((a - b).norm()) / scale


def critic_learnability(steps=200, size=8, blocks=3, n=256, seed=0, lr=0.1):
    """Fit one critic to a frozen (state, action, reward) set; returns (initial, final) L_r."""
    from dreal.critic import RecurrentCritic, rollout
    from dreal.trainer import regression_loss

    g = torch.Generator().manual_seed(seed)
    states = [torch.randn(n, size, generator=g, dtype=torch.float64) for _ in range(blocks)]
    actions = [torch.rand(n, size, generator=g, dtype=torch.float64) for _ in range(blocks)]
    u, v = torch.randn(size, generator=g, dtype=torch.float64), torch.randn(size, generator=g, dtype=torch.float64)
    # rewards in (-1, 1), a fixed function of each block's (state, action)
    rewards = [torch.tanh((s @ u + a @ v) / size ** 0.5) for s, a in zip(states, actions)]
    torch.manual_seed(seed)
    critic = RecurrentCritic(size).double()
    opt = torch.optim.SGD(critic.parameters(), lr=lr, momentum=0.9)

    def loss():
        return regression_loss(rollout(critic, zip(states, actions)), rewards)

    with torch.no_grad():
        initial = float(loss())
    for _ in range(steps):
        opt.zero_grad()
        value = loss()
        value.backward()
        opt.step()
    with torch.no_grad():
        return initial, float(loss())
