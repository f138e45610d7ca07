"""Small network building blocks and target-network maintenance."""

from __future__ import annotations

from typing import Iterable, Sequence

import torch
from torch import nn
from torch.nn import functional as F


def mlp(in_dim: int, hidden: Sequence[int], out_dim: int) -> nn.Sequential:
    layers: list[nn.Module] = []
    prev = in_dim
    for h in hidden:
        layers += [nn.Linear(prev, h), nn.ReLU()]
        prev = h
    layers.append(nn.Linear(prev, out_dim))
    return nn.Sequential(*layers)


def one_hot(actions: torch.Tensor, n_actions: int, dtype: torch.dtype) -> torch.Tensor:
    return F.one_hot(actions.long(), n_actions).to(dtype)


class PairCritic(nn.Module):
    """Q^ss(x, x'): scores a (current, next) pair with a scalar."""

    def __init__(self, in_dim: int, hidden: Sequence[int]) -> None:
        super().__init__()
        self.net = mlp(2 * in_dim, hidden, 1)

    def forward(self, x: torch.Tensor, x_next: torch.Tensor) -> torch.Tensor:
        return self.net(torch.cat([x, x_next], dim=-1)).squeeze(-1)


class TransitionModel(nn.Module):
    """f(x, a): proposes the next observation (or encoding) for action ``a``."""

    def __init__(self, in_dim: int, n_actions: int, out_dim: int, hidden: Sequence[int]) -> None:
        super().__init__()
        self.n_actions = n_actions
        self.net = mlp(in_dim + n_actions, hidden, out_dim)

    def forward(self, x: torch.Tensor, actions: torch.Tensor) -> torch.Tensor:
        return self.net(torch.cat([x, one_hot(actions, self.n_actions, x.dtype)], dim=-1))


class QNetwork(nn.Module):
    def __init__(self, in_dim: int, n_actions: int, hidden: Sequence[int]) -> None:
        super().__init__()
        self.net = mlp(in_dim, hidden, n_actions)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


def freeze(module: nn.Module) -> nn.Module:
    for p in module.parameters():
        p.requires_grad_(False)
    return module


def detached_params(module: nn.Module) -> dict[str, torch.Tensor]:
    return {name: p.detach() for name, p in module.named_parameters()}


@torch.no_grad()
def soft_update(target, online, tau: float):
    """Polyak step ``target <- tau * online + (1 - tau) * target``, in place.

    Accepts modules or matching iterables of tensors and returns ``target``.
    """
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    t_params = list(target.parameters()) if isinstance(target, nn.Module) else list(target)
    o_params = list(online.parameters()) if isinstance(online, nn.Module) else list(online)
    if len(t_params) != len(o_params):
        raise ValueError("target and online parameter lists differ in length")
    for t, o in zip(t_params, o_params):
        if t.shape != o.shape:
            raise ValueError(f"shape mismatch {tuple(t.shape)} vs {tuple(o.shape)}")
    for t, o in zip(t_params, o_params):
        t.mul_(1.0 - tau).add_(o, alpha=tau)
    return target


def flat_params(params: Iterable[torch.Tensor]) -> torch.Tensor:
    return torch.cat([p.detach().reshape(-1) for p in params])
