"""Adam with a classic (gradient-added) L2 penalty."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import NonFiniteGradient
from .tensor import Tensor


@dataclass(frozen=True)
class AdamConfig:
    beta1: float = 0.9
    beta2: float = 0.999
    alpha: float = 0.0005
    epsilon: float = 1e-8
    l2_lambda: float = 1e-4

    def __post_init__(self):
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError(f"betas must lie in [0, 1), got {self.beta1}, {self.beta2}")
        if self.alpha < 0.0:
            raise ValueError(f"alpha must be non-negative, got {self.alpha}")
        if self.epsilon <= 0.0:
            raise ValueError("epsilon must be positive")
        if self.l2_lambda < 0.0:
            raise ValueError(f"l2_lambda must be non-negative, got {self.l2_lambda}")


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    cfg: AdamConfig,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One Adam update. Returns new parameter arrays; ``state`` is updated in place.

    g' = g + l2 * w;  m = b1 m + (1-b1) g';  v = b2 v + (1-b2) g'^2
    w <- w - alpha * m_hat / (sqrt(v_hat) + eps)
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient for {name!r}")
    state.t += 1
    t = state.t
    c1 = 1.0 - cfg.beta1**t
    c2 = 1.0 - cfg.beta2**t
    out = {}
    for name, w in params.items():
        g = grads.get(name)
        if g is None:
            out[name] = w
            continue
        if g.shape != w.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {w.shape} for {name!r}")
        if cfg.l2_lambda:
            g = g + cfg.l2_lambda * w
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(w)
            v = np.zeros_like(w)
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g
        state.m[name], state.v[name] = m, v
        if cfg.alpha == 0.0:
            out[name] = w
            continue
        out[name] = w - cfg.alpha * (m / c1) / (np.sqrt(v / c2) + cfg.epsilon)
    return out, state


class Adam:
    """Applies :func:`adam_step` to named leaf tensors, in place."""

    def __init__(self, params: dict[str, Tensor], cfg: AdamConfig = AdamConfig()):
        self.params = params
        self.cfg = cfg
        self.state = AdamState()

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        grads = {n: p.grad for n, p in self.params.items() if p.grad is not None}
        new, _ = adam_step({n: p.data for n, p in self.params.items()}, grads, self.state, self.cfg)
        for n, p in self.params.items():
            p.data = new[n]


def make_rng(seed: int) -> np.random.Generator:
    """numpy's PCG64 bit generator; streams are identical across platforms for a seed."""
    return np.random.Generator(np.random.PCG64(seed))
