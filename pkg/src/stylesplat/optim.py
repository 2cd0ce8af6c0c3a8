"""Adam with bias correction and named parameter groups."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(params, grads, state: AdamState, lr):
    """One bias-corrected Adam update, applied in place.

    ``params`` and ``grads`` are matching sequences of arrays (a single array is
    accepted too).  ``lr`` is a float or one float per parameter.
    """
    single = isinstance(params, np.ndarray)
    if single:
        params, grads = [params], [grads]
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    for p, g in zip(params, grads):
        if p.shape != np.shape(g):
            raise ValueError(f"gradient shape {np.shape(g)} does not match parameter shape {p.shape}")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    lrs = [lr] * len(params) if np.isscalar(lr) else list(lr)
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v, rate in zip(params, grads, state.m, state.v, lrs):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= rate * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return (params[0] if single else params), state


def clip_global_norm(grads, max_norm):
    """Scale a list of gradient arrays so their joint L2 norm is at most ``max_norm``."""
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if max_norm is not None and total > max_norm:
        scale = max_norm / total
        grads = [g * scale for g in grads]
    return grads, total


class Adam:
    """Adam over named groups ``{name: (array, lr)}`` sharing one step counter."""

    def __init__(self, groups: dict, betas=(0.9, 0.999), eps=1e-8):
        self.names = list(groups)
        self.params = [groups[n][0] for n in self.names]
        self.lrs = {n: float(groups[n][1]) for n in self.names}
        self.state = AdamState(beta1=betas[0], beta2=betas[1], eps=eps)

    def set_lr(self, name, lr):
        self.lrs[name] = float(lr)

    def step(self, grads: dict):
        adam_step(self.params, [grads[n] for n in self.names], self.state,
                  [self.lrs[n] for n in self.names])

    def rebind(self, groups: dict, keep=None):
        """Swap parameter arrays (after pruning), keeping moments for ``keep`` rows.

        Every group's leading axis must be the point axis that ``keep`` indexes;
        with ``keep=None`` the moments restart from zero.
        """
        new_params = [groups[n][0] for n in self.names]
        if self.state.m and keep is not None:
            self.state.m = [m[keep] for m in self.state.m]
            self.state.v = [v[keep] for v in self.state.v]
        elif self.state.m:
            self.state.m = [np.zeros_like(p) for p in new_params]
            self.state.v = [np.zeros_like(p) for p in new_params]
        self.params = new_params
