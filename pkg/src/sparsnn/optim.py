"""SGD and Adam on lists of float32 parameter arrays."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError


@dataclass
class SgdState:
    lr: float = 1e-3

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigError(f"learning rate must be > 0, got {self.lr}")


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)  # first moments, shaped like params
    v: list = field(default_factory=list)  # second moments

    def ensure_moments(self, params: list) -> None:
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]


def sgd_step(params: list, grads: list, lr: float) -> None:
    """In-place w <- w - lr * g."""
    if not lr > 0:
        raise ConfigError(f"learning rate must be > 0, got {lr}")
    for p, g in zip(params, grads):
        p -= np.float32(lr) * g


def adam_step(params: list, grads: list, state: AdamState) -> AdamState:
    """In-place Adam update with bias correction; returns the state."""
    state.ensure_moments(params)
    state.step += 1
    b1, b2 = np.float32(state.beta1), np.float32(state.beta2)
    c1 = 1.0 - state.beta1 ** state.step
    c2 = 1.0 - state.beta2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (np.float32(1) - b1) * g
        v *= b2
        v += (np.float32(1) - b2) * g * g
        m_hat = m / np.float32(c1)
        v_hat = v / np.float32(c2)
        p -= np.float32(state.lr) * m_hat / (np.sqrt(v_hat) + np.float32(state.eps))
    return state


def optimizer_step(params: list, grads: list, state) -> None:
    """Dispatch on the optimizer state type."""
    if isinstance(state, SgdState):
        sgd_step(params, grads, state.lr)
    elif isinstance(state, AdamState):
        adam_step(params, grads, state)
    else:
        raise ConfigError(f"unknown optimizer state {type(state).__name__}")


def make_optimizer(name: str, lr: float):
    if name == "sgd":
        return SgdState(lr=lr)
    if name == "adam":
        return AdamState(lr=lr)
    raise ConfigError(f"unknown optimizer {name!r}")


def optimizer_state_to_dict(state):
    """(meta, named arrays) for checkpointing."""
    if isinstance(state, SgdState):
        return {"kind": "sgd", "lr": state.lr}, []
    if isinstance(state, AdamState):
        arrays = []
        for k, (m, v) in enumerate(zip(state.m, state.v)):
            arrays.append((f"adam_m{k}", m))
            arrays.append((f"adam_v{k}", v))
        meta = {
            "kind": "adam",
            "lr": state.lr,
            "beta1": state.beta1,
            "beta2": state.beta2,
            "eps": state.eps,
            "step": state.step,
            "num_moments": len(state.m),
        }
        return meta, arrays
    raise ConfigError(f"unknown optimizer state {type(state).__name__}")


def optimizer_state_from_dict(meta: dict, data: dict):
    if meta["kind"] == "sgd":
        return SgdState(lr=meta["lr"])
    if meta["kind"] == "adam":
        n = meta["num_moments"]
        return AdamState(
            lr=meta["lr"],
            beta1=meta["beta1"],
            beta2=meta["beta2"],
            eps=meta["eps"],
            step=meta["step"],
            m=[data[f"adam_m{k}"] for k in range(n)],
            v=[data[f"adam_v{k}"] for k in range(n)],
        )
    raise ConfigError(f"unknown optimizer kind {meta['kind']!r}")
