"""SGD with momentum, Adam, staircase learning-rate decay, and the Adam->SGD switch.

Optimizers take ``params`` (name -> Tensor), ``grads`` (name -> array) and an
``OptimizerState``; they replace ``param.data`` and advance the state in place.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np

from .errors import ContractError

OPTIMIZERS = ("adam", "sgd", "swats")


@dataclass
class OptimizerState:
    """Hyperparameters, step counter, phase, and per-parameter moment slots.

    ``lr`` is the base rate of Adam and of plain SGD. ``sgd_lr`` is the base
    rate after a swats run switches to SGD at ``switch_step`` (``None`` never
    switches). Both decay as ``base * decay ** (step // decay_interval)``.
    """

    kind: str = "adam"
    lr: float = 1e-3
    sgd_lr: float = 1e-2
    decay: float = 1.0
    decay_interval: int = 1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    momentum: float = 0.9
    switch_step: int | None = None
    step: int = 0
    phase: str = ""
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    velocity: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in OPTIMIZERS:
            raise ContractError(f"unknown optimizer {self.kind!r}; expected one of {OPTIMIZERS}")
        if not 0.0 < self.decay <= 1.0:
            raise ContractError(f"decay coefficient must lie in (0, 1], got {self.decay}")
        if self.decay_interval < 1:
            raise ContractError(f"decay interval must be >= 1 step, got {self.decay_interval}")
        if not self.phase:
            if self.kind == "sgd" or (self.kind == "swats" and self.switch_step is not None
                                      and self.switch_step <= 0):
                self.phase = "sgd"
            else:
                self.phase = "adam"

    HYPER = ("kind", "lr", "sgd_lr", "decay", "decay_interval", "beta1", "beta2", "eps",
             "momentum", "switch_step", "step", "phase")

    def to_text(self) -> str:
        lines = []
        for key in self.HYPER:
            val = getattr(self, key)
            if isinstance(val, float):
                val = val.hex()
            lines.append(f"{key}={'' if val is None else val}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "OptimizerState":
        kv = dict(line.split("=", 1) for line in text.splitlines() if line)
        types = {f.name: f.type for f in fields(cls)}
        kw = {}
        for key in cls.HYPER:
            raw = kv[key]
            t = types[key]
            if key == "switch_step":
                kw[key] = None if raw == "" else int(raw)
            elif t == "float":
                kw[key] = float.fromhex(raw)
            elif t == "int":
                kw[key] = int(raw)
            else:
                kw[key] = raw
        return cls(**kw)

    def slots(self) -> dict[str, dict]:
        return {"m": self.m, "v": self.v, "velocity": self.velocity}


def decayed_lr(state: OptimizerState) -> float:
    """Staircase decay of the current phase's base rate at ``state.step``."""
    if not 0.0 < state.decay <= 1.0:
        raise ContractError(f"decay coefficient must lie in (0, 1], got {state.decay}")
    return _base_lr(state) * state.decay ** (state.step // state.decay_interval)


def _base_lr(state: OptimizerState) -> float:
    return state.sgd_lr if (state.kind == "swats" and state.phase == "sgd") else state.lr


def applied_lr(state: OptimizerState) -> float:
    """Rate used by the most recent update (``decayed_lr`` before any step)."""
    t = max(state.step - 1, 0)
    return _base_lr(state) * state.decay ** (t // state.decay_interval)


def _grad(grads, name):
    g = grads.get(name)
    if g is None:
        raise ContractError(f"no gradient for parameter {name!r}")
    return g


def sgd_momentum_step(params, grads, state: OptimizerState) -> None:
    """``velocity = momentum * velocity + grad``; ``param -= lr * velocity``."""
    lr = decayed_lr(state)
    mu = state.momentum
    for name, p in params.items():
        g = _grad(grads, name)
        vel = state.velocity.get(name)
        vel = g.copy() if vel is None else mu * vel + g
        state.velocity[name] = vel
        p.data = p.data - lr * vel
    state.step += 1


def adam_step(params, grads, state: OptimizerState) -> None:
    lr = decayed_lr(state)
    b1, b2 = state.beta1, state.beta2
    t = state.step + 1
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = _grad(grads, name)
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1.0 - b1) * g if m is None else b1 * m + (1.0 - b1) * g
        v = (1.0 - b2) * (g * g) if v is None else b2 * v + (1.0 - b2) * (g * g)
        state.m[name] = m
        state.v[name] = v
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    state.step += 1


def swats_step(params, grads, state: OptimizerState) -> None:
    """Adam while ``step < switch_step``, then SGD with momentum from zero velocity."""
    s = state.switch_step
    if state.phase == "adam" and s is not None and state.step >= s:
        state.phase = "sgd"
        state.velocity = {}
    if state.phase == "adam":
        adam_step(params, grads, state)
    else:
        sgd_momentum_step(params, grads, state)


def optimizer_step(params, grads, state: OptimizerState) -> None:
    if state.kind == "adam":
        adam_step(params, grads, state)
    elif state.kind == "sgd":
        sgd_momentum_step(params, grads, state)
    else:
        swats_step(params, grads, state)


def steps_per_epoch(n_docs: int, batch_size: int) -> int:
    return max(1, math.ceil(n_docs / batch_size))
