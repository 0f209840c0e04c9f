"""SGD, RMSProp, Adagrad, Adam and AdamW updates plus global-norm clipping.

Steppers work on any mapping of parameter name to float64 array, updating
the arrays in place.  Note the epsilon placement: RMSProp adds it under the
square root, Adagrad and Adam/AdamW add it after the root.  Common library
defaults differ on this, so results will not match them bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

OPTIMIZERS = ("sgd", "rmsprop", "adagrad", "adam", "adamw")

DEFAULT_LR = {"sgd": 0.1, "rmsprop": 0.01, "adagrad": 0.1, "adam": 0.001, "adamw": 0.001}


@dataclass(frozen=True)
class Hyperparams:
    eta: float = 0.001
    rho: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.0

    def __post_init__(self):
        # eta == 0 is allowed: it is the null-update baseline.
        if self.eta < 0:
            raise ValueError("eta must be non-negative")
        for name in ("rho", "beta1", "beta2"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie in [0, 1)")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")


def default_hyperparams(algorithm: str, **overrides) -> Hyperparams:
    if algorithm not in OPTIMIZERS:
        raise ValueError(f"unknown optimizer {algorithm!r}; choose from {OPTIMIZERS}")
    h = Hyperparams(eta=DEFAULT_LR[algorithm], weight_decay=0.01 if algorithm == "adamw" else 0.0)
    overrides = {k: v for k, v in overrides.items() if v is not None}
    return replace(h, **overrides) if overrides else h


@dataclass
class OptimizerState:
    algorithm: str
    t: int = 0
    s: dict[str, np.ndarray] = field(default_factory=dict)
    G: dict[str, np.ndarray] = field(default_factory=dict)
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.algorithm not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.algorithm!r}; choose from {OPTIMIZERS}")

    def buffer(self, kind: str, name: str, like: np.ndarray) -> np.ndarray:
        store = getattr(self, kind)
        if name not in store:
            store[name] = np.zeros_like(like)
        return store[name]


def _check_finite(grads: Mapping[str, np.ndarray]) -> None:
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in parameter {name!r}")


def sgd_step(params, grads, state: OptimizerState, h: Hyperparams) -> None:
    _check_finite(grads)
    for name, theta in params.items():
        theta -= h.eta * grads[name]
    state.t += 1


def rmsprop_step(params, grads, state: OptimizerState, h: Hyperparams) -> None:
    _check_finite(grads)
    for name, theta in params.items():
        g = grads[name]
        s = state.buffer("s", name, theta)
        s *= h.rho
        s += (1.0 - h.rho) * g * g
        theta -= h.eta * g / np.sqrt(s + h.epsilon)
    state.t += 1


def adagrad_step(params, grads, state: OptimizerState, h: Hyperparams) -> None:
    _check_finite(grads)
    for name, theta in params.items():
        g = grads[name]
        G = state.buffer("G", name, theta)
        G += g * g
        theta -= h.eta * g / (np.sqrt(G) + h.epsilon)
    state.t += 1


def _adam_update(params, grads, state: OptimizerState, h: Hyperparams) -> None:
    # state.t is the pre-increment counter, so the first step uses exponent 1
    c1 = 1.0 - h.beta1 ** (state.t + 1)
    c2 = 1.0 - h.beta2 ** (state.t + 1)
    for name, theta in params.items():
        g = grads[name]
        m = state.buffer("m", name, theta)
        v = state.buffer("v", name, theta)
        m *= h.beta1
        m += (1.0 - h.beta1) * g
        v *= h.beta2
        v += (1.0 - h.beta2) * g * g
        theta -= h.eta * (m / c1) / (np.sqrt(v / c2) + h.epsilon)


def adam_step(params, grads, state: OptimizerState, h: Hyperparams) -> None:
    _check_finite(grads)
    _adam_update(params, grads, state, h)
    state.t += 1


def adamw_step(params, grads, state: OptimizerState, h: Hyperparams) -> None:
    """Adam update followed by decoupled decay ``θ -= η λ θ`` on the updated θ."""
    _check_finite(grads)
    _adam_update(params, grads, state, h)
    if h.weight_decay != 0.0:
        for theta in params.values():
            theta -= h.eta * h.weight_decay * theta
    state.t += 1


STEPPERS = {
    "sgd": sgd_step,
    "rmsprop": rmsprop_step,
    "adagrad": adagrad_step,
    "adam": adam_step,
    "adamw": adamw_step,
}


def step(params, grads, state: OptimizerState, h: Hyperparams) -> None:
    STEPPERS[state.algorithm](params, grads, state, h)


def global_norm(grads: Mapping[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_global_norm(grads: Mapping[str, np.ndarray], max_norm: float) -> float:
    """Rescale all gradients in place so their joint L2 norm is at most ``max_norm``.

    Returns the scale applied (1.0 when nothing was clipped).
    """
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    n = global_norm(grads)
    if n <= max_norm:
        return 1.0
    scale = max_norm / n
    for g in grads.values():
        g *= scale
    return scale
