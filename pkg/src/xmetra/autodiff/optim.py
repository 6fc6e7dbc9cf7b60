"""Parameter-update rules over flat named parameter collections.

A model state is a ``dict[str, Tensor]`` of leaf tensors.  Every update
returns fresh leaves, so the graph recorded against the old parameters can
never reach the new ones (the first-order MAML barrier).
"""

from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from xmetra.autodiff.tensor import Tensor
from xmetra.exceptions import ContractError


class OptimizerKind(str, Enum):
    SGD = "sgd"
    ADAM = "adam"


@dataclass
class OptimizerState:
    kind: OptimizerKind = OptimizerKind.ADAM
    learning_rate: float = 1e-3
    adam_betas: tuple = (0.9, 0.999)
    adam_epsilon: float = 1e-8
    weight_decay: float = 0.0
    first_moments: dict = field(default_factory=dict)
    second_moments: dict = field(default_factory=dict)
    step: int = 0

    def __post_init__(self):
        self.kind = OptimizerKind(self.kind)
        if not self.learning_rate > 0:
            raise ContractError(f"learning_rate must be positive, got {self.learning_rate}")
        b1, b2 = self.adam_betas
        if not (0 < b1 < 1 and 0 < b2 < 1):
            raise ContractError(f"adam betas must lie in (0, 1), got {self.adam_betas}")
        if self.weight_decay < 0:
            raise ContractError("weight_decay must be non-negative")

    def reset(self):
        """Same hyperparameters, fresh moments and step counter."""
        return replace(self, first_moments={}, second_moments={}, step=0)


def make_state(arrays, requires_grad=True):
    """Wrap a ``{name: array}`` mapping as leaf tensors."""
    return {k: Tensor(v, requires_grad=requires_grad, name=k) for k, v in arrays.items()}


def state_arrays(params):
    return {k: p.values for k, p in params.items()}


def clone_state(params):
    return {k: Tensor(p.values.copy(), requires_grad=True, name=k) for k, p in params.items()}


def _check_grads(params, grads):
    missing = [k for k in params if k not in grads]
    if missing:
        raise ContractError(f"no gradient for parameter(s) {missing}")
    for k, p in params.items():
        if np.shape(grads[k]) != p.shape:
            raise ContractError(f"gradient for {k!r} has shape {np.shape(grads[k])}, parameter {p.shape}")


def sgd_step(params, grads, alpha, frozen=()):
    """``theta - alpha * grad`` as a fresh detached state."""
    if alpha < 0:
        raise ContractError(f"alpha must be non-negative, got {alpha}")
    _check_grads(params, grads)
    out = {}
    for k, p in params.items():
        if k in frozen:
            out[k] = Tensor(p.values.copy(), requires_grad=True, name=k)
        else:
            out[k] = Tensor(p.values - alpha * grads[k], requires_grad=True, name=k)
    return out


def adam_step(params, grads, state, frozen=()):
    """One bias-corrected Adam update with decoupled weight decay (AdamW).

    Frozen parameters are copied unchanged and their moments left alone.
    """
    if state.kind is not OptimizerKind.ADAM:
        raise ContractError(f"adam_step called with a {state.kind.value} optimizer state")
    _check_grads(params, grads)
    b1, b2 = state.adam_betas
    lr, eps, wd = state.learning_rate, state.adam_epsilon, state.weight_decay
    t = state.step + 1
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    m_all, v_all = dict(state.first_moments), dict(state.second_moments)
    out = {}
    for k, p in params.items():
        theta = p.values
        if k in frozen:
            out[k] = Tensor(theta.copy(), requires_grad=True, name=k)
            continue
        g = np.asarray(grads[k], dtype=np.float64)
        m = m_all.get(k)
        v = v_all.get(k)
        m = (1.0 - b1) * g if m is None else b1 * m + (1.0 - b1) * g
        v = (1.0 - b2) * g * g if v is None else b2 * v + (1.0 - b2) * g * g
        m_all[k], v_all[k] = m, v
        if wd:
            theta = theta * (1.0 - lr * wd)
        denom = np.sqrt(v) / np.sqrt(bc2) + eps
        out[k] = Tensor(theta - (lr / bc1) * m / denom, requires_grad=True, name=k)
    return out, replace(state, first_moments=m_all, second_moments=v_all, step=t)


def optimizer_step(params, grads, state, frozen=()):
    """Dispatch on ``state.kind``; SGD honours ``weight_decay`` as L2 shrinkage."""
    if state.kind is OptimizerKind.ADAM:
        return adam_step(params, grads, state, frozen)
    _check_grads(params, grads)
    lr, wd = state.learning_rate, state.weight_decay
    out = {}
    for k, p in params.items():
        if k in frozen:
            out[k] = Tensor(p.values.copy(), requires_grad=True, name=k)
        else:
            theta = p.values * (1.0 - lr * wd) if wd else p.values
            out[k] = Tensor(theta - lr * np.asarray(grads[k]), requires_grad=True, name=k)
    return out, replace(state, step=state.step + 1)
