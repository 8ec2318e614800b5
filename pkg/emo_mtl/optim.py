"""
Adam over named :class:`~emo_mtl.tensor.Tensor` parameters.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import OptimizerStateError


@dataclass
class AdamState:
    lr: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    # Per-parameter update counts drive bias correction, so a task head that
    # is stepped only on its own batches is corrected by its own count.
    steps: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")
        for name in ("beta1", "beta2"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {value}")


def adam_step(params, state):
    """
    Apply one bias-corrected Adam update to ``params`` and clear their grads.

    Parameters
    ----------
    params : mapping of str to Tensor
        The parameters to update; each must carry a populated ``grad``.
    state : AdamState
        Moment buffers keyed by parameter name, updated in place.

    Raises
    ------
    OptimizerStateError
        If any parameter has no gradient. Nothing is updated in that case.
    """
    missing = [name for name, tensor in params.items() if tensor.grad is None]
    if missing:
        raise OptimizerStateError(f"no gradient for parameter(s): {', '.join(missing)}")

    state.step_count += 1
    for name, tensor in params.items():
        grad = np.asarray(tensor.grad, dtype=tensor.data.dtype)
        if name not in state.m:
            state.m[name] = np.zeros_like(tensor.data)
            state.v[name] = np.zeros_like(tensor.data)
            state.steps[name] = 0
        elif state.m[name].shape != tensor.shape:
            raise OptimizerStateError(
                f"moment shape {state.m[name].shape} does not match parameter "
                f"{name!r} of shape {tensor.shape}"
            )
        state.steps[name] += 1
        t = state.steps[name]

        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * (grad * grad)

        m_hat = m / (1.0 - state.beta1 ** t)
        v_hat = v / (1.0 - state.beta2 ** t)
        update = state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        tensor.data = (tensor.data - update).astype(tensor.data.dtype)
        tensor.grad = None
    return params, state

