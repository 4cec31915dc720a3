"""Parameter initialization and the Adam optimizer."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import ShapeError, Tensor


def xavier_init(shape, seed, dtype=np.float32):
    """Uniform Xavier/Glorot sample on +-sqrt(6 / (fan_in + fan_out)).

    Fans come from the first two extents times the receptive-field size
    (product of any trailing extents), so conv kernels (Cout, Cin, k, k)
    and linear weights (c_in, c_out) are both covered. ``seed`` may be an
    int or an existing ``numpy.random.Generator``.
    """
    shape = tuple(int(s) for s in shape)
    if len(shape) < 2:
        raise ShapeError(f"xavier_init needs rank >= 2, got shape {shape}")
    receptive = int(np.prod(shape[2:])) if len(shape) > 2 else 1
    fan_sum = (shape[0] + shape[1]) * receptive
    bound = float(np.sqrt(6.0 / fan_sum))
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype))


@dataclass
class AdamState:
    """Per-parameter first/second moments plus the shared step count."""

    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    t: int = 0

    @classmethod
    def for_params(cls, params):
        m = [np.zeros_like(p.data) for p in params]
        v = [np.zeros_like(p.data) for p in params]
        return cls(m=m, v=v, t=0)


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update, in place on the parameter data."""
    params = list(params)
    grads = list(grads)
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError(
            f"adam_step: got {len(params)} params, {len(grads)} grads, "
            f"{len(state.m)} moment buffers"
        )
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            raise ValueError(f"adam_step: missing gradient for {p.name or 'parameter'}")
        if g.shape != p.data.shape:
            raise ShapeError(
                f"adam_step: grad shape {g.shape} does not match parameter "
                f"{p.name or ''} shape {p.data.shape}"
            )
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.value.data -= (lr / c1) * m / (np.sqrt(v / c2) + eps)
    return params, state
