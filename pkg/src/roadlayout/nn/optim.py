"""Named parameters and bias-corrected ADAM."""

import numpy as np

from .tensor import Tensor


class Parameter:
    """Trainable tensor plus its ADAM state."""

    __slots__ = ("name", "tensor", "m", "v", "step")

    def __init__(self, name: str, data):
        self.name = name
        self.tensor = Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)
        self.m = np.zeros_like(self.tensor.data)
        self.v = np.zeros_like(self.tensor.data)
        self.step = 0

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    def zero_grad(self):
        self.tensor.grad = None

    def __repr__(self):
        return "Parameter(%r, shape=%s, step=%d)" % (self.name, self.tensor.data.shape, self.step)


def adam_step(
    params,
    grads=None,
    lr: float = 1e-4,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
):
    """One bias-corrected ADAM update; grads default to each tensor's .grad."""
    params = list(params)
    if grads is None:
        grads = [p.tensor.grad for p in params]
    if len(grads) != len(params):
        raise ValueError("got %d grads for %d params" % (len(grads), len(params)))
    for p, g in zip(params, grads):
        if g is None:
            raise ValueError("parameter %r has no gradient" % p.name)
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.tensor.data.shape:
            raise ValueError(
                "gradient shape %s does not match parameter %r %s"
                % (g.shape, p.name, p.tensor.data.shape)
            )
        # A non-finite entry survives the sum as inf or nan, and the value
        # range here is far too small for a finite sum to overflow.
        if not np.isfinite(float(np.sum(g))):
            raise FloatingPointError("non-finite gradient for parameter %r" % p.name)
        p.step += 1
        # In-place moment updates; the bias corrections fold into the step
        # size so the update costs two temporaries per parameter.
        np.multiply(p.m, beta1, out=p.m)
        p.m += (1.0 - beta1) * g
        np.multiply(p.v, beta2, out=p.v)
        gg = np.multiply(g, g)
        gg *= 1.0 - beta2
        p.v += gg
        bc2_sqrt = np.sqrt(1.0 - beta2 ** p.step)
        denom = np.empty_like(p.v)
        np.sqrt(p.v, out=denom)
        denom += eps * bc2_sqrt
        np.divide(p.m, denom, out=denom)
        denom *= lr * bc2_sqrt / (1.0 - beta1 ** p.step)
        p.tensor.data -= denom
