"""Central finite-difference verification of analytic gradients.

Coordinates that sit on a non-differentiable kink (relu at exactly zero,
maxpool ties) are detected by comparing the two one-sided slopes and reported
as excluded rather than failed.
"""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class GradCheckResult:
    max_rel_err: float
    n_checked: int
    excluded: list = field(default_factory=list)

    def ok(self, tol: float = 1e-6) -> bool:
        return self.n_checked > 0 and self.max_rel_err < tol


def grad_check(fn, inputs, eps: float = 1e-5, kink_tol: float = 1e-3) -> GradCheckResult:
    """Compare fn's reverse-mode gradients against central differences.

    fn maps the given Tensors to a scalar Tensor. Every coordinate of every
    input that requires grad is perturbed by +-eps. Error is
    |analytic - numeric| / max(1, |analytic|, |numeric|): relative for
    gradients above unit scale, absolute below it, so coordinates whose true
    gradient is zero compare against finite-difference rounding noise instead
    of blowing up the quotient.
    """
    for t in inputs:
        t.grad = None
    out = fn(*inputs)
    if out.data.size != 1:
        raise ValueError("grad_check needs a scalar objective")
    f0 = float(out.data)
    out.backward()
    analytic = []
    for t in inputs:
        if t.requires_grad:
            analytic.append(np.zeros_like(t.data) if t.grad is None else t.grad.copy())
        else:
            analytic.append(None)

    max_err = 0.0
    n_checked = 0
    excluded = []
    for which, t in enumerate(inputs):
        if analytic[which] is None:
            continue
        flat = t.data.reshape(-1)
        gflat = analytic[which].reshape(-1)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + eps
            f_plus = float(fn(*inputs).data)
            flat[i] = saved - eps
            f_minus = float(fn(*inputs).data)
            flat[i] = saved

            fwd = (f_plus - f0) / eps
            bwd = (f0 - f_minus) / eps
            # A kink shows up as disagreeing one-sided slopes. The floor keeps
            # exactly-zero plateaus (dead relu) checkable instead of excluded.
            if abs(fwd - bwd) > kink_tol * max(abs(fwd), abs(bwd), 1e-8):
                excluded.append((which, i))
                continue
            numeric = (f_plus - f_minus) / (2.0 * eps)
            err = abs(gflat[i] - numeric) / max(1.0, abs(gflat[i]), abs(numeric))
            max_err = max(max_err, err)
            n_checked += 1

    return GradCheckResult(max_err, n_checked, excluded)
