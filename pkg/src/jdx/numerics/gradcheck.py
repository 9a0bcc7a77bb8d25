"""Central-difference verification of analytic gradients.

grad_check perturbs every element of every parameter, so keep the model
slice small; it is the oracle behind the gradient-integrity acceptance
criterion and the `gradcheck` CLI command.
"""

import numpy as np

from .tensor import backward, pause_recording, zero_grad


class GradCheckReport:
    """Per-parameter max relative error and pass/fail judgement."""

    def __init__(self, tol):
        self.tol = tol
        self.errors = {}

    def add(self, name, err):
        self.errors[name] = err

    @property
    def ok(self):
        return all(e < self.tol for e in self.errors.values())

    def failures(self):
        return {n: e for n, e in self.errors.items() if e >= self.tol}

    def lines(self):
        width = max((len(n) for n in self.errors), default=0)
        out = []
        for name, err in self.errors.items():
            status = "PASS" if err < self.tol else "FAIL"
            out.append(f"{name.ljust(width)}  {err:12.3e}  {status}")
        return out


def grad_check(fn, params, h=1e-5, tol=1e-4):
    """Compare backward() gradients of the scalar fn() against central differences.

    `params` maps names to the leaf Tensors fn closes over.  Each parameter
    group is judged by the norm ratio max|analytic - cd| divided by
    max(norm(analytic), norm(cd), 1e-12) over the group, which keeps the
    comparison meaningful where individual elements sit at the roundoff
    floor of the difference quotient.  Failures are reported, never raised.
    """
    report = GradCheckReport(tol)
    zero_grad(params)
    loss = fn()
    backward(loss)
    analytic = {name: p.grad.copy() for name, p in params.items()}
    zero_grad(params)

    with pause_recording():
        for name, p in params.items():
            a = analytic[name].reshape(-1)
            flat = p.data.reshape(-1)
            cd = np.empty_like(a)
            for i in range(flat.size):
                keep = flat[i]
                flat[i] = keep + h
                up = fn().item()
                flat[i] = keep - h
                down = fn().item()
                flat[i] = keep
                cd[i] = (up - down) / (2.0 * h)
            scale = max(np.abs(a).max(initial=0.0), np.abs(cd).max(initial=0.0), 1e-12)
            report.add(name, float(np.abs(a - cd).max(initial=0.0)) / scale)
    return report
