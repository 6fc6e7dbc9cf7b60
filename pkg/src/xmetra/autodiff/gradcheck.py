"""Central finite-difference gradient checking."""

from dataclasses import dataclass, field

import numpy as np

from xmetra.autodiff.tensor import Tape, Tensor


@dataclass
class GradCheckReport:
    tolerance: float
    max_rel_error: dict = field(default_factory=dict)

    @property
    def worst(self):
        return max(self.max_rel_error.values(), default=0.0)

    @property
    def passed(self):
        return self.worst < self.tolerance

    @property
    def failures(self):
        return {k: v for k, v in self.max_rel_error.items() if not v < self.tolerance}

    def __bool__(self):
        return self.passed


def relative_error(analytic, numeric, floor=1e-5):
    """Elementwise ``|a - n| / max(|a|, |n|, floor)``.

    The floor turns the ratio into an absolute test for entries whose true
    gradient is essentially zero, where central differences only resolve
    down to round-off.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def numeric_gradient(fn, params, name, h=1e-5):
    p = params[name]
    flat = p.values.reshape(-1)
    out = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = float(fn(params).values)
        flat[i] = orig - h
        down = float(fn(params).values)
        flat[i] = orig
        out[i] = (up - down) / (2.0 * h)
    return out.reshape(p.shape)


def finite_difference_check(fn, params, tolerance=1e-4, h=1e-5, floor=1e-5):
    """Compare backward gradients of scalar ``fn(params)`` with central differences.

    ``params`` is a ``{name: Tensor}`` mapping of leaves; ``fn`` must be
    deterministic.  Returns a report holding the max relative error per
    parameter block; failures are reported, not raised.
    """
    params = {k: (p if isinstance(p, Tensor) and p.requires_grad else Tensor(np.asarray(getattr(p, "values", p)), True, k))
              for k, p in params.items()}
    with Tape() as tape:
        loss = fn(params)
    if loss.tape_id is None:
        analytic = {k: np.zeros_like(p.values) for k, p in params.items()}
    else:
        analytic = tape.backward(loss, wrt=params)
    report = GradCheckReport(tolerance=tolerance)
    for name in params:
        numeric = numeric_gradient(fn, params, name, h)
        err = relative_error(analytic[name], numeric, floor)
        report.max_rel_error[name] = float(err.max()) if err.size else 0.0
    return report
