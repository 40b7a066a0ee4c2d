"""Central finite-difference gradient checking.

The finite-difference side re-evaluates the forward function only; it never
reuses the autodiff gradient it is checking.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .errors import ConfigError

SMALL_MAGNITUDE = 1e-8


@dataclass
class ParamReport:
    name: str
    n_checked: int
    max_error: float
    worst_index: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance


@dataclass
class GradCheckReport:
    entries: list[ParamReport] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    @property
    def max_error(self) -> float:
        return max((e.max_error for e in self.entries), default=0.0)

    def summary(self) -> str:
        lines = []
        for e in self.entries:
            status = "ok" if e.passed else "FAIL"
            lines.append(
                f"{status:4s} {e.name}: max_err={e.max_error:.3e} "
                f"(tol {e.tolerance:.1e}, {e.n_checked} elems, worst idx {e.worst_index})")
        return "\n".join(lines)


def _error(analytic: float, numeric: float) -> float:
    scale = max(abs(analytic), abs(numeric))
    if scale < SMALL_MAGNITUDE:
        return abs(analytic - numeric)
    return abs(analytic - numeric) / scale


def grad_check(f, params, step: float = 1e-5, tolerance: float = 1e-4,
               names=None, max_elements: int | None = None,
               seed: int = 0) -> GradCheckReport:
    """Compare autodiff gradients of ``f()`` against central differences.

    ``f`` is a zero-argument callable returning a scalar Tensor built from
    the leaf tensors in ``params``.  ``max_elements`` limits how many
    elements per parameter get the finite-difference treatment (chosen by a
    seeded RNG); by default every element is checked.
    """
    if not (1e-6 <= step <= 1e-4):
        raise ConfigError("step must lie in [1e-6, 1e-4]")
    params = list(params)
    if names is None:
        names = [f"param{i}" for i in range(len(params))]

    for p in params:
        p.zero_grad()
    loss = f()
    if loss.size != 1:
        raise ConfigError("grad_check requires a scalar-valued function")
    loss.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy()
                for p in params]

    rng = np.random.default_rng(seed)
    report = GradCheckReport()
    for p, g, name in zip(params, analytic, names):
        flat = p.data.reshape(-1)
        n = flat.size
        if max_elements is not None and n > max_elements:
            idxs = rng.choice(n, size=max_elements, replace=False)
        else:
            idxs = np.arange(n)
        max_err, worst = 0.0, -1
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + step
            fp = f().item()
            flat[i] = orig - step
            fm = f().item()
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * step)
            err = _error(float(g.reshape(-1)[i]), numeric)
            if err > max_err:
                max_err, worst = err, int(i)
        report.entries.append(ParamReport(name, len(idxs), max_err, worst, tolerance))
    return report
