"""Central-difference gradient oracle."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from distillkit.errors import ContractError, OracleInvalidError
from distillkit.numerics.tensor import backward


@dataclass
class GradReport:
    errors: dict = field(default_factory=dict)
    tol: float = 1e-4

    @property
    def max_error(self):
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self):
        return self.max_error < self.tol

    def __str__(self):
        lines = [f"{name}: {err:.3e}" for name, err in self.errors.items()]
        return "\n".join(lines + [f"max {self.max_error:.3e} (tol {self.tol:g})"])


def _named(params):
    if isinstance(params, dict):
        return list(params.items())
    return [(p.name or f"param{i}", p) for i, p in enumerate(params)]


def fd_check(f, params, eps=1e-5, tol=1e-4, max_entries=None, seed=0):
    """Compare reverse-mode gradients of ``f()`` with central differences.

    ``f`` takes no arguments and returns a scalar Tensor built from ``params``
    (a list or dict of Tensors), which are perturbed in place. For each
    parameter the report holds max |analytic - fd| / max(1, |fd|). With
    ``max_entries`` only that many randomly chosen entries per parameter are
    probed.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ContractError(f"eps must lie in [1e-7, 1e-3], got {eps}")
    named = _named(params)
    for _, p in named:
        p.grad = None
        p.requires_grad = True

    loss = f()
    again = f()
    if loss.data.tobytes() != again.data.tobytes():
        raise OracleInvalidError("f() returned different values for identical inputs")
    backward(loss)

    pick = np.random.default_rng(seed)
    report = GradReport(tol=tol)
    for name, p in named:
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(pick.choice(flat.size, size=max_entries, replace=False))
        worst = 0.0
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            up = f().item()
            flat[i] = orig - eps
            down = f().item()
            flat[i] = orig
            fd = (up - down) / (2.0 * eps)
            err = abs(analytic.reshape(-1)[i] - fd) / max(1.0, abs(fd))
            worst = max(worst, err)
        report.errors[name] = worst
    return report
