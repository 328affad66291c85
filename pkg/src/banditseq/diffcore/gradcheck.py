"""Central finite-difference checking of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractViolation
from .graph import backward
from .params import ParamStore


@dataclass
class FiniteDiffReport:
    """Per-parameter worst scaled error between analytic and numeric gradients.

    The error for one element is |analytic - numeric| / max(|analytic|,
    |numeric|, floor): relative where gradients are meaningfully sized,
    absolute (at floor * tol) where they are near zero and central
    differences are all roundoff.
    """

    h: float
    tol: float
    max_error: dict[str, float] = field(default_factory=dict)
    flagged: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.flagged

    @property
    def worst(self) -> float:
        return max(self.max_error.values(), default=0.0)

    def __str__(self):
        lines = [f"finite-diff check (h={self.h:g}, tol={self.tol:g})"]
        for name, err in sorted(self.max_error.items(), key=lambda kv: -kv[1]):
            mark = "FLAG" if name in self.flagged else "ok"
            lines.append(f"  {mark:4s} {name:16s} max scaled error {err:.3e}")
        return "\n".join(lines)


def finite_diff_check(loss_fn, store: ParamStore, h: float = 1e-5,
                      tol: float = 1e-4, abs_floor: float = 1e-8) -> FiniteDiffReport:
    """Compare `backward`'s gradients of loss_fn against central differences.

    `loss_fn(store)` must build and return a fresh scalar loss node against
    the store's current values, and must be deterministic: it is evaluated
    twice at the base point and any disagreement is a contract violation
    (stochastic losses must be given a frozen noise stream).
    """
    if not (1e-6 <= h <= 1e-3):
        raise ContractViolation(f"step size h={h} outside [1e-6, 1e-3]")

    base1 = float(loss_fn(store).val)
    base2 = float(loss_fn(store).val)
    if base1 != base2:
        raise ContractViolation(
            f"loss_fn is nondeterministic: {base1!r} != {base2!r} at the same point")

    store.zero_grads()
    backward(loss_fn(store))
    analytic = {name: store.grad(name).copy() for name in store.names()}
    store.zero_grads()

    floor = abs_floor / tol
    report = FiniteDiffReport(h=h, tol=tol)
    for name in store.names():
        p = store[name]
        flat = p.ravel()
        worst = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = float(loss_fn(store).val)
            flat[i] = orig - h
            down = float(loss_fn(store).val)
            flat[i] = orig
            numeric = (up - down) / (2.0 * h)
            a = analytic[name].ravel()[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            if err > worst:
                worst = err
        report.max_error[name] = worst
        if worst > tol:
            report.flagged.append(name)
    return report
