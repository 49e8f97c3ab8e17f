"""Central finite-difference checks of reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import ops
from .tensor import Tensor, get_dtype, no_grad


@dataclass
class InputCheck:
    name: str
    rel_error: float
    checked: int
    mode: str  # "entrywise" or "directional"
    location: Optional[tuple] = None
    note: str = ""


@dataclass
class GradCheckReport:
    name: str
    tol: float
    inputs: list[InputCheck] = field(default_factory=list)

    @property
    def max_rel_error(self) -> float:
        return max((c.rel_error for c in self.inputs), default=0.0)

    @property
    def passed(self) -> bool:
        return all(np.isfinite(c.rel_error) and c.rel_error <= self.tol for c in self.inputs)

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        worst = max(self.inputs, key=lambda c: c.rel_error, default=None)
        where = f" (worst: {worst.name}{' ' + worst.note if worst and worst.note else ''})" if worst else ""
        return f"{status} {self.name}: max rel err {self.max_rel_error:.3e} tol {self.tol:.0e}{where}"


def _rel(a: np.ndarray, n: np.ndarray) -> float:
    num = float(np.linalg.norm((a - n).ravel()))
    den = max(float(np.linalg.norm(a.ravel())), float(np.linalg.norm(n.ravel())), 1e-300)
    if num == 0.0:
        return 0.0
    return num / den


def grad_check(
    fn: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    tol: float = 1e-5,
    eps: float = 1e-5,
    names: Optional[Sequence[str]] = None,
    name: str = "op",
    max_entries: int = 512,
    seed: int = 0,
) -> GradCheckReport:
    """Compare analytic gradients of ``fn(*inputs)`` with central differences.

    Non-scalar outputs are reduced to a scalar by a fixed random projection.
    Inputs with at most ``max_entries`` elements are checked entry by entry;
    larger ones along random directions. Errors are relative in the 2-norm
    over the checked entries (or directions) of each input.
    """
    if get_dtype() != np.float64:
        raise ValueError("grad_check needs fp64; wrap the call in precision('fp64')")
    rng = np.random.default_rng(seed)
    names = list(names) if names is not None else [f"input{i}" for i in range(len(inputs))]
    projection: dict[str, np.ndarray] = {}

    def scalar() -> Tensor:
        out = fn(*inputs)
        if out.size == 1:
            return ops.reshape(out, ())
        if "w" not in projection:
            projection["w"] = rng.standard_normal(out.shape)
        return ops.sum_all(ops.mul(out, Tensor(projection["w"])))

    for t in inputs:
        t.requires_grad = True
        t.grad = None
    loss = scalar()
    loss.backward()

    report = GradCheckReport(name=name, tol=tol)
    for label, t in zip(names, inputs):
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        bad = np.argwhere(~np.isfinite(analytic))
        if bad.size:
            loc = tuple(int(i) for i in bad[0])
            report.inputs.append(InputCheck(label, float("inf"), 0, "entrywise", loc, f"non-finite grad at {loc}"))
            continue
        base = t.data.copy()

        def f_at(delta: np.ndarray) -> float:
            t.data = base + delta
            try:
                with no_grad():
                    return float(scalar().data)
            finally:
                t.data = base

        if t.size <= max_entries:
            numeric = np.zeros_like(base)
            for idx in np.ndindex(base.shape):
                d = np.zeros_like(base)
                d[idx] = eps
                numeric[idx] = (f_at(d) - f_at(-d)) / (2 * eps)
            err = _rel(analytic, numeric)
            diff = np.abs(analytic - numeric)
            loc = tuple(int(i) for i in np.unravel_index(int(diff.argmax()), diff.shape)) if diff.size else None
            report.inputs.append(InputCheck(label, err, base.size, "entrywise", loc))
        else:
            n_dirs = 4
            a_vals, n_vals = [], []
            for _ in range(n_dirs):
                v = rng.standard_normal(base.shape)
                v /= np.linalg.norm(v)
                a_vals.append(float((analytic * v).sum()))
                n_vals.append((f_at(eps * v) - f_at(-eps * v)) / (2 * eps))
            err = _rel(np.array(a_vals), np.array(n_vals))
            report.inputs.append(InputCheck(label, err, n_dirs, "directional"))
    return report
