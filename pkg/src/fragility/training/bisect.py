"""Outer search on the fragility ``k``.

Feasibility at ``k`` means the inner minimum of the constraint function is
nonpositive. Starting from ``k0 = 1`` the bracket is doubled (or halved) until
it straddles the boundary, then bisected to an absolute width ``outer_tol``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

from .inner import InnerSolution
from .spec import SolverParams, TargetTooTight


@dataclass
class BisectionOutcome:
    k: float
    solution: InnerSolution
    k_lo: float  # largest k found infeasible (0 when the floor is feasible)
    active: bool
    trace: list[tuple[float, float]] = field(default_factory=list)  # (k, value)
    inner_iterations: int = 0
    inner_failures: int = 0

    def diagnostics(self) -> dict:
        return {
            "k_lo": self.k_lo,
            "k_hi": self.k,
            "evaluations": len(self.trace),
            "inner_iterations": self.inner_iterations,
            "inner_failures": self.inner_failures,
            "trace": [[k, v] for k, v in self.trace],
        }


def bisect_fragility(solve: Callable[[float, InnerSolution | None], InnerSolution],
                     params: SolverParams, k0: float = 1.0) -> BisectionOutcome:
    """Smallest feasible ``k`` to within ``params.outer_tol``.

    ``solve(k, warm)`` returns the inner solution at ``k`` warm-started from
    ``warm`` (``None`` on the first call, meaning zero initialization).
    """
    trace: list[tuple[float, float]] = []
    stats = {"it": 0, "fail": 0}
    last: list[InnerSolution | None] = [None]

    def feasible(k: float) -> tuple[bool, InnerSolution]:
        sol = solve(k, last[0])
        last[0] = sol
        trace.append((k, sol.value))
        stats["it"] += sol.iterations
        stats["fail"] += 0 if sol.success else 1
        return sol.value <= 0.0, sol

    floor = params.outer_tol
    ok, sol = feasible(k0)
    if ok:
        hi, sol_hi, lo = k0, sol, None
        while hi / 2.0 >= floor:
            ok, sol = feasible(hi / 2.0)
            if not ok:
                lo = hi / 2.0
                break
            hi, sol_hi = hi / 2.0, sol
        if lo is None:
            ok, sol = feasible(floor)
            if ok:
                return BisectionOutcome(floor, sol, 0.0, False, trace, stats["it"], stats["fail"])
            lo = floor
    else:
        lo, hi, sol_hi = k0, None, None
        for _ in range(params.max_doublings):
            k = 2.0 * lo
            ok, sol = feasible(k)
            if ok:
                hi, sol_hi = k, sol
                break
            lo = k
        if hi is None:
            raise TargetTooTight(
                f"target infeasible up to k = {lo:.3g}; best constraint value {trace[-1][1]:.6g} > 0")

    while hi - lo > params.outer_tol:
        mid = 0.5 * (lo + hi)
        ok, sol = feasible(mid)
        if ok:
            hi, sol_hi = mid, sol
        else:
            lo = mid
    return BisectionOutcome(hi, sol_hi, lo, True, trace, stats["it"], stats["fail"])
