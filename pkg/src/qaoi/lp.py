"""Sparse linear programs in standard minimisation form and a HiGHS-backed solver."""
from __future__ import annotations

import enum
import io
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

DEFAULT_TOL = 1e-8


class LpStatus(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    NUMERICAL_FAILURE = "numerical_failure"


class SolverFailure(RuntimeError):
    def __init__(self, solution: "LpSolution", message: str = ""):
        super().__init__(message or f"LP solve ended with status {solution.status.value}")
        self.solution = solution


@dataclass(frozen=True)
class LinearProgram:
    """minimize ``c @ x`` s.t. ``A_ub @ x <= b_ub``, ``A_eq @ x == b_eq``, ``x >= 0``."""

    c: np.ndarray
    A_ub: sp.csr_matrix
    b_ub: np.ndarray
    A_eq: sp.csr_matrix
    b_eq: np.ndarray
    blocks: tuple["MdpBlock", ...] = ()

    def __post_init__(self):
        n = len(self.c)
        for name in ("A_ub", "A_eq"):
            A = getattr(self, name)
            object.__setattr__(self, name, sp.csr_matrix(A))
            if getattr(self, name).shape[1] != n:
                raise ValueError(f"{name} has {A.shape[1]} columns, expected {n}")
        if self.A_ub.shape[0] != len(self.b_ub) or self.A_eq.shape[0] != len(self.b_eq):
            raise ValueError("row count does not match right-hand side length")
        for arr in (self.c, self.b_ub, self.b_eq, self.A_ub.data, self.A_eq.data):
            if not np.all(np.isfinite(arr)):
                raise ValueError("non-finite coefficient in linear program")

    @property
    def num_vars(self) -> int:
        return len(self.c)

    def scaled(self, factor: float) -> "LinearProgram":
        blocks = tuple(b.scaled(factor) for b in self.blocks)
        return LinearProgram(self.c * factor, self.A_ub, self.b_ub, self.A_eq, self.b_eq, blocks)


@dataclass(frozen=True)
class MdpBlock:
    """Occupation-measure structure of a group of LP columns.

    The block's variables are ``offset + s * n_actions + a`` and its balance
    rows read ``sum_a x(s, a) - discount * sum_{s', a} P_a[s', s] x(s', a) = rhs[s]``.
    ``coupling[k]`` holds the block's coefficients in inequality row k.
    """

    transitions: tuple[sp.csr_matrix, ...]
    cost: np.ndarray
    coupling: np.ndarray
    rhs: np.ndarray
    discount: float
    offset: int

    @property
    def n_states(self) -> int:
        return len(self.rhs)

    @property
    def n_actions(self) -> int:
        return len(self.transitions)

    def scaled(self, factor: float) -> "MdpBlock":
        return MdpBlock(self.transitions, self.cost * factor, self.coupling, self.rhs,
                        self.discount, self.offset)


@dataclass(frozen=True)
class LpSolution:
    status: LpStatus
    x: np.ndarray
    objective_value: float
    max_eq_residual: float
    max_ineq_violation: float
    message: str = ""
    ineq_duals: np.ndarray | None = None  # nonnegative prices of the <= rows, when known

    @property
    def ok(self) -> bool:
        return self.status is LpStatus.OPTIMAL


def validate(lp: LinearProgram, x: np.ndarray) -> tuple[float, float, float]:
    """Return ``(max |A_eq x - b_eq|, max (A_ub x - b_ub)^+, c @ x)``."""
    x = np.asarray(x, dtype=float)
    if x.shape != (lp.num_vars,):
        raise ValueError(f"x has shape {x.shape}, expected ({lp.num_vars},)")
    eq = float(np.max(np.abs(lp.A_eq @ x - lp.b_eq), initial=0.0))
    ineq = float(np.max(lp.A_ub @ x - lp.b_ub, initial=0.0))
    ineq = max(ineq, float(np.max(-x, initial=0.0)))
    return eq, ineq, float(lp.c @ x)


def solve(lp: LinearProgram, tol: float = DEFAULT_TOL, method: str = "auto") -> LpSolution:
    """Solve ``lp``. Residuals are recomputed here, not taken from the backend.

    ``method`` is ``"highs"`` (HiGHS dual simplex on the flat LP),
    ``"decomposition"`` (policy-generation on the block structure, see
    :mod:`qaoi.mdp_lp`) or ``"auto"``, which picks decomposition when the LP
    carries block structure.
    """
    if method == "auto":
        method = "decomposition" if lp.blocks else "highs"
    if method == "decomposition":
        from .mdp_lp import solve_blocks
        return solve_blocks(lp, tol)
    if method != "highs":
        raise ValueError(f"unknown LP method {method!r}")
    return _solve_highs(lp, tol)


def _solve_highs(lp: LinearProgram, tol: float) -> LpSolution:
    # tiny negative entries (|x| < tol) left by the backend are clipped to zero
    res = linprog(
        lp.c,
        A_ub=lp.A_ub if lp.A_ub.shape[0] else None,
        b_ub=lp.b_ub if lp.A_ub.shape[0] else None,
        A_eq=lp.A_eq if lp.A_eq.shape[0] else None,
        b_eq=lp.b_eq if lp.A_eq.shape[0] else None,
        bounds=(0, None),
        method="highs-ds",
        options={
            "primal_feasibility_tolerance": max(min(tol, 1e-7) * 0.1, 1e-10),
            "dual_feasibility_tolerance": max(min(tol, 1e-7) * 0.1, 1e-10),
            "presolve": True,
        },
    )
    nan = np.full(lp.num_vars, np.nan)
    if res.status == 2:
        return LpSolution(LpStatus.INFEASIBLE, nan, np.nan, np.inf, np.inf, res.message)
    if res.status == 3:
        return LpSolution(LpStatus.UNBOUNDED, nan, -np.inf, np.nan, np.nan, res.message)
    if res.x is None:
        return LpSolution(LpStatus.NUMERICAL_FAILURE, nan, np.nan, np.inf, np.inf, res.message)
    x = np.where(np.abs(res.x) < tol, np.maximum(res.x, 0.0), res.x)
    duals = -np.asarray(res.ineqlin.marginals) if lp.A_ub.shape[0] else np.zeros(0)
    return finish(lp, x, tol, res.status == 0, res.message, duals)


def finish(lp: LinearProgram, x: np.ndarray, tol: float, converged: bool = True,
           message: str = "", ineq_duals: np.ndarray | None = None) -> LpSolution:
    """Validate a candidate optimum and wrap it, downgrading to NUMERICAL_FAILURE if needed."""
    eq, ineq, obj = validate(lp, x)
    status = LpStatus.OPTIMAL
    if not converged or eq > tol or ineq > tol:
        status = LpStatus.NUMERICAL_FAILURE
    return LpSolution(status, x, obj, eq, ineq, message, ineq_duals)


def solve_or_raise(lp: LinearProgram, tol: float = DEFAULT_TOL, method: str = "auto") -> LpSolution:
    sol = solve(lp, tol, method)
    if not sol.ok:
        raise SolverFailure(sol, f"LP solve ended with status {sol.status.value} "
                                 f"(eq residual {sol.max_eq_residual:.3g}, "
                                 f"ineq violation {sol.max_ineq_violation:.3g}, tol {tol:g})")
    return sol


def _fmt(v: float) -> str:
    return f"{v:.12g}"


def _row_terms(row: sp.csr_matrix) -> str:
    parts = []
    for j, v in zip(row.indices, row.data):
        sign = "-" if v < 0 else "+"
        parts.append(f"{sign} {_fmt(abs(v))} x{j}")
    text = " ".join(parts) if parts else "0 x0"
    return text[2:] if text.startswith("+ ") else text


def dump_lp(lp: LinearProgram, fh: io.TextIOBase | None = None) -> str:
    """Write the instance in CPLEX LP text format (12 significant digits)."""
    out = io.StringIO()
    out.write("\\ generated by qaoi.lp\nMinimize\n obj: ")
    obj = sp.csr_matrix(lp.c.reshape(1, -1))
    obj.eliminate_zeros()
    out.write(_row_terms(obj) + "\nSubject To\n")
    for k in range(lp.A_ub.shape[0]):
        out.write(f" ub{k}: {_row_terms(lp.A_ub[k])} <= {_fmt(lp.b_ub[k])}\n")
    for k in range(lp.A_eq.shape[0]):
        out.write(f" eq{k}: {_row_terms(lp.A_eq[k])} = {_fmt(lp.b_eq[k])}\n")
    out.write("End\n")
    text = out.getvalue()
    if fh is not None:
        fh.write(text)
    return text
