"""A thin LMI problem description and the cvxpy-backed solver behind it.

Constraint blocks are stored as builder callables ``f(values) -> matrix``.
The same builder is evaluated symbolically (cvxpy variables) when solving
and numerically (numpy arrays) when re-checking a candidate point, so a
residual check never depends on the solver that produced the point.
"""

from dataclasses import dataclass, field
import time
from typing import Any, Callable

import cvxpy as cp
import numpy as np

from .matrixcore import min_eig, sym

PSD = "psd"
NSD = "nsd"


@dataclass(frozen=True)
class VariableSpec:
    shape: tuple
    symmetric: bool = False
    nonneg: bool = False


@dataclass
class LmiBlock:
    name: str
    build: Callable[[dict], Any]
    sense: str = PSD
    strict: bool = False


@dataclass
class ConeProgram:
    """Minimize one scalar variable subject to affine matrix inequalities."""

    variables: dict = field(default_factory=dict)
    blocks: list = field(default_factory=list)
    objective: str = "gamma"
    strict_margin: float = 1e-6

    def add_variable(self, name, shape=(), symmetric=False, nonneg=False):
        if name in self.variables:
            raise ValueError(f"duplicate variable {name!r}")
        self.variables[name] = VariableSpec(tuple(shape), symmetric, nonneg)

    def add_block(self, name, build, sense=PSD, strict=False):
        if sense not in (PSD, NSD):
            raise ValueError(f"unknown sense {sense!r}")
        self.blocks.append(LmiBlock(name, build, sense, strict))

    def validate(self):
        if self.objective not in self.variables:
            raise ValueError(f"objective references undeclared variable {self.objective!r}")
        if self.variables[self.objective].shape != ():
            raise ValueError("objective variable must be scalar")

    def evaluate(self, values):
        """Numeric value of every block at ``values`` (name -> symmetric matrix)."""
        out = {}
        for blk in self.blocks:
            mat = np.atleast_2d(np.asarray(blk.build(values), dtype=float))
            if mat.shape[0] != mat.shape[1]:
                raise ValueError(f"block {blk.name!r} is not square: {mat.shape}")
            out[blk.name] = sym(mat)
        return out

    def residuals(self, values):
        """Signed minimum eigenvalue per block; >= 0 means satisfied (non-strict)."""
        res = {}
        for blk, (name, mat) in zip(self.blocks, self.evaluate(values).items()):
            res[name] = min_eig(mat if blk.sense == PSD else -mat)
        for name, spec in self.variables.items():
            if spec.nonneg:
                v = np.min(np.asarray(values[name], dtype=float)) if np.size(values[name]) else 0.0
                res[f"{name}>=0"] = float(v)
        return res

    def min_residual(self, values):
        res = self.residuals(values)
        return min(res.values()) if res else 0.0


@dataclass(frozen=True)
class SolverOptions:
    feasibility_tol: float = 1e-8
    max_iters: int = 200
    eps_strict: float = 1e-6
    verbose: bool = False
    solver: str = "CLARABEL"


OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
NUMERICAL_FAILURE = "numerical_failure"


@dataclass
class SolverOutcome:
    status: str
    values: dict | None = None
    detail: str = ""
    solve_time: float = 0.0

    @property
    def ok(self):
        return self.status == OPTIMAL


def _sym_expr(e):
    return (e + e.T) / 2


class CvxpySolver:
    """Interior-point solve of a ``ConeProgram`` through cvxpy.

    Stateless, so one instance may serve several threads working on
    distinct programs.
    """

    fallback_solvers = ("CLARABEL", "SCS")
    residual_tol = 1e-6

    def solve(self, program, options=SolverOptions()):
        program.validate()
        cvars = {}
        for name, spec in program.variables.items():
            kw = {}
            if spec.symmetric:
                kw["symmetric"] = True
            if spec.nonneg:
                kw["nonneg"] = True
            cvars[name] = cp.Variable(spec.shape, name=name, **kw)
        constraints = []
        margin = program.strict_margin
        for blk in program.blocks:
            expr = blk.build(cvars)
            if not isinstance(expr, cp.Expression):
                expr = cp.Constant(np.atleast_2d(expr))
            expr = _sym_expr(expr)
            k = expr.shape[0]
            shift = margin * np.eye(k) if blk.strict else np.zeros((k, k))
            if blk.sense == PSD:
                constraints.append(expr - shift >> 0)
            else:
                constraints.append(-expr - shift >> 0)
        problem = cp.Problem(cp.Minimize(cvars[program.objective]), constraints)

        order = [options.solver] + [s for s in self.fallback_solvers if s != options.solver]
        last_detail = ""
        start = time.perf_counter()
        for solver in order:
            try:
                problem.solve(solver=solver, verbose=options.verbose, **self._solver_kwargs(solver, options))
            except cp.error.SolverError as exc:
                last_detail = f"{solver}: {exc}"
                continue
            status = problem.status
            if status in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
                values = {name: np.asarray(v.value, dtype=float) for name, v in cvars.items()}
                for name, spec in program.variables.items():
                    if spec.symmetric:
                        values[name] = sym(values[name])
                    if spec.nonneg:
                        values[name] = np.maximum(values[name], 0.0)
                detail = solver if status == cp.OPTIMAL else f"{solver} (inaccurate)"
                worst = program.min_residual(values)
                if worst < -self.residual_tol:
                    # the contract promises a point that satisfies its blocks
                    last_detail = f"{detail}: residual {worst:.3e}"
                    continue
                return SolverOutcome(OPTIMAL, values, detail, time.perf_counter() - start)
            if status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
                return SolverOutcome(INFEASIBLE, None, f"{solver}: {status}", time.perf_counter() - start)
            last_detail = f"{solver}: {status}"
        return SolverOutcome(NUMERICAL_FAILURE, None, last_detail, time.perf_counter() - start)

    @staticmethod
    def _solver_kwargs(solver, options):
        tol = options.feasibility_tol
        if solver == "CLARABEL":
            return {
                "max_iter": options.max_iters,
                "tol_feas": tol,
                "tol_gap_abs": tol,
                "tol_gap_rel": tol,
            }
        if solver == "SCS":
            return {"max_iters": max(options.max_iters, 20000), "eps_abs": tol, "eps_rel": tol}
        return {}
