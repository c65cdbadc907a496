"""LMI synthesis of the min-max state-feedback gains.

Five problem variants share one performance block

    [[ corner + Pi,   [0; H; L],   0    ],
     [ [0, H, L^T],   -H,          Phi^T],
     [ 0,             Phi,         -gamma I]]  < 0,

with ``Phi = [M_R L; M_Q H]``.  They differ in the n x n ``corner``
(``-H`` for prior-only and bootstrap problems, ``-gamma P_p^{-1}`` for the
one-step problems with terminal cost, plus ``(gamma / c) I`` in the noisy
versions) and in ``Pi`` (prior multiplier only, or prior plus data).
Every problem also carries ``[[1, x^T], [x, H]] >= 0`` and the constraint
block ``[[H, (C_x H + C_u L)^T], [C_x H + C_u L, I]] >= 0``.

All solves are carried out on the state normalized to unit norm; the
problems are homogeneous in the decision variables apart from the identity
in the constraint block, which is rescaled accordingly.
"""

from dataclasses import dataclass, field
import logging

import cvxpy as cp
import numpy as np

from . import conic
from .conic import NSD, PSD, ConeProgram, CvxpySolver, SolverOptions
from .matrixcore import invert_pd, is_positive_definite, spectral_bounds, sqrt_factor, sym
from .uncertainty import (
    DataWindow,
    noisy_constraint_block,
    qmi_vector_set,
    usable_terms,
)

log = logging.getLogger(__name__)

CERT_TOL = 1e-6
CONSTRAINT_SCALE_CAP = 1e6

INITIAL = "initial"
ADAPTIVE = "adaptive"
INITIAL_NOISY = "initial_noisy"
ADAPTIVE_NOISY = "adaptive_noisy"
BOOTSTRAP = "bootstrap"


class SynthesisError(RuntimeError):
    pass


class InfeasibleError(SynthesisError):
    """The solver reported the LMI problem infeasible."""


class InitialInfeasibleError(InfeasibleError):
    """The prior-only problem is infeasible; run in bootstrap mode instead."""


class NumericalFailure(SynthesisError):
    pass


@dataclass(frozen=True, eq=False)
class Weights:
    q: np.ndarray
    r: np.ndarray
    c_x: np.ndarray
    c_u: np.ndarray

    def __post_init__(self):
        q, r = sym(self.q), sym(self.r)
        if not is_positive_definite(q) or not is_positive_definite(r):
            raise ValueError("Q and R must be positive definite")
        c_x = np.atleast_2d(np.asarray(self.c_x, dtype=float))
        c_u = np.atleast_2d(np.asarray(self.c_u, dtype=float))
        n, m = q.shape[0], r.shape[0]
        if c_x.shape[1] != n or c_u.shape[1] != m or c_x.shape[0] != c_u.shape[0]:
            raise ValueError(
                f"constraint matrices {c_x.shape}, {c_u.shape} do not match n={n}, m={m}"
            )
        for name, val in (("q", q), ("r", r), ("c_x", c_x), ("c_u", c_u)):
            object.__setattr__(self, name, val)

    @property
    def n(self):
        return self.q.shape[0]

    @property
    def m(self):
        return self.r.shape[0]

    def stage_cost(self, u, x):
        u, x = np.ravel(u), np.ravel(x)
        return float(u @ self.r @ u + x @ self.q @ x)

    def constraint_value(self, x, u):
        return float(np.linalg.norm(self.c_x @ np.ravel(x) + self.c_u @ np.ravel(u)))


def _bmat(rows):
    if any(isinstance(b, cp.Expression) for row in rows for b in row):
        return cp.bmat(rows)
    return np.block([[np.atleast_2d(np.asarray(b, dtype=float)) for b in row] for row in rows])


@dataclass(eq=False)
class SynthesisProblem:
    """Data of one LMI problem, independent of the state scaling."""

    kind: str
    prior: object
    weights: Weights
    terms: list = field(default_factory=list)
    couplings: list = field(default_factory=list)
    p_terminal_inv: np.ndarray | None = None
    c: float | None = None

    @property
    def noisy(self):
        return self.kind in (INITIAL_NOISY, ADAPTIVE_NOISY)

    def _corner(self, v):
        n = self.weights.n
        g, h = v["gamma"], v["H"]
        if self.kind in (INITIAL, INITIAL_NOISY, BOOTSTRAP):
            out = -h
        else:
            out = -g * self.p_terminal_inv
        if self.noisy:
            out = out + (g / self.c) * np.eye(n)
        return out

    def _pi(self, v):
        n, m = self.weights.n, self.weights.m
        e1 = np.vstack([np.eye(n), np.zeros((n + m, n))])
        out = e1 @ self._corner(v) @ e1.T + v["tau_p"] * self.prior.matrix
        for i, term in enumerate(self.terms):
            out = out + v["tau"][i] * term.matrix
        for i, (term, _) in enumerate(self.couplings):
            out = out + term.block @ v[f"O{i}"] @ term.block.T
        return out

    def performance_block(self, v):
        w = self.weights
        n, m = w.n, w.m
        h, l, g = v["H"], v["L"], v["gamma"]
        m_r, m_q = sqrt_factor(w.r), sqrt_factor(w.q)
        sel_h = np.vstack([np.zeros((n, n)), np.eye(n), np.zeros((m, n))])
        sel_l = np.vstack([np.zeros((2 * n, m)), np.eye(m)])
        col = sel_h @ h + sel_l @ l
        phi = np.vstack([m_r, np.zeros((n, m))]) @ l + np.vstack([np.zeros((m, n)), m_q]) @ h
        z = np.zeros((2 * n + m, n + m))
        return _bmat(
            [
                [self._pi(v), col, z],
                [col.T, -h, phi.T],
                [z.T, phi, -g * np.eye(n + m)],
            ]
        )

    def program(self, x, constraint_scale=1.0, eps_strict=1e-6):
        """The ConeProgram for state ``x``.

        ``constraint_scale`` multiplies the identity of the constraint
        block; solving at ``x / s`` with ``constraint_scale = 1 / s**2`` and
        multiplying the solution by ``s**2`` solves the problem at ``x``.
        """
        w = self.weights
        n, m = w.n, w.m
        x = np.ravel(x).reshape(n, 1)
        nc = w.c_x.shape[0]
        prog = ConeProgram(strict_margin=eps_strict)
        prog.add_variable("gamma")
        prog.add_variable("H", (n, n), symmetric=True)
        prog.add_variable("L", (m, n))
        prog.add_variable("tau_p", nonneg=True)
        if self.terms:
            prog.add_variable("tau", (len(self.terms),), nonneg=True)
        for i, _ in enumerate(self.couplings):
            prog.add_variable(f"O{i}", (n + 1, n + 1), symmetric=True)
            prog.add_variable(f"lam1_{i}", nonneg=True)
            prog.add_variable(f"lam2_{i}", nonneg=True)

        prog.add_block("state", lambda v: _bmat([[np.ones((1, 1)), x.T], [x, v["H"]]]), PSD)
        prog.add_block("performance", self.performance_block, NSD, strict=True)

        def constraint(v):
            ch = w.c_x @ v["H"] + w.c_u @ v["L"]
            return _bmat([[v["H"], ch.T], [ch, constraint_scale * np.eye(nc)]])

        prog.add_block("constraint", constraint, PSD)
        for i, (_, coupling) in enumerate(self.couplings):
            prog.add_block(
                f"coupling{i}",
                lambda v, i=i, cpl=coupling: cpl.matrix(v[f"O{i}"], v[f"lam1_{i}"], v[f"lam2_{i}"]),
                PSD,
            )
        return prog

    def candidate(self, base):
        """Prior-only solution lifted to this problem (data multipliers zero)."""
        n = self.weights.n
        vals = {
            "gamma": np.asarray(base.gamma),
            "H": base.h,
            "L": base.l,
            "tau_p": np.asarray(base.multipliers.get("tau_p", 0.0)),
        }
        if self.terms:
            vals["tau"] = np.zeros(len(self.terms))
        for i, _ in enumerate(self.couplings):
            vals[f"O{i}"] = np.zeros((n + 1, n + 1))
            vals[f"lam1_{i}"] = np.asarray(0.0)
            vals[f"lam2_{i}"] = np.asarray(0.0)
        return vals


@dataclass(eq=False)
class SynthesisResult:
    gamma: float
    h: np.ndarray
    l: np.ndarray
    multipliers: dict
    status: str
    solve_time: float
    kind: str = INITIAL
    detail: str = ""
    x: np.ndarray | None = None
    problem: SynthesisProblem | None = None

    @property
    def f(self):
        return np.linalg.solve(self.h.T, self.l.T).T

    @property
    def p(self):
        return sym(self.gamma * invert_pd(self.h))

    def values(self):
        vals = {"gamma": np.asarray(self.gamma), "H": self.h, "L": self.l}
        vals.update({k: np.asarray(v) for k, v in self.multipliers.items()})
        return vals


def _solve(problem, x, opts, solver=None):
    solver = solver or CvxpySolver()
    x = np.ravel(np.asarray(x, dtype=float))
    s = float(np.linalg.norm(x))
    if s == 0.0:
        s = 1.0
    # Capping the identity only tightens the constraint block, so it stays safe.
    kappa = min(1.0 / s ** 2, CONSTRAINT_SCALE_CAP)
    prog = problem.program(x / s, constraint_scale=kappa, eps_strict=opts.eps_strict)
    outcome = solver.solve(prog, opts)
    if outcome.status == conic.INFEASIBLE:
        raise InfeasibleError(f"{problem.kind} problem infeasible ({outcome.detail})")
    if outcome.status != conic.OPTIMAL:
        raise NumericalFailure(f"{problem.kind} problem: {outcome.detail}")
    if not is_positive_definite(outcome.values["H"], 1e-12):
        raise NumericalFailure(f"{problem.kind} problem returned H that is not positive definite")
    vals = {k: v * s ** 2 for k, v in outcome.values.items()}
    h = sym(vals.pop("H"))
    result = SynthesisResult(
        gamma=float(vals.pop("gamma")),
        h=h,
        l=np.atleast_2d(vals.pop("L")),
        multipliers=vals,
        status=conic.OPTIMAL,
        solve_time=outcome.solve_time,
        kind=problem.kind,
        detail=outcome.detail,
        x=x,
        problem=problem,
    )
    return result


def _data_problem(kind, prior, window, profile, weights, threshold):
    terms = usable_terms(window, profile, threshold=threshold) if window is not None else []
    return SynthesisProblem(kind, prior, weights, terms=terms)


def solve_initial(x0, prior, weights, opts=SolverOptions(), solver=None):
    """Prior-only synthesis; the result provides the backup gain and terminal cost."""
    problem = SynthesisProblem(INITIAL, prior, weights)
    try:
        return _solve(problem, x0, opts, solver)
    except InfeasibleError as exc:
        raise InitialInfeasibleError(str(exc)) from exc


def solve_adaptive(x_t, prior, window, profile, p_terminal, weights, opts=SolverOptions(),
                   solver=None, threshold=1e-12):
    problem = _data_problem(ADAPTIVE, prior, window, profile, weights, threshold)
    problem.p_terminal_inv = invert_pd(p_terminal)
    return _solve(problem, x_t, opts, solver)


def solve_bootstrap(x_t, prior, window, profile, weights, opts=SolverOptions(), solver=None,
                    threshold=1e-12):
    """Prior plus data, infinite-horizon corner; no recursive-feasibility guarantee."""
    if window is None or len(window) == 0:
        raise ValueError("bootstrap synthesis needs at least one data point")
    problem = _data_problem(BOOTSTRAP, prior, window, profile, weights, threshold)
    return _solve(problem, x_t, opts, solver)


def _check_c(c, weights):
    if c is None or not c > spectral_bounds(weights.q)[0]:
        raise ValueError(f"c must exceed lambda_min(Q) = {spectral_bounds(weights.q)[0]:g}, got {c}")


def solve_initial_noisy(x0, prior, weights, c, opts=SolverOptions(), solver=None):
    _check_c(c, weights)
    problem = SynthesisProblem(INITIAL_NOISY, prior, weights, c=float(c))
    try:
        result = _solve(problem, x0, opts, solver)
    except InfeasibleError as exc:
        raise InitialInfeasibleError(str(exc)) from exc
    lam_max = spectral_bounds(result.p)[1]
    if not lam_max < c:
        log.warning("noisy initial solution has lambda_max(P) = %g >= c = %g", lam_max, c)
    return result


def solve_adaptive_noisy(x_t, prior, window, profile, noise, p_terminal, weights, c,
                         opts=SolverOptions(), solver=None, threshold=1e-12):
    _check_c(c, weights)
    terms = usable_terms(window, profile, threshold=threshold, normalize=False) if window else []
    couplings = [(t, noisy_constraint_block(t.point, t.n_i, noise)) for t in terms]
    problem = SynthesisProblem(
        ADAPTIVE_NOISY, prior, weights, couplings=couplings,
        p_terminal_inv=invert_pd(p_terminal), c=float(c),
    )
    return _solve(problem, x_t, opts, solver)


def choose_c(x0, prior, weights, opts=SolverOptions(), solver=None, factor=2.0, retries=8):
    """Heuristic constant for the noisy problems.

    Starts from ``factor * lambda_max(P)`` of the noise-free prior solution
    and doubles until the noisy prior problem is feasible.  Returns
    ``(c, result)``.
    """
    base = solve_initial(x0, prior, weights, opts, solver)
    c = max(factor * spectral_bounds(base.p)[1], 1.01 * spectral_bounds(weights.q)[0])
    last = None
    for _ in range(retries + 1):
        try:
            return c, solve_initial_noisy(x0, prior, weights, c, opts, solver)
        except SynthesisError as exc:
            log.info("noisy prior problem failed at c = %g: %s", c, exc)
            last = exc
            c *= 2.0
    raise InitialInfeasibleError(f"noisy prior problem infeasible up to c = {c / 2:g}") from last


# --- certificates ----------------------------------------------------------


@dataclass
class CertificateReport:
    residuals: dict
    min_residual: float
    bound_value: float
    bound_ok: bool
    gain_ok: bool
    p_ok: bool
    decay_worst: float | None = None
    decay_ok: bool | None = None
    samples: int = 0

    @property
    def ok(self):
        return (
            self.min_residual >= -1e-7
            and self.bound_ok
            and self.gain_ok
            and self.p_ok
            and self.decay_ok is not False
        )


def candidate_residual(problem, x, base):
    """Minimum residual of the prior-only candidate in ``problem`` at state ``x``."""
    return problem.program(x, eps_strict=0.0).min_residual(problem.candidate(base))


def check_certificates(result, x_t, weights, p_terminal=None, samples=200, rng=None):
    """Re-substitute a solution into its LMIs and spot-check the cost bound.

    Never raises for a violated certificate; everything is reported.
    """
    x_t = np.ravel(np.asarray(x_t, dtype=float))
    problem = result.problem
    vals = result.values()
    residuals = problem.program(x_t, eps_strict=0.0).residuals(vals) if problem else {}
    min_res = min(residuals.values()) if residuals else 0.0
    p = result.p
    bound = float(x_t @ p @ x_t)
    f = result.f
    gain_ok = bool(
        np.linalg.norm(f @ result.h - result.l) <= 1e-8 * max(1.0, np.linalg.norm(result.l))
    )
    p_ok = bool(
        np.linalg.norm(p @ result.h - result.gamma * np.eye(weights.n))
        <= 1e-8 * max(1.0, result.gamma)
    )
    report = CertificateReport(
        residuals=residuals,
        min_residual=min_res,
        bound_value=bound,
        bound_ok=bound <= result.gamma + CERT_TOL,
        gain_ok=gain_ok,
        p_ok=p_ok,
    )
    if p_terminal is not None and problem is not None and samples > 0:
        rng = rng or np.random.default_rng(0)
        worst = sampled_decay_margin(result, x_t, p_terminal, rng, samples)
        report.decay_worst = worst
        report.decay_ok = worst <= CERT_TOL
        report.samples = samples
    return report


def consistency_sets(problem, result=None):
    """``(point, K)`` pairs; each set is ``[I w] K [I w]^T >= 0`` with ``w = x_next - [A B] z``."""
    sets = [(t.point, t.n_i) for t in problem.terms]
    if result is not None:
        for i, (t, _) in enumerate(problem.couplings):
            o = np.asarray(result.multipliers[f"O{i}"])
            if o[-1, -1] < -1e-12:
                sets.append((t.point, o))
    return sets


def _in_sets(w, prior, sets, tol=1e-9):
    if not prior.contains(w, tol):
        return False
    n = prior.p
    for point, k in sets:
        r = point.x_next - w @ point.z
        row = np.hstack([np.eye(n), r.reshape(n, 1)])
        if np.linalg.eigvalsh(sym(row @ k @ row.T))[0] < -tol:
            return False
    return True


def interior_point(prior, sets):
    """Point of ``Sigma_p`` intersected with the data sets maximizing a common slack."""
    n, q = prior.p, prior.q
    w = cp.Variable((n, q))
    s = cp.Variable()
    zs = np.linalg.cholesky(prior.schur())
    ev, evec = np.linalg.eigh(-prior.m22)
    r_half = evec @ np.diag(np.sqrt(ev)) @ evec.T
    cons = [cp.sigma_max(np.linalg.inv(zs) @ (w - prior.center()) @ r_half) <= 1 - s]
    for point, k in sets:
        c, shape = qmi_vector_set(k)
        cons.append(cp.norm(np.linalg.pinv(shape) @ (point.x_next - w @ point.z - c)) <= 1 - s)
    prob = cp.Problem(cp.Maximize(s), cons + [s <= 1])
    prob.solve(solver="CLARABEL")
    if w.value is None or s.value is None or s.value < 0:
        return None
    return np.asarray(w.value)


def hit_and_run(start, member, rng, count, burn=20, bisect=30):
    """Random walk samples from the convex set described by ``member``."""
    w = np.array(start, dtype=float)
    out = []
    scale = max(1.0, np.linalg.norm(w))
    for k in range(burn + count):
        d = rng.standard_normal(w.shape)
        d /= np.linalg.norm(d)
        ends = []
        for sign in (1.0, -1.0):
            lo, hi = 0.0, scale
            while member(w + sign * hi * d) and hi < 1e3 * scale:
                hi *= 2.0
            for _ in range(bisect):
                mid = 0.5 * (lo + hi)
                if member(w + sign * mid * d):
                    lo = mid
                else:
                    hi = mid
            ends.append(sign * lo)
        w = w + rng.uniform(ends[1], ends[0]) * d
        if k >= burn:
            out.append(w.copy())
    return out


def sampled_decay_margin(result, x_t, p_terminal, rng, samples):
    """Largest violation of the one-step decay over sampled consistent ``(A, B)``.

    Noise-free: ``l(Fx, x) + ||(A + BF) x||^2_{P_term} - ||x||^2_P``.
    Noisy: additionally over sampled noise ``w``, the right-hand side gains
    ``c ||w||^2``.  Positive values beyond tolerance are violations.
    """
    problem = result.problem
    prior = problem.prior
    w_dims = prior.q
    n = prior.p
    sets = consistency_sets(problem, result)
    start = interior_point(prior, sets)
    if start is None:
        return float("nan")
    draws = hit_and_run(start, lambda w: _in_sets(w, prior, sets), rng, samples)
    f = result.f
    p = result.p
    u = f @ x_t
    stage = problem.weights.stage_cost(u, x_t)
    bound = float(x_t @ p @ x_t)
    worst = -np.inf
    for w in draws:
        a, b = w[:, :n], w[:, n:w_dims]
        nxt = a @ x_t + b @ u
        if problem.noisy:
            noise = rng.standard_normal(n) * 1e-2
            val = stage + float((nxt + noise) @ p_terminal @ (nxt + noise)) - bound \
                - problem.c * float(noise @ noise)
        else:
            val = stage + float(nxt @ p_terminal @ nxt) - bound
        worst = max(worst, val)
    return float(worst)
