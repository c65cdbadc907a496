"""QMI uncertainty descriptions and the data-consistency machinery.

A QMI ``[I X] M [I X]^T >= 0`` with ``M = [[M11, M12], [M12^T, M22]]``
describes prior knowledge on ``[A B]``, bounds on the variation of the
dynamics between two time instants, and the process-noise bound.  Each
recorded transition ``(x, u, x_next)`` turns a variation bound into a
QMI on the current ``(A, B)``; summing those with nonnegative multipliers
gives the matrix ``Pi_t(tau)`` used by the synthesis problems.
"""

from dataclasses import dataclass, field

import numpy as np

from .matrixcore import (
    as_matrix,
    is_negative_definite,
    is_positive_definite,
    min_eig,
    sym,
)

MEMBERSHIP_TOL = 1e-7


class AssumptionError(ValueError):
    """A QMI or bound violates one of the standing assumptions."""

    def __init__(self, message, assumption=None):
        super().__init__(message)
        self.assumption = assumption


class DegenerateDataError(ValueError):
    """The data vector ``[x; u]`` is (numerically) zero."""


@dataclass(frozen=True, eq=False)
class Qmi:
    """Generalized QMI descriptor ``[I X] M [I X]^T >= 0``.

    ``m11`` is p x p, ``m12`` is p x q and ``m22`` is q x q.  Construction
    checks ``m22 < 0`` and that the Schur complement of ``m22`` is positive
    definite; ``label`` only feeds error messages.
    """

    m11: np.ndarray
    m12: np.ndarray
    m22: np.ndarray
    label: str = "Assumption 1"

    def __post_init__(self):
        m11 = sym(self.m11)
        m22 = sym(self.m22)
        m12 = as_matrix(self.m12)
        if m12.shape != (m11.shape[0], m22.shape[0]):
            raise ValueError(
                f"m12 has shape {m12.shape}, expected {(m11.shape[0], m22.shape[0])}"
            )
        object.__setattr__(self, "m11", m11)
        object.__setattr__(self, "m12", m12)
        object.__setattr__(self, "m22", m22)
        if not is_negative_definite(m22):
            raise AssumptionError(f"{self.label}: M22 must be negative definite", self.label)
        if not is_positive_definite(self.schur()):
            raise AssumptionError(
                f"{self.label}: M11 - M12 M22^-1 M12^T must be positive definite", self.label
            )

    @property
    def p(self):
        return self.m11.shape[0]

    @property
    def q(self):
        return self.m22.shape[0]

    @property
    def matrix(self):
        return np.block([[self.m11, self.m12], [self.m12.T, self.m22]])

    def schur(self):
        return sym(self.m11 - self.m12 @ np.linalg.solve(self.m22, self.m12.T))

    def center(self):
        """The X maximizing the QMI value, ``-M12 M22^{-1}``."""
        return -np.linalg.solve(self.m22, self.m12.T).T

    def evaluate(self, x):
        """``[I X] M [I X]^T`` for a p x q matrix X."""
        x = as_matrix(x)
        return sym(self.m11 + self.m12 @ x.T + x @ self.m12.T + x @ self.m22 @ x.T)

    def contains(self, x, tol=MEMBERSHIP_TOL):
        return min_eig(self.evaluate(x)) >= -tol

    def sample(self, rng, size=1):
        """Samples X with the QMI satisfied (uniform radius in spectral norm)."""
        z_half = np.linalg.cholesky(self.schur())
        w, v = np.linalg.eigh(-self.m22)
        m22_inv_half = v @ np.diag(w ** -0.5) @ v.T
        c = self.center()
        out = []
        for _ in range(size):
            y = rng.standard_normal((self.p, self.q))
            y *= rng.uniform() / np.linalg.norm(y, 2)
            out.append(c + z_half @ y @ m22_inv_half)
        return out


def qmi_from_ball(center_a, center_b, radius):
    """Prior QMI for ``[A - A_bar, B - B_bar] [.]^T <= diag(radius)^2``.

    A scalar radius gives the spectral-norm ball
    ``||[A - A_bar, B - B_bar]|| <= radius``.  A vector gives one radius per
    row, i.e. the ellipsoid with ``M11 = diag(r)^2 - A_bar A_bar^T - B_bar B_bar^T``.
    """
    a = as_matrix(center_a)
    b = as_matrix(center_b)
    n = a.shape[0]
    if a.shape != (n, n) or b.shape[0] != n:
        raise ValueError(f"inconsistent center shapes {a.shape}, {b.shape}")
    r = np.broadcast_to(np.asarray(radius, dtype=float), (n,))
    if np.any(r <= 0) or not np.all(np.isfinite(r)):
        raise AssumptionError("Assumption 1: radius must be positive", "Assumption 1")
    w = np.hstack([a, b])
    return Qmi(np.diag(r ** 2) - w @ w.T, w, -np.eye(w.shape[1]))


def norm_bound_qmi(radius_sq, n, m, label="Assumption 2"):
    """``M = blkdiag(radius_sq * I_n, -I_{n+m})``: ``||[dA dB]||^2 <= radius_sq``."""
    return Qmi(radius_sq * np.eye(n), np.zeros((n, n + m)), -np.eye(n + m), label=label)


# --- variation profiles ---------------------------------------------------


@dataclass(frozen=True)
class LipschitzProfile:
    """``||[dA dB]|| <= beta * lag``."""

    beta: float
    n: int
    m: int
    kind: str = field(default="lipschitz", init=False)

    def __post_init__(self):
        if self.beta < 0:
            raise AssumptionError("Assumption 2: beta must be nonnegative", "Assumption 2")

    def qmi(self, lag):
        # beta = 0 would make M11 singular; keep a floor like the periodic case.
        r2 = max((self.beta * lag) ** 2, 1e-12)
        return norm_bound_qmi(r2, self.n, self.m)


@dataclass(frozen=True)
class PeriodicProfile:
    """Exact periodicity with period ``t_p``; ``off_period_radius`` bounds other lags."""

    t_p: int
    epsilon: float
    off_period_radius: float
    n: int
    m: int
    kind: str = field(default="periodic", init=False)

    def __post_init__(self):
        if self.t_p < 1 or self.epsilon <= 0 or self.off_period_radius <= 0:
            raise AssumptionError(
                "Assumption 2: need t_p >= 1, epsilon > 0, off_period_radius > 0", "Assumption 2"
            )

    def qmi(self, lag):
        if lag % self.t_p == 0:
            return norm_bound_qmi(self.epsilon, self.n, self.m)
        return norm_bound_qmi(self.off_period_radius ** 2, self.n, self.m)


@dataclass(frozen=True)
class LipschitzModuloProfile:
    """Lipschitz bound on ``lag mod t_p``, and ``epsilon * I`` on full periods."""

    beta: float
    t_p: int
    epsilon: float
    n: int
    m: int
    kind: str = field(default="lipschitz_modulo", init=False)

    def __post_init__(self):
        if self.beta < 0 or self.t_p < 1 or self.epsilon <= 0:
            raise AssumptionError(
                "Assumption 2: need beta >= 0, t_p >= 1, epsilon > 0", "Assumption 2"
            )

    def qmi(self, lag):
        k = lag % self.t_p
        if k == 0:
            return norm_bound_qmi(self.epsilon, self.n, self.m)
        return norm_bound_qmi(max((self.beta * k) ** 2, self.epsilon), self.n, self.m)


@dataclass(frozen=True)
class CustomProfile:
    """Explicit table ``lag -> Qmi``; lags outside the table are an error."""

    table: dict
    kind: str = field(default="custom", init=False)

    def qmi(self, lag):
        try:
            return self.table[lag]
        except KeyError:
            raise KeyError(
                f"custom variation profile has no entry for lag {lag} "
                f"(table covers {sorted(self.table)})"
            ) from None


def variation_qmi(profile, lag):
    if lag < 1:
        raise ValueError(f"lag must be >= 1, got {lag}")
    return profile.qmi(int(lag))


# --- data ------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DataPoint:
    """Transition ``x_{k+1} = f(x_k, u_k)`` observed at ``time_index = k``."""

    x: np.ndarray
    u: np.ndarray
    x_next: np.ndarray
    time_index: int

    def __post_init__(self):
        for name in ("x", "u", "x_next"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).ravel())
        if self.x.shape != self.x_next.shape:
            raise ValueError("x and x_next must have the same dimension")

    @property
    def z(self):
        return np.concatenate([self.x, self.u])

    def scaled(self, k):
        return DataPoint(k * self.x, k * self.u, k * self.x_next, self.time_index)


@dataclass(frozen=True)
class DataWindow:
    """Most recent transitions, oldest first, at most ``max_length`` of them."""

    points: tuple = ()
    max_length: int | None = None

    def __post_init__(self):
        if self.max_length is not None and self.max_length < 1:
            raise ValueError("max_length must be a positive integer")
        pts = tuple(self.points)
        if self.max_length is not None and len(pts) > self.max_length:
            pts = pts[-self.max_length:]
        for a, b in zip(pts, pts[1:]):
            if b.time_index != a.time_index + 1:
                raise ValueError("data window time indices must be contiguous and increasing")
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return len(self.points)

    def append(self, point):
        if self.points and point.time_index != self.points[-1].time_index + 1:
            raise ValueError(
                f"expected time index {self.points[-1].time_index + 1}, got {point.time_index}"
            )
        return DataWindow(self.points + (point,), self.max_length)

    @property
    def current_time(self):
        """Time ``t`` at which the window is used (one after the newest transition)."""
        return self.points[-1].time_index + 1 if self.points else 0

    def lagged(self):
        """Yield ``(lag, point)`` with ``lag = t - time_index`` (newest first)."""
        t = self.current_time
        for p in reversed(self.points):
            yield t - p.time_index, p

    def stacks(self):
        """The ``X`` and ``U`` data matrices of the window."""
        if not self.points:
            return None, None
        x = np.column_stack([p.x for p in self.points] + [self.points[-1].x_next])
        u = np.column_stack([p.u for p in self.points])
        return x, u


def zero_data_threshold(x0):
    return 1e-8 * (1.0 + float(np.linalg.norm(x0)))


def compute_ni(m_i, x, u, threshold=1e-12):
    """The (n+1) x (n+1) matrix describing the virtual disturbance of one transition.

    The set ``{w : [I w] N_i [I w]^T >= 0}`` contains every ``w = [dA dB] z``
    with ``(dA, dB)`` in the variation QMI ``m_i`` and ``z = [x; u]``.
    """
    z = np.concatenate([np.ravel(x), np.ravel(u)]).astype(float)
    if np.linalg.norm(z) <= threshold:
        raise DegenerateDataError(f"data vector norm {np.linalg.norm(z):.3e} below threshold")
    n = m_i.p
    m22_inv_z = np.linalg.solve(m_i.m22, z)
    d = float(z @ m22_inv_z)
    row = (m_i.m12 @ m22_inv_z).reshape(1, n)
    t = np.block([[np.eye(n), np.zeros((n, 1))], [row, np.ones((1, 1))]])
    core = np.zeros((n + 1, n + 1))
    core[:n, :n] = m_i.schur()
    core[n, n] = 1.0 / d
    return sym(t.T @ core @ t)


def data_block(point):
    """``[[I, x_next], [0, -x], [0, -u]]`` of size (2n+m) x (n+1)."""
    n, m = point.x.size, point.u.size
    return np.block(
        [
            [np.eye(n), point.x_next.reshape(n, 1)],
            [np.zeros((n, n)), -point.x.reshape(n, 1)],
            [np.zeros((m, n)), -point.u.reshape(m, 1)],
        ]
    )


@dataclass(frozen=True, eq=False)
class DataTerm:
    lag: int
    point: DataPoint
    n_i: np.ndarray
    block: np.ndarray

    @property
    def matrix(self):
        return sym(self.block @ self.n_i @ self.block.T)


def usable_terms(window, profile, threshold=1e-12, normalize=True):
    """One ``DataTerm`` per non-degenerate transition in the window.

    With ``normalize`` each transition is rescaled to ``||[x; u]|| = 1``
    first; ``block N_i block^T`` is invariant under that rescaling, and the
    normalized form is better conditioned near the origin.  The noisy
    characterization is not scale invariant and must pass ``normalize=False``.
    """
    terms = []
    for lag, p in window.lagged():
        nz = float(np.linalg.norm(p.z))
        if nz <= threshold:
            continue
        q = p.scaled(1.0 / nz) if normalize else p
        n_i = compute_ni(variation_qmi(profile, lag), q.x, q.u, threshold=0.0)
        terms.append(DataTerm(lag, q, n_i, data_block(q)))
    return terms


def assemble_pi_tau(window, profile, taus, threshold=1e-12):
    terms = usable_terms(window, profile, threshold)
    taus = np.asarray(taus, dtype=float).ravel()
    if taus.size != len(terms):
        raise ValueError(f"expected {len(terms)} multipliers, got {taus.size}")
    if np.any(taus < 0):
        raise ValueError("multipliers must be nonnegative")
    n = window.points[0].x.size if window.points else 0
    m = window.points[0].u.size if window.points else 0
    out = np.zeros((2 * n + m, 2 * n + m))
    for tau, term in zip(taus, terms):
        out += tau * term.matrix
    return out


def membership_prior(a, b, prior, tol=MEMBERSHIP_TOL):
    return prior.contains(np.hstack([as_matrix(a), as_matrix(b)]), tol)


def membership_consistency(a, b, point, n_i, tol=MEMBERSHIP_TOL):
    """Does ``(A, B)`` explain ``point`` for some variation admitted by ``n_i``?"""
    w = np.hstack([np.eye(point.x.size), as_matrix(a), as_matrix(b)])
    blk = data_block(point)
    return min_eig(w @ blk @ n_i @ blk.T @ w.T) >= -tol


def qmi_vector_set(n_i):
    """Center and shape of ``{w : [I w] N [I w]^T >= 0}`` as ``w = c + S v, ||v|| <= 1``."""
    n = n_i.shape[0] - 1
    n11, n12, n22 = n_i[:n, :n], n_i[:n, n], float(n_i[n, n])
    if n22 >= 0:
        raise ValueError("trailing entry must be negative for a bounded set")
    c = -n12 / n22
    z = sym(n11 - np.outer(n12, n12) / n22) / (-n22)
    w, v = np.linalg.eigh(z)
    return c, v @ np.diag(np.sqrt(np.clip(w, 0.0, None))) @ v.T


def in_vector_qmi(n_i, w, tol=MEMBERSHIP_TOL):
    n = n_i.shape[0] - 1
    row = np.hstack([np.eye(n), np.reshape(w, (n, 1))])
    return min_eig(row @ n_i @ row.T) >= -tol


# --- process noise ---------------------------------------------------------


@dataclass(frozen=True, eq=False)
class NoiseBound:
    """``||w||_G <= 1``."""

    g: np.ndarray

    def __post_init__(self):
        g = sym(self.g)
        if not is_positive_definite(g):
            raise AssumptionError("Assumption 3: G must be positive definite", "Assumption 3")
        object.__setattr__(self, "g", g)

    @property
    def n(self):
        return self.g.shape[0]

    def contains(self, w, tol=1e-12):
        w = np.ravel(w)
        return float(w @ self.g @ w) <= 1.0 + tol


@dataclass(frozen=True, eq=False)
class NoisyCoupling:
    """Coupling constraint between the data QMI, the noise bound and ``O_i``.

    The (n+3) x (n+3) matrix acts on ``[I, w_data, w_noise, w_total]``:

        emb(O_i) - lam1 * [[N_i, 0], [0, 0]] - lam2 * diag(G^-1, 0, -1, 0)

    and is required to be PSD on the subspace ``w_total = w_data + w_noise``,
    i.e. ``K^T S K >= 0`` with ``K`` the (n+3) x (n+2) lifting below.
    """

    n_i: np.ndarray
    g_inv: np.ndarray

    @property
    def n(self):
        return self.g_inv.shape[0]

    def _selectors(self):
        n = self.n
        e_o = np.zeros((n + 3, n + 1))
        e_o[:n, :n] = np.eye(n)
        e_o[n + 2, n] = 1.0
        e_n = np.zeros((n + 3, n + 1))
        e_n[: n + 1, : n + 1] = np.eye(n + 1)
        return e_o, e_n

    @property
    def lifting(self):
        n = self.n
        k = np.zeros((n + 3, n + 2))
        k[: n + 2, : n + 2] = np.eye(n + 2)
        k[n + 2, n] = 1.0
        k[n + 2, n + 1] = 1.0
        return k

    @property
    def noise_matrix(self):
        n = self.n
        s = np.zeros((n + 3, n + 3))
        s[:n, :n] = self.g_inv
        s[n + 1, n + 1] = -1.0
        return s

    def full_matrix(self, o, lam1, lam2):
        """The (n+3) x (n+3) matrix; works for numpy values and cvxpy expressions."""
        e_o, e_n = self._selectors()
        return e_o @ o @ e_o.T - lam1 * (e_n @ self.n_i @ e_n.T) - lam2 * self.noise_matrix

    def matrix(self, o, lam1, lam2):
        k = self.lifting
        return k.T @ self.full_matrix(o, lam1, lam2) @ k


def noisy_constraint_block(point, n_i, noise):
    if n_i.shape != (point.x.size + 1, point.x.size + 1):
        raise ValueError("N_i does not match the data point dimension")
    return NoisyCoupling(n_i=n_i, g_inv=np.linalg.inv(noise.g))


def sample_in_ball(rng, dim):
    """Uniform sample in the unit Euclidean ball."""
    v = rng.standard_normal(dim)
    v /= np.linalg.norm(v)
    return v * rng.uniform() ** (1.0 / dim)

