"""Ground-truth LTV plants used for simulation.

``matrices_at`` exists for verification only; the controller never sees it.
"""

from dataclasses import dataclass, field

import numpy as np

from .uncertainty import NoiseBound, sample_in_ball


def step(plant, t, x, u, noise=None):
    """``x_next = A_t x + B_t u (+ noise)``."""
    a, b = plant.matrices_at(t)
    x = np.ravel(np.asarray(x, dtype=float))
    u = np.ravel(np.asarray(u, dtype=float))
    if x.size != a.shape[0] or u.size != b.shape[1]:
        raise ValueError(f"state/input sizes {x.size}/{u.size} do not match plant {a.shape[0]}/{b.shape[1]}")
    out = a @ x + b @ u
    if noise is not None:
        noise = np.ravel(noise)
        if noise.size != x.size:
            raise ValueError("noise dimension mismatch")
        out = out + noise
    return out


@dataclass
class LipschitzRandomWalkPlant:
    """``diag(a_t, b_t) x + b_column u`` with bounded, slowly drifting ``a_t``, ``b_t``.

    Parameters are generated lazily and cached, so ``matrices_at`` can be
    called for any past time.
    """

    rng: np.random.Generator
    a_bounds: tuple = (0.9, 1.3)
    b_bounds: tuple = (0.3, 0.5)
    step_size: float = 0.01
    b_column: tuple = (0.3, 0.1)
    a0: float | None = None
    b0: float | None = None
    history: list = field(default_factory=list)

    def __post_init__(self):
        a = self.rng.uniform(*self.a_bounds) if self.a0 is None else float(self.a0)
        b = self.rng.uniform(*self.b_bounds) if self.b0 is None else float(self.b0)
        self.history = [(a, b)]

    n = 2
    m = 1

    def advance_parameters(self):
        a, b = self.history[-1]
        da, db = self.rng.uniform(-self.step_size, self.step_size, size=2)
        a = float(np.clip(a + da, *self.a_bounds))
        b = float(np.clip(b + db, *self.b_bounds))
        self.history.append((a, b))
        return self

    def parameters_at(self, t):
        if t < 0:
            raise ValueError("negative time")
        while len(self.history) <= t:
            self.advance_parameters()
        return self.history[t]

    def matrices_at(self, t):
        a, b = self.parameters_at(t)
        return np.diag([a, b]), np.reshape(np.asarray(self.b_column, dtype=float), (2, 1))


@dataclass
class FrozenPlant:
    """Constant ``(A, B)``; handy in tests."""

    a: np.ndarray
    b: np.ndarray

    def matrices_at(self, t):
        return np.asarray(self.a, dtype=float), np.atleast_2d(np.asarray(self.b, dtype=float))


@dataclass
class PeriodicPlant:
    """Three-state academic example with period 12."""

    n = 3
    m = 1
    period = 12

    def matrices_at(self, t):
        w = np.pi / 6.0 * (t % self.period)
        s, c = np.sin(w), np.cos(w)
        a = np.array(
            [
                [1.1 + 0.2 * s, 0.1, 0.0],
                [0.0, 0.7 + 0.15 * s, -0.1],
                [0.0, 0.0, 0.5 + 0.22 * c],
            ]
        )
        b = np.array([[0.6], [0.1], [0.1]])
        return a, b


@dataclass
class NoiseGenerator:
    """Uniform samples in ``{w : w^T G w <= 1}``."""

    bound: NoiseBound
    rng: np.random.Generator

    def __post_init__(self):
        w, v = np.linalg.eigh(self.bound.g)
        self._g_inv_half = v @ np.diag(w ** -0.5) @ v.T

    def sample(self):
        return self._g_inv_half @ sample_in_ball(self.rng, self.bound.n)


def sample_noise(gen):
    return gen.sample()
