"""Scenario configuration: presets, TOML round-trip, validation and run dispatch."""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
import math
from pathlib import Path

import numpy as np
import tomli
import tomli_w

from . import control_loop as cl
from .conic import SolverOptions
from .plant import FrozenPlant, LipschitzRandomWalkPlant, PeriodicPlant
from .synthesis import Weights
from .uncertainty import (
    AssumptionError,
    LipschitzModuloProfile,
    LipschitzProfile,
    NoiseBound,
    PeriodicProfile,
    Qmi,
    membership_prior,
    qmi_from_ball,
    variation_qmi,
)


class ScenarioError(ValueError):
    """Schema violation; ``path`` names the offending field."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path


def _canon(v):
    """Nested lists of floats (ints kept for counters handled by callers)."""
    if isinstance(v, dict):
        return {k: _canon(x) for k, x in v.items() if x is not None}
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_canon(x) for x in v]
    if isinstance(v, (bool, str)):
        return v
    if isinstance(v, (int, float, np.integer, np.floating)):
        return float(v)
    raise ScenarioError("?", f"unsupported value {v!r}")


@dataclass
class ScenarioConfig:
    name: str
    prior: dict
    profile: dict
    weights: dict
    plant: dict
    x0: list
    noise: dict | None = None
    steps: int = 40
    window: int | None = 5
    mode: str = cl.ADAPTIVE
    excitation_steps: int = 10
    input_range: list = field(default_factory=lambda: [-1.0, 1.0])
    stop_threshold: float | None = None
    c: float | None = None
    seeds: list = field(default_factory=lambda: list(range(10)))

    def __post_init__(self):
        self.prior = _canon(self.prior)
        self.profile = _canon(self.profile)
        self.weights = _canon(self.weights)
        self.plant = _canon(self.plant)
        self.x0 = _canon(self.x0)
        self.noise = _canon(self.noise) if self.noise is not None else None
        self.input_range = _canon(self.input_range)
        self.seeds = [int(s) for s in self.seeds]
        for key in ("kind",):
            for sec in ("prior", "profile", "plant"):
                d = getattr(self, sec)
                if not isinstance(d, dict) or key not in d:
                    raise ScenarioError(f"{sec}.{key}", "missing")

    @property
    def n(self):
        return len(self.x0)

    @property
    def m(self):
        return len(self.weights["r"])

    # -- builders ---------------------------------------------------------

    def build_prior(self):
        p = self.prior
        kind = p["kind"]
        try:
            if kind == "ball":
                return qmi_from_ball(p["a_bar"], p["b_bar"], p["radius"])
            if kind == "explicit":
                return Qmi(np.array(p["m11"]), np.array(p["m12"]), np.array(p["m22"]))
        except KeyError as exc:
            raise ScenarioError(f"prior.{exc.args[0]}", "missing") from None
        except AssumptionError:
            raise
        except ValueError as exc:
            raise ScenarioError("prior", str(exc)) from None
        raise ScenarioError("prior.kind", f"unknown prior kind {kind!r}")

    def build_profile(self):
        p, n, m = self.profile, self.n, self.m
        kind = p["kind"]
        try:
            if kind == "lipschitz":
                return LipschitzProfile(p["beta"], n, m)
            if kind == "lipschitz_modulo":
                return LipschitzModuloProfile(p["beta"], int(p["t_p"]), p["epsilon"], n, m)
            if kind == "periodic":
                return PeriodicProfile(int(p["t_p"]), p["epsilon"], p["off_period_radius"], n, m)
        except KeyError as exc:
            raise ScenarioError(f"profile.{exc.args[0]}", "missing") from None
        raise ScenarioError("profile.kind", f"unknown profile kind {kind!r}")

    def build_weights(self):
        w = self.weights
        try:
            return Weights(np.array(w["q"]), np.array(w["r"]), np.array(w["c_x"]), np.array(w["c_u"]))
        except KeyError as exc:
            raise ScenarioError(f"weights.{exc.args[0]}", "missing") from None
        except ValueError as exc:
            raise ScenarioError("weights", str(exc)) from None

    def build_noise(self):
        if self.noise is None:
            return None
        if "g" not in self.noise:
            raise ScenarioError("noise.g", "missing")
        return NoiseBound(np.array(self.noise["g"]))

    def build_plant(self, rng):
        p = self.plant
        kind = p["kind"]
        if kind == "lipschitz_walk":
            return LipschitzRandomWalkPlant(
                rng,
                a_bounds=tuple(p.get("a_bounds", (0.9, 1.3))),
                b_bounds=tuple(p.get("b_bounds", (0.3, 0.5))),
                step_size=p.get("step_size", 0.01),
                b_column=tuple(p.get("b_column", (0.3, 0.1))),
            )
        if kind == "periodic":
            return PeriodicPlant()
        if kind == "frozen":
            return FrozenPlant(np.array(p["a"]), np.array(p["b"]))
        raise ScenarioError("plant.kind", f"unknown plant kind {kind!r}")

    def loop_config(self, seed, mode=None, solver=SolverOptions()):
        return cl.LoopConfig(
            steps=self.steps,
            window_length=self.window,
            mode=mode or self.mode,
            excitation_steps=self.excitation_steps,
            input_range=tuple(self.input_range),
            stop_threshold=self.stop_threshold,
            seed=seed,
            c=self.c,
            solver=solver,
        )

    def validate(self):
        """Build everything once; raises ``ScenarioError`` or ``AssumptionError``."""
        if not isinstance(self.steps, int) or self.steps < 1:
            raise ScenarioError("steps", f"must be a positive integer, got {self.steps!r}")
        if self.window is not None and (not isinstance(self.window, int) or self.window < 1):
            raise ScenarioError("window", f"must be a positive integer, got {self.window!r}")
        if self.mode not in cl.MODES:
            raise ScenarioError("mode", f"unknown mode {self.mode!r}")
        if self.mode in (cl.ADAPTIVE_NOISY, cl.STATIC_NOISY) and self.noise is None:
            raise ScenarioError("noise", f"mode {self.mode} needs a noise bound")
        prior = self.build_prior()
        if prior.p != self.n or prior.q != self.n + self.m:
            raise ScenarioError("prior", f"dimensions {prior.p}x{prior.q} do not match n={self.n}, m={self.m}")
        weights = self.build_weights()
        if weights.n != self.n:
            raise ScenarioError("weights.q", f"must be {self.n}x{self.n}")
        self.build_profile()
        noise = self.build_noise()
        if noise is not None and noise.n != self.n:
            raise ScenarioError("noise.g", f"must be {self.n}x{self.n}")
        if self.c is not None and not self.c > np.linalg.eigvalsh(weights.q)[0]:
            raise ScenarioError("c", "must exceed lambda_min(Q)")
        plant = self.build_plant(np.random.default_rng(0))
        a, b = plant.matrices_at(0)
        if a.shape != (self.n, self.n) or b.shape != (self.n, self.m):
            raise ScenarioError("plant", "plant dimensions do not match the scenario")
        check_plant(plant, prior, self.build_profile(), self.steps, self.window or 12)
        return self

    # -- serialization ----------------------------------------------------

    def to_dict(self):
        d = asdict(self)
        # TOML has no null; an unbounded window is written as 0
        d["window"] = d["window"] or 0
        return {k: v for k, v in d.items() if v is not None}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ScenarioError(sorted(unknown)[0], "unknown field")
        for req in ("name", "prior", "profile", "weights", "plant", "x0"):
            if req not in d:
                raise ScenarioError(req, "missing")
        for key in ("steps", "window", "excitation_steps"):
            if key in d and isinstance(d[key], float) and d[key].is_integer():
                d[key] = int(d[key])
        if d.get("window") == 0:
            d["window"] = None
        return cls(**d)


def check_plant(plant, prior, profile, steps, max_lag):
    """Simulated plant matrices must lie in the prior and respect the variation bounds."""
    mats = [np.hstack(plant.matrices_at(t)) for t in range(steps + 1)]
    for t, w in enumerate(mats):
        if not membership_prior(w[:, : prior.p], w[:, prior.p:], prior):
            raise AssumptionError(f"Assumption 1: plant matrices at t = {t} lie outside the prior",
                                  "Assumption 1")
        for lag in range(1, min(t, max_lag) + 1):
            if not variation_qmi(profile, lag).contains(w - mats[t - lag]):
                raise AssumptionError(
                    f"Assumption 2: plant variation at t = {t}, lag {lag} exceeds the profile",
                    "Assumption 2",
                )


def dumps(cfg):
    return tomli_w.dumps(cfg.to_dict())


def loads(text):
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ScenarioError("<file>", str(exc)) from None
    return ScenarioConfig.from_dict(data)


def _eye(k, s=1.0):
    return (s * np.eye(k)).tolist()


def _presets():
    lip_prior = {
        "kind": "ball",
        "a_bar": [[1.1, 0.0], [0.0, 0.4]],
        "b_bar": [[0.3], [0.1]],
        # per-row radii: 0.2 on a_t, 0.1 on b_t
        "radius": [0.2, 0.1],
    }
    lip_weights = {"q": _eye(2), "r": _eye(1, 0.01), "c_x": [[0.0, 0.0]], "c_u": [[1.0]]}
    lip = ScenarioConfig(
        name="viA_lipschitz",
        prior=lip_prior,
        profile={"kind": "lipschitz", "beta": 0.01},
        weights=lip_weights,
        plant={"kind": "lipschitz_walk", "a_bounds": [0.9, 1.3], "b_bounds": [0.3, 0.5],
               "step_size": 0.01, "b_column": [0.3, 0.1]},
        x0=[0.5, 0.5],
    )
    lip_noisy = replace(lip, name="viA_lipschitz_noisy", noise={"g": _eye(2, 1e4)},
                        mode=cl.ADAPTIVE_NOISY)
    widened = replace(
        lip,
        name="viA_widened_bootstrap",
        # circumscribed ball of the parameter box |da| <= 0.2, |db| <= 0.2
        prior=dict(lip_prior, radius=0.2 * math.sqrt(2.0)),
        plant=dict(lip.plant, b_bounds=[0.2, 0.6]),
        mode=cl.BOOTSTRAP,
    )
    per = ScenarioConfig(
        name="viB_periodic",
        prior={
            "kind": "ball",
            "a_bar": [[1.1, 0.1, 0.0], [0.0, 0.7, -0.1], [0.0, 0.0, 0.5]],
            "b_bar": [[0.6], [0.1], [0.1]],
            "radius": 0.22,
        },
        profile={"kind": "lipschitz_modulo", "beta": 11.0 * math.pi / 300.0, "t_p": 12,
                 "epsilon": 1e-8},
        weights={"q": _eye(3), "r": _eye(1), "c_x": [[0.0, 0.0, 0.0]], "c_u": [[2.0]]},
        plant={"kind": "periodic"},
        x0=[0.6, 0.6, 0.9],
        window=None,
    )
    # The automatic choice of c stops short of feasibility here; 1e6 is
    # infeasible and 1e7 is the first power of ten that works.
    per_noisy = replace(per, name="viB_periodic_noisy", noise={"g": _eye(3, 1e4)},
                        mode=cl.ADAPTIVE_NOISY, c=1e7)
    return {c.name: c for c in (lip, lip_noisy, widened, per, per_noisy)}


PRESETS = _presets()


def preset(name):
    try:
        return replace(PRESETS[name])
    except KeyError:
        raise ScenarioError("scenario", f"unknown preset {name!r}; known: {sorted(PRESETS)}") from None


def parse_scenario(source):
    """Preset name or path to a TOML file; the result is validated."""
    path = Path(source)
    if str(source) in PRESETS:
        cfg = preset(str(source))
    elif path.suffix == ".toml" or path.exists():
        try:
            text = path.read_text()
        except OSError as exc:
            raise ScenarioError("scenario", str(exc)) from None
        cfg = loads(text)
    else:
        raise ScenarioError("scenario", f"unknown preset or missing file {source!r}")
    return cfg.validate()


# --- running -----------------------------------------------------------------

STATIC_OF = {cl.ADAPTIVE: cl.STATIC, cl.ADAPTIVE_NOISY: cl.STATIC_NOISY}


def streams(seed):
    """Independent generators for plant parameters, process noise and excitation."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3)]


def run_scenario(cfg, seed, mode=None, solver=SolverOptions()):
    mode = mode or cfg.mode
    loop = cfg.loop_config(seed, mode, solver)
    plant_rng, noise_rng, excite_rng = streams(seed)
    plant = cfg.build_plant(plant_rng)
    prior, profile, weights = cfg.build_prior(), cfg.build_profile(), cfg.build_weights()
    noise = cfg.build_noise()
    rest = [noise_rng, excite_rng]
    x0 = np.array(cfg.x0)
    if mode == cl.ADAPTIVE:
        return cl.run_algorithm1(plant, prior, profile, weights, loop, x0, rest)
    if mode == cl.STATIC:
        return cl.run_static(plant, prior, weights, loop, x0, None, rest)
    if mode == cl.ADAPTIVE_NOISY:
        if noise is None:
            raise ScenarioError("noise", "noisy mode without a noise bound")
        return cl.run_algorithm2(plant, prior, profile, noise, weights, loop, x0, rest)
    if mode == cl.STATIC_NOISY:
        if noise is None:
            raise ScenarioError("noise", "noisy mode without a noise bound")
        return cl.run_static(plant, prior, weights, loop, x0, noise, rest)
    return cl.run_bootstrap(plant, prior, profile, weights, loop, x0, rest)


def _run_one(args):
    return run_scenario(*args)


def run_batch(cfg, seeds, mode=None, solver=SolverOptions(), workers=1):
    """Runs ordered by seed; with ``workers > 1`` they execute in a process pool."""
    jobs = [(cfg, s, mode, solver) for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run_one, jobs))
    return [_run_one(j) for j in jobs]
