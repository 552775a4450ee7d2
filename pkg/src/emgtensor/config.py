"""Experiment configuration read from a single JSON file.

Every key of every section is required; unknown keys are rejected too, so a
typo never silently falls back to a default.
"""

import json
from dataclasses import dataclass, fields

import numpy as np

from .bayes_mh import PosteriorProblem
from .emg_forward import ConductivitySpec, MeasurementSetup, MuscleModel, default_electrodes
from .errors import ConfigError, InvalidArgument
from .ht_solver import PcgConfig
from .param_tensorization import build_parameter_grid


@dataclass(frozen=True)
class ModelSection:
    extent: list
    h_M: float
    fiber_layout: list
    fiber_points: int
    ap: list
    u: float
    beta: float
    t_steps: int
    h_t: float


@dataclass(frozen=True)
class ConductivitySection:
    sigma_e: list
    s_minus: float
    s_plus: float
    p_ref: list
    reference_direction: int


@dataclass(frozen=True)
class GridSection:
    h_sigma: object  # float or None
    n_per_axis: object  # int or None
    a0_center: str  # "midpoint" or "zero"


@dataclass(frozen=True)
class MeasurementSection:
    electrodes: object  # "default" or list of [x, y, z]
    electrode_layout: list
    xi: float


@dataclass(frozen=True)
class SolverSection:
    epsilon: float
    k_max: int
    trunc_tol: float


@dataclass(frozen=True)
class SamplingSection:
    delta: float
    J_samples: int
    burn_in: int
    sample_direction: bool
    start: object  # "p_ref" or [p1, p2, p3]
    start_direction: int
    data_file: object  # None or path to a whitespace separated vector


@dataclass(frozen=True)
class BenchSection:
    sample_counts: list
    grid_h_M: list
    grid_samples: int
    extrapolate_to: int


SECTIONS = {
    "model": ModelSection,
    "conductivity": ConductivitySection,
    "grid": GridSection,
    "measurement": MeasurementSection,
    "solver": SolverSection,
    "sampling": SamplingSection,
    "bench": BenchSection,
}
TOP_LEVEL = ("seed", "output_dir")


def _section(cls, raw, name):
    if not isinstance(raw, dict):
        raise ConfigError(f"section '{name}' must be an object")
    names = [f.name for f in fields(cls)]
    for key in names:
        if key not in raw:
            raise ConfigError(f"missing config key '{name}.{key}'")
    extra = sorted(set(raw) - set(names))
    if extra:
        raise ConfigError(f"unknown config key '{name}.{extra[0]}'")
    return cls(**{k: raw[k] for k in names})


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelSection
    conductivity: ConductivitySection
    grid: GridSection
    measurement: MeasurementSection
    solver: SolverSection
    sampling: SamplingSection
    bench: BenchSection
    seed: int
    output_dir: str

    @classmethod
    def from_dict(cls, raw):
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        for key in (*SECTIONS, *TOP_LEVEL):
            if key not in raw:
                raise ConfigError(f"missing config key '{key}'")
        extra = sorted(set(raw) - set(SECTIONS) - set(TOP_LEVEL))
        if extra:
            raise ConfigError(f"unknown config key '{extra[0]}'")
        parts = {name: _section(sec, raw[name], name) for name, sec in SECTIONS.items()}
        seed = raw["seed"]
        if not isinstance(seed, int) or not 0 <= seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        cfg = cls(**parts, seed=seed, output_dir=str(raw["output_dir"]))
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
        return cls.from_dict(raw)

    def validate(self):
        """Build every derived object once so inconsistencies surface at load time."""
        try:
            model = self.muscle_model()
            cond = self.conductivity_spec()
            grid = self.parameter_grid()
            self.measurement_setup(model)
            self.pcg_config()
            cond.check(self.p_ref)
        except (InvalidArgument, TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        lo, hi = min(v[0] for v in grid.values), max(v[-1] for v in grid.values)
        if lo < cond.s_minus - 1e-12 or hi > cond.s_plus + 1e-12:
            raise ConfigError("parameter grid leaves [s_minus, s_plus]")
        if self.grid.a0_center not in ("midpoint", "zero"):
            raise ConfigError("grid.a0_center must be 'midpoint' or 'zero'")
        if self.conductivity.reference_direction not in (1, 2, 3):
            raise ConfigError("conductivity.reference_direction must be 1, 2 or 3")
        s = self.sampling
        if not 0 <= s.burn_in < s.J_samples:
            raise ConfigError("need 0 <= sampling.burn_in < sampling.J_samples")
        if not s.delta > 0:
            raise ConfigError("sampling.delta must be positive")
        if s.start_direction not in (1, 2, 3):
            raise ConfigError("sampling.start_direction must be 1, 2 or 3")

    # --- derived objects ---------------------------------------------------

    def muscle_model(self, direction=None, h_M=None):
        m = self.model
        return MuscleModel(
            extent=tuple(float(v) for v in m.extent),
            h_M=float(m.h_M if h_M is None else h_M),
            fiber_layout=tuple(int(v) for v in m.fiber_layout),
            fiber_points=int(m.fiber_points),
            direction=int(self.conductivity.reference_direction if direction is None else direction),
            ap=tuple(float(v) for v in m.ap),
            u=float(m.u),
            beta=float(m.beta),
            t_steps=int(m.t_steps),
            h_t=float(m.h_t),
        )

    def conductivity_spec(self):
        c = self.conductivity
        return ConductivitySpec(tuple(float(v) for v in c.sigma_e), float(c.s_minus), float(c.s_plus))

    @property
    def p_ref(self):
        return np.asarray(self.conductivity.p_ref, dtype=float)

    def parameter_grid(self):
        c, g = self.conductivity, self.grid
        if (g.h_sigma is None) == (g.n_per_axis is None):
            raise ConfigError("exactly one of grid.h_sigma and grid.n_per_axis must be set")
        return build_parameter_grid(float(c.s_minus), float(c.s_plus), g.h_sigma, g.n_per_axis)

    def a0_center(self, grid):
        return grid.midpoint() if self.grid.a0_center == "midpoint" else np.zeros(3)

    def measurement_setup(self, model):
        m = self.measurement
        if m.electrodes == "default":
            rows, cols = (int(v) for v in m.electrode_layout)
            electrodes = default_electrodes(model, rows, cols)
        else:
            electrodes = np.asarray(m.electrodes, dtype=float)
        ext = np.asarray(model.extent)
        e = np.atleast_2d(electrodes)
        if e.shape[1] != 3 or np.any(e < -1e-9) or np.any(e > ext + 1e-9):
            raise ConfigError("electrodes must lie inside the muscle geometry")
        return MeasurementSetup(electrodes, float(m.xi))

    def pcg_config(self):
        s = self.solver
        return PcgConfig(float(s.epsilon), int(s.k_max), float(s.trunc_tol))

    def posterior_problem(self, data, grid, seed=None):
        s = self.sampling
        start = self.p_ref if s.start == "p_ref" else np.asarray(s.start, dtype=float)
        return PosteriorProblem(
            data=data, xi=float(self.measurement.xi), grid=grid, delta=float(s.delta),
            J_samples=int(s.J_samples), burn_in=int(s.burn_in),
            seed=self.seed if seed is None else seed, sample_direction=bool(s.sample_direction),
            start=tuple(start), start_direction=int(s.start_direction),
        )
