"""Lumped-parameter ladder model of a sectioned transformer winding.

Each section k is a series R_k + jwL_k branch paralleled by a series
capacitance Cs_k.  Section k joins node k-1 to node k; node 0 is the winding
head, driven by a unit voltage source, and every node k >= 1 has a ground
capacitance Cg_k.  The last node is tied to ground through the measurement
resistance R_m, whose current is the output current I_o.

Radial deformation is modelled as a change of one section's ground
capacitance only; series inductance, resistance and capacitance stay intact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidFaultError, InvalidGridError, InvalidModelError, SolverError

# Default electrical parameters per section.
DEFAULT_N_SECTIONS = 4
DEFAULT_SERIES_INDUCTANCE = 2e-3  # H
DEFAULT_SERIES_RESISTANCE = 5.0  # ohm
DEFAULT_SERIES_CAPACITANCE = 200e-12  # F
DEFAULT_GROUND_CAPACITANCE = 1e-9  # F
DEFAULT_MEASUREMENT_RESISTANCE = 5000.0  # ohm; a 50 ohm shunt makes the ladder nearly mirror-symmetric

# Relative increase of ground capacitance per millimetre of inward deformation.
DEFAULT_BETA_PER_MM = 0.05

CATALOG_DEPTHS_MM = (6.0, 9.0, 12.0)

DEFAULT_F_MIN = 20.0
DEFAULT_F_MAX = 2.5e6
DEFAULT_N_POINTS = 1000

RESIDUAL_TOL = 1e-9


@dataclass(frozen=True)
class WindingModel:
    series_inductance: tuple[float, ...]
    series_resistance: tuple[float, ...]
    series_capacitance: tuple[float, ...]
    ground_capacitance: tuple[float, ...]
    measurement_resistance: float
    beta_per_mm: float = DEFAULT_BETA_PER_MM

    def __post_init__(self):
        for name in ("series_inductance", "series_resistance",
                     "series_capacitance", "ground_capacitance"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        object.__setattr__(self, "measurement_resistance", float(self.measurement_resistance))
        object.__setattr__(self, "beta_per_mm", float(self.beta_per_mm))
        self.validate()

    @property
    def n_sections(self) -> int:
        return len(self.series_inductance)

    def validate(self):
        n = self.n_sections
        if n < 1:
            raise InvalidModelError("a winding needs at least one section")
        for name in ("series_resistance", "series_capacitance", "ground_capacitance"):
            if len(getattr(self, name)) != n:
                raise InvalidModelError(f"{name} has {len(getattr(self, name))} entries, expected {n}")
        values = (self.series_inductance + self.series_resistance + self.series_capacitance
                  + self.ground_capacitance + (self.measurement_resistance, self.beta_per_mm))
        if not all(math.isfinite(v) for v in values):
            raise InvalidModelError("model parameters must be finite")
        if min(self.series_inductance) <= 0 or min(self.series_capacitance) <= 0 \
                or min(self.ground_capacitance) <= 0:
            raise InvalidModelError("L, Cs and Cg must be strictly positive")
        if min(self.series_resistance) < 0:
            raise InvalidModelError("series resistance must be non-negative")
        if self.measurement_resistance <= 0:
            raise InvalidModelError("measurement resistance must be strictly positive")
        if self.beta_per_mm < 0:
            raise InvalidModelError("beta_per_mm must be non-negative")

    @classmethod
    def uniform(cls, n_sections, inductance, resistance, series_capacitance,
                ground_capacitance, measurement_resistance, beta_per_mm=DEFAULT_BETA_PER_MM):
        return cls(
            series_inductance=(inductance,) * n_sections,
            series_resistance=(resistance,) * n_sections,
            series_capacitance=(series_capacitance,) * n_sections,
            ground_capacitance=(ground_capacitance,) * n_sections,
            measurement_resistance=measurement_resistance,
            beta_per_mm=beta_per_mm,
        )


@dataclass(frozen=True)
class FaultSpec:
    section: int
    depth_mm: float = 0.0

    @property
    def healthy(self) -> bool:
        return self.depth_mm == 0


@dataclass(frozen=True)
class FrequencyGrid:
    points: np.ndarray = field(compare=False)

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64).ravel()
        if pts.size == 0:
            raise InvalidGridError("frequency grid is empty")
        if not np.all(np.isfinite(pts)) or pts[0] <= 0:
            raise InvalidGridError("frequencies must be finite and > 0 (DC excluded)")
        if pts.size > 1 and np.any(np.diff(pts) <= 0):
            raise InvalidGridError("frequencies must be strictly increasing")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return self.points.size

    def __eq__(self, other):
        return isinstance(other, FrequencyGrid) and np.array_equal(self.points, other.points)

    def __hash__(self):
        return hash(self.points.tobytes())

    @property
    def f_min(self) -> float:
        return float(self.points[0])

    @property
    def f_max(self) -> float:
        return float(self.points[-1])

    @classmethod
    def logspace(cls, f_min=DEFAULT_F_MIN, f_max=DEFAULT_F_MAX, n_points=DEFAULT_N_POINTS):
        if not (0 < f_min < f_max) or n_points < 2:
            raise InvalidGridError(f"bad log grid: f_min={f_min}, f_max={f_max}, n={n_points}")
        pts = np.logspace(math.log10(f_min), math.log10(f_max), int(n_points))
        # pin the endpoints exactly
        pts[0], pts[-1] = f_min, f_max
        return cls(pts)


@dataclass(frozen=True)
class FrequencyResponse:
    grid: FrequencyGrid
    magnitude: np.ndarray = field(compare=False)

    def __post_init__(self):
        mag = np.array(self.magnitude, dtype=np.float64).ravel()
        if mag.size != len(self.grid):
            raise InvalidGridError(f"{mag.size} magnitudes for a {len(self.grid)}-point grid")
        mag.setflags(write=False)
        object.__setattr__(self, "magnitude", mag)

    def __eq__(self, other):
        return (isinstance(other, FrequencyResponse) and self.grid == other.grid
                and np.array_equal(self.magnitude, other.magnitude))

    @property
    def frequency(self) -> np.ndarray:
        return self.grid.points


def default_model() -> WindingModel:
    """The canonical 4-section winding (40 turns per section)."""
    return WindingModel.uniform(
        DEFAULT_N_SECTIONS,
        DEFAULT_SERIES_INDUCTANCE,
        DEFAULT_SERIES_RESISTANCE,
        DEFAULT_SERIES_CAPACITANCE,
        DEFAULT_GROUND_CAPACITANCE,
        DEFAULT_MEASUREMENT_RESISTANCE,
    )


def default_grid() -> FrequencyGrid:
    return FrequencyGrid.logspace()


def inject_fault(model: WindingModel, fault: FaultSpec) -> WindingModel:
    """Return a copy of `model` with a radial deformation applied.

    Only the faulted section's ground capacitance changes:
    ``Cg_k * (1 + beta * depth_mm)``.
    """
    if not isinstance(fault.section, (int, np.integer)) or isinstance(fault.section, bool):
        raise InvalidFaultError(f"section must be an integer, got {fault.section!r}")
    if not 1 <= fault.section <= model.n_sections:
        raise InvalidFaultError(
            f"section {fault.section} out of range 1..{model.n_sections}")
    depth = float(fault.depth_mm)
    if not math.isfinite(depth) or depth < 0:
        raise InvalidFaultError(f"depth_mm must be finite and >= 0, got {fault.depth_mm!r}")
    if depth == 0:
        return model
    k = fault.section - 1
    cg = list(model.ground_capacitance)
    cg[k] = cg[k] * (1.0 + model.beta_per_mm * depth)
    return replace(model, ground_capacitance=tuple(cg))


def ladder_system(model: WindingModel, omega):
    """Tridiagonal nodal admittance system for the unknown node voltages v_1..v_n.

    Returns ``(lower, diag, upper, rhs)``, each with a leading frequency axis;
    ``lower[:, 0]`` and ``upper[:, -1]`` are zero padding.  The unit source at
    node 0 appears on the right-hand side of the first row.
    """
    omega = np.atleast_1d(np.asarray(omega, dtype=np.float64))[:, None]
    L = np.asarray(model.series_inductance)
    R = np.asarray(model.series_resistance)
    Cs = np.asarray(model.series_capacitance)
    Cg = np.asarray(model.ground_capacitance)
    jw = 1j * omega

    y_series = 1.0 / (R + jw * L) + jw * Cs  # (F, n), section k joins node k-1 and k
    y_ground = jw * Cg

    n = model.n_sections
    diag = y_series + y_ground
    diag[:, :-1] += y_series[:, 1:]
    diag[:, -1] += 1.0 / model.measurement_resistance

    lower = np.zeros_like(diag)
    upper = np.zeros_like(diag)
    lower[:, 1:] = -y_series[:, 1:]
    upper[:, :-1] = -y_series[:, 1:]

    rhs = np.zeros_like(diag)
    rhs[:, 0] = y_series[:, 0]  # times V_i = 1
    assert diag.shape[1] == n
    return lower, diag, upper, rhs


def _thomas(lower, diag, upper, rhs):
    """Vectorised tridiagonal solve; every row of the leading axis is independent."""
    n = diag.shape[1]
    c = np.empty_like(diag)
    d = np.empty_like(diag)
    c[:, 0] = upper[:, 0] / diag[:, 0]
    d[:, 0] = rhs[:, 0] / diag[:, 0]
    for k in range(1, n):
        denom = diag[:, k] - lower[:, k] * c[:, k - 1]
        c[:, k] = upper[:, k] / denom
        d[:, k] = (rhs[:, k] - lower[:, k] * d[:, k - 1]) / denom
    x = np.empty_like(diag)
    x[:, -1] = d[:, -1]
    for k in range(n - 2, -1, -1):
        x[:, k] = d[:, k] - c[:, k] * x[:, k + 1]
    return x


def tridiagonal_residual(lower, diag, upper, rhs, x):
    """Relative residual ||A x - b|| / ||b|| per frequency."""
    ax = diag * x
    ax[:, 1:] += lower[:, 1:] * x[:, :-1]
    ax[:, :-1] += upper[:, :-1] * x[:, 1:]
    return np.linalg.norm(ax - rhs, axis=1) / np.linalg.norm(rhs, axis=1)


def node_voltages(model: WindingModel, frequencies):
    """Solve the ladder; returns (voltages[F, n], residuals[F])."""
    freqs = np.atleast_1d(np.asarray(frequencies, dtype=np.float64))
    lower, diag, upper, rhs = ladder_system(model, 2 * np.pi * freqs)
    with np.errstate(all="ignore"):
        x = _thomas(lower, diag, upper, rhs)
        res = tridiagonal_residual(lower, diag, upper, rhs, x)
    bad = ~(np.isfinite(res) & (res < RESIDUAL_TOL))
    if np.any(bad):
        idx = int(np.argmax(bad))
        raise SolverError(f"nodal solve failed, residual {res[idx]:.3e}", frequency=float(freqs[idx]))
    return x, res


def frequency_response(model: WindingModel, grid: FrequencyGrid) -> FrequencyResponse:
    """|I_o(f) / V_i(f)| with a unit source at the head and I_o = V_end / R_m."""
    v, _ = node_voltages(model, grid.points)
    i_out = v[:, -1] / model.measurement_resistance
    return FrequencyResponse(grid, np.abs(i_out))


def dev_db(healthy: FrequencyResponse, other: FrequencyResponse) -> np.ndarray:
    """Pointwise deviation of `other` from `healthy` in dB (20 log10 ratio)."""
    if healthy.grid != other.grid:
        raise InvalidGridError("curves are on different grids")
    with np.errstate(divide="ignore"):
        return 20.0 * (np.log10(other.magnitude) - np.log10(healthy.magnitude))


def linf_deviation_db(healthy: FrequencyResponse, other: FrequencyResponse) -> float:
    """Largest absolute deviation between two curves, in dB."""
    return float(np.max(np.abs(dev_db(healthy, other))))
