"""Explicit finite-volume solver for the weighted q(x)-Laplacian flow.

The equation is d(rho)/dt = div(rho |grad G'(rho)|^(q(x)-2) grad G'(rho))
with no-flux boundary. Fluxes live on faces, densities on cells, and the
gradient magnitude is regularized by (|s|^2 + delta^2)^((q-2)/2) so that
exponents below 2 stay finite at critical points.

Deliberately plain: explicit Euler with a diffusive stability bound on dt.
This module is the slow, transparent reference the step scheme is checked
against, not a production integrator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .energy import EnergyModel, total_energy
from .errors import NumericalBlowupError, SizeMismatchError
from .grid import Grid, divergence, gradient
from .jko import Trajectory
from .varexp import DensityField, ExponentField

#: Default regularization of the gradient magnitude.
DELTA_REG = 1e-8

#: Densities above this abort the run as a blow-up.
BLOWUP_DENSITY = 1e6


@dataclass(frozen=True)
class PdeConfig:
    t_end: float
    cfl: float = 0.5
    delta_reg: float = DELTA_REG
    stride: int = 1
    fixed_dt: float | None = None
    max_steps: int = 5_000_000

    def __post_init__(self):
        if self.t_end < 0.0:
            raise ValueError(f"t_end must be nonnegative, got {self.t_end}")
        if not 0.0 < self.cfl <= 1.0:
            raise ValueError(f"cfl must lie in (0, 1], got {self.cfl}")
        if self.delta_reg < 0.0:
            raise ValueError(f"delta_reg must be nonnegative, got {self.delta_reg}")
        if self.stride < 1:
            raise ValueError(f"stride must be at least 1, got {self.stride}")
        if self.fixed_dt is not None and self.fixed_dt <= 0.0:
            raise ValueError(f"fixed_dt must be positive, got {self.fixed_dt}")


def _face_mean(u: np.ndarray) -> np.ndarray:
    """Arithmetic face averages of a cell field, boundary entries zero."""
    out = np.zeros(u.size + 1)
    out[1:-1] = 0.5 * (u[:-1] + u[1:])
    return out


def rhs(rho: DensityField, e: EnergyModel, q: ExponentField, g: Grid,
        delta_reg: float = DELTA_REG) -> np.ndarray:
    """Spatial operator div(rho |grad G'(rho)|^(q-2) grad G'(rho)) on cells.

    q must be the conjugate of the transport exponent p. Face values of rho
    and q are arithmetic means; boundary fluxes vanish identically, so the
    result integrates to exactly zero.
    """
    rv = rho.density(g)
    if q.values.shape != (g.n_cells,):
        raise SizeMismatchError(
            f"exponent field must have shape ({g.n_cells},), got {q.values.shape}"
        )
    s = gradient(e.deriv(rv), g)
    rho_face = _face_mean(rv)
    q_face = _face_mean(q.values)
    flux = rho_face * (s * s + delta_reg * delta_reg) ** ((q_face - 2.0) / 2.0) * s
    flux[0] = 0.0
    flux[-1] = 0.0
    return divergence(flux, g)


def _diffusivity(rv: np.ndarray, e: EnergyModel, q: ExponentField, g: Grid,
                 delta_reg: float) -> np.ndarray:
    """Cellwise effective diffusivity rho (|s|^2+delta^2)^((q-2)/2) G''(rho)."""
    s_face = gradient(e.deriv(rv), g)
    s_cell = 0.5 * (s_face[:-1] + s_face[1:])
    mag = (s_cell * s_cell + delta_reg * delta_reg) ** ((q.values - 2.0) / 2.0)
    return rv * mag * e.second(rv)


def solve(rho0: DensityField, e: EnergyModel, q: ExponentField, cfg: PdeConfig,
          g: Grid) -> Trajectory:
    """March rho0 to cfg.t_end with explicit Euler steps.

    dt is cfl * dx^2 / max diffusivity unless cfg.fixed_dt pins it (useful
    for comparing two runs on identical time samples; a fixed dt that
    violates the stability bound raises immediately). Recorded states are
    renormalized to the initial total mass, hiding only rounding-level drift;
    the raw drift is observable through the returned times and the per-step
    mass balance, which telescopes exactly.
    """
    m = g.check_cell_field(rho0.mass, "initial mass").copy()
    total0 = m.sum()
    unit = rho0.require_unit_mass
    times = [0.0]
    states = [rho0]
    t = 0.0
    step = 0
    t_final = cfg.t_end
    dt_floor = 1e-30

    while t < t_final - 1e-15 * max(1.0, t_final):
        rv = m / g.dx
        diff = _diffusivity(rv, e, q, g, cfg.delta_reg)
        d_max = float(diff.max())
        dt_stable = cfg.cfl * g.dx**2 / max(d_max, dt_floor) if d_max > 0.0 else np.inf
        if cfg.fixed_dt is not None:
            if cfg.fixed_dt > dt_stable * (1.0 + 1e-9):
                raise NumericalBlowupError(
                    f"fixed_dt={cfg.fixed_dt} exceeds the stability bound "
                    f"{dt_stable:.3e} at t={t:.6g}"
                )
            dt = cfg.fixed_dt
        else:
            dt = dt_stable
        dt = min(dt, t_final - t)
        if not np.isfinite(dt) or dt <= 0.0:
            break
        rate = rhs(DensityField(m, require_unit_mass=False), e, q, g, cfg.delta_reg)
        m = m + dt * rate * g.dx
        t += dt
        step += 1
        if step > cfg.max_steps:
            raise NumericalBlowupError(
                f"step budget {cfg.max_steps} exhausted at t={t:.6g}"
            )
        if not np.all(np.isfinite(m)) or (m / g.dx).max() > BLOWUP_DENSITY:
            raise NumericalBlowupError(
                f"density blew up at t={t:.6g} (max {np.nanmax(m) / g.dx:.3e})"
            )
        if m.min() < -1e-12:
            raise NumericalBlowupError(
                f"density went negative at t={t:.6g} (min {m.min():.3e}); "
                "the explicit step lost monotonicity"
            )
        m = np.maximum(m, 0.0)
        if step % cfg.stride == 0 or t >= t_final - 1e-15 * max(1.0, t_final):
            rec = m * (total0 / m.sum())
            times.append(t)
            states.append(DensityField(rec, require_unit_mass=unit))

    return Trajectory(times=np.asarray(times), states=states, steps=None)


@dataclass(frozen=True)
class ComparisonReport:
    """Positive-part mismatch curve between two trajectories.

    positive_part[k] is the integral of (rho1 - rho2)^+ at sample k;
    worst_increase the largest rise between consecutive samples (a
    contraction property would keep it <= 0); max_positive_part the peak,
    which stays at rounding level when the initial data are ordered.
    """

    times: np.ndarray
    positive_part: np.ndarray
    worst_increase: float
    max_positive_part: float


def comparison_check(traj1: Trajectory, traj2: Trajectory, g: Grid) -> ComparisonReport:
    """Evaluate t -> integral of (rho1 - rho2)^+ on matched time samples."""
    if len(traj1) != len(traj2):
        raise SizeMismatchError(
            f"trajectories have {len(traj1)} and {len(traj2)} samples"
        )
    if np.max(np.abs(traj1.times - traj2.times)) > 1e-12 * max(1.0, traj1.times[-1]):
        raise ValueError("trajectories are sampled at different times")
    pos = np.empty(len(traj1))
    for k in range(len(traj1)):
        diff = traj1.states[k].density(g) - traj2.states[k].density(g)
        pos[k] = np.maximum(diff, 0.0).sum() * g.dx
    worst = float(np.diff(pos).max()) if pos.size > 1 else 0.0
    return ComparisonReport(
        times=traj1.times.copy(),
        positive_part=pos,
        worst_increase=worst,
        max_positive_part=float(pos.max()),
    )


def energy_series(traj: Trajectory, e: EnergyModel, g: Grid) -> np.ndarray:
    """Total energy at each recorded state."""
    return np.asarray([total_energy(s, e, g) for s in traj.states])
