"""Agent-level alignment dynamics with a singular interaction kernel.

Particles are sampled deterministically from an initial density
(proportional allocation over subdomains, midpoint placement), velocities
are read off an initial velocity field, and the ensemble is advanced with
velocity Verlet.  The pairwise force is an O(N^2) sum with fixed
accumulation order so that repeated runs are bitwise identical.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from numba import njit
from scipy.integrate import quad

from fracflock.kernel import KernelSpec, normalization_constant

__all__ = [
    "ParticleEnsemble",
    "TrajectoryLog",
    "SimulationError",
    "sample_particles_1d",
    "sample_particles_2d",
    "assign_velocities",
    "alignment_acceleration",
    "velocity_verlet_step",
    "simulate",
    "largest_remainder_allocation",
]


class SimulationError(RuntimeError):
    """Numerical failure during time integration (non-finite state)."""


@dataclass
class ParticleEnsemble:
    """Positions and velocities of N agents, plus the carried acceleration."""

    positions: np.ndarray  # (N, dim)
    velocities: np.ndarray  # (N, dim)
    dim: int
    accelerations: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.positions = np.atleast_2d(np.asarray(self.positions, dtype=float))
        self.velocities = np.atleast_2d(np.asarray(self.velocities, dtype=float))
        if self.positions.shape != self.velocities.shape:
            raise ValueError("positions and velocities must have equal shape")
        if self.positions.shape[0] < 2:
            raise ValueError("an ensemble needs at least two particles")
        if self.positions.shape[1] != self.dim:
            raise ValueError(
                f"state arrays are {self.positions.shape[1]}-dimensional, "
                f"declared dim={self.dim}"
            )

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    def copy(self) -> "ParticleEnsemble":
        acc = None if self.accelerations is None else self.accelerations.copy()
        return ParticleEnsemble(
            self.positions.copy(), self.velocities.copy(), self.dim, acc
        )


@dataclass
class TrajectoryLog:
    """Snapshots of the full particle state at the requested sample times."""

    sample_times: tuple[float, ...]
    positions: list[np.ndarray] = field(default_factory=list)
    velocities: list[np.ndarray] = field(default_factory=list)
    alpha_used: float = 0.0
    seed: int = 0
    dt: float = 0.0
    domain: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        times = self.sample_times
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("sample_times must be strictly increasing")

    @property
    def n(self) -> int:
        return self.positions[0].shape[0]

    def write(self, out_dir: str | Path) -> list[Path]:
        """One CSV per snapshot (id, x[, y], u[, v]) plus a JSON manifest."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        dim = self.positions[0].shape[1]
        header = ["id", "x", "u"] if dim == 1 else ["id", "x", "y", "u", "v"]
        paths = []
        for t, pos, vel in zip(self.sample_times, self.positions, self.velocities):
            path = out / f"agents_t{t:.4f}.csv"
            with open(path, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(header)
                for i in range(pos.shape[0]):
                    row = (
                        [i]
                        + [repr(float(v)) for v in pos[i]]
                        + [repr(float(v)) for v in vel[i]]
                    )
                    writer.writerow(row)
            paths.append(path)
        manifest = {
            "kind": "agent_trajectories",
            "alpha_used": self.alpha_used,
            "dt": self.dt,
            "seed": self.seed,
            "sample_times": list(self.sample_times),
            "n_particles": self.n,
            "domain": list(self.domain),
            "files": [p.name for p in paths],
        }
        with open(out / "manifest.json", "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
        return paths

    @staticmethod
    def read(in_dir: str | Path) -> "TrajectoryLog":
        src = Path(in_dir)
        with open(src / "manifest.json") as fh:
            manifest = json.load(fh)
        log = TrajectoryLog(
            sample_times=tuple(manifest["sample_times"]),
            alpha_used=manifest["alpha_used"],
            seed=manifest["seed"],
            dt=manifest["dt"],
            domain=tuple(manifest["domain"]),
        )
        for name in manifest["files"]:
            data = np.genfromtxt(src / name, delimiter=",", skip_header=1)
            ncols = data.shape[1]
            dim = (ncols - 1) // 2
            log.positions.append(np.ascontiguousarray(data[:, 1 : 1 + dim]))
            log.velocities.append(np.ascontiguousarray(data[:, 1 + dim :]))
        return log


def largest_remainder_allocation(targets: np.ndarray, total: int) -> np.ndarray:
    """Integer counts summing exactly to ``total``, proportional to targets.

    Floors first, then hands the remaining units to the largest fractional
    parts (ties broken by lower index, so the result is deterministic).
    """
    targets = np.asarray(targets, dtype=float)
    scaled = total * targets / targets.sum()
    counts = np.floor(scaled).astype(int)
    remainder = total - int(counts.sum())
    if remainder > 0:
        fractional = scaled - counts
        order = np.lexsort((np.arange(len(targets)), -fractional))
        counts[order[:remainder]] += 1
    elif remainder < 0:
        # can only happen through float pathologies; trim the smallest fractions
        fractional = scaled - counts
        order = np.lexsort((np.arange(len(targets)), fractional))
        counts[order[: -remainder]] -= 1
    return counts


def _check_unit_mass(total: float) -> None:
    if abs(total - 1.0) > 1e-6:
        raise ValueError(
            f"initial density must integrate to 1, integral is {total:.8f}"
        )


def sample_particles_1d(
    density: Callable[[float], float],
    domain: tuple[float, float],
    n_subdomains: int,
    n_particles: int,
) -> np.ndarray:
    """Deterministic density-proportional particle positions on an interval.

    The domain splits into equal subdomains; each receives a particle count
    proportional to its mass (largest-remainder rounding), placed at the
    midpoints of uniform sub-subintervals.
    """
    a, b = domain
    if n_subdomains < 1 or n_particles < n_subdomains:
        raise ValueError("need n_particles >= n_subdomains >= 1")
    edges = np.linspace(a, b, n_subdomains + 1)
    masses = np.array(
        [
            quad(density, lo, hi, epsabs=1e-12, epsrel=1e-10, limit=200)[0]
            for lo, hi in zip(edges[:-1], edges[1:])
        ]
    )
    _check_unit_mass(float(masses.sum()))
    counts = largest_remainder_allocation(np.maximum(masses, 0.0), n_particles)
    positions = []
    for p, npart in enumerate(counts):
        if npart == 0:
            continue
        width = (edges[p + 1] - edges[p]) / npart
        positions.append(edges[p] + (np.arange(npart) + 0.5) * width)
    return np.concatenate(positions).reshape(-1, 1)


def _subgrid_shape(count: int) -> tuple[int, int]:
    rows = int(math.ceil(math.sqrt(count)))
    cols = int(math.ceil(count / rows))
    return rows, cols


def sample_particles_2d(
    density: Callable[[np.ndarray, np.ndarray], np.ndarray],
    domain: tuple[float, float, float, float],
    n_subdomains: int,
    n_particles: int,
) -> np.ndarray:
    """2D analogue of :func:`sample_particles_1d` on a P x P subdomain grid.

    Cell masses come from a tensor Gauss rule; inside each cell the particles
    occupy the first N_p sites (row-major) of the most-square sub-grid large
    enough to hold them, at sub-cell centers.
    """
    a, b, c, d = domain
    p = n_subdomains
    if p < 1 or n_particles < 1:
        raise ValueError("need n_subdomains >= 1 and n_particles >= 1")
    xe = np.linspace(a, b, p + 1)
    ye = np.linspace(c, d, p + 1)
    nodes, weights = np.polynomial.legendre.leggauss(12)
    masses = np.empty((p, p))
    for i in range(p):
        xm, xh = 0.5 * (xe[i] + xe[i + 1]), 0.5 * (xe[i + 1] - xe[i])
        gx = xm + xh * nodes
        for j in range(p):
            ym, yh = 0.5 * (ye[j] + ye[j + 1]), 0.5 * (ye[j + 1] - ye[j])
            gy = ym + yh * nodes
            vals = density(gx[:, None], gy[None, :])
            masses[i, j] = xh * yh * float(weights @ vals @ weights)
    _check_unit_mass(float(masses.sum()))
    counts = largest_remainder_allocation(
        np.maximum(masses.ravel(), 0.0), n_particles
    ).reshape(p, p)
    xs, ys = [], []
    for i in range(p):
        for j in range(p):
            npart = int(counts[i, j])
            if npart == 0:
                continue
            rows, cols = _subgrid_shape(npart)
            dx = (xe[i + 1] - xe[i]) / cols
            dy = (ye[j + 1] - ye[j]) / rows
            sites = 0
            for r in range(rows):
                for q in range(cols):
                    if sites == npart:
                        break
                    xs.append(xe[i] + (q + 0.5) * dx)
                    ys.append(ye[j] + (r + 0.5) * dy)
                    sites += 1
    return np.column_stack([xs, ys])


def assign_velocities(
    ensemble: ParticleEnsemble, v0: Callable[..., np.ndarray]
) -> ParticleEnsemble:
    """Set velocities[i] = v0(positions[i]) exactly."""
    pos = ensemble.positions
    if ensemble.dim == 1:
        vel = np.asarray(v0(pos[:, 0]), dtype=float).reshape(-1, 1)
    else:
        u, v = v0(pos[:, 0], pos[:, 1])
        vel = np.column_stack([u, v]).astype(float)
    return ParticleEnsemble(pos.copy(), vel, ensemble.dim)


@njit(cache=True)
def _accel_1d(pos, vel, c, expo2, rmin2, out):
    n = pos.shape[0]
    for i in range(n):
        out[i, 0] = 0.0
    for i in range(n):
        xi = pos[i, 0]
        ui = vel[i, 0]
        for j in range(i + 1, n):
            dx = pos[j, 0] - xi
            r2 = dx * dx
            if r2 < rmin2:
                r2 = rmin2
            if r2 <= 0.0:
                return 1
            w = c * r2**expo2
            du = vel[j, 0] - ui
            out[i, 0] += w * du
            out[j, 0] -= w * du
    for i in range(n):
        out[i, 0] /= n
    return 0


@njit(cache=True)
def _accel_2d(pos, vel, c, expo2, rmin2, out):
    n = pos.shape[0]
    for i in range(n):
        out[i, 0] = 0.0
        out[i, 1] = 0.0
    for i in range(n):
        xi = pos[i, 0]
        yi = pos[i, 1]
        ui = vel[i, 0]
        vi = vel[i, 1]
        for j in range(i + 1, n):
            dx = pos[j, 0] - xi
            dy = pos[j, 1] - yi
            r2 = dx * dx + dy * dy
            if r2 < rmin2:
                r2 = rmin2
            if r2 <= 0.0:
                return 1
            w = c * r2**expo2
            du = vel[j, 0] - ui
            dv = vel[j, 1] - vi
            out[i, 0] += w * du
            out[i, 1] += w * dv
            out[j, 0] -= w * du
            out[j, 1] -= w * dv
    for i in range(n):
        out[i, 0] /= n
        out[i, 1] /= n
    return 0


def alignment_acceleration(
    ensemble: ParticleEnsemble, spec: KernelSpec, r_min: float
) -> np.ndarray:
    """Pairwise alignment force a_i = (1/N) sum_j phi(|x_i-x_j|) (v_j - v_i).

    Pair distances are clamped below at ``r_min``; the self term is excluded.
    The accumulation visits partners in ascending index order, so the result
    is bitwise reproducible.
    """
    if r_min < 0.0:
        raise ValueError("r_min must be nonnegative")
    if spec.dim != ensemble.dim:
        raise ValueError("kernel dimension does not match ensemble dimension")
    c = normalization_constant(spec)
    expo2 = -0.5 * spec.decay_exponent  # exponent applied to squared distance
    out = np.empty_like(ensemble.positions)
    kernel = _accel_1d if ensemble.dim == 1 else _accel_2d
    status = kernel(
        ensemble.positions, ensemble.velocities, c, expo2, r_min * r_min, out
    )
    if status != 0:
        raise ValueError(
            "coincident particles with r_min = 0: the kernel is singular"
        )
    return out


def velocity_verlet_step(
    ensemble: ParticleEnsemble, spec: KernelSpec, dt: float, r_min: float
) -> ParticleEnsemble:
    """One velocity-Verlet step; the new force is evaluated at the half-step
    velocity, which keeps the velocity-dependent force update explicit."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    if ensemble.accelerations is None:
        ensemble.accelerations = alignment_acceleration(ensemble, spec, r_min)
    v_half = ensemble.velocities + 0.5 * dt * ensemble.accelerations
    x_new = ensemble.positions + dt * v_half
    staged = ParticleEnsemble(x_new, v_half, ensemble.dim)
    a_new = alignment_acceleration(staged, spec, r_min)
    v_new = v_half + 0.5 * dt * a_new
    return ParticleEnsemble(x_new, v_new, ensemble.dim, a_new)


def simulate(
    ensemble: ParticleEnsemble,
    spec: KernelSpec,
    dt: float,
    t_end: float,
    sample_times: Sequence[float],
    r_min: float,
    alpha_label: float | None = None,
    seed: int = 0,
    domain: tuple[float, ...] = (),
) -> TrajectoryLog:
    """Advance to ``t_end`` and record full state at each sample time.

    Sample times must sit on the step grid (tolerance dt/2).  Any non-finite
    position or velocity aborts with the offending step index.
    """
    times = tuple(sorted(float(t) for t in sample_times))
    n_steps = int(round(t_end / dt)) if t_end > 0 else 0
    steps_at = []
    for t in times:
        k = int(round(t / dt))
        if abs(k * dt - t) > dt / 2 or t < 0 or t > t_end + dt / 2:
            raise ValueError(
                f"sample time {t} is not a step multiple within [0, {t_end}]"
            )
        steps_at.append(min(k, n_steps))
    log = TrajectoryLog(
        sample_times=times,
        alpha_used=spec.alpha if alpha_label is None else alpha_label,
        seed=seed,
        dt=dt,
        domain=domain,
    )
    state = ensemble.copy()
    if state.accelerations is None:
        state.accelerations = alignment_acceleration(state, spec, r_min)
    wanted = dict()
    for t, k in zip(times, steps_at):
        wanted.setdefault(k, []).append(t)
    for t in wanted.get(0, []):
        log.positions.append(state.positions.copy())
        log.velocities.append(state.velocities.copy())
    for step in range(1, n_steps + 1):
        state = velocity_verlet_step(state, spec, dt, r_min)
        if not (
            np.isfinite(state.positions).all() and np.isfinite(state.velocities).all()
        ):
            raise SimulationError(f"non-finite particle state at step {step}")
        for t in wanted.get(step, []):
            log.positions.append(state.positions.copy())
            log.velocities.append(state.velocities.copy())
    return log
