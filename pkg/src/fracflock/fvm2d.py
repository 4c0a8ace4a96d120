"""Finite-volume solver for the 2D pressureless Euler system with the
nonlocal alignment source, on uniform rectangular meshes.

Dimension-split Godunov fluxes upwind the normal momentum exactly as in 1D
and transport the transverse momentum with the same case selector.  The
nonlocal quadrature couples cells across strictly diagonal offsets (both
index offsets nonzero); offsets touching the first row or column of the
weight table are evaluated at half-cell distances.  The resulting matrix is
block-Toeplitz-Toeplitz-block and symmetric, applied through a 2D circulant
embedding and FFT, which makes total mass and both momentum components
conserved to rounding error.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from fracflock.fvm1d import (
    RHO_FLOOR,
    NEGATIVE_RHO_TOL,
    CflWarning,
    SolverError,
    relative_drift,
)
from fracflock.kernel import KernelSpec, influence, tail_mass_2d
from fracflock.timestepping import ssp_rk2_step

__all__ = [
    "Grid2D",
    "ConservedField2D",
    "NonlocalOperator2D",
    "EulerSolution2D",
    "godunov_flux_2d_x",
    "godunov_flux_2d_y",
    "build_nonlocal_operator_2d",
    "apply_nonlocal_2d",
    "source_2d",
    "fv_rhs_2d",
    "solve_euler_2d",
    "project_initial_2d",
]


@dataclass(frozen=True)
class Grid2D:
    a: float
    b: float
    c: float
    d: float
    k: int
    l: int

    def __post_init__(self) -> None:
        if self.k < 2 or self.l < 2:
            raise ValueError("grid needs at least 2 cells per direction")
        if self.b <= self.a or self.d <= self.c:
            raise ValueError("degenerate rectangle")

    @property
    def dx(self) -> float:
        return (self.b - self.a) / self.k

    @property
    def dy(self) -> float:
        return (self.d - self.c) / self.l

    def x_centers(self) -> np.ndarray:
        return self.a + (np.arange(self.k) + 0.5) * self.dx

    def y_centers(self) -> np.ndarray:
        return self.c + (np.arange(self.l) + 0.5) * self.dy

    def cell_of(self, x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        i = np.clip(np.floor((np.asarray(x) - self.a) / self.dx).astype(int), 0, self.k - 1)
        j = np.clip(np.floor((np.asarray(y) - self.c) / self.dy).astype(int), 0, self.l - 1)
        return i, j


@dataclass
class ConservedField2D:
    rho: np.ndarray
    m1: np.ndarray
    m2: np.ndarray

    def __post_init__(self) -> None:
        self.rho = np.asarray(self.rho, dtype=float)
        self.m1 = np.asarray(self.m1, dtype=float)
        self.m2 = np.asarray(self.m2, dtype=float)
        if not (self.rho.shape == self.m1.shape == self.m2.shape):
            raise ValueError("component arrays must share one shape")

    def stacked(self) -> np.ndarray:
        return np.stack([self.rho, self.m1, self.m2])

    @staticmethod
    def from_stacked(w: np.ndarray) -> "ConservedField2D":
        return ConservedField2D(w[0].copy(), w[1].copy(), w[2].copy())

    def velocity(self) -> tuple[np.ndarray, np.ndarray]:
        denom = np.maximum(self.rho, RHO_FLOOR)
        return self.m1 / denom, self.m2 / denom

    def copy(self) -> "ConservedField2D":
        return ConservedField2D(self.rho.copy(), self.m1.copy(), self.m2.copy())


def _godunov_normal(rho_l, mn_l, mt_l, rho_r, mn_r, mt_r):
    """Godunov flux with ``mn`` the momentum normal to the interface and
    ``mt`` the transported transverse momentum (same upwinding)."""
    u_l = np.divide(mn_l, rho_l, out=np.zeros_like(mn_l), where=rho_l > 0)
    u_r = np.divide(mn_r, rho_r, out=np.zeros_like(mn_r), where=rho_r > 0)
    t_l = np.divide(mt_l, rho_l, out=np.zeros_like(mt_l), where=rho_l > 0)
    t_r = np.divide(mt_r, rho_r, out=np.zeros_like(mt_r), where=rho_r > 0)
    s_l, s_r = np.sqrt(rho_l), np.sqrt(rho_r)
    v = np.divide(
        s_l * u_l + s_r * u_r, s_l + s_r,
        out=np.zeros_like(u_l), where=(s_l + s_r) > 0,
    )
    pos_l, pos_r = u_l > 0, u_r > 0
    # same balanced-collision tie tolerance as the 1D flux
    tie = np.abs(v) <= 1e-12 * np.maximum(np.abs(u_l), np.abs(u_r))
    take_left = (pos_l & pos_r) | (pos_l & ~pos_r & (v > 0) & ~tie)
    take_right = (~pos_l & ~pos_r) | (pos_l & ~pos_r & (v < 0) & ~tie)
    average = pos_l & ~pos_r & tie

    f_rho = np.zeros_like(u_l)
    f_mn = np.zeros_like(u_l)
    f_mt = np.zeros_like(u_l)
    f_rho = np.where(take_left, mn_l, f_rho)
    f_mn = np.where(take_left, mn_l * u_l, f_mn)
    f_mt = np.where(take_left, mn_l * t_l, f_mt)
    f_rho = np.where(take_right, mn_r, f_rho)
    f_mn = np.where(take_right, mn_r * u_r, f_mn)
    f_mt = np.where(take_right, mn_r * t_r, f_mt)
    f_rho = np.where(average, 0.5 * (mn_l + mn_r), f_rho)
    f_mn = np.where(average, 0.5 * (mn_l * u_l + mn_r * u_r), f_mn)
    f_mt = np.where(average, 0.5 * (mn_l * t_l + mn_r * t_r), f_mt)
    return f_rho, f_mn, f_mt


def godunov_flux_2d_x(w_left, w_right):
    """Flux through a vertical interface; returns (mass, m1, m2) fluxes."""
    rho_l, m1_l, m2_l = (np.asarray(a, dtype=float) for a in w_left)
    rho_r, m1_r, m2_r = (np.asarray(a, dtype=float) for a in w_right)
    f_rho, f_mn, f_mt = _godunov_normal(rho_l, m1_l, m2_l, rho_r, m1_r, m2_r)
    return f_rho, f_mn, f_mt


def godunov_flux_2d_y(w_left, w_right):
    """Flux through a horizontal interface, by the x-flux with the roles of
    (u, m1) and (v, m2) swapped."""
    rho_l, m1_l, m2_l = (np.asarray(a, dtype=float) for a in w_left)
    rho_r, m1_r, m2_r = (np.asarray(a, dtype=float) for a in w_right)
    f_rho, f_mn, f_mt = _godunov_normal(rho_l, m2_l, m1_l, rho_r, m2_r, m1_r)
    return f_rho, f_mt, f_mn


@dataclass
class NonlocalOperator2D:
    """Symmetric BTTB quadrature of the nonlocal operator.

    ``symbol`` holds the one-quadrant generating weights indexed by absolute
    cell offsets (diagonal at [0, 0]); the spectrum is its (2K, 2L)
    circulant-circulant embedding.
    """

    symbol: np.ndarray
    truncations: tuple[int, int]
    tail_weight: float
    dx: float
    dy: float
    spectrum: np.ndarray = field(repr=False)

    @property
    def shape(self) -> tuple[int, int]:
        return self.symbol.shape

    @property
    def diagonal(self) -> float:
        return float(self.symbol[0, 0])

    def dense(self) -> np.ndarray:
        """Full (K*L) x (K*L) matrix in x-fastest ordering; for small-grid
        oracles only."""
        k, l = self.symbol.shape
        n = k * l
        g = np.zeros((n, n))
        for j in range(l):
            for i in range(k):
                row = j * k + i
                for jj in range(l):
                    for ii in range(k):
                        g[row, jj * k + ii] = self.symbol[abs(ii - i), abs(jj - j)]
        return g


def build_nonlocal_operator_2d(
    grid: Grid2D,
    spec: KernelSpec,
    truncation_x: int | None = None,
    truncation_y: int | None = None,
) -> NonlocalOperator2D:
    """Assemble the BTTB symbol of the 2D kernel quadrature.

    Weights exist only for offsets with both components nonzero; offset 1 in
    either direction is evaluated at a half-cell distance.  The corner ghost
    offset (khat+1, lhat+1) carries the quarter-plane tail mass and the
    diagonal balances all weights four ways.
    """
    if spec.dim != 2:
        raise ValueError("2D operator needs a 2D kernel spec")
    khat = grid.k if truncation_x is None else int(truncation_x)
    lhat = grid.l if truncation_y is None else int(truncation_y)
    if khat < 1 or lhat < 1:
        raise ValueError("truncations must be >= 1")
    dx, dy = grid.dx, grid.dy

    ex = np.array([0.5 * dx] + [k * dx for k in range(2, khat + 1)])
    ey = np.array([0.5 * dy] + [l * dy for l in range(2, lhat + 1)])
    dist = np.hypot(ex[:, None], ey[None, :])
    c_weights = dx * dy * np.vectorize(lambda r: influence(spec, float(r)))(dist)
    tail = tail_mass_2d(spec, (khat * dx, lhat * dy))

    symbol = np.zeros((grid.k, grid.l))
    symbol[0, 0] = -4.0 * (c_weights.sum() + tail)
    kmax = min(khat, grid.k - 1)
    lmax = min(lhat, grid.l - 1)
    symbol[1 : kmax + 1, 1 : lmax + 1] = c_weights[:kmax, :lmax]
    if khat + 1 <= grid.k - 1 and lhat + 1 <= grid.l - 1:
        symbol[khat + 1, lhat + 1] = tail

    embed = np.zeros((2 * grid.k, 2 * grid.l))
    embed[: grid.k, : grid.l] = symbol
    embed[grid.k + 1 :, : grid.l] = symbol[1:][::-1, :]
    embed[: grid.k, grid.l + 1 :] = symbol[:, 1:][:, ::-1]
    embed[grid.k + 1 :, grid.l + 1 :] = symbol[1:, 1:][::-1, ::-1]
    return NonlocalOperator2D(
        symbol=symbol,
        truncations=(khat, lhat),
        tail_weight=tail,
        dx=dx,
        dy=dy,
        spectrum=np.fft.rfft2(embed),
    )


def apply_nonlocal_2d(op: NonlocalOperator2D, grid_field: np.ndarray) -> np.ndarray:
    """G @ field through the 2D circulant embedding (zero exterior data)."""
    k, l = op.shape
    shape = (2 * k, 2 * l)
    padded = np.fft.rfft2(grid_field, s=shape)
    return np.fft.irfft2(op.spectrum * padded, s=shape)[:k, :l]


def source_2d(
    state: ConservedField2D, op: NonlocalOperator2D
) -> tuple[np.ndarray, np.ndarray]:
    """Momentum sources dx*dy*(rho o (G m_nu) - m_nu o (G rho)), nu = 1, 2."""
    g_rho = apply_nonlocal_2d(op, state.rho)
    area = op.dx * op.dy
    s1 = area * (state.rho * apply_nonlocal_2d(op, state.m1) - state.m1 * g_rho)
    s2 = area * (state.rho * apply_nonlocal_2d(op, state.m2) - state.m2 * g_rho)
    return s1, s2


def fv_rhs_2d(
    state: ConservedField2D, grid: Grid2D, op: NonlocalOperator2D
) -> np.ndarray:
    """Time derivative of the stacked state (3, K, L); zero ghost cells."""
    k, l = grid.k, grid.l
    rho = np.zeros((k + 2, l + 2))
    m1 = np.zeros((k + 2, l + 2))
    m2 = np.zeros((k + 2, l + 2))
    rho[1:-1, 1:-1] = state.rho
    m1[1:-1, 1:-1] = state.m1
    m2[1:-1, 1:-1] = state.m2

    fx = godunov_flux_2d_x(
        (rho[:-1, 1:-1], m1[:-1, 1:-1], m2[:-1, 1:-1]),
        (rho[1:, 1:-1], m1[1:, 1:-1], m2[1:, 1:-1]),
    )
    fy = godunov_flux_2d_y(
        (rho[1:-1, :-1], m1[1:-1, :-1], m2[1:-1, :-1]),
        (rho[1:-1, 1:], m1[1:-1, 1:], m2[1:-1, 1:]),
    )
    out = np.empty((3, k, l))
    for comp in range(3):
        out[comp] = -(fx[comp][1:, :] - fx[comp][:-1, :]) / grid.dx
        out[comp] -= (fy[comp][:, 1:] - fy[comp][:, :-1]) / grid.dy
    s1, s2 = source_2d(state, op)
    area = grid.dx * grid.dy
    out[1] += s1 / area
    out[2] += s2 / area
    if not np.isfinite(out).all():
        raise SolverError("non-finite right-hand side")
    return out


def project_initial_2d(
    rho0: Callable[[np.ndarray, np.ndarray], np.ndarray],
    u0: Callable[[np.ndarray, np.ndarray], np.ndarray],
    v0: Callable[[np.ndarray, np.ndarray], np.ndarray],
    grid: Grid2D,
) -> ConservedField2D:
    """Cell averages by a tensor 5-point Gauss rule per cell."""
    nodes, weights = np.polynomial.legendre.leggauss(5)
    gx = grid.x_centers()[:, None] + 0.5 * grid.dx * nodes[None, :]  # (K, 5)
    gy = grid.y_centers()[:, None] + 0.5 * grid.dy * nodes[None, :]  # (L, 5)
    x4 = gx[:, :, None, None]  # broadcasts to (K, 5, L, 5)
    y4 = gy[None, None, :, :]
    rho_vals = np.broadcast_to(rho0(x4, y4), (grid.k, 5, grid.l, 5))
    m1_vals = rho_vals * u0(x4, y4)
    m2_vals = rho_vals * v0(x4, y4)
    w4 = 0.25 * weights[None, :, None, None] * weights[None, None, None, :]
    rho_bar = (rho_vals * w4).sum(axis=(1, 3))
    m1_bar = (m1_vals * w4).sum(axis=(1, 3))
    m2_bar = (m2_vals * w4).sum(axis=(1, 3))
    return ConservedField2D(rho_bar, m1_bar, m2_bar)


@dataclass
class EulerSolution2D:
    grid: Grid2D
    alpha: float
    times: list[float]
    fields: list[ConservedField2D]
    mass_history: list[float]
    momentum_x_history: list[float]
    momentum_y_history: list[float]
    dt_history: list[float] = field(default_factory=list)
    cfl_warnings: int = 0

    def field_at(self, t: float) -> ConservedField2D:
        for ti, f in zip(self.times, self.fields):
            if abs(ti - t) <= 1e-9:
                return f
        raise KeyError(f"no snapshot at t={t}; have {self.times}")

    def write(self, out_dir: str | Path, matrices: bool = True) -> list[Path]:
        """Per-snapshot CSV (x_center, y_center, rho, m1, m2, u, v), an
        optional plain density matrix per snapshot, and a JSON manifest."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        xc, yc = self.grid.x_centers(), self.grid.y_centers()
        paths = []
        for t, f in zip(self.times, self.fields):
            path = out / f"euler_t{t:.4f}.csv"
            u, v = f.velocity()
            with open(path, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["x_center", "y_center", "rho", "m1", "m2", "u", "v"])
                for j in range(self.grid.l):
                    for i in range(self.grid.k):
                        writer.writerow(
                            [repr(float(xc[i])), repr(float(yc[j])),
                             repr(float(f.rho[i, j])), repr(float(f.m1[i, j])),
                             repr(float(f.m2[i, j])), repr(float(u[i, j])),
                             repr(float(v[i, j]))]
                        )
            paths.append(path)
            if matrices:
                mat = out / f"density_matrix_t{t:.4f}.csv"
                np.savetxt(mat, f.rho.T, delimiter=",", fmt="%.17g")
                paths.append(mat)
        manifest = {
            "kind": "euler_2d",
            "alpha": self.alpha,
            "k": self.grid.k,
            "l": self.grid.l,
            "domain": [self.grid.a, self.grid.b, self.grid.c, self.grid.d],
            "times": self.times,
            "mass_history": self.mass_history,
            "momentum_x_history": self.momentum_x_history,
            "momentum_y_history": self.momentum_y_history,
            "n_steps": len(self.dt_history),
            "cfl_warnings": self.cfl_warnings,
            "files": [p.name for p in paths],
        }
        with open(out / "manifest.json", "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
        return paths


def _stable_dt_2d(
    state: ConservedField2D, grid: Grid2D, op: NonlocalOperator2D,
    cfl: float, u_floor: float = 1e-8,
) -> float:
    u, v = state.velocity()
    speed = max(float((np.abs(u) + np.abs(v)).max()), u_floor)
    dt_adv = cfl * min(grid.dx, grid.dy) / speed
    stiff = abs(op.diagonal) * max(float(state.rho.max()), 1e-300)
    dt_src = 0.5 / stiff if stiff > 0 else dt_adv
    return min(dt_adv, dt_src)


def solve_euler_2d(
    rho0,
    u0,
    v0,
    grid: Grid2D,
    spec: KernelSpec,
    dt: float | None,
    t_end: float,
    sample_times: Sequence[float],
    cfl: float = 0.25,
    truncation_x: int | None = None,
    truncation_y: int | None = None,
) -> EulerSolution2D:
    """2D analogue of the 1D driver: adaptive SSP-RK2 marching with
    dimension-split fluxes, snapshots at the sample times, and per-step
    conservation bookkeeping."""
    state = project_initial_2d(rho0, u0, v0, grid)
    area = grid.dx * grid.dy
    mass0 = float(state.rho.sum() * area)
    if abs(mass0 - 1.0) > 1e-6:
        raise ValueError(f"initial density must integrate to 1, got {mass0:.8f}")
    op = build_nonlocal_operator_2d(grid, spec, truncation_x, truncation_y)

    samples = sorted(float(t) for t in sample_times)
    if samples and (samples[0] < 0 or samples[-1] > t_end + 1e-12):
        raise ValueError("sample times must lie within [0, t_end]")

    sol = EulerSolution2D(
        grid=grid,
        alpha=spec.alpha,
        times=[],
        fields=[],
        mass_history=[mass0],
        momentum_x_history=[float(state.m1.sum() * area)],
        momentum_y_history=[float(state.m2.sum() * area)],
    )

    def rhs(w: np.ndarray) -> np.ndarray:
        return fv_rhs_2d(ConservedField2D(w[0], w[1], w[2]), grid, op)

    pending = list(samples)
    t = 0.0
    while pending and abs(pending[0] - t) <= 1e-12:
        sol.times.append(pending.pop(0))
        sol.fields.append(state.copy())
    step = 0
    while t < t_end - 1e-12:
        step_dt = _stable_dt_2d(state, grid, op, cfl) if dt is None else dt
        if dt is not None:
            u, v = state.velocity()
            speed = max(float((np.abs(u) + np.abs(v)).max()), 1e-8)
            cfl_number = speed * step_dt / min(grid.dx, grid.dy)
            if cfl_number > cfl:
                warnings.warn(
                    f"CFL number {cfl_number:.3f} exceeds limit {cfl} at t={t:.4f}",
                    CflWarning,
                )
                sol.cfl_warnings += 1
        limit = pending[0] if pending else t_end
        step_dt = min(step_dt, limit - t, t_end - t)
        w = ssp_rk2_step(state.stacked(), step_dt, rhs)
        step += 1
        state = ConservedField2D.from_stacked(w)
        t += step_dt
        sol.dt_history.append(step_dt)
        if not np.isfinite(w).all():
            raise SolverError(f"non-finite field at step {step}, t={t:.5f}")
        if float(state.rho.min()) < NEGATIVE_RHO_TOL:
            raise SolverError(
                f"density fell below {NEGATIVE_RHO_TOL} at step {step}, t={t:.5f}"
            )
        sol.mass_history.append(float(state.rho.sum() * area))
        sol.momentum_x_history.append(float(state.m1.sum() * area))
        sol.momentum_y_history.append(float(state.m2.sum() * area))
        while pending and abs(pending[0] - t) <= 1e-12:
            sol.times.append(pending.pop(0))
            sol.fields.append(state.copy())
    return sol
