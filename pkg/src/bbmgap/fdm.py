"""Uniform 1-D grids and the implicit stepper shared by the PDE solvers.

Both parabolic solves in this package have the form

    u_t = u_xx + v(t) u_x - V(t, x) u + S(t, x),      x in [x_min, x_max],

with Dirichlet data pinned at both ends.  ``ThetaStepper`` advances one time
step of the theta-method (theta = 1/2 is Crank-Nicolson, theta = 1 backward
Euler for Rannacher start-up smoothing); drift and potential are evaluated at
the half step, which keeps Crank-Nicolson second order for time-dependent
coefficients.  The linear solve is a tridiagonal banded solve, O(n) per step.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

GRID_TOL = 1e-12


@dataclass(frozen=True)
class Grid1D:
    """Uniform grid; x_max - x_min = (n - 1) dx is enforced exactly."""

    x_min: float
    x_max: float
    dx: float
    n: int

    def __post_init__(self):
        if self.n < 3:
            raise ValueError(f"grid needs at least 3 points, got n={self.n}")
        if self.dx <= 0:
            raise ValueError(f"grid spacing must be positive, got {self.dx}")
        span = self.x_max - self.x_min
        if abs(span - (self.n - 1) * self.dx) > GRID_TOL * max(1.0, abs(span)):
            raise ValueError(
                f"inconsistent grid: span {span} != (n-1)*dx = {(self.n - 1) * self.dx}"
            )

    @classmethod
    def from_bounds(cls, x_min: float, x_max: float, dx: float) -> "Grid1D":
        """Grid covering [x_min, x_max]; x_max is nudged up to the next node."""
        if x_max <= x_min:
            raise ValueError(f"empty grid request [{x_min}, {x_max}]")
        n = int(np.ceil((x_max - x_min) / dx - GRID_TOL)) + 1
        return cls(x_min=x_min, x_max=x_min + (n - 1) * dx, dx=dx, n=n)

    @property
    def x(self) -> np.ndarray:
        return self.x_min + self.dx * np.arange(self.n)

    def index_of(self, x: float) -> int:
        """Nearest node index for x; raises if x is off the grid."""
        j = int(round((x - self.x_min) / self.dx))
        if j < 0 or j >= self.n:
            raise ValueError(f"x={x} outside grid [{self.x_min}, {self.x_max}]")
        return j


class ThetaStepper:
    """One-step theta-method for u_t = u_xx + v(t) u_x - V(t,x) u + S.

    Parameters
    ----------
    grid : Grid1D
    drift : callable t -> float, the coefficient v(t) of u_x.
    potential : callable t -> ndarray of shape (n,), or None for V = 0.
    bc : (left, right) Dirichlet values held fixed in time.
    """

    def __init__(self, grid: Grid1D, drift=None, potential=None, bc=(0.0, 0.0)):
        self.grid = grid
        self.drift = drift or (lambda t: 0.0)
        self.potential = potential
        self.bc = bc
        self._inv_dx2 = 1.0 / grid.dx**2
        self._inv_2dx = 0.5 / grid.dx

    def step(self, u: np.ndarray, t: float, dt: float, theta: float = 0.5,
             source=None) -> np.ndarray:
        """Advance u from t to t + dt; returns a new array (u untouched)."""
        g = self.grid
        t_mid = t + 0.5 * dt
        v = self.drift(t_mid)
        V = self.potential(t_mid) if self.potential is not None else None

        lo = self._inv_dx2 - v * self._inv_2dx   # couples to u_{j-1}
        hi = self._inv_dx2 + v * self._inv_2dx   # couples to u_{j+1}
        diag_lin = -2.0 * self._inv_dx2 - (V[1:-1] if V is not None else 0.0)

        w = u[1:-1]
        # explicit part: (I + (1-theta) dt L) u
        expl = w + (1.0 - theta) * dt * (lo * u[:-2] + diag_lin * w + hi * u[2:])
        rhs = expl
        if source is not None:
            rhs = rhs + dt * source[1:-1]
        # Dirichlet columns of both operators land on the RHS
        b_left, b_right = self.bc
        rhs = rhs.copy()
        rhs[0] += theta * dt * lo * b_left
        rhs[-1] += theta * dt * hi * b_right

        m = g.n - 2
        ab = np.zeros((3, m))
        ab[0, 1:] = -theta * dt * hi
        ab[1, :] = 1.0 - theta * dt * diag_lin
        ab[2, :-1] = -theta * dt * lo
        w_new = solve_banded((1, 1), ab, rhs)

        out = np.empty_like(u)
        out[0] = b_left
        out[-1] = b_right
        out[1:-1] = w_new
        return out


def ramped_steps(t0: float, t1: float, dt_max: float, dt0: float | None = None,
                 growth: float = 1.2) -> np.ndarray:
    """Step sizes from t0 to t1: geometric ramp from dt0 up to dt_max.

    The ramp lets a solve start from a barely-resolved near-delta state
    without committing the whole run to a tiny step.  Returns the array of
    step sizes (they sum exactly to t1 - t0).
    """
    if t1 <= t0:
        return np.empty(0)
    if dt0 is None or dt0 >= dt_max:
        n = int(np.ceil((t1 - t0) / dt_max - 1e-12))
        return np.full(n, (t1 - t0) / n)
    steps = []
    t, dt = t0, dt0
    while t < t1 - 1e-12:
        dt = min(dt * growth, dt_max, t1 - t)
        steps.append(dt)
        t += dt
    out = np.asarray(steps)
    out *= (t1 - t0) / out.sum()  # remove the last-step rounding drift
    return out


def fit_line(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    """Least-squares line y ~ slope*x + intercept; returns (slope, intercept, R^2)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2:
        raise ValueError("need at least two points for a line fit")
    A = np.column_stack([x, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    ss_res = float(resid @ resid)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return float(coef[0]), float(coef[1]), r2


def trapz(y: np.ndarray, dx: float) -> float:
    """Trapezoid rule on the uniform grid."""
    return float(np.trapezoid(y, dx=dx))
