"""Critical Fisher-KPP traveling wave and the adjoint weight psi.

The wave solves

    -c* U' = U'' + f(U),    U(-inf) = 1,  U(+inf) = 0,

at the critical speed c* = 2 lambda*.  Its tails are

    U(x) ~ x e^{-lambda* x}          as x -> +inf  (pre-factor one after
                                      the normalizing translation),
    1 - U(x) ~ C_U e^{gamma* x}      as x -> -inf,

and the translation that makes the right-tail coefficient exactly one pins
the constant C_U.

The orbit is computed by integrating the one-dimensional unstable manifold
of U = 1 rightward, which is the only direction stable over the whole line:

* backward shooting from the right tail is not an option here.  A seed of
  the form x e^{-lambda* x} differs from the true tail (x + beta)
  e^{-lambda* x} by the subdominant mode, which backward integration
  amplifies by e^{lambda* x_max} into an O(beta) miss at the front (measured
  ~0.5 in the binary case), and past the front the e^{(sqrt(N)+lambda*)|x|}
  antagonist of U = 1 blows up any orbit in double precision;
* the manifold integration runs in the gap variable w = 1 - U until the
  front (w keeps full relative accuracy where 1 - U underflows: the deep
  left tail reaches ~1e-40) and continues in (U, U') past it, where the
  switch 1 - w is exact in float64.

Afterwards the right tail of the raw orbit is fitted as
U e^{lambda* x} ~ alpha x + beta and the profile is translated by
log(alpha)/lambda*, making the coefficient of x exactly one; C_U is then a
least-squares fit of log(1 - U) against gamma* x on the left window.

The adjoint weight is psi(x) = -U'(x - xbar0) e^{lambda* x}; it solves
psi'' = F'(U(x - xbar0)) psi and has the asymptotes

    psi ~ C_U gamma* e^{-gamma* xbar0} e^{sqrt(N) x}   (x -> -inf),
    psi ~ lambda* e^{lambda* xbar0} x + const          (x -> +inf).
"""
from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np
from scipy.integrate import solve_ivp

from .errors import QualityError
from .fdm import Grid1D, fit_line
from .reaction import Reaction

_W_SEED = 1e-25   # manifold seed depth; truncation of the seed is O(w0^2)


def _f_mixed(r: Reaction, u: np.ndarray, w: np.ndarray) -> np.ndarray:
    """f evaluated from whichever of (u, 1-u) is relative-accurate.

    Orbit evaluations carry both: u saturates at 1 on the deep left, w at 1
    on the deep right, and each side's f would be destroyed by the rounded
    complement.
    """
    return np.where(u < 0.5, r.f_raw(np.minimum(u, 0.5)), r.f_from_gap(np.minimum(w, 0.5)))


@dataclass(frozen=True)
class WaveSolverConfig:
    x_min: float | None = None          # default -40/gamma*
    x_max: float | None = None          # default 30/lambda*
    dx: float = 0.02
    rtol: float = 1e-12
    pad: float = 8.0                    # extra coverage so shifted queries stay on-grid
    switch_u: float = 0.5               # w-form -> u-form changeover inside the front
    right_fit_offsets: tuple[float, float] = (10.0, 2.0)   # window [x_max-10/l*, x_max-2/l*]
    left_fit_offsets: tuple[float, float] = (2.0, 10.0)    # window [x_min+2/g*, x_min+10/g*]
    fit_r2_min: float = 0.999

    def bounds(self, r: Reaction) -> tuple[float, float]:
        x_min = self.x_min if self.x_min is not None else -40.0 / r.gamma_star
        x_max = self.x_max if self.x_max is not None else 30.0 / r.lambda_star
        return x_min, x_max


class _Orbit:
    """The raw manifold orbit in its own frame: w-form piece then u-form piece."""

    def __init__(self, sol_w, sol_u, xi_switch):
        self._w = sol_w          # dense (w, w') on [0, xi_switch]
        self._u = sol_u          # dense (U, U') on [xi_switch, xi_end]
        self.xi_switch = xi_switch
        self.xi_lo = sol_w.t_min
        self.xi_hi = sol_u.t_max

    def eval(self, xi: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return (U, U', 1-U) at raw coordinates xi."""
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        if np.any(xi < self.xi_lo - 1e-9) or np.any(xi > self.xi_hi + 1e-9):
            raise ValueError(
                f"orbit queried at xi in [{xi.min()}, {xi.max()}], "
                f"covered [{self.xi_lo}, {self.xi_hi}]"
            )
        u = np.empty_like(xi)
        up = np.empty_like(xi)
        w = np.empty_like(xi)
        left = xi < self.xi_switch
        if np.any(left):
            vals = self._w(np.clip(xi[left], self.xi_lo, None))
            w[left] = vals[0]
            up[left] = -vals[1]
            u[left] = 1.0 - vals[0]
        if np.any(~left):
            vals = self._u(np.clip(xi[~left], None, self.xi_hi))
            u[~left] = vals[0]
            up[~left] = vals[1]
            w[~left] = 1.0 - vals[0]
        return u, up, w


@dataclass
class WaveProfile:
    """Normalized critical wave sampled on a uniform grid.

    ``one_minus_u`` carries the left tail at full relative precision; ``u``
    saturates at 1.0 in float64 once 1 - U < ~1e-16, which is expected.
    """

    grid: Grid1D
    u: np.ndarray
    u_prime: np.ndarray
    one_minus_u: np.ndarray
    C_U: float
    applied_shift: float
    reaction: Reaction
    x_core_min: float                 # requested (unpadded) bounds; fit windows refer to these
    x_core_max: float
    right_tail_coeff: float           # fitted coefficient of x e^{-l* x} after translation (~1)
    right_tail_intercept: float       # fitted beta of (x + beta) e^{-l* x}
    left_tail_slope: float            # fitted d log(1-U)/dx on the left window
    fit_r2_right: float
    fit_r2_left: float
    switch_mismatch: float            # (U, U') continuity defect at the form changeover
    _orbit: _Orbit | None = field(default=None, repr=False, compare=False)

    # -- high-accuracy pointwise evaluation --------------------------------

    def eval_orbit(self, x) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(U, U', 1-U) at arbitrary points, from the ODE dense output.

        Beyond the covered range the tail asymptotics take over (fitted
        coefficients on the right, C_U e^{gamma* x} on the left).
        """
        if self._orbit is None:
            raise RuntimeError("wave profile was stripped of its orbit evaluator")
        x = np.atleast_1d(np.asarray(x, dtype=float))
        s = self.applied_shift
        lam = self.reaction.lambda_star
        gam = self.reaction.gamma_star
        raw = x + s
        u = np.empty_like(x)
        up = np.empty_like(x)
        w = np.empty_like(x)
        lo = raw < self._orbit.xi_lo
        hi = raw > self._orbit.xi_hi
        mid = ~(lo | hi)
        if np.any(mid):
            u[mid], up[mid], w[mid] = self._orbit.eval(raw[mid])
        if np.any(hi):
            # normalized tail (x + beta) e^{-lambda* x} in final coordinates
            xf = x[hi]
            beta = self.right_tail_intercept
            e = np.exp(-lam * xf)
            u[hi] = (xf + beta) * e
            up[hi] = (1.0 - lam * (xf + beta)) * e
            w[hi] = 1.0 - u[hi]
        if np.any(lo):
            xf = x[lo]
            w[lo] = self.C_U * np.exp(gam * xf)
            up[lo] = -gam * w[lo]
            u[lo] = 1.0 - w[lo]
        return u, up, w

    def u_at(self, x):
        return self.eval_orbit(x)[0]

    def u_prime_at(self, x):
        return self.eval_orbit(x)[1]

    def w_at(self, x):
        return self.eval_orbit(x)[2]

    def u_second_at(self, x):
        """U'' from the ODE identity; accurate in both tails."""
        u, up, w = self.eval_orbit(x)
        r = self.reaction
        return -r.c_star * up - _f_mixed(r, u, w)


def solve_wave(r: Reaction, cfg: WaveSolverConfig | None = None) -> WaveProfile:
    """Compute the normalized critical wave for the given reaction."""
    cfg = cfg or WaveSolverConfig()
    lam, gam, c = r.lambda_star, r.gamma_star, r.c_star
    x_core_min, x_core_max = cfg.bounds(r)
    if x_core_max < 30.0 / lam - 1e-9:
        raise ValueError(f"x_max={x_core_max} below required 30/lambda*={30.0 / lam}")
    if x_core_min > -40.0 / gam + 1e-9:
        raise ValueError(f"x_min={x_core_min} above required -40/gamma*={-40.0 / gam}")
    x_lo, x_hi = x_core_min - cfg.pad, x_core_max + cfg.pad

    # ---- w-form piece: unstable manifold of u = 1, integrated rightward ---
    def rhs_w(xi, y):
        w, wp = y
        return (wp, -c * wp + r.f_from_gap(w))

    w_switch = 1.0 - cfg.switch_u
    span_w = (math.log(w_switch / _W_SEED) / gam) * 1.3 + 20.0
    hit = lambda xi, y: y[0] - w_switch
    hit.terminal = True
    sol_w = solve_ivp(
        rhs_w, (0.0, span_w), (_W_SEED, gam * _W_SEED),
        method="DOP853", rtol=cfg.rtol, atol=1e-290, dense_output=True, events=[hit],
    )
    if not sol_w.t_events[0].size:
        raise QualityError("manifold integration never reached the front")
    xi_switch = float(sol_w.t_events[0][0])
    w_m, wp_m = (float(v) for v in sol_w.y_events[0][0])

    # ---- u-form continuation through the front and down the right tail ----
    def rhs_u(xi, y):
        u, up = y
        return (up, -c * up - r.f_raw(u))

    blow_up = lambda xi, y: 1.0 + 1e-9 - y[0]
    blow_up.terminal = True
    blow_dn = lambda xi, y: y[0] + 1e-9
    blow_dn.terminal = True
    xi_end = xi_switch + (x_hi - x_lo) + 12.0
    sol_u = solve_ivp(
        rhs_u, (xi_switch, xi_end), (1.0 - w_m, -wp_m),
        method="DOP853", rtol=cfg.rtol, atol=1e-290, dense_output=True,
        events=[blow_up, blow_dn],
    )
    if sol_u.status != 0:
        raise QualityError(
            f"u-form continuation left [0, 1] (status={sol_u.status}); "
            "the orbit is contaminated, tighten rtol"
        )
    orbit = _Orbit(sol_w.sol, sol_u.sol, xi_switch)
    # continuity defect at the changeover (integrator-consistency diagnostic)
    uw = orbit._w(xi_switch)
    uu = orbit._u(xi_switch)
    switch_mismatch = max(abs((1.0 - uw[0]) - uu[0]), abs(-uw[1] - uu[1]))

    # ---- normalization: fit the raw right tail, translate -----------------
    # fit window placed relative to the raw right end, overflow-safe pivot
    off_far, off_near = cfg.right_fit_offsets
    fit_lo = xi_end - cfg.pad - off_far / lam
    fit_hi = xi_end - cfg.pad - off_near / lam
    xs = np.linspace(fit_lo, fit_hi, 201)
    pivot = 0.5 * (fit_lo + fit_hi)
    u_raw, _, _ = orbit.eval(xs)
    alpha_p, beta_p, r2_right = fit_line(xs - pivot, u_raw * np.exp(lam * (xs - pivot)))
    if r2_right < cfg.fit_r2_min:
        raise QualityError(f"right tail fit R^2={r2_right:.6f} below {cfg.fit_r2_min}")
    if alpha_p <= 0:
        raise QualityError(f"right tail coefficient alpha={alpha_p:.3e} not positive")
    # U_raw ~ (alpha_p (xi - pivot) + beta_p) e^{-lam (xi - pivot)}; the unique
    # translate with unit slope is x = xi - shift:
    shift = pivot + math.log(alpha_p) / lam

    # ---- resample the translated profile onto the grid --------------------
    grid = Grid1D.from_bounds(x_lo, x_hi, cfg.dx)
    if grid.x_max + shift > orbit.xi_hi + 1e-9 or grid.x_min + shift < orbit.xi_lo - 1e-9:
        raise QualityError(
            f"normalizing shift {shift:.3g} pushes the grid outside the orbit "
            f"coverage [{orbit.xi_lo:.1f}, {orbit.xi_hi:.1f}]"
        )
    u_g, up_g, w_g = orbit.eval(grid.x + shift)

    # translated tail parameters: U ~ (x + beta) e^{-lambda* x} with unit slope
    beta = beta_p / alpha_p - math.log(alpha_p) / lam

    # left-tail constant from the translated profile, slope pinned to gamma*
    l_lo = x_core_min + cfg.left_fit_offsets[0] / gam
    l_hi = x_core_min + cfg.left_fit_offsets[1] / gam
    xs_l = np.linspace(l_lo, l_hi, 201)
    _, _, w_l = orbit.eval(xs_l + shift)
    logw = np.log(w_l)
    slope_left, _, r2_left = fit_line(xs_l, logw)
    if r2_left < cfg.fit_r2_min:
        raise QualityError(f"left tail fit R^2={r2_left:.6f} below {cfg.fit_r2_min}")
    C_U = float(np.exp(np.mean(logw - gam * xs_l)))

    # post-translation right-tail coefficient on the core window (diagnostic, ~1)
    xs_f = np.linspace(x_core_max - off_far / lam, x_core_max - off_near / lam, 201)
    u_chk, _, _ = orbit.eval(xs_f + shift)
    coeff_final, beta_chk, _ = fit_line(xs_f, u_chk * np.exp(lam * xs_f))

    profile = WaveProfile(
        grid=grid, u=u_g, u_prime=up_g, one_minus_u=w_g,
        C_U=C_U, applied_shift=shift, reaction=r,
        x_core_min=x_core_min, x_core_max=x_core_max,
        right_tail_coeff=coeff_final, right_tail_intercept=beta_chk,
        left_tail_slope=slope_left,
        fit_r2_right=r2_right, fit_r2_left=r2_left,
        switch_mismatch=switch_mismatch, _orbit=orbit,
    )
    _check_profile(profile)
    return profile


def _check_profile(p: WaveProfile) -> None:
    u = p.u
    if np.any(u < -1e-13) or np.any(u > 1.0 + 1e-13):
        raise QualityError("wave profile leaves [0, 1]")
    representable = p.one_minus_u > 1e-15
    if np.any((u >= 1.0) & representable & (p.grid.x > p.grid.x_min + 1.0)):
        raise QualityError("wave profile reaches 1 in the interior")
    du = np.diff(u)
    if np.any(du > 1e-13):
        raise QualityError("wave profile is not monotone decreasing")
    if p.switch_mismatch > 1e-10:
        raise QualityError(f"orbit changeover defect {p.switch_mismatch:.3e}")


def wave_ode_residual(p: WaveProfile) -> np.ndarray:
    """|U'' + c* U' + f(U)| on the interior by 4th-order differences of stored U.

    Independent of the construction path: uses only the gridded U values.
    """
    u = p.u
    h = p.grid.dx
    r = p.reaction
    # 5-point stencils, valid on j = 2..n-3
    d1 = (u[:-4] - 8 * u[1:-3] + 8 * u[3:-1] - u[4:]) / (12 * h)
    d2 = (-u[:-4] + 16 * u[1:-3] - 30 * u[2:-2] + 16 * u[3:-1] - u[4:]) / (12 * h * h)
    f = _f_mixed(p.reaction, u[2:-2], p.one_minus_u[2:-2])
    return np.abs(d2 + r.c_star * d1 + f)


@dataclass
class AdjointProfile:
    """psi = -U'(x - xbar0) e^{lambda* x} and its derivative on the wave grid."""

    grid: Grid1D
    psi: np.ndarray
    psi_prime: np.ndarray
    xbar0: float
    wave: WaveProfile
    right_slope: float        # affine fit of psi on the right window (-> lambda* e^{lambda* xbar0})
    right_intercept: float
    left_prefactor: float     # psi e^{-sqrt(N) x} on the deep left

    def psi_at(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.empty_like(x)
        lam = self.wave.reaction.lambda_star
        sqN = math.sqrt(self.wave.reaction.N)
        inside = (x >= self.grid.x_min) & (x <= self.grid.x_max)
        if np.any(inside):
            _, up, _ = self.wave.eval_orbit(x[inside] - self.xbar0)
            out[inside] = -up * np.exp(lam * x[inside])
        hi = x > self.grid.x_max
        if np.any(hi):
            out[hi] = self.right_slope * x[hi] + self.right_intercept
        lo = x < self.grid.x_min
        if np.any(lo):
            out[lo] = self.left_prefactor * np.exp(sqN * x[lo])
        return out

    def psi_prime_at(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.empty_like(x)
        r = self.wave.reaction
        lam = r.lambda_star
        sqN = math.sqrt(r.N)
        inside = (x >= self.grid.x_min) & (x <= self.grid.x_max)
        if np.any(inside):
            xi = x[inside] - self.xbar0
            u, up, w = self.wave.eval_orbit(xi)
            usec = -r.c_star * up - _f_mixed(r, u, w)
            out[inside] = (-usec - lam * up) * np.exp(lam * x[inside])
        hi = x > self.grid.x_max
        if np.any(hi):
            out[hi] = self.right_slope
        lo = x < self.grid.x_min
        if np.any(lo):
            out[lo] = sqN * self.left_prefactor * np.exp(sqN * x[lo])
        return out


def build_adjoint(w: WaveProfile, xbar0: float) -> AdjointProfile:
    """Assemble the adjoint weight for the wave translated by xbar0."""
    pad_left = w.x_core_min - w.grid.x_min
    pad_right = w.grid.x_max - w.x_core_max
    if xbar0 > pad_left or -xbar0 > pad_right:
        raise ValueError(
            f"xbar0={xbar0} outside grid coverage (pad {pad_left:.1f}); "
            "would require extrapolating U'"
        )
    r = w.reaction
    lam = r.lambda_star
    x = w.grid.x
    ug, up, wg = w.eval_orbit(x - xbar0)
    psi = -up * np.exp(lam * x)
    usec = -r.c_star * up - _f_mixed(r, ug, wg)
    psi_p = (-usec - lam * up) * np.exp(lam * x)
    if np.any(psi <= 0.0):
        raise QualityError("adjoint weight not positive everywhere")
    if np.any(psi_p <= 0.0):
        raise QualityError("adjoint derivative not positive everywhere")

    # affine asymptote on the right core window
    lo = w.x_core_max - 10.0 / lam
    hi = w.x_core_max - 2.0 / lam
    mask = (x >= lo) & (x <= hi)
    slope, intercept, _ = fit_line(x[mask], psi[mask])

    # exponential prefactor on the deep left window
    sqN = math.sqrt(r.N)
    mask_l = (x >= w.x_core_min + 2.0 / r.gamma_star) & (x <= w.x_core_min + 10.0 / r.gamma_star)
    pref = float(np.exp(np.mean(np.log(psi[mask_l]) - sqN * x[mask_l])))

    return AdjointProfile(
        grid=w.grid, psi=psi, psi_prime=psi_p, xbar0=xbar0, wave=w,
        right_slope=slope, right_intercept=intercept, left_prefactor=pref,
    )


def adjoint_ode_residual(a: AdjointProfile) -> np.ndarray:
    """Relative residual of psi'' = F'(U0) psi by 4th-order differences.

    psi spans ~60 orders of magnitude, so the residual is normalized
    pointwise by 1 + |F'(U0) psi| + |psi''|.
    """
    psi = a.psi
    h = a.grid.dx
    r = a.wave.reaction
    x = a.grid.x
    d2 = (-psi[:-4] + 16 * psi[1:-3] - 30 * psi[2:-2] + 16 * psi[3:-1] - psi[4:]) / (12 * h * h)
    _, _, wg = a.wave.eval_orbit(x[2:-2] - a.xbar0)
    v = r.F_prime_from_gap(wg)
    num = np.abs(d2 - v * psi[2:-2])
    return num / (1.0 + np.abs(v * psi[2:-2]) + np.abs(d2))
