"""Linearized gap equation in the moving, tilted frame.

The tail of the gap between the two leading particles is read off the linear
PDE

    r_t = r_xx - [3 / (2 lambda* (t+1))] r_x - V(t, x) r,
    r(0, x) = delta(x + a),

where V(t, x) = F'(H(t, x + m(t))) is supplied by the front solve.  The
quantity of interest is the adjoint-weighted moment I(t) = int psi r dx,
which rises like (t+1)^{3 sqrt(N)/(2 lambda*)} until t* = a / (2 sqrt(N)) and
then flattens; the tail probability is

    P(d12 > a) = e^{-lambda* (a + 2 xbar0)} / (2 lambda*^2 sqrt(pi)) * I(inf).

dI/dt is tracked two ways: the analytic flux identity

    dI/dt = 3/(2 lambda* (t+1)) int psi' r dx + int E psi r dx,
    E = V(inf, .) - V(t, .)

(the product) and finite differences of I (the cross-check).

The delta datum is replaced by its near-exact early evolution: for V == N the
equation has the closed-form solution

    p(t, x) = (4 pi t)^{-1/2} exp{-Nt - [x + a - (3/(2 lambda*)) log(t+1)]^2 / (4t)},

and V deviates from N only by O(e^{gamma* x}) near x = -a, so initializing
r(t0, .) = p(t0, .) carries an error exponentially small in a.  The same
closed form factors as p = Lambda(t; a) e^{-a x/(2t)} g(t, x), which encodes
the rate function theta(xi) = N xi + 1/(4 xi), minimized at
xi* = 1/(2 sqrt(N)) - that minimum is the transition time t* above.

The corrector q = r - p (and its early/main split q_e + q_m, with the
forcing (N - V) p gated at t_e = xi_e a) quantifies how mass escaping to the
weak-absorption region takes over the moment; ``corrector_diagnostics``
reports the takeover against t*.
"""
from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np

from .errors import QualityError
from .fdm import Grid1D, ThetaStepper, ramped_steps, trapz
from .kpp import PotentialField
from .reaction import Reaction
from .wave import AdjointProfile


@dataclass(frozen=True)
class FreeSolutionParams:
    """Symbols of the free (V == N) evolution for gap threshold a."""

    a: float
    reaction: Reaction
    xi_e: float | None = None     # forcing gate slope; default midpoint of the legal interval

    def __post_init__(self):
        if self.a <= 0:
            raise ValueError(f"gap threshold a must be positive, got {self.a}")
        lo, hi = self.xi_e_bounds()
        if self.xi_e is not None and not (lo < self.xi_e < hi):
            raise ValueError(f"xi_e={self.xi_e} outside ({lo}, {hi})")

    @property
    def t_star(self) -> float:
        return self.a / (2.0 * math.sqrt(self.reaction.N))

    @property
    def xi_star(self) -> float:
        return 1.0 / (2.0 * math.sqrt(self.reaction.N))

    def xi_e_bounds(self) -> tuple[float, float]:
        N = self.reaction.N
        return 1.0 / (2.0 * (2.0 * math.sqrt(N) - math.sqrt(N - 1.0))), 1.0 / (2.0 * math.sqrt(N))

    @property
    def t_e(self) -> float:
        xi = self.xi_e if self.xi_e is not None else 0.5 * sum(self.xi_e_bounds())
        return xi * self.a

    def theta(self, xi) -> np.ndarray:
        """Transport rate function N xi + 1/(4 xi), minimized at xi*."""
        xi = np.asarray(xi, dtype=float)
        out = self.reaction.N * xi + 0.25 / xi
        return out if out.ndim else float(out)

    def mu(self, t) -> np.ndarray:
        """Gaussian center of p: -a + (3/(2 lambda*)) log(t+1)."""
        lam = self.reaction.lambda_star
        t = np.asarray(t, dtype=float)
        out = -self.a + 1.5 / lam * np.log(t + 1.0)
        return out if out.ndim else float(out)

    def nu(self, t) -> np.ndarray:
        """Center of the tilted Gaussian: mu(t) + 2 sqrt(N) t."""
        t = np.asarray(t, dtype=float)
        out = self.mu(t) + 2.0 * math.sqrt(self.reaction.N) * t
        return out if out.ndim else float(out)

    def log_Lambda(self, t) -> np.ndarray:
        """log of the prefactor Lambda(t; a); Lambda itself underflows for t << t*."""
        t = np.asarray(t, dtype=float)
        lam = self.reaction.lambda_star
        N = self.reaction.N
        out = (0.75 * self.a / (lam * t)) * np.log(t + 1.0) \
            - 0.5 * np.log(4.0 * math.pi * t) - N * t - self.a**2 / (4.0 * t)
        return out if out.ndim else float(out)

    def Lambda(self, t) -> np.ndarray:
        out = np.exp(self.log_Lambda(t))
        return out if np.ndim(out) else float(out)

    def log_g(self, t, x) -> np.ndarray:
        lam = self.reaction.lambda_star
        return -((np.asarray(x, dtype=float) - 1.5 / lam * math.log(t + 1.0)) ** 2) / (4.0 * t)


def log_free_solution(t: float, x, params: FreeSolutionParams) -> np.ndarray:
    """log p(t, x) by the direct exponent (no intermediate underflow)."""
    if t <= 0:
        raise ValueError(f"free solution needs t > 0, got {t}")
    r = params.reaction
    x = np.asarray(x, dtype=float)
    delta = 1.5 / r.lambda_star * math.log(t + 1.0)
    return -0.5 * math.log(4.0 * math.pi * t) - r.N * t \
        - (x + params.a - delta) ** 2 / (4.0 * t)


def free_solution(t: float, x, params: FreeSolutionParams, check: bool = False):
    """Closed-form p(t, x); with check=True asserts the factored form agrees.

    The factored form Lambda e^{-ax/(2t)} g underflows to zero for t far from
    t*, so the agreement is asserted on the exponents, to 1e-12 relative.
    """
    logp = log_free_solution(t, x, params)
    if check:
        tilt = params.a * np.asarray(x, dtype=float) / (2.0 * t)
        log_fact = params.log_Lambda(t) - tilt + params.log_g(t, x)
        # the factored terms can individually dwarf log p (they cancel), so
        # the roundoff scale is set by the largest intermediate
        scale = 1.0 + np.abs(logp) + np.abs(tilt) + abs(params.log_Lambda(t))
        if np.any(np.abs(log_fact - logp) > 1e-12 * scale):
            raise AssertionError("free-solution factorization mismatch")
    out = np.exp(logp)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class GapConfig:
    dx: float = 0.05                 # used only when building standalone grids
    dt: float | None = None          # default min(0.25 dx, 0.01)
    t0: float = 0.01                 # closed-form initialization instant
    t_final: float | None = None     # default max(20 t*, 10 a)
    flatness_tol: float = 1e-4       # |d log I / dt| target at the final time
    max_extensions: int = 4
    rannacher_steps: int = 6         # backward-Euler start-up steps
    sample_ratio: float = 1.08       # geometric field-sample spacing
    positivity_tol: float = 1e-12    # relative undershoot allowed for r

    def step(self) -> float:
        return self.dt if self.dt is not None else min(0.25 * self.dx, 0.01)

    def horizon(self, params: FreeSolutionParams) -> float:
        if self.t_final is not None:
            return self.t_final
        return max(20.0 * params.t_star, 10.0 * params.a)


def flat_time_estimate(r: Reaction, tol: float) -> float:
    """Predicted time at which |dlogI/dt| ~ 3/(2 lambda* sqrt(pi)) t^{-3/2} hits tol."""
    C = 3.0 / (2.0 * r.lambda_star * math.sqrt(math.pi))
    return (1.3 * C / tol) ** (2.0 / 3.0)


def required_horizon(a: float, r: Reaction, cfg: "GapConfig | None" = None) -> float:
    """Horizon the gap run will actually need (moment flatness included).

    Front solves and grids feeding ``solve_gap`` must cover this time, or the
    flatness extension runs out of room.
    """
    cfg = cfg or GapConfig()
    params = FreeSolutionParams(a=a, reaction=r)
    if cfg.t_final is not None:
        return cfg.t_final
    return max(cfg.horizon(params), flat_time_estimate(r, cfg.flatness_tol))


@dataclass
class GapSolution:
    """Gap field r(t, x), its adjoint moment series, and the tail estimate."""

    a: float
    grid: Grid1D
    params: FreeSolutionParams
    times: np.ndarray                # field-sample instants
    r_fields: np.ndarray             # (len(times), n)
    free_fields: np.ndarray          # discrete V == N twin on the same lattice
    I_times: np.ndarray              # per-step instants
    I_series: np.ndarray
    dIdt_analytic: np.ndarray        # flux identity (the product)
    dIdt_fd: np.ndarray              # differenced I (the cross-check)
    mass_series: np.ndarray          # tilt-reconstructed int z dx at I_times
    I_limit: float                   # t -> inf extrapolation of I (see solve_gap)
    tail_prob: float                 # from I_limit
    tail_prob_raw: float             # from I(t_final), no limit extrapolation
    xbar0: float
    t_final: float
    flatness_residual: float
    extensions: int
    worst_negative: float            # most negative r seen, relative to its sup
    corrector_min: float             # most negative (r - free)/sup r at samples

    def I_at(self, t: float) -> float:
        return float(np.interp(t, self.I_times, self.I_series))


def solve_gap(a: float, pot: PotentialField, adjoint: AdjointProfile,
              cfg: GapConfig | None = None) -> GapSolution:
    """Integrate the gap equation and estimate P(d12 > a)."""
    cfg = cfg or GapConfig()
    if a < 0.5:
        raise ValueError(f"gap threshold a={a} below the supported range (a >= 0.5)")
    if abs(pot.xbar0 - adjoint.xbar0) > 1e-12:
        raise ValueError(
            f"potential and adjoint built with different shifts "
            f"({pot.xbar0} vs {adjoint.xbar0})"
        )
    grid = pot.grid
    if grid.x_min > -a - 50.0 + 1e-9:
        raise ValueError(
            f"potential grid starts at {grid.x_min}, needs to reach {-a - 50.0}"
        )
    r = adjoint.wave.reaction
    lam = r.lambda_star
    params = FreeSolutionParams(a=a, reaction=r)

    x = grid.x
    psi = adjoint.psi_at(x)
    psi_p = adjoint.psi_prime_at(x)
    tilt = np.exp(-lam * x)          # for the mass reconstruction int z dx

    stepper = ThetaStepper(
        grid,
        drift=lambda t: -1.5 / (lam * (t + 1.0)),
        potential=pot.v_at,
        bc=(0.0, 0.0),
    )
    # discrete free twin (V == N): its start-up error matches the main run's,
    # so the corrector q = r - p stays signed where the closed form would not
    N_vec = np.full(grid.n, r.N)
    stepper_free = ThetaStepper(
        grid,
        drift=lambda t: -1.5 / (lam * (t + 1.0)),
        potential=lambda t: N_vec,
        bc=(0.0, 0.0),
    )

    u = free_solution(cfg.t0, x, params)
    u_free = u.copy()
    t = cfg.t0
    dx = grid.dx

    I_t, I_v, I_flux, M_v = [t], [trapz(psi * u, dx)], [_flux(pot, psi, psi_p, u, t, lam, dx)], \
        [_mass(u, t, tilt, lam, a, dx)]
    fields = [u.copy()]
    free_fields = [u_free.copy()]
    f_times = [t]
    q_min = 0.0
    next_sample = cfg.t0 * cfg.sample_ratio

    # horizon: user-set, or planned so the flatness target is reachable
    T = cfg.t_final if cfg.t_final is not None else max(
        cfg.horizon(params), flat_time_estimate(r, cfg.flatness_tol))
    # latest time the grid can carry without boundary leakage
    T_grid = ((grid.x_max - 12.0) / 8.0) ** 2 - 1.0
    if T > T_grid + 1e-9:
        raise ValueError(
            f"grid right edge {grid.x_max:.0f} too close for horizon {T:.0f} "
            f"(supports t <= {T_grid:.0f}); widen L_right"
        )
    worst_neg = 0.0
    extensions = 0
    flat = math.inf
    while True:
        steps = ramped_steps(t, T, cfg.step(), dt0=cfg.t0 / 5.0 if t == cfg.t0 else None)
        for k, dt in enumerate(steps):
            theta = 1.0 if (extensions == 0 and len(I_t) <= cfg.rannacher_steps) else 0.5
            u = stepper.step(u, t, dt, theta=theta)
            u_free = stepper_free.step(u_free, t, dt, theta=theta)
            t += dt
            sup = float(np.max(u))
            neg = float(np.min(u))
            if neg < -cfg.positivity_tol * sup:
                raise QualityError(
                    f"gap field undershoots: min r = {neg:.3e} vs sup {sup:.3e} at t={t:.3f}"
                )
            worst_neg = min(worst_neg, neg / sup if sup > 0 else 0.0)
            I_t.append(t)
            I_v.append(trapz(psi * u, dx))
            I_flux.append(_flux(pot, psi, psi_p, u, t, lam, dx))
            M_v.append(_mass(u, t, tilt, lam, a, dx))
            if t >= next_sample or k == len(steps) - 1:
                q_min = min(q_min, float(np.min(u - u_free)) / sup)
                fields.append(u.copy())
                free_fields.append(u_free.copy())
                f_times.append(t)
                next_sample = t * cfg.sample_ratio
        flat = abs(I_flux[-1]) / I_v[-1]
        if flat <= cfg.flatness_tol or cfg.t_final is not None:
            break  # fixed horizons are honored as requested; flatness is reported
        if extensions >= cfg.max_extensions:
            raise QualityError(
                f"moment not flat at t={t:.0f}: |dlogI/dt|={flat:.2e} > "
                f"{cfg.flatness_tol} after {extensions} extensions - run longer"
            )
        # |dI/dt|/I ~ C t^{-3/2}: jump to the predicted flat time, with margin
        extensions += 1
        T = t * max(1.2, 1.1 * (flat / cfg.flatness_tol) ** (2.0 / 3.0))
        if T > T_grid:
            raise QualityError(
                f"flatness extension wants t={T:.0f} beyond grid capacity "
                f"{T_grid:.0f}; re-plan with a wider domain (required_horizon)"
            )

    I_t = np.asarray(I_t)
    I_v = np.asarray(I_v)
    I_flux = np.asarray(I_flux)
    dIdt_fd = np.gradient(I_v, I_t)

    # limit extrapolation: past the transition, dI/dt / I settles onto
    # C t^{-3/2}, so log I(inf) - log I(T) ~ 2 C / sqrt(T).  C is fitted on
    # the last decade; the correction only applies once that regime is on.
    I_limit = I_v[-1]
    late = I_t >= max(I_t[-1] / 10.0, 4.0 * params.t_star, a)
    if np.count_nonzero(late) >= 8:
        Cs = I_flux[late] / I_v[late] * I_t[late] ** 1.5
        C_hat = float(np.median(Cs))
        if C_hat > 0:
            I_limit = I_v[-1] * math.exp(2.0 * C_hat / math.sqrt(I_t[-1]))

    if q_min < -1e-8:
        raise QualityError(
            f"corrector negativity: min (r - free)/sup r = {q_min:.3e}"
        )
    coeff = math.exp(-lam * (a + 2.0 * pot.xbar0)) / (2.0 * lam**2 * math.sqrt(math.pi))
    return GapSolution(
        a=a, grid=grid, params=params,
        times=np.asarray(f_times), r_fields=np.asarray(fields),
        free_fields=np.asarray(free_fields),
        I_times=I_t, I_series=I_v, dIdt_analytic=I_flux, dIdt_fd=dIdt_fd,
        mass_series=np.asarray(M_v),
        I_limit=I_limit, tail_prob=coeff * I_limit, tail_prob_raw=coeff * I_v[-1],
        xbar0=pot.xbar0, t_final=t,
        flatness_residual=flat, extensions=extensions, worst_negative=worst_neg,
        corrector_min=q_min,
    )


def constant_potential(grid: Grid1D, reaction: Reaction, xbar0: float = 0.0) -> PotentialField:
    """Potential frozen at V == N (the free dynamics), for oracle comparisons."""
    N_field = np.full((2, grid.n), reaction.N)
    return PotentialField(grid=grid, times=np.array([0.0, 1.0]), V=N_field,
                          V_inf=N_field[0].copy(), xbar0=xbar0, reaction=reaction)


def _flux(pot: PotentialField, psi, psi_p, u, t, lam, dx):
    """Right side of the moment identity: drift term + E-coupling term."""
    E = pot.V_inf - pot.v_at(t)
    return 1.5 / (lam * (t + 1.0)) * trapz(psi_p * u, dx) + trapz(E * psi * u, dx)


def _mass(u, t, tilt, lam, a, dx):
    """int z dx reconstructed from r: (t+1)^{3/2} e^{-lambda* a} int e^{-lambda* x} r."""
    return (t + 1.0) ** 1.5 * math.exp(-lam * a) * trapz(tilt * u, dx)


# ---------------------------------------------------------------------------
# direct z-mass route


@dataclass
class ZMassSolution:
    a: float
    grid: Grid1D
    times: np.ndarray
    M: np.ndarray                    # int z(t, .) dx per step
    final_field: np.ndarray
    snapshots: dict                  # t -> field, at requested instants

    def M_at(self, t: float) -> float:
        return float(np.interp(t, self.times, self.M))


def solve_z_mass(a: float, pot: PotentialField, cfg: GapConfig | None = None,
                 t_final: float | None = None,
                 snapshot_times=()) -> ZMassSolution:
    """Integrate z in the plain moving frame (no tilt) and record int z dx.

    w(t, x) = z(t, x + m(t); a) solves

        w_t = w_xx + m'(t) w_x + [(N - 1) - V(t, x)] w,

    initialized by the exact tilt transform of the free solution at t0.  At
    finite t the mass int w dx equals P(x1(t) - x2(t) > a) - the quantity the
    Monte-Carlo module estimates - and its long-time limit is P(d12 > a).
    """
    cfg = cfg or GapConfig()
    if a < 0.5:
        raise ValueError(f"gap threshold a={a} below the supported range (a >= 0.5)")
    grid = pot.grid
    if grid.x_min > -a - 50.0 + 1e-9:
        raise ValueError(f"potential grid starts at {grid.x_min}, needs {-a - 50.0}")
    r = pot.reaction
    lam = r.lambda_star
    N = r.N
    params = FreeSolutionParams(a=a, reaction=r)
    T = t_final if t_final is not None else cfg.horizon(params)
    T_grid = ((grid.x_max - 12.0) / 8.0) ** 2 - 1.0
    if T > T_grid + 1e-9:
        raise ValueError(
            f"grid right edge {grid.x_max:.0f} too close for horizon {T:.0f} "
            f"(supports t <= {T_grid:.0f}); widen L_right"
        )

    x = grid.x
    dx = grid.dx
    logp0 = log_free_solution(cfg.t0, x, params)
    w = np.exp(logp0 + 1.5 * math.log(cfg.t0 + 1.0) - lam * (x + a))

    stepper = ThetaStepper(
        grid,
        drift=lambda t: r.c_star - 1.5 / (lam * (t + 1.0)),
        potential=lambda t: pot.v_at(t) - (N - 1.0),
        bc=(0.0, 0.0),
    )

    t = cfg.t0
    times = [t]
    M = [trapz(w, dx)]
    snaps = {}
    wanted = sorted(float(s) for s in snapshot_times)
    k_glob = 0
    for dt in ramped_steps(t, T, cfg.step(), dt0=cfg.t0 / 5.0):
        theta = 1.0 if k_glob < cfg.rannacher_steps else 0.5
        w = stepper.step(w, t, dt, theta=theta)
        t += dt
        k_glob += 1
        times.append(t)
        M.append(trapz(w, dx))
        while wanted and t >= wanted[0] - 1e-9:
            snaps[wanted.pop(0)] = w.copy()
    M = np.asarray(M)
    if np.any(M < -1e-12) or np.any(M > 1.0 + 1e-6):
        raise QualityError("z-mass left [0, 1]")
    return ZMassSolution(a=a, grid=grid, times=np.asarray(times), M=M,
                         final_field=w, snapshots=snaps)


def z_profile_tail(zm: ZMassSolution, wave, t: float) -> tuple[float, float]:
    """Amplitude of the limiting profile: fit w(t, .) ~ -P U'(x - s).

    The mass int z dx converges too slowly (and too fragilely) to read the
    limit off directly; the profile amplitude is the stable finite-time
    estimator of the same constant.  Returns (P, fitted shift); the shift
    tracks the front's own s(t), not xbar0, at finite t.
    """
    from scipy.optimize import minimize_scalar

    if t not in zm.snapshots:
        raise ValueError(f"no snapshot stored at t={t}; have {sorted(zm.snapshots)}")
    w_fld = zm.snapshots[t]
    x = zm.grid.x
    dx = zm.grid.dx

    def amplitude(shift):
        up = wave.u_prime_at(x - shift)
        return -trapz(w_fld * up, dx) / trapz(up * up, dx)

    def miss(shift):
        up = wave.u_prime_at(x - shift)
        return float(np.sum((w_fld + amplitude(shift) * up) ** 2))

    res = minimize_scalar(miss, bounds=(-6.0, 6.0), method="bounded",
                          options={"xatol": 1e-8})
    s = float(res.x)
    return float(amplitude(s)), s


# ---------------------------------------------------------------------------
# corrector diagnostics


def corrector_diagnostics(gs: GapSolution, adjoint: AdjointProfile,
                          pot: PotentialField | None = None,
                          cfg: GapConfig | None = None,
                          with_early_split: bool = False,
                          xi_e: float | None = None) -> dict:
    """Free/corrector decomposition report (never raises; failures are flags).

    Splits I into int psi p (free) and int psi q (corrector), locates the
    takeover time, and checks it against the window t* +- 3 sqrt(a); also
    checks q >= 0.  With ``with_early_split`` (needs ``pot``), additionally
    integrates the early corrector q_e (forcing gated at t <= t_e) and
    reports max_t int psi q_e.
    """
    params = gs.params
    x = gs.grid.x
    dx = gs.grid.dx
    psi = adjoint.psi_at(x)
    a = gs.a

    # q against the discrete free twin: start-up error cancels in the
    # difference, so the sign check is meaningful at every sample
    Ip, Iq = [], []
    q_min = gs.corrector_min
    for t, r_fld, p_fld in zip(gs.times, gs.r_fields, gs.free_fields):
        Ip.append(trapz(psi * p_fld, dx))
        Iq.append(trapz(psi * (r_fld - p_fld), dx))
    Ip = np.asarray(Ip)
    Iq = np.asarray(Iq)
    I = Ip + Iq

    t_star = params.t_star
    band = 3.0 * math.sqrt(a)
    cross_idx = np.flatnonzero(Iq > Ip)
    crossover = float(gs.times[cross_idx[0]]) if cross_idx.size else math.inf
    early = gs.times <= t_star - band
    late = gs.times >= t_star + band
    free_dominates_early = bool(np.all(Ip[early] > 0.9 * I[early])) if early.any() else True
    corr_dominates_late = bool(np.all(Iq[late] > 0.9 * I[late])) if late.any() else True

    report = {
        "t_star": t_star,
        "crossover": crossover,
        "crossover_in_band": bool(abs(crossover - t_star) <= band),
        "free_dominates_early": free_dominates_early,
        "corrector_dominates_late": corr_dominates_late,
        "q_min_relative": q_min,
        "q_nonnegative": bool(q_min >= -1e-10),
        "times": gs.times,
        "I_free": Ip,
        "I_corr": Iq,
    }

    if with_early_split:
        if pot is None:
            raise ValueError("early split needs the potential field")
        report["early_moment_max"] = _early_corrector_moment(gs, adjoint, pot, cfg,
                                                             xi_e=xi_e)
    return report


def _early_corrector_moment(gs: GapSolution, adjoint: AdjointProfile,
                            pot: PotentialField, cfg: GapConfig | None,
                            xi_e: float | None = None) -> float:
    """max_t int psi q_e dx, with q_e forced by (N - V) p only for t <= t_e."""
    cfg = cfg or GapConfig()
    params = gs.params if xi_e is None else FreeSolutionParams(
        a=gs.a, reaction=gs.params.reaction, xi_e=xi_e)
    grid = gs.grid
    x = grid.x
    dx = grid.dx
    lam = params.reaction.lambda_star
    N = params.reaction.N
    psi = adjoint.psi_at(x)
    t_e = params.t_e

    stepper = ThetaStepper(
        grid,
        drift=lambda t: -1.5 / (lam * (t + 1.0)),
        potential=pot.v_at,
        bc=(0.0, 0.0),
    )
    qe = np.zeros(grid.n)
    t = cfg.t0
    best = 0.0
    # integrate a bit past the gate; afterwards int psi q_e only decays
    T = min(gs.t_final, 2.0 * t_e + 10.0)
    k = 0
    for dt in ramped_steps(t, T, cfg.step(), dt0=cfg.t0 / 5.0):
        if t <= t_e:
            p_mid = free_solution(t + 0.5 * dt, x, params)
            src = (N - pot.v_at(t + 0.5 * dt)) * p_mid
        else:
            src = None
        theta = 1.0 if k < cfg.rannacher_steps else 0.5
        qe = stepper.step(qe, t, dt, theta=theta, source=src)
        t += dt
        k += 1
        best = max(best, trapz(psi * qe, dx))
    return best
