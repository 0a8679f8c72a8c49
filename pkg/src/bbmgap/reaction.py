"""Offspring distributions and the induced KPP reaction term.

A branching event produces k >= 2 children with probability p_k.  The induced
reaction is

    f(u) = 1 - u - sum_k p_k (1 - u)^k,

which satisfies f(0) = f(1) = 0, f'(0) = N - 1, f'(1) = -1 and f'' <= 0 on
[0, 1], where N = sum_k k p_k is the mean offspring number.  We also use the
split f(u) = (N - 1) u - F(u); the "nonlinear part" F has F'(0) = 0,
F'(1) = N and F' strictly increasing.

Front constants induced by the law:

    c_star = 2 sqrt(N - 1),  lambda_star = sqrt(N - 1),
    gamma_star = sqrt(N) - sqrt(N - 1).

Only finite-support laws are handled, so every evaluation is an exact
polynomial.  Two expansions of the same polynomial are kept:

* in u, with the constant and linear coefficients cancelled symbolically
  (a_0 = 0, a_1 = N - 1), used for u < 1/2;
* in w = 1 - u, used for u >= 1/2 (there 1 - u is exact in float64).

This keeps full *relative* accuracy in both tails: solvers track states down
to u ~ 1e-300 on the right and 1 - u ~ 1e-40 on the left, where a single
rounded cancellation would swamp the value.  Deep-left callers that hold w
directly must use the ``*_from_gap`` evaluators.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np

PROB_TOL = 1e-12
CLAMP_TOL = 1e-9


@dataclass(frozen=True)
class OffspringLaw:
    """Finite offspring distribution {(k, p_k)} with k >= 2."""

    probs: tuple[tuple[int, float], ...]
    beta: float = 0.5  # Hoelder exponent, reported only; any beta in (0,1) works for finite laws

    def __post_init__(self):
        if not self.probs:
            raise ValueError("offspring law must contain at least one (k, p_k) pair")
        ks = [k for k, _ in self.probs]
        ps = [p for _, p in self.probs]
        if any(k != int(k) or k < 2 for k in ks):
            raise ValueError(f"offspring counts must be integers >= 2, got {ks}")
        if len(set(ks)) != len(ks):
            raise ValueError(f"duplicate offspring counts in {ks}")
        if any(p < 0 for p in ps):
            raise ValueError(f"offspring probabilities must be nonnegative, got {ps}")
        total = math.fsum(ps)
        if abs(total - 1.0) > PROB_TOL:
            raise ValueError(f"offspring probabilities sum to {total!r}, expected 1 within {PROB_TOL}")
        if not (0.0 < self.beta < 1.0):
            raise ValueError(f"beta must lie in (0, 1), got {self.beta}")

    @property
    def ks(self) -> np.ndarray:
        return np.array([k for k, _ in self.probs], dtype=np.int64)

    @property
    def ps(self) -> np.ndarray:
        return np.array([p for _, p in self.probs], dtype=np.float64)

    def mean(self) -> float:
        return float(math.fsum(k * p for k, p in self.probs))

    def higher_moment(self) -> float:
        """sum_k k^(1+beta) p_k; finite by construction, recorded for reporting."""
        return float(math.fsum(k ** (1.0 + self.beta) * p for k, p in self.probs))


def binary_law() -> OffspringLaw:
    """Strictly dyadic branching, p_2 = 1."""
    return OffspringLaw(probs=((2, 1.0),))


def _horner(coeffs: np.ndarray, x):
    """Evaluate sum_j coeffs[j] x^j (dense, ascending order)."""
    acc = np.zeros_like(x) if np.ndim(x) else 0.0
    for c in coeffs[::-1]:
        acc = acc * x + c
    return acc


@dataclass(frozen=True)
class Reaction:
    """Offspring law together with its derived front constants.

    Immutable after construction; safe to share across threads.
    """

    law: OffspringLaw
    N: float = field(init=False)
    c_star: float = field(init=False)
    lambda_star: float = field(init=False)
    gamma_star: float = field(init=False)
    _a: np.ndarray = field(init=False, repr=False, compare=False)   # f(u) = sum a_j u^j
    _pw: np.ndarray = field(init=False, repr=False, compare=False)  # sum p_k w^k
    _kw: np.ndarray = field(init=False, repr=False, compare=False)  # sum k p_k w^(k-1)

    def __post_init__(self):
        N = self.law.mean()
        if N <= 1.0:
            raise ValueError(f"mean offspring N={N} must exceed 1")
        object.__setattr__(self, "N", N)
        object.__setattr__(self, "lambda_star", math.sqrt(N - 1.0))
        object.__setattr__(self, "c_star", 2.0 * math.sqrt(N - 1.0))
        object.__setattr__(self, "gamma_star", math.sqrt(N) - math.sqrt(N - 1.0))

        kmax = int(max(k for k, _ in self.law.probs))
        # u-expansion of f with exact endpoint cancellations
        a = np.zeros(kmax + 1)
        for k, p in self.law.probs:
            for j in range(2, int(k) + 1):
                a[j] += p * math.comb(int(k), j) * (-1.0) ** (j + 1)
        a[0] = 0.0
        a[1] = N - 1.0
        # w-expansions
        pw = np.zeros(kmax + 1)
        kw = np.zeros(kmax)
        for k, p in self.law.probs:
            pw[int(k)] = p
            kw[int(k) - 1] = k * p
        object.__setattr__(self, "_a", a)
        object.__setattr__(self, "_pw", pw)
        object.__setattr__(self, "_kw", kw)

    # -- raw polynomial evaluation (no clamping; used inside solvers) -------

    def f_raw(self, u):
        """f(u) for any real u, relative-accurate in both tails."""
        if np.ndim(u) == 0:
            u = float(u)
            if u < 0.5:
                return float(_horner(self._a, u))
            w = 1.0 - u
            return float(w - _horner(self._pw, w))
        u = np.asarray(u, dtype=np.float64)
        w = 1.0 - u
        return np.where(u < 0.5, _horner(self._a, u), w - _horner(self._pw, w))

    def f_prime_raw(self, u):
        """f'(u) = sum_j j a_j u^(j-1)  (= -1 + sum_k k p_k w^(k-1) near u=1)."""
        da = self._a[1:] * np.arange(1, self._a.size)
        if np.ndim(u) == 0:
            u = float(u)
            if u < 0.5:
                return float(_horner(da, u))
            return float(-1.0 + _horner(self._kw, 1.0 - u))
        u = np.asarray(u, dtype=np.float64)
        return np.where(u < 0.5, _horner(da, u), -1.0 + _horner(self._kw, 1.0 - u))

    def F_prime_raw(self, u):
        """F'(u) = N - sum_k k p_k w^(k-1); F'(0) = 0 exactly in the u-form."""
        # u-form: F' = -(sum_{j>=2} j a_j u^(j-1)), the j=1 term cancels symbolically
        da = np.concatenate(([0.0], self._a[2:] * np.arange(2, self._a.size)))
        if np.ndim(u) == 0:
            u = float(u)
            if u < 0.5:
                return float(-_horner(da, u))
            return float(self.N - _horner(self._kw, 1.0 - u))
        u = np.asarray(u, dtype=np.float64)
        return np.where(u < 0.5, -_horner(da, u), self.N - _horner(self._kw, 1.0 - u))

    def F_raw(self, u):
        """F(u) = (N-1)u - f(u) = -(sum_{j>=2} a_j u^j); F(0) = F'(0) = 0 exactly."""
        a2 = self._a.copy()
        a2[:2] = 0.0
        if np.ndim(u) == 0:
            u = float(u)
            if u < 0.5:
                return float(-_horner(a2, u))
            return float((self.N - 1.0) * u - self.f_raw(u))
        u = np.asarray(u, dtype=np.float64)
        return np.where(u < 0.5, -_horner(a2, u), (self.N - 1.0) * u - self.f_raw(u))

    # -- evaluation in w = 1 - u (deep left tail, w below float resolution of u)

    def f_from_gap(self, w):
        """f(1 - w) = w - sum_k p_k w^k, evaluated directly in w."""
        if np.ndim(w) == 0:
            w = float(w)
            if w < 0.5:
                return float(w - _horner(self._pw, w))
            return self.f_raw(1.0 - w)
        w = np.asarray(w, dtype=np.float64)
        return np.where(w < 0.5, w - _horner(self._pw, w), self.f_raw(1.0 - w))

    def f_prime_from_gap(self, w):
        """f'(1 - w) = -1 + sum_k k p_k w^(k-1)."""
        w = np.asarray(w, dtype=np.float64)
        out = -1.0 + _horner(self._kw, w)
        return out if out.ndim else float(out)

    def F_prime_from_gap(self, w):
        """F'(1 - w) = N - sum_k k p_k w^(k-1); F'(1) = N at w = 0."""
        w = np.asarray(w, dtype=np.float64)
        out = self.N - _horner(self._kw, w)
        return out if out.ndim else float(out)

    # -- clamped public evaluation on [0, 1] ---------------------------------

    def _clamp(self, u, tol: float = CLAMP_TOL):
        u = np.asarray(u, dtype=np.float64)
        if np.any(np.isnan(u)):
            raise ValueError("reaction evaluated at NaN")
        excess = max(float(np.max(u - 1.0, initial=0.0)), float(np.max(-u, initial=0.0)))
        if excess > tol:
            raise ValueError(f"state leaves [0,1] by {excess:.3e} (> clamp tolerance {tol:.0e})")
        return np.clip(u, 0.0, 1.0)

    def f(self, u, clamp_tol: float = CLAMP_TOL):
        return self.f_raw(self._clamp(u, clamp_tol))

    def f_prime(self, u, clamp_tol: float = CLAMP_TOL):
        return self.f_prime_raw(self._clamp(u, clamp_tol))

    def F(self, u, clamp_tol: float = CLAMP_TOL):
        return self.F_raw(self._clamp(u, clamp_tol))

    def F_prime(self, u, clamp_tol: float = CLAMP_TOL):
        return self.F_prime_raw(self._clamp(u, clamp_tol))


def build_reaction(law: OffspringLaw) -> Reaction:
    """Validate the law and assemble the Reaction with its derived constants."""
    return Reaction(law=law)


def eval_nonlinearity(r: Reaction, u, which: str):
    """Dispatch evaluation of f, f', F or F' at u in [0, 1].

    ``which`` is one of {"f", "f_prime", "F", "F_prime"} (aliases "f'", "F'").
    """
    table = {
        "f": r.f,
        "f_prime": r.f_prime,
        "f'": r.f_prime,
        "F": r.F,
        "F_prime": r.F_prime,
        "F'": r.F_prime,
    }
    if which not in table:
        raise ValueError(f"unknown nonlinearity selector {which!r}")
    return table[which](u)


def parse_offspring(pairs) -> OffspringLaw:
    """Build a law from config-style nested pairs, e.g. [[2, 0.5], [3, 0.5]]."""
    probs = tuple((int(k), float(p)) for k, p in pairs)
    return OffspringLaw(probs=probs)
