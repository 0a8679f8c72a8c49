"""Event-driven Monte-Carlo simulation of branching Brownian motion.

Each particle carries an independent exponential(1) branching clock and a
Brownian motion of variance 2t; at a branching event it is replaced in place
by k offspring, k drawn from the offspring law.  Positions are sampled only
at branching events and at the horizon (lazy increments), so the simulated
law is exact - there is no time-stepping error.

The implementation is a vectorized frontier sweep batched across replicates:
one flat array holds every unfinished particle of every replicate, a sweep
samples all lifetimes at once, finalizes the particles whose clocks outlive
the horizon, and spawns the offspring of the rest.  Replicates are split
into fixed-size chunks; each chunk draws from its own counter-based Philox
stream keyed by (seed, chunk index), so results are reproducible for a given
seed and independent of the worker count.

The headline estimator is the tail fraction of the gap x1 - x2 between the
two rightmost particles at the horizon, with the convention that a replicate
that has never branched has gap +infinity.
"""
from __future__ import annotations

from dataclasses import dataclass
import math
from multiprocessing import get_context

import numpy as np

from .reaction import OffspringLaw

POP_CAP = 10**6           # per-replicate population guard
CHUNK_PARTICLES = 2 * 10**7   # memory target per chunk (particles across replicates)


@dataclass(frozen=True)
class Particle:
    """One particle of the frontier: where and when it was born.

    The production engine keeps these as flat arrays; the record form is
    used by the reference simulator below.
    """

    position: float
    birth_time: float

    def __post_init__(self):
        if not (math.isfinite(self.position) and math.isfinite(self.birth_time)):
            raise ValueError("particle state must be finite")


def simulate_reference(law: OffspringLaw, t_end: float, seed: int) -> np.ndarray:
    """Plain object-based event-driven simulation (slow; test oracle).

    Walks the branching tree one Particle at a time with the same law as the
    vectorized engine but none of its batching, and returns the final
    positions sorted descending.
    """
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    ks = law.ks
    ps = law.ps
    stack = [Particle(0.0, 0.0)]
    final = []
    while stack:
        part = stack.pop()
        life = rng.exponential(1.0)
        if part.birth_time + life >= t_end:
            dt = t_end - part.birth_time
            final.append(part.position + rng.normal(0.0, math.sqrt(2.0 * dt)))
            continue
        t_b = part.birth_time + life
        x_b = part.position + rng.normal(0.0, math.sqrt(2.0 * life))
        for _ in range(int(rng.choice(ks, p=ps))):
            stack.append(Particle(x_b, t_b))
        if len(stack) + len(final) > POP_CAP:
            raise RuntimeError(f"population cap {POP_CAP} exceeded")
    out = np.asarray(final)
    out[::-1].sort()
    return out


@dataclass(frozen=True)
class McEstimate:
    """Monte-Carlo tail estimate with its binomial error."""

    value: float
    stderr: float
    replicates: int
    t_end: float
    a: float

    def __post_init__(self):
        if not (0.0 <= self.value <= 1.0):
            raise ValueError(f"estimate {self.value} outside [0, 1]")


@dataclass
class BatchStats:
    """Per-replicate extremes and tree facts from one simulation batch."""

    x1: np.ndarray                 # rightmost position at t_end
    x2: np.ndarray                 # second rightmost; -inf if never branched
    population: np.ndarray         # particles alive at t_end
    first_branch: np.ndarray       # root's branching time; +inf if censored


def _chunk_sizes(replicates: int, mean_pop: float) -> list[int]:
    per = max(1, int(CHUNK_PARTICLES / max(mean_pop, 1.0)))
    sizes = []
    left = replicates
    while left > 0:
        take = min(per, left)
        sizes.append(take)
        left -= take
    return sizes


def _rng_for_chunk(seed: int, chunk_index: int) -> np.random.Generator:
    # Philox is counter-based: keying by (seed, chunk) gives independent,
    # reproducible streams no matter how chunks are scheduled.
    return np.random.Generator(np.random.Philox(key=np.uint64(seed) ^ (np.uint64(chunk_index) << np.uint64(32))))


def _simulate_chunk(law: OffspringLaw, t_end: float, n_rep: int, seed: int,
                    chunk_index: int, branching: bool = True) -> BatchStats:
    """Exact frontier sweep for one chunk of replicates."""
    rng = _rng_for_chunk(seed, chunk_index)
    ks = law.ks
    ps = law.ps

    rep = np.arange(n_rep, dtype=np.int64)
    pos = np.zeros(n_rep)
    born = np.zeros(n_rep)
    is_root = np.ones(n_rep, dtype=bool)

    fin_rep, fin_pos = [], []
    first_branch = np.full(n_rep, np.inf)
    pop = np.zeros(n_rep, dtype=np.int64)

    while rep.size:
        life = rng.exponential(1.0, size=rep.size) if branching else np.full(rep.size, np.inf)
        t_branch = born + life
        done = t_branch >= t_end

        if np.any(done):
            dt = t_end - born[done]
            fin_pos.append(pos[done] + rng.normal(0.0, np.sqrt(2.0 * dt)))
            fin_rep.append(rep[done])
            np.add.at(pop, rep[done], 1)

        live = ~done
        if not np.any(live):
            break
        rep_b = rep[live]
        t_b = t_branch[live]
        dt = life[live]
        pos_b = pos[live] + rng.normal(0.0, np.sqrt(2.0 * dt))
        root_b = is_root[live]
        if np.any(root_b):
            first_branch[rep_b[root_b]] = t_b[root_b]

        k = rng.choice(ks, size=rep_b.size, p=ps)
        rep = np.repeat(rep_b, k)
        pos = np.repeat(pos_b, k)
        born = np.repeat(t_b, k)
        is_root = np.zeros(rep.size, dtype=bool)

        counts = np.bincount(rep, minlength=n_rep) + pop
        if np.any(counts > POP_CAP):
            worst = int(np.argmax(counts))
            raise RuntimeError(
                f"population cap {POP_CAP} exceeded in replicate {worst} "
                f"({counts[worst]} particles)"
            )

    rep_f = np.concatenate(fin_rep)
    pos_f = np.concatenate(fin_pos)

    # top-two per replicate: sort by (replicate, -position), take segment heads
    order = np.lexsort((-pos_f, rep_f))
    rep_s = rep_f[order]
    pos_s = pos_f[order]
    starts = np.flatnonzero(np.concatenate(([True], rep_s[1:] != rep_s[:-1])))
    x1 = pos_s[starts]
    x2 = np.full(n_rep, -np.inf)
    second = starts + 1
    has_two = second < pos_s.size
    has_two[has_two] &= rep_s[second[has_two]] == rep_s[starts[has_two]]
    x2[rep_s[starts[has_two]]] = pos_s[second[has_two]]
    # x1 per replicate (all replicates present by construction)
    x1_full = np.empty(n_rep)
    x1_full[rep_s[starts]] = x1
    return BatchStats(x1=x1_full, x2=x2, population=pop, first_branch=first_branch)


def _chunk_worker(args):
    return _simulate_chunk(*args)


def simulate_batch(law: OffspringLaw, t_end: float, replicates: int, seed: int,
                   workers: int = 1, branching: bool = True) -> BatchStats:
    """Run replicates (chunked, optionally in a process pool) and merge stats."""
    if t_end > 15.0:
        raise ValueError(f"t_end={t_end} beyond the supported horizon (population e^t)")
    mean_pop = math.exp((law.mean() - 1.0) * t_end)
    sizes = _chunk_sizes(replicates, mean_pop)
    tasks = [(law, t_end, n, seed, i, branching) for i, n in enumerate(sizes)]
    if workers > 1 and len(tasks) > 1:
        ctx = get_context("spawn")
        with ctx.Pool(processes=min(workers, len(tasks))) as pool:
            parts = pool.map(_chunk_worker, tasks)
    else:
        parts = [_simulate_chunk(*t) for t in tasks]
    return BatchStats(
        x1=np.concatenate([p.x1 for p in parts]),
        x2=np.concatenate([p.x2 for p in parts]),
        population=np.concatenate([p.population for p in parts]),
        first_branch=np.concatenate([p.first_branch for p in parts]),
    )


def simulate_bbm(law: OffspringLaw, t_end: float, seed: int) -> np.ndarray:
    """One realization; returns the final positions sorted descending."""
    if t_end > 15.0:
        raise ValueError(f"t_end={t_end} beyond the supported horizon (population e^t)")
    rng = _rng_for_chunk(seed, 0)
    pos = np.zeros(1)
    born = np.zeros(1)
    final = []
    n_alive = 1
    while pos.size:
        life = rng.exponential(1.0, size=pos.size)
        t_branch = born + life
        done = t_branch >= t_end
        if np.any(done):
            dt = t_end - born[done]
            final.append(pos[done] + rng.normal(0.0, np.sqrt(2.0 * dt)))
        live = ~done
        pos_b = pos[live] + rng.normal(0.0, np.sqrt(2.0 * life[live]))
        k = rng.choice(law.ks, size=pos_b.size, p=law.ps)
        pos = np.repeat(pos_b, k)
        born = np.repeat(t_branch[live], k)
        n_alive = sum(f.size for f in final) + pos.size
        if n_alive > POP_CAP:
            raise RuntimeError(f"population cap {POP_CAP} exceeded ({n_alive})")
    out = np.concatenate(final)
    out[::-1].sort()
    return out


def estimate_gap_tail_mc(law: OffspringLaw, t_end: float, a, replicates: int,
                         seed: int, workers: int = 1) -> list[McEstimate]:
    """Fraction of replicates with x1 - x2 > a for each threshold in ``a``.

    Replicates that never branched count as gap = +infinity.  Returns one
    estimate per threshold, all measured on the same sample.
    """
    if replicates < 10**3:
        raise ValueError(f"needs >= 1000 replicates, got {replicates}")
    a_list = np.atleast_1d(np.asarray(a, dtype=float))
    stats = simulate_batch(law, t_end, replicates, seed, workers=workers)
    gap = stats.x1 - stats.x2          # +inf where never branched
    out = []
    for ai in a_list:
        hits = int(np.count_nonzero(gap > ai))
        p = hits / replicates
        se = math.sqrt(p * (1.0 - p) / replicates)
        out.append(McEstimate(value=p, stderr=se, replicates=replicates,
                              t_end=t_end, a=float(ai)))
    return out
