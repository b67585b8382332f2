"""Seeded branch sampling, exhaustive enumeration, and the statistics built on them.

Randomness: sample ``i`` of a run with master seed ``s`` draws from its own
Philox stream keyed by ``s`` with counter ``(0, 0, 0, i)``, one uniform per
letter, so results never depend on how samples are spread over threads.
"""

from concurrent.futures import ThreadPoolExecutor
import csv
from dataclasses import dataclass
import math

import numpy as np

from ._backend import kernel
from .errors import EmptySampleSetError, InvalidMeasureError
from .measures import check_spec, cylinder_weight, transition
from .operators import EPS_PSD, SQRT_FLOOR
from .tree import TreeCache, format_word

DEFAULT_STOP_TOL = 1e-12
SUPERMARTINGALE_TOL = 1e-10

_KIND_CODES = {"energy": kernel.ENERGY, "trace": kernel.TRACE, "residual_binary": kernel.RESIDUAL}
_REASONS = {
    kernel.STOP_DEPTH: "depth_reached",
    kernel.STOP_RESIDUAL: "residual_below_tol",
    kernel.STOP_DEAD: "dead_absorbed",
}


def sample_stream(master_seed, index):
    """The generator owned by sample ``index``."""
    return np.random.Generator(np.random.Philox(key=master_seed, counter=[0, 0, 0, index]))


@dataclass(frozen=True, eq=False)
class BranchSample:
    """One sampled branch, truncated at its stopping depth ``n``.

    ``energies`` (``M_0..M_n``) is ``None`` for the trace measure, which has
    no probe vector. ``ops`` holds the dissipated operators ``Delta_1..Delta_n``
    when they were retained.
    """

    index: int
    kind: str
    m: int
    letters: tuple
    energies: np.ndarray
    traces: np.ndarray
    step_energies: np.ndarray
    step_traces: np.ndarray
    dead: tuple
    ops: np.ndarray
    final_residual: np.ndarray
    seed_path: str
    stop_tol: float
    stopped_reason: str

    @property
    def depth(self):
        return len(self.letters)

    @property
    def word(self):
        return format_word(self.letters, self.m)

    @property
    def values(self):
        """The scalar the measure tracks: ``M_k`` or ``T_k``."""
        return self.traces if self.kind == "trace" else self.energies

    @property
    def step_values(self):
        return self.step_traces if self.kind == "trace" else self.step_energies

    @property
    def root_value(self):
        return float(self.values[0])

    @property
    def final_value(self):
        return float(self.values[-1])


def _as_readonly(a):
    a = np.array(a)
    a.flags.writeable = False
    return a


def _run_walk(cache, spec, scale, uniforms, stop_tol, retain_ops):
    d = cache.family.dim
    x = spec.x if spec.kind != "trace" else np.zeros(d, dtype=np.complex128)
    return kernel.walk_branch(
        cache.root.matrix,
        cache.family.projections,
        x,
        _KIND_CODES[spec.kind],
        uniforms,
        spec.fallback(cache.m),
        stop_tol * scale,
        spec.dead_tol * scale,
        EPS_PSD,
        SQRT_FLOOR,
        bool(retain_ops),
    )


def _sample(cache, spec, scale, max_depth, stop_tol, seed, retain_ops, index):
    uniforms = sample_stream(seed, index).random(max_depth)
    n, reason, letters, energies, traces, step_e, step_t, dead, ops, final = _run_walk(
        cache, spec, scale, uniforms, stop_tol, retain_ops
    )
    has_x = spec.kind != "trace"
    return BranchSample(
        index=index,
        kind=spec.kind,
        m=cache.m,
        letters=tuple(int(j) for j in letters[:n]),
        energies=_as_readonly(energies[: n + 1]) if has_x else None,
        traces=_as_readonly(traces[: n + 1]),
        step_energies=_as_readonly(step_e[:n]) if has_x else None,
        step_traces=_as_readonly(step_t[:n]),
        dead=tuple(bool(b) for b in dead[:n]),
        ops=_as_readonly(ops[:n]) if retain_ops else None,
        final_residual=_as_readonly(final),
        seed_path=f"philox:{seed}:{index}",
        stop_tol=stop_tol,
        stopped_reason=_REASONS[int(reason)],
    )


def sample_branch(cache, spec, max_depth, stop_tol=DEFAULT_STOP_TOL, seed=0, retain_ops=False, index=0):
    """Draw one branch of at most ``max_depth`` letters.

    The walk stops early once the tracked scalar falls to ``stop_tol`` times
    its root value. A walk whose last letter was drawn at a dead node reports
    ``dead_absorbed``.
    """
    if max_depth < 1:
        raise ValueError("max_depth must be at least 1")
    scale = check_spec(cache, spec)
    return _sample(cache, spec, scale, max_depth, stop_tol, seed, retain_ops, index)


def sample_branches(cache, spec, n_samples, max_depth, stop_tol=DEFAULT_STOP_TOL, seed=0,
                    retain_ops=False, threads=1):
    """Samples ``0..n_samples-1``, ordered by index whatever the thread count."""
    if max_depth < 1:
        raise ValueError("max_depth must be at least 1")
    scale = check_spec(cache, spec)

    def one(i):
        return _sample(cache, spec, scale, max_depth, stop_tol, seed, retain_ops, i)

    if threads <= 1:
        return [one(i) for i in range(n_samples)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, range(n_samples), chunksize=max(1, n_samples // (8 * threads))))


def branch_defects(sample):
    """``(monotonicity, telescoping)`` defects of one branch, relative to its root value.

    Monotonicity is the largest increase between consecutive levels;
    telescoping is ``|V_0 - V_n - sum_k A_k|``.
    """
    values = sample.values
    root = values[0]
    if root <= 0.0:
        return 0.0, 0.0
    rise = float(np.max(np.diff(values), initial=0.0))
    tele = abs(values[0] - values[-1] - float(np.sum(sample.step_values)))
    return max(rise, 0.0) / root, tele / root


def _exhaustive(cache):
    if cache.mode == "exhaustive":
        return cache
    return TreeCache(cache.family, cache.root, cache.budget, mode="exhaustive")


def _levels(cache, spec, depth):
    """Yield ``(n, [(word, weight), ...])`` for n = 0..depth."""
    level = [((), 1.0)]
    yield 0, level
    for n in range(1, depth + 1):
        nxt = []
        for w, p in level:
            probs = transition(cache, spec, w).probs
            for j in range(cache.m):
                nxt.append((w + (j + 1,), p * float(probs[j])))
        if spec.kind == "residual_binary":
            nxt = [(w, cylinder_weight(cache, spec, w)) for w, _ in nxt]
        level = nxt
        yield n, level


def enumerate_level(cache, spec, n):
    """All words of length ``n`` as ``(word, weight, value)`` triples."""
    cache = _exhaustive(cache)
    cache.check_budget(n)
    check_spec(cache, spec)
    for k, level in _levels(cache, spec, n):
        if k == n:
            return [(w, p, spec.scalar(cache.residual(w))) for w, p in level]


@dataclass(frozen=True)
class LevelStats:
    n: int
    expectation: float
    bound: float
    mode: str
    n_samples: int = 0
    std_error: float = 0.0
    contraction_ok: bool = True


def _bound(family, root, n):
    return family.contraction ** n * root


def expectation_profile(cache, spec, depth, mode="exhaustive", n_samples=10_000, seed=0, threads=1):
    """Expected tracked scalar at levels 0..depth with the bound ``c^n`` times the root value.

    Exhaustive mode sums over all words; ``contraction_ok`` then says whether
    ``E[level n] <= c E[level n-1] + 1e-10 root``. Monte Carlo mode averages
    ``n_samples`` branches (walked without early stopping) and allows four
    standard errors of slack in the same comparison.
    """
    if depth < 1:
        raise ValueError("depth must be at least 1")
    if mode == "exhaustive":
        cache = _exhaustive(cache)
        cache.check_budget(depth)
        root = check_spec(cache, spec)
        means = []
        for _, level in _levels(cache, spec, depth):
            means.append(math.fsum(p * spec.scalar(cache.residual(w)) for w, p in level))
    elif mode == "monte_carlo":
        check_spec(cache, spec)
        samples = sample_branches(cache, spec, n_samples, depth, 0.0, seed, threads=threads)
        return profile_from_samples(samples, depth, cache.family)
    else:
        raise ValueError(f"mode must be 'exhaustive' or 'monte_carlo', not {mode!r}")
    return _stats(means, [0.0] * len(means), [SUPERMARTINGALE_TOL * root] * len(means),
                  cache.family, root, mode, 0)


def profile_from_samples(samples, depth, family):
    """Monte Carlo level statistics from branches, each held at its last value after it stops."""
    if not samples:
        raise EmptySampleSetError("no samples to average")
    table = padded_values(samples, depth)
    n = len(samples)
    root = float(table[0, 0])
    means = _column_means(table)
    if n > 1:
        errors = [math.sqrt(math.fsum((col - mu) ** 2) / (n - 1) / n) for col, mu in zip(table.T, means)]
    else:
        errors = [0.0] * (depth + 1)
    slack = [SUPERMARTINGALE_TOL * root + 4.0 * e for e in errors]
    return _stats(means, errors, slack, family, root, "monte_carlo", n)


def _stats(means, errors, slack, family, root, mode, count):
    c = family.contraction
    out = []
    for n, mean in enumerate(means):
        ok = True
        if n > 0:
            ok = mean <= c * means[n - 1] + slack[n] + c * slack[n - 1]
        out.append(LevelStats(n, float(mean), _bound(family, root, n), mode, count,
                              float(errors[n]), bool(ok)))
    return out


def _column_means(table):
    # exactly rounded column sums; a plain column reduction drifts by ~n eps
    return [math.fsum(col) / len(col) for col in table.T]


def padded_values(samples, depth, steps=False):
    """``(N, depth + 1)`` table of per-level values, holding each branch's last value after it stops.

    With ``steps=True`` the ``(N, depth)`` per-step dissipations, zero after stopping.
    """
    if steps:
        table = np.zeros((len(samples), depth))
        for i, s in enumerate(samples):
            table[i, : s.depth] = s.step_values
        return table
    table = np.empty((len(samples), depth + 1))
    for i, s in enumerate(samples):
        v = s.values
        table[i, : len(v)] = v
        table[i, len(v):] = v[-1]
    return table


@dataclass(frozen=True)
class SupermartingaleReport:
    max_violation: float
    max_contraction_excess: float
    nodes_checked: int
    contraction: float
    root: float


def conditional_supermartingale_check(cache, spec, depth):
    """Largest one-step conditional increase over alive words of length <= depth.

    ``max_violation`` is the maximum of ``sum_j p(j|w) V(wj) - V(w)``;
    ``max_contraction_excess`` the maximum of ``sum_j p(j|w) V(wj) - c V(w)``
    (not defined for the residual measure, reported as NaN).
    """
    cache = _exhaustive(cache)
    cache.check_budget(depth + 1)
    root = check_spec(cache, spec)
    c = cache.family.contraction
    worst = -math.inf
    worst_c = -math.inf
    checked = 0
    for _, level in _levels(cache, spec, depth):
        for w, _ in level:
            t = transition(cache, spec, w)
            if not t.alive:
                continue
            residuals, _ = cache.children(w)
            nxt = math.fsum(float(p) * spec.scalar(r) for p, r in zip(t.probs, residuals))
            here = spec.scalar(cache.residual(w))
            worst = max(worst, nxt - here)
            worst_c = max(worst_c, nxt - c * here)
            checked += 1
    if checked == 0:
        worst = worst_c = 0.0
    if spec.kind == "residual_binary":
        worst_c = math.nan
    return SupermartingaleReport(float(worst), float(worst_c), checked, c, root)


@dataclass(frozen=True)
class EnergyBalance:
    """Root energy against expected dissipation and what is left at the final level.

    The expected limit energy is only known to lie in ``residual_interval``.
    """

    mode: str
    root: float
    level_expectations: tuple
    step_expectations: tuple
    total_dissipated: float
    final_expectation: float
    defect: float
    tail_defects: tuple
    max_tail_defect: float
    residual_interval: tuple


def energy_balance_report(cache, spec, depth, mode="exhaustive", n_samples=10_000, seed=0, threads=1):
    """Balance ``<x,R0 x> = sum_k E[A_k] + E[M_depth]`` and its tail versions at every level."""
    if spec.kind != "energy":
        raise InvalidMeasureError("energy balance needs the energy measure")
    if depth < 0:
        raise ValueError("depth must be nonnegative")
    if mode == "exhaustive":
        cache = _exhaustive(cache)
        cache.check_budget(depth)
        root = check_spec(cache, spec)
        levels, steps = [], []
        for n, level in _levels(cache, spec, depth):
            levels.append(math.fsum(p * cache.residual(w).energy(spec.x) for w, p in level))
            if n > 0:
                steps.append(math.fsum(p * cache.dissipation(w).energy(spec.x) for w, p in level))
    elif mode == "monte_carlo":
        root = check_spec(cache, spec)
        if depth == 0:
            levels, steps = [root], []
        else:
            samples = sample_branches(cache, spec, n_samples, depth, 0.0, seed, threads=threads)
            levels = _column_means(padded_values(samples, depth))
            steps = _column_means(padded_values(samples, depth, steps=True))
    else:
        raise ValueError(f"mode must be 'exhaustive' or 'monte_carlo', not {mode!r}")
    total = math.fsum(steps)
    final = levels[-1]
    tails = tuple(
        float(levels[n] - final - math.fsum(steps[n:])) for n in range(depth + 1)
    )
    return EnergyBalance(
        mode=mode,
        root=float(root),
        level_expectations=tuple(float(v) for v in levels),
        step_expectations=tuple(float(v) for v in steps),
        total_dissipated=float(total),
        final_expectation=float(final),
        defect=float(root - total - final),
        tail_defects=tails,
        max_tail_defect=float(max(abs(t) for t in tails)),
        residual_interval=(0.0, float(final)),
    )


@dataclass(frozen=True)
class ExtinctionStats:
    n_samples: int
    extinct: int
    extinct_fraction: float
    depth_histogram: dict
    rate_slope: float
    log_contraction: float
    levels_fitted: int


def extinction_stats(samples, stop_tol=None, contraction=None):
    """Fraction of branches whose final value is at most ``stop_tol`` times the root.

    ``rate_slope`` is the least-squares slope of ``log E[V_n]`` over the
    levels where the mean is resolvable (above ``1e3`` machine epsilons of
    the root); it is NaN when fewer than two levels qualify.
    """
    if not samples:
        raise EmptySampleSetError("no samples to summarize")
    if stop_tol is None:
        stop_tol = samples[0].stop_tol
    extinct = sum(1 for s in samples if s.final_value <= stop_tol * s.root_value)
    hist = {}
    for s in samples:
        hist[s.depth] = hist.get(s.depth, 0) + 1
    depth = max(s.depth for s in samples)
    means = np.array(_column_means(padded_values(samples, depth)))
    root = means[0]
    keep = np.nonzero(means > 1e3 * np.finfo(float).eps * root)[0]
    slope = math.nan
    if len(keep) >= 2 and root > 0:
        slope = float(np.polyfit(keep, np.log(means[keep]), 1)[0])
    if contraction is None:
        log_c = math.nan
    else:
        log_c = math.log(contraction) if contraction > 0 else -math.inf
    return ExtinctionStats(len(samples), extinct, extinct / len(samples), dict(sorted(hist.items())),
                           slope, log_c, int(len(keep)))


def write_levels_csv(path, stats):
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["n", "expectation", "bound", "std_error", "mode"])
        for s in stats:
            out.writerow([s.n, repr(s.expectation), repr(s.bound), repr(s.std_error), s.mode])


def write_samples_csv(path, samples):
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["sample", "word", "stopping_depth", "final_residual", "stopped_reason"])
        for s in samples:
            out.writerow([s.index, s.word, s.depth, repr(s.final_value), s.stopped_reason])
