"""Path measures on the residual tree: transitions, cylinder weights, dead nodes.

Three kinds are supported:

``energy``
    transitions proportional to ``<x, D_wj x>``;
``trace``
    transitions proportional to ``tr D_wj``;
``residual_binary``
    two letters under the splitting condition, transitions
    ``<x, R_wj x> / <x, R_w x>`` and cylinder weight ``<x, R_w x> / <x, R_0 x>``.

A node whose raw weights sum to at most ``dead_tol`` times the root scale is
dead and continues with the fallback vector ``q``.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatchError, InvalidMeasureError, ResidualKindNotBinaryError
from .tree import check_word

KINDS = ("energy", "trace", "residual_binary")
DEAD_TOL = 1e-14


@dataclass(frozen=True, eq=False)
class MeasureSpec:
    """Which measure to use, the probe vector ``x`` and the dead-node fallback ``q``."""

    kind: str
    x: np.ndarray = None
    q: np.ndarray = None
    dead_tol: float = DEAD_TOL

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidMeasureError(f"kind must be one of {KINDS}, not {self.kind!r}")
        if self.kind != "trace":
            if self.x is None:
                raise InvalidMeasureError(f"{self.kind} measure needs a vector x")
            x = np.array(self.x, dtype=np.complex128)
            if x.ndim != 1:
                raise InvalidMeasureError("x must be a vector")
            x.flags.writeable = False
            object.__setattr__(self, "x", x)
        if self.q is not None:
            q = np.array(self.q, dtype=np.float64)
            if q.ndim != 1 or np.any(q < 0) or abs(q.sum() - 1.0) > 1e-12:
                raise InvalidMeasureError("q must be a probability vector")
            q.flags.writeable = False
            object.__setattr__(self, "q", q)
        if not self.dead_tol >= 0:
            raise InvalidMeasureError("dead_tol must be nonnegative")

    def fallback(self, m):
        if self.q is None:
            return np.full(m, 1.0 / m)
        if self.q.shape != (m,):
            raise DimensionMismatchError(f"q has length {self.q.shape[0]}, alphabet has {m} letters")
        return self.q

    def scalar(self, op):
        """The per-node value tracked by this measure: ``<x, R x>`` or ``tr R``."""
        return op.trace if self.kind == "trace" else op.energy(self.x)


@dataclass(frozen=True)
class TransitionDist:
    probs: np.ndarray
    alive: bool
    raw_weights: np.ndarray = field(repr=False)


def root_scale(cache, spec):
    """The value of the measure's scalar at the root."""
    return spec.scalar(cache.root)


def check_spec(cache, spec):
    """Validate ``spec`` against the cache's family and root; returns the root scale."""
    seen = cache.validated_specs.get(id(spec))
    if seen is not None and seen[0] is spec:
        return seen[1]
    scale = _check_spec(cache, spec)
    cache.validated_specs[id(spec)] = (spec, scale)
    return scale


def _check_spec(cache, spec):
    m, d = cache.m, cache.family.dim
    spec.fallback(m)
    if spec.kind == "trace":
        return cache.root.trace
    if spec.x.shape != (d,):
        raise DimensionMismatchError(f"x has length {spec.x.shape[0]}, operators have dim {d}")
    scale = cache.root.energy(spec.x)
    top = float(np.linalg.eigvalsh(cache.root.matrix)[-1])
    if not scale > spec.dead_tol * float(np.vdot(spec.x, spec.x).real) * top:
        raise InvalidMeasureError("x carries no energy at the root: <x, R0 x> is zero")
    if spec.kind == "residual_binary" and (m != 2 or not cache.family.splitting):
        raise ResidualKindNotBinaryError(
            "the residual measure needs exactly two projections that split the energy support"
        )
    return scale


def transition(cache, spec, w):
    """Transition distribution out of node ``w``."""
    scale = check_spec(cache, spec)
    w = check_word(w, cache.m)
    residuals, dissipations = cache.children(w)
    if spec.kind == "trace":
        raw = np.array([D.trace for D in dissipations])
    elif spec.kind == "energy":
        raw = np.array([D.energy(spec.x) for D in dissipations])
    else:
        raw = np.array([R.energy(spec.x) for R in residuals])
    raw = np.maximum(raw, 0.0)
    if spec.kind == "residual_binary":
        denom = cache.residual(w).energy(spec.x)
    else:
        denom = float(raw.sum())
    alive = denom > spec.dead_tol * scale
    if alive:
        probs = raw / raw.sum()
    else:
        probs = spec.fallback(cache.m).copy()
    probs.flags.writeable = False
    raw.flags.writeable = False
    return TransitionDist(probs, bool(alive), raw)


def is_dead(cache, spec, w):
    return not transition(cache, spec, w).alive


def cylinder_weight(cache, spec, w):
    """Measure of the set of branches that start with ``w``."""
    scale = check_spec(cache, spec)
    w = check_word(w, cache.m)
    if spec.kind == "residual_binary":
        return cache.residual(w).energy(spec.x) / scale
    weight = 1.0
    for k in range(len(w)):
        weight *= transition(cache, spec, w[:k]).probs[w[k] - 1]
        if weight == 0.0:
            break
    return float(weight)
