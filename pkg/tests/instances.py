"""Random instance builders shared by the test modules."""

import warnings

import numpy as np

from wrflow import BlindDirectionWarning, MeasureSpec, TreeCache, make_family, validate_psd


def random_unitary(rng, d):
    z = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def random_psd(rng, d, rank=None, trace=None):
    rank = d if rank is None else rank
    g = rng.standard_normal((d, rank)) + 1j * rng.standard_normal((d, rank))
    r = g @ g.conj().T
    if trace is not None:
        r *= trace / np.trace(r).real
    return 0.5 * (r + r.conj().T)


def projector(cols):
    p = cols @ cols.conj().T
    return 0.5 * (p + p.conj().T)


def random_projection(rng, d, rank):
    return projector(random_unitary(rng, d)[:, :rank])


def random_split(rng, d, m):
    """m projections onto blocks of a random orthonormal basis; they sum to I."""
    u = random_unitary(rng, d)
    return [projector(u[:, idx]) for idx in np.array_split(np.arange(d), m)]


def random_unit(rng, d):
    z = rng.standard_normal(d) + 1j * rng.standard_normal(d)
    return z / np.linalg.norm(z)


def coordinate_projections(d):
    out = []
    for i in range(d):
        p = np.zeros((d, d))
        p[i, i] = 1.0
        out.append(p)
    return out


def c2_example():
    """R0 = I on C^2, coordinate projections, x = (1, 1)/sqrt 2."""
    root = validate_psd(np.eye(2))
    fam = make_family(coordinate_projections(2), root)
    x = np.ones(2) / np.sqrt(2)
    return root, fam, x


def build(rng, d, m, split=True, rank=None, mode="path"):
    """A random root, family and tree cache."""
    root = validate_psd(random_psd(rng, d, rank, trace=1.0))
    projs = random_split(rng, d, m) if split else [
        random_projection(rng, d, int(rng.integers(1, d + 1))) for _ in range(m)
    ]
    with warnings.catch_warnings():
        # unstructured families may legitimately miss a direction
        warnings.simplefilter("ignore", BlindDirectionWarning)
        fam = make_family(projs, root)
    return root, fam, TreeCache(fam, root, mode=mode)


def energy_spec(rng, d):
    return MeasureSpec("energy", random_unit(rng, d))
