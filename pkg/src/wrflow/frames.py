"""Rank-one atoms of the dissipated operators along a branch, and frame checks.

Each ``Delta_k`` splits spectrally into atoms ``phi = sqrt(lambda) u``. Along
an extinct branch the atoms form a frame whose frame operator is ``R0``.
"""

from dataclasses import dataclass
import warnings

import numpy as np

from .errors import (
    BranchNotExtinctError,
    DimensionMismatchError,
    OperatorsNotRetainedError,
    ZeroOperatorWarning,
)
from .operators import RANK_TOL, PsdOperator, energy_support_basis, validate_psd, vector_to_json
from .tree import format_word

ATOM_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class FrameAtom:
    vector: np.ndarray
    step: int
    rank_index: int
    eigenvalue: float
    source_word: tuple


def _fix_phase(u):
    i = int(np.argmax(np.abs(u)))
    return u * (np.conj(u[i]) / abs(u[i]))


def _atoms(Delta, step, word, threshold):
    w, v = np.linalg.eigh(Delta.matrix)
    order = np.argsort(w, kind="stable")[::-1]
    atoms = []
    lost = 0.0
    for i in order:
        lam = float(w[i])
        if lam > threshold:
            u = _fix_phase(v[:, i])
            vec = np.sqrt(lam) * u
            vec.flags.writeable = False
            atoms.append(FrameAtom(vec, step, len(atoms) + 1, lam, tuple(word)))
        elif lam > 0.0:
            lost += lam
    return atoms, lost


def extract_atoms(Delta, step, word=(), atom_tol=ATOM_TOL, reference_trace=None):
    """Atoms of one dissipated operator, largest eigenvalue first.

    Eigenvalues at or below ``atom_tol * reference_trace`` (default: the trace
    of ``Delta``) are dropped. Eigenvector phases are fixed so the
    largest-magnitude component is real and positive.
    """
    if not isinstance(Delta, PsdOperator):
        Delta = validate_psd(Delta)
    ref = Delta.trace if reference_trace is None else reference_trace
    return _atoms(Delta, step, word, atom_tol * ref)[0]


@dataclass(frozen=True, eq=False)
class AtomSystem:
    """All atoms of one branch plus what is needed to audit them."""

    atoms: tuple
    branch: object
    root: PsdOperator
    final_residual: np.ndarray
    residual_trace_at_stop: float
    atom_tol: float
    truncated_mass: float
    stop_tol: float
    extinct: bool

    @property
    def dim(self):
        return self.root.dim

    def vectors(self):
        """Atoms as the columns of a ``(d, N)`` array."""
        if not self.atoms:
            return np.zeros((self.dim, 0), dtype=np.complex128)
        return np.stack([a.vector for a in self.atoms], axis=1)


def branch_atoms(cache, branch, atom_tol=ATOM_TOL, stop_tol=None):
    """Atoms of every ``Delta_k`` on a branch sampled with ``retain_ops=True``.

    The system counts as extinct when the residual trace at the stop is at
    most ``stop_tol`` (default: the branch's own) times ``tr R0``.
    """
    if branch.ops is None:
        raise OperatorsNotRetainedError("sample the branch with retain_ops=True")
    root = cache.root
    threshold = atom_tol * root.trace
    atoms, lost = [], 0.0
    for k in range(branch.depth):
        found, dropped = _atoms(PsdOperator(branch.ops[k]), k + 1, branch.letters[: k + 1], threshold)
        atoms.extend(found)
        lost += dropped
    final = np.asarray(branch.final_residual)
    residual_trace = float(np.trace(final).real)
    if stop_tol is None:
        stop_tol = branch.stop_tol
    return AtomSystem(
        atoms=tuple(atoms),
        branch=branch,
        root=root,
        final_residual=final,
        residual_trace_at_stop=residual_trace,
        atom_tol=atom_tol,
        truncated_mass=lost,
        stop_tol=stop_tol,
        extinct=residual_trace <= stop_tol * root.trace,
    )


def parseval_defect(system, x):
    """Gap in ``sum |<x, phi>|^2 (+ <x, R_stop x>) = <x, R0 x>``.

    The residual term is included only when the branch is not extinct.
    """
    x = np.asarray(x, dtype=np.complex128)
    if x.shape != (system.dim,):
        raise DimensionMismatchError(f"probe of length {x.shape} for dim {system.dim}")
    coeffs = system.vectors().conj().T @ x
    total = float(np.sum(coeffs.real ** 2 + coeffs.imag ** 2))
    if not system.extinct:
        total += float(np.vdot(x, system.final_residual @ x).real)
    return abs(total - system.root.energy(x))


def frame_operator(system):
    """``S = sum |phi><phi|``."""
    v = system.vectors()
    s = v @ v.conj().T
    return PsdOperator(0.5 * (s + s.conj().T))


def _gap(qa, qb):
    if qa.shape[1] != qb.shape[1]:
        return 1.0
    if qa.shape[1] == 0:
        return 0.0
    left = qb - qa @ (qa.conj().T @ qb)
    right = qa - qb @ (qb.conj().T @ qa)
    return min(1.0, max(np.linalg.norm(left, 2), np.linalg.norm(right, 2)))


def span_defect(system, h0=None, rank_tol=RANK_TOL):
    """Largest principal angle (radians) between the atoms' span and ``h0``.

    ``h0`` defaults to the energy support of ``R0``. Only extinct systems can
    be certified; others raise ``BranchNotExtinctError``.
    """
    if not system.extinct:
        raise BranchNotExtinctError(
            f"residual trace {system.residual_trace_at_stop:.3e} is above the stopping tolerance"
        )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ZeroOperatorWarning)
        if h0 is None:
            h0 = energy_support_basis(system.root, rank_tol)
        span = energy_support_basis(frame_operator(system), rank_tol)
    return float(np.arcsin(_gap(np.asarray(h0, dtype=np.complex128), span)))


def probe_vectors(n, dim, seed):
    """``n`` random complex unit vectors as rows."""
    rng = np.random.Generator(np.random.Philox(key=seed, counter=[0, 0, 1, 0]))
    z = rng.standard_normal((n, dim)) + 1j * rng.standard_normal((n, dim))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def verify_frame(system, n_probes=100, seed=0):
    """Defects of an atom system relative to the size of ``R0``.

    The Parseval defect of unit probes is divided by the operator norm of
    ``R0``, the frame-operator defects by its Frobenius norm.
    """
    probes = probe_vectors(n_probes, system.dim, seed)
    top = float(np.linalg.eigvalsh(system.root.matrix)[-1])
    top = top if top > 0 else 1.0
    rel = [parseval_defect(system, x) / top for x in probes]
    S = frame_operator(system).matrix
    root_norm = np.linalg.norm(system.root.matrix)
    scale = root_norm if root_norm > 0 else 1.0
    pure = float(np.linalg.norm(S - system.root.matrix)) / scale
    with_res = float(np.linalg.norm(S + system.final_residual - system.root.matrix)) / scale
    return {
        "max_parseval_defect": float(max(rel, default=0.0)),
        "frame_operator_defect": pure,
        "frame_operator_defect_with_residual": with_res,
        "span_defect": span_defect(system) if system.extinct else None,
        "n_probes": n_probes,
        "truncated_mass": system.truncated_mass,
    }


def frame_document(system, m, seed, verification):
    """The JSON export of one atom system."""
    return {
        "header": {
            "dim": system.dim,
            "m": m,
            "seed": seed,
            "residual_trace_at_stop": system.residual_trace_at_stop,
            "atom_tol": system.atom_tol,
            "extinct": system.extinct,
            "n_atoms": len(system.atoms),
        },
        "atoms": [
            {
                "k": a.step,
                "r": a.rank_index,
                "lambda": a.eigenvalue,
                "vector": vector_to_json(a.vector),
                "source_word": format_word(a.source_word, m),
            }
            for a in system.atoms
        ],
        "verification": verification,
    }
