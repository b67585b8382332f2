"""Acceptance criteria 1-13.

Every test carries a ``criterion`` marker; the terminal summary prints one
PASS/FAIL line per criterion with the measured worst-case values.
"""

import json
import math
import os
import warnings

import numpy as np
import pytest
import scipy.linalg

from instances import (
    build,
    c2_example,
    projector,
    random_projection,
    random_psd,
    random_split,
    random_unit,
    random_unitary,
)
from wrflow import (
    BlindDirectionWarning,
    MeasureSpec,
    TreeCache,
    branch_atoms,
    branch_telescoping_defect,
    child_dissipations,
    conditional_supermartingale_check,
    cylinder_weight,
    dissipated,
    energy_balance_report,
    expectation_profile,
    frame_operator,
    make_family,
    node_residual,
    parseval_defect,
    sample_branch,
    sample_branches,
    span_defect,
    transition,
    validate_psd,
    wr_update,
)
from wrflow.cli import main
from wrflow.frames import probe_vectors

CONFIGS = os.path.join(os.path.dirname(__file__), os.pardir, "configs")
THREADS = 4


def criterion(n, title):
    return pytest.mark.criterion(n, title)


def words(m, n):
    if n == 0:
        yield ()
        return
    for w in words(m, n - 1):
        for j in range(1, m + 1):
            yield w + (j,)


def small_instances(count, seed, d_max=8, m_max=3):
    """Random exhaustively solvable instances, split and unstructured."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        d = int(rng.integers(2, d_max + 1))
        m = int(rng.integers(2, m_max + 1))
        rank = int(rng.integers(1, d + 1))
        root, fam, _ = build(rng, d, m, split=bool(i % 2), rank=rank)
        out.append((root, fam, random_unit(rng, d)))
    return out


@criterion(1, "one-step algebra")
def test_ac01_one_step_algebra(record_property):
    rng = np.random.default_rng(101)
    worst_tele = worst_psd = worst_oracle = 0.0
    for _ in range(200):
        d = int(rng.integers(1, 17))
        r = random_psd(rng, d, int(rng.integers(1, d + 1))) * 10.0 ** rng.uniform(-3, 3)
        P = random_projection(rng, d, int(rng.integers(0, d + 1)))
        R = validate_psd(r)
        new, diss = wr_update(R, P), dissipated(R, P)
        fro, op = np.linalg.norm(R.matrix), np.linalg.norm(R.matrix, 2)
        worst_tele = max(worst_tele, np.linalg.norm(R.matrix - new.matrix - diss.matrix) / fro)
        worst_psd = max(worst_psd, -np.linalg.eigvalsh(new.matrix)[0] / op)
        # independent oracle: scipy's Schur-based square root in the defining product
        s = scipy.linalg.sqrtm(r)
        worst_oracle = max(worst_oracle, np.linalg.norm(new.matrix - s @ (np.eye(d) - P) @ s) / fro)
    record_property("detail", f"telescoping {worst_tele:.1e}, -eigmin {worst_psd:.1e}, vs sqrtm {worst_oracle:.1e}")
    assert worst_tele <= 1e-10
    assert worst_psd <= 1e-10
    assert worst_oracle <= 1e-6


@criterion(2, "pathwise telescoping at depth 50")
def test_ac02_pathwise_telescoping(record_property):
    rng = np.random.default_rng(102)
    worst = 0.0
    for i in range(30):
        d = int(rng.integers(2, 17))
        m = int(rng.integers(2, 5))
        root, _, cache = build(rng, d, m, split=bool(i % 2))
        word = tuple(int(j) for j in rng.integers(1, m + 1, size=50))
        worst = max(worst, branch_telescoping_defect(cache, word) / np.linalg.norm(root.matrix))
    record_property("detail", f"max relative defect {worst:.1e} over 30 branches")
    assert worst <= 1e-8


def _additivity_gap(cache, spec, depth):
    """Worst |nu[w] - sum_j nu[wj]| over all nodes above ``depth``, weights multiplied down the tree."""
    worst = 0.0
    level = [((), 1.0)]
    for _ in range(depth):
        nxt = []
        for w, p in level:
            probs = transition(cache, spec, w).probs
            kids = [p * float(q) for q in probs]
            worst = max(worst, abs(p - math.fsum(kids)))
            nxt.extend((w + (j + 1,), k) for j, k in enumerate(kids))
        level = nxt
    return worst


@criterion(3, "cylinder consistency")
@pytest.mark.parametrize("m, depth", [(2, 8), (3, 7)])
def test_ac03_cylinder_consistency(record_property, m, depth):
    rng = np.random.default_rng(103 + m)
    worst = 0.0
    for split in (True, False):
        _, _, cache = build(rng, 4, m, split=split, rank=3, mode="exhaustive")
        for spec in (MeasureSpec("energy", random_unit(rng, 4)), MeasureSpec("trace")):
            worst = max(worst, _additivity_gap(cache, spec, depth))
    record_property("detail", f"m={m} depth {depth}: {worst:.1e}")
    assert worst <= 1e-12


@criterion(4, "binary conjugacy")
def test_ac04_binary_conjugacy(record_property):
    rng = np.random.default_rng(104)
    worst_op = worst_mu = 0.0
    for d in (3, 5):
        root, fam, cache = build(rng, d, 2, mode="exhaustive")
        assert fam.splitting
        x = random_unit(rng, d)
        mu = MeasureSpec("residual_binary", x)
        fro = np.linalg.norm(root.matrix)
        for n in range(8):
            for w in words(2, n):
                gap = node_residual(cache, w + (1,)).matrix - child_dissipations(cache, w)[1].matrix
                worst_op = max(worst_op, np.linalg.norm(gap) / fro)
                here = cylinder_weight(cache, mu, w)
                kids = cylinder_weight(cache, mu, w + (1,)) + cylinder_weight(cache, mu, w + (2,))
                worst_mu = max(worst_mu, abs(here - kids))
    record_property("detail", f"operator gap {worst_op:.1e}, mu additivity {worst_mu:.1e}")
    assert worst_op <= 1e-12
    assert worst_mu <= 1e-12


@pytest.fixture(scope="module")
def fifty_instances():
    return small_instances(50, 105)


@criterion(5, "conditional supermartingale")
def test_ac05_supermartingale(record_property, fifty_instances):
    worst = 0.0
    for root, fam, x in fifty_instances:
        cache = TreeCache(fam, root, mode="exhaustive")
        for spec in (MeasureSpec("energy", x), MeasureSpec("trace")):
            rep = conditional_supermartingale_check(cache, spec, 6)
            worst = max(worst, rep.max_violation / rep.root)
    record_property("detail", f"max violation / root {worst:.1e} over 50 instances x 2 kinds")
    assert worst <= 1e-10


@criterion(6, "contraction rate")
def test_ac06_contraction_rate(record_property, fifty_instances):
    worst = -math.inf
    for root, fam, x in fifty_instances:
        cache = TreeCache(fam, root, mode="exhaustive")
        for spec in (MeasureSpec("energy", x), MeasureSpec("trace")):
            means = [s.expectation for s in expectation_profile(cache, spec, 6)]
            for a, b in zip(means, means[1:]):
                worst = max(worst, b - fam.contraction * a)
    record_property("detail", f"max E[M_n+1] - c E[M_n] = {worst:.1e}")
    assert worst <= 1e-10


@criterion(6, "contraction rate")
def test_ac06_c2_profile(record_property):
    root, fam, x = c2_example()
    means = [s.expectation for s in expectation_profile(TreeCache(fam, root), MeasureSpec("energy", x), 2)]
    # hand computation: R_1 = diag(0, 1), R_12 = 0, so the levels are 1, 1/2, 0
    gap = max(abs(a - b) for a, b in zip(means, [1.0, 0.5, 0.0]))
    record_property("detail", f"C2 profile gap {gap:.1e}")
    assert gap <= 1e-12


@criterion(7, "splitting rate corollary")
@pytest.mark.parametrize("d, m", [(4, 2), (6, 2), (3, 3), (5, 3)])
def test_ac07_splitting_rate(record_property, d, m):
    rng = np.random.default_rng(107 + d * m)
    root = validate_psd(np.eye(d))
    fam = make_family(random_split(rng, d, m), root)
    cache = TreeCache(fam, root, mode="exhaustive")
    prof = expectation_profile(cache, MeasureSpec("trace"), 10)
    worst = max(s.expectation - (1 - 1 / m) ** s.n * d for s in prof)
    record_property("detail", f"d={d} m={m}: max E[T_n] - bound {worst:.1e}")
    assert worst <= 1e-8


@criterion(8, "energy balance")
def test_ac08_energy_balance(record_property):
    worst = worst_tail = 0.0
    for root, fam, x in small_instances(15, 108):
        cache = TreeCache(fam, root, mode="exhaustive")
        depth = 8 if fam.m == 2 else 6
        bal = energy_balance_report(cache, MeasureSpec("energy", x), depth)
        worst = max(worst, abs(bal.defect) / bal.root)
        worst_tail = max(worst_tail, bal.max_tail_defect / bal.root)
    record_property("detail", f"defect {worst:.1e}, tail {worst_tail:.1e} (relative)")
    assert worst <= 1e-10
    assert worst_tail <= 1e-10


@criterion(9, "extinction within depth 40m")
@pytest.mark.parametrize("d, m", [(4, 2), (6, 3)])
@pytest.mark.parametrize("kind", ["energy", "trace"])
def test_ac09_extinction(record_property, d, m, kind):
    rng = np.random.default_rng(109 + d)
    root = validate_psd(random_psd(rng, d, trace=1.0))
    fam = make_family(random_split(rng, d, m), root)
    assert fam.alpha == pytest.approx(1.0, abs=1e-10)
    spec = MeasureSpec(kind, random_unit(rng, d) if kind == "energy" else None)
    depth = math.ceil(40 * m)
    samples = sample_branches(TreeCache(fam, root), spec, 10_000, depth, stop_tol=1e-10, seed=9,
                              threads=THREADS)
    extinct = sum(s.stopped_reason == "residual_below_tol" for s in samples)
    deepest = max(s.depth for s in samples)
    record_property("detail", f"{kind} d={d} m={m}: {extinct}/10000 extinct, deepest {deepest}/{depth}")
    assert extinct == 10_000
    assert all(s.final_value <= 1e-10 * s.root_value for s in samples)


@criterion(9, "extinction within depth 40m")
def test_ac09_blind_direction_never_extinct(record_property):
    d = 4
    rng = np.random.default_rng(1090)
    root = validate_psd(np.eye(d))
    cols = np.zeros((d, d - 1), dtype=complex)
    cols[: d - 1] = random_unitary(rng, d - 1)
    projs = [projector(cols[:, :2]), projector(cols[:, 2:])]
    with pytest.warns(BlindDirectionWarning):
        fam = make_family(projs, root)
    assert fam.alpha == 0.0
    x = np.zeros(d)
    x[-1] = 1.0
    samples = sample_branches(TreeCache(fam, root), MeasureSpec("energy", x), 10_000, 80,
                              stop_tol=1e-10, seed=9, threads=THREADS)
    extinct = sum(s.stopped_reason == "residual_below_tol" for s in samples)
    record_property("detail", f"blind direction: {extinct}/10000 extinct")
    assert extinct == 0


def _frame_instance(rng, i):
    d = int(rng.integers(2, 9))
    m = int(rng.integers(2, 5))
    root = validate_psd(random_psd(rng, d, int(rng.integers(1, d + 1)), trace=1.0))
    while True:
        projs = random_split(rng, d, m) if i % 2 else [
            random_projection(rng, d, int(rng.integers(1, d + 1))) for _ in range(m)]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", BlindDirectionWarning)
            fam = make_family(projs, root)
        if fam.alpha >= 0.05:
            return root, fam


@criterion(10, "Parseval reconstruction")
def test_ac10_parseval_reconstruction(record_property):
    rng = np.random.default_rng(110)
    worst_s = worst_p = 0.0
    for i in range(20):
        root, fam = _frame_instance(rng, i)
        cache = TreeCache(fam, root)
        branch = sample_branch(cache, MeasureSpec("trace"), 20_000, stop_tol=1e-10, seed=i, retain_ops=True)
        system = branch_atoms(cache, branch)
        assert system.extinct
        S = frame_operator(system).matrix
        worst_s = max(worst_s, np.linalg.norm(S - root.matrix) / np.linalg.norm(root.matrix))
        worst_p = max(worst_p, max(parseval_defect(system, x) for x in probe_vectors(100, root.dim, i)))
    record_property("detail", f"frame operator {worst_s:.1e}, Parseval {worst_p:.1e} over 20 instances")
    assert worst_s <= 1e-6
    assert worst_p <= 1e-6


@criterion(11, "Parseval frame for a subspace")
def test_ac11_subspace_frame(record_property):
    rng = np.random.default_rng(111)
    basis = random_unitary(rng, 8)[:, :3]
    root = validate_psd(projector(basis))
    fam = make_family(random_split(rng, 8, 3), root)
    cache = TreeCache(fam, root)
    branch = sample_branch(cache, MeasureSpec("trace"), 2_000, stop_tol=1e-12, seed=11, retain_ops=True)
    system = branch_atoms(cache, branch)
    assert system.extinct
    vecs = system.vectors()
    worst = 0.0
    for _ in range(100):
        x = basis @ random_unit(rng, 3)
        worst = max(worst, abs(float(np.sum(np.abs(vecs.conj().T @ x) ** 2)) - 1.0))
    angle = span_defect(system, h0=basis)
    record_property("detail", f"{vecs.shape[1]} atoms, Parseval {worst:.1e}, span angle {angle:.1e}")
    assert worst <= 1e-6
    assert angle <= 1e-6


def _mc_cases():
    rng = np.random.default_rng(112)
    root, fam, x = c2_example()
    cases = [("C2 energy", root, fam, MeasureSpec("energy", x), 2)]
    for d, m, kind, depth in [(4, 2, "energy", 6), (3, 3, "trace", 5), (5, 2, "residual_binary", 6),
                              (4, 3, "energy", 5)]:
        root, fam, _ = build(rng, d, m, split=kind == "residual_binary" or d % 2 == 0)
        spec = MeasureSpec(kind, None if kind == "trace" else random_unit(rng, d))
        cases.append((f"d={d} m={m} {kind}", root, fam, spec, depth))
    return cases


@criterion(12, "Monte Carlo vs exhaustive oracle")
@pytest.mark.parametrize("case", _mc_cases(), ids=lambda c: c[0])
def test_ac12_monte_carlo_vs_exhaustive(record_property, case):
    name, root, fam, spec, depth = case
    exact = expectation_profile(TreeCache(fam, root, mode="exhaustive"), spec, depth)
    mc = expectation_profile(TreeCache(fam, root), spec, depth, mode="monte_carlo",
                             n_samples=100_000, seed=12, threads=THREADS)
    scale = exact[0].expectation
    used = [abs(a.expectation - b.expectation) / (4 * b.std_error + 1e-12 * scale) for a, b in zip(exact, mc)]
    record_property("detail", f"{name}: worst |gap| / (4 SE + 1e-12 root) = {max(used):.2f}")
    ok = [u <= 1.0 for u in used]
    assert all(ok)


def _run_tree(path):
    out = {}
    for dirpath, _, files in os.walk(path):
        for f in files:
            full = os.path.join(dirpath, f)
            with open(full, "rb") as fh:
                out[os.path.relpath(full, path)] = fh.read()
    return out


@criterion(13, "determinism across thread counts")
@pytest.mark.parametrize("command, config", [
    ("check", "splitting_d6_m3.json"),
    ("simulate", "blind_direction.json"),
    ("check", "c2_worked_example.json"),
    ("frame", "frame_subspace_c8.json"),
])
def test_ac13_threads_do_not_change_outputs(record_property, tmp_path, command, config):
    path = os.path.join(CONFIGS, config)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", BlindDirectionWarning)
        codes = [main([command, "--config", path, "--out", str(tmp_path / f"t{t}"), "--threads", str(t)])
                 for t in (1, 4)]
    one, four = _run_tree(tmp_path / "t1"), _run_tree(tmp_path / "t4")
    assert codes == [0, 0]
    assert one.keys() == four.keys() and one
    same = [k for k in one if one[k] == four[k]]
    record_property("detail", f"{command} {config}: {len(same)}/{len(one)} files identical")
    assert len(same) == len(one)
    summary = json.loads(next(v for k, v in one.items() if k.endswith("summary.json")))
    assert summary["passed"]
