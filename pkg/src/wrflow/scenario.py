"""Scenario configuration, instance generators and the experiment pipelines.

A scenario is a JSON document. :func:`resolve_config` fills in defaults and
pins every seed, so the resolved document alone reproduces a run.
"""

import copy
import hashlib
import json
import math
import os
import warnings

import numpy as np

from .errors import BlindDirectionWarning, InvalidConfigError, WRFlowError
from .frames import branch_atoms, frame_document, verify_frame
from .measures import MeasureSpec, check_spec
from .operators import (
    make_family,
    matrix_from_json,
    splitting_defect,
    validate_psd,
    vector_from_json,
)
from .sampler import (
    SUPERMARTINGALE_TOL,
    branch_defects,
    conditional_supermartingale_check,
    energy_balance_report,
    enumerate_level,
    expectation_profile,
    extinction_stats,
    profile_from_samples,
    sample_branch,
    sample_branches,
    write_levels_csv,
    write_samples_csv,
)
from .tree import TreeCache, level_size

DEFAULTS = {
    "stop_tol": 1e-12,
    "mode": {"type": "exhaustive"},
    "master_seed": 0,
    "retain_ops": True,
    "atom_tol": 1e-12,
    "budget": 2_000_000,
    "n_probes": 100,
    "frame_depth": None,
    "measure": {"kind": "energy", "x": "uniform", "dead_tol": 1e-14},
    "r0": {"type": "identity_on_subspace"},
}
CHECK_TOL = SUPERMARTINGALE_TOL
FRAME_TOL = 1e-6
DEFAULT_SAMPLES = 1000


def _int(value, name, minimum=None):
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        raise InvalidConfigError(f"{name} must be an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise InvalidConfigError(f"{name} must be at least {minimum}, got {value}")
    return int(value)


def _float(value, name, minimum=0.0):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise InvalidConfigError(f"{name} must be a number, got {value!r}")
    if not math.isfinite(value) or value < minimum:
        raise InvalidConfigError(f"{name} must be a finite number >= {minimum}, got {value}")
    return float(value)


def resolve_config(raw, seed=None, depth=None, mode=None, samples=None):
    """Validate a scenario document and return it with defaults and seeds filled in.

    Keyword arguments override the corresponding document fields.
    """
    if not isinstance(raw, dict):
        raise InvalidConfigError("a scenario must be a JSON object")
    cfg = copy.deepcopy(DEFAULTS)
    for key, value in raw.items():
        cfg[key] = copy.deepcopy(value)
    if seed is not None:
        cfg["master_seed"] = seed
    if depth is not None:
        cfg["depth"] = depth
    if mode is not None:
        cfg["mode"] = {"type": mode}
        if mode == "monte_carlo":
            prev = raw.get("mode", {})
            cfg["mode"]["n_samples"] = prev.get("n_samples", DEFAULT_SAMPLES) if isinstance(prev, dict) else DEFAULT_SAMPLES
    if samples is not None:
        if cfg["mode"].get("type") != "monte_carlo":
            cfg["mode"] = {"type": "monte_carlo"}
        cfg["mode"]["n_samples"] = samples

    known = set(DEFAULTS) | {"dim", "depth", "projections"}
    unknown = set(cfg) - known
    if unknown:
        raise InvalidConfigError(f"unknown config fields: {sorted(unknown)}")
    for field in ("dim", "depth", "projections"):
        if field not in cfg:
            raise InvalidConfigError(f"config is missing {field!r}")
    cfg["dim"] = _int(cfg["dim"], "dim", 1)
    cfg["depth"] = _int(cfg["depth"], "depth", 1)
    if cfg["frame_depth"] is None:
        cfg["frame_depth"] = cfg["depth"]
    cfg["frame_depth"] = _int(cfg["frame_depth"], "frame_depth", 1)
    cfg["master_seed"] = _int(cfg["master_seed"], "master_seed", 0)
    cfg["budget"] = _int(cfg["budget"], "budget", 1)
    cfg["n_probes"] = _int(cfg["n_probes"], "n_probes", 1)
    cfg["stop_tol"] = _float(cfg["stop_tol"], "stop_tol")
    cfg["atom_tol"] = _float(cfg["atom_tol"], "atom_tol")
    if not isinstance(cfg["retain_ops"], bool):
        raise InvalidConfigError("retain_ops must be true or false")

    m = cfg["mode"]
    if not isinstance(m, dict) or m.get("type") not in ("exhaustive", "monte_carlo"):
        raise InvalidConfigError("mode.type must be 'exhaustive' or 'monte_carlo'")
    if m["type"] == "monte_carlo":
        m["n_samples"] = _int(m.get("n_samples", DEFAULT_SAMPLES), "mode.n_samples", 1)
    elif set(m) != {"type"}:
        raise InvalidConfigError("exhaustive mode takes no further fields")

    seed0 = cfg["master_seed"]
    cfg["r0"] = _resolve_r0(cfg["r0"], seed0)
    cfg["projections"] = _resolve_projections(cfg["projections"], seed0)
    cfg["measure"] = _resolve_measure(cfg["measure"], seed0)
    return cfg


def _typed(doc, name, types):
    if not isinstance(doc, dict) or doc.get("type") not in types:
        raise InvalidConfigError(f"{name}.type must be one of {types}")
    return dict(doc)


def _resolve_r0(doc, seed):
    doc = _typed(doc, "r0", ("explicit", "identity_on_subspace", "random_psd"))
    if doc["type"] == "random_psd" or (doc["type"] == "identity_on_subspace" and "rank" in doc):
        doc.setdefault("seed", seed)
    if doc["type"] == "random_psd":
        doc.setdefault("trace", 1.0)
    return doc


def _resolve_projections(doc, seed):
    doc = _typed(doc, "projections",
                 ("explicit", "coordinate_split", "random_subspace_split", "random_unstructured"))
    if doc["type"] in ("random_subspace_split", "random_unstructured"):
        doc.setdefault("seed", seed)
    if doc["type"] == "random_unstructured":
        doc.setdefault("blind", 0)
    return doc


def _resolve_measure(doc, seed):
    if not isinstance(doc, dict):
        raise InvalidConfigError("measure must be an object")
    out = dict(DEFAULTS["measure"])
    out.update(doc)
    if out["kind"] == "trace":
        out.pop("x", None)
    elif isinstance(out.get("x"), dict):
        out["x"] = dict(out["x"])
        if "unit" not in out["x"]:
            out["x"].setdefault("seed", seed)
    return out


def _random_unitary(rng, d):
    z = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def _projector(cols):
    p = cols @ cols.conj().T
    return 0.5 * (p + p.conj().T)


def _build_r0(doc, d):
    kind = doc["type"]
    if kind == "explicit":
        mat = matrix_from_json(doc.get("matrix"))
        if mat.shape[0] != d:
            raise InvalidConfigError(f"r0 matrix has dim {mat.shape[0]}, config says {d}")
        return validate_psd(mat)
    if kind == "identity_on_subspace":
        if "basis" in doc:
            vecs = np.stack([vector_from_json(v) for v in doc["basis"]], axis=1)
            if vecs.shape[0] != d or np.linalg.matrix_rank(vecs) != vecs.shape[1]:
                raise InvalidConfigError("identity_on_subspace basis must be independent vectors of length dim")
            q, _ = np.linalg.qr(vecs)
            return validate_psd(_projector(q))
        if "rank" in doc:
            k = _int(doc["rank"], "r0.rank", 0)
            if k > d:
                raise InvalidConfigError("r0.rank exceeds dim")
            u = _random_unitary(np.random.default_rng(_int(doc["seed"], "r0.seed", 0)), d)
            return validate_psd(_projector(u[:, :k]))
        return validate_psd(np.eye(d))
    rng = np.random.default_rng(_int(doc["seed"], "r0.seed", 0))
    k = _int(doc.get("rank", d), "r0.rank", 0)
    if k > d:
        raise InvalidConfigError("r0.rank exceeds dim")
    g = rng.standard_normal((d, k)) + 1j * rng.standard_normal((d, k))
    r = g @ g.conj().T
    tr = float(np.trace(r).real)
    if tr > 0:
        r *= _float(doc["trace"], "r0.trace") / tr
    return validate_psd(0.5 * (r + r.conj().T))


def _build_projections(doc, d):
    kind = doc["type"]
    if kind == "explicit":
        mats = doc.get("matrices")
        if not isinstance(mats, list) or not mats:
            raise InvalidConfigError("explicit projections need a nonempty 'matrices' list")
        return [matrix_from_json(mat) for mat in mats]
    m = _int(doc.get("m"), "projections.m", 1)
    if kind == "coordinate_split":
        out = []
        for idx in np.array_split(np.arange(d), m):
            p = np.zeros((d, d), dtype=np.complex128)
            p[idx, idx] = 1.0
            out.append(p)
        return out
    rng = np.random.default_rng(_int(doc["seed"], "projections.seed", 0))
    if kind == "random_subspace_split":
        u = _random_unitary(rng, d)
        return [_projector(u[:, idx]) for idx in np.array_split(np.arange(d), m)]
    blind = _int(doc["blind"], "projections.blind", 0)
    seen = d - blind
    if seen < 1:
        raise InvalidConfigError("projections.blind must leave at least one coordinate")
    ranks = doc.get("ranks", 1)
    ranks = [ranks] * m if isinstance(ranks, int) else list(ranks)
    if len(ranks) != m:
        raise InvalidConfigError("projections.ranks must have m entries")
    out = []
    for r in ranks:
        r = _int(r, "projections.ranks", 0)
        if r > seen:
            raise InvalidConfigError("a projection rank exceeds the non-blind dimension")
        cols = np.zeros((d, r), dtype=np.complex128)
        cols[:seen] = _random_unitary(rng, seen)[:, :r]
        out.append(_projector(cols))
    return out


def _build_x(doc, d):
    x = doc
    if x == "uniform":
        return np.full(d, 1.0 / math.sqrt(d), dtype=np.complex128)
    if isinstance(x, dict):
        if "unit" in x:
            k = _int(x["unit"], "measure.x.unit", 1)
            if k > d:
                raise InvalidConfigError("measure.x.unit exceeds dim")
            out = np.zeros(d, dtype=np.complex128)
            out[k - 1] = 1.0
            return out
        rng = np.random.default_rng(_int(x["seed"], "measure.x.seed", 0))
        z = rng.standard_normal(d) + 1j * rng.standard_normal(d)
        return z / np.linalg.norm(z)
    vec = vector_from_json(x)
    if vec.shape != (d,):
        raise InvalidConfigError(f"measure.x has length {vec.shape[0]}, config says {d}")
    return vec


def _build_measure(doc, d):
    q = doc.get("q")
    return MeasureSpec(
        kind=doc["kind"],
        x=None if doc["kind"] == "trace" else _build_x(doc.get("x", "uniform"), d),
        q=None if q is None else np.asarray(q, dtype=float),
        dead_tol=_float(doc.get("dead_tol", 1e-14), "measure.dead_tol"),
    )


class Scenario:
    """A resolved config with its operator instance built."""

    def __init__(self, cfg):
        self.config = cfg
        d = cfg["dim"]
        try:
            self.root = _build_r0(cfg["r0"], d)
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always", BlindDirectionWarning)
                self.family = make_family(_build_projections(cfg["projections"], d), self.root)
            self.warnings = sorted({str(w.message) for w in caught})
            for w in caught:
                warnings.warn_explicit(w.message, w.category, w.filename, w.lineno)
            self.spec = _build_measure(cfg["measure"], d)
            self.cache = TreeCache(self.family, self.root, budget=cfg["budget"])
            self.root_scale = check_spec(self.cache, self.spec)
        except InvalidConfigError:
            raise
        except WRFlowError as exc:
            raise InvalidConfigError(f"{type(exc).__name__}: {exc}") from exc

    @property
    def depth(self):
        return self.config["depth"]

    def instance_report(self):
        fam = self.family
        return {
            "dim": fam.dim,
            "m": fam.m,
            "alpha": fam.alpha,
            "contraction": fam.contraction,
            "splitting": fam.splitting,
            "splitting_defect": splitting_defect(fam.projections, fam.h0_basis),
            "h0_rank": int(fam.h0_basis.shape[1]),
            "root_trace": self.root.trace,
            "root_scale": self.root_scale,
            "warnings": self.warnings,
        }


def generate_instance(cfg):
    """``(R0, family, report)`` for a resolved config."""
    sc = Scenario(cfg)
    return sc.root, sc.family, sc.instance_report()


def config_hash(command, cfg):
    blob = json.dumps({"command": command, "config": cfg}, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def _check(value, tol, ok=None):
    if ok is None:
        ok = value is not None and value <= tol
    return {"value": value, "tol": tol, "pass": bool(ok)}


def run_alpha(sc):
    fam = sc.family
    return {"checks": {"alpha_in_range": _check(fam.alpha, fam.m, 0.0 <= fam.alpha <= fam.m)}}, {}


def run_enumerate(sc):
    """Exhaustive profile, supermartingale check and (energy measure) balance."""
    cache = TreeCache(sc.family, sc.root, budget=sc.config["budget"], mode="exhaustive")
    depth = sc.depth
    cache.check_budget(depth + 1)
    root = sc.root_scale
    profile = expectation_profile(cache, sc.spec, depth)
    sm = conditional_supermartingale_check(cache, sc.spec, depth)
    weights = math.fsum(p for _, p, _ in enumerate_level(cache, sc.spec, depth))
    checks = {
        "contraction_every_level": _check(None, None, all(s.contraction_ok for s in profile)),
        "supermartingale": _check(sm.max_violation, CHECK_TOL * root),
        "level_weights_sum": _check(abs(weights - 1.0), 1e-10),
    }
    if sc.spec.kind != "residual_binary":
        checks["one_step_contraction"] = _check(sm.max_contraction_excess, CHECK_TOL * root)
    out = {
        "expectations": [s.expectation for s in profile],
        "bounds": [s.bound for s in profile],
        "supermartingale": {"max_violation": sm.max_violation,
                            "max_contraction_excess": sm.max_contraction_excess,
                            "nodes_checked": sm.nodes_checked},
    }
    if sc.spec.kind == "energy":
        bal = energy_balance_report(cache, sc.spec, depth)
        out["energy_balance"] = _balance_doc(bal)
        checks["energy_balance"] = _check(abs(bal.defect), CHECK_TOL * root)
        checks["tail_identity"] = _check(bal.max_tail_defect, CHECK_TOL * root)
    out["checks"] = checks
    return out, {"levels": profile}


def _balance_doc(bal):
    return {
        "root": bal.root,
        "total_dissipated": bal.total_dissipated,
        "final_expectation": bal.final_expectation,
        "defect": bal.defect,
        "max_tail_defect": bal.max_tail_defect,
        "residual_interval": list(bal.residual_interval),
    }


def run_simulate(sc, threads=1):
    """Monte Carlo branches with per-branch invariant checks and extinction statistics."""
    cfg = sc.config
    n = cfg["mode"].get("n_samples", DEFAULT_SAMPLES)
    samples = sample_branches(sc.cache, sc.spec, n, sc.depth, cfg["stop_tol"], cfg["master_seed"],
                              threads=threads)
    mono = tele = 0.0
    for s in samples:
        a, b = branch_defects(s)
        mono, tele = max(mono, a), max(tele, b)
    profile = profile_from_samples(samples, sc.depth, sc.family)
    ext = extinction_stats(samples, contraction=sc.family.contraction)
    out = {
        "n_samples": n,
        "expectations": [s.expectation for s in profile],
        "std_errors": [s.std_error for s in profile],
        "extinction": {
            "extinct": ext.extinct,
            "extinct_fraction": ext.extinct_fraction,
            "depth_histogram": {str(k): v for k, v in ext.depth_histogram.items()},
            "rate_slope": ext.rate_slope,
            "log_contraction": ext.log_contraction,
            "levels_fitted": ext.levels_fitted,
        },
        "stopped_reasons": _count(s.stopped_reason for s in samples),
        "checks": {
            "branch_monotone": _check(mono, CHECK_TOL),
            "branch_telescoping": _check(tele, CHECK_TOL),
            "contraction_every_level": _check(None, None, all(s.contraction_ok for s in profile)),
        },
    }
    return out, {"levels": profile, "samples": samples}


def _count(items):
    out = {}
    for item in items:
        out[item] = out.get(item, 0) + 1
    return dict(sorted(out.items()))


def run_frame(sc):
    """Atoms of branch 0, sampled to ``frame_depth`` with its dissipated operators retained.

    Extinction of the branch is a check only when alpha > 0; without leakage
    it is not expected and the residual term is carried instead.
    """
    cfg = sc.config
    branch = sample_branch(sc.cache, sc.spec, cfg["frame_depth"], cfg["stop_tol"],
                           cfg["master_seed"], retain_ops=True)
    system = branch_atoms(sc.cache, branch, cfg["atom_tol"])
    ver = verify_frame(system, cfg["n_probes"], cfg["master_seed"])
    doc = frame_document(system, sc.family.m, cfg["master_seed"], ver)
    doc["header"]["word"] = branch.word
    checks = {}
    if sc.family.alpha > 0:
        checks["extinct"] = _check(system.residual_trace_at_stop, system.stop_tol * sc.root.trace,
                                   system.extinct)
    loss = system.truncated_mass / sc.root.trace if sc.root.trace > 0 else 0.0
    tol = FRAME_TOL + loss
    if system.extinct:
        checks["parseval"] = _check(ver["max_parseval_defect"], tol)
        checks["frame_operator"] = _check(ver["frame_operator_defect"], tol)
        checks["span"] = _check(ver["span_defect"], FRAME_TOL)
    else:
        checks["frame_operator_with_residual"] = _check(ver["frame_operator_defect_with_residual"], tol)
    out = {"word": branch.word, "n_atoms": len(system.atoms), "extinct": system.extinct,
           "verification": ver, "checks": checks}
    return out, {"frame": doc}


def run_check(sc, threads=1):
    """Every pipeline that applies; exhaustive parts are skipped when over budget."""
    out = {"checks": {}}
    parts = {}
    sections = [("alpha", lambda: run_alpha(sc))]
    if level_size(sc.family.m, sc.depth + 1) <= sc.config["budget"]:
        sections.append(("enumerate", lambda: run_enumerate(sc)))
    else:
        out["skipped"] = ["enumerate"]
    sections.append(("simulate", lambda: run_simulate(sc, threads)))
    sections.append(("frame", lambda: run_frame(sc)))
    for name, fn in sections:
        res, files = fn()
        for key, val in res.pop("checks").items():
            out["checks"][f"{name}.{key}"] = val
        out[name] = res
        for key, val in files.items():
            parts.setdefault(key, val)
    return out, parts


def _clean(obj):
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating,)):
        return _clean(float(obj))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dump_json(obj, path):
    with open(path, "w") as fh:
        json.dump(_clean(obj), fh, sort_keys=True, indent=2, allow_nan=False)
        fh.write("\n")


COMMANDS = {
    "alpha": lambda sc, threads: run_alpha(sc),
    "enumerate": lambda sc, threads: run_enumerate(sc),
    "simulate": run_simulate,
    "frame": lambda sc, threads: run_frame(sc),
    "check": run_check,
}


def run_scenario(command, cfg, out_dir, threads=1):
    """Run one subcommand on a resolved config and write its report directory.

    Returns ``(run_dir, summary)``; ``summary["passed"]`` is true iff every
    enabled check passed.
    """
    if command not in COMMANDS:
        raise InvalidConfigError(f"unknown command {command!r}")
    sc = Scenario(cfg)
    try:
        result, files = COMMANDS[command](sc, threads)
    except WRFlowError as exc:
        # same type, so callers can still catch e.g. BudgetExceededError
        raise type(exc)(f"{command} on config {config_hash(command, cfg)}: {exc}") from exc
    summary = {
        "command": command,
        "config": cfg,
        "instance": sc.instance_report(),
        "result": result if command != "check" else {k: v for k, v in result.items() if k != "checks"},
        "checks": result["checks"],
        "passed": all(c["pass"] for c in result["checks"].values()),
    }
    run_dir = os.path.join(out_dir, f"{command}-{config_hash(command, cfg)}")
    os.makedirs(run_dir, exist_ok=True)
    dump_json(cfg, os.path.join(run_dir, "config.json"))
    dump_json(summary, os.path.join(run_dir, "summary.json"))
    if "levels" in files:
        write_levels_csv(os.path.join(run_dir, "levels.csv"), files["levels"])
    if "samples" in files:
        write_samples_csv(os.path.join(run_dir, "samples.csv"), files["samples"])
    if "frame" in files:
        dump_json(files["frame"], os.path.join(run_dir, "frame.json"))
    return run_dir, summary


__all__ = [
    "Scenario",
    "config_hash",
    "generate_instance",
    "resolve_config",
    "run_scenario",
]
