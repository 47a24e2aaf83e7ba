"""Config-driven experiment runner.

    mfglab run CONFIG.toml [--out DIR] [--seed N] [--quiet]
    mfglab regime-diagram --c0 X --t-range A:B:N --mean-range A:B:N [--out DIR]

Exit status: 0 when every enabled check passes, 1 when a check fails or the
experiment errors, 2 for configuration errors.
"""
from __future__ import annotations

import argparse
import copy
import math
import re
import sys
import time
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import jsonschema

from . import __version__
from . import io as aio
from . import presets
from .errors import ConfigError, MfgLabError

KINDS = ("branches", "simple-game", "mc-verify", "certify-monotone", "certify-threshold",
         "certify-density-bound", "twopop", "regime-diagram")


# -- schema -------------------------------------------------------------------

def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False}


NUM = {"type": "number"}
POS = {"type": "number", "exclusiveMinimum": 0}
NONNEG = {"type": "number", "minimum": 0}
COUNT = {"type": "integer", "minimum": 1}
BOOL = {"type": "boolean"}
RANGE = {"type": "array", "prefixItems": [NUM, NUM, COUNT], "minItems": 3, "maxItems": 3}
GRID = {"n_x": {"type": "integer", "minimum": 16}, "n_t": {"type": "integer", "minimum": 2},
        "half_width": POS}

HAMILTONIAN = _obj({"type": {"enum": ["bang-bang", "smooth-capped", "quadratic"]},
                    "a": NUM, "b": NUM, "delta": POS, "c0": POS}, ["type"])
COST = _obj({"type": {"enum": ["zero", "linear-mean", "gaussian-kernel", "local-tanh"]},
             "coef": NUM, "offset": NUM, "amplitude": NUM, "scale": POS, "lipschitz": NONNEG},
            ["type"])
INIT = _obj({"type": {"enum": ["gaussian", "uniform", "bimodal", "point"]}, "mean": NUM,
             "var": POS, "lo": NUM, "hi": NUM, "x0": NUM,
             "centers": {"type": "array", "items": NUM, "minItems": 2, "maxItems": 2}}, ["type"])

MFG_PROBLEM = _obj({"hamiltonian": HAMILTONIAN, "sigma": POS, "horizon": POS,
                    "running_cost": COST, "terminal_cost": COST, "init": INIT}, ["hamiltonian"])
COEFS = _obj({k: NUM for k in ("alpha1", "beta1", "gamma1", "delta1",
                               "alpha2", "beta2", "gamma2", "delta2")})
VERDICTS = {"enum": ["ProvablyUnique", "ProvablyMultiple", "Undetermined"]}

KIND_BLOCKS = {
    "branches": dict(
        problem=MFG_PROBLEM,
        numerics=_obj({**GRID, "fp_tol": POS, "dedup_threshold": POS,
                       "n_random": {"type": "integer", "minimum": 0},
                       "damping": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                       "max_iter": COUNT}),
        checks=_obj({"catalog_size": COUNT, "min_catalog_size": COUNT, "max_residual": POS}),
    ),
    "simple-game": dict(
        problem=_obj({"c0": POS, "sigma": NONNEG, "T": POS, "mean_init": NUM}, ["c0", "T", "mean_init"]),
        numerics=_obj({**GRID, "continuum_samples": {"type": "integer", "minimum": 2},
                       "crosscheck": BOOL, "pde_tol": POS}),
        checks=_obj({"root_count": {"oneOf": [COUNT, {"const": "inf"}]},
                     "root_values": {"type": "array", "items": NUM}, "tol": POS,
                     "crosscheck_pass": BOOL}),
    ),
    "regime-diagram": dict(
        problem=_obj({"c0": POS, "t_range": RANGE, "mean_range": RANGE}, ["c0", "t_range", "mean_range"]),
        numerics=_obj({}),
        checks=_obj({"symmetric": BOOL, "max_count": COUNT}),
    ),
    "mc-verify": dict(
        problem=_obj({"control": NUM, "sigma": NONNEG, "horizon": POS, "init": INIT}, ["control"]),
        numerics=_obj({**GRID, "n_paths": COUNT, "dt_mc": POS, "n_frames": COUNT,
                       "checkpoints": COUNT, "abs_tol": POS}),
        probe=_obj({"branch": {"enum": ["plus", "minus"]}, "opposite_flow": BOOL,
                    "n_perturbations": COUNT, "n_paths": COUNT, "running_coef": NUM,
                    "terminal_coef": NUM}),
        checks=_obj({"mean_law": BOOL, "max_improvements": {"type": "integer", "minimum": 0},
                     "min_improvements": {"type": "integer", "minimum": 0},
                     "pathwise_ordering": BOOL}),
    ),
    "certify-monotone": dict(
        problem=_obj({"running_cost": COST, "terminal_cost": COST}, ["running_cost", "terminal_cost"]),
        numerics=_obj({"n_x": GRID["n_x"], "half_width": POS,
                       "n_pairs": {"type": "integer", "minimum": 10}, "tol": POS}),
        checks=_obj({"verdict": {"enum": ["MonotonePass", "MonotoneFail", "Inconclusive"]},
                     "regime": VERDICTS}),
    ),
    "certify-threshold": dict(
        problem=_obj({"L_F": NONNEG, "L_G": NONNEG, "sup_init_density": NONNEG, "C_H": NONNEG,
                      "Cbar_H": NONNEG, "sigma": POS, "d": COUNT},
                     ["L_F", "L_G", "sup_init_density", "C_H", "Cbar_H"]),
        numerics=_obj({"T_max_scan": POS}),
        checks=_obj({"positive": BOOL}),
    ),
    "certify-density-bound": dict(
        problem=_obj({"sigma": POS, "drift_bound": POS,
                      "times": {"type": "array", "items": POS, "minItems": 1},
                      "drifts": {"type": "array", "minItems": 1,
                                 "items": {"enum": list(presets.SAMPLE_DRIFTS)}},
                      "init": INIT}),
        numerics=_obj({**GRID, "slack": NONNEG, "quad_rtol": POS}),
        checks=_obj({"all_hold": BOOL}),
    ),
    "twopop": dict(
        problem=_obj({"a1": NUM, "b1": NUM, "a2": NUM, "b2": NUM, "sigma1": POS, "sigma2": POS,
                      "horizon": POS, "coefficients": COEFS, "init1": INIT, "init2": INIT,
                      "branches": {"type": "array",
                                   "items": {"enum": ["++", "--", "+-", "-+"]}}},
                     ["coefficients"]),
        numerics=_obj({**GRID, "lambda_min": POS, "lambda_max": POS, "n_lambda": COUNT}),
        checks=_obj({"n_branches": {"type": "integer", "minimum": 0}, "max_residual": POS,
                     "verdict": VERDICTS}),
    ),
}


def schema_for(kind: str) -> dict:
    blocks = KIND_BLOCKS[kind]
    props = {
        "kind": {"const": kind},
        "title": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
        "output": _obj({"dir": {"type": "string"},
                        "formats": {"type": "array", "items": {"enum": ["csv", "json", "svg"]}}}),
        "problem": blocks["problem"],
        "numerics": blocks["numerics"],
        "assert": blocks["checks"],
    }
    if "probe" in blocks:
        props["probe"] = blocks["probe"]
    return _obj(props, ["kind", "problem"])


# -- config loading with line-anchored diagnostics ----------------------------

_TABLE = re.compile(r"^\s*\[\s*([^\[\]]+?)\s*\]\s*(#.*)?$")
_KEY = re.compile(r"^\s*([A-Za-z0-9_\-\"\.]+)\s*=")


def _split_key(k: str) -> list:
    return [p.strip().strip('"') for p in k.split(".")]


def line_of(text: str, path) -> int:
    """Best line for a key path: the deepest table header or assignment matching its prefix."""
    path = [str(p) for p in path]
    table, best, best_len = [], 1, -1
    for n, line in enumerate(text.splitlines(), start=1):
        m = _TABLE.match(line)
        if m:
            table = _split_key(m.group(1))
            full = table
        else:
            m = _KEY.match(line)
            if not m:
                continue
            full = table + _split_key(m.group(1))
        if full == path[:len(full)] and len(full) > best_len:
            best, best_len = n, len(full)
    return best


def _diagnostic(source: str, text: str, err: jsonschema.ValidationError):
    """``(line, message)`` for one schema violation."""
    path = list(err.absolute_path)
    if err.validator == "additionalProperties" and isinstance(err.instance, dict):
        allowed = set(err.schema.get("properties", {}))
        extra = sorted(set(err.instance) - allowed)
        if extra:
            path = path + [extra[0]]
            line = line_of(text, path)
            return line, (f"{source}:{line}: {'.'.join(map(str, path))}: "
                          f"unknown key (allowed: {', '.join(sorted(allowed)) or 'none'})")
    where = ".".join(map(str, path)) or "<root>"
    line = line_of(text, path)
    return line, f"{source}:{line}: {where}: {err.message}"


def load_config(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text("utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    try:
        cfg = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        line = m.group(1) if m else "1"
        raise ConfigError(f"{path}:{line}: TOML syntax error: {exc}") from None
    kind = cfg.get("kind")
    if kind not in KINDS:
        raise ConfigError(f"{path}:{line_of(text, ['kind'])}: kind: expected one of "
                          f"{', '.join(KINDS)}, got {kind!r}")
    validator = jsonschema.Draft202012Validator(schema_for(kind))
    diags = sorted(_diagnostic(str(path), text, e) for e in validator.iter_errors(cfg))
    if diags:
        raise ConfigError("\n".join(msg for _, msg in diags))
    cfg["_source"] = str(path)
    cfg["_text"] = text
    return cfg


def _semantic(cfg: dict, block_path, fn):
    """Run a model builder; value errors become line-anchored config errors."""
    try:
        return fn()
    except (ValueError, TypeError, KeyError) as exc:
        line = line_of(cfg.get("_text", ""), block_path)
        raise ConfigError(f"{cfg.get('_source', '<config>')}:{line}: "
                          f"{'.'.join(block_path)}: {exc}") from None


# -- experiment runners ---------------------------------------------------------

class Run:
    def __init__(self, cfg: dict, out: Path, seed: int, quiet: bool):
        self.cfg, self.out, self.seed, self.quiet = cfg, out, seed, quiet
        self.checks: list = []
        self.domains: list = []
        formats = cfg.get("output", {}).get("formats", ["csv", "json", "svg"])
        self.svg = "svg" in formats
        self.csv = "csv" in formats

    @property
    def problem(self) -> dict:
        return self.cfg.get("problem", {})

    @property
    def numerics(self) -> dict:
        return self.cfg.get("numerics", {})

    @property
    def expect(self) -> dict:
        return self.cfg.get("assert", {})

    def say(self, msg: str):
        if not self.quiet:
            print(msg, flush=True)

    def check(self, name: str, passed: bool, detail=None):
        self.checks.append({"name": name, "passed": bool(passed), "detail": detail})
        self.say(f"  [{'PASS' if passed else 'FAIL'}] {name}" + (f": {detail}" if detail is not None else ""))

    def record_domain(self, grid):
        """Keep the truncated spatial domain of every grid used, for the manifest."""
        d = {"x_min": float(grid.x_min), "x_max": float(grid.x_max), "n_x": int(grid.n_x)}
        if d not in self.domains:
            self.domains.append(d)

    def path(self, name: str) -> Path:
        return self.out / name


def run_branches(r: Run):
    from .branch_solver import enumerate_branches
    from .certifier import applicability_audit

    num = r.numerics
    problem = _semantic(r.cfg, ["problem"], lambda: presets.problem_from(r.problem, num))
    r.record_domain(problem.grid)
    fp_tol = float(num.get("fp_tol", 1e-3))
    cat = enumerate_branches(problem, int(num.get("n_random", 3)), r.seed, fp_tol,
                             num.get("dedup_threshold"), float(num.get("damping", 0.5)),
                             int(num.get("max_iter", 200)))
    t, x = problem.mesh.t, problem.grid.x
    entries, mean_cols = [], []
    for sol in cat.solutions:
        lab = sol.branch_label
        if r.csv:
            aio.write_field_csv(r.path(f"branch_{lab}_v.csv"), t, x, sol.value.v)
            aio.write_field_csv(r.path(f"branch_{lab}_m.csv"), t, x, sol.flow.frames)
            aio.write_field_csv(r.path(f"branch_{lab}_vx.csv"), t, x, sol.value.v_x)
        if r.svg:
            aio.heatmap(r.path(f"branch_{lab}_m.svg"), t, x, sol.flow.frames,
                        f"density, branch {lab}", "m")
        mean_cols.append(sol.means())
        entries.append({**sol.summary(), "mean_curve": sol.means()})
    if r.csv and entries:
        aio.write_csv(r.path("mean_curves.csv"), ["t"] + [e["branch_label"] for e in entries],
                      zip(t, *mean_cols))
    aio.write_json(r.path("catalog.json"), {
        "size": len(cat), "branches": entries, "diagnostics": cat.diagnostics,
        "dedup_threshold": cat.dedup_threshold, "fp_tol": fp_tol,
        "audit": [row.as_dict() for row in applicability_audit(problem)],
    })
    r.say(f"  catalog: {len(cat)} branch(es) {cat.labels()}")
    e = r.expect
    if "catalog_size" in e:
        r.check("catalog size", len(cat) == e["catalog_size"], f"{len(cat)} (expected {e['catalog_size']})")
    if "min_catalog_size" in e:
        r.check("catalog size lower bound", len(cat) >= e["min_catalog_size"], len(cat))
    tol = e.get("max_residual", fp_tol)
    worst = max((s.residual for s in cat.solutions), default=0.0)
    r.check("fixed-point residuals", worst <= tol, f"max {worst:.3e} <= {tol:g}")


def run_simple_game(r: Run):
    from .numerics import SpatialGrid
    from .simple_game import Continuum, SimpleGameSpec, crosscheck_pde, enumerate_roots

    p, num = r.problem, r.numerics
    spec = _semantic(r.cfg, ["problem"], lambda: SimpleGameSpec(
        float(p["c0"]), float(p.get("sigma", 1.0)), float(p["T"]), float(p["mean_init"])))
    roots = enumerate_roots(spec)
    body = {"spec": {"c0": spec.c0, "sigma": spec.sigma, "T": spec.T, "mean_init": spec.mean_init}}
    if isinstance(roots, Continuum):
        samples = roots.sample(int(num.get("continuum_samples", 41)))
        body.update(count="inf", interval=list(roots.interval), regime=roots.regime.value,
                    roots=[s.as_dict() for s in samples])
        members = list(roots.isolated)
        count = math.inf
    else:
        members = list(roots.roots)
        body.update(count=len(roots), roots=[m.as_dict() for m in members],
                    regime=members[0].regime.value if members else None)
        count = len(roots)
    reports = []
    if num.get("crosscheck", True) and spec.sigma > 0:
        n_x, n_t = int(num.get("n_x", 256)), int(num.get("n_t", 256))
        for m in members:
            reports.append(crosscheck_pde(spec, m, n_x, n_t, float(num.get("pde_tol", 0.02))))
            lo, hi = reports[-1].domain
            r.record_domain(SpatialGrid(lo, hi, n_x))
        body["crosscheck"] = [rep.as_dict() for rep in reports]
    aio.write_json(r.path("roots.json"), body)
    r.say(f"  roots: {body['count']} {[m.M for m in members]}")
    e = r.expect
    if "root_count" in e:
        want = math.inf if e["root_count"] == "inf" else e["root_count"]
        r.check("root count", count == want, f"{body['count']} (expected {e['root_count']})")
    if "root_values" in e:
        tol = float(e.get("tol", 1e-9))
        got = sorted(m.M for m in members)
        want = sorted(e["root_values"])
        ok = len(got) == len(want) and all(abs(a - b) <= tol for a, b in zip(got, want))
        r.check("root values", ok, f"{got}")
    if e.get("crosscheck_pass", bool(reports)):
        r.check("PDE cross-check", all(rep.passed for rep in reports),
                [round(rep.mean_error, 6) for rep in reports])


def regime_outputs(out: Path, c0: float, Ts, Ms, svg: bool = True):
    from .simple_game import regime_diagram

    counts = regime_diagram(c0, Ts, Ms)
    rows = []
    for i, T in enumerate(Ts):
        for j, M in enumerate(Ms):
            c = counts[i, j]
            rows.append([float(T), float(M), "inf" if math.isinf(c) else int(c)])
    aio.write_csv(out / "regime_diagram.csv", ["T", "mean_init", "root_count"], rows)
    if svg:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        shown = np.where(np.isinf(counts), 4.0, counts)
        fig, ax = plt.subplots(figsize=(6, 4))
        im = ax.pcolormesh(Ms, Ts, shown, shading="auto", vmin=1, vmax=4)
        cb = fig.colorbar(im, ax=ax, ticks=[1, 2, 3, 4])
        cb.ax.set_yticklabels(["1", "2", "3", "inf"])
        Tgrid = np.linspace(min(Ts), max(Ts), 200)
        ax.axhline(2 * c0, color="w", lw=1)
        for s in (1, -1):
            ax.plot(s * (Tgrid - 2 * c0), Tgrid, "w--", lw=1)
        if len(Ms) > 1:
            ax.set_xlim(min(Ms), max(Ms))
        if len(Ts) > 1:
            ax.set_ylim(min(Ts), max(Ts))
        ax.set_xlabel("M(nu)")
        ax.set_ylabel("T")
        ax.set_title(f"number of equilibria, c0 = {c0:g}")
        try:
            aio.write_svg(out / "regime_diagram.svg", fig)
        finally:
            plt.close(fig)
    return counts


def _linspace(rng) -> np.ndarray:
    a, b, n = rng
    return np.linspace(float(a), float(b), int(n))


def run_regime_diagram(r: Run):
    p = r.problem
    Ts, Ms = _linspace(p["t_range"]), _linspace(p["mean_range"])
    counts = regime_outputs(r.out, float(p["c0"]), Ts, Ms, r.svg)
    finite = counts[np.isfinite(counts)]
    r.say(f"  diagram {counts.shape}, counts seen {sorted(set(finite.astype(int).tolist()))}")
    e = r.expect
    if e.get("symmetric", True):
        r.check("sign symmetry", np.array_equal(counts, counts[:, ::-1]) if np.allclose(Ms, -Ms[::-1]) else True)
    if "max_count" in e:
        r.check("max count", finite.max(initial=0) <= e["max_count"], int(finite.max(initial=0)))


def run_mc_verify(r: Run):
    from .mc_verifier import ConstantControl, psi_tanh, simulate
    from .numerics import DriftField, solve_fp_forward

    p, num = r.problem, r.numerics
    T = float(p.get("horizon", 1.0))
    sigma = float(p.get("sigma", 1.0))
    gamma = float(p["control"])
    grid, mesh = presets.grid_mesh(T, int(num.get("n_x", 512)), int(num.get("n_t", 256)),
                                   float(num.get("half_width", 8.0)))
    r.record_domain(grid)
    init = _semantic(r.cfg, ["problem", "init"], lambda: presets.density_from(p.get("init"), grid))
    lo, hi = min(gamma, -abs(gamma)), max(gamma, abs(gamma))
    strat = ConstantControl(gamma, (lo, hi))
    ens = simulate(strat, sigma, init, T, int(num.get("n_paths", 100_000)), num.get("dt_mc"),
                   r.seed, int(num.get("n_frames", 64)))
    psi_mean, _ = ens.psi_moments(psi_tanh())
    aio.write_csv(r.path("ensemble.csv"), ["t", "mean", "se", "psi_tanh_mean"],
                  zip(ens.times, ens.means(), ens.standard_errors(), psi_mean))
    exact = init.mean() + gamma * ens.times
    rows, ok = [], True
    if sigma > 0:
        flow = solve_fp_forward(DriftField.constant(grid, mesh, gamma), sigma, init)
        k = int(num.get("checkpoints", 8))
        tol_abs = float(num.get("abs_tol", 0.02))
        for t in np.linspace(T / k, T, k):
            j = ens.frame_index(t)
            mc, se = float(ens.means()[j]), float(ens.standard_errors()[j])
            pde = float(flow.at(float(ens.times[j])).mean())
            tol = max(3 * se, tol_abs)
            good = abs(mc - pde) <= tol and abs(pde - exact[j]) <= tol_abs
            ok &= good
            rows.append({"t": float(ens.times[j]), "mc": mc, "se": se, "pde": pde,
                         "exact": float(exact[j]), "tol": tol, "passed": good})
    body = {"mean_law": rows, "n_paths": ens.n_paths, "dt_mc": ens.dt_mc, "seed": r.seed}
    if r.expect.get("mean_law", True) and rows:
        r.check("mean law (PDE vs MC)", ok, f"{len(rows)} checkpoints")
    if "probe" in r.cfg:
        body["probe"] = _run_probe(r, r.cfg["probe"])
    aio.write_json(r.path("mc_report.json"), body)


def _run_probe(r: Run, pr: dict) -> dict:
    from .branch_solver import MinusDrift, PlusDrift, construct_branch
    from .mc_verifier import (ConstantControl, PerturbedControl, candidate_from_solution,
                              optimality_probe, pathwise_ordering, simulate)
    from .model import LinearMean

    problem = presets.imitation_problem()
    problem = problem.replace(running_cost=LinearMean(float(pr.get("running_coef", -1.0))),
                              terminal_cost=LinearMean(float(pr.get("terminal_coef", -1.0))))
    branch = pr.get("branch", "plus")
    seeds = {"plus": PlusDrift(), "minus": MinusDrift()}
    sol = construct_branch(problem, seeds[branch])
    cand = candidate_from_solution(sol, problem)
    if pr.get("opposite_flow", False):
        other = "minus" if branch == "plus" else "plus"
        cand.flow = construct_branch(problem, seeds[other]).flow
    rep = optimality_probe(cand, int(pr.get("n_perturbations", 50)), r.seed,
                           int(pr.get("n_paths", 20_000)))
    e = r.expect
    r.say(f"  probe: {rep.n_beats} of {len(rep.diffs)} perturbations improve by > 3 SE")
    if "max_improvements" in e:
        r.check("no significant improvement", rep.n_beats <= e["max_improvements"], rep.n_beats)
    if "min_improvements" in e:
        r.check("wrong candidate flagged", rep.n_beats >= e["min_improvements"], rep.n_beats)
    out = rep.as_dict()
    a, b = problem.bounds
    level = b if branch == "plus" else a
    base = ConstantControl(level, (a, b))
    other = PerturbedControl(base, -(b - a) / 2 if branch == "plus" else (b - a) / 2,
                             (0.2 * problem.horizon, 0.7 * problem.horizon), (a, b))
    n = min(int(pr.get("n_paths", 20_000)), 20_000)
    up = simulate(base, problem.sigma, problem.init, problem.horizon, n, seed=r.seed + 11)
    lo = simulate(other, problem.sigma, problem.init, problem.horizon, n, seed=r.seed + 11)
    ordered = pathwise_ordering(up, lo) if branch == "plus" else pathwise_ordering(lo, up)
    out["pathwise_ordering"] = ordered
    if e.get("pathwise_ordering", False):
        r.check("shared-noise pathwise ordering", ordered)
    return out


def run_certify_monotone(r: Run):
    from .certifier import monotonicity_check, regime_verdict
    from .model import LinearMean, Zero
    from .numerics import SpatialGrid

    p, num = r.problem, r.numerics
    F = _semantic(r.cfg, ["problem", "running_cost"], lambda: presets.cost_from(p["running_cost"]))
    G = _semantic(r.cfg, ["problem", "terminal_cost"], lambda: presets.cost_from(p["terminal_cost"]))
    grid = SpatialGrid.symmetric(float(num.get("half_width", 6.0)), int(num.get("n_x", 256)))
    r.record_domain(grid)
    rep = monotonicity_check(F, G, grid, int(num.get("n_pairs", 20)), r.seed, float(num.get("tol", 1e-10)))
    body = {"inputs": {"running_cost": p["running_cost"], "terminal_cost": p["terminal_cost"],
                       "n_x": grid.n_x, "half_width": grid.x_max, "seed": r.seed},
            "report": rep.as_dict()}
    coef = lambda s: s.coef if isinstance(s, LinearMean) else (0.0 if isinstance(s, Zero) else None)
    if coef(F) is not None and coef(G) is not None:
        body["regime"] = regime_verdict(coef(F), coef(G)).value
    aio.write_json(r.path("certificate.json"), body)
    r.say(f"  monotonicity: {rep.verdict.value}; regime: {body.get('regime')}")
    e = r.expect
    if "verdict" in e:
        r.check("monotonicity verdict", rep.verdict.value == e["verdict"], rep.verdict.value)
    if "regime" in e:
        r.check("regime verdict", body.get("regime") == e["regime"], body.get("regime"))


def run_certify_threshold(r: Run):
    from .certifier import ThresholdInputs, short_time_threshold

    p, num = r.problem, r.numerics
    inp = _semantic(r.cfg, ["problem"], lambda: ThresholdInputs(
        float(p["L_F"]), float(p["L_G"]), float(p["sup_init_density"]), float(p["C_H"]),
        float(p["Cbar_H"]), float(p.get("sigma", math.sqrt(2.0))), int(p.get("d", 1)),
        float(num.get("T_max_scan", 1e3))))
    res = short_time_threshold(inp)
    aio.write_json(r.path("threshold.json"), res.as_dict())
    r.say(f"  T_bar = {res.T_bar:.6g}")
    if r.expect.get("positive", True):
        r.check("positive threshold", res.T_bar > 0, res.T_bar)
    if inp.L_G == 0 and res.uncoupled_quadratic is not None:
        r.check("improved constant dominates", res.uncoupled_improved >= res.uncoupled_quadratic,
                f"{res.uncoupled_improved:.6g} >= {res.uncoupled_quadratic:.6g}")


def run_density_bound(r: Run):
    from .certifier import density_bound_constant, gaussian_exp_integral_quad, verify_density_bound
    from .numerics import TimeMesh

    p, num = r.problem, r.numerics
    sigma, bound = float(p.get("sigma", 1.0)), float(p.get("drift_bound", 1.0))
    times = p.get("times", [0.25, 0.5, 1.0])
    kinds = p.get("drifts", list(presets.SAMPLE_DRIFTS))
    grid, _ = presets.grid_mesh(1.0, int(num.get("n_x", 512)), 2, float(num.get("half_width", 8.0)))
    r.record_domain(grid)
    init = _semantic(r.cfg, ["problem", "init"], lambda: presets.density_from(p.get("init"), grid))
    rows, ok = [], True
    rtol = float(num.get("quad_rtol", 1e-10))
    for t in times:
        C = density_bound_constant(sigma, bound, 1, t)
        Cq = density_bound_constant(sigma, bound, 1, t, integral=gaussian_exp_integral_quad)
        agree = abs(C - Cq) <= rtol * abs(C)
        ok &= agree
        mesh = TimeMesh(float(t), int(num.get("n_t", 256)))
        for kind in kinds:
            rep = verify_density_bound(presets.sample_drift(kind, grid, mesh, bound), sigma, init,
                                       drift_bound=bound, slack=float(num.get("slack", 0.05)))
            ok &= rep.holds
            rows.append({"t": float(t), "drift": kind, "C_hat": C, "C_hat_quad": Cq, **rep.as_dict()})
    aio.write_json(r.path("density_bound.json"), {"inputs": {"sigma": sigma, "drift_bound": bound,
                                                            "times": times, "drifts": kinds},
                                                 "rows": rows})
    if r.csv:
        aio.write_csv(r.path("density_bound.csv"), ["t", "drift", "sup_m0", "sup_mt", "C_hat", "ratio"],
                      ([w["t"], w["drift"], w["sup_m0"], w["sup_mt"], w["C_hat"], w["ratio"]] for w in rows))
    if r.expect.get("all_hold", True):
        r.check("density bound and quadrature agreement", ok, f"{len(rows)} cases")


def run_twopop(r: Run):
    from .errors import PreconditionFail, SignConditionViolated
    from .model import BangBang
    from .twopop import Coefficients, TwoPopProblem, construct_twopop_branch, matrix_uniqueness_check

    p, num = r.problem, r.numerics
    T = float(p.get("horizon", 1.0))
    grid, mesh = presets.grid_mesh(T, int(num.get("n_x", 256)), int(num.get("n_t", 256)),
                                   float(num.get("half_width", 6.0)))
    r.record_domain(grid)

    def build():
        return TwoPopProblem(BangBang(float(p.get("a1", -1.0)), float(p.get("b1", 1.0))),
                             BangBang(float(p.get("a2", -1.0)), float(p.get("b2", 1.0))),
                             float(p.get("sigma1", 1.0)), float(p.get("sigma2", 1.0)),
                             Coefficients(**p["coefficients"]),
                             presets.density_from(p.get("init1"), grid),
                             presets.density_from(p.get("init2"), grid), mesh)

    problem = _semantic(r.cfg, ["problem"], build)
    lam = np.logspace(np.log10(num.get("lambda_min", 1e-3)), np.log10(num.get("lambda_max", 1e3)),
                      int(num.get("n_lambda", 101)))
    verdict = matrix_uniqueness_check(problem.coef, lam)
    branches, failures = [], []
    for code in p.get("branches", ["++", "--", "+-", "-+"]):
        seeds = tuple(1 if ch == "+" else -1 for ch in code)
        try:
            sol = construct_twopop_branch(problem, seeds)
        except (PreconditionFail, SignConditionViolated) as exc:
            failures.append({"seeds": code, "error": type(exc).__name__, "message": str(exc)})
            continue
        tag = code.replace("+", "p").replace("-", "m")
        for i in (0, 1):
            if r.csv:
                aio.write_field_csv(r.path(f"twopop_{tag}_pop{i + 1}_m.csv"), mesh.t, grid.x,
                                    sol.flows[i].frames)
                aio.write_field_csv(r.path(f"twopop_{tag}_pop{i + 1}_v.csv"), mesh.t, grid.x,
                                    sol.values[i].v)
        branches.append({**sol.summary(), "mean_curves": [m for m in sol.means()]})
    aio.write_json(r.path("twopop.json"), {"coefficients": problem.coef.as_dict(),
                                           "matrix_check": verdict.as_dict(),
                                           "branches": branches, "not_constructed": failures})
    r.say(f"  matrix check: {verdict.verdict.value}; branches: {[b['seeds'] for b in branches]}")
    e = r.expect
    if "verdict" in e:
        r.check("matrix verdict", verdict.verdict.value == e["verdict"], verdict.verdict.value)
    if "n_branches" in e:
        r.check("constructed branches", len(branches) == e["n_branches"], len(branches))
    tol = e.get("max_residual", 1e-3)
    worst = max((b["residual"] for b in branches), default=0.0)
    r.check("joint residuals", worst <= tol, f"max {worst:.3e}")


RUNNERS = {
    "branches": run_branches,
    "simple-game": run_simple_game,
    "regime-diagram": run_regime_diagram,
    "mc-verify": run_mc_verify,
    "certify-monotone": run_certify_monotone,
    "certify-threshold": run_certify_threshold,
    "certify-density-bound": run_density_bound,
    "twopop": run_twopop,
}


def _echo(cfg: dict) -> dict:
    return {k: v for k, v in copy.deepcopy(cfg).items() if not k.startswith("_")}


def execute(cfg: dict, out: Path, seed: int, quiet: bool = False) -> int:
    out.mkdir(parents=True, exist_ok=True)
    r = Run(cfg, out, seed, quiet)
    r.say(f"mfglab {__version__}: {cfg['kind']} -> {out}")
    t0 = time.perf_counter()
    error = None
    try:
        RUNNERS[cfg["kind"]](r)
    except ConfigError:
        if not any(out.iterdir()):
            out.rmdir()
        raise
    except MfgLabError as exc:
        error = f"{type(exc).__name__}: {exc}"
        r.check("experiment completed", False, error)
    wall = time.perf_counter() - t0
    passed = all(c["passed"] for c in r.checks)
    aio.write_manifest(out, config=_echo(cfg), version=__version__, seeds={"seed": seed},
                       wall_clock_seconds=round(wall, 3), checks=r.checks, passed=passed,
                       domains=r.domains,
                       error=error)
    r.say(f"{'PASSED' if passed else 'FAILED'} ({len(r.checks)} checks, {wall:.1f} s)")
    return 0 if passed else 1


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    out = Path(args.out or cfg.get("output", {}).get("dir") or f"out/{Path(args.config).stem}")
    return execute(cfg, out, seed, args.quiet)


def _parse_range(text: str):
    try:
        a, b, n = text.split(":")
        a, b, n = float(a), float(b), int(n)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected A:B:N, got {text!r}") from None
    if n < 1:
        raise argparse.ArgumentTypeError("N must be >= 1")
    return [a, b, n]


def cmd_regime(args) -> int:
    if not args.c0 > 0:
        raise ConfigError("--c0 must be positive")
    cfg = {"kind": "regime-diagram",
           "problem": {"c0": args.c0, "t_range": args.t_range, "mean_range": args.mean_range}}
    return execute(cfg, Path(args.out), 0, args.quiet)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mfglab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run an experiment described by a TOML config")
    run.add_argument("config")
    run.add_argument("--out", help="output directory (default: output.dir or out/<config name>)")
    run.add_argument("--seed", type=int, help="override the config seed")
    run.add_argument("--quiet", action="store_true")
    run.set_defaults(fn=cmd_run)
    rd = sub.add_parser("regime-diagram", help="root counts of the quadratic game over (T, M(nu))")
    rd.add_argument("--c0", type=float, required=True)
    rd.add_argument("--t-range", type=_parse_range, required=True, metavar="A:B:N")
    rd.add_argument("--mean-range", type=_parse_range, required=True, metavar="A:B:N",
                    help="use --mean-range=-3:3:13 when A is negative")
    rd.add_argument("--out", default="out/regime_diagram")
    rd.add_argument("--quiet", action="store_true")
    rd.set_defaults(fn=cmd_regime)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error:\n{exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
