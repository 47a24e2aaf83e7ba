"""Monte Carlo simulation of the controlled state and optimality probes.

Paths follow Euler-Maruyama, ``X += gamma(t, X) dt + sigma(X) sqrt(dt) Z``.
Paths are split into fixed-size chunks, each with its own child stream of
the master seed, so results do not depend on the number of worker threads and
two simulations with the same seed share every Gaussian increment (common
random numbers).
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .model import LinearMean, Zero, cost_field
from .numerics import Density, SpatialGrid

CHUNK = 1 << 14


# -- strategies ---------------------------------------------------------------

@dataclass(frozen=True)
class ConstantControl:
    gamma: float
    bounds: tuple = (-1.0, 1.0)

    def __post_init__(self):
        lo, hi = self.bounds
        if not lo - 1e-12 <= self.gamma <= hi + 1e-12:
            raise ValueError(f"control {self.gamma} outside {self.bounds}")

    def __call__(self, t, x):
        return np.full(np.shape(x), float(self.gamma))


@dataclass(frozen=True, eq=False)
class FeedbackControl:
    alpha: Callable
    bounds: tuple = (-1.0, 1.0)

    def __call__(self, t, x):
        return np.clip(np.broadcast_to(self.alpha(t, x), np.shape(x)), *self.bounds)


@dataclass(frozen=True, eq=False)
class PerturbedControl:
    """``base + bump`` on ``window``, projected back into the control set."""

    base: object
    bump: Union[float, Callable]
    window: tuple
    bounds: tuple = (-1.0, 1.0)

    def __call__(self, t, x):
        out = self.base(t, x)
        t1, t2 = self.window
        if t1 <= t < t2:
            bump = self.bump(t, x) if callable(self.bump) else self.bump
            out = np.clip(out + bump, *self.bounds)
        return out


def drift_field_control(drift, bounds=None) -> FeedbackControl:
    """Feedback read off a gridded drift (row k on ``[t_k, t_{k+1})``, linear in x)."""
    grid, mesh = drift.grid, drift.mesh
    b = drift.b

    def alpha(t, x):
        k = min(int(t / mesh.dt + 1e-9), mesh.n_t - 1)
        return np.interp(x, grid.x, b[k])

    lo, hi = bounds if bounds is not None else (b.min(), b.max())
    return FeedbackControl(alpha, (lo, hi))


# -- initial laws -------------------------------------------------------------

def gaussian_sampler(mean: float = 0.0, var: float = 1.0):
    sd = float(np.sqrt(var))
    return lambda rng, n: mean + sd * rng.standard_normal(n)


def uniform_sampler(lo: float, hi: float):
    return lambda rng, n: rng.uniform(lo, hi, n)


def point_sampler(x0: float = 0.0):
    return lambda rng, n: np.full(n, float(x0))


def density_sampler(d: Density):
    """Inverse-CDF sampling of a gridded density (linear interpolation of the CDF)."""
    g = d.grid
    inc = 0.5 * g.h * (d.values[1:] + d.values[:-1])
    cdf = np.concatenate([[0.0], np.cumsum(inc)])
    cdf /= cdf[-1]
    keep = np.concatenate([[True], np.diff(cdf) > 0])
    c, xs = cdf[keep], g.x[keep]
    return lambda rng, n: np.interp(rng.uniform(0, 1, n), c, xs)


def as_sampler(init):
    if callable(init):
        return init
    if isinstance(init, Density):
        return density_sampler(init)
    return point_sampler(float(init))


def _sigma_fn(sigma):
    if callable(sigma):
        return sigma
    s = float(sigma)
    return lambda x: s


# -- ensembles ----------------------------------------------------------------

@dataclass(frozen=True)
class EmpiricalMeasure:
    samples: np.ndarray

    def mean(self) -> float:
        return float(np.mean(self.samples))

    def moment(self, psi) -> float:
        return float(np.mean(psi(self.samples)))


@dataclass(eq=False)
class PathEnsemble:
    n_paths: int
    dt_mc: float
    times: np.ndarray
    frames: np.ndarray
    seed: int
    recipe: dict = field(default_factory=dict, repr=False)

    @property
    def terminal_samples(self) -> np.ndarray:
        return self.frames[-1]

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def frame_index(self, t: float) -> int:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"t = {t} is not a stored frame time")
        return k

    def samples_at(self, t: float) -> np.ndarray:
        return self.frames[self.frame_index(t)]

    def at(self, t: float) -> EmpiricalMeasure:
        """Empirical law at ``t``, pathwise linear between stored frames."""
        s = np.interp(t, self.times, np.arange(self.times.size))
        k = min(int(np.floor(s)), self.times.size - 2)
        lam = s - k
        return EmpiricalMeasure((1 - lam) * self.frames[k] + lam * self.frames[k + 1])

    def means(self) -> np.ndarray:
        return self.frames.mean(axis=1)

    def standard_errors(self) -> np.ndarray:
        return self.frames.std(axis=1, ddof=1) / np.sqrt(self.n_paths)

    def psi_moments(self, psi) -> tuple:
        vals = psi(self.frames)
        return vals.mean(axis=1), vals.std(axis=1, ddof=1) / np.sqrt(self.n_paths)


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("MFGLAB_THREADS", "1")))
    except ValueError:
        return 1


def _run_chunks(strategy, sigma, sampler, T, n_paths, n_steps, seed, store_every, visit=None):
    """Simulate all chunks; ``visit(chunk_id, k, t, x, gamma)`` sees every step."""
    dt = T / n_steps
    sq = np.sqrt(dt)
    sig = _sigma_fn(sigma)
    n_chunks = -(-n_paths // CHUNK)
    children = np.random.SeedSequence(seed).spawn(n_chunks)
    n_store = n_steps // store_every + 1

    def one(c):
        size = min(CHUNK, n_paths - c * CHUNK)
        rng = np.random.default_rng(children[c])
        x = np.asarray(sampler(rng, size), dtype=float).copy()
        out = np.empty((n_store, size))
        out[0] = x
        for k in range(n_steps):
            t = k * dt
            gam = strategy(t, x)
            if visit is not None:
                visit(c, k, t, x, gam)
            z = rng.standard_normal(size)
            x = x + gam * dt + sig(x) * sq * z
            if (k + 1) % store_every == 0:
                out[(k + 1) // store_every] = x
        if visit is not None:
            visit(c, n_steps, T, x, None)
        return out

    nt = min(_threads(), n_chunks)
    if nt > 1:
        with ThreadPoolExecutor(nt) as pool:
            parts = list(pool.map(one, range(n_chunks)))
    else:
        parts = [one(c) for c in range(n_chunks)]
    return np.concatenate(parts, axis=1), dt


def simulate(strategy, sigma, init_sampler, T: float, n_paths: int, dt_mc: Optional[float] = None,
             seed: int = 0, n_frames: int = 64) -> PathEnsemble:
    """Euler-Maruyama ensemble storing ``n_frames + 1`` equally spaced frames.

    ``sigma`` may vanish (a deterministic flow); ``init_sampler`` is a callable
    ``(rng, n) -> samples``, a :class:`Density` or a point.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    dt_mc = T / 512 if dt_mc is None else dt_mc
    if not dt_mc > 0:
        raise ValueError("dt_mc must be positive")
    n_steps = max(1, int(round(T / dt_mc)))
    n_frames = max(1, min(n_frames, n_steps))
    while n_steps % n_frames:
        n_frames -= 1
    store_every = n_steps // n_frames
    sampler = as_sampler(init_sampler)
    frames, dt = _run_chunks(strategy, sigma, sampler, T, n_paths, n_steps, seed, store_every)
    times = np.arange(frames.shape[0]) * store_every * dt
    recipe = dict(strategy=strategy, sigma=sigma, sampler=sampler, T=T, n_steps=n_steps,
                  store_every=store_every)
    return PathEnsemble(n_paths, dt, times, frames, seed, recipe)


# -- costs --------------------------------------------------------------------

def linear_mean_cost(coef: float):
    """``(x, mu) -> coef * x * M(mu)`` usable as running or terminal cost."""
    return lambda x, mu, *gamma: coef * x * mu.mean()


def cost_from_spec(spec, control_cost: Optional[Callable] = None):
    """Pathwise cost ``f(x, mu, gamma)`` from a gridded cost spec plus ``l(gamma)``."""
    l = control_cost if control_cost is not None else (lambda g: 0.0)

    def f(x, mu, gamma=None):
        if isinstance(spec, Zero):
            base = 0.0
        elif isinstance(spec, LinearMean) and not callable(spec.offset):
            base = spec.coef * x * mu.mean() + spec.offset
        else:
            base = np.interp(x, mu.grid.x, cost_field(spec, mu))
        return base + (l(gamma) if gamma is not None else 0.0)

    return f


def _accumulate_costs(strategy, sigma, sampler, T, n_paths, n_steps, seed, store_every,
                      running_cost, terminal_cost, flow) -> np.ndarray:
    acc = np.zeros(n_paths)
    dt = T / n_steps
    cache = {}

    def mu_at(t):
        if t not in cache:
            cache[t] = flow.at(t)
        return cache[t]

    def visit(c, k, t, x, gam):
        sl = slice(c * CHUNK, c * CHUNK + x.size)
        if gam is None:
            if terminal_cost is not None:
                acc[sl] += terminal_cost(x, mu_at(T))
        elif running_cost is not None:
            acc[sl] += running_cost(x, mu_at(t), gam) * dt

    _run_chunks(strategy, sigma, sampler, T, n_paths, n_steps, seed, store_every, visit)
    return acc


def pathwise_costs(ensemble: PathEnsemble, running_cost, terminal_cost, flow) -> np.ndarray:
    """Replay the ensemble's paths and return every path's total cost."""
    r = ensemble.recipe
    return _accumulate_costs(r["strategy"], r["sigma"], r["sampler"], r["T"], ensemble.n_paths,
                             r["n_steps"], ensemble.seed, r["store_every"], running_cost,
                             terminal_cost, flow)


def _mean_se(samples: np.ndarray):
    n = samples.size
    se = float(samples.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return float(samples.mean()), se


def estimate_cost(ensemble: PathEnsemble, running_cost, terminal_cost, flow):
    """Sample mean and standard error of the pathwise cost against a frozen flow."""
    return _mean_se(pathwise_costs(ensemble, running_cost, terminal_cost, flow))


# -- optimality probe -------------------------------------------------------

@dataclass
class Candidate:
    strategy: object
    flow: object
    running_cost: Optional[Callable]
    terminal_cost: Optional[Callable]
    sigma: object
    init: object
    T: float
    bounds: tuple


@dataclass
class ProbeReport:
    candidate_cost: float
    candidate_se: float
    diffs: list
    ses: list
    windows: list
    bumps: list
    n_beats: int
    threshold_se: float = 3.0

    def as_dict(self) -> dict:
        return {
            "candidate_cost": self.candidate_cost, "candidate_se": self.candidate_se,
            "n_perturbations": len(self.diffs), "n_significant_improvements": self.n_beats,
            "threshold_se": self.threshold_se,
            "perturbations": [{"window": list(w), "bump": b, "mean_diff": d, "se_diff": s}
                              for w, b, d, s in zip(self.windows, self.bumps, self.diffs, self.ses)],
        }


def random_perturbations(base, bounds, T, n: int, seed: int):
    rng = np.random.default_rng(seed)
    lo, hi = bounds
    out = []
    for _ in range(n):
        t1, t2 = np.sort(rng.uniform(0, T, 2))
        if t2 - t1 < 0.05 * T:
            t2 = min(T, t1 + 0.05 * T)
        bump = float(rng.uniform(-(hi - lo), hi - lo))
        out.append(PerturbedControl(base, bump, (float(t1), float(t2)), bounds))
    return out


def optimality_probe(candidate: Candidate, n_perturbations: int = 50, seed: int = 0,
                     n_paths: int = 20000, dt_mc: Optional[float] = None,
                     threshold_se: float = 3.0) -> ProbeReport:
    """Compare the candidate with random bumped strategies under shared noise.

    A perturbation counts as an improvement only when the mean cost difference
    is below ``-threshold_se`` standard errors.  This probes a finite family of
    strategies, not the full admissible class.
    """
    c = candidate

    dt_mc = c.T / 128 if dt_mc is None else dt_mc
    n_steps = max(1, int(round(c.T / dt_mc)))
    sampler = as_sampler(c.init)

    def costs(strategy):
        return _accumulate_costs(strategy, c.sigma, sampler, c.T, n_paths, n_steps, seed,
                                 n_steps, c.running_cost, c.terminal_cost, c.flow)

    base = costs(c.strategy)
    j0, se0 = _mean_se(base)
    perts = random_perturbations(c.strategy, c.bounds, c.T, n_perturbations, seed + 1)
    diffs, ses = [], []
    beats = 0
    for p in perts:
        d = costs(p) - base
        m, s = _mean_se(d)
        diffs.append(m)
        ses.append(s)
        if m < -threshold_se * s and m < 0:
            beats += 1
    return ProbeReport(j0, se0, diffs, ses, [p.window for p in perts], [p.bump for p in perts],
                       beats, threshold_se)


def candidate_from_solution(solution, problem) -> Candidate:
    """Wrap a PDE solution as a probe candidate (feedback read from its drift)."""
    H = problem.hamiltonian
    return Candidate(
        strategy=drift_field_control(solution.drift, problem.bounds),
        flow=solution.flow,
        running_cost=cost_from_spec(problem.running_cost, H.running),
        terminal_cost=cost_from_spec(problem.terminal_cost),
        sigma=problem.sigma,
        init=problem.init,
        T=problem.horizon,
        bounds=problem.bounds,
    )


def candidate_from_root(spec, root, init=None, n_paths: int = 20000, seed: int = 0) -> Candidate:
    """Constant feedback of a quadratic-game root, with its own simulated flow."""
    from .simple_game import feedback

    M = getattr(root, "M", root)
    alpha = feedback(M, spec.c0)
    init = init if init is not None else (spec.init if spec.init is not None
                                          else gaussian_sampler(spec.mean_init, 1.0))
    strat = ConstantControl(alpha, (-1.0, 1.0))
    flow = simulate(strat, spec.sigma, init, spec.T, n_paths, seed=seed + 7)
    c0 = spec.c0
    return Candidate(strat, flow, lambda x, mu, g: c0 * g * g, linear_mean_cost(-1.0),
                     spec.sigma, init, spec.T, (-1.0, 1.0))


# -- histograms ---------------------------------------------------------------

def empirical_density(ensemble: PathEnsemble, t: float, grid: SpatialGrid,
                      bin_width: Optional[float] = None) -> Density:
    """Histogram of the paths at a stored frame time, mapped to the grid."""
    x = ensemble.samples_at(t)
    h = grid.h
    if bin_width is None or bin_width <= h * (1 + 1e-9):
        edges = np.concatenate([[grid.x_min], grid.x[:-1] + h / 2, [grid.x_max]])
        counts, _ = np.histogram(x, edges)
        return Density.from_values(grid, counts / np.diff(edges))
    n_bins = max(1, int(round((grid.x_max - grid.x_min) / bin_width)))
    counts, edges = np.histogram(x, n_bins, range=(grid.x_min, grid.x_max))
    centers = 0.5 * (edges[1:] + edges[:-1])
    dens = counts / (x.size * np.diff(edges))
    return Density.from_values(grid, np.interp(grid.x, centers, dens))


# -- psi functionals ----------------------------------------------------------

def psi_identity(c: float = 1.0, d: float = 0.0):
    return lambda x: c * x + d


def psi_exponential(lam: float = 0.5):
    return lambda x: np.expm1(lam * x)


def psi_tanh():
    return np.tanh


def psi_condition(psi_d1, psi_d2, drift: float, sigma: float, xs) -> bool:
    """Pointwise ``drift psi' + 1/2 sigma^2 psi'' > 0`` (or ``< 0`` for negative drift)."""
    val = drift * psi_d1(xs) + 0.5 * sigma ** 2 * psi_d2(xs)
    return bool(np.all(val > 0)) if drift > 0 else bool(np.all(val < 0))


def pathwise_ordering(upper: PathEnsemble, lower: PathEnsemble) -> bool:
    """True when ``upper >= lower`` on every path at every stored frame."""
    return bool(np.all(upper.frames >= lower.frames))
