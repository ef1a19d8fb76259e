"""Viscous continuity equation ``du/dt + div(b u) = c u + σ Δu`` in weak form.

The state is the density ``u`` against the reference measure.  The generator
is assembled in conservative form, ``A = M⁻¹ Bᵀ M + diag(c) + σ L`` where
``B`` is the matrix of ``f -> b(f)``, so that ``⟨A u, f⟩ = ⟨u, b(f)⟩`` holds
to rounding and mass is conserved structurally.  Time stepping is implicit
midpoint with the coefficients frozen at the step midpoint.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from . import derivation as dv
from .arrayio import write_csv
from .space import GRAPH


class SolverError(RuntimeError):
    pass


@dataclass
class EvolutionProblem:
    space: object
    b: object
    u0: np.ndarray
    T: float
    dt: float
    sigma: float = 0.0
    source: object = None  # None, a static observable, or a callable t -> observable

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("time step must be positive")
        if self.sigma < 0:
            raise ValueError("viscosity must be nonnegative")
        if self.T < 0:
            raise ValueError("horizon must be nonnegative")
        k = self.T / self.dt
        if abs(k - round(k)) > 1e-9 * max(1.0, k):
            raise ValueError("T / dt must be an integer")
        self.u0 = self.space.check(np.asarray(self.u0, dtype=float), "initial density")

    @property
    def steps(self):
        return int(round(self.T / self.dt))

    @property
    def times(self):
        return np.arange(self.steps + 1) * self.dt

    def source_at(self, t):
        if self.source is None:
            return None
        c = self.source(t) if callable(self.source) else self.source
        return self.space.check(np.asarray(c, dtype=float), "source")

    def with_(self, **kw):
        d = dict(space=self.space, b=self.b, u0=self.u0, T=self.T, dt=self.dt,
                 sigma=self.sigma, source=self.source)
        d.update(kw)
        return EvolutionProblem(**d)


@dataclass
class DensityPath:
    times: np.ndarray
    densities: np.ndarray
    residuals: np.ndarray  # per-step weak-form residual (max over dictionary)
    problem: EvolutionProblem = None
    info: dict = field(default_factory=dict)

    def at(self, t):
        k = int(round(t / (self.times[1] - self.times[0]))) if len(self.times) > 1 else 0
        return self.densities[k]

    def masses(self):
        return self.densities @ self.problem.space.measure

    def table(self):
        sp_ = self.problem.space
        res = np.concatenate([[0.0], self.residuals])
        return [{"time": float(t), "mass": float(sp_.integrate(u)), "min": float(u.min()),
                 "max": float(u.max()), "l2": float(sp_.lp_norm(u, 2)), "weak_residual": float(r)}
                for t, u, r in zip(self.times, self.densities, res)]

    def write_csv(self, path):
        write_csv(path, self.table())


# ---------------------------------------------------------------- generator
def transport_matrix(space, b, t):
    """Matrix of ``u -> -div(u b)``, the m-adjoint of ``f -> b(f)``."""
    B = dv.operator_matrix(space, b, t)
    if space.kind == GRAPH:
        m = space.measure
        return (B.T * m[None, :]) / m[:, None]
    return B.T.toarray()


def generator_matrix(space, b, t, sigma=0.0, c=None, drift_matrix=None):
    A = transport_matrix(space, b, t) if drift_matrix is None else drift_matrix
    A = np.array(A, dtype=float)
    if c is not None:
        A[np.diag_indices_from(A)] += c
    if sigma:
        L = space.laplacian_matrix()
        A += sigma * (L.toarray() if sp.issparse(L) else L)
    return A


def _step_factor(A, dt, step):
    n = A.shape[0]
    lhs = np.eye(n) - 0.5 * dt * A
    with warnings.catch_warnings():
        # singularity is reported below with the step index
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu = sla.lu_factor(lhs, check_finite=True)
    piv = np.abs(np.diag(lu[0]))
    if piv.min() <= 1e-14 * max(piv.max(), 1.0):
        raise SolverError(f"singular implicit step matrix at step {step}")
    rhs = np.eye(n) + 0.5 * dt * A
    return lu, rhs


def propagate(space, u0, times, matrix_at, key_at):
    """Implicit midpoint for ``du/dt = A(t) u``; ``u0`` may be ``(n,)`` or ``(n, k)``.

    ``matrix_at(t_mid)`` assembles the generator, ``key_at(t_mid)`` returns a
    cache key (``None`` disables caching) so piecewise-constant problems
    factor each distinct generator once.
    """
    U = [np.array(u0, dtype=float)]
    cache = {}
    for k in range(len(times) - 1):
        dt = times[k + 1] - times[k]
        tm = 0.5 * (times[k] + times[k + 1])
        key = key_at(tm)
        entry = cache.get(key) if key is not None else None
        if entry is None:
            entry = _step_factor(matrix_at(tm), dt, k)
            if key is not None:
                cache[key] = entry
        lu, rhs = entry
        u = sla.lu_solve(lu, rhs @ U[-1])
        if not np.all(np.isfinite(u)):
            raise SolverError(f"non-finite density at step {k}")
        U.append(u)
    return np.array(U)


def _piece_index(b, t):
    return b.index(t) if isinstance(b, dv.PiecewiseDerivation) else 0


# ------------------------------------------------------------- weak residual
def weak_form_defect(space, b, t_mid, dt, u_prev, u_next, tests, *, sigma=0.0, c=None,
                     beta=None, dbeta=None):
    """Per-test residual of one step of the (renormalized) weak formulation.

    With ``beta=None`` this is the continuity equation itself; otherwise the
    renormalized form with ``R(z) = β(z) - z β'(z)``.  All terms use the
    midpoint average of the two endpoint states.
    """
    if beta is not None and sigma:
        raise ValueError("the renormalized residual is only defined for inviscid problems")
    if beta is None:
        b0, b1 = u_prev, u_next
        R = None
        cz = None if c is None else c * 0.5 * (u_prev + u_next)
    else:
        b0, b1 = beta(u_prev), beta(u_next)
        R = 0.5 * (b0 - u_prev * dbeta(u_prev) + b1 - u_next * dbeta(u_next))
        cz = None if c is None else c * 0.5 * (u_prev * dbeta(u_prev) + u_next * dbeta(u_next))
    avg = 0.5 * (b0 + b1)
    m = space.measure
    bt = dv.apply(space, b, tests, t_mid)
    res = ((b1 - b0) / dt) @ (tests * m).T - bt @ (avg * m)
    if R is not None:
        div = dv.divergence(space, b, t_mid)
        res -= tests @ (R * div * m)
    if cz is not None:
        res -= tests @ (cz * m)
    if sigma:
        res -= sigma * (space.laplacian(tests) @ (avg * m))
    return res


def _residual_series(path, tests, beta=None, dbeta=None):
    pb = path.problem
    t = path.times
    out = np.empty(len(t) - 1)
    for k in range(len(t) - 1):
        tm = 0.5 * (t[k] + t[k + 1])
        r = weak_form_defect(pb.space, pb.b, tm, t[k + 1] - t[k], path.densities[k],
                             path.densities[k + 1], tests, sigma=pb.sigma, c=pb.source_at(tm),
                             beta=beta, dbeta=dbeta)
        out[k] = np.max(np.abs(r))
    return out


def solve(problem: EvolutionProblem) -> DensityPath:
    """Integrate the viscous continuity equation and record the weak residual per step."""
    space, b = problem.space, problem.b
    static_src = problem.source is None or not callable(problem.source)

    def matrix_at(tm):
        return generator_matrix(space, b, tm, problem.sigma, problem.source_at(tm))

    def key_at(tm):
        return _piece_index(b, tm) if static_src else None

    U = propagate(space, problem.u0, problem.times, matrix_at, key_at)
    path = DensityPath(problem.times, U, np.zeros(problem.steps), problem)
    path.residuals = _residual_series(path, space.dictionary)
    path.info["tol_step"] = 1e-8 * (1 + space.lp_norm(problem.u0, 2))
    return path


# ------------------------------------------------------------------ checks
def _div_minus_integral(problem):
    """``∫_0^T ‖(div b_t)^-‖_∞ dt`` with piecewise-constant-in-time fields."""
    total = 0.0
    for k in range(problem.steps):
        tm = (k + 0.5) * problem.dt
        div = dv.divergence(problem.space, problem.b, tm)
        total += problem.dt * float(np.max(np.maximum(-div, 0.0), initial=0.0))
    return total


def _source_plus_integral(problem):
    if problem.source is None:
        return 0.0
    return sum(problem.dt * float(np.max(np.maximum(problem.source_at((k + 0.5) * problem.dt), 0.0)))
               for k in range(problem.steps))


@dataclass
class AprioriResult:
    r: float
    lhs: dict
    rhs: dict
    margin: float
    passed: bool


def apriori_check(path, problem=None, r=2, tol=1e-8):
    """``sup_t ‖u_t^±‖_r ≤ ‖ū^±‖_r exp((1 - 1/r) ∫‖(div b)^-‖_∞)``.

    A nonzero source adds ``∫ sup c^+`` to the exponent.
    """
    problem = problem or path.problem
    space = problem.space
    r = float(r)
    expo = (1.0 - 1.0 / r if math.isfinite(r) else 1.0) * _div_minus_integral(problem)
    expo += _source_plus_integral(problem)
    lhs, rhs, margin, passed = {}, {}, math.inf, True
    for sign, part in (("+", lambda u: np.maximum(u, 0.0)), ("-", lambda u: np.maximum(-u, 0.0))):
        lhs[sign] = float(max(space.lp_norm(part(u), r) for u in path.densities))
        rhs[sign] = float(space.lp_norm(part(problem.u0), r) * math.exp(expo))
        margin = min(margin, rhs[sign] - lhs[sign])
        passed &= lhs[sign] <= rhs[sign] + tol * (1 + rhs[sign])
    return AprioriResult(r, lhs, rhs, margin, bool(passed))


def renormalization_defect(path, problem=None, beta=None, dbeta=None, tests=None):
    """Per-step residual of the renormalized weak form for ``β``.

    With ``β(z) = z`` this reproduces :attr:`DensityPath.residuals` exactly.
    """
    if problem is not None and path.problem is not problem:
        path = DensityPath(path.times, path.densities, path.residuals, problem, path.info)
    tests = path.problem.space.dictionary if tests is None else tests
    if beta is None:
        return _residual_series(path, tests)
    return _residual_series(path, tests, beta, dbeta)


BETA_PRESETS = {
    "identity": (lambda z: z, lambda z: np.ones_like(z)),
    "square": (lambda z: z * z, lambda z: 2 * z),
}


def beta_eps(eps):
    """``β_ε(z) = sqrt(z² + ε²) - ε`` and its derivative."""
    return (lambda z: np.sqrt(z * z + eps * eps) - eps, lambda z: z / np.sqrt(z * z + eps * eps))


def comparison_check(problem, u_low, u_high, tol=1e-8):
    """Solve from both data (same factorizations) and test ``u_low ≤ u_high + tol``."""
    u_low, u_high = np.asarray(u_low, float), np.asarray(u_high, float)
    if np.any(u_low > u_high):
        raise ValueError("comparison needs u_low <= u_high pointwise")
    space, b = problem.space, problem.b
    static_src = problem.source is None or not callable(problem.source)
    U = propagate(space, np.stack([u_low, u_high], axis=1), problem.times,
                  lambda tm: generator_matrix(space, b, tm, problem.sigma, problem.source_at(tm)),
                  lambda tm: _piece_index(b, tm) if static_src else None)
    gap = float(np.max(U[:, :, 0] - U[:, :, 1]))
    return {"passed": gap <= tol, "max_violation": gap, "low": U[:, :, 0], "high": U[:, :, 1]}


def energy_norm_series(path, lam):
    """``(∫_0^T e^{-2λt} (‖u_t‖_2² + ℰ(u_t)) dt)^{1/2}`` by the trapezoid rule."""
    space = path.problem.space
    vals = np.array([space.inner(u, u) + space.energy(u) for u in path.densities])
    w = np.exp(-2 * lam * path.times)
    return math.sqrt(float(np.trapezoid(w * vals, path.times)))


def vanishing_viscosity_study(problem, sigma_list):
    """Distance of ``u^σ`` to the inviscid solve and the viscous energy bound per ``σ``."""
    sigma_list = [float(s) for s in sigma_list]
    if any(s < 0 for s in sigma_list):
        raise ValueError("viscosities must be nonnegative")
    base = solve(problem.with_(sigma=0.0))
    space = problem.space
    n0 = space.lp_norm(problem.u0, 2)
    lam_div = 0.5 * max(float(np.max(np.maximum(-dv.divergence(space, problem.b, (k + 0.5) * problem.dt), 0)))
                        for k in range(problem.steps))
    rows = []
    for s in sigma_list:
        path = base if s == 0 else solve(problem.with_(sigma=s))
        diff = max(space.lp_norm(u - v, 2) for u, v in zip(path.densities, base.densities))
        row = {"sigma": s, "diff_linf_l2": float(diff)}
        if s > 0:
            lam = lam_div + s
            row["energy"] = energy_norm_series(path, lam)
            row["energy_bound"] = float(n0 / s)
            row["energy_ok"] = row["energy"] <= row["energy_bound"]
        rows.append(row)
    pos = [r for r in rows if r["sigma"] > 0 and r["diff_linf_l2"] > 0]
    slope = None
    if len(pos) >= 2:
        slope = float(np.polyfit(np.log([r["sigma"] for r in pos]),
                                 np.log([r["diff_linf_l2"] for r in pos]), 1)[0])
    ordered = sorted(pos, key=lambda r: r["sigma"])
    monotone = all(a["diff_linf_l2"] <= b["diff_linf_l2"] for a, b in zip(ordered, ordered[1:]))
    return {"rows": rows, "slope": slope, "monotone": monotone, "baseline": base}
