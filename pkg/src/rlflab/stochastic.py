"""Diffusions with generator ``ℒf = b(f) + ½ a Δf``.

Fokker-Planck densities are integrated with the same implicit-midpoint
propagator as the continuity equation; with ``a ≡ 0`` the two code paths
coincide exactly.  Particles follow Euler-Maruyama on the torus with
block-seeded Philox streams and carry the running integrals needed for the
martingale test.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import continuity as ce
from . import derivation as dv
from .fields import FlowField, TrigSeries
from .parallel import map_blocks
from .space import TORUS
from .superposition import dictionary_gap, sample_density


@dataclass
class KolmogorovOperator:
    """``ℒ_t f = b_t(f) + ½ a Δf`` with a static nonnegative diffusion coefficient.

    ``field`` evaluates the drift at particle positions and ``a`` is a scalar
    trigonometric series (use ``TrigSeries(const=a0)`` for constants).
    """

    space: object
    b: object
    a: TrigSeries
    field: FlowField | None = None

    def __post_init__(self):
        L = self.space.L if self.space.kind == TORUS else None
        if self.space.kind == TORUS:
            self.a_grid = self.a.value(self.space.points, L)
        else:
            self.a_grid = np.full(self.space.n, float(self.a.const))
        if np.any(self.a_grid < 0):
            i = int(np.argmin(self.a_grid))
            raise ValueError(f"diffusion coefficient is negative at state {i}: {self.a_grid[i]:.3e}")

    @property
    def degenerate(self):
        return not np.any(self.a_grid)

    def apply(self, f, t=0.0):
        out = dv.apply(self.space, self.b, f, t)
        if not self.degenerate:
            out = out + 0.5 * self.a_grid * self.space.laplacian(f)
        return out

    def leibniz_defect(self, f, g, t=0.0):
        """``max |½[ℒ(fg) - fℒg - gℒf] - ½ a Γ(f, g)|``."""
        lhs = 0.5 * (self.apply(f * g, t) - f * self.apply(g, t) - g * self.apply(f, t))
        return float(np.max(np.abs(lhs - 0.5 * self.a_grid * self.space.gamma(f, g))))

    def generator_matrix(self, t):
        A = ce.generator_matrix(self.space, self.b, t)
        if not self.degenerate:
            L = self.space.laplacian_matrix()
            L = L.toarray() if sp.issparse(L) else L
            A += 0.5 * L * self.a_grid[None, :]
        return A


def kolmogorov_operator(space, fld, a):
    a = a if isinstance(a, TrigSeries) else TrigSeries(const=float(a))
    return KolmogorovOperator(space, dv.from_field(space, fld), a, fld)


def diffusion_regularity_report(op, trials=8, seed=0):
    """Integrability proxies for the diffusion coefficient.

    ``‖a‖_2`` and ``‖√Γ(a)‖_2`` are exact; the Hessian size is replaced by the
    deformation estimate of the gradient derivation of ``a``, a lower bound
    flagged as a proxy.
    """
    sp_ = op.space
    a = op.a_grid
    rep = dv.dsym_norm_estimate(sp_, dv.GradientDerivation(a), trials=trials, seed=seed)
    return {"a_l2": float(sp_.lp_norm(a, 2)),
            "sqrt_gamma_a_l2": float(sp_.lp_norm(np.sqrt(np.maximum(sp_.gamma(a), 0.0)), 2)),
            "hessian_proxy": rep.estimate, "hessian_kind": "deformation lower bound (proxy)"}


# -------------------------------------------------------------- Fokker-Planck
def fokker_planck_solve(op, u0, T, dt):
    """Weak Fokker-Planck evolution ``d/dt ⟨u, f⟩ = ⟨u, ℒf⟩`` by implicit midpoint."""
    problem = ce.EvolutionProblem(op.space, op.b, u0, T, dt)
    if op.degenerate:
        path = ce.solve(problem)
        path.info["operator"] = "degenerate"
        return path
    b = op.b
    U = ce.propagate(op.space, problem.u0, problem.times, op.generator_matrix,
                     lambda tm: ce._piece_index(b, tm))
    path = ce.DensityPath(problem.times, U, np.zeros(problem.steps), problem)
    tests = op.space.dictionary
    lap = op.space.laplacian(tests)
    res = np.empty(problem.steps)
    m = op.space.measure
    for k in range(problem.steps):
        tm = (k + 0.5) * dt
        r = ce.weak_form_defect(op.space, b, tm, dt, U[k], U[k + 1], tests)
        avg = 0.5 * (U[k] + U[k + 1])
        r -= (0.5 * op.a_grid * lap) @ (avg * m)
        res[k] = np.max(np.abs(r))
    path.residuals = res
    path.info["tol_step"] = 1e-8 * (1 + op.space.lp_norm(problem.u0, 2))
    return path


def gronwall_rate(op):
    """``c = (‖b‖_∞ + ½‖∇a‖_∞)² / λ`` in ``d/dt ‖u‖² ≤ c ‖u‖²``."""
    lam = float(op.a_grid.min())
    if lam <= 0:
        raise ValueError("energy estimate needs a uniformly elliptic coefficient (min a > 0)")
    bn = float(np.max(dv.pointwise_norm(op.space, op.b)))
    ga = float(np.sqrt(np.max(op.space.gamma(op.a_grid)))) if op.space.kind == TORUS else 0.0
    return (bn + 0.5 * ga) ** 2 / lam


def energy_uniqueness_check(op, u0, T, dt, rungs=3, perturbation=None, delta=0.0):
    """Gap between the ``dt`` and ``dt/2`` solutions on successive rungs.

    With ``perturbation`` and ``delta`` the second solve starts from
    ``ū + δ f`` and the gap is compared with ``δ ‖f‖_2 exp(½ c T)``.
    """
    lam = float(op.a_grid.min())
    if lam <= 0:
        raise ValueError("energy estimate needs min a > 0; the degenerate case only reports")
    c = gronwall_rate(op)
    rows = []
    h = dt
    for _ in range(rungs):
        u1 = fokker_planck_solve(op, u0, T, h).densities[-1]
        u2 = fokker_planck_solve(op, u0, T, h / 2).densities[-1]
        rows.append({"dt": h, "gap": float(op.space.lp_norm(u1 - u2, 2))})
        h /= 2
    ratios = [a["gap"] / b["gap"] if b["gap"] > 0 else math.inf for a, b in zip(rows, rows[1:])]
    out = {"rows": rows, "ratios": ratios, "lambda": lam, "gronwall_rate": c}
    if perturbation is not None:
        pert = np.asarray(perturbation, dtype=float)
        ua = fokker_planck_solve(op, u0, T, dt).densities[-1]
        ub = fokker_planck_solve(op, np.asarray(u0) + delta * pert, T, dt).densities[-1]
        gap = float(op.space.lp_norm(ua - ub, 2))
        bound = abs(delta) * float(op.space.lp_norm(pert, 2)) * math.exp(0.5 * c * T)
        out.update(perturbed_gap=gap, perturbed_bound=bound)
    return out


# ------------------------------------------------------------------- SDE
@dataclass
class SdeEnsemble:
    times: np.ndarray
    paths: np.ndarray  # (K, N, d) unwrapped
    martingales: np.ndarray  # (K, N, F): f(x_t) - f(x_0) - ∫ ℒf
    quad_var: np.ndarray  # (K, N, F): ∫ a Γ(f)
    test_ids: tuple
    period: float
    seed: int
    dt: float
    info: dict = field(default_factory=dict)

    @property
    def size(self):
        return self.paths.shape[1]

    def positions(self, k):
        return np.mod(self.paths[k], self.period)

    def index(self, t):
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"time {t} is not a checkpoint")
        return k


def sde_sample(op, u0, N, dt, T, seed, save_every=1, test_ids=None):
    """Euler-Maruyama ``dx = b dt + sqrt(a) dW`` on the torus from ``ū m``.

    Running integrals of ``ℒf`` and ``aΓ(f)`` use the trapezoid rule on the
    step endpoints.
    """
    space = op.space
    if space.kind != TORUS or op.field is None:
        raise ValueError("particle sampling needs a torus operator with an evaluable field")
    if N < 1000:
        raise ValueError("SDE ensembles need at least 1000 paths")
    steps = int(round(T / dt))
    if abs(steps * dt - T) > 1e-9 * max(1.0, T):
        raise ValueError("T / dt must be an integer")
    L = space.L
    modes = space.dictionary_modes
    test_ids = tuple(range(min(6, len(modes)))) if test_ids is None else tuple(test_ids)
    tests = [modes[i] for i in test_ids]
    x0 = sample_density(space, u0, N, seed)
    fld, a = op.field, op.a
    degenerate = op.degenerate

    def gen_and_qv(t, x):
        v = fld.velocity(t, x)
        av = a.value(x, L)
        if np.any(av < 0):
            i = int(np.argmin(av))
            raise ValueError(f"diffusion coefficient negative at x = {x[i]}")
        lf, qv = [], []
        for mo in tests:
            g = mo.gradient(x, L)
            lf.append(np.sum(g * v, axis=1) + 0.5 * av * mo.laplacian(x, L))
            qv.append(av * np.sum(g * g, axis=1))
        return v, av, np.stack(lf, axis=1), np.stack(qv, axis=1)

    def run(sl, rng):
        x = x0[sl].copy()
        n = len(x)
        f0 = np.stack([mo.value(x, L) for mo in tests], axis=1)
        integ = np.zeros((n, len(tests)))
        qint = np.zeros((n, len(tests)))
        X, Mv, Q = [x.copy()], [np.zeros_like(integ)], [np.zeros_like(qint)]
        v, av, lf, qv = gen_and_qv(0.0, x)
        for k in range(steps):
            noise = rng.standard_normal((n, space.d))
            x = x + v * dt
            if not degenerate:
                x = x + np.sqrt(av * dt)[:, None] * noise
            v, av2, lf2, qv2 = gen_and_qv((k + 1) * dt, x)
            integ += 0.5 * dt * (lf + lf2)
            qint += 0.5 * dt * (qv + qv2)
            lf, qv, av = lf2, qv2, av2
            if (k + 1) % save_every == 0 or k + 1 == steps:
                fx = np.stack([mo.value(x, L) for mo in tests], axis=1)
                X.append(x.copy())
                Mv.append(fx - f0 - integ)
                Q.append(qint.copy())
        return np.array(X), np.array(Mv), np.array(Q)

    parts = map_blocks(run, N, seed)
    X = np.concatenate([p[0] for p in parts], axis=1)
    Mv = np.concatenate([p[1] for p in parts], axis=1)
    Q = np.concatenate([p[2] for p in parts], axis=1)
    times = np.array([0.0] + [(k + 1) * dt for k in range(steps)
                              if (k + 1) % save_every == 0 or k + 1 == steps])
    return SdeEnsemble(times, X, Mv, Q, test_ids, L, seed, dt)


def _bin_index(x, period, bins):
    d = x.shape[1]
    idx = np.zeros(len(x), dtype=np.int64)
    for a in range(d):
        i = np.clip(np.floor(x[:, a] / period * bins).astype(np.int64), 0, bins - 1)
        idx = idx * bins + i
    return idx


def martingale_defect(ens: SdeEnsemble, s_grid, t_grid, bins, min_count=30):
    """Binned conditional increments ``E[M_t - M_s | x_s ∈ bin]`` with standard errors.

    Summary ``defect`` is the count-weighted mean of ``|bin mean|`` and
    ``stderr`` the matching mean of standard errors.
    """
    rows = []
    tot_w = tot_d = tot_se = 0.0
    signed = []
    qv_rows = []
    for s in s_grid:
        for t in t_grid:
            if not s < t:
                continue
            ks, kt = ens.index(s), ens.index(t)
            b = _bin_index(ens.positions(ks), ens.period, bins)
            inc = ens.martingales[kt] - ens.martingales[ks]
            qinc = ens.quad_var[kt] - ens.quad_var[ks]
            nb = int(b.max()) + 1
            cnt = np.bincount(b, minlength=nb)
            for j, fid in enumerate(ens.test_ids):
                sums = np.bincount(b, weights=inc[:, j], minlength=nb)
                sq = np.bincount(b, weights=inc[:, j] ** 2, minlength=nb)
                qv_rows.append({"f_id": fid, "s": float(s), "t": float(t),
                                "var_increment": float(np.var(inc[:, j])),
                                "mean_qv": float(np.mean(qinc[:, j]))})
                for bi in np.nonzero(cnt)[0]:
                    n = cnt[bi]
                    mean = sums[bi] / n
                    var = max(sq[bi] / n - mean ** 2, 0.0)
                    se = math.sqrt(var / max(n - 1, 1))
                    rows.append({"f_id": fid, "s": float(s), "t": float(t), "bin": int(bi),
                                 "defect": float(abs(mean)), "signed": float(mean),
                                 "stderr": float(se), "count": int(n), "low_power": bool(n < min_count)})
                    w = n / len(b)
                    tot_w += w
                    tot_d += w * abs(mean)
                    tot_se += w * se
                    signed.append(mean)
    summary = {"defect": tot_d / tot_w if tot_w else 0.0, "stderr": tot_se / tot_w if tot_w else 0.0,
               "signed_mean": float(np.mean(signed)) if signed else 0.0,
               "low_power_bins": int(sum(r["low_power"] for r in rows))}
    return {"rows": rows, "summary": summary, "quadratic_variation": qv_rows}


def fp_empirical_consistency(ens: SdeEnsemble, fp_path, t_checkpoints, space):
    """``max_f |mean f(x_t) - ⟨u_t, f⟩|`` over the dictionary per checkpoint."""
    rows = []
    for t in t_checkpoints:
        k = ens.index(t)
        j = int(np.argmin(np.abs(fp_path.times - t)))
        if abs(fp_path.times[j] - t) > 1e-9:
            raise ValueError(f"checkpoint {t} not on the Fokker-Planck grid")
        rows.append({"t": float(t), "dual_gap": dictionary_gap(space, ens.positions(k),
                                                               fp_path.densities[j])})
    return rows
