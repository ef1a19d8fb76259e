"""Lifting density paths to ensembles of trajectories, and path-space diagnostics.

A density path ``u_t`` of the continuity equation is lifted by mollifying
``b_t u_t`` and ``u_t`` with the heat kernel at time ``ε``, forming the
velocity ``b^ε = (b u)^ε / u^ε`` and following its flow from samples of
``ū m``.  The diagnostics compare time marginals with ``u_t``, check the
metric-speed identity, and measure whether paths split given their start.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import derivation as dv
from .fields import GridField
from .lagrangian import integrate_flow
from .parallel import map_blocks


@dataclass
class PathEnsemble:
    times: np.ndarray
    paths: np.ndarray  # (K, N, d), unwrapped
    weights: np.ndarray
    period: float | None = None
    provenance: dict = field(default_factory=dict)
    field: object = None

    @property
    def size(self):
        return self.paths.shape[1]

    def positions(self, k, wrap=True):
        x = self.paths[k]
        return np.mod(x, self.period) if (wrap and self.period is not None) else x

    def index(self, t):
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"time {t} is not a checkpoint")
        return k


def sample_density(space, u, N, seed):
    """``N`` samples of ``u m`` on the torus: categorical grid cell plus uniform jitter."""
    u = np.asarray(u, dtype=float)
    p = u * space.measure
    if np.any(u < 0) or not abs(p.sum() - 1.0) < 1e-8:
        raise ValueError("initial density must be a nonnegative probability density")
    p = p / p.sum()
    cdf = np.cumsum(p)
    h = space.L / space.N

    def draw(sl, rng):
        n = sl.stop - sl.start
        cell = np.minimum(np.searchsorted(cdf, rng.random(n), side="right"), space.n - 1)
        jitter = rng.uniform(-0.5, 0.5, size=(n, space.d)) * h
        return space.points[cell] + jitter

    return np.mod(np.concatenate(map_blocks(draw, N, seed)), space.L)


def mollified_velocity(space, b, u, t, eps):
    """``(b_t u)^ε / u^ε`` on the grid, shape ``(d, n)``."""
    comps = dv.components(space, b, t)
    ue = space.heat(u, eps)
    if np.any(ue <= 0):
        raise ValueError("mollified density is not positive")
    return np.stack([space.heat(c * u, eps) for c in comps]) / ue


def lift_solution(space, path, b, eps, N, seed, dt=None):
    """Ensemble of ``N`` flow lines of ``b^ε = (b u)^ε / u^ε`` started from ``ū m``.

    ``b`` is a torus derivation; ``dt`` is the flow step and checkpoint
    spacing (defaults to the path step).
    """
    if N < 1000:
        raise ValueError("ensembles need at least 1000 paths")
    slices = np.stack([mollified_velocity(space, b, u, t, eps)
                       for t, u in zip(path.times, path.densities)])
    fld = GridField(space, slices, path.times, eps=eps)
    x0 = sample_density(space, path.densities[0], N, seed)
    dt = path.times[1] - path.times[0] if dt is None else dt
    T = float(path.times[-1])
    fm = integrate_flow(fld, T, dt, x0, jacobian=False)
    return PathEnsemble(fm.times, fm.X, np.full(N, 1.0 / N), space.L,
                        {"eps": eps, "dt": dt, "seed": seed, "N": N}, fld)


def ensemble_from_flowmap(flowmap, provenance=None):
    N = flowmap.X.shape[1]
    return PathEnsemble(flowmap.times, flowmap.X, np.full(N, 1.0 / N), flowmap.period,
                        dict(provenance or {}))


# ---------------------------------------------------------- marginal checks
def circle_w1(samples, space, u, grid=1 << 14):
    """``W_1`` on the circle between samples and the cellwise-constant density ``u``."""
    L = space.L
    h = L / space.N
    mass = u * space.measure
    mass = mass / mass.sum()
    # in the shifted coordinate y = x + h/2, cell j covers [j h, (j + 1) h)
    ys = (np.arange(grid) + 0.5) * L / grid
    j = np.minimum((ys / h).astype(int), space.N - 1)
    cum = np.concatenate([[0.0], np.cumsum(mass)])
    F = cum[j] + (ys / h - j) * mass[j]
    shifted = np.sort(np.mod(np.asarray(samples) + h / 2, L))
    emp = np.searchsorted(shifted, ys, side="right") / len(shifted)
    D = emp - F
    return float(np.mean(np.abs(D - np.median(D))) * L)


def dictionary_gap(space, samples, u):
    """``max_f |mean f(samples) - ⟨u, f⟩|`` over the torus dictionary."""
    gaps = [abs(float(np.mean(mode.value(samples, space.L))) - float(space.inner(u, f)))
            for mode, f in zip(space.dictionary_modes, space.dictionary)]
    return max(gaps)


def marginal_consistency(ensemble, path, t_checkpoints, space):
    """Per-checkpoint discrepancy: circle ``W_1`` for d = 1, dictionary dual gap for d = 2."""
    rows = []
    for t in t_checkpoints:
        k = ensemble.index(t)
        j = int(np.argmin(np.abs(path.times - t)))
        if abs(path.times[j] - t) > 1e-9:
            raise ValueError(f"checkpoint {t} not on the density path grid")
        x = ensemble.positions(k)
        u = path.densities[j]
        if space.d == 1:
            rows.append({"t": float(t), "w1": circle_w1(x[:, 0], space, u),
                         "dual_gap": dictionary_gap(space, x, u)})
        else:
            rows.append({"t": float(t), "dual_gap": dictionary_gap(space, x, u)})
    return rows


# ------------------------------------------------------------ metric speed
def metric_speed_check(ensemble, b=None, space=None, metric="dictionary", max_paths=20000):
    """Forward-difference speed minus field speed along paths.

    ``metric="dictionary"`` uses ``sup_f |Δf(η)|/Δt`` against the dual norm
    ``sup_f |b·∇f(η)|`` over the torus dictionary; ``"euclidean"`` uses
    ``|Δη|/Δt`` against ``|b(η)|``.  ``b`` defaults to the ensemble's own field.
    """
    b = ensemble.field if b is None else b
    P = ensemble.paths[:, :max_paths]
    dts = np.diff(ensemble.times)
    devs = []
    for k, dt in enumerate(dts):
        x0, x1 = P[k], P[k + 1]
        vel = b.velocity(ensemble.times[k], x0)
        if metric == "euclidean":
            speed = np.linalg.norm(x1 - x0, axis=1) / dt
            fspeed = np.linalg.norm(vel, axis=1)
        else:
            L = ensemble.period
            modes = space.dictionary_modes
            speed = np.max([np.abs(m.value(x1, L) - m.value(x0, L)) for m in modes], axis=0) / dt
            fspeed = np.max([np.abs(np.sum(m.gradient(x0, L) * vel, axis=1)) for m in modes], axis=0)
        devs.append(speed - fspeed)
    devs = np.array(devs)
    return {"mean_abs_deviation": float(np.mean(np.abs(devs))),
            "max_abs_deviation": float(np.max(np.abs(devs))),
            "mean_deviation": float(np.mean(devs)), "metric": metric}


# ------------------------------------------------------------- no splitting
def _cell_index(x, lo, hi, bins):
    d = x.shape[1]
    idx = np.zeros(len(x), dtype=np.int64)
    for a in range(d):
        w = (hi[a] - lo[a]) / bins
        i = np.clip(np.floor((x[:, a] - lo[a]) / w).astype(np.int64), 0, bins - 1)
        idx = idx * bins + i
    return idx


def no_splitting_diagnostic(ensemble, t, initial_bins, target_bins, domain=None):
    """Concentration of ``η(t)`` within each initial bin of ``η(0)``.

    Returns per-bin ``max target mass / bin mass`` and their mass-weighted mean.
    ``domain`` is ``(lo, hi)`` per axis; the torus period is used by default.
    """
    k = ensemble.index(t)
    x0 = ensemble.positions(0)
    xt = ensemble.positions(k)
    d = x0.shape[1]
    if domain is None:
        if ensemble.period is None:
            raise ValueError("line ensembles need an explicit domain")
        lo, hi = [0.0] * d, [ensemble.period] * d
    else:
        lo, hi = [domain[0]] * d, [domain[1]] * d
    i0 = _cell_index(x0, lo, hi, initial_bins)
    it = _cell_index(xt, lo, hi, target_bins)
    nt = target_bins ** d
    pair = i0 * nt + it
    counts = np.bincount(pair)
    nz = np.nonzero(counts)[0]
    bins0 = nz // nt
    totals = np.bincount(i0)
    best = np.zeros(len(totals))
    np.maximum.at(best, bins0, counts[nz])
    used = totals > 0
    conc = best[used] / totals[used]
    weights = totals[used] / totals.sum()
    return {"concentration": float(np.sum(weights * conc)),
            "per_bin": conc, "bin_ids": np.nonzero(used)[0],
            "empty_bins": int(initial_bins ** d - used.sum()),
            "initial_bins": initial_bins, "target_bins": target_bins}
