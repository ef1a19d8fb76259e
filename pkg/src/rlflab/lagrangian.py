"""Particle flows of vector fields and the √|x| nonuniqueness study.

``integrate_flow`` advances particles with classical RK4 and carries the
Jacobian through the Liouville equation ``d/dt log J = div b(X)``.  The
√|x| example uses exact piecewise trajectories glued by a waiting-time
selection rule, so its push-forward statistics have closed-form oracles.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .fields import FlowField


@dataclass
class FlowMap:
    times: np.ndarray
    X: np.ndarray  # (K, M, d), unwrapped positions
    logJ: np.ndarray | None  # (K, M)
    x0: np.ndarray
    dt: float
    period: float | None = None
    flagged: np.ndarray | None = None  # particles clamped at a line boundary
    info: dict = field(default_factory=dict)

    @property
    def J(self):
        return None if self.logJ is None else np.exp(self.logJ)

    def index(self, t):
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"time {t} is not a checkpoint")
        return k

    def positions(self, t, wrap=True):
        x = self.X[self.index(t)]
        if wrap and self.period is not None:
            return np.mod(x, self.period)
        return x


def _rk4_step(field_, t, x, lj, dt, with_jac):
    def rhs(tt, xx):
        v = field_.velocity(tt, xx)
        dv = field_.divergence(tt, xx) if with_jac else None
        return v, dv

    k1, d1 = rhs(t, x)
    k2, d2 = rhs(t + dt / 2, x + dt / 2 * k1)
    k3, d3 = rhs(t + dt / 2, x + dt / 2 * k2)
    k4, d4 = rhs(t + dt, x + dt * k3)
    xn = x + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    ljn = lj + dt / 6 * (d1 + 2 * d2 + 2 * d3 + d4) if with_jac else lj
    return xn, ljn


def integrate_flow(field_: FlowField, T, dt, x0, save_every=1, jacobian=True):
    """RK4 flow of ``field_`` from particles ``x0`` of shape ``(M, d)``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    steps = int(round(T / dt))
    if abs(steps * dt - T) > 1e-9 * max(1.0, T):
        raise ValueError("T / dt must be an integer")
    x = np.array(x0, dtype=float).reshape(len(x0), -1)
    lj = np.zeros(len(x))
    lo, hi = getattr(field_, "bounds", (-np.inf, np.inf))
    flagged = np.zeros(len(x), dtype=bool)
    X, LJ, times = [x.copy()], [lj.copy()], [0.0]
    for k in range(steps):
        x, lj = _rk4_step(field_, k * dt, x, lj, dt, jacobian)
        if field_.L is None:
            out = (x < lo) | (x > hi)
            if out.any():
                flagged |= out.any(axis=1)
                x = np.clip(x, lo, hi)
        if not np.all(np.isfinite(x)):
            raise FloatingPointError(f"non-finite particle position at step {k}")
        if (k + 1) % save_every == 0 or k + 1 == steps:
            X.append(x.copy())
            LJ.append(lj.copy())
            times.append((k + 1) * dt)
    return FlowMap(np.array(times), np.array(X), np.array(LJ) if jacobian else None,
                   np.array(x0, dtype=float).reshape(len(x0), -1), dt, field_.L, flagged)


# ----------------------------------------------------------- interpolation
def trig_interpolate(space, f, points):
    """Evaluate the trigonometric interpolant of grid data at arbitrary points (1D torus)."""
    if space.d != 1:
        raise ValueError("trigonometric interpolation is implemented for d = 1")
    N, L = space.N, space.L
    fh = np.fft.rfft(f) / N
    k = np.arange(len(fh))
    w = np.full(len(fh), 2.0)
    w[0] = 1.0
    if N % 2 == 0:
        w[-1] = 1.0
    x = np.asarray(points, dtype=float).ravel()
    out = np.empty_like(x)
    for s in range(0, len(x), 8192):
        ph = np.exp(2j * np.pi / L * np.outer(x[s:s + 8192], k))
        out[s:s + 8192] = np.real(ph @ (w * fh))
    return out


def explicit_density_check(flowmap, u0, path, space):
    """``max |ū(x)/J(t,x) - u_t(X(t,x))|`` over checkpoints shared with ``path``.

    The flow must start at the grid points of the 1D torus ``space``.
    """
    if flowmap.logJ is None:
        raise ValueError("flow map carries no Jacobian")
    J = flowmap.J
    if np.any(J <= 0) or not np.all(np.isfinite(J)):
        raise FloatingPointError("non-positive Jacobian: flow not injective at this resolution")
    u0 = np.asarray(u0, dtype=float)
    rows = []
    for k, t in enumerate(flowmap.times):
        j = int(np.argmin(np.abs(path.times - t)))
        if abs(path.times[j] - t) > 1e-9:
            continue
        formula = u0 / J[k]
        solver = trig_interpolate(space, path.densities[j], flowmap.X[k][:, 0])
        rows.append((float(t), float(np.max(np.abs(formula - solver)))))
    return {"rows": rows, "residual": max(r for _, r in rows)}


def compressibility_bound(field_, T, dt, probe_points):
    """``exp(∫_0^T sup (div b)^- dt)`` with the sup taken over ``probe_points``."""
    steps = int(round(T / dt))
    total = 0.0
    for k in range(steps):
        div = field_.divergence((k + 0.5) * dt, probe_points)
        total += dt * float(np.max(np.maximum(-div, 0.0)))
    return math.exp(total)


def max_density_ratio(points, lo, hi, bins, reference_mass=1.0):
    """Largest ratio of empirical bin mass to the uniform reference bin mass on ``[lo, hi]``."""
    counts, _ = np.histogram(points, bins=bins, range=(lo, hi))
    frac = counts / len(points)
    return float(frac.max() / (reference_mass / bins))


# ------------------------------------------------------------ √|x| example
@dataclass(frozen=True)
class SelectionRule:
    """Waiting time ``T(c) ≥ 0`` at the origin for the trajectory started at ``-c²``.

    ``kind``: ``zero``, ``constant`` (``tau``), ``infinite`` or ``randomized``
    (i.i.d. draw from ``values`` with ``probs`` using ``seed``).
    """

    kind: str = "zero"
    tau: float = 1.0
    seed: int = 0
    values: tuple = (0.0, 1.0)
    probs: tuple = (0.5, 0.5)

    def waiting_times(self, c):
        c = np.asarray(c, dtype=float)
        if self.kind == "zero":
            return np.zeros_like(c)
        if self.kind == "constant":
            if self.tau < 0:
                raise ValueError("waiting time must be nonnegative")
            return np.full_like(c, self.tau)
        if self.kind == "infinite":
            return np.full_like(c, np.inf)
        if self.kind == "randomized":
            rng = np.random.default_rng(self.seed)
            return np.asarray(self.values, dtype=float)[rng.choice(len(self.values), size=c.shape,
                                                                   p=self.probs)]
        raise ValueError(f"unknown selection rule {self.kind!r}")


def sqrt_trajectory(c, T_wait, t):
    """Exact solution of ``x' = sqrt|x|`` from ``-c²`` waiting ``T_wait`` at the origin."""
    c = np.asarray(c, dtype=float)
    T_wait = np.broadcast_to(np.asarray(T_wait, dtype=float), c.shape)
    t = np.asarray(t, dtype=float)
    c_, T_, t_ = np.broadcast_arrays(c, T_wait, t[..., None] if t.ndim else t)
    out = np.zeros(c_.shape)
    before = t_ <= 2 * c_
    out[before] = -((t_[before] / 2 - c_[before]) ** 2)
    after = t_ > 2 * c_ + 2 * T_
    out[after] = (t_[after] / 2 - c_[after] - T_[after]) ** 2
    return out


def sqrt_particles(M, c_max=2.0):
    """Midpoint grid, uniform in Lebesgue measure on ``[-c_max², 0]``."""
    x = -c_max ** 2 * (np.arange(M) + 0.5) / M
    return x, np.sqrt(-x)


def sqrt_example_flow(selection: SelectionRule, T, dt, M, c_max=2.0):
    x0, c = sqrt_particles(M, c_max)
    Tw = selection.waiting_times(c)
    steps = int(round(T / dt))
    times = np.arange(steps + 1) * dt
    X = sqrt_trajectory(c, Tw, times)[..., None]
    fm = FlowMap(times, X, None, x0[:, None], dt, None)
    fm.info.update(c=c, waiting=Tw, c_max=c_max, reference_length=c_max ** 2)
    return fm


def atom_mass_oracle(selection_kind, t, bin_width, c_max=2.0, tau=1.0):
    """Closed-form Lebesgue fraction of ``{x : |X(t,x)| < bin_width/2}``.

    Covers the ``zero``, ``infinite`` and ``constant`` rules.
    """
    h = bin_width / 2
    r = math.sqrt(h)
    a = t / 2
    norm = c_max ** 2

    def interval_mass(lo, hi):
        lo, hi = max(lo, 0.0), min(hi, c_max)
        return max(hi * hi - lo * lo, 0.0) if hi > lo else 0.0

    if selection_kind == "zero":
        return interval_mass(a - r, a + r) / norm
    if selection_kind == "infinite":
        return interval_mass(0.0, a + r) / norm
    if selection_kind == "constant":
        # waiting particles have c in [a - τ, a]; moving ones within sqrt(h) of that window
        return interval_mass(a - tau - r, a + r) / norm
    raise ValueError(selection_kind)


def pushforward_ac_test(flowmap, t, bin_width, refinements=2):
    """Atom mass at the origin, histogram and maximal density ratio at time ``t``.

    The atom detector is re-run with the bin halved ``refinements`` times.
    """
    x = flowmap.positions(t)[:, 0]
    ref_len = flowmap.info.get("reference_length")
    ladder = []
    bw = bin_width
    for _ in range(refinements + 1):
        ladder.append((bw, float(np.mean(np.abs(x) < bw / 2))))
        bw /= 2
    if ref_len is not None:
        lo = -ref_len
        hi = max(float(x.max()), 0.0) + bin_width
    else:
        lo, hi = float(x.min()), float(x.max()) + bin_width
    bins = max(1, int(round((hi - lo) / bin_width)))
    counts, edges = np.histogram(x, bins=bins, range=(lo, lo + bins * bin_width))
    density = counts / (len(x) * bin_width)
    ref_density = 1.0 / ref_len if ref_len else 1.0 / (hi - lo)
    ratios = [b / a if a > 0 else 0.0 for (_, a), (_, b) in zip(ladder, ladder[1:])]
    return {"atom_mass_at_zero": ladder[0][1], "ladder": ladder, "halving_ratios": ratios,
            "density_histogram": (edges, density),
            "max_density_ratio": float(density.max() / ref_density)}


def selection_gap(rule_a, rule_b, T, dt, M, c_max=2.0, threshold=0.1):
    """Pathwise gap between two √|x| selections from the same initial points."""
    fa = sqrt_example_flow(rule_a, T, dt, M, c_max)
    fb = sqrt_example_flow(rule_b, T, dt, M, c_max)
    gap = np.max(np.abs(fa.X - fb.X)[..., 0], axis=0)
    return {"sup_gap": float(gap.max()), "fraction_above": float(np.mean(gap > threshold)),
            "threshold": threshold}


def rlf_pathwise_uniqueness_probe(field_, eps_list, M=1000, T=1.0, dt=0.02, x0=None, seed=0):
    """Compare rung ``(ε_k, dt/2^k)`` with ``(ε_{k+1}, dt/2^{k+1})`` pathwise.

    Returns ``sup_particles max_t |X - X'|`` per rung on shared checkpoints.
    """
    eps_list = [float(e) for e in eps_list]
    if any(a <= b for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("eps_list must be strictly decreasing")
    if x0 is None:
        rng = np.random.default_rng(seed)
        lo, hi = (0.0, field_.L) if field_.L is not None else (-1.0, 0.0)
        x0 = rng.uniform(lo, hi, size=(M, field_.d))
    flows = []
    for k, eps in enumerate(eps_list):
        h = dt / 2 ** k
        fm = integrate_flow(field_.mollify(eps) if eps > 0 else field_, T, h, x0,
                            save_every=2 ** k, jacobian=False)
        flows.append(fm)
    rows = []
    for k in range(len(flows) - 1):
        gap = float(np.max(np.abs(flows[k].X - flows[k + 1].X)))
        rows.append({"eps": eps_list[k], "eps_next": eps_list[k + 1], "gap": gap})
    return rows
