"""Vector fields that can be sampled on a grid and evaluated at particles.

Torus presets are finite trigonometric series, so their heat regularisation,
divergence and point values are exact.  ``GridField`` wraps fields only known
on a torus grid (for instance the mollified velocity of a density path) and
evaluates them between grid points with periodic cubic splines.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

TWO_PI = 2 * np.pi


@dataclass(frozen=True)
class TrigSeries:
    """``const + Σ amp * sin/cos(2π k·x / L)`` on a torus of period ``L``."""

    terms: tuple = ()  # (amp, wavevector tuple, "sin"|"cos")
    const: float = 0.0

    def _phases(self, points, L):
        points = np.asarray(points, dtype=float)
        for amp, k, kind in self.terms:
            kv = TWO_PI * np.asarray(k, dtype=float) / L
            yield amp, kv, kind, points @ kv

    def value(self, points, L):
        points = np.asarray(points, dtype=float)
        out = np.full(points.shape[:-1], float(self.const))
        for amp, _, kind, ph in self._phases(points, L):
            out += amp * (np.sin(ph) if kind == "sin" else np.cos(ph))
        return out

    def gradient(self, points, L):
        points = np.asarray(points, dtype=float)
        out = np.zeros(points.shape)
        for amp, kv, kind, ph in self._phases(points, L):
            d = np.cos(ph) if kind == "sin" else -np.sin(ph)
            out += amp * d[..., None] * kv
        return out

    def laplacian(self, points, L):
        points = np.asarray(points, dtype=float)
        out = np.zeros(points.shape[:-1])
        for amp, kv, kind, ph in self._phases(points, L):
            out -= amp * float(kv @ kv) * (np.sin(ph) if kind == "sin" else np.cos(ph))
        return out

    def heat(self, t, L):
        terms = []
        for amp, k, kind in self.terms:
            kk = sum((TWO_PI * c / L) ** 2 for c in k)
            terms.append((amp * math.exp(-t * kk), k, kind))
        return TrigSeries(tuple(terms), self.const)

    def derivative(self, axis, L):
        terms = []
        for amp, k, kind in self.terms:
            c = TWO_PI * k[axis] / L
            if c == 0:
                continue
            if kind == "sin":
                terms.append((amp * c, k, "cos"))
            else:
                terms.append((-amp * c, k, "sin"))
        return TrigSeries(tuple(terms), 0.0)

    def min_value_bound(self):
        return self.const - sum(abs(a) for a, _, _ in self.terms)


class FlowField:
    """Common interface: ``velocity(t, x)`` and ``divergence(t, x)`` for ``x`` of shape ``(M, d)``."""

    d = 1
    L = None  # period; None for the real line
    eps = 0.0

    def velocity(self, t, x):
        raise NotImplementedError

    def divergence(self, t, x):
        raise NotImplementedError

    def grid_components(self, space, t=0.0):
        return self.velocity(t, space.points).T.copy()

    def mollify(self, eps):
        raise NotImplementedError

    def knots(self):
        return ()


@dataclass(frozen=True)
class TrigField(FlowField):
    """Analytic torus field with one :class:`TrigSeries` per component."""

    components: tuple
    L: float = TWO_PI
    eps: float = 0.0
    name: str = "trig"

    @property
    def d(self):
        return len(self.components)

    def velocity(self, t, x):
        x = np.asarray(x, dtype=float)
        return np.stack([c.value(x, self.L) for c in self.components], axis=-1)

    def divergence(self, t, x):
        x = np.asarray(x, dtype=float)
        return sum(c.gradient(x, self.L)[..., i] for i, c in enumerate(self.components))

    def mollify(self, eps):
        comps = tuple(c.heat(eps, self.L) for c in self.components)
        return replace(self, components=comps, eps=self.eps + eps)

    def scaled(self, factor):
        comps = tuple(TrigSeries(tuple((a * factor, k, kind) for a, k, kind in c.terms),
                                 c.const * factor) for c in self.components)
        return replace(self, components=comps)

    def divergence_negative_sup(self):
        """Upper bound for ``sup (div b)^-`` from the series coefficients."""
        total = 0.0
        for i, c in enumerate(self.components):
            total += sum(abs(a) * abs(TWO_PI * k[i] / self.L) for a, k, _ in c.terms)
        return total


@dataclass(frozen=True)
class PiecewiseField(FlowField):
    """Piecewise-constant-in-time field: ``fields[i]`` is active on ``[knots[i], knots[i+1])``."""

    knot_times: tuple
    fields: tuple
    eps: float = 0.0

    @property
    def d(self):
        return self.fields[0].d

    @property
    def L(self):
        return self.fields[0].L

    def active(self, t):
        i = int(np.searchsorted(self.knot_times, t, side="right")) - 1
        return self.fields[min(max(i, 0), len(self.fields) - 1)]

    def velocity(self, t, x):
        return self.active(t).velocity(t, x)

    def divergence(self, t, x):
        return self.active(t).divergence(t, x)

    def mollify(self, eps):
        return PiecewiseField(self.knot_times, tuple(f.mollify(eps) for f in self.fields),
                              self.eps + eps)

    def knots(self):
        return tuple(self.knot_times[1:])


class GridField(FlowField):
    """Torus field known on the grid at a sequence of times (linear in time).

    ``slices`` has shape ``(K, d, n)``; a single slice gives a static field.
    """

    def __init__(self, space, slices, times=None, eps=0.0):
        slices = np.asarray(slices, dtype=float)
        if slices.ndim == 2:
            slices = slices[None]
        self.space = space
        self.d = space.d
        self.L = space.L
        self.eps = eps
        self.times = np.zeros(1) if times is None else np.asarray(times, dtype=float)
        shape = space.shape
        self._coef = [np.stack([ndimage.spline_filter(s[i].reshape(shape), order=3, mode="grid-wrap")
                                for i in range(self.d)]) for s in slices]
        divs = [space.divergence_of(s) for s in slices]
        self._div = [ndimage.spline_filter(v.reshape(shape), order=3, mode="grid-wrap") for v in divs]
        self.slices = slices

    def _interp(self, coef, x):
        h = self.L / self.space.N
        coords = (np.mod(np.asarray(x, dtype=float), self.L) / h).T
        return ndimage.map_coordinates(coef, coords, order=3, mode="grid-wrap", prefilter=False)

    def _weights(self, t):
        if len(self.times) == 1:
            return 0, 0, 0.0
        j = int(np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, len(self.times) - 2))
        lam = (t - self.times[j]) / (self.times[j + 1] - self.times[j])
        return j, j + 1, float(np.clip(lam, 0.0, 1.0))

    def velocity(self, t, x):
        j0, j1, lam = self._weights(t)
        v0 = np.stack([self._interp(c, x) for c in self._coef[j0]], axis=-1)
        if lam == 0.0:
            return v0
        v1 = np.stack([self._interp(c, x) for c in self._coef[j1]], axis=-1)
        return (1 - lam) * v0 + lam * v1

    def divergence(self, t, x):
        j0, j1, lam = self._weights(t)
        d0 = self._interp(self._div[j0], x)
        if lam == 0.0:
            return d0
        return (1 - lam) * d0 + lam * self._interp(self._div[j1], x)

    def grid_components(self, space, t=0.0):
        j0, j1, lam = self._weights(t)
        return (1 - lam) * self.slices[j0] + lam * self.slices[j1]

    def mollify(self, eps):
        new = np.stack([np.stack([self.space.heat(c, eps) for c in s]) for s in self.slices])
        return GridField(self.space, new, self.times, self.eps + eps)


@dataclass(frozen=True)
class LineField(FlowField):
    """Autonomous field on the real line, optionally Gaussian-mollified at heat time ``eps``.

    The mollified field ``E f(x + sqrt(2 eps) Z)`` is integrated piecewise
    between the known non-smooth points ``kinks`` with a cosine change of
    variables, so square-root type kinks are resolved to near machine
    precision.  Its derivative uses Stein's identity and never evaluates a
    singular ``dfn``.
    """

    fn: object
    dfn: object
    eps: float = 0.0
    name: str = "line"
    bounds: tuple = (-np.inf, np.inf)
    kinks: tuple = ()
    quad_order: int = 20
    L = None
    d = 1

    _RANGE = 10.0

    def _gauss_average(self, x, stein):
        sig = math.sqrt(2 * self.eps)
        R = self._RANGE
        kinks = (np.asarray(self.kinks, dtype=float)[None, :] - x[:, None]) / sig
        fixed = np.broadcast_to(np.array([-R, -4.0, 0.0, 4.0, R]), (len(x), 5))
        edges = np.sort(np.concatenate([fixed, np.clip(kinks, -R, R)], axis=1), axis=1)
        a, b = edges[:, :-1, None], edges[:, 1:, None]
        s, w = np.polynomial.legendre.leggauss(self.quad_order)
        s, w = 0.5 * (s + 1), 0.5 * w
        # z = a + (b - a)(1 - cos πs)/2 clusters nodes quadratically at both segment ends
        z = a + (b - a) * 0.5 * (1 - np.cos(np.pi * s))
        dz = (b - a) * 0.5 * np.pi * np.sin(np.pi * s)
        phi = np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)
        base = self.fn(x)
        # subtracting f(x) keeps the integrand O(σ) near the centre
        vals = (self.fn(x[:, None, None] + sig * z) - base[:, None, None]) * phi * dz
        if stein:
            return np.sum(vals * z * w, axis=(1, 2)) / sig
        return base + np.sum(vals * w, axis=(1, 2))

    def _eval(self, g, x, stein):
        x = np.asarray(x, dtype=float)[..., 0]
        if self.eps == 0:
            return g(x)
        flat = x.reshape(-1)
        return self._gauss_average(flat, stein).reshape(x.shape)

    def velocity(self, t, x):
        return self._eval(self.fn, x, stein=False)[..., None]

    def divergence(self, t, x):
        return self._eval(self.dfn, x, stein=True)

    def mollify(self, eps):
        return replace(self, eps=self.eps + eps)


# ------------------------------------------------------------------ presets
def _s(*terms, const=0.0):
    return TrigSeries(tuple(terms), const)


def zero_field(d=1, L=TWO_PI):
    return TrigField(tuple(_s() for _ in range(d)), L, name="zero")


def constant_field(v, L=TWO_PI):
    return TrigField(tuple(_s(const=float(c)) for c in v), L, name="constant")


def shear_field(L=TWO_PI, amplitude=1.0):
    """``(A sin y, 0)``: divergence free, non-trivial deformation."""
    return TrigField((_s((amplitude, (0, 1), "sin")), _s()), L, name="shear")


def rotation_field(L=TWO_PI, amplitude=1.0):
    """Cellular rotation ``(-∂_y ψ, ∂_x ψ)`` with ``ψ = A sin x sin y``."""
    # -∂yψ = -A sin x cos y = -A/2 [sin(x+y) + sin(x-y)]; ∂xψ = A cos x sin y = A/2 [sin(x+y) - sin(x-y)]
    a = amplitude / 2
    return TrigField((_s((-a, (1, 1), "sin"), (-a, (1, -1), "sin")),
                      _s((a, (1, 1), "sin"), (-a, (1, -1), "sin"))), L, name="rotation")


def checkerboard_field(K, L=TWO_PI, amplitude=1.0):
    """Oscillatory divergence-free cells from ``ψ = A sin(Kx) sin(Ky) / K``."""
    a = amplitude / 2
    return TrigField((_s((-a, (K, K), "sin"), (-a, (K, -K), "sin")),
                      _s((a, (K, K), "sin"), (-a, (K, -K), "sin"))), L, name=f"checkerboard{K}")


def compressive_field(L=TWO_PI, amplitude=1.0):
    """1D field ``-A sin x`` which contracts mass toward ``x = 0``."""
    return TrigField((_s((-amplitude, (1,), "sin")),), L, name="compressive")


def gradient_field(V, d, L=TWO_PI):
    """``∇V`` for a scalar :class:`TrigSeries` ``V``."""
    return TrigField(tuple(V.derivative(i, L) for i in range(d)), L, name="gradient")


def sqrt_abs_field(eps=0.0, bounds=(-4.0, 4.0)):
    """``x' = sqrt|x|`` on the line (non-Lipschitz at the origin)."""
    fn = lambda x: np.sqrt(np.abs(x))
    dfn = lambda x: np.sign(x) / (2 * np.sqrt(np.maximum(np.abs(x), 1e-300)))
    return LineField(fn, dfn, eps=eps, name="sqrt-abs", bounds=bounds, kinks=(0.0,))


FIELD_PRESETS = ("zero", "constant", "shear", "rotation", "checkerboard",
                 "compressive", "gradient", "sqrt-abs")


def field_from_config(cfg, d=1, L=TWO_PI):
    """Build a field from a ``[field]`` config mapping."""
    kind = cfg.get("kind", "zero")
    amp = float(cfg.get("amplitude", 1.0))
    if kind == "zero":
        f = zero_field(d, L)
    elif kind == "constant":
        f = constant_field(cfg.get("velocity", [1.0] * d), L)
    elif kind == "shear":
        f = shear_field(L, amp)
    elif kind == "rotation":
        f = rotation_field(L, amp)
    elif kind == "checkerboard":
        f = checkerboard_field(int(cfg.get("frequency", 8)), L, amp)
    elif kind == "compressive":
        f = compressive_field(L, amp)
    elif kind == "gradient":
        V = TrigSeries(tuple((float(a), tuple(k), kind_) for a, k, kind_ in cfg["potential"]))
        f = gradient_field(V, d, L)
    elif kind == "sqrt-abs":
        return sqrt_abs_field(float(cfg.get("eps", 0.0)))
    else:
        raise ValueError(f"unknown field preset {kind!r}")
    knots = cfg.get("knots")
    if knots:
        # alternate the preset with its negative on successive knot intervals
        pieces = tuple(f.scaled((-1.0) ** i) for i in range(len(knots)))
        f = PiecewiseField(tuple(float(k) for k in knots), pieces)
    eps = float(cfg.get("eps", 0.0))
    return f.mollify(eps) if eps > 0 else f
