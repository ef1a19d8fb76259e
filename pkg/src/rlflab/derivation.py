"""Derivations (abstract vector fields) on a :class:`~rlflab.space.Space`.

Three static kinds are supported: the gradient derivation ``f -> Γ(V, f)``,
a torus field acting by ``b·∇f``, and a graph flow with antisymmetric edge
coefficients acting by ``Σ_y c(x,y) (f(y) - f(x)) / m(x)``.  Time dependence
is piecewise constant through :class:`PiecewiseDerivation`.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .space import GRAPH, TORUS, SpaceError


class Derivation:
    kind = "abstract"

    def at(self, t):
        return self

    def knots(self):
        return ()


@dataclass(frozen=True, eq=False)
class GradientDerivation(Derivation):
    V: np.ndarray
    kind = "gradient"


@dataclass(frozen=True, eq=False)
class TorusDerivation(Derivation):
    """``components`` has shape ``(d, n)``; ``field`` optionally keeps the analytic source."""

    components: np.ndarray
    field: object = None
    kind = "torus_field"


@dataclass(frozen=True, eq=False)
class GraphDerivation(Derivation):
    coefficients: np.ndarray
    kind = "graph_flow"


@dataclass(frozen=True, eq=False)
class PiecewiseDerivation(Derivation):
    """``pieces[i]`` is active on ``[knot_times[i], knot_times[i+1])``."""

    knot_times: tuple
    pieces: tuple
    kind = "piecewise"

    def index(self, t):
        i = int(np.searchsorted(self.knot_times, t, side="right")) - 1
        return min(max(i, 0), len(self.pieces) - 1)

    def at(self, t):
        return self.pieces[self.index(t)]

    def knots(self):
        return tuple(self.knot_times[1:])


def zero_derivation(space):
    if space.kind == GRAPH:
        return GraphDerivation(np.zeros((space.n, space.n)))
    return TorusDerivation(np.zeros((space.d, space.n)))


def graph_flow(space, coefficients, atol=0.0):
    """Validate antisymmetry and edge support of graph flow coefficients."""
    if space.kind != GRAPH:
        raise SpaceError("graph flows need a graph space")
    C = np.asarray(coefficients, dtype=float)
    if C.shape != (space.n, space.n):
        raise SpaceError(f"coefficients must be {space.n}x{space.n}")
    if np.max(np.abs(C + C.T), initial=0.0) > atol:
        raise SpaceError("flow coefficients must be antisymmetric")
    if np.any((C != 0) & (space.weights == 0)):
        raise SpaceError("flow coefficients must be supported on edges")
    return GraphDerivation(C)


def torus_field(space, components, field=None):
    if space.kind != TORUS:
        raise SpaceError("torus fields need a torus space")
    comps = np.atleast_2d(np.asarray(components, dtype=float))
    if comps.shape != (space.d, space.n):
        raise SpaceError(f"components must have shape {(space.d, space.n)}")
    return TorusDerivation(comps, field)


def from_field(space, fld):
    """Sample a :mod:`rlflab.fields` field on the torus grid."""
    from .fields import PiecewiseField

    if isinstance(fld, PiecewiseField):
        pieces = tuple(torus_field(space, f.grid_components(space), f) for f in fld.fields)
        return PiecewiseDerivation(tuple(fld.knot_times), pieces)
    return torus_field(space, fld.grid_components(space), fld)


def load_graph_flow(space, path):
    """Read a CSV ``x,y,c`` (one orientation per edge) into a graph flow."""
    C = np.zeros((space.n, space.n))
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().startswith("#") or not row[0].strip().lstrip("-").isdigit():
                continue
            x, y, c = int(row[0]), int(row[1]), float(row[2])
            C[x, y] = c
            C[y, x] = -c
    return graph_flow(space, C)


def _check(space, b):
    if isinstance(b, GraphDerivation) and space.kind != GRAPH:
        raise SpaceError("graph flow applied on a torus space")
    if isinstance(b, TorusDerivation) and space.kind != TORUS:
        raise SpaceError("torus field applied on a graph space")
    if isinstance(b, GradientDerivation):
        space.check(b.V, "potential")
    return b


def gradient_flow_coefficients(space, V):
    """Edge coefficients ``½ w(x,y) (V(y) - V(x))`` of the gradient derivation on a graph."""
    V = np.asarray(V, dtype=float)
    return 0.5 * space.weights * (V[None, :] - V[:, None])


def flow_coefficients(space, b, t=0.0):
    b = _check(space, b.at(t))
    if isinstance(b, GradientDerivation):
        return gradient_flow_coefficients(space, b.V)
    return b.coefficients


def components(space, b, t=0.0):
    b = _check(space, b.at(t))
    if isinstance(b, GradientDerivation):
        return space.gradient(b.V)
    return b.components


# ------------------------------------------------------------------ action
def apply(space, b, f, t=0.0):
    """``b_t(f)``; ``f`` may carry leading batch axes."""
    b = _check(space, b.at(t))
    f = space.check(f)
    if isinstance(b, GradientDerivation):
        return space.gamma(b.V, f)
    if space.kind == TORUS:
        grad = space.gradient(f)
        return np.einsum("i...n,in->...n", grad, b.components)
    C = b.coefficients
    return (f @ C.T - C.sum(axis=1) * f) / space.measure


def operator_matrix(space, b, t=0.0):
    """Matrix ``B`` with ``B @ f == b(f)``: dense on graphs, sparse on the torus."""
    if space.kind == GRAPH:
        C = flow_coefficients(space, b, t)
        return (C - np.diag(C.sum(axis=1))) / space.measure[:, None]
    comps = components(space, b, t)
    mats = space.gradient_matrices()
    return sum(sp.diags(c) @ D for c, D in zip(comps, mats)).tocsr()


def divergence(space, b, t=0.0):
    """Exact adjoint divergence: ``∫ b(f) dm = -∫ (div b) f dm``."""
    if space.kind == GRAPH:
        C = flow_coefficients(space, b, t)
        return 2.0 * C.sum(axis=1) / space.measure
    return space.divergence_of(components(space, b, t))


def divergence_of_product(space, b, v, t=0.0):
    """``div(v b)``, the adjoint of ``f -> v b(f)``."""
    v = space.check(v)
    if space.kind == GRAPH:
        B = operator_matrix(space, b, t)
        m = space.measure
        return -((v * m) @ B) / m
    comps = components(space, b, t)
    prod = comps.reshape((space.d,) + (1,) * (v.ndim - 1) + (space.n,)) * v
    return space.divergence_of(prod)


def pointwise_norm(space, b, t=0.0):
    """``|b|``: exact on the torus, dictionary lower bound on graphs."""
    bt = _check(space, b.at(t))
    if space.kind == TORUS:
        comps = components(space, bt)
        return np.sqrt(np.sum(comps ** 2, axis=0))
    F = space.dictionary
    bf = np.abs(apply(space, bt, F))
    g = space.gamma(F)
    ratio = np.where(g > 1e-14, bf / np.sqrt(np.maximum(g, 1e-300)), 0.0)
    return ratio.max(axis=0)


def dual_norm(space, b, t=0.0):
    """``sup_{f in dictionary} |b(f)|`` pointwise."""
    return np.abs(apply(space, b, space.dictionary, t)).max(axis=0)


def dsym_pairing(space, b, f, g, t=0.0):
    """Weak deformation ``-½ ∫ [b(f) Δg + b(g) Δf - div b Γ(f, g)] dm``."""
    bf, bg = apply(space, b, f, t), apply(space, b, g, t)
    lf, lg = space.laplacian(f), space.laplacian(g)
    div = divergence(space, b, t)
    return -0.5 * space.integrate(bf * lg + bg * lf - div * space.gamma(f, g))


def leibniz_defect(space, b, f, g, t=0.0):
    """``max |b(fg) - f b(g) - g b(f)|``."""
    f, g = space.check(f), space.check(g)
    d = apply(space, b, f * g, t) - f * apply(space, b, g, t) - g * apply(space, b, f, t)
    return float(np.max(np.abs(d)))


@dataclass
class DeformationReport:
    samples: list
    estimate: float
    divergence_l2: float
    divergence_linf: float
    leibniz_defect: float | None
    argmax: tuple = ()
    bound_kind: str = "lower"
    skipped: int = 0

    def as_dict(self):
        return {"estimate": self.estimate, "divergence_l2": self.divergence_l2,
                "divergence_linf": self.divergence_linf, "leibniz_defect": self.leibniz_defect,
                "bound_kind": self.bound_kind, "pairs": len(self.samples), "skipped": self.skipped}


def dsym_norm_estimate(space, b, t=0.0, trials=16, seed=0):
    """Lower bound for ``‖D^sym b‖_2`` from dictionary pairs and random pairs."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    F = space.dictionary
    labels = [f"dict{i}" for i in range(len(F))]
    R = space.random_observable(rng, 2 * trials)
    obs = np.concatenate([F, R])
    labels += [f"rand{i}" for i in range(2 * trials)]
    pairs = [(i, j) for i in range(len(F)) for j in range(i, len(F))]
    pairs += [(len(F) + 2 * k, len(F) + 2 * k + 1) for k in range(trials)]

    bo = apply(space, b, obs, t)
    lo = space.laplacian(obs)
    div = divergence(space, b, t)
    g4 = np.array([space.lp_norm(np.sqrt(np.maximum(space.gamma(o), 0.0)), 4) for o in obs])
    samples, best, arg, skipped = [], 0.0, (), 0
    for i, j in pairs:
        if g4[i] <= 1e-14 or g4[j] <= 1e-14:
            skipped += 1
            continue
        val = -0.5 * space.integrate(bo[i] * lo[j] + bo[j] * lo[i] - div * space.gamma(obs[i], obs[j]))
        samples.append((labels[i], labels[j], float(val)))
        r = abs(val) / (g4[i] * g4[j])
        if r > best:
            best, arg = float(r), (labels[i], labels[j])
    lk = None
    if space.kind == GRAPH:
        lk = max(leibniz_defect(space, b, obs[i], obs[j], t) for i, j in pairs[:64])
    return DeformationReport(samples, best, float(space.lp_norm(div, 2)),
                             float(np.max(np.abs(div))), lk, arg, "lower", skipped)


# -------------------------------------------------------------- projections
def project_divergence_free(space, b, t=0.0):
    """Remove the gradient part: ``b - ∇φ`` with ``Δφ = div b``."""
    div = divergence(space, b, t)
    if space.kind == GRAPH:
        C = flow_coefficients(space, b, t)
        L = space.laplacian_matrix()
        phi = np.linalg.lstsq(L, div - space.integrate(div), rcond=None)[0]
        return GraphDerivation(C - gradient_flow_coefficients(space, phi))
    comps = components(space, b, t)
    kd2 = sum(k * k for k in space._kd)
    dh = space._fft(div)
    with np.errstate(divide="ignore", invalid="ignore"):
        phih = np.where(kd2 > 0, -dh / kd2, 0.0)
    grad = np.stack([space._ifft(1j * k * phih) for k in space._kd])
    return TorusDerivation(comps - grad)


def random_divergence_free_flow(space, rng, scale=1.0):
    """Random divergence-free graph flow with ``max|c| / w`` of order ``scale``."""
    W = space.weights
    R = rng.normal(size=W.shape)
    C = np.triu(R, 1) * W
    C = C - C.T
    b = project_divergence_free(space, GraphDerivation(C))
    C = b.coefficients
    mx = np.max(np.abs(C))
    return GraphDerivation(C * (scale / mx if mx > 0 else 0.0))
