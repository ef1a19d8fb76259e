"""Finite diffusion spaces.

Two backends share one interface:

* ``graph``: a weighted graph with a positive probability measure ``m``.  The
  generator is ``(Δf)(x) = Σ_y w(x,y)/m(x) (f(y) - f(x))`` and the carré du
  champ is ``Γ(f,g)(x) = ½ Σ_y w(x,y)/m(x) (f(y)-f(x))(g(y)-g(x))``.  The heat
  semigroup is evaluated exactly through a symmetric eigendecomposition that is
  computed once at construction.
* ``torus``: a periodic grid in dimension 1 or 2 with the uniform measure.  The
  generator is the spectral Laplacian, ``Γ(f,g) = ∇f·∇g`` with spectral
  derivatives, and ``P_t`` is the Fourier multiplier ``exp(-t|k|²)``.

Observables are plain ``numpy`` arrays whose last axis indexes states (torus
grids are flattened in C order).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

GRAPH = "graph"
TORUS = "torus"

DEFAULT_DICTIONARY_SIZE = 32


class SpaceError(ValueError):
    """Raised for invalid space configurations or mismatched observables."""


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TrigMode:
    """Dictionary entry ``scale * sin(k·x)`` or ``scale * cos(k·x)`` on the torus."""

    wavevector: tuple
    kind: str  # "sin" or "cos"
    scale: float

    def _phase(self, points, L):
        k = 2 * np.pi * np.asarray(self.wavevector, dtype=float) / L
        return np.asarray(points) @ k, k

    def value(self, points, L):
        ph, _ = self._phase(points, L)
        return self.scale * (np.sin(ph) if self.kind == "sin" else np.cos(ph))

    def gradient(self, points, L):
        ph, k = self._phase(points, L)
        d = np.cos(ph) if self.kind == "sin" else -np.sin(ph)
        return self.scale * d[..., None] * k

    def laplacian(self, points, L):
        ph, k = self._phase(points, L)
        return -float(k @ k) * self.value(points, L)


class Space:
    """A finite diffusion space (graph or torus backend).

    Build instances with :func:`graph_space`, :func:`torus_space` or
    :func:`construct_space`; the constructor is not part of the public API.
    All cached arrays are read-only.
    """

    def __init__(self, kind, measure, *, weights=None, d=None, N=None, L=None,
                 dictionary_size=DEFAULT_DICTIONARY_SIZE, seed=0):
        self.kind = kind
        self.measure = _frozen(measure)
        self.n = self.measure.size
        self.seed = seed
        self.weights = None if weights is None else _frozen(weights)
        self.d, self.N, self.L = d, N, L
        if kind == GRAPH:
            self._init_graph()
        else:
            self._init_torus()
        self.dictionary_modes = ()
        self.dictionary = _frozen(self._build_dictionary(dictionary_size))

    # ------------------------------------------------------------------ setup
    def _init_graph(self):
        W, m = self.weights, self.measure
        self.degree = _frozen(W.sum(axis=1))
        iu, ju = np.nonzero(W)
        self._edges = (iu, ju, W[iu, ju])
        sq = np.sqrt(m)
        S = (W - np.diag(self.degree)) / np.outer(sq, sq)
        S = 0.5 * (S + S.T)
        lam, U = np.linalg.eigh(S)
        lam = np.minimum(lam, 0.0)
        lam[np.argmax(lam)] = 0.0
        self.eigenvalues = _frozen(lam)
        # columns are m-orthonormal eigenfunctions
        self.eigenfunctions = _frozen(U / sq[:, None])

    def _init_torus(self):
        N, d, L = self.N, self.d, self.L
        self.shape = (N,) * d
        k1 = 2 * np.pi / L * np.fft.fftfreq(N, 1.0 / N)
        kr = 2 * np.pi / L * np.fft.rfftfreq(N, 1.0 / N)
        axes = [k1] * (d - 1) + [kr]
        grids = np.meshgrid(*axes, indexing="ij")
        self._k = [g.copy() for g in grids]
        self._k2 = sum(g * g for g in grids)
        # first derivatives drop the Nyquist mode (its derivative vanishes on the grid)
        k_nyq = np.pi * N / L
        self._kd = []
        for g in grids:
            kd = g.copy()
            if N % 2 == 0:
                kd[np.abs(np.abs(kd) - k_nyq) < 1e-9 * k_nyq] = 0.0
            self._kd.append(kd)
        h = L / N
        axes_x = [np.arange(N) * h] * d
        mesh = np.meshgrid(*axes_x, indexing="ij")
        self.points = _frozen(np.stack([c.ravel() for c in mesh], axis=-1))

    def _build_dictionary(self, size):
        rng = np.random.default_rng(self.seed)
        if self.kind == TORUS:
            return self._torus_dictionary(size)
        n = self.n
        n_ind = min(n, max(1, size // 2))
        entries = [np.eye(n)[i] for i in range(n_ind)]
        phi, lam = self.eigenfunctions, self.eigenvalues
        order = np.argsort(-lam)[1:]  # drop the constant
        nk = min(len(order), 8)
        while len(entries) < size and nk > 0:
            coef = rng.normal(size=nk) / np.sqrt(1.0 + np.abs(lam[order[:nk]]))
            entries.append(phi[:, order[:nk]] @ coef)
        out = []
        for f in entries:
            g = self.gamma(f).max()
            if g > 0:
                out.append(f / math.sqrt(g))
        return np.array(out)

    def _torus_dictionary(self, size):
        N, d = self.N, self.d
        kmax = (N - 1) // 2
        if d == 1:
            cand = [(k,) for k in range(1, kmax + 1)]
        else:
            cand = [(a, b) for a in range(0, kmax + 1) for b in range(-kmax, kmax + 1)
                    if (a > 0 or b > 0)]
            cand.sort(key=lambda k: (k[0] ** 2 + k[1] ** 2, k))
        modes = []
        for k in cand:
            knorm = 2 * np.pi / self.L * math.sqrt(sum(c * c for c in k))
            for kind in ("sin", "cos"):
                modes.append(TrigMode(tuple(int(c) for c in k), kind, 1.0 / knorm))
            if len(modes) >= size:
                break
        modes = modes[:size]
        self.dictionary_modes = tuple(modes)
        return np.array([mode.value(self.points, self.L) for mode in modes])

    # --------------------------------------------------------------- checks
    def check(self, f, name="observable"):
        f = np.asarray(f, dtype=float)
        if f.shape[-1] != self.n:
            raise SpaceError(f"{name} has {f.shape[-1]} states, space has {self.n}")
        return f

    # ------------------------------------------------------------ torus FFT
    def _to_grid(self, f):
        return f.reshape(f.shape[:-1] + self.shape)

    def _from_grid(self, g):
        return g.reshape(g.shape[: g.ndim - self.d] + (self.n,))

    def _fft(self, f):
        axes = tuple(range(-self.d, 0))
        return np.fft.rfftn(self._to_grid(f), axes=axes)

    def _ifft(self, fh):
        axes = tuple(range(-self.d, 0))
        return self._from_grid(np.fft.irfftn(fh, s=self.shape, axes=axes))

    def gradient(self, f):
        """Spectral gradient on the torus, shape ``(d, ..., n)``."""
        if self.kind != TORUS:
            raise SpaceError("gradient is only defined on the torus backend")
        fh = self._fft(self.check(f))
        return np.stack([self._ifft(1j * kd * fh) for kd in self._kd])

    def divergence_of(self, components):
        """Spectral divergence ``Σ_i ∂_i v_i`` of a grid vector field."""
        comps = np.asarray(components, dtype=float)
        out = np.zeros(comps.shape[1:])
        for kd, c in zip(self._kd, comps):
            out = out + self._ifft(1j * kd * self._fft(c))
        return out

    # ------------------------------------------------------------- calculus
    def laplacian(self, f):
        f = self.check(f)
        if self.kind == GRAPH:
            return (f @ self.weights.T - self.degree * f) / self.measure
        return self._ifft(-self._k2 * self._fft(f))

    def gamma(self, f, g=None):
        """Carré du champ ``Γ(f, g)``; ``Γ(f)`` when ``g`` is omitted."""
        f = self.check(f)
        g = f if g is None else self.check(g)
        if self.kind == TORUS:
            gf = np.moveaxis(self.gradient(f), 0, -1)
            gg = gf if g is f else np.moveaxis(self.gradient(g), 0, -1)
            return np.sum(gf * gg, axis=-1)
        i, j, w = self._edges
        df = f[..., j] - f[..., i]
        dg = df if g is f else g[..., j] - g[..., i]
        vals = 0.5 * w * df * dg
        if vals.ndim == 1:
            out = np.bincount(i, weights=vals, minlength=self.n)
        else:
            flat = vals.reshape(-1, vals.shape[-1])
            out = np.array([np.bincount(i, weights=r, minlength=self.n) for r in flat])
            out = out.reshape(vals.shape[:-1] + (self.n,))
        return out / self.measure

    def heat(self, f, t):
        """Heat semigroup ``P_t f``."""
        if t < 0:
            raise SpaceError("heat flow time must be nonnegative")
        f = self.check(f)
        if t == 0:
            return f.copy()
        if self.kind == GRAPH:
            phi = self.eigenfunctions
            coef = (f * self.measure) @ phi
            return (coef * np.exp(t * self.eigenvalues)) @ phi.T
        return self._ifft(np.exp(-t * self._k2) * self._fft(f))

    # ------------------------------------------------------ integrals/norms
    def integrate(self, f):
        return np.asarray(f) @ self.measure

    def inner(self, f, g):
        return self.integrate(np.asarray(f) * np.asarray(g))

    def energy(self, f, g=None):
        """Dirichlet form ``ℰ(f, g) = ∫ Γ(f, g) dm``."""
        return self.integrate(self.gamma(f, g))

    def lp_norm(self, f, p):
        f = np.abs(self.check(f))
        p = float(p)
        if p < 1:
            raise SpaceError("p must lie in [1, inf]")
        if math.isinf(p):
            return f.max(axis=-1)
        return self.integrate(f ** p) ** (1.0 / p)

    def vp_norm(self, f, p):
        """``‖f‖_2 + ‖Γ(f)‖_{p/2}`` (the ``p/2`` 'norm' is a plain power mean)."""
        f = self.check(f)
        p = float(p)
        q = p / 2.0
        g = np.abs(self.gamma(f))
        gn = g.max(axis=-1) if math.isinf(q) else self.integrate(g ** q) ** (1.0 / q)
        return self.lp_norm(f, 2) + gn

    # ------------------------------------------------------------- sampling
    def random_observable(self, rng, size=None):
        """Random test observable(s): iid normal on graphs, band-limited on the torus."""
        shape = () if size is None else (size,)
        if self.kind == GRAPH:
            return rng.normal(size=shape + (self.n,))
        kcut = max(1, self.N // 4)
        cplx = rng.normal(size=shape + self._k2.shape) + 1j * rng.normal(size=shape + self._k2.shape)
        mask = np.ones(self._k2.shape, dtype=bool)
        for kk in self._k:
            mask &= np.abs(kk) * self.L / (2 * np.pi) <= kcut + 1e-9
        fh = cplx * mask / (1.0 + self._k2)
        return self._ifft(fh * self.n)

    # ------------------------------------------------------- matrix forms
    def laplacian_matrix(self):
        """Generator as a matrix acting on column vectors (dense graph, sparse torus)."""
        if self.kind == GRAPH:
            return (self.weights - np.diag(self.degree)) / self.measure[:, None]
        D2 = _spectral_matrix(self.N, self.L, order=2)
        return _kron_sum([D2] * self.d)

    def gradient_matrices(self):
        if self.kind != TORUS:
            raise SpaceError("gradient matrices exist only on the torus backend")
        D1 = _spectral_matrix(self.N, self.L, order=1)
        eye = sp.identity(self.N, format="csr")
        mats = []
        for a in range(self.d):
            factors = [eye] * self.d
            factors[a] = sp.csr_matrix(D1)
            m = factors[0]
            for fct in factors[1:]:
                m = sp.kron(m, fct, format="csr")
            mats.append(m)
        return mats

    def describe(self):
        out = {"kind": self.kind, "states": self.n}
        if self.kind == TORUS:
            out.update(d=self.d, N=self.N, L=self.L)
        out["dictionary"] = int(self.dictionary.shape[0])
        return out


def _spectral_matrix(N, L, order):
    eye = np.eye(N)
    k = 2 * np.pi / L * np.fft.rfftfreq(N, 1.0 / N)
    if order == 1:
        mult = 1j * k
        if N % 2 == 0:
            mult[-1] = 0.0
    else:
        mult = -(k ** 2)
    cols = np.fft.irfft(mult[:, None] * np.fft.rfft(eye, axis=0), n=N, axis=0)
    return cols


def _kron_sum(mats):
    N = mats[0].shape[0]
    eye = sp.identity(N, format="csr")
    total = None
    for a, M in enumerate(mats):
        factors = [eye] * len(mats)
        factors[a] = sp.csr_matrix(M)
        m = factors[0]
        for fct in factors[1:]:
            m = sp.kron(m, fct, format="csr")
        total = m if total is None else total + m
    return total.tocsr()


# ---------------------------------------------------------------- builders
def graph_space(weights, measure=None, *, dictionary_size=DEFAULT_DICTIONARY_SIZE, seed=0):
    """Weighted-graph Dirichlet space.

    ``weights`` must be symmetric, nonnegative, with zero diagonal and a
    connected support.  ``measure`` defaults to uniform and is normalised to a
    probability vector.
    """
    W = np.array(weights, dtype=float)
    if W.ndim != 2 or W.shape[0] != W.shape[1] or W.shape[0] < 2:
        raise SpaceError("weights must be a square matrix with at least 2 states")
    if not np.array_equal(W, W.T):
        raise SpaceError("weights must be exactly symmetric")
    if (W < 0).any():
        raise SpaceError("weights must be nonnegative")
    if np.any(np.diag(W) != 0):
        raise SpaceError("weights must have zero diagonal")
    ncomp, _ = connected_components(sp.csr_matrix(W > 0), directed=False)
    if ncomp != 1:
        raise SpaceError("graph is disconnected; the semigroup would not be irreducible")
    n = W.shape[0]
    m = np.full(n, 1.0 / n) if measure is None else np.array(measure, dtype=float)
    if m.shape != (n,) or (m <= 0).any():
        raise SpaceError("measure must be a positive vector of length n")
    m = m / m.sum()
    return Space(GRAPH, m, weights=W, dictionary_size=dictionary_size, seed=seed)


def torus_space(N, d=1, L=2 * np.pi, *, dictionary_size=DEFAULT_DICTIONARY_SIZE, seed=0):
    """Periodic grid ``(R/LZ)^d`` with ``N`` points per axis and uniform measure."""
    if d not in (1, 2):
        raise SpaceError("torus dimension must be 1 or 2")
    if N < 8:
        raise SpaceError("torus grid needs N >= 8")
    if L <= 0:
        raise SpaceError("period must be positive")
    n = N ** d
    return Space(TORUS, np.full(n, 1.0 / n), d=d, N=int(N), L=float(L),
                 dictionary_size=dictionary_size, seed=seed)


GRAPH_GENERATORS = ("two-state", "path", "cycle", "complete", "random")


def generate_weights(name, n, seed=0, density=0.3):
    """Named weight generators used by configs and scenarios."""
    rng = np.random.default_rng(seed)
    if name == "two-state":
        return np.array([[0.0, 1.0], [1.0, 0.0]])
    W = np.zeros((n, n))
    if name in ("path", "cycle"):
        for i in range(n - 1):
            W[i, i + 1] = W[i + 1, i] = 1.0
        if name == "cycle" and n > 2:
            W[0, n - 1] = W[n - 1, 0] = 1.0
        return W
    if name == "complete":
        return np.ones((n, n)) - np.eye(n)
    if name == "random":
        # random spanning tree plus extra edges keeps the graph connected
        perm = rng.permutation(n)
        for a in range(1, n):
            b = perm[rng.integers(0, a)]
            W[perm[a], b] = W[b, perm[a]] = rng.uniform(0.5, 1.5)
        extra = np.triu(rng.uniform(size=(n, n)) < density, 1)
        vals = rng.uniform(0.5, 1.5, size=(n, n))
        W = np.where(extra & (W == 0), vals, W)
        W = np.triu(W, 1)
        return W + W.T
    raise SpaceError(f"unknown graph generator {name!r}")


def load_edge_list(path, n=None):
    """Read a CSV edge list ``x,y,w`` into a symmetric weight matrix."""
    rows = np.loadtxt(path, delimiter=",", ndmin=2, comments="#")
    if rows.size and not np.isfinite(rows).all():
        raise SpaceError("non-finite entries in edge list")
    idx = rows[:, :2].astype(int)
    size = int(idx.max()) + 1 if n is None else int(n)
    W = np.zeros((size, size))
    for (x, y), w in zip(idx, rows[:, 2]):
        W[x, y] = W[y, x] = w
    return W


def construct_space(config):
    """Build a :class:`Space` from a ``[space]`` config mapping."""
    kind = config.get("kind", GRAPH)
    seed = int(config.get("seed", 0))
    size = int(config.get("dictionary_size", DEFAULT_DICTIONARY_SIZE))
    if kind == TORUS:
        return torus_space(int(config.get("N", 64)), int(config.get("d", 1)),
                           float(config.get("L", 2 * np.pi)), dictionary_size=size, seed=seed)
    if kind != GRAPH:
        raise SpaceError(f"unknown space kind {kind!r}")
    if "weights_file" in config:
        W = load_edge_list(config["weights_file"], config.get("n"))
    else:
        W = generate_weights(config.get("generator", "random"), int(config.get("n", 16)), seed)
    measure = config.get("measure", "uniform")
    if isinstance(measure, str):
        if measure == "uniform":
            measure = None
        elif measure == "random":
            measure = np.random.default_rng(seed + 1).uniform(0.5, 1.5, W.shape[0])
        else:
            raise SpaceError(f"unknown measure preset {measure!r}")
    return graph_space(W, measure, dictionary_size=size, seed=seed)


def carre_du_champ(space, f, g):
    return space.gamma(f, g)


def heat_flow(space, f, t):
    return space.heat(f, t)


def lp_norm(space, f, p):
    return space.lp_norm(f, p)


def vp_norm(space, f, p):
    return space.vp_norm(f, p)


def chain_rule_defect(space, f, eta, deta):
    """``max |Γ(η∘f) - η'(f)² Γ(f)|``; vanishes spectrally on the torus, not on graphs."""
    f = space.check(f)
    return float(np.max(np.abs(space.gamma(eta(f)) - deta(f) ** 2 * space.gamma(f))))


@dataclass(frozen=True)
class GammaInequalityEstimate:
    """Empirical lower bound for the constant of the ``L^p``-Γ inequality."""

    p: float
    constant: float
    argmax_label: str
    argmax_t: float
    samples: int = 0
    ratios: dict = field(default_factory=dict, compare=False)


def gamma_inequality_estimate(space, p, t_grid, trials=8, seed=0):
    """Maximise ``√t ‖√Γ(P_t f)‖_p / ‖f‖_p`` over dictionary and random observables.

    Candidates are scanned in a fixed order (dictionary first), so ties go to the
    lowest dictionary index.  The result is a lower bound for ``c_p``.
    """
    t_grid = [float(t) for t in t_grid]
    if not t_grid:
        raise SpaceError("t_grid must not be empty")
    if any(t <= 0 or t > 1 for t in t_grid):
        raise SpaceError("t_grid must lie in (0, 1]")
    if trials < 1:
        raise SpaceError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    cands = [(f"dict[{i}]", f) for i, f in enumerate(space.dictionary)]
    cands += [(f"random[{i}]", space.random_observable(rng)) for i in range(trials)]
    best, label, t_best, count = 0.0, "", t_grid[0], 0
    for name, f in cands:
        fn = space.lp_norm(f, p)
        if fn == 0:
            continue
        for t in t_grid:
            g = np.sqrt(np.maximum(space.gamma(space.heat(f, t)), 0.0))
            r = math.sqrt(t) * space.lp_norm(g, p) / fn
            count += 1
            if r > best:
                best, label, t_best = float(r), name, t
    return GammaInequalityEstimate(float(p), best, label, t_best, count)
