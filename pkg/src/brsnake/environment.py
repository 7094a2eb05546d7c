"""Random environments: i.i.d.-in-time spatial Gaussian fields on a lattice.

A field slice ``xi_k`` is one time-step of the environment: a Gaussian vector
on a spatial grid with mean ``nu/sqrt(n)``, covariance given by a kernel, and
values clipped to ``[-sqrt(n)/2, sqrt(n)/2]``.  The cumulative field
``B_s(x) = n^{-1/2} sum_{i<=floor(s*n)} xi_i(x)`` is the object driving the
exponential path functional; in the smooth mode it is built the other way
around, from increments of an explicitly sampled smooth Gaussian field.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.linalg import cholesky as _cholesky

__all__ = [
    "CovarianceKernel",
    "SpatialGrid",
    "EnvironmentConfig",
    "EnvironmentField",
    "branch_probabilities",
    "RandomFieldEnvironment",
    "DeterministicFieldEnvironment",
    "SmoothGaussianEnvironment",
    "field_from_smooth_increments",
    "dump_field_csv",
]

_CHOLESKY_JITTER = 1e-10


class KernelError(ValueError):
    """Kernel is not usable on the requested grid (not PSD after jitter)."""


class EnvironmentConfigError(ValueError):
    pass


@dataclass(frozen=True)
class CovarianceKernel:
    """Spatial covariance g(x, y).

    kind:
      * "zero"      -- g = 0 (deterministic field equal to its mean)
      * "constant"  -- g = gamma (perfect spatial correlation)
      * "sq_exp"    -- g = sigma2 * exp(-|x-y|^2 / (2 lam^2))
    """

    kind: str = "zero"
    gamma: float = 1.0
    sigma2: float = 1.0
    lam: float = 1.0

    def __post_init__(self):
        if self.kind not in ("zero", "constant", "sq_exp"):
            raise EnvironmentConfigError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "constant" and self.gamma < 0:
            raise EnvironmentConfigError("constant kernel needs gamma >= 0")
        if self.kind == "sq_exp" and (self.sigma2 <= 0 or self.lam <= 0):
            raise EnvironmentConfigError("sq_exp kernel needs sigma2, lam > 0")

    def __call__(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        y = np.atleast_2d(y)
        if self.kind == "zero":
            return np.zeros(max(x.shape[0], y.shape[0]))
        if self.kind == "constant":
            return np.full(max(x.shape[0], y.shape[0]), self.gamma)
        d2 = np.sum((x - y) ** 2, axis=-1)
        return self.sigma2 * np.exp(-d2 / (2.0 * self.lam**2))

    def gram(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(points)
        if self.kind == "zero":
            return np.zeros((len(pts), len(pts)))
        if self.kind == "constant":
            return np.full((len(pts), len(pts)), self.gamma)
        d2 = np.sum((pts[:, None, :] - pts[None, :, :]) ** 2, axis=-1)
        return self.sigma2 * np.exp(-d2 / (2.0 * self.lam**2))

    def diag_sup(self) -> float:
        """sup_x g(x, x); finite for every supported kernel."""
        if self.kind == "zero":
            return 0.0
        if self.kind == "constant":
            return self.gamma
        return self.sigma2

    @property
    def spatially_constant(self) -> bool:
        return self.kind in ("zero", "constant")

    def cholesky(self, points: np.ndarray) -> np.ndarray:
        """Lower Cholesky factor of the gram matrix, with jitter <= 1e-10."""
        gram = self.gram(points)
        jitter = 0.0
        for _ in range(3):
            try:
                return _cholesky(gram + jitter * np.eye(len(gram)), lower=True)
            except np.linalg.LinAlgError:
                jitter = _CHOLESKY_JITTER if jitter == 0.0 else jitter * 10
        # last attempt exceeded the allowed jitter
        raise KernelError("kernel gram matrix is not PSD within 1e-10 jitter")


@dataclass(frozen=True)
class SpatialGrid:
    """Regular lattice: per-axis origin, spacing and point count (d <= 3)."""

    origin: tuple = (0.0,)
    spacing: float = 1.0
    shape: tuple = (1,)

    def __post_init__(self):
        if len(self.origin) != len(self.shape):
            raise EnvironmentConfigError("origin and shape dimension mismatch")
        if len(self.shape) > 3:
            raise EnvironmentConfigError("grids supported for d <= 3 only")
        if any(s < 1 for s in self.shape):
            raise EnvironmentConfigError("grid needs >= 1 point per axis")
        if self.spacing <= 0:
            raise EnvironmentConfigError("grid spacing must be positive")

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def npoints(self) -> int:
        return int(np.prod(self.shape))

    def points(self) -> np.ndarray:
        axes = [
            self.origin[a] + self.spacing * np.arange(self.shape[a])
            for a in range(self.dim)
        ]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def nearest_index(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Flat indices of nearest nodes; ties round toward the lower index.

        Returns (indices, clamped_mask); out-of-extent points clamp to the
        boundary node.
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        idx = np.zeros(len(x), dtype=np.int64)
        clamped = np.zeros(len(x), dtype=bool)
        for a in range(self.dim):
            rel = (x[:, a] - self.origin[a]) / self.spacing
            # ceil(rel - 1/2): half-integers round down
            ia = np.ceil(rel - 0.5).astype(np.int64)
            clamped |= (ia < 0) | (ia > self.shape[a] - 1)
            ia = np.clip(ia, 0, self.shape[a] - 1)
            idx = idx * self.shape[a] + ia
        return idx, clamped


def _default_grid() -> SpatialGrid:
    return SpatialGrid(origin=(-10.0,), spacing=0.25, shape=(81,))


@dataclass
class EnvironmentConfig:
    """Parameters shared by every environment mode."""

    n: int
    mean_drift: float = 0.0  # nu; per-slice mean is nu/sqrt(n)
    dim: int = 1
    kernel: CovarianceKernel = field(default_factory=CovarianceKernel)
    grid: SpatialGrid = field(default_factory=_default_grid)
    mode: str = "random"  # random | deterministic | smooth
    clip_bound: Optional[float] = None  # default sqrt(n)/2

    def __post_init__(self):
        if self.n < 1:
            raise EnvironmentConfigError("scale parameter n must be >= 1")
        if self.mode not in ("random", "deterministic", "smooth"):
            raise EnvironmentConfigError(f"unknown mode {self.mode!r}")
        if self.grid.dim != self.dim:
            raise EnvironmentConfigError("grid dimension != config dimension")
        if self.grid.npoints < 1:
            raise EnvironmentConfigError("empty grid")

    @property
    def bound(self) -> float:
        return self.clip_bound if self.clip_bound is not None else math.sqrt(self.n) / 2.0

    @property
    def growth_rate(self) -> float:
        """Effective total-mass growth rate: mean drift plus half the diagonal sup."""
        return self.mean_drift + self.kernel.diag_sup() / 2.0


class EnvironmentField:
    """One time slice of the environment, evaluated on the grid."""

    def __init__(self, k: int, values: np.ndarray, grid: SpatialGrid):
        self.k = k
        self.values = np.asarray(values, dtype=float)
        self.grid = grid
        self.clamp_count = 0
        if not np.all(np.isfinite(self.values)):
            raise EnvironmentConfigError("field slice has non-finite values")

    def eval(self, x) -> np.ndarray:
        """Nearest-node evaluation; off-extent points clamp (counted)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        idx, clamped = self.grid.nearest_index(x)
        self.clamp_count += int(clamped.sum())
        return self.values[idx]

    def eval_one(self, x) -> float:
        return float(self.eval(np.atleast_2d(x))[0])


def branch_probabilities(xi_value: float, n: int) -> tuple[float, float]:
    """Up/down step probabilities (1/2 + xi/(4 sqrt n), 1/2 - xi/(4 sqrt n)).

    Requires |xi| <= sqrt(n)/2, which confines both probabilities to
    [3/8, 5/8].
    """
    if abs(xi_value) > math.sqrt(n) / 2.0 + 1e-12:
        raise ValueError(f"|xi|={abs(xi_value)} exceeds sqrt(n)/2 bound")
    shift = xi_value / (4.0 * math.sqrt(n))
    return 0.5 + shift, 0.5 - shift


class RandomFieldEnvironment:
    """i.i.d. Gaussian slices on a grid, sampled lazily and cached by index.

    The same object serves the forward particle system (slice per generation)
    and the snake (slice per lattice level); both index slices by an integer k
    and the slices are independent across k.
    """

    def __init__(self, config: EnvironmentConfig, rng: np.random.Generator):
        if config.mode != "random":
            raise EnvironmentConfigError("RandomFieldEnvironment needs mode='random'")
        self.config = config
        self.rng = rng
        self._points = config.grid.points()
        self._chol = None
        if config.kernel.kind == "sq_exp":
            self._chol = config.kernel.cholesky(self._points)
        self._slices: dict[int, EnvironmentField] = {}
        self._cum: dict[int, np.ndarray] = {0: np.zeros(config.grid.npoints)}
        self._clip_events = 0
        self._clip_draws = 0

    @property
    def n(self) -> int:
        return self.config.n

    @property
    def dim(self) -> int:
        return self.config.dim

    def sample_field_step(self, k: int) -> EnvironmentField:
        """Sample (or fetch) slice k: joint law N(nu/sqrt n, gram), then clip."""
        if k in self._slices:
            return self._slices[k]
        cfg = self.config
        mean = cfg.mean_drift / math.sqrt(cfg.n)
        m = cfg.grid.npoints
        if cfg.kernel.kind == "zero":
            vals = np.full(m, mean)
        elif cfg.kernel.kind == "constant":
            z = self.rng.standard_normal()
            vals = np.full(m, mean + math.sqrt(cfg.kernel.gamma) * z)
        else:
            z = self.rng.standard_normal(m)
            vals = mean + self._chol @ z
        b = cfg.bound
        self._clip_draws += m
        self._clip_events += int(np.sum((vals < -b) | (vals > b)))
        vals = np.clip(vals, -b, b)
        sl = EnvironmentField(k, vals, cfg.grid)
        self._slices[k] = sl
        return sl

    def clip_frequency(self) -> float:
        return self._clip_events / self._clip_draws if self._clip_draws else 0.0

    def xi(self, k: int, y) -> float:
        return self.sample_field_step(k).eval_one(y)

    def xi_many(self, k: int, ys: np.ndarray) -> np.ndarray:
        return self.sample_field_step(k).eval(ys)

    def cumulative(self, level: int, y) -> float:
        """B at lattice time level/n, nearest-node in space.

        Accumulation order is fixed (slice 1, then 2, ...) so repeated queries
        are bit-identical.
        """
        top = max(self._cum.keys())
        while top < level:
            sl = self.sample_field_step(top + 1)
            self._cum[top + 1] = self._cum[top] + sl.values / math.sqrt(self.config.n)
            top += 1
        if level < 0:
            return 0.0
        idx, _ = self.config.grid.nearest_index(np.atleast_2d(y))
        return float(self._cum[level][idx[0]])

    has_derivatives = False


class DeterministicFieldEnvironment:
    """User-supplied smooth B(t, x); slices are its lattice increments.

    Turns the asymptotic statements about the path functional into computable
    identities: xi_j(y)/sqrt(n) = B(j/n, y) - B((j-1)/n, y), evaluated
    analytically (no grid).  Optional grad/lap callables enable the drift term
    of the limit target.
    """

    def __init__(
        self,
        n: int,
        b_fn: Callable,
        grad_fn: Optional[Callable] = None,
        lap_fn: Optional[Callable] = None,
        dim: int = 1,
    ):
        self.n = int(n)
        self.dim = dim
        self._b = b_fn
        self._grad = grad_fn
        self._lap = lap_fn
        # B(0, .) must vanish: the cumulative field starts at zero
        probe = b_fn(0.0, np.zeros(dim) if dim > 1 else 0.0)
        if abs(float(np.asarray(probe))) > 1e-12:
            raise EnvironmentConfigError("deterministic field must satisfy B(0, .) = 0")

    @property
    def has_derivatives(self) -> bool:
        return self._grad is not None and self._lap is not None

    def b_value(self, t, y):
        return self._b(t, y)

    def b_grad(self, t, y):
        if self._grad is None:
            raise EnvironmentConfigError("deterministic field has no gradient callable")
        return self._grad(t, y)

    def b_lap(self, t, y):
        if self._lap is None:
            raise EnvironmentConfigError("deterministic field has no laplacian callable")
        return self._lap(t, y)

    @staticmethod
    def _scalar(v) -> float:
        return float(np.asarray(v).reshape(-1)[0])

    def xi(self, k: int, y) -> float:
        n = self.n
        return math.sqrt(n) * (
            self._scalar(self._b(k / n, y)) - self._scalar(self._b((k - 1) / n, y))
        )

    def xi_many(self, k: int, ys: np.ndarray) -> np.ndarray:
        n = self.n
        ys = np.asarray(ys)
        pts = ys if ys.ndim == 1 else ys[:, 0] if self.dim == 1 else ys
        return math.sqrt(n) * (self._b(k / n, pts) - self._b((k - 1) / n, pts))

    def cumulative(self, level: int, y) -> float:
        if level <= 0:
            return 0.0
        return self._scalar(self._b(level / self.n, y))


class SmoothGaussianEnvironment:
    """Gaussian field from a spectral construction with analytic derivatives.

    B(t, y) = nu*t + sigma*sqrt(2/M) * sum_j cos(w_j . y + phi_j) * beta_j(t),
    with frozen frequencies w_j ~ N(0, lam^{-2} I), phases phi_j ~ U[0, 2pi),
    and independent Brownian coefficients beta_j sampled on the lattice
    {j/n}.  For fixed (w, phi) the field is exactly Gaussian; its spatial
    covariance approximates the squared-exponential kernel with O(M^{-1/2})
    error.  Slices come from lattice increments with the |increment| < 1/2
    truncation indicator.
    """

    def __init__(
        self,
        n: int,
        kernel: CovarianceKernel,
        rng: np.random.Generator,
        mean_drift: float = 0.0,
        order: int = 64,
        dim: int = 1,
    ):
        if kernel.kind != "sq_exp":
            raise EnvironmentConfigError("smooth mode needs the sq_exp kernel")
        self.n = int(n)
        self.dim = dim
        self.kernel = kernel
        self.mean_drift = mean_drift
        self.order = order
        self._w = rng.standard_normal((order, dim)) / kernel.lam
        self._phi = rng.uniform(0.0, 2.0 * np.pi, order)
        self._amp = math.sqrt(kernel.sigma2) * math.sqrt(2.0 / order)
        self._beta = [np.zeros(order)]  # beta at lattice times 0, 1/n, 2/n, ...
        self._rng = rng

    def _beta_at(self, j: int) -> np.ndarray:
        while len(self._beta) <= j:
            step = self._rng.standard_normal(self.order) / math.sqrt(self.n)
            self._beta.append(self._beta[-1] + step)
        return self._beta[j]

    def _basis(self, y) -> np.ndarray:
        y = np.atleast_1d(np.asarray(y, dtype=float))
        if y.ndim == 1 and self.dim == 1:
            y = y[:, None]
        return np.cos(y @ self._w.T + self._phi)  # (npts, M)

    def smooth_value(self, j: int, y):
        """The smooth field at lattice time j/n (before truncation)."""
        base = self._basis(y) @ self._beta_at(j)
        out = self.mean_drift * (j / self.n) + self._amp * base
        return out if out.size > 1 else float(out[0])

    def xi(self, k: int, y) -> float:
        return float(self.xi_many(k, np.atleast_1d(y))[0])

    def xi_many(self, k: int, ys: np.ndarray) -> np.ndarray:
        n = self.n
        basis = self._basis(ys)
        inc = (
            self.mean_drift / n
            + self._amp * (basis @ (self._beta_at(k) - self._beta_at(k - 1)))
        )
        inc = np.where(np.abs(inc) < 0.5, inc, 0.0)
        return math.sqrt(n) * inc

    def cumulative(self, level: int, y) -> float:
        """Sum of truncated increments up to the level (fixed order)."""
        n = self.n
        tot = 0.0
        for j in range(1, level + 1):
            tot += self.xi(j, y) / math.sqrt(n)
        return tot

    @property
    def has_derivatives(self) -> bool:
        return True

    def b_value(self, t, y):
        j = int(round(t * self.n))
        return self.smooth_value(j, y)

    def b_grad(self, t, y):
        j = int(round(t * self.n))
        y1 = np.atleast_1d(np.asarray(y, dtype=float))
        if y1.ndim == 1 and self.dim == 1:
            y2 = y1[:, None]
        else:
            y2 = y1
        s = np.sin(y2 @ self._w.T + self._phi)  # (npts, M)
        g = -self._amp * (s * self._beta_at(j)) @ self._w  # (npts, dim)
        return g if g.shape[0] > 1 else g[0]

    def b_lap(self, t, y):
        j = int(round(t * self.n))
        c = self._basis(y)
        w2 = np.sum(self._w**2, axis=1)
        out = -self._amp * c @ (w2 * self._beta_at(j))
        return out if out.size > 1 else float(out[0])


def field_from_smooth_increments(env: SmoothGaussianEnvironment, j: int, ys) -> np.ndarray:
    """Slice j of the truncated-increment environment, evaluated at points ys."""
    if not isinstance(env, SmoothGaussianEnvironment):
        raise EnvironmentConfigError("smooth-increment slices need the smooth mode")
    return env.xi_many(j, np.asarray(ys))


def dump_field_csv(path, fields: list[EnvironmentField]):
    """CSV export with columns (k, grid_index, x..., value)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        dim = fields[0].grid.dim if fields else 1
        w.writerow(["k", "grid_index"] + [f"x{a}" for a in range(dim)] + ["value"])
        for sl in fields:
            pts = sl.grid.points()
            for i, (pt, v) in enumerate(zip(pts, sl.values)):
                w.writerow([sl.k, i] + [f"{c:.10g}" for c in pt] + [f"{v:.12g}"])
