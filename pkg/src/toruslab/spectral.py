"""Fourier-space differential and projection operators on flat tori.

Fields live on uniform periodic grids over [0, 2*pi)^d with a dual
representation: real node samples and complex Fourier coefficients.  The
forward transform divides by the total grid size, so coefficient 0 is the
spatial mean ("mean-is-coeff0" normalization).  Fractional powers of the
Laplacian are powers of -Lap, i.e. multiplication by |k|^(2p), which keeps
them real; integer powers carry the (-|k|^2)^p sign.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import ndimage

from .errors import NonZeroMean, WrongDimension

TWO_PI = 2.0 * np.pi

# Relative mean-mode tolerance for inverse/negative-power operators.
MEAN_MODE_TOL = 1e-10

# Integer taps and denominator of the centered cardinal B-spline DFT response
# used by evaluate_at; index = spline order.  Integer arithmetic keeps the
# zero-frequency response exactly 1, so constants interpolate bit-exactly.
_SPLINE_TAPS = {
    1: ((1,), 1),
    3: ((4, 1), 6),
    5: ((66, 26, 1), 120),
}


@dataclass(frozen=True)
class TorusGrid:
    """Uniform grid on the flat torus [0, 2*pi)^dim, same resolution per axis."""

    dim: int
    n: int

    def __post_init__(self):
        if self.dim not in (1, 2, 3, 4):
            raise ValueError(f"dim must be 1..4, got {self.dim}")
        if self.n < 8 or (self.n & (self.n - 1)) != 0:
            raise ValueError(f"n must be a power of two >= 8, got {self.n}")

    @property
    def shape(self):
        return (self.n,) * self.dim

    @property
    def size(self):
        return self.n ** self.dim

    @property
    def cell(self):
        """Grid spacing per axis."""
        return TWO_PI / self.n

    @cached_property
    def k1d(self):
        """Integer wavenumbers in FFT order: 0..n/2-1, -n/2..-1."""
        return np.fft.fftfreq(self.n, d=1.0 / self.n).astype(np.int64)

    def wavenumber(self, axis):
        """Wavenumbers along one axis, broadcast to the full grid shape."""
        shape = [1] * self.dim
        shape[axis] = self.n
        return self.k1d.reshape(shape)

    @cached_property
    def k_squared(self):
        total = np.zeros(self.shape)
        for ax in range(self.dim):
            total = total + self.wavenumber(ax).astype(float) ** 2
        return total

    @cached_property
    def dealias_mask(self):
        """2/3-rule mask: True on modes kept when forming quadratic products."""
        keep = np.ones(self.shape, dtype=bool)
        cut = self.n / 3.0
        for ax in range(self.dim):
            keep &= np.abs(self.wavenumber(ax)) < cut
        return keep

    @cached_property
    def nodes(self):
        """Node coordinate arrays, one (n,)*dim array per axis."""
        x = np.arange(self.n) * self.cell
        return tuple(np.meshgrid(*([x] * self.dim), indexing="ij"))


def _forward(values):
    return np.fft.fftn(values) / values.size


def _inverse(spectral):
    return np.fft.ifftn(spectral * spectral.size).real


class ScalarField:
    """Real periodic scalar field with cached dual spectral representation."""

    __slots__ = ("grid", "_values", "_spectral", "_interp")

    def __init__(self, grid, values=None, spectral=None):
        if values is None and spectral is None:
            raise ValueError("need values or spectral coefficients")
        self.grid = grid
        self._values = None if values is None else np.asarray(values, dtype=float)
        self._spectral = None if spectral is None else np.asarray(spectral, dtype=complex)
        for arr in (self._values, self._spectral):
            if arr is not None and arr.shape != grid.shape:
                raise ValueError(f"array shape {arr.shape} != grid shape {grid.shape}")
        self._interp = {}

    @classmethod
    def from_values(cls, grid, values):
        return cls(grid, values=values)

    @classmethod
    def from_spectral(cls, grid, spectral):
        return cls(grid, spectral=spectral)

    @classmethod
    def zeros(cls, grid):
        return cls(grid, values=np.zeros(grid.shape))

    @classmethod
    def from_function(cls, grid, fn):
        """Sample fn(*coordinate_arrays) at the grid nodes."""
        return cls(grid, values=np.asarray(fn(*grid.nodes), dtype=float))

    @property
    def values(self):
        if self._values is None:
            self._values = _inverse(self._spectral)
        return self._values

    @property
    def spectral(self):
        if self._spectral is None:
            self._spectral = _forward(self._values)
        return self._spectral

    def mean(self):
        return float(self.spectral[(0,) * self.grid.dim].real)

    def l2(self):
        """L2 norm over [0, 2*pi)^dim via Parseval."""
        return float(np.sqrt(TWO_PI ** self.grid.dim) * np.linalg.norm(self.spectral))

    def __add__(self, other):
        self._check_same_grid(other)
        return ScalarField(self.grid, values=self.values + other.values)

    def __sub__(self, other):
        self._check_same_grid(other)
        return ScalarField(self.grid, values=self.values - other.values)

    def __mul__(self, scalar):
        return ScalarField(self.grid, values=self.values * float(scalar))

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def _check_same_grid(self, other):
        if other.grid != self.grid:
            raise ValueError("fields live on different grids")

    def spline_coefficients(self, order=5, refine=4):
        """Spline coefficient array on a Fourier-refined grid (cached).

        The refined spectrum is divided by the B-spline DFT response per
        axis, so map_coordinates(..., prefilter=False) interpolates the
        underlying trigonometric polynomial.
        """
        key = (order, refine)
        if key not in self._interp:
            spec = pad_spectrum(self.spectral, refine * self.grid.n)
            m = spec.shape[0]
            taps, den = _SPLINE_TAPS[order]
            theta = TWO_PI * np.fft.fftfreq(m)
            response = (taps[0] + sum(2.0 * t * np.cos((j + 1) * theta)
                                      for j, t in enumerate(taps[1:]))) / den
            for ax in range(self.grid.dim):
                shape = [1] * self.grid.dim
                shape[ax] = m
                spec = spec / response.reshape(shape)
            self._interp[key] = np.fft.ifftn(spec * spec.size).real
        return self._interp[key]


class VectorField:
    """Tuple of scalar components sharing one grid."""

    __slots__ = ("components",)

    def __init__(self, components):
        components = tuple(components)
        if not components:
            raise ValueError("vector field needs at least one component")
        grid = components[0].grid
        if any(c.grid != grid for c in components):
            raise ValueError("components live on different grids")
        self.components = components

    @classmethod
    def from_arrays(cls, grid, arrays):
        return cls([ScalarField(grid, values=a) for a in arrays])

    @classmethod
    def from_spectra(cls, grid, spectra):
        return cls([ScalarField(grid, spectral=s) for s in spectra])

    @classmethod
    def zeros(cls, grid, dim=None):
        return cls([ScalarField.zeros(grid) for _ in range(dim or grid.dim)])

    @classmethod
    def constant(cls, grid, vector):
        return cls([ScalarField(grid, values=np.full(grid.shape, float(v)))
                    for v in vector])

    @property
    def grid(self):
        return self.components[0].grid

    @property
    def dim(self):
        return len(self.components)

    def values(self):
        """Stacked (dim, n, ..., n) array of node samples."""
        return np.stack([c.values for c in self.components])

    def spectra(self):
        return np.stack([c.spectral for c in self.components])

    def max_norm(self):
        return float(max(np.abs(c.values).max() for c in self.components))

    def l2(self):
        return float(np.sqrt(sum(c.l2() ** 2 for c in self.components)))

    def mean(self):
        return np.array([c.mean() for c in self.components])

    def __add__(self, other):
        return VectorField([a + b for a, b in zip(self.components, other.components)])

    def __sub__(self, other):
        return VectorField([a - b for a, b in zip(self.components, other.components)])

    def __mul__(self, scalar):
        return VectorField([c * scalar for c in self.components])

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0


@dataclass(frozen=True)
class HodgeParts:
    """Orthogonal pieces of a vector field: gradient + divergence-free + constant."""

    gradient_part: VectorField
    divfree_part: VectorField
    harmonic_part: VectorField


@dataclass(frozen=True)
class InertiaSpec:
    """Spectral multiplier (1 + alpha^2 |k|^2)^order defining the metric at the identity."""

    order: int = 0
    alpha: float = 1.0
    family: str = "bessel_power"

    def __post_init__(self):
        if self.order < 0:
            raise ValueError("inertia order must be >= 0")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.family not in ("identity", "bessel_power"):
            raise ValueError(f"unknown inertia family {self.family!r}")

    def symbol(self, grid, power=1.0):
        """Multiplier array for (A)^(order*power) on the given grid."""
        if self.family == "identity" or self.order == 0:
            return np.ones(grid.shape)
        return (1.0 + self.alpha ** 2 * grid.k_squared) ** (self.order * power)


def _zero_index(grid):
    return (0,) * grid.dim


def _require_zero_mean(f, what):
    norm = f.l2()
    if abs(f.spectral[_zero_index(f.grid)]) > MEAN_MODE_TOL * norm:
        raise NonZeroMean(f"{what} requires a zero-mean field "
                          f"(mean {f.mean():.3e}, norm {norm:.3e})")


def spectral_derivative(f, axis):
    """Partial derivative along one axis by multiplication with i*k."""
    if not 0 <= axis < f.grid.dim:
        raise ValueError(f"axis {axis} out of range for dim {f.grid.dim}")
    k = f.grid.wavenumber(axis)
    return ScalarField(f.grid, spectral=1j * k * f.spectral)


def laplacian(f):
    return ScalarField(f.grid, spectral=-f.grid.k_squared * f.spectral)


def inverse_laplacian(f):
    """Inverse Laplacian on the zero-mean subspace; zeroes the mean mode."""
    _require_zero_mean(f, "inverse_laplacian")
    k2 = f.grid.k_squared.copy()
    k2[_zero_index(f.grid)] = 1.0
    spec = f.spectral / (-k2)
    spec[_zero_index(f.grid)] = 0.0
    return ScalarField(f.grid, spectral=spec)


def fractional_laplacian(f, power):
    """Multiply mode k != 0 by |k|^(2*power); the mean mode is zeroed.

    Fractional powers are powers of -Lap, so fractional_laplacian(f, 0.5)
    applied twice equals -laplacian(f) on zero-mean fields.
    """
    if power < 0:
        _require_zero_mean(f, "fractional_laplacian with negative power")
    k2 = f.grid.k_squared.copy()
    k2[_zero_index(f.grid)] = 1.0
    spec = f.spectral * k2 ** power
    spec[_zero_index(f.grid)] = 0.0
    return ScalarField(f.grid, spectral=spec)


def apply_inertia(u, spec):
    """Apply the inertia operator to each component."""
    mult = spec.symbol(u.grid)
    return VectorField([ScalarField(u.grid, spectral=mult * c.spectral)
                        for c in u.components])


def solve_inertia(u, spec):
    """Invert the inertia operator on each component."""
    mult = spec.symbol(u.grid)
    return VectorField([ScalarField(u.grid, spectral=c.spectral / mult)
                        for c in u.components])


def apply_inertia_scalar(f, spec, power=1.0):
    """Inertia multiplier on a scalar field, with optional fractional power."""
    return ScalarField(f.grid, spectral=spec.symbol(f.grid, power) * f.spectral)


def hodge_decompose(u):
    """Split u into gradient + divergence-free + constant (harmonic) parts.

    The harmonic part is the componentwise mean; the remaining spectrum is
    projected mode by mode onto and against the wavevector direction.
    """
    grid = u.grid
    d = u.dim
    spectra = u.spectra()
    means = np.array([s[_zero_index(grid)].real for s in spectra])
    kvecs = np.stack([np.broadcast_to(grid.wavenumber(ax).astype(float), grid.shape)
                      for ax in range(d)])
    k2 = grid.k_squared.copy()
    k2[_zero_index(grid)] = 1.0
    udotk = np.einsum("a...,a...->...", spectra, kvecs)
    grad = kvecs * (udotk / k2)
    for ax in range(d):
        grad[ax][_zero_index(grid)] = 0.0
    divfree = spectra - grad
    for ax in range(d):
        divfree[ax][_zero_index(grid)] = 0.0
    return HodgeParts(
        gradient_part=VectorField.from_spectra(grid, grad),
        divfree_part=VectorField.from_spectra(grid, divfree),
        harmonic_part=VectorField.constant(grid, means),
    )


def leray_project(u):
    """Divergence-free part plus the harmonic (mean) part."""
    parts = hodge_decompose(u)
    return parts.divfree_part + parts.harmonic_part


def sobolev_norm(u, s):
    """Sobolev norm sqrt(sum (1+|k|^2)^s |u_hat|^2), normalized so s=0 is L2.

    Accepts a ScalarField or a VectorField (components summed).
    """
    components = u.components if isinstance(u, VectorField) else (u,)
    grid = components[0].grid
    weight = (1.0 + grid.k_squared) ** s
    total = 0.0
    for c in components:
        total += float(np.sum(weight * np.abs(c.spectral) ** 2))
    return float(np.sqrt(TWO_PI ** grid.dim * total))


def l2_inner(a, b):
    """L2 inner product over [0, 2*pi)^dim (componentwise sum for vectors)."""
    ac = a.components if isinstance(a, VectorField) else (a,)
    bc = b.components if isinstance(b, VectorField) else (b,)
    grid = ac[0].grid
    total = 0.0
    for x, y in zip(ac, bc):
        total += float(np.sum(np.conj(x.spectral) * y.spectral).real)
    return TWO_PI ** grid.dim * total


def perp_gradient(f):
    """Rotated gradient (-d2 f, d1 f) on the 2-torus."""
    if f.grid.dim != 2:
        raise WrongDimension("perp_gradient is defined on 2D grids only")
    return VectorField([-spectral_derivative(f, 1), spectral_derivative(f, 0)])


def rot(u):
    """Scalar curl d1 u2 - d2 u1 on the 2-torus."""
    if u.grid.dim != 2 or u.dim != 2:
        raise WrongDimension("rot is defined for 2-component fields on 2D grids")
    return spectral_derivative(u.components[1], 0) - spectral_derivative(u.components[0], 1)


def divergence(u):
    total = spectral_derivative(u.components[0], 0)
    for ax in range(1, u.dim):
        total = total + spectral_derivative(u.components[ax], ax)
    return total


def dealias(f):
    """Zero the top third of modes (2/3 rule)."""
    return ScalarField(f.grid, spectral=f.spectral * f.grid.dealias_mask)


def dealiased_product(f, g):
    """Pointwise product with 2/3-rule masking of inputs and output."""
    grid = f.grid
    mask = grid.dealias_mask
    a = _inverse(f.spectral * mask)
    b = _inverse(g.spectral * mask)
    return ScalarField(grid, spectral=_forward(a * b) * mask)


def pad_spectrum(spec, m):
    """Embed mean-is-coeff0 coefficients onto a finer m^dim grid.

    Nyquist planes are split half-and-half so the refined spectrum stays
    Hermitian and the refined samples interpolate the original ones.
    """
    n = spec.shape[0]
    if m == n:
        return spec.copy()
    if m < n:
        raise ValueError("refinement must not reduce resolution")
    d = spec.ndim
    c = np.fft.fftshift(spec)
    for ax in range(d):
        first = 0.5 * np.take(c, [0], axis=ax)
        c = np.concatenate([first, np.take(c, range(1, c.shape[ax]), axis=ax), first],
                           axis=ax)
    out = np.zeros((m,) * d, dtype=complex)
    lo = m // 2 - n // 2
    sl = tuple(slice(lo, lo + n + 1) for _ in range(d))
    out[sl] = c
    return np.fft.ifftshift(out)


def evaluate_at(f, points, scheme="spline", order=5, refine=4):
    """Periodic interpolation of f at arbitrary points.

    points: array-like of shape (m, dim) (or a single dim-tuple), reduced
    mod 2*pi per axis.  scheme "spline" uses a cardinal B-spline of the
    given order on a Fourier-refined grid; scheme "exact" evaluates the
    trigonometric sum directly and serves as the verification oracle.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[1] != f.grid.dim:
        raise ValueError(f"points must have {f.grid.dim} coordinates")
    pts = np.mod(pts, TWO_PI)
    if scheme == "exact":
        return _evaluate_exact(f, pts)
    if scheme != "spline":
        raise ValueError(f"unknown interpolation scheme {scheme!r}")
    coeffs = f.spline_coefficients(order=order, refine=refine)
    step = TWO_PI / coeffs.shape[0]
    coords = (pts / step).T
    return ndimage.map_coordinates(coeffs, coords, order=order,
                                   mode="grid-wrap", prefilter=False)


def _evaluate_exact(f, pts):
    grid = f.grid
    spec = f.spectral
    flat = spec.reshape(-1)
    kcols = np.stack([np.broadcast_to(grid.wavenumber(ax).astype(float), grid.shape).reshape(-1)
                      for ax in range(grid.dim)], axis=1)
    phases = np.exp(1j * pts @ kcols.T)
    return (phases @ flat).real
