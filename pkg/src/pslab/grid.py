"""Uniform spatial grids, the unitary discrete Fourier map, and mixed norms.

The position grid on each axis is ``x_j = -L + j*h`` with ``h = 2L/n`` and the
dual grid is ``xi_k = -pi/h + k*(pi/L)``, so frequencies cover ``[-pi/h, pi/h)``.
All transforms approximate the continuous Fourier transform with the unitary
convention

    F[f](xi) = (2*pi)^(-d/2) * integral exp(-i<x, xi>) f(x) dx,

which every other module inherits.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

POSITION = "position"
FREQUENCY = "frequency"


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class GridSpec:
    """Uniform periodic grid on [-L, L)^d with a matched dual grid."""

    dimension: int
    extent: float        # half-extent L per axis
    points: int          # points per axis, power of two

    def __post_init__(self):
        if self.dimension not in (1, 2, 3):
            raise ValueError(f"dimension must be 1, 2, or 3, got {self.dimension}")
        if self.extent <= 0:
            raise ValueError(f"half-extent must be positive, got {self.extent}")
        if not _is_power_of_two(self.points) or self.points < 8:
            raise ValueError(f"points per axis must be a power of two >= 8, got {self.points}")

    @property
    def spacing(self) -> float:
        return 2.0 * self.extent / self.points

    @property
    def dual_spacing(self) -> float:
        return np.pi / self.extent

    @property
    def dual_extent(self) -> float:
        """Nyquist frequency pi/h; dual nodes cover [-pi/h, pi/h)."""
        return np.pi / self.spacing

    @property
    def volume_element(self) -> float:
        return self.spacing ** self.dimension

    @property
    def dual_volume_element(self) -> float:
        return self.dual_spacing ** self.dimension

    @property
    def shape(self) -> tuple:
        return (self.points,) * self.dimension

    def axis_points(self) -> np.ndarray:
        """1-d array of position nodes along one axis."""
        return -self.extent + self.spacing * np.arange(self.points)

    def axis_frequencies(self) -> np.ndarray:
        """1-d array of dual nodes along one axis (ascending)."""
        return -self.dual_extent + self.dual_spacing * np.arange(self.points)

    def meshgrid(self) -> list:
        """Position coordinate arrays, broadcastable to ``shape``."""
        x = self.axis_points()
        return list(np.meshgrid(*([x] * self.dimension), indexing="ij"))

    def dual_meshgrid(self) -> list:
        xi = self.axis_frequencies()
        return list(np.meshgrid(*([xi] * self.dimension), indexing="ij"))


def make_grid(dimension: int, extent: float, points: int) -> GridSpec:
    """Build a grid; rejects non-power-of-two point counts and L <= 0."""
    return GridSpec(dimension=dimension, extent=float(extent), points=int(points))


@dataclass
class ComplexField:
    """Sampled complex field on a grid, tagged position or frequency."""

    grid: GridSpec
    values: np.ndarray
    representation: str = POSITION

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.complex128)
        if self.values.shape != self.grid.shape:
            raise ValueError(
                f"value shape {self.values.shape} does not match grid shape {self.grid.shape}")
        if self.representation not in (POSITION, FREQUENCY):
            raise ValueError(f"unknown representation tag {self.representation!r}")

    def copy(self) -> "ComplexField":
        return ComplexField(self.grid, self.values.copy(), self.representation)

    def __mul__(self, c) -> "ComplexField":
        return ComplexField(self.grid, self.values * c, self.representation)

    __rmul__ = __mul__

    def __add__(self, other: "ComplexField") -> "ComplexField":
        _check_compatible(self, other)
        return ComplexField(self.grid, self.values + other.values, self.representation)

    def __sub__(self, other: "ComplexField") -> "ComplexField":
        _check_compatible(self, other)
        return ComplexField(self.grid, self.values - other.values, self.representation)


def _check_compatible(f: ComplexField, g: ComplexField):
    if f.grid != g.grid:
        raise ValueError("fields live on different grids")
    if f.representation != g.representation:
        raise ValueError("fields carry different representation tags")


def _forward_phases(grid: GridSpec):
    """Per-axis phase vectors turning the raw DFT into the centered transform.

    With x_j = x0 + j*h and xi_k = xi0 + k*dxi,
        F_k = (h/sqrt(2*pi)) * exp(-i*x0*xi_k) * DFT[f_j * exp(-i*j*h*xi0)]_k
    and j*h*xi0 = -pi*j, so the input twiddle is just (-1)^j.
    """
    n = grid.points
    j = np.arange(n)
    xi = grid.axis_frequencies()
    pre = np.where(j % 2 == 0, 1.0, -1.0).astype(np.complex128)
    post = np.exp(-1j * (-grid.extent) * xi) * (grid.spacing / np.sqrt(2.0 * np.pi))
    return pre, post


def to_frequency(f: ComplexField) -> ComplexField:
    """Unitary map from position samples to dual-grid samples of f-hat."""
    if f.representation != POSITION:
        raise ValueError("to_frequency expects a position-representation field")
    grid = f.grid
    pre, post = _forward_phases(grid)
    out = f.values
    for axis in range(grid.dimension):
        shape = [1] * grid.dimension
        shape[axis] = grid.points
        out = np.fft.fft(out * pre.reshape(shape), axis=axis) * post.reshape(shape)
    return ComplexField(grid, out, FREQUENCY)


def to_position(f: ComplexField) -> ComplexField:
    """Inverse of :func:`to_frequency` (exact on the grid)."""
    if f.representation != FREQUENCY:
        raise ValueError("to_position expects a frequency-representation field")
    grid = f.grid
    pre, post = _forward_phases(grid)
    out = f.values
    for axis in range(grid.dimension):
        shape = [1] * grid.dimension
        shape[axis] = grid.points
        # invert: divide the post phase, inverse DFT, divide the pre twiddle
        out = np.fft.ifft(out / post.reshape(shape), axis=axis) / pre.reshape(shape)
    return ComplexField(grid, out, POSITION)


def inner_product(f: ComplexField, g: ComplexField) -> complex:
    """<f, g> = sum f * conj(g) * h^d (volume element of the active representation)."""
    _check_compatible(f, g)
    w = f.grid.volume_element if f.representation == POSITION else f.grid.dual_volume_element
    return complex(np.vdot(g.values, f.values) * w)


def mass(f: ComplexField) -> float:
    """M[f] = <f, f> = sum |f|^2 * h^d."""
    w = f.grid.volume_element if f.representation == POSITION else f.grid.dual_volume_element
    return float(np.sum(np.abs(f.values) ** 2) * w)


def norm(f: ComplexField) -> float:
    return float(np.sqrt(mass(f)))


def lp_norm(f: ComplexField, p: float) -> float:
    """Spatial L^p norm by Riemann sum; p = inf takes the grid maximum."""
    a = np.abs(f.values)
    w = f.grid.volume_element if f.representation == POSITION else f.grid.dual_volume_element
    if np.isinf(p):
        return float(a.max())
    return float((np.sum(a ** p) * w) ** (1.0 / p))


def boundary_mass_fraction(f: ComplexField, margin_cells: int = 4) -> float:
    """Fraction of mass in the outermost ``margin_cells`` layer of the box.

    Experiments use this as the wraparound diagnostic: the half-extent must be
    chosen so the flow keeps this below 1e-6.
    """
    a = np.abs(f.values) ** 2
    total = a.sum()
    if total == 0.0:
        return 0.0
    inner = a
    for axis in range(f.grid.dimension):
        sl = [slice(None)] * f.grid.dimension
        sl[axis] = slice(margin_cells, f.grid.points - margin_cells)
        inner = inner[tuple(sl)]
    return float(1.0 - inner.sum() / total)


@dataclass
class SpacetimeTrace:
    """Time-sampled solution: uniform nodes t_k and one field per node."""

    times: np.ndarray
    fields: list = field(default_factory=list)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if len(self.times) != len(self.fields):
            raise ValueError("one field per time node required")
        if len(self.times) == 0:
            raise ValueError("empty trace")
        if len(self.times) > 1 and not np.all(np.diff(self.times) > 0):
            raise ValueError("time nodes must be strictly increasing")
        g = self.fields[0].grid
        for f in self.fields:
            if f.grid != g:
                raise ValueError("all fields in a trace must share one grid")

    @property
    def grid(self) -> GridSpec:
        return self.fields[0].grid

    def field_at(self, t: float) -> ComplexField:
        """Nearest-node lookup."""
        k = int(np.argmin(np.abs(self.times - t)))
        return self.fields[k]


def symmetric_strichartz_exponent(d: int) -> float:
    """The exponent 2(d+2)/d with q = r admissible in d dimensions."""
    return 2.0 * (d + 2) / d


def mixed_norm(trace: SpacetimeTrace, q: float, r: float) -> float:
    """Spacetime L^q_t L^r_x norm: trapezoid in t of Riemann sums in x.

    ``q`` or ``r`` may be ``inf`` (max over nodes / over the grid).  A single
    time node degenerates to the spatial L^r norm.
    """
    if not (1 <= q) or not (1 <= r):
        raise ValueError("exponents must satisfy q, r >= 1")
    spatial = np.array([lp_norm(f, r) for f in trace.fields])
    if len(trace.times) == 1:
        return float(spatial[0])
    if np.isinf(q):
        return float(spatial.max())
    return float(np.trapezoid(spatial ** q, trace.times) ** (1.0 / q))
