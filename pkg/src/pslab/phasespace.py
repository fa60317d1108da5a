"""Phase-space analysis: coherent states, FBI transform, wavepacket frames.

Operators follow the conventions

    pi(x0, xi0) f(x) = exp(i<x - x0, xi0>) f(x - x0)      (phase-space shift)
    S_lambda f(x)    = lambda^(-d/2) f(x / lambda)        (unitary dilation)
    psi(x)           = c_d exp(-|x|^2 / 2),  c_d = 2^(-d/2) pi^(-3d/4)

so that mass(psi) = (2 pi)^(-d) and the transform Tf(z) = <f, psi_z> is an
isometry of L^2(R^d) into L^2(T*R^d).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import (ComplexField, GridSpec, SpacetimeTrace, inner_product, mass,
                   norm, to_frequency, to_position)


def gaussian_normalization(d: int) -> float:
    """c_d = 2^(-d/2) pi^(-3d/4)."""
    return 2.0 ** (-d / 2.0) * np.pi ** (-3.0 * d / 4.0)


# ---- elementary unitaries -----------------------------------------------------


def phase_space_shift(f: ComplexField, x0, xi0) -> ComplexField:
    """pi(x0, xi0) f; the translation is spectral (exact on band-limited data)."""
    grid = f.grid
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    xi0 = np.atleast_1d(np.asarray(xi0, dtype=float))
    fh = to_frequency(f)
    ximesh = grid.dual_meshgrid()
    phase = np.zeros(grid.shape)
    for a in range(grid.dimension):
        phase = phase + x0[a] * ximesh[a]
    shifted = to_position(ComplexField(grid, fh.values * np.exp(-1j * phase), "frequency"))
    xmesh = grid.meshgrid()
    mod = np.zeros(grid.shape)
    for a in range(grid.dimension):
        mod = mod + (xmesh[a] - x0[a]) * xi0[a]
    return ComplexField(grid, shifted.values * np.exp(1j * mod), "position")


def phase_space_shift_inverse(f: ComplexField, x0, xi0) -> ComplexField:
    """Exact inverse of :func:`phase_space_shift` with the same (x0, xi0)."""
    grid = f.grid
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    xi0 = np.atleast_1d(np.asarray(xi0, dtype=float))
    xmesh = grid.meshgrid()
    mod = np.zeros(grid.shape)
    for a in range(grid.dimension):
        mod = mod + (xmesh[a] - x0[a]) * xi0[a]
    g = ComplexField(grid, f.values * np.exp(-1j * mod), "position")
    gh = to_frequency(g)
    ximesh = grid.dual_meshgrid()
    phase = np.zeros(grid.shape)
    for a in range(grid.dimension):
        phase = phase + x0[a] * ximesh[a]
    return to_position(ComplexField(grid, gh.values * np.exp(1j * phase), "frequency"))


def _dyadic_exponent(lam: float) -> int:
    k = round(np.log2(1.0 / lam))
    if abs(lam * 2.0 ** k - 1.0) > 1e-12:
        raise ValueError(f"scale {lam} is not dyadic")
    return int(k)


def dilate_down(f: ComplexField, lam: float) -> ComplexField:
    """S_lambda for dyadic lambda = 2^-k <= 1: compress by index decimation.

    Exact on fields that decay inside the box: the needed samples f(2^k x_j)
    are themselves grid nodes; samples falling outside the box are taken as 0.
    """
    k = _dyadic_exponent(lam)
    if k == 0:
        return f.copy()
    grid = f.grid
    n, d = grid.points, grid.dimension
    step = 2 ** k
    out = np.zeros(grid.shape, dtype=np.complex128)
    idx_out = np.arange(n)
    idx_src = step * idx_out - (step - 1) * n // 2
    valid = (idx_src >= 0) & (idx_src < n)
    src = [idx_src[valid]] * d
    dst = [idx_out[valid]] * d
    out[np.ix_(*dst)] = f.values[np.ix_(*src)] * (2.0 ** (k * d / 2.0))
    return ComplexField(grid, out, "position")


def dilate_up(f: ComplexField, lam: float) -> ComplexField:
    """S_{1/lambda} = S_lambda^{-1} for dyadic lambda: stretch via dual decimation.

    Exact on fields whose spectrum fits in the central 2^-k of the band.
    """
    k = _dyadic_exponent(lam)
    if k == 0:
        return f.copy()
    grid = f.grid
    n, d = grid.points, grid.dimension
    step = 2 ** k
    fh = to_frequency(f)
    out = np.zeros(grid.shape, dtype=np.complex128)
    idx_out = np.arange(n)
    idx_src = step * idx_out - (step - 1) * n // 2
    valid = (idx_src >= 0) & (idx_src < n)
    src = [idx_src[valid]] * d
    dst = [idx_out[valid]] * d
    out[np.ix_(*dst)] = fh.values[np.ix_(*src)] * (2.0 ** (k * d / 2.0))
    return to_position(ComplexField(grid, out, "frequency"))


def coherent_state(grid: GridSpec, x0=0.0, xi0=0.0, lam: float = 1.0) -> ComplexField:
    """The packet S_lambda pi(x0, xi0) psi evaluated in closed form.

    mass = (2 pi)^-d for any admissible (x0, xi0, lambda).
    """
    d = grid.dimension
    x0 = np.broadcast_to(np.atleast_1d(np.asarray(x0, dtype=float)), (d,))
    xi0 = np.broadcast_to(np.atleast_1d(np.asarray(xi0, dtype=float)), (d,))
    if not (0.0 < lam <= 1.0):
        raise ValueError(f"scale must lie in (0, 1], got {lam}")
    h = grid.spacing
    if lam < 4.0 * h or 1.0 / lam > grid.dual_extent / 4.0:
        raise ValueError(f"scale {lam} is unresolvable on this grid (h = {h})")
    mesh = grid.meshgrid()
    r2 = np.zeros(grid.shape)
    mod = np.zeros(grid.shape)
    for a in range(d):
        u = mesh[a] / lam - x0[a]
        r2 = r2 + u * u
        mod = mod + u * xi0[a]
    vals = (gaussian_normalization(d) * lam ** (-d / 2.0)
            * np.exp(-0.5 * r2) * np.exp(1j * mod))
    return ComplexField(grid, vals, "position")


# ---- FBI transform -------------------------------------------------------------


@dataclass(frozen=True)
class PhaseSpaceGrid:
    """Product grid in (x0, xi0) for the unit-scale transform."""

    x_axes: tuple      # per-axis arrays of x0 nodes (subsample of the grid)
    xi_axes: tuple     # per-axis arrays of xi0 nodes

    @property
    def dimension(self) -> int:
        return len(self.x_axes)

    @property
    def x_spacing(self) -> float:
        return float(self.x_axes[0][1] - self.x_axes[0][0])

    @property
    def xi_spacing(self) -> float:
        return float(self.xi_axes[0][1] - self.xi_axes[0][0])

    @property
    def cell_volume(self) -> float:
        d = self.dimension
        return self.x_spacing ** d * self.xi_spacing ** d

    @property
    def shape(self) -> tuple:
        return tuple(len(a) for a in self.x_axes) + tuple(len(a) for a in self.xi_axes)


def default_phase_space_grid(grid: GridSpec, xi_max: float,
                             x_spacing: float = 0.5,
                             xi_spacing: float = 0.5) -> PhaseSpaceGrid:
    """Unit-scale phase-space grid with spacing <= 1 in both coordinates.

    The frequency spacing is snapped down to a multiple of the dual spacing
    pi/L, which keeps the window's periodic wrap phase-coherent (the shift
    exp(-i<y, xi0>) is then 2L-periodic).
    """
    if x_spacing > 1.0 or xi_spacing > 1.0:
        raise ValueError("phase-space grid spacing must be <= 1")
    stride = max(1, int(round(x_spacing / grid.spacing)))
    x_nodes = grid.axis_points()[::stride]
    mult = max(1, int(np.floor(xi_spacing / grid.dual_spacing)))
    dxi = mult * grid.dual_spacing
    n_xi = int(np.floor(xi_max / dxi))
    xi_nodes = dxi * np.arange(-n_xi, n_xi + 1)
    if xi_nodes[-1] > grid.dual_extent:
        raise ValueError("requested frequency range exceeds the dual grid")
    d = grid.dimension
    return PhaseSpaceGrid((tuple(x_nodes),) * d, (tuple(xi_nodes),) * d)


@dataclass
class FbiField:
    """Transform values on a phase-space grid; axes are x0 axes then xi0 axes."""

    pgrid: PhaseSpaceGrid
    values: np.ndarray

    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.values) ** 2) * self.pgrid.cell_volume))

    def argmax(self):
        """(x0, xi0, value) of the largest-modulus node, first index on ties."""
        flat = int(np.argmax(np.abs(self.values)))
        idx = np.unravel_index(flat, self.values.shape)
        d = self.pgrid.dimension
        x0 = tuple(self.pgrid.x_axes[a][idx[a]] for a in range(d))
        xi0 = tuple(self.pgrid.xi_axes[a][idx[d + a]] for a in range(d))
        return x0, xi0, complex(self.values[idx])


def _gaussian_multiplier(grid: GridSpec) -> np.ndarray:
    """(2 pi)^{d/2} * FT of c_d exp(-|u|^2/2) on the dual grid."""
    d = grid.dimension
    ximesh = grid.dual_meshgrid()
    r2 = np.zeros(grid.shape)
    for a in range(d):
        r2 = r2 + ximesh[a] ** 2
    return (2.0 * np.pi) ** (d / 2.0) * gaussian_normalization(d) * np.exp(-0.5 * r2)


def fbi_forward(f: ComplexField, pgrid: PhaseSpaceGrid) -> FbiField:
    """Tf(z) = <f, psi_z>, one FFT convolution pass per frequency node.

    T f(x0, xi0) = exp(i<x0, xi0>) * (G * [f e^{-i<., xi0>}])(x0) with the
    Gaussian window G; the convolution runs over the full grid and is then
    subsampled onto the x0 nodes.
    """
    grid = f.grid
    d = grid.dimension
    mult = _gaussian_multiplier(grid)
    xmesh = grid.meshgrid()
    x_axis = grid.axis_points()
    x_index = [np.searchsorted(x_axis, np.asarray(ax)) for ax in pgrid.x_axes]

    xi_shapes = tuple(len(a) for a in pgrid.xi_axes)
    out_shape = tuple(len(a) for a in pgrid.x_axes) + xi_shapes
    out = np.empty(out_shape, dtype=np.complex128)

    for flat in range(int(np.prod(xi_shapes))):
        midx = np.unravel_index(flat, xi_shapes)
        xi0 = np.array([pgrid.xi_axes[a][midx[a]] for a in range(d)])
        phase = np.zeros(grid.shape)
        for a in range(d):
            phase = phase + xmesh[a] * xi0[a]
        g = ComplexField(grid, f.values * np.exp(-1j * phase), "position")
        conv = to_position(ComplexField(grid, to_frequency(g).values * mult, "frequency"))
        block = conv.values[np.ix_(*x_index)]
        x0_phase = np.zeros(block.shape)
        for a in range(d):
            shape = [1] * d
            shape[a] = len(pgrid.x_axes[a])
            x0_phase = x0_phase + np.asarray(pgrid.x_axes[a]).reshape(shape) * xi0[a]
        out[(Ellipsis,) + midx] = block * np.exp(1j * x0_phase)
    return FbiField(pgrid, out)


def fbi_adjoint(F: FbiField, grid: GridSpec) -> ComplexField:
    """T* F = sum of F(z) psi_z over the phase-space grid (Riemann weights)."""
    d = F.pgrid.dimension
    mult = _gaussian_multiplier(grid)
    xmesh = grid.meshgrid()
    x_axis = grid.axis_points()
    x_index = [np.searchsorted(x_axis, np.asarray(ax)) for ax in F.pgrid.x_axes]

    xi_shapes = tuple(len(a) for a in F.pgrid.xi_axes)
    acc = np.zeros(grid.shape, dtype=np.complex128)
    for flat in range(int(np.prod(xi_shapes))):
        midx = np.unravel_index(flat, xi_shapes)
        xi0 = np.array([F.pgrid.xi_axes[a][midx[a]] for a in range(d)])
        block = F.values[(Ellipsis,) + midx]
        x0_phase = np.zeros(block.shape)
        for a in range(d):
            shape = [1] * d
            shape[a] = len(F.pgrid.x_axes[a])
            x0_phase = x0_phase + np.asarray(F.pgrid.x_axes[a]).reshape(shape) * xi0[a]
        coarse = np.zeros(grid.shape, dtype=np.complex128)
        coarse[np.ix_(*x_index)] = block * np.exp(-1j * x0_phase)
        spread = to_position(ComplexField(
            grid, to_frequency(ComplexField(grid, coarse, "position")).values * mult,
            "frequency"))
        phase = np.zeros(grid.shape)
        for a in range(d):
            phase = phase + xmesh[a] * xi0[a]
        acc += spread.values * np.exp(1j * phase)
    # the x0 sums ran through the fine-grid convolution, which weights by h^d;
    # rescale to the coarse phase-space cell weight
    w = F.pgrid.cell_volume / grid.volume_element
    return ComplexField(grid, acc * w, "position")


# ---- discrete scale-R wavepacket frame ------------------------------------------


@dataclass
class Atom:
    """One scale-R packet: lattice point, coefficient, normalized field."""

    x_lattice: tuple
    xi_lattice: tuple
    coefficient: complex
    packet: ComplexField
    scale: float

    @property
    def tube_radius(self) -> float:
        return float(np.sqrt(self.scale))


@dataclass
class Tube:
    """Spacetime tube of an atom: center trajectory and radius R^(1/2)."""

    atom: Atom
    times: np.ndarray
    centers: np.ndarray      # (nt, d) positions of the flowed lattice point
    momenta: np.ndarray      # (nt, d)

    @property
    def radius(self) -> float:
        return self.atom.tube_radius

    def contains(self, t: float, x) -> bool:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(float(self.times[k]) - t) > 1e-9:
            raise ValueError("time is not a tube node")
        if abs(t) > self.atom.scale:
            return False
        return bool(np.linalg.norm(np.atleast_1d(x) - self.centers[k]) <= self.radius)


def _position_windows(grid: GridSpec, root_r: float, sigma_factor: float = 0.75):
    """Gaussian partition windows on the lattice root_r * Z (periodic, normalized)."""
    L, n = grid.extent, grid.points
    x = grid.axis_points()
    centers = root_r * np.arange(int(np.ceil(-L / root_r)), int(np.ceil(L / root_r)))
    sigma = sigma_factor * root_r
    span = 2.0 * L
    diff = x[None, :] - centers[:, None]
    diff = diff - span * np.round(diff / span)
    w = np.exp(-0.5 * (diff / sigma) ** 2)
    w /= w.sum(axis=0, keepdims=True)
    return centers, w


def _frequency_windows(grid: GridSpec, root_r: float):
    """Raised-cosine partition on the lattice (1/root_r) * Z over the dual grid."""
    xi = grid.axis_frequencies()
    spacing = 1.0 / root_r
    kmax = grid.dual_extent
    centers = spacing * np.arange(int(np.ceil(-kmax / spacing)),
                                  int(np.floor(kmax / spacing)) + 1)
    span = 2.0 * kmax
    diff = xi[None, :] - centers[:, None]
    diff = diff - span * np.round(diff / span)
    u = diff / spacing
    w = np.where(np.abs(u) < 1.0, np.cos(0.5 * np.pi * u) ** 2, 0.0)
    s = w.sum(axis=0)
    s[s == 0.0] = 1.0
    w /= s
    return centers, w


def decompose_scale_R(f: ComplexField, R: float,
                      discard: float = 1e-10) -> list:
    """Split f into scale-R atoms on the lattice R^(1/2) Z^d x R^(-1/2) Z^d.

    Pieces are eta((x - x0)/R^(1/2)) * chi(R^(1/2)(D - xi0)) f with smooth
    partitions of unity in both variables, so the atoms sum back to f exactly;
    atoms with |a_T| <= discard * ||f|| are dropped.
    """
    if R < 1.0:
        raise ValueError("scale R must be >= 1")
    grid = f.grid
    d = grid.dimension
    root_r = float(np.sqrt(R))
    if root_r < 2.0 * grid.spacing or 1.0 / root_r > grid.dual_extent / 2.0:
        raise ValueError(f"scale R = {R} is unresolvable on this grid")
    x_centers, wx = _position_windows(grid, root_r)
    xi_centers, wxi = _frequency_windows(grid, root_r)
    fnorm = norm(f)
    if fnorm == 0.0:
        return []
    fh = to_frequency(f)

    atoms = []
    if d == 1:
        for j in range(len(xi_centers)):
            piece_freq = to_position(ComplexField(grid, fh.values * wxi[j], "frequency"))
            for i in range(len(x_centers)):
                vals = piece_freq.values * wx[i]
                a_t = norm(ComplexField(grid, vals, "position"))
                if a_t > discard * fnorm:
                    atoms.append(Atom((float(x_centers[i]),),
                                      (float(xi_centers[j]),),
                                      complex(a_t),
                                      ComplexField(grid, vals / a_t, "position"),
                                      float(R)))
        return atoms

    # d >= 2: tensor products of the per-axis windows
    nxc, nkc = len(x_centers), len(xi_centers)
    for kflat in range(nkc ** d):
        kidx = np.unravel_index(kflat, (nkc,) * d)
        mask = np.ones(grid.shape)
        for a in range(d):
            shape = [1] * d
            shape[a] = grid.points
            mask = mask * wxi[kidx[a]].reshape(shape)
        if not mask.any():
            continue
        piece_freq = to_position(ComplexField(grid, fh.values * mask, "frequency"))
        for iflat in range(nxc ** d):
            iidx = np.unravel_index(iflat, (nxc,) * d)
            win = np.ones(grid.shape)
            for a in range(d):
                shape = [1] * d
                shape[a] = grid.points
                win = win * wx[iidx[a]].reshape(shape)
            vals = piece_freq.values * win
            field = ComplexField(grid, vals, "position")
            a_t = norm(field)
            if a_t > discard * fnorm:
                atoms.append(Atom(tuple(float(x_centers[i]) for i in iidx),
                                  tuple(float(xi_centers[k]) for k in kidx),
                                  complex(a_t),
                                  ComplexField(grid, vals / a_t, "position"),
                                  float(R)))
    return atoms


def reconstruct(atoms: list, grid: GridSpec) -> ComplexField:
    acc = np.zeros(grid.shape, dtype=np.complex128)
    for at in atoms:
        acc += at.coefficient * at.packet.values
    return ComplexField(grid, acc, "position")


def frame_constant(atoms: list, f: ComplexField) -> float:
    """sum |a_T|^2 / ||f||^2."""
    total = sum(abs(at.coefficient) ** 2 for at in atoms)
    return float(total / mass(f))


def propagate_atoms(atoms: list, potential, t0: float, t1: float,
                    dt: float = 1e-3, stride: int = 10) -> list:
    """Propagate each atom and attach its classical tube.

    Returns a list of (atom, tube, trace, concentration) where concentration
    maps radius multiples k to the minimum over time of the packet mass
    fraction within distance k * R^(1/2) of the flowed center.
    """
    from .flow import integrate_batch
    from .propagators import PropagatorSpec, propagate

    if not atoms:
        return []
    grid = atoms[0].packet.grid
    span = abs(t1 - t0)
    if span > atoms[0].scale:
        raise ValueError("propagation span exceeds the tube time window |t| <= R")
    x0 = np.array([at.x_lattice for at in atoms], dtype=float)
    xi0 = np.array([at.xi_lattice for at in atoms], dtype=float)
    times, xs, xis, _, _ = integrate_batch(potential, x0, xi0, t0, t1, dt)

    mesh = grid.meshgrid()
    out = []
    for b, at in enumerate(atoms):
        tube = Tube(at, times, xs[b], xis[b])
        spec = PropagatorSpec(potential, method="split-step", dt=dt, origin=t0)
        trace = propagate(spec, at.packet, (t0, t1), stride=stride)
        conc = {k: 1.0 for k in (1, 2, 3, 4)}
        for node, tval in enumerate(trace.times):
            c = tube.centers[int(np.argmin(np.abs(times - tval)))]
            r2 = np.zeros(grid.shape)
            for a in range(grid.dimension):
                r2 = r2 + (mesh[a] - c[a]) ** 2
            dens = np.abs(trace.fields[node].values) ** 2
            total = dens.sum()
            for k in conc:
                inside = dens[r2 <= (k * at.tube_radius) ** 2].sum()
                conc[k] = min(conc[k], float(inside / total))
        out.append((at, tube, trace, conc))
    return out


# ---- Whitney decomposition of frequency pairs -----------------------------------


@dataclass(frozen=True)
class WhitneyCube:
    """A selected pair of axis cubes (Q1, Q2) of width N."""

    scale: float
    corner1: tuple
    corner2: tuple

    @property
    def width(self) -> float:
        return self.scale

    def contains(self, xi1, xi2) -> bool:
        xi1 = np.atleast_1d(np.asarray(xi1, dtype=float))
        xi2 = np.atleast_1d(np.asarray(xi2, dtype=float))
        c1 = np.asarray(self.corner1)
        c2 = np.asarray(self.corner2)
        return bool(np.all((xi1 >= c1) & (xi1 < c1 + self.scale))
                    and np.all((xi2 >= c2) & (xi2 < c2 + self.scale)))

    def separation(self) -> float:
        """l-infinity distance between the factor cubes."""
        c1 = np.asarray(self.corner1)
        c2 = np.asarray(self.corner2)
        gap = np.maximum(0.0, np.maximum(c2 - (c1 + self.scale), c1 - (c2 + self.scale)))
        return float(np.max(gap))


def _box_separation(c1, c2, width) -> float:
    c1, c2 = np.asarray(c1, dtype=float), np.asarray(c2, dtype=float)
    gap = np.maximum(0.0, np.maximum(c2 - (c1 + width), c1 - (c2 + width)))
    return float(np.max(gap))


def _selected(c1, c2, width) -> bool:
    """Whitney predicate: separated at this scale, parent not separated."""
    if _box_separation(c1, c2, width) < width:
        return False
    p1 = 2.0 * width * np.floor(np.asarray(c1) / (2.0 * width))
    p2 = 2.0 * width * np.floor(np.asarray(c2) / (2.0 * width))
    return _box_separation(p1, p2, 2.0 * width) < 2.0 * width


def whitney_cubes(scales, window: float, dimension: int = 1) -> list:
    """Whitney family over the off-diagonal frequency pairs in [-W, W]^d x [-W, W]^d.

    A dyadic cube pair of width N is selected when its factor separation is
    >= N while the parent's is < 2N; the selected family tiles the pairs whose
    separation exceeds the smallest scale exactly once.
    """
    out = []
    for N in scales:
        n_cells = int(np.ceil(window / N))
        rng = N * np.arange(-n_cells, n_cells)
        for flat1 in range(len(rng) ** dimension):
            i1 = np.unravel_index(flat1, (len(rng),) * dimension)
            c1 = np.array([rng[i] for i in i1])
            for flat2 in range(len(rng) ** dimension):
                i2 = np.unravel_index(flat2, (len(rng),) * dimension)
                c2 = np.array([rng[i] for i in i2])
                if _selected(c1, c2, N):
                    out.append(WhitneyCube(float(N), tuple(c1), tuple(c2)))
    return out


def whitney_cover_count(cubes: list, xi1, xi2) -> int:
    return sum(1 for q in cubes if q.contains(xi1, xi2))


def is_near_diagonal(xi1, xi2, n_min: float) -> bool:
    """True when the pair is not covered at any scale >= n_min."""
    xi1 = np.atleast_1d(np.asarray(xi1, dtype=float))
    xi2 = np.atleast_1d(np.asarray(xi2, dtype=float))
    c1 = n_min * np.floor(xi1 / n_min)
    c2 = n_min * np.floor(xi2 / n_min)
    if _box_separation(c1, c2, n_min) >= n_min:
        return False
    # not separated at the smallest scale: some ancestor could still separate,
    # but separation only shrinks up the tree, so the pair is near-diagonal
    return True
