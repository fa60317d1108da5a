"""Quantum propagators: split-step, exact quadratic (Mehler-type), Lens map.

Engines
  * split-step: Strang factorization with diagonal unitary substeps; second
    order in dt.  The uniform-field case runs in Landau gauge (obtained from
    the symmetric gauge by an exact gauge conjugation) where every factor is
    diagonal in a mixed position/frequency representation.
  * exact-quadratic: the linear-canonical kernel with coefficients read from
    the classical Jacobian blocks, realized as chirp -> Fourier -> chirp
    per axis (separable quadratic kinds) or per Landau fiber (uniform field).
    Global phase is fixed by continuity from t = 0; focal times (singular
    dx^t/deta) are rejected rather than Maslov-corrected.
  * exact-free: one Fourier multiplier; the grid-exact free evolution.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .flow import flow_matrix, integrate_bicharacteristic
from .grid import (ComplexField, SpacetimeTrace, _forward_phases,
                   boundary_mass_fraction, lp_norm, mass, norm)
from .phasespace import phase_space_shift
from .potentials import PotentialSpec

BOUNDARY_MASS_TOLERANCE = 1e-6
FOCAL_DETERMINANT_TOLERANCE = 1e-6


class FocalTimeError(ValueError):
    """Requested sample time has a singular dx^t/deta block."""


@dataclass
class PropagatorSpec:
    """Propagation recipe: potential, method, step, and time origin."""

    potential: PotentialSpec
    method: str = "split-step"
    dt: float = 1e-3
    origin: float = 0.0

    def __post_init__(self):
        if self.method not in ("split-step", "exact-free", "exact-quadratic"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.method == "exact-free" and self.potential.kind != "free":
            raise ValueError("exact-free requires the free symbol")
        if self.dt <= 0:
            raise ValueError("step must be positive")


# ---- axis-wise centered transform helpers ---------------------------------------


def _axis_to_frequency(values: np.ndarray, grid, axis: int) -> np.ndarray:
    pre, post = _forward_phases(grid)
    shape = [1] * grid.dimension
    shape[axis] = grid.points
    return np.fft.fft(values * pre.reshape(shape), axis=axis) * post.reshape(shape)


def _axis_to_position(values: np.ndarray, grid, axis: int) -> np.ndarray:
    pre, post = _forward_phases(grid)
    shape = [1] * grid.dimension
    shape[axis] = grid.points
    return np.fft.ifft(values / post.reshape(shape), axis=axis) / pre.reshape(shape)


# ---- split-step stepper ----------------------------------------------------------


class SplitStepper:
    """Strang-split one-step unitary for a fixed grid, potential, and dt."""

    def __init__(self, potential: PotentialSpec, grid, dt: float):
        self.potential = potential
        self.grid = grid
        self.dt = float(dt)
        self._piece = None
        self._cache = {}
        xi = [2.0 * np.pi * np.fft.fftfreq(grid.points, grid.spacing)] * grid.dimension
        k2 = np.zeros(grid.shape)
        for a in range(grid.dimension):
            shape = [1] * grid.dimension
            shape[a] = grid.points
            k2 = k2 + xi[a].reshape(shape) ** 2
        self._kinetic = np.exp(-0.5j * self.dt * k2)  # full step of |xi|^2/2
        if potential.kind == "magnetic":
            self._init_magnetic()

    # -- scalar kinds --------------------------------------------------------

    def _scalar_phase(self, t: float) -> np.ndarray:
        piece = self.potential._piece(t + 0.5 * self.dt)
        if piece not in self._cache:
            v = self.potential.scalar_on_grid(t + 0.5 * self.dt, self.grid.meshgrid())
            self._cache[piece] = np.exp(-0.5j * self.dt * v)
        return self._cache[piece]

    # -- magnetic kind ---------------------------------------------------------

    def _init_magnetic(self):
        g = self.grid
        b = self.potential.params["field_strength"]
        om = self.potential.params["scalar_omega"]
        x1, x2 = g.meshgrid()
        self._gauge = np.exp(0.5j * b * x1 * x2)
        xi1 = 2.0 * np.pi * np.fft.fftfreq(g.points, g.spacing)
        x2_axis = g.axis_points()
        # half-step of (D1 + b*x2)^2 / 2, diagonal in (xi1, x2)
        mixed = (xi1[:, None] + b * x2_axis[None, :]) ** 2
        self._mag_a = np.exp(-0.25j * self.dt * mixed)
        xi2 = 2.0 * np.pi * np.fft.fftfreq(g.points, g.spacing)
        self._mag_b = np.exp(-0.5j * self.dt * xi2[None, :] ** 2)  # full step of D2^2/2
        vs = 0.5 * om ** 2 * (x1 ** 2 + x2 ** 2)
        self._mag_c = np.exp(-0.5j * self.dt * vs)                 # half step of V

    def _step_magnetic(self, values: np.ndarray) -> np.ndarray:
        # exp(-i dt H_sym) = gauge * exp(-i dt H_Landau) * gauge^-1, with the
        # Landau step split as C/2 A/2 B A/2 C/2 (each factor diagonal)
        v = values / self._gauge
        v = v * self._mag_c
        v = np.fft.fft(v, axis=0)
        v = v * self._mag_a
        v = np.fft.ifft(v, axis=0)
        v = np.fft.fft(v, axis=1)
        v = v * self._mag_b
        v = np.fft.ifft(v, axis=1)
        v = np.fft.fft(v, axis=0)
        v = v * self._mag_a
        v = np.fft.ifft(v, axis=0)
        v = v * self._mag_c
        return v * self._gauge

    def step(self, u: ComplexField, t: float) -> ComplexField:
        """Advance one step from time t to t + dt."""
        if self.potential.kind == "magnetic":
            return ComplexField(self.grid, self._step_magnetic(u.values), "position")
        phase = self._scalar_phase(t)
        v = u.values * phase
        v = np.fft.ifftn(np.fft.fftn(v) * self._kinetic)
        v = v * phase
        return ComplexField(self.grid, v, "position")


def _check_step_alignment(potential: PotentialSpec, t0: float, t1: float, dt: float):
    for s in potential.switch_times:
        if min(t0, t1) < s < max(t0, t1):
            k = (s - t0) / dt
            if abs(k - round(k)) > 1e-9:
                raise ValueError(
                    f"step {dt} is misaligned with the switch time {s}")


def free_evolve(u0: ComplexField, t: float) -> ComplexField:
    """Grid-exact free evolution: multiplier exp(-i t |xi|^2 / 2)."""
    g = u0.grid
    xi = 2.0 * np.pi * np.fft.fftfreq(g.points, g.spacing)
    k2 = np.zeros(g.shape)
    for a in range(g.dimension):
        shape = [1] * g.dimension
        shape[a] = g.points
        k2 = k2 + xi.reshape(shape) ** 2
    vals = np.fft.ifftn(np.fft.fftn(u0.values) * np.exp(-0.5j * t * k2))
    return ComplexField(g, vals, "position")


def propagate(spec: PropagatorSpec, u0: ComplexField, t_span, stride: int = 1,
              boundary_check: bool = True) -> SpacetimeTrace:
    """Run the propagator over [t0, t1] and sample every ``stride`` steps."""
    t0, t1 = float(t_span[0]), float(t_span[1])
    if t1 <= t0:
        raise ValueError("t_span must be increasing; use evolve() for single states")
    g = u0.grid
    nsteps = int(round((t1 - t0) / spec.dt))
    if nsteps == 0 or abs(t0 + nsteps * spec.dt - t1) > 1e-9 * max(1.0, abs(t1)):
        raise ValueError(f"step {spec.dt} does not tile the span [{t0}, {t1}]")

    times = [t0]
    fields = [u0.copy()]
    if spec.method in ("exact-free", "exact-quadratic"):
        for k in range(stride, nsteps + 1, stride):
            t = t0 + k * spec.dt
            fields.append(evolve(spec.potential, u0, t - t0, origin=t0, method=spec.method))
            times.append(t)
        if (nsteps % stride) != 0:
            fields.append(evolve(spec.potential, u0, t1 - t0, origin=t0, method=spec.method))
            times.append(t1)
    else:
        _check_step_alignment(spec.potential, t0, t1, spec.dt)
        stepper = SplitStepper(spec.potential, g, spec.dt)
        u = u0.copy()
        for k in range(1, nsteps + 1):
            u = stepper.step(u, t0 + (k - 1) * spec.dt)
            if k % stride == 0 or k == nsteps:
                times.append(t0 + k * spec.dt)
                fields.append(u.copy())
    trace = SpacetimeTrace(np.asarray(times), fields)
    if boundary_check:
        bm = boundary_mass_fraction(trace.fields[-1])
        if bm > BOUNDARY_MASS_TOLERANCE:
            warnings.warn(
                f"boundary mass fraction {bm:.2e} exceeds {BOUNDARY_MASS_TOLERANCE:.0e}; "
                "wraparound may contaminate this run", RuntimeWarning, stacklevel=2)
    return trace


# ---- exact quadratic propagation ---------------------------------------------------


def _axis_kernel(grid, a: float, b: float, c: float, dval: float) -> np.ndarray:
    """1-d linear-canonical kernel matrix (quadrature weight included)."""
    x = grid.axis_points()
    if abs(b) < FOCAL_DETERMINANT_TOLERANCE:
        raise FocalTimeError(f"dx/deta = {b} is singular at the requested time")
    amp = 1.0 / np.sqrt(2.0 * np.pi * 1j * b)
    expo = (dval * x[:, None] ** 2 - 2.0 * x[:, None] * x[None, :]
            + a * x[None, :] ** 2) / (2.0 * b)
    return amp * np.exp(1j * expo) * grid.spacing


def _apply_axis_matrix(values: np.ndarray, K: np.ndarray, axis: int) -> np.ndarray:
    moved = np.tensordot(K, values, axes=(1, axis))
    return np.moveaxis(moved, 0, axis)


def _apply_point_transform(values: np.ndarray, grid, a: float, c: float,
                           axis: int) -> np.ndarray:
    """B = 0 branch: u(x) -> |a|^{-1/2} exp(i c x^2 / (2a)) u(x/a), a = +-1."""
    if abs(abs(a) - 1.0) > 1e-9:
        raise FocalTimeError("focal time with non-unimodular dx/dy is unsupported")
    out = values
    if a < 0:
        out = np.flip(out, axis=axis)
        out = np.roll(out, 1, axis=axis)  # periodic reversal maps node j -> -x_j
    x = grid.axis_points()
    shape = [1] * grid.dimension
    shape[axis] = grid.points
    chirp = np.exp(0.5j * (c / a) * x ** 2).reshape(shape)
    return out * chirp


def _kernel_threshold(grid, a: float, dval: float) -> float:
    """Smallest |dx/deta| whose chirp the grid still resolves.

    The kernel's local frequency in y is (a*y - x)/b; requiring it below the
    Nyquist rate over the (slightly shrunk) box gives |b| >= h*L*(1+|a|)/pi.
    """
    scale = max(1.0 + abs(a), 1.0 + abs(dval))
    return 1.1 * grid.spacing * 0.8 * grid.extent * scale / np.pi


def _separable_blocks(potential: PotentialSpec, origin: float, t: float):
    d = potential.dimension
    S = flow_matrix(potential, origin, origin + t)
    A, B = S[:d, :d], S[:d, d:]
    C, D = S[d:, :d], S[d:, d:]
    for blk in (A, B, C, D):
        off = blk - np.diag(np.diag(blk))
        if np.max(np.abs(off)) > 1e-10 * max(1.0, np.max(np.abs(blk))):
            raise ValueError("flow is not axis-separable; exact path unsupported")
    return [(A[a, a], B[a, a], C[a, a], D[a, a]) for a in range(d)]


def _focal_window(potential: PotentialSpec) -> float:
    """Time span guaranteed to stay inside the first focal window."""
    if potential.kind == "magnetic":
        b = abs(potential.params["field_strength"])
        return 0.9 * np.pi / b if b > 0 else 4.0
    w2 = max(float(np.max(np.linalg.eigvalsh(np.asarray(Q, float))))
             for Q in potential.quadratic)
    return 0.9 * np.pi / np.sqrt(w2) if w2 > 0 else 4.0


def _all_resolvable(grid, blocks) -> bool:
    return all(abs(b) >= _kernel_threshold(grid, a, dv) for (a, b, c, dv) in blocks)


def _pick_magnetic_hop(grid, b: float, t: float, window: float):
    best, best_margin = None, 0.0
    span = min(0.85 * window, 2.5)
    for mag in np.linspace(0.25 * span, span, 10):
        for tau in (mag, -mag):
            if abs(t - tau) > 0.9 * window or abs(tau) > 0.9 * window:
                continue
            margin = min(
                abs(np.sin(b * s) / b) / _kernel_threshold(grid, np.cos(b * s), np.cos(b * s))
                for s in (tau, t - tau))
            if margin > best_margin:
                best, best_margin = tau, margin
    return best if best_margin >= 1.0 else None


def _pick_intermediate(potential: PotentialSpec, grid, origin: float, t: float,
                       window: float):
    """Intermediate hop time making both kernel factors grid-resolvable."""
    cands = []
    span = min(0.85 * window, 2.5)
    for mag in np.linspace(0.25 * span, span, 10):
        cands.extend([mag, -mag])
    best, best_margin = None, 0.0
    for tau in cands:
        if abs(t - tau) > 0.9 * window or abs(tau) > 0.9 * window:
            continue
        try:
            first = _separable_blocks(potential, origin, tau)
            second = _separable_blocks(potential, origin + tau, t - tau)
        except ValueError:
            return None
        margin = min(abs(b) / _kernel_threshold(grid, a, dv)
                     for (a, b, c, dv) in first + second)
        if margin > best_margin:
            best, best_margin = tau, margin
    return best if best_margin >= 1.0 else None


def exact_quadratic_propagate(potential: PotentialSpec, u0: ComplexField,
                              t: float, origin: float = 0.0,
                              _depth: int = 0) -> ComplexField:
    """Apply the exact linear-canonical propagator over [origin, origin + t].

    Supported: separable quadratic kinds (free, per-axis harmonic and step
    springs, diagonal custom wells) in any dimension, and the pure uniform
    magnetic field in d = 2.  Times whose kernel the grid cannot resolve are
    reached by composing exactly-resolvable hops, which also keeps the global
    phase continuous from t = 0; genuinely unreachable sample times raise
    :class:`FocalTimeError`.
    """
    if t == 0.0:
        return u0.copy()
    if _depth > 40:
        raise FocalTimeError("no resolvable kernel decomposition found")
    g = u0.grid
    window = _focal_window(potential)
    if abs(t) > 0.8 * window:
        tau = 0.8 * window * np.sign(t)
        mid = exact_quadratic_propagate(potential, u0, tau, origin, _depth + 1)
        return exact_quadratic_propagate(potential, mid, t - tau, origin + tau, _depth + 1)
    if potential.kind == "magnetic":
        return _magnetic_exact(potential, u0, t, origin, _depth)

    blocks = _separable_blocks(potential, origin, t)
    if not _all_resolvable(g, blocks):
        tau = _pick_intermediate(potential, g, origin, t, window)
        if tau is None:
            # fall back to the focal point-transform when the map is a signed
            # permutation; otherwise the time is unsupported on this grid
            if all(abs(b) < FOCAL_DETERMINANT_TOLERANCE for (_, b, _, _) in blocks):
                vals = u0.values
                for a, (A, B, C, D) in enumerate(blocks):
                    vals = _apply_point_transform(vals, g, A, C, a)
                return ComplexField(g, vals, "position")
            raise FocalTimeError(
                f"sample time {t} is unsupported: kernel unresolvable on this grid")
        mid = exact_quadratic_propagate(potential, u0, tau, origin, _depth + 1)
        return exact_quadratic_propagate(potential, mid, t - tau, origin + tau, _depth + 1)

    vals = u0.values
    for a, (A, B, C, D) in enumerate(blocks):
        K = _axis_kernel(g, A, B, C, D)
        vals = _apply_axis_matrix(vals, K, a)
    return ComplexField(g, vals, "position")


def _magnetic_exact(potential: PotentialSpec, u0: ComplexField, t: float,
                    origin: float = 0.0, _depth: int = 0) -> ComplexField:
    """Uniform-field propagator via Landau fibers.

    In Landau gauge the Fourier transform along x1 block-diagonalizes the
    Hamiltonian into shifted 1-d oscillators of frequency b; each fiber is a
    common Mehler kernel conjugated by linear phases.
    """
    if potential.params.get("scalar_omega", 0.0) != 0.0:
        raise ValueError("exact magnetic path supports a pure uniform field only")
    b = potential.params["field_strength"]
    if b == 0.0:
        return free_evolve(u0, t)
    g = u0.grid
    if g.dimension != 2:
        raise ValueError("uniform-field propagation requires d = 2")
    bt = b * t
    if abs(np.sin(bt) / b) < _kernel_threshold(g, np.cos(bt), np.cos(bt)):
        window = _focal_window(potential)
        tau = _pick_magnetic_hop(g, b, t, window)
        if tau is None:
            raise FocalTimeError(
                f"sample time {t} is unsupported for the field kernel on this grid")
        mid = _magnetic_exact(potential, u0, tau, origin, _depth + 1)
        return _magnetic_exact(potential, mid, t - tau, origin + tau, _depth + 1)
    x1, x2 = g.meshgrid()
    gauge = np.exp(0.5j * b * x1 * x2)
    w = u0.values / gauge
    F = _axis_to_frequency(w, g, axis=0)          # rows indexed by xi1
    xi1 = g.axis_frequencies()
    am, bm = np.cos(bt), np.sin(bt) / b
    cm, dm = -b * np.sin(bt), np.cos(bt)
    K0 = _axis_kernel(g, am, bm, cm, dm)
    x = g.axis_points()
    gamma = -xi1 * np.tan(0.5 * bt)
    delta = -(xi1 ** 2 / b) * np.tan(0.5 * bt)
    P = np.exp(1j * gamma[:, None] * x[None, :])
    F = (P * F) @ K0.T
    F = P * F * np.exp(1j * delta)[:, None]
    out = _axis_to_position(F, g, axis=0)
    return ComplexField(g, out * gauge, "position")


def evolve(potential: PotentialSpec, u0: ComplexField, t: float,
           origin: float = 0.0, method: str = "auto",
           dt: float = 1e-3) -> ComplexField:
    """Single-state propagation U(origin + t, origin) u0, any sign of t."""
    if t == 0.0:
        return u0.copy()
    if method == "auto":
        method = "exact-free" if potential.kind == "free" else "exact-quadratic"
    if method == "exact-free":
        return free_evolve(u0, t)
    if method == "exact-quadratic":
        return exact_quadratic_propagate(potential, u0, t, origin)
    if method == "split-step":
        if t < 0:
            # time reversal: for real autonomous V, U(-t) = conj o U(t) o conj
            if not potential.autonomous:
                raise ValueError("backward split-step needs an autonomous symbol")
            back = evolve(potential, ComplexField(u0.grid, np.conj(u0.values), "position"),
                          -t, origin=origin, method="split-step", dt=dt)
            return ComplexField(u0.grid, np.conj(back.values), "position")
        _check_step_alignment(potential, origin, origin + t, dt)
        nsteps = max(1, int(round(t / dt)))
        step = t / nsteps
        stepper = SplitStepper(potential, u0.grid, step)
        u = u0.copy()
        for k in range(nsteps):
            u = stepper.step(u, origin + k * step)
        return u
    raise ValueError(f"unknown method {method!r}")


# ---- Lens transform ------------------------------------------------------------------


def _scaled_evaluation_matrix(grid, scale: float) -> np.ndarray:
    """Matrix evaluating a band-limited field at the points x_j * scale."""
    x = grid.axis_points() * scale
    xi = grid.axis_frequencies()
    return np.exp(1j * x[:, None] * xi[None, :]) * (grid.dual_spacing / np.sqrt(2.0 * np.pi))


def lens_transform(trace: SpacetimeTrace, out_times=None) -> SpacetimeTrace:
    """Map a free-evolution trace to the isotropic-oscillator solution.

    L u(t, x) = (cos t)^(-d/2) u(tan t, x / cos t) exp(-i |x|^2 tan(t) / 2),
    valid for |t| < pi/2; the output solves the oscillator with V = |x|^2 / 2.
    ``u(tan t)`` is looked up at the nearest trace node (the trace must be
    dense enough) and the spatial dilation is evaluated band-limitedly.
    """
    from .grid import to_frequency as full_fft

    g = trace.grid
    d = g.dimension
    if out_times is None:
        out_times = np.arctan(trace.times)
    out_times = np.asarray(out_times, dtype=float)
    if np.any(np.abs(out_times) >= 0.5 * np.pi):
        raise ValueError("Lens transform output times must lie in (-pi/2, pi/2)")
    dt_in = np.max(np.diff(trace.times)) if len(trace.times) > 1 else 0.0
    mesh = g.meshgrid()
    r2 = np.zeros(g.shape)
    for a in range(d):
        r2 = r2 + mesh[a] ** 2

    fields = []
    for t in out_times:
        tau = np.tan(t)
        k = int(np.argmin(np.abs(trace.times - tau)))
        if abs(trace.times[k] - tau) > dt_in + 1e-12:
            raise ValueError(f"trace is too sparse to look up u(tan {t})")
        u = trace.fields[k]
        ct = np.cos(t)
        if abs(ct - 1.0) < 1e-15:
            vals = u.values.copy()
        else:
            uh = full_fft(u).values
            E = _scaled_evaluation_matrix(g, 1.0 / ct)
            vals = uh
            for a in range(d):
                vals = _apply_axis_matrix(vals, E, a)
        vals = vals * ct ** (-d / 2.0) * np.exp(-0.5j * r2 * np.tan(t))
        fields.append(ComplexField(g, vals, "position"))
    return SpacetimeTrace(out_times, fields)


# ---- dispersive ratios -----------------------------------------------------------------


def dispersive_ratio(potential: PotentialSpec, grid, t_list, width: float,
                     method: str = "auto") -> list:
    """(t, sup|U(t) f| / ||f||_L1) for a near-delta Gaussian of the given width."""
    t_list = sorted(float(t) for t in t_list)
    if width < 4.0 * grid.spacing:
        raise ValueError(f"width {width} is unresolvable at spacing {grid.spacing}")
    if width ** 2 > min(t_list) / 4.0:
        raise ValueError(f"width {width} too large for the smallest time {t_list[0]}")
    mesh = grid.meshgrid()
    r2 = np.zeros(grid.shape)
    for a in range(grid.dimension):
        r2 = r2 + mesh[a] ** 2
    f = ComplexField(grid, np.exp(-0.5 * r2 / width ** 2) + 0j, "position")
    l1 = lp_norm(f, 1.0)
    out = []
    for t in t_list:
        u = evolve(potential, f, t, method=method)
        out.append((t, lp_norm(u, np.inf) / l1))
    return out


# ---- Galilei covariance ---------------------------------------------------------------


def galilei_covariance_residual(potential: PotentialSpec, z0, f: ComplexField,
                                t: float, dt: float = 1e-4,
                                method: str = "auto") -> float:
    """L2 defect of U(t,0) pi(z0) f = e^{i phi(t)} pi(z0^t) U^{z0}(t, 0) f.

    Both sides are propagated independently; for the quadratic family the
    transformed symbol equals the original one, so U^{z0} reuses the same
    potential.  The phase phi is integrated along the bicharacteristic of z0.
    """
    from .potentials import galilei_frame

    x0, xi0 = np.atleast_1d(np.asarray(z0[0], float)), np.atleast_1d(np.asarray(z0[1], float))
    frame = galilei_frame(potential, (x0, xi0), (0.0, t), dt=dt)
    xt, xit = frame.trajectory.point_at(t)
    phi = frame.trajectory.phase_at(t)

    lhs = evolve(potential, phase_space_shift(f, x0, xi0), t, method=method, dt=dt)
    inner = evolve(frame.transformed, f, t, method=method, dt=dt)
    rhs = phase_space_shift(inner, xt, xit) * np.exp(1j * phi)
    return norm(lhs - rhs)
