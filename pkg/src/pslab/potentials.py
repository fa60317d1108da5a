"""Admissible symbols: quadratic-family potentials with derivative-bound metadata.

Every concrete kind is a (possibly piecewise-constant-in-time) quadratic form

    a(t, x, xi) = |xi|^2/2 + <xi, G(t) x> + <x, Q(t) x>/2,

which covers the free particle, (an)isotropic harmonic oscillators, spring
constants that are step functions of time, the uniform magnetic field in
symmetric gauge, and arbitrary time-sampled quadratic wells.  These kinds
admit closed-form flows for oracles while exercising rough time dependence.

Conventions:
  * ``harmonic(omega)`` means V(x) = sum_j omega_j^2 x_j^2 / 2 (classical
    oscillation frequency omega_j per axis).
  * ``magnetic(b)`` is H = -(grad - iA)^2/2 + V with A(x) = (b/2)(-x2, x1),
    i.e. symbol |xi|^2/2 - <A(x), xi> + |A(x)|^2/2 + V(x).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ETA_SMALLNESS = 0.01  # smallness parameter for the time-window inequality


def _spectral_norm(m: np.ndarray) -> float:
    return float(np.linalg.norm(m, 2)) if m.size else 0.0


@dataclass(frozen=True)
class PotentialSpec:
    """Quadratic-family symbol with piecewise-constant time dependence.

    ``switch_times`` are the interior switch instants (sorted); piece ``i`` is
    active on [switch_times[i-1], switch_times[i]).  Before the first switch
    piece 0 applies, after the last the final piece applies, so a single piece
    means an autonomous symbol.
    """

    kind: str
    dimension: int
    coupling: tuple          # per-piece G matrices (xi-x coupling), as nested tuples
    quadratic: tuple         # per-piece Q matrices (x-Hessian of the scalar part)
    switch_times: tuple = ()
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if len(self.coupling) != len(self.quadratic):
            raise ValueError("need one coupling matrix per quadratic piece")
        if len(self.switch_times) != len(self.quadratic) - 1:
            raise ValueError("need exactly one more piece than switch time")
        if any(np.diff(self.switch_times) <= 0):
            raise ValueError("switch times must be strictly increasing")

    # ---- piecewise coefficient access -------------------------------------

    def _piece(self, t: float) -> int:
        return int(np.searchsorted(np.asarray(self.switch_times), t, side="right"))

    def coupling_at(self, t: float) -> np.ndarray:
        return np.asarray(self.coupling[self._piece(t)], dtype=float)

    def quadratic_at(self, t: float) -> np.ndarray:
        return np.asarray(self.quadratic[self._piece(t)], dtype=float)

    @property
    def autonomous(self) -> bool:
        return len(self.quadratic) == 1

    # ---- symbol evaluators -------------------------------------------------

    def symbol(self, t: float, x: np.ndarray, xi: np.ndarray) -> float:
        x = np.asarray(x, dtype=float)
        xi = np.asarray(xi, dtype=float)
        G, Q = self.coupling_at(t), self.quadratic_at(t)
        return float(0.5 * xi @ xi + xi @ G @ x + 0.5 * x @ Q @ x)

    def grad_x(self, t: float, x, xi) -> np.ndarray:
        G, Q = self.coupling_at(t), self.quadratic_at(t)
        return np.asarray(G, float).T @ np.asarray(xi, float) + Q @ np.asarray(x, float)

    def grad_xi(self, t: float, x, xi) -> np.ndarray:
        G = self.coupling_at(t)
        return np.asarray(xi, dtype=float) + G @ np.asarray(x, dtype=float)

    def hess_xx(self, t: float) -> np.ndarray:
        return self.quadratic_at(t)

    def hess_xxi(self, t: float) -> np.ndarray:
        """Matrix [d^2 a / dx_i dxi_j] = G(t)^T."""
        return self.coupling_at(t).T

    def hess_xixi(self, t: float) -> np.ndarray:
        return np.eye(self.dimension)

    # ---- derivative-bound metadata ------------------------------------------

    @property
    def hess_xx_bound(self) -> float:
        """M_2 = sup_t ||a_xx(t)||; higher M_k vanish for quadratic kinds."""
        return max(_spectral_norm(np.asarray(Q, float)) for Q in self.quadratic)

    @property
    def hess_xxi_bound(self) -> float:
        return max(_spectral_norm(np.asarray(G, float)) for G in self.coupling)

    @property
    def hess_bound(self) -> float:
        """sup_t ||second derivatives|| across all blocks (a_xixi = I included)."""
        return max(1.0, self.hess_xx_bound, self.hess_xxi_bound)

    def derivative_bound(self, k: int) -> float:
        """M_k = sup_t ||d^k_x V||_inf; finite for all k >= 2."""
        if k < 2:
            raise ValueError("derivative bounds are tracked for order >= 2 only")
        return self.hess_xx_bound if k == 2 else 0.0

    # ---- scalar potential on a grid -----------------------------------------

    def scalar_on_grid(self, t: float, mesh: list) -> np.ndarray:
        """V(t, x) = <x, Q(t) x>/2 sampled on position coordinate arrays."""
        Q = self.quadratic_at(t)
        out = np.zeros_like(mesh[0])
        for i in range(self.dimension):
            for j in range(self.dimension):
                if Q[i, j] != 0.0:
                    out = out + 0.5 * Q[i, j] * mesh[i] * mesh[j]
        return out

    def vector_potential_matrix(self) -> np.ndarray:
        """A with A(x) = A @ x; zero for scalar kinds."""
        if self.kind == "magnetic":
            b = self.params["field_strength"]
            return 0.5 * b * np.array([[0.0, -1.0], [1.0, 0.0]])
        return np.zeros((self.dimension, self.dimension))


# ---- constructors ------------------------------------------------------------


def free(dimension: int) -> PotentialSpec:
    z = tuple(map(tuple, np.zeros((dimension, dimension))))
    return PotentialSpec("free", dimension, (z,), (z,))


def harmonic(omega, dimension: int | None = None) -> PotentialSpec:
    """V(x) = sum_j omega_j^2 x_j^2 / 2."""
    om = np.atleast_1d(np.asarray(omega, dtype=float))
    d = dimension if dimension is not None else len(om)
    if len(om) == 1:
        om = np.full(d, om[0])
    if len(om) != d:
        raise ValueError("need one spring frequency per axis")
    z = tuple(map(tuple, np.zeros((d, d))))
    q = tuple(map(tuple, np.diag(om ** 2)))
    return PotentialSpec("harmonic", d, (z,), (q,), params={"omega": tuple(om)})


def time_step_harmonic(switch_times, omegas, dimension: int = 1) -> PotentialSpec:
    """Spring constants that are step functions of time: omega(t) piecewise."""
    sw = tuple(float(s) for s in switch_times)
    pieces = []
    for om in omegas:
        omv = np.full(dimension, float(om)) if np.isscalar(om) else np.asarray(om, float)
        pieces.append(tuple(map(tuple, np.diag(omv ** 2))))
    z = tuple(map(tuple, np.zeros((dimension, dimension))))
    return PotentialSpec("time-step-harmonic", dimension, (z,) * len(pieces),
                         tuple(pieces), sw, params={"omegas": tuple(map(float, omegas))})


def magnetic(field_strength: float, scalar_omega: float = 0.0) -> PotentialSpec:
    """Uniform magnetic field in d = 2 (symmetric gauge), optional harmonic scalar part."""
    b = float(field_strength)
    amat = 0.5 * b * np.array([[0.0, -1.0], [1.0, 0.0]])
    G = -amat  # symbol term -<A(x), xi>
    Q = amat.T @ amat + np.diag([scalar_omega ** 2] * 2)  # |A(x)|^2/2 twice-derivative
    return PotentialSpec("magnetic", 2, (tuple(map(tuple, G)),),
                         (tuple(map(tuple, Q)),),
                         params={"field_strength": b, "scalar_omega": float(scalar_omega)})


def custom_quadratic(q_pieces, switch_times=(), dimension: int | None = None) -> PotentialSpec:
    """Arbitrary time-sampled symmetric quadratic wells V(t, x) = <x, Q(t) x>/2."""
    pieces = [np.atleast_2d(np.asarray(Q, dtype=float)) for Q in q_pieces]
    d = dimension if dimension is not None else pieces[0].shape[0]
    for Q in pieces:
        if Q.shape != (d, d):
            raise ValueError("quadratic pieces must be d x d")
        if not np.allclose(Q, Q.T):
            raise ValueError("quadratic pieces must be symmetric")
    z = tuple(map(tuple, np.zeros((d, d))))
    return PotentialSpec("custom-quadratic", d, (z,) * len(pieces),
                         tuple(tuple(map(tuple, Q)) for Q in pieces),
                         tuple(float(s) for s in switch_times))


def from_config(cfg: dict, dimension: int) -> PotentialSpec:
    """Build a potential from the harness config schema ``potential{kind,...}``."""
    kind = cfg.get("kind", "free")
    if kind == "free":
        return free(dimension)
    if kind == "harmonic":
        return harmonic(cfg.get("omega", 1.0), dimension)
    if kind == "time-step-harmonic":
        return time_step_harmonic(cfg["switch_times"], cfg["omegas"], dimension)
    if kind == "magnetic":
        if dimension != 2:
            raise ValueError("magnetic kind requires dimension 2")
        return magnetic(cfg.get("field_strength", 1.0), cfg.get("scalar_omega", 0.0))
    if kind == "custom-quadratic":
        return custom_quadratic(cfg["quadratic"], cfg.get("switch_times", ()), dimension)
    raise ValueError(f"unknown potential kind {kind!r}")


# ---- rescaling and the time window --------------------------------------------


def rescale(spec: PotentialSpec, scale: float) -> PotentialSpec:
    """V_N(t, x) = N^-2 V(N^-2 t, N^-1 x); kind is preserved.

    For the quadratic family: Q -> N^-4 Q, G -> N^-2 G, switches -> N^2 switches,
    hence M_2(V_N) = N^-4 M_2(V).
    """
    n = float(scale)
    if n < 1.0:
        raise ValueError(f"rescale expects N >= 1, got {n}")
    coupling = tuple(tuple(map(tuple, np.asarray(G, float) / n ** 2)) for G in spec.coupling)
    quadratic = tuple(tuple(map(tuple, np.asarray(Q, float) / n ** 4)) for Q in spec.quadratic)
    switches = tuple(s * n ** 2 for s in spec.switch_times)
    params = dict(spec.params)
    if spec.kind == "harmonic":
        params["omega"] = tuple(o / n ** 2 for o in params["omega"])
    if spec.kind == "time-step-harmonic":
        params["omegas"] = tuple(o / n ** 2 for o in params["omegas"])
    if spec.kind == "magnetic":
        params["field_strength"] = params["field_strength"] / n ** 2
        params["scalar_omega"] = params["scalar_omega"] / n ** 2
    return PotentialSpec(spec.kind, spec.dimension, coupling, quadratic, switches, params)


def select_T0(spec: PotentialSpec, eta: float = ETA_SMALLNESS, cap: float = 1.0) -> float:
    """Largest T0 <= cap with T0*||a_xxi|| + T0^2*||a_xx|| <= eta."""
    b = spec.hess_xxi_bound
    a = spec.hess_xx_bound
    if a == 0.0 and b == 0.0:
        return cap
    if a == 0.0:
        t0 = eta / b
    else:
        t0 = (-b + np.sqrt(b * b + 4.0 * a * eta)) / (2.0 * a)
    return float(min(cap, t0))


# ---- Galilei frames ------------------------------------------------------------


@dataclass
class GalileiFrame:
    """A moving phase-space frame along the trajectory of z0.

    Holds the trajectory, the accumulated phase phi(t) along it, and the
    transformed symbol, which removes the affine part of ``a`` about z0^t.
    For the quadratic family the transformed symbol equals the original
    quadratic part, so ``transformed`` is the same spec.
    """

    base: tuple                  # (x0, xi0) arrays
    trajectory: "object"         # Trajectory from the flow module
    original: PotentialSpec
    transformed: PotentialSpec

    def phase(self, t: float) -> float:
        """phi(t, z0) = integral_0^t <a_xi(z0^tau), xi0^tau> - a(z0^tau) dtau."""
        return self.trajectory.phase_at(t)

    def transformed_symbol(self, t: float, x, xi) -> float:
        """a^{z0}(t, z) = a(t, z0^t + z) - <x, a_x> - <xi, a_xi> - a(z0^t)."""
        xt, xit = self.trajectory.point_at(t)
        x = np.asarray(x, float)
        xi = np.asarray(xi, float)
        a0 = self.original.symbol(t, xt, xit)
        ax = self.original.grad_x(t, xt, xit)
        axi = self.original.grad_xi(t, xt, xit)
        return (self.original.symbol(t, xt + x, xit + xi)
                - float(x @ ax) - float(xi @ axi) - a0)


def galilei_frame(spec: PotentialSpec, z0, t_span, dt: float = 1e-3) -> GalileiFrame:
    """Flow z0 over ``t_span`` and package the frame data.

    The quadratic family is closed under the frame transformation (linear
    first-order parts stay linear), so the transformed spec reuses the
    original coefficient matrices.
    """
    from .flow import integrate_bicharacteristic

    x0, xi0 = (np.asarray(v, dtype=float) for v in z0)
    traj = integrate_bicharacteristic(spec, (x0, xi0), t_span[0], t_span[1], dt)
    return GalileiFrame(base=(x0, xi0), trajectory=traj,
                        original=spec, transformed=spec)
