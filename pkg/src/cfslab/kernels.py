"""Kernels and jets: fermionic projector P, variational kernel Q, derivatives.

The kernel Q(x,y) is the Riesz representative of the first variation of the
Lagrangian with respect to the kernel P(x,y):

    dL_kappa(x,y) = 2 Re Tr_{S_x}( Q(x,y) dP(x,y)^* )

with the adjoint taken in the spin inner products.  Q is assembled from the
spectral decomposition of the closed chain (chain rule through |lambda|),
with a symmetrized finite-difference fallback at eigenvalue degeneracies.

Directional derivatives of L along point perturbations use central finite
differences on the frame/spectrum parametrization: commutator directions
move along exact unitary conjugation, generic Hermitian directions through
a rank-(2n) retraction of the perturbed operator.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import core
from .core import SpacetimePoint, chain_lagrangian, p_matrix
from .errors import NumericalError, PreconditionError
from .measures import DiscreteMeasure, physical_wave

DEFAULT_FD_STEP = 1e-5
DEGENERACY_TOL = 1e-8
ZERO_OVERLAP_TOL = 1e-13


# ---------------------------------------------------------------------------
# jets

@dataclass(frozen=True)
class CommutatorJet:
    """Jet generated by a Hermitian operator: C(x) = i [A, x].

    ``generator`` must vanish on the orthogonal complement of the
    distinguished subspace when one is configured; pass ``hf_projector``
    to :func:`commutator_jet` to enforce this.
    """

    generator: np.ndarray
    scalar: np.ndarray | None = None

    def field(self, x: SpacetimePoint) -> np.ndarray:
        op = x.operator()
        return 1j * (self.generator @ op - op @ self.generator)

    def move(self, x: SpacetimePoint, t: float) -> SpacetimePoint:
        u = scipy.linalg.expm(1j * t * self.generator)
        return core.conjugate_point(x, u)


@dataclass(frozen=True)
class PointJet:
    """Jet given by one Hermitian perturbation direction per point."""

    directions: tuple  # per point: f x f Hermitian ndarray or None
    scalar: np.ndarray | None = None
    trace_fixed: bool = False

    def move_index(self, rho: DiscreteMeasure, i: int, t: float) -> SpacetimePoint:
        h = self.directions[i]
        x = rho.points[i]
        if h is None:
            return x
        c = x.local_trace if self.trace_fixed else None
        return core.point_from_operator(x.operator() + t * np.asarray(h), x.n, c)


@dataclass(frozen=True)
class FermionicJet:
    """Variation of the wave evaluation operator, trivial scalar component.

    ``delta_psi`` holds one 2n x f coordinate matrix per point (the
    variation of psi^u evaluated on Hilbert-space vectors); columns outside
    the distinguished subspace must vanish.
    """

    delta_psi: tuple

    def induced_directions(self, rho: DiscreteMeasure):
        """Vector field u(x) = -dPsi(x)^* Psi(x) - Psi(x)^* dPsi(x)."""
        dirs = []
        for p, dps in zip(rho.points, self.delta_psi):
            g = p.spin_gram()
            # Psi(x)^* = V_x G_x as a map S_x -> H
            a = (dps.conj().T * g) @ p.frame.conj().T
            dirs.append(-(a + a.conj().T))
        return tuple(dirs)

    def as_point_jet(self, rho: DiscreteMeasure) -> PointJet:
        return PointJet(directions=self.induced_directions(rho))


def commutator_jet(a, rho: DiscreteMeasure, hf_projector=None) -> CommutatorJet:
    """Commutator jet for a Hermitian generator supported on H^f."""
    a = np.asarray(a, dtype=complex)
    if np.abs(a - a.conj().T).max() > 1e-12 * max(1.0, np.abs(a).max()):
        raise PreconditionError("generator must be Hermitian")
    if hf_projector is not None:
        p = np.asarray(hf_projector)
        if np.abs(a - p @ a @ p).max() > 1e-10 * max(1.0, np.abs(a).max()):
            raise PreconditionError("generator must vanish on the complement of H^f")
    if a.shape[0] != rho.dim_f:
        raise PreconditionError("generator dimension does not match the measure")
    return CommutatorJet(generator=a)


def _move_slot(rho: DiscreteMeasure, i: int, jet, t: float) -> SpacetimePoint:
    if isinstance(jet, CommutatorJet):
        return jet.move(rho.points[i], t)
    if isinstance(jet, PointJet):
        return jet.move_index(rho, i, t)
    raise PreconditionError(f"unsupported jet type {type(jet).__name__}")


# ---------------------------------------------------------------------------
# the kernel Q

def chain_l_of_p(p_c, gx, gy, n: int, kappa: float) -> float:
    """L_kappa as a function of a free coordinate matrix for P(x,y)."""
    a = p_c @ core.spin_adjoint(p_c, gx, gy)
    return chain_lagrangian(np.linalg.eigvals(a), n, kappa)


def pairing(q_c, dp_c, gx, gy) -> float:
    """The variation pairing 2 Re Tr(Q dP^*) in frame coordinates."""
    m = (gx[:, None] * q_c) / gy[None, :]
    return 2.0 * float(np.real(np.sum(m * dp_c.conj())))


def q_block_fd(x: SpacetimePoint, y: SpacetimePoint, kappa: float,
               step: float = 1e-6) -> np.ndarray:
    """Kernel block from symmetric finite differences of the defining relation.

    Independent of the spectral route; also serves as its test oracle.
    """
    n = x.n
    gx, gy = x.spin_gram(), y.spin_gram()
    p0 = p_matrix(x, y)
    scale = max(np.linalg.norm(p0), 1.0)
    h = step * scale
    m = np.zeros((2 * n, 2 * n), dtype=complex)
    for a in range(2 * n):
        for b in range(2 * n):
            for phase, weight in ((1.0, 1.0), (1j, 1j)):
                dp = np.zeros_like(p0)
                dp[a, b] = phase
                fp = chain_l_of_p(p0 + h * dp, gx, gy, n, kappa)
                fm = chain_l_of_p(p0 - h * dp, gx, gy, n, kappa)
                m[a, b] += 0.5 * weight * (fp - fm) / (2 * h)
    return _m_to_q(m, gx, gy)


def _m_to_q(m, gx, gy):
    # delta L = 2 Re sum M_ab conj(dP_ab) with M = G_x Q G_y^{-1}
    return (m / gx[:, None]) * gy[None, :]


def q_block(x: SpacetimePoint, y: SpacetimePoint, kappa: float):
    """Kernel block Q(x,y) with degeneracy handling.

    Returns (block, flag) where flag is "" for the spectral route,
    "zero" for vanishing overlap and "fd" for the finite-difference
    fallback at (near-)degenerate chains.
    """
    n = x.n
    gx, gy = x.spin_gram(), y.spin_gram()
    p_c = p_matrix(x, y)
    scale = np.abs(x.spectrum).max() * np.abs(y.spectrum).max()
    if np.linalg.norm(p_c) <= ZERO_OVERLAP_TOL * np.sqrt(scale):
        return np.zeros((2 * n, 2 * n), dtype=complex), "zero"
    a = p_c @ core.spin_adjoint(p_c, gx, gy)
    lam, v = np.linalg.eig(a)
    mod = np.abs(lam)
    chain_scale = mod.max()
    degenerate = mod.min() <= DEGENERACY_TOL * chain_scale
    if not degenerate and 2 * n > 1:
        gaps = np.abs(lam[:, None] - lam[None, :])[~np.eye(2 * n, dtype=bool)]
        degenerate = gaps.min() <= DEGENERACY_TOL * chain_scale
    if not degenerate:
        cond = np.linalg.cond(v)
        degenerate = not np.isfinite(cond) or cond > 1e8
    if degenerate:
        return q_block_fd(x, y, kappa), "fd"
    s1 = mod.sum()
    g = 2.0 * mod - s1 / n + 2.0 * kappa * s1
    c = g * lam.conj() / mod
    phi = (v * c) @ np.linalg.inv(v)
    phi_sym = 0.5 * (phi + (phi.conj().T * gx) / gx[:, None])
    return phi_sym @ p_c, ""


@dataclass(frozen=True)
class QKernel:
    """Point-pair family of spin-space maps, blocks[i, j] : S_{x_j} -> S_{x_i}."""

    blocks: np.ndarray  # (N, N, 2n, 2n)
    kind: str = "full"
    fallback_pairs: tuple = field(default_factory=tuple)
    zero_pairs: tuple = field(default_factory=tuple)

    def block(self, i: int, j: int) -> np.ndarray:
        return self.blocks[i, j]

    def apply(self, rho: DiscreteMeasure, psi: np.ndarray) -> np.ndarray:
        """(Q psi)(x_i) = sum_j rho_j Q(i,j) psi_j for psi of shape (N, 2n)."""
        return np.einsum("ijab,j,jb->ia", self.blocks, rho.weights, psi)


def q_kernel(rho: DiscreteMeasure, kappa: float, kind: str = "full") -> QKernel:
    n = rho.n
    nn = len(rho)
    blocks = np.zeros((nn, nn, 2 * n, 2 * n), dtype=complex)
    fallback, zero = [], []
    for i in range(nn):
        for j in range(nn):
            blk, flag = q_block(rho.points[i], rho.points[j], kappa)
            blocks[i, j] = blk
            if flag == "fd":
                fallback.append((i, j))
            elif flag == "zero":
                zero.append((i, j))
    ker = QKernel(blocks=blocks, kind=kind,
                  fallback_pairs=tuple(fallback), zero_pairs=tuple(zero))
    check_kernel_symmetry(rho, ker)
    return ker


def check_kernel_symmetry(rho: DiscreteMeasure, ker: QKernel, tol: float = 1e-8):
    """Assert Q(x,y)^* = Q(y,x) in the spin adjoints.

    Deviations are measured relative to the size of the whole kernel;
    spacelike pairs have identically vanishing blocks whose rounding noise
    carries no information.
    """
    scale = max(np.abs(ker.blocks).max(), 1e-300)
    worst = 0.0
    for i, x in enumerate(rho.points):
        for j, y in enumerate(rho.points):
            adj = core.spin_adjoint(ker.blocks[i, j], x.spin_gram(), y.spin_gram())
            worst = max(worst, np.abs(adj - ker.blocks[j, i]).max() / scale)
    if worst > tol:
        raise NumericalError(f"kernel symmetry violated: relative deviation {worst:.2e}")
    return worst


def fermionic_projector_kernel(rho: DiscreteMeasure) -> np.ndarray:
    """All blocks P(x_i, x_j) in frame coordinates, shape (N, N, 2n, 2n)."""
    n = rho.n
    nn = len(rho)
    blocks = np.zeros((nn, nn, 2 * n, 2 * n), dtype=complex)
    for i in range(nn):
        for j in range(nn):
            blocks[i, j] = p_matrix(rho.points[i], rho.points[j])
    return blocks


def q_reg_split(q: QKernel, q_sing: QKernel, rho: DiscreteMeasure, omega,
                hf_basis, tol: float = 1e-9) -> QKernel:
    """Q^reg = Q - Q^sing after verifying the admissibility of Q^sing.

    Conditions checked: symmetry of Q^sing, annihilation of the physical
    wave functions of H^f under the measure integral, and the vanishing of
    its surface-layer contribution on the given past set.
    """
    check_kernel_symmetry(rho, q_sing)
    hf_basis = np.asarray(hf_basis, dtype=complex)
    scale = max(np.abs(q_sing.blocks).max(), 1e-300)
    report = []
    for k in range(hf_basis.shape[1]):
        psi = physical_wave(rho, hf_basis[:, k])
        res = q_sing.apply(rho, psi)
        rel = np.abs(res).max() / (scale * max(np.abs(psi).max(), 1e-30))
        report.append(rel)
        if rel > tol:
            raise PreconditionError(
                f"Q^sing does not annihilate wave function {k}: residual {rel:.2e}"
            )
    omega = np.asarray(omega, dtype=bool)
    for k in range(hf_basis.shape[1]):
        for m in range(hf_basis.shape[1]):
            val = _osi_double_sum(rho, q_sing, omega,
                                  physical_wave(rho, hf_basis[:, k]),
                                  physical_wave(rho, hf_basis[:, m]))
            if abs(val) > tol * scale * rho.volume**2:
                raise PreconditionError(
                    f"Q^sing surface-layer contribution nonzero for pair ({k},{m})"
                )
    return QKernel(blocks=q.blocks - q_sing.blocks, kind="reg",
                   fallback_pairs=q.fallback_pairs, zero_pairs=())


def _osi_double_sum(rho: DiscreteMeasure, ker: QKernel, omega, psi, phi) -> complex:
    """-2i (sum_{Omega x M\\Omega} - sum_{M\\Omega x Omega}) rr <psi|Q phi>."""
    side = np.where(np.asarray(omega, dtype=bool), 1.0, 0.0)
    w = side[:, None] * (1 - side[None, :]) - (1 - side[:, None]) * side[None, :]
    grams = np.stack([p.spin_gram() for p in rho.points])
    vals = np.einsum("ia,ijab,jb->ij", psi.conj() * grams[:, :], ker.blocks, phi)
    return complex(-2j * np.sum(w * rho.weights[:, None] * rho.weights[None, :] * vals))


# ---------------------------------------------------------------------------
# directional derivatives of the Lagrangian

def _lagrangian_pts(x: SpacetimePoint, y: SpacetimePoint, kappa: float) -> float:
    return chain_lagrangian(np.linalg.eigvals(core.closed_chain(x, y)), x.n, kappa)


def directional_derivative_L(rho: DiscreteMeasure, i: int, j: int, jet1, jet2,
                             kappa: float, step: float = DEFAULT_FD_STEP,
                             richardson: bool = True) -> float:
    """(D_{1,v1} + D_{2,v2}) L_kappa(x_i, x_j) by central finite differences.

    Pass ``None`` for a slot to differentiate only the other one.  The two
    slots are moved along a common parameter, which evaluates the sum of the
    partial derivatives in one stencil.
    """
    x, y = rho.points[i], rho.points[j]

    def val(t: float) -> float:
        xt = _move_slot(rho, i, jet1, t) if jet1 is not None else x
        yt = _move_slot(rho, j, jet2, t) if jet2 is not None else y
        return _lagrangian_pts(xt, yt, kappa)

    scale = max(np.abs(x.spectrum).max(), np.abs(y.spectrum).max())
    h = step * max(scale, 1e-8)
    d = (val(h) - val(-h)) / (2 * h)
    if not richardson:
        return d
    d2 = (val(h / 2) - val(-h / 2)) / h
    return (4 * d2 - d) / 3


def d2_mixed_L(rho: DiscreteMeasure, i: int, j: int, jet1, jet2, kappa: float,
               step: float = 1e-3, richardson: bool = True) -> float:
    """Mixed second derivative D_{1,v1} D_{2,v2} L_kappa(x_i, x_j)."""
    x, y = rho.points[i], rho.points[j]
    scale = max(np.abs(x.spectrum).max(), np.abs(y.spectrum).max())
    h0 = step * max(scale, 1e-8)

    def val(s: float, t: float) -> float:
        return _lagrangian_pts(_move_slot(rho, i, jet1, s),
                               _move_slot(rho, j, jet2, t), kappa)

    def stencil(h: float) -> float:
        return (val(h, h) - val(h, -h) - val(-h, h) + val(-h, -h)) / (4 * h * h)

    d = stencil(h0)
    if not richardson:
        return d
    return (4 * stencil(h0 / 2) - d) / 3


def comm_dp1(x: SpacetimePoint, y: SpacetimePoint, a) -> np.ndarray:
    """D_1 P(x,y) along the commutator direction i[A, .], frame gauge U V_x."""
    return core.P_KERNEL_SIGN * (-1j) * (x.frame.conj().T @ a @ y.frame) * y.spectrum


def d1L_comm_analytic(x: SpacetimePoint, y: SpacetimePoint, a, kappa: float,
                      q_c=None) -> float:
    """D_{1,C(A)} L_kappa via the kernel: 2 Re Tr(Q dP_1^*)."""
    if q_c is None:
        q_c, _ = q_block(x, y, kappa)
    return pairing(q_c, comm_dp1(x, y, a), x.spin_gram(), y.spin_gram())


def d1_minus_d2_comm(x: SpacetimePoint, y: SpacetimePoint, a, kappa: float,
                     q_c=None) -> float:
    """(D_{1,C} - D_{2,C}) L_kappa analytically (equals 2 D_{1,C} L_kappa)."""
    return 2.0 * d1L_comm_analytic(x, y, a, kappa, q_c)


def d2L_comm_analytic(x: SpacetimePoint, y: SpacetimePoint, a, kappa: float,
                      q_c=None) -> float:
    """D_{2,C(A)} L_kappa via the kernel (dP_2 = -dP_1 for conjugations)."""
    if q_c is None:
        q_c, _ = q_block(x, y, kappa)
    return pairing(q_c, -comm_dp1(x, y, a), x.spin_gram(), y.spin_gram())


def linearized_field_residual(rho: DiscreteMeasure, v, u, kappa: float, s: float,
                              step: float = DEFAULT_FD_STEP) -> np.ndarray:
    """<u, Delta v>(x_i) for a linearized-solution candidate v and test jet u.

    Nested finite differences: the inner map collects the first variation
    of ell along v, the outer derivative follows the test jet u.  Jets are
    never differentiated: their values at the base points are reused along
    the outer path.
    """
    nn = len(rho)
    a_v = v.scalar if getattr(v, "scalar", None) is not None else np.zeros(nn)
    a_u = u.scalar if getattr(u, "scalar", None) is not None else np.zeros(nn)

    def inner(xi: SpacetimePoint, i: int) -> float:
        # sum_j rho_j (nabla_{1,v} + nabla_{2,v}) L(x_i, x_j) - a_v(x_i) s
        tot = 0.0
        for j in range(nn):
            xj = rho.points[j]
            lij = _lagrangian_pts(xi, xj, kappa)
            tot += rho.weights[j] * (a_v[i] + a_v[j]) * lij

            def val(t: float) -> float:
                xit = _move_one(xi, v, i, t)
                xjt = _move_one(xj, v, j, t)
                return _lagrangian_pts(xit, xjt, kappa)

            scale = np.abs(xi.spectrum).max()
            h = step * max(scale, 1e-8)
            tot += rho.weights[j] * (val(h) - val(-h)) / (2 * h)
        return tot - a_v[i] * s

    out = np.zeros(nn)
    for i in range(nn):
        xi = rho.points[i]
        base = inner(xi, i)
        scale = np.abs(xi.spectrum).max()
        h = np.sqrt(step) * max(scale, 1e-8)
        up = inner(_move_one(xi, u, i, h), i)
        dn = inner(_move_one(xi, u, i, -h), i)
        out[i] = a_u[i] * base + (up - dn) / (2 * h)
    return out


def _move_one(x: SpacetimePoint, jet, i: int, t: float) -> SpacetimePoint:
    if isinstance(jet, CommutatorJet):
        return jet.move(x, t)
    if isinstance(jet, PointJet):
        h = jet.directions[i]
        if h is None:
            return x
        c = x.local_trace if jet.trace_fixed else None
        return core.point_from_operator(x.operator() + t * np.asarray(h), x.n, c)
    raise PreconditionError(f"unsupported jet type {type(jet).__name__}")
