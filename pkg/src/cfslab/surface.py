"""Surface layer integrals: conserved one-form, symplectic form, commutator
inner product, surface layer measure and conservation diagnostics.

Past sets are boolean masks over the support.  In finite discrete systems
every subset is surface-layer finite and causally equivalent to every
other, so time orientation is supplied by the caller; the conservation
statements are diagnostics whose exactness reflects the EL residual on the
symmetric difference.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .core import spin_adjoint
from .errors import NumericalError, PreconditionError
from .kernels import CommutatorJet, PointJet, QKernel
from .measures import DiscreteMeasure, physical_wave


def past_set(rho: DiscreteMeasure, indices) -> np.ndarray:
    mask = np.zeros(len(rho), dtype=bool)
    mask[np.asarray(indices, dtype=int)] = True
    return mask


def _negate(jet):
    if isinstance(jet, CommutatorJet):
        return CommutatorJet(generator=-jet.generator, scalar=jet.scalar)
    if isinstance(jet, PointJet):
        dirs = tuple(None if d is None else -np.asarray(d) for d in jet.directions)
        return PointJet(directions=dirs, scalar=jet.scalar, trace_fixed=jet.trace_fixed)
    raise PreconditionError(f"unsupported jet type {type(jet).__name__}")


def _cut_pairs(omega):
    omega = np.asarray(omega, dtype=bool)
    inside = np.where(omega)[0]
    outside = np.where(~omega)[0]
    return [(int(i), int(j)) for i in inside for j in outside]


def gamma(rho: DiscreteMeasure, omega, jet, kappa: float, route: str = "auto",
          qk: QKernel | None = None, step: float = kernels.DEFAULT_FD_STEP) -> float:
    """Conserved one-form: sum over Omega x (M\\Omega) of (nabla_1 - nabla_2) L."""
    pairs = _cut_pairs(omega)
    if not pairs:
        return 0.0
    use_analytic = route == "analytic" or (
        route == "auto" and isinstance(jet, CommutatorJet) and jet.scalar is None)
    if use_analytic and not isinstance(jet, CommutatorJet):
        raise PreconditionError("analytic route applies to commutator jets only")
    w = rho.weights
    total = 0.0
    if use_analytic:
        if qk is None:
            qk = kernels.q_kernel(rho, kappa)
        for i, j in pairs:
            total += w[i] * w[j] * kernels.d1_minus_d2_comm(
                rho.points[i], rho.points[j], jet.generator, kappa, qk.blocks[i, j])
        return total
    scal = jet.scalar if jet.scalar is not None else np.zeros(len(rho))
    neg = _negate(jet)
    for i, j in pairs:
        d = kernels.directional_derivative_L(rho, i, j, jet, neg, kappa, step=step)
        lij = 0.0
        if scal[i] != 0.0 or scal[j] != 0.0:
            lij = kernels._lagrangian_pts(rho.points[i], rho.points[j], kappa)
        total += w[i] * w[j] * ((scal[i] - scal[j]) * lij + d)
    return total


def gamma_scale(rho: DiscreteMeasure, omega, jet, kappa: float,
                qk: QKernel | None = None) -> float:
    """Sum of absolute per-pair contributions; the natural size of gamma."""
    if not isinstance(jet, CommutatorJet):
        raise PreconditionError("scale estimate implemented for commutator jets")
    if qk is None:
        qk = kernels.q_kernel(rho, kappa)
    w = rho.weights
    total = 0.0
    for i, j in _cut_pairs(omega):
        total += abs(w[i] * w[j] * kernels.d1_minus_d2_comm(
            rho.points[i], rho.points[j], jet.generator, kappa, qk.blocks[i, j]))
    return total


def _d2_analytic_displaced(xi, yj, a, kappa):
    q_c, _ = kernels.q_block(xi, yj, kappa)
    return kernels.d2L_comm_analytic(xi, yj, a, kappa, q_c)


def sigma(rho: DiscreteMeasure, omega, jet_u, jet_v, kappa: float,
          route: str = "auto", step: float = 1e-5) -> float:
    """Symplectic form: antisymmetrized mixed second derivatives over the cut.

    For pure commutator jets the inner derivative is evaluated through the
    kernel at displaced points and only the outer derivative is a finite
    difference; otherwise a full second-order stencil is used.
    """
    pairs = _cut_pairs(omega)
    if not pairs:
        return 0.0
    w = rho.weights
    semi = route == "semi" or (
        route == "auto"
        and isinstance(jet_u, CommutatorJet) and isinstance(jet_v, CommutatorJet)
        and jet_u.scalar is None and jet_v.scalar is None)
    total = 0.0
    if semi:
        for i, j in pairs:
            x, y = rho.points[i], rho.points[j]
            hscale = step * max(np.abs(x.spectrum).max(), 1e-8)

            def mixed(au, av):
                def diff(h):
                    fp = _d2_analytic_displaced(
                        CommutatorJet(generator=au).move(x, h), y, av, kappa)
                    fm = _d2_analytic_displaced(
                        CommutatorJet(generator=au).move(x, -h), y, av, kappa)
                    return (fp - fm) / (2 * h)

                return (4 * diff(hscale / 2) - diff(hscale)) / 3

            total += w[i] * w[j] * (mixed(jet_u.generator, jet_v.generator)
                                    - mixed(jet_v.generator, jet_u.generator))
        return total
    su = jet_u.scalar if jet_u.scalar is not None else np.zeros(len(rho))
    sv = jet_v.scalar if jet_v.scalar is not None else np.zeros(len(rho))
    for i, j in pairs:
        lij = kernels._lagrangian_pts(rho.points[i], rho.points[j], kappa)
        d1u = kernels.directional_derivative_L(rho, i, j, jet_u, None, kappa, step=step)
        d2u = kernels.directional_derivative_L(rho, i, j, None, jet_u, kappa, step=step)
        d1v = kernels.directional_derivative_L(rho, i, j, jet_v, None, kappa, step=step)
        d2v = kernels.directional_derivative_L(rho, i, j, None, jet_v, kappa, step=step)
        duv = kernels.d2_mixed_L(rho, i, j, jet_u, jet_v, kappa, step=max(step, 2e-4))
        dvu = kernels.d2_mixed_L(rho, i, j, jet_v, jet_u, kappa, step=max(step, 2e-4))
        term_uv = su[i] * sv[j] * lij + su[i] * d2v + sv[j] * d1u + duv
        term_vu = sv[i] * su[j] * lij + sv[i] * d2u + su[j] * d1v + dvu
        total += w[i] * w[j] * (term_uv - term_vu)
    return total


# ---------------------------------------------------------------------------
# commutator inner product

def commutator_inner_product(rho: DiscreteMeasure, omega, qk: QKernel, u, v) -> complex:
    """The conserved sesquilinear form on Hilbert-space vectors through Q."""
    psi = physical_wave(rho, u)
    phi = physical_wave(rho, v)
    return kernels._osi_double_sum(rho, qk, omega, psi, phi)


def wave_inner_product(rho: DiscreteMeasure, omega, qk: QKernel, psi, phi) -> complex:
    """Same surface-layer form evaluated on arbitrary wave functions."""
    return kernels._osi_double_sum(rho, qk, omega, psi, phi)


def commutator_gram(rho: DiscreteMeasure, omega, qk: QKernel, basis) -> np.ndarray:
    basis = np.asarray(basis, dtype=complex)
    d = basis.shape[1]
    g = np.zeros((d, d), dtype=complex)
    waves = [physical_wave(rho, basis[:, k]) for k in range(d)]
    for a in range(d):
        for b in range(d):
            g[a, b] = kernels._osi_double_sum(rho, qk, omega, waves[a], waves[b])
    return g


@dataclass(frozen=True)
class RepresentationReport:
    gram_omega: np.ndarray
    gram_h: np.ndarray
    c_fit: float
    rel_deviation: float
    lemma_route_deviation: float
    representing: bool


def represents_scalar_check(rho: DiscreteMeasure, omega, qk: QKernel, hf_basis,
                            kappa: float | None = None, rng=None,
                            n_generators: int = 6, tol: float = 1e-9) -> RepresentationReport:
    """Compare the commutator-product Gram on H^f against c times the
    Hilbert Gram, and cross-check through the one-form route gamma(C(A)).

    The one-form route needs ``kappa`` to differentiate the Lagrangian; it
    is skipped (reported as 0) when kappa is None.
    """
    hf_basis = np.asarray(hf_basis, dtype=complex)
    gram_o = commutator_gram(rho, omega, qk, hf_basis)
    gram_h = hf_basis.conj().T @ hf_basis
    denom = float(np.real(np.vdot(gram_h, gram_h)))
    c = float(np.real(np.vdot(gram_h, gram_o))) / denom if denom > 0 else np.nan
    scale = max(np.linalg.norm(gram_o), 1e-300)
    if not np.isfinite(c) or scale < 1e-200:
        return RepresentationReport(gram_o, gram_h, np.nan, np.inf, np.inf, False)
    rel_dev = float(np.linalg.norm(gram_o - c * gram_h) / scale)
    lemma_dev = 0.0
    if kappa is not None:
        rng = rng or np.random.default_rng(0)
        d = hf_basis.shape[1]
        q_proj = np.linalg.qr(hf_basis)[0]
        for _ in range(n_generators):
            z = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
            z = 0.5 * (z + z.conj().T)
            a = q_proj @ z @ q_proj.conj().T
            g_route = gamma(rho, omega, CommutatorJet(generator=a), kappa)
            want = c * float(np.real(np.trace(a)))
            lemma_dev = max(lemma_dev, abs(g_route - want) / max(abs(want), scale))
    representing = rel_dev <= tol and (kappa is None or lemma_dev <= 1e-6)
    return RepresentationReport(gram_o, gram_h, c, rel_dev, lemma_dev, representing)


@dataclass(frozen=True)
class ConservationReport:
    deviations: np.ndarray
    scales: np.ndarray
    max_ell_on_difference: float


def conservation_check(rho: DiscreteMeasure, omega, omega_prime, jets, kappa: float,
                       qk: QKernel | None = None, s: float | None = None) -> ConservationReport:
    """Per-jet |gamma^Omega - gamma^Omega'| with the flux scale and the EL
    size on the symmetric difference for context."""
    from .action import fit_s, pairwise_lagrangian

    omega = np.asarray(omega, dtype=bool)
    omega_prime = np.asarray(omega_prime, dtype=bool)
    if qk is None:
        qk = kernels.q_kernel(rho, kappa)
    devs, scales = [], []
    for jet in jets:
        g1 = gamma(rho, omega, jet, kappa, qk=qk)
        g2 = gamma(rho, omega_prime, jet, kappa, qk=qk)
        devs.append(abs(g1 - g2))
        if isinstance(jet, CommutatorJet) and jet.scalar is None:
            sc = max(gamma_scale(rho, omega, jet, kappa, qk=qk),
                     gamma_scale(rho, omega_prime, jet, kappa, qk=qk))
        else:
            sc = max(abs(g1), abs(g2))
        scales.append(sc)
    diff = omega ^ omega_prime
    max_ell = 0.0
    if diff.any():
        lmat, _ = pairwise_lagrangian(rho, kappa)
        if s is None:
            s = fit_s(rho, kappa, lmat=lmat)
        ells = lmat @ rho.weights - s
        max_ell = float(np.abs(ells[diff]).max())
    return ConservationReport(np.asarray(devs), np.asarray(scales), max_ell)


# ---------------------------------------------------------------------------
# surface layer measure and the adapted L^2 structure

@dataclass(frozen=True)
class SurfaceLayerMeasure:
    weights: np.ndarray  # one nonnegative weight per point


def kernel_operator_norm(qblock, sx, sy) -> float:
    """Norm of Q(x,y): S_y -> S_x in the <<.|.>> spin norms."""
    ax = np.sqrt(np.abs(sx))
    ay = np.sqrt(np.abs(sy))
    return float(np.linalg.norm((ax[:, None] * qblock) / ay[None, :], 2))


def surface_layer_measure(rho: DiscreteMeasure, omega, qreg: QKernel) -> SurfaceLayerMeasure:
    omega = np.asarray(omega, dtype=bool)
    nn = len(rho)
    mu = np.zeros(nn)
    for i in range(nn):
        cross = np.where(~omega if omega[i] else omega)[0]
        tot = 0.0
        for j in cross:
            tot += rho.weights[j] * kernel_operator_norm(
                qreg.blocks[i, j], rho.points[i].spectrum, rho.points[j].spectrum)
        mu[i] = rho.weights[i] * tot
    return SurfaceLayerMeasure(weights=mu)


def adapted_l2(rho: DiscreteMeasure, mu: SurfaceLayerMeasure, psi, phi) -> complex:
    """<<psi|phi>>^Omega = sum_x <<psi(x)|phi(x)>>_x mu(x)."""
    psi = np.asarray(psi)
    phi = np.asarray(phi)
    tot = 0.0 + 0.0j
    for i, p in enumerate(rho.points):
        tot += mu.weights[i] * np.vdot(psi[i], np.abs(p.spectrum) * phi[i])
    return complex(tot)


@dataclass(frozen=True)
class SurfaceHilbert:
    """Gram matrices of the adapted L^2 product (diagonal, PSD) and of the
    extended commutator product (Hermitian) on the wave-function space."""

    gw_diag: np.ndarray  # (N*2n,) nonnegative
    gk: np.ndarray       # (N*2n, N*2n) Hermitian
    omega: np.ndarray
    mu: SurfaceLayerMeasure


def surface_hilbert(rho: DiscreteMeasure, omega, qreg: QKernel) -> SurfaceHilbert:
    omega = np.asarray(omega, dtype=bool)
    nn, n2 = len(rho), 2 * rho.n
    mu = surface_layer_measure(rho, omega, qreg)
    gw = np.concatenate([mu.weights[i] * np.abs(rho.points[i].spectrum) for i in range(nn)])
    side = omega.astype(float)
    wmat = side[:, None] * (1 - side[None, :]) - (1 - side[:, None]) * side[None, :]
    gk = np.zeros((nn * n2, nn * n2), dtype=complex)
    for i in range(nn):
        gi = rho.points[i].spin_gram()
        for j in range(nn):
            if wmat[i, j] == 0.0:
                continue
            gk[i * n2:(i + 1) * n2, j * n2:(j + 1) * n2] = (
                -2j * wmat[i, j] * rho.weights[i] * rho.weights[j]
                * (gi[:, None] * qreg.blocks[i, j]))
    herm_dev = np.abs(gk - gk.conj().T).max()
    if herm_dev > 1e-10 * max(np.abs(gk).max(), 1e-300):
        raise NumericalError(f"surface-layer Gram not Hermitian: deviation {herm_dev:.2e}")
    gk = 0.5 * (gk + gk.conj().T)
    return SurfaceHilbert(gw_diag=gw, gk=gk, omega=omega, mu=mu)
