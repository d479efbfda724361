"""Transport between varied systems and the extended Hilbert space.

Everything acts on the finite wave-function space of a discrete measure
(dimension N*2n).  Gram null spaces are quotiented with a report; the
spectral calculus replaces contour integrals; refusals replace the domain
conditions of the admissibility definition.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels, surface
from .errors import NumericalError, PreconditionError
from .kernels import QKernel
from .measures import DiscreteMeasure, physical_wave, wave_matrix


@dataclass(frozen=True)
class RieszOperator:
    """S with <psi|phi>^Omega = <<psi|S phi>>^Omega on the quotient space."""

    matrix: np.ndarray
    mask: np.ndarray          # kept wave-space coordinates
    gw: np.ndarray            # masked adapted-L2 weights
    min_singular: float
    condition: float


@dataclass(frozen=True)
class TransportMap:
    matrix: np.ndarray        # full K_base x K_tilde, block structure per point
    f_map: np.ndarray         # point index bijection


@dataclass(frozen=True)
class ExtensionOperators:
    s: RieszOperator
    s_tilde: RieszOperator
    pi: np.ndarray            # masked transport
    t_hat: np.ndarray
    b: np.ndarray
    sqrt_b: np.ndarray
    isometry: np.ndarray      # masked: W_tilde -> W_base
    report: dict = field(default_factory=dict)


def riesz_operator(sh: surface.SurfaceHilbert, tol: float = 1e-12) -> RieszOperator:
    gw = sh.gw_diag
    mask = gw > tol * max(gw.max(), 1e-300)
    if not mask.any():
        raise PreconditionError("adapted L2 product vanishes identically")
    gk = sh.gk[np.ix_(mask, mask)]
    s = gk / gw[mask][:, None]
    sing = np.linalg.svd(s, compute_uv=False)
    return RieszOperator(matrix=s, mask=mask, gw=gw[mask],
                         min_singular=float(sing.min()),
                         condition=float(sing.max() / max(sing.min(), 1e-300)))


def transport_map(rho: DiscreteMeasure, rho_t: DiscreteMeasure, f_map) -> TransportMap:
    """(pi psi)(x) = |x|^{-1/2} pi_x |F(x)|^{1/2} psi(F(x)) in frame coordinates."""
    f_map = np.asarray(f_map, dtype=int)
    if sorted(f_map.tolist()) != list(range(len(rho))):
        raise PreconditionError("F must be a bijection of point indices")
    n2 = 2 * rho.n
    k_b, k_t = len(rho) * n2, len(rho_t) * n2
    mat = np.zeros((k_b, k_t), dtype=complex)
    for i, p in enumerate(rho.points):
        q = rho_t.points[f_map[i]]
        block = (p.frame.conj().T @ q.frame) * np.sqrt(np.abs(q.spectrum))[None, :]
        block = block / np.sqrt(np.abs(p.spectrum))[:, None]
        mat[i * n2:(i + 1) * n2, f_map[i] * n2:(f_map[i] + 1) * n2] = block
    return TransportMap(matrix=mat, f_map=f_map)


def t_operator(pi_masked, gw_base, gw_tilde) -> np.ndarray:
    """T with <<pi psi|pi phi>>_rho = <<psi|T phi>>_rho-tilde (masked spaces)."""
    m = pi_masked.conj().T @ (gw_base[:, None] * pi_masked)
    return m / gw_tilde[:, None]


def operator_sqrt(b, tol: float = 1e-9) -> np.ndarray:
    """Principal square root (eigenvalues mapped with Re > 0).

    Spectral construction; equivalent to the contour-integral definition by
    residues.  Refuses if the spectrum touches the branch cut or if the
    eigenbasis is too ill-conditioned to trust.
    """
    b = np.asarray(b, dtype=complex)
    lam, v = np.linalg.eig(b)
    scale = max(np.abs(lam).max(), 1e-300)
    on_cut = (lam.real <= tol * scale) & (np.abs(lam.imag) <= tol * scale)
    if on_cut.any():
        raise PreconditionError("spectrum touches the branch cut (-inf, 0]")
    neg = (lam.real < 0) & (np.abs(lam.imag) < 1e-8 * np.abs(lam))
    if neg.any():
        raise PreconditionError("spectrum intersects the negative real axis")
    cond = np.linalg.cond(v)
    if not np.isfinite(cond) or cond > 1e10:
        raise NumericalError("matrix is too close to defective for a spectral root")
    root = (v * np.sqrt(lam)) @ np.linalg.inv(v)
    resid = np.linalg.norm(root @ root - b) / max(np.linalg.norm(b), 1e-300)
    if resid > tol:
        raise NumericalError(f"square-root reconstruction residual {resid:.2e}")
    return root


def build_isometry(rho: DiscreteMeasure, rho_t: DiscreteMeasure, omega,
                   qreg: QKernel, qreg_t: QKernel, f_map,
                   inj_tol: float = 1e-10, n_check: int = 20,
                   rng=None) -> ExtensionOperators:
    """Assemble S, S-tilde, T, B, sqrt(B) and the isometry, with the
    admissibility checks; raises a structured refusal when one fails."""
    sh_b = surface.surface_hilbert(rho, omega, qreg)
    omega_t = np.zeros(len(rho_t), dtype=bool)
    omega_t[np.asarray(f_map, dtype=int)[np.asarray(omega, dtype=bool)]] = True
    sh_t = surface.surface_hilbert(rho_t, omega_t, qreg_t)
    s_b = riesz_operator(sh_b)
    s_t = riesz_operator(sh_t)
    if s_b.mask.sum() != s_t.mask.sum():
        raise PreconditionError("transport cannot be bijective: quotient dimensions differ")
    pi_full = transport_map(rho, rho_t, f_map).matrix
    pi = pi_full[np.ix_(s_b.mask, s_t.mask)]
    sv_pi = np.linalg.svd(pi, compute_uv=False)
    if sv_pi.min() <= inj_tol * sv_pi.max():
        raise PreconditionError("transport map is not injective on the quotient")
    if s_t.min_singular <= inj_tol * max(np.abs(s_t.matrix).max(), 1e-300):
        raise PreconditionError("S-tilde is not injective")
    t_hat = t_operator(pi, s_b.gw, s_t.gw)
    sv_t = np.linalg.svd(t_hat, compute_uv=False)
    if sv_t.min() <= inj_tol * sv_t.max():
        raise PreconditionError("T is not injective")
    if s_b.min_singular <= inj_tol * max(np.abs(s_b.matrix).max(), 1e-300):
        raise PreconditionError("S is not injective")
    b = np.linalg.solve(s_b.matrix,
                        pi @ np.linalg.solve(t_hat, s_t.matrix @ np.linalg.inv(pi)))
    sqrt_b = operator_sqrt(b)
    iso = sqrt_b @ pi
    # verify the defining isometry relation on random pairs
    rng = rng or np.random.default_rng(0)
    gk_b = sh_b.gk[np.ix_(s_b.mask, s_b.mask)]
    gk_t = sh_t.gk[np.ix_(s_t.mask, s_t.mask)]
    worst = 0.0
    dim_t = int(s_t.mask.sum())
    for _ in range(n_check):
        psi = rng.standard_normal(dim_t) + 1j * rng.standard_normal(dim_t)
        phi = rng.standard_normal(dim_t) + 1j * rng.standard_normal(dim_t)
        lhs = np.vdot(iso @ psi, gk_b @ (iso @ phi))
        rhs = np.vdot(psi, gk_t @ phi)
        worst = max(worst, abs(lhs - rhs) / max(abs(rhs), np.abs(gk_t).max()))
    report = {
        "itrans_deviation": worst,
        "b_spectrum": np.linalg.eigvals(b),
        "pi_min_singular": float(sv_pi.min()),
        "t_min_singular": float(sv_t.min()),
        "s_condition": s_b.condition,
        "s_tilde_condition": s_t.condition,
        "quotient_dim": int(s_b.mask.sum()),
    }
    return ExtensionOperators(s=s_b, s_tilde=s_t, pi=pi, t_hat=t_hat, b=b,
                              sqrt_b=sqrt_b, isometry=iso, report=report)


def transported_wave(ext: ExtensionOperators, rho_t: DiscreteMeasure, u,
                     k_full: int) -> np.ndarray:
    """I applied to the physical wave function of u, zero-padded."""
    wave = physical_wave(rho_t, u).reshape(-1)
    out = np.zeros(k_full, dtype=complex)
    out[ext.s.mask] = ext.isometry @ wave[ext.s_tilde.mask]
    return out


@dataclass(frozen=True)
class ExtendedSpace:
    basis: np.ndarray              # (mask size) x m spanning vectors
    mask: np.ndarray               # surface-layer coordinates carrying the product
    gram: np.ndarray               # of <.|.>^Omega on the returned basis
    positive_definite: bool
    signature: tuple               # (n_pos, n_neg, n_null) of the span Gram
    span_dim: int


def extend_space(rho: DiscreteMeasure, omega, qreg: QKernel, hf_basis,
                 variations, rank_tol: float = 1e-10) -> ExtendedSpace:
    """Collect the transported wave functions of all admissible variations,
    span, and orthonormalize against the conserved product.

    ``variations`` is a list of (rho_tilde, f_map, qreg_tilde).  The base
    physical wave functions are always included.  Wave functions enter
    through their surface-layer representation (coordinates with nonzero
    adapted-L2 weight), matching their equivalence-class meaning.
    """
    hf_basis = np.asarray(hf_basis, dtype=complex)
    k_full = rho.wave_dim()
    sh = surface.surface_hilbert(rho, omega, qreg)
    mask = sh.gw_diag > 1e-12 * max(sh.gw_diag.max(), 1e-300)
    cols = [physical_wave(rho, hf_basis[:, j]).reshape(-1)[mask]
            for j in range(hf_basis.shape[1])]
    for rho_t, f_map, qreg_t in variations:
        ext = build_isometry(rho, rho_t, omega, qreg, qreg_t, f_map)
        for j in range(hf_basis.shape[1]):
            cols.append(transported_wave(ext, rho_t, hf_basis[:, j], k_full)[mask])
    raw = np.stack(cols, axis=1)
    # reduce to a spanning set (Euclidean SVD; the span is metric-independent)
    u_svd, sv, _ = np.linalg.svd(raw, full_matrices=False)
    keep = sv > rank_tol * sv.max()
    span = u_svd[:, keep]
    gk = sh.gk[np.ix_(mask, mask)]
    gram = span.conj().T @ gk @ span
    gram = 0.5 * (gram + gram.conj().T)
    evals = np.linalg.eigvalsh(gram)
    scale = max(np.abs(evals).max(), 1e-300)
    n_pos = int(np.sum(evals > rank_tol * scale))
    n_neg = int(np.sum(evals < -rank_tol * scale))
    n_null = gram.shape[0] - n_pos - n_neg
    positive = n_neg == 0 and n_null == 0
    if positive:
        w, v = np.linalg.eigh(gram)
        basis = span @ (v / np.sqrt(w))
        gram = np.eye(basis.shape[1], dtype=complex)
    else:
        basis = span
    return ExtendedSpace(basis=basis, mask=mask, gram=gram, positive_definite=positive,
                         signature=(n_pos, n_neg, n_null), span_dim=int(keep.sum()))


# ---------------------------------------------------------------------------
# variation families and compatibility

def unitary_variation(rho: DiscreteMeasure, qreg: QKernel, generator):
    """Family tau -> (rho_tilde, F, Q-tilde) for exp(i tau A)-conjugation.

    Frame transport keeps all coordinate blocks unchanged, so the varied
    kernel reuses the base blocks.
    """
    import scipy.linalg

    from .measures import conjugate_measure

    gen = np.asarray(generator)
    f_map = np.arange(len(rho))

    def at(tau: float):
        u = scipy.linalg.expm(1j * tau * gen)
        return conjugate_measure(rho, u), f_map, qreg

    return at


def point_jet_variation(rho: DiscreteMeasure, kappa: float, directions):
    """Family tau -> (rho_tilde, F, Q-tilde) moving points along Hermitian
    directions; the varied kernel is re-assembled at each tau."""
    from . import core
    from .measures import measure

    f_map = np.arange(len(rho))

    def at(tau: float):
        pts = [core.point_from_operator(p.operator() + tau * np.asarray(d), p.n)
               for p, d in zip(rho.points, directions)]
        rho_t = measure(pts, rho.weights.copy())
        return rho_t, f_map, kernels.q_kernel(rho_t, kappa)

    return at


def dpsi_surface_derivative(rho: DiscreteMeasure, omega, qreg: QKernel, hf_basis,
                            variation_at, h: float = 1e-4,
                            richardson: bool = True) -> np.ndarray:
    """D Psi^Omega(v, .): first variation of the transported wave functions.

    Central differences of iota^Omega_{rho, rho_tau} u over the family; one
    column per basis vector of H^f.
    """
    hf_basis = np.asarray(hf_basis, dtype=complex)
    k_full = rho.wave_dim()

    def embedded(tau: float) -> np.ndarray:
        rho_t, f_map, qreg_t = variation_at(tau)
        ext = build_isometry(rho, rho_t, omega, qreg, qreg_t, f_map)
        return np.stack([transported_wave(ext, rho_t, hf_basis[:, j], k_full)
                         for j in range(hf_basis.shape[1])], axis=1)

    d1 = (embedded(h) - embedded(-h)) / (2 * h)
    if not richardson:
        return d1
    d2 = (embedded(h / 2) - embedded(-h / 2)) / h
    return (4 * d2 - d1) / 3


@dataclass(frozen=True)
class CompatibilityReport:
    apres0_dev: float
    apres_dev: float
    sigma_preserve: np.ndarray
    holomorphic_dev: float
    scale: float


def compatibility_check(rho: DiscreteMeasure, omega, omega_p, qreg: QKernel,
                        hf_basis, dpsi, dpsi_p, jets=None, kappa=None,
                        z_split=None) -> CompatibilityReport:
    """Evaluate the generator-compatibility conditions between two past sets.

    ``dpsi`` and ``dpsi_p`` are the first variations of the transported wave
    functions (K x d arrays) in the two surface layers.  ``jets`` (with
    ``kappa``) adds the symplectic-form preservation values sigma(C(u), v).
    ``z_split`` optionally carries ((z, z'), (zbar, zbar')) derivative pairs
    for the holomorphic-split conditions.
    """
    hf_basis = np.asarray(hf_basis, dtype=complex)
    d = hf_basis.shape[1]
    gk = surface.surface_hilbert(rho, omega, qreg).gk
    gk_p = surface.surface_hilbert(rho, omega_p, qreg).gk
    psi = wave_matrix(rho, hf_basis)
    scale = max(np.abs(psi.conj().T @ gk @ psi).max(), 1e-300)
    apres0 = np.abs(dpsi.conj().T @ gk @ psi - dpsi_p.conj().T @ gk_p @ psi).max()
    apres = np.abs(dpsi.conj().T @ gk @ dpsi - dpsi_p.conj().T @ gk_p @ dpsi).max()
    sig = np.array([])
    if jets is not None:
        if kappa is None:
            raise PreconditionError("sigma preservation needs kappa")
        vals = []
        for v in jets:
            for k in range(d):
                a = np.outer(hf_basis[:, k], hf_basis[:, k].conj())
                vals.append(surface.sigma(rho, omega,
                                          kernels.CommutatorJet(generator=a), v, kappa))
        sig = np.asarray(vals)
    holo = 0.0
    if z_split is not None:
        (dz, dz_p), (dzb, dzb_p) = z_split
        for a_pair, b_pair in (((dz, dz_p), (psi, psi)),
                               ((dz, dz_p), (dz, dz_p)),
                               ((dzb, dzb_p), (dzb, dzb_p)),
                               ((dz, dz_p), (dzb, dzb_p))):
            lhs = a_pair[0].conj().T @ gk @ b_pair[0]
            rhs = a_pair[1].conj().T @ gk_p @ b_pair[1]
            holo = max(holo, np.abs(lhs - rhs).max())
    return CompatibilityReport(apres0_dev=float(apres0), apres_dev=float(apres),
                               sigma_preserve=sig, holomorphic_dev=float(holo),
                               scale=float(scale))
