"""Spacetime points as finite-rank operators.

A point is a self-adjoint operator on C^f of rank 2n with exactly n
positive and n negative eigenvalues, stored as an orthonormal frame of its
image together with its nonzero spectrum.  On top of the points this module
provides the closed-chain spectra, the Lagrangian, the spectral weight,
the causal classification and the spin-space inner products.

Sign conventions: the kernel of the fermionic projector is realized as
P(x,y) = pi_x y|_{S_y} (global sign recorded here once; closed-chain
eigenvalues do not depend on it).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError, PreconditionError

# Global sign of P(x,y) relative to pi_x y|_{S_y}.  All identities in the
# package are covariant under flipping it; kept as a named constant so the
# convention is visible.
P_KERNEL_SIGN = +1.0

_FRAME_ORTHO_TOL = 1e-12


@dataclass(frozen=True)
class HilbertSpaceSpec:
    """Dimensions of the ambient Hilbert space and its distinguished subspace."""

    dim_f: int
    dim_hf: int
    spin_dim_n: int

    def __post_init__(self):
        if self.dim_f < 1 or self.spin_dim_n < 1:
            raise PreconditionError("dimensions must be positive")
        if self.dim_hf > self.dim_f:
            raise PreconditionError("dim_hf must not exceed dim_f")
        if 2 * self.spin_dim_n > self.dim_f:
            raise PreconditionError("need 2n <= f for regular points")


@dataclass(frozen=True)
class SpacetimePoint:
    """Rank-2n self-adjoint operator stored as frame + spectrum.

    ``frame`` is f x 2n with orthonormal columns spanning the image S_x,
    ``spectrum`` holds the n positive eigenvalues followed by the n
    negative ones (each group sorted descending).
    """

    frame: np.ndarray
    spectrum: np.ndarray

    @property
    def n(self) -> int:
        return self.spectrum.size // 2

    @property
    def dim_f(self) -> int:
        return self.frame.shape[0]

    @property
    def local_trace(self) -> float:
        return float(self.spectrum.sum())

    def operator(self) -> np.ndarray:
        """Assemble the f x f operator frame @ diag(spectrum) @ frame^*."""
        return (self.frame * self.spectrum) @ self.frame.conj().T

    def abs_operator_half(self) -> np.ndarray:
        """|x|^(1/2) restricted to S_x, in frame coordinates (diagonal)."""
        return np.sqrt(np.abs(self.spectrum))

    def spin_gram(self) -> np.ndarray:
        """Diagonal of the spin-product Gram: <u|v>_spin = u^* diag(g) v."""
        return -self.spectrum

    def euclidean_sign_diag(self) -> np.ndarray:
        """Diagonal of the Euclidean sign operator in frame coordinates."""
        return -np.sign(self.spectrum)


@dataclass(frozen=True)
class ClosedChainSpectrum:
    """The 2n eigenvalues of P(x,y) P(y,x), zeros padded, sorted by modulus."""

    eigenvalues: np.ndarray


@dataclass(frozen=True)
class CausalRelation:
    tag: str  # "spacelike" | "timelike" | "lightlike"


def make_point(frame, spectrum, c: float) -> SpacetimePoint:
    """Build a regular point from a (not necessarily orthonormal) frame.

    The columns are re-orthonormalized, the spectrum is rescaled uniformly
    so the local trace equals ``c``, and the (value, column) pairs are
    sorted descending.  Zero-trace spectra are rejected: they cannot be
    rescaled to a nonzero constant.
    """
    frame = np.asarray(frame, dtype=complex)
    spectrum = np.asarray(spectrum, dtype=float)
    if frame.ndim != 2 or frame.shape[1] != spectrum.size:
        raise PreconditionError("frame must be f x 2n with one column per eigenvalue")
    if spectrum.size % 2:
        raise PreconditionError("spectrum must have an even number of entries")
    n = spectrum.size // 2
    if np.count_nonzero(spectrum > 0) != n or np.count_nonzero(spectrum < 0) != n:
        raise PreconditionError(
            f"spectrum must have exactly {n} positive and {n} negative entries"
        )
    q, r = np.linalg.qr(frame)
    if np.min(np.abs(np.diag(r))) < 1e-12 * max(1.0, np.abs(r).max()):
        raise PreconditionError("frame columns are numerically rank deficient")

    total = spectrum.sum()
    if abs(total) < 1e-14 * np.abs(spectrum).max():
        raise PreconditionError("zero-trace spectrum cannot be rescaled to a constant")
    scaled = spectrum * (c / total)
    # rescaling by a negative factor flips all signs; re-sort pairs so the
    # positive group comes first either way
    order = np.argsort(-scaled)
    return SpacetimePoint(frame=np.ascontiguousarray(q[:, order]), spectrum=scaled[order])


def point_from_operator(op, n: int, c: float | None = None) -> SpacetimePoint:
    """Extract the rank-2n regular point nearest to a Hermitian operator.

    Keeps the n largest and n smallest eigenvalues; they must be strictly
    positive / negative.  If ``c`` is given the spectrum is rescaled to
    that local trace.  This is the retraction used for directional
    derivatives on the operator manifold.
    """
    op = np.asarray(op)
    w, u = np.linalg.eigh(op)
    neg, pos = w[:n], w[-n:]
    if np.any(pos <= 0) or np.any(neg >= 0):
        raise NumericalError("operator left the regular stratum (signature loss)")
    frame = np.hstack([u[:, -n:][:, ::-1], u[:, :n][:, ::-1]])
    spectrum = np.concatenate([pos[::-1], neg[::-1]])
    if c is not None:
        total = spectrum.sum()
        if abs(total) < 1e-14 * np.abs(spectrum).max():
            raise NumericalError("zero-trace operator cannot be trace-rescaled")
        spectrum = spectrum * (c / total)
        order = np.argsort(-spectrum)
        frame, spectrum = frame[:, order], spectrum[order]
    return SpacetimePoint(frame=frame, spectrum=spectrum)


def check_point(x: SpacetimePoint, c: float | None = None, tol: float = 1e-10):
    """Validate the stored invariants of a point; raise on violation."""
    g = x.frame.conj().T @ x.frame
    if np.abs(g - np.eye(2 * x.n)).max() > _FRAME_ORTHO_TOL * 10:
        raise PreconditionError("frame columns are not orthonormal")
    n = x.n
    if np.count_nonzero(x.spectrum > 0) != n or np.count_nonzero(x.spectrum < 0) != n:
        raise PreconditionError("spectrum signature is not (n, n)")
    if c is not None and abs(x.local_trace - c) > tol * max(1.0, abs(c)):
        raise PreconditionError("local trace deviates from the configured constant")


def p_matrix(x: SpacetimePoint, y: SpacetimePoint) -> np.ndarray:
    """Frame-coordinate matrix of P(x,y): S_y -> S_x.

    With orthonormal frames this is sign * V_x^* V_y diag(s_y).
    """
    return P_KERNEL_SIGN * (x.frame.conj().T @ y.frame) * y.spectrum


def spin_adjoint(block, gx, gy) -> np.ndarray:
    """Spin adjoint of a map S_y -> S_x: T^* = G_y^{-1} T^dag G_x."""
    return (block.conj().T * gx) / gy[:, None]


def closed_chain(x: SpacetimePoint, y: SpacetimePoint) -> np.ndarray:
    """The 2n x 2n closed chain P(x,y) P(y,x) in frame coordinates of S_x."""
    pxy = p_matrix(x, y)
    pyx = spin_adjoint(pxy, x.spin_gram(), y.spin_gram())
    return pxy @ pyx


def _sorted_eigenvalues(mat) -> np.ndarray:
    try:
        w = np.linalg.eigvals(mat)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - pathological input
        raise NumericalError(f"eigenvalue solver failed on closed chain: {exc}") from exc
    order = np.lexsort((w.imag, w.real, -np.abs(w)))
    return w[order]


def product_spectrum(x: SpacetimePoint, y: SpacetimePoint) -> ClosedChainSpectrum:
    """Eigenvalues of the closed chain, equal to the nonzero spectrum of xy."""
    if x.dim_f != y.dim_f or x.n != y.n:
        raise PreconditionError("points live over different Hilbert space specs")
    return ClosedChainSpectrum(_sorted_eigenvalues(closed_chain(x, y)))


def chain_lagrangian(eigenvalues, n: int, kappa: float = 0.0) -> float:
    """L_kappa from a chain spectrum: (1/4n) sum (|l_i|-|l_j|)^2 + kappa (sum|l|)^2."""
    a = np.abs(np.asarray(eigenvalues))
    s1, s2 = a.sum(), (a * a).sum()
    val = s2 - s1 * s1 / (2 * n)
    if kappa:
        val += kappa * s1 * s1
    return max(float(val), 0.0)


def lagrangian(spec: ClosedChainSpectrum, n: int) -> float:
    if spec.eigenvalues.size != 2 * n:
        raise PreconditionError("chain spectrum must have 2n entries")
    return chain_lagrangian(spec.eigenvalues, n)


def spectral_weight(spec: ClosedChainSpectrum) -> float:
    return float(np.abs(spec.eigenvalues).sum())


def lagrangian_kappa(x: SpacetimePoint, y: SpacetimePoint, kappa: float) -> float:
    """L(x,y) + kappa |xy|^2 evaluated through the closed chain."""
    if kappa < 0:
        raise PreconditionError("kappa must be nonnegative")
    w = _sorted_eigenvalues(closed_chain(x, y))
    return chain_lagrangian(w, x.n, kappa)


def causal_classify(spec: ClosedChainSpectrum, tol: float = 1e-9) -> CausalRelation:
    """Spacelike / timelike / lightlike from the chain spectrum.

    The trichotomy is exact in the paper topology; here it is decided with
    a relative tolerance on the moduli and the imaginary parts.
    """
    if tol <= 0:
        raise PreconditionError("tolerance must be positive")
    w = spec.eigenvalues
    a = np.abs(w)
    scale = a.max() if a.size else 0.0
    if scale == 0.0 or a.max() - a.min() <= tol * scale:
        return CausalRelation("spacelike")
    if np.abs(w.imag).max() <= tol * scale:
        return CausalRelation("timelike")
    return CausalRelation("lightlike")


def spin_product(x: SpacetimePoint, u, v) -> complex:
    """The indefinite spin inner product -<u|x v> in frame coordinates."""
    u = np.asarray(u)
    v = np.asarray(v)
    if u.shape != (2 * x.n,) or v.shape != (2 * x.n,):
        raise PreconditionError("spinors must be 2n-vectors in frame coordinates")
    return complex(np.vdot(u, x.spin_gram() * v))


def spin_norm(x: SpacetimePoint, u) -> float:
    """Norm from the positive product <u| |x| u>."""
    u = np.asarray(u)
    if u.shape != (2 * x.n,):
        raise PreconditionError("spinor must be a 2n-vector in frame coordinates")
    return float(np.sqrt(np.real(np.vdot(u, np.abs(x.spectrum) * u))))


def euclidean_sign(x: SpacetimePoint) -> np.ndarray:
    """Involution s_x with <<u|v>>_x = <u| s_x v>_spin, as a 2n x 2n matrix."""
    return np.diag(x.euclidean_sign_diag()).astype(complex)


def random_point(rng, dim_f: int, n: int, c: float = 1.0, spread: float = 1.0) -> SpacetimePoint:
    """Random regular point: Haar-ish frame, log-uniform spectrum, trace c."""
    raw = rng.standard_normal((dim_f, 2 * n)) + 1j * rng.standard_normal((dim_f, 2 * n))
    pos = np.exp(spread * rng.standard_normal(n)) + 0.2
    neg = -(np.exp(spread * rng.standard_normal(n)) + 0.1)
    while abs(pos.sum() + neg.sum()) < 1e-3:
        neg = neg * 1.1  # avoid near-zero trace before the rescaling
    return make_point(raw, np.concatenate([pos, neg]), c)


def random_unitary(rng, dim: int) -> np.ndarray:
    z = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def conjugate_point(x: SpacetimePoint, u) -> SpacetimePoint:
    """The point U x U^* with the transported frame U V_x."""
    return SpacetimePoint(frame=np.asarray(u) @ x.frame, spectrum=x.spectrum)
