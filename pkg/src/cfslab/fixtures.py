"""Reference systems used by the test suite and the demos.

Two constructions:

* ``ring_fixture`` -- the cyclic orbit of a seed straddling neighboring
  blocks.  The distinguished subspace is pulled back from eigenvectors of
  the wave-space kernel operator, which makes the conserved one-form exact
  for every commutator jet on it.  On a closed ring every conserved current
  circulates, so the one-form itself vanishes; the fixture exercises the
  conservation law and its negative control.

* ``chain_fixture`` -- the open time-chain.  Traveling bulk eigenmodes
  carry a nonzero conserved current (the sources sit at the two temporal
  ends, mirroring a finite time window of an infinite system), and the
  sector currents are matched by bisection so the commutator inner product
  represents the Hilbert scalar product on the 2-dimensional subspace.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import core, kernels
from .errors import NumericalError, PreconditionError
from .measures import DiscreteMeasure, measure, wave_matrix


@dataclass(frozen=True)
class SymmetricFixture:
    rho: DiscreteMeasure
    kappa: float
    qk: kernels.QKernel
    hf_basis: np.ndarray        # f x d, columns span H^f
    hf_projector: np.ndarray    # f x f orthogonal projector onto H^f
    elq_params: np.ndarray      # fitted eigenvalue per basis column
    bulk_cuts: tuple            # cut indices k with exact conservation for
                                # past sets {0..k}
    c_const: float              # representing constant (nan if none)


def _block_point(f: int, lo_block: int, hi_block: int, nu: float, mu: float,
                 phi: float, chi: float) -> core.SpacetimePoint:
    """Rank-2 point straddling two 2-dim blocks, sector-diagonal frame."""
    frame = np.zeros((f, 2), dtype=complex)
    frame[2 * lo_block, 0] = np.cos(phi)
    frame[2 * hi_block, 0] = np.sin(phi)
    frame[2 * lo_block + 1, 1] = np.cos(chi)
    frame[2 * hi_block + 1, 1] = np.sin(chi)
    return core.SpacetimePoint(frame=frame, spectrum=np.array([nu, -mu]))


def _sector_indices(nn: int, sector: int) -> np.ndarray:
    base = np.arange(nn) * 2
    return base if sector > 0 else base + 1


def _wave_space_operator(rho: DiscreteMeasure, qk: kernels.QKernel) -> np.ndarray:
    nn, n2 = len(rho), 2 * rho.n
    big = np.zeros((nn * n2, nn * n2), dtype=complex)
    for i in range(nn):
        for j in range(nn):
            big[i * n2:(i + 1) * n2, j * n2:(j + 1) * n2] = rho.weights[j] * qk.blocks[i, j]
    return big


def _hf_from_waves(rho: DiscreteMeasure, waves) -> np.ndarray:
    psi = wave_matrix(rho, np.eye(rho.dim_f))
    sol, *_ = np.linalg.lstsq(psi, np.stack(waves, axis=1), rcond=None)
    resid = np.abs(psi @ sol - np.stack(waves, axis=1)).max()
    if resid > 1e-10:
        raise NumericalError(f"wave function not in the range of Psi: {resid:.2e}")
    return sol


def ring_fixture(m: int = 6, kappa: float = 0.05, c: float = 1.0, nu: float = 2.0,
                 phi: float = 0.6, chi: float = 0.9, mode: int = 1) -> SymmetricFixture:
    """Cyclic ring of m points in dimension f = 2m, spin dimension one."""
    if m < 3:
        raise PreconditionError("ring needs at least 3 points")
    f = 2 * m
    mu = nu - c
    pts = [_block_point(f, j, (j + 1) % m, nu, mu, phi, chi) for j in range(m)]
    rho = measure(pts)
    qk = kernels.q_kernel(rho, kappa)
    big = _wave_space_operator(rho, qk)
    waves, params = [], []
    fourier = np.exp(2j * np.pi * mode * np.arange(m) / m) / np.sqrt(m)
    for sector in (+1, -1):
        idx = _sector_indices(m, sector)
        block = big[np.ix_(idx, idx)]
        wave = np.zeros(2 * m, dtype=complex)
        wave[idx] = fourier
        lam = fourier.conj() @ block @ fourier
        if abs(lam.imag) > 1e-10 * max(abs(lam), 1e-30):
            raise NumericalError("sector eigenvalue is not real")
        resid = np.abs(block @ fourier - lam.real * fourier).max()
        if resid > 1e-10:
            raise NumericalError(f"fourier mode is not an eigenvector: {resid:.2e}")
        waves.append(wave)
        params.append(lam.real)
    hf = _hf_from_waves(rho, waves)
    proj = np.linalg.qr(hf)[0]
    return SymmetricFixture(rho=rho, kappa=kappa, qk=qk, hf_basis=hf,
                            hf_projector=proj @ proj.conj().T,
                            elq_params=np.asarray(params),
                            bulk_cuts=tuple(range(m - 1)), c_const=np.nan)


def chain_points(nn: int, c: float = 1.0, nu: float = 2.0, phi: float = 0.6,
                 chi: float = 0.9) -> DiscreteMeasure:
    """Open chain of nn points straddling blocks (j, j+1), f = 2(nn+1)."""
    f = 2 * (nn + 1)
    mu = nu - c
    if mu <= 0:
        raise PreconditionError("need nu > c for a regular seed")
    return measure([_block_point(f, j, j + 1, nu, mu, phi, chi) for j in range(nn)])


def _sector_current(rho, qk, kappa, theta, sector, cut):
    nn = len(rho)
    wave = np.zeros(2 * nn, dtype=complex)
    wave[_sector_indices(nn, sector)] = np.exp(1j * theta * np.arange(nn))
    u = _hf_from_waves(rho, [wave])[:, 0]
    a = np.outer(u, u.conj())
    omega = np.zeros(nn, dtype=bool)
    omega[:cut + 1] = True
    total = 0.0
    for i in range(nn):
        for j in range(nn):
            if omega[i] and not omega[j]:
                total += rho.weights[i] * rho.weights[j] * kernels.d1_minus_d2_comm(
                    rho.points[i], rho.points[j], a, kappa, qk.blocks[i, j])
    return total / float(np.linalg.norm(u) ** 2), u


def _bisect_theta(rho, qk, kappa, sector, target, cut, grid=48, iters=60):
    thetas = np.linspace(0.08, np.pi - 0.08, grid)
    vals = [abs(_sector_current(rho, qk, kappa, th, sector, cut)[0]) - target
            for th in thetas]
    lo = hi = None
    for k in range(grid - 1):
        if vals[k] == 0.0:
            lo = hi = thetas[k]
            break
        if vals[k] * vals[k + 1] < 0:
            lo, hi = thetas[k], thetas[k + 1]
            break
    if lo is None:
        raise NumericalError("current target not bracketed; adjust the target")
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        v = abs(_sector_current(rho, qk, kappa, mid, sector, cut)[0]) - target
        vlo = abs(_sector_current(rho, qk, kappa, lo, sector, cut)[0]) - target
        if v == 0.0:
            return mid
        if vlo * v < 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def chain_fixture(nn: int = 8, kappa: float = 0.05, c: float = 1.0, nu: float = 2.0,
                  phi: float = 0.6, chi: float = 0.9,
                  target_current: float = 0.08) -> SymmetricFixture:
    """Open chain with matched sector currents: the commutator inner product
    represents the Hilbert scalar product on H^f with constant ~target."""
    rho = chain_points(nn, c, nu, phi, chi)
    qk = kernels.q_kernel(rho, kappa)
    cut = nn // 2
    th_p = _bisect_theta(rho, qk, kappa, +1, target_current, cut)
    th_m = _bisect_theta(rho, qk, kappa, -1, target_current, cut)
    cur_p, u_p = _sector_current(rho, qk, kappa, th_p, +1, cut)
    cur_m, u_m = _sector_current(rho, qk, kappa, th_m, -1, cut)
    # orient both currents positively (theta -> -theta flips the sign)
    if cur_p < 0:
        cur_p, u_p = _sector_current(rho, qk, kappa, -th_p, +1, cut)
    if cur_m < 0:
        cur_m, u_m = _sector_current(rho, qk, kappa, -th_m, -1, cut)
    if abs(cur_p - cur_m) > 1e-9 * target_current:
        raise NumericalError(f"sector currents not matched: {cur_p} vs {cur_m}")
    hf = np.stack([u_p / np.linalg.norm(u_p), u_m / np.linalg.norm(u_m)], axis=1)
    big = _wave_space_operator(rho, qk)
    psi = wave_matrix(rho, np.eye(rho.dim_f))
    params = []
    for k in range(2):
        w = psi @ hf[:, k]
        lam = float(np.real(np.vdot(w, big @ w) / np.vdot(w, w)))
        params.append(lam)
    proj = np.linalg.qr(hf)[0]
    return SymmetricFixture(rho=rho, kappa=kappa, qk=qk, hf_basis=hf,
                            hf_projector=proj @ proj.conj().T,
                            elq_params=np.asarray(params),
                            bulk_cuts=tuple(range(nn - 1)), c_const=float(cur_p))


def hf_generator(fix: SymmetricFixture, rng) -> np.ndarray:
    """Random Hermitian generator supported on the fixture's H^f."""
    d = fix.hf_basis.shape[1]
    z = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    z = 0.5 * (z + z.conj().T)
    q = np.linalg.qr(fix.hf_basis)[0]
    return q @ z @ q.conj().T


def random_measure(rng, nn: int = 4, dim_f: int = 6, n: int = 1,
                   c: float = 1.0) -> DiscreteMeasure:
    pts = [core.random_point(rng, dim_f, n, c) for _ in range(nn)]
    return measure(pts, rng.uniform(0.5, 1.5, size=nn))


def _spin_symmetric_noise(rng, gram, size: float) -> np.ndarray:
    h = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
    return size * (h + h.conj().T) / gram[:, None]


@dataclass(frozen=True)
class DiracChain:
    rho: DiscreteMeasure
    qdyn: "object"              # dynamics.DynKernel
    fol: "object"               # dynamics.Foliation
    times: np.ndarray
    shape: tuple | None         # (T, S) for lattices, None for chains
    dt: float

    def core_span(self, spatial_profiles=None):
        from . import dynamics

        return dynamics.cauchy_span(self.rho, spatial_profiles)

    def ramp(self, a: float, width: float, spatial=None):
        from . import dynamics

        prof = dynamics.time_profile(self.times, "up", a, ramp=width)
        return dynamics.profile_columns(self.rho, prof, spatial=spatial)

    def spatial_delta(self, s: int):
        if self.shape is None:
            raise ValueError("spatial profiles need a lattice fixture")
        t_rows, s_cols = self.shape
        prof = np.zeros(len(self.rho))
        for t in range(t_rows):
            prof[t * s_cols + s] = 1.0
        return prof


def dirac_chain_fixture(nn: int = 16, r_band: int = 1, dt: float = 1.0,
                        mass: float = 0.25, hop: float = 1.0, noise: float = 0.0,
                        rng=None, nu: float = 2.0, c: float = 1.0,
                        grid_refine: int = 1) -> DiracChain:
    """Time chain with a hopping kernel modeled on a discretized Dirac
    operator: Krein-symmetric, banded in foliation time, and with a
    conserved surface-layer form that is positive on low-frequency modes.
    """
    from . import dynamics

    rng = rng or np.random.default_rng(0)
    mu = nu - c
    f = 4
    pts = []
    for j in range(nn):
        th = 0.2 * np.sin(0.7 * j)
        frame = np.zeros((f, 2), dtype=complex)
        frame[0, 0], frame[2, 0] = np.cos(th), np.sin(th)
        frame[1, 1], frame[3, 1] = np.cos(th), -np.sin(th)
        pts.append(core.SpacetimePoint(frame=frame, spectrum=np.array([nu, -mu])))
    rho = measure(pts)
    gram = pts[0].spin_gram()
    gamma_blk = np.diag(1.0 / gram).astype(complex)  # G^{-1}: spin-symmetric, G-positive
    n2 = 2
    blocks = np.zeros((nn, nn, n2, n2), dtype=complex)
    if r_band == 1:
        stencil = {1: hop / 2.0}
    elif r_band == 2:
        stencil = {1: 8.0 * hop / 12.0, 2: -hop / 12.0}
    else:
        raise ValueError("r_band must be 1 or 2")
    for j in range(nn):
        blocks[j, j] = -mass * gamma_blk
        if noise:
            blocks[j, j] += _spin_symmetric_noise(rng, gram, noise)
    for dist, coef in stencil.items():
        for j in range(nn - dist):
            up = (1j * coef / dt) * gamma_blk
            if noise:
                up = up + _spin_symmetric_noise(rng, gram, noise / dist)
            blocks[j, j + dist] = up
            blocks[j + dist, j] = core.spin_adjoint(up, gram, gram)
    times = dt * np.arange(nn)
    t_grid = np.linspace(-1.5 * dt, times[-1] + 1.5 * dt,
                         (nn + 3) * grid_refine + 1)
    fol = dynamics.smooth_foliation(times, t_grid, width=2.0 * dt)
    qdyn = dynamics.DynKernel(blocks=blocks, time_range=r_band * dt)
    dynamics.check_dyn_symmetry(rho, qdyn)
    dynamics.check_time_range(rho, qdyn, times)
    return DiracChain(rho=rho, qdyn=qdyn, fol=fol, times=times, shape=None, dt=dt)


def dirac_lattice_fixture(t_rows: int = 8, s_cols: int = 7, dt: float = 1.0,
                          mass: float = 0.25, hop: float = 1.0, eps: float = 0.2,
                          nu: float = 2.0, c: float = 1.0) -> DiracChain:
    """1+1 lattice: Dirac-like hopping in time, weak spin-symmetric coupling
    in space (same-row pairs carry no surface-layer weight), foliated by rows."""
    from . import dynamics

    mu = nu - c
    f = 4
    nn = t_rows * s_cols
    pts = []
    for p in range(nn):
        th = 0.15 * np.sin(0.5 * p)
        frame = np.zeros((f, 2), dtype=complex)
        frame[0, 0], frame[2, 0] = np.cos(th), np.sin(th)
        frame[1, 1], frame[3, 1] = np.cos(th), -np.sin(th)
        pts.append(core.SpacetimePoint(frame=frame, spectrum=np.array([nu, -mu])))
    rho = measure(pts)
    gram = pts[0].spin_gram()
    gamma_blk = np.diag(1.0 / gram).astype(complex)
    idx = lambda t, s: t * s_cols + s
    n2 = 2
    blocks = np.zeros((nn, nn, n2, n2), dtype=complex)
    for t in range(t_rows):
        for s in range(s_cols):
            blocks[idx(t, s), idx(t, s)] = -mass * gamma_blk
            if s + 1 < s_cols:
                blocks[idx(t, s), idx(t, s + 1)] = eps * gamma_blk
                blocks[idx(t, s + 1), idx(t, s)] = eps * gamma_blk
            if t + 1 < t_rows:
                up = (1j * hop / (2.0 * dt)) * gamma_blk
                blocks[idx(t, s), idx(t + 1, s)] = up
                blocks[idx(t + 1, s), idx(t, s)] = core.spin_adjoint(up, gram, gram)
    times = dt * np.repeat(np.arange(t_rows), s_cols)
    t_grid = np.linspace(-1.5 * dt, dt * (t_rows - 1) + 1.5 * dt, 2 * t_rows + 4)
    fol = dynamics.smooth_foliation(times, t_grid, width=2.0 * dt)
    qdyn = dynamics.DynKernel(blocks=blocks, time_range=dt)
    dynamics.check_dyn_symmetry(rho, qdyn)
    return DiracChain(rho=rho, qdyn=qdyn, fol=fol, times=times,
                      shape=(t_rows, s_cols), dt=dt)


def perturbed_measure(fix_rho: DiscreteMeasure, rng, size: float) -> DiscreteMeasure:
    """Relative Hermitian perturbation of every point, same weights."""
    pts = []
    for p in fix_rho.points:
        h = rng.standard_normal((fix_rho.dim_f,) * 2) + 1j * rng.standard_normal((fix_rho.dim_f,) * 2)
        h = 0.5 * (h + h.conj().T)
        h *= size * np.abs(p.spectrum).max() / np.linalg.norm(h, 2)
        pts.append(core.point_from_operator(p.operator() + h, p.n, c=p.local_trace))
    return measure(pts, fix_rho.weights.copy())
