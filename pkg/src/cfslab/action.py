"""Causal action, EL residuals and critical-measure search on discrete measures."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import core
from .core import SpacetimePoint, chain_lagrangian
from .errors import PreconditionError
from .kernels import CommutatorJet, PointJet, q_kernel
from .measures import DiscreteMeasure, measure, physical_wave


@dataclass(frozen=True)
class ActionReport:
    action: float
    volume: float
    trace_integral: float
    boundedness: float
    s_param: float


@dataclass(frozen=True)
class ELResidual:
    ell_values: np.ndarray
    max_abs_ell_on_m: float
    min_ell_offsupport: float
    weak_residuals: np.ndarray
    r_param: float
    r_residual: float


def _chain_moduli(x: SpacetimePoint, y: SpacetimePoint) -> np.ndarray:
    return np.abs(np.linalg.eigvals(core.closed_chain(x, y)))


def pairwise_lagrangian(rho: DiscreteMeasure, kappa: float):
    """L_kappa and |xy|^2 for every ordered pair, deterministic order."""
    nn = len(rho)
    lmat = np.zeros((nn, nn))
    bmat = np.zeros((nn, nn))
    n = rho.n
    for i in range(nn):
        for j in range(nn):
            mod = _chain_moduli(rho.points[i], rho.points[j])
            s1, s2 = mod.sum(), (mod * mod).sum()
            lmat[i, j] = max(s2 - s1 * s1 / (2 * n) + kappa * s1 * s1, 0.0)
            bmat[i, j] = s1 * s1
    return lmat, bmat


def causal_action(rho: DiscreteMeasure, kappa: float) -> ActionReport:
    """Double sum of L_kappa plus the constraint functionals."""
    lmat, bmat = pairwise_lagrangian(rho, kappa)
    w = rho.weights
    action = float(w @ lmat @ w)
    boundedness = float(w @ bmat @ w)
    trace_integral = float(np.sum(w * [p.local_trace for p in rho.points]))
    s_param = fit_s(rho, kappa, lmat=lmat)
    return ActionReport(action=action, volume=rho.volume, trace_integral=trace_integral,
                        boundedness=boundedness, s_param=s_param)


def fit_s(rho: DiscreteMeasure, kappa: float, lmat=None) -> float:
    """Volume Lagrange parameter: weighted mean of ell + s over the support."""
    if lmat is None:
        lmat, _ = pairwise_lagrangian(rho, kappa)
    raw = lmat @ rho.weights
    return float(np.sum(rho.weights * raw) / rho.volume)


def ell(rho: DiscreteMeasure, x: SpacetimePoint, kappa: float, s: float) -> float:
    """ell(x) = sum_j rho_j L_kappa(x, x_j) - s."""
    tot = 0.0
    for j, y in enumerate(rho.points):
        tot += rho.weights[j] * chain_lagrangian(
            np.linalg.eigvals(core.closed_chain(x, y)), rho.n, kappa)
    return tot - s


def _d_ell(rho: DiscreteMeasure, i: int, jet, kappa: float, step: float) -> float:
    """Directional derivative of ell at the i-th support point along the jet.

    Only the probe point moves; the measure stays fixed (jets are never
    differentiated).
    """
    x = rho.points[i]
    if isinstance(jet, PointJet) and jet.directions[i] is None:
        return 0.0
    scale = np.abs(x.spectrum).max()
    h = step * max(scale, 1e-8)

    def move(t):
        if isinstance(jet, CommutatorJet):
            return jet.move(x, t)
        hdir = jet.directions[i]
        c = x.local_trace if jet.trace_fixed else None
        return core.point_from_operator(x.operator() + t * np.asarray(hdir), x.n, c)

    fp = ell(rho, move(h), kappa, 0.0)
    fm = ell(rho, move(-h), kappa, 0.0)
    return (fp - fm) / (2 * h)


def el_residual(rho: DiscreteMeasure, kappa: float, jets, probes=(),
                hf_basis=None, s: float | None = None,
                step: float = 1e-5) -> ELResidual:
    """Weak EL residuals for the supplied test jets, with an ELQ fit on H^f."""
    if step <= 1e-12:
        raise PreconditionError("finite-difference step underflow")
    lmat, _ = pairwise_lagrangian(rho, kappa)
    if s is None:
        s = fit_s(rho, kappa, lmat=lmat)
    ells = lmat @ rho.weights - s
    residuals = []
    for jet in jets:
        a = jet.scalar if jet.scalar is not None else np.zeros(len(rho))
        vals = []
        for i in range(len(rho)):
            d = 0.0
            if not (isinstance(jet, PointJet) and jet.directions[i] is None):
                if not (isinstance(jet, CommutatorJet) and np.abs(jet.generator).max() == 0):
                    d = _d_ell(rho, i, jet, kappa, step)
            vals.append(abs(a[i] * ells[i] + d))
        residuals.append(max(vals))
    min_off = np.inf
    for p in probes:
        min_off = min(min_off, ell(rho, p, kappa, s))
    r_param, r_resid = np.nan, np.nan
    if hf_basis is not None:
        r_param, r_resid = fit_elq_parameter(rho, kappa, hf_basis)
    return ELResidual(ell_values=ells, max_abs_ell_on_m=float(np.abs(ells).max()),
                      min_ell_offsupport=float(min_off),
                      weak_residuals=np.asarray(residuals),
                      r_param=r_param, r_residual=r_resid)


def fit_elq_parameter(rho: DiscreteMeasure, kappa: float, hf_basis):
    """Least-squares fit of the trace-constraint parameter in the EL
    equation for the physical wave functions, and the post-fit residual."""
    ker = q_kernel(rho, kappa)
    hf_basis = np.asarray(hf_basis, dtype=complex)
    num, den, norm2 = 0.0, 0.0, 0.0
    pairs = []
    sqw = np.sqrt(rho.weights)[:, None]
    for k in range(hf_basis.shape[1]):
        psi = physical_wave(rho, hf_basis[:, k])
        qpsi = ker.apply(rho, psi)
        pairs.append((psi * sqw, qpsi * sqw))
        num += float(np.real(np.vdot(psi * sqw, qpsi * sqw)))
        den += float(np.real(np.vdot(psi * sqw, psi * sqw)))
    r = num / den if den > 0 else 0.0
    for psi, qpsi in pairs:
        norm2 = max(norm2, np.linalg.norm(qpsi - r * psi) / max(np.linalg.norm(psi), 1e-30))
    return r, norm2


# ---------------------------------------------------------------------------
# optimizer

@dataclass
class MinimizeConfig:
    max_iter: int = 200
    step0: float = 0.1
    shrink: float = 0.5
    grow: float = 1.3
    tol: float = 1e-12
    patience: int = 8
    update_weights: bool = True
    min_step: float = 1e-14
    # "free" moves frames and spectra; "fixed" rotates frames only, which
    # keeps the search on a compact orbit (free n=1 toys tend to drain
    # toward the non-regular stratum boundary, where steps are refused)
    spectra: str = "free"


@dataclass
class MinimizeResult:
    rho: DiscreteMeasure
    report: ActionReport
    converged: bool
    iterations: int
    trace_rows: list = field(default_factory=list)


def _point_gradients(rho: DiscreteMeasure, kappa: float):
    """Euclidean action gradient per point as Hermitian matrices.

    For each pair the chain rule runs through the nonzero spectrum of the
    operator product; zero eigenvalues stay zero along tangent directions
    of the rank stratum, so they are excluded.
    """
    nn, n = len(rho), rho.n
    ops = [p.operator() for p in rho.points]
    grads = [np.zeros((rho.dim_f, rho.dim_f), dtype=complex) for _ in range(nn)]
    for i in range(nn):
        for j in range(nn):
            prod = ops[i] @ ops[j]
            lam, v = np.linalg.eig(prod)
            order = np.argsort(-np.abs(lam))[: 2 * n]
            lam_nz = lam[order]
            vr = v[:, order]
            try:
                wl = np.linalg.pinv(v)[order, :]
            except np.linalg.LinAlgError:
                continue
            mod = np.abs(lam_nz)
            s1 = mod.sum()
            if s1 == 0.0:
                continue
            g = 2.0 * mod - s1 / n + 2.0 * kappa * s1
            c = g * lam_nz.conj() / np.maximum(mod, 1e-12 * s1)
            phi = (vr * c) @ wl
            k = ops[j] @ phi
            grads[i] += 2.0 * rho.weights[i] * rho.weights[j] * 0.5 * (k + k.conj().T)
    return grads


def _rotation_generators(rho: DiscreteMeasure, kappa: float):
    """Per-point Hermitian generators of steepest ascent along conjugations.

    dAction/dtau for x_i -> exp(i tau H) x_i exp(-i tau H) equals Tr(H S_i).
    """
    ker = q_kernel(rho, kappa)
    gens = []
    for i, p in enumerate(rho.points):
        acc = np.zeros((2 * rho.n, rho.dim_f), dtype=complex)
        for j, q in enumerate(rho.points):
            acc += rho.weights[j] * (ker.blocks[i, j] @ q.frame.conj().T)
        k_i = -(p.frame * p.spin_gram()) @ acc
        gens.append(2j * rho.weights[i] * (k_i - k_i.conj().T))
    return gens


def minimize(rho0: DiscreteMeasure, kappa: float, config: MinimizeConfig | None = None) -> MinimizeResult:
    """Projected gradient descent preserving volume and per-point local trace.

    The action never increases between logged iterations; if no descent step
    is found within the patience window the best iterate so far is returned
    with ``converged=False``.
    """
    cfg = config or MinimizeConfig()
    rho = rho0
    volume = rho0.volume
    lmat, bmat = pairwise_lagrangian(rho, kappa)
    action = float(rho.weights @ lmat @ rho.weights)
    step = cfg.step0
    rows = [_trace_row(0, rho, lmat, bmat, kappa)]
    stalls = 0
    it = 0
    for it in range(1, cfg.max_iter + 1):
        if cfg.spectra == "fixed":
            grads = _rotation_generators(rho, kappa)
        else:
            grads = _point_gradients(rho, kappa)
            # project onto the trace constraint; the multiplicative rescaling
            # in the retraction is then a second-order correction only
            eye = np.eye(rho.dim_f)
            grads = [g - (np.trace(g).real / rho.dim_f) * eye for g in grads]
        gscale = max(max(np.abs(g).max() for g in grads), 1e-30)
        improved = False
        while step > cfg.min_step:
            try:
                if cfg.spectra == "fixed":
                    new_pts = []
                    for p, g in zip(rho.points, grads):
                        u = scipy.linalg.expm(-1j * (step / gscale) * g)
                        new_pts.append(core.conjugate_point(p, u))
                else:
                    new_pts = [core.point_from_operator(
                        p.operator() - (step / gscale) * g, rho.n, c=p.local_trace)
                        for p, g in zip(rho.points, grads)]
            except Exception:
                step *= cfg.shrink
                continue
            new_w = rho.weights
            if cfg.update_weights:
                wgrad = 2.0 * (lmat @ rho.weights)
                wgrad = wgrad - wgrad.mean()  # project onto the volume constraint
                new_w = np.maximum(rho.weights - (step / max(np.abs(wgrad).max(), 1e-30)) * wgrad,
                                   1e-8 * volume / len(rho))
                new_w = new_w * (volume / new_w.sum())
            cand = measure(new_pts, new_w)
            lmat_c, bmat_c = pairwise_lagrangian(cand, kappa)
            action_c = float(cand.weights @ lmat_c @ cand.weights)
            if action_c < action - cfg.tol * max(1.0, abs(action)):
                rho, action, lmat, bmat = cand, action_c, lmat_c, bmat_c
                step = min(step * cfg.grow, 1.0)
                improved = True
                break
            step *= cfg.shrink
        rows.append(_trace_row(it, rho, lmat, bmat, kappa))
        if not improved:
            stalls += 1
            step = cfg.step0 * cfg.shrink**stalls
            if stalls >= cfg.patience:
                break
        else:
            stalls = 0
    report = causal_action(rho, kappa)
    return MinimizeResult(rho=rho, report=report, converged=stalls >= cfg.patience,
                          iterations=it, trace_rows=rows)


def _trace_row(it, rho, lmat, bmat, kappa):
    w = rho.weights
    s = float(np.sum(w * (lmat @ w)) / w.sum())
    max_ell = float(np.abs(lmat @ w - s).max())
    return (it, float(w @ lmat @ w), float(w.sum()), float(w @ bmat @ w), max_ell)


# ---------------------------------------------------------------------------
# symmetric fixtures

def symmetric_critical_generator(group_size: int, dim_f: int | None = None, n: int = 1,
                                 c: float = 1.0, seed_point: SpacetimePoint | None = None,
                                 unitary=None, total_volume: float | None = None,
                                 overlap: float = 0.6, nu: float = 2.0) -> DiscreteMeasure:
    """Measure on the unitary orbit of a seed point, uniform weights.

    Without an explicit seed the orbit is a ring: the ambient space splits
    into ``group_size`` blocks of dimension 2n, the cyclic unitary shifts
    blocks, and the seed straddles two neighboring blocks so that only
    nearest neighbors on the ring have nonzero overlap.  ell is constant on
    the orbit by construction; criticality is checked a posteriori through
    el_residual.
    """
    if group_size < 1:
        raise PreconditionError("group_size must be >= 1")
    if seed_point is None:
        if dim_f is None:
            dim_f = max(group_size, 2) * 2 * n
        block = 2 * n
        if dim_f != max(group_size, 2) * block:
            raise PreconditionError("default ring needs dim_f = group_size * 2n")
        nblocks = dim_f // block
        cosg, sing = np.cos(overlap), np.sin(overlap)
        frame = np.zeros((dim_f, 2 * n), dtype=complex)
        for a in range(n):
            frame[2 * a, a] = cosg
            frame[block + 2 * a, a] = sing
        for a in range(n):
            frame[2 * a + 1, n + a] = cosg
            frame[block + 2 * a + 1, n + a] = sing
        mu = nu - c / n  # per-eigenvalue split with trace n*nu - n*mu = c
        if mu <= 0:
            raise PreconditionError("need nu > c/n for a regular seed")
        spectrum = np.concatenate([np.full(n, nu), np.full(n, -mu)])
        seed_point = core.make_point(frame, spectrum, c)
        shift = np.zeros((dim_f, dim_f))
        for b in range(nblocks):
            tgt = (b + 1) % nblocks
            shift[tgt * block:(tgt + 1) * block, b * block:(b + 1) * block] = np.eye(block)
        unitary = shift
    if unitary is None:
        raise PreconditionError("an explicit seed point needs an explicit unitary")
    pts = []
    u_k = np.eye(seed_point.dim_f)
    for _ in range(group_size):
        pts.append(core.conjugate_point(seed_point, u_k))
        u_k = unitary @ u_k
    # deduplicate repeated orbit points, merging weights
    kept, mult = [], []
    for p in pts:
        op = p.operator()
        for idx, q in enumerate(kept):
            if np.abs(q.operator() - op).max() < 1e-12 * max(1.0, np.abs(op).max()):
                mult[idx] += 1
                break
        else:
            kept.append(p)
            mult.append(1)
    vol = total_volume if total_volume is not None else float(group_size)
    w = vol / group_size * np.asarray(mult, dtype=float)
    return measure(kept, w)
