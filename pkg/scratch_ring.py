"""Scratch: explore the ring fixture spectral structure (not part of the package)."""
import numpy as np

from cfslab import action, core, kernels
from cfslab.measures import measure, physical_wave, wave_matrix

np.set_printoptions(precision=5, suppress=True, linewidth=150)


def build_ring(m=6, n=1, c=1.0, nu=2.0, phi=0.6, chi=0.9):
    block = 2 * n
    f = m * block
    frame = np.zeros((f, 2 * n), dtype=complex)
    frame[0, 0] = np.cos(phi); frame[block, 0] = np.sin(phi)
    frame[1, 1] = np.cos(chi); frame[block + 1, 1] = np.sin(chi)
    mu = nu - c
    seed = core.make_point(frame, np.array([nu, -mu]), c)
    shift = np.zeros((f, f))
    for b in range(m):
        t = (b + 1) % m
        shift[t * block:(t + 1) * block, b * block:(b + 1) * block] = np.eye(block)
    return action.symmetric_critical_generator(m, seed_point=seed, unitary=shift), shift


rho, shift = build_ring()
f = rho.dim_f
kappa = 0.05
ker = kernels.q_kernel(rho, kappa)
print("fallback pairs:", ker.fallback_pairs, " zero pairs:", len(ker.zero_pairs))

# big wave-space operator Qcal: (N*2n) with rho weights
N = len(rho)
n2 = 2 * rho.n
K = N * n2
Qcal = np.zeros((K, K), dtype=complex)
for i in range(N):
    for j in range(N):
        Qcal[i*n2:(i+1)*n2, j*n2:(j+1)*n2] = rho.weights[j] * ker.blocks[i, j]

# Psi: H -> wave space
Psi = wave_matrix(rho, np.eye(f))
print("Psi invertible? cond =", np.linalg.cond(Psi))

# sector split: sector s of wave coordinate alpha at any point: alpha==0 -> +, alpha==1 -> -
plus = np.array([i for i in range(K) if i % n2 == 0])
minus = np.array([i for i in range(K) if i % n2 == 1])
print("Q+- cross block max:", np.abs(Qcal[np.ix_(plus, minus)]).max())
Qp = Qcal[np.ix_(plus, plus)]
Qm = Qcal[np.ix_(minus, minus)]
print("Qp hermitian dev:", np.abs(Qp - Qp.conj().T).max(), " Qm:", np.abs(Qm - Qm.conj().T).max())
wp, vp = np.linalg.eig(Qp)
wm, vm = np.linalg.eig(Qm)
print("sector+ eigenvalues:", np.sort_complex(wp))
print("sector- eigenvalues:", np.sort_complex(wm))

# check circulant: eigenvectors should be Fourier modes
F = np.array([[np.exp(2j*np.pi*k*j/N)/np.sqrt(N) for k in range(N)] for j in range(N)])
print("Qp in Fourier basis diag?", np.abs(F.conj().T @ Qp @ F - np.diag(np.diag(F.conj().T@Qp@F))).max())

# pick fourier mode k in sector+, map back to H via Psi^{-1}
def hf_vector(sector_idx, k):
    mode = F[:, k]
    wave = np.zeros(K, dtype=complex)
    wave[sector_idx] = mode
    u = np.linalg.solve(Psi, wave)
    return u, wave

for k in range(N):
    up, wavep = hf_vector(plus, k)
    # eigenvalue check: Qcal wave = r wave?
    resid = Qcal @ wavep - (F.conj().T @ Qp @ F)[k, k] * wavep
    print(f"mode {k}: sector+ eig {(F.conj().T @ Qp @ F)[k,k]:.6f} resid {np.abs(resid).max():.2e}")

# currents: gamma^Omega(C(|u><u|)) for Omega = first 3 points
omega = np.zeros(N, dtype=bool); omega[:3] = True
def gamma_comm(rho, ker, omega, A):
    tot = 0.0
    for i in range(N):
        for j in range(N):
            if omega[i] and not omega[j]:
                d = kernels.d1_minus_d2_comm(rho.points[i], rho.points[j], A, kappa, ker.blocks[i, j])
                tot += rho.weights[i] * rho.weights[j] * d
    return tot

for k in [0, 1, 2, 3]:
    up, _ = hf_vector(plus, k)
    A = np.outer(up, up.conj())
    print(f"sector+ mode {k}: gamma = {gamma_comm(rho, ker, omega, A):.6e}, |u|^2 = {np.linalg.norm(up)**2:.4f}")
for k in [0, 1, 2, 3]:
    um, _ = hf_vector(minus, k)
    A = np.outer(um, um.conj())
    print(f"sector- mode {k}: gamma = {gamma_comm(rho, ker, omega, A):.6e}, |u|^2 = {np.linalg.norm(um)**2:.4f}")

# conservation for H^f built from sector+/- same fourier k: Omega vs Omega'
up, _ = hf_vector(plus, 1)
um, _ = hf_vector(minus, 1)
hf = np.stack([up / np.linalg.norm(up), um / np.linalg.norm(um)], axis=1)
omega2 = np.zeros(N, dtype=bool); omega2[[0, 1, 2, 3]] = True
rng = np.random.default_rng(0)
for trial in range(3):
    z = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
    z = 0.5 * (z + z.conj().T)
    A = hf @ z @ hf.conj().T
    g1 = gamma_comm(rho, ker, omega, A)
    g2 = gamma_comm(rho, ker, omega2, A)
    print(f"conservation trial {trial}: gamma_O = {g1:.8e}, gamma_O' = {g2:.8e}, diff = {abs(g1-g2):.2e}")
