"""Scratch: open-chain representing fixture exploration."""
import numpy as np

from cfslab import action, core, kernels
from cfslab.measures import measure, wave_matrix

np.set_printoptions(precision=6, suppress=True, linewidth=170)

def build_chain(N=8, n=1, c=1.0, nu=2.0, phi=0.6, chi=0.9):
    block = 2 * n
    f = (N + 1) * block
    pts = []
    mu = nu - c
    for j in range(N):
        frame = np.zeros((f, 2), dtype=complex)
        frame[2*j, 0] = np.cos(phi); frame[2*(j+1), 0] = np.sin(phi)
        frame[2*j+1, 1] = np.cos(chi); frame[2*(j+1)+1, 1] = np.sin(chi)
        pts.append(core.make_point(frame, np.array([nu, -mu]), c))
    return measure(pts)

N = 8
kappa = 0.05
rho = build_chain(N)
f = rho.dim_f
ker = kernels.q_kernel(rho, kappa)

n2 = 2
K = N * n2
Qcal = np.zeros((K, K), dtype=complex)
for i in range(N):
    for j in range(N):
        Qcal[i*n2:(i+1)*n2, j*n2:(j+1)*n2] = rho.weights[j] * ker.blocks[i, j]
plus = np.arange(0, K, 2); minus = np.arange(1, K, 2)
Qp = Qcal[np.ix_(plus, plus)].real
Qm = Qcal[np.ix_(minus, minus)].real
print("Qp row 3 (bulk):", Qp[3, :6])
print("Qp row 0 (end): ", Qp[0, :6])
print("tridiag? offband max:", np.abs(np.triu(Qp, 2)).max())

t_p, d_p = Qp[3, 4], Qp[3, 3]
t_m, d_m = Qm[3, 4], Qm[3, 3]
print("sector+ hop/diag:", t_p, d_p, "  sector-:", t_m, d_m)

Psi = wave_matrix(rho, np.eye(f))
print("Psi rank:", np.linalg.matrix_rank(Psi), "of", K)

def hf_vec(sector, theta):
    wave = np.zeros(K, dtype=complex)
    idx = plus if sector > 0 else minus
    wave[idx] = np.exp(1j * theta * np.arange(N))
    u = np.linalg.pinv(Psi) @ wave
    return u, wave

def gamma_comm(A, cut):
    # Omega = {0..cut}
    tot = 0.0
    absmag = 0.0
    for i in range(N):
        for j in range(N):
            if i <= cut < j or j <= cut < i:
                pass
            if i <= cut and j > cut:
                d = kernels.d1_minus_d2_comm(rho.points[i], rho.points[j], A, kappa, ker.blocks[i, j])
                tot += rho.weights[i]*rho.weights[j]*d
                absmag += abs(rho.weights[i]*rho.weights[j]*d)
    return tot, absmag

theta_p = 2*np.pi/5
up, wp_ = hf_vec(+1, theta_p)
print("psi^u = wave?", np.abs(Psi@up - wp_).max())
rp = d_p + 2*t_p*np.cos(theta_p)
resid = Qp @ wp_[plus]*0  # placeholder
resid = Qp @ np.exp(1j*theta_p*np.arange(N)) - rp*np.exp(1j*theta_p*np.arange(N))
print("bulk ELQ resid rows:", np.abs(resid))

A = np.outer(up, up.conj())
for cut in range(0, N-1):
    g, mag = gamma_comm(A, cut)
    print(f"cut {cut}: gamma+ = {g:.8e} (absmag {mag:.2e}), norm^2 = {np.linalg.norm(up)**2:.5f}")

# sector- current vs theta
um, wm_ = hf_vec(-1, 0.9)
Am = np.outer(um, um.conj())
for cut in [2, 3, 4]:
    g, _ = gamma_comm(Am, cut)
    print(f"cut {cut}: gamma- = {g:.8e}, norm^2 = {np.linalg.norm(um)**2:.5f}")

cp = gamma_comm(A, 3)[0]/np.linalg.norm(up)**2
print("c+ =", cp)
for th in np.linspace(0.1, np.pi-0.1, 8):
    um, _ = hf_vec(-1, th)
    cm = gamma_comm(np.outer(um, um.conj()), 3)[0]/np.linalg.norm(um)**2
    print(f"theta- {th:.3f}: c- = {cm:.6e}")
