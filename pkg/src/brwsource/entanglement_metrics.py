"""Entanglement and nonlocality figures of merit for two-qubit states.

Basis order is {HH, HV, VH, VV} throughout.
"""

from __future__ import annotations

import logging
import threading
from typing import NamedTuple

import numpy as np
from scipy.optimize import least_squares
from scipy.stats import unitary_group

from .errors import FitError, StateValidationError

BASIS = ("HH", "HV", "VH", "VV")
HERMITIAN_TOL = 1e-10
TRACE_TOL = 1e-10
CLAMP_TOL = 1e-9

PAULI = (
    np.array([[0, 1], [1, 0]], dtype=complex),
    np.array([[0, -1j], [1j, 0]], dtype=complex),
    np.array([[1, 0], [0, -1]], dtype=complex),
)
_YY = np.kron(PAULI[1], PAULI[1])


_log = logging.getLogger(__name__)


class _ClampCounter:
    def __init__(self):
        self._lock = threading.Lock()
        self.count = 0

    def bump(self):
        with self._lock:
            self.count += 1

    def reset(self):
        with self._lock:
            self.count = 0


clamp_counter = _ClampCounter()


def ket(label: str) -> np.ndarray:
    v = np.zeros(4, dtype=complex)
    v[BASIS.index(label)] = 1.0
    return v


def bell_state(phi: float = 0.0) -> np.ndarray:
    """(|HV> + e^{i phi}|VH>)/sqrt(2) as a density matrix."""
    psi = (ket("HV") + np.exp(1j * phi) * ket("VH")) / np.sqrt(2)
    return np.outer(psi, psi.conj())


def phi_plus() -> np.ndarray:
    psi = (ket("HH") + ket("VV")) / np.sqrt(2)
    return np.outer(psi, psi.conj())


def werner(p: float, bell: np.ndarray | None = None) -> np.ndarray:
    bell = phi_plus() if bell is None else bell
    return p * bell + (1 - p) * np.eye(4) / 4


def validate_state(rho) -> np.ndarray:
    """Check the two-qubit state invariants and return a cleaned copy.

    Eigenvalues in [-1e-9, 0) are clamped to zero and the state renormalised;
    each clamp bumps :data:`clamp_counter` and is logged at debug level.
    """
    rho = np.array(rho, dtype=complex)
    if rho.shape != (4, 4):
        raise StateValidationError(f"expected a 4x4 matrix, got shape {rho.shape}")
    if not np.all(np.isfinite(rho)):
        raise StateValidationError("state has non-finite entries")
    herm_err = np.abs(rho - rho.conj().T).max()
    if herm_err > HERMITIAN_TOL:
        raise StateValidationError(f"state not Hermitian (max deviation {herm_err:.3e})")
    rho = 0.5 * (rho + rho.conj().T)
    tr = np.trace(rho).real
    if abs(tr - 1) > TRACE_TOL:
        raise StateValidationError(f"trace {tr!r} differs from 1")
    w, v = np.linalg.eigh(rho)
    if w[0] < -CLAMP_TOL:
        raise StateValidationError(f"state not positive semidefinite (eigenvalue {w[0]:.3e})")
    if w[0] < 0:
        clamp_counter.bump()
        _log.debug("clamped eigenvalue %.3e to zero", w[0])
        w = np.clip(w, 0, None)
        rho = (v * w) @ v.conj().T
        rho /= np.trace(rho).real
    return rho


def _sqrtm_psd(rho):
    w, v = np.linalg.eigh(rho)
    return (v * np.sqrt(np.clip(w, 0, None))) @ v.conj().T


def concurrence(rho) -> float:
    """Wootters concurrence max(0, l1 - l2 - l3 - l4).

    The l_i are the square roots of the eigenvalues of rho (Y x Y) rho* (Y x Y),
    obtained here as singular values of sqrt(rho) (Y x Y) sqrt(rho)*, which
    is better conditioned for low-rank states.
    """
    rho = validate_state(rho)
    s = _sqrtm_psd(rho)
    lam = np.linalg.svd(s @ _YY @ s.conj(), compute_uv=False)
    return float(min(1.0, max(0.0, lam[0] - lam[1] - lam[2] - lam[3])))


def fidelity_to_bell(rho, optimize_phase: bool = True, phi: float = 0.0) -> float:
    """Overlap with (|HV> + e^{i phi}|VH>)/sqrt(2).

    <psi|rho|psi> = (rho_HV,HV + rho_VH,VH)/2 + Re(e^{i phi} rho_HV,VH), so the
    maximum over phi is (rho_HV,HV + rho_VH,VH)/2 + |rho_HV,VH|.
    """
    rho = validate_state(rho)
    pop = 0.5 * (rho[1, 1].real + rho[2, 2].real)
    coh = rho[1, 2]
    f = pop + abs(coh) if optimize_phase else pop + (np.exp(1j * phi) * coh).real
    return float(min(1.0, max(0.0, f)))


def state_fidelity(rho, sigma) -> float:
    """Uhlmann fidelity (tr sqrt(sqrt(rho) sigma sqrt(rho)))^2."""
    rho = validate_state(rho)
    sigma = validate_state(sigma)
    s = _sqrtm_psd(rho)
    w = np.linalg.eigvalsh(s @ sigma @ s)
    return float(min(1.0, np.sum(np.sqrt(np.clip(w, 0, None))) ** 2))


def trace_distance(rho, sigma) -> float:
    return float(0.5 * np.abs(np.linalg.eigvalsh(np.asarray(rho) - np.asarray(sigma))).sum())


def correlation_matrix(rho) -> np.ndarray:
    """T_ij = Tr(rho sigma_i x sigma_j)."""
    return np.array([[np.trace(rho @ np.kron(a, b)).real for b in PAULI] for a in PAULI])


def chsh_max(rho) -> float:
    """Largest CHSH value reachable with projective measurements,
    S = 2 sqrt(u1 + u2) with u1, u2 the two largest eigenvalues of T^T T."""
    rho = validate_state(rho)
    t = correlation_matrix(rho)
    u = np.sort(np.linalg.eigvalsh(t.T @ t))[::-1]
    return float(2 * np.sqrt(max(u[0] + u[1], 0.0)))


class VisibilityFit(NamedTuple):
    visibility: float
    phase: float  # analyzer angle of maximum transmission, same unit as input
    amplitude: float
    offset: float


def visibility_fit(angles, counts, degrees: bool = True) -> VisibilityFit:
    """Fit N(theta) = offset + amplitude * cos^2(theta - theta0), with
    offset >= 0 and amplitude >= 0, and return V = (max - min)/(max + min)
    of the fitted curve."""
    theta = np.asarray(angles, dtype=float)
    n = np.asarray(counts, dtype=float)
    if theta.shape != n.shape or theta.ndim != 1:
        raise FitError("angles and counts must be 1-D arrays of equal length")
    if np.any(n < 0) or not np.all(np.isfinite(n)):
        raise FitError("counts must be finite and non-negative")
    if degrees:
        theta = np.deg2rad(theta)
    design = np.column_stack([np.ones_like(theta), np.cos(2 * theta), np.sin(2 * theta)])
    distinct = np.unique(np.round(np.mod(theta, np.pi), 12))
    if distinct.size < 4 or np.linalg.matrix_rank(design) < 3:
        raise FitError(f"need at least 4 distinct analyzer angles, got {distinct.size}")
    c, *_ = np.linalg.lstsq(design, n, rcond=None)
    half_amp = float(np.hypot(c[1], c[2]))
    theta0 = 0.5 * float(np.arctan2(c[2], c[1]))
    amp, offset = 2 * half_amp, float(c[0]) - half_amp
    if offset < 0:
        def resid(p):
            return p[0] + p[1] * np.cos(theta - p[2]) ** 2 - n
        sol = least_squares(resid, [0.0, max(amp, float(n.max())), theta0],
                            bounds=([0.0, 0.0, -np.inf], [np.inf, np.inf, np.inf]))
        offset, amp, theta0 = (float(v) for v in sol.x)
    theta0 = float(np.mod(theta0 + 0.5 * np.pi, np.pi) - 0.5 * np.pi)
    denom = amp + 2 * offset
    vis = amp / denom if denom > 0 else 0.0
    if degrees:
        theta0 = float(np.rad2deg(theta0))
    return VisibilityFit(float(min(max(vis, 0.0), 1.0)), theta0, amp, offset)


def random_state(rng: np.random.Generator, rank: int = 4) -> np.ndarray:
    """Ginibre random state G G^dag / tr with G of shape (4, rank)."""
    g = rng.standard_normal((4, rank)) + 1j * rng.standard_normal((4, rank))
    rho = g @ g.conj().T
    return rho / np.trace(rho).real


def random_block_state(rng: np.random.Generator) -> np.ndarray:
    """Random state supported on span{HV, VH}."""
    g = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
    block = g @ g.conj().T
    block /= np.trace(block).real
    rho = np.zeros((4, 4), dtype=complex)
    rho[1:3, 1:3] = block
    return rho


def random_local_unitary(rng: np.random.Generator) -> np.ndarray:
    return np.kron(unitary_group.rvs(2, random_state=rng), unitary_group.rvs(2, random_state=rng))
