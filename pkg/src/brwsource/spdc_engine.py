"""CW-pumped type-II biphoton amplitude and the H/V marginal spectra.

With a monochromatic pump the idler frequency is fixed by energy
conservation, so the joint amplitude reduces to a function of the signal
frequency alone:

    Phi_HV(ws) = sinc(dk L / 2) * exp(i dk L / 2),  dk = dk_HV(ws, wp - ws)
    Phi_VH(ws) = Phi_HV(wp - ws)

The phase references the field to the output facet. ``sinc`` here is the
unnormalised sin(x)/x.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from scipy.integrate import simpson

from .errors import RangeError
from .mode_solver import C_LIGHT, HV, PhaseMatchingTables, TELECOM_RANGE_NM, phase_mismatch

DEFAULT_POINTS = 4096


def omega_from_nm(wavelength_nm):
    return 2 * np.pi * C_LIGHT / (np.asarray(wavelength_nm, dtype=float) * 1e-9)


def nm_from_omega(omega):
    return 2 * np.pi * C_LIGHT / np.asarray(omega, dtype=float) * 1e9


@dataclass(frozen=True, eq=False)
class BiphotonAmplitude:
    """Phi_HV and Phi_VH sampled on a signal grid symmetric about wp/2.

    The grid is ascending in signal frequency and its reversal is the idler
    grid, so index j of one amplitude pairs with index N-1-j of the other.
    """

    omega_p: float
    omega_s: np.ndarray
    phi_hv: np.ndarray
    phi_vh: np.ndarray
    length_m: float
    delta_k_hv: np.ndarray | None = None

    def __post_init__(self):
        for arr in (self.omega_s, self.phi_hv, self.phi_vh, self.delta_k_hv):
            if arr is not None:
                arr.flags.writeable = False

    @property
    def omega_i(self) -> np.ndarray:
        return self.omega_p - self.omega_s

    @property
    def lambda_s_nm(self) -> np.ndarray:
        return nm_from_omega(self.omega_s)

    @property
    def lambda_p_nm(self) -> float:
        return float(nm_from_omega(self.omega_p))

    @property
    def degenerate_nm(self) -> float:
        return 2 * self.lambda_p_nm

    @property
    def total(self) -> float:
        """Integral of |Phi_HV|^2 + |Phi_VH|^2 over the stored grid."""
        dens = np.abs(self.phi_hv) ** 2 + np.abs(self.phi_vh) ** 2
        return float(simpson(dens, x=self.omega_s))

    def scaled(self, factor: complex) -> "BiphotonAmplitude":
        """Copy with both amplitudes multiplied by ``factor`` (no renormalisation)."""
        return BiphotonAmplitude(self.omega_p, self.omega_s.copy(), self.phi_hv * factor,
                                 self.phi_vh * factor, self.length_m,
                                 None if self.delta_k_hv is None else self.delta_k_hv.copy())


def symmetric_grid(omega_p: float, band_nm=TELECOM_RANGE_NM, points: int = DEFAULT_POINTS) -> np.ndarray:
    """Signal frequencies symmetric about wp/2, as wide as ``band_nm`` allows
    for both photons. Exact mirror symmetry: w[N-1-j] = wp - w[j]."""
    if points < 3:
        raise ValueError("grid needs at least 3 points")
    w_lo, w_hi = sorted(float(v) for v in omega_from_nm(band_nm))
    centre = 0.5 * omega_p
    half = min(centre - w_lo, w_hi - centre)
    if not half > 0:
        raise RangeError(f"degenerate wavelength {nm_from_omega(centre):.2f} nm outside band {band_nm}")
    step = 2 * half / (points - 1)
    offsets = step * (np.arange(points) - 0.5 * (points - 1))
    return centre + offsets


def phase_matching_amplitude(delta_k, length_m):
    """sinc(dk L/2) exp(i dk L/2)."""
    x = 0.5 * np.asarray(delta_k, dtype=float) * length_m
    return np.sinc(x / np.pi) * np.exp(1j * x)


def biphoton_amplitude(tables: PhaseMatchingTables, omega_p: float, length_m: float,
                       points: int = DEFAULT_POINTS, band_nm=TELECOM_RANGE_NM,
                       grid: np.ndarray | None = None) -> BiphotonAmplitude:
    """Normalised amplitude on the energy-conservation line.

    ``grid`` overrides the default symmetric grid; it must itself satisfy
    grid[::-1] == omega_p - grid.
    """
    if grid is None:
        omega_s = symmetric_grid(omega_p, band_nm, points)
    else:
        omega_s = np.array(grid, dtype=float)
        if not np.allclose(omega_s[::-1], omega_p - omega_s, rtol=0, atol=1e-9 * omega_p):
            raise ValueError("signal grid must be symmetric about omega_p / 2")
    dk = np.asarray(phase_mismatch(tables, omega_s, omega_p - omega_s, HV))
    phi_hv = phase_matching_amplitude(dk, length_m)
    amp = BiphotonAmplitude(float(omega_p), omega_s, phi_hv, phi_hv[::-1].copy(), float(length_m), dk)
    norm = np.sqrt(amp.total)
    return BiphotonAmplitude(amp.omega_p, omega_s, phi_hv / norm, amp.phi_vh / norm, amp.length_m, dk)


def synthetic_amplitude(omega_p: float, phi_hv_fn, length_m: float = 1e-3,
                        points: int = DEFAULT_POINTS, band_nm=TELECOM_RANGE_NM,
                        phi_vh_fn=None) -> BiphotonAmplitude:
    """Amplitude from callables of signal frequency, normalised.

    ``phi_vh_fn`` defaults to the pairing-symmetric partner of ``phi_hv_fn``.
    """
    omega_s = symmetric_grid(omega_p, band_nm, points)
    phi_hv = np.asarray(phi_hv_fn(omega_s), dtype=complex) * np.ones_like(omega_s)
    if phi_vh_fn is None:
        phi_vh = phi_hv[::-1].copy()
    else:
        phi_vh = np.asarray(phi_vh_fn(omega_s), dtype=complex) * np.ones_like(omega_s)
    amp = BiphotonAmplitude(float(omega_p), omega_s, phi_hv, phi_vh, length_m)
    norm = np.sqrt(amp.total)
    if not norm > 0:
        raise ValueError("synthetic amplitude vanishes on the grid")
    return amp.scaled(1 / norm)


@dataclass(frozen=True, eq=False)
class MarginalSpectra:
    """H and V photon intensities on an ascending wavelength axis, scaled so
    the larger peak is 1 (per unit frequency, no wavelength Jacobian)."""

    lambda_nm: np.ndarray
    intensity_h: np.ndarray
    intensity_v: np.ndarray

    @property
    def overlap(self) -> np.ndarray:
        """Spectrally overlapped part of the two curves, min(H, V)."""
        return np.minimum(self.intensity_h, self.intensity_v)

    def to_csv(self, header: dict | None = None) -> str:
        buf = io.StringIO()
        for key, value in (header or {}).items():
            buf.write(f"# {key}: {value}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["lambda_nm", "intensity_H", "intensity_V"])
        for row in zip(self.lambda_nm, self.intensity_h, self.intensity_v):
            w.writerow([f"{row[0]:.6f}", f"{row[1]:.10e}", f"{row[2]:.10e}"])
        return buf.getvalue()


def marginal_spectra(amp: BiphotonAmplitude) -> MarginalSpectra:
    """H(w) = |Phi_HV(w)|^2 + |Phi_VH(wp - w)|^2, V(w) = |Phi_HV(wp - w)|^2 + |Phi_VH(w)|^2,
    i.e. each polarisation collects the photon of that polarisation whether
    it is the signal or the idler."""
    hv = np.abs(amp.phi_hv) ** 2
    vh = np.abs(amp.phi_vh) ** 2
    # on the symmetric grid, w -> wp - w is index reversal
    h = hv + vh[::-1]
    v = hv[::-1] + vh
    lam = amp.lambda_s_nm
    order = np.argsort(lam)
    peak = max(h.max(), v.max())
    if not peak > 0:
        raise ValueError("amplitude vanishes everywhere")
    return MarginalSpectra(lam[order], h[order] / peak, v[order] / peak)


def fwhm_nm(wavelength_nm, intensity) -> float:
    """Full width at half maximum around the global peak, with linear
    interpolation of both half-maximum crossings."""
    lam = np.asarray(wavelength_nm, dtype=float)
    y = np.asarray(intensity, dtype=float)
    i = int(np.argmax(y))
    half = 0.5 * y[i]
    left = i
    while left > 0 and y[left] > half:
        left -= 1
    right = i
    while right < len(y) - 1 and y[right] > half:
        right += 1
    if y[left] > half or y[right] > half:
        raise RangeError("half-maximum not reached inside the sampled band")

    def cross(a, b):
        return lam[a] + (half - y[a]) * (lam[b] - lam[a]) / (y[b] - y[a])

    return float(cross(right - 1, right) - cross(left + 1, left))


def overlap_fwhm_nm(spectra: MarginalSpectra) -> float:
    return fwhm_nm(spectra.lambda_nm, spectra.overlap)
