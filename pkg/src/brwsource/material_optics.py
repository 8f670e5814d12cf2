"""Refractive index of Al(x)Ga(1-x)As below the band edge.

Two models are available:

``gehrsitz``
    Gehrsitz et al., J. Appl. Phys. 87, 7825 (2000), room temperature
    (T = 293 K). Sellmeier-type fit with the direct-gap pole, a high-energy
    oscillator and the two Reststrahlen (phonon) terms.

``gehrsitz-nir``
    The Gehrsitz fit plus an empirical near-gap correction used in Bragg
    reflection waveguide design work (AlGaAs BRW design functions, T.
    Stirling / Helmy group, after M. Iu 2022). The correction grows towards
    the band edge and lifts the index near 780 nm by 0.02-0.05 while leaving
    the telecom band almost unchanged. It is the default because the pure
    fit underestimates the pump-band index of the low-Al layers.

Wavelengths are vacuum wavelengths in nanometres throughout.
"""

from __future__ import annotations

import numpy as np

from .errors import CompositionError, ValidityError

TEMPERATURE_K = 293.0

MODELS = ("gehrsitz", "gehrsitz-nir")
DEFAULT_MODEL = "gehrsitz-nir"

MODEL_SOURCES = {
    "gehrsitz": "Gehrsitz et al., J. Appl. Phys. 87, 7825 (2000), T=293 K",
    "gehrsitz-nir": (
        "Gehrsitz et al., J. Appl. Phys. 87, 7825 (2000), T=293 K, "
        "with empirical near-gap correction (Helmy-group BRW design code, Iu 2022)"
    ),
}

# Validity window: long-wavelength edge is fixed; the short edge tracks the
# direct gap of the layer and never goes below MIN_WAVELENGTH_NM.
MIN_WAVELENGTH_NM = 730.0
MAX_WAVELENGTH_NM = 1700.0
GAP_MARGIN_NM = 25.0

# Blend range for the two composition branches of the near-gap correction.
_BLEND_LO, _BLEND_HI = 0.40, 0.50


def _check_composition(x):
    x = float(x)
    if not 0.0 <= x <= 1.0 or not np.isfinite(x):
        raise CompositionError(f"aluminum fraction x={x!r} outside [0, 1]")
    return x


def _gap_wavenumber(x, T=TEMPERATURE_K):
    """Direct (Gamma) gap of the Gehrsitz fit in inverse micrometres."""
    return (
        1.225316977778989
        + 0.023083578135884 * (1.0 - 1.0 / np.tanh(92.255357763322920 / T))
        + 0.029810239269821 * (1.0 - 1.0 / np.tanh(194.9547182923050 / T))
        + 1.1308 * x
        + 0.1436 * x**2
    )


def gap_wavelength_nm(x) -> float:
    """Wavelength of the direct-gap pole of the index model."""
    x = _check_composition(x)
    return 1e3 / _gap_wavenumber(x)


def validity_window(x) -> tuple[float, float]:
    """(shortest, longest) wavelength in nm accepted for composition ``x``."""
    lo = max(MIN_WAVELENGTH_NM, gap_wavelength_nm(x) + GAP_MARGIN_NM)
    return lo, MAX_WAVELENGTH_NM


def _gehrsitz_eps(x, wavelength_nm, T=TEMPERATURE_K):
    e2 = (1e3 / wavelength_nm) ** 2  # photon energy squared, um^-2
    a = (
        5.9613 + 7.178e-4 * T - 0.953e-6 * T**2
        - 16.159 * x + 43.511 * x**2 - 71.317 * x**3 + 57.535 * x**4 - 17.451 * x**5
    )
    c0 = 1.0 / (50.535 - 150.7 * x - 62.209 * x**2 + 797.16 * x**3 - 1125.0 * x**4 + 503.79 * x**5)
    e0 = _gap_wavenumber(x, T)
    c1 = 21.5647 + 113.74 * x - 122.5 * x**2 + 108.401 * x**3 - 47.318 * x**4
    e1_sq = 4.7171 - 3.237e-4 * T - 1.358e-6 * T**2 + 11.006 * x - 3.08 * x**2
    phonon = (1.0 - x) * 1.55e-3 / (0.724e-3 - e2) + x * 2.61e-3 / (1.331e-3 - e2)
    return a + c0 / (e0**2 - e2) + c1 / (e1_sq - e2) + phonon


def _near_gap_correction(x, wavelength_nm):
    # frequency in units of 100 THz, with c rounded as in the original fit
    f = 3e8 / (np.asarray(wavelength_nm) * 1e-9) / 1e14
    high = (1.72 * np.exp(0.03609 * (f - 3.747) / 0.1473)
            + 0.2316 * np.exp(0.3428 * (f - 3.747) / 0.1473)) * 9e-3
    low = (4.704 * np.exp(0.1839 * (f - 3.738) / 0.152)
           + 0.0321 * np.exp(3.079 * (f - 3.738) / 0.152)) * 9e-3
    w = np.clip((x - _BLEND_LO) / (_BLEND_HI - _BLEND_LO), 0.0, 1.0)
    return (1.0 - w) * low + w * high


def refractive_index(x, wavelength_nm, model: str = DEFAULT_MODEL):
    """Real refractive index of Al(x)Ga(1-x)As.

    ``wavelength_nm`` may be a scalar or an array. Raises
    :class:`CompositionError` for x outside [0, 1] and
    :class:`ValidityError` when any wavelength falls outside
    :func:`validity_window`.
    """
    if model not in MODELS:
        raise ValueError(f"unknown index model {model!r}; choose from {MODELS}")
    x = _check_composition(x)
    lam = np.asarray(wavelength_nm, dtype=float)
    lo, hi = validity_window(x)
    if np.any(~np.isfinite(lam)) or np.any(lam < lo) or np.any(lam > hi):
        raise ValidityError(
            f"wavelength {wavelength_nm} nm outside the {model} validity window "
            f"[{lo:.1f}, {hi:.1f}] nm for x={x}",
            window=(lo, hi),
        )
    n = np.sqrt(_gehrsitz_eps(x, lam))
    if model == "gehrsitz-nir":
        n = n + _near_gap_correction(x, lam)
    return float(n) if n.ndim == 0 else n
