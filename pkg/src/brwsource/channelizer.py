"""DWDM channelisation of the biphoton amplitude into channel-pair qubit states.

For a signal band B and its energy-matched idler band the polarisation state
lives on span{HV, VH}:

    A = int_B |Phi_HV|^2,  B = int_B |Phi_VH|^2,  C = int_B Phi_HV Phi_VH*
    rho = [[A, C], [C*, B]] / (A + B)   on (HV, VH)

The first letter is the signal polarisation; the signal is the shorter
wavelength channel of each pair.
"""

from __future__ import annotations

import csv
import io
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.integrate import simpson
from scipy.interpolate import CubicSpline

from . import entanglement_metrics as em
from .errors import EmptyBandError
from .spdc_engine import BiphotonAmplitude, nm_from_omega

TWO_PI = 2 * math.pi
TOPHAT = "tophat"
SHAPES = (TOPHAT,)
DEFAULT_SPACING_HZ = 100e9
DEFAULT_PASSBAND_HZ = 55e9
INV_SQRT2 = 1 / math.sqrt(2)


def thread_limit() -> int:
    """Worker count, capped by the BIPHOTON_THREADS environment variable."""
    cap = os.environ.get("BIPHOTON_THREADS")
    default = min(8, os.cpu_count() or 1)
    if cap is None:
        return default
    try:
        return max(1, min(default, int(cap)))
    except ValueError:
        return default


@dataclass(frozen=True, eq=False)
class ChannelGrid:
    """Channel centre frequencies (Hz), spacing and passband."""

    centers_hz: np.ndarray
    spacing_hz: float = DEFAULT_SPACING_HZ
    passband_hz: float = DEFAULT_PASSBAND_HZ
    shape: str = TOPHAT

    def __post_init__(self):
        if not 0 < self.passband_hz <= self.spacing_hz:
            raise ValueError("passband must be positive and no wider than the channel spacing")
        if self.shape not in SHAPES:
            raise ValueError(f"unsupported passband shape {self.shape!r}")
        centers = np.array(self.centers_hz, dtype=float)
        if centers.ndim != 1 or np.any(np.diff(centers) <= 0):
            raise ValueError("channel centres must be strictly increasing")
        centers.flags.writeable = False
        object.__setattr__(self, "centers_hz", centers)

    @classmethod
    def anchored(cls, anchor_hz: float, f_lo: float, f_hi: float, spacing_hz: float = DEFAULT_SPACING_HZ,
                 passband_hz: float = DEFAULT_PASSBAND_HZ, offset_hz: float = 0.0, shape: str = TOPHAT):
        """Channels whose passbands fit inside [f_lo, f_hi].

        With zero offset a channel boundary sits on ``anchor_hz`` (normally the
        degenerate frequency), so channels straddle degeneracy in mirror pairs.
        """
        origin = anchor_hz + offset_hz + 0.5 * spacing_hz
        k_lo = math.ceil((f_lo + 0.5 * passband_hz - origin) / spacing_hz)
        k_hi = math.floor((f_hi - 0.5 * passband_hz - origin) / spacing_hz)
        centers = origin + spacing_hz * np.arange(k_lo, k_hi + 1)
        return cls(centers, spacing_hz, passband_hz, shape)

    @classmethod
    def for_amplitude(cls, amp: BiphotonAmplitude, spacing_hz: float = DEFAULT_SPACING_HZ,
                      passband_hz: float = DEFAULT_PASSBAND_HZ, offset_hz: float = 0.0):
        f = amp.omega_s / TWO_PI
        return cls.anchored(amp.omega_p / (2 * TWO_PI), float(f[0]), float(f[-1]),
                            spacing_hz, passband_hz, offset_hz)

    def band_hz(self, index: int) -> tuple[float, float]:
        c = float(self.centers_hz[index])
        return c - 0.5 * self.passband_hz, c + 0.5 * self.passband_hz


def pair_channels(grid: ChannelGrid, omega_p: float) -> list[tuple[int, int]]:
    """Energy-matched (signal, idler) channel index pairs, nearest to
    degeneracy first. A channel that is its own partner is skipped, since
    both photons would leave through the same port."""
    f_p = omega_p / TWO_PI
    c = grid.centers_hz
    pairs = []
    for s in range(len(c)):
        i = int(np.argmin(np.abs(c - (f_p - c[s]))))
        if i == s or abs(c[s] + c[i] - f_p) > grid.spacing_hz:
            continue
        if c[s] > c[i]:  # signal: higher frequency (shorter wavelength)
            pairs.append((s, i))
    pairs.sort(key=lambda p: (abs(c[p[0]] - 0.5 * f_p), p[0]))
    return pairs


@dataclass(frozen=True, eq=False)
class ChannelPairState:
    signal: int
    idler: int
    lambda_s_nm: float
    lambda_i_nm: float
    band: tuple[float, float]  # signal angular-frequency band B_n, rad/s
    rho: np.ndarray
    captured_fraction: float
    a: float
    b: float
    c: complex

    @property
    def concurrence_closed_form(self) -> float:
        return 2 * abs(self.c) / (self.a + self.b)


class BandIntegrator:
    """Band integrals of the amplitude products, Simpson on the grid nodes
    inside the band plus spline-interpolated band edges."""

    def __init__(self, amp: BiphotonAmplitude):
        self.amp = amp
        w = amp.omega_s
        self._hv = CubicSpline(w, amp.phi_hv)
        self._vh = CubicSpline(w, amp.phi_vh)
        self.total = amp.total

    def integrals(self, w_lo: float, w_hi: float) -> tuple[float, float, complex]:
        w = self.amp.omega_s
        if w_lo < w[0] or w_hi > w[-1]:
            raise EmptyBandError(f"band [{w_lo:.6e}, {w_hi:.6e}] rad/s outside the amplitude grid")
        inside = (w > w_lo) & (w < w_hi)
        x = np.concatenate([[w_lo], w[inside], [w_hi]])
        hv = np.concatenate([[self._hv(w_lo)], self.amp.phi_hv[inside], [self._hv(w_hi)]])
        vh = np.concatenate([[self._vh(w_lo)], self.amp.phi_vh[inside], [self._vh(w_hi)]])
        a = simpson(np.abs(hv) ** 2, x=x)
        b = simpson(np.abs(vh) ** 2, x=x)
        c = simpson(hv * vh.conj(), x=x)
        return float(a), float(b), complex(c)


def channel_pair_state(amp: BiphotonAmplitude, grid: ChannelGrid, pair: tuple[int, int],
                       integrator: BandIntegrator | None = None) -> ChannelPairState:
    integ = integrator or BandIntegrator(amp)
    s, i = pair
    f_p = amp.omega_p / TWO_PI
    s_lo, s_hi = grid.band_hz(s)
    i_lo, i_hi = grid.band_hz(i)
    # signal frequencies whose idler lands in the idler passband
    lo, hi = max(s_lo, f_p - i_hi), min(s_hi, f_p - i_lo)
    if not hi > lo:
        raise EmptyBandError(f"channels {s} and {i} share no energy-matched band")
    w_lo, w_hi = TWO_PI * lo, TWO_PI * hi
    a, b, c = integ.integrals(w_lo, w_hi)
    norm = a + b
    if not norm > 0:
        raise EmptyBandError(f"no biphoton amplitude in channel pair ({s}, {i})")
    rho = np.zeros((4, 4), dtype=complex)
    rho[1, 1] = a / norm
    rho[2, 2] = b / norm
    rho[1, 2] = c / norm
    rho[2, 1] = np.conj(c) / norm
    return ChannelPairState(
        signal=s, idler=i,
        lambda_s_nm=float(nm_from_omega(TWO_PI * grid.centers_hz[s])),
        lambda_i_nm=float(nm_from_omega(TWO_PI * grid.centers_hz[i])),
        band=(w_lo, w_hi), rho=rho, captured_fraction=norm / integ.total, a=a, b=b, c=c)


@dataclass(frozen=True)
class MapEntry:
    pair_index: int
    lambda_s_nm: float
    lambda_i_nm: float
    concurrence: float
    captured_fraction: float


@dataclass(frozen=True)
class ConcurrenceMap:
    entries: tuple[MapEntry, ...]
    skipped: int = 0

    def to_csv(self, header: dict | None = None) -> str:
        buf = io.StringIO()
        for key, value in (header or {}).items():
            buf.write(f"# {key}: {value}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["pair_index", "lambda_s_nm", "lambda_i_nm", "concurrence", "captured_fraction"])
        for e in self.entries:
            w.writerow([e.pair_index, f"{e.lambda_s_nm:.4f}", f"{e.lambda_i_nm:.4f}",
                        f"{e.concurrence:.10f}", f"{e.captured_fraction:.10e}"])
        return buf.getvalue()


def concurrence_map(amp: BiphotonAmplitude, grid: ChannelGrid, threads: int | None = None) -> ConcurrenceMap:
    """Concurrence and captured fraction of every channel pair, ordered by
    pair index (distance from degeneracy). Empty bands are skipped and counted."""
    pairs = pair_channels(grid, amp.omega_p)
    integ = BandIntegrator(amp)

    def one(k):
        try:
            st = channel_pair_state(amp, grid, pairs[k], integ)
        except EmptyBandError:
            return None
        return MapEntry(k, st.lambda_s_nm, st.lambda_i_nm, em.concurrence(st.rho), st.captured_fraction)

    workers = thread_limit() if threads is None else max(1, threads)
    if workers > 1 and len(pairs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, range(len(pairs))))
    else:
        results = [one(k) for k in range(len(pairs))]
    entries = tuple(r for r in results if r is not None)
    skipped = len(results) - len(entries)
    if skipped:
        warnings.warn(f"skipped {skipped} channel pairs with empty bands", RuntimeWarning, stacklevel=2)
    return ConcurrenceMap(entries, skipped)


@dataclass(frozen=True)
class Span:
    threshold: float
    pairs: int
    lambda_min_nm: float
    lambda_max_nm: float

    @property
    def width_nm(self) -> float:
        return self.lambda_max_nm - self.lambda_min_nm if self.pairs else 0.0


def span_above(cmap: ConcurrenceMap, threshold: float) -> Span:
    """Contiguous run of pairs from degeneracy outwards with concurrence at
    or above ``threshold``; the span runs from the outermost signal to the
    outermost idler centre wavelength."""
    run = []
    for e in cmap.entries:
        if e.concurrence < threshold:
            break
        run.append(e)
    if not run:
        return Span(threshold, 0, float("nan"), float("nan"))
    return Span(threshold, len(run), min(e.lambda_s_nm for e in run), max(e.lambda_i_nm for e in run))


def trend_is_monotone(cmap: ConcurrenceMap, tol: float = 1e-12) -> bool:
    """Reported, not enforced: whether concurrence never rises with detuning."""
    c = np.array([e.concurrence for e in cmap.entries])
    return bool(np.all(np.diff(c) <= tol))


def find_pair(grid: ChannelGrid, omega_p: float, lambda_s_nm: float, lambda_i_nm: float) -> tuple[int, int]:
    """Channel pair whose signal/idler frequency separation is closest to that
    of the requested wavelengths. Matching the separation rather than the
    absolute wavelengths keeps the selection meaningful when the modelled
    degeneracy differs from the measured one."""
    pairs = pair_channels(grid, omega_p)
    if not pairs:
        raise ValueError("grid has no channel pairs")
    c = 299792458.0
    target = abs(c / (lambda_s_nm * 1e-9) - c / (lambda_i_nm * 1e-9))
    sep = [abs(grid.centers_hz[s] - grid.centers_hz[i]) for s, i in pairs]
    return pairs[int(np.argmin(np.abs(np.array(sep) - target)))]
