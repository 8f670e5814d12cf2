"""Transfer-matrix mode solver for planar AlGaAs Bragg reflection waveguides.

The waveguide is treated as a 1-D slab: the 4 um ridge is not modelled, so
lateral confinement is ignored for all three interacting modes alike.

Fields are propagated as the vector (F, F'/p) with F = E_y (TE) or H_y (TM)
and p = 1 (TE) or n^2 (TM); both components are continuous across every
interface. The outer half-spaces carry evanescent tails only, so every root
of the characteristic function is a bound mode.
"""

from __future__ import annotations

import csv
import functools
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from . import material_optics
from .errors import NoModeError, RangeError

C_LIGHT = 299792458.0

TE, TM = "TE", "TM"
TIR, BRAGG = "TIR", "Bragg"
POLARIZATIONS = (TE, TM)
FAMILIES = (TIR, BRAGG)

SCAN_POINTS = 2000
RESIDUAL_TOL = 1e-10
EDGE_TOL_NM = 1e-9

SLAB_APPROXIMATION = (
    "1-D planar transfer-matrix solve; ridge width and etch depth carried "
    "in config but not used"
)


@dataclass(frozen=True)
class Layer:
    x: float
    thickness_nm: float

    def __post_init__(self):
        if not 0.0 <= self.x <= 1.0:
            raise ValueError(f"layer composition x={self.x} outside [0, 1]")
        if not self.thickness_nm > 0:
            raise ValueError(f"layer thickness must be positive, got {self.thickness_nm}")


@dataclass(frozen=True)
class LayerStack:
    """Ordered layers from substrate side to superstrate side.

    ``core`` is the half-open index range of the guiding core and ``period``
    the number of layers per mirror period; the outermost ``period`` layers
    on the superstrate side define the mirror Bloch factor. ``substrate`` and
    ``superstrate`` are compositions, or None for air.
    """

    layers: tuple[Layer, ...]
    core: tuple[int, int]
    period: int = 2
    substrate: float | None = None
    superstrate: float | None = None
    length_mm: float = 1.09
    ridge_width_um: float = 4.0
    etch_depth_um: float = 3.6

    def __post_init__(self):
        if not self.layers:
            raise ValueError("layer stack is empty")
        lo, hi = self.core
        if not 0 <= lo < hi <= len(self.layers):
            raise ValueError(f"core range {self.core} invalid for {len(self.layers)} layers")
        if self.period < 1 or self.period > len(self.layers) - hi:
            raise ValueError(f"mirror period {self.period} does not fit above the core")
        if not self.length_mm > 0:
            raise ValueError("waveguide length must be positive")
        for clad in (self.substrate, self.superstrate):
            if clad is not None and not 0.0 <= clad <= 1.0:
                raise ValueError(f"cladding composition {clad} outside [0, 1]")

    @classmethod
    def bragg(cls, core: Sequence[tuple[float, float]], mirror_period: Sequence[tuple[float, float]],
              pairs: int, **kwargs) -> "LayerStack":
        """Symmetric BRW: mirror, core, mirror.

        ``mirror_period`` is listed from the core outwards, so the first
        entry touches the core on both sides.
        """
        period = [Layer(x, t) for x, t in mirror_period]
        core_layers = [Layer(x, t) for x, t in core]
        bottom = list(reversed(period)) * pairs
        top = period * pairs
        layers = tuple(bottom + core_layers + top)
        start = len(bottom)
        return cls(layers=layers, core=(start, start + len(core_layers)),
                   period=len(period), **kwargs)

    @property
    def length_m(self) -> float:
        return self.length_mm * 1e-3

    @property
    def compositions(self) -> list[float]:
        return sorted({layer.x for layer in self.layers})

    def indices(self, wavelength_nm, model=material_optics.DEFAULT_MODEL) -> np.ndarray:
        return np.array([material_optics.refractive_index(l.x, wavelength_nm, model) for l in self.layers])

    def cladding_indices(self, wavelength_nm, model=material_optics.DEFAULT_MODEL) -> tuple[float, float]:
        def n(c):
            return 1.0 if c is None else material_optics.refractive_index(c, wavelength_nm, model)
        return n(self.substrate), n(self.superstrate)


def default_stack(**overrides) -> LayerStack:
    """The device of the experiment: 375/500/375 nm Al0.20/Al0.61/Al0.20 core
    between two 6-period mirrors of 129 nm Al0.25 / 461 nm Al0.70, 1.09 mm long."""
    return LayerStack.bragg(
        core=[(0.20, 375.0), (0.61, 500.0), (0.20, 375.0)],
        mirror_period=[(0.25, 129.0), (0.70, 461.0)],
        pairs=6,
        **overrides,
    )


@dataclass(frozen=True)
class ModeSolution:
    n_eff: float
    polarization: str
    family: str
    residual: float
    wavelength_nm: float
    confinement: float = float("nan")
    bloch_factor: float = float("nan")


def _runs(layers, period):
    """Compress the layer list into (block, repeat) runs of identical periods."""
    runs = []
    i = 0
    n = len(layers)
    while i < n:
        block = layers[i:i + period]
        reps = 1
        if len(block) == period:
            while layers[i + reps * period:i + (reps + 1) * period] == block:
                reps += 1
        if reps > 1:
            runs.append((tuple(range(i, i + period)), reps))
            i += reps * period
        else:
            runs.append(((i,), 1))
            i += 1
    return runs


class _Structure:
    """Per-wavelength optical data of a stack, shared by scan and refinement."""

    def __init__(self, stack: LayerStack, wavelength_nm: float, polarization: str, model: str):
        if polarization not in POLARIZATIONS:
            raise ValueError(f"polarization must be one of {POLARIZATIONS}")
        self.stack = stack
        self.wavelength_nm = float(wavelength_nm)
        self.k0 = 2 * math.pi / (wavelength_nm * 1e-9)
        self.n = stack.indices(wavelength_nm, model)
        self.d = np.array([l.thickness_nm * 1e-9 for l in stack.layers])
        self.n_sub, self.n_sup = stack.cladding_indices(wavelength_nm, model)
        self.rho = 0 if polarization == TE else 2
        self.p = self.n ** self.rho
        self.p_sub = self.n_sub ** self.rho
        self.p_sup = self.n_sup ** self.rho
        self._n2 = [float(v) ** 2 for v in self.n]
        self._d = [float(v) for v in self.d]
        self._p = [float(v) for v in self.p]
        lo, hi = stack.core
        self.match = lo + (hi - lo) // 2
        below = stack.layers[:self.match]
        self.runs_below = _runs(below, stack.period)
        above = _runs(stack.layers[self.match:][::-1], stack.period)
        # indices of the reversed upper part, mapped back to stack positions
        n_layers = len(stack.layers)
        self.runs_above = [(tuple(n_layers - 1 - j for j in idx), reps) for idx, reps in above]

    def _layer_matrix(self, j, neff):
        """Transfer matrix entries (a, b, c, d) of layer j, vectorised in neff."""
        k2 = self.k0**2 * (self.n[j] ** 2 - neff**2)
        d = self.d[j]
        p = self.p[j]
        k = np.sqrt(np.abs(k2))
        kd = k * d
        osc = k2 >= 0
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            c = np.where(osc, np.cos(kd), np.cosh(kd))
            s_k = np.where(k > 0, np.where(osc, np.sin(kd), np.sinh(kd)) / np.where(k > 0, k, 1.0), d)
            ks = np.where(osc, -k * np.sin(kd), k * np.sinh(kd))
        return c, p * s_k, ks / p, c

    @staticmethod
    def _mul(m1, m2):
        a1, b1, c1, d1 = m1
        a2, b2, c2, d2 = m2
        return (a1 * a2 + b1 * c2, a1 * b2 + b1 * d2, c1 * a2 + d1 * c2, c1 * b2 + d1 * d2)

    @classmethod
    def _power(cls, m, e):
        result = None
        base = m
        while e:
            if e & 1:
                result = base if result is None else cls._mul(base, result)
            e >>= 1
            if e:
                base = cls._mul(base, base)
        return result

    def _gammas(self, neff):
        g_sub = self.k0 * np.sqrt(np.maximum(neff**2 - self.n_sub**2, 0.0))
        g_sup = self.k0 * np.sqrt(np.maximum(neff**2 - self.n_sup**2, 0.0))
        return g_sub, g_sup

    def _propagate(self, f, u, runs, neff, inverse=False):
        for idx, reps in runs:
            m = None
            for j in idx:
                lm = self._layer_matrix(j, neff)
                if inverse:
                    a, b, c, d = lm
                    lm = (d, -b, -c, a)
                m = lm if m is None else self._mul(lm, m)
            if reps > 1:
                m = self._power(m, reps)
            a, b, c, d = m
            f, u = a * f + b * u, c * f + d * u
            # only the direction of (f, u) matters; keep magnitudes bounded
            scale = np.abs(f) + np.abs(u)
            scale = np.where(scale > 0, scale, 1.0)
            f, u = f / scale, u / scale
        return f, u

    def characteristic(self, neff):
        """Characteristic function and its normalised residual.

        The decaying solutions of both half-spaces are propagated towards
        the match interface inside the core and compared through their
        Wronskian, which vanishes exactly at guided modes. The residual is
        the Wronskian divided by the magnitude of its two terms, in [-1, 1].
        """
        neff = np.asarray(neff, dtype=float)
        g_sub, g_sup = self._gammas(neff)
        one = np.ones_like(neff)
        f_up, u_up = self._propagate(one, g_sub / self.p_sub, self.runs_below, neff)
        f_dn, u_dn = self._propagate(one, -g_sup / self.p_sup, self.runs_above, neff, inverse=True)
        t1 = f_up * u_dn
        t2 = u_up * f_dn
        w = t1 - t2
        norm = np.abs(t1) + np.abs(t2)
        norm = np.where(norm > 0, norm, 1.0)
        return w, w / norm

    def _scalar_matrix(self, j, neff):
        k2 = self.k0**2 * (self._n2[j] - neff * neff)
        d = self._d[j]
        p = self._p[j]
        if k2 > 0:
            k = math.sqrt(k2)
            c, s = math.cos(k * d), math.sin(k * d)
            return c, p * s / k, -k * s / p, c
        if k2 < 0:
            k = math.sqrt(-k2)
            c, s = math.cosh(k * d), math.sinh(k * d)
            return c, p * s / k, k * s / p, c
        return 1.0, p * d, 0.0, 1.0

    def _scalar_propagate(self, f, u, runs, neff, inverse):
        for idx, reps in runs:
            m = None
            for j in idx:
                a, b, c, d = self._scalar_matrix(j, neff)
                lm = (d, -b, -c, a) if inverse else (a, b, c, d)
                m = lm if m is None else self._mul(lm, m)
            if reps > 1:
                m = self._power(m, reps)
            a, b, c, d = m
            f, u = a * f + b * u, c * f + d * u
            scale = abs(f) + abs(u)
            if scale > 0:
                f, u = f / scale, u / scale
        return f, u

    def scalar_char(self, neff):
        """Normalised residual at a single n_eff, pure Python for Brent refinement."""
        neff = float(neff)
        g_sub = self.k0 * math.sqrt(max(neff**2 - self.n_sub**2, 0.0))
        g_sup = self.k0 * math.sqrt(max(neff**2 - self.n_sup**2, 0.0))
        f_up, u_up = self._scalar_propagate(1.0, g_sub / self.p_sub, self.runs_below, neff, False)
        f_dn, u_dn = self._scalar_propagate(1.0, -g_sup / self.p_sup, self.runs_above, neff, True)
        t1 = f_up * u_dn
        t2 = u_up * f_dn
        norm = abs(t1) + abs(t2)
        return (t1 - t2) / norm if norm > 0 else 0.0

    def _single(self, j, neff):
        return self._scalar_matrix(j, float(neff))

    def interface_vectors(self, neff):
        """(F, F'/p) at the lower edge of every layer, then at the top.

        The lower part is integrated upwards from the substrate and the upper
        part downwards from the superstrate, so each side follows its own
        decaying solution; the upper half is scaled to agree at the match
        interface. Normalised to max |F| = 1.
        """
        n_layers = len(self.n)
        g_sub, g_sup = (float(g[0]) for g in self._gammas(np.array([neff])))
        vecs = np.empty((n_layers + 1, 2))
        v = np.array([1.0, g_sub / self.p_sub])
        vecs[0] = v
        for j in range(self.match):
            a, b, c, d = self._single(j, neff)
            v = np.array([a * v[0] + b * v[1], c * v[0] + d * v[1]])
            vecs[j + 1] = v
        v = np.array([1.0, -g_sup / self.p_sup])
        vecs[n_layers] = v
        for j in range(n_layers - 1, self.match, -1):
            a, b, c, d = self._single(j, neff)
            v = np.array([d * v[0] - b * v[1], -c * v[0] + a * v[1]])
            vecs[j] = v
        a, b, c, d = self._single(self.match, neff)
        dn = np.array([d * v[0] - b * v[1], -c * v[0] + a * v[1]])
        up = vecs[self.match]
        # match on the better conditioned component (F scaled by k0 vs F'/p)
        scale = up[0] / dn[0] if abs(dn[0]) * self.k0 >= abs(dn[1]) else up[1] / dn[1]
        vecs[self.match + 1:] *= scale
        return vecs / np.abs(vecs[:, 0]).max()

    def layer_power(self, neff, nodes=16):
        """Integral of F^2 over each layer by Gauss-Legendre quadrature."""
        vecs = self.interface_vectors(neff)
        xg, wg = np.polynomial.legendre.leggauss(nodes)
        power = np.empty(len(self.n))
        for j in range(len(self.n)):
            d = self.d[j]
            z = 0.5 * d * (xg + 1.0)
            k2 = self.k0**2 * (self.n[j] ** 2 - neff**2)
            k = math.sqrt(abs(k2))
            F0, u0 = vecs[j]
            if k == 0:
                F = F0 + self.p[j] * u0 * z
            elif k2 > 0:
                F = F0 * np.cos(k * z) + self.p[j] * u0 * np.sin(k * z) / k
            else:
                F = F0 * np.cosh(k * z) + self.p[j] * u0 * np.sinh(k * z) / k
            power[j] = 0.5 * d * np.dot(wg, F**2)
        g_sub, g_sup = self._gammas(np.array([neff]))
        tails = 0.0
        if g_sub[0] > 0:
            tails += vecs[0][0] ** 2 / (2 * g_sub[0])
        if g_sup[0] > 0:
            tails += vecs[-1][0] ** 2 / (2 * g_sup[0])
        return power, tails

    def confinement(self, neff):
        power, tails = self.layer_power(neff)
        lo, hi = self.stack.core
        return float(power[lo:hi].sum() / (power.sum() + tails))

    def bloch_factor(self, neff):
        """|Bloch eigenvalue| per period of the outermost superstrate-side period.

        Values below 1 mean the mirror is in a stop band and fields decay
        away from the core; 1 means a pass band.
        """
        n_layers = len(self.n)
        idx = range(n_layers - self.stack.period, n_layers)
        m = None
        for j in idx:
            lm = self._layer_matrix(j, np.array([neff]))
            m = lm if m is None else self._mul(lm, m)
        half_trace = 0.5 * float(m[0][0] + m[3][0])
        if abs(half_trace) <= 1.0:
            return 1.0
        return abs(half_trace) - math.sqrt(half_trace**2 - 1.0)




def _scan_range(structure: _Structure, family: str, tracking: bool = False) -> tuple[float, float]:
    n_clad = max(structure.n_sub, structure.n_sup)
    n_min = float(structure.n.min())
    n_max = float(structure.n.max())
    eps = 1e-9
    if family == TIR:
        return max(n_min, n_clad) + eps, n_max - eps
    if tracking:
        # a tracked Bragg branch may rise above the low mirror index as long
        # as it still oscillates in every core layer
        lo, hi = structure.stack.core
        return n_clad + eps, float(structure.n[lo:hi].min()) - eps
    return n_clad + eps, n_min - eps


def _brackets(structure: _Structure, lo: float, hi: float, points: int) -> list[tuple[float, float]]:
    if hi <= lo:
        return []
    grid = np.linspace(lo, hi, points)
    _, f = structure.characteristic(grid)
    sign = np.sign(f)
    idx = np.nonzero(sign[:-1] * sign[1:] < 0)[0]
    return [(float(grid[i]), float(grid[i + 1])) for i in idx]


def _refine(structure: _Structure, a: float, b: float):
    """Brent refinement of one bracket; None if the sign flip is a pole."""
    r = brentq(structure.scalar_char, a, b, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    res = abs(structure.scalar_char(r))
    # the normalised function jumps between +-1 across poles
    if res < 1e-6:
        return r, res
    return None


def find_roots(structure: _Structure, lo: float, hi: float, points: int = SCAN_POINTS) -> list[tuple[float, float]]:
    """All sign changes of the characteristic function on a uniform grid,
    refined by Brent's method. Returns (n_eff, residual) pairs, ascending."""
    roots = []
    for a, b in _brackets(structure, lo, hi, points):
        root = _refine(structure, a, b)
        if root is not None:
            roots.append(root)
    return roots


def _no_mode(structure, family, lo, hi):
    return NoModeError(
        f"no {'TE' if structure.rho == 0 else 'TM'} {family} mode in n_eff range "
        f"[{lo:.6f}, {hi:.6f}] at {structure.wavelength_nm} nm",
        scan_range=(lo, hi), wavelength_nm=structure.wavelength_nm)


def solve_mode(stack: LayerStack, wavelength_nm: float, polarization: str = TE, family: str = TIR,
               model: str = material_optics.DEFAULT_MODEL, points: int = SCAN_POINTS,
               near: float | None = None) -> ModeSolution:
    """Fundamental mode of the requested family.

    TIR modes are searched between the lowest and highest layer index and the
    largest root is returned. Bragg modes are searched below the lowest layer
    index (field oscillating in every layer), restricted to roots inside a
    mirror stop band, and the one with the largest core confinement wins.

    ``near`` switches Bragg selection to branch following: the stop-band root
    closest to ``near`` is returned, searched up to the lowest core index.
    """
    if family not in FAMILIES:
        raise ValueError(f"family must be one of {FAMILIES}")
    structure = _Structure(stack, wavelength_nm, polarization, model)
    lam = float(wavelength_nm)
    if family == TIR:
        lo, hi = _scan_range(structure, TIR)
        for a, b in reversed(_brackets(structure, lo, hi, points)):
            root = _refine(structure, a, b)
            if root is not None:
                neff, res = root
                return ModeSolution(neff, polarization, family, res, lam,
                                    confinement=structure.confinement(neff),
                                    bloch_factor=structure.bloch_factor(neff))
        raise _no_mode(structure, family, lo, hi)

    if near is not None:
        lo, hi = _scan_range(structure, BRAGG, tracking=True)
        brackets = sorted(_brackets(structure, lo, hi, points), key=lambda ab: abs(0.5 * (ab[0] + ab[1]) - near))
        for a, b in brackets:
            root = _refine(structure, a, b)
            if root is None:
                continue
            bloch = structure.bloch_factor(root[0])
            if bloch < 1.0:
                return ModeSolution(root[0], polarization, family, root[1], lam,
                                    confinement=structure.confinement(root[0]), bloch_factor=bloch)
        raise _no_mode(structure, family, lo, hi)

    lo, hi = _scan_range(structure, BRAGG)
    best = None
    for neff, res in find_roots(structure, lo, hi, points):
        bloch = structure.bloch_factor(neff)
        if bloch >= 1.0:
            continue
        conf = structure.confinement(neff)
        if best is None or conf > best.confinement:
            best = ModeSolution(neff, polarization, family, res, lam, confinement=conf, bloch_factor=bloch)
    if best is None:
        raise _no_mode(structure, family, lo, hi)
    return best


class DispersionTable:
    """Effective index sampled on a strictly increasing wavelength grid.

    Immutable after construction; interpolation is a not-a-knot cubic spline.
    """

    def __init__(self, wavelength_nm, n_eff, polarization: str = TE, family: str = TIR,
                 model: str = material_optics.DEFAULT_MODEL, residuals=None):
        lam = np.array(wavelength_nm, dtype=float)
        n = np.array(n_eff, dtype=float)
        if lam.ndim != 1 or lam.shape != n.shape or lam.size < 2:
            raise ValueError("need matching 1-D wavelength and n_eff arrays with at least 2 nodes")
        if np.any(np.diff(lam) <= 0):
            raise ValueError("wavelength grid must be strictly increasing")
        if np.any(~np.isfinite(n)) or np.any(n <= 0):
            raise ValueError("effective indices must be finite and positive")
        res = np.zeros_like(n) if residuals is None else np.array(residuals, dtype=float)
        for arr in (lam, n, res):
            arr.flags.writeable = False
        self.wavelength_nm = lam
        self.n_eff = n
        self.residuals = res
        self.polarization = polarization
        self.family = family
        self.model = model
        self._spline = CubicSpline(lam, n)
        self._dspline = self._spline.derivative()

    @property
    def range_nm(self) -> tuple[float, float]:
        return float(self.wavelength_nm[0]), float(self.wavelength_nm[-1])

    def _check(self, lam, strict=False):
        lam = np.asarray(lam, dtype=float)
        lo, hi = self.range_nm
        if strict:
            bad = (lam <= lo) | (lam >= hi)
        else:
            # tolerate round-off from frequency/wavelength conversion at the edges
            bad = (lam < lo - EDGE_TOL_NM) | (lam > hi + EDGE_TOL_NM)
        if np.any(bad) or np.any(~np.isfinite(lam)):
            raise RangeError(f"wavelength outside dispersion table range [{lo}, {hi}] nm")
        return lam if strict else np.clip(lam, lo, hi)

    def n_at(self, wavelength_nm):
        lam = self._check(wavelength_nm)
        out = self._spline(lam)
        return float(out) if out.ndim == 0 else out

    def k(self, wavelength_nm):
        """Propagation constant 2*pi*n_eff/lambda in rad/m."""
        lam = self._check(wavelength_nm)
        out = 2 * np.pi * self._spline(lam) / (lam * 1e-9)
        return float(out) if out.ndim == 0 else out

    def k_omega(self, omega):
        """Propagation constant at angular frequency ``omega`` (rad/s)."""
        return self.k(2 * np.pi * C_LIGHT / np.asarray(omega, dtype=float) * 1e9)

    @property
    def n_g(self) -> np.ndarray:
        """Group index at the nodes from the analytic spline derivative."""
        lam = self.wavelength_nm
        return self.n_eff - lam * self._dspline(lam)

    def to_csv(self, header: dict | None = None) -> str:
        buf = io.StringIO()
        for key, value in (header or {}).items():
            buf.write(f"# {key}: {value}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["lambda_nm", "n_eff", "n_g"])
        for lam, n, ng in zip(self.wavelength_nm, self.n_eff, self.n_g):
            w.writerow([f"{lam:.4f}", f"{n:.12f}", f"{ng:.12f}"])
        return buf.getvalue()


def group_index(table: DispersionTable, wavelength_nm, step_nm: float = 0.01):
    """n_g = n_eff - lambda * dn_eff/dlambda by central differences on the
    interpolant. The step shrinks near the table edges; the edges themselves
    are rejected."""
    lam = table._check(wavelength_nm, strict=True)
    lo, hi = table.range_nm
    h = np.minimum(step_nm, 0.5 * np.minimum(lam - lo, hi - lam))
    deriv = (table._spline(lam + h) - table._spline(lam - h)) / (2 * h)
    out = table._spline(lam) - lam * deriv
    return float(out) if out.ndim == 0 else out


def _grid(wavelength_range, steps):
    lo, hi = (float(v) for v in wavelength_range)
    if steps < 2:
        raise ValueError("a dispersion table needs at least 2 wavelength steps")
    if not hi > lo:
        raise ValueError(f"empty wavelength range {wavelength_range}")
    return np.linspace(lo, hi, int(steps))


def _solve_or_abort(stack, lam, polarization, family, model, points, near=None):
    try:
        return solve_mode(stack, lam, polarization, family, model, points, near=near)
    except NoModeError as err:
        raise NoModeError(f"dispersion table aborted at {lam:.4f} nm: {err}",
                          scan_range=err.scan_range, wavelength_nm=float(lam)) from err


def build_dispersion_table(stack: LayerStack, wavelength_range, steps: int, polarization: str = TE,
                           family: str = TIR, model: str = material_optics.DEFAULT_MODEL,
                           points: int = SCAN_POINTS) -> DispersionTable:
    """Solve the mode at ``steps`` evenly spaced wavelengths.

    Bragg tables follow one branch: the fundamental mode is selected at the
    central node and neighbouring nodes take the stop-band root closest to a
    linear extrapolation, so that anticrossings with other branches near the
    range ends cannot make the table jump.
    """
    grid = _grid(wavelength_range, steps)
    for x in stack.compositions + [c for c in (stack.substrate, stack.superstrate) if c is not None]:
        lo, hi = material_optics.validity_window(x)
        if grid[0] < lo or grid[-1] > hi:
            raise material_optics.ValidityError(
                f"table range [{grid[0]}, {grid[-1]}] nm outside the validity window "
                f"[{lo:.1f}, {hi:.1f}] nm of x={x}", window=(lo, hi))
    sols: list[ModeSolution | None] = [None] * len(grid)
    if family == TIR:
        for i, lam in enumerate(grid):
            sols[i] = _solve_or_abort(stack, lam, polarization, family, model, points)
    else:
        mid = len(grid) // 2
        sols[mid] = _solve_or_abort(stack, grid[mid], polarization, family, model, points)
        for direction in (1, -1):
            i = mid + direction
            while 0 <= i < len(grid):
                prev = sols[i - direction].n_eff
                before = sols[i - 2 * direction] if 0 <= i - 2 * direction < len(grid) else None
                hint = prev if before is None else 2 * prev - before.n_eff
                sols[i] = _solve_or_abort(stack, grid[i], polarization, family, model, points, near=hint)
                i += direction
    return DispersionTable(grid, [s.n_eff for s in sols], polarization, family, model,
                           residuals=[s.residual for s in sols])


@dataclass(frozen=True)
class PhaseMatchingTables:
    """Pump (TE Bragg), H (TE TIR) and V (TM TIR) dispersion tables."""

    pump: DispersionTable
    te: DispersionTable
    tm: DispersionTable

    @property
    def model(self) -> str:
        return self.pump.model


TELECOM_RANGE_NM = (1450.0, 1670.0)
TELECOM_STEPS = 881  # 0.25 nm
PUMP_RANGE_NM = (760.0, 800.0)
PUMP_STEPS = 801  # 0.05 nm


def build_tables(stack: LayerStack, model: str = material_optics.DEFAULT_MODEL,
                 telecom_range=TELECOM_RANGE_NM, telecom_steps: int = TELECOM_STEPS,
                 pump_range=PUMP_RANGE_NM, pump_steps: int = PUMP_STEPS) -> PhaseMatchingTables:
    return _cached_tables(stack, model, tuple(telecom_range), telecom_steps, tuple(pump_range), pump_steps)


@functools.lru_cache(maxsize=8)
def _cached_tables(stack, model, telecom_range, telecom_steps, pump_range, pump_steps):
    return PhaseMatchingTables(
        pump=build_dispersion_table(stack, pump_range, pump_steps, TE, BRAGG, model),
        te=build_dispersion_table(stack, telecom_range, telecom_steps, TE, TIR, model),
        tm=build_dispersion_table(stack, telecom_range, telecom_steps, TM, TIR, model),
    )


HV, VH = "HV", "VH"


def phase_mismatch(tables: PhaseMatchingTables, omega_s, omega_i, pairing: str = HV):
    """Delta k = k_p(ws + wi) - k_s(ws) - k_i(wi) in rad/m.

    HV: signal in the TE (H) mode, idler in the TM (V) mode; VH swaps them.
    """
    omega_s = np.asarray(omega_s, dtype=float)
    omega_i = np.asarray(omega_i, dtype=float)
    if pairing == HV:
        ks, ki = tables.te.k_omega(omega_s), tables.tm.k_omega(omega_i)
    elif pairing == VH:
        ks, ki = tables.tm.k_omega(omega_s), tables.te.k_omega(omega_i)
    else:
        raise ValueError(f"pairing must be {HV!r} or {VH!r}")
    return tables.pump.k_omega(omega_s + omega_i) - ks - ki


def degenerate_pump_nm(tables: PhaseMatchingTables) -> float:
    """Pump wavelength where the degenerate HV process is phase matched."""
    lo = max(tables.pump.range_nm[0], 0.5 * tables.te.range_nm[0], 0.5 * tables.tm.range_nm[0])
    hi = min(tables.pump.range_nm[1], 0.5 * tables.te.range_nm[1], 0.5 * tables.tm.range_nm[1])
    if not hi > lo:
        raise RangeError("pump and telecom tables do not overlap at degeneracy")

    def mismatch(lam_p):
        omega = 2 * np.pi * C_LIGHT / (lam_p * 1e-9)
        return float(phase_mismatch(tables, 0.5 * omega, 0.5 * omega, HV))

    nodes = tables.pump.wavelength_nm
    nodes = np.concatenate([[lo], nodes[(nodes > lo) & (nodes < hi)], [hi]])
    values = np.array([mismatch(v) for v in nodes])
    flips = np.nonzero(np.sign(values[:-1]) * np.sign(values[1:]) <= 0)[0]
    if flips.size == 0:
        raise NoModeError(f"no degenerate phase-matching point between {lo} and {hi} nm",
                          scan_range=(lo, hi))
    i = flips[0]
    return float(brentq(mismatch, nodes[i], nodes[i + 1], xtol=1e-12))
