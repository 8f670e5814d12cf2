"""Simulated 16-setting polarisation tomography and maximum-likelihood reconstruction.

Forward model per setting k with projector P_k:

    mu_k = flux * eta_s * eta_i * t * Tr(rho P_k) + acc

where the accidental rate is uniform across settings and set so that the
peak setting reaches the requested coincidence-to-accidental ratio.

The reconstruction parameterises rho = T^dag T / Tr(T^dag T) with T lower
triangular (real positive diagonal, 16 real parameters) and maximises the
Poisson log-likelihood sum(n ln mu - mu) with mu_k = Tr(T^dag T P_k); the
trace of T^dag T absorbs the unknown count scale.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from . import entanglement_metrics as em
from .channelizer import thread_limit
from .errors import BRWError, StateValidationError

ARM_STATES = {
    "H": np.array([1, 0], dtype=complex),
    "V": np.array([0, 1], dtype=complex),
    "D": np.array([1, 1], dtype=complex) / math.sqrt(2),
    "R": np.array([1, 1j], dtype=complex) / math.sqrt(2),
}
SETTINGS = tuple(a + b for a in "HVDR" for b in "HVDR")

DEFAULT_TIME_S = 20.0
DEFAULT_EFFICIENCIES = (0.20, 0.25)
DEFAULT_PEAK_COUNTS = 350.0
DEFAULT_CAR = 50.0
GRAD_TOL = 1e-8
MAX_ITER = 10_000
MAX_FAILURE_FRACTION = 0.2


def arm_projector(label: str) -> np.ndarray:
    v = ARM_STATES[label]
    return np.outer(v, v.conj())


def projector(setting: str) -> np.ndarray:
    """Two-qubit projector for a label like 'HD' (signal first)."""
    if len(setting) != 2 or any(c not in ARM_STATES for c in setting):
        raise ValueError(f"bad setting label {setting!r}")
    return np.kron(arm_projector(setting[0]), arm_projector(setting[1]))


def linear_polarizer(angle_deg: float) -> np.ndarray:
    t = math.radians(angle_deg)
    v = np.array([math.cos(t), math.sin(t)], dtype=complex)
    return np.outer(v, v.conj())


def born_probabilities(rho, projectors) -> np.ndarray:
    return np.array([np.trace(rho @ p).real for p in projectors])


@dataclass(eq=False)
class TomographyDataset:
    settings: tuple[str, ...]
    time_s: np.ndarray
    coincidences: np.ndarray
    accidentals: np.ndarray
    flux: float = float("nan")
    efficiencies: tuple[float, float] = DEFAULT_EFFICIENCIES
    car_target: float = DEFAULT_CAR

    def __post_init__(self):
        self.settings = tuple(self.settings)
        n = len(self.settings)
        self.time_s = np.broadcast_to(np.asarray(self.time_s, dtype=float), (n,)).copy()
        self.coincidences = np.asarray(self.coincidences, dtype=float)
        self.accidentals = np.broadcast_to(np.asarray(self.accidentals, dtype=float), (n,)).copy()
        if self.coincidences.shape != (n,):
            raise ValueError("one coincidence count per setting required")
        if np.any(self.coincidences < 0) or np.any(self.accidentals < 0):
            raise ValueError("counts must be non-negative")
        if np.any(self.time_s <= 0):
            raise ValueError("integration time must be positive")

    @property
    def projectors(self) -> list[np.ndarray]:
        return [projector(s) for s in self.settings]

    def with_counts(self, counts) -> "TomographyDataset":
        return TomographyDataset(self.settings, self.time_s, counts, self.accidentals,
                                 self.flux, self.efficiencies, self.car_target)

    def to_dict(self) -> dict:
        def num(v):
            v = float(v)
            return int(v) if v.is_integer() else v
        return {
            "settings": list(self.settings),
            "time_s": [num(v) for v in self.time_s],
            "coincidences": [num(v) for v in self.coincidences],
            "accidentals": [num(v) for v in self.accidentals],
            "flux": self.flux,
            "efficiencies": list(self.efficiencies),
            "car_target": self.car_target,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "TomographyDataset":
        return cls(d["settings"], d["time_s"], d["coincidences"], d["accidentals"],
                   d.get("flux", float("nan")), tuple(d.get("efficiencies", DEFAULT_EFFICIENCIES)),
                   d.get("car_target", DEFAULT_CAR))

    @classmethod
    def from_json(cls, text: str) -> "TomographyDataset":
        return cls.from_dict(json.loads(text))


def _check_budget(flux, efficiencies, time_s, car_target):
    if not flux > 0 or not time_s > 0:
        raise ValueError("flux and integration time must be positive")
    if len(efficiencies) != 2 or not all(0 < e <= 1 for e in efficiencies):
        raise ValueError("efficiencies must be two values in (0, 1]")
    if car_target is not None and not car_target > 0:
        raise ValueError("CAR target must be positive")


def flux_for_peak(rho, peak_counts: float = DEFAULT_PEAK_COUNTS, efficiencies=DEFAULT_EFFICIENCIES,
                  time_s: float = DEFAULT_TIME_S, settings=SETTINGS) -> float:
    """Pair flux that yields ``peak_counts`` true coincidences at the peak setting."""
    p = born_probabilities(rho, [projector(s) for s in settings]).max()
    return peak_counts / (efficiencies[0] * efficiencies[1] * time_s * p)


def expected_counts(rho, projectors, flux, efficiencies, time_s, car_target):
    """(mu, accidental) for the forward model; car_target None means no accidentals."""
    signal = flux * efficiencies[0] * efficiencies[1] * time_s * born_probabilities(rho, projectors)
    acc = 0.0 if car_target is None or math.isinf(car_target) else signal.max() / car_target
    return signal + acc, acc


def simulate_dataset(rho_true, flux: float, efficiencies=DEFAULT_EFFICIENCIES, time_s: float = DEFAULT_TIME_S,
                     car_target: float | None = DEFAULT_CAR, seed: int | None = 0,
                     noiseless: bool = False, settings=SETTINGS) -> TomographyDataset:
    """Poisson-sampled (or, with ``noiseless``, expected) coincidences."""
    _check_budget(flux, efficiencies, time_s, car_target)
    rho = em.validate_state(rho_true)
    mu, acc = expected_counts(rho, [projector(s) for s in settings], flux, efficiencies, time_s, car_target)
    if noiseless:
        counts = mu
    else:
        counts = np.random.default_rng(seed).poisson(mu).astype(float)
    return TomographyDataset(settings, time_s, counts, acc, flux, tuple(efficiencies),
                             float("inf") if car_target is None else car_target)


# -- parameterisation -------------------------------------------------------

_TRIL = np.tril_indices(4, -1)


def t_from_params(params) -> np.ndarray:
    """Lower-triangular T from 16 reals: 4 diagonal, 6 real and 6 imaginary
    parts of the strictly lower entries."""
    params = np.asarray(params, dtype=float)
    t = np.zeros((4, 4), dtype=complex)
    t[np.diag_indices(4)] = params[:4]
    t[_TRIL] = params[4:10] + 1j * params[10:16]
    return t


def params_from_t(t) -> np.ndarray:
    t = np.asarray(t)
    return np.concatenate([t[np.diag_indices(4)].real, t[_TRIL].real, t[_TRIL].imag])


def rho_from_params(params) -> np.ndarray:
    t = t_from_params(params)
    m = t.conj().T @ t
    return m / np.trace(m).real


def log_likelihood(params, counts, projectors) -> float:
    """Poisson log-likelihood sum(n ln mu - mu), constant terms dropped."""
    return _ll_and_grad(params, np.asarray(counts, float), np.asarray(projectors))[0]


def log_likelihood_grad(params, counts, projectors) -> np.ndarray:
    """Analytic gradient of :func:`log_likelihood` with respect to the 16 parameters.

    With G = sum_k (n_k/mu_k - 1) P_k, dL/dRe T_ij = 2 Re (G T^dag)_ji and
    dL/dIm T_ij = -2 Im (G T^dag)_ji.
    """
    return _ll_and_grad(params, np.asarray(counts, float), np.asarray(projectors))[1]


_MU_FLOOR = 1e-300


def _ll_and_grad(params, counts, projectors):
    t = t_from_params(params)
    m = t.conj().T @ t
    mu = np.einsum("ij,kji->k", m, projectors).real
    mu_safe = np.maximum(mu, _MU_FLOOR)
    pos = counts > 0
    ll = float(np.sum(counts[pos] * np.log(mu_safe[pos])) - mu.sum())
    g = np.einsum("k,kij->ij", counts / mu_safe - 1.0, projectors)
    gt = (g @ t.conj().T).T  # element [i, j] is (G T^dag)_ji
    grad = np.concatenate([2 * gt[np.diag_indices(4)].real, 2 * gt[_TRIL].real, -2 * gt[_TRIL].imag])
    return ll, grad


def linear_inversion(counts, projectors) -> np.ndarray:
    """Unconstrained least-squares estimate of the unnormalised count operator."""
    a = np.array([p.T.reshape(-1) for p in projectors])
    vec, *_ = np.linalg.lstsq(a, np.asarray(counts, dtype=complex), rcond=None)
    m = vec.reshape(4, 4)
    return 0.5 * (m + m.conj().T)


_ANTI = np.eye(4)[::-1]


def _initial_params(counts, projectors, rho_hint=None):
    total = max(float(np.sum(counts)), 1.0)
    if rho_hint is None:
        m = linear_inversion(counts, projectors)
        w, v = np.linalg.eigh(m)
        w = np.clip(w, 0, None)
        if w.sum() <= 0:
            w = np.ones(4)
        rho = (v * w) @ v.conj().T
        rho /= np.trace(rho).real
    else:
        rho = np.asarray(rho_hint, dtype=complex)
    # keep the start strictly inside the cone so the Cholesky factor exists
    rho = 0.99 * rho + 0.01 * np.eye(4) / 4
    scale = total / max(born_probabilities(rho, projectors).sum(), 1e-300)
    m = scale * rho
    low = np.linalg.cholesky(_ANTI @ m @ _ANTI)
    t = _ANTI @ low.conj().T @ _ANTI
    return params_from_t(t)


@dataclass
class ReconstructionResult:
    rho: np.ndarray
    log_likelihood: float
    iterations: int
    converged: bool
    grad_norm: float
    message: str
    subtract_accidentals: bool
    ll_history: list = field(default_factory=list, repr=False)
    concurrence: float = float("nan")
    fidelity: float = float("nan")
    concurrence_std: float | None = None
    fidelity_std: float | None = None

    def to_dict(self) -> dict:
        return {
            "mode": "net" if self.subtract_accidentals else "raw",
            "rho_real": np.round(self.rho.real, 12).tolist(),
            "rho_imag": np.round(self.rho.imag, 12).tolist(),
            "log_likelihood": self.log_likelihood,
            "iterations": self.iterations,
            "converged": self.converged,
            "grad_norm": self.grad_norm,
            "message": self.message,
            "concurrence": self.concurrence,
            "fidelity_to_bell": self.fidelity,
            "concurrence_std": self.concurrence_std,
            "fidelity_std": self.fidelity_std,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _analysed_counts(data: TomographyDataset, subtract_accidentals: bool) -> np.ndarray:
    n = data.coincidences
    return np.maximum(n - data.accidentals, 0.0) if subtract_accidentals else n.copy()


def reconstruct_mle(data: TomographyDataset, subtract_accidentals: bool = False,
                    rho_hint=None, max_iter: int = MAX_ITER, grad_tol: float = GRAD_TOL) -> ReconstructionResult:
    """Maximum-likelihood state for the dataset.

    Raw mode fits the counts as recorded; net mode first subtracts the
    accidental estimate from every setting (floored at zero). Convergence is
    declared when the gradient norm of the count-normalised log-likelihood
    drops below ``grad_tol``; otherwise the best iterate is returned with
    ``converged`` False.
    """
    projectors = np.asarray(data.projectors)
    if len(projectors) < 16 or np.linalg.matrix_rank(
            np.array([p.reshape(-1) for p in projectors])) < 16:
        raise ValueError("settings are not informationally complete")
    counts = _analysed_counts(data, subtract_accidentals)
    total = max(float(counts.sum()), 1.0)
    if counts.sum() <= 0:
        raise BRWError("no counts to reconstruct from")

    def objective(p):
        ll, g = _ll_and_grad(p, counts, projectors)
        return -ll / total, -g / total

    history = []

    def callback(xk):
        history.append(_ll_and_grad(xk, counts, projectors)[0])

    x0 = _initial_params(counts, projectors, rho_hint)
    history.append(_ll_and_grad(x0, counts, projectors)[0])
    res = minimize(objective, x0, jac=True, method="BFGS", callback=callback,
                   options={"gtol": grad_tol, "maxiter": max_iter, "norm": 2})
    ll, g = _ll_and_grad(res.x, counts, projectors)
    gnorm = float(np.linalg.norm(g) / total)
    rho = rho_from_params(res.x)
    rho = 0.5 * (rho + rho.conj().T)
    try:
        rho = em.validate_state(rho)
    except StateValidationError as err:  # pragma: no cover - parameterisation guarantees validity
        raise BRWError(f"reconstruction produced an invalid state: {err}") from err
    return ReconstructionResult(
        rho=rho, log_likelihood=ll, iterations=int(res.nit), converged=gnorm < grad_tol,
        grad_norm=gnorm, message=str(res.message), subtract_accidentals=subtract_accidentals,
        ll_history=history, concurrence=em.concurrence(rho), fidelity=em.fidelity_to_bell(rho))


@dataclass(frozen=True)
class MonteCarloErrors:
    concurrence_std: float
    fidelity_std: float
    trials: int
    failures: int


def monte_carlo_errors(rho_rec, data: TomographyDataset, trials: int = 100, seed: int = 0,
                       subtract_accidentals: bool = False, threads: int | None = None) -> MonteCarloErrors:
    """Standard deviations of concurrence and Bell fidelity over Poisson
    resamplings of the observed counts. Each trial draws from its own child
    of ``SeedSequence(seed)``, so results do not depend on scheduling."""
    if trials < 10:
        raise ValueError("need at least 10 Monte-Carlo trials")
    children = np.random.SeedSequence(seed).spawn(trials)

    def one(k):
        counts = np.random.default_rng(children[k]).poisson(data.coincidences).astype(float)
        try:
            r = reconstruct_mle(data.with_counts(counts), subtract_accidentals, rho_hint=rho_rec)
        except (BRWError, np.linalg.LinAlgError, ValueError):
            return None
        return r.concurrence, r.fidelity

    workers = thread_limit() if threads is None else max(1, threads)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(one, range(trials)))
    else:
        out = [one(k) for k in range(trials)]
    ok = [o for o in out if o is not None]
    failures = trials - len(ok)
    if failures > MAX_FAILURE_FRACTION * trials:
        raise BRWError(f"{failures} of {trials} Monte-Carlo reconstructions failed")
    arr = np.array(ok)
    return MonteCarloErrors(float(arr[:, 0].std(ddof=1)), float(arr[:, 1].std(ddof=1)), trials, failures)


# -- two-photon interference ------------------------------------------------

SWEEP_DEG = tuple(range(0, 180, 10))
BASIS_ANGLE = {"H": 0.0, "D": 45.0}


@dataclass(frozen=True, eq=False)
class InterferenceSweep:
    basis: str
    angles_deg: np.ndarray
    counts: np.ndarray
    expected: np.ndarray
    accidentals: float


def simulate_interference(rho, basis: str, flux: float, efficiencies=DEFAULT_EFFICIENCIES,
                          time_s: float = DEFAULT_TIME_S, accidentals: float = 0.0,
                          seed: int | None = 0, angles_deg=SWEEP_DEG, noiseless: bool = False) -> InterferenceSweep:
    """Signal polariser fixed at 0 deg (H) or 45 deg (D), idler polariser swept.

    ``accidentals`` is the per-setting accidental count, normally taken from
    the tomography budget of the same pair so both bases share one noise floor.
    """
    if basis not in BASIS_ANGLE:
        raise ValueError(f"basis must be one of {tuple(BASIS_ANGLE)}")
    _check_budget(flux, efficiencies, time_s, None)
    rho = em.validate_state(rho)
    sig = linear_polarizer(BASIS_ANGLE[basis])
    projs = [np.kron(sig, linear_polarizer(a)) for a in angles_deg]
    mu = flux * efficiencies[0] * efficiencies[1] * time_s * born_probabilities(rho, projs) + accidentals
    counts = mu.copy() if noiseless else np.random.default_rng(seed).poisson(mu).astype(float)
    return InterferenceSweep(basis, np.array(angles_deg, dtype=float), counts, mu, float(accidentals))
