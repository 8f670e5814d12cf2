"""Command-line front end: spectra | concurrence-map | tomography | interference.

Every command reads one JSON config (all keys optional, unknown keys
rejected), writes plot-ready CSV/JSON into the output directory and exits
with 0 on success, 2 on a configuration error and 3 on a numerical failure.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from . import channelizer as ch
from . import entanglement_metrics as em
from . import material_optics, mode_solver, spdc_engine
from . import tomography as tomo
from .errors import BRWError, ConfigError

NOMINAL_PUMP_NM = 777.86

DEFAULT_CONFIG: dict = {
    "stack": {
        "core": [[0.20, 375.0], [0.61, 500.0], [0.20, 375.0]],
        "mirror_period": [[0.25, 129.0], [0.70, 461.0]],
        "mirror_pairs": 6,
        "substrate": None,
        "superstrate": None,
        "ridge_width_um": 4.0,
        "etch_depth_um": 3.6,
    },
    "length_mm": 1.09,
    "index_model": material_optics.DEFAULT_MODEL,
    "pump_nm": "auto",
    "dispersion": {
        "telecom_range_nm": [1450.0, 1670.0],
        "telecom_step_nm": 0.25,
        "pump_range_nm": [760.0, 800.0],
        "pump_step_nm": 0.05,
    },
    "spectrum_points": spdc_engine.DEFAULT_POINTS,
    "grid": {
        "spacing_ghz": 100.0,
        "passband_ghz": 55.0,
        "anchor_offset_ghz": 0.0,
        "shape": ch.TOPHAT,
    },
    "pair": None,
    "tomography": {
        "flux": None,
        "peak_counts": tomo.DEFAULT_PEAK_COUNTS,
        "efficiencies": list(tomo.DEFAULT_EFFICIENCIES),
        "time_s": tomo.DEFAULT_TIME_S,
        "car": tomo.DEFAULT_CAR,
        "mc_trials": 100,
    },
    "seed": 0,
    "output_dir": "out",
}


def _merge(defaults: dict, given: dict, path: str) -> dict:
    if not isinstance(given, dict):
        raise ConfigError(f"{path or 'config'}: expected an object")
    out = copy.deepcopy(defaults)
    for key, value in given.items():
        where = f"{path}.{key}" if path else key
        if key not in defaults:
            raise ConfigError(f"{where}: unknown key")
        if isinstance(defaults[key], dict) and value is not None:
            out[key] = _merge(defaults[key], value, where)
        else:
            out[key] = value
    return out


def _number(value, where, lo=None, hi=None, positive=False, integer=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ConfigError(f"{where}: expected a number, got {value!r}")
    if integer and int(value) != value:
        raise ConfigError(f"{where}: expected an integer, got {value!r}")
    if positive and not value > 0:
        raise ConfigError(f"{where}: must be positive, got {value!r}")
    if lo is not None and value < lo or hi is not None and value > hi:
        raise ConfigError(f"{where}: {value!r} outside [{lo}, {hi}]")
    return int(value) if integer else float(value)


def _layers(value, where):
    if not isinstance(value, list) or not value:
        raise ConfigError(f"{where}: expected a non-empty list of [x, thickness_nm]")
    out = []
    for k, item in enumerate(value):
        if not isinstance(item, (list, tuple)) or len(item) != 2:
            raise ConfigError(f"{where}[{k}]: expected [x, thickness_nm]")
        out.append((_number(item[0], f"{where}[{k}].x (composition)", 0.0, 1.0),
                    _number(item[1], f"{where}[{k}].thickness_nm", positive=True)))
    return out


def _range(value, where):
    if not isinstance(value, list) or len(value) != 2:
        raise ConfigError(f"{where}: expected [lo, hi]")
    lo, hi = (_number(v, where, positive=True) for v in value)
    if not hi > lo:
        raise ConfigError(f"{where}: empty range")
    return lo, hi


def _steps(rng, step, where):
    step = _number(step, where, positive=True)
    n = (rng[1] - rng[0]) / step
    if abs(n - round(n)) > 1e-6:
        raise ConfigError(f"{where}: step does not divide the range")
    return int(round(n)) + 1


@dataclass(frozen=True)
class RunConfig:
    raw: dict
    stack: mode_solver.LayerStack
    model: str
    pump_nm: float | None  # None means solve for degeneracy
    telecom_range: tuple[float, float]
    telecom_steps: int
    pump_range: tuple[float, float]
    pump_steps: int
    spectrum_points: int
    spacing_hz: float
    passband_hz: float
    offset_hz: float
    pair: tuple[float, float] | None
    flux: float | None
    peak_counts: float
    efficiencies: tuple[float, float]
    time_s: float
    car: float
    mc_trials: int
    seed: int
    output_dir: str

    @property
    def digest(self) -> str:
        # where the files go does not change what is in them
        body = {k: v for k, v in self.raw.items() if k != "output_dir"}
        canon = json.dumps(body, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()


def parse_config(given: dict | None = None) -> RunConfig:
    """Validate a config document against the defaults; errors name the field."""
    raw = _merge(DEFAULT_CONFIG, given or {}, "")
    s = raw["stack"]
    core = _layers(s["core"], "stack.core")
    mirror = _layers(s["mirror_period"], "stack.mirror_period")
    pairs = _number(s["mirror_pairs"], "stack.mirror_pairs", 1, 100, integer=True)
    clad = {}
    for key in ("substrate", "superstrate"):
        clad[key] = None if s[key] is None else _number(s[key], f"stack.{key}", 0.0, 1.0)
    length = _number(raw["length_mm"], "length_mm", positive=True)
    try:
        stack = mode_solver.LayerStack.bragg(
            core, mirror, pairs, length_mm=length,
            ridge_width_um=_number(s["ridge_width_um"], "stack.ridge_width_um", positive=True),
            etch_depth_um=_number(s["etch_depth_um"], "stack.etch_depth_um", positive=True), **clad)
    except ValueError as err:
        raise ConfigError(f"stack: {err}") from err
    model = raw["index_model"]
    if model not in material_optics.MODELS:
        raise ConfigError(f"index_model: {model!r} not one of {material_optics.MODELS}")
    pump = raw["pump_nm"]
    pump_nm = None if pump == "auto" else _number(pump, "pump_nm", positive=True)
    d = raw["dispersion"]
    t_range = _range(d["telecom_range_nm"], "dispersion.telecom_range_nm")
    p_range = _range(d["pump_range_nm"], "dispersion.pump_range_nm")
    g = raw["grid"]
    if g["shape"] not in ch.SHAPES:
        raise ConfigError(f"grid.shape: {g['shape']!r} not one of {ch.SHAPES}")
    spacing = _number(g["spacing_ghz"], "grid.spacing_ghz", positive=True) * 1e9
    passband = _number(g["passband_ghz"], "grid.passband_ghz", positive=True) * 1e9
    if passband > spacing:
        raise ConfigError("grid.passband_ghz: wider than the channel spacing")
    pair = raw["pair"]
    if pair is not None:
        if not isinstance(pair, list) or len(pair) != 2:
            raise ConfigError("pair: expected [lambda_s_nm, lambda_i_nm] or null")
        pair = tuple(_number(v, "pair", positive=True) for v in pair)
    t = raw["tomography"]
    eff = t["efficiencies"]
    if not isinstance(eff, list) or len(eff) != 2:
        raise ConfigError("tomography.efficiencies: expected [eta_s, eta_i]")
    eff = tuple(_number(v, "tomography.efficiencies", positive=True, hi=1.0) for v in eff)
    out_dir = raw["output_dir"]
    if not isinstance(out_dir, str) or not out_dir:
        raise ConfigError("output_dir: expected a path string")
    return RunConfig(
        raw=raw, stack=stack, model=model, pump_nm=pump_nm,
        telecom_range=t_range, telecom_steps=_steps(t_range, d["telecom_step_nm"], "dispersion.telecom_step_nm"),
        pump_range=p_range, pump_steps=_steps(p_range, d["pump_step_nm"], "dispersion.pump_step_nm"),
        spectrum_points=_number(raw["spectrum_points"], "spectrum_points", 16, 10**6, integer=True),
        spacing_hz=spacing, passband_hz=passband,
        offset_hz=_number(g["anchor_offset_ghz"], "grid.anchor_offset_ghz") * 1e9,
        pair=pair,
        flux=None if t["flux"] is None else _number(t["flux"], "tomography.flux", positive=True),
        peak_counts=_number(t["peak_counts"], "tomography.peak_counts", positive=True),
        efficiencies=eff,
        time_s=_number(t["time_s"], "tomography.time_s", positive=True),
        car=_number(t["car"], "tomography.car", positive=True),
        mc_trials=_number(t["mc_trials"], "tomography.mc_trials", 10, 10**5, integer=True),
        seed=_number(raw["seed"], "seed", 0, integer=True),
        output_dir=out_dir,
    )


def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    except json.JSONDecodeError as err:
        raise ConfigError(f"config {path} is not valid JSON: {err}") from err


# -- pipeline ---------------------------------------------------------------

@dataclass
class Pipeline:
    cfg: RunConfig
    ideal: bool = False

    def __post_init__(self):
        self._tables = None
        self._amp = None

    @property
    def tables(self) -> mode_solver.PhaseMatchingTables:
        if self._tables is None:
            c = self.cfg
            self._tables = mode_solver.build_tables(c.stack, c.model, c.telecom_range, c.telecom_steps,
                                                    c.pump_range, c.pump_steps)
        return self._tables

    @property
    def pump_nm(self) -> float:
        if self.cfg.pump_nm is not None:
            return self.cfg.pump_nm
        if self.ideal:
            return NOMINAL_PUMP_NM
        return mode_solver.degenerate_pump_nm(self.tables)

    @property
    def amplitude(self) -> spdc_engine.BiphotonAmplitude:
        if self._amp is None:
            c = self.cfg
            wp = float(spdc_engine.omega_from_nm(self.pump_nm))
            if self.ideal:
                self._amp = spdc_engine.synthetic_amplitude(wp, lambda w: np.ones_like(w), c.stack.length_m,
                                                            c.spectrum_points, c.telecom_range)
            else:
                self._amp = spdc_engine.biphoton_amplitude(self.tables, wp, c.stack.length_m,
                                                           c.spectrum_points, c.telecom_range)
        return self._amp

    @property
    def grid(self) -> ch.ChannelGrid:
        c = self.cfg
        return ch.ChannelGrid.for_amplitude(self.amplitude, c.spacing_hz, c.passband_hz, c.offset_hz)

    def select_pair(self, request: tuple[float, float] | None = None):
        grid = self.grid
        wanted = request or self.cfg.pair
        if wanted is None:
            pairs = ch.pair_channels(grid, self.amplitude.omega_p)
            if not pairs:
                raise BRWError("channel grid has no pairs")
            return grid, pairs[0]
        return grid, ch.find_pair(grid, self.amplitude.omega_p, *wanted)

    def metadata(self, command: str) -> dict:
        return {
            "tool": "brwsource",
            "tool_version": __version__,
            "command": command,
            "config_hash": self.cfg.digest,
            "index_model": self.cfg.model,
            "index_model_source": material_optics.MODEL_SOURCES[self.cfg.model],
            "approximation": mode_solver.SLAB_APPROXIMATION,
            "ideal_amplitude": self.ideal,
        }


def _write(out: Path, name: str, text: str) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    with open(path, "w", newline="\n") as fh:
        fh.write(text)
    return path


def _json(obj) -> str:
    return json.dumps(obj, indent=2, allow_nan=True) + "\n"


def _round(v, digits=10):
    return None if v is None or (isinstance(v, float) and math.isnan(v)) else round(float(v), digits)


def _rho_dict(rho):
    rho = np.asarray(rho)
    return {"real": np.round(rho.real, 12).tolist(), "imag": np.round(rho.imag, 12).tolist()}


def cmd_spectra(p: Pipeline, out: Path) -> dict:
    meta = p.metadata("spectra")
    amp = p.amplitude
    spectra = spdc_engine.marginal_spectra(amp)
    _write(out, "spectra.csv", spectra.to_csv(meta))
    if not p.ideal:
        for name, table in (("pump", p.tables.pump), ("te", p.tables.te), ("tm", p.tables.tm)):
            _write(out, f"dispersion_{name}.csv", table.to_csv({**meta, "family": table.family,
                                                                 "polarization": table.polarization}))
    try:
        fwhm = spdc_engine.overlap_fwhm_nm(spectra)
    except BRWError:
        fwhm = None  # flat synthetic spectra have no half maximum
    summary = {
        "metadata": meta,
        "pump_nm": _round(amp.lambda_p_nm),
        "pump_solved": p.cfg.pump_nm is None and not p.ideal,
        "degenerate_nm": _round(amp.degenerate_nm),
        "overlap_fwhm_nm": _round(fwhm, 6),
        "length_mm": p.cfg.stack.length_mm,
        "grid_points": int(amp.omega_s.size),
        "signal_band_nm": [_round(spectra.lambda_nm[0], 6), _round(spectra.lambda_nm[-1], 6)],
    }
    _write(out, "spectra_summary.json", _json(summary))
    return summary


def cmd_concurrence_map(p: Pipeline, out: Path) -> dict:
    meta = p.metadata("concurrence-map")
    amp = p.amplitude
    grid = p.grid
    cmap = ch.concurrence_map(amp, grid)
    _write(out, "concurrence_map.csv", cmap.to_csv(meta))
    span1 = ch.span_above(cmap, ch.INV_SQRT2)
    span2 = ch.span_above(cmap, 0.96)
    above = [e for e in cmap.entries if e.concurrence >= ch.INV_SQRT2]

    def span(s):
        return {"threshold": _round(s.threshold), "pairs": s.pairs, "width_nm": _round(s.width_nm, 6),
                "lambda_min_nm": _round(s.lambda_min_nm, 4), "lambda_max_nm": _round(s.lambda_max_nm, 4)}

    summary = {
        "metadata": meta,
        "pump_nm": _round(amp.lambda_p_nm),
        "pairs_total": len(cmap.entries),
        "pairs_skipped": cmap.skipped,
        "pairs_above_inv_sqrt2": len(above),
        "span_above_inv_sqrt2": span(span1),
        "span_above_0p96": span(span2),
        "nearest_pair_concurrence": _round(cmap.entries[0].concurrence) if cmap.entries else None,
        "monotone_trend": ch.trend_is_monotone(cmap),
    }
    _write(out, "concurrence_summary.json", _json(summary))
    return summary


def _pair_state(p: Pipeline, request):
    grid, pair = p.select_pair(request)
    return ch.channel_pair_state(p.amplitude, grid, pair)


def _budget(p: Pipeline, rho):
    c = p.cfg
    flux = c.flux or tomo.flux_for_peak(rho, c.peak_counts, c.efficiencies, c.time_s)
    return flux


def cmd_tomography(p: Pipeline, out: Path, request=None, modes=("raw", "net"), noiseless=False) -> dict:
    meta = p.metadata("tomography")
    c = p.cfg
    state = _pair_state(p, request)
    rho_true = state.rho
    flux = _budget(p, rho_true)
    data = tomo.simulate_dataset(rho_true, flux, c.efficiencies, c.time_s,
                                 None if noiseless else c.car, seed=c.seed, noiseless=noiseless)
    results = {}
    for k, mode in enumerate(modes):
        net = mode == "net"
        rec = tomo.reconstruct_mle(data, subtract_accidentals=net)
        errs = tomo.monte_carlo_errors(rec.rho, data, c.mc_trials, seed=c.seed + 1 + k, subtract_accidentals=net)
        rec.concurrence_std, rec.fidelity_std = errs.concurrence_std, errs.fidelity_std
        d = rec.to_dict()
        d.pop("rho_real"), d.pop("rho_imag")
        d["rho"] = _rho_dict(rec.rho)
        d["state_fidelity_to_true"] = em.state_fidelity(rec.rho, rho_true)
        d["mc_failures"] = errs.failures
        results[mode] = d
    summary = {
        "metadata": meta,
        "pair": {"lambda_s_nm": _round(state.lambda_s_nm, 4), "lambda_i_nm": _round(state.lambda_i_nm, 4),
                 "signal_channel": state.signal, "idler_channel": state.idler},
        "rho_true": _rho_dict(rho_true),
        "true_concurrence": em.concurrence(rho_true),
        "true_fidelity_to_bell": em.fidelity_to_bell(rho_true),
        "flux": flux,
        "noiseless": noiseless,
        "dataset": data.to_dict(),
        "reconstructions": results,
    }
    _write(out, "tomography.json", _json(summary))
    return summary


def cmd_interference(p: Pipeline, out: Path, request=None, bases=("H", "D")) -> dict:
    meta = p.metadata("interference")
    c = p.cfg
    state = _pair_state(p, request)
    rho = state.rho
    flux = _budget(p, rho)
    # one accidental floor for the pair, set by the tomography peak setting
    _, acc = tomo.expected_counts(rho, [tomo.projector(s) for s in tomo.SETTINGS],
                                  flux, c.efficiencies, c.time_s, c.car)
    fits = {}
    for k, basis in enumerate(bases):
        sweep = tomo.simulate_interference(rho, basis, flux, c.efficiencies, c.time_s, acc,
                                           seed=c.seed + k)
        fit = em.visibility_fit(sweep.angles_deg, sweep.counts)
        fit_expected = em.visibility_fit(sweep.angles_deg, sweep.expected)
        lines = [f"# {key}: {value}" for key, value in {**meta, "basis": basis}.items()]
        lines.append("angle_deg,counts,expected")
        lines += [f"{a:.1f},{n:.0f},{mu:.6f}" for a, n, mu in zip(sweep.angles_deg, sweep.counts, sweep.expected)]
        _write(out, f"interference_{basis}.csv", "\n".join(lines) + "\n")
        fits[basis] = {"visibility": _round(fit.visibility), "phase_deg": _round(fit.phase, 6),
                       "amplitude": _round(fit.amplitude, 6), "offset": _round(fit.offset, 6),
                       "visibility_expected": _round(fit_expected.visibility)}
    summary = {
        "metadata": meta,
        "pair": {"lambda_s_nm": _round(state.lambda_s_nm, 4), "lambda_i_nm": _round(state.lambda_i_nm, 4)},
        "accidentals_per_setting": _round(acc, 6),
        "fits": fits,
    }
    _write(out, "interference_summary.json", _json(summary))
    return summary


# -- argument handling ------------------------------------------------------

def _pair_arg(text: str) -> tuple[float, float]:
    try:
        a, b = (float(v) for v in text.split(","))
    except ValueError as err:
        raise argparse.ArgumentTypeError("expected LAMBDA_S,LAMBDA_I in nm") from err
    return a, b


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="brwsource", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON run configuration")
        sp.add_argument("--out", help="output directory (overrides output_dir)")
        sp.add_argument("--seed", type=int, help="master seed (overrides seed)")
        sp.add_argument("--ideal", action="store_true", help="synthetic flat biphoton amplitude")

    common(sub.add_parser("spectra", help="H/V marginal spectra and overlap FWHM"))
    common(sub.add_parser("concurrence-map", help="concurrence of every DWDM channel pair"))
    sp = sub.add_parser("tomography", help="simulated tomography with MLE reconstruction")
    common(sp)
    sp.add_argument("--pair", type=_pair_arg, help="channel pair LAMBDA_S,LAMBDA_I in nm")
    mode = sp.add_mutually_exclusive_group()
    mode.add_argument("--raw", action="store_true", help="raw reconstruction only")
    mode.add_argument("--net", action="store_true", help="accidental-subtracted reconstruction only")
    sp.add_argument("--noiseless", action="store_true", help="expected counts, no accidentals")
    sp = sub.add_parser("interference", help="polariser sweeps in the H and D bases")
    common(sp)
    sp.add_argument("--pair", type=_pair_arg, help="channel pair LAMBDA_S,LAMBDA_I in nm")
    sp.add_argument("--basis", choices=("H", "D", "both"), default="both")
    return parser


EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        given = load_config(args.config)
        if args.seed is not None:
            given = {**given, "seed": args.seed}
        if args.out is not None:
            given = {**given, "output_dir": args.out}
        cfg = parse_config(given)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    pipe = Pipeline(cfg, ideal=args.ideal)
    out = Path(cfg.output_dir)
    try:
        if args.command == "spectra":
            summary = cmd_spectra(pipe, out)
        elif args.command == "concurrence-map":
            summary = cmd_concurrence_map(pipe, out)
        elif args.command == "tomography":
            modes = ("raw",) if args.raw else ("net",) if args.net else ("raw", "net")
            summary = cmd_tomography(pipe, out, args.pair, modes, args.noiseless)
        else:
            bases = ("H", "D") if args.basis == "both" else (args.basis,)
            summary = cmd_interference(pipe, out, args.pair, bases)
    except (BRWError, ValueError, np.linalg.LinAlgError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    keep = {k: v for k, v in summary.items() if k not in ("metadata", "dataset", "rho_true")}
    print(json.dumps(keep, indent=2))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
