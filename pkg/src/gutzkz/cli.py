"""Command-line driver: ground-state sweeps, ramp campaigns, analysis and band maps.

Exit codes: 0 success, 1 usage or configuration error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import os
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import PchipInterpolator

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .bandmap import analyze_profile, grouped_statistics
from .dynamics import (
    EvolutionOptions,
    IntegrationError,
    ObservableSeries,
    SimulationConfig,
    paper_protocol_oscillation,
    paper_protocol_phase_transition,
)
from .gutzwiller import (
    ConvergenceError,
    GroundStateOptions,
    compute_order_parameter,
    load_checkpoint,
    save_checkpoint,
    target_atom_number,
)
from .model import BOHR_RADIUS, Calibration, PhysicalConstants, read_calibration_table
from .observables import gamma_mi, read_profile, synthesize_profile, write_profile
from . import scaling

log = logging.getLogger("gutzkz")

SCHEMA_VERSION = 1
ENV_PREFIX = "GUTZKZ_"
EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "schema_version": SCHEMA_VERSION,
    "seed": 0,
    "model": {
        "side_length": 21,
        "n_max": 7,
        "N_target": 2400.0,
        "calibration": "analytic",
        "calibration_table": "",
        "recoil_frequency_hz": 2000.0,
        "trap_frequency_hz": 20.0 * 75 / 21,
        "scattering_length_a0": 100.0,
    },
    "protocol": {
        "type": "phase_transition",
        "k": [0.5, 1.0, 2.0, 4.0, 6.0, 8.0],
        "V0": 5.0,
        "V_stop": 35.0,
        "prehold_ms": 0.0,
        "V_hold": 25.0,
        "hold_ms": 1.5,
        "V_values": [5.0, 7.5, 10.0, 12.5, 15.0, 17.5, 20.0, 22.5, 25.0, 27.5, 30.0, 32.5, 35.0],
    },
    "integrator": {
        "dt_ms": 5e-4,
        "sample_interval_ms": 0.05,
        "renormalize": True,
        "max_norm_drift": 1e-4,
        "gamma_normalization": "bandmap",
    },
    "ground": {"tol": 1e-8, "mixing": 0.5, "max_iter": 10000},
    "analysis": {
        "smoother_threshold": 4.0,
        "tau_sf_threshold": 0.6,
        "tau_mi_start": "gamma",
        "tau_mi_start_gamma": 0.6,
        "tau_mi_cuts": [0.85, 0.9, 0.95],
        "V_c": 13.0,
        "slow_k_max": 4.0,
        "nex_window": [18.0, 20.0],
        "nex_reference": "ground",
        "oscillation_window_ms": 1.2,
        "collapse_b": "fitted",
        "plateau_window": 0.1,
    },
    "output": {"directory": "gutzkz-out"},
}


def _merge(base, over, path=""):
    out = copy.deepcopy(base)
    for key, val in over.items():
        if key not in base:
            raise ConfigError(f"unknown config key {path}{key}")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"{path}{key} must be a table")
            out[key] = _merge(base[key], val, f"{path}{key}.")
        else:
            out[key] = val
    return out


def _parse_scalar(text):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def env_overrides(environ=None) -> dict:
    """GUTZKZ_SECTION__KEY=value (or GUTZKZ_KEY for top-level keys) as a nested dict."""
    environ = os.environ if environ is None else environ
    out: dict = {}
    for name, raw in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        parts = name[len(ENV_PREFIX):].split("__")
        if len(parts) == 1:
            key = parts[0].lower()
            if key in ("workers",):
                continue
            out[key] = _parse_scalar(raw)
        elif len(parts) == 2:
            sec = parts[0].lower()
            key = next((k for k in DEFAULTS.get(sec, {}) if k.lower() == parts[1].lower()), parts[1])
            out.setdefault(sec, {})[key] = _parse_scalar(raw)
        else:
            raise ConfigError(f"cannot interpret environment override {name}")
    return out


def load_config(path=None, environ=None) -> dict:
    """Defaults, then the TOML file, then environment overrides; validated."""
    cfg = copy.deepcopy(DEFAULTS)
    base_dir = Path.cwd()
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file {path} not found")
        try:
            data = tomllib.loads(path.read_text())
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        if data.get("schema_version") != SCHEMA_VERSION:
            raise ConfigError(f"{path}: schema_version must be {SCHEMA_VERSION}")
        cfg = _merge(cfg, data)
        base_dir = path.parent
    cfg = _merge(cfg, env_overrides(environ))
    validate_config(cfg, base_dir)
    return cfg


def validate_config(cfg, base_dir=Path(".")):
    m, p = cfg["model"], cfg["protocol"]
    if cfg["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(f"schema_version must be {SCHEMA_VERSION}")
    if int(m["side_length"]) % 2 != 1 or int(m["side_length"]) < 1:
        raise ConfigError("model.side_length must be a positive odd integer")
    if m["calibration"] not in ("analytic", "bandstructure", "table"):
        raise ConfigError(f"unknown model.calibration {m['calibration']!r}")
    if m["calibration"] == "table":
        tp = Path(m["calibration_table"])
        if not tp.is_absolute():
            tp = base_dir / tp
        if not tp.is_file():
            raise ConfigError(f"calibration table {tp} not found")
        m["calibration_table"] = str(tp)
    if p["type"] not in ("phase_transition", "oscillation", "ground_sweep"):
        raise ConfigError(f"unknown protocol.type {p['type']!r}")
    ks = [float(k) for k in p["k"]]
    if p["type"] != "ground_sweep":
        if not ks:
            raise ConfigError("protocol.k must list at least one ramp rate")
        if any(k <= 0 for k in ks):
            raise ConfigError("ramp rates must be positive")
        if len(set(ks)) != len(ks):
            raise ConfigError("ramp rates must be distinct")
    if not p["V_values"]:
        raise ConfigError("protocol.V_values is empty")
    if cfg["integrator"]["dt_ms"] <= 0:
        raise ConfigError("integrator.dt_ms must be positive")
    return cfg


def simulation_config(cfg) -> SimulationConfig:
    m, p, it, g = cfg["model"], cfg["protocol"], cfg["integrator"], cfg["ground"]
    const = PhysicalConstants(
        recoil_frequency=float(m["recoil_frequency_hz"]),
        trap_frequency=2 * np.pi * float(m["trap_frequency_hz"]),
        scattering_length=float(m["scattering_length_a0"]) * BOHR_RADIUS,
    )
    if m["calibration"] == "table":
        cal = Calibration(const, "table", read_calibration_table(m["calibration_table"]))
    else:
        cal = Calibration(const, m["calibration"])
    evo = EvolutionOptions(
        dt=float(it["dt_ms"]),
        sample_interval=float(it["sample_interval_ms"]),
        renormalize=bool(it["renormalize"]),
        max_norm_drift=float(it["max_norm_drift"]),
        gamma_normalization=it["gamma_normalization"],
    )
    gopt = GroundStateOptions(tol=float(g["tol"]), mixing=float(g["mixing"]), max_iter=int(g["max_iter"]))
    return SimulationConfig(
        side_length=int(m["side_length"]), n_max=int(m["n_max"]), N_target=float(m["N_target"]),
        calibration=cal, ground_options=gopt, evolution=evo,
        V0=float(p["V0"]), prehold=float(p["prehold_ms"]),
    )


# ---------------------------------------------------------------- persistence


def file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _atomic_write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, Path):
        return str(x)
    raise TypeError(f"cannot serialize {type(x).__name__}")


@dataclass
class RunManifest:
    """Index of outputs with content hashes, written next to them as manifest.json."""

    config: dict
    seed: int
    code_version: str = __version__
    created: float = field(default_factory=time.time)
    runs: dict = field(default_factory=dict)

    def record(self, key, files, status="ok", diagnostics=None):
        entry = {"status": status, "files": {}, "diagnostics": diagnostics or {}, "finished": time.time()}
        for f in files:
            f = Path(f)
            entry["files"][f.name] = file_hash(f)
        self.runs[str(key)] = entry

    def completed(self, key, directory: Path) -> bool:
        entry = self.runs.get(str(key))
        if not entry or entry["status"] != "ok":
            return False
        for name, digest in entry["files"].items():
            f = directory / name
            if not f.is_file() or file_hash(f) != digest:
                return False
        return True

    def to_dict(self):
        return {
            "config": self.config, "seed": self.seed, "code_version": self.code_version,
            "created": self.created, "runs": self.runs,
        }

    def write(self, directory: Path):
        _atomic_write(Path(directory) / "manifest.json", _dump(self.to_dict()))

    @classmethod
    def read(cls, directory: Path):
        data = json.loads((Path(directory) / "manifest.json").read_text())
        return cls(data["config"], data["seed"], data["code_version"], data["created"], data["runs"])

    def verify(self, directory: Path) -> list:
        """Names of listed files that are missing or whose hash changed."""
        bad = []
        for entry in self.runs.values():
            for name, digest in entry["files"].items():
                f = Path(directory) / name
                if not f.is_file() or file_hash(f) != digest:
                    bad.append(name)
        return bad


def _fmt(x) -> str:
    return f"{float(x):.17g}"


# ---------------------------------------------------------------- commands


def cmd_ground(cfg, out: Path) -> int:
    """Ground states at fixed N over protocol.V_values; writes the static gamma_MI(V) curve."""
    sim = simulation_config(cfg)
    geom = sim.geometry
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(cfg, cfg["seed"])
    curve = out / "static_curve.csv"
    rows = ["V_Er,mu,gamma_MI,gamma_local,N,center_density"]
    status = EXIT_OK
    for V in cfg["protocol"]["V_values"]:
        V = float(V)
        params = sim.calibration.params(V)
        try:
            mu, st = target_atom_number(params, sim.N_target, geom, sim.n_max, sim.ground_options)
        except ConvergenceError as exc:
            log.error("V=%g: %s (last residual %s)", V, exc, exc.residual)
            manifest.runs[f"V{V:g}"] = {"status": "failed", "error": str(exc), "files": {}}
            status = EXIT_NUMERICAL
            break
        op = compute_order_parameter(st)
        g = gamma_mi(st, sim.evolution.gamma_normalization, field=op)
        gl = gamma_mi(st, "local", field=op)
        dens = op.density.reshape(geom.shape)
        c = geom.side_length // 2
        rows.append(",".join(_fmt(x) for x in (V, mu, g, gl, op.total_atoms, dens[c, c, c])))
        ck = out / f"ground_V{V:g}.gzkz"
        save_checkpoint(ck, st, {"V_Er": V, "mu": mu, "gamma_MI": g})
        prof = out / f"density_V{V:g}.csv"
        x = np.arange(geom.side_length) - c
        _atomic_write(prof, "x,density\n" + "".join(f"{xi},{_fmt(d)}\n" for xi, d in zip(x, dens[:, c, c])))
        _atomic_write(curve, "\n".join(rows) + "\n")
        manifest.record(f"V{V:g}", [ck, ck.with_name(ck.name + ".json"), prof], diagnostics={"mu": mu, "gamma_MI": g})
        manifest.record("static_curve", [curve])
        manifest.write(out)
        log.info("V=%g mu=%.6g gamma_MI=%.4f", V, mu, g)
    manifest.write(out)
    return status


def _series_name(protocol, k):
    return f"series_{protocol}_k{k:g}"


def _run_one(cfg, k, out):
    """Worker body for one ramp rate; returns (k, files, diagnostics) or raises."""
    sim = simulation_config(cfg)
    p = cfg["protocol"]
    if p["type"] == "oscillation":
        s = paper_protocol_oscillation(k, float(p["hold_ms"]), sim, V_hold=float(p["V_hold"]))
        s.meta["U_hold"] = float(sim.calibration.interaction(float(p["V_hold"])))
    else:
        s = paper_protocol_phase_transition(k, float(p["V_stop"]), sim)
    base = Path(out) / _series_name(p["type"], k)
    csv_path = base.with_suffix(".csv")
    tmp = csv_path.with_name("." + csv_path.name + ".part")
    s.to_csv(tmp)
    os.replace(tmp, csv_path)
    meta = {key: v for key, v in s.meta.items() if key != "final_state"}
    meta["max_norm_drift"] = s.max_norm_drift
    meta_path = base.with_suffix(".json")
    _atomic_write(meta_path, _dump(meta))
    return k, [csv_path, meta_path], {"max_norm_drift": s.max_norm_drift, "n_samples": len(s)}


def cmd_sweep(cfg, out: Path, workers=None, resume=False) -> int:
    """Run the configured protocol for every k; failures are isolated per k."""
    p = cfg["protocol"]
    if p["type"] == "ground_sweep":
        return cmd_ground(cfg, out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(cfg, cfg["seed"])
    if resume and (out / "manifest.json").is_file():
        old = RunManifest.read(out)
        manifest.runs = old.runs
    todo = []
    for k in p["k"]:
        k = float(k)
        if resume and manifest.completed(f"k{k:g}", out):
            log.info("k=%g already complete, skipping", k)
            continue
        todo.append(k)
    manifest.write(out)
    workers = max(1, min(workers or os.cpu_count() or 1, len(todo) or 1))
    failed = False

    def finish(k, result=None, exc=None):
        nonlocal failed
        if exc is None:
            _, files, diag = result
            manifest.record(f"k{k:g}", files, diagnostics=diag)
            log.info("k=%g done", k)
        else:
            failed = True
            manifest.runs[f"k{k:g}"] = {"status": "failed", "error": f"{type(exc).__name__}: {exc}", "files": {}}
            log.error("k=%g failed: %s", k, exc)
        manifest.write(out)

    if workers == 1:
        for k in todo:
            try:
                finish(k, _run_one(cfg, k, out))
            except (IntegrationError, ConvergenceError, FloatingPointError, ValueError) as exc:
                finish(k, exc=exc)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {pool.submit(_run_one, cfg, k, out): k for k in todo}
            for fut in as_completed(futures):
                k = futures[fut]
                try:
                    finish(k, fut.result())
                except Exception as exc:  # noqa: BLE001 - isolate each k
                    finish(k, exc=exc)
    return EXIT_NUMERICAL if failed else EXIT_OK


def load_family(directory: Path):
    """Series and metadata from a sweep directory, keyed by k."""
    directory = Path(directory)
    if not directory.is_dir():
        raise ConfigError(f"{directory} is not a directory")
    family = {}
    for csv_path in sorted(directory.glob("series_*.csv")):
        meta_path = csv_path.with_suffix(".json")
        meta = json.loads(meta_path.read_text()) if meta_path.is_file() else {}
        s = ObservableSeries.from_csv(csv_path, meta)
        family[float(meta.get("k", csv_path.stem.rsplit("_k", 1)[-1]))] = s
    if not family:
        raise ConfigError(f"no series files in {directory}")
    return dict(sorted(family.items()))


def static_reference(cfg, V_values):
    """Quasi-static gamma_MI(V) from ground states at fixed N, monotone-interpolated."""
    sim = simulation_config(cfg)
    gs = []
    for V in V_values:
        _, st = target_atom_number(sim.calibration.params(float(V)), sim.N_target, sim.geometry,
                                   sim.n_max, sim.ground_options)
        gs.append(gamma_mi(st, sim.evolution.gamma_normalization))
    return PchipInterpolator(np.asarray(V_values, dtype=float), np.asarray(gs))


def _try(report, name, fn):
    try:
        report[name] = fn()
    except (scaling.ExtractionError, scaling.FitError, ValueError, np.linalg.LinAlgError) as exc:
        report[name] = {"error": f"{type(exc).__name__}: {exc}"}
        log.warning("%s: %s", name, exc)
    return report[name]


def _write_points(path, k, y, fit):
    lines = ["# ln_k,ln_y (points)"]
    lines += [f"{_fmt(np.log(a))},{_fmt(np.log(b))}" for a, b in zip(k, y)]
    if fit is not None:
        lines.append("# ln_k,ln_fit (line)")
        kk = np.geomspace(min(k), max(k), 50)
        lines += [f"{_fmt(np.log(a))},{_fmt(np.log(fit(a)))}" for a in kk]
    _atomic_write(path, "\n".join(lines) + "\n")


def analyze_phase_transition(family, cfg, out: Path, reference=None) -> dict:
    a = cfg["analysis"]
    traces = {k: scaling.smooth_trace(s, k, poly_threshold=a["smoother_threshold"]) for k, s in family.items()}
    report = {"protocol": "phase_transition", "k": list(family),
              "smoothers": {str(k): {"method": t.method, "rms_residual": t.rms_residual} for k, t in traces.items()}}

    def tau_sf_fit():
        taus = [scaling.tau_sf(traces[k], a["tau_sf_threshold"]) for k in traces]
        fit = scaling.fit_power_law(list(traces), taus)
        _write_points(out / "tau_sf_loglog.csv", list(traces), taus, fit)
        return {"quantity": "tau_SF", "values": taus, **fit.as_record(),
                **scaling.nu_z_from_tau(fit.exponent, fit.exponent_uncertainty).as_record()}

    slow = [k for k in traces if k <= a["slow_k_max"]]

    def tau_mi_fit(cuts):
        taus = [scaling.tau_mi(traces[k], a["tau_mi_start"], cuts, a["tau_mi_start_gamma"], a["V_c"]) for k in slow]
        return taus, scaling.fit_power_law(slow, taus)

    def tau_mi_report():
        taus, fit = tau_mi_fit(a["tau_mi_cuts"])
        _write_points(out / "tau_mi_loglog.csv", slow, taus, fit)
        by_cut = {}
        for cut in np.round(np.arange(0.70, 0.901, 0.05), 2):
            try:
                by_cut[f"{cut:.2f}"] = tau_mi_fit([float(cut)])[1].exponent
            except scaling.ExtractionError as exc:
                by_cut[f"{cut:.2f}"] = str(exc)
        rec = {"quantity": "tau_MI", "values": taus, "mode": a["tau_mi_start"], "cuts": a["tau_mi_cuts"],
               **fit.as_record(), "exponent_by_cut": by_cut}
        rec.update(scaling.nu_z_from_tau(fit.exponent, fit.exponent_uncertainty).as_record())
        return rec

    def nex_report():
        win = a["nex_window"]
        if a["nex_reference"] == "slowest":
            kref = min(traces)
            ref = traces[kref]
            use = {k: t for k, t in traces.items() if k != kref}
        else:
            ref = reference or static_reference(cfg, np.arange(win[0] - 1, win[1] + 1.5, 1.0))
            use = traces
        nex = scaling.excitation_fraction(use, ref, tuple(win))
        ks = [k for k in nex if nex[k] > 0]
        fit = scaling.fit_power_law(ks, [nex[k] for k in ks])
        _write_points(out / "n_ex_loglog.csv", ks, [nex[k] for k in ks], fit)
        rec = {"quantity": "n_ex", "values": {str(k): v for k, v in nex.items()}, "window": win, **fit.as_record()}
        rec.update(scaling.nu_z_from_nex(fit.exponent, e_err=fit.exponent_uncertainty).as_record())
        return rec

    _try(report, "tau_SF", tau_sf_fit)
    mi = _try(report, "tau_MI", tau_mi_report)
    _try(report, "n_ex", nex_report)

    def collapse():
        b = a["collapse_b"]
        if b == "fitted":
            if "exponent" not in mi:
                raise ValueError("collapse needs the tau_MI exponent, which is unavailable")
            b = abs(mi["exponent"])
        res = scaling.universal_rescale({k: traces[k] for k in slow}, a["V_c"], float(b))
        lines = ["k,V_eff,gamma_MI"]
        for k, (ve, g) in res.rescaled.items():
            lines += [f"{_fmt(k)},{_fmt(x)},{_fmt(y)}" for x, y in zip(ve, g)]
        _atomic_write(out / "collapse.csv", "\n".join(lines) + "\n")
        return {"b": b, "score": res.score, "unrescaled_score": res.unrescaled_score}

    _try(report, "collapse", collapse)
    return report


def analyze_oscillation(family, cfg, out: Path) -> dict:
    a = cfg["analysis"]
    report = {"protocol": "oscillation", "k": list(family)}
    fits = {}
    for k, s in family.items():
        t0 = s.meta.get("hold_start_ms")
        U = s.meta.get("U_hold")
        if t0 is None or U is None:
            fits[k] = {"error": "series metadata lacks hold_start_ms/U_hold"}
            continue
        B0 = U * 2 * np.pi * cfg["model"]["recoil_frequency_hz"] * 1e-3
        try:
            f = scaling.oscillation_amplitude(s.times, s.gamma_MI, B0, a["oscillation_window_ms"], t0)
            fits[k] = {"A": f.A, "B": f.B, "C": f.C, "D": f.D, "errors": f.errors, "B_over_U": f.B / B0}
        except (scaling.ExtractionError, scaling.FitError) as exc:
            fits[k] = {"error": str(exc)}
    report["fits"] = {str(k): v for k, v in fits.items()}
    ok = [k for k, v in fits.items() if "A" in v and v["A"] > 0]

    def amp():
        A = [fits[k]["A"] for k in ok]
        fit = scaling.fit_power_law(ok, A)
        _write_points(out / "amplitude_loglog.csv", ok, A, fit)
        return {"quantity": "A", **fit.as_record()}

    _try(report, "amplitude", amp)
    return report


def cmd_analyze(cfg, source: Path, out: Path) -> int:
    family = load_family(source)
    out.mkdir(parents=True, exist_ok=True)
    protocols = {s.meta.get("protocol", cfg["protocol"]["type"]) for s in family.values()}
    if len(protocols) != 1:
        raise ConfigError(f"mixed protocols in {source}: {sorted(protocols)}")
    protocol = protocols.pop()
    if protocol == "oscillation":
        report = analyze_oscillation(family, cfg, out)
    else:
        report = analyze_phase_transition(family, cfg, out)
    _atomic_write(out / "report.json", _dump(report))
    failed = [name for name, v in report.items() if isinstance(v, dict) and "error" in v]
    return EXIT_NUMERICAL if failed else EXIT_OK


def _parse_group(text):
    try:
        g, n = (int(x) for x in text.lower().split("x"))
    except ValueError:
        raise ConfigError(f"--group expects AxB, got {text!r}") from None
    return g, n


def cmd_bandmap(inputs, out: Path, group=None, plateau_window=0.1) -> int:
    paths = []
    for item in inputs:
        item = Path(item)
        if item.is_dir():
            paths += sorted(item.glob("*.csv"))
        else:
            paths.append(item)
    if not paths:
        raise ConfigError("no profile grids given")
    records = {}
    status = EXIT_OK
    profiles = []
    for p in paths:
        try:
            prof = read_profile(p)
            profiles.append(prof)
            records[str(p)] = analyze_profile(prof, plateau_window).as_record()
        except (OSError, ValueError) as exc:
            records[str(p)] = {"error": str(exc)}
            status = EXIT_USAGE
    result = {"profiles": records}
    if group is not None:
        g, n = group
        if status == EXIT_OK:
            mean, std = grouped_statistics(profiles, g, n, plateau_window)
            result["grouped"] = {"group_size": g, "n_groups": n, "mean": mean, "std": std}
    out.mkdir(parents=True, exist_ok=True)
    _atomic_write(out / "bandmap.json", _dump(result))
    sys.stdout.write(_dump(result))
    return status


def cmd_synth_profile(checkpoint, out: Path, grid_size=64, blur=0.0, noise=0.0, seed=0) -> int:
    st, meta = load_checkpoint(checkpoint)
    prof = synthesize_profile(st, grid_size, blur)
    if noise > 0:
        rng = np.random.default_rng(seed)
        prof.grid = prof.grid + noise * prof.grid.max() * rng.standard_normal(prof.grid.shape)
    out.mkdir(parents=True, exist_ok=True)
    path = out / (Path(checkpoint).stem + "_profile.csv")
    write_profile(path, prof)
    sys.stdout.write(f"{path}\n")
    return EXIT_OK


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gutzkz", description=__doc__.splitlines()[0])
    ap.add_argument("--config", type=Path, help="TOML run configuration")
    ap.add_argument("--out", type=Path, help="output directory (overrides output.directory)")
    ap.add_argument("--seed", type=int, help="seed recorded in manifests and used for synthetic noise")
    ap.add_argument("--workers", type=int, help="parallel runs (default: available CPUs)")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("ground", help="fixed-N ground states over protocol.V_values")
    sw = sub.add_parser("sweep", help="run the configured protocol for each ramp rate")
    sw.add_argument("--resume", action="store_true", help="skip k values already complete")
    an = sub.add_parser("analyze", help="exponents and plot data from a sweep directory")
    an.add_argument("source", type=Path)
    bm = sub.add_parser("bandmap", help="gamma_MI from quasi-momentum grids")
    bm.add_argument("inputs", nargs="+", type=Path, help="CSV grids or directories of them")
    bm.add_argument("--group", help="pixelwise groups, e.g. 3x6")
    bm.add_argument("--plateau-window", type=float, help="plateau width as a fraction of the zone")
    sp = sub.add_parser("synth-profile", help="band-mapped profile from a ground-state checkpoint")
    sp.add_argument("checkpoint", type=Path)
    sp.add_argument("--grid-size", type=int, default=64)
    sp.add_argument("--blur", type=float, default=0.0, help="Gaussian blur sigma in q units")
    sp.add_argument("--noise", type=float, default=0.0, help="additive noise relative to the peak")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg["seed"] = args.seed
        workers = args.workers or int(os.environ.get(ENV_PREFIX + "WORKERS", 0)) or None
        out = args.out or Path(cfg["output"]["directory"])
        if args.command == "ground":
            return cmd_ground(cfg, out)
        if args.command == "sweep":
            return cmd_sweep(cfg, out, workers, args.resume)
        if args.command == "analyze":
            return cmd_analyze(cfg, args.source, out)
        if args.command == "bandmap":
            group = _parse_group(args.group) if args.group else None
            pw = args.plateau_window if args.plateau_window is not None else cfg["analysis"]["plateau_window"]
            return cmd_bandmap(args.inputs, out, group, pw)
        if args.command == "synth-profile":
            return cmd_synth_profile(args.checkpoint, out, args.grid_size, args.blur, args.noise, cfg["seed"])
    except ConfigError as exc:
        print(f"gutzkz: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConvergenceError, IntegrationError, FloatingPointError) as exc:
        print(f"gutzkz: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (OSError, ValueError) as exc:
        print(f"gutzkz: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
