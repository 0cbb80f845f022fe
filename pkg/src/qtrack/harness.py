"""Experiment orchestration: configuration, dispatch, persistence and comparison.

A configuration is a YAML (or JSON) mapping::

    system:
      N: 2
      H0: [[1, 0], [0, -1]]          # row-major; complex entries as [re, im]
      mu: [[0, 1], [1, 0]]
      morph:                          # optional, utrack only
        start: {H0: ..., mu: ...}
        end: {H0: ..., mu: ...}
    rho0: [[1, 0], [0, 0]]
    theta: [[1, 0], [0, -1]]
    grid: {T: 20, q: 501, p: 201, ds: 0.005, s_max: null}
    algorithm: grad                   # grad | utrack | vtrack | strack
    options: {...}                    # see DEFAULT_OPTIONS
    initial_field: {kind: random}     # random | resonant | zero | samples
    seed: 0
    output: runs/example
"""

import copy
import csv
import hashlib
import json
import math
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import _backend
from .dmorph import TrackingOptions, geodesic, run_unitary_tracking
from .dynamics import ControlField, SystemModel, TimeGrid, propagate
from .errors import (
    ConfigError,
    NearCriticalSingularity,
    QTrackError,
    SingularGMatrix,
    StalledOptimization,
)
from .landscape import (
    OptimizationTrace,
    StopRule,
    expectation,
    kinematic_optimum,
    nearest_optimum,
    run_gradient_flow,
)
from .linalg import check_density, geodesic_distance, hermiticity_error
from .observables import (
    ObservableTrackingOptions,
    default_basis,
    linear_ramp,
    orthogonalize,
    pauli_basis,
    run_observable_tracking,
    scalar_targets_from_geodesic,
    targets_from_geodesic,
)
from .systems import random_field, resonant_field

ALGORITHMS = ("grad", "utrack", "vtrack", "strack")
TRACE_FIELDS = ("s", "phi", "grad_norm", "fluence", "condition", "track_err", "pathlength_cum")

EXIT_OK = 0
EXIT_STALL = 2
EXIT_SINGULAR = 3

DEFAULT_GRID = {"T": 20.0, "q": 501, "p": 201, "ds": 0.005, "s_max": None}
DEFAULT_OPTIONS = {
    "beta": None,            # error-correction gain; None means 1/ds (vtrack) or 1 (strack)
    "fluence": False,
    "strict": False,
    "correction": "combined",
    "integrator": "euler",
    "observables": None,     # int m, Pauli labels such as "xyz", or a list of matrices
    "target": "geodesic",    # strack: geodesic | ramp
    "cap": 1e8,
    "phi_tol": 1e-6,
    "grad_tol": 1e-8,
}
DEFAULT_FIELD = {"kind": "random", "amplitude": 0.1, "modes": 4, "rotation": math.pi / 2,
                 "frequency": None, "phase": 0.0, "values": None}
HERMITIAN_LOAD_TOL = 1e-10


# ------------------------------------------------------------------ config

@dataclass
class RunConfig:
    model: SystemModel
    rho0: np.ndarray
    theta: np.ndarray
    grid: dict
    algorithm: str
    options: dict
    initial_field: dict
    seed: int
    output: str | None
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def time_grid(self):
        return TimeGrid(self.grid["T"], self.grid["q"])

    def echo(self):
        """The configuration with defaults filled in, as plain data."""
        out = copy.deepcopy(self.raw)
        out["grid"] = dict(self.grid)
        out["algorithm"] = self.algorithm
        out["options"] = {k: v for k, v in self.options.items() if not isinstance(v, np.ndarray)}
        out["initial_field"] = dict(self.initial_field)
        out["seed"] = self.seed
        return out


def _parse_number(x, path):
    if isinstance(x, bool):
        raise ConfigError("expected a number", path)
    if isinstance(x, (int, float)):
        return complex(x)
    if isinstance(x, (list, tuple)) and len(x) == 2 and all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in x):
        return complex(x[0], x[1])
    raise ConfigError("expected a number or a [re, im] pair", path)


def parse_matrix(data, n, path, hermitian=True):
    """Row-major nested list -> complex ndarray of shape (n, n)."""
    if not isinstance(data, (list, tuple)) or len(data) != n:
        raise ConfigError(f"expected {n} rows", path)
    rows = []
    for i, row in enumerate(data):
        if not isinstance(row, (list, tuple)) or len(row) != n:
            raise ConfigError(f"expected {n} entries", f"{path}[{i}]")
        rows.append([_parse_number(x, f"{path}[{i}][{j}]") for j, x in enumerate(row)])
    m = np.array(rows, dtype=np.complex128)
    if not np.all(np.isfinite(m)):
        raise ConfigError("non-finite entry", path)
    if hermitian and hermiticity_error(m) > HERMITIAN_LOAD_TOL:
        raise ConfigError("matrix is not Hermitian", path)
    return m


def _require(mapping, key, path):
    if not isinstance(mapping, dict) or key not in mapping:
        raise ConfigError("missing required field", f"{path}.{key}" if path else key)
    return mapping[key]


def _positive(value, path, integer=False):
    ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    if ok and integer:
        ok = float(value).is_integer()
    if not ok or not value > 0 or not math.isfinite(value):
        raise ConfigError("must be a positive " + ("integer" if integer else "number"), path)
    return int(value) if integer else float(value)


def parse_config(data):
    """Validate a configuration mapping and apply defaults."""
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a mapping")
    system = _require(data, "system", "")
    n_raw = _require(system, "N", "system")
    n = _positive(n_raw, "system.N", integer=True)
    if n < 2:
        raise ConfigError("must be at least 2", "system.N")
    h0 = parse_matrix(_require(system, "H0", "system"), n, "system.H0")
    mu = parse_matrix(_require(system, "mu", "system"), n, "system.mu")
    morph = system.get("morph")
    ends = None
    if morph is not None:
        ends = []
        for key in ("start", "end"):
            part = _require(morph, key, "system.morph")
            ends.append((parse_matrix(_require(part, "H0", f"system.morph.{key}"), n,
                                      f"system.morph.{key}.H0"),
                         parse_matrix(_require(part, "mu", f"system.morph.{key}"), n,
                                      f"system.morph.{key}.mu")))
    model = SystemModel(h0, mu, *(ends or (None, None)))

    rho0 = parse_matrix(_require(data, "rho0", ""), n, "rho0")
    try:
        rho0 = check_density(rho0)
    except QTrackError as exc:
        raise ConfigError(str(exc), "rho0") from None
    theta = parse_matrix(_require(data, "theta", ""), n, "theta")

    grid = dict(DEFAULT_GRID)
    user_grid = data.get("grid") or {}
    if not isinstance(user_grid, dict):
        raise ConfigError("must be a mapping", "grid")
    unknown = set(user_grid) - set(DEFAULT_GRID)
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)}", "grid")
    grid.update(user_grid)
    grid["T"] = _positive(grid["T"], "grid.T")
    grid["q"] = _positive(grid["q"], "grid.q", integer=True)
    grid["p"] = _positive(grid["p"], "grid.p", integer=True)
    grid["ds"] = _positive(grid["ds"], "grid.ds")
    if grid["q"] < 2:
        raise ConfigError("must be at least 2", "grid.q")
    if grid["p"] < 2:
        raise ConfigError("must be at least 2", "grid.p")
    if grid["s_max"] is not None:
        grid["s_max"] = _positive(grid["s_max"], "grid.s_max")

    algorithm = data.get("algorithm", "grad")
    if algorithm not in ALGORITHMS:
        raise ConfigError(f"must be one of {ALGORITHMS}", "algorithm")
    if model.morphing and algorithm != "utrack":
        raise ConfigError("morphing is only supported by utrack", "system.morph")

    options = dict(DEFAULT_OPTIONS)
    user_opts = data.get("options") or {}
    if not isinstance(user_opts, dict):
        raise ConfigError("must be a mapping", "options")
    unknown = set(user_opts) - set(DEFAULT_OPTIONS)
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)}", "options")
    options.update(user_opts)
    if options["correction"] not in ("combined", "separate", "none"):
        raise ConfigError("must be combined, separate or none", "options.correction")
    if options["integrator"] not in ("euler", "rk4"):
        raise ConfigError("must be euler or rk4", "options.integrator")
    if options["target"] not in ("geodesic", "ramp"):
        raise ConfigError("must be geodesic or ramp", "options.target")
    if options["beta"] is not None:
        b = options["beta"]
        if not isinstance(b, (int, float)) or isinstance(b, bool) or b < 0:
            raise ConfigError("must be a non-negative number", "options.beta")
    obs = options["observables"]
    if isinstance(obs, list):
        options["observables"] = [parse_matrix(o, n, f"options.observables[{i}]")
                                  for i, o in enumerate(obs)]
    elif obs is not None and not isinstance(obs, (int, str)):
        raise ConfigError("must be an integer, Pauli labels or a list of matrices",
                          "options.observables")

    init = dict(DEFAULT_FIELD)
    user_init = data.get("initial_field") or {}
    if not isinstance(user_init, dict):
        raise ConfigError("must be a mapping", "initial_field")
    unknown = set(user_init) - set(DEFAULT_FIELD)
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)}", "initial_field")
    init.update(user_init)
    if init["kind"] not in ("random", "resonant", "zero", "samples"):
        raise ConfigError("must be random, resonant, zero or samples", "initial_field.kind")
    if init["kind"] == "samples":
        vals = init["values"]
        if not isinstance(vals, list) or len(vals) != grid["q"]:
            raise ConfigError(f"expected {grid['q']} samples", "initial_field.values")

    seed = data.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError("must be a non-negative integer", "seed")
    return RunConfig(model, rho0, theta, grid, algorithm, options, init, seed,
                     data.get("output"), copy.deepcopy(data))


def load_config(path):
    """Read and validate a YAML/JSON configuration file."""
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read configuration: {exc}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse configuration: {exc}") from None
    return parse_config(data)


# ------------------------------------------------------------------ running

def _carrier(model):
    w = np.linalg.eigvalsh(model.H0)
    return float(w[-1] - w[0])


def initial_field(cfg):
    grid = cfg.time_grid
    spec = cfg.initial_field
    freq = spec["frequency"] if spec["frequency"] is not None else _carrier(cfg.model.at(0.0))
    kind = spec["kind"]
    if kind == "zero":
        return np.zeros(grid.q)
    if kind == "samples":
        return np.asarray(spec["values"], dtype=float)
    if kind == "resonant":
        return resonant_field(grid, spec["rotation"], freq, spec["phase"])
    rng = np.random.default_rng(cfg.seed)
    return random_field(grid, rng, int(spec["modes"]), float(spec["amplitude"]), freq)


def system_fingerprint(cfg):
    """Hash of the physical problem (model, state, observable, time grid)."""
    def mat(m):
        return np.round(np.asarray(m, dtype=np.complex128).view(float), 12).tolist()
    payload = {"H0": mat(cfg.model.H0), "mu": mat(cfg.model.mu),
               "rho0": mat(cfg.rho0), "theta": mat(cfg.theta),
               "T": cfg.grid["T"], "q": cfg.grid["q"]}
    if cfg.model.morphing:
        payload["morph"] = [[mat(h), mat(m)] for h, m in (cfg.model.morph_start,
                                                          cfg.model.morph_end)]
    blob = json.dumps(payload, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _observable_basis(cfg):
    obs = cfg.options["observables"]
    n = cfg.model.dim
    if obs is None:
        return default_basis(cfg.theta, n * n - 1)
    if isinstance(obs, int):
        return default_basis(cfg.theta, obs)
    if isinstance(obs, str):
        if n != 2:
            raise ConfigError("Pauli labels need N = 2", "options.observables")
        return pauli_basis(obs)
    return orthogonalize(obs)


@dataclass
class RunReport:
    final_phi: float | None
    phi_max: float
    iterations: int
    final_track_err: float | None
    pathlength: float
    geodesic_distance: float
    wall_time: float
    algorithm: str = ""
    stop_reason: str = ""
    exit_code: int = EXIT_OK
    fingerprint: str = ""
    seed: int = 0
    error: str | None = None
    backend: str = ""
    warnings: list = field(default_factory=list)

    def to_dict(self):
        return dict(self.__dict__)


def run(cfg, out_dir=None, strict=None, seed=None):
    """Execute a configured run and persist its artifacts.

    Returns
    -------
    (RunReport, OptimizationTrace)
    """
    if seed is not None:
        cfg = copy.copy(cfg)
        cfg.seed = int(seed)
    opts = dict(cfg.options)
    if strict is not None:
        opts["strict"] = bool(strict)
    grid = cfg.time_grid
    model = cfg.model
    rho, theta = cfg.rho0, cfg.theta
    row0 = initial_field(cfg)
    p, ds = cfg.grid["p"], cfg.grid["ds"]
    field0 = ControlField(row0, grid, ds)
    U0 = propagate(model.at(0.0), row0, grid).final
    special = model.is_traceless()
    W = nearest_optimum(U0, rho, theta, special=special)
    _, phi_max = kinematic_optimum(rho, theta)
    trace = OptimizationTrace()
    exit_code, error = EXIT_OK, None
    t0 = time.perf_counter()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            if cfg.algorithm == "grad":
                stop = StopRule(opts["phi_tol"], opts["grad_tol"], cfg.grid["s_max"], p)
                run_gradient_flow(model, ControlField(np.tile(row0, (p, 1)), grid, ds), rho,
                                  theta, stop, opts["integrator"], trace=trace)
                if trace.stop_reason not in ("converged", "critical"):
                    exit_code = EXIT_STALL
            elif cfg.algorithm == "utrack":
                track = geodesic(U0, W, p)
                topts = TrackingOptions(correction=opts["correction"],
                                        integrator=opts["integrator"],
                                        fluence=bool(opts["fluence"]), strict=opts["strict"],
                                        cap=float(opts["cap"]))
                run_unitary_tracking(model, field0, track, topts, rho, theta, trace=trace)
            else:
                track = geodesic(U0, W, p)
                oopts = ObservableTrackingOptions(strict=opts["strict"], cap=float(opts["cap"]),
                                                  fluence=bool(opts["fluence"]),
                                                  integrator=opts["integrator"])
                if cfg.algorithm == "vtrack":
                    basis = _observable_basis(cfg)
                    spec = targets_from_geodesic(track, rho, basis, opts["beta"])
                else:
                    basis = None
                    beta = 1.0 if opts["beta"] is None else opts["beta"]
                    if opts["target"] == "ramp":
                        spec = linear_ramp(expectation(U0, rho, theta), phi_max, p, beta)
                    else:
                        spec = scalar_targets_from_geodesic(track, rho, theta, beta)
                run_observable_tracking(model, field0, spec, basis, rho, theta, oopts,
                                        trace=trace)
        except StalledOptimization as exc:
            exit_code, error = EXIT_STALL, str(exc)
        except (SingularGMatrix, NearCriticalSingularity) as exc:
            exit_code, error = EXIT_SINGULAR, str(exc)
    wall = time.perf_counter() - t0
    messages = sorted({f"{w.category.__name__}: {w.message}" for w in caught})
    if not trace.stop_reason:
        trace.stop_reason = "aborted"
    final = trace.records[-1] if trace.records else None
    if cfg.algorithm == "utrack" and final is not None:
        final_err = float(np.linalg.norm(final.U - W))
    else:
        final_err = final.track_err if final is not None else None
    report = RunReport(
        final_phi=final.phi if final is not None else None,
        phi_max=phi_max,
        iterations=max(len(trace) - 1, 0),
        final_track_err=final_err,
        pathlength=final.pathlength_cum if final is not None else 0.0,
        geodesic_distance=geodesic_distance(U0, W),
        wall_time=wall,
        algorithm=cfg.algorithm,
        stop_reason=trace.stop_reason,
        exit_code=exit_code,
        fingerprint=system_fingerprint(cfg),
        seed=cfg.seed,
        error=error,
        backend=_backend.backend_name(),
        warnings=messages,
    )
    target = out_dir if out_dir is not None else cfg.output
    if target is not None:
        write_artifacts(Path(target), trace, report, grid, cfg)
    return report, trace


# -------------------------------------------------------------- persistence

def _num(x):
    if x is None:
        return "null"
    x = float(x)
    if math.isnan(x):
        return '"nan"'
    if math.isinf(x):
        return '"inf"' if x > 0 else '"-inf"'
    return format(x, ".17g")


def trace_lines(trace):
    """One JSON object per record with the fixed field order."""
    for r in trace.records:
        yield "{" + ", ".join(f'"{k}": {_num(getattr(r, k))}' for k in TRACE_FIELDS) + "}"


def write_artifacts(out, trace, report, grid, cfg=None):
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "trace.jsonl", "w", newline="\n") as fh:
        for line in trace_lines(trace):
            fh.write(line + "\n")
    final_field = trace.final_field
    if final_field is None:
        final_field = np.zeros(grid.q)
    with open(out / "field_final.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "epsilon"])
        for t, e in zip(grid.times, final_field):
            w.writerow([format(t, ".17g"), format(e, ".17g")])
    data = report.to_dict()
    if cfg is not None:
        data["config"] = _jsonable(cfg.echo())
    with open(out / "report.json", "w") as fh:
        json.dump(_jsonable(data), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, complex):
        return [x.real, x.imag]
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    if isinstance(x, np.generic):
        return _jsonable(x.item())
    return x


def read_trace(path):
    """Parse trace.jsonl back into a list of dicts (``"inf"`` becomes float inf)."""
    out = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                out.append({k: (float(v) if isinstance(v, str) else v) for k, v in rec.items()})
    return out


# -------------------------------------------------------------- comparison

COMPARE_COLUMNS = ("path", "algorithm", "iterations", "pathlength", "final_phi",
                   "final_track_err", "fingerprint", "compatible", "error")


def compare(report_paths, out_csv=None):
    """Tabulate several reports and append population-variance rows.

    Reports whose system fingerprint differs from the first readable report
    are flagged ``compatible = False``; unreadable paths get an error row.

    Returns
    -------
    list of dict
        The table rows, including the trailing variance rows.
    """
    if len(report_paths) < 2:
        raise ConfigError("compare needs at least two reports")
    rows, ref = [], None
    for path in report_paths:
        p = Path(path)
        if p.is_dir():
            p = p / "report.json"
        row = {c: "" for c in COMPARE_COLUMNS}
        row["path"] = str(path)
        try:
            data = json.loads(p.read_text())
        except (OSError, ValueError) as exc:
            row["error"] = f"cannot read report: {exc}"
            row["compatible"] = False
            rows.append(row)
            continue
        if ref is None:
            ref = data.get("fingerprint")
        for key in ("algorithm", "iterations", "pathlength", "final_phi", "final_track_err",
                    "fingerprint"):
            row[key] = data.get(key)
        row["compatible"] = data.get("fingerprint") == ref
        if not row["compatible"]:
            row["error"] = "system fingerprint differs from the first report"
        rows.append(row)
    good = [r for r in rows if r["compatible"] is True]
    for key in ("iterations", "pathlength", "final_phi"):
        vals = [float(r[key]) for r in good if r[key] is not None]
        var = float(np.var(vals)) if vals else float("nan")
        row = {c: "" for c in COMPARE_COLUMNS}
        row["path"] = f"variance:{key}"
        row[key] = var
        rows.append(row)
    if out_csv is not None:
        with open(out_csv, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=COMPARE_COLUMNS, lineterminator="\n")
            w.writeheader()
            for r in rows:
                w.writerow({k: ("" if v is None else v) for k, v in r.items()})
    return rows
