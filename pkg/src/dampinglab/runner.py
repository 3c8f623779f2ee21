"""Experiment runner: config parsing, dispatch, CSV/JSON/markdown outputs."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import csv
import json
import logging
import math
from pathlib import Path
import time

import numpy as np
import yaml

from . import __version__
from .damping_core import DampingSpec, damping_integral
from .fitting import fit_log_exponent, fit_power_exponent, fit_power_log, log_grid
from .green_verifier import RadialProfile, decay_prediction, predicted_envelope, radial_norm_series, verify_green_decay
from .gronwall import GronwallScenario, calibrate, gronwall_check, random_suite
from .kernel_calculus import (
    predict_convolution,
    predict_log_convolution,
    quad_convolution,
    quad_log_convolution,
    quad_series,
    sharp_convolution,
    sharp_log_convolution,
)
from .mode_dynamics import (
    ZonePartition,
    classify_zone,
    diagonalization_residual,
    elliptic_residual,
)
from . import nonlinear_torus as nt

log = logging.getLogger(__name__)

EXPERIMENTS = ("linear-decay", "wave-decay", "green-verify", "zones", "residuals",
               "convolution", "gronwall", "nonlinear")

DEFAULTS = {
    "mu": 1.0,
    "lambda": -0.5,
    "n": 3,
    "profile.kind": "gaussian",
    "profile.scale": 1.0,
    "alpha": 0,
    "s": 0.0,
    "t_grid.lo": 1e2,
    "t_grid.hi": 1e6,
    "t_grid.points": 17,
    "t_grid.spacing": "log",
    "zone.eps": 0.125,
    "zone.N": 2.0,
    "zone.c0": None,
    "tol.exponent": 0.03,
    "tol.ratio": 2.0,
    "tol.log_exponent": 0.15,
    "tol.convolution": 0.05,
    "tol.slope": 0.1,
    "tol.det": 1e-6,
    "tol.identity": 1e-10,
    "tol.discrepancy": 10.0,
    "tol.vorticity": 0.05,
    "tol.energy": 2.0,
    "torus.N": 128,
    "torus.L": 2 * math.pi,
    "torus.gamma": 1.4,
    "torus.amplitude": 1e-3,
    "torus.t_end": 200.0,
    "torus.delta": None,
    # runner-level keys
    "experiment": None,
    "entries": None,
    "grid_size": 128,
    "xi": [0.05, 0.1, 0.2],
    "torus.cfl": 0.8,
    "gronwall.count": 200,
    "fit.min_span": 0.9,
}


class ConfigError(ValueError):
    pass


def _flatten(d, prefix=""):
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def load_config(source) -> dict:
    """Parse a YAML file (nested or dotted keys) into a flat dict over DEFAULTS."""
    if isinstance(source, dict):
        raw = source
    else:
        text = Path(source).read_text()
        try:
            raw = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"malformed config {source}: {exc}") from exc
    if not raw:
        raise ConfigError("empty config")
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping of keys to values")
    flat = _flatten(raw)
    unknown = sorted(set(flat) - set(DEFAULTS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    cfg = dict(DEFAULTS)
    cfg.update(flat)
    if cfg["t_grid.spacing"] != "log":
        raise ConfigError("only t_grid.spacing=log is supported")
    return cfg


def _spec(cfg):
    return DampingSpec(float(cfg["mu"]), float(cfg["lambda"]))


def _t_grid(cfg):
    return log_grid(float(cfg["t_grid.lo"]), float(cfg["t_grid.hi"]), int(cfg["t_grid.points"]))


@dataclass
class Row:
    quantity: str
    predicted: float
    measured: float
    tol: float
    kind: str = "abs"  # abs: |measured - predicted| <= tol; max: measured <= tol; min: measured >= tol

    @property
    def passed(self):
        if not np.isfinite(self.measured):
            return False
        if self.kind == "max":
            return self.measured <= self.tol
        if self.kind == "min":
            return self.measured >= self.tol
        return abs(self.measured - self.predicted) <= self.tol


@dataclass
class RunResult:
    experiment: str
    rows: list = field(default_factory=list)
    files: list = field(default_factory=list)

    @property
    def passed(self):
        return all(r.passed for r in self.rows)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])


def _fmt(x):
    if x is None or (isinstance(x, float) and not np.isfinite(x)):
        return "-"
    return f"{x:.4g}"


def report_table(rows):
    lines = ["| quantity | predicted | measured | tolerance | result |", "|---|---|---|---|---|"]
    for r in rows:
        tol = {"abs": f"±{_fmt(r.tol)}", "max": f"≤ {_fmt(r.tol)}", "min": f"≥ {_fmt(r.tol)}"}[r.kind]
        lines.append(f"| {r.quantity} | {_fmt(r.predicted)} | {_fmt(r.measured)} | {tol} | "
                     f"{'PASS' if r.passed else 'FAIL'} |")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- experiments

def _norm_rows(cfg, out, tag, series, spec, n, alpha, entries_pred):
    rows, files = [], []
    tol = float(cfg["tol.exponent"])
    for entry, label in entries_pred:
        ns = series[entry]
        pred = decay_prediction(entry, alpha, n, spec.lam)
        env = predicted_envelope(pred, spec, n, float(cfg["s"]), ns.t)
        path = out / f"{tag}_{entry}.csv"
        ns.to_csv(path, env)
        files.append(path.name)
        if spec.critical:
            # algebraic part from the joint fit, log part with the envelope prefactor declared
            joint = fit_power_log(ns.pairs())
            fit = fit_log_exponent(ns.pairs(), prefactor=pred.t_prefactor, min_span=float(cfg["fit.min_span"]))
            rows.append(Row(f"{label} algebraic exponent", pred.t_prefactor, joint.exponent, tol))
            rows.append(Row(f"{label} log exponent", -0.5 * pred.gamma_power, fit.log_exponent,
                            float(cfg["tol.log_exponent"])))
        else:
            fit = fit_power_exponent(ns.pairs())
            rows.append(Row(f"{label} exponent", pred.t_prefactor - 0.5 * (1 + spec.lam) * pred.gamma_power,
                            fit.exponent, tol))
    return rows, files


def exp_linear_decay(cfg, out, seed, threads):
    spec, n, alpha = _spec(cfg), int(cfg["n"]), int(cfg["alpha"])
    prof = RadialProfile(cfg["profile.kind"], float(cfg["profile.scale"]), n)
    res = radial_norm_series(["G11", "G21"], alpha, prof, spec, float(cfg["s"]), _t_grid(cfg),
                             grid_size=int(cfg["grid_size"]))
    rows, files = _norm_rows(cfg, out, "linear", res.series, spec, n, alpha,
                             [("G11", "v norm"), ("G21", "u norm")])
    rows.append(Row("determinant law defect", 0.0, res.info.det_defect, float(cfg["tol.det"]), "max"))
    return rows, files


def exp_wave_decay(cfg, out, seed, threads):
    spec, n, alpha = _spec(cfg), int(cfg["n"]), int(cfg["alpha"])
    prof = RadialProfile(cfg["profile.kind"], float(cfg["profile.scale"]), n)
    t = _t_grid(cfg)

    def one(entry):
        return radial_norm_series([entry], alpha, prof, spec, float(cfg["s"]), t,
                                  grid_size=int(cfg["grid_size"])).series

    with ThreadPoolExecutor(max_workers=max(1, int(threads))) as pool:
        parts = list(pool.map(one, ["wave_v", "wave_u"]))
    series = {**parts[0], **parts[1]}
    return _norm_rows(cfg, out, "wave", series, spec, n, alpha, [("wave_v", "wave v"), ("wave_u", "wave u")])


def exp_green_verify(cfg, out, seed, threads):
    spec, n, alpha = _spec(cfg), int(cfg["n"]), int(cfg["alpha"])
    prof = RadialProfile(cfg["profile.kind"], float(cfg["profile.scale"]), n)
    entries = cfg["entries"] or ["G11", "G12", "G21", "G22", "G22opt"]
    t = _t_grid(cfg)
    s = float(cfg["s"])
    coupled = [e for e in entries if not e.startswith("wave")]
    series = {}
    if coupled:
        series.update(radial_norm_series(coupled, alpha, prof, spec, s, t, grid_size=int(cfg["grid_size"])).series)
    for e in entries:
        if e.startswith("wave"):
            series.update(radial_norm_series([e], alpha, prof, spec, s, t, grid_size=int(cfg["grid_size"])).series)
    rows, files = [], []
    rt = float(cfg["tol.ratio"])
    for e in entries:
        v = verify_green_decay(e, alpha, prof, spec, n, s, t, series=series[e], ratio_tol=rt)
        path = out / f"green_{e}.csv"
        v.series.to_csv(path, v.envelope)
        files.append(path.name)
        rows.append(Row(f"{e} ratio growth", 1.0, v.upper_ratio, rt, "max"))
        if v.lower_bounded is not None:
            rows.append(Row(f"{e} ratio decay", 1.0, v.lower_ratio, 1.0 / rt, "min"))
    return rows, files


def _partition(cfg, spec):
    c0 = cfg["zone.c0"]
    return ZonePartition.default(spec, eps=float(cfg["zone.eps"]), big_n=float(cfg["zone.N"]),
                                 c0=None if c0 is None else float(c0))


def exp_zones(cfg, out, seed, threads):
    spec = _spec(cfg)
    part = _partition(cfg, spec)
    t = np.concatenate([[0.0], _t_grid(cfg)])
    xi = np.geomspace(1e-3, 1e2, int(cfg["t_grid.points"]))
    table = []
    for x in xi:
        for tt in t:
            table.append((repr(float(tt)), repr(float(x)), classify_zone("v", spec, part, tt, x),
                          classify_zone("u", spec, part, tt, x)))
    path = out / "zones.csv"
    _write_csv(path, ("t", "xi", "label_v", "label_u"), table)
    rows = []
    low = [x for x in xi if x <= part.c0]
    ending = 0
    for x in low:
        labels = [classify_zone("v", spec, part, tt, x) for tt in t]
        first = labels.index("Ell") if "Ell" in labels else len(labels)
        ending += int(first < len(labels) and all(lb == "Ell" for lb in labels[first:]))
    rows.append(Row("low-frequency columns ending in Ell", len(low), ending, 0.0))
    return rows, [path.name]


def _ray_points(spec, part, xi, t):
    return [tt for tt in t if classify_zone("v", spec, part, tt, xi) == "Ell"]


def exp_residuals(cfg, out, seed, threads):
    spec = _spec(cfg)
    part = _partition(cfg, spec)
    t = _t_grid(cfg)
    target = -(2.0 - spec.lam)
    tol = float(cfg["tol.slope"])
    rows, table = [], []
    worst_defect = 0.0
    for x in cfg["xi"]:
        pts = _ray_points(spec, part, float(x), t)
        if len(pts) < 5 or pts[-1] < 1e3 * pts[0]:
            rows.append(Row(f"ray xi={x} elliptic span", 3.0, math.log10(pts[-1] / pts[0]) if pts else 0.0,
                            3.0, "min"))
            continue
        rv = [elliptic_residual("v", spec, tt, x, part) for tt in pts]
        dr = [diagonalization_residual(spec, tt, x, part) for tt in pts]
        r1 = [d.r1_norm for d in dr]
        worst_defect = max(worst_defect, max(d.identity_defect for d in dr))
        for tt, a, d in zip(pts, rv, dr):
            table.append((repr(float(tt)), repr(float(x)), repr(float(a)), repr(d.r1_norm), repr(d.identity_defect)))
        sv = fit_power_exponent(np.column_stack([pts, rv])).exponent
        s1 = fit_power_exponent(np.column_stack([pts, r1])).exponent
        rows.append(Row(f"slope ln|r_v|, xi={x}", target, sv, tol))
        rows.append(Row(f"slope ln||R1||, xi={x}", target, s1, tol))
    rows.append(Row("diagonalization identity defect", 0.0, worst_defect, float(cfg["tol.identity"]), "max"))
    path = out / "residuals.csv"
    _write_csv(path, ("t", "xi", "r_v", "r1_norm", "identity_defect"), table)
    return rows, [path.name]


CONV_BETAS = (1.0, 2.0, 4.0)
CONV_GAMMAS = (0.5, 1.0, 2.0)
CONV_LAMS = (-0.25, -0.5, -0.75)
LOG_BETAS = (1.0, 2.0)
LOG_GAMMAS = (0.5, 1.0, 3.0)


def convolution_cell(beta, g, lam, t=None):
    """Fitted exponent of the algebraic convolution against the classifier and the sharp rate."""
    t = np.geomspace(1e3, 1e7, 17) if t is None else t
    vals = quad_series(quad_convolution, t, beta, g, lam)
    pred = predict_convolution(beta, g, lam)
    fit = fit_power_exponent(np.column_stack([t, vals]), log_correction=pred.log_power)
    return pred, sharp_convolution(beta, g, lam), fit


def log_convolution_cell(beta, g, t=None):
    t = np.geomspace(1e4, 1e10, 13) if t is None else t
    vals = quad_series(quad_log_convolution, t, beta, g)
    pred = predict_log_convolution(beta, g)
    pairs = np.column_stack([t, vals])
    if pred.loglog_flag:
        # ln ln growth: fit ln J against ln ln ln
        x = np.log(np.log(np.log(np.e ** np.e + t)))
        slope = float(np.polyfit(x, np.log(vals), 1)[0])
        return pred, sharp_log_convolution(beta, g), slope, 1.0
    fit = fit_log_exponent(pairs, min_span=0.0)
    return pred, sharp_log_convolution(beta, g), fit.log_exponent, pred.log_power


def exp_convolution(cfg, out, seed, threads):
    rows, table = [], []
    cells = [(b, g, lam) for lam in CONV_LAMS for b in CONV_BETAS for g in CONV_GAMMAS]
    log_cells = [(b, g) for b in LOG_BETAS for g in LOG_GAMMAS]
    tc = float(cfg["tol.convolution"])
    with ThreadPoolExecutor(max_workers=max(1, int(threads))) as pool:
        alg = list(pool.map(lambda c: convolution_cell(*c), cells))
        lg = list(pool.map(lambda c: log_convolution_cell(*c), log_cells))
    for (b, g, lam), (pred, sharp, fit) in zip(cells, alg):
        tol = 2 * tc if pred.log_power else tc
        rows.append(Row(f"min-kernel beta={b:g} gamma={g:g} lam={lam:g}", pred.exponent, fit.exponent, tol))
        table.append(("algebraic", b, g, lam, pred.case_id, pred.exponent, pred.log_power,
                      sharp.exponent, sharp.log_power, fit.exponent))
    for (b, g), (pred, sharp, slope, target) in zip(log_cells, lg):
        rows.append(Row(f"log-kernel beta={b:g} gamma={g:g}", target, slope, 2 * tc))
        table.append(("logarithmic", b, g, -1.0, pred.case_id, 0.0, target, sharp.exponent,
                      sharp.log_power, slope))
    path = out / "convolution.csv"
    _write_csv(path, ("family", "beta", "gamma", "lambda", "case", "predicted_exponent",
                      "predicted_log_power", "sharp_exponent", "sharp_log_power", "measured"), table)
    return rows, [path.name]


def exp_gronwall(cfg, out, seed, threads):
    rows = []
    decay = GronwallScenario(1.0, 0.5, 1.0, 1.0, lambda t: 0.0 * np.asarray(t, float),
                             lambda t: 0.0 * np.asarray(t, float), 1.0, 20.0, monotone=True)
    rep = gronwall_check(decay)
    exact = float(np.max(np.abs(rep.F - np.exp(-rep.t))))
    rows.append(Row("pure decay max |F - F0 exp(-eta t)|", 0.0, exact, 1e-8, "max"))
    rows.append(Row("pure decay sup ratio", 1.0, rep.sup_ratio, 1.0 + 1e-8, "max"))
    eta, om = 2.0, 0.6
    fixed = GronwallScenario(eta, 0.5, 1.0, 1.0, lambda t: om + 0.0 * np.asarray(t, float),
                             lambda t: 0.0 * np.asarray(t, float), 0.5, 40.0)
    rf = gronwall_check(fixed)
    rows.append(Row("fixed point (omega/eta)^2", (om / eta) ** 2, float(rf.F[-1]), 1e-8))
    K = calibrate()
    rows.append(Row("fixed point sup ratio", 1.0, gronwall_check(fixed).sup_ratio, K, "max"))
    _, reps = random_suite(int(cfg["gronwall.count"]), seed=seed, K=K)
    ok = sum(bool(r.passed) for r in reps)
    path = out / "gronwall.csv"
    _write_csv(path, ("index", "sup_ratio", "decay_ratio", "passed"),
               [(i, r.sup_ratio, r.decay_ratio, int(bool(r.passed))) for i, r in enumerate(reps)])
    rows.append(Row(f"random scenarios within K={K:.3g}", len(reps), ok, 0.0))
    return rows, [path.name]


def nonlinear_comparison(cfg, seed=0, amplitude=None):
    """Nonlinear run and its linearized companion from the same random data."""
    spec = _spec(cfg)
    amp = float(cfg["torus.amplitude"] if amplitude is None else amplitude)
    sc = nt.SolverConfig(spec, grid=int(cfg["torus.N"]), box=float(cfg["torus.L"]), gamma=float(cfg["torus.gamma"]),
                         t_end=float(cfg["torus.t_end"]), delta=cfg["torus.delta"], cfl=float(cfg["torus.cfl"]))
    init = nt.random_initial_state(sc, amp, seed=seed)
    times = np.unique(np.concatenate([[0.0], np.geomspace(0.05, sc.t_end, 50)]))
    rn = nt.run(init, sc, times=times, keep_states=True)
    rl = nt.run(init, nt.linear_companion(sc), times=times, keep_states=True)
    n0 = nt.state_norm(init, sc)
    disc = np.array([nt.state_distance(a, b, sc) / n0 for a, b in zip(rn.history, rl.history)])
    return sc, init, rn, rl, disc


def vorticity_slope(report: nt.EnergyReport, spec, floor=1e-13):
    """Slope of ln||curl u|| against -int_0^t b while the curl stays above the roundoff floor."""
    t = np.asarray(report.t)
    c = np.asarray(report.curl)
    keep = c > floor * c[0]
    law = np.array([-damping_integral(spec, 0.0, x) for x in t[keep]])
    return float(np.polyfit(law, np.log(c[keep]), 1)[0]), int(keep.sum())


def energy_stability(report: nt.EnergyReport, t_min=1.0):
    t = np.asarray(report.t)
    e = np.asarray(report.energy_ratio)[t >= t_min]
    return float(e.max() / e.min())


def exp_nonlinear(cfg, out, seed, threads):
    sc, init, rn, rl, disc = nonlinear_comparison(cfg, seed)
    amp = float(cfg["torus.amplitude"])
    rn.to_csv(out / "torus_nonlinear.csv")
    rl.to_csv(out / "torus_linear.csv")
    _write_csv(out / "torus_discrepancy.csv", ("t", "relative_discrepancy"), list(zip(rn.t, disc)))
    (out / "torus_manifest.json").write_text(nt.manifest(sc, seed, amp, rn.wall + rl.wall))
    slope, npts = vorticity_slope(rn, sc.spec)
    rows = [
        Row("max relative discrepancy / amplitude", 0.0, float(disc.max()) / amp, float(cfg["tol.discrepancy"]), "max"),
        Row(f"vorticity log-slope vs exact law ({npts} samples)", 1.0, slope, float(cfg["tol.vorticity"])),
        Row("energy monitor max/min after t=1", 1.0, energy_stability(rn), float(cfg["tol.energy"]), "max"),
        Row("mean budget defect", 0.0, rn.mean_defect, float(cfg["tol.identity"]), "max"),
    ]
    return rows, ["torus_nonlinear.csv", "torus_linear.csv", "torus_discrepancy.csv", "torus_manifest.json"]


DISPATCH = {
    "linear-decay": exp_linear_decay,
    "wave-decay": exp_wave_decay,
    "green-verify": exp_green_verify,
    "zones": exp_zones,
    "residuals": exp_residuals,
    "convolution": exp_convolution,
    "gronwall": exp_gronwall,
    "nonlinear": exp_nonlinear,
}


def run_experiment(config, out="runs", experiment=None, seed=0, threads=1) -> RunResult:
    """Run one experiment and write its outputs under ``out/<experiment>``.

    Writes CSV series, ``manifest.json`` (config echo, seed, version, wall
    time, status) and ``report.md``.  On failure the manifest records the
    error and whatever was written stays in place.
    """
    cfg = load_config(config)
    name = experiment or cfg.get("experiment")
    if name not in DISPATCH:
        raise ConfigError(f"unknown experiment {name!r}; expected one of {', '.join(EXPERIMENTS)}")
    cfg["experiment"] = name
    run_dir = Path(out) / name
    run_dir.mkdir(parents=True, exist_ok=True)
    manifest = {"experiment": name, "config": cfg, "seed": int(seed), "version": __version__,
                "numpy": np.__version__, "csv_schema": 1}
    t0 = time.perf_counter()
    try:
        rows, files = DISPATCH[name](cfg, run_dir, int(seed), threads)
    except Exception as exc:
        manifest.update(status="error", error=f"{type(exc).__name__}: {exc}", wall_time=time.perf_counter() - t0)
        (run_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, default=str))
        raise
    result = RunResult(name, rows, files)
    manifest.update(status="PASS" if result.passed else "FAIL", files=files,
                    wall_time=time.perf_counter() - t0)
    (run_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, default=str))
    (run_dir / "rows.json").write_text(json.dumps([r.__dict__ | {"passed": r.passed} for r in rows], indent=2))
    (run_dir / "report.md").write_text(f"# {name}\n\n" + report_table(rows))
    log.info("%s: %s", name, manifest["status"])
    return result


def collect_report(out="runs"):
    """Merge the per-experiment rows under ``out`` into ``out/report.md``."""
    out = Path(out)
    parts, all_pass, found = [], True, 0
    for rows_file in sorted(out.glob("*/rows.json")):
        found += 1
        data = json.loads(rows_file.read_text())
        rows = [Row(d["quantity"], d["predicted"], d["measured"], d["tol"], d["kind"]) for d in data]
        all_pass &= all(r.passed for r in rows)
        parts.append(f"## {rows_file.parent.name}\n\n" + report_table(rows))
    if not found:
        raise FileNotFoundError(f"no experiment results under {out}")
    (out / "report.md").write_text("# Summary\n\n" + "\n".join(parts))
    return all_pass
