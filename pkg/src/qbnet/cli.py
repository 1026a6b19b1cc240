"""Command line experiment runner.

Verbs: ``check``, ``simulate``, ``estimate``, ``fit`` and ``reproduce-circuit``.
Experiments are described by a JSON document with the keys ``model``,
``psgs``, ``sampling``, ``noise``, ``tuples`` and ``fit``; command line flags
override individual entries.
"""

from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import os
import re
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from . import estimate as est
from . import pencil, presets, psgs, simulate, volterra
from .errors import QBNetError
from .model import SCMBasis, SubsystemQBTI, lump

EXIT_CONFIG = 2
EXIT_ASSUMPTION = 3
EXIT_MODULE = 1

DEFAULT_SETS = [
    {"label": "phi(1)", "estimates": [{"tuple": [1], "kind": "kernel"}]},
    {"label": "phi(1)+phi(1+1)",
     "estimates": [{"tuple": [1], "kind": "kernel"}, {"tuple": [1, 1], "kind": "summed"}]},
    {"label": "phi(1)+phi(1+1)+phi(1,1)",
     "estimates": [{"tuple": [1], "kind": "kernel"}, {"tuple": [1, 1], "kind": "summed"},
                   {"tuple": [1, 1], "kind": "kernel"}]},
]

DEFAULT_CONFIG = {
    "model": {"preset": "circuit", "theta": list(presets.CIRCUIT_THETA)},
    "psgs": {"frequencies": [4.5], "amplitudes": [5.0], "phases": [0.0]},
    "sampling": {"T": 0.05, "N_d": 10000, "dt": None, "per_decade": 10, "full_density": False},
    "noise": {"sigma": [0.01], "seed": 0, "replicas": 1},
    "tuples": {"estimate": [[1], [1, 1]], "truncation": 3, "max_order": 4},
    "fit": {"theta0": [0.1, 0.1], "bounds": None, "sets": DEFAULT_SETS},
}

TOP_KEYS = ("model", "psgs", "sampling", "noise", "tuples", "fit")


class ConfigError(QBNetError):
    def __init__(self, problems):
        self.problems = problems
        super().__init__("\n".join(problems))


# -- configuration --------------------------------------------------------------

def _key_line(text, key):
    if text is None:
        return None
    m = re.search(r'"%s"\s*:' % re.escape(key), text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path=None, text=None):
    """Parse a JSON config and merge it over the defaults.

    Returns ``(config, text)``; syntax errors raise :class:`ConfigError`
    with the offending line.
    """
    if path is not None:
        with open(path) as fh:
            text = fh.read()
    if text is None:
        return copy.deepcopy(DEFAULT_CONFIG), None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"line {exc.lineno}: invalid JSON: {exc.msg}"]) from exc
    if not isinstance(raw, dict):
        raise ConfigError(["line 1: config must be a JSON object"])
    unknown = [k for k in raw if k not in TOP_KEYS]
    if unknown:
        raise ConfigError([f"line {_key_line(text, k)}: unknown key '{k}' (allowed: {', '.join(TOP_KEYS)})"
                           for k in unknown])
    if isinstance(raw.get("model"), dict) and "preset" not in raw["model"]:
        # an inline model replaces the preset entirely
        base = copy.deepcopy(DEFAULT_CONFIG)
        base["model"] = {}
        return _merge(base, raw), text
    return _merge(DEFAULT_CONFIG, raw), text


def apply_flags(cfg, args):
    cfg = copy.deepcopy(cfg)
    if getattr(args, "seed", None) is not None:
        cfg["noise"]["seed"] = args.seed
    if getattr(args, "omega0", None) is not None:
        n = len(cfg["psgs"].get("frequencies", [])) or 1
        cfg["psgs"]["frequencies"] = [args.omega0] + list(cfg["psgs"].get("frequencies", [])[1:n])
    if getattr(args, "sigma", None) is not None:
        cfg["noise"]["sigma"] = args.sigma
    if getattr(args, "nd", None) is not None:
        cfg["sampling"]["N_d"] = args.nd
    if getattr(args, "truncation", None) is not None:
        cfg["tuples"]["truncation"] = args.truncation
    return cfg


@dataclass
class Experiment:
    subsystems: list
    basis: SCMBasis
    input_map: np.ndarray
    theta: np.ndarray
    model: object
    generator: psgs.PSGS
    eig: psgs.PSGSEigen
    T: float
    N_d: int
    dt: float
    checkpoints: list
    sigmas: list
    seed: int
    replicas: int
    tuples: list
    truncation: int
    max_order: int
    theta0: np.ndarray
    bounds: tuple
    sets: list
    config: dict = field(repr=False, default=None)


def _num(x, what, problems, line, positive=False, integer=False):
    ok = isinstance(x, (int, float)) and not isinstance(x, bool) and np.isfinite(x)
    if ok and integer and int(x) != x:
        ok = False
    if ok and positive and x <= 0:
        ok = False
    if not ok:
        kind = "positive " if positive else ""
        kind += "integer" if integer else "number"
        problems.append(f"line {line}: {what} must be a {kind}, got {x!r}")
    return ok


def _subsystem_from_dict(d, i):
    fields = ("E", "A_xx", "B_xv", "B_xu", "C_zx", "C_yx", "D_zv", "D_zu", "D_yv", "D_yu",
              "Gamma_xx", "Gamma_xv", "Gamma_xu")
    unknown = [k for k in d if k not in fields + ("name",)]
    if unknown:
        raise ValueError(f"subsystem {i + 1}: unknown matrices {unknown}")
    kw = {k: np.asarray(d[k], dtype=float) for k in fields if d.get(k) is not None}
    return SubsystemQBTI(index=i, name=d.get("name", f"subsystem {i + 1}"), **kw)


def checkpoints(N_d, per_decade=10, full=False):
    """Record lengths at which estimates are reported."""
    if full:
        return list(range(1, N_d + 1))
    if N_d < 1:
        return [N_d]
    k = np.arange(0, int(np.floor(per_decade * np.log10(N_d))) + 1)
    pts = np.unique(np.rint(10.0 ** (k / per_decade)).astype(int))
    pts = [int(p) for p in pts if p <= N_d]
    if pts[-1] != N_d:
        pts.append(int(N_d))
    return pts


def build_experiment(cfg, text=None) -> Experiment:
    """Validate a merged config and construct every object the run needs.

    All problems found are collected and raised together in one
    :class:`ConfigError`, each prefixed with the config line of its key.
    """
    problems = []
    L = lambda k: _key_line(text, k) or "?"
    mcfg = cfg["model"]
    subs = basis = J = theta = model = None
    try:
        if "preset" in mcfg:
            if mcfg["preset"] != "circuit":
                raise ValueError(f"unknown preset '{mcfg['preset']}' (available: circuit)")
            subs, basis, J = presets.circuit()
            theta = np.asarray(mcfg.get("theta", presets.CIRCUIT_THETA), dtype=float)
        else:
            subs = [_subsystem_from_dict(d, i) for i, d in enumerate(mcfg["subsystems"])]
            basis = SCMBasis(tuple(np.asarray(b, dtype=float) for b in mcfg["basis"]))
            J = None if mcfg.get("input_map") is None else np.asarray(mcfg["input_map"], dtype=float)
            theta = np.asarray(mcfg["theta"], dtype=float)
        model = lump(subs, basis, theta, input_map=J)
    except KeyError as exc:
        problems.append(f"line {L('model')}: model is missing key {exc}")
    except (ValueError, TypeError, QBNetError) as exc:
        problems.append(f"line {L('model')}: invalid model: {exc}")

    pc = cfg["psgs"]
    gen = eig = None
    try:
        freqs = pc["frequencies"]
        gen = psgs.multisine(freqs, pc.get("amplitudes", 1.0), pc.get("phases"),
                             m_u=model.m_u if model is not None else 1)
        eig = psgs.eigen(gen)
    except (KeyError, ValueError, TypeError, QBNetError) as exc:
        problems.append(f"line {L('psgs')}: invalid probing signal: {exc}")

    sc = cfg["sampling"]
    T, N_d = sc.get("T"), sc.get("N_d")
    _num(T, "sampling.T", problems, L("T"), positive=True)
    _num(N_d, "sampling.N_d", problems, L("N_d"), positive=True, integer=True)
    dt = sc.get("dt")
    if dt is None and isinstance(T, (int, float)):
        dt = T / 20
    elif dt is not None and _num(dt, "sampling.dt", problems, L("dt"), positive=True):
        if isinstance(T, (int, float)) and dt > T:
            problems.append(f"line {L('dt')}: sampling.dt = {dt} is coarser than T = {T}")

    nc = cfg["noise"]
    sig = nc.get("sigma", [0.0])
    sig = [sig] if isinstance(sig, (int, float)) else list(sig)
    for s in sig:
        if not (isinstance(s, (int, float)) and s >= 0):
            problems.append(f"line {L('sigma')}: noise levels must be nonnegative numbers, got {s!r}")
    seed = nc.get("seed", 0)
    _num(seed, "noise.seed", problems, L("seed"), integer=True)
    if isinstance(seed, int) and seed < 0:
        problems.append(f"line {L('seed')}: noise.seed must be nonnegative")
    replicas = nc.get("replicas", 1)
    _num(replicas, "noise.replicas", problems, L("replicas"), positive=True, integer=True)

    tc = cfg["tuples"]
    tuples = [tuple(int(i) for i in t) for t in tc.get("estimate", [[1]])]
    K = tc.get("truncation", 3)
    _num(K, "tuples.truncation", problems, L("truncation"), positive=True, integer=True)
    max_order = tc.get("max_order", psgs.DEFAULT_MAX_ORDER)
    _num(max_order, "tuples.max_order", problems, L("max_order"), positive=True, integer=True)
    if eig is not None:
        for t in tuples:
            if not t or any(not 1 <= i <= eig.m_xi_plus for i in t):
                problems.append(f"line {L('estimate')}: tuple {list(t)} must use indices "
                                f"1..{eig.m_xi_plus}")

    fc = cfg["fit"]
    theta0 = np.asarray(fc.get("theta0", [0.1] * (basis.m_theta if basis else 1)), dtype=float)
    if basis is not None and theta0.shape != (basis.m_theta,):
        problems.append(f"line {L('theta0')}: fit.theta0 needs {basis.m_theta} entries")
    bounds = fc.get("bounds")
    if bounds is not None and len(bounds) != 2:
        problems.append(f"line {L('bounds')}: fit.bounds must be [lower, upper]")
    sets = fc.get("sets", DEFAULT_SETS)
    for s in sets:
        for e in s.get("estimates", []):
            if e.get("kind", "kernel") not in est.KINDS:
                problems.append(f"line {L('sets')}: estimate kind must be one of {est.KINDS}")
            if eig is not None and any(not 1 <= i <= eig.m_xi_plus for i in e.get("tuple", [])):
                problems.append(f"line {L('sets')}: fit tuple {e.get('tuple')} out of range")
        w = s.get("weights")
        if w is not None and (len(w) != len(s.get("estimates", [])) or any(x < 0 for x in np.ravel(w))):
            problems.append(f"line {L('sets')}: weights of set '{s.get('label')}' must be nonnegative, "
                            "one per estimate")
    if problems:
        raise ConfigError(problems)
    return Experiment(subs, basis, J, theta, model, gen, eig, float(T), int(N_d), float(dt),
                      checkpoints(int(N_d), sc.get("per_decade", 10), sc.get("full_density", False)),
                      [float(s) for s in sig], int(seed), int(replicas), tuples, int(K), int(max_order),
                      theta0, None if bounds is None else tuple(bounds), sets, cfg)


# -- pipeline stages ------------------------------------------------------------

def run_checks(exp: Experiment):
    m = exp.model
    report = {}
    regular = pencil.is_regular(m.E, m.A)
    report["regular"] = regular
    report["impulse_free"] = bool(regular and pencil.is_impulse_free(m.E, m.A))
    spec = pencil.generalized_eigs(m.E, m.A)
    report["pencil_eigenvalues"] = [[float(l.real), float(l.imag)] for l in spec.eigenvalues]
    poles = pencil.transfer_poles(m.E, m.A, m.B, m.C) if report["impulse_free"] else spec.eigenvalues
    report["transfer_poles"] = [[float(l.real), float(l.imag)] for l in poles]
    report["stable"] = bool(np.all(np.real(poles) < 0))
    a = psgs.check_assumptions(exp.eig, spec, exp.max_order, exp.T)
    report["excitation"] = a.as_dict()
    report["ok"] = bool(report["regular"] and report["impulse_free"] and report["stable"] and a.ok)
    return report


def _fmt(x):
    return "%.17g" % x


def _tuple_label(t):
    return "-".join(str(i) for i in t)


def _records(exp: Experiment, traj):
    """Yield ``(sigma, replica, seed, record)`` for every noise cell."""
    for sigma in exp.sigmas:
        for r in range(exp.replicas):
            rng = simulate.replica_rng(exp.seed, r)
            yield sigma, r, exp.seed, simulate.sample_outputs(traj, exp.T, exp.N_d, sigma, rng=rng)


def _truth(exp, t):
    return volterra.phi_u(exp.model, exp.eig, t)


def nonparam_rows(exp, sigma, replica, rec, writer):
    out = {}
    for t in exp.tuples:
        truth = _truth(exp, t)
        ests = est.corr_estimates_prefix(rec, exp.eig, t, exp.checkpoints, exp.max_order)
        out[t] = ests
        for e in ests:
            for c, (v, tv) in enumerate(zip(e.phi_hat, truth)):
                writer.writerow([_fmt(sigma), replica, e.n_used - 1, _tuple_label(t), c + 1,
                                 _fmt(v.real), _fmt(v.imag), _fmt(tv.real), _fmt(tv.imag)])
    return out


def fit_rows(exp, sigma, replica, rec, writer, summary):
    final = {}
    for s in exp.sets:
        tuples = [tuple(e["tuple"]) for e in s["estimates"]]
        kinds = [e.get("kind", "kernel") for e in s["estimates"]]
        series = {t: est.corr_estimates_prefix(rec, exp.eig, t, exp.checkpoints, exp.max_order)
                  for t in set(tuples)}
        res = None
        for j, N in enumerate(exp.checkpoints):
            ests = [series[t][j] for t in tuples]
            prob = est.FitProblem(ests, exp.subsystems, exp.basis, exp.eig, exp.theta0, kinds=kinds,
                                  weights=s.get("weights"), bounds=exp.bounds, input_map=exp.input_map)
            res = est.fit_theta(prob)
            writer.writerow([_fmt(sigma), replica, N, s["label"]]
                            + [_fmt(v) for v in res.theta_hat]
                            + [int(res.converged), _fmt(res.jacobian_rcond)])
        final[s["label"]] = {
            "theta_hat": res.theta_hat.tolist(),
            "abs_error": np.abs(res.theta_hat - exp.theta).tolist(),
            "rel_error": (np.abs(res.theta_hat - exp.theta) / np.abs(exp.theta)).tolist(),
            "jacobian_rcond": res.jacobian_rcond, "converged": res.converged,
            "iterations": res.iterations}
    summary.setdefault("fits", []).append({"sigma": sigma, "replica": replica, "N_d": exp.N_d,
                                           "sets": final})
    return final


def _write_text(path, text):
    with open(path, "w", newline="\n") as fh:
        fh.write(text)


def run(exp: Experiment, out_dir, stages=("check", "simulate", "estimate", "fit"), log=print):
    """Run the pipeline and write its artifacts into ``out_dir``.

    Files: ``check.json``, ``trajectory.csv``, ``nonparam.csv``,
    ``estimates.json``, ``param.csv`` and ``summary.json`` (whichever the
    requested stages produce). Raises on the first module error after
    flushing what has been written so far.
    """
    os.makedirs(out_dir, exist_ok=True)
    summary = {"theta_true": exp.theta.tolist(), "T": exp.T, "N_d": exp.N_d, "dt": exp.dt,
               "sigmas": exp.sigmas, "seed": exp.seed, "replicas": exp.replicas, "runtimes": {}}
    clock = time.perf_counter

    def flush():
        _write_text(os.path.join(out_dir, "summary.json"), json.dumps(summary, indent=2) + "\n")

    t0 = clock()
    report = run_checks(exp)
    summary["checks"] = report
    summary["runtimes"]["check"] = clock() - t0
    _write_text(os.path.join(out_dir, "check.json"), json.dumps(report, indent=2) + "\n")
    if not report["ok"]:
        flush()
        raise AssumptionFailure(report)
    if stages == ("check",):
        flush()
        return summary

    t0 = clock()
    t_end = exp.T * exp.N_d
    traj = simulate.simulate_dae(exp.model, exp.eig, np.zeros(exp.model.m_x), t_end, exp.dt)
    summary["runtimes"]["simulate"] = clock() - t0
    summary["max_constraint_residual"] = float(np.max(traj.constraint_residuals))
    if "simulate" in stages and len(stages) == 2:
        traj.to_csv(os.path.join(out_dir, "trajectory.csv"))
        for sigma, r, seed, rec in _records(exp, traj):
            rec.to_csv(os.path.join(out_dir, f"samples_sigma{sigma:g}_rep{r}.csv"))
        flush()
        return summary

    nbuf, pbuf = io.StringIO(), io.StringIO()
    nw = csv.writer(nbuf, lineterminator="\n")
    nw.writerow(["sigma", "replica", "N_d", "tuple", "channel", "re_hat", "im_hat", "re_true", "im_true"])
    pw = csv.writer(pbuf, lineterminator="\n")
    pw.writerow(["sigma", "replica", "N_d", "set"]
                + [f"theta{i + 1}" for i in range(exp.basis.m_theta)] + ["converged", "jacobian_rcond"])
    all_final = []
    t_est = t_fit = 0.0
    try:
        for sigma, r, seed, rec in _records(exp, traj):
            t0 = clock()
            series = nonparam_rows(exp, sigma, r, rec, nw)
            t_est += clock() - t0
            if r == 0 and sigma == exp.sigmas[0]:
                est.estimates_to_json([s[-1] for s in series.values()],
                                      os.path.join(out_dir, "estimates.json"))
            if "fit" in stages:
                t0 = clock()
                all_final.append(fit_rows(exp, sigma, r, rec, pw, summary))
                t_fit += clock() - t0
    finally:
        _write_text(os.path.join(out_dir, "nonparam.csv"), nbuf.getvalue())
        if "fit" in stages:
            _write_text(os.path.join(out_dir, "param.csv"), pbuf.getvalue())
        summary["runtimes"]["estimate"] = t_est
        summary["runtimes"]["fit"] = t_fit
        flush()
    return summary


class AssumptionFailure(QBNetError):
    def __init__(self, report):
        self.report = report
        msgs = report["excitation"]["messages"]
        flags = [k for k in ("regular", "impulse_free", "stable") if not report[k]]
        super().__init__("assumption check failed: " + "; ".join(
            [f"plant not {f.replace('_', '-')}" for f in flags] + msgs))


# -- argument parsing -----------------------------------------------------------

def _sigma_list(text):
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad noise list '{text}'") from exc
    if not vals or any(v < 0 for v in vals):
        raise argparse.ArgumentTypeError("noise levels must be nonnegative")
    return vals


def _u64(text):
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("expected an unsigned 64-bit integer")
    return v


def _u8(text):
    v = int(text)
    if not 1 <= v < 256:
        raise argparse.ArgumentTypeError("expected an integer in 1..255")
    return v


def build_parser():
    p = argparse.ArgumentParser(prog="qbnet", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="verb", required=True)
    for verb, help_ in (("check", "validate the config and the excitation assumptions"),
                        ("simulate", "simulate and write trajectory and sampled records"),
                        ("estimate", "simulate and estimate tangential conditions"),
                        ("fit", "full pipeline including parameter fits"),
                        ("reproduce-circuit", "two-cell diode circuit experiment")):
        sp = sub.add_parser(verb, help=help_)
        sp.add_argument("--config", help="JSON experiment description")
        sp.add_argument("--out", default="out", help="output directory (default: out)")
        sp.add_argument("--seed", type=_u64)
        sp.add_argument("--omega0", type=float, help="first probing frequency, rad/s")
        sp.add_argument("--sigma", type=_sigma_list, help="comma separated noise levels")
        sp.add_argument("--nd", type=int, help="record length N_d")
        sp.add_argument("--truncation", type=_u8, help="steady-state truncation order")
    return p


STAGES = {"check": ("check",), "simulate": ("check", "simulate"),
          "estimate": ("check", "simulate", "estimate"),
          "fit": ("check", "simulate", "estimate", "fit"),
          "reproduce-circuit": ("check", "simulate", "estimate", "fit")}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.verb == "reproduce-circuit" and args.config is None:
            cfg, text = load_config()
        else:
            cfg, text = load_config(args.config)
        if args.verb == "reproduce-circuit" and cfg["model"].get("preset") != "circuit":
            raise ConfigError(["line ?: reproduce-circuit needs the circuit preset model"])
        cfg = apply_flags(cfg, args)
        exp = build_experiment(cfg, text)
    except ConfigError as exc:
        print("configuration rejected:", file=sys.stderr)
        for line in exc.problems:
            print("  " + line, file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        summary = run(exp, args.out, STAGES[args.verb])
    except AssumptionFailure as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_ASSUMPTION
    except QBNetError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_MODULE
    if args.verb == "check":
        print(json.dumps(summary["checks"], indent=2))
    else:
        print(f"wrote results to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
