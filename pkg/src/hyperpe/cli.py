"""Command-line harness: ``python3 -m hyperpe <subcommand> [flags]``.

Exit codes: 0 success, 1 runtime failure, 2 configuration error, 3 a check
subcommand produced a failing verdict.
"""

import argparse
import csv
import hashlib
import json
import os
import sys
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.fft as sfft

from . import __version__
from .dynamics import ConfigError, SimConfig, simulate

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG, EXIT_VERDICT = 0, 1, 2, 3

COMMANDS = ("sample", "simulate", "invariance", "poisson-check", "scaling", "converge", "mild-converge",
            "sum-lemma", "qv-check", "uniqueness-window", "bench")

# config-file key -> (SimConfig field, type)
CONFIG_KEYS = {
    "theta": ("theta", float),
    "m": ("m", int),
    "T": ("T", float),
    "dt": ("dt", float),
    "seed": ("master_seed", int),
    "master_seed": ("master_seed", int),
    "ensemble": ("ensemble", int),
    "scheme": ("scheme", str),
    "record_stride": ("record_stride", int),
    "fast": ("fast_nonlinearity", bool),
    "fast_nonlinearity": ("fast_nonlinearity", bool),
}
REQUIRED = ("theta", "m", "T", "dt")


def _coerce(key, raw, typ):
    if isinstance(raw, typ) and not (typ is int and isinstance(raw, bool)):
        return raw
    text = str(raw).strip()
    try:
        if typ is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError
        if typ is int:
            return int(text, 0)
        return typ(text)
    except ValueError:
        raise ConfigError(key, f"expected {typ.__name__}, got {text!r}") from None


def parse_config_text(text: str) -> dict:
    """Flat ``key: value`` or ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        for sep in (":", "="):
            if sep in line:
                key, val = (s.strip() for s in line.split(sep, 1))
                break
        else:
            raise ConfigError(f"line {lineno}", f"expected 'key: value', got {line!r}")
        if key not in CONFIG_KEYS:
            raise ConfigError(key, "unknown configuration key")
        if key in out:
            raise ConfigError(key, "given twice")
        out[key] = val
    return out


def build_config(values: dict, overrides: dict = None) -> SimConfig:
    merged = dict(values)
    for k, v in (overrides or {}).items():
        if v is not None:
            if k not in CONFIG_KEYS:
                raise ConfigError(k, "unknown configuration key")
            merged[k] = v
    kwargs = {}
    for key, raw in merged.items():
        name, typ = CONFIG_KEYS[key]
        kwargs[name] = _coerce(key, raw, typ)
    present = {CONFIG_KEYS[k][0] for k in merged}
    for key in REQUIRED:
        if CONFIG_KEYS[key][0] not in present:
            raise ConfigError(key, "missing required key")
    return SimConfig(**kwargs)


def load_config(path, overrides: dict = None) -> SimConfig:
    """Read a flat key-value file and apply command-line overrides."""
    with open(path, encoding="utf-8") as fh:
        return build_config(parse_config_text(fh.read()), overrides)


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    config: dict
    master_seed: int = None
    tool_version: str = __version__
    started: float = field(default_factory=time.time)
    finished: float = None
    files: dict = field(default_factory=dict)
    verdict: str = None

    def finalize(self, out_dir, paths):
        self.finished = time.time()
        self.files = {os.path.relpath(p, out_dir): sha256(p) for p in sorted(paths)}
        with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
            json.dump(asdict(self), fh, indent=2, default=_jsonable)

    @staticmethod
    def verify(out_dir) -> bool:
        with open(os.path.join(out_dir, "manifest.json")) as fh:
            doc = json.load(fh)
        return all(sha256(os.path.join(out_dir, p)) == h for p, h in doc["files"].items())


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    return str(x)


def _g(x) -> str:
    return format(float(x), ".17g")


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="ascii") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_g(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return path


def _write_plot_descriptor(out_dir, csv_name, x, ys, logx=False, logy=False):
    path = os.path.join(out_dir, "plot.json")
    with open(path, "w") as fh:
        json.dump({"data": csv_name, "x": x, "y": ys, "logx": logx, "logy": logy}, fh, indent=2)
    return path


def write_run(traj, out_dir, modes=None):
    """Snapshots, observables.csv and manifest-ready file list for a trajectory."""
    from .spectral import SpectralField, disk_mask, write_snapshot

    os.makedirs(os.path.join(out_dir, "snapshots"), exist_ok=True)
    paths = []
    for i in range(len(traj.times)):
        for r in range(traj.replicas):
            p = os.path.join(out_dir, "snapshots", f"t{i:05d}_r{r:04d}.txt")
            write_snapshot(SpectralField(traj.m, traj.states[i, r]), p)
            paths.append(p)
    if modes is None:
        modes = [tuple(int(c) for c in k) for k in np.argwhere(disk_mask(traj.m))]
    rows = []
    gm = traj.G_mild if traj.G_mild is not None else np.full_like(traj.G, np.nan)
    for i, t in enumerate(traj.times):
        for r in range(traj.replicas):
            for k1, k2 in modes:
                rows.append([float(t), r, k1, k2, traj.states[i, r, k1, k2], traj.G[i, r, k1, k2],
                             gm[i, r, k1, k2], traj.M[i, r, k1, k2]])
    paths.append(_write_csv(os.path.join(out_dir, "observables.csv"),
                            ["t", "replica", "mode_k1", "mode_k2", "omega", "G", "G_mild", "M"], rows))
    return paths


def _parse_modes(text):
    if not text:
        return None
    out = []
    for part in text.split(";"):
        a, b = part.split(",")
        out.append((int(a), int(b)))
    return out


def _parse_ints(text):
    return [int(v) for v in text.split(",")] if text else None


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config")
    common.add_argument("--theta", type=float)
    common.add_argument("--m", type=int)
    common.add_argument("--T", type=float)
    common.add_argument("--dt", type=float)
    common.add_argument("--seed", type=int)
    common.add_argument("--ensemble", type=int)
    common.add_argument("--scheme")
    common.add_argument("--record-stride", type=int)
    common.add_argument("--fast", action=argparse.BooleanOptionalAction, default=None)
    common.add_argument("--threads", type=int, default=None)
    common.add_argument("--out-dir")

    p = argparse.ArgumentParser(prog="hyperpe", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", metavar="{" + ",".join(COMMANDS) + "}")
    s = sub.add_parser("sample", parents=[common], help="draw a mu-sample snapshot")
    s.add_argument("--out")
    s = sub.add_parser("simulate", parents=[common], help="integrate and write a run directory")
    s.add_argument("--modes", help="observable modes as 'k1,k2;k1,k2' (default: all)")
    sub.add_parser("invariance", parents=[common], help="KS/variance check of mu at time T")
    sub.add_parser("poisson-check", parents=[common], help="residual of L H_k = B_k for all |k| <= 8")
    s = sub.add_parser("scaling", parents=[common], help="carre du champ scaling fits")
    s.add_argument("--kind", choices=("carre", "increment"), default="carre")
    s.add_argument("--method", choices=("exact", "majorant"), default="exact")
    s = sub.add_parser("converge", parents=[common], help="G^m Cauchy-rate study")
    s.add_argument("--m-values", default="4,8,16,32")
    s.add_argument("--zeta", type=float, default=-2.5)
    s = sub.add_parser("mild-converge", parents=[common], help="mild integral rate studies")
    s.add_argument("--m-values", default="4,8,16,32")
    s.add_argument("--epsilon", type=float, default=0.25)
    s = sub.add_parser("sum-lemma", parents=[common], help="comparison sum along the diagonal")
    s.add_argument("--cutoff", type=int, default=512)
    s.add_argument("--jmax", type=int, default=32)
    sub.add_parser("qv-check", parents=[common], help="realized QV of M(e_(1,1))")
    s = sub.add_parser("uniqueness-window", parents=[common], help="uniqueness window and contraction check")
    s.add_argument("--m-values", default="8,16,32")
    s.add_argument("--reference-m", type=int, default=64)
    sub.add_parser("bench", parents=[common], help="time the direct and fast nonlinearity")
    return p


def _config(args, defaults):
    overrides = {"theta": args.theta, "m": args.m, "T": args.T, "dt": args.dt, "seed": args.seed,
                 "ensemble": args.ensemble, "scheme": args.scheme, "record_stride": args.record_stride,
                 "fast": args.fast}
    if args.config:
        base = parse_config_text(open(args.config, encoding="utf-8").read())
    else:
        base = {k: v for k, v in defaults.items()}
    return build_config(base, overrides)


def _out_dir(args):
    d = args.out_dir or os.environ.get("OUT_DIR") or os.path.join("runs", args.command)
    os.makedirs(d, exist_ok=True)
    return d


def _study_outputs(study, out_dir):
    from .analysis import write_study

    write_study(study, out_dir)
    plot = _write_plot_descriptor(out_dir, "study.csv", "axis", ["statistic"], True, True)
    return [os.path.join(out_dir, "study.csv"), os.path.join(out_dir, "study.json"), plot]


def _report(study):
    print(f"{study.name}: slope {study.fit.slope:.4f} target {study.target:.4f} +/- {study.tolerance} "
          f"r2 {study.fit.r_squared:.3f} -> {study.verdict}")


def cmd_sample(args):
    from .measure import sample_mu
    from .spectral import write_snapshot

    m = args.m if args.m is not None else 8
    seed = args.seed if args.seed is not None else 0
    if m < 1:
        raise ConfigError("m", "must be a positive integer")
    if args.out:
        out_dir = os.path.dirname(os.path.abspath(args.out))
        os.makedirs(out_dir, exist_ok=True)
        path = args.out
    else:
        out_dir = _out_dir(args)
        path = os.path.join(out_dir, "sample.txt")
    write_snapshot(sample_mu(m, seed), path)
    print(path)
    return "ok", {"m": m, "seed": seed}, out_dir, [path]


def cmd_simulate(args):
    cfg = _config(args, {"theta": 2.5, "m": 8, "T": 0.01, "dt": 1e-3})
    out_dir = _out_dir(args)
    traj = simulate(cfg)
    paths = write_run(traj, out_dir, _parse_modes(args.modes))
    paths.append(_write_plot_descriptor(out_dir, "observables.csv", "t", ["omega", "G", "G_mild", "M"]))
    print(f"wrote {len(traj.times)} records x {traj.replicas} replicas to {out_dir}")
    return "ok", asdict(cfg), out_dir, paths


def cmd_invariance(args):
    from .measure import marginal_stats

    cfg = _config(args, {"theta": 2.5, "m": 8, "T": 1.0, "dt": 1e-3, "ensemble": 2000})
    cfg = SimConfig(**{**asdict(cfg), "record_stride": max(cfg.n_steps, 1)})
    out_dir = _out_dir(args)
    traj = simulate(cfg)
    rep = marginal_stats(traj.states[-1])
    n = len(rep.p_value)
    se = np.sqrt(2.0 / (rep.size - 1))
    ks_ok = bool(np.all(rep.p_value > 1e-3 / n))
    var_ok = bool(np.all(np.abs(rep.variance - 1.0) <= 3 * se))
    rows = [[int(k[0]), int(k[1]), mu, v, d, p] for k, mu, v, d, p in
            zip(rep.modes, rep.mean, rep.variance, rep.ks_statistic, rep.p_value)]
    path = _write_csv(os.path.join(out_dir, "marginals.csv"), ["k1", "k2", "mean", "variance", "ks", "p"], rows)
    verdict = "pass" if ks_ok and var_ok else "fail"
    print(f"min p {rep.p_value.min():.3g} (threshold {1e-3 / n:.3g}), max |var-1|/se "
          f"{np.max(np.abs(rep.variance - 1)) / se:.2f} -> {verdict}")
    return verdict, asdict(cfg), out_dir, [path]


def cmd_poisson_check(args):
    from .chaos import poisson_residual

    m = args.m if args.m is not None else 16
    theta = args.theta if args.theta is not None else 2.5
    if m < 1:
        raise ConfigError("m", "must be a positive integer")
    if not theta > 0:
        raise ConfigError("theta", "must be positive")
    out_dir = _out_dir(args)
    rows = []
    kmax = min(8, m)
    for k1 in range(1, kmax + 1):
        for k2 in range(1, kmax + 1):
            if k1 * k1 + k2 * k2 <= kmax * kmax:
                rows.append([k1, k2, m, theta, poisson_residual((k1, k2), m, theta)])
    path = _write_csv(os.path.join(out_dir, "residuals.csv"), ["k1", "k2", "m", "theta", "residual"], rows)
    worst = max(r[-1] for r in rows)
    verdict = "pass" if worst <= 1e-12 else "fail"
    print(f"max relative residual {worst:.3e} over {len(rows)} modes -> {verdict}")
    return verdict, {"m": m, "theta": theta}, out_dir, [path]


def cmd_scaling(args):
    from .analysis import carre_scaling_study, increment_scaling_study

    theta = args.theta if args.theta is not None else 2.5
    if args.kind == "carre":
        study = carre_scaling_study(theta, args.m or 128, method=args.method)
    else:
        study = increment_scaling_study(theta, method=args.method)
    out_dir = _out_dir(args)
    _report(study)
    paths = _study_outputs(study, out_dir)
    if args.kind == "carre":
        m = study.extra["m"]
        rows = [[j, j, m, theta, v] for j, v in zip(range(2, 25), study.values)]
        paths.append(_write_csv(os.path.join(out_dir, "expected_carre.csv"),
                                ["k1", "k2", "m", "theta", "expected_carre"], rows))
    return study.verdict, {"theta": theta, "kind": args.kind, "method": args.method}, out_dir, paths


def cmd_converge(args):
    from .analysis import g_convergence_study

    ms = _parse_ints(args.m_values)
    cfg = _config(args, {"theta": 2.75, "m": ms[0], "T": 0.5, "dt": 2.5e-3, "ensemble": 500})
    study = g_convergence_study(cfg, ms, args.zeta)
    out_dir = _out_dir(args)
    _report(study)
    return study.verdict, asdict(cfg), out_dir, _study_outputs(study, out_dir)


def cmd_mild_converge(args):
    from .analysis import mild_convergence_study

    ms = _parse_ints(args.m_values)
    cfg = _config(args, {"theta": 2.5, "m": 16, "T": 0.25, "dt": 2.5e-3, "ensemble": 200})
    studies = mild_convergence_study(cfg, ms, args.epsilon)
    out_dir = _out_dir(args)
    paths = []
    for key, st in studies.items():
        _report(st)
        paths += _study_outputs(st, os.path.join(out_dir, key))
    verdicts = [s.verdict for s in studies.values()]
    verdict = "fail" if "fail" in verdicts else ("pass" if all(v == "pass" for v in verdicts) else "inconclusive")
    return verdict, asdict(cfg), out_dir, paths


def cmd_sum_lemma(args):
    from .analysis import sum_lemma_study

    theta = args.theta if args.theta is not None else 2.5
    if not theta > 2:
        raise ConfigError("theta", "the comparison sum needs theta > 2")
    study = sum_lemma_study(theta, args.cutoff, range(2, args.jmax + 1))
    out_dir = _out_dir(args)
    _report(study)
    return study.verdict, {"theta": theta, "cutoff": args.cutoff, "jmax": args.jmax}, out_dir, \
        _study_outputs(study, out_dir)


def cmd_qv_check(args):
    from .dynamics import qv_target, realized_qv
    from .spectral import make_field

    cfg = _config(args, {"theta": 2.5, "m": 8, "T": 1.0, "dt": 1e-3, "ensemble": 100})
    out_dir = _out_dir(args)
    traj = simulate(cfg)
    phi = make_field(cfg.m, {(1, 1): 1.0})
    qv = realized_qv(traj, phi)
    target = qv_target(phi, cfg.theta, cfg.T)
    rel = abs(qv.mean() / target - 1)
    path = _write_csv(os.path.join(out_dir, "qv.csv"), ["replica", "qv"], [[r, q] for r, q in enumerate(qv)])
    verdict = "pass" if rel <= 0.1 else "fail"
    print(f"mean realized QV {qv.mean():.5g}, target {target:.5g}, rel. error {rel:.3%} -> {verdict}")
    return verdict, asdict(cfg), out_dir, [path]


def cmd_uniqueness_window(args):
    from .analysis import uniqueness_window_check

    theta = args.theta if args.theta is not None else 3.5
    kw = {"replicas": args.ensemble or 100, "seed": args.seed or 0, "reference_m": args.reference_m,
          "m_values": _parse_ints(args.m_values)}
    if args.T is not None:
        kw["T"] = args.T
    if args.dt is not None:
        kw["dt"] = args.dt
    rep = uniqueness_window_check(theta, **kw)
    out_dir = _out_dir(args)
    paths = []
    if rep.statistics is not None:
        rows = [[r, *s] for r, s in enumerate(rep.statistics)]
        paths.append(_write_csv(os.path.join(out_dir, "uniqueness.csv"),
                                ["replica", *[f"m{m}" for m in rep.m_values]], rows))
    print(f"{rep.note} -> {rep.verdict}" if not rep.nonempty else
          f"window ({rep.window[0]:g}, {rep.window[1]:g}), xi={rep.xi:g}: {rep.note} -> {rep.verdict}")
    verdict = "pass" if rep.verdict in ("pass", "skipped") else rep.verdict
    return verdict, {"theta": theta, **kw}, out_dir, paths


def cmd_bench(args):
    from .measure import sample_mu
    from .nonlinearity import b_fast, b_truncated

    out_dir = _out_dir(args)
    rows = []
    for m in (8, 16, 32, 64, 128):
        w = sample_mu(m, 0)
        for method, fn in (("direct", b_truncated), ("fast", b_fast)):
            if method == "direct" and m > 64:
                continue
            t0 = time.perf_counter_ns()
            out = fn(w, m).field.coeffs
            wall = time.perf_counter_ns() - t0
            # rounded to 9 decimals so last-bit roundoff rarely changes the hash
            checksum = hashlib.sha256(np.round(out, 9).tobytes()).hexdigest()[:16]
            rows.append([m, method, wall, checksum])
            print(f"m={m} {method}: {wall / 1e9:.4f}s checksum {checksum}")
    path = _write_csv(os.path.join(out_dir, "bench.csv"), ["m", "method", "wall_ns", "checksum"], rows)
    return "ok", {}, out_dir, [path]


HANDLERS = {name: globals()["cmd_" + name.replace("-", "_")] for name in COMMANDS}


def run(argv) -> int:
    argv = list(argv)
    parser = _parser()
    if argv and argv[0] in ("-h", "--help"):
        parser.print_help()
        return EXIT_OK
    if not argv or argv[0] not in COMMANDS:
        parser.print_usage(sys.stderr)
        if argv:
            print(f"unknown subcommand {argv[0]!r}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    threads = args.threads or os.cpu_count() or 1
    try:
        with sfft.set_workers(threads):
            manifest = RunManifest(args.command, {})
            verdict, config, out_dir, paths = HANDLERS[args.command](args)
            manifest.config = config
            manifest.master_seed = config.get("master_seed", config.get("seed"))
            manifest.verdict = verdict
            manifest.finalize(out_dir, paths)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG if isinstance(exc, ConfigError) else EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - report and map to an exit code
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_VERDICT if verdict == "fail" else EXIT_OK


def main():
    sys.exit(run(sys.argv[1:]))
