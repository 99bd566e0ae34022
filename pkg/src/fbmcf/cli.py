"""Configuration parsing, experiment orchestration and file output.

Run configurations are INI files::

    [run]
    seed = 0

    [barrier]
    kind = plane
    params = 0 0 0 0 0 -1

    [initial]
    case = HEMI_PLANE
    subdivision = 32

    [flow]
    t_end = 0.2

    [diagnostics]
    sigma = 0.1

    [output]
    directory = out
    record_every = 10

Relative paths are resolved against the directory holding the config file.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import io
import math
import re
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .barrier import KINDS, BarrierSurface, ball_curvatures, estimate_bounds
from .diagnostics import (
    CSV_COLUMNS,
    area_balance,
    blowup_estimate,
    format_csv_value,
    rescale_compare,
)
from .errors import FbmcfError, FitFailed, InsufficientRecords, IoError, ParseError, ValidationError
from .flow import FlowConfig, project_boundary, run
from .mesh import boundary_frame, read_obj, write_obj
from .oracles import CASE_NAMES, make_case
from .perturbation import identity_suite

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

_FLOW_KEYS = {
    "c1": float, "c2": float, "dt_floor": float, "max_steps": int, "stop_maxA": float,
    "stop_min_area": float, "projection_tol": float, "record_every": int, "t_end": float,
    "smoothing": float, "angle_floor": float, "area_floor": float,
}
_DIAG_KEYS = {
    "sigma": float, "eta": float, "epsilon_pinch": float, "D": float, "a": float, "b": float,
    "c": float, "C_grad": float,
}
SCHEMA = {
    "run": {"seed": int},
    "barrier": {"kind": str, "params": str, "orientation_sign": int},
    "initial": {"case": str, "mesh": str, "subdivision": int, "amplitude": float},
    "flow": _FLOW_KEYS,
    "diagnostics": _DIAG_KEYS,
    "output": {"directory": str, "frame_format": str, "record_every": int, "frame_every": int,
               "rescale_samples": int},
}


@dataclass
class RunConfig:
    flow: FlowConfig = field(default_factory=FlowConfig)
    barrier_kind: str | None = None
    barrier_params: tuple = ()
    orientation_sign: int | None = None
    case: str | None = None
    mesh_path: Path | None = None
    subdivision: int | None = None
    amplitude: float | None = None
    output_dir: Path = Path("out")
    frame_format: str = "obj"
    frame_every: int = 1
    rescale_samples: int = 10000
    seed: int = 0
    source: Path | None = None


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

_SECTION_RE = re.compile(r"^\s*\[([^\]]+)\]")
_KEY_RE = re.compile(r"^\s*([^=:#;\s][^=:]*?)\s*[=:]")


def _line_index(text):
    """Map ``(section, key)`` and ``section`` to 1-based line numbers."""
    where = {}
    section = None
    for no, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.lstrip()[0] in "#;":
            continue
        m = _SECTION_RE.match(line)
        if m:
            section = m.group(1).strip()
            where.setdefault(section, no)
            continue
        m = _KEY_RE.match(line)
        if m and not line[0].isspace():
            where.setdefault((section, m.group(1).strip().lower()), no)
    return where


def _convert(section, key, raw, kind, line):
    try:
        if kind is int:
            v = float(raw)
            if v != int(v):
                raise ValueError
            return int(v)
        if kind is float:
            if raw.strip().lower() in ("none", ""):
                return None
            return float(raw)
        return raw.strip()
    except ValueError:
        raise ValidationError(f"line {line}: [{section}] {key} = {raw!r} is not a valid {kind.__name__}") from None


def parse_config(path):
    """Read and validate a run configuration.

    Raises
    ------
    ParseError
        Unreadable file, malformed syntax, or unknown section/key (the message
        names the line).
    ValidationError
        A value outside its allowed range.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read config {path}: {exc}") from None
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None, strict=True)
    cp.optionxform = str
    try:
        cp.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ParseError(f"{path}: {exc}") from None
    where = _line_index(text)
    values = {}
    for section in cp.sections():
        if section not in SCHEMA:
            raise ParseError(f"{path}, line {where.get(section, '?')}: unknown section [{section}]")
        schema = {k.lower(): (k, t) for k, t in SCHEMA[section].items()}
        for key, raw in cp.items(section):
            line = where.get((section, key.lower()), "?")
            if key.lower() not in schema:
                raise ParseError(f"{path}, line {line}: unknown key {key!r} in [{section}]")
            name, kind = schema[key.lower()]
            values[(section, name)] = (_convert(section, name, raw, kind, line), line)
    return _build_config(values, path)


def _build_config(values, path):
    cfg = RunConfig(source=path)
    base = path.parent

    def get(section, key, default=None):
        return values.get((section, key), (default, None))[0]

    def line(section, key):
        return values.get((section, key), (None, "?"))[1]

    cfg.seed = get("run", "seed", 0)
    kind = get("barrier", "kind")
    if kind is not None:
        kind = kind.lower()
        if kind not in KINDS:
            raise ValidationError(f"line {line('barrier', 'kind')}: barrier kind must be one of {', '.join(KINDS)}")
    cfg.barrier_kind = kind
    raw = get("barrier", "params")
    if raw:
        try:
            cfg.barrier_params = tuple(float(v) for v in raw.replace(",", " ").split())
        except ValueError:
            raise ValidationError(f"line {line('barrier', 'params')}: params must be numbers") from None
    sign = get("barrier", "orientation_sign")
    if sign is not None and sign not in (-1, 1):
        raise ValidationError(f"line {line('barrier', 'orientation_sign')}: orientation_sign must be 1 or -1")
    cfg.orientation_sign = sign

    case, mesh = get("initial", "case"), get("initial", "mesh")
    if (case is None) == (mesh is None):
        raise ValidationError("[initial] needs exactly one of 'case' or 'mesh'")
    if case is not None:
        if case.upper() not in CASE_NAMES:
            raise ValidationError(f"line {line('initial', 'case')}: unknown case {case!r}; "
                                  f"expected one of {', '.join(CASE_NAMES)}")
        cfg.case = case.upper()
    else:
        if kind is None:
            raise ValidationError("an initial mesh file needs a [barrier] section")
        cfg.mesh_path = (base / mesh).resolve()
    cfg.subdivision = get("initial", "subdivision")
    if cfg.subdivision is not None and cfg.subdivision < 2:
        raise ValidationError(f"line {line('initial', 'subdivision')}: subdivision must be >= 2")
    cfg.amplitude = get("initial", "amplitude")
    if cfg.amplitude is not None and not abs(cfg.amplitude) < 1:
        raise ValidationError(f"line {line('initial', 'amplitude')}: amplitude must lie in (-1, 1)")

    flow_kw = {k: v for (s, k), (v, _) in values.items() if s in ("flow", "diagnostics") and v is not None}
    rec_flow, rec_out = values.get(("flow", "record_every")), values.get(("output", "record_every"))
    if rec_flow and rec_out:
        raise ValidationError(f"line {rec_out[1]}: record_every given in both [flow] and [output]")
    if rec_out:
        flow_kw["record_every"] = rec_out[0]
    cfg.flow = FlowConfig(**flow_kw)

    cfg.output_dir = (base / get("output", "directory", "out")).resolve()
    cfg.frame_format = get("output", "frame_format", "obj").lower()
    if cfg.frame_format not in ("obj", "none"):
        raise ValidationError(f"line {line('output', 'frame_format')}: frame_format must be 'obj' or 'none'")
    cfg.frame_every = get("output", "frame_every", 1)
    if cfg.frame_every < 1:
        raise ValidationError(f"line {line('output', 'frame_every')}: frame_every must be >= 1")
    cfg.rescale_samples = get("output", "rescale_samples", 10000)
    if cfg.rescale_samples < 10:
        raise ValidationError(f"line {line('output', 'rescale_samples')}: rescale_samples must be >= 10")

    barrier, _ = build_barrier(cfg)
    problems = cfg.flow.validate(barrier.K if barrier is not None else None)
    if problems:
        key, msg = problems[0]
        sec = "diagnostics" if key in _DIAG_KEYS else "flow"
        raise ValidationError(f"line {line(sec, key)}: {msg}")
    return cfg


# ---------------------------------------------------------------------------
# orchestration
# ---------------------------------------------------------------------------

def build_barrier(cfg):
    """The configured barrier (or ``None`` when the case supplies it) and whether it was explicit."""
    if cfg.barrier_kind is None:
        if cfg.case is None:
            return None, False
        return make_case(cfg.case, n_rings=2).barrier, False
    try:
        b = BarrierSurface.from_params(cfg.barrier_kind, cfg.barrier_params, cfg.orientation_sign or 1)
    except (ValueError, FbmcfError) as exc:
        raise ValidationError(f"barrier: {exc}") from None
    return b, True


def _orient_to(mesh, barrier):
    """Flip the barrier normal if needed so the initial conormal matches it."""
    fr = boundary_frame(mesh, barrier, tol=1e-6)
    if len(fr.vertices) == 0:
        return barrier
    if np.mean(np.sum(fr.N * barrier.normal(mesh.positions[fr.vertices]), axis=1)) < 0:
        return BarrierSurface.from_params(barrier.kind, barrier.params, -barrier.orientation_sign) \
            if barrier.kind != "custom" else replace(barrier, orientation_sign=-barrier.orientation_sign)
    return barrier


def prepare(cfg):
    """Return ``(barrier, initial_mesh)`` for a parsed configuration."""
    barrier, explicit = build_barrier(cfg)
    if cfg.case is not None:
        case = make_case(cfg.case, n_rings=cfg.subdivision, amplitude=cfg.amplitude)
        mesh = case.mesh
        if barrier is None:
            barrier = case.barrier
    else:
        try:
            mesh, _ = read_obj(cfg.mesh_path)
        except OSError as exc:
            raise IoError(f"cannot read mesh {cfg.mesh_path}: {exc}") from None
    mesh = project_boundary(mesh, barrier, cfg.flow.projection_tol)
    if explicit and cfg.orientation_sign is None:
        barrier = _orient_to(mesh, barrier)
    return barrier, mesh


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return format_csv_value(v)
    if isinstance(v, (tuple, list, np.ndarray)):
        return " ".join(_fmt(x) for x in v)
    return str(v)


def analyse(result, barrier, seed=0, n_samples=10000):
    """Run-level summary entries: blow-up fit, area balance and the final rescale report."""
    recs = result.records
    out = {}
    H0 = recs[0].H_min
    out["H0"] = H0
    out["blowup_bound"] = 1.0 / H0 ** 2 if H0 > 0 else math.inf
    T = None
    try:
        est = blowup_estimate(H0, [r.t for r in recs], [r.H_max for r in recs])
        T = est.fitted_T
        out["fitted_T"] = est.fitted_T
        out["within_bound"] = est.within_bound
    except FitFailed as exc:
        out["fitted_T"] = "n/a"
        out["fit_message"] = str(exc)
    try:
        out["area_balance"] = area_balance(recs)
    except InsufficientRecords:
        out["area_balance"] = "n/a"
    st = result.final_state
    if T is not None and T > st.t:
        rc = rescale_compare(st.mesh, barrier, st.t, T, n_samples=n_samples, seed=seed, geometry=st.geometry)
        out["rescale_T"] = T
        out["rescale_t"] = st.t
        out["rescale_hausdorff"] = rc.hausdorff
        out["rescale_umbilic_ratio_max"] = rc.umbilic_ratio_max
    return out


def emit_outputs(result, records, directory, summary=None, frame_every=1, write_frames=True):
    """Write frames, ``diagnostics.csv`` and ``summary.txt``; return the written paths.

    Existing ``frame_*.obj`` files in ``directory`` are removed first so a
    re-run leaves exactly the files of the latest run.

    Raises
    ------
    IoError
        If the directory cannot be created or written.
    """
    d = Path(directory)
    manifest = []
    try:
        d.mkdir(parents=True, exist_ok=True)
        for old in sorted(d.glob("frame_*.obj")):
            old.unlink()
        if write_frames:
            mesh = result.final_state.mesh
            last = len(result.frames) - 1
            for k, (t, P) in enumerate(result.frames):
                if k % frame_every and k != last:
                    continue
                p = d / f"frame_{k:06d}.obj"
                write_obj(p, mesh.with_positions(P), comments=(f"t = {format_csv_value(t)}",))
                manifest.append(p)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in records:
            w.writerow([format_csv_value(v) for v in r.csv_values()])
        p = d / "diagnostics.csv"
        p.write_text(buf.getvalue())
        manifest.append(p)
        if summary is not None:
            p = d / "summary.txt"
            p.write_text("".join(f"{k}: {_fmt(v)}\n" for k, v in summary.items()))
            manifest.append(p)
    except OSError as exc:
        raise IoError(f"cannot write outputs to {d}: {exc}") from None
    return manifest


def run_from_config(cfg):
    barrier, mesh = prepare(cfg)
    result = run(cfg.flow, mesh, barrier)
    summary = {
        "stop_reason": result.stop_reason.value,
        "message": result.message or "-",
        "steps": result.final_state.step,
        "final_t": result.final_state.t,
        "records": len(result.records),
        "n_vertices": mesh.n_vertices,
        "barrier_kind": barrier.kind,
        "barrier_params": list(barrier.params),
        "orientation_sign": barrier.orientation_sign,
        "case": cfg.case or str(cfg.mesh_path),
        "seed": cfg.seed,
    }
    summary.update(analyse(result, barrier, cfg.seed, cfg.rescale_samples))
    ok = all(r.zeta_ok for r in result.records) and \
        max(r.max_abs_phi_boundary for r in result.records) <= cfg.flow.projection_tol
    summary["checks_passed"] = ok
    emit_outputs(result, result.records, cfg.output_dir, summary, cfg.frame_every, cfg.frame_format == "obj")
    return result, summary, ok


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _barrier_from_args(args):
    p = list(args.params or [])
    kind = args.kind
    if kind == "slab" and args.gap is not None:
        p = [args.gap] + p
    if kind in ("sphere", "cylinder") and args.radius is not None:
        p = [args.radius] + p
    return BarrierSurface.from_params(kind, p, args.sign)


def _cmd_run(args, out):
    cfg = parse_config(args.config)
    if args.output is not None:
        cfg.output_dir = Path(args.output).resolve()
    result, summary, ok = run_from_config(cfg)
    for k in ("stop_reason", "steps", "final_t", "fitted_T", "rescale_hausdorff"):
        if k in summary:
            print(f"{k}: {_fmt(summary[k])}", file=out)
    print(f"output: {cfg.output_dir}", file=out)
    return EXIT_OK if ok else EXIT_FAIL


VERIFY_TOL = {"i-iv": 1e-10, "v": 1e-6, "fd": 1e-6, "frame": 1e-12, "convex": -1e-10}


def verify_barrier(barrier, n_points=100, seed=0):
    """Identity suite plus barrier invariants; returns ``(report dict, passed)``."""
    rep = identity_suite(barrier, n_points=n_points, seed=seed)
    rng = np.random.default_rng(seed + 1)
    p = barrier.sample(n_points, rng)
    x = p + 0.1 * rng.normal(size=p.shape)
    h = 1e-5
    g_fd = np.stack([(barrier.phi(x + h * e) - barrier.phi(x - h * e)) / (2 * h) for e in np.eye(3)], 1)
    g = barrier.grad(x)
    grad_err = float(np.max(np.linalg.norm(g_fd - g, axis=1) / np.maximum(np.linalg.norm(g, axis=1), 1e-12)))
    H_fd = np.stack([(barrier.grad(x + h * e) - barrier.grad(x - h * e)) / (2 * h) for e in np.eye(3)], 1)
    Hs = barrier.hessian(x)
    hess_err = float(np.max(np.abs(H_fd - Hs)) / max(np.max(np.abs(Hs)), 1e-12))
    q, _ = barrier.closest_point(p)
    frame_err, trace_err, min_eig = 0.0, 0.0, np.inf
    for pt in q[: min(len(q), 50)]:
        f = barrier.surface_frame(pt)
        E = f.tangent_basis
        frame_err = max(frame_err, float(np.max(np.abs(E @ E.T - np.eye(2)))), float(np.max(np.abs(E @ f.nu_S))))
        trace_err = max(trace_err, abs(float(np.trace(f.Aring_S))))
        min_eig = min(min_eig, float(np.linalg.eigvalsh(f.A_S)[0]))
    report = rep.as_dict()
    report.update(grad_rel_err=grad_err, hess_rel_err=hess_err, frame_err=frame_err, aring_trace=trace_err,
                  min_principal_curvature=min_eig)
    clauses = max(rep.vanish_normal_slot, rep.vanish_tangent_pair, rep.vanish_repeated, rep.vanish_normal_pair)
    passed = (clauses <= VERIFY_TOL["i-iv"] and rep.normal_derivative <= VERIFY_TOL["v"]
              and rep.symmetry == 0.0 and grad_err <= VERIFY_TOL["fd"] and hess_err <= VERIFY_TOL["fd"]
              and frame_err <= VERIFY_TOL["frame"] and trace_err <= VERIFY_TOL["frame"]
              and min_eig >= VERIFY_TOL["convex"] and rep.c0_bound_violation <= 1e-8)
    return report, passed


def _cmd_verify(args, out):
    barrier = _barrier_from_args(args)
    report, passed = verify_barrier(barrier, args.points, args.seed)
    for k, v in report.items():
        print(f"{k}: {_fmt(v)}", file=out)
    print(f"result: {'pass' if passed else 'FAIL'}", file=out)
    return EXIT_OK if passed else EXIT_FAIL


def _cmd_ballcurv(args, out):
    barrier = _barrier_from_args(args)
    rng = np.random.default_rng(args.seed)
    S = barrier.sample(args.samples, rng)
    zbar, zlow = ball_curvatures(barrier, S)
    b = estimate_bounds(barrier, S)
    for k, v in (("Zbar", zbar.max()), ("Zlow", zlow.min()), ("K", b.K), ("L1", b.L1), ("L2", b.L2),
                 ("samples", len(S))):
        print(f"{k}: {_fmt(v)}", file=out)
    return EXIT_OK


def _read_summary(path):
    out = {}
    for line in Path(path).read_text().splitlines():
        if ": " in line:
            k, v = line.split(": ", 1)
            out[k.strip()] = v.strip()
    return out


def _cmd_rescale(args, out):
    d = Path(args.frames_dir)
    frames = sorted(d.glob("frame_*.obj"))
    if not frames:
        raise IoError(f"no frame_*.obj files in {d}")
    try:
        summ = _read_summary(d / "summary.txt")
    except OSError as exc:
        raise IoError(f"cannot read {d / 'summary.txt'}: {exc}") from None
    mesh, comments = read_obj(frames[-1])
    t = None
    for c in comments:
        m = re.match(r"\s*t\s*=\s*(\S+)", c)
        if m:
            t = float(m.group(1))
    if t is None:
        raise IoError(f"{frames[-1]} has no '# t = ...' comment")
    params = [float(v) for v in summ.get("barrier_params", "").split()]
    barrier = BarrierSurface.from_params(summ["barrier_kind"], params, int(summ.get("orientation_sign", 1)))
    T = args.T
    if T is None:
        try:
            T = float(summ["fitted_T"])
        except (KeyError, ValueError):
            raise ValidationError("no fitted_T in summary.txt; pass --T") from None
    rc = rescale_compare(mesh, barrier, t, T, n_samples=args.samples, seed=args.seed)
    for k, v in (("frame", frames[-1].name), ("t", t), ("T", T), ("hausdorff", rc.hausdorff),
                 ("umbilic_ratio_max", rc.umbilic_ratio_max)):
        print(f"{k}: {_fmt(v)}", file=out)
    return EXIT_OK


def _parser():
    p = argparse.ArgumentParser(prog="fbmcf", description="Free-boundary mean curvature flow toolkit.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a flow from a config file")
    r.add_argument("config")
    r.add_argument("--output", help="override the output directory")
    r.set_defaults(func=_cmd_run)

    def barrier_args(q):
        q.add_argument("kind", choices=KINDS)
        q.add_argument("--params", type=float, nargs="+", help="flat parameter list (see BarrierSurface.from_params)")
        q.add_argument("--gap", type=float, help="slab gap")
        q.add_argument("--radius", type=float, help="sphere or cylinder radius")
        q.add_argument("--sign", type=int, default=1, choices=(-1, 1), help="orientation sign")
        q.add_argument("--seed", type=int, default=0)

    v = sub.add_parser("verify", help="perturbation tensor identities and barrier invariants")
    barrier_args(v)
    v.add_argument("--points", type=int, default=100)
    v.set_defaults(func=_cmd_verify)

    b = sub.add_parser("ballcurv", help="ball curvatures and curvature bounds")
    barrier_args(b)
    b.add_argument("--samples", type=int, default=10000)
    b.set_defaults(func=_cmd_ballcurv)

    s = sub.add_parser("rescale", help="compare the last frame of a run with the unit hemisphere")
    s.add_argument("frames_dir")
    s.add_argument("--T", type=float, help="singular time (default: fitted_T from summary.txt)")
    s.add_argument("--samples", type=int, default=10000)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=_cmd_rescale)
    return p


def cli_dispatch(argv=None, out=None):
    """Run one subcommand; returns 0 on success, 1 on a failed check, 2 on usage or config errors."""
    out = sys.stdout if out is None else out
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        return args.func(args, out)
    except (ParseError, ValidationError, IoError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FbmcfError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


def main():
    sys.exit(cli_dispatch())
