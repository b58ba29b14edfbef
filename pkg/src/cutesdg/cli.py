"""Batch driver: build a run from a config, integrate, and write artifacts.

Subcommands::

    cutesdg run <config> [--output-dir D] [--threads K] [--override key=value ...]
    cutesdg converge <config> --levels L [--output-dir D] [--override ...]
    cutesdg check-mesh <config> [--output-dir D] [--override ...]

Bundled configs can be named without a path (``cutesdg run entropy_wave``).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from threadpoolctl import threadpool_limits

from . import geometry as geo
from .config import ConfigError, RunConfig, compile_expression, parse_config, primitive_names
from .mesh import CARTESIAN, BackgroundGrid, build_cut_mesh, dump_mesh
from .operators import build_mesh_operators, write_operator_report
from .physics import Euler, make_law
from .solver import BoundaryCondition, Discretization, mms_source, mms_state
from .srd import StateRedistribution
from .timeint import IntegratorConfig, integrate

log = logging.getLogger("cutesdg")


class RunError(RuntimeError):
    """A failure in one pipeline stage, carrying the stage name."""

    def __init__(self, stage, exc):
        super().__init__(f"[{stage}] {type(exc).__name__}: {exc}")
        self.stage = stage


# --- exact solutions ---------------------------------------------------------

ENTROPY_WAVE_VELOCITY = (0.5, 0.5)
ENTROPY_WAVE_PRESSURE = 3.0


def entropy_wave_state(law: Euler):
    u1, u2 = ENTROPY_WAVE_VELOCITY

    def exact(x, t):
        X, Y = x[..., 0], x[..., 1]
        rho = np.sin(2 * np.pi * (X - u1 * t)) * np.sin(2 * np.pi * (Y - u2 * t)) + 2.0
        return law.from_primitive(rho, u1, u2, ENTROPY_WAVE_PRESSURE)

    return exact


def exact_solution(cfg: RunConfig, law) -> Optional[Callable]:
    preset = cfg.initial.get("preset")
    if preset == "mms":
        if cfg.law_name != "swe":
            raise ConfigError("preset mms needs law swe", ("initial", "preset"))
        return mms_state
    if preset == "entropy_wave":
        if cfg.law_name != "euler":
            raise ConfigError("preset entropy_wave needs law euler", ("initial", "preset"))
        return entropy_wave_state(law)
    return None


def primitive_to_state(law, law_name, prims: dict):
    if law_name == "swe":
        h, u, v = (np.asarray(prims[k], dtype=float) for k in ("h", "u", "v"))
        h, u, v = np.broadcast_arrays(h, u, v)
        return np.stack([h, h * u, h * v], axis=-1)
    return law.from_primitive(prims["rho"], prims["u"], prims["v"], prims["p"])


def initial_condition(cfg: RunConfig, law, exact):
    if "preset" in cfg.initial:
        return lambda x: exact(x, 0.0)
    fns = {}
    for k, v in cfg.initial.items():
        fns[k] = compile_expression(v) if isinstance(v, str) else (lambda x, y, c=float(v): np.full(np.shape(x), c))

    def u0(x):
        prims = {k: f(x[..., 0], x[..., 1]) for k, f in fns.items()}
        return primitive_to_state(law, cfg.law_name, prims)

    return u0


def build_curves(cfg: RunConfig):
    out = []
    for i, c in enumerate(cfg.curves):
        kw = {k: c[k] for k in ("tag", "name") if k in c}
        if c["type"] == "circle":
            out.append(geo.circle(tuple(c.get("center", (0.0, 0.0))), float(c["radius"]), **kw))
        elif c["type"] == "piecewise":
            out.append(geo.piecewise(c["segments"], **kw))
        else:
            out.append(geo.biconvex(float(c.get("chord", 1.0)), float(c.get("thickness", 0.1)),
                                    tuple(c.get("center", (0.0, 0.0))), float(c.get("angle", 0.0)), **kw))
    return out


def boundary_conditions(cfg: RunConfig, law, tags, exact):
    bcs = {}
    for tag in tags:
        spec = cfg.boundary.get(tag, cfg.boundary.get("default"))
        if spec is None:
            raise ConfigError(f"no boundary condition for tag {tag!r} and no default", ("boundary",))
        kind = spec["kind"]
        if kind == "freestream":
            prims = {k: spec[k] for k in primitive_names(cfg.law_name)}
            bcs[tag] = BoundaryCondition(kind, primitive_to_state(law, cfg.law_name, prims))
        elif kind == "prescribed":
            if exact is None:
                raise ConfigError(f"prescribed boundary on {tag!r} needs an exact-solution preset",
                                  ("boundary", tag))
            bcs[tag] = BoundaryCondition(kind, exact)
        else:
            bcs[tag] = BoundaryCondition(kind)
    return bcs


# --- run setup ---------------------------------------------------------------

@dataclass
class RunSetup:
    cfg: RunConfig
    law: object
    mesh: object
    mops: object
    disc: Discretization
    u0: np.ndarray
    exact: Optional[Callable]
    srd: Optional[StateRedistribution]
    timings: dict


def _stage(name, fn, *a, **kw):
    try:
        return fn(*a, **kw)
    except (ConfigError, RunError):
        raise
    except Exception as exc:  # noqa: BLE001 - rewrap with stage context
        raise RunError(name, exc) from exc


def setup_run(cfg: RunConfig) -> RunSetup:
    timings = {}
    t0 = time.perf_counter()
    law = make_law(cfg.law_name, **({"g": cfg.law["g"]} if cfg.law_name == "swe" else {"gamma": cfg.law["gamma"]}))
    curves = _stage("geometry", build_curves, cfg)
    m = cfg.mesh
    grid = BackgroundGrid(tuple(m["domain"]), m["nx"], m["ny"])
    mesh = _stage("mesh", build_cut_mesh, grid, curves, m["N"], m["curved_face_points"])
    timings["mesh"] = time.perf_counter() - t0
    t1 = time.perf_counter()
    mops = _stage("operators", build_mesh_operators, mesh)
    timings["operators"] = time.perf_counter() - t1
    exact = exact_solution(cfg, law)
    bcs = boundary_conditions(cfg, law, mesh.boundary_tags(), exact)
    source = (lambda x, t: mms_source(law, x, t)) if cfg.mms["enabled"] else None
    disc = _stage("solver", Discretization, mesh, mops, law, bcs, cfg.scheme["flux"], source)
    u0 = _stage("initial condition", disc.project, initial_condition(cfg, law, exact))
    _stage("initial condition", law.check, disc.Vq @ u0, "initial condition")
    srd = _stage("srd", StateRedistribution, disc, cfg.srd["threshold"]) if cfg.srd["enabled"] else None
    timings["setup"] = time.perf_counter() - t0
    return RunSetup(cfg, law, mesh, mops, disc, u0, exact, srd, timings)


# --- outputs -----------------------------------------------------------------

def plot_nodes(disc: Discretization, k: int):
    """Equispaced ``(N+1)^2`` nodes on Cartesian elements; nodes plus corners on cut ones."""
    el = disc.mesh.elements[k]
    N = disc.mesh.N
    if el.kind == CARTESIAN:
        (x0, y0), (x1, y1) = el.bbox()
        s = np.linspace(0.0, 1.0, N + 1)
        X, Y = np.meshgrid(x0 + (x1 - x0) * s, y0 + (y1 - y0) * s, indexing="ij")
        return np.stack([X.ravel(), Y.ravel()], axis=1)
    return np.vstack([disc.mops.ops[k].basis.nodes, el.vertices])


def write_snapshot(disc: Discretization, u, t: float, directory, index: int = 0) -> Path:
    """CSV with columns ``element, x, y, <variables>`` at plot nodes, 17 significant digits."""
    directory = Path(directory)
    path = directory / f"snapshot_{index:06d}.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        fh.write(f"# t = {t!r}\n")
        w.writerow(["element", "x", "y", *disc.law.names])
        for k, o in enumerate(disc.mops.ops):
            pts = plot_nodes(disc, k)
            vals = o.basis(pts) @ u[disc.element_slice(k)]
            for p, v in zip(pts, vals):
                w.writerow([k, *(f"{c:.17g}" for c in p), *(f"{c:.17g}" for c in v)])
    return path


def read_snapshot(path):
    """Return ``(t, element ids, points, values)`` from a snapshot file."""
    with open(path) as fh:
        first = fh.readline()
        t = float(first.split("=", 1)[1])
        rows = list(csv.reader(fh))
    data = np.array([[float(c) for c in r] for r in rows[1:]])
    return t, data[:, 0].astype(int), data[:, 1:3], data[:, 3:]


# --- run ---------------------------------------------------------------------

@dataclass
class RunResult:
    summary: dict
    u: np.ndarray
    setup: RunSetup
    residuals: list
    srd_log: list


def run_setup(setup: RunSetup, output_dir: Optional[Path] = None, t_end: Optional[float] = None) -> RunResult:
    cfg, disc = setup.cfg, setup.disc
    shape = setup.u0.shape
    out = Path(output_dir) if output_dir is not None else None
    snap_dir = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        if cfg.output["snapshot_every"] > 0:
            snap_dir = out / "snapshots"
            snap_dir.mkdir(exist_ok=True)
    residuals, srd_log = [], []
    snaps = [0]
    R = setup.srd

    def f(y, t):
        return disc.rhs(y.reshape(shape), t).ravel()

    def srd_hook(info):
        y = info.y.reshape(shape)
        before = disc.total_entropy(y)
        y2 = R(y)
        after = disc.total_entropy(y2)
        srd_log.append((info.t, before, after, after - before))
        log.debug("SRD at t=%.6g: entropy change %.3e", info.t, after - before)
        return y2.ravel()

    def residual_hook(info):
        y = info.y.reshape(shape)
        du = info.rhs().reshape(shape)
        if R is not None:
            du = R(du)
        residuals.append((info.t, info.dt, disc.entropy_residual(y, du), disc.total_entropy(y)))

    def snapshot_hook(info):
        if (info.step_index + 1) % cfg.output["snapshot_every"] == 0:
            write_snapshot(disc, info.y.reshape(shape), info.t, snap_dir, snaps[0] + 1)
            snaps[0] += 1

    hooks = []
    if R is not None:
        hooks.append(srd_hook)
    if cfg.output["log_residual"]:
        hooks.append(residual_hook)
    if snap_dir is not None:
        hooks.append(snapshot_hook)
        write_snapshot(disc, setup.u0, 0.0, snap_dir, 0)

    tm = cfg.time
    icfg = IntegratorConfig(tm["dt0"], tm["t_end"] if t_end is None else t_end, tm["abstol"], tm["reltol"],
                            max_steps=tm["max_steps"])
    U0 = disc.total_entropy(setup.u0)
    if cfg.output["log_residual"]:
        residuals.append((0.0, 0.0, disc.entropy_residual(setup.u0, f(setup.u0.ravel(), 0.0).reshape(shape)
                                                          if R is None else R(disc.rhs(setup.u0, 0.0))), U0))
    t0 = time.perf_counter()
    res = _stage("time integration", integrate, f, setup.u0.ravel(), icfg, hooks)
    wall = time.perf_counter() - t0
    u = res.y.reshape(shape)
    r = np.array([x[2] for x in residuals]) if residuals else np.zeros(1)
    summary = {
        "name": cfg.name,
        "law": cfg.law_name,
        "flux": cfg.scheme["flux"],
        "N": cfg.mesh["N"],
        "grid": [cfg.mesh["nx"], cfg.mesh["ny"]],
        "n_elements": len(setup.mesh.elements),
        "n_cut_elements": len(setup.mesh.cut_elements),
        "n_dofs": disc.n_dofs,
        "srd": bool(R is not None),
        "srd_merged_neighborhoods": R.table.n_merged if R is not None else 0,
        "final_time": res.t,
        "accepted_steps": res.n_accepted,
        "rejected_steps": res.n_rejected,
        "inadmissible_retries": res.n_inadmissible,
        "initial_entropy": U0,
        "final_entropy": disc.total_entropy(u),
        "max_entropy_residual": float(r.max()),
        "min_entropy_residual": float(r.min()),
        "max_abs_entropy_residual": float(np.abs(r).max()),
        "snapshots": snaps[0] + (1 if snap_dir is not None else 0),
        "wall_time_s": wall,
        "setup_time_s": setup.timings.get("setup"),
    }
    if srd_log:
        d = np.array([x[3] for x in srd_log])
        summary["srd_entropy_change_max"] = float(d.max())
        summary["srd_entropy_change_min"] = float(d.min())
    if setup.exact is not None:
        summary["l2_error"] = [float(e) for e in disc.l2_error(u, setup.exact, res.t)]
        summary["linf_error"] = [float(e) for e in disc.linf_error(u, setup.exact, res.t)]
    if out is not None:
        with open(out / "residual.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "dt", "residual", "total_entropy"])
            for row in residuals:
                w.writerow([repr(float(v)) for v in row])
        if srd_log:
            with open(out / "srd_entropy.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["t", "entropy_before", "entropy_after", "change"])
                for row in srd_log:
                    w.writerow([repr(float(v)) for v in row])
        write_snapshot(disc, u, res.t, out, index=999999).rename(out / "final.csv")
        (out / "summary.json").write_text(json.dumps(summary, indent=2))
    return RunResult(summary, u, setup, residuals, srd_log)


def run(cfg: RunConfig, output_dir=None, t_end=None) -> RunResult:
    return run_setup(setup_run(cfg), output_dir, t_end)


def convergence_study(cfg: RunConfig, levels: int, output_dir=None) -> list[dict]:
    """Run ``levels`` refinements (grid doubled per axis) and fit L2 rates."""
    if levels < 2:
        raise ConfigError("need at least 2 levels", ("levels",))
    rows = []
    for lev in range(levels):
        c = RunConfig(**{**cfg.as_dict(), "source_text": cfg.source_text})
        c.mesh = dict(cfg.mesh, nx=cfg.mesh["nx"] * 2 ** lev, ny=cfg.mesh["ny"] * 2 ** lev)
        c.output = dict(cfg.output, snapshot_every=0, log_residual=False)
        setup = setup_run(c)
        if setup.exact is None:
            raise ConfigError("convergence study needs an exact-solution preset", ("initial",))
        res = run_setup(setup)
        h = (c.mesh["domain"][1] - c.mesh["domain"][0]) / c.mesh["nx"]
        rows.append({"level": lev, "h": h, "errors": res.summary["l2_error"]})
        log.info("level %d h=%.4g errors %s", lev, h, rows[-1]["errors"])
    hs = np.log([r["h"] for r in rows])
    E = np.log(np.array([r["errors"] for r in rows]))
    for i, r in enumerate(rows):
        r["rate"] = [float("nan")] * E.shape[1] if i == 0 else list((E[i] - E[i - 1]) / (hs[i] - hs[i - 1]))
    fit = [float(np.polyfit(hs, E[:, j], 1)[0]) for j in range(E.shape[1])]
    if output_dir is not None:
        out = Path(output_dir)
        out.mkdir(parents=True, exist_ok=True)
        vars_ = list(make_law(cfg.law_name).names)
        with open(out / "convergence.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["level", "h", *[f"error_{v}" for v in vars_], *[f"rate_{v}" for v in vars_]])
            for r in rows:
                w.writerow([r["level"], repr(r["h"]), *map(repr, r["errors"]), *map(repr, r["rate"])])
            w.writerow(["fit", "", *[""] * len(vars_), *map(repr, fit)])
    for r in rows:
        r["fit_rate"] = fit
    return rows


def check_mesh(cfg: RunConfig, output_dir) -> dict:
    t0 = time.perf_counter()
    curves = _stage("geometry", build_curves, cfg)
    m = cfg.mesh
    grid = BackgroundGrid(tuple(m["domain"]), m["nx"], m["ny"])
    mesh = _stage("mesh", build_cut_mesh, grid, curves, m["N"], m["curved_face_points"])
    mops = _stage("operators", build_mesh_operators, mesh)
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_operator_report(mops, out / "operators.csv")
    dump_mesh(mesh, out / "elements.csv", out / "faces.csv")
    d = mops.diagnostics
    info = {
        "n_elements": len(mesh.elements),
        "n_cut_elements": len(mesh.cut_elements),
        "min_volume_fraction": float(min(e.volume for e in mesh.elements) / grid.cell_area),
        "max_qh1_over_perimeter": float(max(x["qh1"] / x["perimeter"] for x in d)),
        "max_hybrid_sbp_residual": float(max(x["hsbp"] for x in d)),
        "max_mass_condition": float(max(x["mass_cond"] for x in d)),
        "time_s": time.perf_counter() - t0,
    }
    (out / "mesh_summary.json").write_text(json.dumps(info, indent=2))
    return info


# --- entry point -------------------------------------------------------------

def bundled_configs():
    return sorted(p.name[:-4] for p in resources.files("cutesdg.configs").iterdir()
                  if p.name.endswith(".cfg"))


def resolve_config(name: str) -> Path:
    p = Path(name)
    if p.exists():
        return p
    stem = name[:-4] if name.endswith(".cfg") else name
    ref = resources.files("cutesdg.configs") / f"{stem}.cfg"
    if ref.is_file():
        return Path(str(ref))
    raise ConfigError(f"config {name!r} not found (bundled: {', '.join(bundled_configs())})")


def _parser():
    p = argparse.ArgumentParser(prog="cutesdg", description="Entropy-stable DG on Cartesian cut meshes")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("config", help="config file or bundled config name")
        sp.add_argument("--output-dir", "-o", default=None)
        sp.add_argument("--threads", type=int, default=None, help="cap on BLAS/OpenMP threads")
        sp.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")

    common(sub.add_parser("run", help="integrate one configuration"))
    cp = sub.add_parser("converge", help="grid refinement study")
    common(cp)
    cp.add_argument("--levels", type=int, required=True)
    common(sub.add_parser("check-mesh", help="build mesh and operators, write diagnostics"))
    sub.add_parser("list", help="list bundled configs")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "list":
        print("\n".join(bundled_configs()))
        return 0
    try:
        cfg = parse_config(resolve_config(args.config), args.override)
        out = Path(args.output_dir or cfg.output["dir"])
        with threadpool_limits(limits=args.threads):
            if args.command == "run":
                res = run(cfg, out)
                print(json.dumps(res.summary, indent=2))
            elif args.command == "converge":
                rows = convergence_study(cfg, args.levels, out)
                for r in rows:
                    print(r["level"], r["h"], " ".join(f"{e:.3e}" for e in r["errors"]),
                          " ".join(f"{x:.2f}" for x in r["rate"]))
                print("fit rates:", " ".join(f"{x:.3f}" for x in rows[0]["fit_rate"]))
            else:
                print(json.dumps(check_mesh(cfg, out), indent=2))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except RunError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
