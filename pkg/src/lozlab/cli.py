"""Command-line entry point: ``lozlab <verb> --config file.json [--out dir]``."""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import warnings
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import dynamics as dyn
from . import experiments as exp
from . import kernel as kr
from . import local_structure as ls
from .errors import LozlabError
from .lattice import domain_from_json, extremal_heights, hexagon_domain
from .limit_shape import HexagonParams, MacroShape, hexagon_height_array, pde_residual
from .render import render_svg
from .tiling import tiling_from_json, tiling_to_json, validate

VERBS = ("shape", "sample", "mix", "kernel", "localstruct", "render")


class Run:
    """Collects in-run assertions and writes outputs under ``out``."""

    def __init__(self, verb, config, out):
        self.verb = verb
        self.config = config
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.checks = []
        self.files = []

    def check(self, name, ok, detail=None):
        self.checks.append({"name": name, "ok": bool(ok), "detail": detail})
        return ok

    @property
    def ok(self):
        return all(c["ok"] for c in self.checks)

    def header(self):
        return "# " + json.dumps({"config": self.config}, sort_keys=True) + "\n"

    def write(self, name, text):
        path = self.out / name
        path.write_text(text)
        self.files.append(name)
        return path

    def write_json(self, name, doc):
        doc = dict(doc)
        doc["config"] = self.config
        return self.write(name, json.dumps(doc, indent=1, sort_keys=True) + "\n")

    def write_csv(self, name, columns, rows):
        buf = io.StringIO()
        buf.write(self.header())
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        w.writerows(rows)
        return self.write(name, buf.getvalue())

    def finish(self):
        summary = {"command": self.verb, "ok": self.ok, "assertions": self.checks,
                   "files": self.files}
        self.write_json("summary.json", summary)
        for c in self.checks:
            print(f"[{'ok' if c['ok'] else 'FAIL'}] {c['name']}" +
                  (f": {c['detail']}" if c["detail"] is not None else ""))
        return 0 if self.ok else 1


def _path(run, name):
    p = Path(name)
    return p if p.is_absolute() else run.base / p


def load_domain(run, cfg):
    """``(domain, boundary, initial heights or None)`` from a config.

    Accepts ``hexagon: [A, B, C]``, ``domain_file`` (domain or tiling JSON),
    or a named ``scenario`` with an integer ``L``.
    """
    if "hexagon" in cfg:
        d, b = hexagon_domain(*cfg["hexagon"])
        return d, b, None
    if "domain_file" in cfg:
        doc = json.loads(_path(run, cfg["domain_file"]).read_text())
        if "heights" in doc:
            d, b, h = tiling_from_json(doc)
            return d, b, h
        d, b = domain_from_json(doc)
        return d, b, None
    if "scenario" in cfg:
        L = cfg.get("L", 16)
        L = L[0] if isinstance(L, list) else L
        d, b = exp.scenario(cfg["scenario"], **cfg.get("domain", {})).discretize(int(L))
        return d, b, None
    raise LozlabError("config needs one of 'hexagon', 'domain_file' or 'scenario'")


def _initial(d, b, h, which):
    lo, hi = extremal_heights(d, b)
    if which == "min":
        return lo
    if which == "file" or (which is None and h is not None):
        if h is None:
            raise LozlabError("init 'file' needs a tiling document")
        return h
    return hi


# --- verbs ----------------------------------------------------------------

def cmd_shape(run, cfg):
    sc = exp.scenario(cfg.get("scenario", "hexagon-in-ellipse"), **cfg.get("domain", {}))
    shape = exp.solve_shape(sc, cfg.get("mesh", 0.1))
    mesh = shape.mesh
    inner = ~mesh.boundary
    run.write_json("shape.json", shape.to_json())
    buf = run.header() + shape.residual_csv()
    run.write("residual.csv", buf)
    res = float(np.max(np.abs(pde_residual(mesh, shape.heights)[inner]))) if inner.any() else 0.0
    run.check("pde residual", res <= cfg.get("residual_tol", 1e-6), res)
    run.check("not clamped", not shape.clamped)
    if sc.name == "hexagon-in-ellipse" and cfg.get("check_closed_form", True):
        pr = sc.params
        p = HexagonParams(pr["a"], pr["b"], pr["c"])
        s = pr["scale"]
        exact = s * hexagon_height_array(p, mesh.nodes[:, 0] / s, mesh.nodes[:, 1] / s)
        err = float(np.max(np.abs(shape.heights - exact)[inner]))
        run.check("closed form", err <= 5 * mesh.size ** 2, err)


def cmd_sample(run, cfg):
    d, b, h = load_domain(run, cfg)
    init = _initial(d, b, h, cfg.get("init"))
    seed = int(cfg.get("seed", 0))
    if "times" in cfg:
        times = [float(t) for t in cfg["times"]]
    else:
        t_end = float(cfg.get("t_end", 10.0 * d.L ** 2))
        n = int(cfg.get("snapshots", 20))
        times = list(np.linspace(0.0, t_end, n + 1))
    target = None
    if "scenario" in cfg and cfg.get("target", True):
        sc = exp.scenario(cfg["scenario"], **cfg.get("domain", {}))
        target = exp.solve_shape(sc, cfg.get("mesh", 0.1))
    rows, state = dyn.trajectory(d, b, init, seed, times, target)
    run.write("trajectory.csv", dyn.write_trajectory_csv(rows, {"seed": seed, "config": run.config}))
    final = state.h
    run.write_json("tiling.json", tiling_to_json(final, b))
    run.check("final configuration valid", not validate(final, b))
    if "equilibrium" in cfg:
        eq_cfg = dict(cfg["equilibrium"])
        eq_cfg.setdefault("sides", cfg.get("hexagon", [2, 2, 2]))
        eq_cfg.setdefault("seeds", [seed])
        rep = exp.run_equilibrium_validation(eq_cfg)
        run.write_json("equilibrium.json", rep)
        run.check("edge frequencies within bound", rep["ok"], rep["max_edge_z"])


def cmd_mix(run, cfg):
    kind = cfg.get("experiment", "scaling")
    ecfg = {k: v for k, v in cfg.items() if k not in ("experiment", "band")}
    ecfg.setdefault("scenario", "hexagon-in-ellipse")
    if kind == "trapping":
        rep = exp.run_trapping_demo(ecfg)
        run.write_json("trapping.json", rep)
        run.write_csv("checkpoints.csv", ["seed", "i", "j", "t", "contained"],
                      [[r["seed"], r["i"], r["j"], repr(r["t"]), int(r["contained"])]
                       for r in rep["checkpoints"]])
        first = [r for r in rep["checkpoints"] if r["i"] == 0 and r["j"] == 0 and r["t"] == 0]
        run.check("initial containment", all(r["contained"] for r in first))
        return
    fit = exp.run_mixing_scaling(ecfg)
    run.write_json("scaling.json", fit.to_dict())
    run.write_csv("hitting_times.csv", ["L", "seed", "t"],
                  [[L, s, repr(float(t))] for L, ts in fit.raw.items()
                   for s, t in zip(ecfg.get("seeds", exp.ExperimentConfig().seeds), ts)])
    finite = all(math.isfinite(t) for ts in fit.raw.values() for t in ts)
    run.check("all seeds hit within horizon", finite)
    if "band" in cfg:
        lo, hi = cfg["band"]
        run.check("exponent in band", lo <= fit.exponent <= hi, fit.exponent)


def _fmt_frac(p):
    return f"{p.numerator}/{p.denominator}"


def cmd_kernel(run, cfg):
    spec = kr.HexLatticeSpec(*cfg["sides"])
    a, b, c = spec.sides
    if "labels" in cfg:
        labels = [kr.EdgeLabel(*lab) for lab in cfg["labels"]]
    elif "edges" in cfg:
        labels = [kr.edge_label(spec, tuple(e)) for e in cfg["edges"]]
    else:
        labels = [kr.edge_label(spec, e) for e in kr.vertical_edges(spec)]
    cross = cfg.get("cross_check", False)
    rows = []
    agree = True
    for lab in labels:
        p = kr.exact_edge_prob(spec, lab)
        i, j = kr.lower_endpoint(spec, lab)
        try:
            pi = kr.pi_infinity(*kr.label_point(spec, lab), a, b, c)
        except LozlabError:
            pi = float("nan")
        if cross:
            agree &= kr.exact_edge_prob_residues(spec, lab) == p
        rows.append([i, j, lab.X, lab.Y, _fmt_frac(p), repr(float(p)), repr(pi)])
    run.write_csv("kernel.csv", ["i", "j", "X", "Y", "p", "p_float", "pi_inf"], rows)
    run.check("probabilities in [0, 1]", all(0 <= Fraction(r[4]) <= 1 for r in rows))
    if cross:
        run.check("residue route agrees", agree)
    if "profile" in cfg:
        col = tuple(cfg["profile"])
        bottom = exp.column_bottom(spec, col)
        prof = []
        v = bottom
        while True:
            dh = kr.mean_height_diff(spec, bottom, v)
            prof.append([v[0], v[1], _fmt_frac(dh), repr(float(dh)),
                         repr(float(kr.kernel_to_shape_height(dh, spec)))])
            nxt = (v[0] - 1, v[1] - 1)
            try:
                kr.edge_label(spec, v)
            except LozlabError:
                break
            v = nxt
        run.write_csv("profile.csv", ["i", "j", "dh", "dh_float", "dh_shape_units"], prof)


def _parse_tuple(text):
    vals = [float(v) for v in text.replace(";", ",").split(",") if v.strip()]
    if len(vals) != 4:
        raise LozlabError(f"expected 4 comma-separated numbers, got {text!r}")
    return vals


def _localstruct_jobs(run, cfg, args):
    jobs = []
    for op in ("forward", "inverse", "det"):
        for v in cfg.get(op, []):
            jobs.append((op, [float(x) for x in v]))
        for v in getattr(args, op, None) or []:
            jobs.append((op, _parse_tuple(v)))
    if "batch" in cfg:
        with open(_path(run, cfg["batch"]), newline="") as fh:
            for row in csv.DictReader(r for r in fh if not r.startswith("#")):
                jobs.append((row["op"], [float(row[k]) for k in ("v1", "v2", "v3", "v4")]))
    return jobs


def cmd_localstruct(run, cfg, args=None):
    jobs = _localstruct_jobs(run, cfg, args)
    rows = []
    for op, v in jobs:
        out, ok, note = [], True, ""
        try:
            if op == "forward":
                out = list(ls.forward(v))
            elif op == "inverse":
                w = ls.inverse(v)
                back = ls.forward(w)
                err = float(np.max(np.abs(np.subtract(back, v))))
                ok = err <= 1e-8
                out, note = list(w), f"residual {err:.3g}"
            elif op == "det":
                dc = ls.det_closed(v)
                dfd = float(np.linalg.det(ls.jacobian_fd(v)))
                rel = abs(dfd - dc) / abs(dc)
                ok = dc < 0 and rel <= 1e-4
                out, note = [dc, dfd], f"rel {rel:.3g}"
            else:
                raise LozlabError(f"unknown op {op!r}")
        except LozlabError as exc:
            ok, note = False, str(exc)
        rows.append([op, *map(repr, v), *map(repr, out), *[""] * (4 - len(out)), int(ok), note])
        run.check(f"{op} {tuple(v)}", ok, note or None)
        print(op, " ".join(f"{x:.12g}" for x in out))
    run.write_csv("localstruct.csv", ["op", "v1", "v2", "v3", "v4", "o1", "o2", "o3", "o4",
                                      "ok", "note"], rows)


def cmd_render(run, cfg):
    style = cfg.get("style", {})
    if "input" in cfg:
        doc = json.loads(_path(run, cfg["input"]).read_text())
        if "triangles" in doc:
            obj = MacroShape.from_json(doc)
        else:
            _, _, obj = tiling_from_json(doc)
    elif cfg.get("macroshape"):
        sc = exp.scenario(cfg.get("scenario", "hexagon-in-ellipse"), **cfg.get("domain", {}))
        obj = exp.solve_shape(sc, cfg.get("mesh", 0.1))
    else:
        d, b, h = load_domain(run, cfg)
        obj = _initial(d, b, h, cfg.get("init"))
        if "t" in cfg:
            obj = dyn.step_to(dyn.new_chain(obj, int(cfg.get("seed", 0))), float(cfg["t"])).h
        if "hexagon" in cfg and cfg.get("ellipse"):
            A, B, C = cfg["hexagon"]
            n = A + B + C
            style = {**style, "ellipse": (A / n, B / n, C / n)}
    svg = render_svg(obj, style)
    run.write(cfg.get("file", "render.svg"), svg)
    run.check("svg written", svg.startswith("<svg") and svg.rstrip().endswith("</svg>"))


COMMANDS = {"shape": cmd_shape, "sample": cmd_sample, "mix": cmd_mix, "kernel": cmd_kernel,
            "localstruct": cmd_localstruct, "render": cmd_render}


def build_parser():
    p = argparse.ArgumentParser(prog="lozlab", description=__doc__)
    p.add_argument("verb", choices=VERBS)
    p.add_argument("--config", help="JSON configuration file")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--forward", action="append", metavar="a,b,x,y")
    p.add_argument("--inverse", action="append", metavar="z1,z2,z11,z12")
    p.add_argument("--det", action="append", metavar="a,b,x,y")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    tuples = any(getattr(args, k) for k in ("forward", "inverse", "det"))
    if args.config is None and not (args.verb == "localstruct" and tuples):
        print("lozlab: --config is required", file=sys.stderr)
        return 2
    try:
        cfg = json.loads(Path(args.config).read_text()) if args.config else {}
    except (OSError, json.JSONDecodeError) as exc:
        print(f"lozlab: cannot read config: {exc}", file=sys.stderr)
        return 2
    run = Run(args.verb, cfg, args.out)
    run.base = Path(args.config).resolve().parent if args.config else Path.cwd()
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            if args.verb == "localstruct":
                cmd_localstruct(run, cfg, args)
            else:
                COMMANDS[args.verb](run, cfg)
        for w in caught:
            print(f"warning: {w.message}", file=sys.stderr)
    except Exception as exc:  # reported as a failed assertion, never as a traceback
        import jsonschema

        if not isinstance(exc, (LozlabError, ValueError, KeyError, TypeError,
                                jsonschema.ValidationError)):
            raise
        run.check("run completed", False, f"{type(exc).__name__}: {exc}")
    return run.finish()


if __name__ == "__main__":
    sys.exit(main())
