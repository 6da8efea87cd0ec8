"""Command-line front end: reproducible experiments and figure/table export.

Subcommands: arrangements, solve, flow, certify, geometry-export, reproduce.
Global flags: --tol, --json, --out-dir, --seed, --deterministic.  Exit codes:
0 success, 1 numerical failure, 2 usage error.  Every command that writes
files also writes a manifest.json alongside them; CSV files carry a timestamp
header line unless --deterministic is set.  RELU_LAB_THREADS caps the
parallelism of per-mask solves.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .arrangements import cover_bound, enumerate_masks, matrix_rank
from .certify import (dual_feasible, extract_kkt, local_extremum,
                      ortho_coverage, spike_free)
from .convex import (NetworkParams, build_primal, network_from_convex,
                     solve_dual, solve_primal)
from .datasets import (BUILTIN_DATASETS, Dataset, builtin_dataset,
                       dataset_to_json, is_orthogonal_separable, load_dataset)
from .flow import FlowConfig, network_masks, recover_dual, run_flow
from .geometry import extreme_point, polar_gauge, rectified_ellipsoid_samples
from .solver import SolverError, optimal_face_bounds

EXIT_OK = 0
EXIT_NUMERICAL = 1
EXIT_USAGE = 2


class UsageError(RuntimeError):
    pass


@dataclasses.dataclass
class RunManifest:
    command: str
    config: dict
    dataset_name: str
    dataset_sha256: str
    outputs: list[str]
    versions: dict
    wall_time: float

    def write(self, out_dir: Path):
        path = out_dir / "manifest.json"
        path.write_text(json.dumps(dataclasses.asdict(self), indent=2,
                                   sort_keys=True) + "\n")
        for rel in self.outputs:
            if not (out_dir / rel).exists():
                raise SolverError(f"manifest references missing output {rel}")


def _dataset_from_args(args) -> Dataset:
    name = args.dataset
    if name in BUILTIN_DATASETS:
        return builtin_dataset(name)
    path = Path(name)
    if path.exists():
        return load_dataset(path)
    raise UsageError(f"unknown dataset {name!r}: not a built-in "
                     f"({sorted(BUILTIN_DATASETS)}) and no such file")


def _dataset_hash(ds: Dataset) -> str:
    blob = json.dumps(dataset_to_json(ds), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def _manifest(args, ds: Dataset, outputs: list[str], t0: float) -> RunManifest:
    config = {k: v for k, v in vars(args).items()
              if k not in ("func",) and not callable(v)}
    return RunManifest(
        command=args.command, config=config, dataset_name=ds.name,
        dataset_sha256=_dataset_hash(ds), outputs=outputs,
        versions={"relu_lab": __version__, "numpy": np.__version__,
                  "scipy": scipy.__version__},
        wall_time=round(time.perf_counter() - t0, 6))


def _csv_header(args) -> list[str]:
    if args.deterministic:
        return []
    return [f"# generated {datetime.now(timezone.utc).isoformat()}"]


def _write_csv(path: Path, header_cols: list[str], rows, args):
    lines = _csv_header(args)
    lines.append(",".join(header_cols))
    for row in rows:
        lines.append(",".join("" if v is None else
                              (f"{v:.12g}" if isinstance(v, float) else str(v))
                              for v in row))
    path.write_text("\n".join(lines) + "\n")


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_arrangements(args) -> int:
    ds = _dataset_from_args(args)
    masks = enumerate_masks(ds.X, method=args.method)
    # samples as rows, one column per arrangement
    table = np.array([m.bits for m in masks]).T
    print(table)
    r = matrix_rank(ds.X)
    bound = cover_bound(ds.N, r) if ds.N >= 2 else float("inf")
    print(f"{len(masks)} arrangements; counting bound "
          f"2r(e(N-1)/r)^r = {bound:.4f} at rank {r}")
    if args.json:
        print(json.dumps({"masks": [m.as_string() for m in masks],
                          "count": len(masks), "bound": bound}))
    return EXIT_OK


def _solution_json(sol, masks, lam) -> dict:
    groups = []
    for j, side, vec in sol.active_groups():
        groups.append({"mask": masks[j].as_string(), "sign": side,
                       "u": [float(v) for v in vec]})
    return {"objective": float(sol.objective), "groups": groups,
            "lambda": [float(v) for v in lam]}


def cmd_solve(args) -> int:
    t0 = time.perf_counter()
    ds = _dataset_from_args(args)
    if not ds.is_binary:
        raise UsageError("solve currently drives binary datasets; "
                         "encode multiclass data per class")
    masks = enumerate_masks(ds.X)
    payload: dict = {}
    if args.which in ("primal", "both"):
        trace_every = 100 if args.solver_trace else 0
        sol, dual, report = solve_primal(build_primal(ds.X, ds.y, masks),
                                         tol=args.tol,
                                         trace_every=trace_every)
        if args.solver_trace:
            _write_csv(Path(args.solver_trace),
                       ["iteration", "objective", "primal_res", "dual_res"],
                       report.trace, args)
        if report.status != "optimal":
            print(f"primal solve: {report.status}", file=sys.stderr)
            return EXIT_NUMERICAL
        print(f"primal objective {report.objective:.6f} "
              f"({report.iterations} iterations)")
        payload["primal"] = _solution_json(sol, masks, dual.lam)
    if args.which in ("dual", "both"):
        dv, dobj, dreport = solve_dual(ds.X, ds.y, masks, tol=args.tol)
        if dreport.status != "optimal":
            print(f"dual solve: {dreport.status}", file=sys.stderr)
            return EXIT_NUMERICAL
        print(f"dual objective {dobj:.6f} ({dreport.iterations} iterations)")
        payload["dual"] = {"objective": dobj,
                           "lambda": [float(v) for v in dv.lam]}
    if args.json:
        print(json.dumps(payload))
    if args.out_dir:
        out = _out_dir(args)
        (out / "solution.json").write_text(json.dumps(payload, indent=2) + "\n")
        _manifest(args, ds, ["solution.json"], t0).write(out)
    return EXIT_OK


def _parse_checkpoints(spec: str, iters: int) -> tuple[int, ...]:
    if not spec:
        return tuple(c for c in (10, 100, 1000, 10_000) if c <= iters)
    try:
        points = tuple(sorted({int(tok) for tok in spec.split(",") if tok}))
    except ValueError as exc:
        raise UsageError(f"bad checkpoint list {spec!r}") from exc
    return tuple(c for c in points if 1 <= c <= iters)


def _flow_rows(trace):
    for rec in trace.records:
        for i, nr in enumerate(rec.neurons):
            yield (rec.iteration, rec.loss,
                   None if rec.margin is None else rec.margin, i, nr.r,
                   *[float(v) for v in nr.u], nr.s, nr.mask.as_string(),
                   None if nr.alignment is None else nr.alignment)


def cmd_flow(args) -> int:
    t0 = time.perf_counter()
    ds = _dataset_from_args(args)
    cfg = FlowConfig(m=args.m, init_scale=args.init_scale, step=args.step,
                     iters=args.iters,
                     checkpoints=_parse_checkpoints(args.checkpoints, args.iters),
                     seed=args.seed)
    trace = run_flow(ds, cfg)
    traces = trace if isinstance(trace, list) else [trace]
    for k, tr in enumerate(traces):
        tag = f"class {k + 1}: " if len(traces) > 1 else ""
        final = tr.final()
        margin = "n/a" if final.margin is None else f"{final.margin:.6f}"
        print(f"{tag}iteration {final.iteration}: loss {final.loss:.6e}, "
              f"margin {margin}, sign flips {tr.w2_sign_flips}, "
              f"max balance drift {tr.max_balance_drift:.3e}")
        if tr.aborted_at is not None:
            print(f"{tag}aborted at iteration {tr.aborted_at} "
                  f"(non-finite parameters)", file=sys.stderr)
            return EXIT_NUMERICAL
    if args.out_dir:
        out = _out_dir(args)
        outputs = []
        d = ds.d
        cols = (["iter", "loss", "margin", "neuron_id", "r"]
                + [f"u{i + 1}" for i in range(d)] + ["s", "mask", "alignment"])
        for k, tr in enumerate(traces):
            name = "flow_trace.csv" if len(traces) == 1 else f"flow_trace_class{k + 1}.csv"
            _write_csv(out / name, cols, _flow_rows(tr), args)
            outputs.append(name)
        _manifest(args, ds, outputs, t0).write(out)
    return EXIT_OK


def _load_network(path: str) -> NetworkParams:
    try:
        spec = json.loads(Path(path).read_text())
        return NetworkParams(W1=np.asarray(spec["W1"], dtype=float),
                             w2=np.asarray(spec["w2"], dtype=float))
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot load network file {path!r}: {exc}") from exc


def cmd_certify(args) -> int:
    t0 = time.perf_counter()
    ds = _dataset_from_args(args)
    if not ds.is_binary:
        raise UsageError("certify drives binary datasets")
    masks = enumerate_masks(ds.X)
    if args.network:
        nets = [(None, _load_network(args.network))]
    else:
        cfg = FlowConfig(m=args.m, init_scale=args.init_scale, step=args.step,
                         iters=args.iters,
                         checkpoints=_parse_checkpoints(args.checkpoints,
                                                        args.iters),
                         seed=args.seed)
        trace = run_flow(ds, cfg)
        nets = [(rec.iteration, NetworkParams(W1=rec.W1, w2=rec.w2))
                for rec in trace.records if rec.iteration > 0]
    certificates = []
    sep = is_orthogonal_separable(ds)
    for it, net in nets:
        tag = "" if it is None else f"[iter {it}] "
        lam, gauge_net, gauge_all = recover_dual(ds.X, ds.y, net, masks)
        lam = lam * args.lambda_scale
        cert = dual_feasible(ds.X, masks, lam, tol=args.tol_cert)
        print(f"{tag}dual-feasible: {str(cert.verdict).lower()} ({cert.detail})")
        certificates.append((it, cert))
        extraction = extract_kkt(ds.X, ds.y, net.W1, net.w2, lam)
        if sep.separable:
            cov = ortho_coverage(extraction, ds.y)
            print(f"{tag}ortho-coverage: {str(cov.verdict).lower()}")
            certificates.append((it, cov))
    sf = spike_free(ds.X)
    print(f"spike-free: {str(sf.verdict).lower()} "
          f"(max ||z|| = {sf.slacks['max_z_norm']:.6f}, approximate)")
    certificates.append((None, sf))
    if args.json:
        print(json.dumps([{"iteration": it, **c.to_json()}
                          for it, c in certificates]))
    if args.out_dir:
        out = _out_dir(args)
        (out / "certificates.json").write_text(json.dumps(
            [{"iteration": it, **c.to_json()} for it, c in certificates],
            indent=2) + "\n")
        _manifest(args, ds, ["certificates.json"], t0).write(out)
    return EXIT_OK


def cmd_geometry_export(args) -> int:
    t0 = time.perf_counter()
    ds = _dataset_from_args(args)
    if ds.d != 2:
        raise UsageError("geometry export requires d = 2")
    out = _out_dir(args)
    thetas, pts = rectified_ellipsoid_samples(ds.X, args.samples)
    _write_csv(out / "ellipsoid.csv",
               ["theta"] + [f"q{i + 1}" for i in range(ds.N)],
               ((float(t), *[float(v) for v in row])
                for t, row in zip(thetas, pts)), args)
    masks = enumerate_masks(ds.X)
    lam = ds.y / np.linalg.norm(ds.y)
    rows = []
    for mask in masks:
        for sense in ("max", "min"):
            r = extreme_point(ds.X, mask, lam, sense, tol=args.tol)
            rows.append((mask.as_string(), sense, float(r.u[0]),
                         float(r.u[1]), float(r.value)))
    _write_csv(out / "extreme_points.csv",
               ["mask", "sense", "u1", "u2", "value"], rows, args)
    _manifest(args, ds, ["ellipsoid.csv", "extreme_points.csv"], t0).write(out)
    print(f"wrote ellipsoid.csv and extreme_points.csv to {out}")
    return EXIT_OK


def _reproduce_notebook(args, out: Path) -> list[str]:
    ds = builtin_dataset("notebook")
    masks = enumerate_masks(ds.X)
    outputs = []
    table = np.array([m.bits for m in masks]).T
    (out / "masks.txt").write_text(f"{table}\n")
    outputs.append("masks.txt")

    problem = build_primal(ds.X, ds.y, masks)
    sol, dual, report = solve_primal(problem, tol=args.tol)
    (out / "primal.json").write_text(
        json.dumps(_solution_json(sol, masks, dual.lam), indent=2) + "\n")
    outputs.append("primal.json")

    # pin the split-invariant functionals of the optimal set; the flat
    # directions need a slack well below the op default (see ledger)
    d = problem.d
    face_slack = 5e-8
    face = {}
    pos_pair = [j for j, m in enumerate(masks) if m.as_string() in ("100", "110")]
    neg_pair = [j for j, m in enumerate(masks) if m.as_string() in ("011", "111")]
    for label, pair, side in (("positive", pos_pair, "+"),
                              ("negative", neg_pair, "-")):
        for coord in range(d):
            f = np.zeros(problem.prog.num_vars)
            for j in pair:
                f[problem.group_slice(j, side)][coord] = 1.0
            lo, hi = optimal_face_bounds(problem.prog, report.objective, f,
                                         slack=face_slack)
            face[f"{label}_sum_coord{coord + 1}"] = [lo, hi]
    for j, mask in enumerate(masks):
        for side in ("-", "+"):
            if (side == "+" and j in pos_pair) or (side == "-" and j in neg_pair):
                continue
            for coord in range(d):
                f = np.zeros(problem.prog.num_vars)
                f[problem.group_slice(j, side)][coord] = 1.0
                lo, hi = optimal_face_bounds(problem.prog, report.objective, f,
                                             slack=face_slack)
                face[f"inactive_{mask.as_string()}{side}_coord{coord + 1}"] = [lo, hi]
    gaps = max(hi - lo for lo, hi in face.values())
    face["verified"] = gaps <= 1e-3
    (out / "optimal_face.json").write_text(json.dumps(face, indent=2) + "\n")
    outputs.append("optimal_face.json")

    cfg = FlowConfig(m=8, init_scale=args.init_scale, step=1.0, iters=10_000,
                     checkpoints=(10, 100, 1000, 10_000), seed=args.seed)
    trace = run_flow(ds, cfg)
    cols = (["iter", "loss", "margin", "neuron_id", "r", "u1", "u2", "s",
             "mask", "alignment"])
    _write_csv(out / "flow_trace.csv", cols, _flow_rows(trace), args)
    outputs.append("flow_trace.csv")

    duals = []
    margin_rows = []
    for rec in trace.records:
        if rec.iteration == 0:
            continue
        net = NetworkParams(W1=rec.W1, w2=rec.w2)
        lam, gauge_net, gauge_all = recover_dual(ds.X, ds.y, net, masks)
        duals.append({"iteration": rec.iteration,
                      "lambda": [float(v) for v in lam],
                      "gauge_network": gauge_net, "gauge_all": gauge_all,
                      "dual_feasible": bool(gauge_all <= 1.0 + 1e-4)})
        margin_rows.append((rec.iteration, rec.margin))
    (out / "duals.json").write_text(json.dumps(duals, indent=2) + "\n")
    outputs.append("duals.json")
    _write_csv(out / "margins.csv", ["iter", "margin"], margin_rows, args)
    outputs.append("margins.csv")
    print(f"notebook reproduction in {out}: primal {report.objective:.4f}, "
          f"final margin {margin_rows[-1][1]:.4f}, "
          f"optimal set verified: {face['verified']}")
    return outputs


def _reproduce_appendix(args, out: Path, name: str) -> list[str]:
    ds = builtin_dataset(name)
    outputs = []
    thetas, pts = rectified_ellipsoid_samples(ds.X, 1024)
    _write_csv(out / "ellipsoid.csv",
               ["theta"] + [f"q{i + 1}" for i in range(ds.N)],
               ((float(t), *[float(v) for v in row])
                for t, row in zip(thetas, pts)), args)
    outputs.append("ellipsoid.csv")

    masks = enumerate_masks(ds.X)
    problem = build_primal(ds.X, ds.y, masks)
    sol, dual, report = solve_primal(problem, tol=args.tol)
    (out / "primal.json").write_text(
        json.dumps(_solution_json(sol, masks, dual.lam), indent=2) + "\n")
    outputs.append("primal.json")

    rows = []
    for mask in masks:
        for sense in ("max", "min"):
            r = extreme_point(ds.X, mask, dual.lam, sense, tol=args.tol)
            rows.append((mask.as_string(), sense, float(r.u[0]),
                         float(r.u[1]), float(r.value)))
    _write_csv(out / "extreme_points.csv",
               ["mask", "sense", "u1", "u2", "value"], rows, args)
    outputs.append("extreme_points.csv")

    cfg = FlowConfig(m=10, init_scale=args.init_scale, step=0.1, iters=10_000,
                     checkpoints=(1, 10, 100, 1000, 10_000), seed=args.seed)
    trace = run_flow(ds, cfg)
    cols = (["iter", "loss", "margin", "neuron_id", "r", "u1", "u2", "s",
             "mask", "alignment"])
    _write_csv(out / "flow_trace.csv", cols, _flow_rows(trace), args)
    outputs.append("flow_trace.csv")
    print(f"{name} reproduction in {out}: primal {report.objective:.4f}, "
          f"{len(masks)} arrangements")
    return outputs


def cmd_reproduce(args) -> int:
    t0 = time.perf_counter()
    if args.target == "notebook":
        ds = builtin_dataset("notebook")
        out = _out_dir(args)
        outputs = _reproduce_notebook(args, out)
    elif args.target in ("appendix-ortho", "appendix-nonspikefree"):
        ds = builtin_dataset(args.target)
        out = _out_dir(args)
        outputs = _reproduce_appendix(args, out, args.target)
    else:
        raise UsageError(f"unknown reproduce target {args.target!r}")
    args.dataset = args.target
    _manifest(args, ds, outputs, t0).write(out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="relu-lab",
        description="Convex max-margin ReLU training experiments")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, dataset=True):
        if dataset:
            p.add_argument("--dataset", default="notebook",
                           help="built-in name or JSON file path")
        p.add_argument("--tol", type=float, default=1e-8,
                       help="solver tolerance")
        p.add_argument("--json", action="store_true",
                       help="print machine-readable JSON")
        p.add_argument("--out-dir", default="",
                       help="write outputs and a manifest here")
        p.add_argument("--seed", type=int, default=1)
        p.add_argument("--deterministic", action="store_true",
                       help="suppress timestamp header lines in CSV output")

    p = sub.add_parser("arrangements", help="enumerate activation masks")
    common(p)
    p.add_argument("--method", choices=("exhaustive", "sweep2d"),
                   default="exhaustive")
    p.set_defaults(func=cmd_arrangements)

    p = sub.add_parser("solve", help="solve the convex max-margin program")
    common(p)
    p.add_argument("--which", choices=("primal", "dual", "both"),
                   default="both")
    p.add_argument("--solver-trace", default="",
                   help="write (iteration, objective, primal_res, dual_res) "
                        "CSV of the primal solve here")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("flow", help="run the subgradient-descent simulator")
    common(p)
    p.add_argument("--m", type=int, default=8, help="neuron count")
    p.add_argument("--init-scale", type=float, default=1e-4)
    p.add_argument("--step", type=float, default=1.0)
    p.add_argument("--iters", type=int, default=10_000)
    p.add_argument("--checkpoints", default="",
                   help="comma-separated iteration list")
    p.set_defaults(func=cmd_flow)

    p = sub.add_parser("certify", help="certificates for a trained network")
    common(p)
    p.add_argument("--network", default="",
                   help="JSON file with W1 (d x m) and w2 (m)")
    p.add_argument("--m", type=int, default=8)
    p.add_argument("--init-scale", type=float, default=1e-4)
    p.add_argument("--step", type=float, default=1.0)
    p.add_argument("--iters", type=int, default=10_000)
    p.add_argument("--checkpoints", default="")
    p.add_argument("--lambda-scale", type=float, default=1.0,
                   help="scale the recovered dual (negative-control hook)")
    p.add_argument("--tol-cert", type=float, default=1e-6)
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("geometry-export",
                       help="rectified-ellipsoid trace and extreme points")
    common(p)
    p.add_argument("--samples", type=int, default=1024)
    p.set_defaults(func=cmd_geometry_export)

    p = sub.add_parser("reproduce",
                       help="regenerate the reference experiment outputs")
    p.add_argument("target",
                   choices=("notebook", "appendix-ortho",
                            "appendix-nonspikefree"))
    common(p, dataset=False)
    p.add_argument("--init-scale", type=float, default=1e-4)
    p.set_defaults(func=cmd_reproduce)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "out_dir", "") == "" and args.command in ("geometry-export",
                                                               "reproduce"):
        args.out_dir = f"relu-lab-{args.command}"
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SolverError, RuntimeError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
