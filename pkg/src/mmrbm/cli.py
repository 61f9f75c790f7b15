"""Command line front end.

Subcommands: ``fom``, ``offline``, ``online``, ``predict``, ``bench``, ``quad``.
Every failure exits non-zero after printing one line
``ERROR {"type": ..., "message": ...}`` to stderr.
"""

import argparse
import json
import os
import sys
import time

import numpy as np

from . import artifacts
from .angular import AngularQuadrature, certify_exactness, lebedev
from .config import RunConfig
from .errors import ConfigurationError, MMRBError, NumericalError, QuadratureError, SolverError
from .fom import fit_dt, fom_solve, operators_for, stable_dt
from .greedy import greedy_offline
from .pipeline import evaluate, pod_from_fom, predict_directions, run_online
from .rom import expand_f, load_model, save_model
from .snapshots import SnapshotWriter, write_rho_csv

EXIT_USAGE = 2
EXIT_NUMERICAL = 3
EXIT_OTHER = 1


def _common(parser):
    parser.add_argument("--config", help="INI run configuration; flags override it")
    parser.add_argument("--preset", help="homogeneous | anisotropic | multiscale | lattice")
    parser.add_argument("--scale", choices=("desk", "paper"))
    parser.add_argument("--eps", type=float, help="Knudsen number")
    parser.add_argument("--sigma-s", type=float, help="constant scattering override")
    parser.add_argument("--mesh", type=int, nargs=2, metavar=("NX", "NY"))
    parser.add_argument("--tfinal", type=float)
    parser.add_argument("--vtrain", type=int, metavar="N", help="Lebedev points for training")
    parser.add_argument("--vtest", type=int, metavar="N", help="Lebedev points for testing")
    parser.add_argument("--tol-ratio", type=float)
    parser.add_argument("--tol-rho", type=float)
    parser.add_argument("--tol-f", type=float)
    parser.add_argument("--max-iters", type=int)
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument("--threads", type=int, help="BLAS thread limit")
    parser.add_argument("--deterministic", action="store_true",
                        help="single BLAS thread for bitwise reproducible runs")


def build_parser():
    parser = argparse.ArgumentParser(prog="mmrbm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fom", help="full-order run on the training rule; writes snapshots")
    p.add_argument("preset_name", nargs="?", metavar="PRESET")
    p.add_argument("--stride", type=int, default=1, help="store every N-th level (and the last)")
    _common(p)

    p = sub.add_parser("offline", help="greedy training; writes the model and report")
    p.add_argument("preset_name", nargs="?", metavar="PRESET")
    _common(p)

    p = sub.add_parser("online", help="reduced run from a saved model; writes moments")
    p.add_argument("preset_name", nargs="?", metavar="PRESET")
    p.add_argument("--model", required=True)
    _common(p)

    p = sub.add_parser("predict", help="angular flux at directions listed in a node file")
    p.add_argument("preset_name", nargs="?", metavar="PRESET")
    p.add_argument("--model", required=True)
    p.add_argument("--nodes", required=True, help="text file, one 'vx vy vz' per line")
    p.add_argument("--all-levels", action="store_true", help="write every time level")
    _common(p)

    p = sub.add_parser("bench", help="train, evaluate against FOM on the test rule, write plots")
    p.add_argument("preset_name", nargs="?", metavar="PRESET")
    p.add_argument("--pod", action="store_true", help="also time the vanilla POD baseline")
    _common(p)

    p = sub.add_parser("quad", help="certify the exactness of a quadrature file")
    p.add_argument("file")
    p.add_argument("--degree", type=int, required=True)
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--out", default=None)
    return parser


# ------------------------------------------------------------------ helpers


def run_config(args):
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    name = getattr(args, "preset_name", None) or args.preset
    cfg = cfg.with_(preset=name, scale=args.scale, epsilon=args.eps, sigma_s=args.sigma_s,
                    final_time=args.tfinal, v_train=args.vtrain, v_test=args.vtest,
                    tol_ratio=args.tol_ratio, tol_error_rho=args.tol_rho,
                    tol_error_f=args.tol_f, max_iterations=args.max_iters)
    if args.mesh:
        cfg = cfg.with_(nx=args.mesh[0], ny=args.mesh[1])
    return cfg


def _out_dir(args):
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _limit_threads(args):
    n = 1 if getattr(args, "deterministic", False) else getattr(args, "threads", None)
    if n is None:
        return None
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=int(n))


def _say(msg):
    print(msg, flush=True)


def _load_nodes(path):
    with open(path) as fh:
        text = fh.read()
    rows = [line.split() for line in text.splitlines()
            if line.strip() and not line.lstrip().startswith("#")]
    data = np.array([[float(t) for t in r[:3]] for r in rows]).reshape(-1, 3)
    norms = np.linalg.norm(data, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-8):
        raise ConfigurationError("node file contains directions that are not unit vectors")
    return data / norms[:, None]


def _model_matches(model, preset):
    mesh = preset.mesh
    if model.basis_rho.B.shape[0] != mesh.n_dof:
        raise ConfigurationError(f"model has {model.basis_rho.B.shape[0]} cells, "
                                 f"preset mesh has {mesh.n_dof}")
    if abs(model.epsilon - preset.problem.epsilon) > 1e-15 * max(1.0, model.epsilon):
        raise ConfigurationError(f"model was trained at eps={model.epsilon}, "
                                 f"preset asks for eps={preset.problem.epsilon}")


# ------------------------------------------------------------------ commands


def cmd_fom(args):
    cfg = run_config(args)
    p = cfg.build()
    out = _out_dir(args)
    quad = lebedev(p.n_train)
    mesh = p.mesh
    ops = operators_for(p.problem, mesh, quad)
    dt, n_steps = fit_dt(stable_dt(p.problem, mesh, fit=False), p.problem.final_time)
    rho_levels = []
    t0 = time.perf_counter()
    with SnapshotWriter(os.path.join(out, "snapshots.bin"), mesh.n_dof, len(quad), n_steps,
                        stride=args.stride) as writer:
        def sink(n, rho, g):
            writer(n, rho, g)
            rho_levels.append(np.array(rho))
        res = fom_solve(p.problem, mesh, quad, snapshot_sink=sink, ops=ops, dt=dt)
    wall = time.perf_counter() - t0
    write_rho_csv(os.path.join(out, "rho.csv"), np.array(rho_levels), dt)
    with open(os.path.join(out, "energy.csv"), "w") as fh:
        fh.write("n,energy\n")
        for n, e in enumerate(res.energies):
            fh.write(f"{n},{float(e)!r}\n")
    cfg.save(os.path.join(out, "config.ini"))
    artifacts.write_manifest(out)
    _say(f"fom: {n_steps} steps, dt={dt:.6g}, {len(quad)} directions, {wall:.2f}s")
    return 0


def cmd_offline(args):
    cfg = run_config(args)
    p = cfg.build()
    out = _out_dir(args)
    v_train = lebedev(p.n_train)
    result = greedy_offline(p.problem, p.mesh, v_train, p.config,
                            log=lambda r: _say(f"iter {r.iter}: r_rho={r.r_rho} r_g={r.r_g} "
                                               f"nv_rq={r.nv_rq} est_rho={r.est_rho:.3e} "
                                               f"est_f={r.est_f:.3e}"))
    save_model(result.model, os.path.join(out, "model.mmrb"))
    result.report.to_csv(os.path.join(out, "greedy_report.csv"))
    result.quad_rq.save(os.path.join(out, "quadrature_rq.txt"))
    _write_sampled_nodes(out, result.quad_rq, lebedev(p.config.initial_lebedev_points))
    cfg.save(os.path.join(out, "config.ini"))
    artifacts.write_manifest(out)
    _say(f"offline: {result.report.termination} after {len(result.report.records)} iterations, "
         f"r_rho={result.model.r_rho} r_g={result.model.r_g} nv_rq={len(result.quad_rq)}")
    return 0


def _write_sampled_nodes(out, quad_rq, initial):
    rows = [(*v, w, int(initial.index_of(v) is not None))
            for v, w in zip(quad_rq.nodes, quad_rq.weights)]
    artifacts.write_csv(os.path.join(out, "sampled_nodes.csv"), "sampled_nodes", rows)


def cmd_online(args):
    cfg = run_config(args)
    p = cfg.build()
    out = _out_dir(args)
    model = load_model(args.model)
    _model_matches(model, p)
    online = run_online(model, p.problem, p.mesh)
    rows = []
    for n in range(online.rho.shape[0]):
        for k in range(p.mesh.n_dof):
            rows.append((n, n * model.dt, k, online.rho[n, k], online.vf[n, 0, k],
                         online.vf[n, 1, k]))
    artifacts.write_csv(os.path.join(out, "moments.csv"), "moments", rows)
    _write_grid(out, "rho_rom_final", p.mesh, online.rho[-1])
    artifacts.write_manifest(out)
    _say(f"online: {model.n_steps} steps in {online.wall_ms:.1f} ms")
    return 0


def cmd_predict(args):
    cfg = run_config(args)
    p = cfg.build()
    out = _out_dir(args)
    model = load_model(args.model)
    _model_matches(model, p)
    nodes = _load_nodes(args.nodes)
    online = run_online(model, p.problem, p.mesh)
    c_pred = predict_directions(model, p.problem, p.mesh, online, nodes)
    levels = range(c_pred.shape[0]) if args.all_levels else [c_pred.shape[0] - 1]
    rows = []
    for n in levels:
        f = expand_f(model, online.trajectory.c_rho[n], c_pred[n])
        for d, v in enumerate(nodes):
            for k in range(p.mesh.n_dof):
                rows.append((d, *v, n, n * model.dt, k, f[k, d]))
    artifacts.write_csv(os.path.join(out, "prediction.csv"), "prediction", rows)
    artifacts.write_manifest(out)
    _say(f"predict: {len(nodes)} directions, {len(list(levels))} levels")
    return 0


def _write_grid(out, name, mesh, values, log_scale=False):
    artifacts.write_csv(os.path.join(out, f"{name}.csv"), "grid", artifacts.grid_rows(mesh, values))
    with open(os.path.join(out, f"{name}.svg"), "w") as fh:
        fh.write(artifacts.heatmap_svg(mesh, values, title=name, log_scale=log_scale))


def cmd_bench(args):
    cfg = run_config(args)
    p = cfg.build()
    out = _out_dir(args)
    mesh = p.mesh
    v_train, v_test = lebedev(p.n_train), lebedev(p.n_test)
    t0 = time.perf_counter()
    result = greedy_offline(p.problem, mesh, v_train, p.config)
    offline_ms = 1e3 * (time.perf_counter() - t0)
    ev = evaluate(result.model, p.problem, mesh, v_test, p.n_train)
    m = ev.metrics
    model = result.model
    row = (p.name, p.scale, p.problem.epsilon, model.r_rho, model.r_g, len(model.quad_rq),
           m.E_rho, m.R_rho, m.E_vf, m.R_vf, m.E_f, m.R_f, m.compression_ratio, offline_ms,
           m.wall_times["online_ms"], m.wall_times["predict_ms"], m.wall_times["fom_test_ms"])
    artifacts.write_csv(os.path.join(out, "metrics.csv"), "metrics", [row])
    s = ev.series
    artifacts.write_csv(os.path.join(out, "error_history.csv"), "error_history",
                        [(n, s["t"][n], s["rel_rho"][n], s["rel_vf"][n], s["rel_f"][n])
                         for n in range(len(s["t"]))])
    result.report.to_csv(os.path.join(out, "training_history.csv"))
    _write_sampled_nodes(out, result.quad_rq, lebedev(p.config.initial_lebedev_points))
    log_scale = p.name == "lattice"
    _write_grid(out, "rho_fom_final", mesh, ev.fom_final[0], log_scale)
    _write_grid(out, "rho_rom_final", mesh, ev.rom_final_rho, log_scale)
    _write_grid(out, "rho_abs_error_final", mesh, np.abs(ev.rom_final_rho - ev.fom_final[0]))
    summary = {"termination": result.report.termination, "iterations": len(result.report.records),
               **m.as_row(), "offline_ms": offline_ms, **m.wall_times}
    if args.pod:
        pod, _ = pod_from_fom(p.problem, mesh, v_train, dt=result.dt)
        summary.update(pod_fom_ms=pod.fom_ms, pod_svd_ms=pod.svd_ms, pod_total_ms=pod.total_ms)
    with open(os.path.join(out, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    cfg.save(os.path.join(out, "config.ini"))
    artifacts.write_manifest(out)
    _say(f"bench {p.name} eps={p.problem.epsilon}: R_rho={m.R_rho:.3%} R_vf={m.R_vf:.3%} "
         f"R_f={m.R_f:.3%} r_rho={model.r_rho} r_g={model.r_g} nv_rq={len(model.quad_rq)} "
         f"C-R={m.compression_ratio:.3%} offline={offline_ms / 1e3:.2f}s")
    return 0


def cmd_quad(args):
    quad = AngularQuadrature.load(args.file)
    quad.check(atol=1e-12)
    max_moment, y00 = certify_exactness(quad, args.degree)
    ok = max_moment <= args.tol and y00 <= args.tol
    row = (args.degree, max_moment, y00, float(quad.weights.sum()), float(quad.weights.min()),
           len(quad))
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        artifacts.write_csv(os.path.join(args.out, "quad_certificate.csv"), "quad_certificate",
                            [row])
        artifacts.write_manifest(args.out)
    _say(f"quad: {len(quad)} nodes, degree {args.degree}: max |<Y_ml>| = {max_moment:.3e}, "
         f"|<Y_00> - 1/sqrt(4 pi)| = {y00:.3e} -> {'certified' if ok else 'NOT certified'}")
    if not ok:
        raise QuadratureError(f"exactness of degree {args.degree} not certified "
                              f"(max moment {max_moment:.3e} > {args.tol:.1e})")
    return 0


COMMANDS = {"fom": cmd_fom, "offline": cmd_offline, "online": cmd_online,
            "predict": cmd_predict, "bench": cmd_bench, "quad": cmd_quad}


def _error_line(exc):
    return "ERROR " + json.dumps({"type": type(exc).__name__, "message": str(exc)})


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        if exc.code not in (0, None):
            print(_error_line(ConfigurationError("invalid command line")), file=sys.stderr)
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    limiter = None
    try:
        limiter = _limit_threads(args)
        return COMMANDS[args.command](args)
    except (ConfigurationError, QuadratureError, FileNotFoundError) as exc:
        print(_error_line(exc), file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, SolverError, MMRBError) as exc:
        print(_error_line(exc), file=sys.stderr)
        return EXIT_NUMERICAL
    except Exception as exc:  # noqa: BLE001 - the CLI contract is one error line per failure
        print(_error_line(exc), file=sys.stderr)
        return EXIT_OTHER
    finally:
        if limiter is not None:
            limiter.restore_original_limits()


if __name__ == "__main__":
    sys.exit(main())
