"""Command-line pipeline: full-order solves, offline training, online queries."""

from __future__ import annotations

import argparse
import os
import sys
import time

from . import metrics
from .assembly import assemble_from_layout
from .config import ConfigError, RunConfig
from .export import export_fields, write_report_csv
from .reduction import (
    build_bases,
    load_rom_archive,
    project_transient,
    save_rom_archive,
    solve_rom_steady,
    solve_rom_transient,
)
from .sampling import generate_snapshots, lhs_sample, save_snapshots
from .steady import ControlWeights, solve_steady
from .transient import solve_transient_ocp


def _common_flags(parser):
    parser.add_argument("--config", help="path to a key = value configuration file")
    parser.add_argument("--out", help="output directory (overrides output.directory)")
    parser.add_argument("--seed", type=int, help="sampling seed (overrides sampling.seed)")
    parser.add_argument("--frames", help="comma list of frame indices to export")
    parser.add_argument("--format", choices=("csv", "vtk", "both"), help="export format")


def _load_config(args):
    overrides = {}
    if args.out is not None:
        overrides["output.directory"] = args.out
    if args.seed is not None:
        overrides["sampling.seed"] = args.seed
    if args.frames is not None:
        overrides["export.frames"] = args.frames
    if args.format is not None:
        overrides["export.format"] = args.format
    return RunConfig.load(args.config, overrides)


def _artifact_dir(cfg, command):
    out = os.path.join(cfg.get_str("output.directory"), f"{command}-{cfg.hash()}")
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "manifest.txt"), "w") as fh:
        fh.write(f"command = {command}\n")
        fh.write(f"config_hash = {cfg.hash()}\n")
        fh.write("# effective configuration\n")
        fh.write(cfg.dump())
    return out


def _assemble(cfg):
    return assemble_from_layout(cfg.build_layout())


def cmd_solve_steady(args):
    cfg = _load_config(args)
    out = _artifact_dir(cfg, "solve-steady")
    ops = _assemble(cfg)
    params = cfg.build_params()
    sol = solve_steady(ops, params, cfg.build_weights())
    export_fields(sol, ops, cfg.get_str("export.format"), out,
                  obstacle_temperature=params.obstacle_temperature)
    q_unc = metrics.uncontrolled_state(ops, params)
    mte_unc = metrics.mean_tracking_error(q_unc, sol.z, ops)
    mte_opt = metrics.mean_tracking_error(sol.q, sol.z, ops)
    report = metrics.CloakReport(
        mte_uncontrolled=mte_unc,
        mte_optimal=mte_opt,
        efficiency=metrics.cloaking_efficiency(mte_unc, mte_opt),
        tracking_term=sol.tracking_term,
        control_term=sol.control_term,
        fom_seconds=sol.solve_seconds,
    )
    write_report_csv(os.path.join(out, "report.csv"), [report])
    print(f"steady solve done: J={sol.cost:.6e}, efficiency={report.efficiency:.4f}")
    print(f"artifacts in {out}")
    return 0


def cmd_solve_transient(args):
    cfg = _load_config(args)
    out = _artifact_dir(cfg, "solve-transient")
    ops = _assemble(cfg)
    params = cfg.build_params()
    grid = cfg.build_grid()
    traj = solve_transient_ocp(
        ops, params, cfg.build_weights(), grid,
        tol=cfg.get_float("solver.tolerance"),
        max_iter=cfg.get_int("solver.max_iterations"),
        armijo=cfg.armijo(),
    )
    export_fields(traj, ops, cfg.get_str("export.format"), out,
                  obstacle_temperature=params.obstacle_temperature,
                  frames=cfg.frames(grid.steps))
    status = "converged" if traj.converged else "max-iterations"
    print(f"transient solve {status}: J={traj.cost:.6e} after {len(traj.iterations)} iterations")
    print(f"artifacts in {out}")
    return 0


def cmd_offline(args):
    cfg = _load_config(args)
    out = _artifact_dir(cfg, "offline")
    ops = _assemble(cfg)
    weights = cfg.build_weights()
    box = cfg.build_box()
    seed = cfg.get_int("sampling.seed")
    mode = cfg.get_str("offline.mode")
    if mode not in ("steady", "transient"):
        raise ConfigError(f"offline.mode: unknown value '{mode}'")
    count = cfg.get_int("sampling.steady_count" if mode == "steady" else "sampling.transient_count")
    samples = lhs_sample(box, count, seed)
    started = time.perf_counter()
    snapshots = generate_snapshots(
        ops, samples, weights,
        grid=cfg.build_grid() if mode == "transient" else None,
        mode=mode,
        workers=cfg.get_int("offline.workers"),
        seed=seed,
        config_hash=cfg.hash(),
        tol=cfg.get_float("solver.tolerance"),
        max_iter=cfg.get_int("solver.max_iterations"),
    )
    print(f"{len(snapshots.solutions)}/{count} snapshots in {time.perf_counter() - started:.1f} s")
    if snapshots.failures:
        for rec in snapshots.failures:
            print(f"  failed sample {rec.params}: {rec.error}", file=sys.stderr)
    if cfg.get_bool("offline.save_snapshots"):
        save_snapshots(os.path.join(out, "snapshots"), snapshots, box=box)
    basis = build_bases(snapshots, cfg.get_float("pod.tolerance"),
                        normalize=cfg.get_str("pod.normalize"))
    rom = project_transient(ops, basis, weights)
    save_rom_archive(os.path.join(out, "archive"), rom)
    print(f"basis dimensions: {basis.dims}")
    print(f"archive in {os.path.join(out, 'archive')}")
    return 0


def _find_archive(cfg, args):
    if args.archive:
        return args.archive
    out = cfg.get_str("output.directory")
    candidate = os.path.join(out, f"offline-{cfg.hash()}", "archive")
    if os.path.exists(os.path.join(candidate, "manifest.txt")):
        return candidate
    # flags like --frames shift the config hash without touching the offline
    # artifacts; fall back to a unique offline archive in the output directory
    found = []
    if os.path.isdir(out):
        for entry in sorted(os.listdir(out)):
            path = os.path.join(out, entry, "archive")
            if entry.startswith("offline-") and os.path.exists(os.path.join(path, "manifest.txt")):
                found.append(path)
    if len(found) == 1:
        return found[0]
    raise SystemExit(
        f"error: no offline archive found under {out}; run `thermocloak offline` first "
        "or pass --archive <dir>"
    )


def cmd_online(args):
    cfg = _load_config(args)
    out = _artifact_dir(cfg, "online")
    rom = load_rom_archive(_find_archive(cfg, args))
    ops = _assemble(cfg)
    if ops.mesh_ocp.content_hash() != rom.basis.mesh_hash:
        raise SystemExit("error: configuration mesh does not match the offline archive")
    params = cfg.build_params()
    grid = cfg.build_grid()
    if args.regime == "steady":
        rom_sol = solve_rom_steady(rom.steady, params)
        fom_sol = solve_steady(ops, params, rom.weights) if args.compare else None
        export_grid = None
    else:
        rom_sol = solve_rom_transient(
            rom, params, grid,
            tol=cfg.get_float("solver.tolerance"),
            max_iter=cfg.get_int("solver.max_iterations"),
            armijo=cfg.armijo(),
        )
        fom_sol = (
            solve_transient_ocp(
                ops, params, rom.weights, grid,
                tol=cfg.get_float("solver.tolerance"),
                max_iter=cfg.get_int("solver.max_iterations"),
                armijo=cfg.armijo(),
            )
            if args.compare
            else None
        )
        export_grid = grid
    export_fields(rom_sol, ops, cfg.get_str("export.format"), out,
                  prefix="rom", obstacle_temperature=params.obstacle_temperature,
                  frames=cfg.frames(grid.steps) if export_grid else None)
    if fom_sol is not None:
        report = metrics.rom_fom_report(fom_sol, rom_sol, ops, params, grid=export_grid)
        write_report_csv(os.path.join(out, "report.csv"), [report])
        errs = ", ".join(f"{k}={v:.2e}" for k, v in sorted(report.field_errors.items()))
        print(f"online solve: efficiency={report.efficiency:.4f}, speedup={report.speedup:.0f}x")
        print(f"rom-vs-fom errors: {errs}")
    else:
        q_unc = metrics.uncontrolled_state(ops, params)
        z_ref = rom_sol.z if args.regime == "steady" else rom_sol.z[-1]
        q_ref = rom_sol.q if args.regime == "steady" else rom_sol.q[-1]
        mte_unc = metrics.mean_tracking_error(q_unc, z_ref, ops)
        mte_opt = metrics.mean_tracking_error(q_ref, z_ref, ops)
        report = metrics.CloakReport(
            mte_uncontrolled=mte_unc,
            mte_optimal=mte_opt,
            efficiency=metrics.cloaking_efficiency(mte_unc, mte_opt),
            tracking_term=rom_sol.tracking_term if args.regime == "steady" else float("nan"),
            control_term=rom_sol.control_term if args.regime == "steady" else float("nan"),
            rom_seconds=rom_sol.solve_seconds,
        )
        write_report_csv(os.path.join(out, "report.csv"), [report])
        print(f"online solve: efficiency={report.efficiency:.4f} "
              f"(reduced solve {rom_sol.solve_seconds * 1e3:.2f} ms)")
    print(f"artifacts in {out}")
    return 0


def cmd_sweep(args):
    cfg = _load_config(args)
    out = _artifact_dir(cfg, "sweep")
    ops = _assemble(cfg)
    params = cfg.build_params()
    reports = []
    if args.beta:
        betas = [float(tok) for tok in args.beta.split(",") if tok.strip()]
        base = cfg.build_weights()
        rows = []
        for beta in betas:
            weights = ControlWeights(beta=beta, beta_grad=base.beta_grad)
            sol = solve_steady(ops, params, weights)
            q_unc = metrics.uncontrolled_state(ops, params)
            mte_unc = metrics.mean_tracking_error(q_unc, sol.z, ops)
            mte_opt = metrics.mean_tracking_error(sol.q, sol.z, ops)
            rows.append({
                "beta": beta,
                "tracking_term": sol.tracking_term,
                "control_term": sol.control_term,
                "mte_optimal": mte_opt,
                "efficiency": metrics.cloaking_efficiency(mte_unc, mte_opt),
            })
            print(f"beta={beta:.1e}: tracking={sol.tracking_term:.6e} efficiency={rows[-1]['efficiency']:.4f}")
        write_report_csv(os.path.join(out, "report.csv"), rows)
    else:
        rom = load_rom_archive(_find_archive(cfg, args))
        count = args.count
        samples = lhs_sample(cfg.build_box(), count, cfg.get_int("sampling.seed"))
        for sample in samples:
            rom_sol = solve_rom_steady(rom.steady, sample)
            fom_sol = solve_steady(ops, sample, rom.weights)
            reports.append(metrics.rom_fom_report(fom_sol, rom_sol, ops, sample))
        write_report_csv(os.path.join(out, "report.csv"), reports)
        worst = max(max(r.field_errors.values()) for r in reports)
        print(f"{count} online solves; worst field error {worst:.2e}")
    print(f"artifacts in {out}")
    return 0


def cmd_verify(args):
    from .verify import run_checks

    return 0 if run_checks() else 1


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="thermocloak",
        description="Active thermal cloaking: optimal control solves and reduced-order queries.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for name, func in (
        ("solve-steady", cmd_solve_steady),
        ("solve-transient", cmd_solve_transient),
        ("offline", cmd_offline),
        ("online", cmd_online),
        ("sweep", cmd_sweep),
        ("verify", cmd_verify),
    ):
        cmd = sub.add_parser(name)
        _common_flags(cmd)
        cmd.set_defaults(func=func)
        if name == "online":
            cmd.add_argument("--archive", help="offline archive directory")
            cmd.add_argument("--regime", choices=("steady", "transient"), default="steady")
            cmd.add_argument("--compare", action=argparse.BooleanOptionalAction, default=True,
                             help="also solve the full-order model and report errors")
        if name == "sweep":
            cmd.add_argument("--archive", help="offline archive directory")
            cmd.add_argument("--beta", help="comma list of control weights for a full-order sweep")
            cmd.add_argument("--count", type=int, default=10,
                             help="number of online solves for a parameter sweep")

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
