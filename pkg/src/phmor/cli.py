"""Command-line pipeline driver.

Subcommands, all driven by a YAML run configuration:

* ``fom-run``  -- build the configured full-order model and integrate it.
* ``offline``  -- estimate shift paths and fit modes from the stored
  trajectory.
* ``rom-run``  -- build the configured reduced-order model, integrate it and
  store both the reduced and the lifted trajectories.
* ``diag``     -- emit power-balance series, relative errors, stability
  certificates and (for constant-basis reductions) error-bound curves.
* ``sweep``    -- repeat rom-run + diag over a list of step sizes and report
  the fitted convergence order of the power-balance error.

Exit codes: 0 success, 2 configuration error, 3 solver failure, 4 missing
input artifacts.  Every output file is accompanied by a ``.meta.json``
sidecar carrying the configuration hash and the package version.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys as _sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .ansatz import (
    ExtendedShift,
    ShiftRangeError,
    LinearTI,
    PeriodicShift,
    build_separable_from_shifts,
    lift,
    read_modes_csv,
    write_modes_csv,
)
from .diagnostics import (
    error_bound_eval,
    lifted_residual_norms,
    power_balance_series,
    relative_l2_error,
    stability_certificate,
    weighted_error_curve,
    weighted_state_norm,
    write_bound_csv,
    write_power_balance_csv,
)
from .models import (
    AdeParams,
    WildfireParams,
    build_ade_fom,
    build_wildfire_fom,
    wildfire_direct_rhs,
    wildfire_rhs_jacobian,
)
from .offline import (
    estimate_shift_paths,
    fit_modes,
    pod,
    read_paths_csv,
    snapshots_from_trajectory,
    write_paths_csv,
)
from .reduction import (
    project_initial_lti,
    reduce_galerkin_baseline,
    reduce_lti,
    reduce_separable_ltv,
    reduce_separable_nonlinear,
)
from .systems import load_lti_csv, lti_as_ltv, read_matrix_csv, validate
from .timestep import StepFailureError, TimeGrid, Trajectory, integrate_midpoint

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_MISSING = 4

_REDUCTIONS = ("lti", "ltv", "factorizable", "separable", "galerkin-baseline",
               "pod-galerkin")


class ConfigError(ValueError):
    pass


class MissingInputError(FileNotFoundError):
    def __init__(self, missing):
        super().__init__("missing input artifacts: "
                         + ", ".join(str(m) for m in missing))
        self.missing = [str(m) for m in missing]


def load_config(path, overrides=None) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"configuration file {path} does not exist")
    try:
        cfg = yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as err:
        raise ConfigError(f"cannot parse {path}: {err}") from err
    for key, value in (overrides or {}).items():
        section, _, name = key.partition(".")
        cfg.setdefault(section, {})[name] = value
    _validate_config(cfg)
    return cfg


def _get(cfg, section, key, default=None):
    return (cfg.get(section) or {}).get(key, default)


def _validate_config(cfg):
    kind = _get(cfg, "model", "kind")
    if kind not in ("ade", "wildfire", "custom-lti"):
        raise ConfigError(f"model.kind must be ade, wildfire or custom-lti, "
                          f"got {kind!r}")
    red = _get(cfg, "reduction", "kind", "separable")
    if red not in _REDUCTIONS:
        raise ConfigError(f"reduction.kind must be one of {_REDUCTIONS}, "
                          f"got {red!r}")
    if red in ("ltv", "factorizable"):
        raise ConfigError(f"reduction.kind {red!r} has no built-in model; "
                          "it is reachable through the library API only")
    if kind == "wildfire" and red in ("lti", "pod-galerkin"):
        raise ConfigError("constant-basis reductions need a linear model")
    if kind != "wildfire" and red == "galerkin-baseline":
        raise ConfigError("the Galerkin baseline targets the wildfire model")
    tau = _get(cfg, "timestep", "step_size", 1e-3)
    if not tau or tau <= 0:
        raise ConfigError("timestep.step_size must be positive")
    layout = _get(cfg, "offline", "layout", "shared")
    if layout not in ("shared", "per-mode"):
        raise ConfigError(f"offline.layout must be shared or per-mode, got {layout!r}")
    if kind == "custom-lti":
        d = (_get(cfg, "model", "custom_lti", {}) or {}).get("matrix_dir")
        if not d:
            raise ConfigError("model.custom_lti.matrix_dir is required")
        if not Path(d).exists():
            raise ConfigError(f"referenced path {d} does not exist")
    # parameter sanity (positivity, admissible ranges) is enforced by the
    # model parameter classes; surface those as configuration errors
    try:
        _build_model(cfg)
    except (ValueError, KeyError) as err:
        raise ConfigError(f"invalid model parameters: {err}") from err


def config_hash(cfg, seed) -> str:
    payload = json.dumps({"config": cfg, "seed": seed}, sort_keys=True,
                         default=str)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


class Workspace:
    """Output directory with sidecar bookkeeping."""

    def __init__(self, out_dir, cfg, seed):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.meta = {"config_hash": config_hash(cfg, seed),
                     "artifact_version": __version__}

    def child(self, subpath) -> "Workspace":
        sub = object.__new__(Workspace)
        sub.dir = self.dir / subpath
        sub.dir.mkdir(parents=True, exist_ok=True)
        sub.meta = self.meta
        return sub

    def path(self, name) -> Path:
        return self.dir / name

    def done(self, name) -> Path:
        """Attach the sidecar to an artifact that was just written."""
        p = self.path(name)
        Path(str(p) + ".meta.json").write_text(json.dumps(self.meta) + "\n")
        return p

    def write_json(self, name, payload) -> Path:
        self.path(name).write_text(json.dumps(payload, indent=2) + "\n")
        return self.done(name)

    def require(self, *names):
        missing = [self.path(n) for n in names if not self.path(n).exists()]
        if missing:
            raise MissingInputError(missing)


def _build_model(cfg):
    kind = _get(cfg, "model", "kind")
    if kind == "ade":
        opts = _get(cfg, "model", "ade", {}) or {}
        params = AdeParams(
            c=float(opts.get("c", 1.0)),
            d=float(opts.get("d", 1e-3)),
            N=int(opts.get("num_intervals", 1000)) - 1,
            t_end=float(opts.get("t_end", 1.2)),
        )
        sys, x0, inp = build_ade_fom(params)
        return {
            "kind": kind, "params": params, "sys": sys, "x0": x0,
            "input": inp, "nodes": params.nodes(), "n_blocks": 1,
            "weight": sys.E, "offline_kind": "extended",
            "residual": sys.residual,
            "jacobian": lambda t, x, xdot, u: sys.residual_jacobians(t),
            "jacobian_constant": True, "t_end": params.t_end,
            "linear": True,
        }
    if kind == "wildfire":
        opts = _get(cfg, "model", "wildfire", {}) or {}
        keys = ("k", "alpha", "beta", "gamma", "zeta", "w", "t_end")
        fields = {k: float(opts[k]) for k in keys if k in opts}
        if "num_points" in opts:
            fields["N"] = int(opts["num_points"]) - 1
        if "domain" in opts:
            fields["domain"] = tuple(float(v) for v in opts["domain"])
        params = WildfireParams(**fields)
        sys, x0 = build_wildfire_fom(params)
        rhs = wildfire_direct_rhs(params)
        jac = wildfire_rhs_jacobian(params)
        n = 2 * params.n_points
        return {
            "kind": kind, "params": params, "sys": sys, "x0": x0,
            "input": None, "nodes": params.nodes(), "n_blocks": 2,
            "weight": None, "offline_kind": "periodic",
            "residual": lambda t, x, xdot, u: xdot - rhs(x),
            "jacobian": lambda t, x, xdot, u: (-jac(x), np.eye(n)),
            "jacobian_constant": False, "t_end": params.t_end,
            "linear": False,
        }
    opts = _get(cfg, "model", "custom_lti", {}) or {}
    sys = load_lti_csv(opts["matrix_dir"])
    x0_file = Path(opts["matrix_dir"]) / "x0.csv"
    x0 = read_matrix_csv(x0_file).ravel() if x0_file.exists() else np.zeros(sys.n)
    t_end = float(opts.get("t_end", 1.0))
    return {
        "kind": kind, "params": None, "sys": sys, "x0": x0,
        "input": None, "nodes": np.arange(float(sys.n)), "n_blocks": 1,
        "weight": sys.E, "offline_kind": "extended",
        "residual": sys.residual,
        "jacobian": lambda t, x, xdot, u: sys.residual_jacobians(t),
        "jacobian_constant": True, "t_end": t_end,
        "linear": True,
    }


def cmd_fom_run(cfg, ws: Workspace, step_size=None) -> int:
    model = _build_model(cfg)
    tau = step_size or float(_get(cfg, "timestep", "step_size", 1e-3))
    grid = TimeGrid(0.0, model["t_end"], tau)
    blowup = float(_get(cfg, "timestep", "blowup_threshold", 1e12))
    traj = integrate_midpoint(model["residual"], grid, model["x0"],
                              input=model["input"], jacobian=model["jacobian"],
                              jacobian_constant=model["jacobian_constant"],
                              blowup_threshold=blowup)
    traj.to_csv(ws.path("fom_trajectory.csv"))
    ws.done("fom_trajectory.csv")
    traj.stats_to_json(ws.path("fom_stats.json"))
    ws.done("fom_stats.json")
    report = validate(model["sys"],
                      [] if model["linear"] else
                      [(0.0, model["x0"]), (model["t_end"], model["x0"])])
    ws.write_json("fom_validation.json", report.as_dict())
    return EXIT_OK


def cmd_offline(cfg, ws: Workspace) -> int:
    ws.require("fom_trajectory.csv")
    model = _build_model(cfg)
    traj = Trajectory.from_csv(ws.path("fom_trajectory.csv"))
    stride = int(_get(cfg, "offline", "snapshot_stride", 10))
    snaps = snapshots_from_trajectory(traj, model["nodes"],
                                      n_blocks=model["n_blocks"], stride=stride)
    layout = _get(cfg, "offline", "layout", "shared")
    n_waves = int(_get(cfg, "offline", "num_waves", 1))
    k_modes = int(_get(cfg, "offline", "num_modes", 3))
    kind = _get(cfg, "offline", "kind", model["offline_kind"])
    paths = estimate_shift_paths(snaps, n_waves, kind,
                                 smooth_window=int(_get(cfg, "offline",
                                                        "smooth_window", 5)))
    result = fit_modes(snaps, paths, layout, k_modes, kind=kind,
                       margin=float(_get(cfg, "offline", "margin", 0.1)),
                       max_sweeps=int(_get(cfg, "offline", "max_sweeps", 50)),
                       weight=model["weight"])
    src_nodes = (result.shift.source_nodes if kind == "extended"
                 else result.shift.nodes)
    write_modes_csv(ws.path("modes.csv"), src_nodes, result.modes)
    ws.done("modes.csv")
    write_paths_csv(ws.path("paths.csv"), snaps.times, result.paths)
    ws.done("paths.csv")
    ws.write_json("offline.json", {
        "kind": kind, "layout": layout, "num_modes": k_modes,
        "num_waves": n_waves, "rel_error": result.rel_error,
        "sweeps": result.sweeps,
        "initial_state": result.initial_reduced_state().tolist(),
    })
    return EXIT_OK


def _separable_ansatz_from_artifacts(ws: Workspace, model):
    ws.require("modes.csv", "paths.csv", "offline.json")
    info = json.loads(ws.path("offline.json").read_text())
    src_nodes, modes = read_modes_csv(ws.path("modes.csv"))
    if info["kind"] == "extended":
        shift = ExtendedShift(src_nodes, model["nodes"])
    else:
        shift = PeriodicShift(model["nodes"])
    ansatz = build_separable_from_shifts(shift, modes, info["layout"])
    xt0 = np.asarray(info["initial_state"], dtype=float)
    return ansatz, xt0, info


def _build_rom(cfg, ws: Workspace, model):
    red = _get(cfg, "reduction", "kind", "separable")
    if red in ("lti", "pod-galerkin"):
        if red == "pod-galerkin" and not np.allclose(model["sys"].Q,
                                                     np.eye(model["sys"].n)):
            raise ConfigError("pod-galerkin requires an identity energy weight")
        basis_csv = _get(cfg, "reduction", "basis_csv")
        if basis_csv:
            Vr = read_matrix_csv(basis_csv)
        else:
            ws.require("fom_trajectory.csv")
            traj = Trajectory.from_csv(ws.path("fom_trajectory.csv"))
            snaps = snapshots_from_trajectory(
                traj, model["nodes"], n_blocks=model["n_blocks"],
                stride=int(_get(cfg, "offline", "snapshot_stride", 10)))
            Vr = pod(snaps, int(_get(cfg, "reduction", "pod_rank", 10)))
        rom = reduce_lti(model["sys"], Vr)
        xt0 = project_initial_lti(model["sys"], Vr, model["x0"])
        jac = lambda t, xt, xtdot, u: (
            -(rom.J(t, xt) - rom.R(t, xt)) @ rom.Q(t, xt), rom.E(t, xt))
        return rom, xt0, jac, True
    ansatz, xt0, info = _separable_ansatz_from_artifacts(ws, model)
    if red == "separable":
        if model["linear"]:
            rom = reduce_separable_ltv(lti_as_ltv(model["sys"]), ansatz)
        else:
            rom = reduce_separable_nonlinear(model["sys"], ansatz)
    else:  # galerkin-baseline
        rom = reduce_galerkin_baseline(model["sys"], ansatz)
    return rom, xt0, None, False


def _integrate_rom(cfg, rom, xt0, model, jac, jac_const, step_size=None):
    tau = step_size or float(_get(cfg, "timestep", "rom_step_size",
                                  _get(cfg, "timestep", "step_size", 1e-3)))
    grid = TimeGrid(0.0, model["t_end"], tau)
    blowup = float(_get(cfg, "timestep", "blowup_threshold", 1e12))
    return integrate_midpoint(rom.residual, grid, xt0, input=model["input"],
                              jacobian=jac, jacobian_constant=jac_const,
                              blowup_threshold=blowup)


def _lifted_trajectory(rom, traj):
    states = np.column_stack([rom.lift(t, traj.states[:, j])
                              for j, t in enumerate(traj.times)])
    return Trajectory(times=traj.times, states=states)


def cmd_rom_run(cfg, ws: Workspace, step_size=None) -> int:
    model = _build_model(cfg)
    rom, xt0, jac, jac_const = _build_rom(cfg, ws, model)
    traj = _integrate_rom(cfg, rom, xt0, model, jac, jac_const, step_size)
    traj.to_csv(ws.path("rom_trajectory.csv"))
    ws.done("rom_trajectory.csv")
    traj.stats_to_json(ws.path("rom_stats.json"))
    ws.done("rom_stats.json")
    _lifted_trajectory(rom, traj).to_csv(ws.path("lifted_trajectory.csv"))
    ws.done("lifted_trajectory.csv")
    if _get(cfg, "reduction", "baseline", False):
        base_cfg = {**cfg, "reduction": {**(cfg.get("reduction") or {}),
                                         "kind": "galerkin-baseline"}}
        rom_b, xt0_b, jac_b, const_b = _build_rom(base_cfg, ws, model)
        traj_b = _integrate_rom(cfg, rom_b, xt0_b, model, jac_b, const_b,
                                step_size)
        traj_b.to_csv(ws.path("baseline_trajectory.csv"))
        ws.done("baseline_trajectory.csv")
    return EXIT_OK


def cmd_diag(cfg, ws: Workspace) -> int:
    model = _build_model(cfg)
    rom, xt0, _, _ = _build_rom(cfg, ws, model)
    ws.require("rom_trajectory.csv")
    traj = Trajectory.from_csv(ws.path("rom_trajectory.csv"))
    diag = cfg.get("diagnostics") or {}
    summary = {}

    if diag.get("power_balance", True):
        records = power_balance_series(rom, traj, input=model["input"])
        write_power_balance_csv(records, ws.path("power_balance.csv"))
        ws.done("power_balance.csv")
        errs = [r.balance_error for r in records]
        summary["power_balance"] = {"max_error": max(errs),
                                    "mean_error": float(np.mean(errs))}
        if ws.path("baseline_trajectory.csv").exists():
            base_cfg = {**cfg, "reduction": {**(cfg.get("reduction") or {}),
                                             "kind": "galerkin-baseline"}}
            rom_b, _, _, _ = _build_rom(base_cfg, ws, model)
            traj_b = Trajectory.from_csv(ws.path("baseline_trajectory.csv"))
            records_b = power_balance_series(rom_b, traj_b, input=model["input"])
            write_power_balance_csv(records_b, ws.path("baseline_power_balance.csv"))
            ws.done("baseline_power_balance.csv")
            errs_b = np.array([r.balance_error for r in records_b])
            ratio = errs_b[:len(errs)] / np.maximum(np.array(errs)[:len(errs_b)],
                                                    1e-300)
            summary["baseline_comparison"] = {
                "max_error": float(errs_b.max()),
                "max_error_ratio": float(ratio.max()),
                "violation_demonstrated": bool(ratio.max() >= 10.0),
            }

    if diag.get("relative_error", True):
        ws.require("fom_trajectory.csv", "lifted_trajectory.csv")
        fom = Trajectory.from_csv(ws.path("fom_trajectory.csv"))
        lifted = Trajectory.from_csv(ws.path("lifted_trajectory.csv"))
        if fom.times.size != lifted.times.size:
            # restrict the finer lifted trajectory to the reference grid
            idx = np.clip(np.searchsorted(lifted.times, fom.times), 0,
                          lifted.times.size - 1)
            if not np.allclose(lifted.times[idx], fom.times, atol=1e-9):
                raise ConfigError(
                    "reference and reduced trajectories live on incompatible "
                    "time grids; choose nesting step sizes for the error")
            lifted = Trajectory(times=lifted.times[idx],
                                states=lifted.states[:, idx])
        err = relative_l2_error(fom, lifted, weight=model["weight"])
        summary["relative_error"] = err
        ws.write_json("error.json", {"relative_l2_error": err})

    if diag.get("certificate", True):
        probes = _certificate_probes(rom, traj)
        cert = stability_certificate(rom.ansatz, model["sys"], probes=probes,
                                     traj=traj, rom=rom)
        cert.to_json(ws.path("certificate.json"))
        ws.done("certificate.json")

    if diag.get("error_bound", False):
        if not isinstance(rom.ansatz, LinearTI):
            raise ConfigError("error_bound diagnostics need a constant-basis "
                              "reduction")
        ws.require("fom_trajectory.csv")
        fom = Trajectory.from_csv(ws.path("fom_trajectory.csv"))
        rho = lifted_residual_norms(model["sys"], rom, traj,
                                    input=model["input"])
        err0 = weighted_state_norm(
            model["sys"], model["x0"] - rom.ansatz.Vr @ xt0)
        bound = error_bound_eval(model["sys"], traj.times, rho, err0=err0)
        lifted = _lifted_trajectory(rom, traj)
        measured = weighted_error_curve(model["sys"], fom, lifted)
        write_bound_csv(ws.path("bound.csv"), traj.times, bound, measured)
        ws.done("bound.csv")
        summary["bound_valid"] = bool(np.all(bound + 1e-8 >= measured))

    ws.write_json("diag_summary.json", summary)
    return EXIT_OK


def _certificate_probes(rom, traj):
    from .ansatz import Separable

    idx = np.linspace(0, traj.times.size - 1, 25, dtype=int)
    if isinstance(rom.ansatz, Separable):
        r_a = rom.ansatz.r_alpha
        return [traj.states[r_a:, j] for j in idx]
    return [traj.times[j] for j in idx]


def cmd_sweep(cfg, ws: Workspace, threads=1) -> int:
    steps = _get(cfg, "sweep", "step_sizes", [1e-3, 5e-4, 2e-4])
    model = _build_model(cfg)

    def run_member(tau):
        sub = ws.child(f"sweep/tau_{tau:g}")
        rom, xt0, jac, jac_const = _build_rom(cfg, ws, model)
        traj = _integrate_rom(cfg, rom, xt0, model, jac, jac_const, tau)
        traj.to_csv(sub.path("rom_trajectory.csv"))
        sub.done("rom_trajectory.csv")
        records = power_balance_series(rom, traj, input=model["input"])
        write_power_balance_csv(records, sub.path("power_balance.csv"))
        sub.done("power_balance.csv")
        errs = np.array([r.balance_error for r in records])
        return {"step_size": tau, "max_error": float(errs.max()),
                "mean_error": float(errs.mean())}

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(run_member, steps))
    else:
        rows = [run_member(tau) for tau in steps]

    summary = {"members": rows}
    if len(rows) >= 2:
        taus = np.array([r["step_size"] for r in rows])
        for key in ("max_error", "mean_error"):
            vals = np.array([r[key] for r in rows])
            order = float(np.polyfit(np.log(taus), np.log(vals), 1)[0])
            summary[f"{key}_order"] = order
    ws.write_json("sweep_summary.json", summary)
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="phmor",
        description="structure-preserving model reduction pipeline")
    parser.add_argument("command",
                        choices=["fom-run", "offline", "rom-run", "diag", "sweep"])
    parser.add_argument("--config", required=True, help="YAML run configuration")
    parser.add_argument("--out", default=None, help="output directory override")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--step-size", type=float, default=None,
                        help="override the step size of the command being run")
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config)
        out_dir = args.out or _get(cfg, "run", "out_dir", "phmor_out")
        ws = Workspace(out_dir, cfg, args.seed)
    except ConfigError as err:
        print(f"configuration error: {err}", file=_sys.stderr)
        return EXIT_CONFIG

    try:
        if args.command == "fom-run":
            return cmd_fom_run(cfg, ws, step_size=args.step_size)
        if args.command == "offline":
            return cmd_offline(cfg, ws)
        if args.command == "rom-run":
            return cmd_rom_run(cfg, ws, step_size=args.step_size)
        if args.command == "diag":
            return cmd_diag(cfg, ws)
        return cmd_sweep(cfg, ws, threads=args.threads)
    except ConfigError as err:
        print(f"configuration error: {err}", file=_sys.stderr)
        return EXIT_CONFIG
    except MissingInputError as err:
        print(str(err), file=_sys.stderr)
        ws.write_json("error.json", {"error": "missing-inputs",
                                     "missing": err.missing})
        return EXIT_MISSING
    except StepFailureError as err:
        reached = (float(err.trajectory.times[-1])
                   if err.trajectory is not None else None)
        ws.write_json("error.json", {
            "error": type(err).__name__, "message": str(err),
            "time_reached": reached})
        print(f"solver failure: {err}", file=_sys.stderr)
        return EXIT_SOLVER
    except ShiftRangeError as err:
        ws.write_json("error.json", {"error": "ShiftRangeError",
                                     "message": str(err)})
        print(f"solver failure: {err}", file=_sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    raise SystemExit(main())
