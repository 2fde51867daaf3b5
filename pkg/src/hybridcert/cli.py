"""Command-line front end.

Exit codes: 0 success, 1 bad input, 2 infeasible, 3 solver or simulation
failure, 4 certificate check failed, 5 certificate/system hash mismatch.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys as _sys
from pathlib import Path

import numpy as np

from . import __version__
from .cert import Certificate, CertificateError, sample_check, sample_region, synthesize
from .config import ConfigError, RunConfig
from .conditions import assemble
from .hybridsim import (
    NoReturnError,
    SimulationError,
    convergence_sweep,
    integrate,
    poincare_map,
    post_impact_section,
)
from .model import HybridSystem, rimless_wheel_fixed_point
from .sdpsolve import Status
from .soscomp import CompileError, compile as compile_sdp, export_sdpa

EXIT_OK, EXIT_INPUT, EXIT_INFEASIBLE, EXIT_FAILURE, EXIT_CHECK, EXIT_HASH = 0, 1, 2, 3, 4, 5

log = logging.getLogger("hybridcert")


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    log.info("wrote %s", path)


def _dump(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def load_config(args) -> RunConfig:
    """File values first, then command-line overrides, then strict parsing."""
    d: dict = {}
    if args.config:
        try:
            d = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}: invalid JSON: {exc}") from exc
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
    if args.preset:
        sysd = dict(d.get("system", {}))
        sysd.pop("definition", None)
        sysd["preset"] = args.preset
        d["system"] = sysd
    tmpl = dict(d.get("template", {}))
    if args.lam is not None:
        tmpl.pop("lam", None)
        tmpl["lambda"] = args.lam
    if args.deg_w is not None:
        tmpl["deg_W"] = args.deg_w
    if args.deg_l is not None:
        tmpl["deg_L"] = args.deg_l
    if tmpl:
        d["template"] = tmpl
    if args.samples is not None:
        d["check"] = {**d.get("check", {}), "samples": args.samples}
    if args.surface_samples is not None:
        d["check"] = {**d.get("check", {}), "surface_samples": args.surface_samples}
    if args.seed is not None:
        d["seed"] = args.seed
    if args.out is not None:
        d["out"] = args.out
    return RunConfig.from_dict(d).expanded()


def _default_x0(sys: HybridSystem) -> np.ndarray:
    p = sys.params
    if {"alpha", "gamma", "g_over_l"} <= set(p):
        return np.array([p["gamma"] - p["alpha"], rimless_wheel_fixed_point(p["alpha"], p["gamma"], p["g_over_l"])])
    return np.array([0.5 * (a + b) for a, b in sys.region.box])


def _report_lines(report) -> list[str]:
    out = []
    for k, v in report.families.items():
        out.append(f"  {k:<14} worst margin {v.worst_margin: .6e}  violations {len(v.witnesses)}")
    return out


def cmd_certify(cfg: RunConfig) -> int:
    sys = cfg.system.build()
    out = Path(cfg.out)
    _write(out / "config.effective.json", cfg.to_json())
    res = synthesize(sys, cfg.template, cfg.solver)
    sol = res.solution
    print(f"solver: {sol.status.value} after {sol.iterations} iterations "
          f"(margin {sol.margin:.3e}, residual {sol.equality_residual:.2e})")
    if res.status == Status.INFEASIBLE:
        print("no certificate: SOS program infeasible")
        return EXIT_INFEASIBLE
    if res.status != Status.FEASIBLE:
        print(f"no certificate: {sol.message}")
        return EXIT_FAILURE
    cert = res.certificate
    report = sample_check(sys, cert, cfg.check.samples, cfg.check.tol, cfg.check.surface_samples, seed=cfg.seed)
    cert.provenance["check"] = "pass" if report.passed else "fail"
    _write(out / "certificate.json", cert.to_json())
    _write(out / "check_report.json", report.to_json())
    _write(out / "witnesses.csv", report.witnesses_csv())
    print(f"check ({report.samples} region / {report.surface_samples} surface samples): "
          f"{'pass' if report.passed else 'FAIL'}")
    print("\n".join(_report_lines(report)))
    return EXIT_OK if report.passed else EXIT_CHECK


def cmd_check(cfg: RunConfig, cert_path: str) -> int:
    sys = cfg.system.build()
    try:
        cert = Certificate.from_json(Path(cert_path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read certificate: {exc}") from exc
    if cert.system_hash != sys.fingerprint():
        print(f"certificate was produced for a different system (hash {cert.system_hash[:12]}..., "
              f"configured system {sys.fingerprint()[:12]}...)")
        return EXIT_HASH
    report = sample_check(sys, cert, cfg.check.samples, cfg.check.tol, cfg.check.surface_samples, seed=cfg.seed)
    out = Path(cfg.out)
    _write(out / "check_report.json", report.to_json())
    _write(out / "witnesses.csv", report.witnesses_csv())
    print(f"check ({report.samples} region / {report.surface_samples} surface samples): "
          f"{'pass' if report.passed else 'FAIL'}")
    print("\n".join(_report_lines(report)))
    if not report.passed:
        for k, v in report.families.items():
            for p in v.witnesses[:10]:
                print(f"  witness {k}: {p}")
    return EXIT_OK if report.passed else EXIT_CHECK


def _axes_meta(kind: str, columns: list[str], x: str, y: str) -> str:
    return _dump({"kind": kind, "columns": columns, "x_axis": x, "y_axis": y})


def cmd_simulate(cfg: RunConfig) -> int:
    sys = cfg.system.build()
    sim = cfg.simulation
    out = Path(cfg.out)
    opts = sim.sim_options()
    x0 = np.array(sim.x0) if sim.x0 is not None else _default_x0(sys)
    failures, attempts = 0, 1
    try:
        trace = integrate(sys, x0, sim.t_max, opts)
        _write(out / "trace.csv", trace.trace_csv())
        _write(out / "events.csv", trace.events_csv())
        names = list(sys.state_names)
        _write(out / "trace_meta.json", _axes_meta("phase", ["t", *names, "segment_id"], names[0], names[-1]))
        print(f"trace: {len(trace.events)} impacts up to t = {trace.final_time:.6g}")
    except SimulationError as exc:
        failures += 1
        print(f"trace failed: {exc}")
    starts = [np.array(x) for x in sim.initial_states]
    if sim.n_init:
        starts.extend(sample_region(sys, sim.n_init, seed=cfg.seed))
    if starts:
        attempts += len(starts)
        try:
            section = post_impact_section(sys, 0)
            res = convergence_sweep(sys, np.array(starts), sim.n_impacts, tol=sim.conv_tol, section=section,
                                    opts=opts, t_budget=sim.t_budget)
        except SimulationError as exc:
            print(f"sweep failed: {exc}")
            return EXIT_FAILURE
        _write(out / "sweep.csv", res.to_csv(sys.state_names))
        _write(out / "sweep_summary.json", _dump(res.summary()))
        failures += res.counts["error"]
        print(f"sweep: {res.counts}, max final distance {res.max_final_distance:.3e}")
        for r in res.rows:
            if r.status != "converged":
                print(f"  flagged {r.status}: x0 = {r.initial}")
    return EXIT_FAILURE if failures == attempts else EXIT_OK


def cmd_poincare(cfg: RunConfig) -> int:
    sys = cfg.system.build()
    sim = cfg.simulation
    out = Path(cfg.out)
    try:
        rec = poincare_map(sys, 0, sim.omega_range, sim.n_samples, sim.sim_options(), fd_step=sim.fd_step,
                           t_budget=sim.t_budget)
    except (NoReturnError, SimulationError) as exc:
        print(f"poincare analysis failed: {exc}")
        return EXIT_FAILURE
    _write(out / "poincare_samples.csv", rec.samples_csv())
    _write(out / "poincare_summary.json", _dump(rec.summary()))
    _write(out / "poincare_meta.json", _axes_meta("return_map", ["omega_in", "omega_out"], "omega_in", "omega_out"))
    print(f"fixed point {rec.fixed_point:.10f}, derivative {rec.derivative_at_fixed_point:.6f}")
    return EXIT_OK


def cmd_export_sdp(cfg: RunConfig) -> int:
    sys = cfg.system.build()
    prob = compile_sdp(assemble(sys, cfg.template), reduce_faces=True)
    out = Path(cfg.out)
    _write(out / "problem.dat-s", export_sdpa(prob))
    print(f"SDP: {prob.nrows} equality rows, {len(prob.blocks)} PSD blocks, {prob.n_free} free variables")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--preset", choices=["rimless-wheel"], help="use a named system preset")
    common.add_argument("--lambda", dest="lam", type=float, help="contraction rate")
    common.add_argument("--deg-w", type=int, help="degree of W")
    common.add_argument("--deg-l", type=int, help="degree of the region multipliers")
    common.add_argument("--samples", type=int, help="region samples for checking")
    common.add_argument("--surface-samples", type=int, help="surface samples for checking")
    common.add_argument("--seed", type=int, help="seed for all sampling (default 0)")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="hybridcert", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("certify", parents=[common], help="synthesize and check a certificate")
    c = sub.add_parser("check", parents=[common], help="re-check a certificate by sampling")
    c.add_argument("certificate")
    sub.add_parser("simulate", parents=[common], help="simulate a trace and optional convergence sweep")
    sub.add_parser("poincare", parents=[common], help="return map, fixed point and derivative")
    sub.add_parser("export-sdp", parents=[common], help="write the SDP in SDPA sparse format")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(args)
        if args.command == "certify":
            return cmd_certify(cfg)
        if args.command == "check":
            return cmd_check(cfg, args.certificate)
        if args.command == "simulate":
            return cmd_simulate(cfg)
        if args.command == "poincare":
            return cmd_poincare(cfg)
        return cmd_export_sdp(cfg)
    except (ConfigError, CertificateError, CompileError) as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    raise SystemExit(main())
