"""Command-line runner: one subcommand per solver plus config-file runs and sweeps."""

from __future__ import annotations

import argparse
import os
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from .config import (SCHEMA, SUBCOMMANDS, ConfigError, RunConfig, params_from_strings, parse_config,
                     resolve)
from .io import (TRACE_HEADER, Manifest, build_hash, trace_rows, write_csv, write_ndjson)

EXIT_OK, EXIT_USAGE, EXIT_ALERT = 0, 1, 2


def version_string() -> str:
    return f"{__version__}+{build_hash()}"


# ---------------------------------------------------------------------------
# per-subcommand execution


def _datum(p, k0):
    from .free_transport import AnalyticInitialDatum
    if p["datum"] == "orr_packet":
        return AnalyticInitialDatum.orr_packet(p["lambda"], p["eta0"], k0)
    if p["datum"] == "gaussian":
        return AnalyticInitialDatum.gaussian(p["width"], k0)
    raise ValueError(f"unknown datum {p['datum']!r} (orr_packet or gaussian)")


def _run_free(p, out, man: Manifest, plot: bool) -> int:
    from .free_transport import decay_certificate, density_free
    from .linear import DensityTrace
    datum = _datum(p, p["k0"])
    n = int(round(p["t_final"] / p["dt"]))
    times = p["dt"] * np.arange(n + 1)
    traces = [DensityTrace(k, times, density_free(datum, times, k)) for k in (-p["k0"], p["k0"])]
    write_csv(os.path.join(out, man.add("traces.csv")), TRACE_HEADER, trace_rows(traces))
    pos = traces[1]
    i = int(np.argmax(np.abs(pos.values)))
    cert = decay_certificate(datum, p["sigma"], 0.0, times[:: max(1, n // 200)], k=p["k0"])
    write_ndjson(os.path.join(out, man.add("report.ndjson")), [{
        "k": p["k0"], "t_peak": float(times[i]), "peak_abs_rho": float(abs(pos.values[i])),
        "decay_max_ratio": cert.max_ratio}])
    if plot:
        from .plotting import plot_traces
        plot_traces([pos], os.path.join(out, man.add("free_density.png", figure=True)),
                    title="free streaming density", log=False)
    return EXIT_OK


def _kernel(p):
    from .linear import VolterraKernel
    from .spectral import parse_background, parse_potential
    return VolterraKernel(parse_potential(p["potential"]), parse_background(p["background"]))


def _run_linear(p, out, man: Manifest, plot: bool) -> int:
    from .linear import penrose_check, solve_linear_volterra
    from .spectral import make_grid
    k = p["k"]
    kernel = _kernel(p)
    grid = make_grid(k_max=abs(k), eta_max=abs(k) * (p["t0"] + p["t_final"]) + 1.0, n_eta=3,
                     dt=p["dt"], t_final=p["t_final"])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        tr = solve_linear_volterra(kernel, _datum(p, k), grid, k, t0=p["t0"])
        verdict = penrose_check(kernel, k)
    write_csv(os.path.join(out, man.add("trace.csv")), TRACE_HEADER, trace_rows([tr]))
    rec = {"k": k, "alert": tr.alert, "t_last": float(tr.times[-1]),
           "max_abs_rho": float(np.max(np.abs(tr.values)))}
    rec.update(verdict.as_record())
    write_ndjson(os.path.join(out, man.add("report.ndjson")), [rec])
    if plot:
        from .plotting import plot_traces
        plot_traces([tr], os.path.join(out, man.add("density.png", figure=True)),
                    title=f"linear density, k={k}")
    return EXIT_ALERT if tr.alert else EXIT_OK


def _run_penrose(p, out, man: Manifest, plot: bool) -> int:
    from .linear import dispersion_roots, nyquist_curve, penrose_check
    kernel = _kernel(p)
    recs = []
    for k in range(1, p["k_max"] + 1):
        v = penrose_check(kernel, k, n_samples=p["n_samples"])
        rec = v.as_record()
        if kernel.lorentzian_constant(k) is not None:
            roots = dispersion_roots(kernel, k)
            rec["roots"] = [[float(r.real), float(r.imag)] for r in roots]
        recs.append(rec)
        if plot:
            from .plotting import plot_nyquist
            plot_nyquist(nyquist_curve(kernel, k), os.path.join(out, man.add(f"nyquist_k{k}.png", True)),
                         title=f"k={k}, winding {v.winding_number}")
    write_ndjson(os.path.join(out, man.add("verdicts.ndjson")), recs)
    return EXIT_OK


def _chain_config(p, grid):
    from .echo import EchoChainConfig
    from .spectral import PotentialLaw
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        cfg = EchoChainConfig(p["epsilon"], p["delta"], p["k0"], p["eta0"], p["sigma"], p["t_in"],
                              p["k_trunc"], grid, PotentialLaw.power(p["potential_sign"], p["gamma0"]))
    return cfg, [str(w.message) for w in caught]


def _run_echo_chain(p, out, man: Manifest, plot: bool) -> int:
    from .echo import critical_times, solve_echo_chain
    from .spectral import make_grid
    grid = make_grid(k_max=p["k_trunc"], eta_max=p["k_trunc"] * p["t_final"], n_eta=3,
                     dt=p["dt"], t_final=p["t_final"])
    cfg, notes = _chain_config(p, grid)
    man.notes["warnings"] = notes
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        traces, report = solve_echo_chain(cfg, residual_bound=p["residual_bound"])
    pos = [tr for tr in traces if tr.k > 0]
    write_csv(os.path.join(out, man.add("traces.csv")), TRACE_HEADER, trace_rows(pos))
    write_ndjson(os.path.join(out, man.add("report.ndjson")), [report.as_record()])
    if plot:
        from .plotting import plot_peaks, plot_traces
        plot_traces(pos, os.path.join(out, man.add("echo_traces.png", True)), title="echo chain",
                    marks=critical_times(cfg.eta0, cfg.k0))
        plot_peaks(report.per_mode, cfg.epsilon, os.path.join(out, man.add("echo_peaks.png", True)))
    return EXIT_ALERT if report.alert else EXIT_OK


def _run_nonlinear(p, out, man: Manifest, plot: bool) -> int:
    from .echo import critical_times
    from .nonlinear import (ExperimentConfig, StabilityError, run_echo_experiment, solve_backward)
    from .spectral import DistributionSpectrum, make_grid, write_snapshot
    grid = make_grid(k_max=p["k_max"], eta_max=p["eta_max"], n_eta=p["n_eta"], dt=p["dt"],
                     t_final=p["t_final"])
    chain, notes = _chain_config(p, grid)
    man.notes["warnings"] = notes
    exp = ExperimentConfig(chain, record_every=p["record_every"],
                           self_interaction=p["self_interaction"],
                           compare_reduced=p["compare_reduced"])
    if p["backward_to"] is not None:
        state = solve_backward(exp, p["backward_to"])
        rec = {"t_start": chain.t_in, "t_end": state.time,
               "max_abs_g": float(np.max(np.abs(state.g.values)))}
        write_ndjson(os.path.join(out, man.add("report.ndjson")), [rec])
        if p["snapshot_out"]:
            write_snapshot(os.path.join(out, man.add(p["snapshot_out"])),
                           DistributionSpectrum(grid, state.perturbation_values(), state.time))
        return EXIT_OK
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            res = run_echo_experiment(exp, snapshot_every=p["snapshot_every"])
        except StabilityError as exc:
            write_ndjson(os.path.join(out, man.add("errors.ndjson")),
                         [{"error": "StabilityError", "message": str(exc)}])
            return EXIT_ALERT
    man.notes["warnings"] = notes + sorted({str(w.message) for w in caught})
    pos = [tr for tr in res.traces if tr.k > 0]
    write_csv(os.path.join(out, man.add("traces.csv")), TRACE_HEADER, trace_rows(pos))
    rep = res.report.as_record()
    rep["mass_drift"] = res.mass_drift
    rep["l2_drift"] = res.l2_drift
    if exp.compare_reduced:
        rep["error_vs_reduced"] = res.error_vs_reduced
    write_ndjson(os.path.join(out, man.add("report.ndjson")), [rep])
    cons = res.record.conserved
    write_csv(os.path.join(out, man.add("conserved.csv")), ("t", "mass", "l2", "energy"),
              ((t, c.mass, c.l2, c.energy) for t, c in zip(res.record.conserved_times, cons)))
    if p["snapshot_out"]:
        st = res.final_state
        write_snapshot(os.path.join(out, man.add(p["snapshot_out"])),
                       DistributionSpectrum(grid, st.perturbation_values(), st.time))
    boot = None
    if res.record.snapshots:
        from .norms import bootstrap_monitor, default_bootstrap_multipliers
        A, B = default_bootstrap_multipliers(chain.epsilon)
        boot = bootstrap_monitor(res.record.snapshots, res.traces, A, B, chain.epsilon, chain.sigma)
        write_ndjson(os.path.join(out, man.add("bootstrap.ndjson")), boot.rows())
    if plot:
        from .plotting import plot_series, plot_traces
        plot_traces(pos, os.path.join(out, man.add("nonlinear_traces.png", True)),
                    title="nonlinear densities", marks=critical_times(chain.eta0, chain.k0))
        ct = res.record.conserved_times
        plot_series(ct, {"mass": _rel([c.mass for c in cons]), "L2": _rel([c.l2 for c in cons])},
                    os.path.join(out, man.add("conservation.png", True)), ylabel="relative drift")
        if boot is not None:
            plot_series(boot.times, boot.normalized, os.path.join(out, man.add("bootstrap.png", True)),
                        ylabel="monitor / bound shape", log=True)
    return EXIT_ALERT if res.report.alert else EXIT_OK


def _rel(vals):
    v = np.asarray(vals, dtype=float)
    return (v - v[0]) / (abs(v[0]) if v[0] != 0 else 1.0)


def _run_norms(p, out, man: Manifest, plot: bool) -> int:
    from .norms import apply_multiplier, l2_quadrature, norm_hsm, parse_multiplier
    from .spectral import read_snapshot
    spec = parse_multiplier(p["spec"])
    f = read_snapshot(p["snapshot_in"])
    t = f.time if p["t"] is None else p["t"]
    if spec.kind == "sobolev":
        value, sat = norm_hsm(f, spec.s, spec.m), False
    else:
        g, sat = apply_multiplier(spec, f, t, return_flag=True)
        value = l2_quadrature(g)
    write_ndjson(os.path.join(out, man.add("norms.ndjson")),
                 [{"spec": p["spec"], "t": t, "norm_value": value, "saturated": sat}])
    return EXIT_ALERT if sat else EXIT_OK


RUNNERS = {
    "free": _run_free,
    "linear": _run_linear,
    "penrose": _run_penrose,
    "echo-chain": _run_echo_chain,
    "nonlinear": _run_nonlinear,
    "norms": _run_norms,
}


def execute(sub: str, params: Dict, out_dir: str, plot: bool = False) -> int:
    """Run one resolved configuration into out_dir and write its manifest."""
    from .nonlinear import StabilityError
    from .spectral import GridDomainError
    os.makedirs(out_dir, exist_ok=True)
    resolved = resolve(sub, params)
    man = Manifest(sub, resolved, version_string())
    start = time.perf_counter()
    try:
        status = RUNNERS[sub](resolved, out_dir, man, plot)
    except StabilityError as exc:
        write_ndjson(os.path.join(out_dir, man.add("errors.ndjson")),
                     [{"error": type(exc).__name__, "message": str(exc)}])
        status = EXIT_ALERT
    except (GridDomainError, ValueError, OSError, RuntimeError) as exc:
        write_ndjson(os.path.join(out_dir, man.add("errors.ndjson")),
                     [{"error": type(exc).__name__, "message": str(exc)}])
        print(f"error: {exc}", file=sys.stderr)
        status = EXIT_USAGE
    man.wall_time = time.perf_counter() - start
    man.status = status
    man.write(out_dir)
    return status


def _execute_entry(args: Tuple[str, Dict, str, bool]) -> int:
    return execute(*args)


def worker_count(n_jobs: int) -> int:
    cap = os.environ.get("VEL_THREADS")
    try:
        limit = int(cap) if cap else (os.cpu_count() or 1)
    except ValueError:
        limit = 1
    return max(1, min(n_jobs, limit))


def run(config: RunConfig, out_dir: Optional[str] = None, plot: bool = False) -> int:
    """Execute a parsed config (with its sweep, if any); returns the exit status."""
    out_dir = out_dir or config.output_dir
    entries = config.expand()
    if len(entries) == 1 and not entries[0][0]:
        return execute(config.subcommand, config.parameters, out_dir, plot)
    os.makedirs(out_dir, exist_ok=True)
    jobs = [(cfg.subcommand, cfg.parameters, os.path.join(out_dir, name), plot)
            for name, cfg in entries]
    n = worker_count(len(jobs))
    if n == 1:
        codes = [_execute_entry(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=n) as pool:
            codes = list(pool.map(_execute_entry, jobs))
    man = Manifest("sweep", {"subcommand": config.subcommand, "base": config.parameters,
                             "sweep": [[k, v] for k, v in config.sweep]}, version_string())
    for name, _ in entries:
        man.add(os.path.join(name, "manifest.json"))
    man.status = (EXIT_USAGE if EXIT_USAGE in codes
                  else EXIT_ALERT if EXIT_ALERT in codes else EXIT_OK)
    man.write(out_dir)
    return man.status


# ---------------------------------------------------------------------------
# argument parsing


def _add_schema_flags(sp: argparse.ArgumentParser, sub: str) -> None:
    for key, (typ, _) in SCHEMA[sub].items():
        flag = "--" + key.replace("_", "-")
        if typ is bool:
            sp.add_argument(flag, dest=key, nargs="?", const="true", default=None, metavar="BOOL")
        else:
            sp.add_argument(flag, dest=key, default=None, metavar=typ.__name__.upper())


class _Version(argparse.Action):
    def __init__(self, option_strings, dest, **kw):
        super().__init__(option_strings, dest, nargs=0, **kw)

    def __call__(self, parser, namespace, values, option_string=None):
        print(version_string())
        parser.exit()


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="vlasov-echo",
                                 description="Phase mixing, Landau damping and plasma echo solvers.")
    ap.add_argument("--version", action=_Version, help="print version and build hash")
    subs = ap.add_subparsers(dest="command", required=True)
    for sub in SUBCOMMANDS:
        sp = subs.add_parser(sub)
        _add_schema_flags(sp, sub)
        sp.add_argument("--out", default="out", help="output directory")
        sp.add_argument("--plot", action="store_true", help="render figures next to the data")
    for name in ("run", "sweep"):
        sp = subs.add_parser(name, help=f"{name} a config file")
        sp.add_argument("config", help="config file path")
        sp.add_argument("--out", default=None, help="output directory (overrides [run] output_dir)")
        sp.add_argument("--plot", action="store_true")
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        if args.command in ("run", "sweep"):
            with open(args.config, encoding="utf-8") as fh:
                cfg = parse_config(fh.read())
            if args.command == "sweep" and not cfg.sweep:
                raise ConfigError(["line 0: sweep needs a [sweep] section"])
            return run(cfg, args.out, args.plot)
        given = {k: v for k, v in vars(args).items()
                 if k in SCHEMA[args.command] and v is not None}
        params = params_from_strings(args.command, given)
    except ConfigError as exc:
        for err in exc.errors:
            print(f"config error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return execute(args.command, params, args.out, args.plot)


if __name__ == "__main__":
    sys.exit(main())
