"""Command-line interface: ``cdfuse analyze | simulate | reproduce | doc-check``.

Exit codes: 0 success, 1 numeric failure, 2 configuration or validation error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

from . import __version__
from .bayes.mcmc import MODES as MCMC_MODES, MCMCConfig
from .diagnostics import reports_to_csv
from .elicit.survey import DEFAULT_BIN_EDGES, pool_survey
from .errors import CdfuseError, UsageError, ValidationError
from .pipeline import ALL_FAMILIES, POSTERIOR_METHODS, TRIAL_CDS, RunConfig, reproduce_table, run_analysis
from .sim import SAMPLING_MODES, SIM_BIN_EDGES, SimConfig, simulate_survey

EXIT_OK, EXIT_NUMERIC, EXIT_CONFIG = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ValidationError(message)


def _floats(text: str):
    try:
        return tuple(float(x) for x in text.split(","))
    except ValueError:
        raise ValidationError(f"expected comma-separated numbers, got {text!r}") from None


def _edges(text: str):
    """Bin edges from a comma list or a preset name ('default' or 'sim')."""
    presets = {"default": DEFAULT_BIN_EDGES, "sim": SIM_BIN_EDGES}
    if text in presets:
        return tuple(presets[text])
    return _floats(text)


def _read_config(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise ValidationError(f"config file not found: {path}")
    try:
        raw = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ValidationError("config file must hold a JSON object")
    return raw


def _fmt(x) -> str:
    return "" if x is None else f"{x:.4f}"


def _write_density(path: Path, g) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["delta", "density", "cdf"])
    for x, v, c in g.to_rows():
        w.writerow([f"{x:.10g}", f"{v:.10g}", f"{c:.10g}"])
    path.write_text(buf.getvalue())


def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _print_reports(reports, out) -> None:
    print(f"{'':<12}{'mode':>9}{'median':>9}{'mean':>9}   {'I80':<19}{'I90':<19}I95", file=out)
    for r in reports:
        ivs = "".join(f"({r_[0]:7.4f},{r_[1]:7.4f}) " for r_ in (r.I80, r.I90, r.I95))
        print(f"{r.label:<12}{r.mode:9.4f}{r.median:9.4f}{r.mean:9.4f}   {ivs.rstrip()}", file=out)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _run_config(args) -> RunConfig:
    raw = _read_config(args.config)
    overrides = {
        "survey_path": args.survey, "trial": args.trial, "prior": args.prior, "mu0": args.mu0,
        "sigma0": args.sigma0, "seed": args.seed, "out_dir": args.out, "posterior": args.posterior,
        "trial_cd": args.trial_cd, "resolution": args.resolution,
        "bin_edges": None if args.bin_edges is None else _edges(args.bin_edges),
    }
    for k, v in overrides.items():
        if v is not None:
            raw[k] = v
    mc = dict(raw.get("mcmc") or {})
    for flag, key in ((args.chains, "chains"), (args.burn_in, "burn_in"), (args.mcmc_mode, "mode")):
        if flag is not None:
            mc[key] = flag
    if args.seed is not None or "seed" not in mc:
        mc["seed"] = int(raw.get("seed", 0))
    raw["mcmc"] = mc
    return RunConfig.from_dict(raw)


def cmd_analyze(args, out=None) -> int:
    out = out or sys.stdout
    cfg = _run_config(args)
    result = run_analysis(cfg)
    dest = Path(cfg.out_dir)
    dest.mkdir(parents=True, exist_ok=True)
    for name, g in result.densities.items():
        _write_density(dest / f"{name}.csv", g)
    reports_to_csv(result.reports, dest / "summary.csv")
    v = result.verdict
    _dump_json(dest / "verdict.json", {
        "statistic": v.statistic, "prior": v.prior_value, "likelihood": v.likelihood_value,
        "posterior": v.posterior_value, "discrepant": v.discrepant, "by_statistic": v.by_statistic,
        "prior_spec": result.prior_spec, "extras": result.extras, "config": cfg.as_dict(),
    })
    _print_reports(result.reports, out)
    print(f"discrepant (mean): {str(v.discrepant).lower()}", file=out)
    print(f"wrote {', '.join(sorted(p.name for p in dest.iterdir()))} to {dest}", file=out)
    return EXIT_OK


def cmd_simulate(args, out=None) -> int:
    out = out or sys.stdout
    raw = _read_config(args.config).get("simulation", {})
    if args.truth is not None:
        raw["truth"] = list(_floats(args.truth))
    for key, val in (("experts", args.experts), ("patients_per_expert", args.patients),
                     ("seed", args.seed), ("sampling", args.sampling)):
        if val is not None:
            raw[key] = val
    if args.bin_edges is not None:
        raw["bin_edges"] = _edges(args.bin_edges)
    if "truth" in raw and len(raw["truth"]) != 3 and not isinstance(raw["truth"], dict):
        raise ValidationError("truth must hold three values q0,q1,r")
    cfg = SimConfig.from_dict(raw)
    table, clamped = simulate_survey(cfg, return_clamped=True)
    text = table.to_csv()
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    else:
        out.write(text)
    h = pool_survey(table)
    target = out if args.out else sys.stderr
    print(f"experts {cfg.experts}, patients per expert {cfg.patients_per_expert}, "
          f"bin edges {','.join(f'{e:g}' for e in cfg.bin_edges)}", file=target)
    print(f"pooled mean {h.mean:.4f}, sd {h.sd:.4f}, clamped {clamped}", file=target)
    return EXIT_OK


def cmd_reproduce(args, out=None) -> int:
    out = out or sys.stdout
    mcmc = None
    if args.posterior == "mcmc":
        mc = {"seed": args.seed or 0}
        for flag, key in ((args.chains, "chains"), (args.burn_in, "burn_in"), (args.mcmc_mode, "mode")):
            if flag is not None:
                mc[key] = flag
        mcmc = MCMCConfig.from_dict(mc)
    rows = None if args.rows is None else [r.strip() for r in args.rows.split(",")]
    cells = reproduce_table(args.table, args.mu0, args.sigma0, args.posterior, mcmc, rows)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["row", "statistic", "computed", "reference", "delta", "tol", "status"])
    for c in cells:
        w.writerow([c.row, c.statistic, _fmt(c.computed), f"{c.reference:.3f}", _fmt(c.delta), f"{c.tol:g}", c.status])
    text = buf.getvalue()
    if args.out:
        dest = Path(args.out)
        dest.mkdir(parents=True, exist_ok=True)
        (dest / f"reproduce_{args.table}.csv").write_text(text)
    counts = {}
    for c in cells:
        key = c.status if not c.status.startswith("skipped") else "skipped"
        counts[key] = counts.get(key, 0) + 1
    by_row = {}
    for c in cells:
        by_row.setdefault(c.row, []).append(c)
    for row, cs in by_row.items():
        states = {c.status for c in cs}
        if all(s.startswith("skipped") for s in states):
            label = cs[0].status
        else:
            bad = [c.statistic for c in cs if c.status == "fail"]
            label = "pass" if not bad else "fail (" + ", ".join(bad) + ")"
        print(f"{row:<24}{label}", file=out)
    print(", ".join(f"{k} {v}" for k, v in sorted(counts.items())), file=out)
    if args.strict and counts.get("fail"):
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_doc_check(args, out=None) -> int:
    out = out or sys.stdout
    from .doccheck import default_doc_paths, doc_examples_check, update_doc

    if args.update:
        for p in (args.paths or default_doc_paths()):
            update_doc(p)
            print(f"updated {p}", file=out)
        return EXIT_OK
    failures = doc_examples_check(args.paths or None, out=out)
    return EXIT_OK if not failures else EXIT_NUMERIC


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_mcmc_flags(p) -> None:
    p.add_argument("--chains", type=int, help="number of MH chains")
    p.add_argument("--burn-in", type=int, dest="burn_in", help="burn-in iterations per chain")
    p.add_argument("--mcmc-mode", choices=MCMC_MODES, help="proposal scheme")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cdfuse", description="Fuse expert opinion with two-arm binomial trial data.")
    parser.add_argument("--version", action="version", version=f"cdfuse {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    a = sub.add_parser("analyze", help="prior, likelihood and posterior (or combined CD) for one data set")
    a.add_argument("--config", help="JSON run configuration")
    a.add_argument("--survey", help="survey CSV (default: built-in Table 1 survey)")
    a.add_argument("--trial", help="trial counts n0,s0,n1,s1")
    a.add_argument("--prior", choices=ALL_FAMILIES)
    a.add_argument("--mu0", type=float, help="prior mean of the control rate")
    a.add_argument("--sigma0", type=float, help="prior sd of the control rate")
    a.add_argument("--bin-edges", dest="bin_edges",
                   help="13 comma-separated survey bin edges (write --bin-edges=-0.1,...), or 'default' / 'sim'")
    a.add_argument("--posterior", choices=POSTERIOR_METHODS, help="grid integration or MH sampling")
    a.add_argument("--trial-cd", dest="trial_cd", choices=TRIAL_CDS, help="trial CD used in the combination")
    a.add_argument("--resolution", type=int, help="delta grid points")
    a.add_argument("--seed", type=int)
    a.add_argument("--out", help="output directory")
    _add_mcmc_flags(a)

    s = sub.add_parser("simulate", help="simulate an expert survey from a bivariate beta truth")
    s.add_argument("--config", help="JSON file with a 'simulation' object")
    s.add_argument("--truth", help="q0,q1,r (default 6,20,2)")
    s.add_argument("--experts", type=int)
    s.add_argument("--patients", type=int, help="patients per expert")
    s.add_argument("--bin-edges", dest="bin_edges", help="13 comma-separated edges, or 'default' / 'sim'")
    s.add_argument("--sampling", choices=SAMPLING_MODES)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", help="survey CSV path (default: stdout)")

    r = sub.add_parser("reproduce", help="recompute a reference table and compare cell by cell")
    r.add_argument("table", choices=("table2", "table3"))
    r.add_argument("--mu0", type=float)
    r.add_argument("--sigma0", type=float)
    r.add_argument("--posterior", choices=POSTERIOR_METHODS, default="grid")
    r.add_argument("--rows", help="comma-separated row ids to compute (default: all)")
    r.add_argument("--seed", type=int)
    r.add_argument("--out", help="directory for reproduce_<table>.csv")
    r.add_argument("--strict", action="store_true", help="exit 1 if any compared cell fails")
    _add_mcmc_flags(r)

    dc = sub.add_parser("doc-check", help="run the command examples in the docs and compare output")
    dc.add_argument("paths", nargs="*", help="markdown files (default: the docs directory)")
    dc.add_argument("--update", action="store_true", help="rewrite expected outputs from current runs")
    return parser


COMMANDS = {"analyze": cmd_analyze, "simulate": cmd_simulate, "reproduce": cmd_reproduce,
            "doc-check": cmd_doc_check}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return EXIT_CONFIG
        return COMMANDS[args.command](args)
    except (ValidationError, UsageError) as exc:
        print(f"cdfuse: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CdfuseError as exc:
        print(f"cdfuse: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
