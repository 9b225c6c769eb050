"""Command-line entry point that writes library results as CSV or JSON."""

from __future__ import annotations

import argparse
import io
import json
import sys
from typing import Sequence

from . import audit, dp, sim
from .distributions import (
    Family,
    GainModel,
    QuadratureError,
    base_threshold,
    make_spec,
    mc_estimate,
    mean_normalized,
    psi_of_shape,
    sample_kurtosis,
)
from .two_period import classify_regimes, psi_value, threshold_T21

EXIT_OK, EXIT_NUMERIC, EXIT_USAGE = 0, 1, 2

# (family, shape, [scales]) per row group
SCALE_INVARIANCE = (
    ("exponential", None, (0.1, 10.0)),
    ("halfnormal", None, (0.2, 20.0)),
    ("gamma", 2.0, (0.5, 8.0)),
    ("lognormal", 1.0, (1.0, 5.0)),
)
SHAPE_DEPENDENCE = (
    ("gamma", 0.5), ("gamma", 2.0),
    ("weibull", 0.8), ("weibull", 1.5),
    ("lognormal", 1.5), ("lognormal", 0.5),
)
EXTREME = (("lognormal", 5.0), ("pareto", 1.05), ("gamma", 1e4))
PROFILE_PRESETS = {
    "scale-profile": (("exponential", None, 0.1), ("exponential", None, 1.0), ("exponential", None, 10.0)),
    "tail-profile": (("pareto", 1.05, 1.0), ("lognormal", 1.5, 1.0), ("halfnormal", None, 1.0)),
}
HEATMAP_PRESETS = {"pareto": ("pareto", 1.05, 1.0)}
DEFAULT_T, DEFAULT_K = 20, 5


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _nonneg_int(text):
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text}")
    return v


def _add_dist(p, family_default="exponential"):
    p.add_argument("--family", choices=[f.value for f in Family], default=family_default)
    p.add_argument("--shape", type=float, default=None, help="Gamma k, Weibull c, Lognormal sigma, Pareto b")
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--loc", type=float, default=0.0)
    p.add_argument("--mean-normalize", action="store_true", help="rescale so the mean improvement is 1")


def _add_out(p):
    p.add_argument("--out", default=None, help="output path (default: stdout)")
    p.add_argument("--format", choices=("csv", "json"), default="csv")


def _add_mc(p, samples_default=None):
    p.add_argument("--samples", type=_positive_int, default=samples_default)
    p.add_argument("--seed", type=_nonneg_int, default=None)
    p.add_argument("--threads", type=_positive_int, default=1,
                   help="worker threads; results do not depend on this value")


def _add_dp(p):
    p.add_argument("--p", type=float, default=0.5, dest="p_align", help="alignment probability")
    p.add_argument("--horizon", type=_nonneg_int, default=DEFAULT_T)
    p.add_argument("--budget", type=_nonneg_int, default=DEFAULT_K)
    p.add_argument("--tol", type=float, default=1e-9)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="budgeted-discretion", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("psi", help="threshold c and patience psi, analytic and Monte Carlo")
    _add_dist(p)
    _add_mc(p)
    p.add_argument("--sweep", choices=("scale-invariance", "shape-dependence", "extreme"))
    _add_out(p)

    p = sub.add_parser("regimes", help="regime flags for a psi value or a distribution")
    _add_dist(p)
    p.add_argument("--psi", type=float, default=None, help="use this psi instead of a distribution")
    p.add_argument("--p", type=float, default=0.5, dest="p_align")
    _add_out(p)

    p = sub.add_parser("dp", help="dynamic program grids and spending profiles")
    dsub = p.add_subparsers(dest="action", required=True, parser_class=_Parser)
    for name in ("solve", "profile", "heatmap"):
        q = dsub.add_parser(name)
        _add_dist(q)
        _add_dp(q)
        if name == "profile":
            q.add_argument("--preset", choices=sorted(PROFILE_PRESETS))
        if name == "heatmap":
            q.add_argument("--preset", choices=sorted(HEATMAP_PRESETS))
        _add_out(q)

    p = sub.add_parser("sim", help="episode simulation")
    ssub = p.add_subparsers(dest="action", required=True, parser_class=_Parser)
    q = ssub.add_parser("run")
    _add_dist(q)
    q.add_argument("--horizon", type=_positive_int, default=DEFAULT_T)
    q.add_argument("--budget", type=_nonneg_int, default=DEFAULT_K)
    q.add_argument("--tol", type=float, default=1e-9)
    _add_mc(q, samples_default=100_000)
    q.add_argument("--substreams", type=_positive_int, default=1)
    q.add_argument("--profile", action="store_true", help="emit per-period spend frequencies")
    _add_out(q)

    p = sub.add_parser("audit", help="daily override panels and the logit audit model")
    asub = p.add_subparsers(dest="action", required=True, parser_class=_Parser)
    q = asub.add_parser("synth", help="write a synthetic panel (or its decision records)")
    q.add_argument("--days", type=_positive_int, default=1500)
    q.add_argument("--seed", type=_nonneg_int, default=None)
    q.add_argument("--records", action="store_true", help="write decision records instead of the panel")
    q.add_argument("--exits-out", help="with --records: also write daily exit counts here")
    q.add_argument("--holidays-out", help="with --records: also write the holiday dates here")
    _add_out(q)
    for name in ("fit", "report"):
        q = asub.add_parser(name)
        src = q.add_mutually_exclusive_group(required=True)
        src.add_argument("--panel", help="panel CSV")
        src.add_argument("--records", help="decision-record CSV (date,predicted,actual)")
        q.add_argument("--holidays", help="file with one ISO date per line")
        q.add_argument("--exits", help="daily exit CSV (date,es_exit,th_exit) for --records input")
        q.add_argument("--outcome", choices=audit.OUTCOMES, default="all")
        q.add_argument("--state", choices=audit.STATES, default="roll")
        q.add_argument("--calendar", choices=("daytype", "dow"), default="daytype")
        q.add_argument("--drop-empty", action="store_true", help="drop all-zero design columns")
        _add_out(q)
    return parser


# ---------------------------------------------------------------------------

def _spec_from(args):
    try:
        if args.mean_normalize:
            spec = mean_normalized(args.family, args.shape)
            return spec.rescaled(spec.scale * args.scale, args.loc)
        return make_spec(args.family, args.shape, args.loc, args.scale)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _need_seed(args, what):
    if args.seed is None:
        raise UsageError(f"{what} is stochastic: --seed is required")


def _check_p(p):
    if not 0.0 <= p <= 1.0:
        raise UsageError(f"--p must lie in [0, 1], got {p}")


def _render(rows, columns, fmt, header=None) -> str:
    buf = io.StringIO()
    if fmt == "json":
        doc = {"rows": [{c: r[c] for c in columns} for r in rows]}
        if header:
            doc = {"provenance": header, **doc}
        json.dump(doc, buf, indent=2, allow_nan=True)
        buf.write("\n")
    else:
        audit.write_rows(buf, rows, columns, header)
    return buf.getvalue()


def _emit(args, rows, columns, header=None):
    text = _render(rows, columns, args.format, header)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _provenance(preset, seed):
    return f"preset={preset} seed={'none' if seed is None else seed}"


PSI_COLUMNS = ("family", "shape", "loc", "scale", "c", "psi", "c_hat", "se_c", "psi_hat",
               "se_psi", "samples", "seed")


def _psi_row(spec, samples, seed, threads, stream=None):
    row = {"family": spec.family.value, "shape": spec.shape, "loc": spec.loc, "scale": spec.scale,
           "c": spec.scale * base_threshold(spec),
           "psi": psi_of_shape(spec), "c_hat": None, "se_c": None, "psi_hat": None,
           "se_psi": None, "samples": samples, "seed": seed}
    if samples:
        key = seed if stream is None else (seed, stream)
        est = mc_estimate(spec, samples, key, threads=threads)
        row.update(c_hat=est.c_hat, se_c=est.se_c, psi_hat=est.psi_hat, se_psi=est.se_psi)
    return row


def sweep_specs(preset: str, family: str | None = None, shape: float | None = None):
    """Distribution grid of a sweep preset, optionally restricted to one family."""
    if preset == "scale-invariance":
        specs = []
        for fam, k, scales in SCALE_INVARIANCE:
            if family is not None and (fam != family or (k is not None and shape not in (None, k))):
                continue
            specs += [make_spec(fam, k, 0.0, s) for s in scales]
        return specs
    if preset == "shape-dependence":
        return [mean_normalized(f, k) for f, k in SHAPE_DEPENDENCE
                if family is None or f == family]
    if preset == "extreme":
        return [make_spec(f, k) for f, k in EXTREME if family is None or f == family]
    raise ValueError(f"unknown preset {preset!r}")


def sweep_rows(preset: str, seed: int, samples: int = 1_000_000, family: str | None = None,
               shape: float | None = None, threads: int = 1) -> list[dict]:
    """Rows of a sweep preset. Row ``i`` draws from the stream ``(seed, i)`` of
    the full preset, so restricting to one family does not change its numbers."""
    full = sweep_specs(preset)
    chosen = sweep_specs(preset, family, shape)
    rows = []
    for spec in chosen:
        i = full.index(spec)
        row = _psi_row(spec, samples, seed, threads, stream=i)
        if preset == "extreme":
            row["excess_kurtosis"] = sample_kurtosis(spec, samples, (seed, len(full) + i))
        rows.append(row)
    return rows


def cmd_psi(args):
    if args.sweep is None:
        spec = _spec_from(args)
        if args.samples:
            _need_seed(args, "Monte Carlo estimation")
        _emit(args, [_psi_row(spec, args.samples, args.seed, args.threads)], PSI_COLUMNS)
        return
    _need_seed(args, f"the {args.sweep} preset")
    family = args.family if args._family_given else None
    rows = sweep_rows(args.sweep, args.seed, args.samples or 1_000_000, family, args.shape,
                      args.threads)
    if not rows:
        raise UsageError(f"preset {args.sweep} has no rows for family {args.family}")
    columns = PSI_COLUMNS + (("excess_kurtosis",) if args.sweep == "extreme" else ())
    _emit(args, rows, columns, _provenance(args.sweep, args.seed))


def _gain_model(args):
    _check_p(args.p_align)
    model = GainModel.from_shape(_spec_from(args))
    return model if args.p_align == 0.5 else model.with_p(args.p_align)


def cmd_regimes(args):
    _check_p(args.p_align)
    if args.psi is not None:
        if not 0.0 <= args.psi <= 1.0:
            raise UsageError(f"--psi must lie in [0, 1], got {args.psi}")
        psi, cut = args.psi, None
    else:
        model = _gain_model(args)
        psi, cut = psi_value(model), threshold_T21(model)
    flags = classify_regimes(psi, args.p_align)
    row = {"psi": psi, "p": args.p_align, "threshold_T21": cut, **flags.as_dict()}
    _emit(args, [row], tuple(row))


def _solve(args, spec=None):
    model = _gain_model(args) if spec is None else GainModel.from_shape(spec).with_p(args.p_align)
    if args.tol <= 0:
        raise UsageError("--tol must be positive")
    return dp.solve(args.horizon, args.budget, model, tol=args.tol)


def cmd_dp(args):
    _check_p(args.p_align)
    if args.action == "solve":
        sol = _solve(args)
        rows = dp.export_grid(sol)
        for r in rows:
            r["threshold"] = float(sol.thresholds[r["tau"], r["k"]])
            r["q"] = float(sol.q[r["tau"], r["k"]])
        _emit(args, rows, ("tau", "k", "W", "threshold", "q"))
    elif args.action == "profile":
        if args.preset:
            rows = []
            for fam, shape, scale in PROFILE_PRESETS[args.preset]:
                spec = make_spec(fam, shape, 0.0, scale)
                prof = dp.spending_profile(_solve(args, spec))
                label = f"{spec.label}@{scale:g}"
                for t, (sp, cum) in enumerate(zip(prof.spend_prob, prof.cumulative_spend), 1):
                    rows.append({"series": label, "t": t, "spend_prob": float(sp),
                                 "cumulative_spend": float(cum)})
            _emit(args, rows, ("series", "t", "spend_prob", "cumulative_spend"),
                  _provenance(args.preset, None))
        else:
            prof = dp.spending_profile(_solve(args))
            rows = dp.export_profile(prof)
            _emit(args, rows, tuple(rows[0]) if rows else ("t", "spend_prob"))
    else:
        if args.preset:
            fam, shape, scale = HEATMAP_PRESETS[args.preset]
            sol = _solve(args, make_spec(fam, shape, 0.0, scale))
            header = _provenance(f"heatmap-{args.preset}", None)
        else:
            sol, header = _solve(args), None
        _emit(args, dp.export_heatmap(sol), ("tau", "k", "threshold", "q"), header)


def cmd_sim(args):
    _need_seed(args, "episode simulation")
    spec = _spec_from(args)
    cfg = sim.EpisodeConfig(args.horizon, args.budget, spec, seed=args.seed,
                            n_episodes=args.samples, substreams=args.substreams)
    sol = dp.solve(cfg.T, cfg.K, cfg.gain_model(), tol=args.tol)
    res = sim.simulate_episodes(cfg, sol)
    if args.profile:
        theory = dp.spending_profile(sol).spend_prob
        _emit(args, sim.profile_rows(res, theory), ("t", "freq_dp", "spend_prob_theory"))
    else:
        rows = sim.summary_rows(res)
        rows.append({"agent": "dp_excess", "mean_welfare": res.excess_dp.mean,
                     "se": res.excess_dp.se, "episodes": res.n_episodes})
        rows.append({"agent": "dp_excess_theory", "mean_welfare": float(sol.W[cfg.T, cfg.K]),
                     "se": 0.0, "episodes": res.n_episodes})
        _emit(args, rows, ("agent", "mean_welfare", "se", "episodes"))
    if res.ordering_violations:
        raise ArithmeticError(f"{res.ordering_violations} episodes violate policy <= dp <= prophet")


def _load_panel(args):
    if args.panel:
        return audit.read_panel_csv(args.panel)
    holidays = audit.read_holidays(args.holidays) if args.holidays else []
    exits = audit.read_exits_csv(args.exits) if args.exits else None
    return audit.aggregate_daily(audit.read_records_csv(args.records), exits, holidays)


def cmd_audit(args):
    if args.action == "synth":
        _need_seed(args, "synthetic panel generation")
        syn = audit.synth_generate(n_days=args.days, seed=args.seed)
        header = _provenance("audit-synth", args.seed)
        if args.records:
            rows = [{"date": r.date.isoformat(), "predicted": r.predicted, "actual": r.actual}
                    for r in syn.records]
            _emit(args, rows, audit.RECORD_COLUMNS, header)
            if args.exits_out:
                audit.write_exits_csv(syn.exits, args.exits_out)
            if args.holidays_out:
                with open(args.holidays_out, "w") as fh:
                    fh.writelines(f"{d.isoformat()}\n" for d in sorted(syn.holidays))
        else:
            _emit(args, syn.panel.to_rows(), audit.PANEL_COLUMNS, header)
        return
    if (args.exits or args.holidays) and args.panel:
        raise UsageError("--exits and --holidays apply to --records input only")
    if args.state == "block" and args.panel:
        raise UsageError("block state features need --records input (not stored in panel CSV)")
    panel = _load_panel(args)
    try:
        design = audit.build_design(panel, args.outcome, args.state, args.calendar,
                                    drop_empty=args.drop_empty)
    except audit.DesignError as exc:
        raise UsageError(str(exc)) from exc
    fit = audit.fit_design(design)
    if args.action == "fit":
        rows = [{"term": nm, "estimate": float(b), "std_err": float(s)}
                for nm, b, s in zip(fit.names, fit.coef, fit.se)]
        rows.append({"term": "deviance", "estimate": fit.deviance, "std_err": None})
        rows.append({"term": "iterations", "estimate": fit.iterations, "std_err": None})
        _emit(args, rows, ("term", "estimate", "std_err"))
    else:
        _emit(args, audit.wald_report(fit), audit.REPORT_COLUMNS)


COMMANDS = {"psi": cmd_psi, "regimes": cmd_regimes, "dp": cmd_dp, "sim": cmd_sim,
            "audit": cmd_audit}


def _error(kind, message, code):
    sys.stderr.write(json.dumps({"error": kind, "message": message, "exit": code}) + "\n")
    return code


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        args._family_given = any(a == "--family" or a.startswith("--family=") for a in argv)
        COMMANDS[args.command](args)
    except UsageError as exc:
        return _error("usage", str(exc), EXIT_USAGE)
    except (QuadratureError, ArithmeticError, FloatingPointError, audit.SeparationError) as exc:
        return _error("numeric", str(exc), EXIT_NUMERIC)
    except (ValueError, OSError) as exc:
        return _error("validation", str(exc), EXIT_USAGE)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
