"""Command-line interface: ``prodspill <command> ...``."""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np
import pandas as pd

from .alternatives import (VARIANTS, AltRegressionError, alt1_regression, alt2_regression,
                           alt_variant, proxy_exogenous_markov)
from .dgp import DgpConfig, simulate_panel, simulate_survey_panel
from .estimation.pipeline import EstimateOptions, estimate
from .estimation.sieve import SieveSpec
from .inference import (BootstrapFailure, bca_intervals, jackknife_acceleration,
                        jackknife_estimates, wild_block_bootstrap)
from .io import effects_path, load_fit, save_fit
from .montecarlo import ExperimentAborted, ExperimentSpec, run_experiment
from .panel import PanelValidationError, load_panel, load_prices, write_panel, write_prices
from .peers import PeerGrouping, build_weights

log = logging.getLogger("prodspill")

# Named fixed-effect sets for survey-style data (province, city, sub-industry columns).
FE_PRESETS = {
    "F1": ("region",),
    "F2": ("city",),
    "F3": ("region*subindustry",),
    "F4": ("city", "subindustry"),
}
# Named peer groupings: (spatial column, industry column or None).
GROUPING_PRESETS = {
    "P1": ("region", "subindustry"),
    "P2": ("city", None),
    "P3": ("city", "subindustry"),
}
SCHEME_ALIASES = {"W1": "size"}
SPEC_ALIASES = {"cd": "cobb_douglas", "cobb_douglas": "cobb_douglas", "translog": "translog"}


def prices_path(panel_path) -> Path:
    p = Path(panel_path)
    return p.with_name(p.stem + ".prices.csv")


def truth_path(panel_path) -> Path:
    p = Path(panel_path)
    return p.with_name(p.stem + ".truth.csv")


def _read_panel(args):
    prices = None
    src = args.prices or (prices_path(args.panel) if prices_path(args.panel).exists() else None)
    if src is not None:
        prices = load_prices(src)
        log.info("prices from %s", src)
    return load_panel(args.panel, prices=prices)


def grouping_from_args(args) -> PeerGrouping:
    if getattr(args, "peer_variant", None):
        spatial, industry = GROUPING_PRESETS[args.peer_variant]
        return PeerGrouping(spatial, industry)
    return PeerGrouping.from_config(args.peer_spatial, args.peer_industry)


def fixed_effects_from_arg(value: str, grouping: PeerGrouping) -> tuple:
    """Translate ``--fe`` into SieveSpec.fixed_effects.

    ``group`` is the peer-group label (spatial x industry of the grouping),
    ``group_industry`` crosses the spatial label with the industry column
    (the grouping's own industry column if it has one). F1 to F4 are the
    presets above; anything else is a comma-separated list of terms.
    """
    value = value.strip()
    if value in ("", "none"):
        return ()
    if value == "group":
        return ("*".join(grouping.columns()),) if grouping.columns() else ()
    if value == "group_industry":
        return ("*".join(c for c in (grouping.spatial, grouping.industry or "industry") if c),)
    if value.upper() in FE_PRESETS:
        return FE_PRESETS[value.upper()]
    return tuple(t.strip() for t in value.split(",") if t.strip())


def options_from_args(args) -> EstimateOptions:
    grouping = grouping_from_args(args)
    sieve = SieveSpec(degree=args.degree,
                      fixed_effects=fixed_effects_from_arg(args.fe, grouping),
                      time_effects=args.time_effects)
    scheme = SCHEME_ALIASES.get(args.peer_scheme, args.peer_scheme)
    return EstimateOptions(spec=SPEC_ALIASES[args.spec], sieve=sieve, grouping=grouping,
                           scheme=scheme, include_G=not args.no_G,
                           renormalize=not args.drop_missing_peers, n_starts=args.n_starts)


def parse_variants(text: str) -> list[str]:
    """``"1,2,I..XI"`` -> ``["1", "2", "I", ..., "XI"]``."""
    order = list(VARIANTS)
    out = []
    for tok in (t.strip().upper() for t in text.split(",") if t.strip()):
        if ".." in tok:
            a, b = tok.split("..")
            if a not in order or b not in order:
                raise ValueError(f"bad variant range {tok!r}")
            out += order[order.index(a):order.index(b) + 1]
        elif tok in ("1", "2", "ALT1", "ALT2"):
            out.append(tok[-1])
        elif tok in order:
            out.append(tok)
        else:
            raise ValueError(f"unknown variant {tok!r}")
    return out


def r_name(v: str) -> str:
    return {"1": "ALT1", "2": "ALT2"}.get(v, v)


# -- commands -----------------------------------------------------------------------

def cmd_simulate(args) -> int:
    if args.survey:
        panel = simulate_survey_panel(n=args.n or 500, seed=args.seed or 0)
        write_panel(panel, args.out)
        write_prices(panel.prices, prices_path(args.out))
        print(f"wrote {len(panel)} rows ({panel.n_firms} firms) to {args.out}")
        return 0
    cfg = DgpConfig.from_json(args.config) if args.config else DgpConfig()
    over = {k: v for k, v in (("n", args.n), ("seed", args.seed)) if v is not None}
    if over:
        cfg = DgpConfig.from_dict({**cfg.to_dict(), **over})
    panel, truth = simulate_panel(cfg, rep=args.rep)
    out = Path(args.out)
    write_panel(panel, out)
    write_prices(panel.prices, prices_path(out))
    frame = truth.frame()
    frame.insert(0, "firm_id", panel.firm_id)
    frame.insert(1, "year", panel.year)
    frame["eta"] = truth.eta
    frame.to_csv(truth_path(out), index=False, float_format="%.17g")
    print(f"wrote {len(panel)} rows ({panel.n_firms} firms) to {out}; "
          f"prices and true effects alongside")
    return 0


def cmd_estimate(args) -> int:
    panel = _read_panel(args)
    options = options_from_args(args)
    t0 = time.perf_counter()
    result = estimate(panel, options)
    path = save_fit(result, args.out, panel)
    fit = result.fit
    print(f"{options.spec}: n_obs={fit.n_obs} sse={fit.sse:.6g} converged={fit.converged} "
          f"({time.perf_counter() - t0:.1f}s)")
    for k, v in fit.scalars().items():
        print(f"  {k:8s} {v: .6f}")
    for k, v in result.effects.means().items():
        print(f"  mean {k:4s} {v: .6f}")
    print(f"wrote {path} and {effects_path(path).name}")
    return 0


def cmd_alt_compare(args) -> int:
    panel = _read_panel(args)
    grouping = grouping_from_args(args)
    first = proxy_exogenous_markov(panel, EstimateOptions(grouping=grouping,
                                                          n_starts=args.n_starts))
    W = build_weights(panel, grouping, "baseline")
    rows = []
    for v in parse_variants(args.variants):
        try:
            if v == "1":
                r = alt1_regression(first.omega, panel, W)
            elif v == "2":
                r = alt2_regression(first.omega, panel, W)
            else:
                r = alt_variant(first.omega, panel, W, v)
        except AltRegressionError as exc:
            log.warning("variant %s skipped: %s", v, exc)
            rows.append({"variant": r_name(v), "error": str(exc)})
            continue
        rec = {"variant": r_name(v), "method": r.method, "n_obs": r.n_obs,
               "first_step_beta_K": first.beta_K, "spillover": r.spillover,
               "coef": r.spillover_coef, "se": r.se[r.names.index(r.spillover)],
               "z": r.spillover_z, "rejects_5pct": r.rejects(0.95)}
        if r.dl is not None:
            rec.update(dl=r.dl, dl_coef=r.dl_coef, dl_se=r.se[r.names.index(r.dl)],
                       dl_z=r.z_of(r.dl))
        rows.append(rec)
    frame = pd.DataFrame(rows)
    frame.to_csv(args.out, index=False, float_format="%.10g")
    print(frame.to_string(index=False))
    return 0



def cmd_bootstrap(args) -> int:
    panel = _read_panel(args)
    saved, options, _ = load_fit(args.fit)
    result = estimate(panel, options)
    gap = float(np.max(np.abs(result.fit.beta - saved.beta)))
    if gap > 1e-6:
        log.warning("re-estimated parameters differ from %s by %.2g; is this the same panel?",
                    args.fit, gap)
    estimands = tuple(e.strip() for e in args.estimands.split(",") if e.strip())
    a = 1.0 - args.level
    t0 = time.perf_counter()
    boot = wild_block_bootstrap(panel, result, B=args.B, seed=args.seed, estimands=estimands,
                                n_jobs=args.jobs)
    c_hat = {}
    if not args.no_acceleration:
        jk = jackknife_estimates(panel, result, J=args.jackknife_groups, estimands=estimands)
        c_hat = {n: jackknife_acceleration(v) for n, v in jk.items()}
    intervals = bca_intervals(boot, c_hat, a)
    frame = pd.DataFrame([iv.as_dict() for iv in intervals])
    rows = frame["row"]
    has = rows.notna()
    frame.insert(1, "firm_id", pd.Series(dtype=object))
    frame.insert(2, "year", pd.Series(dtype="Int64"))
    idx = rows[has].astype(int).to_numpy()
    frame.loc[has, "firm_id"] = panel.firm_id[idx]
    frame.loc[has, "year"] = panel.year[idx]
    frame = frame.drop(columns="row")
    frame.to_csv(args.out, index=False, float_format="%.10g")
    print(f"B={args.B} ({boot.n_failed} failed) in {time.perf_counter() - t0:.1f}s; "
          f"{len(frame)} intervals at level {args.level}")
    scalars = frame[frame["firm_id"].isna()]
    if len(scalars):
        print(scalars[["estimand", "point", "lo", "hi"]].to_string(index=False))
    print(f"wrote {args.out}")
    return 0


def cmd_montecarlo(args) -> int:
    spec = ExperimentSpec.from_json(args.spec)
    if args.reps is not None:
        spec = ExperimentSpec.from_dict({**spec.to_dict(), "reps": args.reps})
    code = 0
    try:
        report = run_experiment(spec, n_jobs=args.jobs)
    except ExperimentAborted as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        report, code = exc.report, 2
    report.to_json(args.out)
    if args.csv:
        report.to_csv(args.csv)
    if report.rows:
        print(report.frame().to_string(index=False))
    print(f"wrote {args.out} ({report.elapsed:.1f}s)")
    return code


# -- parser ---------------------------------------------------------------------------

def _add_panel_args(p):
    p.add_argument("--panel", required=True, help="panel CSV")
    p.add_argument("--prices", help="price CSV (year,P_Y,P_M); defaults to <panel>.prices.csv "
                                    "when present, else unit prices")


def _add_peer_args(p):
    p.add_argument("--peer-spatial", default="region", help="location column for peers")
    p.add_argument("--peer-industry", default="all",
                   help="industry column for peers, or 'all'")
    p.add_argument("--peer-variant", choices=sorted(GROUPING_PRESETS),
                   help="preset grouping, overrides --peer-spatial/--peer-industry")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="prodspill", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate one panel from a DgpConfig")
    p.add_argument("--config", help="DgpConfig JSON (defaults when omitted)")
    p.add_argument("--out", required=True)
    p.add_argument("--rep", type=int, default=0, help="replication index")
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--survey", action="store_true",
                   help="unbalanced survey-style panel with province, city and sub-industry "
                        "labels instead of the Monte Carlo design")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="two-stage production function estimation")
    _add_panel_args(p)
    _add_peer_args(p)
    p.add_argument("--spec", choices=sorted(SPEC_ALIASES), default="cd")
    p.add_argument("--degree", type=int, default=2)
    p.add_argument("--peer-scheme", default="baseline",
                   choices=["baseline", "size", "asymmetric", "fdi_split", "none", "W1"])
    p.add_argument("--fe", default="none",
                   help="none | group | group_industry | F1..F4 | comma list of terms, "
                        "'a*b' for an intersection")
    p.add_argument("--time-effects", action="store_true", help="add year dummies")
    p.add_argument("--drop-missing-peers", action="store_true",
                   help="drop observations with a peer lacking t-1 data instead of "
                        "renormalizing")
    p.add_argument("--no-G", action="store_true", help="exclude G from the process")
    p.add_argument("--n-starts", type=int, default=16)
    p.add_argument("--out", required=True, help="fit.json")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("alt-compare", help="exogenous-Markov comparison regressions")
    _add_panel_args(p)
    _add_peer_args(p)
    p.add_argument("--variants", default="1,2,I..XI")
    p.add_argument("--n-starts", type=int, default=16)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_alt_compare)

    p = sub.add_parser("bootstrap", help="wild block bootstrap BCa intervals")
    _add_panel_args(p)
    p.add_argument("--fit", required=True, help="fit.json written by estimate")
    p.add_argument("--B", type=int, default=400)
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--estimands", default="SP,DL,TIL,beta_K")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--jackknife-groups", type=int)
    p.add_argument("--no-acceleration", action="store_true", help="skip the jackknife")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bootstrap)

    p = sub.add_parser("montecarlo", help="run a Monte Carlo experiment")
    p.add_argument("--spec", required=True, help="experiment JSON")
    p.add_argument("--out", required=True, help="report.json")
    p.add_argument("--csv")
    p.add_argument("--reps", type=int)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_montecarlo)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (PanelValidationError, ValueError, BootstrapFailure, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
