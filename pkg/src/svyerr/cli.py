"""Command-line front end: fit, simulate, knn, and gfr subcommands.

Exit codes are a stable contract: 0 success, 2 schema error, 3 numerical
failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys

import numpy as np

from . import families as fam
from . import penalty as pen
from . import rules
from . import simulate as sim
from .design import DesignError, SurveyDesign
from .families import Family, FamilyKind, Loss, LossKind
from .fit import FitError, fit_weighted_glm

__all__ = ["main", "mdrd_gfr", "SchemaError"]

EXIT_OK = 0
EXIT_SCHEMA = 2
EXIT_NUMERIC = 3
EXIT_IO = 4


class SchemaError(ValueError):
    """Input data does not match the declared column schema."""


def mdrd_gfr(
    scr: float,
    age_years: float,
    bun: float,
    salb: float,
    is_black: bool = False,
    is_female: bool = False,
    recalibrate_scr: bool = False,
) -> float:
    """Estimated GFR (mL/min/1.73m^2) from the MDRD serum-marker formula.

    ``recalibrate_scr`` subtracts 0.23 mg/dL from serum creatinine to
    correct the known assay overestimate before evaluation.
    """
    if recalibrate_scr:
        scr = scr - 0.23
        if scr <= 0.0:
            raise ValueError("recalibrated serum creatinine must be positive")
    for name, v in (("scr", scr), ("age_years", age_years), ("bun", bun), ("salb", salb)):
        if v <= 0.0:
            raise ValueError(f"{name} must be positive")
    return (
        170.0
        * scr**-0.999
        * age_years**-0.176
        * bun**-0.170
        * salb**0.318
        * 1.180 ** (1 if is_black else 0)
        * 0.762 ** (1 if is_female else 0)
    )


def is_grade3_ckd(gfr: float) -> bool:
    """Grade-3 chronic kidney disease flag: GFR below 60."""
    return gfr < 60.0


# --------------------------------------------------------------------- #
# CSV ingestion
# --------------------------------------------------------------------- #


def load_dataset(
    path: str,
    outcome: str,
    covariates: list[str],
    weight_col: str | None,
    pi_col: str | None,
    strata_col: str | None = None,
    psu_col: str | None = None,
    hajek_n: float | None = None,
):
    """Read an RFC-4180 CSV into (X, y, design), rejecting rows with gaps."""
    if (weight_col is None) == (pi_col is None):
        raise SchemaError("exactly one of a weight column or a pi column is required")
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None:
                raise SchemaError("CSV file has no header row")
            needed = [outcome, *covariates]
            needed.append(weight_col if weight_col is not None else pi_col)
            for col in (strata_col, psu_col):
                if col is not None:
                    needed.append(col)
            missing = [c for c in needed if c not in reader.fieldnames]
            if missing:
                raise SchemaError(f"missing column(s): {', '.join(missing)}")
            rows = list(reader)
    except OSError as exc:
        raise exc
    kept, dropped = [], 0
    for row in rows:
        if any(row.get(c) in (None, "") for c in needed):
            dropped += 1
        else:
            kept.append(row)
    if dropped:
        print(f"dropped {dropped} row(s) with missing values", file=sys.stderr)
    if not kept:
        raise SchemaError("no complete rows in the input")

    def numeric(col):
        try:
            return np.array([float(r[col]) for r in kept])
        except ValueError as exc:
            raise SchemaError(f"non-numeric value in column {col!r}: {exc}") from exc

    y = numeric(outcome)
    X = np.column_stack([np.ones(len(kept))] + [numeric(c) for c in covariates])
    strata = np.array([r[strata_col] for r in kept]) if strata_col else None
    psu = np.array([r[psu_col] for r in kept]) if psu_col else None
    try:
        if pi_col is not None:
            design = SurveyDesign(
                pi=numeric(pi_col), strata=strata, psu=psu,
                pop_size=hajek_n, hajek=hajek_n is not None,
            )
        else:
            design = SurveyDesign.from_weights(
                numeric(weight_col), strata=strata, psu=psu,
                pop_size=hajek_n, hajek=hajek_n is not None,
            )
    except DesignError as exc:
        raise SchemaError(str(exc)) from exc
    return X, y, design


def _fmt(v):
    return f"{v:.17g}" if isinstance(v, float) else v


def write_csv(path: str, fieldnames: list[str], rows: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(row[k]) for k in fieldnames})


def write_json(path: str, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


# --------------------------------------------------------------------- #
# Subcommands
# --------------------------------------------------------------------- #


def _family_from_name(name: str) -> Family:
    return Family(FamilyKind(name))


def cmd_fit(args) -> int:
    X, y, design = load_dataset(
        args.data, args.outcome, args.covariates,
        args.weights, args.pi, args.strata, args.psu, args.hajek,
    )
    family = _family_from_name(args.family)
    if family.kind is FamilyKind.BERNOULLI and not np.all(np.isin(y, (0.0, 1.0))):
        raise SchemaError("bernoulli outcome column must be 0/1")
    f = fit_weighted_glm(X, y, family, design)
    loss = Loss(LossKind.DEVIANCE, f.family)
    if args.method == "hte-bootstrap":
        rule = pen.glm_rule(family, loss)
        report = pen.hte_bootstrap(
            rule, X, y, design, family_for_sim=family,
            B=args.B, seed=args.seed, loss=loss,
        )
    else:
        report = pen.hte_analytic(f, loss=loss)
    from .fit import sandwich_variance

    sw = sandwich_variance(f)
    out = {
        "theta": list(f.theta),
        "v_diagonal": list(np.diag(sw.V)),
        "weighted_deviance": f.deviance_weighted,
        **report.to_dict(),
    }
    if args.method == "hte-bootstrap" and args.B:
        # re-run the parametric bootstrap under independent seeds for an
        # empirical interval on the penalty estimate
        rule = pen.glm_rule(family, loss)
        phats = []
        for s in range(args.interval_runs):
            rep = pen.hte_bootstrap(
                rule, X, y, design, family_for_sim=family,
                B=args.B, seed=args.seed + 1 + s, loss=loss,
            )
            phats.append(len(y) * rep.omega_hat / 2.0)
        phats = np.sort(phats)
        out["p_hat_bootstrap"] = {
            "median": float(np.median(phats)),
            "q025": float(np.quantile(phats, 0.025)),
            "q975": float(np.quantile(phats, 0.975)),
        }
    if args.out_json:
        write_json(args.out_json, out)
    print(json.dumps(out, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_simulate(args) -> int:
    spec = sim.ScenarioSpec(id=args.scenario, pop_size=args.pop, sample_size=args.n)
    summary = sim.run_optimism_experiment(spec, reps=args.reps, seed=args.seed)
    agg = summary.aggregates()
    if args.out_csv:
        write_csv(args.out_csv, list(sim.RECORD_FIELDS), summary.records)
    if args.out_json:
        write_json(args.out_json, agg)
    o, w = agg["optimism"], agg["omega_hat"]
    print(
        f"{spec.id}: optimism mean {o['mean']:.4f} {{{o['median']:.4f}}} "
        f"({o['q025']:.4f}, {o['q975']:.4f}); "
        f"omega_hat mean {w['mean']:.4f} {{{w['median']:.4f}}} "
        f"({w['q025']:.4f}, {w['q975']:.4f})"
    )
    return EXIT_OK


def cmd_knn(args) -> int:
    X, y, design = load_dataset(
        args.data, args.outcome, args.covariates,
        args.weights, args.pi, args.strata, args.psu, args.hajek,
    )
    if not np.all(np.isin(y, (0.0, 1.0))):
        raise SchemaError("kNN requires a binary 0/1 outcome column")
    Xc = X[:, 1:]  # no intercept column for a distance-based rule
    reports = rules.knn_error_report(Xc, y, design, args.k, B=args.B, seed=args.seed)
    rows = [
        {
            "k": k,
            "err": r.err_weighted,
            "omega_half": r.omega_hat / 2.0,
            "err_hat": r.err_hat,
        }
        for k, r in reports
    ]
    if args.out_csv:
        write_csv(args.out_csv, ["k", "err", "omega_half", "err_hat"], rows)
    print(f"{'k':>6} {'err':>10} {'omega/2':>10} {'err_hat':>10}")
    for row in rows:
        print(f"{row['k']:>6} {row['err']:>10.4f} {row['omega_half']:>10.4f} {row['err_hat']:>10.4f}")
    return EXIT_OK


def cmd_gfr(args) -> int:
    gfr = mdrd_gfr(
        args.scr, args.age, args.bun, args.salb,
        is_black=args.black, is_female=args.female,
        recalibrate_scr=args.recalibrate,
    )
    print(json.dumps({"gfr": gfr, "grade3_ckd": is_grade3_ckd(gfr)}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="svyerr",
        description="Prediction error estimation for complex survey samples",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_data_args(p):
        p.add_argument("--data", required=True)
        p.add_argument("--outcome", required=True)
        p.add_argument("--covariates", nargs="+", required=True)
        p.add_argument("--weights")
        p.add_argument("--pi")
        p.add_argument("--strata")
        p.add_argument("--psu")
        p.add_argument("--hajek", type=float, default=None,
                       help="rescale weights to sum to this population size")

    p_fit = sub.add_parser("fit", help="weighted GLM with dAIC/HTE report")
    add_data_args(p_fit)
    p_fit.add_argument("--family", choices=[k.value for k in FamilyKind], required=True)
    p_fit.add_argument("--method", choices=["daic", "hte-analytic", "hte-bootstrap"],
                       default="hte-analytic")
    p_fit.add_argument("--B", type=int, default=200)
    p_fit.add_argument("--interval-runs", type=int, default=100)
    p_fit.add_argument("--seed", type=int, required=True)
    p_fit.add_argument("--out-json")
    p_fit.set_defaults(func=cmd_fit)

    p_sim = sub.add_parser("simulate", help="optimism Monte Carlo experiment")
    p_sim.add_argument("--scenario", choices=list(sim.SCENARIO_IDS), required=True)
    p_sim.add_argument("--pop", type=int, default=100_000)
    p_sim.add_argument("--n", type=int, default=1_000)
    p_sim.add_argument("--reps", type=int, default=1_000)
    p_sim.add_argument("--seed", type=int, required=True)
    p_sim.add_argument("--out-csv")
    p_sim.add_argument("--out-json")
    p_sim.set_defaults(func=cmd_simulate)

    p_knn = sub.add_parser("knn", help="kNN error table under 0-1 loss")
    add_data_args(p_knn)
    p_knn.add_argument("--k", type=int, nargs="+", default=[10, 20, 30, 40])
    p_knn.add_argument("--B", type=int, default=200)
    p_knn.add_argument("--seed", type=int, required=True)
    p_knn.add_argument("--out-csv")
    p_knn.set_defaults(func=cmd_knn)

    p_gfr = sub.add_parser("gfr", help="MDRD estimated GFR")
    p_gfr.add_argument("--scr", type=float, required=True)
    p_gfr.add_argument("--age", type=float, required=True)
    p_gfr.add_argument("--bun", type=float, required=True)
    p_gfr.add_argument("--salb", type=float, required=True)
    p_gfr.add_argument("--black", action="store_true")
    p_gfr.add_argument("--female", action="store_true")
    p_gfr.add_argument("--recalibrate", action="store_true")
    p_gfr.set_defaults(func=cmd_gfr)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SchemaError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except (FitError, DesignError, fam.DomainError, ValueError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
