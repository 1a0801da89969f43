"""Command-line interface: draw samples, predict regions, run simulations."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import conformal, simharness
from .designs import DesignKind, DesignSpec, DrawnSample, design_split, draw, test_weights
from .population import CATEGORICAL, ColumnSchema, load_population
from .quantiles import INFINITY, NEG_INFINITY
from .scores import fit_multinomial_logit, fit_ols

_DESIGN_NAMES = {
    "srs-wr": DesignKind.SRSWR,
    "srs-wor": DesignKind.SRSWOR,
    "pps-wr": DesignKind.PPSWR,
    "pps-wor": DesignKind.PPSWOR,
    "stratified": DesignKind.STRATIFIED,
    "cluster": DesignKind.CLUSTER,
}


def _add_schema_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--id-col", default=None)
    parser.add_argument("--y-col", required=True)
    parser.add_argument("--x-cols", default="", help="comma-separated covariate columns")
    parser.add_argument("--stratum-col", default=None)
    parser.add_argument("--cluster-col", default=None)
    parser.add_argument("--size-col", default=None)
    parser.add_argument(
        "--response-kind", choices=["real", "categorical"], default="real"
    )


def _schema_from_args(args) -> ColumnSchema:
    x = tuple(c for c in args.x_cols.split(",") if c)
    return ColumnSchema(
        y=args.y_col,
        x=x,
        id=args.id_col,
        stratum=args.stratum_col,
        cluster=args.cluster_col,
        size_measure=args.size_col,
        response_kind=args.response_kind,
    )


def _parse_allocation(text: str) -> dict[str, int]:
    out = {}
    for part in text.split(","):
        label, _, count = part.partition("=")
        if not count:
            raise SystemExit(f"bad allocation entry {part!r}; expected label=count")
        out[label] = int(count)
    return out


def _design_from_args(args) -> DesignSpec:
    kind = _DESIGN_NAMES[args.design]
    if kind is DesignKind.STRATIFIED:
        if not args.alloc:
            raise SystemExit("stratified designs need --alloc label=count,...")
        n = _parse_allocation(args.alloc)
    else:
        if args.n is None:
            raise SystemExit("--n is required for this design")
        n = args.n
    return DesignSpec(kind=kind, n=n, size_col=args.size_col, seed=args.seed)


def cmd_draw(args) -> int:
    pop, dropped = load_population(args.population, _schema_from_args(args))
    if dropped:
        print(f"dropped {dropped} row(s) with missing mapped values", file=sys.stderr)
    sample = draw(pop, _design_from_args(args))
    writer = csv.writer(_open_out(args.out), lineterminator="\n")
    writer.writerow(["unit_id", "base_weight", "stratum", "cluster"])
    for i in range(sample.n):
        writer.writerow(
            [
                int(sample.unit_ids[i]),
                repr(float(sample.base_weight[i])),
                "" if sample.stratum_of is None else sample.stratum_of[i],
                "" if sample.cluster_of is None else sample.cluster_of[i],
            ]
        )
    return 0


def _open_out(path):
    if path in (None, "-"):
        return sys.stdout
    return open(path, "w", newline="", encoding="utf-8")


def _region_row(test_id, region) -> list[str]:
    if region.kind == conformal.SET:
        labels = " ".join(str(c) for c in sorted(region.labels))
        return [str(test_id), "", "", labels, repr(region.level), region.method, str(region.vacuous).lower()]

    def bound(b):
        if b is INFINITY:
            return "inf"
        if b is NEG_INFINITY:
            return "-inf"
        return repr(float(b))

    return [
        str(test_id),
        bound(region.lower),
        bound(region.upper),
        "",
        repr(region.level),
        region.method,
        str(region.vacuous).lower(),
    ]


def _read_test_rows(path, x_cols, weight_col=None, stratum_col=None):
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for i, row in enumerate(csv.DictReader(fh), start=1):
            x = np.array([float(row[c]) for c in x_cols])
            w = float(row[weight_col]) if weight_col and row.get(weight_col) else None
            stratum = row.get(stratum_col) if stratum_col else None
            rows.append((i, x, w, stratum))
    return rows


def cmd_predict(args) -> int:
    schema = _schema_from_args(args)
    pop, dropped = load_population(args.data, schema)
    if dropped:
        print(f"dropped {dropped} row(s) with missing mapped values", file=sys.stderr)
    rng = np.random.default_rng(args.seed)
    design = _design_from_args(args) if args.design else DesignSpec(kind=DesignKind.SRSWOR, n=pop.n_units, seed=args.seed)
    # The whole input file is treated as the realized sample.
    if args.weight_col:
        weights = np.array([float(v) for v in _column(args.data, args.weight_col)])
    elif design.kind in (DesignKind.PPSWR, DesignKind.PPSWOR):
        # Derive base weights from the declared design; any test weights
        # supplied alongside must sit on the same scale.
        weights = test_weights(pop, design)
    else:
        weights = np.full(pop.n_units, 1.0)
    sample = DrawnSample(
        unit_ids=pop.ids.copy(),
        base_weight=weights,
        design=design,
        stratum_of=None if pop.stratum is None else pop.stratum.copy(),
        cluster_of=None if pop.cluster is None else pop.cluster.copy(),
    )

    out = csv.writer(_open_out(args.out), lineterminator="\n")
    out.writerow(["id", "lower", "upper", "labels", "level", "method", "vacuous"])

    if args.method in ("cluster-sub1", "cluster-subB", "cluster-double", "cluster-pool"):
        groups = conformal.cluster_values(pop, sample)
        if args.method == "cluster-sub1":
            region = conformal.cluster_subsample_once(groups, args.alpha, rng)
        elif args.method == "cluster-subB":
            region = conformal.cluster_repeated_subsample(groups, args.alpha, args.b_subsamples, rng)
        elif args.method == "cluster-double":
            region = conformal.cluster_double_conformal(groups, args.alpha)
        else:
            region = conformal.cluster_pooled_cdf(groups, args.alpha)
        out.writerow(_region_row(1, region))
        return 0

    if not args.test:
        raise SystemExit(f"--test is required for method {args.method!r}")
    tests = _read_test_rows(args.test, schema.x, args.test_weight_col, args.stratum_col)

    if args.method == "full":
        for test_id, x, w, _ in tests:
            region = conformal.full_conformal_interval(
                pop.x, pop.y, x, args.alpha,
                weights=sample.base_weight if (w or args.test_weight or args.max_weight) else None,
                test_weight=w or args.test_weight or args.max_weight,
            )
            out.writerow(_region_row(test_id, region))
        return 0

    train, calib = design_split(sample, args.frac_train, rng)
    x_tr, y_tr = pop.x_of(train.unit_ids), pop.y_of(train.unit_ids)
    if schema.response_kind == CATEGORICAL:
        model = fit_multinomial_logit(x_tr, y_tr, n_classes=pop.n_classes)
    else:
        model = fit_ols(x_tr, y_tr)

    if args.method == "stratified":
        contexts = {}
        for lab in sorted(set(calib.stratum_of)):
            idx = np.nonzero(calib.stratum_of == lab)[0]
            contexts[lab] = conformal.CalibrationContext(pop, calib.take(idx), model, args.alpha)
        for test_id, x, w, stratum in tests:
            if stratum is None:
                raise SystemExit("stratified prediction needs --stratum-col in the test file")
            region = conformal.stratified_interval(contexts, x, stratum, test_weight=w)
            out.writerow(_region_row(test_id, region))
        return 0

    ctx = conformal.CalibrationContext(pop, calib, model, args.alpha)
    for test_id, x, w, _ in tests:
        weight = w or args.test_weight or args.max_weight
        if schema.response_kind == CATEGORICAL:
            region = conformal.classification_set(ctx, x, test_weight=weight)
        elif args.weight_grid:
            regions = conformal.weight_sensitivity(ctx, x, [float(v) for v in args.weight_grid.split(",")])
            for region in regions:
                out.writerow(_region_row(test_id, region))
            continue
        elif weight is not None:
            region = conformal.split_interval_weighted(ctx, x, weight)
        else:
            region = conformal.split_interval_exchangeable(ctx, x, check_design=False)
        out.writerow(_region_row(test_id, region))
    return 0


def _column(path, name):
    with open(path, newline="", encoding="utf-8") as fh:
        return [row[name] for row in csv.DictReader(fh)]


def cmd_simulate(args) -> int:
    cfg = simharness.ExperimentConfig.from_json(Path(args.config).read_text(encoding="utf-8"))
    report = simharness.run_experiment(cfg)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "config.json").write_text(cfg.to_json(), encoding="utf-8")
    simharness.emit_report(report, "json", outdir / "report.json")
    simharness.emit_report(report, "csv", outdir / "report.csv")
    simharness.emit_report(report, "table", outdir / "report.txt")
    print((outdir / "report.txt").read_text(encoding="utf-8"), end="")
    failures = simharness.check_bands(report)
    for failure in failures:
        print(f"BAND FAILURE: {failure}", file=sys.stderr)
    return 1 if failures else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="svyconform")
    sub = parser.add_subparsers(dest="command", required=True)

    p_draw = sub.add_parser("draw", help="draw one sample from a population file")
    p_draw.add_argument("--population", required=True)
    _add_schema_flags(p_draw)
    p_draw.add_argument("--design", choices=sorted(_DESIGN_NAMES), required=True)
    p_draw.add_argument("--n", type=int, default=None)
    p_draw.add_argument("--alloc", default=None, help="stratified allocation label=count,...")
    p_draw.add_argument("--seed", type=int, default=0)
    p_draw.add_argument("--out", default="-")
    p_draw.set_defaults(func=cmd_draw)

    p_pred = sub.add_parser("predict", help="prediction regions for test rows")
    p_pred.add_argument("--data", required=True, help="sample file with data columns")
    _add_schema_flags(p_pred)
    p_pred.add_argument(
        "--weight-col", default=None,
        help="base-weight column in the data file (inverse selection probabilities)",
    )
    p_pred.add_argument("--design", choices=sorted(_DESIGN_NAMES), default=None)
    p_pred.add_argument("--n", type=int, default=None)
    p_pred.add_argument("--alloc", default=None)
    p_pred.add_argument("--alpha", type=float, default=0.2)
    p_pred.add_argument(
        "--method",
        choices=["split", "full", "stratified", "cluster-sub1", "cluster-subB", "cluster-double", "cluster-pool"],
        default="split",
    )
    p_pred.add_argument("--test", default=None, help="CSV of test rows (covariate columns)")
    p_pred.add_argument("--test-weight-col", default=None)
    p_pred.add_argument("--test-weight", type=float, default=None)
    p_pred.add_argument("--max-weight", type=float, default=None, help="conservative weight for every test case")
    p_pred.add_argument("--weight-grid", default=None, help="comma-separated weights for sensitivity output")
    p_pred.add_argument("--frac-train", type=float, default=0.5)
    p_pred.add_argument("--b-subsamples", type=int, default=20)
    p_pred.add_argument("--seed", type=int, default=0)
    p_pred.add_argument("--out", default="-")
    p_pred.set_defaults(func=cmd_predict)

    p_sim = sub.add_parser("simulate", help="run a Monte Carlo experiment config")
    p_sim.add_argument("--config", required=True)
    p_sim.add_argument("--out", required=True, help="results directory")
    p_sim.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
