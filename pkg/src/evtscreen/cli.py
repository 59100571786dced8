"""Command line entry point: ``evtscreen <command> [options]``.

Exit status: 0 success, 2 data error, 3 estimation error, 4 config error.
"""

from __future__ import annotations

import argparse
import sys
import urllib.request
from pathlib import Path

from .errors import ConfigError, DataError, DomainError, EstimationError
from .pipeline import (
    IngestPolicy,
    RunConfig,
    cmd_extrapolate,
    cmd_fit,
    cmd_screen,
    cmd_simulate,
    cmd_tune,
    ingest_csv,
    read_curve_csv,
)

__all__ = ["main", "build_parser", "DEMO_DATA_URL", "DEMO_NAMES_URL", "DEMO_RESPONSE"]

DEMO_DATA_URL = ("https://archive.ics.uci.edu/ml/machine-learning-databases/00211/"
                 "CommViolPredUnnormalizedData.txt")
DEMO_NAMES_URL = "https://archive.ics.uci.edu/ml/datasets/Communities+and+Crime+Unnormalized"
DEMO_RESPONSE = "robbbPerPop"

# Identifier columns and the eighteen crime outcomes; everything else in the
# unnormalized file is a social covariate.
DEMO_NON_PREDICTIVE = ("communityname", "state", "countyCode", "communityCode")
DEMO_OUTCOMES = (
    "murders", "murdPerPop", "rapes", "rapesPerPop", "robberies", "robbbPerPop",
    "assaults", "assaultPerPop", "burglaries", "burglPerPop", "larcenies", "larcPerPop",
    "autoTheft", "autoTheftPerPop", "arsons", "arsonsPerPop", "ViolentCrimesPerPop",
    "nonViolPerPop",
)
# Known social covariate labels of the unnormalized file, in file order.
# The file has no header; labels are only attached when the number of
# middle fields matches this list, otherwise generic names are used.
DEMO_COVARIATES = (
    "population", "householdsize", "racepctblack", "racePctWhite", "racePctAsian",
    "racePctHisp", "agePct12t21", "agePct12t29", "agePct16t24", "agePct65up", "numbUrban",
    "pctUrban", "medIncome", "pctWWage", "pctWFarmSelf", "pctWInvInc", "pctWSocSec",
    "pctWPubAsst", "pctWRetire", "medFamInc", "perCapInc", "whitePerCap", "blackPerCap",
    "indianPerCap", "AsianPerCap", "OtherPerCap", "HispPerCap", "NumUnderPov",
    "PctPopUnderPov", "PctLess9thGrade", "PctNotHSGrad", "PctBSorMore", "PctUnemployed",
    "PctEmploy", "PctEmplManu", "PctEmplProfServ", "PctOccupManu", "PctOccupMgmtProf",
    "MalePctDivorce", "MalePctNevMarr", "FemalePctDiv", "TotalPctDiv", "PersPerFam",
    "PctFam2Par", "PctKids2Par", "PctYoungKids2Par", "PctTeen2Par", "PctWorkMomYoungKids",
    "PctWorkMom", "NumKidsBornNeverMar", "PctKidsBornNeverMar", "NumImmig",
    "PctImmigRecent", "PctImmigRec5", "PctImmigRec8", "PctImmigRec10", "PctRecentImmig",
    "PctRecImmig5", "PctRecImmig8", "PctRecImmig10", "PctSpeakEnglOnly",
    "PctNotSpeakEnglWell", "PctLargHouseFam", "PctLargHouseOccup", "PersPerOccupHous",
    "PersPerOwnOccHous", "PersPerRentOccHous", "PctPersOwnOccup", "PctPersDenseHous",
    "PctHousLess3BR", "MedNumBR", "HousVacant", "PctHousOccup", "PctHousOwnOcc",
    "PctVacantBoarded", "PctVacMore6Mos", "MedYrHousBuilt", "PctHousNoPhone",
    "PctWOFullPlumb", "OwnOccLowQuart", "OwnOccMedVal", "OwnOccHiQuart", "OwnOccQrange",
    "RentLowQ", "RentMedian", "RentHighQ", "RentQrange", "MedRent", "MedRentPctHousInc",
    "MedOwnCostPctInc", "MedOwnCostPctIncNoMtg", "NumInShelters", "NumStreet",
    "PctForeignBorn", "PctBornSameState", "PctSameHouse85", "PctSameCity85",
    "PctSameState85", "LemasSwornFT", "LemasSwFTPerPop", "LemasSwFTFieldOps",
    "LemasSwFTFieldPerPop", "LemasTotalReq", "LemasTotReqPerPop", "PolicReqPerOffic",
    "PolicPerPop", "RacialMatchCommPol", "PctPolicWhite", "PctPolicBlack", "PctPolicHisp",
    "PctPolicAsian", "PctPolicMinor", "OfficAssgnDrugUnits", "NumKindsDrugsSeiz",
    "PolicAveOTWorked", "LandArea", "PopDens", "PctUsePubTrans", "PolicCars",
    "PolicOperBudg", "LemasPctPolicOnPatr", "LemasGangUnitDeploy", "LemasPctOfficDrugUn",
    "PolicBudgPerPop",
)


def _num_or_auto(cast):
    def parse(text):
        if text == "auto":
            return "auto"
        try:
            return cast(text)
        except ValueError as exc:
            raise argparse.ArgumentTypeError(f"expected a number or 'auto', got {text!r}") from exc
    return parse


def _add_common(p):
    p.add_argument("--k", type=_num_or_auto(int), default="auto", help="screening order k or 'auto'")
    p.add_argument("--h", type=_num_or_auto(float), default="auto", help="screening bandwidth or 'auto'")
    p.add_argument("--kernel", choices=("epanechnikov", "gaussian"), default="epanechnikov")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--jobs", type=int, default=1, help="worker threads/processes")
    p.add_argument("--svg", action="store_true", help="also write SVG charts")


def _add_data(p):
    p.add_argument("data", help="CSV file with a header row")
    p.add_argument("--response", required=True, help="response column name")
    p.add_argument("--max-missing", type=int, default=200,
                   help="drop covariates with more missing cells than this")
    p.add_argument("--exclude", default="", help="comma-separated columns to ignore")
    p.add_argument("--drop-nonpositive", action="store_true",
                   help="drop rows with a nonpositive response instead of failing")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="evtscreen", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("tune", help="choose the screening k and h")
    _add_data(p)
    _add_common(p)

    p = sub.add_parser("screen", help="marginal utilities and ranking")
    _add_data(p)
    _add_common(p)

    for name, helptext in (("fit", "model-size selection and index GP fit"),
                           ("extrapolate", "fit, then extrapolated conditional quantiles")):
        p = sub.add_parser(name, help=helptext)
        _add_data(p)
        _add_common(p)
        p.add_argument("--qcap", type=int, default=50, help="largest model size searched")
        p.add_argument("--gp-k", type=_num_or_auto(int), default="auto")
        p.add_argument("--gp-h", type=_num_or_auto(float), default="auto")
        p.add_argument("--size", default="jstar", help="'jstar', 'jdstar' or an integer")
        p.add_argument("--grid", type=int, default=200, help="number of index grid points")
        p.add_argument("--tau", type=float, default=None, help="exceedance probability (default 11/n)")

    p = sub.add_parser("extrapolate-curve", help="extrapolate from a saved curve.csv")
    p.add_argument("curve", help="curve.csv written by 'fit'")
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--out", default=".")
    p.add_argument("--svg", action="store_true")

    p = sub.add_parser("simulate", help="run a simulation spec file")
    p.add_argument("spec", help="JSON or key=value simulation spec")
    p.add_argument("--out", default=".")
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("fetch-demo-data", help="download the Communities and Crime data")
    p.add_argument("--out", default="crime.csv")
    p.add_argument("--url", default=DEMO_DATA_URL)
    return parser


def _config(args) -> RunConfig:
    return RunConfig(k=args.k, h=args.h, kernel=args.kernel, q_cap=getattr(args, "qcap", 50),
                     tau=getattr(args, "tau", None), seed=args.seed, out=args.out,
                     gp_k=getattr(args, "gp_k", "auto"), gp_h=getattr(args, "gp_h", "auto"),
                     size=getattr(args, "size", "jstar"), grid_points=getattr(args, "grid", 200),
                     n_jobs=args.jobs, svg=args.svg)


def _load(args):
    exclude = tuple(c.strip() for c in args.exclude.split(",") if c.strip())
    policy = IngestPolicy(args.response, args.max_missing,
                          drop_nonpositive_response=args.drop_nonpositive, exclude_columns=exclude)
    data, report = ingest_csv(args.data, policy)
    print(report.summary())
    return data


def fetch_demo_data(out: str, url: str = DEMO_DATA_URL) -> Path:
    """Download the unnormalized crime file and write it with a header row,
    keeping the response and the social covariates only."""
    try:
        with urllib.request.urlopen(url, timeout=60) as resp:
            text = resp.read().decode("utf-8", errors="replace")
    except OSError as exc:
        raise DataError(f"download failed: {exc}") from exc
    rows = [line.split(",") for line in text.splitlines() if line.strip()]
    width = len(rows[0]) if rows else 0
    n_lead, n_tail = len(DEMO_NON_PREDICTIVE), len(DEMO_OUTCOMES)
    if width <= n_lead + n_tail or any(len(r) != width for r in rows):
        raise DataError(f"unexpected layout: {width} fields in the first row")
    n_cov = width - n_lead - n_tail
    covs = DEMO_COVARIATES if n_cov == len(DEMO_COVARIATES) else tuple(
        f"social{i + 1}" for i in range(n_cov))
    columns = DEMO_NON_PREDICTIVE + covs + DEMO_OUTCOMES
    keep = [i for i, c in enumerate(columns) if c in covs or c == DEMO_RESPONSE]
    path = Path(out)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write(",".join(columns[i] for i in keep) + "\n")
        for r in rows:
            fh.write(",".join(r[i].strip() for i in keep) + "\n")
    return path


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cmd = args.command
    if cmd == "fetch-demo-data":
        print(f"wrote {fetch_demo_data(args.out, args.url)}")
        return 0
    if cmd == "simulate":
        cfg = RunConfig(out=args.out, n_jobs=args.jobs)
        report, records = cmd_simulate(args.spec, cfg,
                                       progress=lambda r: print(f"rep {r.rep_index}: S={r.S} "
                                                                f"j*={r.j_star} j**={r.j_double_star}"
                                                                + (f" [{r.error}]" if r.error else ""),
                                                                flush=True))
        for key, val in report.table12_row().items():
            print(f"{key}: {val}")
        for row in report.table3_rows():
            print(row)
        return 0
    if cmd == "extrapolate-curve":
        cfg = RunConfig(out=args.out, svg=args.svg)
        cmd_extrapolate(read_curve_csv(args.curve), args.tau, cfg)
        return 0
    data = _load(args)
    cfg = _config(args)
    if cmd == "tune":
        k, h, _ = cmd_tune(data, cfg)
        print(f"k={k} h={h}")
    elif cmd == "screen":
        res = cmd_screen(data, cfg)
        print(f"k={res.k} h={res.h} gamma0={res.gamma0.gamma_hat:.4f}")
        for rank, c in enumerate(res.ranking[:10], 1):
            print(f"{rank:3d} {data.names[c]} {res.utilities[c]:.6g}")
    else:
        fit = cmd_fit(data, cfg)
        print(f"j*={fit.j_star} j**={fit.j_double_star} size={fit.size} k={fit.k} h={fit.h}")
        for name, a in zip(fit.names, fit.alpha):
            print(f"  {name}: {a:+.4f}")
        if cmd == "extrapolate":
            cmd_extrapolate(fit.curve, args.tau, cfg)
    return 0


def main(argv=None) -> int:
    try:
        return run(argv)
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except EstimationError as exc:
        print(f"estimation error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, DomainError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
