"""
Command line entry point.

    supportnetworks run --config experiment.ini [--out DIR] [--seed-override S] [--stride K]
    supportnetworks sweep --config sweep.ini [--out DIR] [--workers W]
    supportnetworks verify SUITE [--out report.json]
    supportnetworks plot KIND file.csv [file.csv ...] --out figure.svg

Exit status: 0 on success, 1 when training diverged, sweep cells failed or a
verification check failed, 2 on invalid input (config, file or schema errors).
"""
import argparse
import json
import logging
import sys

from .optim import DivergenceError
from .plotting import KINDS, plot
from .runner import run, sweep
from .suites import SUITES, reportToDict, verify

loggingLevels = {0: logging.ERROR, 1: logging.WARNING, 2: logging.INFO, 3: logging.DEBUG}

logger = logging.getLogger(__name__)


def buildParser():
    parser = argparse.ArgumentParser(prog="supportnetworks",
                                     description="Training-dynamics experiments on linear, diagonal and ReLU networks")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more output (repeatable)")
    commands = parser.add_subparsers(dest="command")
    commands.required = True

    runParser = commands.add_parser("run", help="run one experiment config")
    runParser.add_argument("--config", required=True, help="the experiment file")
    runParser.add_argument("--out", help="output directory (default: from the config)")
    runParser.add_argument("--seed-override", type=int, help="replace optimizer.seed")
    runParser.add_argument("--stride", type=int, help="record every STRIDE steps")

    sweepParser = commands.add_parser("sweep", help="run a sweep over a base experiment")
    sweepParser.add_argument("--config", required=True, help="the sweep file")
    sweepParser.add_argument("--out", help="root directory of the cell outputs")
    sweepParser.add_argument("--workers", type=int, help="size of the worker pool (default: from the config)")

    verifyParser = commands.add_parser("verify", help="run a verification suite")
    verifyParser.add_argument("suite", choices=list(SUITES) + ["all"], help="the suite to run")
    verifyParser.add_argument("--out", help="also write the JSON report here")

    plotParser = commands.add_parser("plot", help="draw an SVG figure from runner CSVs")
    plotParser.add_argument("kind", choices=KINDS, help="the figure type")
    plotParser.add_argument("csv", nargs="+", help="input CSV files")
    plotParser.add_argument("--out", required=True, help="the SVG file to write")
    plotParser.add_argument("--toy", default="D1", help="toy dataset for landscape-2d contours (default=D1)")
    return parser


def runVerify(suite, out):
    suites = list(SUITES) if suite == "all" else [suite]
    reports = [verify(name) for name in suites]
    documents = [reportToDict(report) for report in reports]
    document = documents[0] if len(documents) == 1 else documents
    text = json.dumps(document, sort_keys=True, indent=2)
    print(text)
    if out:
        with open(out, "w") as flines:
            flines.write(text + "\n")
    return 0 if all(report.passed for report in reports) else 1


def main(argv=None):
    args = buildParser().parse_args(argv)
    verbosity = min(1 + args.verbose, 3)
    logging.basicConfig(level=loggingLevels[verbosity], format="%(message)s")
    try:
        if args.command == "run":
            run(args.config, out=args.out, seedoverride=args.seed_override, stride=args.stride, verbosity=verbosity)
            return 0
        if args.command == "sweep":
            result = sweep(args.config, out=args.out, workers=args.workers, verbosity=verbosity)
            return 1 if result.failed else 0
        if args.command == "verify":
            return runVerify(args.suite, args.out)
        plot(args.csv, args.kind, args.out, toy=args.toy)
        return 0
    except DivergenceError as err:
        logger.error("%s; partial output written", err)
        return 1
    except (IOError, ValueError, IndexError) as err:
        logger.error("error: %s", err)
        return 2


if __name__ == "__main__":
    sys.exit(main())
