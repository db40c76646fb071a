"""
Runs experiments and sweeps from config files and writes their outputs.

One experiment directory holds:
    trajectory.csv      step, loss, irrel_norm_L1 ... irrel_norm_LL, grad_norm, then probe columns
    gram_init.csv       Gram matrix of the first layer before training
    gram_final.csv      the same after training
    summary.json        final metrics, phase and support reports, eta_max, config echo, seed
    network_init.json   checkpoints of the initial and final networks
    network_final.json

A sweep writes one such directory per cell and replicate under
cell_<section.key>-<value>_.../seed-<s>/, then aggregate.csv and, when asked
for, scaling_fit.json.
"""
import json
import logging
import math
import os
from multiprocessing import Pool

import numpy as np

from .config import loadExperiment, loadSweep
from .datagen import (RelevanceDecomposition, generateDiagonalTask, generateSynthetic, loadIdx,
                      toyDataset, toyToDataset, twoBatchDataset)
from .insight import (balancednessProbe, chainProbe, denseSupportReport, detectPhases, gramRankProbe,
                      irrelevantNorms, scalingFit, stepsToThreshold, supportLayer)
from .network import NetworkSpec, initialiseNetwork, loadNetwork
from .optim import DivergenceError, Trainer

loggingLevels = {0: logging.ERROR, 1: logging.WARNING, 2: logging.INFO, 3: logging.DEBUG}

CSV_FORMAT = "%.17g"


def buildDataset(section):
    """Build the Dataset described by a [dataset] section."""
    generator = section["generator"]
    if generator == "synthetic":
        return generateSynthetic(section["d"], section["r"], section["m"], target=section["target"],
                                 eps=section["eps"], seed=section["seed"], exact=section["exact"],
                                 unspanned=section["unspanned"])
    if generator == "diagonal":
        return generateDiagonalTask(section["d"], section["r"], section["m"], eps=section["eps"],
                                    seed=section["seed"], coefficient=section["coefficient"])
    if generator == "toy":
        return toyToDataset(toyDataset(section["toy"]), name=section["toy"])
    if generator == "twobatch":
        return twoBatchDataset(section["secondmoment"], section["delta"])
    if not section["images"] or not section["labels"]:
        raise ValueError("the idx generator needs dataset.images and dataset.labels")
    return loadIdx(section["images"], section["labels"], center=section["center"])


def buildNetwork(section, ds):
    """Build the initial Network described by a [network] section for dataset ds."""
    if section["checkpoint"]:
        net = loadNetwork(section["checkpoint"])
        if net.spec.widths[0] != ds.d or net.spec.widths[-1] != ds.k:
            raise ValueError("checkpoint maps {} -> {} but the dataset has d={}, k={}".format(
                net.spec.widths[0], net.spec.widths[-1], ds.d, ds.k))
        return net
    depth = section["depth"]
    if section["topology"] == "diagonal":
        if ds.d != ds.k:
            raise ValueError("diagonal networks need as many label components as inputs")
        widths = [ds.d] * (depth + 1)
    else:
        widths = [ds.d] + [section["width"]] * (depth - 1) + [ds.k]
    spec = NetworkSpec(widths, section["activation"], section["topology"])
    if section["init"] == "explicit":
        raise ValueError("explicit initialisation needs network.checkpoint")
    return initialiseNetwork(spec, section["init"], seed=section["seed"], scale=section["scale"],
                             values=section["values"] or None)


def irrelevantSplit(ds):
    """
    The irrelevant split used for the norm columns.

    Datasets with a ground-truth support use it; IDX datasets count the columns
    that are zero on every image (the unspanned border pixels) as irrelevant.
    """
    if ds.relevant is not None:
        return RelevanceDecomposition.fromGroundTruth(ds)
    moments = np.mean(ds.X**2, axis=0)
    return [j for j in range(ds.d) if moments[j] == 0.0]


def makeProbes(metrics):
    factories = {"chains": chainProbe, "balancedness": balancednessProbe, "gramrank": gramRankProbe}
    return [factories[metric]() for metric in metrics]


def firstLayerGram(net):
    """W_1 W_1^T; left as computed (inf or NaN included) for diverged weights."""
    weight = net.weights[0]
    if net.spec.diagonal:
        weight = np.diag(weight)
    with np.errstate(over="ignore", invalid="ignore"):
        return weight @ weight.T


def trajectoryTable(records, depth):
    """Return (header, rows) of the trajectory CSV."""
    columns = ["step", "loss"] + ["irrel_norm_L{}".format(layer + 1) for layer in range(depth)] + ["grad_norm"]
    extras = []
    for record in records:
        for name in record.extras:
            if name not in extras:
                extras.append(name)
    rows = []
    for record in records:
        row = [record.step, record.loss] + list(record.irrelNorms) + [record.gradNorm]
        row += [record.extras.get(name, math.nan) for name in extras]
        rows.append(row)
    return columns + extras, np.array(rows, dtype=float).reshape(len(rows), len(columns) + len(extras))


def writeCsv(path, header, rows):
    np.savetxt(path, rows, fmt=CSV_FORMAT, delimiter=",", header=",".join(header), comments="")


def writeJson(path, doc):
    with open(path, "w") as flines:
        json.dump(doc, flines, sort_keys=True, indent=2, default=_jsonDefault)
        flines.write("\n")


def _jsonDefault(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError("cannot serialise {!r}".format(value))


def _finite(value):
    """JSON has no inf/nan: report them as None."""
    if value is None or not math.isfinite(value):
        return None
    return float(value)


class Experiment:
    """
    One configured training run and its output directory.

    seedoverride replaces optimizer.seed; stride replaces probes.stride; out
    replaces output.directory.
    """

    def __init__(self, config, out=None, seedoverride=None, stride=None, verbosity=1):
        if seedoverride is not None:
            config = config.override("optimizer", "seed", seedoverride)
        if stride is not None:
            config = config.override("probes", "stride", stride)
        self.config = config
        self.directory = out if out is not None else config.output["directory"]
        self.verbosity = verbosity
        self.summary = None

        # Reset the verbosity
        for handler in logging.root.handlers[:]:
            logging.root.removeHandler(handler)
        self.logger = logging.getLogger(__name__)
        self.logger.setLevel(loggingLevels[verbosity])
        for handler in self.logger.handlers[:]:
            self.logger.removeHandler(handler)
        self.logger.addHandler(logging.StreamHandler())

    def execute(self):
        """
        Train and write every output, returning the summary document.

        On divergence the records made so far are written with diverged = true
        and the DivergenceError is raised again.
        """
        config = self.config
        ds = buildDataset(config.dataset)
        net = buildNetwork(config.network, ds)
        initial = net.copy()
        split = irrelevantSplit(ds)
        cfg = config.optimizerConfig()
        probes = config.probes
        if not net.spec.diagonal and {"chains", "balancedness"} & set(probes["metrics"]):
            raise ValueError("chains and balancedness probes need a diagonal network")

        os.makedirs(self.directory, exist_ok=True)
        self.logger.info("running %s into %s", config.path or "experiment", self.directory)
        trainer = Trainer(net, ds, cfg, probes=makeProbes(probes["metrics"]),
                          normProbe=lambda current: irrelevantNorms(current, split),
                          stride=probes["stride"], verbosity=self.verbosity)
        diverged = None
        try:
            records = trainer.run()
        except DivergenceError as err:
            records = err.records
            diverged = err
        self.summary = self.summarise(records, initial, net, split, trainer.etaMax, ds, diverged is not None)
        self.write(records, initial, net)
        if diverged is not None:
            raise diverged
        return self.summary

    def summarise(self, records, initial, net, split, etaMax, ds, diverged):
        config = self.config
        cfg = config.optimizerConfig()
        probes = config.probes
        initialNorms = irrelevantNorms(initial, split)
        if records:
            last = records[-1]
            final = {"step": last.step, "loss": _finite(last.loss),
                     "irrel_norms": [_finite(value) for value in last.irrelNorms],
                     "grad_norm": _finite(last.gradNorm)}
        else:
            final = {"step": 0, "loss": _finite(initial.loss(ds.X, ds.Y)),
                     "irrel_norms": [_finite(value) for value in initialNorms], "grad_norm": None}

        window = probes["window"] or math.ceil(cfg.epochLength(ds.n) / probes["stride"])
        try:
            phases = detectPhases(records, window, plateauTol=probes["plateautol"])._asdict()
        except ValueError as err:
            self.logger.info("no phase report: %s", err)
            phases = None

        support = None
        if not diverged and net.isFinite():
            if net.spec.diagonal:
                coordinates = ds.irrelevant if ds.irrelevant is not None else split
                report = supportLayer(net, components=coordinates, initial=initial)
                support = {"components": report.components, "layers": report.layers,
                           "zeroed": report.zeroed, "tol": report.tol}
            elif initialNorms[0] > 0:
                support = denseSupportReport(net, initial, split, tol=probes["zerotol"])._asdict()

        reached = None
        if len(initialNorms) and initialNorms[0] > 0:
            reached = stepsToThreshold(records, initialNorms[0], probes["threshold"])
        return {
            "final": final,
            "phases": phases,
            "support": support,
            "eta_max": _finite(etaMax),
            "config": config.toDict(),
            "seed": cfg.seed,
            "diverged": diverged,
            "steps_to_threshold": reached,
        }

    def write(self, records, initial, net):
        formats = self.config.output["formats"]
        directory = self.directory
        if "json" in formats:
            writeJson(os.path.join(directory, "summary.json"), self.summary)
        if "csv" in formats:
            header, rows = trajectoryTable(records, net.spec.depth)
            writeCsv(os.path.join(directory, "trajectory.csv"), header, rows)
            for name, current in (("gram_init.csv", initial), ("gram_final.csv", net)):
                gram = firstLayerGram(current)
                writeCsv(os.path.join(directory, name), ["c{}".format(i) for i in range(gram.shape[1])], gram)
        initial.save(os.path.join(directory, "network_init.json"))
        if net.isFinite():
            net.save(os.path.join(directory, "network_final.json"))


def run(configPath, out=None, seedoverride=None, stride=None, verbosity=1):
    """Run the experiment file at configPath and return its summary."""
    config = loadExperiment(configPath)
    return Experiment(config, out=out, seedoverride=seedoverride, stride=stride, verbosity=verbosity).execute()


def cellLauncher(args):
    """Run one replicate of one sweep cell; never raises, so one failure cannot stop the pool."""
    label, seed, config, directory = args
    try:
        summary = Experiment(config, out=directory, verbosity=0).execute()
    except Exception as err:  # any failure is recorded against the cell
        return {"cell": label, "seed": seed, "completed": False, "error": "{}: {}".format(type(err).__name__, err)}
    final = summary["final"]
    return {"cell": label, "seed": seed, "completed": True, "error": None,
            "steps_to_threshold": summary["steps_to_threshold"],
            "final_loss": final["loss"],
            "final_irrel_norm_L1": final["irrel_norms"][0] if final["irrel_norms"] else None}


def _median(values, missing=math.inf):
    """Median with unreached values counted as +inf; None if the median itself is unreached."""
    values = [missing if value is None else value for value in values]
    if not values:
        return None
    middle = float(np.median(values))
    return middle if math.isfinite(middle) else None


class Sweep:
    """
    A SweepSpec, the root directory its cells write under, and the aggregate results.

    Cells run on a pool of `workers` processes (inline for one worker). A
    failing replicate is recorded and the sweep carries on; the aggregate is
    written once every cell has finished.
    """

    def __init__(self, spec, out=None, workers=None, verbosity=1):
        self.spec = spec
        self.directory = out if out is not None else spec.base.output["directory"]
        self.workers = workers if workers is not None else spec.workers
        self.verbosity = verbosity
        self.results = []
        self.fit = None

        # Reset the verbosity
        for handler in logging.root.handlers[:]:
            logging.root.removeHandler(handler)
        self.logger = logging.getLogger(__name__)
        self.logger.setLevel(loggingLevels[verbosity])
        for handler in self.logger.handlers[:]:
            self.logger.removeHandler(handler)
        self.logger.addHandler(logging.StreamHandler())

    def tasks(self):
        tasks = []
        for label, overrides in self.spec.cells():
            for seed, config in self.spec.replicateConfigs(overrides):
                directory = os.path.join(self.directory, label, "seed-{}".format(seed))
                tasks.append((label, seed, config, directory))
        return tasks

    @property
    def failed(self):
        return sum(1 for result in self.results if not result["completed"])

    def execute(self):
        """Run every cell, write aggregate.csv (and scaling_fit.json) and return the aggregate rows."""
        tasks = self.tasks()
        self.logger.info("sweep of %d runs with %d workers into %s", len(tasks), self.workers, self.directory)
        os.makedirs(self.directory, exist_ok=True)
        if self.workers == 1:
            self.results = [cellLauncher(task) for task in tasks]
        else:
            with Pool(self.workers) as pool:
                self.results = pool.map(cellLauncher, tasks)
        # cells share this logger and leave it at their own level
        self.logger.setLevel(loggingLevels[self.verbosity])
        for result in self.results:
            if not result["completed"]:
                self.logger.warning("%s seed %d failed: %s", result["cell"], result["seed"], result["error"])

        rows = self.aggregate()
        self.writeAggregate(rows)
        if self.spec.fit:
            self.writeFit(rows)
        self.logger.info("sweep finished: %d of %d runs failed", self.failed, len(self.results))
        return rows

    def aggregate(self):
        """One row per cell: its axis values, replicate counts and medians over the completed replicates."""
        rows = []
        for label, overrides in self.spec.cells():
            results = [result for result in self.results if result["cell"] == label]
            done = [result for result in results if result["completed"]]
            row = {"cell": label}
            for (section, key), value in overrides:
                row["{}.{}".format(section, key)] = value
            row.update({
                "replicates": len(results),
                "completed": len(done),
                "failed": len(results) - len(done),
                "median_steps_to_threshold": _median([result["steps_to_threshold"] for result in done]),
                "median_final_loss": _median([result["final_loss"] for result in done], missing=math.nan),
                "median_final_irrel_norm_L1": _median([result["final_irrel_norm_L1"] for result in done],
                                                      missing=math.nan),
            })
            rows.append(row)
        return rows

    def writeAggregate(self, rows):
        axes = ["{}.{}".format(section, key) for (section, key), _ in self.spec.axes]
        columns = axes + ["replicates", "completed", "failed", "median_steps_to_threshold",
                          "median_final_loss", "median_final_irrel_norm_L1"]
        with open(os.path.join(self.directory, "aggregate.csv"), "w") as flines:
            flines.write(",".join(columns) + "\n")
            for row in rows:
                flines.write(",".join(_cellText(row[column]) for column in columns) + "\n")

    def writeFit(self, rows):
        grid = [(float(row["optimizer.eta"]), int(row["optimizer.batchsize"]), row["median_steps_to_threshold"])
                for row in rows]
        path = os.path.join(self.directory, "scaling_fit.json")
        try:
            self.fit = scalingFit(grid)
        except ValueError as err:
            self.logger.warning("no scaling fit: %s", err)
            writeJson(path, {"error": str(err), "grid": grid})
            return
        writeJson(path, {"slope": self.fit.slope, "intercept": self.fit.intercept,
                         "rsquared": self.fit.rsquared, "grid": self.fit.grid, "excluded": self.fit.excluded})


def _cellText(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return CSV_FORMAT % value
    return str(value)


def sweep(sweepPath, out=None, workers=None, verbosity=1):
    """Run the sweep file at sweepPath; returns the Sweep (with its results and fit)."""
    spec = loadSweep(sweepPath)
    runner = Sweep(spec, out=out, workers=workers, verbosity=verbosity)
    runner.execute()
    return runner
