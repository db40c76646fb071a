"""
Reads experiment and sweep files.

Both use the sectioned `key = value` grammar of configparser (comments start
with # or ;), or the same sections as objects in a .json file. Every key has a
default in DEFAULTS; a section or key that is not listed there is an error
naming the file, the key and its line, so typos never pass silently.

Experiment file:

    [dataset]
    generator = diagonal
    d = 2
    r = 1
    [optimizer]
    algorithm = sgd-without
    eta = 0.05

Sweep file:

    [sweep]
    base = experiment.ini
    replicates = 10
    [axes]
    optimizer.eta = 0.02, 0.05, 0.1
    optimizer.batchsize = 2, 5, 10, 25
"""
import configparser
import copy
import itertools
import json
import logging
import os

from .datagen import TOY_DATASETS
from .network import ACTIVATIONS, INIT_SCHEMES, TOPOLOGIES
from .optim import ALGORITHMS, OptimizerConfig

logger = logging.getLogger(__name__)

OUTPUT_ENV = "SUPPORTNETWORKS_OUTPUT"

GENERATORS = ("synthetic", "diagonal", "toy", "twobatch", "idx")
TARGETS = ("linear-sum", "sine-of-sum")
METRICS = ("chains", "balancedness", "gramrank")
FORMATS = ("csv", "json")

# Raw defaults, in the same text form a config file would hold
DEFAULTS = {
    "dataset": {
        "generator": "synthetic", "d": "15", "r": "5", "m": "5000", "target": "linear-sum",
        "eps": "0.01", "seed": "0", "exact": "false", "unspanned": "0", "coefficient": "1.0",
        "toy": "D1", "secondmoment": "1.0", "delta": "0.5", "images": "", "labels": "",
        "center": "false",
    },
    "network": {
        "topology": "dense", "activation": "identity", "depth": "3", "width": "15",
        "init": "kaiming-normal", "scale": "1.0", "values": "", "checkpoint": "", "seed": "0",
    },
    "optimizer": {
        "algorithm": "gd", "eta": "0.1", "batchsize": "1", "weightdecay": "0.0",
        "steps": "1000", "seed": "0",
    },
    "probes": {
        "metrics": "", "stride": "1", "window": "0", "plateautol": "1e-4", "zerotol": "1e-3",
        "threshold": "1e-3",
    },
    "output": {
        "directory": "", "formats": "csv,json",
    },
}

SWEEP_DEFAULTS = {
    "sweep": {
        "base": "", "replicates": "1", "cap": "256", "workers": "1", "fit": "false",
        "threshold": "1e-3",
    },
}

_BOOLEANS = configparser.ConfigParser.BOOLEAN_STATES


def _choice(options):
    def convert(text):
        if text not in options:
            raise ValueError("must be one of {}, got {!r}".format(", ".join(options), text))
        return text
    return convert


def _boolean(text):
    try:
        return _BOOLEANS[text.lower()]
    except KeyError as err:
        raise ValueError("not a boolean: {!r}".format(text)) from err


def _integer(text):
    return int(text)


def _positiveInteger(text):
    value = int(text)
    if value < 1:
        raise ValueError("must be a positive integer, got {}".format(value))
    return value


def _floatList(text):
    return [float(item) for item in text.split(",") if item.strip()]


def _choiceList(options):
    def convert(text):
        items = [item.strip() for item in text.split(",") if item.strip()]
        for item in items:
            _choice(options)(item)
        return items
    return convert


CONVERTERS = {
    "dataset": {
        "generator": _choice(GENERATORS), "d": _positiveInteger, "r": _integer,
        "m": _positiveInteger, "target": _choice(TARGETS), "eps": float, "seed": _integer,
        "exact": _boolean, "unspanned": _integer, "coefficient": float,
        "toy": _choice(tuple(TOY_DATASETS)), "secondmoment": float, "delta": float,
        "images": str, "labels": str, "center": _boolean,
    },
    "network": {
        "topology": _choice(TOPOLOGIES), "activation": _choice(ACTIVATIONS),
        "depth": _positiveInteger, "width": _positiveInteger, "init": _choice(INIT_SCHEMES),
        "scale": float, "values": _floatList, "checkpoint": str, "seed": _integer,
    },
    "optimizer": {
        "algorithm": _choice(ALGORITHMS), "eta": float, "batchsize": _positiveInteger,
        "weightdecay": float, "steps": _integer, "seed": _integer,
    },
    "probes": {
        "metrics": _choiceList(METRICS), "stride": _positiveInteger, "window": _integer,
        "plateautol": float, "zerotol": float, "threshold": float,
    },
    "output": {
        "directory": str, "formats": _choiceList(FORMATS),
    },
    "sweep": {
        "base": str, "replicates": _positiveInteger, "cap": _positiveInteger,
        "workers": _positiveInteger, "fit": _boolean, "threshold": float,
    },
}


def _lineOf(text, section, key=None):
    """1-based line of `key` inside `section` (or of the section header), 0 if not found."""
    current = None
    for number, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if stripped.startswith("[") and stripped.endswith("]"):
            current = stripped[1:-1].strip().lower()
            if key is None and current == section:
                return number
            continue
        if key is not None and current == section:
            name = stripped.split("=", 1)[0].split(":", 1)[0].strip().lower()
            if name == key:
                return number
    return 0


def _jsonLineOf(text, section, key=None):
    target = '"{}"'.format(key if key is not None else section)
    for number, line in enumerate(text.splitlines(), start=1):
        if target in line:
            return number
    return 0


def _readSections(path):
    """
    Read a config file into {section: {key: raw string}} plus a line locator.

    Raises IOError for syntax errors, with the line number where configparser
    reports one.
    """
    with open(path) as flines:
        text = flines.read()
    if path.endswith(".json"):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as err:
            raise IOError("{}: invalid JSON at line {}: {}".format(path, err.lineno, err.msg)) from err
        if not isinstance(doc, dict) or not all(isinstance(body, dict) for body in doc.values()):
            raise IOError("{}: top level must map section names to objects".format(path))
        sections = {}
        for section, body in doc.items():
            sections[section.lower()] = {key.lower(): _jsonText(value) for key, value in body.items()}
        return sections, lambda section, key=None: _jsonLineOf(text, section, key)

    parser = configparser.ConfigParser(interpolation=None, default_section="\0defaults")
    try:
        parser.read_string(text, source=path)
    except configparser.Error as err:
        lineno = getattr(err, "lineno", None)
        if lineno is None and getattr(err, "errors", None):
            lineno = err.errors[0][0]
        raise IOError("{}: invalid configuration at line {}: {}".format(
            path, lineno if lineno is not None else "?", err.message)) from err
    sections = {section.lower(): dict(parser.items(section)) for section in parser.sections()}
    return sections, lambda section, key=None: _lineOf(text, section, key)


def _jsonText(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, list):
        return ", ".join(str(item) for item in value)
    return str(value)


def _convert(path, locate, sections, defaults, allowed):
    """Merge raw sections over defaults and convert every value, rejecting unknown names."""
    for section, body in sections.items():
        if section not in allowed:
            raise IOError("{}:{}: unknown section [{}]".format(path, locate(section), section))
        for key in body:
            if key not in defaults[section]:
                raise IOError("{}:{}: unknown key '{}' in section [{}]".format(
                    path, locate(section, key), key, section))
    converted = {}
    for section, keys in defaults.items():
        converted[section] = {}
        for key, default in keys.items():
            raw = sections.get(section, {}).get(key, default).strip()
            try:
                converted[section][key] = CONVERTERS[section][key](raw)
            except ValueError as err:
                raise IOError("{}:{}: bad value for {}.{}: {}".format(
                    path, locate(section, key), section, key, err)) from err
    return converted


class ExperimentConfig:
    """
    The validated contents of one experiment file.

    `sections` maps each of dataset, network, optimizer, probes and output to a
    dict of typed values; `path` is the file it came from (None when built in code).
    """

    def __init__(self, sections, path=None):
        self.sections = sections
        self.path = path

    @property
    def dataset(self):
        return self.sections["dataset"]

    @property
    def network(self):
        return self.sections["network"]

    @property
    def optimizer(self):
        return self.sections["optimizer"]

    @property
    def probes(self):
        return self.sections["probes"]

    @property
    def output(self):
        return self.sections["output"]

    def optimizerConfig(self):
        """Return the OptimizerConfig of the [optimizer] section."""
        return OptimizerConfig(**self.optimizer)

    def override(self, section, key, raw):
        """Return a copy with one key replaced by the raw text value `raw`."""
        if section not in DEFAULTS or key not in DEFAULTS[section]:
            raise ValueError("unknown key {}.{}".format(section, key))
        sections = copy.deepcopy(self.sections)
        sections[section][key] = CONVERTERS[section][key](str(raw).strip())
        return ExperimentConfig(sections, self.path)

    def toDict(self):
        return copy.deepcopy(self.sections)

    @classmethod
    def fromDict(cls, doc, path=None):
        """Build a config from {section: {key: value}}, filling defaults."""
        raw = {section.lower(): {key.lower(): _jsonText(value) for key, value in body.items()}
               for section, body in doc.items()}
        return cls(_convert(path or "<dict>", lambda section, key=None: 0, raw, DEFAULTS, DEFAULTS), path)


def _resolvePaths(sections, path):
    """Make file references relative to the config file's directory and fill the output default."""
    base = os.path.dirname(os.path.abspath(path))
    for section, key in (("dataset", "images"), ("dataset", "labels"), ("network", "checkpoint")):
        value = sections[section][key]
        if value and not os.path.isabs(value):
            sections[section][key] = os.path.join(base, value)
    if not sections["output"]["directory"]:
        sections["output"]["directory"] = os.environ.get(OUTPUT_ENV, "output")


def loadExperiment(path):
    """Read and validate an experiment file."""
    sections, locate = _readSections(path)
    converted = _convert(path, locate, sections, DEFAULTS, DEFAULTS)
    _resolvePaths(converted, path)
    logger.info("loaded experiment config %s", path)
    return ExperimentConfig(converted, path)


class SweepSpec:
    """
    A base experiment, the axes to vary over it and the sweep settings.

    `axes` is a list of ((section, key), [raw values]) in file order; the cells
    are their cartesian product. Every cell runs `replicates` times, replicate k
    with optimizer.seed = base seed + k. The total run count may not exceed `cap`.
    """

    def __init__(self, base, axes, replicates=1, cap=256, workers=1, fit=False, threshold=1e-3, path=None):
        self.base = base
        self.axes = axes
        self.replicates = replicates
        self.cap = cap
        self.workers = workers
        self.fit = fit
        self.threshold = threshold
        self.path = path
        if self.size > cap:
            raise IOError("{}: sweep has {} runs, more than the cap of {}".format(path, self.size, cap))

    @property
    def size(self):
        count = self.replicates
        for _, values in self.axes:
            count *= len(values)
        return count

    def cells(self):
        """Yield (label, overrides) per cell, where overrides is a list of ((section, key), raw value)."""
        names = [name for name, _ in self.axes]
        for combination in itertools.product(*[values for _, values in self.axes]):
            overrides = list(zip(names, combination))
            parts = ["{}.{}-{}".format(section, key, value.replace(os.sep, "_"))
                     for (section, key), value in overrides]
            yield "cell_" + "_".join(parts), overrides

    def replicateConfigs(self, overrides):
        """Return the (seed, ExperimentConfig) pairs of one cell."""
        config = self.base.override("probes", "threshold", self.threshold)
        for (section, key), value in overrides:
            config = config.override(section, key, value)
        start = config.optimizer["seed"]
        return [(start + k, config.override("optimizer", "seed", start + k)) for k in range(self.replicates)]


def loadSweep(path):
    """Read and validate a sweep file and the experiment file it is based on."""
    sections, locate = _readSections(path)
    axes = sections.pop("axes", {})
    converted = _convert(path, locate, sections, SWEEP_DEFAULTS, SWEEP_DEFAULTS)["sweep"]
    if not converted["base"]:
        raise IOError("{}:{}: [sweep] needs a base experiment file".format(path, locate("sweep")))
    basePath = converted["base"]
    if not os.path.isabs(basePath):
        basePath = os.path.join(os.path.dirname(os.path.abspath(path)), basePath)
    base = loadExperiment(basePath)

    parsedAxes = []
    for name, raw in axes.items():
        section, _, key = name.partition(".")
        if section not in DEFAULTS or key not in DEFAULTS[section]:
            raise IOError("{}:{}: unknown axis '{}'".format(path, locate("axes", name), name))
        values = [value.strip() for value in raw.split(",") if value.strip()]
        if not values:
            raise IOError("{}:{}: axis '{}' has no values".format(path, locate("axes", name), name))
        for value in values:
            try:
                CONVERTERS[section][key](value)
            except ValueError as err:
                raise IOError("{}:{}: bad value {!r} for axis {}: {}".format(
                    path, locate("axes", name), value, name, err)) from err
        parsedAxes.append(((section, key), values))

    if converted["fit"]:
        names = {name for name, _ in parsedAxes}
        if not {("optimizer", "eta"), ("optimizer", "batchsize")} <= names:
            raise IOError("{}: fit = true needs optimizer.eta and optimizer.batchsize axes".format(path))
    return SweepSpec(base, parsedAxes, converted["replicates"], converted["cap"], converted["workers"],
                     converted["fit"], converted["threshold"], path)
