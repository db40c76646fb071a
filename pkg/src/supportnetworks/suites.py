"""
Self-contained verification suites.

Each suite builds its own seeded fixtures, runs the simulator and compares what
happens against the closed-form predictions in oracle or against a property the
dynamics must have. A suite returns a list of Checks; failing checks are
results, not exceptions.
"""
import json
import logging
import math
from collections import namedtuple

import numpy as np

from .datagen import (RelevanceDecomposition, Dataset, checkAssumption1, computeRelevance, generateDiagonalTask,
                      generateExactFixture, generateSynthetic, toyDataset, toyToDataset, twoBatchDataset)
from .insight import empiricalShrinkExcess, irrelevantNorms
from .network import Network, NetworkSpec, checkGradients, initialiseNetwork, minimumPreactivation
from .oracle import (balancednessGaps, balancednessUpdate, diagonalChainStep, predictGdMultiplier,
                     sufficientStatGdStep, toyTwoStepRates, twoStepCancellation)
from .optim import OptimizerConfig, etaMax, makeSchedule, runTraining, step

logger = logging.getLogger(__name__)

Check = namedtuple("Check", ["name", "passed", "value", "threshold"])
VerifyReport = namedtuple("VerifyReport", ["suite", "passed", "checks"])


def atMost(name, value, threshold):
    return Check(name, bool(value <= threshold), float(value), threshold)


def atLeast(name, value, threshold):
    return Check(name, bool(value >= threshold), float(value), threshold)


def randomOrthogonal(rng, size):
    q, r = np.linalg.qr(rng.standard_normal((size, size)))
    return q * np.sign(np.diag(r))


def alignedFixtureNetwork(d, width, depth, seed=0):
    """
    Dense linear network whose downstream map W~ has W~^T W~ diagonal.

    W_1 is Gaussian; W_2 = Q D with Q orthogonal and D a positive diagonal;
    deeper layers are orthogonal, so every layer after the first is width x width.
    """
    if depth < 2:
        raise ValueError("an aligned fixture needs at least two layers")
    rng = np.random.default_rng(seed)
    layers = [rng.standard_normal((width, d)) / math.sqrt(d)]
    layers.append(randomOrthogonal(rng, width) @ np.diag(rng.uniform(0.5, 1.5, size=width)))
    for _ in range(depth - 2):
        layers.append(randomOrthogonal(rng, width))
    return Network(NetworkSpec([d] + [width] * depth), layers)


def theorem1Suite(fixtures=50, eta=0.01):
    """One-step GD multipliers and the sufficient-statistic step on exact fixtures."""
    multiplierError = 0.0
    unspannedChange = 0.0
    stepError = 0.0
    assumptionViolation = 0.0
    splitMismatches = 0
    for seed in range(fixtures):
        rng = np.random.default_rng(seed)
        d = int(rng.integers(3, 11))
        width = int(rng.integers(2, 9))
        depth = int(rng.integers(2, 5))
        unspanned = seed % 2
        r = int(rng.integers(1, d - unspanned))
        ds = generateExactFixture(d, r, 4 * (d + width), k=width, seed=seed, unspanned=unspanned)
        dec = RelevanceDecomposition.fromGroundTruth(ds)
        assumptionViolation = max(assumptionViolation, checkAssumption1(ds, dec, 1e-10).violation)
        if width >= r:
            found = computeRelevance(ds)
            splitMismatches += int((found.r, found.u) != (r, unspanned))

        net = alignedFixtureNetwork(d, width, depth, seed=seed)
        stepped = net.copy()
        step(stepped, ds.X, ds.Y, eta)
        before = net.weights[0] @ dec.basis
        after = stepped.weights[0] @ dec.basis
        for j in range(dec.r, dec.r + dec.i):
            for i in range(width):
                expected = predictGdMultiplier(net, dec, eta, (i, j)).gdFactor * before[i, j]
                multiplierError = max(multiplierError, abs(after[i, j] - expected) / abs(expected))
        for j in dec.unspanned:
            unspannedChange = max(unspannedChange, float(np.max(np.abs(after[:, j] - before[:, j]))))

        widths = [d] + [width] * (depth - 1) + [width]
        free = initialiseNetwork(NetworkSpec(widths), "kaiming-normal", seed=seed)
        freeStepped = free.copy()
        step(freeStepped, ds.X, ds.Y, eta)
        actual = (freeStepped.weights[0] - free.weights[0])[:, r:]
        predicted = sufficientStatGdStep(free, ds.secondMoment(), ds.crossMoment(), eta, r)
        scale = float(np.max(np.abs(actual)))
        if scale > 0:
            stepError = max(stepError, float(np.max(np.abs(actual - predicted))) / scale)
    return [
        atMost("gd-multiplier-relative-error", multiplierError, 1e-10),
        atMost("unspanned-column-change", unspannedChange, 0.0),
        atMost("sufficient-statistic-step-relative-error", stepError, 1e-10),
        atMost("assumption1-violation", assumptionViolation, 1e-10),
        atMost("relevance-split-mismatches", splitMismatches, 0),
    ]


def prop1Suite(steps=2000):
    """Under GD the first-layer irrelevant norm never grows."""
    ds = generateSynthetic(15, 5, 500, eps=0.01, seed=0, exact=True, unspanned=2)
    dec = RelevanceDecomposition.fromGroundTruth(ds)
    net = initialiseNetwork(NetworkSpec([15, 15, 15, 1]), "kaiming-normal", seed=0)
    eta = 0.25 * etaMax(net, ds)
    start = irrelevantNorms(net, dec)[0]
    records = runTraining(net, ds, OptimizerConfig("gd", eta=eta, steps=steps),
                          normProbe=lambda current: irrelevantNorms(current, dec),
                          checkStability=False, verbosity=0)
    norms = np.array([start] + [record.irrelNorms[0] for record in records])
    increase = max(0.0, float(np.max(np.diff(norms)))) / start
    return [
        atMost("layer1-irrelevant-norm-increase", increase, 1e-10),
        atMost("layer1-irrelevant-norm-ratio", norms[-1] / start, 1.0 - 1e-6),
    ]


def _geometricDeviation(net, ds, cfg, selectors):
    """
    Step net under cfg and track the selected weights against x_k = (1 - eta*lambda)^k x_0.

    selectors are (layer, index) pairs into net.weights. Returns the largest
    absolute deviation seen at any step.
    """
    decay = 1.0 - cfg.eta * cfg.weightdecay
    references = [net.weights[layer][index].copy() for layer, index in selectors]
    worst = 0.0
    for batch in makeSchedule(cfg, ds.n):
        X, Y = ds.batch(batch)
        step(net, X, Y, cfg.eta, cfg.weightdecay)
        for position, (layer, index) in enumerate(selectors):
            if cfg.weightdecay:
                references[position] = references[position] * decay
            worst = max(worst, float(np.max(np.abs(net.weights[layer][index] - references[position]))))
    return worst


def prop1aSuite(steps=2000):
    """Unspanned first-layer columns never move without weight decay."""
    ds = generateSynthetic(8, 3, 100, eps=0.01, seed=1, unspanned=2)
    net = initialiseNetwork(NetworkSpec([8, 8, 8, 1]), "kaiming-normal", seed=1)
    eta = 0.25 * etaMax(net, ds)
    columns = (0, (slice(None), slice(6, 8)))
    worst = 0.0
    for algorithm in ("gd", "sgd-with", "sgd-without"):
        cfg = OptimizerConfig(algorithm, eta=eta, batchsize=10, steps=steps, seed=1)
        worst = max(worst, _geometricDeviation(net.copy(), ds, cfg, [columns]))
    return [atMost("unspanned-column-change", worst, 0.0)]


def propGdSuite(seeds=2000, depth=3, d=7, r=5, tol=1e-3, maxSteps=20000):
    """
    Monte Carlo of which layer GD zeroes first on irrelevant diagonal chains.

    Every chain takes its own step size 0.5 / (E[x^2] * max_h Q_h^2), where Q_h
    is the product of the chain's other weights at initialisation, so the layer
    that starts smallest stays smallest.
    """
    ds = generateDiagonalTask(d, r, 200, eps=1.0, seed=0)
    irrelevant = ds.irrelevant
    secondMoment = np.mean(ds.X**2, axis=0)[irrelevant]
    crossMoment = np.mean(ds.Y * ds.X, axis=0)[irrelevant]

    rng = np.random.default_rng(0)
    initial = rng.standard_normal((seeds * len(irrelevant), depth))
    moments = np.tile(secondMoment, seeds)
    correlations = np.tile(crossMoment, seeds)
    others = np.stack([np.prod(np.delete(initial, h, axis=1), axis=1) for h in range(depth)], axis=1)
    eta = 0.5 / (moments * np.max(others**2, axis=1))
    tolerance = tol * np.linalg.norm(initial, axis=1)

    chains = initial.copy()
    layers = np.zeros(len(chains), dtype=int)
    for _ in range(maxSteps):
        chains = diagonalChainStep(chains, moments, correlations, eta)
        magnitudes = np.abs(chains)
        newly = (layers == 0) & (np.min(magnitudes, axis=1) <= tolerance)
        layers[newly] = np.argmin(magnitudes[newly], axis=1) + 1
        if np.all(layers > 0):
            break
    if np.any(layers == 0):
        logger.warning("%d chains not zeroed within %d steps", int(np.sum(layers == 0)), maxSteps)

    perSeed = layers.reshape(seeds, len(irrelevant))
    bothFirst = float(np.mean(np.all(perSeed == 1, axis=1)))
    frequencies = [float(np.mean(layers == layer)) for layer in range(1, depth + 1)]
    uniformity = max(abs(frequency - 1.0 / depth) for frequency in frequencies)
    invariance = float(np.mean(layers == np.argmin(np.abs(initial), axis=1) + 1))

    # the closed-form chain step against the simulator on a few whole networks
    simulatorGap = 0.0
    spec = NetworkSpec([d] * (depth + 1), topology="diagonal")
    for seed in range(3):
        net = initialiseNetwork(spec, "iid-normal", seed=seed)
        reference = net.chains()[:, irrelevant].T.copy()
        for _ in range(50):
            step(net, ds.X, ds.Y, 0.01)
            reference = diagonalChainStep(reference, secondMoment, crossMoment, 0.01)
        simulatorGap = max(simulatorGap, float(np.max(np.abs(net.chains()[:, irrelevant].T - reference))))

    expected = (1.0 / depth)**len(irrelevant)
    return [
        atMost("first-layer-identification-rate-error", abs(bothFirst - expected), 0.05),
        atMost("layer-distribution-uniformity-error", uniformity, 0.05),
        atLeast("initial-argmin-layer-invariance", invariance, 0.99),
        atMost("chain-step-vs-simulator", simulatorGap, 1e-10),
    ]


def _twoBatchFixture(rng):
    secondmoment = rng.uniform(0.5, 2.0)
    delta = secondmoment * rng.uniform(0.2, 0.9)
    outer = rng.uniform(0.5, 1.5)
    a = outer**2
    eta = rng.uniform(0.002, 0.02) / (a * secondmoment)
    net = Network(NetworkSpec([1, 1, 1], topology="diagonal"), [[1e-3 * outer], [outer]])
    return twoBatchDataset(secondmoment, delta), net, eta, a, secondmoment, delta


def _twoStepFactor(net, ds, eta, order):
    stepped = net.copy()
    for batch in order:
        X, Y = ds.batch(batch)
        step(stepped, X, Y, eta)
    return float(stepped.weights[0][0] / net.weights[0][0])


def twoStepSuite(fixtures=200, measured=20, seeds=4):
    """SGD without replacement shrinks faster than GD over the two batches of one epoch."""
    rng = np.random.default_rng(0)
    worstGap = -math.inf
    excessError = 0.0
    oracleError = 0.0
    measuredError = 0.0
    for index in range(fixtures):
        ds, net, eta, a, secondmoment, delta = _twoBatchFixture(rng)
        gdFactor = _twoStepFactor(net, ds, eta, [[0, 1], [0, 1]])
        sgdFactor = 0.5 * (_twoStepFactor(net, ds, eta, [[0], [1]]) + _twoStepFactor(net, ds, eta, [[1], [0]]))
        worstGap = max(worstGap, sgdFactor - gdFactor)
        predicted = (eta * a * delta)**2
        excessError = max(excessError, abs(gdFactor - sgdFactor - predicted) / predicted)
        sgdProduct, gdProduct = twoStepCancellation(eta * a * secondmoment, eta * a * delta)
        oracleError = max(oracleError, abs(sgdProduct - sgdFactor), abs(gdProduct - gdFactor))
        if index < measured:
            excess = empiricalShrinkExcess(ds, net, eta, 1, epochs=1, seeds=seeds, split=[0])
            measuredError = max(measuredError, abs(excess.mean * excess.steps - predicted) / predicted)
    return [
        Check("sgd-minus-gd-two-step-factor", bool(worstGap < 0.0), float(worstGap), 0.0),
        atMost("excess-vs-closed-form-relative-error", excessError, 0.2),
        atMost("two-step-cancellation-error", oracleError, 1e-6),
        atMost("measured-log-excess-relative-error", measuredError, 0.2),
    ]


def balancednessSuite(eta=0.05, steps=20000, checked=500):
    """Balancedness gap: exact one-step multiplier, vanishing under SGD, conserved under GD."""
    ds = generateDiagonalTask(2, 1, 50, eps=1.0, seed=0)
    spec = NetworkSpec([2, 2, 2], topology="diagonal")
    start = initialiseNetwork(spec, "constant", values=[1.0, 0.5])
    component = ds.irrelevant[0]
    initialGap = abs(float(balancednessGaps(start)[0, component]))

    net = start.copy()
    cfg = OptimizerConfig("sgd-without", eta=eta, batchsize=1, steps=checked, seed=0)
    multiplierError = 0.0
    for batch in makeSchedule(cfg, ds.n):
        X, Y = ds.batch(batch)
        predicted = balancednessUpdate(net, X, Y, eta)
        step(net, X, Y, eta)
        multiplierError = max(multiplierError, float(np.max(np.abs(balancednessGaps(net) - predicted))))

    sgdNet = start.copy()
    runTraining(sgdNet, ds, OptimizerConfig("sgd-without", eta=eta, batchsize=1, steps=steps, seed=0),
                stride=steps, checkStability=False, verbosity=0)
    gdNet = start.copy()
    runTraining(gdNet, ds, OptimizerConfig("gd", eta=eta, steps=steps), stride=steps,
                checkStability=False, verbosity=0)
    return [
        atMost("one-step-multiplier-error", multiplierError, 10 * eta**3),
        atMost("sgd-final-gap", abs(float(balancednessGaps(sgdNet)[0, component])), 1e-6),
        atLeast("gd-final-gap-ratio", abs(float(balancednessGaps(gdNet)[0, component])) / initialGap, 0.1),
    ]


def weightDecaySuite(weightdecay=1e-2, steps=500):
    """Weights without gradient decay by exactly (1 - eta*lambda) per step."""
    ds = generateSynthetic(8, 3, 100, eps=0.01, seed=2, unspanned=2)
    net = initialiseNetwork(NetworkSpec([8, 8, 8, 1]), "kaiming-normal", seed=2)
    eta = 0.25 * etaMax(net, ds)
    columns = (0, (slice(None), slice(6, 8)))
    unspanned = 0.0
    for algorithm in ("gd", "sgd-without"):
        cfg = OptimizerConfig(algorithm, eta=eta, batchsize=10, weightdecay=weightdecay, steps=steps, seed=2)
        unspanned = max(unspanned, _geometricDeviation(net.copy(), ds, cfg, [columns]))

    # hidden unit 0 never fires on positive inputs
    rng = np.random.default_rng(3)
    positive = Dataset(np.abs(rng.standard_normal((20, 4))), rng.standard_normal((20, 1)), name="positive")
    relu = initialiseNetwork(NetworkSpec([4, 5, 1], activation="relu"), "kaiming-normal", seed=3)
    relu.weights[0][0] = -1.0
    cfg = OptimizerConfig("gd", eta=min(0.05, 0.25 * etaMax(relu, positive)), weightdecay=weightdecay, steps=steps)
    dead = _geometricDeviation(relu, positive, cfg, [(0, 0), (1, (slice(None), 0))])

    # spanned irrelevant weights shrink further once decay is added
    exact = generateSynthetic(8, 3, 100, eps=0.01, seed=2, exact=True)
    dec = RelevanceDecomposition.fromGroundTruth(exact)
    finals = []
    for decay in (0.0, weightdecay):
        trained = net.copy()
        runTraining(trained, exact, OptimizerConfig("gd", eta=eta, weightdecay=decay, steps=steps),
                    stride=steps, checkStability=False, verbosity=0)
        finals.append(irrelevantNorms(trained, dec)[0])
    return [
        atMost("unspanned-geometric-deviation", unspanned, 0.0),
        atMost("dead-unit-geometric-deviation", dead, 0.0),
        atMost("decayed-over-undecayed-irrelevant-norm", finals[1] / finals[0], 1.0 - 1e-6),
    ]


def gradcheckSuite(depths=(2, 3, 4), margin=1e-3):
    """Backpropagation against central differences over activations, topologies and depths."""
    worst = 0.0
    rng = np.random.default_rng(0)
    for activation in ("identity", "relu"):
        for topology in ("dense", "diagonal"):
            for depth in depths:
                if topology == "dense":
                    widths = [4] + [5] * (depth - 1) + [3]
                else:
                    widths = [4] * (depth + 1)
                spec = NetworkSpec(widths, activation, topology)
                X = rng.standard_normal((6, widths[0]))
                Y = rng.standard_normal((6, widths[-1]))
                for attempt in range(50):
                    net = initialiseNetwork(spec, "kaiming-normal", seed=attempt)
                    # keep every ReLU pre-activation clear of its kink
                    if spec.linear or minimumPreactivation(net, X) >= margin:
                        break
                worst = max(worst, checkGradients(net, X, Y))
    return [atMost("max-relative-gradient-error", worst, 1e-5)]


def reluCounterexampleFixture(epsilon=1e-3):
    """Two points with opposite relevant parts and a tiny positive irrelevant part, and a 2-2-1 ReLU net."""
    ds = Dataset([[3.0, epsilon], [-3.0, epsilon]], [[3.0], [-3.0]], name="relu-counterexample", relevant=[0])
    net = Network(NetworkSpec([2, 2, 1], activation="relu"), [[[1.0, 0.5], [-1.0, 0.5]], [[0.5, -0.5]]])
    return ds, net


def reluCounterexampleSuite(eta=0.05, steps=100, weightdecay=1e-2):
    """Without weight decay ReLU nets can grow irrelevant first-layer weights; with it they shrink."""
    ds, start = reluCounterexampleFixture()
    growth = []
    changes = []
    for decay in (0.0, weightdecay):
        net = start.copy()
        history = [net.weights[0][:, 1].copy()]
        for _ in range(steps):
            step(net, ds.X, ds.Y, eta, decay)
            history.append(net.weights[0][:, 1].copy())
        history = np.array(history)
        growth.append(float(np.max(history[-1] - history[0])))
        changes.append(float(np.max(np.diff(history, axis=0))))
    return [
        Check("irrelevant-growth-without-decay", bool(growth[0] > 0.0), growth[0], 0.0),
        Check("largest-step-change-with-decay", bool(changes[1] < 0.0), changes[1], 0.0),
        atLeast("preactivation-margin", minimumPreactivation(start, ds.X), 1e-3),
    ]


def _toyNetwork(a, b):
    """f(x) = a b x with b in the first layer."""
    return Network(NetworkSpec([1, 1, 1], topology="diagonal"), [[b], [a]])


def toySuite(eta=0.01, a=1.0, b=0.01, steps=50000):
    """One-step and two-step rates on D2, the D1 stall of GD, and eta_max of the toy model."""
    d2 = toyToDataset(toyDataset("D2"), name="D2")
    net = _toyNetwork(a, b)

    oneStep = 0.0
    for index, xSquared in ((0, 1.0), (1, 9.0)):
        stepped = net.copy()
        step(stepped, *d2.batch([index]), eta)
        oneStep = max(oneStep, abs(stepped.weights[0][0] / b - (1.0 - eta * a * a * xSquared)))
    stepped = net.copy()
    step(stepped, d2.X, d2.Y, eta)
    factor = predictGdMultiplier(net, RelevanceDecomposition.fromGroundTruth(d2), eta, 0).gdFactor
    gdStep = abs(stepped.weights[0][0] / b - factor)

    slow = 1e-3
    gdRate, sgdRate = toyTwoStepRates(slow, a)
    frozen = (1,)
    gdNet = net.copy()
    for _ in range(2):
        step(gdNet, d2.X, d2.Y, slow, frozen=frozen)
    orders = []
    for order in ([0, 1], [1, 0]):
        sgdNet = net.copy()
        for index in order:
            step(sgdNet, *d2.batch([index]), slow, frozen=frozen)
        orders.append(sgdNet.weights[0][0] / b)
    simulatedGd = gdNet.weights[0][0] / b
    simulatedSgd = 0.5 * (orders[0] + orders[1])
    rateError = max(abs(simulatedGd - gdRate), abs(simulatedSgd - sgdRate))
    gapError = abs((simulatedGd - simulatedSgd) / (16.0 * slow**2 * a**4) - 1.0)

    d1 = toyToDataset(toyDataset("D1"), name="D1")
    endpoints = []
    for algorithm in ("gd", "sgd-without"):
        trained = _toyNetwork(1.0, 0.5)
        runTraining(trained, d1, OptimizerConfig(algorithm, eta=0.05, batchsize=1, steps=steps, seed=0),
                    stride=steps, checkStability=False, verbosity=0)
        endpoints.append(float(np.linalg.norm(trained.flatParameters())))

    return [
        atMost("one-step-sgd-multiplier-error", oneStep, 1e-14),
        atMost("one-step-gd-multiplier-error", gdStep, 1e-14),
        atMost("two-step-rate-error", rateError, 1e-3),
        atMost("two-step-gap-relative-error", gapError, 1e-3),
        atMost("d1-sgd-over-gd-endpoint-norm", endpoints[1] / endpoints[0], 0.2),
        atMost("eta-max-error", abs(etaMax(_toyNetwork(1.0, 0.0), d2) - 0.4), 1e-3),
    ]


SUITES = {
    "theorem1": theorem1Suite,
    "prop1": prop1Suite,
    "prop1a": prop1aSuite,
    "propGD": propGdSuite,
    "two-step": twoStepSuite,
    "balancedness": balancednessSuite,
    "weight-decay": weightDecaySuite,
    "gradcheck": gradcheckSuite,
    "relu-counterexample": reluCounterexampleSuite,
    "toy": toySuite,
}


def verify(suite, out=None):
    """
    Run one suite and return its VerifyReport.

    With `out` the report is also written there as JSON:
    {"suite": ..., "passed": ..., "checks": [{"name", "passed", "value", "threshold"}, ...]}
    """
    if suite not in SUITES:
        raise ValueError("unknown suite {!r}; choose from {}".format(suite, ", ".join(SUITES)))
    checks = SUITES[suite]()
    for check in checks:
        logger.info("%s %s: %s (value %.3g, threshold %g)", suite, check.name,
                    "pass" if check.passed else "FAIL", check.value, check.threshold)
    report = VerifyReport(suite, all(check.passed for check in checks), checks)
    if out is not None:
        with open(out, "w") as flines:
            json.dump(reportToDict(report), flines, sort_keys=True, indent=2)
            flines.write("\n")
    return report


def reportToDict(report):
    return {"suite": report.suite, "passed": report.passed,
            "checks": [check._asdict() for check in report.checks]}
