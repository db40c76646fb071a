"""
Functions for analysing trajectories: how much of each layer still reacts to the
irrelevant inputs, where each diagonal chain gets cut, when training leaves its
loss-minimisation phase, and how the time to align the first layer scales with
step size and batch size.

Also includes the probes the trainer can call at every recorded step, and the
measurement of the extra shrinkage SGD applies to irrelevant weights compared with GD.
"""
import logging
import math
from collections import namedtuple

import numpy as np
from scipy import stats

from .datagen import RelevanceDecomposition
from .linalg import symEigen
from .oracle import balancednessGaps
from .optim import DivergenceError, OptimizerConfig, runTraining

logger = logging.getLogger(__name__)

GramSpectrum = namedtuple("GramSpectrum", ["gram", "eigenvalues", "counts", "edges"])
SupportReport = namedtuple("SupportReport", ["components", "layers", "zeroed", "magnitudes", "tol"])
SupportReport.__doc__ = """
For each irrelevant component: the 1-based layer whose |W_l[j,j]| is smallest, whether
that weight is at or below tol, and the per-layer magnitudes (L x components).
"""
DenseSupport = namedtuple("DenseSupport", ["firstLayer", "downstream", "identified", "tol"])
PhaseReport = namedtuple("PhaseReport", ["transitionStep", "plateauLoss", "oscillationAmplitude"])
ScalingFit = namedtuple("ScalingFit", ["slope", "intercept", "rsquared", "grid", "excluded"])
ShrinkExcess = namedtuple("ShrinkExcess", ["mean", "stderr", "perSeed", "excluded", "steps"])


def _irrelevantColumns(net, split):
    """Resolve split into an (input-space) d x m matrix whose columns are the irrelevant directions."""
    d = net.spec.widths[0]
    if isinstance(split, RelevanceDecomposition):
        if split.d != d:
            raise IndexError("decomposition has d={} but the network takes {} inputs".format(split.d, d))
        return split.basis[:, split.r:]
    indices = [int(j) for j in split]
    for j in indices:
        if not 0 <= j < d:
            raise IndexError("irrelevant index {} out of range for d={}".format(j, d))
    return np.eye(d)[:, indices]


def _irrelevantCoordinates(net, split):
    """Irrelevant coordinate indices for a diagonal network (the basis must be coordinate-aligned)."""
    columns = _irrelevantColumns(net, split)
    return [int(np.argmax(np.abs(columns[:, m]))) for m in range(columns.shape[1])]


def irrelevantNorms(net, split):
    """
    Return the per-layer Frobenius norms of the weights that carry irrelevant inputs.

    split is a RelevanceDecomposition or a list of irrelevant coordinates. For
    dense networks layer l reports |(W_l ... W_1)[:, irrelevant]|, so layer 1 is
    |W_1[:, irrelevant]|; for diagonal networks layer l reports the norm of
    W_l[j,j] over the irrelevant j.
    """
    if net.spec.diagonal:
        coordinates = _irrelevantCoordinates(net, split)
        return np.array([np.linalg.norm(weight[coordinates]) for weight in net.weights])
    columns = _irrelevantColumns(net, split)
    norms = []
    product = np.eye(net.spec.widths[0])
    for weight in net.weights:
        product = weight @ product
        norms.append(np.linalg.norm(product @ columns))
    return np.array(norms)


def chainMagnitudes(net, components):
    """Return the L x len(components) array |W_l[j,j]| of a diagonal network."""
    chains = net.chains()
    for j in components:
        if not 0 <= j < chains.shape[1]:
            raise IndexError("component {} out of range".format(j))
    return np.abs(chains[:, list(components)])


def gramSpectrum(W, bins=20):
    """
    Return the Gram matrix W W^T, its eigenvalues (descending) and their histogram.

    A Gram matrix with non-finite entries (diverged weights) gets NaN
    eigenvalues and an empty histogram; only finite eigenvalues are binned.
    """
    W = np.asarray(W, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        gram = W @ W.T
        gram = 0.5 * (gram + gram.T)
    if np.all(np.isfinite(gram)):
        eigenvalues = symEigen(gram).values
    else:
        eigenvalues = np.full(gram.shape[0], np.nan)
    finite = eigenvalues[np.isfinite(eigenvalues)]
    counts, edges = np.histogram(finite, bins=bins, range=_histogramRange(finite))
    return GramSpectrum(gram, eigenvalues, counts, edges)


def _histogramRange(values):
    """Bin range covering values, widened when they are (nearly) all equal."""
    if not values.size:
        return (0.0, 1.0)
    low, high = float(np.min(values)), float(np.max(values))
    scale = max(1.0, abs(low), abs(high))
    if high - low <= 1e-9 * scale:
        return (low - 0.5 * scale, high + 0.5 * scale)
    return (low, high)


def supportLayer(net, components=None, tol=None, initial=None):
    """
    Report, for each irrelevant chain of a diagonal network, the layer that cuts it.

    The cutting layer is the one with the smallest |W_l[j,j]|. A chain counts as
    zeroed when that weight is at most tol; the default tol is 1e-3 times the
    norm of the chain in `initial` (or of the current chain if no initial
    network is given). components defaults to every coordinate.
    """
    if not net.spec.diagonal:
        raise ValueError("support layers are defined for diagonal networks")
    if components is None:
        components = list(range(net.spec.widths[0]))
    magnitudes = chainMagnitudes(net, components)
    reference = chainMagnitudes(initial, components) if initial is not None else magnitudes
    if tol is None:
        tolerances = 1e-3 * np.linalg.norm(reference, axis=0)
    else:
        tolerances = np.full(len(components), float(tol))
    layers = np.argmin(magnitudes, axis=0) + 1
    zeroed = magnitudes[layers - 1, np.arange(len(components))] <= tolerances
    return SupportReport(list(components), layers.tolist(), zeroed.tolist(), magnitudes, tolerances.tolist())


def denseSupportReport(net, initial, split, tol=1e-3):
    """
    Decide whether a dense network has cut the irrelevant inputs in its first layer.

    firstLayer is |W_1[:, irrelevant]| relative to its initial value; downstream
    is |W~| relative to its initial value. The support is identified in the first
    layer when firstLayer <= tol while downstream stays above tol.
    """
    start = irrelevantNorms(initial, split)[0]
    first = irrelevantNorms(net, split)[0] / start if start > 0 else 0.0
    startDownstream = np.linalg.norm(initial.downstreamProduct())
    downstream = np.linalg.norm(net.downstreamProduct()) / startDownstream if startDownstream > 0 else 0.0
    return DenseSupport(float(first), float(downstream), bool(first <= tol and downstream > tol), tol)


def detectPhases(trajectory, window, plateauTol=1e-4, oscillationTol=0.0):
    """
    Find where training stops lowering the loss and starts oscillating around the minima.

    trajectory is a list of TrajectoryRecords or a plain loss sequence. The
    losses are cut into consecutive windows; the transition is the first window
    whose mean is less than plateauTol (relative) below the previous one while
    the later window still fluctuates (std / mean > oscillationTol, so a constant
    or zero loss is not an oscillation). The transition step is the first step of the
    earlier window of that pair. The plateau loss and oscillation amplitude are
    the mean and standard deviation of the loss from the transition on, or of
    the last window if there is no transition.
    """
    if window < 1:
        raise ValueError("window must be at least 1")
    if trajectory and hasattr(trajectory[0], "loss"):
        losses = np.array([record.loss for record in trajectory], dtype=float)
        steps = [record.step for record in trajectory]
    else:
        losses = np.asarray(trajectory, dtype=float)
        steps = list(range(len(losses)))
    if len(losses) < 2 * window:
        raise ValueError("need at least {} records for window {}, got {}".format(2 * window, window, len(losses)))

    count = len(losses) // window
    means = [float(np.mean(losses[k * window:(k + 1) * window])) for k in range(count)]
    for k in range(1, count):
        previous, current = means[k - 1], means[k]
        decrease = (previous - current) / previous if previous > 0 else 0.0
        spread = float(np.std(losses[k * window:(k + 1) * window]))
        oscillating = current > 0.0 and spread / current > oscillationTol
        if decrease < plateauTol and oscillating:
            start = (k - 1) * window
            plateau = losses[start:]
            return PhaseReport(steps[start], float(np.mean(plateau)), float(np.std(plateau)))
    tail = losses[-window:]
    return PhaseReport(None, float(np.mean(tail)), float(np.std(tail)))


def scalingFit(grid):
    """
    Fit log(steps) against log(b / eta^2) by least squares.

    grid is a list of (eta, b, steps) triples; triples whose steps are None or
    not finite (threshold never reached) are excluded and listed in the result.
    """
    kept = []
    excluded = []
    for eta, b, steps in grid:
        if steps is None or not math.isfinite(steps) or steps <= 0:
            excluded.append((eta, b, steps))
        else:
            kept.append((eta, b, steps))
    if excluded:
        logger.warning("scaling fit excludes %d grid points with unreached thresholds", len(excluded))
    if len(kept) < 4:
        raise ValueError("scaling fit needs at least 4 reached grid points, got {}".format(len(kept)))
    x = np.log([b / eta**2 for eta, b, _ in kept])
    y = np.log([steps for _, _, steps in kept])
    fit = stats.linregress(x, y)
    rsquared = min(1.0, max(0.0, fit.rvalue**2))
    return ScalingFit(float(fit.slope), float(fit.intercept), float(rsquared), kept, excluded)


def stepsToThreshold(records, initialNorm, threshold=1e-3, layer=0):
    """First recorded step at which the irrelevant norm of `layer` drops below threshold * initialNorm."""
    for record in records:
        if record.irrelNorms[layer] < threshold * initialNorm:
            return record.step
    return None


def medianTrajectory(trajectories, field="loss"):
    """Elementwise median of one record field over several trajectories, truncated to the shortest."""
    length = min(len(records) for records in trajectories)
    values = np.array([[getattr(record, field) for record in records[:length]] for records in trajectories])
    return np.median(values, axis=0)


def _firstLayerEntries(net, split):
    if net.spec.diagonal:
        return net.weights[0][_irrelevantCoordinates(net, split)].copy()
    return (net.weights[0] @ _irrelevantColumns(net, split)).ravel()


def _logShrink(before, after, steps):
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.log(np.abs(after) / np.abs(before))
    ratios = ratios[np.isfinite(ratios)]
    if ratios.size == 0:
        return math.nan
    return -float(np.mean(ratios)) / steps


def empiricalShrinkExcess(ds, net, eta, b, epochs=1, seeds=10, split=None):
    """
    Measure how much faster SGD without replacement shrinks irrelevant first-layer weights than GD.

    GD and SGD (one run per seed) start from copies of net and take
    epochs * ceil(n / b) steps each. The shrink rate of a run is minus the mean
    log-ratio |w_end / w_start| over the irrelevant first-layer entries, per
    step; the excess is the SGD rate minus the GD rate, averaged over seeds and
    reported with its standard error. Diverging runs are excluded.
    """
    if not net.spec.linear:
        raise ValueError("shrink excess is measured on linear networks")
    if split is None:
        split = ds.irrelevant
    start = _firstLayerEntries(net, split)
    sgdConfig = OptimizerConfig("sgd-without", eta=eta, batchsize=b, steps=1)
    steps = epochs * sgdConfig.epochLength(ds.n)

    gdNet = net.copy()
    runTraining(gdNet, ds, OptimizerConfig("gd", eta=eta, steps=steps), checkStability=False, verbosity=0)
    gdRate = _logShrink(start, _firstLayerEntries(gdNet, split), steps)

    perSeed = []
    excluded = []
    for seed in range(seeds):
        sgdNet = net.copy()
        config = OptimizerConfig("sgd-without", eta=eta, batchsize=b, steps=steps, seed=seed)
        try:
            runTraining(sgdNet, ds, config, checkStability=False, verbosity=0)
        except DivergenceError as err:
            logger.warning("seed %d diverged at step %d: excluded", seed, err.step)
            excluded.append(seed)
            continue
        rate = _logShrink(start, _firstLayerEntries(sgdNet, split), steps)
        if math.isfinite(rate):
            perSeed.append(rate - gdRate)
        else:
            excluded.append(seed)
    if not perSeed:
        raise RuntimeError("every SGD run was excluded")
    stderr = float(np.std(perSeed, ddof=1) / math.sqrt(len(perSeed))) if len(perSeed) > 1 else 0.0
    return ShrinkExcess(float(np.mean(perSeed)), stderr, perSeed, excluded, steps)


def chainProbe(components=None):
    """Probe recording the signed diagonal weights w{l}_{j} of a diagonal network."""
    def probe(net, step):
        chains = net.chains()
        selected = range(chains.shape[1]) if components is None else components
        return {"w{}_{}".format(layer + 1, j): float(chains[layer, j])
                for j in selected for layer in range(chains.shape[0])}
    return probe


def balancednessProbe(components=None):
    """Probe recording the balancedness gaps G{i}_{j} = W_{i+1}[j,j]^2 - W_i[j,j]^2."""
    def probe(net, step):
        gaps = balancednessGaps(net)
        selected = range(gaps.shape[1]) if components is None else components
        return {"G{}_{}".format(level + 1, j): float(gaps[level, j])
                for j in selected for level in range(gaps.shape[0])}
    return probe


def gramRankProbe(tol=1e-6):
    """Probe recording the numerical rank of the first-layer Gram matrix."""
    def probe(net, step):
        weight = net.weights[0]
        if net.spec.diagonal:
            weight = np.diag(weight)
        eigenvalues = gramSpectrum(weight).eigenvalues
        top = eigenvalues[0] if eigenvalues.size else 0.0
        return {"gram_rank": float(np.sum(eigenvalues > tol * top)) if top > 0 else 0.0}
    return probe
