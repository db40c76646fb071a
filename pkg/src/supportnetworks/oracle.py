"""
Closed-form predictions of the training dynamics, used to check the simulator.

None of these functions run an optimiser: each one evaluates a formula from the
network's current weights and the data's moments, so that the result of an actual
step (or run) can be compared against it.

Conventions: the loss is (1/2n) sum |f(x) - y|^2; a := (W~^T W~)[i, i] where
W~ = W_L ... W_2; for diagonal networks the chain of coordinate j is the vector
(W_1[j,j], ..., W_L[j,j]) and its product is P_j.
"""
import itertools
import logging
import math
from collections import namedtuple

import numpy as np

from .datagen import checkAssumption1

logger = logging.getLogger(__name__)

ShrinkagePrediction = namedtuple("ShrinkagePrediction",
                                 ["entry", "a", "secondMoment", "gdFactor", "sgdExtra"])
ShrinkagePrediction.__doc__ = """
Predicted one-step GD multiplier 1 - eta * a * E[x_j^2] of an irrelevant first-layer
entry. sgdExtra is a measured quantity (see insight.empiricalShrinkExcess) and is
None until one is attached.
"""

BalancednessState = namedtuple("BalancednessState", ["component", "levels"])
BalancednessState.__doc__ = """
Balancedness hierarchy of one diagonal chain. levels[0] holds G^1 (the chain sorted by
magnitude), levels[1] holds G^2_i = theta_i^2 - theta_1^2, and so on.
"""

ConvergenceForecast = namedtuple("ConvergenceForecast", ["steps", "prefactor", "logFactor", "inputs"])


def _requireLinear(net):
    if not net.spec.linear:
        raise ValueError("this prediction only holds for linear networks, not {}".format(net.spec.activation))


def _requireDiagonal(net):
    if not net.spec.diagonal:
        raise ValueError("this prediction needs a diagonal network")


def predictGdMultiplier(net, dec, eta, entry, tol=1e-8):
    """
    Predict the factor one full-batch GD step multiplies an irrelevant first-layer entry by.

    entry is (i, j): hidden unit i and basis direction j of dec, which must be
    irrelevant. The prediction is exact when the relevant/irrelevant split holds
    exactly in dec's basis, W~^T W~ is diagonal and the irrelevant block of
    E[x x^T] is diagonal. For diagonal networks entry may be the coordinate j alone.

    Dense networks mix coordinates, so for them the relevant/irrelevant cross
    block of dec.lambdaXX is checked first (datagen.checkAssumption1, tol
    relative to the largest second moment) and a ValueError is raised if the
    split does not hold.
    """
    _requireLinear(net)
    if net.spec.diagonal:
        if isinstance(entry, tuple):
            i, j = entry
            if i != j:
                raise ValueError("diagonal networks only have entries (j, j)")
        else:
            j = int(entry)
        i = j
        a = float(net.downstreamProduct()[j]**2)
    else:
        i, j = entry
        scale = max(1.0, float(np.max(np.abs(dec.lambdaXX))))
        check = checkAssumption1(None, dec, tol * scale)
        if not check.holds:
            raise ValueError("relevant and irrelevant directions are correlated (max cross moment {:.3e}): "
                             "the one-step multiplier needs them uncorrelated".format(check.violation))
        downstream = net.downstreamProduct()
        a = float((downstream.T @ downstream)[i, i])
    if j < dec.r:
        raise ValueError("direction {} is relevant, not irrelevant".format(j))
    secondMoment = float(dec.lambdaXX[j, j])
    return ShrinkagePrediction((i, j), a, secondMoment, 1.0 - eta * a * secondMoment, None)


def sufficientStatGdStep(net, lambdaXX, lambdaYX, eta, r):
    """
    Predict the change of W_1's irrelevant columns under one full-batch GD step.

    lambdaXX (d x d) and lambdaYX (k x d) are the input second moment and the
    label cross moment in the coordinates W_1 acts on; columns r: are the
    irrelevant ones. The prediction is

        -eta W~^T W~ (W_1[:, :r] lambdaXX[:r, r:] + W_1[:, r:] lambdaXX[r:, r:]) + eta W~^T lambdaYX[:, r:]

    where the last term vanishes whenever the label has no projection on the
    irrelevant directions.
    """
    _requireLinear(net)
    if net.spec.diagonal:
        raise ValueError("use diagonalChainStep for diagonal networks")
    W1 = net.weights[0]
    lambdaXX = np.asarray(lambdaXX, dtype=float)
    lambdaYX = np.asarray(lambdaYX, dtype=float)
    d = W1.shape[1]
    if lambdaXX.shape != (d, d) or lambdaYX.shape != (net.spec.widths[-1], d):
        raise ValueError("moment shapes {} and {} do not match the network".format(lambdaXX.shape, lambdaYX.shape))
    downstream = net.downstreamProduct()
    alignment = downstream.T @ downstream
    return (-eta * alignment @ (W1[:, :r] @ lambdaXX[:r, r:])
            - eta * alignment @ (W1[:, r:] @ lambdaXX[r:, r:])
            + eta * downstream.T @ lambdaYX[:, r:])


def twoStepCancellation(alpha, delta):
    """Return ((1 - alpha + delta)(1 - alpha - delta), (1 - alpha)^2)."""
    return (1.0 - alpha + delta) * (1.0 - alpha - delta), (1.0 - alpha)**2


def toyTwoStepRates(eta, a):
    """
    Two-step shrink rates of the small toy weight on D2.

    GD multiplies it by (1 - 5 eta a^2) twice; SGD with b=1 visits x=1 and x=3
    once each, multiplying it by (1 - eta a^2)(1 - 9 eta a^2).
    """
    a2 = a * a
    return (1.0 - 5.0 * eta * a2)**2, (1.0 - eta * a2) * (1.0 - 9.0 * eta * a2)


def toyLoss(a, b, points):
    """Loss of f(x) = abx on a list of ToyPoints (broadcasts over arrays a, b)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    total = np.zeros(np.broadcast(a, b).shape)
    for point in points:
        total = total + (a * b * point.x - point.y)**2
    return 0.5 * total / len(points)


def _scalarColumns(ds):
    if ds.d != 1 or ds.k != 1:
        raise ValueError("needs a scalar-input, scalar-output dataset")
    return ds.X[:, 0], ds.Y[:, 0]


def residualVarianceBound(ds, b):
    """Return R / b with R = E[y^2 x^2] - E[yx]^2."""
    if b < 1:
        raise ValueError("batch size must be positive")
    x, y = _scalarColumns(ds)
    residual = float(np.mean(y**2 * x**2) - np.mean(y * x)**2)
    return max(residual, 0.0) / b


def batchResidualVariance(ds, theta, b, replacement=True):
    """
    Exact variance of the batch residual eps_B = E_B[theta x^2 - y x] over all batches.

    With replacement every ordered b-tuple is equally likely; without, every
    b-subset is.
    """
    x, y = _scalarColumns(ds)
    perPoint = theta * x**2 - y * x
    if replacement:
        batches = itertools.product(range(ds.n), repeat=b)
    else:
        batches = itertools.combinations(range(ds.n), b)
    means = np.array([np.mean(perPoint[list(batch)]) for batch in batches])
    return float(np.var(means))


def balancednessGaps(net):
    """Return the (L-1) x d array G_i = W_{i+1}[j,j]^2 - W_i[j,j]^2 of a diagonal network."""
    _requireDiagonal(net)
    chains = net.chains()
    return chains[1:]**2 - chains[:-1]**2


def balancednessLevels(chain, component=0):
    """
    Build the balancedness hierarchy of one chain.

    The chain is sorted by magnitude (theta_1 smallest). Level 1 is the sorted
    chain itself, level 2 is theta_i^2 - theta_1^2, and level j is
    (G^{j-1}_i)^2 - (G^{j-1}_{j-1})^2.
    """
    theta = np.sort(np.abs(np.asarray(chain, dtype=float)))
    levels = [theta]
    if theta.size > 1:
        levels.append(theta**2 - theta[0]**2)
        for level in range(3, theta.size + 1):
            previous = levels[-1]
            levels.append(previous**2 - previous[level - 2]**2)
    return BalancednessState(component, levels)


def balancednessUpdate(net, X, Y, eta, weightdecay=0.0):
    """
    Predict the balancedness gaps after one step of a diagonal linear network on (X, Y).

    With e_j = P_j E_B[x_j^2] - E_B[y_j x_j] and c = prod_{h != i, i+1} W_h[j,j],
    each gap is multiplied by (1 - eta*lambda)^2 - eta^2 c^2 e_j^2.
    """
    _requireDiagonal(net)
    _requireLinear(net)
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    chains = net.chains()
    depth = chains.shape[0]
    product = np.prod(chains, axis=0)
    error = product * np.mean(X**2, axis=0) - np.mean(Y * X, axis=0)
    gaps = balancednessGaps(net)
    predicted = np.empty_like(gaps)
    decay = (1.0 - eta * weightdecay)**2
    for i in range(depth - 1):
        others = [h for h in range(depth) if h not in (i, i + 1)]
        outer = np.prod(chains[others], axis=0) if others else np.ones(chains.shape[1])
        predicted[i] = gaps[i] * (decay - eta**2 * outer**2 * error**2)
    return predicted


def diagonalChainStep(chains, secondMoment, crossMoment, eta):
    """
    One full-batch GD step of many independent diagonal chains.

    chains is S x L; secondMoment and crossMoment are E[x_j^2] and E[y_j x_j]
    per chain (scalars or length-S arrays); eta may be per chain. Each weight
    moves by -eta * (prod of the other weights) * (P s - c).
    """
    chains = np.asarray(chains, dtype=float)
    depth = chains.shape[1]
    error = np.prod(chains, axis=1) * secondMoment - crossMoment
    others = np.empty_like(chains)
    for h in range(depth):
        others[:, h] = np.prod(np.delete(chains, h, axis=1), axis=1)
    return chains - (np.asarray(eta) * error)[:, np.newaxis] * others


def convergenceForecast(b, eta, residual, g0, delta1, delta2, level=2):
    """
    Order-of-magnitude step count for SGD to zero a chain weight at a given level.

    With c = residual / sqrt(b), level 2 gives b / (eta^2 residual^2) times
    (log g0 - log delta2 - log delta1); level i > 2 gives (eta c)^(-2^(i-1))
    times (2^(i-1) log g0 - 2^i log delta1 - log delta2). Constants are unit,
    so only ratios between forecasts are meaningful. A chain that already starts
    below the threshold (negative log factor) is forecast to need 0 steps.
    """
    if min(b, eta, residual, g0, delta1, delta2) <= 0:
        raise ValueError("forecast inputs must be positive")
    if delta1 >= 1 or delta2 >= 1:
        raise ValueError("delta1 and delta2 must be below 1")
    if level < 2:
        raise ValueError("the forecast starts at level 2")
    rate = eta * residual / math.sqrt(b)
    exponent = 2**(level - 1)
    prefactor = rate**(-exponent)
    if level == 2:
        logFactor = math.log(g0) - math.log(delta2) - math.log(delta1)
    else:
        logFactor = exponent * math.log(g0) - 2 * exponent * math.log(delta1) - math.log(delta2)
    if logFactor < 0.0:
        logger.debug("g0 = %g is already below the level-%d threshold", g0, level)
        logFactor = 0.0
    inputs = {"b": b, "eta": eta, "residual": residual, "g0": g0,
              "delta1": delta1, "delta2": delta2, "level": level}
    return ConvergenceForecast(prefactor * logFactor, prefactor, logFactor, inputs)
