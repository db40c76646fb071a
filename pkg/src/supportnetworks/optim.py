"""
Gradient descent and mini-batch SGD, with optional weight decay.

Three algorithms share one update rule, theta <- (1 - eta*lambda) theta - eta * grad_B,
and differ only in the batches B they feed it:

    gd           every step uses the whole dataset
    sgd-with     every batch is an independent uniformly drawn subset of size b
    sgd-without  every epoch draws a fresh permutation and cuts it into batches of size b;
                 when b does not divide n the last batch of the epoch is smaller

All randomness comes from a numpy Generator seeded with the configured seed, so a
schedule (and hence a whole trajectory) replays bit for bit.
"""
import itertools
import logging
import math
from collections import namedtuple

import numpy as np

from .linalg import dominantEigenvalue

loggingLevels = {0: logging.ERROR, 1: logging.WARNING, 2: logging.INFO, 3: logging.DEBUG}

ALGORITHMS = ("gd", "sgd-with", "sgd-without")
# eta_max reported when the Hessian vanishes
ETA_MAX_CAP = 1e12
ZERO_CURVATURE = 1e-9

TrajectoryRecord = namedtuple("TrajectoryRecord", ["step", "loss", "irrelNorms", "gradNorm", "extras"])
TrajectoryRecord.__doc__ = """
State after `step` optimiser steps: full-dataset loss, per-layer irrelevant
norms, the norm of the batch gradient that produced the step, and probe extras.
"""


class DivergenceError(RuntimeError):
    """Raised when the loss or gradient stops being finite; carries the records made so far."""

    def __init__(self, step, records):
        super().__init__("training diverged at step {}".format(step))
        self.step = step
        self.records = records


class OptimizerConfig:
    """Algorithm, step size, batch size, weight decay, step count and seed of one run."""

    def __init__(self, algorithm="gd", eta=0.1, batchsize=1, weightdecay=0.0, steps=1000, seed=0):
        if algorithm not in ALGORITHMS:
            raise ValueError("algorithm must be one of {}, got {!r}".format(ALGORITHMS, algorithm))
        eta = float(eta)
        if not math.isfinite(eta) or eta < 0:
            raise ValueError("eta must be finite and non-negative, got {}".format(eta))
        if int(batchsize) != batchsize or batchsize < 1:
            raise ValueError("batchsize must be a positive integer, got {}".format(batchsize))
        weightdecay = float(weightdecay)
        if not math.isfinite(weightdecay) or weightdecay < 0:
            raise ValueError("weightdecay must be finite and non-negative")
        if int(steps) != steps or steps < 0:
            raise ValueError("steps must be a non-negative integer, got {}".format(steps))
        self.algorithm = algorithm
        self.eta = eta
        self.batchsize = int(batchsize)
        self.weightdecay = weightdecay
        self.steps = int(steps)
        self.seed = int(seed)

    def validateFor(self, n):
        """Raise ValueError if the batch size cannot be drawn from n points."""
        if self.algorithm != "gd" and self.batchsize > n:
            raise ValueError("batchsize {} exceeds the {} available points".format(self.batchsize, n))

    def epochLength(self, n):
        """Number of steps that make up one pass over n points."""
        if self.algorithm == "gd":
            return 1
        return math.ceil(n / self.batchsize)

    def toDict(self):
        return {"algorithm": self.algorithm, "eta": self.eta, "batchsize": self.batchsize,
                "weightdecay": self.weightdecay, "steps": self.steps, "seed": self.seed}


class BatchSchedule:
    """
    The batches of one run, generated lazily from the seeded generator.

    Iterating yields cfg.steps index arrays; every new iteration replays the
    same sequence.
    """

    def __init__(self, cfg, n):
        self.cfg = cfg
        self.n = n

    def _generate(self):
        cfg = self.cfg
        rng = np.random.default_rng(cfg.seed)
        if cfg.algorithm == "gd":
            full = np.arange(self.n)
            full.setflags(write=False)
            while True:
                yield full
        elif cfg.algorithm == "sgd-with":
            while True:
                yield rng.choice(self.n, size=cfg.batchsize, replace=False)
        else:
            while True:
                permutation = rng.permutation(self.n)
                for start in range(0, self.n, cfg.batchsize):
                    yield permutation[start:start + cfg.batchsize]

    def __iter__(self):
        return itertools.islice(self._generate(), self.cfg.steps)

    def take(self, count):
        """Return the first `count` batches, independent of cfg.steps."""
        return list(itertools.islice(self._generate(), count))


def makeSchedule(cfg, n):
    """Return the BatchSchedule of cfg over a dataset of n points."""
    cfg.validateFor(n)
    return BatchSchedule(cfg, n)


def step(net, X, Y, eta, weightdecay=0.0, frozen=()):
    """
    Apply one in-place update to net from the batch (X, Y).

    With weightdecay > 0 every weight is first multiplied by (1 - eta*weightdecay),
    including weights whose gradient is zero. Layers listed in `frozen`
    (0-based) are left untouched. Returns (gradients, batch loss).
    """
    if eta < 0:
        raise ValueError("eta must be non-negative")
    gradients, loss = net.backwardMse(X, Y)
    decay = 1.0 - eta * weightdecay
    for layer, gradient in enumerate(gradients):
        if layer in frozen:
            continue
        if weightdecay:
            net.weights[layer] *= decay
        net.weights[layer] -= eta * gradient
    return gradients, loss


def etaMax(net, ds, weightdecay=0.0, iters=200, tol=1e-6):
    """
    Return the instability threshold 2 / (lambda_max(H) + weightdecay) at the current weights.

    The Hessian of the full-batch loss is never formed: Hessian-vector products
    are central differences of the backpropagated gradient with step
    h = 1e-4 * (1 + |theta|), fed to power iteration. A vanishing Hessian
    without weight decay gives ETA_MAX_CAP.
    """
    theta = net.flatParameters()
    if not np.all(np.isfinite(theta)):
        raise RuntimeError("cannot estimate eta_max at non-finite weights")
    probe = net.copy()

    def gradientAt(point):
        probe.setFlatParameters(point)
        return probe.flatGradient(ds.X, ds.Y)

    if not np.all(np.isfinite(gradientAt(theta))):
        raise RuntimeError("non-finite gradient at the initial weights")
    h = 1e-4 * (1.0 + np.linalg.norm(theta))

    def hessianVectorProduct(vector):
        return (gradientAt(theta + h * vector) - gradientAt(theta - h * vector)) / (2.0 * h)

    estimate = dominantEigenvalue(hessianVectorProduct, theta.size, iters=iters, tol=tol)
    if not estimate.converged:
        logging.getLogger(__name__).warning("power iteration for eta_max did not converge in %d iterations", iters)
    curvature = estimate.value if estimate.value > ZERO_CURVATURE else 0.0
    denominator = curvature + weightdecay
    if denominator <= 0.0:
        return ETA_MAX_CAP
    return min(2.0 / denominator, ETA_MAX_CAP)


class Trainer:
    """
    Runs one trajectory of cfg.steps steps and records it.

    A record is made every `stride` steps and after the final step. Each record
    holds the full-dataset loss, the per-layer irrelevant norms returned by
    normProbe(net), the batch gradient norm, and the union of the dicts returned
    by each probe(net, step).
    """

    def __init__(self,
                 network,
                 dataset,
                 config,
                 probes=None,
                 normProbe=None,
                 stride=1,
                 checkStability=True,
                 verbosity=1):
        if stride < 1:
            raise ValueError("stride must be at least 1")
        self.network = network
        self.dataset = dataset
        self.config = config
        self.probes = list(probes or [])
        self.normProbe = normProbe
        self.stride = stride
        self.checkStability = checkStability
        self.etaMax = None

        # Reset the verbosity
        for handler in logging.root.handlers[:]:
            logging.root.removeHandler(handler)
        self.logger = logging.getLogger(__name__)
        self.logger.setLevel(loggingLevels[verbosity])
        for handler in self.logger.handlers[:]:
            self.logger.removeHandler(handler)
        self.logger.addHandler(logging.StreamHandler())

    def record(self, index, gradNorm):
        net = self.network
        loss = net.loss(self.dataset.X, self.dataset.Y)
        norms = np.asarray(self.normProbe(net)) if self.normProbe else np.zeros(0)
        extras = {}
        for probe in self.probes:
            extras.update(probe(net, index))
        return TrajectoryRecord(index, loss, norms, gradNorm, extras)

    def run(self):
        """Execute the configured steps, returning the list of TrajectoryRecords."""
        cfg = self.config
        ds = self.dataset
        schedule = makeSchedule(cfg, ds.n)
        if self.checkStability:
            self.etaMax = etaMax(self.network, ds, cfg.weightdecay)
            if cfg.eta >= self.etaMax:
                self.logger.warning("eta = %g is not below eta_max = %g: expect instability", cfg.eta, self.etaMax)
        self.logger.info("training on %s: %s, eta=%g, b=%d, lambda=%g, %d steps",
                         ds.name, cfg.algorithm, cfg.eta, cfg.batchsize, cfg.weightdecay, cfg.steps)

        records = []
        for index, batch in enumerate(schedule, start=1):
            X, Y = ds.batch(batch)
            gradients, batchLoss = step(self.network, X, Y, cfg.eta, cfg.weightdecay)
            gradNorm = math.sqrt(sum(float(np.sum(gradient**2)) for gradient in gradients))
            if not (math.isfinite(batchLoss) and math.isfinite(gradNorm)):
                self.logger.warning("non-finite loss at step %d", index)
                raise DivergenceError(index, records)
            if index % self.stride == 0 or index == cfg.steps:
                entry = self.record(index, gradNorm)
                if not math.isfinite(entry.loss):
                    self.logger.warning("non-finite loss at step %d", index)
                    raise DivergenceError(index, records)
                records.append(entry)
                self.logger.debug("step %d: loss %.6g, gradient norm %.3g", index, entry.loss, gradNorm)
        return records


def runTraining(net, ds, cfg, probes=None, normProbe=None, stride=1, checkStability=True, verbosity=1):
    """Train net in place on ds under cfg and return its TrajectoryRecords."""
    trainer = Trainer(net, ds, cfg, probes=probes, normProbe=normProbe, stride=stride,
                      checkStability=checkStability, verbosity=verbosity)
    return trainer.run()
