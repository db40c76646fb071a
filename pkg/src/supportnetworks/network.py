"""
Stores the network definitions: dense and diagonal stacks of bias-free layers.

A network computes f(x) = W_L . s(W_{L-1} . ... s(W_1 . x)) where s is the
identity or a ReLU. Dense layers hold full matrices; diagonal layers hold only
their diagonals, so that every input coordinate passes through its own scalar
chain W_1[j,j] ... W_L[j,j].

The loss everywhere is half the mean squared error, (1/2n) sum |f(x) - y|^2.

Checkpoints are JSON documents:
    {"format_version": 1,
     "spec": {"widths": [...], "activation": ..., "topology": ...},
     "weights": [nested lists, one per layer]}
Floats are written with Python's repr, so a saved network loads back bit for bit.
"""
import json
import logging
import math

import numpy as np

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
ACTIVATIONS = ("identity", "relu")
TOPOLOGIES = ("dense", "diagonal")
INIT_SCHEMES = ("kaiming-normal", "kaiming-uniform", "iid-normal", "constant", "explicit")


class NetworkSpec:
    """Architecture of a network: layer widths from input d to output k, activation and topology."""

    def __init__(self, widths, activation="identity", topology="dense"):
        widths = [int(width) for width in widths]
        if len(widths) < 2:
            raise ValueError("a network needs at least one layer (two widths)")
        if min(widths) < 1:
            raise ValueError("layer widths must be positive")
        if activation not in ACTIVATIONS:
            raise ValueError("activation must be one of {}".format(ACTIVATIONS))
        if topology not in TOPOLOGIES:
            raise ValueError("topology must be one of {}".format(TOPOLOGIES))
        if topology == "diagonal" and len(set(widths)) != 1:
            raise ValueError("diagonal topology needs all widths equal, got {}".format(widths))
        self.widths = widths
        self.activation = activation
        self.topology = topology

    @property
    def depth(self):
        return len(self.widths) - 1

    @property
    def diagonal(self):
        return self.topology == "diagonal"

    @property
    def linear(self):
        return self.activation == "identity"

    def layerShape(self, layer):
        """Shape of the stored weights of layer (0-based)."""
        if self.diagonal:
            return (self.widths[0],)
        return (self.widths[layer + 1], self.widths[layer])

    def toDict(self):
        return {"widths": list(self.widths), "activation": self.activation, "topology": self.topology}

    @classmethod
    def fromDict(cls, doc):
        return cls(doc["widths"], doc.get("activation", "identity"), doc.get("topology", "dense"))

    def __eq__(self, other):
        return isinstance(other, NetworkSpec) and self.toDict() == other.toDict()

    def __repr__(self):
        return "NetworkSpec(widths={}, activation={!r}, topology={!r})".format(
            self.widths, self.activation, self.topology)


class Network:
    """Holds a NetworkSpec and its layer weights W_1 ... W_L, and offers forward and backward passes."""

    def __init__(self, spec, weights):
        if len(weights) != spec.depth:
            raise ValueError("expected {} weight arrays, got {}".format(spec.depth, len(weights)))
        checked = []
        for layer, weight in enumerate(weights):
            weight = np.array(weight, dtype=float)
            if weight.shape != spec.layerShape(layer):
                raise ValueError("layer {} has shape {}, expected {}".format(
                    layer + 1, weight.shape, spec.layerShape(layer)))
            checked.append(weight)
        self.spec = spec
        self.weights = checked

    def copy(self):
        return Network(self.spec, [weight.copy() for weight in self.weights])

    def isFinite(self):
        return all(np.all(np.isfinite(weight)) for weight in self.weights)

    def _affine(self, layer, H):
        """Apply layer (0-based) to the rows of H."""
        weight = self.weights[layer]
        if self.spec.diagonal:
            return H * weight
        return H @ weight.T

    def _propagate(self, X):
        """Forward pass over the rows of X, keeping every layer input and every mask."""
        inputs = []
        masks = []
        H = X
        for layer in range(self.spec.depth - 1):
            inputs.append(H)
            Z = self._affine(layer, H)
            if self.spec.linear:
                mask = np.ones_like(Z)
            else:
                # ties at zero are switched off
                mask = (Z > 0.0).astype(float)
            masks.append(mask)
            H = Z * mask
        inputs.append(H)
        return self._affine(self.spec.depth - 1, H), inputs, masks

    def _checkInput(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.spec.widths[0]:
            raise ValueError("inputs must have {} columns, got shape {}".format(self.spec.widths[0], X.shape))
        return X

    def forward(self, x):
        """
        Evaluate the network on one input vector.

        Returns (output, masks), where masks holds one 0/1 vector per hidden
        layer (all ones for the identity activation).
        """
        x = np.asarray(x, dtype=float)
        if x.ndim != 1:
            raise ValueError("forward takes a single input vector")
        output, _, masks = self._propagate(self._checkInput(x[np.newaxis, :]))
        return output[0], [mask[0] for mask in masks]

    def predict(self, X):
        """Evaluate the network on the rows of X."""
        output, _, _ = self._propagate(self._checkInput(X))
        return output

    def loss(self, X, Y):
        """Half mean squared error on the rows of (X, Y)."""
        residual = self.predict(X) - np.asarray(Y, dtype=float)
        return 0.5 * float(np.sum(residual**2)) / residual.shape[0]

    def backwardMse(self, X, Y):
        """
        Return (gradients, loss) of the half mean squared error over a batch.

        Gradients has one array per layer, shaped like the weights. For ReLU
        networks the recorded masks give the subgradient (0 at a zero
        pre-activation).
        """
        X = self._checkInput(X)
        Y = np.asarray(Y, dtype=float)
        if X.shape[0] == 0:
            raise ValueError("cannot backpropagate an empty batch")
        if Y.ndim != 2 or Y.shape != (X.shape[0], self.spec.widths[-1]):
            raise ValueError("labels must have shape {}, got {}".format((X.shape[0], self.spec.widths[-1]), Y.shape))
        n = X.shape[0]
        output, inputs, masks = self._propagate(X)
        residual = output - Y
        loss = 0.5 * float(np.sum(residual**2)) / n

        gradients = [None] * self.spec.depth
        delta = residual / n
        for layer in reversed(range(self.spec.depth)):
            H = inputs[layer]
            if self.spec.diagonal:
                gradients[layer] = np.sum(delta * H, axis=0)
            else:
                gradients[layer] = delta.T @ H
            if layer > 0:
                if self.spec.diagonal:
                    delta = delta * self.weights[layer]
                else:
                    delta = delta @ self.weights[layer]
                delta = delta * masks[layer - 1]
        return gradients, loss

    def endToEnd(self):
        """
        Return the linear map W_L ... W_1 (linear networks only).

        For diagonal networks this is the vector of chain products.
        """
        if not self.spec.linear:
            raise ValueError("the end-to-end map is only defined for linear networks")
        return self.partialProduct(self.spec.depth)

    def partialProduct(self, layers):
        """Return W_layers ... W_1 (diagonal networks: the elementwise product of the first `layers` diagonals)."""
        if self.spec.diagonal:
            return np.prod(np.array(self.weights[:layers]), axis=0)
        product = np.eye(self.spec.widths[0])
        for weight in self.weights[:layers]:
            product = weight @ product
        return product

    def downstreamProduct(self):
        """
        Return W~ = W_L ... W_2, the map applied after the first layer.

        For diagonal networks this is the vector of per-chain products of layers 2..L.
        """
        if self.spec.diagonal:
            if self.spec.depth == 1:
                return np.ones(self.spec.widths[0])
            return np.prod(np.array(self.weights[1:]), axis=0)
        product = np.eye(self.spec.widths[1])
        for weight in self.weights[1:]:
            product = weight @ product
        return product

    def chains(self):
        """Return the L x d array of diagonal weights (diagonal networks only)."""
        if not self.spec.diagonal:
            raise ValueError("chains are only defined for diagonal networks")
        return np.array(self.weights)

    def flatParameters(self):
        return np.concatenate([weight.ravel() for weight in self.weights])

    def setFlatParameters(self, theta):
        """Overwrite every weight from one flat parameter vector."""
        theta = np.asarray(theta, dtype=float)
        sizes = [weight.size for weight in self.weights]
        if theta.size != sum(sizes):
            raise ValueError("expected {} parameters, got {}".format(sum(sizes), theta.size))
        start = 0
        for layer, size in enumerate(sizes):
            self.weights[layer] = theta[start:start + size].reshape(self.weights[layer].shape).copy()
            start += size

    def flatGradient(self, X, Y):
        gradients, _ = self.backwardMse(X, Y)
        return np.concatenate([gradient.ravel() for gradient in gradients])

    def save(self, path):
        """Write the checkpoint document to path."""
        doc = {
            "format_version": CHECKPOINT_VERSION,
            "spec": self.spec.toDict(),
            "weights": [weight.tolist() for weight in self.weights],
        }
        with open(path, "w") as flines:
            json.dump(doc, flines)
        logger.info("network checkpoint written to %s", path)


def loadNetwork(path):
    """Read a checkpoint written by Network.save."""
    with open(path) as flines:
        try:
            doc = json.load(flines)
        except json.JSONDecodeError as err:
            raise IOError("checkpoint {} is not valid JSON".format(path)) from err
    if doc.get("format_version") != CHECKPOINT_VERSION:
        raise IOError("checkpoint {} has unsupported format version {!r}".format(path, doc.get("format_version")))
    try:
        spec = NetworkSpec.fromDict(doc["spec"])
        return Network(spec, doc["weights"])
    except (KeyError, ValueError) as err:
        raise IOError("checkpoint {} is malformed: {}".format(path, err)) from err


def initialiseNetwork(spec, scheme="kaiming-normal", seed=0, scale=1.0, values=None, weights=None):
    """
    Initialise a network according to `scheme`.

    kaiming-normal   N(0, 2 / fan_in) entries
    kaiming-uniform  U(-sqrt(6 / fan_in), sqrt(6 / fan_in)) entries
    iid-normal       N(0, scale^2) entries
    constant         every entry of layer l equal to values[l]
    explicit         `weights` copied verbatim

    Diagonal layers have fan-in 1. Layers are drawn in order from one
    generator seeded with `seed`, so the result is deterministic per seed.
    """
    if scheme not in INIT_SCHEMES:
        raise ValueError("unknown initialisation scheme: {}".format(scheme))
    if scheme == "explicit":
        if weights is None:
            raise ValueError("the explicit scheme needs weights")
        return Network(spec, [np.array(weight, dtype=float).copy() for weight in weights])
    if scheme == "constant":
        if values is None or len(values) != spec.depth:
            raise ValueError("the constant scheme needs one value per layer ({})".format(spec.depth))
        return Network(spec, [np.full(spec.layerShape(layer), float(value))
                              for layer, value in enumerate(values)])

    rng = np.random.default_rng(seed)
    layers = []
    for layer in range(spec.depth):
        shape = spec.layerShape(layer)
        fanIn = 1 if spec.diagonal else spec.widths[layer]
        if scheme == "kaiming-normal":
            layers.append(rng.normal(0.0, math.sqrt(2.0 / fanIn), size=shape))
        elif scheme == "kaiming-uniform":
            bound = math.sqrt(6.0 / fanIn)
            layers.append(rng.uniform(-bound, bound, size=shape))
        else:
            layers.append(scale * rng.standard_normal(shape))
    return Network(spec, layers)


def checkGradients(net, X, Y, h=1e-5, floor=1e-4):
    """
    Compare backpropagated gradients with central finite differences.

    Returns the largest |g - g_fd| / max(|g| + |g_fd|, floor) over all
    parameters; the floor keeps entries with vanishing gradient from
    dominating the ratio.
    """
    analytic = net.flatGradient(X, Y)
    theta = net.flatParameters()
    probe = net.copy()
    numeric = np.empty_like(theta)
    for index in range(theta.size):
        shifted = theta.copy()
        shifted[index] = theta[index] + h
        probe.setFlatParameters(shifted)
        upper = probe.loss(X, Y)
        shifted[index] = theta[index] - h
        probe.setFlatParameters(shifted)
        lower = probe.loss(X, Y)
        numeric[index] = (upper - lower) / (2.0 * h)
    scale = np.maximum(np.abs(analytic) + np.abs(numeric), floor)
    return float(np.max(np.abs(analytic - numeric) / scale))


def minimumPreactivation(net, X):
    """Smallest |pre-activation| over all hidden units and rows of X (infinity for one-layer nets)."""
    X = net._checkInput(X)
    smallest = math.inf
    H = X
    for layer in range(net.spec.depth - 1):
        Z = net._affine(layer, H)
        smallest = min(smallest, float(np.min(np.abs(Z))))
        H = Z * (Z > 0.0) if not net.spec.linear else Z
    return smallest
