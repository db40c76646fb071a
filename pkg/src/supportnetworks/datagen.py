"""
Builds the datasets the training experiments run on.

Synthetic data:
    generateSynthetic       standard-normal inputs whose target depends on the first r
                            coordinates only. Every row is present twice, once with +eps*g
                            and once with -eps*g label noise, so the perturbations cancel
                            exactly in every first moment.
    generateDiagonalTask    the same idea for diagonal networks: one label component per
                            input coordinate, with the irrelevant components carrying pure
                            (misspecified) noise.
    generateExactFixture    orthogonal input columns, labels with no projection on the
                            irrelevant columns: the relevant/irrelevant split holds exactly.
    toyDataset              the two-point scalar datasets D1 and D2.
    twoBatchDataset         two scalar points whose squared inputs sit delta either side of s.

Relevance analysis:
    computeRelevance        relevant / spanned irrelevant / unspanned directions of a dataset.
    checkAssumption1        cross second moment between relevant and irrelevant directions.

IDX ingestion (the MNIST distribution format):
    The files are big-endian. An image file starts with the magic number 0x00000803
    followed by the image count, the row count and the column count as unsigned 32-bit
    integers, then one unsigned byte per pixel. A label file starts with 0x00000801 and
    the label count, then one unsigned byte per label.
"""
import logging
import os
from collections import namedtuple

import numpy as np

from .linalg import symEigen

logger = logging.getLogger(__name__)

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

ToyPoint = namedtuple("ToyPoint", ["x", "y"])

TOY_DATASETS = {
    "D1": [ToyPoint(1.0, -1.0), ToyPoint(1.0, 1.0)],
    "D2": [ToyPoint(1.0, 0.0), ToyPoint(3.0, 0.0)],
}

AssumptionCheck = namedtuple("AssumptionCheck", ["holds", "violation"])


class Dataset:
    """
    Input and label matrices, with optional ground-truth relevance metadata.

    X is n x d, Y is n x k. `relevant` lists the coordinates the target was built
    from when that is known. Both matrices are read-only once the dataset exists.
    """

    def __init__(self, X, Y, name="dataset", relevant=None):
        X = np.array(X, dtype=float)
        Y = np.array(Y, dtype=float)
        if X.ndim == 1:
            X = X[:, np.newaxis]
        if Y.ndim == 1:
            Y = Y[:, np.newaxis]
        if X.ndim != 2 or Y.ndim != 2:
            raise ValueError("X and Y must be two-dimensional")
        if X.shape[0] < 1:
            raise ValueError("a dataset needs at least one row")
        if X.shape[0] != Y.shape[0]:
            raise ValueError("X has {} rows but Y has {}".format(X.shape[0], Y.shape[0]))
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise ValueError("dataset entries must be finite")
        if relevant is not None:
            relevant = sorted(int(j) for j in relevant)
            if relevant and (relevant[0] < 0 or relevant[-1] >= X.shape[1]):
                raise IndexError("relevant coordinates out of range for d={}".format(X.shape[1]))
        X.setflags(write=False)
        Y.setflags(write=False)
        self.X = X
        self.Y = Y
        self.name = name
        self.relevant = relevant

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def d(self):
        return self.X.shape[1]

    @property
    def k(self):
        return self.Y.shape[1]

    @property
    def irrelevant(self):
        """Coordinates outside the ground-truth support, or None if the support is unknown."""
        if self.relevant is None:
            return None
        relevant = set(self.relevant)
        return [j for j in range(self.d) if j not in relevant]

    def secondMoment(self):
        """Return E[x x^T] as a d x d matrix."""
        return self.X.T @ self.X / self.n

    def crossMoment(self):
        """Return E[y x^T] as a k x d matrix."""
        return self.Y.T @ self.X / self.n

    def batch(self, indices):
        """Return the (X, Y) rows selected by indices."""
        return self.X[indices], self.Y[indices]

    def __repr__(self):
        return "Dataset(name={!r}, n={}, d={}, k={})".format(self.name, self.n, self.d, self.k)


def generateSynthetic(d, r, m, target="linear-sum", eps=0.0, seed=0, exact=False, unspanned=0):
    """
    Generate the paired-noise synthetic dataset with support {0, ..., r-1}.

    m standard-normal input rows are drawn; the irrelevant columns are centred
    to zero mean, and the last `unspanned` columns are set to zero. The clean
    target is the sum of the relevant coordinates (or its sine). The returned
    dataset has n = 2m rows: [X; X] with labels [y + eps*g; y - eps*g], using
    the same standard-normal g for both copies of a row.

    With exact=True the spanned irrelevant columns are additionally made
    orthogonal to the constant vector, to every relevant column, to the clean
    target and to each other (keeping their norms), so that the cross second
    moments vanish to machine precision and the irrelevant block of E[x x^T]
    is diagonal.
    """
    if not 1 <= r <= d:
        raise ValueError("need 1 <= r <= d, got r={}, d={}".format(r, d))
    if m < 2:
        raise ValueError("need m >= 2 samples, got {}".format(m))
    if not 0 <= unspanned <= d - r:
        raise ValueError("unspanned columns must lie among the d-r irrelevant ones")
    if target not in ("linear-sum", "sine-of-sum"):
        raise ValueError("unknown target: {}".format(target))
    if eps < 0:
        raise ValueError("eps must be non-negative")

    rng = np.random.default_rng(seed)
    X = rng.standard_normal((m, d))
    g = rng.standard_normal(m)

    spanned = list(range(r, d - unspanned))
    if unspanned:
        X[:, d - unspanned:] = 0.0
    X[:, spanned] -= X[:, spanned].mean(axis=0)

    clean = X[:, :r].sum(axis=1)
    if target == "sine-of-sum":
        clean = np.sin(clean)

    if exact and spanned:
        X[:, spanned] = _orthogonalise(X[:, spanned], np.column_stack([np.ones(m), X[:, :r], clean]))

    X = np.vstack([X, X])
    Y = np.concatenate([clean + eps * g, clean - eps * g])
    name = "synthetic-{}-d{}-r{}-m{}".format(target, d, r, m)
    return Dataset(X, Y, name=name, relevant=range(r))


def _orthogonalise(columns, against):
    """Project columns off span(against), then orthogonalise them among themselves keeping their norms."""
    basis, _ = np.linalg.qr(against)
    projected = columns - basis @ (basis.T @ columns)
    norms = np.linalg.norm(columns, axis=0)
    orthonormal, _ = np.linalg.qr(projected)
    # Twice is enough for the cross terms to vanish to rounding
    orthonormal -= basis @ (basis.T @ orthonormal)
    orthonormal, _ = np.linalg.qr(orthonormal)
    return orthonormal * norms


def generateDiagonalTask(d, r, m, eps=1.0, seed=0, coefficient=1.0):
    """
    Generate a d-output dataset for diagonal networks.

    Relevant label components are coefficient * x[j] (j < r). Irrelevant label
    components are +eps*g_j on the first copy of each row and -eps*g_j on the
    second, so E[y_j x_j] = 0 exactly while E[y_j^2 x_j^2] > 0.
    """
    if not 0 <= r <= d:
        raise ValueError("need 0 <= r <= d, got r={}, d={}".format(r, d))
    if m < 2:
        raise ValueError("need m >= 2 samples, got {}".format(m))
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((m, d))
    G = rng.standard_normal((m, d - r))
    X[:, r:] -= X[:, r:].mean(axis=0)

    Y1 = np.zeros((m, d))
    Y2 = np.zeros((m, d))
    Y1[:, :r] = Y2[:, :r] = coefficient * X[:, :r]
    Y1[:, r:] = eps * G
    Y2[:, r:] = -eps * G
    name = "diagonal-d{}-r{}-m{}".format(d, r, m)
    return Dataset(np.vstack([X, X]), np.vstack([Y1, Y2]), name=name, relevant=range(r))


def generateExactFixture(d, r, n, k=1, seed=0, unspanned=0):
    """
    Generate a dataset on which the relevant/irrelevant split holds exactly.

    The spanned input columns are orthogonal with random second moments in
    [0.5, 2]; the last `unspanned` columns are zero. Labels are X_rel C plus a
    component orthogonal to every input column.
    """
    if not 1 <= r <= d - unspanned:
        raise ValueError("need 1 <= r <= d - unspanned")
    if n < d + k + 1:
        raise ValueError("need n > d + k rows to orthogonalise the fixture")
    rng = np.random.default_rng(seed)
    spanned = d - unspanned
    raw = rng.standard_normal((n, spanned + k))
    q, _ = np.linalg.qr(raw)
    moments = rng.uniform(0.5, 2.0, size=spanned)
    X = np.zeros((n, d))
    X[:, :spanned] = q[:, :spanned] * np.sqrt(n * moments)
    C = rng.standard_normal((r, k))
    noise = q[:, spanned:] * np.sqrt(n) * 0.1
    Y = X[:, :r] @ C + noise
    return Dataset(X, Y, name="exact-fixture-d{}-r{}".format(d, r), relevant=range(r))


def toyDataset(which):
    """Return the two-point toy dataset D1 or D2 as a list of ToyPoints."""
    try:
        return list(TOY_DATASETS[which])
    except KeyError as err:
        raise ValueError("unknown toy dataset: {}".format(which)) from err


def toyToDataset(points, name="toy"):
    """Wrap a list of ToyPoints as an n x 1 Dataset with the single coordinate marked irrelevant."""
    X = [[point.x] for point in points]
    Y = [[point.y] for point in points]
    return Dataset(X, Y, name=name, relevant=[])


def twoBatchDataset(secondmoment, delta):
    """Two scalar points with x^2 = s - delta and s + delta and zero labels."""
    if not 0 <= delta <= secondmoment:
        raise ValueError("need 0 <= delta <= secondmoment")
    X = [[np.sqrt(secondmoment - delta)], [np.sqrt(secondmoment + delta)]]
    return Dataset(X, [[0.0], [0.0]], name="two-batch", relevant=[])


class RelevanceDecomposition:
    """
    Orthonormal basis splitting the input space into relevant, spanned irrelevant
    and unspanned directions.

    The columns of `basis` are ordered [relevant | irrelevant spanned | unspanned],
    with r + i + u = d. `lambdaXX` and `lambdaYX` are E[x x^T] and E[y x^T] in
    basis coordinates; `misspec` holds one misspecification level per spanned
    irrelevant direction.
    """

    def __init__(self, basis, r, i, u, lambdaXX, lambdaYX, misspec):
        self.basis = basis
        self.r = r
        self.i = i
        self.u = u
        self.lambdaXX = lambdaXX
        self.lambdaYX = lambdaYX
        self.misspec = misspec

    @property
    def d(self):
        return self.basis.shape[0]

    @property
    def irrelevant(self):
        """Basis indices of all irrelevant directions, spanned and unspanned."""
        return list(range(self.r, self.d))

    @property
    def unspanned(self):
        return list(range(self.r + self.i, self.d))

    @classmethod
    def fromGroundTruth(cls, ds):
        """
        Build the coordinate-basis split from the dataset's ground-truth support.

        Irrelevant coordinates with zero second moment are counted as unspanned.
        """
        if ds.relevant is None:
            raise ValueError("dataset {} carries no ground-truth support".format(ds.name))
        moments = np.mean(ds.X**2, axis=0)
        irrelevant = ds.irrelevant
        spanned = [j for j in irrelevant if moments[j] > 0.0]
        unspanned = [j for j in irrelevant if moments[j] == 0.0]
        order = list(ds.relevant) + spanned + unspanned
        basis = np.eye(ds.d)[:, order]
        return cls._fromBasis(ds, basis, len(ds.relevant), len(spanned), len(unspanned))

    @classmethod
    def _fromBasis(cls, ds, basis, r, i, u):
        lambdaXX = basis.T @ ds.secondMoment() @ basis
        lambdaYX = ds.crossMoment() @ basis
        misspec = np.array([_misspecification(ds, basis[:, j]) for j in range(r, r + i)])
        return cls(basis, r, i, u, lambdaXX, lambdaYX, misspec)


def _misspecification(ds, direction):
    """R = E[|y|^2 <w,x>^2] - |E[y <w,x>]|^2 along one input direction."""
    projection = ds.X @ direction
    energy = np.mean(np.sum(ds.Y**2, axis=1) * projection**2)
    correlation = ds.Y.T @ projection / ds.n
    return max(0.0, energy - float(correlation @ correlation))


def componentMisspecification(ds):
    """Return R_j = E[y_j^2 x_j^2] - E[y_j x_j]^2 for each coordinate of a d-output dataset."""
    if ds.k != ds.d:
        raise ValueError("per-coordinate misspecification needs as many label components as inputs")
    energy = np.mean(ds.Y**2 * ds.X**2, axis=0)
    correlation = np.mean(ds.Y * ds.X, axis=0)
    return energy - correlation**2


def computeRelevance(ds, tol=None):
    """
    Decompose the input space of ds into relevant and irrelevant directions.

    Relevant directions are the right singular directions of E[y x^T] whose
    singular value exceeds tol. The orthogonal complement is diagonalised with
    respect to E[x x^T]; complement directions with second moment above tol are
    spanned irrelevant, the rest unspanned. With tol=None each test uses
    1e-6 times the largest singular value (of E[y x^T], respectively E[x x^T]).
    """
    if ds.n == 0:
        raise ValueError("cannot analyse an empty dataset")
    if tol is not None and tol <= 0:
        raise ValueError("tol must be positive")
    crossMoment = ds.crossMoment()
    secondMoment = ds.secondMoment()

    labelSpectrum = symEigen(crossMoment.T @ crossMoment)
    singular = np.sqrt(np.clip(labelSpectrum.values, 0.0, None))
    labelTol = tol if tol is not None else 1e-6 * singular[0]
    r = int(np.sum(singular > labelTol)) if singular[0] > 0.0 else 0
    relevantBasis = labelSpectrum.vectors[:, :r]
    complement = labelSpectrum.vectors[:, r:]

    inputTol = tol if tol is not None else 1e-6 * max(symEigen(secondMoment).values[0], 0.0)
    if complement.shape[1]:
        inputSpectrum = symEigen(complement.T @ secondMoment @ complement)
        irrelevantBasis = complement @ inputSpectrum.vectors
        i = int(np.sum(inputSpectrum.values > inputTol))
    else:
        irrelevantBasis = complement
        i = 0
    u = ds.d - r - i
    basis = np.hstack([relevantBasis, irrelevantBasis])
    logger.info("relevance of %s: r=%d, i=%d, u=%d", ds.name, r, i, u)
    return RelevanceDecomposition._fromBasis(ds, basis, r, i, u)


def checkAssumption1(ds, dec, tol):
    """
    Check that relevant and irrelevant directions are uncorrelated on ds.

    Returns AssumptionCheck(holds, violation) where violation is the largest
    |E[<v,x><w,x>]| over relevant basis vectors v and irrelevant w. With ds=None
    the second moment dec was built from (dec.lambdaXX) is checked.
    """
    if dec.r == 0 or dec.r == dec.basis.shape[1]:
        return AssumptionCheck(True, 0.0)
    if ds is None:
        cross = dec.lambdaXX[:dec.r, dec.r:]
    else:
        cross = dec.basis[:, :dec.r].T @ ds.secondMoment() @ dec.basis[:, dec.r:]
    violation = float(np.max(np.abs(cross)))
    return AssumptionCheck(violation <= tol, violation)


def _readHeader(data, path, magic, count):
    """Read the big-endian magic number and the `count` dimension words of an IDX file."""
    headerBytes = 4 * (1 + count)
    if len(data) < headerBytes:
        raise IOError("IDX file {} truncated at byte offset {}: header needs {} bytes".format(
            path, len(data), headerBytes))
    words = np.frombuffer(data, dtype=">u4", count=1 + count)
    if int(words[0]) != magic:
        raise IOError("bad magic number 0x{:08x} at byte offset 0 in {} (expected 0x{:08x})".format(
            int(words[0]), path, magic))
    return [int(word) for word in words[1:]], headerBytes


def loadIdx(imagesPath, labelsPath, center=False):
    """
    Load an IDX image/label file pair as a Dataset.

    Images are flattened row-major and scaled to [0, 1]; labels become one-hot
    rows over the ten digit classes. With center=True every column is shifted
    to zero mean (all-zero columns stay zero).
    """
    with open(imagesPath, "rb") as flines:
        imageData = flines.read()
    with open(labelsPath, "rb") as flines:
        labelData = flines.read()

    (count, rows, cols), offset = _readHeader(imageData, imagesPath, IMAGE_MAGIC, 3)
    pixels = count * rows * cols
    if len(imageData) < offset + pixels:
        raise IOError("IDX file {} truncated at byte offset {}: expected {} pixel bytes".format(
            imagesPath, len(imageData), pixels))
    images = np.frombuffer(imageData, dtype=np.uint8, count=pixels, offset=offset)

    (labelCount,), offset = _readHeader(labelData, labelsPath, LABEL_MAGIC, 1)
    if labelCount != count:
        raise IOError("{} holds {} labels for {} images".format(labelsPath, labelCount, count))
    if len(labelData) < offset + labelCount:
        raise IOError("IDX file {} truncated at byte offset {}: expected {} label bytes".format(
            labelsPath, len(labelData), labelCount))
    labels = np.frombuffer(labelData, dtype=np.uint8, count=labelCount, offset=offset)
    if labels.size and labels.max() > 9:
        raise IOError("label {} out of range in {}".format(int(labels.max()), labelsPath))

    X = images.reshape(count, rows * cols) / 255.0
    if center:
        X = X - X.mean(axis=0)
    Y = np.zeros((count, 10))
    Y[np.arange(count), labels] = 1.0
    return Dataset(X, Y, name=os.path.basename(imagesPath))
