"""
Unit tests for the oracle module.

Units to be tested:

predictGdMultiplier
sufficientStatGdStep
twoStepCancellation
toyTwoStepRates
toyLoss
residualVarianceBound
batchResidualVariance
balancednessGaps / balancednessLevels / balancednessUpdate
diagonalChainStep
convergenceForecast
"""
import math
import supportnetworks
import numpy as np
import pytest


def alignedNetwork(d, width, seed):
    return supportnetworks.suites.alignedFixtureNetwork(d, width, 3, seed=seed)


"""
Tests for predictGdMultiplier

Inputs: net, decomposition, eta, entry (i, j) or coordinate j.
Output: ShrinkagePrediction with the one-step multiplier 1 - eta * a * E[x_j^2].

Input options:
 - dense linear network with W~^T W~ diagonal, exact data
 - diagonal network
 - relevant direction, ReLU network
"""


def test_oracle_predictgdmultiplier_dense_exact():
    """One GD step multiplies every irrelevant first-layer entry by exactly the predicted factor."""
    ds = supportnetworks.datagen.generateExactFixture(5, 2, 40, k=3, seed=2)
    dec = supportnetworks.datagen.RelevanceDecomposition.fromGroundTruth(ds)
    net = alignedNetwork(5, 3, seed=2)
    before = net.weights[0].copy()
    predictions = {(i, j): supportnetworks.oracle.predictGdMultiplier(net, dec, 0.01, (i, j))
                   for i in range(3) for j in range(2, 5)}
    supportnetworks.optim.step(net, ds.X, ds.Y, 0.01)
    for (i, j), prediction in predictions.items():
        assert net.weights[0][i, j] == pytest.approx(prediction.gdFactor * before[i, j], rel=1e-10)
        assert prediction.sgdExtra is None


def test_oracle_predictgdmultiplier_diagonal(diagonal_network, diagonal_dataset):
    dec = supportnetworks.datagen.RelevanceDecomposition.fromGroundTruth(diagonal_dataset)
    prediction = supportnetworks.oracle.predictGdMultiplier(diagonal_network, dec, 0.1, 2)
    chains = diagonal_network.chains()
    expected = 1.0 - 0.1 * (chains[1, 2] * chains[2, 2])**2 * np.mean(diagonal_dataset.X[:, 2]**2)
    assert prediction.gdFactor == pytest.approx(expected)
    assert prediction.entry == (2, 2)


def test_oracle_predictgdmultiplier_relevant_direction(diagonal_network, diagonal_dataset):
    dec = supportnetworks.datagen.RelevanceDecomposition.fromGroundTruth(diagonal_dataset)
    with pytest.raises(ValueError):
        supportnetworks.oracle.predictGdMultiplier(diagonal_network, dec, 0.1, 0)


def test_oracle_predictgdmultiplier_correlated_split(dense_network):
    """Without the orthogonalisation the relevant and irrelevant inputs are correlated: no prediction."""
    ds = supportnetworks.datagen.generateSynthetic(6, 2, 40, eps=0.01, seed=3)
    dec = supportnetworks.datagen.RelevanceDecomposition.fromGroundTruth(ds)
    assert not supportnetworks.datagen.checkAssumption1(None, dec, 1e-8).holds
    with pytest.raises(ValueError, match="correlated"):
        supportnetworks.oracle.predictGdMultiplier(dense_network, dec, 0.1, (0, 3))


def test_oracle_predictgdmultiplier_relu(exact_dataset):
    spec = supportnetworks.network.NetworkSpec([6, 3, 1], activation="relu")
    net = supportnetworks.network.initialiseNetwork(spec)
    dec = supportnetworks.datagen.RelevanceDecomposition.fromGroundTruth(exact_dataset)
    with pytest.raises(ValueError):
        supportnetworks.oracle.predictGdMultiplier(net, dec, 0.1, (0, 3))


"""
Tests for sufficientStatGdStep

Inputs: net, lambdaXX, lambdaYX, eta, r.
Output: the predicted change of W_1's irrelevant columns.
"""


def test_oracle_sufficientstat_matches_gd_step(dense_network, exact_dataset):
    """Holds for any dense linear network, whatever its alignment."""
    lambdaXX = exact_dataset.secondMoment()
    lambdaYX = exact_dataset.crossMoment()
    predicted = supportnetworks.oracle.sufficientStatGdStep(dense_network, lambdaXX, lambdaYX, 0.02, 2)
    before = dense_network.weights[0][:, 2:].copy()
    supportnetworks.optim.step(dense_network, exact_dataset.X, exact_dataset.Y, 0.02)
    assert np.allclose(dense_network.weights[0][:, 2:] - before, predicted, atol=1e-12)


def test_oracle_sufficientstat_wrong_shapes(dense_network):
    with pytest.raises(ValueError):
        supportnetworks.oracle.sufficientStatGdStep(dense_network, np.eye(5), np.zeros((1, 5)), 0.1, 2)


def test_oracle_sufficientstat_diagonal(diagonal_network):
    with pytest.raises(ValueError):
        supportnetworks.oracle.sufficientStatGdStep(diagonal_network, np.eye(3), np.zeros((3, 3)), 0.1, 1)


"""
Tests for the two-step and toy formulas

Inputs: alpha, delta; eta, a; parameter grids and toy points.
"""


def test_oracle_twostepcancellation():
    sgd, gd = supportnetworks.oracle.twoStepCancellation(0.2, 0.1)
    assert sgd == pytest.approx(0.9 * 0.7)
    assert gd == pytest.approx(0.64)
    # the SGD product is always smaller, by exactly delta^2
    assert gd - sgd == pytest.approx(0.01)


def test_oracle_toytwosteprates():
    gd, sgd = supportnetworks.oracle.toyTwoStepRates(0.01, 1.0)
    assert gd == pytest.approx(0.95**2)
    assert sgd == pytest.approx(0.99 * 0.91)
    assert sgd < gd


def test_oracle_toyloss_d1_minimum():
    """On D1 the labels cancel: the loss is 0.5 (ab)^2 + 0.5."""
    points = supportnetworks.datagen.toyDataset("D1")
    assert supportnetworks.oracle.toyLoss(0.0, 0.0, points) == pytest.approx(1.0 / 2.0 * 1.0)
    grid = supportnetworks.oracle.toyLoss(np.array([1.0, 2.0]), np.array([1.0, 0.5]), points)
    assert np.allclose(grid, [1.0, 1.0])


"""
Tests for the residual variance functions

Inputs: a scalar dataset, batch size b, theta, replacement.
"""


def test_oracle_residualvariancebound():
    ds = supportnetworks.datagen.toyToDataset(supportnetworks.datagen.toyDataset("D1"))
    # E[y^2 x^2] = 1, E[yx] = 0
    assert supportnetworks.oracle.residualVarianceBound(ds, 4) == pytest.approx(0.25)


def test_oracle_residualvariancebound_invalid_batch():
    ds = supportnetworks.datagen.toyToDataset(supportnetworks.datagen.toyDataset("D1"))
    with pytest.raises(ValueError):
        supportnetworks.oracle.residualVarianceBound(ds, 0)


def test_oracle_batchresidualvariance_with_and_without():
    """On D1 at theta = 0 the per-point residuals are +1 and -1."""
    ds = supportnetworks.datagen.toyToDataset(supportnetworks.datagen.toyDataset("D1"))
    # with replacement, b=1: variance 1; b=2: the mean of two +-1 draws has variance 1/2
    assert supportnetworks.oracle.batchResidualVariance(ds, 0.0, 1) == pytest.approx(1.0)
    assert supportnetworks.oracle.batchResidualVariance(ds, 0.0, 2) == pytest.approx(0.5)
    # without replacement, b=n: the only batch is the full dataset
    assert supportnetworks.oracle.batchResidualVariance(ds, 0.0, 2, replacement=False) == 0.0


def test_oracle_batchresidualvariance_at_fit():
    """At the least-squares fit the with-replacement variance is the per-point variance over b."""
    ds = supportnetworks.datagen.Dataset([[1.0], [2.0], [3.0]], [[1.0], [-1.0], [2.0]], relevant=[0])
    x, y = ds.X[:, 0], ds.Y[:, 0]
    theta = np.mean(x * y) / np.mean(x**2)
    for b in (1, 2, 3):
        exact = supportnetworks.oracle.batchResidualVariance(ds, theta, b)
        residual = np.var(theta * x**2 - y * x) / b
        assert exact == pytest.approx(residual)


"""
Tests for balancedness

Inputs: a diagonal network (or a chain), a batch, eta, weightdecay.
"""


def test_oracle_balancednessgaps(diagonal_network):
    chains = diagonal_network.chains()
    gaps = supportnetworks.oracle.balancednessGaps(diagonal_network)
    assert gaps.shape == (2, 3)
    assert np.allclose(gaps[1], chains[2]**2 - chains[1]**2)


def test_oracle_balancednessgaps_dense(dense_network):
    with pytest.raises(ValueError):
        supportnetworks.oracle.balancednessGaps(dense_network)


def test_oracle_balancednesslevels_by_hand():
    """Chain (3, -1, 2): sorted (1, 2, 3); level 2 (0, 3, 8); level 3 (0, 9, 64) - 9."""
    state = supportnetworks.oracle.balancednessLevels([3.0, -1.0, 2.0], component=4)
    assert state.component == 4
    assert list(state.levels[0]) == [1.0, 2.0, 3.0]
    assert list(state.levels[1]) == [0.0, 3.0, 8.0]
    assert list(state.levels[2]) == [-9.0, 0.0, 55.0]


def test_oracle_balancednessupdate_matches_step(diagonal_network, diagonal_dataset):
    """The predicted gaps after one step agree with the simulated ones."""
    X, Y = diagonal_dataset.batch(np.arange(5))
    predicted = supportnetworks.oracle.balancednessUpdate(diagonal_network, X, Y, 0.05, weightdecay=0.1)
    supportnetworks.optim.step(diagonal_network, X, Y, 0.05, weightdecay=0.1)
    assert np.allclose(supportnetworks.oracle.balancednessGaps(diagonal_network), predicted, atol=1e-12)


"""
Tests for diagonalChainStep

Inputs: S x L chains, per-chain moments, eta (scalar or per chain).
Output: the chains after one full-batch GD step.
"""


def test_oracle_diagonalchainstep_matches_network(diagonal_network, diagonal_dataset):
    s = np.mean(diagonal_dataset.X**2, axis=0)
    c = np.mean(diagonal_dataset.Y * diagonal_dataset.X, axis=0)
    stepped = supportnetworks.oracle.diagonalChainStep(diagonal_network.chains().T, s, c, 0.05)
    supportnetworks.optim.step(diagonal_network, diagonal_dataset.X, diagonal_dataset.Y, 0.05)
    assert np.allclose(stepped.T, diagonal_network.chains(), atol=1e-12)


def test_oracle_diagonalchainstep_per_chain_eta():
    chains = np.array([[1.0, 1.0], [1.0, 1.0]])
    stepped = supportnetworks.oracle.diagonalChainStep(chains, 1.0, 0.0, np.array([0.1, 0.2]))
    assert np.allclose(stepped, [[0.9, 0.9], [0.8, 0.8]])


"""
Tests for convergenceForecast

Inputs: b, eta, residual, g0, delta1, delta2, level.
"""


def test_oracle_convergenceforecast_level2():
    forecast = supportnetworks.oracle.convergenceForecast(4, 0.1, 2.0, 1.0, 0.1, 0.1)
    assert forecast.prefactor == pytest.approx(1.0 / 0.01)
    assert forecast.logFactor == pytest.approx(2 * math.log(10))


def test_oracle_convergenceforecast_scales_with_batch():
    """Doubling b doubles the level-2 forecast."""
    small = supportnetworks.oracle.convergenceForecast(2, 0.1, 1.0, 1.0, 0.1, 0.1)
    large = supportnetworks.oracle.convergenceForecast(4, 0.1, 1.0, 1.0, 0.1, 0.1)
    assert large.steps == pytest.approx(2 * small.steps)


def test_oracle_convergenceforecast_already_below_threshold():
    """g0 below delta1 * delta2 needs no steps, whatever the batch size."""
    for b in (2, 4):
        forecast = supportnetworks.oracle.convergenceForecast(b, 0.1, 1.0, 0.05, 0.5, 0.5)
        assert forecast.steps == 0.0
        assert forecast.logFactor == 0.0


def test_oracle_convergenceforecast_positive_above_threshold():
    forecast = supportnetworks.oracle.convergenceForecast(2, 0.1, 1.0, 0.5, 0.5, 0.5)
    assert forecast.steps > 0.0
    assert forecast.logFactor == pytest.approx(math.log(2.0))


def test_oracle_convergenceforecast_invalid():
    with pytest.raises(ValueError):
        supportnetworks.oracle.convergenceForecast(1, 0.1, 1.0, 1.0, 1.5, 0.1)
    with pytest.raises(ValueError):
        supportnetworks.oracle.convergenceForecast(1, 0.1, 1.0, 1.0, 0.1, 0.1, level=1)
