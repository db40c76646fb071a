"""
Unit tests for the runner module.

Units to be tested:

buildDataset
buildNetwork
irrelevantSplit
trajectoryTable
Experiment / run
    execute, summarise, write
cellLauncher
Sweep / sweep
    execute, aggregate, writeAggregate, writeFit
"""
import json
import math
import os
import supportnetworks
import numpy as np
import pytest


DIAGONAL = """
[dataset]
generator = diagonal
d = 3
r = 1
m = 20
eps = 0.5

[network]
topology = diagonal
depth = 2
init = constant
values = 1.0, 0.5

[optimizer]
algorithm = sgd-without
eta = 0.05
batchsize = 4
steps = 40
seed = 1

[probes]
metrics = chains, balancedness
stride = 5
"""

DENSE = """
[dataset]
generator = synthetic
d = 6
r = 2
m = 30
eps = 0.01
exact = true

[network]
depth = 3
width = 4

[optimizer]
algorithm = gd
eta = 0.01
steps = 30

[probes]
metrics = gramrank
stride = 10
"""


DIVERGING = ("[dataset]\ngenerator = toy\ntoy = D2\n[network]\ntopology = diagonal\ndepth = 1\n"
             "init = constant\nvalues = 1.0\n[optimizer]\neta = 10\nsteps = 1000\n")

SCALING = DIAGONAL.replace("eps = 0.5", "eps = 2.0").replace("steps = 40", "steps = 3000").replace(
    "stride = 5", "stride = 10")


def readCsv(path):
    with open(path) as flines:
        header = flines.readline().strip().split(",")
    return header, np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)


"""
Tests for the builders

Inputs: the typed [dataset] and [network] sections.
Output: a Dataset, a Network, the irrelevant split.

Input options:
 - every generator
 - diagonal topology with d != k
 - checkpoint with the wrong widths
 - explicit init without a checkpoint
 - idx without paths
"""


@pytest.mark.parametrize("generator,shape", [
    ("synthetic", (10, 15, 1)),
    ("diagonal", (10, 15, 15)),
    ("toy", (2, 1, 1)),
    ("twobatch", (2, 1, 1)),
])
def test_runner_builddataset_generators(generator, shape):
    config = supportnetworks.config.ExperimentConfig.fromDict({"dataset": {"generator": generator, "m": 5}})
    ds = supportnetworks.runner.buildDataset(config.dataset)
    assert (ds.n, ds.d, ds.k) == shape


def test_runner_builddataset_idx(write_idx):
    imagePath, labelPath = write_idx(np.zeros((4, 2, 3)), [0, 1, 2, 3])
    config = supportnetworks.config.ExperimentConfig.fromDict(
        {"dataset": {"generator": "idx", "images": imagePath, "labels": labelPath}})
    ds = supportnetworks.runner.buildDataset(config.dataset)
    assert (ds.n, ds.d, ds.k) == (4, 6, 10)
    # every pixel is zero, so every column is irrelevant
    assert supportnetworks.runner.irrelevantSplit(ds) == list(range(6))


def test_runner_builddataset_idx_without_paths():
    config = supportnetworks.config.ExperimentConfig.fromDict({"dataset": {"generator": "idx"}})
    with pytest.raises(ValueError):
        supportnetworks.runner.buildDataset(config.dataset)


def test_runner_buildnetwork_dense_widths(exact_dataset):
    config = supportnetworks.config.ExperimentConfig.fromDict({"network": {"depth": 3, "width": 5}})
    net = supportnetworks.runner.buildNetwork(config.network, exact_dataset)
    assert net.spec.widths == [6, 5, 5, 1]


def test_runner_buildnetwork_diagonal_needs_square(exact_dataset):
    config = supportnetworks.config.ExperimentConfig.fromDict({"network": {"topology": "diagonal"}})
    with pytest.raises(ValueError):
        supportnetworks.runner.buildNetwork(config.network, exact_dataset)


def test_runner_buildnetwork_checkpoint(exact_dataset, dense_network, tmp_path):
    path = str(tmp_path / "net.json")
    dense_network.save(path)
    config = supportnetworks.config.ExperimentConfig.fromDict({"network": {"checkpoint": path, "init": "explicit"}})
    net = supportnetworks.runner.buildNetwork(config.network, exact_dataset)
    assert np.array_equal(net.weights[0], dense_network.weights[0])


def test_runner_buildnetwork_checkpoint_wrong_widths(diagonal_dataset, dense_network, tmp_path):
    path = str(tmp_path / "net.json")
    dense_network.save(path)
    config = supportnetworks.config.ExperimentConfig.fromDict({"network": {"checkpoint": path}})
    with pytest.raises(ValueError):
        supportnetworks.runner.buildNetwork(config.network, diagonal_dataset)


def test_runner_buildnetwork_explicit_without_checkpoint(exact_dataset):
    config = supportnetworks.config.ExperimentConfig.fromDict({"network": {"init": "explicit"}})
    with pytest.raises(ValueError):
        supportnetworks.runner.buildNetwork(config.network, exact_dataset)


"""
Tests for trajectoryTable

Inputs: records, depth.
Output: the CSV header and rows; probe columns in first-appearance order, missing values NaN.
"""


def test_runner_trajectorytable_columns():
    records = [
        supportnetworks.optim.TrajectoryRecord(1, 0.5, np.array([1.0, 2.0]), 0.1, {"a": 1.0}),
        supportnetworks.optim.TrajectoryRecord(2, 0.4, np.array([0.5, 1.0]), 0.2, {"b": 3.0, "a": 2.0}),
    ]
    header, rows = supportnetworks.runner.trajectoryTable(records, 2)
    assert header == ["step", "loss", "irrel_norm_L1", "irrel_norm_L2", "grad_norm", "a", "b"]
    assert list(rows[1]) == [2.0, 0.4, 0.5, 1.0, 0.2, 2.0, 3.0]
    assert math.isnan(rows[0][6])


def test_runner_trajectorytable_empty():
    header, rows = supportnetworks.runner.trajectoryTable([], 3)
    assert len(header) == 6
    assert rows.shape == (0, 6)


"""
Tests for Experiment / run

Inputs: an experiment file, out, seedoverride, stride, verbosity.
Output: the output directory files and the summary document.

Input options:
 - diagonal network with chain and balancedness probes
 - dense network with the Gram rank probe
 - identical reruns
 - divergence: partial output and DivergenceError
 - probes that need a diagonal network on a dense one
"""


def test_runner_run_diagonal_outputs(write_config, tmp_path):
    path = write_config(DIAGONAL)
    out = str(tmp_path / "out")
    summary = supportnetworks.runner.run(path, out=out, verbosity=0)
    for name in ("trajectory.csv", "gram_init.csv", "gram_final.csv", "summary.json",
                 "network_init.json", "network_final.json"):
        assert os.path.exists(os.path.join(out, name))
    header, rows = readCsv(os.path.join(out, "trajectory.csv"))
    assert header[:5] == ["step", "loss", "irrel_norm_L1", "irrel_norm_L2", "grad_norm"]
    assert "w1_2" in header and "G1_0" in header
    assert list(rows[:, 0]) == [5, 10, 15, 20, 25, 30, 35, 40]
    with open(os.path.join(out, "summary.json")) as flines:
        written = json.load(flines)
    assert written["seed"] == 1
    assert written["diverged"] is False
    assert written["final"]["step"] == 40
    assert summary["support"]["components"] == [1, 2]
    assert written["config"]["optimizer"]["algorithm"] == "sgd-without"
    initial = supportnetworks.network.loadNetwork(os.path.join(out, "network_init.json"))
    assert np.array_equal(initial.chains(), [[1.0, 1.0, 1.0], [0.5, 0.5, 0.5]])


def test_runner_run_dense_outputs(write_config, tmp_path):
    path = write_config(DENSE)
    out = str(tmp_path / "out")
    summary = supportnetworks.runner.run(path, out=out, verbosity=0)
    header, rows = readCsv(os.path.join(out, "trajectory.csv"))
    assert header[-1] == "gram_rank"
    assert list(rows[:, 0]) == [10, 20, 30]
    gram = np.loadtxt(os.path.join(out, "gram_final.csv"), delimiter=",", skiprows=1)
    assert gram.shape == (4, 4)
    assert np.allclose(gram, gram.T)
    assert set(summary["support"]) == {"firstLayer", "downstream", "identified", "tol"}
    assert summary["eta_max"] > 0.01


def test_runner_run_seed_override_and_stride(write_config, tmp_path):
    path = write_config(DIAGONAL)
    out = str(tmp_path / "out")
    summary = supportnetworks.runner.run(path, out=out, seedoverride=7, stride=20, verbosity=0)
    assert summary["seed"] == 7
    _, rows = readCsv(os.path.join(out, "trajectory.csv"))
    assert list(rows[:, 0]) == [20, 40]


def test_runner_run_is_reproducible(write_config, tmp_path):
    path = write_config(DIAGONAL)
    first = str(tmp_path / "first")
    second = str(tmp_path / "second")
    supportnetworks.runner.run(path, out=first, verbosity=0)
    supportnetworks.runner.run(path, out=second, verbosity=0)
    for name in ("trajectory.csv", "gram_final.csv", "network_final.json"):
        with open(os.path.join(first, name)) as a, open(os.path.join(second, name)) as b:
            assert a.read() == b.read()


def test_runner_run_divergence_writes_partial(write_config, tmp_path):
    path = write_config("[dataset]\ngenerator = toy\ntoy = D2\n[network]\ntopology = diagonal\ndepth = 1\n"
                        "init = constant\nvalues = 1.0\n[optimizer]\neta = 10\nsteps = 1000\n")
    out = str(tmp_path / "out")
    with pytest.raises(supportnetworks.optim.DivergenceError):
        supportnetworks.runner.run(path, out=out, verbosity=0)
    with open(os.path.join(out, "summary.json")) as flines:
        summary = json.load(flines)
    assert summary["diverged"] is True
    assert summary["support"] is None
    assert os.path.exists(os.path.join(out, "network_init.json"))


def test_runner_run_chain_probe_on_dense(write_config, tmp_path):
    path = write_config(DENSE.replace("metrics = gramrank", "metrics = chains"))
    with pytest.raises(ValueError):
        supportnetworks.runner.run(path, out=str(tmp_path / "out"), verbosity=0)


def test_runner_run_divergence_keeps_gram_files(write_config, tmp_path):
    path = write_config(DIVERGING)
    out = str(tmp_path / "out")
    with pytest.raises(supportnetworks.optim.DivergenceError):
        supportnetworks.runner.run(path, out=out, verbosity=0)
    for name in ("summary.json", "trajectory.csv", "gram_init.csv", "gram_final.csv"):
        assert os.path.exists(os.path.join(out, name))


def test_runner_run_zero_steps_reports_eta_max(write_config, tmp_path):
    path = write_config(DENSE.replace("steps = 30", "steps = 0"))
    out = str(tmp_path / "out")
    summary = supportnetworks.runner.run(path, out=out, verbosity=0)
    assert isinstance(summary["eta_max"], float) and summary["eta_max"] > 0.0
    with open(os.path.join(out, "trajectory.csv")) as flines:
        assert len(flines.read().splitlines()) == 1


def test_runner_run_csv_only(write_config, tmp_path):
    path = write_config(DENSE + "\n[output]\nformats = csv\n")
    out = str(tmp_path / "out")
    supportnetworks.runner.run(path, out=out, verbosity=0)
    assert os.path.exists(os.path.join(out, "trajectory.csv"))
    assert not os.path.exists(os.path.join(out, "summary.json"))


"""
Tests for Sweep / sweep and cellLauncher

Inputs: a sweep file, out, workers.
Output: one directory per cell and seed, aggregate.csv, scaling_fit.json.

Input options:
 - inline sweep with replicates
 - a failing cell does not stop the sweep
 - fit requested on a grid too small to fit
 - fit on a small grid every cell reaches
 - the sweep threshold reaches each run's config
"""


def test_runner_sweep_aggregate(write_config, tmp_path):
    write_config(DIAGONAL, name="base.ini")
    path = write_config("[sweep]\nbase = base.ini\nreplicates = 2\n[axes]\noptimizer.eta = 0.02, 0.05\n",
                        name="sweep.ini")
    out = str(tmp_path / "sweep")
    result = supportnetworks.runner.sweep(path, out=out, workers=1, verbosity=0)
    assert result.failed == 0
    assert os.path.exists(os.path.join(out, "cell_optimizer.eta-0.05", "seed-2", "trajectory.csv"))
    with open(os.path.join(out, "aggregate.csv")) as flines:
        lines = flines.read().splitlines()
    assert lines[0] == ("optimizer.eta,replicates,completed,failed,median_steps_to_threshold,"
                        "median_final_loss,median_final_irrel_norm_L1")
    assert len(lines) == 3
    assert lines[1].startswith("0.02,2,2,0,")


def test_runner_sweep_failed_cell_recorded(write_config, tmp_path):
    write_config(DIAGONAL, name="base.ini")
    path = write_config("[sweep]\nbase = base.ini\n[axes]\noptimizer.batchsize = 4, 100\n", name="sweep.ini")
    result = supportnetworks.runner.sweep(path, out=str(tmp_path / "sweep"), verbosity=0)
    assert result.failed == 1
    failures = [outcome for outcome in result.results if not outcome["completed"]]
    assert failures[0]["cell"] == "cell_optimizer.batchsize-100"
    assert "ValueError" in failures[0]["error"]


def test_runner_sweep_diverged_cell_recorded(write_config, tmp_path):
    write_config(DIVERGING, name="base.ini")
    path = write_config("[sweep]\nbase = base.ini\n[axes]\noptimizer.eta = 0.01, 10\n", name="sweep.ini")
    result = supportnetworks.runner.sweep(path, out=str(tmp_path / "sweep"), verbosity=0)
    assert result.failed == 1
    failures = [outcome for outcome in result.results if not outcome["completed"]]
    assert failures[0]["error"].startswith("DivergenceError")


def test_runner_sweep_fit_error_written(write_config, tmp_path):
    write_config(DIAGONAL, name="base.ini")
    path = write_config("[sweep]\nbase = base.ini\nfit = true\n[axes]\noptimizer.eta = 0.05\n"
                        "optimizer.batchsize = 4\n", name="sweep.ini")
    out = str(tmp_path / "sweep")
    result = supportnetworks.runner.sweep(path, out=out, verbosity=0)
    assert result.fit is None
    with open(os.path.join(out, "scaling_fit.json")) as flines:
        document = json.load(flines)
    assert "error" in document


def test_runner_sweep_scaling_fit_end_to_end(write_config, tmp_path):
    """A small unbalanced diagonal grid reaches the threshold in every cell and fits a positive slope."""
    write_config(SCALING, name="base.ini")
    path = write_config("[sweep]\nbase = base.ini\nreplicates = 3\nfit = true\nthreshold = 0.5\n[axes]\n"
                        "optimizer.eta = 0.05, 0.1\noptimizer.batchsize = 2, 4\n", name="sweep.ini")
    out = str(tmp_path / "sweep")
    result = supportnetworks.runner.sweep(path, out=out, workers=1, verbosity=0)
    assert result.failed == 0
    assert result.fit is not None
    assert len(result.fit.grid) == 4
    assert result.fit.excluded == []
    assert result.fit.slope > 0
    with open(os.path.join(out, "scaling_fit.json")) as flines:
        document = json.load(flines)
    assert document["slope"] == pytest.approx(result.fit.slope)


def test_runner_sweep_threshold_passed_to_runs(write_config, tmp_path):
    write_config(DIAGONAL, name="base.ini")
    path = write_config("[sweep]\nbase = base.ini\nthreshold = 0.25\n[axes]\noptimizer.eta = 0.05\n",
                        name="sweep.ini")
    spec = supportnetworks.config.loadSweep(path)
    [(_, config)] = spec.replicateConfigs(next(spec.cells())[1])
    assert config.probes["threshold"] == 0.25


def test_runner_celllauncher_never_raises(tmp_path):
    config = supportnetworks.config.ExperimentConfig.fromDict({"dataset": {"generator": "idx"}})
    outcome = supportnetworks.runner.cellLauncher(("cell_x", 0, config, str(tmp_path / "cell")))
    assert outcome["completed"] is False
    assert outcome["cell"] == "cell_x"
