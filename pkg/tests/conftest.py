import numpy as np
import pytest

from epr_spatial.assembly import HyperState, MultiTypeDataset, assemble, build_alpha_kappa
from epr_spatial.basis import UNIT_SQUARE, ArealRegion, CellGrid, default_basis
from epr_spatial.sim import SimConfig, generate_dataset, make_geometry


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", help="run hours-scale batch checks")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip = pytest.mark.skip(reason="batch-scale check; pass --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


def toy_dataset(z1=0.7, z2=-0.3, z3=(1, 0), sigma2=(1.0, 1.0)):
    """n1* = 1, n2 = 1, n1 = 2, one covariate per response."""
    grid = CellGrid(2, 2, UNIT_SQUARE)
    region = ArealRegion("R0", (0, 1, 2, 3), grid.cell_area)
    z3 = np.asarray(z3)
    n1s = int(z3.sum())
    return MultiTypeDataset(
        points=np.array([[0.3, 0.4], [0.8, 0.2]]),
        z3=z3,
        z1=np.full(n1s, z1),
        regions=(region,),
        z2=np.array([z2]),
        x1=np.array([[1.0], [2.0]]),
        x2=np.array([[1.5]]),
        x3=np.array([[1.0], [-0.5]]),
        cell_centers=grid.centers(),
        sigma2_1=np.full(n1s, sigma2[0]),
        sigma2_2=np.array([sigma2[1]]),
    )


@pytest.fixture
def toy():
    ds = toy_dataset()
    basis = default_basis(UNIT_SQUARE, 1, ds.cell_centers)
    model = assemble(ds, basis)
    hyper = HyperState.point_mass()
    return ds, model, hyper, build_alpha_kappa(ds, hyper, model.dims)


@pytest.fixture(scope="session")
def tiny_config():
    return SimConfig.tiny()


@pytest.fixture(scope="session")
def tiny_geometry(tiny_config):
    return make_geometry(tiny_config)


@pytest.fixture(scope="session")
def tiny_data(tiny_config, tiny_geometry):
    return generate_dataset(tiny_config, np.random.default_rng(11), tiny_geometry)


ACCEPTANCE = []


@pytest.fixture
def verdict():
    """Record one acceptance line and fail the test when the criterion fails."""

    def record(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} | {detail}"
        ACCEPTANCE.append(line)
        print(line)
        assert ok, line

    def note(line):
        ACCEPTANCE.append(f"    {line}")

    record.note = note
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
