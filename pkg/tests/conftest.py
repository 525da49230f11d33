import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ballwalk import gridop, landscape, potentials


@pytest.fixture(scope="session")
def dwt():
    return potentials.builtin("double_well_tilted")


@pytest.fixture(scope="session")
def box1d():
    return potentials.Box.from_pairs([(-2.0, 2.0)])


@pytest.fixture(scope="session")
def dwt_labeling(dwt, box1d):
    return landscape.label_potential(dwt, box1d, dx=1e-3)


@pytest.fixture(scope="session")
def three_well():
    return potentials.builtin("three_well")


@pytest.fixture(scope="session")
def box2d():
    return potentials.Box.from_pairs([(-2.4, 2.4), (-2.4, 2.4)])


@pytest.fixture(scope="session")
def three_well_labeling(three_well, box2d):
    return landscape.label_potential(three_well, box2d, dx=0.0075,
                                     coarse_spacing=0.06)


@pytest.fixture(scope="session")
def dwt_walk_P(dwt, box1d):
    grid = gridop.build_grid(box1d, 0.002)
    return gridop.to_P(gridop.assemble_walk(dwt, grid, 0.1))