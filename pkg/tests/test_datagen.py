"""Generator registry: determinism, shapes, and documented structure."""

import numpy as np
import pytest

from msmbounds.data import Dataset, PanelDataset
from msmbounds.datagen import DgpSpec, generate, registry
from msmbounds.errors import UnknownDgp


def test_registry_names():
    assert registry() == ["confounded-line", "discrete-cells", "gauss-line",
                          "hidden-dose", "panel-mix"]


def test_unknown_name_raises():
    with pytest.raises(UnknownDgp):
        generate(DgpSpec(name="nope"))


def test_deterministic_in_seed():
    a = generate(DgpSpec("gauss-line", seed=3), 50)
    b = generate(DgpSpec("gauss-line", seed=3), 50)
    c = generate(DgpSpec("gauss-line", seed=4), 50)
    np.testing.assert_array_equal(a.y, b.y)
    assert not np.array_equal(a.y, c.y)


def test_default_sizes():
    assert generate(DgpSpec("gauss-line")).n == 100
    assert generate(DgpSpec("confounded-line")).n == 1000
    assert generate(DgpSpec("discrete-cells")).n == 400
    p = generate(DgpSpec("panel-mix"))
    assert isinstance(p, PanelDataset) and p.n == 500 and p.T == 2


def test_gauss_line_structure():
    d = generate(DgpSpec("gauss-line", seed=0), 5000)
    assert isinstance(d, Dataset) and d.d == 0
    # slope 3 recoverable by OLS on this unconfounded design
    slope = np.polyfit(d.a, d.y, 1)[0]
    assert slope == pytest.approx(3.0, abs=0.1)


def test_gauss_line_slope_param():
    d = generate(DgpSpec("gauss-line", params={"slope": -1.0}, seed=0), 5000)
    slope = np.polyfit(d.a, d.y, 1)[0]
    assert slope == pytest.approx(-1.0, abs=0.1)


def test_hidden_dose_support():
    d = generate(DgpSpec("hidden-dose", seed=2), 2000)
    assert d.a.min() > 2.0 and d.a.max() < 2.5


def test_discrete_cells_supports():
    d = generate(DgpSpec("discrete-cells", seed=1), 500)
    assert set(np.unique(d.x)) <= {0.0, 1.0}
    assert set(np.unique(d.a)) <= {0.0, 1.0, 2.0}


def test_panel_mix_custom_horizon():
    p = generate(DgpSpec("panel-mix", params={"T": 3}, seed=0), 40)
    assert p.T == 3 and p.x.shape == (40, 3, 1)
