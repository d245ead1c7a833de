import math

import numpy as np
import pytest

from vwspec.torus_model import (
    TorusModelSpec,
    build_dbar,
    build_sector_operator,
    crossing_predictions,
    dbar_kernel_dim,
    sector_flow_check,
)


def test_spec_relation():
    s = TorusModelSpec(1, 2.0)
    assert s.r == pytest.approx(math.pi / 2)
    assert s.t_cross == pytest.approx(2 * math.sqrt(2) * s.r)
    with pytest.raises(ValueError):
        TorusModelSpec(1, 2.0, r=1.0)
    with pytest.raises(ValueError):
        TorusModelSpec(2, 1.0, lattice_n=8)


def test_flux_quantization():
    op = build_dbar(3, 16)
    ph = op.plaquette_phases()
    assert np.allclose(ph, ph.flat[0])
    assert abs(ph.sum()) == pytest.approx(2 * np.pi * 3)


@pytest.mark.parametrize("d,want", [(2, 2), (-3, 0), (0, 1), (1, 1)])
def test_dbar_examples(d, want):
    assert dbar_kernel_dim(d) == want


@pytest.mark.parametrize("d", [1, 2, 3])
def test_index_and_refinement(d):
    n = 8 * d + 8
    assert dbar_kernel_dim(d, n) + dbar_kernel_dim(-d, n) == d
    assert dbar_kernel_dim(d, 2 * n) == dbar_kernel_dim(d, n)


def test_predictions():
    p1 = crossing_predictions(TorusModelSpec(1, 1.0))
    assert (p1["up_count"], p1["down_count"], p1["net"]) == (4, 4, 0)
    p0 = crossing_predictions(TorusModelSpec(0, 1.0))
    assert p0["t_cross"] is None and p0["up_count"] == 0


def test_square_decomposition():
    op = build_sector_operator(TorusModelSpec(1, 2.0))
    assert op.square_defect(3.0) < 1e-10


def test_sector_flow_q1():
    spec = TorusModelSpec(1, 2.0)
    r = sector_flow_check(spec)
    assert r.net_flow == 0
    assert all(abs(c.t - spec.t_cross) < 1e-6 for c in r.crossings)
    up = sum(c.multiplicity for c in r.crossings if c.direction > 0)
    down = sum(c.multiplicity for c in r.crossings if c.direction < 0)
    pred = crossing_predictions(spec)
    assert (up, down) == (pred["sector_up"], pred["sector_down"])


def test_window_missing_crossing():
    spec = TorusModelSpec(1, 2.0)
    r = sector_flow_check(spec, (3 * spec.r, 5 * spec.r))
    assert r.net_flow == 0 and r.crossings == []


def test_window_ending_at_crossing():
    spec = TorusModelSpec(1, 2.0)
    r = sector_flow_check(spec, (spec.r, spec.t_cross))
    assert r.endpoint_ambiguity[1] > 0
