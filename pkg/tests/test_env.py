import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from homogenize_lab.env import (EnvironmentSpec, create_environment, estimate_spatial_mean,
                                evaluate_potential, shift_environment, write_field_csv)
from homogenize_lab.errors import ConfigError
from homogenize_lab.io import read_csv

SPECS = [EnvironmentSpec("periodic"), EnvironmentSpec("shot_noise"),
         EnvironmentSpec("checkerboard", amplitude_range=(0.0, 1.0)),
         EnvironmentSpec("periodic", dimension=2), EnvironmentSpec("shot_noise", dimension=2, intensity=1.0)]


def test_periodic_closed_form():
    h = create_environment(EnvironmentSpec("periodic"), 0)
    y = np.linspace(-3, 3, 101)
    np.testing.assert_allclose(evaluate_potential(h, y[:, None]), 1 - np.cos(2 * np.pi * y), atol=1e-14)


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: f"{s.kind}{s.dimension}")
def test_range_and_seed_determinism(spec):
    rng = np.random.default_rng(0)
    y = rng.uniform(-20, 20, size=(500, spec.dimension))
    a = evaluate_potential(create_environment(spec, 11), y)
    b = evaluate_potential(create_environment(spec, 11), y)
    assert np.array_equal(a, b)
    assert np.all(a >= spec.v_min - 1e-12) and np.all(a <= spec.v_max + 1e-12)


def test_seeds_give_different_fields():
    y = np.linspace(0, 30, 400)[:, None]
    a = evaluate_potential(create_environment(EnvironmentSpec("shot_noise"), 1), y)
    b = evaluate_potential(create_environment(EnvironmentSpec("shot_noise"), 2), y)
    assert np.max(np.abs(a - b)) > 0.1


@settings(max_examples=50, deadline=None)
@given(st.floats(-50, 50), st.floats(-50, 50), st.sampled_from(range(3)))
def test_shift_identity(r, y, k):
    h = create_environment(SPECS[k], 5)
    lhs = evaluate_potential(shift_environment(h, r), np.array([[y]]))
    rhs = evaluate_potential(h, np.array([[y + r]]))
    assert abs(float(lhs[0]) - float(rhs[0])) <= 1e-12


@pytest.mark.parametrize("spec", SPECS[:3], ids=lambda s: s.kind)
def test_lipschitz_bound_holds_on_samples(spec):
    h = create_environment(spec, 3)
    y = np.linspace(-10, 10, 20001)[:, None]
    v = evaluate_potential(h, y)
    slope = np.max(np.abs(np.diff(v)) / np.diff(y[:, 0]))
    assert slope <= spec.lipschitz() * (1 + 1e-9)


def test_spatial_mean_periodic():
    h = create_environment(EnvironmentSpec("periodic"), 0)
    assert estimate_spatial_mean(h, 10.0, 20000) == pytest.approx(1.0, abs=0.03)


@pytest.mark.parametrize("kwargs, field", [
    (dict(kind="wavelet"), "environment.kind"),
    (dict(kind="periodic", period=-1.0), "environment.period"),
    (dict(kind="periodic", amplitude_range=(2.0, 1.0)), "environment.amplitude_range"),
    (dict(kind="checkerboard", margin=0.7), "environment.margin"),
    (dict(kind="shot_noise", intensity=100.0, subcell=0.5), "environment.subcell"),
])
def test_invalid_specs_name_the_field(kwargs, field):
    with pytest.raises(ConfigError) as err:
        EnvironmentSpec(**kwargs)
    assert err.value.field == field


def test_spec_dict_roundtrip():
    # to_dict writes resolved defaults (e.g. the shot-noise subcell), so compare serialized forms
    y = np.linspace(-5, 5, 101)
    for spec in SPECS:
        again = EnvironmentSpec.from_dict(spec.to_dict())
        assert again.to_dict() == spec.to_dict()
        pts = np.stack([y] * spec.dimension, -1)
        assert np.array_equal(evaluate_potential(create_environment(again, 2), pts),
                              evaluate_potential(create_environment(spec, 2), pts))


def test_field_csv_has_metadata(tmp_path):
    h = create_environment(EnvironmentSpec("checkerboard"), 4)
    write_field_csv(tmp_path / "f.csv", h, -2.0, 2.0, 41)
    header, cols, rows = read_csv(tmp_path / "f.csv")
    assert header["seed"] == 4 and header["spec"]["kind"] == "checkerboard"
    assert cols == ["y", "value"] and len(rows) == 41
    assert math.isclose(float(rows[10][1]), float(evaluate_potential(h, np.array([[float(rows[10][0])]]))[0]))
