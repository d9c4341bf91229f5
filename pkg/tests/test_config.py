import numpy as np
import pytest

from ksjko.config import build_initial, load_config, parse_config, raised_cosine, serialize_config
from ksjko.energy import power
from ksjko.exceptions import ConfigurationError
from ksjko.grid import build_grid, interval, rectangle, total_mass

BASE = """
[domain]
n = 20
[physics]
chi = 1
[scheme]
tau = 0.01
t0 = 0.05
"""


def test_defaults_filled():
    cfg = parse_config(BASE)
    assert cfg.n == 20
    assert cfg.get("scheme", "lambda") == "1.5"
    assert cfg.formats == ("csv",)
    jc = cfg.jko_config()
    assert jc.cap == pytest.approx(100.0)
    assert jc.entropic_eps is None


def test_round_trip():
    cfg = parse_config(BASE + "[output]\nformats = csv, json\nstride = 2\n")
    again = parse_config(serialize_config(cfg))
    assert again.values == cfg.values
    assert serialize_config(again) == serialize_config(cfg)


@pytest.mark.parametrize("text,key", [
    (BASE.replace("chi = 1", "chii = 1"), "chii"),
    (BASE + "[extra]\na = 1\n", "extra"),
    (BASE.replace("n = 20", "n = twenty"), "n"),
    (BASE.replace("tau = 0.01", "tau = -1"), "tau"),
    (BASE.replace("t0 = 0.05", "t0 = 5"), "t0"),
    (BASE + "[output]\nformats = xml\n", "formats"),
    (BASE.replace("chi = 1", "chi = 1\nnonlinearity = power:k=2"), "nonlinearity"),
    (BASE.replace("chi = 1", "chi = 1\ninitial = spike"), "initial"),
    (BASE.replace("[scheme]", "[scheme]\nlambda = 1"), "lambda"),
])
def test_errors_name_the_key(text, key):
    with pytest.raises(ConfigurationError) as exc:
        parse_config(text)
    assert exc.value.key == key


def test_missing_required():
    with pytest.raises(ConfigurationError) as exc:
        parse_config(BASE.replace("chi = 1", ""))
    assert exc.value.key == "chi"


def test_with_value_and_nonlinearity():
    cfg = parse_config(BASE).with_value("physics.nonlinearity", "power:m=2")
    assert cfg.nonlinearity == power(2)
    assert cfg.with_value("tau", 0.02).jko_config().tau == 0.02
    with pytest.raises(ConfigurationError):
        cfg.with_value("bogus", 1)


def test_two_dimensional_extent():
    cfg = parse_config(BASE.replace("n = 20", "n = 6\ndimension = 2\nextent = 0 1; -1 1"))
    assert cfg.grid().shape == (6, 6)
    assert cfg.domain.extent == ((0.0, 1.0), (-1.0, 1.0))


def test_profiles_unit_mass():
    g1 = build_grid(interval(), 40)
    g2 = build_grid(rectangle(), 12)
    for spec, grid in [("bump(center=0.3, width=0.2, height=2, background=0.1)", g1),
                       ("two_bumps(width=0.15)", g1), ("bump(center=0.5 0.4, width=0.3)", g2), ("uniform", g2)]:
        assert total_mass(build_initial(spec, grid)) == pytest.approx(1.0)


def test_raised_cosine_support():
    grid = build_grid(interval(), 100)
    v = raised_cosine(grid, [0.5], 0.1, 2.0)
    assert v.max() == pytest.approx(2.0, rel=1e-2)
    assert np.all(v[np.abs(grid.centers[0] - 0.5) >= 0.1] == 0)


def test_profile_argument_errors():
    grid = build_grid(interval(), 10)
    for spec in ["bump(radius=1)", "bump(width=-1)", "bump(center=1 2)", "from_file", "bump(0.5)"]:
        with pytest.raises(ConfigurationError):
            build_initial(spec, grid)


def test_from_file(tmp_path):
    (tmp_path / "rho.txt").write_text("1 2 3 4\n")
    path = tmp_path / "run.ini"
    path.write_text(BASE.replace("n = 20", "n = 4").replace("chi = 1", "chi = 1\ninitial = from_file(path=rho.txt)"))
    rho = load_config(path).initial_density()
    np.testing.assert_allclose(rho.values, np.array([1, 2, 3, 4]) / 2.5)
    (tmp_path / "rho.txt").write_text("1 2 3\n")
    with pytest.raises(ConfigurationError):
        load_config(path)


def test_missing_file():
    with pytest.raises(ConfigurationError):
        load_config("/nonexistent/run.ini")


@pytest.mark.parametrize("name", ["aggregation_1d.ini", "two_bumps_2d.ini"])
def test_sample_configs_load(name):
    from pathlib import Path

    cfg = load_config(Path(__file__).resolve().parents[1] / "configs" / name)
    assert total_mass(cfg.initial_density()) == pytest.approx(1.0)
