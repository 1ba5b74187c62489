import numpy as np
import pytest

from plugins.svg_plot import SvgLinePlot


def test_render_contains_one_polyline_per_series():
    plot = SvgLinePlot("spread", y_label="distance")
    t = np.linspace(0, 1, 11)
    plot.add_series(t, np.exp(-t), "a").add_series(t, np.exp(-2 * t), "b & c")
    svg = plot.render()
    assert svg.count("<polyline") == 2
    assert "b &amp; c" in svg
    assert svg.strip().endswith("</svg>")


def test_long_series_are_down_sampled():
    t = np.linspace(0, 1, 10001)
    svg = SvgLinePlot("long").add_series(t, np.sin(t)).render()
    points = svg.split('points="')[1].split('"')[0].split()
    assert len(points) <= 2001


def test_constant_series_and_non_finite_values():
    t = np.linspace(0, 1, 5)
    values = np.array([1.0, 1.0, np.nan, 1.0, 1.0])
    svg = SvgLinePlot("flat").add_series(t, values).render()
    points = svg.split('points="')[1].split('"')[0].split()
    assert len(points) == 4


def test_invalid_series_and_empty_plot():
    with pytest.raises(ValueError):
        SvgLinePlot("bad").add_series([0, 1], [1, 2, 3])
    with pytest.raises(ValueError):
        SvgLinePlot("empty").render()
