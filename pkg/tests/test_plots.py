import xml.etree.ElementTree as ET

import pytest

from litt.plots import _ticks, bar_chart_svg, line_chart_svg

NS = "{http://www.w3.org/2000/svg}"


def test_bar_chart(tmp_path):
    p = tmp_path / "b.svg"
    bar_chart_svg(p, ["cph", "a<b"], [0.6, 0.65], [0.01, 0.02], title="c & d", ylabel="c_index")
    root = ET.parse(p).getroot()
    rects = [r for r in root.iter(NS + "rect") if r.get("fill") != "white"]
    assert len(rects) == 2
    texts = [t.text for t in root.iter(NS + "text")]
    assert "a<b" in texts and "c & d" in texts
    with pytest.raises(ValueError):
        bar_chart_svg(p, ["x"], [1.0, 2.0])


def test_line_chart(tmp_path):
    p = tmp_path / "l.svg"
    line_chart_svg(p, {"lstm": [5.0, 4.0, 3.5], "litt": [5.0, 2.0, float("nan")]}, title="t", ylabel="y")
    root = ET.parse(p).getroot()
    lines = list(root.iter(NS + "polyline"))
    assert len(lines) == 2
    assert len(lines[1].get("points").split()) == 2
    with pytest.raises(ValueError):
        line_chart_svg(p, {"x": [float("nan")]})


def test_ticks_cover_range():
    t = _ticks(0.0, 7.3)
    assert t == [0.0, 2.0, 4.0, 6.0]
    assert _ticks(0.13, 0.61) == [0.1, 0.2, 0.3, 0.4, 0.5, 0.6]
    assert _ticks(1.0, 1.0)
