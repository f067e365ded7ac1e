"""Smoke test for the slipsteer Python extension.

Build and install first:
    pip install --no-build-isolation ./crates/py
then run with pytest or plain python.
"""

import math

import slipsteer_py as ss

SHORT = """
[run]
duration = 8.0

[path]
preset = "l"

[controller]
kind = "PROP-S"
"""


def test_simulate_columns_and_metrics():
    out = ss.simulate(SHORT)
    assert out["completed"] and out["error"] is None
    cols = out["columns"]
    n = len(cols["t"])
    assert n == 801
    assert all(len(v) == n for v in cols.values())
    assert abs(cols["t"][-1] - 8.0) < 1e-9
    # starts 0.5 m left of the path and closes in
    assert cols["y_e"][0] == 0.5
    assert abs(cols["y_e"][-1]) < 0.5
    assert max(abs(w) for w in cols["omega"]) <= 0.3 + 1e-12
    assert out["segments"][0]["label"] == "seg1"
    assert out["csv"].startswith("t,s_ref,seg,")


def test_overrides_and_determinism():
    a = ss.simulate(SHORT, controller="B", seed=3, preset="rainy")
    b = ss.simulate(SHORT, controller="B", seed=3, preset="rainy")
    assert (a["controller"], a["seed"], a["weather"]) == ("B", 3, "rainy")
    assert a["csv"] == b["csv"]
    c = ss.simulate(SHORT, controller="B", seed=4, preset="rainy")
    assert c["csv"] != a["csv"]


def test_bad_scenario_raises():
    try:
        ss.simulate("[path]\npreset = 'l'\n")
    except ValueError as e:
        assert "controller" in str(e)
    else:
        raise AssertionError("missing controller accepted")


def test_compare_entries():
    rep = ss.compare(SHORT, ["PROP", "PROP-S"], seeds=2, presets=["clear", "rainy"])
    pairs = {(e["controller"], e["weather"]) for e in rep["entries"]}
    assert pairs == {(c, w) for c in ("PROP", "PROP-S") for w in ("clear", "rainy")}
    seg = rep["entries"][0]["segments"][0]
    assert seg["trials"] == 2 and math.isfinite(seg["e_rms"]["mean"])


def test_figure_and_default_scenario():
    header, rows, svg = ss.figure("fig13")
    assert header[0] and len(rows) == 400
    assert all(len(r) == len(header) for r in rows)
    assert "<svg" in svg
    text = ss.default_scenario("s", "PROP")
    assert 'kind = "PROP"' in text
    assert ss.simulate(text.replace("[run]", "[run]\nduration = 2.0", 1))["completed"]


if __name__ == "__main__":
    for name, fn in list(globals().items()):
        if name.startswith("test_"):
            fn()
            print("ok", name)
