import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pensionalm.errors import MisalignedSeries, MissingAuxiliary, NonPositiveLogArgument
from pensionalm.transforms import (
    RawSeries,
    TransformKind,
    TransformSpec,
    apply_transform,
    cpi_index,
    invert_transform,
    nominal_from_real_yield,
    read_series_csv,
    write_series_csv,
)


def series(name, values, start=2000):
    return RawSeries(name, np.arange(start, start + len(values)), np.asarray(values, dtype=float))


def test_log_of_index_level():
    out = apply_transform(TransformSpec("log", inputs=("stock",)), {"stock": series("stock", [100.0])})
    assert out.values[0] == pytest.approx(4.60517, abs=1e-5)


def test_shifted_real_yield_flat_cpi():
    raw = {"ytm": series("ytm", [0.03, 0.03]), "cpi": series("cpi", [100.0, 100.0])}
    out = apply_transform(TransformSpec("shifted_real_yield", 0.05, ("ytm", "cpi")), raw)
    assert out.times.tolist() == [2001]
    assert out.values[0] == pytest.approx(-2.52573, abs=1e-5)


def test_log_spread():
    raw = {"corp": series("corp", [0.05]), "long": series("long", [0.04])}
    out = apply_transform(TransformSpec("log_spread", 0.01, ("corp", "long")), raw)
    assert out.values[0] == pytest.approx(-3.91202, abs=1e-5)


def test_invert_log():
    spec = TransformSpec("log", inputs=("stock",))
    assert invert_transform(spec, series("stock", [4.60517])).values[0] == pytest.approx(100.0, rel=1e-5)


def test_invert_shifted_real_yield():
    spec = TransformSpec("shifted_real_yield", 0.05, ("ytm", "cpi"))
    cpi = series("cpi", [100.0, 100.0])
    f = RawSeries("ytm", [2001], [math.log(0.08)])
    assert invert_transform(spec, f, {"cpi": cpi}).values[0] == pytest.approx(0.03, abs=1e-14)


def test_invert_log_growth_compounds():
    spec = TransformSpec("log_growth", inputs=("gdp",))
    f = RawSeries("gdp", [2001, 2002], [math.log(1.02)] * 2)
    out = invert_transform(spec, f, initial=100.0)
    assert out.times.tolist() == [2000, 2001, 2002]
    np.testing.assert_allclose(out.values, [100.0, 102.0, 104.04], rtol=1e-14)


def test_inversion_needs_cpi():
    spec = TransformSpec("shifted_real_yield", 0.05, ("ytm", "cpi"))
    with pytest.raises(MissingAuxiliary):
        invert_transform(spec, RawSeries("ytm", [2001], [-2.5]))
    with pytest.raises(MissingAuxiliary):
        invert_transform(TransformSpec("log_growth", inputs=("g",)), RawSeries("g", [2001], [0.0]))


def test_nonpositive_log_argument():
    with pytest.raises(NonPositiveLogArgument):
        apply_transform(TransformSpec("log", inputs=("s",)), {"s": series("s", [1.0, 0.0])})
    raw = {"corp": series("corp", [0.02]), "long": series("long", [0.04])}
    with pytest.raises(NonPositiveLogArgument):
        apply_transform(TransformSpec("log_spread", 0.01, ("corp", "long")), raw)


def test_misaligned_inputs():
    raw = {"ytm": series("ytm", [0.03, 0.03]), "cpi": series("cpi", [100.0, 101.0], start=1999)}
    with pytest.raises(MisalignedSeries):
        apply_transform(TransformSpec("shifted_real_yield", 0.05, ("ytm", "cpi")), raw)
    with pytest.raises(MisalignedSeries):
        RawSeries("x", [2001, 2000], [1.0, 2.0])


def test_shift_rules():
    with pytest.raises(ValueError):
        TransformSpec("log", 0.05, ("s",))
    with pytest.raises(ValueError):
        TransformSpec("log_spread", -0.01, ("a", "b"))
    with pytest.raises(ValueError):
        TransformSpec("log_spread", 0.01, ("a",))


def test_cpi_index_skips_current_year():
    infl = np.array([[0.5, 0.01, 0.02]])
    np.testing.assert_allclose(cpi_index(infl), [[1.0, math.exp(0.01), math.exp(0.03)]])


def test_nominal_from_real_yield_matches_forward():
    # forward: Y = ln(ytm / ratio + mu); inverse must undo it
    ytm, ratio = 0.045, 1.03
    Y = math.log(ytm / ratio + 0.05)
    assert nominal_from_real_yield(np.array(Y), np.array(math.log(ratio)), 0.05) == pytest.approx(ytm, rel=1e-14)


def test_series_csv_roundtrip(tmp_path):
    s = series("cpi", [100.0, 101.5, 103.25])
    write_series_csv(tmp_path / "cpi.csv", s)
    back = read_series_csv(tmp_path / "cpi.csv")
    assert back.id == "cpi"
    np.testing.assert_array_equal(back.times, s.times)
    np.testing.assert_array_equal(back.values, s.values)


def test_series_csv_bad_header(tmp_path):
    (tmp_path / "x.csv").write_text("yr,value\n2000,1\n")
    with pytest.raises(MisalignedSeries, match="yr"):
        read_series_csv(tmp_path / "x.csv")


# -- properties ----------------------------------------------------------------

pos = st.floats(0.5, 500.0)
rate = st.floats(-0.02, 0.15)
growth = st.floats(-0.05, 0.08)


def _raw_for(kind, n, data):
    """Admissible raw inputs and the inversion arguments for one kind."""
    cpi = np.cumprod([100.0] + [math.exp(data.draw(growth)) for _ in range(n - 1)])
    raw = {"cpi": series("cpi", cpi)}
    if kind == "log" or kind == "identity" or kind == "real_log_ratio":
        raw["x"] = series("x", [data.draw(pos) for _ in range(n)])
        spec = TransformSpec(kind, inputs=("x",) if kind != "real_log_ratio" else ("x", "cpi"))
    elif kind == "log_growth":
        raw["x"] = series("x", [data.draw(pos) for _ in range(n)])
        spec = TransformSpec(kind, inputs=("x", "cpi"))
    elif kind == "shifted_real_yield":
        raw["x"] = series("x", [data.draw(st.floats(0.0, 0.15)) for _ in range(n)])
        spec = TransformSpec(kind, 0.05, ("x", "cpi"))
    elif kind == "log_spread":
        long = [data.draw(st.floats(0.0, 0.1)) for _ in range(n)]
        raw["long"] = series("long", long)
        raw["x"] = series("x", [l + data.draw(st.floats(-0.009, 0.05)) for l in long])
        spec = TransformSpec(kind, 0.01, ("x", "long"))
    else:
        raw["x"] = series("x", [data.draw(rate) for _ in range(n)])
        spec = TransformSpec(kind, inputs=("x", "cpi"))
    return spec, raw


@settings(max_examples=40, deadline=None)
@given(kind=st.sampled_from([k.value for k in TransformKind]), n=st.integers(2, 6), data=st.data())
def test_roundtrip_every_kind(kind, n, data):
    spec, raw = _raw_for(kind, n, data)
    f = apply_transform(spec, raw)
    assert np.all(np.isfinite(f.values))
    back = invert_transform(spec, f, raw, initial=raw["x"].values[0])
    expect = raw["x"].at(back.times)
    np.testing.assert_allclose(back.values, expect, rtol=1e-12, atol=1e-15)


@settings(max_examples=40, deadline=None)
@given(a=st.floats(0.0, 0.1), b=st.floats(0.0, 0.1), ratio=st.floats(0.95, 1.1))
def test_real_yield_increasing_in_ytm(a, b, ratio):
    spec = TransformSpec("shifted_real_yield", 0.05, ("y", "cpi"))
    cpi = series("cpi", [100.0, 100.0 * ratio])

    def f(v):
        return apply_transform(spec, {"y": series("y", [0.0, v]), "cpi": cpi}).values[0]

    lo, hi = sorted((a, b))
    if hi - lo > 1e-9:
        assert f(hi) > f(lo)


@settings(max_examples=40, deadline=None)
@given(a=pos, b=pos)
def test_log_increasing(a, b):
    spec = TransformSpec("log", inputs=("s",))
    lo, hi = sorted((a, b))
    if hi > lo:
        f = apply_transform(spec, {"s": series("s", [lo, hi])}).values
        assert f[1] > f[0]
