from decimal import Decimal

import pytest
from hypothesis import given
from hypothesis import strategies as st

from fincheck.errors import NotNumeric, UnitMismatch
from fincheck.numbers import (
    FiscalPeriod, NumericValue, PeriodKind, Unit, format_number, normalize_number, numeric_equal,
    parse_period,
)


def pct(x):
    return NumericValue(Decimal(x), Unit.PERCENT)


def test_normalize_billions():
    v = normalize_number("$4.2 billion")
    assert v.magnitude == Decimal("4.2e9")
    assert v.unit is Unit.CURRENCY and v.currency == "USD"
    assert v.scale == 10**9


def test_normalize_accounting_negative():
    v = normalize_number("(1,250)")
    assert v.magnitude == -1250 and v.unit is Unit.COUNT


def test_normalize_percent_kept_as_given():
    v = normalize_number("62.4%")
    assert v.magnitude == Decimal("62.4") and v.unit is Unit.PERCENT


@pytest.mark.parametrize("text,mag,unit", [
    ("$19,300M", Decimal("19300e6"), Unit.CURRENCY),
    ("3.5 pp", Decimal("3.5"), Unit.PERCENTAGE_POINTS),
    ("€12K", Decimal("12000"), Unit.CURRENCY),
    ("1.25x", Decimal("1.25"), Unit.RATIO),
])
def test_normalize_suffixes(text, mag, unit):
    v = normalize_number(text)
    assert v.magnitude == mag and v.unit is unit


def test_not_numeric():
    with pytest.raises(NotNumeric):
        normalize_number("strong demand")


@pytest.mark.parametrize("text,kind,year,q", [
    ("Q4 2023", PeriodKind.QUARTER, 2023, 4),
    ("FY2024", PeriodKind.FISCAL_YEAR, 2024, None),
    ("fiscal 2022", PeriodKind.FISCAL_YEAR, 2022, None),
])
def test_parse_period(text, kind, year, q):
    p = parse_period(text)
    assert (p.kind, p.year, p.quarter) == (kind, year, q)


def test_parse_period_year_ended():
    p = parse_period("the year ended December 31, 2023")
    assert p.specified and p.year == 2023


def test_parse_period_unspecified():
    assert parse_period("strong demand").kind is PeriodKind.UNSPECIFIED


def test_numeric_equal_examples():
    # |58.3 - 58.1| / 58.3 = 0.00343 < 0.005
    assert numeric_equal(pct("58.3"), pct("58.1"), Decimal("0.005"))
    assert not numeric_equal(pct("45.2"), pct("42.3"), Decimal("0.005"))
    assert numeric_equal(pct("0"), pct("0"), Decimal("0.005"))


def test_percent_vs_points_is_unit_mismatch():
    with pytest.raises(UnitMismatch):
        numeric_equal(pct("3"), NumericValue(Decimal(3), Unit.PERCENTAGE_POINTS))
    with pytest.raises(UnitMismatch):
        numeric_equal(pct("3"), NumericValue(Decimal(3), Unit.CURRENCY))


def test_period_invariants():
    with pytest.raises(ValueError):
        FiscalPeriod(PeriodKind.FISCAL_YEAR, 2024, quarter=2)
    with pytest.raises(ValueError):
        FiscalPeriod(PeriodKind.QUARTER, 2024)


def test_invalid_scale():
    with pytest.raises(ValueError):
        NumericValue(Decimal(1), Unit.COUNT, scale=100)


mags = st.decimals(min_value=Decimal("-1e12"), max_value=Decimal("1e12"), places=2, allow_nan=False)
units = st.sampled_from([Unit.CURRENCY, Unit.PERCENT, Unit.PERCENTAGE_POINTS, Unit.RATIO, Unit.COUNT])


mantissas = st.decimals(min_value=Decimal("-999"), max_value=Decimal("999"), places=4, allow_nan=False)


@given(mantissas, st.sampled_from([1, 10**3, 10**6, 10**9]), units)
def test_format_parse_round_trip(mant, scale, unit):
    # canonical text carries four fraction digits of the mantissa
    if unit is not Unit.CURRENCY and unit is not Unit.COUNT:
        scale = 1
    v = NumericValue(mant * scale, unit, scale)
    back = normalize_number(format_number(v))
    assert back.magnitude == v.magnitude
    assert back.unit is v.unit


@given(mags, mags, st.decimals(min_value=0, max_value=Decimal("0.1"), places=4))
def test_numeric_equal_symmetric_reflexive(a, b, tol):
    x, y = NumericValue(a), NumericValue(b)
    assert numeric_equal(x, x, tol)
    assert numeric_equal(x, y, tol) == numeric_equal(y, x, tol)


@given(mags, mags, st.decimals(min_value=0, max_value=Decimal("0.1"), places=4),
       st.decimals(min_value=0, max_value=Decimal("0.1"), places=4))
def test_numeric_equal_monotone_in_tolerance(a, b, t1, t2):
    lo, hi = sorted((t1, t2))
    x, y = NumericValue(a), NumericValue(b)
    if numeric_equal(x, y, lo):
        assert numeric_equal(x, y, hi)


@given(st.text(max_size=60))
def test_parse_period_never_raises(text):
    assert isinstance(parse_period(text), FiscalPeriod)
