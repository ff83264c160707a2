"""Numeric values, fiscal periods and the normalizers that produce them.

Magnitudes are :class:`decimal.Decimal` so tolerance boundaries can be tested
exactly. Percent values are kept as written (``62.4`` means 62.4%).
"""

from __future__ import annotations

import calendar
import enum
import re
from dataclasses import dataclass, field
from datetime import date
from decimal import Decimal, InvalidOperation, localcontext
from typing import Optional

from .errors import NotNumeric, UnitMismatch

DEFAULT_CURRENCY = "USD"
ABS_EPSILON = Decimal("1e-9")
VALID_SCALES = (1, 10**3, 10**6, 10**9)

_SCALE_WORDS = {
    "thousand": 10**3, "k": 10**3,
    "million": 10**6, "mn": 10**6, "m": 10**6,
    "billion": 10**9, "bn": 10**9, "b": 10**9,
}
_SCALE_SUFFIX = {10**3: "K", 10**6: "M", 10**9: "B"}
_SCALE_LONG = {10**3: "thousand", 10**6: "million", 10**9: "billion"}
_CURRENCY_SYMBOLS = {"$": None, "us$": "USD", "usd": "USD", "€": "EUR", "eur": "EUR", "£": "GBP", "gbp": "GBP"}
_CURRENCY_PREFIX = {"USD": "$", "EUR": "€", "GBP": "£"}


class Unit(str, enum.Enum):
    CURRENCY = "currency"
    PERCENT = "percent"
    PERCENTAGE_POINTS = "percentage_points"
    RATIO = "ratio"
    SHARES = "shares"
    COUNT = "count"


# bare figures in filings usually omit the unit, so COUNT compares with these
_DIMENSIONLESS_PEERS = {Unit.COUNT, Unit.CURRENCY, Unit.SHARES, Unit.RATIO}


@dataclass(frozen=True)
class NumericValue:
    magnitude: Decimal
    unit: Unit = Unit.COUNT
    scale: int = 1
    currency: Optional[str] = None
    raw_text: str = field(default="", compare=False)

    def __post_init__(self):
        if not isinstance(self.magnitude, Decimal):
            object.__setattr__(self, "magnitude", Decimal(str(self.magnitude)))
        if not self.magnitude.is_finite():
            raise ValueError("magnitude must be finite")
        if self.scale not in VALID_SCALES:
            raise ValueError(f"scale must be one of {VALID_SCALES}, got {self.scale}")
        if self.unit is Unit.CURRENCY and self.currency is None:
            object.__setattr__(self, "currency", DEFAULT_CURRENCY)
        if self.unit is not Unit.CURRENCY and self.currency is not None:
            raise ValueError("currency code only applies to currency values")

    @property
    def mantissa(self) -> Decimal:
        return self.magnitude / self.scale

    def with_magnitude(self, magnitude: Decimal) -> "NumericValue":
        return NumericValue(magnitude, self.unit, best_scale(magnitude, self.unit), self.currency)

    def to_json(self) -> dict:
        return {
            "magnitude": str(self.magnitude),
            "unit": self.unit.value,
            "scale": self.scale,
            "currency": self.currency,
            "text": format_number(self),
        }

    @classmethod
    def from_json(cls, data: dict) -> "NumericValue":
        return cls(Decimal(data["magnitude"]), Unit(data["unit"]), int(data.get("scale", 1)),
                   data.get("currency"), data.get("text", ""))

    def __str__(self):
        return format_number(self)


def best_scale(magnitude: Decimal, unit: Unit) -> int:
    if unit in (Unit.PERCENT, Unit.PERCENTAGE_POINTS, Unit.RATIO):
        return 1
    m = abs(magnitude)
    for s in (10**9, 10**6):
        if m >= s:
            return s
    return 1


_NUMBER_RE = re.compile(
    r"""
    (?P<open>\()?
    (?P<sign>[-−–])?
    (?P<cur>US\$|\$|€|£|USD\s?|EUR\s?|GBP\s?)?
    (?P<sign2>[-−])?
    (?P<num>\d{1,3}(?:,\d{3})+(?:\.\d+)?|\d+(?:\.\d+)?|\.\d+)
    (?:\s?(?P<scale>billion|million|thousand|bn|mn|[BMKk])(?![A-Za-z]))?
    (?P<close>\))?
    (?:\s?(?P<unit>%|percentage\spoints?|percent|pp|p\.p\.|x|times|shares)(?![A-Za-z]))?
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class NumberMatch:
    start: int
    end: int
    value: NumericValue


def _build_value(m: re.Match) -> NumericValue:
    num = m.group("num").replace(",", "")
    try:
        mag = Decimal(num)
    except InvalidOperation as exc:  # pragma: no cover - regex guarantees digits
        raise NotNumeric(m.group(0)) from exc
    scale_word = (m.group("scale") or "").lower()
    scale = _SCALE_WORDS.get(scale_word, 1)
    mag = mag * scale
    negative = bool(m.group("sign") or m.group("sign2"))
    if m.group("open") and m.group("close"):
        negative = True
    if negative:
        mag = -mag
    unit_word = (m.group("unit") or "").lower()
    cur = m.group("cur")
    currency = None
    if unit_word in ("%", "percent"):
        unit = Unit.PERCENT
    elif unit_word.startswith("percentage") or unit_word in ("pp", "p.p."):
        unit = Unit.PERCENTAGE_POINTS
    elif unit_word in ("x", "times"):
        unit = Unit.RATIO
    elif unit_word == "shares":
        unit = Unit.SHARES
    elif cur:
        unit = Unit.CURRENCY
        currency = _CURRENCY_SYMBOLS[cur.strip().lower()] or DEFAULT_CURRENCY
    else:
        unit = Unit.COUNT
    if unit in (Unit.PERCENT, Unit.PERCENTAGE_POINTS, Unit.RATIO) and scale != 1:
        raise NotNumeric(m.group(0))
    text = m.group(0)
    if m.group("open") and not m.group("close"):
        text = text[1:]
    return NumericValue(mag, unit, scale, currency, text.strip())


def find_numbers(text: str, mask_periods: bool = True) -> list[NumberMatch]:
    """All numeric tokens in ``text``, skipping digits that belong to periods
    (``Q3 2024``, ``FY2023``, bare years) or are glued to letters (``10b-5``)."""
    masked = text
    if mask_periods:
        chars = list(text)
        for start, end, _ in find_periods(text):
            for i in range(start, end):
                chars[i] = " "
        masked = "".join(chars)
    out = []
    for m in _NUMBER_RE.finditer(masked):
        start, end = m.span()
        if start > 0 and (masked[start - 1].isalnum() or masked[start - 1] in "_-/"):
            continue
        if end < len(masked) and (masked[end].isalnum() or masked[end] in "_-/"):
            continue
        try:
            value = _build_value(m)
        except NotNumeric:
            continue
        if m.group("open") and not m.group("close"):
            start += 1
        out.append(NumberMatch(start, end, value))
    return out


def normalize_number(text: str) -> NumericValue:
    """Parse the first numeric token of ``text`` into a :class:`NumericValue`.

    >>> normalize_number("$4.2 billion").magnitude
    Decimal('4200000000.0')
    """
    if not text or not text.strip():
        raise NotNumeric("empty text")
    found = find_numbers(text, mask_periods=False)
    if not found:
        raise NotNumeric(f"no numeric token in {text!r}")
    return found[0].value


def format_number(value: NumericValue, long: bool = False) -> str:
    """Canonical text: sign, currency symbol, grouped integer part, up to four
    fraction digits, scale suffix, unit suffix."""
    with localcontext() as ctx:
        ctx.prec = 60
        mant = value.magnitude / value.scale
        mant = mant.quantize(Decimal("0.0001"))
    neg = mant < 0
    mant = abs(mant)
    digits = format(mant, "f")
    int_part, _, frac = digits.partition(".")
    frac = frac.rstrip("0")
    body = f"{int(int_part):,}" + (f".{frac}" if frac else "")
    if value.scale != 1:
        body += f" {_SCALE_LONG[value.scale]}" if long else _SCALE_SUFFIX[value.scale]
    prefix = ""
    if value.unit is Unit.CURRENCY:
        prefix = _CURRENCY_PREFIX.get(value.currency, f"{value.currency} ")
    suffix = {
        Unit.PERCENT: "%",
        Unit.PERCENTAGE_POINTS: " pp",
        Unit.RATIO: "x",
        Unit.SHARES: " shares",
    }.get(value.unit, "")
    sign = "-" if neg and mant != 0 else ""
    return f"{sign}{prefix}{body}{suffix}"


def units_compatible(a: NumericValue, b: NumericValue) -> bool:
    if a.unit is b.unit:
        return a.currency == b.currency
    if Unit.COUNT in (a.unit, b.unit):
        return {a.unit, b.unit} <= _DIMENSIONLESS_PEERS
    return False


def numeric_equal(a: NumericValue, b: NumericValue, rel_tol=Decimal(0)) -> bool:
    """Symmetric relative comparison against ``max(|a|, |b|)``."""
    rel_tol = Decimal(str(rel_tol))
    if rel_tol < 0:
        raise ValueError("rel_tol must be non-negative")
    if not units_compatible(a, b):
        raise UnitMismatch(f"{a.unit.value} vs {b.unit.value}")
    with localcontext() as ctx:
        ctx.prec = 100
        diff = abs(a.magnitude - b.magnitude)
        ref = max(abs(a.magnitude), abs(b.magnitude))
        if ref <= ABS_EPSILON:
            return diff <= ABS_EPSILON
        return diff <= rel_tol * ref


# ---------------------------------------------------------------------------
# periods


class PeriodKind(str, enum.Enum):
    FISCAL_YEAR = "fiscal_year"
    QUARTER = "quarter"
    DATE_POINT = "date_point"
    DATE_RANGE = "date_range"
    UNSPECIFIED = "unspecified"


@dataclass(frozen=True)
class FiscalPeriod:
    kind: PeriodKind = PeriodKind.UNSPECIFIED
    year: Optional[int] = None
    quarter: Optional[int] = None
    start: Optional[date] = None
    end: Optional[date] = None

    def __post_init__(self):
        if (self.quarter is not None) != (self.kind is PeriodKind.QUARTER):
            raise ValueError("quarter present iff kind is quarter")
        if self.quarter is not None and not 1 <= self.quarter <= 4:
            raise ValueError("quarter must be 1..4")
        if self.start and self.end and self.start > self.end:
            raise ValueError("start after end")

    @property
    def specified(self) -> bool:
        return self.kind is not PeriodKind.UNSPECIFIED

    def key(self):
        if self.kind in (PeriodKind.DATE_POINT, PeriodKind.DATE_RANGE):
            return (self.kind.value, self.start, self.end)
        return (self.kind.value, self.year, self.quarter)

    def matches(self, other: "FiscalPeriod") -> bool:
        return self.specified and other.specified and self.key() == other.key()

    def shifted(self, basis: str) -> "FiscalPeriod":
        """The comparison period: ``prior_year`` or ``prior_quarter``."""
        if self.kind is PeriodKind.FISCAL_YEAR:
            return fiscal_year(self.year - 1)
        if self.kind is PeriodKind.QUARTER:
            if basis == "prior_quarter":
                if self.quarter == 1:
                    return quarter(self.year - 1, 4)
                return quarter(self.year, self.quarter - 1)
            return quarter(self.year - 1, self.quarter)
        raise ValueError(f"cannot shift a {self.kind.value} period")

    def label(self) -> str:
        if self.kind is PeriodKind.FISCAL_YEAR:
            return f"FY{self.year}"
        if self.kind is PeriodKind.QUARTER:
            return f"Q{self.quarter} {self.year}"
        if self.kind is PeriodKind.DATE_POINT:
            return self.start.isoformat()
        if self.kind is PeriodKind.DATE_RANGE:
            return f"{self.start.isoformat()}..{self.end.isoformat()}"
        return "unspecified"

    def to_json(self) -> dict:
        return {"kind": self.kind.value, "year": self.year, "quarter": self.quarter,
                "start": self.start.isoformat() if self.start else None,
                "end": self.end.isoformat() if self.end else None}


UNSPECIFIED = FiscalPeriod()


def fiscal_year(year: int) -> FiscalPeriod:
    return FiscalPeriod(PeriodKind.FISCAL_YEAR, year)


def quarter(year: int, q: int) -> FiscalPeriod:
    return FiscalPeriod(PeriodKind.QUARTER, year, q)


_MONTHS = {name.lower(): i for i, name in enumerate(calendar.month_name) if name}
_MONTHS.update({name.lower(): i for i, name in enumerate(calendar.month_abbr) if name})
_MONTH_RE = "|".join(sorted((m for m in _MONTHS), key=len, reverse=True))
_ORDINAL_Q = {"first": 1, "second": 2, "third": 3, "fourth": 4, "1st": 1, "2nd": 2, "3rd": 3, "4th": 4}


def _year(text: str) -> int:
    y = int(text)
    return y + 2000 if y < 100 else y


def _ended(m):
    month, day, year = _MONTHS[m.group("month").lower()], int(m.group("day")), int(m.group("year"))
    end = date(year, month, day)
    return FiscalPeriod(PeriodKind.FISCAL_YEAR, year, end=end)


def _point(m):
    d = date(int(m.group("year")), _MONTHS[m.group("month").lower()], int(m.group("day")))
    return FiscalPeriod(PeriodKind.DATE_POINT, d.year, start=d, end=d)


def _range(m):
    a, b = int(m.group("a")), int(m.group("b"))
    if a > b:
        return None
    return FiscalPeriod(PeriodKind.DATE_RANGE, a, start=date(a, 1, 1), end=date(b, 12, 31))


# (pattern, builder) in priority order; earlier patterns claim their spans first
_PERIOD_PATTERNS = [
    (re.compile(rf"\b(?:fiscal\s+)?years?\s+ended\s+(?P<month>{_MONTH_RE})\.?\s+(?P<day>\d{{1,2}}),?\s+(?P<year>\d{{4}})\b", re.I), _ended),
    (re.compile(r"\bQ(?P<q>[1-4])\s*(?:FY|fiscal\s+)?\s*'?(?P<year>\d{4}|\d{2})\b", re.I),
     lambda m: quarter(_year(m.group("year")), int(m.group("q")))),
    (re.compile(r"\b(?P<year>(?:19|20)\d{2})\s*Q(?P<q>[1-4])\b", re.I),
     lambda m: quarter(int(m.group("year")), int(m.group("q")))),
    (re.compile(r"\b(?P<ord>first|second|third|fourth|1st|2nd|3rd|4th)\s+(?:fiscal\s+)?quarter\s+(?:of\s+)?(?:fiscal\s+)?(?:year\s+)?(?P<year>\d{4})\b", re.I),
     lambda m: quarter(int(m.group("year")), _ORDINAL_Q[m.group("ord").lower()])),
    (re.compile(r"\b(?:FY|fiscal\s+(?:year\s+)?)\s*'?(?P<year>\d{4}|\d{2})\b", re.I),
     lambda m: fiscal_year(_year(m.group("year")))),
    (re.compile(rf"\b(?P<month>{_MONTH_RE})\.?\s+(?P<day>\d{{1,2}}),?\s+(?P<year>\d{{4}})\b", re.I), _point),
    (re.compile(r"\b(?P<a>(?:19|20)\d{2})\s*(?:-|–|to|through)\s*(?P<b>(?:19|20)\d{2})\b"), _range),
    (re.compile(r"(?<![\d$.,])\b(?P<year>(?:19|20)\d{2})\b(?![.,]?\d|%)"), lambda m: fiscal_year(int(m.group("year")))),
]
_BARE_QUARTER = re.compile(r"\bQ(?P<q>[1-4])\b")


def find_periods(text: str, context_year: Optional[int] = None) -> list[tuple[int, int, FiscalPeriod]]:
    """Non-overlapping period mentions ordered by position."""
    taken: list[tuple[int, int, FiscalPeriod]] = []

    def free(s, e):
        return all(e <= ts or s >= te for ts, te, _ in taken)

    for pattern, build in _PERIOD_PATTERNS:
        for m in pattern.finditer(text):
            if not free(*m.span()):
                continue
            try:
                period = build(m)
            except ValueError:
                continue
            if period is not None:
                taken.append((m.start(), m.end(), period))
    if context_year is not None:
        for m in _BARE_QUARTER.finditer(text):
            if free(*m.span()):
                taken.append((m.start(), m.end(), quarter(context_year, int(m.group("q")))))
    return sorted(taken, key=lambda t: t[0])


def parse_period(text: str, context_year: Optional[int] = None) -> FiscalPeriod:
    """First period mentioned in ``text``; ``UNSPECIFIED`` when none."""
    found = find_periods(text or "", context_year)
    return found[0][2] if found else UNSPECIFIED
