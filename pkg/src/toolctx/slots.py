"""Slot-family vocabulary shared by the generator, the globalizer and diagnosis.

A slot family is a recurring parameter convention (dates, identifiers, numeric
bounds, ...) that shows up across many tools under slightly different names.
"""

from __future__ import annotations

import re
from datetime import date, datetime

DATETIME = "datetime_fields"
NUMERIC_BOUNDS = "numeric_bounds"
BOOLEAN = "boolean_parameters"
IDENTIFIER = "identifier_fields"
SORTING = "sorting"
CURRENCY = "currency_units"

FAMILIES = (IDENTIFIER, DATETIME, NUMERIC_BOUNDS, BOOLEAN, SORTING, CURRENCY)

FAMILY_ALIASES = {
    "identifier": IDENTIFIER,
    "identifiers": IDENTIFIER,
    "id": IDENTIFIER,
    "datetime": DATETIME,
    "date_time": DATETIME,
    "date": DATETIME,
    "dates": DATETIME,
    "numeric": NUMERIC_BOUNDS,
    "bounds": NUMERIC_BOUNDS,
    "boolean": BOOLEAN,
    "booleans": BOOLEAN,
    "sort": SORTING,
    "currency": CURRENCY,
    "units": CURRENCY,
}

# Canonical global rule bodies. Generated parameter descriptions reuse the
# second sentence verbatim so the duplication test has something to find.
RULE_TEXT = {
    DATETIME: (
        "DateTime Fields. Dates use ISO-8601 format (YYYY-MM-DD), e.g. 2024-01-05. "
        "A start date is inclusive and an end date is inclusive unless the tool overrides it. "
        "Resolve relative dates such as last week against the current date."
    ),
    NUMERIC_BOUNDS: (
        "Numeric Bounds. Minimum and maximum values are plain numbers and both bounds are inclusive by default. "
        "Never send a minimum larger than the maximum. "
        "Leave a bound unset when the user gives no limit on that side."
    ),
    BOOLEAN: (
        "Boolean Parameters. Boolean flags take JSON true or false, never strings. "
        "Omit a flag to keep its default unless the user states a preference."
    ),
    IDENTIFIER: (
        "Identifier Fields. Identifiers are copied exactly as the user wrote them, keeping prefix and case. "
        "Never invent or reformat an identifier."
    ),
    SORTING: (
        "Sorting Conventions. Sort direction is asc or desc in lowercase. "
        "Sort field names must match a field returned by the tool."
    ),
    CURRENCY: (
        "Currency and Units. Currency values are three-letter ISO-4217 codes in uppercase such as USD. "
        "Units are sent in their short lowercase form such as kg or km."
    ),
}

# One sentence per family that generated descriptions repeat across tools.
CONVENTION_SENTENCE = {
    DATETIME: "Dates use ISO-8601 format (YYYY-MM-DD), e.g. 2024-01-05.",
    NUMERIC_BOUNDS: "Minimum and maximum values are plain numbers and both bounds are inclusive by default.",
    BOOLEAN: "Boolean flags take JSON true or false, never strings.",
    IDENTIFIER: "Identifiers are copied exactly as the user wrote them, keeping prefix and case.",
    SORTING: "Sort direction is asc or desc in lowercase.",
    CURRENCY: "Currency values are three-letter ISO-4217 codes in uppercase such as USD.",
}

# Words that mark a kept sentence as restating (and diverging from) a convention.
OVERRIDE_CUES = {
    DATETIME: {"format", "iso", "8601", "epoch", "timezone", "utc", "milliseconds", "seconds", "unix", "yyyy"},
    NUMERIC_BOUNDS: {"inclusive", "exclusive", "bound", "bounds"},
    BOOLEAN: {"true", "false", "default", "string", "strings"},
    IDENTIFIER: {"prefix", "uppercase", "lowercase", "case", "format"},
    SORTING: {"asc", "desc", "ascending", "descending", "uppercase"},
    CURRENCY: {"iso", "4217", "symbol", "lowercase", "uppercase"},
}

# member field -> naming variants used by the synthetic generator
VARIANTS: dict[str, dict[str, tuple[str, ...]]] = {
    IDENTIFIER: {
        "accountId": ("accountId", "account_id", "accountIdentifier"),
        "recordId": ("recordId", "record_id", "recordUuid"),
    },
    DATETIME: {
        "startDate": ("startDate", "start_date", "from_date", "fromDate"),
        "endDate": ("endDate", "end_date", "to_date", "toDate"),
    },
    NUMERIC_BOUNDS: {
        "rangeMinimum": ("rangeMinimum", "range_minimum", "min_value", "minValue"),
        "rangeMaximum": ("rangeMaximum", "range_maximum", "max_value", "maxValue"),
    },
    BOOLEAN: {
        "rangeMinimumInclusive": ("rangeMinimumInclusive", "range_minimum_inclusive", "minInclusive"),
        "includeArchived": ("includeArchived", "include_archived", "showArchived"),
    },
    SORTING: {
        "sortBy": ("sortBy", "sort_by", "orderBy", "order_by"),
        "sortOrder": ("sortOrder", "sort_order", "sortDirection", "sort_direction"),
    },
    CURRENCY: {
        "currency": ("currency", "currencyCode", "currency_code"),
        "unit": ("unit", "unitOfMeasure", "measurement_unit"),
    },
}

DEFAULT_MEMBERS = {family: tuple(members) for family, members in VARIANTS.items()}

_CAMEL = re.compile(r"(?<=[a-z0-9])(?=[A-Z])|(?<=[A-Z])(?=[A-Z][a-z])")
_WORD = re.compile(r"[a-z0-9]+")


def canonical_family(name: str) -> str:
    key = name.strip().lower()
    if key in FAMILIES:
        return key
    if key in FAMILY_ALIASES:
        return FAMILY_ALIASES[key]
    raise KeyError(f"unknown slot family {name!r}")


def name_tokens(name: str) -> list[str]:
    """Split ``startDate`` / ``start_date`` / ``Start-Date`` into ``['start', 'date']``."""
    spaced = _CAMEL.sub("_", name)
    return [t for t in re.split(r"[^A-Za-z0-9]+", spaced.lower()) if t]


def text_tokens(text: str) -> list[str]:
    return _WORD.findall(text.lower())


_BOOL_LEADS = {"is", "has", "include", "enable", "allow", "show", "should", "only"}
_BOOL_TAILS = {"inclusive", "exclusive", "enabled", "flag"}
_BOUND_WORDS = {"minimum", "maximum", "min", "max", "lower", "upper", "bound"}
_TIME_WORDS = {"date", "time", "datetime", "timestamp"}


def classify_parameter(name: str, param_type: str) -> str | None:
    """Map a parameter to its slot family, or None for tool-local fields.

    Name cues are checked first (boolean-shaped names, identifiers, sorting,
    dates, bounds, currency); a boolean type only decides when no name cue fires.
    """
    toks = name_tokens(name)
    if not toks:
        return None
    if toks[-1] in _BOOL_TAILS or (toks[0] in _BOOL_LEADS and len(toks) > 1):
        return BOOLEAN
    if toks[-1] in {"id", "ids", "identifier", "uuid"}:
        return IDENTIFIER
    if "sort" in toks or toks[:2] == ["order", "by"] or toks == ["order"] or (
        toks[0] == "order" and toks[-1] in {"direction", "dir"}
    ):
        return SORTING
    if _TIME_WORDS & set(toks) or (toks[-1] == "at" and len(toks) > 1):
        return DATETIME
    if _BOUND_WORDS & set(toks):
        return NUMERIC_BOUNDS
    if "currency" in toks or toks[-1] in {"unit", "units"} or toks[:1] == ["unit"]:
        return CURRENCY
    if param_type == "boolean":
        return BOOLEAN
    return None


_ISO_DATE = re.compile(r"^\d{4}-\d{2}-\d{2}$")
_ISO_DATETIME = re.compile(
    r"^(\d{4}-\d{2}-\d{2})[T ](\d{2}):(\d{2})(?::(\d{2})(?:\.\d+)?)?(Z|[+-]\d{2}:?\d{2})?$"
)


def is_iso8601(value: object) -> bool:
    """True for ISO-8601 calendar dates and date-times that name a real instant."""
    if not isinstance(value, str):
        return False
    text = value.strip()
    try:
        if _ISO_DATE.match(text):
            date.fromisoformat(text)
            return True
        m = _ISO_DATETIME.match(text)
        if m:
            day, hh, mm, ss = m.group(1), int(m.group(2)), int(m.group(3)), int(m.group(4) or 0)
            date.fromisoformat(day)
            datetime(2000, 1, 1, hh, mm, ss)
            return True
    except ValueError:
        return False
    return False
