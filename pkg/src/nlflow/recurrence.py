"""Recurrence expressions and next-fire computation.

Supported forms:
  "daily@HH:MM"            every day at the given wall time
  "weekly <day>@HH:MM"     every week on that day (mon..sun or full names)
  "M H DOM MON DOW"        standard 5-field cron (*, lists, ranges, steps)

All computation is wall-time in an IANA zone. Nonexistent wall times (DST
spring-forward gaps) are skipped; ambiguous wall times (fall-back repeats)
fire on both instants, earliest first.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, time, timedelta, timezone
from zoneinfo import ZoneInfo

from .errors import InvalidExpressionError, InvalidTimezoneError

_DAY_NAMES = {
    "sun": 0, "sunday": 0,
    "mon": 1, "monday": 1,
    "tue": 2, "tuesday": 2,
    "wed": 3, "wednesday": 3,
    "thu": 4, "thursday": 4,
    "fri": 5, "friday": 5,
    "sat": 6, "saturday": 6,
}

_MONTH_NAMES = {
    "jan": 1, "feb": 2, "mar": 3, "apr": 4, "may": 5, "jun": 6,
    "jul": 7, "aug": 8, "sep": 9, "oct": 10, "nov": 11, "dec": 12,
}

# Far enough to cover leap-day crons; anything beyond never fires.
_MAX_SEARCH_DAYS = 366 * 4 + 2


@dataclass(frozen=True)
class Recurrence:
    """Parsed recurrence: value sets per field plus restriction flags."""

    minutes: frozenset[int]
    hours: frozenset[int]
    days_of_month: frozenset[int]
    months: frozenset[int]
    days_of_week: frozenset[int]  # cron numbering, 0 = Sunday
    dom_restricted: bool
    dow_restricted: bool

    def matches_date(self, d) -> bool:
        if d.month not in self.months:
            return False
        dom_ok = d.day in self.days_of_month
        dow_ok = ((d.weekday() + 1) % 7) in self.days_of_week
        if self.dom_restricted and self.dow_restricted:
            return dom_ok or dow_ok
        if self.dom_restricted:
            return dom_ok
        if self.dow_restricted:
            return dow_ok
        return True

    def matches_local(self, local: datetime) -> bool:
        return (
            local.minute in self.minutes
            and local.hour in self.hours
            and self.matches_date(local.date())
        )


def _parse_hhmm(text: str) -> tuple[int, int]:
    parts = text.split(":")
    if len(parts) != 2:
        raise InvalidExpressionError(f"expected HH:MM, got {text!r}")
    try:
        hour, minute = int(parts[0]), int(parts[1])
    except ValueError:
        raise InvalidExpressionError(f"expected HH:MM, got {text!r}") from None
    if not (0 <= hour <= 23 and 0 <= minute <= 59):
        raise InvalidExpressionError(f"time out of range: {text!r}")
    return hour, minute


def _field_value(token: str, names: dict[str, int] | None, lo: int, hi: int) -> int:
    low = token.lower()
    if names and low in names:
        return names[low]
    try:
        value = int(token)
    except ValueError:
        raise InvalidExpressionError(f"bad field value {token!r}") from None
    if names is _DAY_NAMES and value == 7:
        value = 0
    if not (lo <= value <= hi):
        raise InvalidExpressionError(f"field value {value} outside {lo}..{hi}")
    return value


def _parse_cron_field(
    text: str, lo: int, hi: int, names: dict[str, int] | None = None
) -> tuple[frozenset[int], bool]:
    """Parse one cron field; returns (value set, restricted flag)."""
    values: set[int] = set()
    restricted = text != "*"
    for item in text.split(","):
        item = item.strip()
        if not item:
            raise InvalidExpressionError(f"empty item in field {text!r}")
        step = 1
        if "/" in item:
            item, step_text = item.split("/", 1)
            try:
                step = int(step_text)
            except ValueError:
                raise InvalidExpressionError(f"bad step in {text!r}") from None
            if step < 1:
                raise InvalidExpressionError(f"step must be positive in {text!r}")
        if item == "*":
            lo_v, hi_v = lo, hi
        elif "-" in item:
            a, b = item.split("-", 1)
            lo_v = _field_value(a, names, lo, hi)
            hi_v = _field_value(b, names, lo, hi)
            if lo_v > hi_v:
                raise InvalidExpressionError(f"inverted range in {text!r}")
        else:
            lo_v = hi_v = _field_value(item, names, lo, hi)
        values.update(range(lo_v, hi_v + 1, step))
    return frozenset(values), restricted


def parse(expression: str) -> Recurrence:
    """Parse a recurrence expression; raises InvalidExpressionError."""
    text = expression.strip()
    if not text:
        raise InvalidExpressionError("empty recurrence expression")
    lowered = text.lower()

    full = frozenset(range(0, 60)), frozenset(range(0, 24))
    all_dom = frozenset(range(1, 32))
    all_mon = frozenset(range(1, 13))
    all_dow = frozenset(range(0, 7))

    if lowered.startswith("daily@"):
        hour, minute = _parse_hhmm(text[len("daily@"):])
        return Recurrence(
            frozenset({minute}), frozenset({hour}),
            all_dom, all_mon, all_dow,
            dom_restricted=False, dow_restricted=False,
        )
    if lowered.startswith("weekly "):
        rest = text[len("weekly "):].strip()
        if "@" not in rest:
            raise InvalidExpressionError(f"expected 'weekly <day>@HH:MM', got {expression!r}")
        day_text, time_text = rest.split("@", 1)
        day = _DAY_NAMES.get(day_text.strip().lower())
        if day is None:
            raise InvalidExpressionError(f"unknown day name {day_text.strip()!r}")
        hour, minute = _parse_hhmm(time_text)
        return Recurrence(
            frozenset({minute}), frozenset({hour}),
            all_dom, all_mon, frozenset({day}),
            dom_restricted=False, dow_restricted=True,
        )

    fields = text.split()
    if len(fields) != 5:
        raise InvalidExpressionError(
            f"expected daily@HH:MM, weekly <day>@HH:MM or 5-field cron, got {expression!r}"
        )
    minutes, _ = _parse_cron_field(fields[0], 0, 59)
    hours, _ = _parse_cron_field(fields[1], 0, 23)
    doms, dom_restricted = _parse_cron_field(fields[2], 1, 31)
    months, _ = _parse_cron_field(fields[3], 1, 12, _MONTH_NAMES)
    dows, dow_restricted = _parse_cron_field(fields[4], 0, 6, _DAY_NAMES)
    return Recurrence(minutes, hours, doms, months, dows, dom_restricted, dow_restricted)


def load_zone(name: str) -> ZoneInfo:
    try:
        return ZoneInfo(name)
    except Exception:
        raise InvalidTimezoneError(f"unknown timezone {name!r}") from None


def _existing_instants(day, hour: int, minute: int, zone: ZoneInfo) -> list[datetime]:
    """Aware instants realizing this wall time, in instant order (0, 1 or 2)."""
    out: list[datetime] = []
    for fold in (0, 1):
        wall = datetime.combine(day, time(hour, minute), tzinfo=zone)
        wall = wall.replace(fold=fold)
        round_trip = wall.astimezone(timezone.utc).astimezone(zone)
        if (round_trip.hour, round_trip.minute) != (hour, minute):
            continue  # nonexistent (spring-forward gap)
        if out and out[0].utcoffset() == wall.utcoffset():
            break  # unambiguous: both folds are the same instant
        out.append(wall)
    return out


def next_fire(expression: str, tz: str, after: datetime) -> datetime:
    """Smallest instant strictly after `after` matching the expression in `tz`."""
    rec = parse(expression)
    zone = load_zone(tz)
    if after.tzinfo is None:
        raise InvalidExpressionError("`after` must be timezone-aware")
    local_after = after.astimezone(zone)
    # Intra-zone comparisons ignore fold, so compare as UTC instants.
    after_utc = after.astimezone(timezone.utc)
    day = local_after.date() - timedelta(days=1)
    for _ in range(_MAX_SEARCH_DAYS):
        if rec.matches_date(day):
            for hour in sorted(rec.hours):
                for minute in sorted(rec.minutes):
                    for instant in _existing_instants(day, hour, minute, zone):
                        if instant.astimezone(timezone.utc) > after_utc:
                            return instant
        day += timedelta(days=1)
    raise InvalidExpressionError(f"expression never fires: {expression!r}")


def matches(expression: str, tz: str, when: datetime) -> bool:
    """True iff `when` is a fire instant of the expression in `tz`."""
    rec = parse(expression)
    zone = load_zone(tz)
    if when.tzinfo is None:
        return False
    return rec.matches_local(when.astimezone(zone))
