"""Monday-start ISO week labels; a calendar date maps to the week containing it."""

from __future__ import annotations

import datetime as dt
from functools import lru_cache


def week_label(date: dt.date) -> str:
    y, w, _ = date.isocalendar()
    return f"{y}-W{w:02d}"


def week_start(label: str) -> dt.date:
    y, w = label.split("-W")
    return dt.date.fromisocalendar(int(y), int(w), 1)


@lru_cache(maxsize=None)
def week_labels(start_year: int = 2019, end_year: int = 2020) -> tuple[str, ...]:
    """Every ISO week of ``start_year``..``end_year`` inclusive, in order."""
    first = dt.date.fromisocalendar(start_year, 1, 1)
    last = dt.date.fromisocalendar(end_year + 1, 1, 1)
    n = (last - first).days // 7
    return tuple(week_label(first + dt.timedelta(weeks=i)) for i in range(n))


def year_slice(labels: tuple[str, ...], year: int) -> slice:
    idx = [i for i, lab in enumerate(labels) if lab.startswith(f"{year}-W")]
    if not idx:
        return slice(0, 0)
    return slice(idx[0], idx[-1] + 1)


def is_contiguous(labels: tuple[str, ...] | list[str]) -> bool:
    starts = [week_start(l) for l in labels]
    return all((b - a).days == 7 for a, b in zip(starts, starts[1:]))
