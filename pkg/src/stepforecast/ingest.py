"""Raw step records: parsing, validation, canonical NDJSON, synthetic corpora."""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta
from pathlib import Path
from typing import BinaryIO, Iterable

import numpy as np

logger = logging.getLogger(__name__)

CSV_COLUMNS = ("user_id", "start_time", "end_time", "steps", "source")
TIMESTAMP_FORMAT = "%Y-%m-%dT%H:%M:%S"


class RecordParseError(ValueError):
    """Raised in strict mode on the first invalid row."""

    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


@dataclass(frozen=True, slots=True)
class RawRecord:
    user_id: str
    start_time: datetime
    end_time: datetime
    steps: int
    source: str | None = None

    def __post_init__(self):
        if self.end_time < self.start_time:
            raise ValueError("end before start")
        if self.steps < 0:
            raise ValueError("negative steps")

    @property
    def duration(self) -> timedelta:
        return self.end_time - self.start_time

    def to_dict(self) -> dict:
        return {
            "user_id": self.user_id,
            "start_time": format_timestamp(self.start_time),
            "end_time": format_timestamp(self.end_time),
            "steps": self.steps,
            "source": self.source,
        }


@dataclass(frozen=True)
class StudyPeriod:
    start_date: date
    end_date: date

    def __post_init__(self):
        if self.start_date > self.end_date:
            raise ValueError("study period start_date after end_date")

    def __contains__(self, day: date) -> bool:
        return self.start_date <= day <= self.end_date

    def to_dict(self) -> dict:
        return {"start_date": self.start_date.isoformat(), "end_date": self.end_date.isoformat()}

    @classmethod
    def from_dict(cls, d: dict) -> "StudyPeriod":
        return cls(date.fromisoformat(d["start_date"]), date.fromisoformat(d["end_date"]))


@dataclass
class ParseReport:
    rows_read: int = 0
    rows_accepted: int = 0
    rows_rejected: int = 0
    rejection_reasons: list[tuple[int, str]] = field(default_factory=list)

    def reject(self, line: int, reason: str) -> None:
        self.rows_rejected += 1
        self.rejection_reasons.append((line, reason))

    def to_dict(self) -> dict:
        return {
            "rows_read": self.rows_read,
            "rows_accepted": self.rows_accepted,
            "rows_rejected": self.rows_rejected,
            "rejection_reasons": [list(r) for r in self.rejection_reasons],
        }


def format_timestamp(ts: datetime) -> str:
    return ts.strftime(TIMESTAMP_FORMAT)


def parse_timestamp(text: str) -> datetime:
    # fromisoformat is lenient about shape, so pin the exact layout first
    if not isinstance(text, str) or len(text) != 19 or text[10] != "T":
        raise ValueError(f"bad timestamp {text!r}")
    return datetime.fromisoformat(text)


def _parse_steps(value) -> int:
    if isinstance(value, bool):
        raise ValueError("bad steps")
    if isinstance(value, int):
        return value
    if isinstance(value, float):
        if not value.is_integer():
            raise ValueError("non-integer steps")
        return int(value)
    if isinstance(value, str):
        text = value.strip()
        try:
            return int(text)
        except ValueError:
            raise ValueError("bad steps") from None
    raise ValueError("bad steps")


def _validate_row(row: dict) -> RawRecord:
    """Build a record from a field mapping; raises ValueError(reason)."""
    for name in CSV_COLUMNS[:4]:
        if row.get(name) is None or row.get(name) == "":
            raise ValueError(f"missing {name}")
    user_id = str(row["user_id"])
    try:
        start = parse_timestamp(row["start_time"])
        end = parse_timestamp(row["end_time"])
    except ValueError:
        raise ValueError("bad timestamp") from None
    steps = _parse_steps(row["steps"])
    if end < start:
        raise ValueError("end before start")
    if steps < 0:
        raise ValueError("negative steps")
    source = row.get("source")
    source = None if source in (None, "") else str(source)
    return RawRecord(user_id, start, end, steps, source)


def _iter_csv(text: io.TextIOBase):
    reader = csv.reader(text)
    try:
        header = next(reader)
    except StopIteration:
        return
    if tuple(h.strip() for h in header) != CSV_COLUMNS:
        raise ValueError(f"CSV header must be {','.join(CSV_COLUMNS)}, got {','.join(header)}")
    for row in reader:
        line = reader.line_num
        if not row:
            continue
        if len(row) != len(CSV_COLUMNS):
            yield line, None, "wrong column count"
            continue
        yield line, dict(zip(CSV_COLUMNS, row)), None


def _iter_ndjson(text: io.TextIOBase):
    for line, raw in enumerate(text, start=1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError:
            yield line, None, "malformed JSON"
            continue
        if not isinstance(obj, dict):
            yield line, None, "not a JSON object"
            continue
        yield line, obj, None


def parse_records(source: BinaryIO | bytes, format: str = "csv", mode: str = "strict"):
    """Parse raw step records from a UTF-8 byte stream.

    Parameters
    ----------
    source : binary file-like or bytes
    format : {"csv", "ndjson"}
    mode : {"strict", "lenient"}
        Strict aborts with :class:`RecordParseError` on the first invalid row;
        lenient skips it and logs the reason in the report.

    Returns
    -------
    records : list of RawRecord, in input order
    report : ParseReport
    """
    if format not in ("csv", "ndjson"):
        raise ValueError(f"unknown format {format!r}")
    if mode not in ("strict", "lenient"):
        raise ValueError(f"unknown mode {mode!r}")
    data = source if isinstance(source, (bytes, bytearray)) else source.read()
    try:
        text = io.StringIO(bytes(data).decode("utf-8"), newline="")
    except UnicodeDecodeError as exc:
        raise ValueError(f"input is not valid UTF-8: {exc}") from exc

    rows = _iter_csv(text) if format == "csv" else _iter_ndjson(text)
    records: list[RawRecord] = []
    report = ParseReport()
    for line, row, error in rows:
        report.rows_read += 1
        if error is None:
            try:
                records.append(_validate_row(row))
                report.rows_accepted += 1
                continue
            except ValueError as exc:
                error = str(exc)
        if mode == "strict":
            raise RecordParseError(line, error)
        report.reject(line, error)
    if report.rows_rejected:
        logger.info("rejected %d of %d rows", report.rows_rejected, report.rows_read)
    return records, report


def read_records(path, format: str | None = None, mode: str = "strict"):
    """Parse a CSV or NDJSON file; the format defaults to the file suffix."""
    path = Path(path)
    if format is None:
        format = "csv" if path.suffix.lower() == ".csv" else "ndjson"
    with open(path, "rb") as fh:
        return parse_records(fh, format, mode)


def records_to_ndjson(records: Iterable[RawRecord]) -> str:
    return "".join(json.dumps(r.to_dict(), separators=(",", ":")) + "\n" for r in records)


def records_to_csv(records: Iterable[RawRecord]) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in records:
        writer.writerow([r.user_id, format_timestamp(r.start_time), format_timestamp(r.end_time),
                         r.steps, r.source or ""])
    return out.getvalue()


def write_records(records: Iterable[RawRecord], path) -> None:
    Path(path).write_text(records_to_ndjson(records), encoding="utf-8")


# ---------------------------------------------------------------------------
# synthetic corpora

# Mean hourly steps before scaling: quiet night, morning ramp, midday plateau,
# evening decay. Scaled so a typical day totals TYPICAL_DAILY_STEPS.
HOURLY_PROFILE = np.array([
    4, 2, 1, 1, 2, 8, 40, 220, 430, 470, 500, 540,
    620, 580, 520, 520, 560, 660, 620, 500, 360, 240, 120, 40,
], dtype=float)
TYPICAL_DAILY_STEPS = 8000.0
HOUR_NOISE_SIGMA = 0.30      # log-sd of per-hour multiplicative noise
OUTLIER_HIGH_FACTOR = 6.0
OUTLIER_LOW_FACTOR = 0.03
SYNTH_START = date(2015, 3, 1)


@dataclass(frozen=True)
class SynthConfig:
    n_users: int = 10
    n_days: int = 30
    seed: int = 0
    duplicate_rate: float = 0.02
    outlier_day_rate: float = 0.02
    nowear_day_rate: float = 0.05
    coarse_record_rate: float = 0.05
    start_date: date = SYNTH_START
    enrollment_spread_days: int = 7     # user i starts 0..spread-1 days after start_date
    user_level_sigma: float = 0.35      # log-sd of the per-user activity level
    day_noise_sigma: float = 0.10       # log-sd of the whole-day multiplier

    def __post_init__(self):
        if self.n_users < 0 or self.n_days < 0:
            raise ValueError("n_users and n_days must be non-negative")
        if self.enrollment_spread_days < 1:
            raise ValueError("enrollment_spread_days must be >= 1")
        if self.user_level_sigma < 0 or self.day_noise_sigma < 0:
            raise ValueError("noise scales must be non-negative")
        for name in ("duplicate_rate", "outlier_day_rate", "nowear_day_rate", "coarse_record_rate"):
            rate = getattr(self, name)
            if not 0.0 <= rate <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {rate}")

    def to_dict(self) -> dict:
        return {
            "n_users": self.n_users, "n_days": self.n_days, "seed": self.seed,
            "duplicate_rate": self.duplicate_rate, "outlier_day_rate": self.outlier_day_rate,
            "nowear_day_rate": self.nowear_day_rate, "coarse_record_rate": self.coarse_record_rate,
            "start_date": self.start_date.isoformat(),
            "enrollment_spread_days": self.enrollment_spread_days,
            "user_level_sigma": self.user_level_sigma, "day_noise_sigma": self.day_noise_sigma,
        }


def _user_records(config: SynthConfig, index: int) -> list[RawRecord]:
    rng = np.random.default_rng([config.seed & (2**64 - 1), index])
    user_id = f"u{index:03d}"
    scale = TYPICAL_DAILY_STEPS / HOURLY_PROFILE.sum()
    level = np.exp(rng.normal(0.0, config.user_level_sigma))
    # per-user weekly rhythm: Mon..Fri near 1, weekend shifted by a user-specific amount
    weekly = np.exp(rng.normal(0.0, 0.08, size=7))
    weekly[5:] *= rng.uniform(0.65, 1.25)
    # users differ slightly in the timing of their day
    shift = int(rng.integers(-1, 2))
    first_day = config.start_date + timedelta(days=int(rng.integers(0, config.enrollment_spread_days)))
    profile = np.roll(HOURLY_PROFILE, shift) * scale * level

    out: list[RawRecord] = []
    for d in range(config.n_days):
        day = first_day + timedelta(days=d)
        nowear = rng.random() < config.nowear_day_rate
        outlier = rng.random() < config.outlier_day_rate
        high = rng.random() < 0.5
        coarse = rng.random() < config.coarse_record_rate
        day_factor = np.exp(rng.normal(0.0, config.day_noise_sigma)) * weekly[day.weekday()]
        hour_noise = np.exp(rng.normal(0.0, HOUR_NOISE_SIGMA, size=24))
        coarse_start = int(rng.integers(9, 16))
        coarse_len = int(rng.integers(2, 6))
        if nowear:
            continue
        if outlier:
            day_factor *= OUTLIER_HIGH_FACTOR if high else OUTLIER_LOW_FACTOR
        hourly = np.rint(profile * day_factor * hour_noise).astype(np.int64)

        day_records: list[RawRecord] = []
        hour = 0
        while hour < 24:
            t0 = datetime(day.year, day.month, day.day, hour)
            if coarse and hour == coarse_start:
                steps = int(hourly[hour:hour + coarse_len].sum())
                end = t0 + timedelta(hours=coarse_len) - timedelta(seconds=1)
                day_records.append(RawRecord(user_id, t0, end, steps, "phone"))
                hour += coarse_len
                continue
            steps = int(hourly[hour])
            hour += 1
            if steps == 0:
                continue
            # one or two sub-hour records per active hour
            if steps >= 50 and rng.random() < 0.5:
                cut = int(rng.integers(10, 50))
                first = int(steps * cut // 60)
                day_records.append(RawRecord(user_id, t0, t0 + timedelta(minutes=cut) - timedelta(seconds=1), first, "phone"))
                day_records.append(RawRecord(user_id, t0 + timedelta(minutes=cut),
                                             t0 + timedelta(minutes=59, seconds=59), steps - first, "phone"))
            else:
                day_records.append(RawRecord(user_id, t0, t0 + timedelta(minutes=59, seconds=59), steps, "phone"))

        for rec in day_records:
            out.append(rec)
            if rng.random() < config.duplicate_rate:
                if rng.random() < 0.5:
                    out.append(rec)
                else:
                    # second device under-reports the same interval
                    partial = int(rec.steps * rng.uniform(0.3, 1.0))
                    out.append(RawRecord(user_id, rec.start_time, rec.end_time, partial, "watch"))
    return out


def generate_synthetic_corpus(config: SynthConfig) -> list[RawRecord]:
    """Deterministic synthetic step records for ``config.n_users`` users.

    Each user draws an activity level, a weekly rhythm and a small circadian
    shift from a generator seeded by ``(seed, user index)``, so users are
    independent of one another and of ``n_users``.
    """
    records: list[RawRecord] = []
    for i in range(config.n_users):
        records.extend(_user_records(config, i))
    return records
