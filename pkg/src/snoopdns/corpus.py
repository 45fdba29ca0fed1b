"""Domain corpora and observation persistence.

Input side: domain lists arrive either as plain text (one name per
line, # comments) or as CSV ranking exports with a domain column.
Output side: observations stream to JSON Lines, one self-contained
record per line, so a crashed or interrupted scan loses at most the
line being written and partial logs stay loadable.
"""

import json
import threading
from dataclasses import dataclass, field
from typing import Iterable, TextIO

from . import wire
from .clock import Clock
from .engine import CycleError, RefreshEvent, RefreshObservation, SnoopError
from .transport import Prober, ProbeTimeout

SCHEMA_VERSION = 1


class ParseError(ValueError):
    """Input file cannot be understood; message carries the line number."""


class ResolverUnreachable(SnoopError):
    """Every probe in a liveness round timed out: the server is down,
    not the domains."""


@dataclass(frozen=True)
class DomainEntry:
    domain: str
    rank: int | None = None


@dataclass
class DomainList:
    entries: list[DomainEntry] = field(default_factory=list)
    skipped: int = 0

    @property
    def domains(self) -> list[str]:
        return [e.domain for e in self.entries]


def _sniff_format(first_line: str) -> str:
    cells = [c.strip().strip('"').lower() for c in first_line.split(",")]
    if "domain" in cells and len(cells) > 1 or cells == ["domain"]:
        return "csv_with_domain_column"
    return "plain_lines"


def load_domain_list(path: str, fmt: str = "auto") -> DomainList:
    """Read a domain list, skipping (and counting) invalid entries.

    fmt is "plain_lines", "csv_with_domain_column", or "auto" to sniff
    from the header line. Duplicates keep their first occurrence and
    count as skipped. Structural problems raise ParseError with the
    offending line number.
    """
    with open(path, "r", encoding="utf-8", errors="replace") as handle:
        lines = handle.read().splitlines()
    if fmt == "auto":
        first = next((ln for ln in lines if ln.strip()), "")
        fmt = _sniff_format(first)
    if fmt == "plain_lines":
        return _load_plain(lines)
    if fmt == "csv_with_domain_column":
        return _load_csv(lines, path)
    raise ValueError(f"unknown domain list format {fmt!r}")


def _load_plain(lines: list[str]) -> DomainList:
    out = DomainList()
    seen: set[str] = set()
    for raw in lines:
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        _append(out, seen, line, rank=None)
    return out


def _load_csv(lines: list[str], path: str) -> DomainList:
    import csv

    reader = csv.reader(lines)
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError(f"{path}:1: empty file where a CSV header was expected")
    columns = {name.strip().lower(): i for i, name in enumerate(header)}
    if "domain" not in columns:
        raise ParseError(f"{path}:1: no 'domain' column in header {header!r}")
    domain_col = columns["domain"]
    rank_col = columns.get("globalrank", columns.get("rank"))
    out = DomainList()
    seen: set[str] = set()
    for number, row in enumerate(reader, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if domain_col >= len(row):
            out.skipped += 1
            continue
        rank = None
        if rank_col is not None and rank_col < len(row):
            try:
                rank = int(row[rank_col].strip())
            except ValueError:
                rank = None
        _append(out, seen, row[domain_col].strip(), rank=rank)
    return out


def _append(out: DomainList, seen: set[str], name: str, rank: int | None) -> None:
    try:
        canonical = wire.validate_name(name)
    except wire.InvalidName:
        out.skipped += 1
        return
    if canonical in seen:
        out.skipped += 1
        return
    seen.add(canonical)
    out.entries.append(DomainEntry(domain=canonical, rank=rank))


def liveness_filter(prober: Prober, clock: Clock, server: str,
                    domains: Iterable[str], attempts: int = 3,
                    spacing: float = 60.0) -> tuple[list[str], list[str]]:
    """Split domains into (live, dead) by repeated resolution attempts.

    A domain is dead only after failing every one of `attempts` rounds,
    spaced at least `spacing` seconds apart, so a transient upstream
    failure does not drop it. If every probe times out before the server
    has answered anything at all, the server itself is unreachable and
    ResolverUnreachable is raised; once it has replied even once, later
    timeouts are charged to the domains, not the server.
    """
    if attempts < 1:
        raise ValueError("attempts must be at least 1")
    pending = list(dict.fromkeys(domains))
    live: list[str] = []
    order = {d: i for i, d in enumerate(pending)}
    server_answered = False
    for attempt in range(attempts):
        if not pending:
            break
        if attempt > 0:
            clock.sleep(spacing)
        still: list[str] = []
        timeouts = 0
        for domain in pending:
            try:
                reply = prober.probe(server, domain, recursion_desired=True)
            except ProbeTimeout:
                timeouts += 1
                still.append(domain)
                continue
            server_answered = True
            if wire.min_answer_ttl(reply.response, domain) is not None:
                live.append(domain)
            else:
                still.append(domain)
        if timeouts == len(pending) and not server_answered:
            raise ResolverUnreachable(
                f"{server}: all {timeouts} liveness probes timed out")
        pending = still
    live.sort(key=order.__getitem__)
    dead = sorted(pending, key=order.__getitem__)
    return live, dead


def observation_to_json(observation: RefreshObservation, scan_id: str) -> dict:
    record = {
        "kind": "observation",
        "schema_version": SCHEMA_VERSION,
        "scan_id": scan_id,
        "server": observation.server,
        "domain": observation.domain,
        "method": observation.method,
        "window_start": observation.window_start,
        "window_length": observation.window_length,
        "probe_rtt_ms": observation.probe_rtt_ms,
        "censored": observation.censored,
        "event": None,
    }
    if observation.event is not None:
        record["event"] = {
            "delay_after_expiry": observation.event.delay_after_expiry,
            "inferred_refresh_time": observation.event.inferred_refresh_time,
        }
    return record


def error_to_json(error: CycleError, scan_id: str) -> dict:
    return {
        "kind": "error",
        "schema_version": SCHEMA_VERSION,
        "scan_id": scan_id,
        "server": error.server,
        "domain": error.domain,
        "method": error.method,
        "at": error.at,
        "error_kind": error.kind,
        "message": error.message,
    }


def observation_from_json(record: dict) -> RefreshObservation:
    if record.get("kind") != "observation":
        raise ParseError(f"not an observation record: kind={record.get('kind')!r}")
    if record.get("schema_version") != SCHEMA_VERSION:
        raise ParseError(f"unsupported schema_version {record.get('schema_version')!r}")
    try:
        event = None
        if record["event"] is not None:
            event = RefreshEvent(
                delay_after_expiry=float(record["event"]["delay_after_expiry"]),
                inferred_refresh_time=float(record["event"]["inferred_refresh_time"]))
        observation = RefreshObservation(
            server=str(record["server"]),
            domain=str(record["domain"]),
            method=str(record["method"]),
            window_start=float(record["window_start"]),
            window_length=float(record["window_length"]),
            probe_rtt_ms=float(record["probe_rtt_ms"]),
            censored=bool(record["censored"]),
            event=event)
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed observation record: {exc}") from exc
    observation.validate()
    return observation


class ObservationWriter:
    """Append-only JSONL sink, one flushed line per record.

    A lock serializes writers so concurrent probing threads cannot tear
    lines; flushing per record bounds loss on a crash to the final line.
    """

    def __init__(self, out: TextIO, scan_id: str):
        self.out = out
        self.scan_id = scan_id
        self.records_written = 0
        self._lock = threading.Lock()

    def write(self, item: "RefreshObservation | CycleError") -> None:
        if isinstance(item, RefreshObservation):
            record = observation_to_json(item, self.scan_id)
        elif isinstance(item, CycleError):
            record = error_to_json(item, self.scan_id)
        else:
            raise TypeError(f"cannot log a {type(item).__name__}")
        line = json.dumps(record, sort_keys=True)
        with self._lock:
            self.out.write(line + "\n")
            self.out.flush()
            self.records_written += 1


@dataclass
class ObservationLog:
    """Result of reading a JSONL log back."""

    observations: list[RefreshObservation] = field(default_factory=list)
    errors: list[dict] = field(default_factory=list)
    corrupt_lines: int = 0
    scan_ids: set[str] = field(default_factory=set)


def load_observations(path: str) -> ObservationLog:
    """Read a JSONL observation log, skipping corrupt lines.

    Corrupt means undecodable JSON, an unknown kind, a bad schema
    version, or a record failing observation validation; each is
    counted, never fatal, so partial logs from interrupted scans load.
    """
    log = ObservationLog()
    with open(path, "r", encoding="utf-8", errors="replace") as handle:
        for line in handle:
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError:
                log.corrupt_lines += 1
                continue
            if not isinstance(record, dict):
                log.corrupt_lines += 1
                continue
            kind = record.get("kind")
            if kind == "observation":
                try:
                    log.observations.append(observation_from_json(record))
                except (ParseError, ValueError):
                    log.corrupt_lines += 1
                    continue
            elif kind == "error" and record.get("schema_version") == SCHEMA_VERSION:
                log.errors.append(record)
            else:
                log.corrupt_lines += 1
                continue
            if "scan_id" in record:
                log.scan_ids.add(str(record["scan_id"]))
    return log
