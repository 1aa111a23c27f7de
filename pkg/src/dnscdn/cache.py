"""Authoritative-TTL discovery and cache hit/miss classification.

A response is judged against the TTL the CDN's authoritative servers
publish: equal means the resolver served it from cache, lower means a
fresh fetch, higher is unexplainable and reported as Unknown.  (That
reading is kept verbatim from the measurement methodology this tool
implements; the conventional interpretation, where an untouched TTL marks
the fresh fetch, is available as Convention.EQUAL_IS_MISS.  Neither is
asserted as ground truth.)
"""

from __future__ import annotations

import logging
import statistics
import time
from dataclasses import dataclass
from enum import Enum
from importlib import resources

from .resolve import resolve_once
from .wire import DnsQuestion, IpVersion, RecordType

log = logging.getLogger(__name__)


class Verdict(Enum):
    HIT = "hit"
    MISS = "miss"
    UNKNOWN = "unknown"


class TtlQuirk(Enum):
    NONE = "none"
    # Google decrements the authoritative TTL by one second before serving
    # a freshly fetched response, so auth-1 is its miss signature.
    GOOGLE_DECREMENT = "google-decrement"


class Convention(Enum):
    EQUAL_IS_HIT = "equal-is-hit"  # an untouched TTL was served from cache
    EQUAL_IS_MISS = "equal-is-miss"  # an untouched TTL marks the fresh fetch


class TtlSource(Enum):
    DIRECT_QUERY = "direct-query"
    STATIC_DEFAULT = "static-default"


class NoAuthorityError(Exception):
    """NS set unresolvable and no static default configured for the CDN."""


class EmptyInputError(Exception):
    pass


@dataclass
class AuthoritativeTtl:
    domain: str
    cdn: str
    ttl: int
    source: TtlSource
    discovered_at: float

    def __post_init__(self):
        if self.ttl <= 0:
            raise ValueError("authoritative ttl must be positive")


@dataclass
class CacheVerdict:
    verdict: Verdict
    response_ttl: int
    authoritative_ttl: int
    quirk_applied: TtlQuirk = TtlQuirk.NONE


def classify(
    response_ttl: int,
    authoritative_ttl: int,
    quirk: TtlQuirk = TtlQuirk.NONE,
    convention: Convention = Convention.EQUAL_IS_HIT,
) -> CacheVerdict:
    """Classify one response TTL against the authoritative TTL.

    Total and deterministic.  Unknown always and only means the response
    TTL exceeds the authoritative one, under either convention.
    """
    if response_ttl < 0 or authoritative_ttl < 0:
        raise ValueError("TTLs must be non-negative")
    if response_ttl > authoritative_ttl:
        verdict = Verdict.UNKNOWN
    elif convention is Convention.EQUAL_IS_HIT:
        verdict = Verdict.HIT if response_ttl == authoritative_ttl else Verdict.MISS
    else:
        # Fresh-fetch signature: the unmodified authoritative TTL, or one
        # less under the Google decrement quirk.
        fresh = authoritative_ttl - (1 if quirk is TtlQuirk.GOOGLE_DECREMENT else 0)
        verdict = Verdict.MISS if response_ttl == fresh else Verdict.HIT
    return CacheVerdict(
        verdict=verdict,
        response_ttl=response_ttl,
        authoritative_ttl=authoritative_ttl,
        quirk_applied=quirk,
    )


def parse_ttl_table(text: str) -> dict[str, int]:
    """Parse a defaults table: one `cdn_name <whitespace> ttl_seconds` per line.

    Blank lines and #-comments are skipped.
    """
    table: dict[str, int] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"line {lineno}: expected 'cdn ttl', got {line!r}")
        name, raw_ttl = parts
        ttl = int(raw_ttl)
        if ttl <= 0:
            raise ValueError(f"line {lineno}: ttl must be positive")
        table[name.lower()] = ttl
    return table


def load_ttl_table(path: str | None = None) -> dict[str, int]:
    """Load static default TTLs; without a path, the packaged table."""
    if path is None:
        text = resources.files("dnscdn.data").joinpath("default_ttls.txt").read_text()
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    return parse_ttl_table(text)


def discover_authoritative_ttl(
    domain: str,
    cdn: str,
    *,
    recursive_resolver: str = "8.8.8.8",
    resolve_fn=resolve_once,
    static_defaults: dict[str, int] | None = None,
    timeout_ms: float = 5000.0,
) -> AuthoritativeTtl:
    """Learn the authoritative TTL of domain's A record.

    Finds the NS set through a recursive resolver (walking up parent zones
    when the exact name has none), queries one authoritative server
    directly, and reads the TTL off its answer.  On any failure the static
    defaults table supplies the value; with no default either, raises
    NoAuthorityError.
    """
    if static_defaults is None:
        static_defaults = load_ttl_table()
    try:
        ttl = _direct_query_ttl(domain, recursive_resolver, resolve_fn, timeout_ms)
        return AuthoritativeTtl(domain, cdn, ttl, TtlSource.DIRECT_QUERY, time.time())
    except Exception as exc:  # noqa: BLE001 - any lookup failure falls back
        log.debug("direct TTL discovery for %s failed: %s", domain, exc)
    default = static_defaults.get(cdn.lower())
    if default is None:
        raise NoAuthorityError(f"no NS answer for {domain} and no static default for {cdn}")
    return AuthoritativeTtl(domain, cdn, default, TtlSource.STATIC_DEFAULT, time.time())


def _ask(name, qtype, resolver, resolve_fn, timeout_ms):
    question = DnsQuestion(
        qname=name,
        qtype=qtype,
        resolver_address=resolver,
        transport_version=IpVersion.of_address(resolver),
        timeout_ms=timeout_ms,
    )
    return resolve_fn(question)


def _direct_query_ttl(domain, recursive_resolver, resolve_fn, timeout_ms) -> int:
    # Walk up from the exact name until some zone yields NS records.
    labels = domain.rstrip(".").split(".")
    ns_name = None
    for start in range(len(labels) - 1):
        zone = ".".join(labels[start:])
        reply = _ask(zone, RecordType.NS, recursive_resolver, resolve_fn, timeout_ms)
        names = [r.rdata for r in reply.answers if r.rtype == RecordType.NS]
        if names:
            ns_name = names[0]
            break
    if ns_name is None:
        raise NoAuthorityError(f"no NS records found above {domain}")
    ns_reply = _ask(ns_name, RecordType.A, recursive_resolver, resolve_fn, timeout_ms)
    ns_addr = None
    for record in ns_reply.answers:
        if record.rtype == RecordType.A:
            ns_addr = record.rdata
            break
    if ns_addr is None:
        raise NoAuthorityError(f"authoritative server {ns_name} has no A record")
    direct = _ask(domain, RecordType.A, ns_addr, resolve_fn, timeout_ms)
    for record in direct.answers:
        if record.rtype == RecordType.A:
            return record.ttl
    if direct.answers:
        return direct.answers[0].ttl
    raise NoAuthorityError(f"authoritative server returned no answers for {domain}")


@dataclass
class ClassifiedPoint:
    """One verdict-plus-latency datum feeding the hit-rate table."""

    cdn: str
    resolver_label: str
    ip_version: IpVersion
    verdict: Verdict
    latency_ms: float


@dataclass
class HitRateRow:
    cdn: str
    resolver_label: str
    ip_version: IpVersion
    count: int
    hit_rate: float  # percent
    miss_rate: float
    unknown_rate: float
    median_hit_ms: float | None
    median_miss_ms: float | None
    median_unknown_ms: float | None


def hit_rate_table(points: list[ClassifiedPoint]) -> list[HitRateRow]:
    """Aggregate classified points into per-(cdn, resolver, ip version) rows.

    Rates are percentages summing to 100 per row; a verdict class with no
    points reports rate 0 and a missing median (rendered "N/A" downstream).
    """
    if not points:
        raise EmptyInputError("no classified points")
    groups: dict[tuple, list[ClassifiedPoint]] = {}
    for point in points:
        groups.setdefault((point.cdn, point.resolver_label, point.ip_version), []).append(point)
    rows = []
    for (cdn, resolver_label, ip_version), members in sorted(
        groups.items(), key=lambda kv: (kv[0][0], kv[0][1], kv[0][2].value)
    ):
        total = len(members)
        by_verdict = {v: [p.latency_ms for p in members if p.verdict is v] for v in Verdict}
        rows.append(
            HitRateRow(
                cdn=cdn,
                resolver_label=resolver_label,
                ip_version=ip_version,
                count=total,
                hit_rate=100.0 * len(by_verdict[Verdict.HIT]) / total,
                miss_rate=100.0 * len(by_verdict[Verdict.MISS]) / total,
                unknown_rate=100.0 * len(by_verdict[Verdict.UNKNOWN]) / total,
                median_hit_ms=_maybe_median(by_verdict[Verdict.HIT]),
                median_miss_ms=_maybe_median(by_verdict[Verdict.MISS]),
                median_unknown_ms=_maybe_median(by_verdict[Verdict.UNKNOWN]),
            )
        )
    return rows


def _maybe_median(values: list[float]) -> float | None:
    return statistics.median(values) if values else None
