"""Statistics over measurement sets.

Aggregation follows a strict ladder: per-set medians use the three
latest-timestamped DNS results (masking a misordered prewarm), per-CDN
medians collapse a vantage's websites to one latency point, and all
tables, distributions, and tests operate on those points.  Everything
here is pure; identical inputs give identical outputs.
"""

from __future__ import annotations

import logging
import math
import statistics
from bisect import bisect_right
from dataclasses import dataclass, field
from enum import Enum

from .cache import ClassifiedPoint, Convention, TtlQuirk, classify
from .campaign import MeasurementSet, is_usable
from .mapping import mapping_latency
from .wire import IpVersion

log = logging.getLogger(__name__)

UNASSIGNED_REGION = "unassigned"
HAPPY_EYEBALLS_THRESHOLD_MS = 250.0
ANYCAST_MAX_UNIQUE = 8


class Metric(Enum):
    DNS = "dns"
    MAPPING = "mapping"


class TooFewResultsError(Exception):
    pass


class EmptyInputError(Exception):
    pass


@dataclass
class LatencyPoint:
    """One vantage's single latency datum for a (cdn, resolver, family, metric)."""

    vantage_id: str
    cdn: str
    resolver_label: str
    ip_version: IpVersion
    metric: Metric
    value: float
    region: str | None = None

    def __post_init__(self):
        if self.value < 0:
            raise ValueError("latency value must be non-negative")


def latest_three(mset: MeasurementSet):
    if len(mset.dns_results) < 3:
        raise TooFewResultsError(
            f"set for {mset.website} via {mset.resolver_label} has "
            f"{len(mset.dns_results)} DNS results, need 3"
        )
    ordered = sorted(mset.dns_results, key=lambda r: r.sent_at_monotonic)
    return ordered[-3:]


def per_website_median(mset: MeasurementSet) -> float:
    """Median latency of the three latest-timestamped DNS results.

    Sorting by timestamp (not list position) keeps a prewarm that ran out
    of order from polluting the median.
    """
    return statistics.median(r.latency_ms for r in latest_three(mset))


def per_cdn_median(website_medians: list[float]) -> float:
    """Collapse a vantage's per-website medians to its per-CDN latency.

    Even-length input takes the mean of the two middle values.
    """
    if not website_medians:
        raise EmptyInputError("no website medians")
    return statistics.median(website_medians)


def ecdf(values: list[float]) -> list[tuple[float, float]]:
    """Sorted (value, fraction ≤ value) pairs with ties collapsed."""
    if not values:
        raise EmptyInputError("no values")
    ordered = sorted(values)
    n = len(ordered)
    out = []
    for i, v in enumerate(ordered):
        if i + 1 == n or ordered[i + 1] != v:
            out.append((v, (i + 1) / n))
    return out


def distribution(points: list[LatencyPoint], group_key=None) -> dict:
    """ECDF series per group; the default grouping is
    (metric, cdn, resolver, ip_version)."""
    if not points:
        raise EmptyInputError("no points")
    if group_key is None:
        def group_key(p):  # noqa: E731
            return (p.metric.value, p.cdn, p.resolver_label, p.ip_version.value)
    groups: dict = {}
    for p in points:
        groups.setdefault(group_key(p), []).append(p.value)
    return {key: ecdf(vals) for key, vals in groups.items()}


@dataclass
class KsResult:
    d_statistic: float
    p_value: float
    n1: int
    n2: int


def _ks_d_numerator(a: list[float], b: list[float]) -> int:
    """max over pooled values of |i*n2 - j*n1| (i = #a ≤ v, j = #b ≤ v).

    Integer arithmetic so D = numerator/(n1*n2) is exact.
    """
    sa, sb = sorted(a), sorted(b)
    n1, n2 = len(sa), len(sb)
    best = 0
    for v in sorted(set(sa) | set(sb)):
        i = bisect_right(sa, v)
        j = bisect_right(sb, v)
        best = max(best, abs(i * n2 - j * n1))
    return best


def _ks_asymptotic_p(d: float, n1: int, n2: int) -> float:
    en = math.sqrt(n1 * n2 / (n1 + n2))
    lam = (en + 0.12 + 0.11 / en) * d
    if lam == 0:
        return 1.0
    total = 0.0
    sign = 1.0
    for k in range(1, 101):
        term = math.exp(-2.0 * k * k * lam * lam)
        if term < 1e-12:
            break
        total += sign * term
        sign = -sign
    return min(1.0, max(0.0, 2.0 * total))


def _ks_exact_p(a: list[float], b: list[float], d_num: int) -> float:
    """Exact permutation p-value: P(D >= observed) over all C(n1+n2, n1)
    assignments of the pooled values, tie-aware.

    Walks the pooled distinct values as blocks; a state is the number of
    a-items consumed, weighted by the ways to pick them inside tie blocks.
    Only boundary states within the strict band |i*n2 - j*n1| < d_num
    count toward 'less extreme'.
    """
    n1, n2 = len(a), len(b)
    pooled = sorted(set(a) | set(b))
    blocks = []
    for v in pooled:
        blocks.append((sum(1 for x in a if x == v), sum(1 for x in b if x == v)))
    # weights[i] = number of assignments so far ending with i a-items consumed
    weights = {0: 1}
    consumed = 0
    for ta, tb in blocks:
        t = ta + tb
        consumed += t
        nxt: dict[int, int] = {}
        for i, w in weights.items():
            for k in range(0, t + 1):
                ni = i + k
                if ni > n1 or (consumed - ni) > n2:
                    continue
                j = consumed - ni
                if abs(ni * n2 - j * n1) >= d_num:
                    continue
                nxt[ni] = nxt.get(ni, 0) + w * math.comb(t, k)
        weights = nxt
        if not weights:
            break
    allowed = weights.get(n1, 0)
    return 1.0 - allowed / math.comb(n1 + n2, n1)


def ks_two_sample(a: list[float], b: list[float], *, exact: bool = False) -> KsResult:
    """Two-sample Kolmogorov-Smirnov test.

    D is computed exactly (integer arithmetic over pooled ranks).  The
    p-value uses the asymptotic series with the standard small-sample
    correction; exact=True switches to full permutation enumeration,
    accepted only for samples of 12 or fewer each.
    """
    if not a or not b:
        raise EmptyInputError("both samples must be non-empty")
    n1, n2 = len(a), len(b)
    d_num = _ks_d_numerator(a, b)
    d = d_num / (n1 * n2)
    if exact:
        if max(n1, n2) > 12:
            raise ValueError("exact mode is limited to samples of 12 or fewer")
        p = _ks_exact_p(a, b, d_num) if d_num > 0 else 1.0
    else:
        p = _ks_asymptotic_p(d, n1, n2)
    return KsResult(d_statistic=d, p_value=p, n1=n1, n2=n2)


@dataclass
class RegionalBreakdown:
    # keyed by (metric, region, cdn, resolver_label, ip_version)
    medians: dict[tuple, float] = field(default_factory=dict)
    means: dict[tuple, float] = field(default_factory=dict)
    region_vantage_counts: dict[str, int] = field(default_factory=dict)


def regional_breakdown(
    points: list[LatencyPoint], geo: dict[str, str] | None = None
) -> RegionalBreakdown:
    """Medians per (metric, region, cdn, resolver, family), with the count
    of distinct vantages per region.

    geo maps vantage ids to continent names; a point's own region field
    wins when set, and vantages covered by neither group as "unassigned".
    Means ride along for secondary reporting.
    """
    geo = geo or {}
    grouped: dict[tuple, list[float]] = {}
    region_vantages: dict[str, set] = {}
    for p in points:
        region = p.region or geo.get(p.vantage_id) or UNASSIGNED_REGION
        key = (p.metric, region, p.cdn, p.resolver_label, p.ip_version)
        grouped.setdefault(key, []).append(p.value)
        region_vantages.setdefault(region, set()).add(p.vantage_id)
    table = RegionalBreakdown()
    for key, values in grouped.items():
        table.medians[key] = statistics.median(values)
        table.means[key] = statistics.fmean(values)
    table.region_vantage_counts = {r: len(v) for r, v in region_vantages.items()}
    return table


@dataclass
class PenaltyRow:
    metric: Metric
    region: str
    cdn: str
    resolver_label: str
    v4_median: float
    v6_median: float
    delta: float
    exceeds_threshold: bool


def ipv6_penalty(
    points: list[LatencyPoint],
    threshold_ms: float = HAPPY_EYEBALLS_THRESHOLD_MS,
    geo: dict[str, str] | None = None,
) -> list[PenaltyRow]:
    """IPv6 minus IPv4 median latency per (metric, region, cdn, resolver).

    Rows whose delta reaches threshold_ms are flagged (the conventional
    Happy-Eyeballs connection-attempt delay is 250 ms).  Keys with only
    one family present are skipped with a warning.
    """
    geo = geo or {}
    grouped: dict[tuple, dict[IpVersion, list[float]]] = {}
    for p in points:
        region = p.region or geo.get(p.vantage_id) or UNASSIGNED_REGION
        key = (p.metric, region, p.cdn, p.resolver_label)
        grouped.setdefault(key, {}).setdefault(p.ip_version, []).append(p.value)
    rows = []
    for key in sorted(grouped, key=lambda k: (k[0].value, k[1], k[2], k[3])):
        families = grouped[key]
        if IpVersion.V4 not in families or IpVersion.V6 not in families:
            log.warning("ipv6_penalty: key %s lacks both families, skipped", key)
            continue
        v4 = statistics.median(families[IpVersion.V4])
        v6 = statistics.median(families[IpVersion.V6])
        delta = v6 - v4
        rows.append(
            PenaltyRow(
                metric=key[0],
                region=key[1],
                cdn=key[2],
                resolver_label=key[3],
                v4_median=v4,
                v6_median=v6,
                delta=delta,
                exceeds_threshold=delta >= threshold_ms,
            )
        )
    return rows


@dataclass
class EdgeObservation:
    """One vantage's edge assignment, annotated for diversity reporting."""

    vantage_id: str
    website: str
    resolver_label: str
    ip_version: IpVersion
    address: str
    region: str = UNASSIGNED_REGION


@dataclass
class DiversityReport:
    website: str
    resolver_label: str
    ip_version: IpVersion
    unique_addresses: int
    address_frequency: dict[str, int]
    vantage_address: dict[str, str]
    regional_purity: dict[str, float]
    anycast_like: bool


def address_diversity(
    observations: list[EdgeObservation],
    *,
    anycast_max_unique: int = ANYCAST_MAX_UNIQUE,
) -> list[DiversityReport]:
    """Edge-address spread per (website, resolver, family).

    Regional purity is, per region, the share of that region's
    observations carrying the region's most common address: 1.0 means the
    region maps to one address, values near the global modal share mean
    the addresses are intermixed irrespective of geography.  A report is
    flagged anycast_like when few distinct addresses serve everyone.
    """
    groups: dict[tuple, list[EdgeObservation]] = {}
    for obs in observations:
        groups.setdefault((obs.website, obs.resolver_label, obs.ip_version), []).append(obs)
    reports = []
    for (website, resolver_label, ip_version), members in sorted(
        groups.items(), key=lambda kv: (kv[0][0], kv[0][1], kv[0][2].value)
    ):
        freq: dict[str, int] = {}
        per_vantage: dict[str, str] = {}
        by_region: dict[str, list[str]] = {}
        for obs in members:
            freq[obs.address] = freq.get(obs.address, 0) + 1
            per_vantage.setdefault(obs.vantage_id, obs.address)
            by_region.setdefault(obs.region, []).append(obs.address)
        purity = {}
        for region, addrs in by_region.items():
            counts: dict[str, int] = {}
            for addr in addrs:
                counts[addr] = counts.get(addr, 0) + 1
            purity[region] = max(counts.values()) / len(addrs)
        reports.append(
            DiversityReport(
                website=website,
                resolver_label=resolver_label,
                ip_version=ip_version,
                unique_addresses=len(freq),
                address_frequency=freq,
                vantage_address=per_vantage,
                regional_purity=purity,
                anycast_like=len(freq) <= anycast_max_unique,
            )
        )
    return reports


def build_latency_points(
    sets: list[MeasurementSet],
    *,
    geo: dict[str, str] | None = None,
    dns_required: int = 3,
    handshake_required: int = 3,
) -> list[LatencyPoint]:
    """Run the aggregation ladder over usable sets.

    For each (vantage, cdn, resolver, family): every usable website set
    yields a per-website DNS median (latest three) and a mapping median
    (handshake RTTs); the per-CDN median of those website values becomes
    the vantage's single point for each metric.
    """
    geo = geo or {}
    ladder: dict[tuple, dict[str, dict[Metric, float]]] = {}
    for mset in sets:
        if not is_usable(mset, dns_required=dns_required, handshake_required=handshake_required):
            continue
        key = (mset.vantage_id, mset.cdn, mset.resolver_label, mset.ip_version)
        per_site = ladder.setdefault(key, {}).setdefault(mset.website, {})
        per_site[Metric.DNS] = per_website_median(mset)
        per_site[Metric.MAPPING] = mapping_latency(mset.handshake_results)
    points = []
    for (vantage_id, cdn, resolver_label, ip_version), sites in ladder.items():
        for metric in (Metric.DNS, Metric.MAPPING):
            values = [m[metric] for m in sites.values() if metric in m]
            if not values:
                continue
            points.append(
                LatencyPoint(
                    vantage_id=vantage_id,
                    cdn=cdn,
                    resolver_label=resolver_label,
                    ip_version=ip_version,
                    metric=metric,
                    value=per_cdn_median(values),
                    region=geo.get(vantage_id),
                )
            )
    return points


def classify_sets(
    sets: list[MeasurementSet],
    auth_ttls: dict[str, int],
    *,
    quirks: dict[str, TtlQuirk] | None = None,
    convention: Convention = Convention.EQUAL_IS_HIT,
    dns_required: int = 3,
    handshake_required: int = 3,
) -> list[ClassifiedPoint]:
    """Cache verdicts paired with the latencies they explain.

    For each usable set, the median-latency response among the latest
    three supplies both the latency and the TTL that is classified —
    verdict and latency always come from the same response.  auth_ttls is
    keyed by website, falling back to the set's CDN name; quirks maps
    resolver labels to their TTL quirk.
    """
    quirks = quirks or {}
    points = []
    for mset in sets:
        if not is_usable(mset, dns_required=dns_required, handshake_required=handshake_required):
            continue
        auth = auth_ttls.get(mset.website, auth_ttls.get(mset.cdn))
        if auth is None:
            log.warning("no authoritative TTL for %s (%s), skipped", mset.website, mset.cdn)
            continue
        candidates = sorted(latest_three(mset), key=lambda r: r.latency_ms)
        median_response = candidates[len(candidates) // 2]
        record = None
        for rec in median_response.answers:
            if rec.is_address:
                record = rec
                break
        if record is None and median_response.answers:
            record = median_response.answers[0]
        if record is None:
            continue
        verdict = classify(
            record.ttl,
            auth,
            quirk=quirks.get(mset.resolver_label, TtlQuirk.NONE),
            convention=convention,
        )
        points.append(
            ClassifiedPoint(
                cdn=mset.cdn,
                resolver_label=mset.resolver_label,
                ip_version=mset.ip_version,
                verdict=verdict.verdict,
                latency_ms=median_response.latency_ms,
            )
        )
    return points
