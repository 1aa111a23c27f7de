"""Import RIPE Atlas result files as measurement sets.

Atlas DNS results carry the raw answer as base64 in `abuf`; TLS/sslcert
results carry timing in `rt` (with `ttc`, time-to-connect, as fallback).
DNS and TLS entries are paired by probe id and target name, grouped by
timestamp proximity, and re-emitted in this tool's native shape so every
analytics path works on imported data unchanged.
"""

from __future__ import annotations

import base64
import json
import logging
from dataclasses import dataclass, field

from .campaign import MeasurementSet
from .discovery import CdnCatalog
from .mapping import HandshakeSample
from .resolve import TimedDnsResponse
from .wire import DnsQuestion, IpVersion, MalformedMessageError, RecordType, decode_response

log = logging.getLogger(__name__)

DEFAULT_PAIRING_WINDOW_S = 900.0


@dataclass
class ImportResult:
    sets: list[MeasurementSet] = field(default_factory=list)
    skipped: int = 0
    orphans: int = 0


def _load_array(path: str) -> list:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, list):
        raise ValueError(f"{path}: expected a JSON array of Atlas results")
    return data


def _iter_dns_payloads(entry: dict):
    # Local-resolver measurements nest per-resolver payloads in `resultset`.
    if "resultset" in entry:
        for item in entry["resultset"]:
            yield item
    else:
        yield entry


def _parse_dns_entry(entry: dict, payload: dict) -> TimedDnsResponse:
    result = payload["result"]
    raw = base64.b64decode(result["abuf"])
    message = decode_response(raw)
    if not message.questions:
        raise ValueError("abuf carries no question section")
    echo = message.questions[0]
    resolver = payload.get("dst_addr") or entry.get("dst_addr")
    if not resolver:
        raise ValueError("no resolver address on DNS result")
    timestamp = float(payload.get("timestamp") or entry["timestamp"])
    question = DnsQuestion(
        qname=echo.name,
        qtype=RecordType(echo.qtype) if echo.qtype in set(RecordType) else RecordType.A,
        resolver_address=resolver,
        transport_version=IpVersion.of_address(resolver),
    )
    return TimedDnsResponse(
        question=question,
        rcode=message.rcode,
        answers=list(message.answers),
        latency_ms=float(result["rt"]),
        sent_at_monotonic=timestamp,
        sent_at_wall=timestamp,
    )


def import_atlas(
    dns_path: str,
    tls_path: str,
    *,
    pairing_window_s: float = DEFAULT_PAIRING_WINDOW_S,
    catalog: CdnCatalog | None = None,
) -> ImportResult:
    """Convert one Atlas DNS result file plus one TLS result file.

    Per (probe, target, resolver), DNS results within pairing_window_s of
    each other form one set; the earliest result in a multi-result set is
    treated as the prewarm.  TLS results attach to the nearest set for
    their (probe, target); ones with no DNS counterpart are counted as
    orphans.  Undecodable entries are skipped and counted, never fatal.
    """
    out = ImportResult()
    if catalog is None:
        try:
            catalog = CdnCatalog.load()
        except Exception:  # noqa: BLE001 - classification is best-effort
            catalog = None

    grouped: dict[tuple, list[TimedDnsResponse]] = {}
    for entry in _load_array(dns_path):
        prb = entry.get("prb_id")
        for payload in _iter_dns_payloads(entry):
            try:
                response = _parse_dns_entry(entry, payload)
            except (KeyError, ValueError, TypeError, MalformedMessageError, OSError) as exc:
                log.debug("skipping DNS result from probe %s: %s", prb, exc)
                out.skipped += 1
                continue
            key = (
                str(prb),
                response.question.qname.lower().rstrip("."),
                response.question.resolver_address,
            )
            grouped.setdefault(key, []).append(response)

    tls_by_target: dict[tuple, list[dict]] = {}
    for entry in _load_array(tls_path):
        target = (entry.get("dst_name") or "").lower().rstrip(".")
        prb = str(entry.get("prb_id"))
        rt = entry.get("rt", entry.get("ttc"))
        if not target or rt is None or not entry.get("dst_addr"):
            out.skipped += 1
            continue
        tls_by_target.setdefault((prb, target), []).append(entry)

    claimed_tls: set[int] = set()
    for (prb, qname, resolver), responses in sorted(grouped.items()):
        responses.sort(key=lambda r: r.sent_at_monotonic)
        batches: list[list[TimedDnsResponse]] = []
        for response in responses:
            if (
                batches
                and response.sent_at_monotonic - batches[-1][0].sent_at_monotonic
                <= pairing_window_s
            ):
                batches[-1].append(response)
            else:
                batches.append([response])
        for batch in batches:
            # Atlas timestamps are whole seconds; keep within-set order strict.
            prev = None
            for response in batch:
                if prev is not None and response.sent_at_monotonic <= prev:
                    response.sent_at_monotonic = prev + 1e-3
                prev = response.sent_at_monotonic
            if len(batch) >= 2:
                batch[0].is_prewarm = True
            start = batch[0].sent_at_wall
            handshakes = []
            for entry in tls_by_target.get((prb, qname), []):
                if id(entry) in claimed_tls:
                    continue
                if abs(float(entry["timestamp"]) - start) > pairing_window_s:
                    continue
                claimed_tls.add(id(entry))
                handshakes.append(
                    HandshakeSample(
                        address=entry["dst_addr"],
                        port=int(entry.get("dst_port", 443)),
                        rtt_ms=float(entry.get("rt", entry.get("ttc"))),
                        success=True,
                    )
                )
            qtype = batch[0].question.qtype
            cdn = (catalog.match(qname) if catalog else None) or "unknown"
            out.sets.append(
                MeasurementSet(
                    vantage_id=prb,
                    website=qname,
                    cdn=cdn,
                    resolver_label=resolver,
                    ip_version=IpVersion.V6 if qtype == RecordType.AAAA else IpVersion.V4,
                    dns_results=batch,
                    handshake_results=handshakes,
                    created_at=start,
                )
            )

    for (prb, target), entries in tls_by_target.items():
        stranded = [e for e in entries if id(e) not in claimed_tls]
        if stranded:
            log.warning(
                "%d TLS results for probe %s target %s have no matching DNS set",
                len(stranded),
                prb,
                target,
            )
            out.orphans += len(stranded)
    return out
