"""Timed DNS queries over UDP with TCP fallback on truncation.

One resolve_once call sends one query and times the reply on a monotonic
clock with sub-millisecond resolution.  There are no retransmissions at
this layer; retries are a campaign-level concern so that each latency
reading keeps clean semantics.
"""

from __future__ import annotations

import errno
import random
import socket
import struct
import time
from dataclasses import dataclass

from .wire import (
    DnsMessage,
    DnsQuestion,
    IpVersion,
    MalformedMessageError,
    RecordType,
    ResourceRecord,
    decode_response,
    encode_query,
)

_UDP_RECV_SIZE = 4096

# Transaction ids come from a dedicated generator so runs can be made
# reproducible; reseed via seed_txids().
_txid_rng = random.Random()


def seed_txids(seed: int) -> None:
    _txid_rng.seed(seed)


class ResolveError(Exception):
    """Base class for resolve_once failures."""


class QueryTimeoutError(ResolveError):
    """No (matching) response arrived within the configured timeout."""


class NetworkUnreachableError(ResolveError):
    """The resolver address could not be reached at all."""


_UNREACH_ERRNOS = {
    errno.ENETUNREACH,
    errno.EHOSTUNREACH,
    errno.ECONNREFUSED,
    errno.EADDRNOTAVAIL,
    errno.EACCES,
    errno.EPERM,
}


@dataclass
class TimedDnsResponse:
    """One decoded DNS answer with its latency reading.

    latency_ms spans send to receipt; when truncated_retried is set it
    covers the whole UDP attempt plus the TCP retry, since that is the
    resolution time a client actually experiences.
    """

    question: DnsQuestion
    rcode: int
    answers: list[ResourceRecord]
    latency_ms: float
    sent_at_monotonic: float
    sent_at_wall: float
    truncated_retried: bool = False
    is_prewarm: bool = False

    def first_address(self, version: IpVersion) -> str | None:
        want = RecordType.A if version is IpVersion.V4 else RecordType.AAAA
        for record in self.answers:
            if record.rtype == want:
                return record.rdata  # type: ignore[return-value]
        return None


def _family(version: IpVersion) -> int:
    return socket.AF_INET if version is IpVersion.V4 else socket.AF_INET6


def _remaining(deadline: float) -> float:
    left = deadline - time.perf_counter()
    if left <= 0:
        raise QueryTimeoutError("query timed out")
    return left


def _tcp_retry(question: DnsQuestion, deadline: float) -> DnsMessage:
    """Re-ask the same question over TCP (RFC 1035 2-byte length framing)."""
    txid = _txid_rng.randrange(0, 0x10000)
    payload = encode_query(question, txid)
    with socket.socket(_family(question.transport_version), socket.SOCK_STREAM) as sock:
        sock.settimeout(_remaining(deadline))
        try:
            sock.connect((question.resolver_address, question.resolver_port))
            sock.sendall(struct.pack("!H", len(payload)) + payload)
            sock.settimeout(_remaining(deadline))
            raw_len = _recv_exact(sock, 2, deadline)
            (length,) = struct.unpack("!H", raw_len)
            data = _recv_exact(sock, length, deadline)
        except socket.timeout as exc:
            raise QueryTimeoutError("TCP retry timed out") from exc
        except OSError as exc:
            if exc.errno in _UNREACH_ERRNOS:
                raise NetworkUnreachableError(str(exc)) from exc
            raise
    message = decode_response(data)
    if message.txid != txid:
        raise MalformedMessageError("TCP reply has mismatched transaction id")
    return message


def _recv_exact(sock: socket.socket, n: int, deadline: float) -> bytes:
    buf = b""
    while len(buf) < n:
        sock.settimeout(_remaining(deadline))
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise MalformedMessageError("TCP stream closed mid-message")
        buf += chunk
    return buf


def resolve_once(question: DnsQuestion, *, edns: bool = True, txid: int | None = None) -> TimedDnsResponse:
    """Send one UDP query and time the answer.

    On a truncated (TC=1) reply the identical question is retried over TCP
    and the reported latency covers the combined span.  Replies whose
    transaction id does not match are discarded and the wait continues.

    Raises QueryTimeoutError, NetworkUnreachableError, or
    MalformedMessageError.
    """
    # A family mismatch must never generate traffic; revalidate even though
    # DnsQuestion checks at construction (the dataclass is mutable).
    if IpVersion.of_address(question.resolver_address) is not question.transport_version:
        raise ValueError("resolver address family does not match transport_version")

    if txid is None:
        txid = _txid_rng.randrange(0, 0x10000)
    payload = encode_query(question, txid, edns=edns)

    sock = socket.socket(_family(question.transport_version), socket.SOCK_DGRAM)
    try:
        sent_wall = time.time()
        sent_mono = time.perf_counter()
        deadline = sent_mono + question.timeout_ms / 1000.0
        try:
            sock.connect((question.resolver_address, question.resolver_port))
            sock.send(payload)
        except OSError as exc:
            if exc.errno in _UNREACH_ERRNOS:
                raise NetworkUnreachableError(str(exc)) from exc
            raise
        while True:
            try:
                sock.settimeout(_remaining(deadline))
                data = sock.recv(_UDP_RECV_SIZE)
            except socket.timeout as exc:
                raise QueryTimeoutError("query timed out") from exc
            except ConnectionRefusedError as exc:
                raise NetworkUnreachableError(str(exc)) from exc
            except OSError as exc:
                if exc.errno in _UNREACH_ERRNOS:
                    raise NetworkUnreachableError(str(exc)) from exc
                raise
            if len(data) >= 2 and struct.unpack_from("!H", data)[0] != txid:
                continue  # stray or spoofed reply; keep waiting
            message = decode_response(data)
            break
        truncated_retried = False
        if message.truncated:
            message = _tcp_retry(question, deadline)
            truncated_retried = True
        latency_ms = (time.perf_counter() - sent_mono) * 1000.0
    finally:
        sock.close()

    return TimedDnsResponse(
        question=question,
        rcode=message.rcode,
        answers=message.answers,
        latency_ms=latency_ms,
        sent_at_monotonic=sent_mono,
        sent_at_wall=sent_wall,
        truncated_retried=truncated_retried,
    )
