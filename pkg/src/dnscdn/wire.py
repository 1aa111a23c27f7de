"""DNS message encoding and decoding (RFC 1035 wire format).

Builds standard recursive queries and parses responses, including
name-compression pointers.  Only the record types needed for latency and
CDN-mapping measurements get typed rdata; everything else is kept as
opaque bytes so responses survive a store/reload round trip.
"""

from __future__ import annotations

import ipaddress
import struct
from dataclasses import dataclass, field
from enum import Enum, IntEnum

# EDNS0 advertised UDP payload size; 1232 is the common fragmentation-safe
# choice for modern deployments.
EDNS_UDP_PAYLOAD = 1232

MAX_TTL = 2**31 - 1

# Bound on compression-pointer hops while decoding one name.  Any legitimate
# message needs far fewer; exceeding it means a pointer loop.
_MAX_POINTER_HOPS = 64
_MAX_LABELS = 128


class RecordType(IntEnum):
    A = 1
    NS = 2
    CNAME = 5
    TXT = 16
    AAAA = 28
    OPT = 41


class IpVersion(Enum):
    V4 = "v4"
    V6 = "v6"

    @classmethod
    def of_address(cls, address: str) -> "IpVersion":
        ip = ipaddress.ip_address(address.split("%")[0])
        return cls.V4 if ip.version == 4 else cls.V6


class WireError(Exception):
    """Base class for wire-format failures."""


class InvalidNameError(WireError):
    """Domain name violates RFC 1035 label/length limits."""


class MalformedMessageError(WireError):
    """Message bytes cannot be decoded (truncated field, bad pointer...)."""


def encode_name(name: str) -> bytes:
    """Encode a domain name as uncompressed length-prefixed labels.

    A single trailing dot is tolerated; empty labels and labels over 63
    octets raise InvalidNameError, as does a total encoding over 255 octets.
    """
    stripped = name[:-1] if name.endswith(".") else name
    if not stripped:
        raise InvalidNameError("empty name")
    out = bytearray()
    for label in stripped.split("."):
        raw = label.encode("ascii", errors="strict")
        if not raw:
            raise InvalidNameError(f"empty label in {name!r}")
        if len(raw) > 63:
            raise InvalidNameError(f"label too long ({len(raw)} octets) in {name!r}")
        out.append(len(raw))
        out.extend(raw)
    out.append(0)
    if len(out) > 255:
        raise InvalidNameError(f"encoded name is {len(out)} octets (max 255)")
    return bytes(out)


def validate_name(name: str) -> str:
    """Return the name without its optional trailing dot, enforcing limits."""
    encode_name(name)
    return name[:-1] if name.endswith(".") else name


@dataclass
class DnsQuestion:
    """One question: what to ask, whom to ask, and over which IP version."""

    qname: str
    qtype: RecordType
    resolver_address: str
    transport_version: IpVersion
    timeout_ms: float = 5000.0
    resolver_port: int = 53

    def __post_init__(self):
        self.qname = validate_name(self.qname)
        family = IpVersion.of_address(self.resolver_address)
        if family is not self.transport_version:
            raise ValueError(
                f"resolver {self.resolver_address} is {family.value} but "
                f"transport is {self.transport_version.value}"
            )
        if self.timeout_ms <= 0:
            raise ValueError("timeout_ms must be positive")


@dataclass
class ResourceRecord:
    """One parsed answer record.

    rdata is typed by rtype: dotted-quad string for A, compressed-form
    string for AAAA, domain name for NS/CNAME, list of character-strings
    for TXT, raw bytes for anything else.
    """

    name: str
    rtype: int
    ttl: int
    rdata: str | list[str] | bytes

    def __post_init__(self):
        if not 0 <= self.ttl <= MAX_TTL:
            raise ValueError(f"ttl {self.ttl} outside [0, 2^31-1]")
        if self.rtype == RecordType.A:
            if not isinstance(self.rdata, str) or ipaddress.ip_address(self.rdata).version != 4:
                raise ValueError("A record rdata must be an IPv4 address string")
        elif self.rtype == RecordType.AAAA:
            if not isinstance(self.rdata, str) or ipaddress.ip_address(self.rdata).version != 6:
                raise ValueError("AAAA record rdata must be an IPv6 address string")
        elif self.rtype in (RecordType.NS, RecordType.CNAME):
            if not isinstance(self.rdata, str):
                raise ValueError("NS/CNAME rdata must be a domain name string")
        elif self.rtype == RecordType.TXT:
            if not isinstance(self.rdata, list):
                raise ValueError("TXT rdata must be a list of strings")

    @property
    def is_address(self) -> bool:
        return self.rtype in (RecordType.A, RecordType.AAAA)


@dataclass
class QuestionEcho:
    """Question section of a decoded message (type/class left as raw ints)."""

    name: str
    qtype: int
    qclass: int


@dataclass
class DnsMessage:
    """Decoded DNS message: header fields plus all three record sections."""

    txid: int
    flags: int
    questions: list[QuestionEcho] = field(default_factory=list)
    answers: list[ResourceRecord] = field(default_factory=list)
    authority: list[ResourceRecord] = field(default_factory=list)
    additional: list[ResourceRecord] = field(default_factory=list)

    @property
    def rcode(self) -> int:
        return self.flags & 0x000F

    @property
    def is_response(self) -> bool:
        return bool(self.flags & 0x8000)

    @property
    def truncated(self) -> bool:
        return bool(self.flags & 0x0200)


def encode_query(question: DnsQuestion, txid: int, edns: bool = True) -> bytes:
    """Build a standard recursive query (QR=0, RD=1, QDCOUNT=1, QCLASS=IN).

    With edns, an OPT pseudo-record advertising a 1232-byte UDP payload is
    appended to the additional section.
    """
    if not 0 <= txid <= 0xFFFF:
        raise ValueError("txid must fit in 16 bits")
    arcount = 1 if edns else 0
    header = struct.pack("!HHHHHH", txid, 0x0100, 1, 0, 0, arcount)
    body = encode_name(question.qname) + struct.pack("!HH", int(question.qtype), 1)
    if edns:
        # root name, type OPT, class = payload size, TTL = 0, empty rdata
        body += b"\x00" + struct.pack("!HHIH", int(RecordType.OPT), EDNS_UDP_PAYLOAD, 0, 0)
    return header + body


def _decode_name(data: bytes, offset: int) -> tuple[str, int]:
    """Decode a possibly-compressed name starting at offset.

    Returns (name, offset just past the name in the original stream).
    """
    labels: list[str] = []
    pos = offset
    end = -1  # position after the name in the uncompressed stream
    hops = 0
    while True:
        if pos >= len(data):
            raise MalformedMessageError("name runs past end of message")
        length = data[pos]
        if length & 0xC0 == 0xC0:
            if pos + 1 >= len(data):
                raise MalformedMessageError("truncated compression pointer")
            target = ((length & 0x3F) << 8) | data[pos + 1]
            if target >= len(data):
                raise MalformedMessageError("compression pointer beyond message")
            if end < 0:
                end = pos + 2
            hops += 1
            if hops > _MAX_POINTER_HOPS:
                raise MalformedMessageError("compression pointer loop")
            pos = target
            continue
        if length & 0xC0:
            raise MalformedMessageError(f"reserved label type 0x{length:02x}")
        if length == 0:
            if end < 0:
                end = pos + 1
            break
        if pos + 1 + length > len(data):
            raise MalformedMessageError("label runs past end of message")
        labels.append(data[pos + 1 : pos + 1 + length].decode("ascii", errors="replace"))
        if len(labels) > _MAX_LABELS:
            raise MalformedMessageError("too many labels")
        pos += 1 + length
    return ".".join(labels), end


def _decode_rdata(data: bytes, offset: int, rdlength: int, rtype: int):
    rdata_bytes = data[offset : offset + rdlength]
    if rtype == RecordType.A:
        if rdlength != 4:
            raise MalformedMessageError("A rdata must be 4 octets")
        return str(ipaddress.IPv4Address(rdata_bytes))
    if rtype == RecordType.AAAA:
        if rdlength != 16:
            raise MalformedMessageError("AAAA rdata must be 16 octets")
        return str(ipaddress.IPv6Address(rdata_bytes))
    if rtype in (RecordType.NS, RecordType.CNAME):
        name, _ = _decode_name(data, offset)
        return name
    if rtype == RecordType.TXT:
        strings = []
        pos = offset
        while pos < offset + rdlength:
            n = data[pos]
            if pos + 1 + n > offset + rdlength:
                raise MalformedMessageError("TXT character-string overruns rdata")
            strings.append(data[pos + 1 : pos + 1 + n].decode("ascii", errors="replace"))
            pos += 1 + n
        return strings
    return rdata_bytes


def _decode_record(data: bytes, offset: int) -> tuple[ResourceRecord, int]:
    name, pos = _decode_name(data, offset)
    if pos + 10 > len(data):
        raise MalformedMessageError("truncated record header")
    rtype, rclass, ttl, rdlength = struct.unpack_from("!HHIH", data, pos)
    pos += 10
    if pos + rdlength > len(data):
        raise MalformedMessageError("rdata runs past end of message")
    if ttl > MAX_TTL:
        ttl = 0  # RFC 2181 section 8: treat high-bit TTLs as zero
    try:
        rtype = RecordType(rtype)
    except ValueError:
        pass
    rdata = _decode_rdata(data, pos, rdlength, rtype)
    # OPT smuggles flags into class/ttl; keep it opaque rather than lying
    # about a ttl that is not a ttl.
    if rtype == RecordType.OPT:
        ttl = 0
    return ResourceRecord(name=name, rtype=rtype, ttl=ttl, rdata=rdata), pos + rdlength


def decode_response(data: bytes) -> DnsMessage:
    """Parse a DNS message, resolving compression pointers.

    Raises MalformedMessageError on any truncation, overrun, or pointer
    loop; never hangs (pointer follows are bounded).
    """
    if len(data) < 12:
        raise MalformedMessageError(f"message of {len(data)} bytes (header needs 12)")
    txid, flags, qdcount, ancount, nscount, arcount = struct.unpack_from("!HHHHHH", data, 0)
    msg = DnsMessage(txid=txid, flags=flags)
    pos = 12
    for _ in range(qdcount):
        name, pos = _decode_name(data, pos)
        if pos + 4 > len(data):
            raise MalformedMessageError("truncated question")
        qtype, qclass = struct.unpack_from("!HH", data, pos)
        pos += 4
        msg.questions.append(QuestionEcho(name=name, qtype=qtype, qclass=qclass))
    for count, section in ((ancount, msg.answers), (nscount, msg.authority), (arcount, msg.additional)):
        for _ in range(count):
            record, pos = _decode_record(data, pos)
            section.append(record)
    return msg
