"""Build a DNS query byte-for-byte, then decode a compressed response.

Everything here is offline: the query is encoded, inspected, and a
response is assembled by hand with struct so you can see exactly what
the decoder deals with — including a name compression pointer and the
RFC 2181 rule that a TTL with the high bit set reads as zero.

Run:  python3 demos/01_wire_roundtrip.py
"""

import struct

from dnscdn.wire import (
    DnsQuestion,
    IpVersion,
    MalformedMessageError,
    RecordType,
    decode_response,
    encode_query,
)


def hexdump(data: bytes, width: int = 16) -> str:
    lines = []
    for i in range(0, len(data), width):
        chunk = data[i : i + width]
        pretty = " ".join(f"{b:02x}" for b in chunk)
        text = "".join(chr(b) if 32 <= b < 127 else "." for b in chunk)
        lines.append(f"  {i:04x}  {pretty:<{width * 3}} {text}")
    return "\n".join(lines)


def main():
    question = DnsQuestion(
        qname="www.example.com",
        qtype=RecordType.A,
        resolver_address="192.0.2.53",
        transport_version=IpVersion.V4,
    )
    wire = encode_query(question, txid=0x1234, edns=True)
    print("A query for www.example.com, EDNS0 enabled:")
    print(hexdump(wire))
    print(f"  -> {len(wire)} bytes; the trailing 11 are the OPT record\n")

    # A response, built by hand. The answer section holds a CNAME whose
    # owner name is a compression pointer (0xc00c) back to the question
    # name at offset 12, then an A record for the CNAME target.
    header = struct.pack("!HHHHHH", 0x1234, 0x8180, 1, 2, 0, 0)
    qname = b"\x03www\x07example\x03com\x00"
    question_section = qname + struct.pack("!HH", 1, 1)
    target = b"\x04edge\x03cdn\x07example\x00"
    cname = struct.pack("!HHHIH", 0xC00C, 5, 1, 300, len(target)) + target
    a_record = (
        target
        + struct.pack("!HHIH", 1, 1, 0x80000014, 4)  # TTL high bit set on purpose
        + bytes([203, 0, 113, 7])
    )
    response = header + question_section + cname + a_record

    print("Hand-assembled response (note the c0 0c pointer):")
    print(hexdump(response))
    message = decode_response(response)
    print()
    for record in message.answers:
        print(f"  {record.name}  type={record.rtype}  ttl={record.ttl}  -> {record.rdata}")
    print("  (the pointer expanded to the question name; the 0x80000014 TTL read as 0)\n")

    # Decoding is defensive: a pointer that chases itself fails fast
    # instead of spinning.
    looped = bytearray(response)
    offset = looped.index(b"\xc0\x0c")
    struct.pack_into("!H", looped, offset, 0xC000 | offset)
    try:
        decode_response(bytes(looped))
    except MalformedMessageError as exc:
        print(f"Pointer loop rejected as expected: {exc}")


if __name__ == "__main__":
    main()
