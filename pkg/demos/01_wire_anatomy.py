"""Anatomy of the DNS packets this toolkit sends and reads.

Builds the two probe shapes (recursive and non-recursive), hexdumps
them, then decodes a handcrafted response that uses name compression
and a CNAME chain, showing how the cache-relevant TTL is extracted.

Run: python3 demos/01_wire_anatomy.py
"""

import struct

from snoopdns import wire


def hexdump(blob: bytes) -> str:
    rows = []
    for offset in range(0, len(blob), 16):
        chunk = blob[offset:offset + 16]
        hexes = " ".join(f"{b:02x}" for b in chunk)
        text = "".join(chr(b) if 32 <= b < 127 else "." for b in chunk)
        rows.append(f"  {offset:04x}  {hexes:<47}  {text}")
    return "\n".join(rows)


print("== A recursive probe (RD=1): asks the resolver to fetch on a miss ==")
recursive = wire.DnsQuery(id=0x1234, qname="www.example.com")
print(hexdump(wire.encode_query(recursive)))

print()
print("== The non-polluting probe (RD=0): flags differ by one bit ==")
rd0 = wire.DnsQuery(id=0x1234, qname="www.example.com",
                    recursion_desired=False)
print(hexdump(wire.encode_query(rd0)))
print()
print("A resolver that honors RD=0 answers from cache or not at all, so")
print("this probe observes the cache without changing it.")

print()
print("== Decoding a compressed response with a CNAME chain ==")
# header: id=0x1234, QR|RA flags, 1 question, 2 answers
packet = bytearray(struct.pack(">HHHHHH", 0x1234, 0x8180, 1, 2, 0, 0))
question_at = len(packet)
packet += wire.encode_name("www.example.com") + struct.pack(">HH", 1, 1)
# answer 1: www.example.com CNAME example.com, via a pointer to the question
target = wire.encode_name("example.com")
packet += struct.pack(">H", 0xC000 | question_at)          # name pointer
packet += struct.pack(">HHIH", 5, 1, 300, len(target)) + target
# answer 2: example.com A 93.184.216.34, pointing into answer 1's rdata
target_at = len(packet) - len(target)
packet += struct.pack(">H", 0xC000 | target_at)
packet += struct.pack(">HHIH", 1, 1, 60, 4) + bytes([93, 184, 216, 34])

response = wire.decode_response(bytes(packet))
for rr in response.answers:
    kind = wire.RecordType(rr.rtype).name
    extra = f" -> {rr.cname_target}" if rr.cname_target else ""
    print(f"  {rr.name}  {kind}  ttl={rr.ttl}{extra}")

ttl = wire.min_answer_ttl(response, "www.example.com")
print(f"cache-relevant TTL (minimum along the chain): {ttl}")
print()
print("Pointers may only point backward; loops, forward hops, and TTLs")
print("over 2^31-1 are rejected as malformed rather than trusted.")
for label, mutant in [
        ("self-referencing pointer", packet[:question_at]
         + struct.pack(">H", 0xC000 | question_at)),
        ("ttl with the top bit set", packet[:question_at + 27]
         + struct.pack(">I", 2**31) + packet[question_at + 31:]),
]:
    try:
        wire.decode_response(bytes(mutant))
        print(f"  {label}: accepted (unexpected)")
    except wire.Malformed as exc:
        print(f"  {label}: rejected ({exc})")
