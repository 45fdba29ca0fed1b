"""Shared helpers: a scripted resolver transport for exact engine tests."""

import pytest

from snoopdns import wire
from snoopdns.clock import VirtualClock
from snoopdns.transport import Prober, ProbeTimeout


class TtlScriptExchange:
    """Answers each query from a script, entry by entry.

    Entries: int (answer that TTL), (ttl, rtt_ms) tuple, None (empty
    NOERROR answer), "timeout" (consume the timeout and fail). Runs on
    a virtual clock so probing timelines are exact.
    """

    def __init__(self, clock: VirtualClock, script, rtt_ms: float = 1.0):
        self.clock = clock
        self.script = list(script)
        self.rtt_ms = rtt_ms
        self.queries: list[wire.DnsQuery] = []
        self.sent_at: list[float] = []

    def exchange(self, server, payload, timeout):
        if not self.script:
            raise AssertionError("script exhausted: unexpected extra probe")
        item = self.script.pop(0)
        sent = self.clock.now()
        self.sent_at.append(sent)
        if item == "timeout":
            self.clock.sleep(timeout)
            raise ProbeTimeout("scripted timeout")
        query = wire.decode_query(payload)
        self.queries.append(query)
        rtt = self.rtt_ms
        if isinstance(item, tuple):
            item, rtt = item
        answers = []
        if item is not None:
            answers = [wire.ResourceRecord(query.qname, wire.RecordType.A,
                                           int(item), bytes([10, 0, 0, 1]))]
        data = wire.encode_response(query.id, wire.DnsQuestion(qname=query.qname),
                                    answers)
        self.clock.sleep(rtt / 1000.0)
        return data, rtt, sent


@pytest.fixture
def scripted():
    """Factory: scripted(script) -> (prober, clock, exchange), retries off."""

    def build(script, rtt_ms: float = 1.0):
        clock = VirtualClock()
        exchange = TtlScriptExchange(clock, script, rtt_ms=rtt_ms)
        prober = Prober(transport=exchange, clock=clock, retries=0, timeout=1.0)
        return prober, clock, exchange

    return build
