"""Finding a record's maximum TTL by watching it expire.

Every snooping method needs M, the TTL a record re-enters the cache
with, because a non-full reading T < M dates the last refresh to
exactly M - T seconds ago. This walks the discovery procedure against
a simulated resolver: read the countdown, wait out the remainder, and
catch the rollover just after expiry. The rollover reading is the
candidate; five repeats confirm it.

Run: python3 demos/02_discover_max_ttl.py
"""

import random

from snoopdns.clock import VirtualClock
from snoopdns.engine import discover_max_ttl
from snoopdns.simnet import SimExchange, build_sim
from snoopdns.transport import Prober

config = {
    "seed": 5,
    "zones": {"shop.example": {"address": "10.2.0.1", "ttl": 300}},
    "clients": [],
}
clock = VirtualClock()
sim = build_sim(config, start_time=clock.now())
prober = Prober(transport=SimExchange(sim, clock), clock=clock,
                rng=random.Random(2))

print("Probing shop.example on a simulated resolver (true maximum 300 s).")
print("Virtual clock: the waits below cost no wall time.")
print()

estimate = discover_max_ttl(prober, clock, "sim", "shop.example",
                            required_confirmations=5)

for event in sim.log:
    if event.kind in ("probe_query", "cache_refresh", "expiry"):
        cause = f"  cause={event.cause}" if event.cause else ""
        print(f"  t={event.at:8.2f}  {event.kind}{cause}")

print()
print(f"discovered max TTL : {estimate.max_ttl}")
print(f"confirmations      : {estimate.confirmations}")
print(f"snapped to grid    : {estimate.snapped_to_grid}")
print(f"candidates seen    : {estimate.candidates_seen}")
print(f"virtual time spent : {clock.now():.0f} s")
print()
print("Notes: the first reading is never a candidate (the record may")
print("have been cached long before we arrived), and readings a hair")
print("under a common value (60/300/3600...) snap up to it, since a")
print("rollover probe always lands a moment after the refill.")
