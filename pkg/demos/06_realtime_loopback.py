"""The whole pipeline over real UDP sockets on the loopback.

Everything so far ran on a virtual clock. Here the same simulated
resolver binds a real UDP port, its scripted client fires on the wall
clock, and the snoop subcommand probes it like any remote server:
real packets, real waiting. One minute of probing at one non-recursive
packet every 2.5 s, so this demo takes a minute to run.

Run: python3 demos/06_realtime_loopback.py
"""

import json
import tempfile
import time
from pathlib import Path

from snoopdns import cli
from snoopdns.corpus import load_observations
from snoopdns.estimation import aggregate, estimate
from snoopdns.simnet import serve_udp

TRUE_INTERVAL = 12.0  # one scripted lookup every 12 s: 0.0833/s
DURATION = 60.0

config = {
    "seed": 6,
    "clock_mode": "realtime",
    "zones": {"live.example": {"address": "10.6.0.1", "ttl": 5}},
    "clients": [{"domain": "live.example",
                 "process": {"kind": "periodic", "interval": TRUE_INTERVAL}}],
    "rtt_model": {"cached_mean": 2.0, "cached_jitter": 0.3,
                  "recursion_extra_mean": 8.0, "recursion_jitter": 1.0},
}

workdir = Path(tempfile.mkdtemp(prefix="snoopdns-demo-"))
ttl_file = workdir / "maxttl.json"
ttl_file.write_text(json.dumps({"max_ttls": {"live.example": {"max_ttl": 5}}}))
log_file = workdir / "live.jsonl"

server = serve_udp(config)
print(f"resolver listening on {server.address}, ttl 5 s, "
      f"one client lookup every {TRUE_INTERVAL:.0f} s")
print(f"snooping non-recursively for {DURATION:.0f} real seconds...\n",
      flush=True)

started = time.perf_counter()
try:
    code = cli.main(["snoop", "--server", server.address,
                     "--domains", "live.example", "--max-ttls", str(ttl_file),
                     "--method", "rd0", "--probe-interval", "2.5",
                     "--duration", str(DURATION), "--out", str(log_file),
                     "--scan-id", "demo-live"])
finally:
    server.stop()
wall = time.perf_counter() - started

log = load_observations(str(log_file))
est = estimate(aggregate(log.observations)["live.example"])
print(f"exit code {code}, {est.cycles} probes logged to {log_file}")
print(f"saw {est.events} cache refills in {est.observed_seconds:.0f} s "
      f"of watching ({wall:.0f} s of wall time)")
print(f"estimated lookup rate {est.arrival_rate_per_s:.4f}/s "
      f"+/- {est.ci_half_width:.4f}")
print(f"true rate {1.0 / TRUE_INTERVAL:.4f}/s (the 5 s ttl is below the "
      f"12 s lookup spacing, so every lookup refills the cache)")
