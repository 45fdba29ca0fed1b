"""Cache snooping engine: TTL discovery and refresh observation.

Everything here reasons about one invariant of honest caching
resolvers: a record's remaining TTL strictly counts down between
refreshes, client hits never reset it, and only a cache miss (or a
misbehaving server) can make it jump upward. From that, three probing
methods recover when a domain's record was last refreshed:

  rd0            non-recursive probes that never pollute the cache; an
                 answer TTL T places the refresh (max_ttl - T) seconds
                 before the probe.
  ttl_recursive  recursive probes timed just after expiry: leave a
                 watch window W open past the expiry instant E, re-read
                 the TTL T', and either the probe itself refreshed the
                 record (censored window) or some client did, with
                 first-arrival delay d = W - (max_ttl - T').
  timing         response-time classification for servers whose TTL
                 values cannotot be trusted; needs calibration.

Probing machines are stepped by a scheduler rather than sleeping
internally, so one thread can interleave many domains on either a
virtual or the real clock. Single-cycle convenience wrappers drive one
machine to its first result.
"""

import statistics
from dataclasses import dataclass, field, replace
from typing import Iterator

from . import wire
from .clock import Clock
from .transport import ProbeReply, Prober, ProbeTimeout


class SnoopError(Exception):
    """Base for engine-level failures."""


class ServerPrefetches(SnoopError):
    """Observed TTL reset upward before reaching zero: the server
    refreshes records on its own ahead of expiry, so expiry-timed
    methods cannot observe client traffic on it."""


class NonMonotonicTtl(SnoopError):
    """TTL failed to count down between closely spaced reads."""


class TtlExceedsMax(SnoopError):
    """A read came back above the believed maximum TTL; the stored
    maximum is stale and should be rediscovered."""


class RdNotHonored(SnoopError):
    """Answers imply recursion occurred despite RD=0."""


class InsufficientSeparation(SnoopError):
    """Cached and uncached response times overlap too much to classify."""

    def __init__(self, message: str, calibration: "TimingCalibration | None" = None):
        super().__init__(message)
        self.calibration = calibration


class InconsistentTtl(SnoopError):
    """A read implies a refresh before the record could have expired."""


class UnresolvableDomain(SnoopError):
    """The server returned no usable answer for the domain."""


class DiscoveryBudgetExceeded(SnoopError):
    """No candidate TTL reached the confirmation count within the round cap."""


@dataclass(frozen=True)
class Tuning:
    """Fixed operational constants for probing.

    post_expiry_epsilon  wait this long past a computed expiry before
                         re-querying, absorbing 1 s TTL granularity.
    snap_grid            candidate maxima sitting within snap_tolerance
                         below a multiple of these values (checked in
                         order) are snapped up: real-world maxima are
                         overwhelmingly multiples of 60, else 15 or 20.
    dedup_epsilon        rd0 refresh instants within this of the last
                         one are the same refresh, not a new event.
    checkpoint_margin    discovery and periodic snooping checks probe
                         this many seconds before expiry to catch TTLs
                         that move upward early.
    checkpoint_every     insert such a pre-expiry check every N snoop
                         cycles (0 disables; cycle 0 always checks).
    """

    post_expiry_epsilon: float = 1.0
    snap_grid: tuple[int, ...] = (60, 15, 20)
    snap_tolerance: float = 2.0
    dedup_epsilon: float = 2.0
    checkpoint_margin: float = 2.0
    checkpoint_every: int = 16
    discovery_round_factor: int = 8
    timeout_backoff: float = 5.0
    noanswer_backoff: float = 30.0
    failure_limit: int = 3


DEFAULT_TUNING = Tuning()

METHODS = ("rd0", "ttl_recursive", "timing")


def ttl_grace(max_ttl: float) -> float:
    """Slack for treating a post-window read as the probe's own refresh.

    Covers integer TTL granularity plus probe RTT skew: 2 seconds, or
    1% of the maximum for very large TTLs.
    """
    return max(2.0, 0.01 * max_ttl)


def snap_to_grid(reading: int, grid: tuple[int, ...] = DEFAULT_TUNING.snap_grid,
                 tolerance: float = DEFAULT_TUNING.snap_tolerance) -> tuple[int, bool]:
    """Snap a candidate maximum TTL up to the nearest round multiple.

    Returns (value, snapped). A reading already on a grid is returned
    unchanged with snapped=False; one within tolerance below a multiple
    snaps up with snapped=True; anything else passes through.
    """
    for g in grid:
        above = ((reading + g - 1) // g) * g
        gap = above - reading
        if gap == 0:
            return reading, False
        if 0 < gap <= tolerance:
            return above, True
    return reading, False


@dataclass
class MaxTtlEstimate:
    """A confirmed maximum TTL for (server, domain)."""

    server: str
    domain: str
    max_ttl: int
    confirmations: int
    snapped_to_grid: bool
    candidates_seen: dict[int, int] = field(default_factory=dict)


@dataclass
class RefreshEvent:
    delay_after_expiry: float
    inferred_refresh_time: float


@dataclass
class RefreshObservation:
    """One probing cycle's outcome for a domain.

    Exactly one of two shapes: censored (nothing refreshed the record
    during the watched span before the probe did) or an event carrying
    the first-refresh delay after expiry. window_start is the expiry
    instant being watched (for rd0, the previous probe time).
    """

    server: str
    domain: str
    method: str
    window_start: float
    window_length: float
    probe_rtt_ms: float
    censored: bool
    event: RefreshEvent | None = None

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if not self.window_length > 0:
            raise ValueError(f"window_length must be positive: {self.window_length}")
        if self.censored == (self.event is not None):
            raise ValueError("observation must be censored or carry an event, not both")
        if self.event is not None:
            d = self.event.delay_after_expiry
            if not 0 <= d <= self.window_length + 1e-9:
                raise ValueError(f"event delay {d} outside window {self.window_length}")
            rt = self.event.inferred_refresh_time
            if not (self.window_start - 1e-9 <= rt
                    <= self.window_start + self.window_length + 1e-9):
                raise ValueError("inferred refresh time outside the window")


@dataclass
class CycleError:
    """A per-cycle anomaly annotated into the observation stream."""

    server: str
    domain: str
    method: str
    at: float
    kind: str
    message: str


@dataclass
class RdBehavior:
    server: str
    honors_rd0: bool
    evidence: list[dict] = field(default_factory=list)


@dataclass
class TimingCalibration:
    """Response-time model separating cache hits from misses."""

    server: str
    domain: str
    cached_rtts: list[float]
    miss_rtts: list[float]
    cached_median: float
    miss_median: float
    threshold_ms: float
    separation_quality: float


_ERROR_TYPES = {
    "timeout": ProbeTimeout,
    "unresolvable": UnresolvableDomain,
    "ttl_exceeds_max": TtlExceedsMax,
    "inconsistent_ttl": InconsistentTtl,
    "non_monotonic_ttl": NonMonotonicTtl,
    "server_prefetches": ServerPrefetches,
    "rd_not_honored": RdNotHonored,
}

# server behaviors that invalidate the method for a domain: everything
# observed there measures the server or ourselves, not its clients
INVALIDATING_KINDS = frozenset({"server_prefetches", "rd_not_honored"})


def classify_window_read(t_prime: float, max_ttl: float, window: float) -> float | None:
    """Interpret the TTL read by a post-window probe.

    Returns None when the probe itself refreshed the record (censored:
    T' within grace of the maximum), or the first-refresh delay after
    expiry, d = window - (max_ttl - T'), clamped at zero within grace.
    Raises TtlExceedsMax for reads above the believed maximum and
    InconsistentTtl for reads implying a refresh before expiry.
    """
    grace = ttl_grace(max_ttl)
    if t_prime > max_ttl + grace:
        raise TtlExceedsMax(f"read {t_prime} above believed max {max_ttl}")
    if t_prime >= max_ttl - grace:
        return None
    delay = window - (max_ttl - t_prime)
    if delay < -grace:
        raise InconsistentTtl(
            f"read {t_prime} implies a refresh {-delay:.1f}s before expiry")
    return min(max(delay, 0.0), window)


def _answer_ttl(reply: ProbeReply, domain: str) -> int | None:
    return wire.min_answer_ttl(reply.response, domain)


def check_rd_behavior(prober: Prober, server: str, canary_domains: list[str]) -> RdBehavior:
    """Classify whether a server honors RD=0 (no recursion on miss).

    Sends non-recursive queries for canary names that cannot already be
    cached. Any answer records mean the server recursed anyway. The
    evidence list records each exchange; on timeout it rides along on
    the raised error.
    """
    if not canary_domains:
        raise ValueError("at least one canary domain is required")
    evidence: list[dict] = []
    honors = True
    for name in canary_domains:
        try:
            reply = prober.probe(server, name, recursion_desired=False)
        except ProbeTimeout as exc:
            raise ProbeTimeout(f"rd0 check against {server} timed out on {name}",
                               evidence=evidence) from exc
        answers = reply.response.answers
        evidence.append({
            "domain": name,
            "rcode": int(reply.response.rcode),
            "answer_count": len(answers),
            "ttls": [rr.ttl for rr in answers],
        })
        if answers:
            honors = False
    return RdBehavior(server=server, honors_rd0=honors, evidence=evidence)


def discover_max_ttl(prober: Prober, clock: Clock, server: str, domain: str,
                     required_confirmations: int = 5,
                     tuning: Tuning = DEFAULT_TUNING) -> MaxTtlEstimate:
    """Find a domain's maximum TTL on a server by expiry roll-over.

    Reads the current TTL, sleeps until just past its expiry, and
    re-queries; the expired record is re-fetched, so the new answer
    shows the full maximum. Candidates are grid-snapped and the same
    value must be seen required_confirmations times. A checkpoint probe
    shortly before each expiry guards the countdown: a TTL that jumps
    upward early raises ServerPrefetches, one that never moves raises
    NonMonotonicTtl.
    """
    if required_confirmations < 1:
        raise ValueError("required_confirmations must be at least 1")
    reply = prober.probe(server, domain, recursion_desired=True)
    ttl = _answer_ttl(reply, domain)
    if ttl is None:
        raise UnresolvableDomain(
            f"{domain} returned no usable answer (rcode {reply.response.rcode})")
    last_ttl, last_at = ttl, reply.sent_at

    counts: dict[int, int] = {}
    snapped_seen: dict[int, bool] = {}
    max_rounds = required_confirmations * tuning.discovery_round_factor
    for _ in range(max_rounds):
        expiry = last_at + last_ttl
        margin = tuning.checkpoint_margin
        if last_ttl > margin + tuning.post_expiry_epsilon + 1.0:
            clock.sleep_until(expiry - margin)
            check = prober.probe(server, domain, recursion_desired=True)
            t_check = _answer_ttl(check, domain)
            if t_check is None:
                raise UnresolvableDomain(f"{domain} stopped resolving during discovery")
            elapsed = check.sent_at - last_at
            expected = last_ttl - elapsed
            if t_check > expected + tuning.snap_tolerance:
                if abs(t_check - last_ttl) <= 1 and elapsed >= 2.0:
                    raise NonMonotonicTtl(
                        f"{domain}: TTL stuck at {t_check} across {elapsed:.0f}s")
                raise ServerPrefetches(
                    f"{domain}: TTL jumped to {t_check} with ~{max(expected, 0):.0f}s "
                    f"left before expiry")
            last_ttl, last_at = t_check, check.sent_at
            expiry = last_at + last_ttl
        clock.sleep_until(expiry + tuning.post_expiry_epsilon)
        rollover = prober.probe(server, domain, recursion_desired=True)
        t_roll = _answer_ttl(rollover, domain)
        if t_roll is None:
            raise UnresolvableDomain(f"{domain} stopped resolving during discovery")
        value, snapped = snap_to_grid(t_roll, tuning.snap_grid, tuning.snap_tolerance)
        counts[value] = counts.get(value, 0) + 1
        snapped_seen[value] = snapped_seen.get(value, False) or snapped
        last_ttl, last_at = t_roll, rollover.sent_at
        if counts[value] >= required_confirmations:
            return MaxTtlEstimate(
                server=server, domain=domain, max_ttl=value,
                confirmations=counts[value], snapped_to_grid=snapped_seen[value],
                candidates_seen=dict(counts))
    raise DiscoveryBudgetExceeded(
        f"{domain}: no TTL confirmed {required_confirmations} times within "
        f"{max_rounds} rounds; candidates seen: {counts}")


def calibrate_timing(prober: Prober, server: str, calibration_domain: str,
                     samples: int = 40, quality_floor: float = 0.95) -> TimingCalibration:
    """Measure cached-vs-miss response times and fit a threshold.

    Cached samples repeat-query one name inside its TTL; miss samples
    query unique subdomains under the calibration domain, each of which
    forces recursion. The threshold is the midpoint of the two medians;
    separation_quality is the fraction of samples falling on the correct
    side. Below quality_floor the server's jitter swamps the recursion
    cost and InsufficientSeparation is raised.
    """
    if samples < 20:
        raise ValueError(f"at least 20 samples per class are required, got {samples}")
    zone = wire.validate_name(calibration_domain)
    prober.probe(server, zone, recursion_desired=True)  # prime the cache
    cached = [prober.probe(server, zone, recursion_desired=True).rtt_ms
              for _ in range(samples)]
    nonce = prober.rng.randrange(1 << 24)
    miss = [prober.probe(server, f"cal-{nonce:x}-{i}.{zone}", recursion_desired=True).rtt_ms
            for i in range(samples)]
    cached_median = statistics.median(cached)
    miss_median = statistics.median(miss)
    threshold = (cached_median + miss_median) / 2.0
    correct = (sum(1 for r in cached if r < threshold)
               + sum(1 for r in miss if r > threshold))
    quality = correct / (2 * samples)
    calibration = TimingCalibration(
        server=server, domain=zone, cached_rtts=cached, miss_rtts=miss,
        cached_median=cached_median, miss_median=miss_median,
        threshold_ms=threshold, separation_quality=quality)
    if quality < quality_floor:
        raise InsufficientSeparation(
            f"{server}: cached/miss RTTs overlap, separation quality "
            f"{quality:.3f} below {quality_floor}", calibration=calibration)
    return calibration


def classify_timing(rtt_ms: float, calibration: TimingCalibration,
                    guard_fraction: float = 0.25) -> str:
    """Classify one response time as cached, miss, or abstain.

    A guard band of guard_fraction times the median gap sits around the
    threshold; RTTs inside it are too ambiguous to call.
    """
    gap = abs(calibration.miss_median - calibration.cached_median)
    band = guard_fraction * gap
    if rtt_ms < calibration.threshold_ms - band:
        return "cached"
    if rtt_ms > calibration.threshold_ms + band:
        return "miss"
    return "abstain"


class TtlRecursiveMachine:
    """Expiry-timed recursive probing of one domain.

    Each cycle watches the window [E, E + W] where E is the last known
    expiry instant: the post-window probe reads T' and classifies the
    cycle (see classify_window_read). That same answer's TTL fixes the
    next expiry, so steady-state cycles cost one query. Cycle 0 and
    every checkpoint_every-th cycle insert a pre-expiry checkpoint probe
    that detects servers refreshing ahead of expiry.
    """

    method = "ttl_recursive"

    def __init__(self, prober: Prober, server: str, domain: str, max_ttl: int,
                 window: float, tuning: Tuning = DEFAULT_TUNING):
        if not 0 < window <= max_ttl:
            raise ValueError(f"window must be in (0, max_ttl], got {window} for {max_ttl}")
        self.prober = prober
        self.server = server
        self.domain = domain
        self.max_ttl = max_ttl
        self.window = window
        self.tuning = tuning
        self.cycles_completed = 0
        self.done = False
        self._mode = "init"
        self._expiry = 0.0
        self._last_read = 0.0
        self._timeouts = 0
        self._failures = 0
        self._static_runs = 0

    def start_at(self, now: float) -> float:
        return now

    def _error(self, at: float, kind: str, message: str) -> CycleError:
        return CycleError(server=self.server, domain=self.domain, method=self.method,
                          at=at, kind=kind, message=message)

    def _probe(self, items: list) -> ProbeReply | None:
        try:
            reply = self.prober.probe(self.server, self.domain, recursion_desired=True)
        except ProbeTimeout as exc:
            self._timeouts += 1
            items.append(self._error(self.prober.clock.now(), "timeout", str(exc)))
            if self._timeouts >= self.tuning.failure_limit:
                self.done = True
            self._mode = "init"
            return None
        self._timeouts = 0
        return reply

    def _read(self, items: list) -> tuple[ProbeReply, int] | None:
        reply = self._probe(items)
        if reply is None:
            return None
        if reply.response.truncated:
            items.append(self._error(reply.sent_at, "truncated",
                                     "truncated response; cycle discarded"))
            self._mode = "init"
            return None
        ttl = _answer_ttl(reply, self.domain)
        if ttl is None:
            self._failures += 1
            items.append(self._error(reply.sent_at, "unresolvable",
                                     f"no usable answer (rcode {reply.response.rcode})"))
            if self._failures >= self.tuning.failure_limit:
                self.done = True
            self._mode = "init"
            return None
        self._failures = 0
        return reply, ttl

    def _arm(self, sent_at: float, ttl: int) -> float:
        """Fix the next expiry from this read and pick the next probe."""
        self._expiry = sent_at + ttl
        self._last_read = ttl
        every = self.tuning.checkpoint_every
        due = every > 0 and self.cycles_completed % every == 0
        margin = self.tuning.checkpoint_margin
        if due and ttl > margin + self.tuning.post_expiry_epsilon + 1.0:
            self._mode = "checkpoint"
            return self._expiry - margin
        self._mode = "window"
        return self._expiry + self.window

    def step(self, now: float) -> tuple[float | None, list]:
        items: list = []
        if self.done:
            return None, items

        if self._mode == "init":
            got = self._read(items)
            if got is None:
                return (None if self.done else now + self._backoff(), items)
            reply, ttl = got
            grace = ttl_grace(self.max_ttl)
            if ttl > self.max_ttl + grace:
                items.append(self._error(reply.sent_at, "ttl_exceeds_max",
                                         f"read {ttl} above believed max {self.max_ttl}"))
                self.max_ttl = snap_to_grid(ttl, self.tuning.snap_grid,
                                            self.tuning.snap_tolerance)[0]
            return self._arm(reply.sent_at, ttl), items

        if self._mode == "checkpoint":
            got = self._read(items)
            if got is None:
                return (None if self.done else now + self._backoff(), items)
            reply, ttl = got
            elapsed = reply.sent_at - (self._expiry - self._last_read)
            expected = self._last_read - elapsed
            if ttl > expected + self.tuning.snap_tolerance:
                if abs(ttl - self._last_read) <= 1 and elapsed >= 2.0:
                    items.append(self._error(reply.sent_at, "non_monotonic_ttl",
                                             f"TTL stuck at {ttl} across {elapsed:.0f}s"))
                    self._mode = "init"
                    self._static_runs += 1
                    if self._static_runs >= self.tuning.failure_limit:
                        self.done = True
                        return None, items
                    return now + self._backoff(), items
                items.append(self._error(
                    reply.sent_at, "server_prefetches",
                    f"TTL jumped to {ttl} with ~{max(expected, 0):.0f}s left before expiry"))
                self.done = True
                return None, items
            self._static_runs = 0
            self._mode = "window"
            return self._expiry + self.window, items

        # window probe: classifies the cycle and doubles as the next pre-probe
        got = self._read(items)
        if got is None:
            return (None if self.done else now + self._backoff(), items)
        reply, ttl = got
        window_eff = reply.sent_at - self._expiry
        grace = ttl_grace(self.max_ttl)
        if window_eff > self.max_ttl + grace:
            # Scheduling slipped past a full cache lifetime; the read no
            # longer pins the refresh. Discard and re-baseline.
            items.append(self._error(reply.sent_at, "window_overrun",
                                     f"probe ran {window_eff:.1f}s after expiry"))
            return self._arm(reply.sent_at, ttl), items
        try:
            delay = classify_window_read(ttl, self.max_ttl, window_eff)
        except TtlExceedsMax as exc:
            items.append(self._error(reply.sent_at, "ttl_exceeds_max", str(exc)))
            self.max_ttl = snap_to_grid(ttl, self.tuning.snap_grid,
                                        self.tuning.snap_tolerance)[0]
            return self._arm(reply.sent_at, ttl), items
        except InconsistentTtl as exc:
            items.append(self._error(reply.sent_at, "inconsistent_ttl", str(exc)))
            return self._arm(reply.sent_at, ttl), items
        if delay is None:
            observation = RefreshObservation(
                server=self.server, domain=self.domain, method=self.method,
                window_start=self._expiry, window_length=window_eff,
                probe_rtt_ms=reply.rtt_ms, censored=True)
        else:
            observation = RefreshObservation(
                server=self.server, domain=self.domain, method=self.method,
                window_start=self._expiry, window_length=window_eff,
                probe_rtt_ms=reply.rtt_ms, censored=False,
                event=RefreshEvent(delay_after_expiry=delay,
                                   inferred_refresh_time=self._expiry + delay))
        items.append(observation)
        self.cycles_completed += 1
        return self._arm(reply.sent_at, ttl), items

    def _backoff(self) -> float:
        return self.tuning.timeout_backoff if self._timeouts else self.tuning.noanswer_backoff


class Rd0Machine:
    """Non-polluting probing with RD=0 at a fixed interval.

    An answer TTL T places the last refresh at (probe time - (max_ttl -
    T)); consecutive probes implying the same instant are one event. An
    empty answer means nothing is cached. Every probe contributes its
    inter-probe span as observed time, so event counts over total span
    estimate the cache refresh rate: how often the record re-enters the
    cache. For clients that mostly find the cache cold (lookup spacing
    above max_ttl) that equals their lookup rate; for busier domains it
    saturates at 1/(max_ttl + mean wait), since lookups that hit a warm
    cache leave no trace. The mean refresh period minus max_ttl still
    recovers the mean post-expiry wait.

    Two server behaviors invalidate the data and end the domain. A
    server ignoring RD=0 betrays itself because our own probes become
    the refreshers: the answer carries the full TTL, a refresh dated to
    under a second before our send, where an honest client lands only
    by luck; three in a row (empty answers and dated client refreshes
    reset the run, repeat readings of one refresh are neutral) raise
    rd_not_honored. And refreshes repeatedly dated clearly BEFORE the
    previous refresh's expiry mean the server refills early on its own
    (or the believed maximum is stale-high): three in a row raise
    server_prefetches.
    """

    method = "rd0"

    def __init__(self, prober: Prober, server: str, domain: str, max_ttl: int,
                 probe_interval: float | None = None, tuning: Tuning = DEFAULT_TUNING):
        if probe_interval is None:
            probe_interval = max_ttl / 2.0
        if not 0 < probe_interval <= max_ttl:
            raise ValueError(
                f"probe_interval must be in (0, max_ttl] so no refresh is missed, "
                f"got {probe_interval} for {max_ttl}")
        self.prober = prober
        self.server = server
        self.domain = domain
        self.max_ttl = max_ttl
        self.interval = probe_interval
        self.tuning = tuning
        self.cycles_completed = 0
        self.done = False
        self._last_probe: float | None = None
        self._last_refresh: float | None = None
        self._fetch_signatures = 0
        self._early_refreshes = 0
        self._timeouts = 0

    def start_at(self, now: float) -> float:
        return now

    def _error(self, at: float, kind: str, message: str) -> CycleError:
        return CycleError(server=self.server, domain=self.domain, method=self.method,
                          at=at, kind=kind, message=message)

    def step(self, now: float) -> tuple[float | None, list]:
        items: list = []
        if self.done:
            return None, items
        try:
            reply = self.prober.probe(self.server, self.domain, recursion_desired=False)
        except ProbeTimeout as exc:
            self._timeouts += 1
            items.append(self._error(now, "timeout", str(exc)))
            if self._timeouts >= self.tuning.failure_limit:
                self.done = True
                return None, items
            return now + self.interval, items
        self._timeouts = 0
        sent = reply.sent_at
        ttl = _answer_ttl(reply, self.domain)
        span = None if self._last_probe is None else sent - self._last_probe

        eps = self.tuning.dedup_epsilon
        if ttl is not None and ttl > self.max_ttl + ttl_grace(self.max_ttl):
            # believed maximum is stale; adopt and re-baseline, the old
            # refresh inference no longer means anything
            items.append(self._error(sent, "ttl_exceeds_max",
                                     f"read {ttl} above believed max {self.max_ttl}"))
            self.max_ttl = snap_to_grid(ttl, self.tuning.snap_grid,
                                        self.tuning.snap_tolerance)[0]
            self._last_refresh = None
            self._fetch_signatures = 0
            self._early_refreshes = 0
        elif ttl is None:
            # nothing cached: definitive proof RD=0 is being honored,
            # and proof the record is allowed to expire
            self._fetch_signatures = 0
            self._early_refreshes = 0
            self._censor_span(reply, span, items)
        else:
            refresh_time = min(sent - (self.max_ttl - ttl), sent)
            duplicate = (self._last_refresh is not None
                         and abs(refresh_time - self._last_refresh) <= eps)
            if duplicate:
                self._censor_span(reply, span, items)
            else:
                if ttl >= self.max_ttl:
                    # full TTL: fetched at this very probe, either by an
                    # unlucky client or by the probe itself
                    self._fetch_signatures += 1
                else:
                    self._fetch_signatures = 0
                gap = (None if self._last_refresh is None
                       else refresh_time - (self._last_refresh + self.max_ttl))
                if gap is not None and gap < -ttl_grace(self.max_ttl):
                    # dated clearly before the previous copy could expire
                    self._early_refreshes += 1
                else:
                    self._early_refreshes = 0
                if self._fetch_signatures >= 3:
                    items.append(self._error(
                        sent, "rd_not_honored",
                        "repeated full-TTL answers: the server fetches on "
                        "our RD=0 probes"))
                    self.done = True
                    return None, items
                if self._early_refreshes >= 3:
                    items.append(self._error(
                        sent, "server_prefetches",
                        "refreshes keep landing before the previous expiry: "
                        "the server refills on its own, or the believed "
                        "max is stale-high"))
                    self.done = True
                    return None, items
                if span is not None and span > 0:
                    delay = min(max(refresh_time - self._last_probe, 0.0), span)
                    items.append(RefreshObservation(
                        server=self.server, domain=self.domain, method=self.method,
                        window_start=self._last_probe, window_length=span,
                        probe_rtt_ms=reply.rtt_ms, censored=False,
                        event=RefreshEvent(
                            delay_after_expiry=delay,
                            inferred_refresh_time=self._last_probe + delay)))
                    self.cycles_completed += 1
                self._last_refresh = refresh_time

        self._last_probe = sent
        return sent + self.interval, items

    def _censor_span(self, reply: ProbeReply, span: float | None, items: list) -> None:
        if span is None or span <= 0:
            return
        items.append(RefreshObservation(
            server=self.server, domain=self.domain, method=self.method,
            window_start=self._last_probe, window_length=span,
            probe_rtt_ms=reply.rtt_ms, censored=True))
        self.cycles_completed += 1


class TimingMachine:
    """Expiry-window probing driven by response-time classification.

    For servers whose TTL answers cannot be trusted, each cycle probes
    once past a conservative expiry bound: a miss-classed RTT means
    nothing had refreshed the record (censored window, and our probe
    refreshed it); a cached-classed RTT means some client did, at an
    unknown instant imputed to the window midpoint. Abstentions discard
    the cycle.
    """

    method = "timing"

    def __init__(self, prober: Prober, server: str, domain: str, max_ttl: int,
                 window: float, calibration: TimingCalibration,
                 tuning: Tuning = DEFAULT_TUNING):
        if not 0 < window <= max_ttl:
            raise ValueError(f"window must be in (0, max_ttl], got {window} for {max_ttl}")
        self.prober = prober
        self.server = server
        self.domain = domain
        self.max_ttl = max_ttl
        self.window = window
        self.calibration = calibration
        self.tuning = tuning
        self.cycles_completed = 0
        self.done = False
        self._expiry_bound: float | None = None
        self._timeouts = 0

    def start_at(self, now: float) -> float:
        return now

    def _error(self, at: float, kind: str, message: str) -> CycleError:
        return CycleError(server=self.server, domain=self.domain, method=self.method,
                          at=at, kind=kind, message=message)

    def step(self, now: float) -> tuple[float | None, list]:
        items: list = []
        if self.done:
            return None, items
        try:
            reply = self.prober.probe(self.server, self.domain, recursion_desired=True)
        except ProbeTimeout as exc:
            self._timeouts += 1
            items.append(self._error(now, "timeout", str(exc)))
            if self._timeouts >= self.tuning.failure_limit:
                self.done = True
                return None, items
            self._expiry_bound = None
            return now + self.tuning.timeout_backoff, items
        self._timeouts = 0
        sent = reply.sent_at

        if self._expiry_bound is None:
            # Whatever was cached expires at most max_ttl from now.
            self._expiry_bound = sent + self.max_ttl
            return self._expiry_bound + self.window, items

        window_eff = sent - self._expiry_bound
        verdict = classify_timing(reply.rtt_ms, self.calibration)
        if verdict == "abstain":
            items.append(self._error(sent, "abstain",
                                     f"rtt {reply.rtt_ms:.2f}ms inside the guard band"))
        elif verdict == "miss":
            items.append(RefreshObservation(
                server=self.server, domain=self.domain, method=self.method,
                window_start=self._expiry_bound, window_length=window_eff,
                probe_rtt_ms=reply.rtt_ms, censored=True))
            self.cycles_completed += 1
        else:
            delay = window_eff / 2.0
            items.append(RefreshObservation(
                server=self.server, domain=self.domain, method=self.method,
                window_start=self._expiry_bound, window_length=window_eff,
                probe_rtt_ms=reply.rtt_ms, censored=False,
                event=RefreshEvent(delay_after_expiry=delay,
                                   inferred_refresh_time=self._expiry_bound + delay)))
            self.cycles_completed += 1
        self._expiry_bound = sent + self.max_ttl
        return self._expiry_bound + self.window, items


def build_machine(method: str, prober: Prober, server: str, domain: str, *,
                  max_ttl: int, window: float | None = None,
                  probe_interval: float | None = None,
                  calibration: TimingCalibration | None = None,
                  tuning: Tuning = DEFAULT_TUNING):
    if method == "ttl_recursive":
        return TtlRecursiveMachine(prober, server, domain, max_ttl,
                                   window if window is not None else float(max_ttl),
                                   tuning=tuning)
    if method == "rd0":
        return Rd0Machine(prober, server, domain, max_ttl,
                          probe_interval=probe_interval, tuning=tuning)
    if method == "timing":
        if calibration is None:
            raise ValueError("timing method requires a calibration")
        return TimingMachine(prober, server, domain, max_ttl,
                             window if window is not None else float(max_ttl),
                             calibration, tuning=tuning)
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


def snoop_domain(prober: Prober, clock: Clock, server: str, domain: str, method: str, *,
                 max_ttl: int, window: float | None = None,
                 probe_interval: float | None = None,
                 calibration: TimingCalibration | None = None,
                 duration: float | None = None, max_cycles: int | None = None,
                 tuning: Tuning = DEFAULT_TUNING) -> Iterator[RefreshObservation | CycleError]:
    """Stream observations for one domain until the budget runs out.

    Yields RefreshObservation and CycleError items in probe order.
    Per-cycle anomalies are annotated into the stream and the scan
    continues. Two detections end the domain by raising instead,
    because they invalidate the method itself against this server: a
    pre-expiry refresher (ServerPrefetches: its cache never empties, so
    expiry-timed observations mean nothing) and an ignored RD bit
    (RdNotHonored: our own probes would pollute every window).
    """
    if max_cycles is not None and max_cycles <= 0:
        return
    if duration is not None and duration <= 0:
        return
    machine = build_machine(method, prober, server, domain, max_ttl=max_ttl,
                            window=window, probe_interval=probe_interval,
                            calibration=calibration, tuning=tuning)
    start = clock.now()
    wake = machine.start_at(start)
    while True:
        if duration is not None and wake > start + duration:
            return
        if max_cycles is not None and machine.cycles_completed >= max_cycles:
            return
        clock.sleep_until(wake)
        wake, items = machine.step(clock.now())
        for item in items:
            if isinstance(item, CycleError) and item.kind in INVALIDATING_KINDS:
                raise _ERROR_TYPES[item.kind](item.message)
            yield item
        if wake is None or machine.done:
            return


def _drive_single(machine, clock: Clock) -> RefreshObservation:
    """Run one machine until its first observation; errors raise."""
    wake = machine.start_at(clock.now())
    while wake is not None:
        clock.sleep_until(wake)
        wake, items = machine.step(clock.now())
        for item in items:
            if isinstance(item, RefreshObservation):
                return item
            error_type = _ERROR_TYPES.get(item.kind, SnoopError)
            raise error_type(item.message)
    raise SnoopError("probing ended without an observation")


def run_cycle_ttl_recursive(prober: Prober, clock: Clock, server: str, domain: str,
                            max_ttl: int, window: float,
                            tuning: Tuning = DEFAULT_TUNING) -> RefreshObservation:
    """Run one full expiry-watch cycle and return its observation.

    Two probes: one fixes the expiry instant, the second (window seconds
    past it) classifies the cycle. Any anomaly raises instead of being
    annotated; pre-expiry checkpoints are left to streaming scans.
    """
    machine = TtlRecursiveMachine(prober, server, domain, max_ttl, window,
                                  tuning=replace(tuning, checkpoint_every=0))
    return _drive_single(machine, clock)


def run_probe_rd0(machine: Rd0Machine, clock: Clock) -> RefreshObservation | None:
    """Advance an rd0 prober by one probe; returns its observation, if any.

    The first probe of a run only establishes the baseline and yields
    None. Anomalies raise.
    """
    wake = machine.start_at(clock.now())
    clock.sleep_until(wake)
    _, items = machine.step(clock.now())
    result = None
    for item in items:
        if isinstance(item, RefreshObservation):
            result = item
        else:
            error_type = _ERROR_TYPES.get(item.kind, SnoopError)
            raise error_type(item.message)
    return result
