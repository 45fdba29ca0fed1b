"""DNS cache snooping toolkit.

Measures how often client populations behind a caching resolver look up
given domains, by reading nothing but the resolver's cache state: TTL
values and response timing. Includes a ground-truth simulator for
validating every estimator offline.
"""

from .clock import Clock, SystemClock, VirtualClock
from .corpus import (DomainEntry, DomainList, ObservationLog, ObservationWriter,
                     ParseError, ResolverUnreachable, liveness_filter,
                     load_domain_list, load_observations)
from .engine import (DEFAULT_TUNING, INVALIDATING_KINDS, CycleError,
                     DiscoveryBudgetExceeded,
                     InconsistentTtl, InsufficientSeparation, MaxTtlEstimate,
                     NonMonotonicTtl, Rd0Machine, RdBehavior, RdNotHonored,
                     RefreshEvent, RefreshObservation, ServerPrefetches,
                     SnoopError, TimingCalibration, TimingMachine,
                     TtlExceedsMax, TtlRecursiveMachine, Tuning,
                     UnresolvableDomain, build_machine, calibrate_timing,
                     check_rd_behavior, classify_timing, classify_window_read,
                     discover_max_ttl, run_cycle_ttl_recursive, run_probe_rd0,
                     snap_to_grid, snoop_domain, ttl_grace)
from .estimation import (ArrivalEstimate, DomainStats, NoObservations, aggregate,
                         estimate, format_ranking_table, poisson_pmf,
                         rank_domains, spearman_rho, write_ranking_csv)
from .ratelimit import RateLimiter
from .scan import (BatchResult, ScanResult, discover_all, run_batch, run_scan,
                   true_client_rates)
from .simnet import (ConfigError, Sim, SimConfig, SimExchange, UdpSimServer,
                     build_sim, config_from_dict, load_scenario, serve_udp)
from .transport import ProbeReply, Prober, ProbeTimeout, UdpExchange
from .wire import (DnsQuery, DnsResponse, InvalidName, Malformed, Rcode,
                   RecordType, ResourceRecord, decode_query, decode_response,
                   encode_query, encode_response, min_answer_ttl,
                   normalize_name, validate_name)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
