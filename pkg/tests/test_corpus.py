"""Domain lists, liveness filtering, and the JSONL observation log."""

import io
import json
import threading

import pytest
from hypothesis import given
from hypothesis import strategies as st

from snoopdns.corpus import (ObservationWriter, ParseError, ResolverUnreachable,
                             error_to_json, liveness_filter, load_domain_list,
                             load_observations, observation_from_json,
                             observation_to_json)
from snoopdns.engine import CycleError, RefreshEvent, RefreshObservation


class TestDomainLists:
    def test_plain_lines_with_comments_and_blanks(self, tmp_path):
        path = tmp_path / "domains.txt"
        path.write_text("# corpus\n\nexample.com\nWWW.Example.ORG.\n\n# tail\n")
        loaded = load_domain_list(str(path))
        assert loaded.domains == ["example.com", "www.example.org"]
        assert loaded.skipped == 0

    def test_invalid_names_are_skipped_and_counted(self, tmp_path):
        path = tmp_path / "domains.txt"
        path.write_text("good.com\nnot a domain!\nunder_scored.ok\n-bad-.com\n")
        loaded = load_domain_list(str(path))
        assert loaded.domains == ["good.com", "under_scored.ok", "-bad-.com"]
        assert loaded.skipped == 1

    def test_duplicates_keep_first_and_count(self, tmp_path):
        path = tmp_path / "domains.txt"
        path.write_text("a.com\nb.com\nA.COM.\n")
        loaded = load_domain_list(str(path))
        assert loaded.domains == ["a.com", "b.com"]
        assert loaded.skipped == 1

    def test_csv_with_rank_column(self, tmp_path):
        path = tmp_path / "top.csv"
        path.write_text("GlobalRank,Domain,TldRank\n1,example.com,1\n"
                        "2,example.org,2\n,broken,,\n")
        loaded = load_domain_list(str(path), fmt="csv_with_domain_column")
        assert [e.domain for e in loaded.entries] == ["example.com",
                                                      "example.org", "broken"]
        assert [e.rank for e in loaded.entries] == [1, 2, None]

    def test_csv_missing_domain_column_raises_with_line(self, tmp_path):
        path = tmp_path / "top.csv"
        path.write_text("rank,name\n1,example.com\n")
        with pytest.raises(ParseError, match=":1:"):
            load_domain_list(str(path), fmt="csv_with_domain_column")

    def test_empty_csv_raises(self, tmp_path):
        path = tmp_path / "top.csv"
        path.write_text("")
        with pytest.raises(ParseError):
            load_domain_list(str(path), fmt="csv_with_domain_column")

    def test_auto_sniffs_csv_headers(self, tmp_path):
        path = tmp_path / "list"
        path.write_text("rank,domain\n5,example.net\n")
        loaded = load_domain_list(str(path))
        assert loaded.entries[0].rank == 5

    def test_auto_sniffs_plain_lines(self, tmp_path):
        path = tmp_path / "list"
        path.write_text("example.net\nexample.org\n")
        assert load_domain_list(str(path)).domains == ["example.net",
                                                       "example.org"]


class TestLivenessFilter:
    def test_second_round_rescues_a_flaky_domain(self, scripted):
        script = [60, None, "timeout",   # round 1: a up, b empty, c silent
                  60, "timeout",         # round 2: b up now, c still silent
                  "timeout"]             # round 3: c alone, still silent
        prober, clock, _ = scripted(script)
        live, dead = liveness_filter(prober, clock, "sim",
                                     ["a.test", "b.test", "c.test"],
                                     attempts=3, spacing=60.0)
        assert live == ["a.test", "b.test"]
        assert dead == ["c.test"]
        assert clock.now() >= 120.0  # two waits between three rounds

    def test_rounds_are_spaced_apart(self, scripted):
        prober, clock, exchange = scripted([None, None, None])
        liveness_filter(prober, clock, "sim", ["a.test"], attempts=3,
                        spacing=60.0)
        gaps = [b - a for a, b in zip(exchange.sent_at, exchange.sent_at[1:])]
        assert all(gap >= 60.0 for gap in gaps)

    def test_whole_round_of_timeouts_means_the_server_is_down(self, scripted):
        prober, clock, _ = scripted(["timeout", "timeout"])
        with pytest.raises(ResolverUnreachable):
            liveness_filter(prober, clock, "sim", ["a.test", "b.test"])

    def test_order_is_preserved(self, scripted):
        prober, clock, _ = scripted([60, 60, 60])
        live, dead = liveness_filter(prober, clock, "sim",
                                     ["z.test", "m.test", "a.test"], attempts=1)
        assert live == ["z.test", "m.test", "a.test"]
        assert dead == []


def sample_observation(censored=False):
    if censored:
        return RefreshObservation(server="sim", domain="a.test", method="rd0",
                                  window_start=10.0, window_length=150.0,
                                  probe_rtt_ms=4.25, censored=True)
    return RefreshObservation(server="sim", domain="a.test",
                              method="ttl_recursive", window_start=300.0,
                              window_length=300.0, probe_rtt_ms=5.5,
                              censored=False,
                              event=RefreshEvent(delay_after_expiry=120.0,
                                                 inferred_refresh_time=420.0))


class TestJsonlLog:
    def test_observation_round_trip(self):
        for censored in (False, True):
            original = sample_observation(censored)
            record = observation_to_json(original, "scan-1")
            assert record["schema_version"] == 1
            back = observation_from_json(json.loads(json.dumps(record)))
            assert back == original

    @given(st.floats(0.0, 1e6), st.floats(0.1, 1e5), st.floats(0.0, 1.0),
           st.booleans())
    def test_round_trip_property(self, start, window, frac, censored):
        event = None if censored else RefreshEvent(frac * window,
                                                   start + frac * window)
        original = RefreshObservation(server="sim", domain="a.test",
                                      method="timing", window_start=start,
                                      window_length=window, probe_rtt_ms=1.0,
                                      censored=censored, event=event)
        assert observation_from_json(observation_to_json(original, "x")) == original

    def test_writer_appends_one_flushed_line_per_record(self, tmp_path):
        path = tmp_path / "log.jsonl"
        with open(path, "w", encoding="utf-8") as handle:
            writer = ObservationWriter(handle, "scan-7")
            writer.write(sample_observation())
            writer.write(CycleError(server="sim", domain="a.test", method="rd0",
                                    at=5.0, kind="timeout", message="no reply"))
        lines = path.read_text().splitlines()
        assert len(lines) == 2
        assert {json.loads(line)["kind"] for line in lines} == {"observation",
                                                                "error"}
        assert all(json.loads(line)["scan_id"] == "scan-7" for line in lines)

    def test_writer_rejects_unknown_types(self):
        writer = ObservationWriter(io.StringIO(), "scan")
        with pytest.raises(TypeError):
            writer.write({"kind": "observation"})

    def test_load_skips_and_counts_corrupt_lines(self, tmp_path):
        path = tmp_path / "log.jsonl"
        good = json.dumps(observation_to_json(sample_observation(), "s"))
        error_line = json.dumps(error_to_json(
            CycleError("sim", "a.test", "rd0", 1.0, "timeout", "m"), "s"))
        bad_schema = json.dumps({**observation_to_json(sample_observation(), "s"),
                                 "schema_version": 99})
        bad_event = json.dumps({**observation_to_json(sample_observation(), "s"),
                                "censored": True})
        path.write_text("\n".join([
            good, "{not json", '"just a string"', bad_schema,
            '{"kind": "mystery"}', bad_event, error_line, "", good,
        ]) + "\n")
        log = load_observations(str(path))
        assert len(log.observations) == 2
        assert len(log.errors) == 1
        assert log.corrupt_lines == 5  # blank lines skip silently
        assert log.scan_ids == {"s"}

    def test_interrupted_final_line_is_survivable(self, tmp_path):
        path = tmp_path / "log.jsonl"
        good = json.dumps(observation_to_json(sample_observation(), "s"))
        path.write_text(good + "\n" + good[: len(good) // 2])
        log = load_observations(str(path))
        assert len(log.observations) == 1
        assert log.corrupt_lines == 1

    def test_concurrent_writers_never_tear_lines(self, tmp_path):
        path = tmp_path / "log.jsonl"
        with open(path, "w", encoding="utf-8") as handle:
            writer = ObservationWriter(handle, "scan-threads")

            def hammer():
                for _ in range(200):
                    writer.write(sample_observation())

            threads = [threading.Thread(target=hammer) for _ in range(8)]
            for t in threads:
                t.start()
            for t in threads:
                t.join()
        lines = path.read_text().splitlines()
        assert len(lines) == 8 * 200
        for line in lines:
            json.loads(line)
        assert writer.records_written == 8 * 200
