"""Event store: idempotent ingestion, atomicity, partition layout, reload."""

from __future__ import annotations

import json
import uuid

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fieldstudy.errors import StudyError
from fieldstudy.records import (
    EventBatch,
    QueryRecord,
    RecordKind,
    SensorRecord,
    canonical_json,
)
from fieldstudy.storage import DUPLICATE, STORED, EventStore, utc_day

INST = "device-0001"
DAY_MS = 86_400_000


def battery(t_ms: int, percent: int = 50, installation_id: str = INST) -> SensorRecord:
    return SensorRecord(str(uuid.uuid4()), installation_id, RecordKind.BATTERY, t_ms,
                        {"percent": percent})


def query(t_ms: int, text: str = "recipe", installation_id: str = INST) -> QueryRecord:
    return QueryRecord(str(uuid.uuid4()), installation_id, t_ms, text, 3)


def batch(seq: int, *records, installation_id: str = INST) -> EventBatch:
    return EventBatch(installation_id, seq, max(r.t_ms for r in records), tuple(records))


def test_first_ingest_is_stored(tmp_path):
    store = EventStore(tmp_path)
    ack = store.ingest(batch(7, battery(1000)), arrival_ms=2000)
    assert ack == {"status": STORED, "batch_seq": 7}


def test_reupload_is_duplicate_and_changes_nothing(tmp_path):
    store = EventStore(tmp_path)
    b = batch(7, battery(1000), query(1500))
    store.ingest(b, arrival_ms=2000)
    before = store.stats()
    ack = store.ingest(b, arrival_ms=9999)
    assert ack["status"] == DUPLICATE
    after = store.stats()
    assert before["total_records"] == after["total_records"] == 2
    assert before["records_by_kind"] == after["records_by_kind"]


def test_invalid_record_rejects_whole_batch(tmp_path):
    store = EventStore(tmp_path)
    records = [battery(t) for t in range(0, 49_000, 1000)]
    records.append(battery(50_000, percent=130))  # out of range
    before = store.stats()["total_records"]
    with pytest.raises(StudyError, match="invalid_record"):
        store.ingest(batch(0, *records), arrival_ms=1)
    assert store.stats()["total_records"] == before == 0
    assert not store.has_batch(INST, 0)


def test_record_level_dedup_across_distinct_batches(tmp_path):
    store = EventStore(tmp_path)
    shared = battery(1000)
    store.ingest(batch(0, shared), arrival_ms=1)
    ack = store.ingest(batch(1, shared, battery(2000)), arrival_ms=2)
    assert ack["status"] == STORED
    assert store.stats()["total_records"] == 2  # shared record appears once


def test_partition_layout_one_file_per_utc_day(tmp_path):
    store = EventStore(tmp_path)
    store.ingest(batch(0, battery(1000), battery(DAY_MS + 1000)), arrival_ms=1)
    assert (tmp_path / INST / "1970-01-01.ndjson").exists()
    assert (tmp_path / INST / "1970-01-02.ndjson").exists()
    line = (tmp_path / INST / "1970-01-01.ndjson").read_text().splitlines()[0]
    assert json.loads(line)["kind"] == "BATTERY"


def test_read_range_is_half_open_and_ordered(tmp_path):
    store = EventStore(tmp_path)
    records = [battery(t) for t in (3000, 1000, 2000)]
    store.ingest(batch(0, *records), arrival_ms=1)
    got = store.read_range(INST, 1000, 3000)
    assert [r.t_ms for r in got] == [1000, 2000]


def test_read_range_kind_filter(tmp_path):
    store = EventStore(tmp_path)
    store.ingest(batch(0, battery(1000), query(1500)), arrival_ms=1)
    assert [r.t_ms for r in store.read_range(INST, 0, 10_000, kinds={"QUERY"})] == [1500]


def test_read_range_inverted_rejected(tmp_path):
    store = EventStore(tmp_path)
    with pytest.raises(StudyError, match="inverted_range"):
        store.read_range(INST, 10, 5)


def test_read_range_empty_store(tmp_path):
    store = EventStore(tmp_path)
    assert store.read_range(INST, 0, 10) == []


def test_stats_on_empty_store(tmp_path):
    stats = EventStore(tmp_path).stats()
    assert stats["total_records"] == 0
    assert stats["records_by_kind"] == {}


def test_stats_additive_over_partitions(tmp_path):
    store = EventStore(tmp_path)
    store.ingest(batch(0, battery(1000), battery(DAY_MS + 1000), query(2000)), arrival_ms=1)
    stats = store.stats()
    assert sum(stats["records_by_partition"].values()) == stats["total_records"] == 3


def test_reload_preserves_stats_reads_and_dedup(tmp_path):
    store = EventStore(tmp_path)
    store.ingest(batch(0, battery(1000)), arrival_ms=5)
    store.ingest(batch(1, query(2000)), arrival_ms=6)
    expected_stats = store.stats()
    expected_rows = store.read_range(INST, 0, 10_000)
    store.close()

    reloaded = EventStore(tmp_path)
    assert reloaded.stats() == expected_stats
    assert reloaded.read_range(INST, 0, 10_000) == expected_rows
    assert reloaded.ingest(batch(1, query(2000)), arrival_ms=7)["status"] == DUPLICATE


def test_utc_day_boundary():
    assert utc_day(DAY_MS - 1) == "1970-01-01"
    assert utc_day(DAY_MS) == "1970-01-02"


# -- idempotency property: any duplicated upload sequence equals its dedup ------

@settings(max_examples=40, deadline=None)
@given(data=st.data())
def test_final_store_matches_deduplicated_sequence(tmp_path_factory, data):
    n_batches = data.draw(st.integers(min_value=1, max_value=6))
    batches = []
    for seq in range(n_batches):
        n_records = data.draw(st.integers(min_value=1, max_value=4))
        records = tuple(battery(seq * 10_000 + i * 100) for i in range(n_records))
        batches.append(EventBatch(INST, seq, seq, records))
    # an upload multiset with duplicates, in a shuffled-but-valid replay order
    uploads = []
    for b in batches:
        uploads.append(b)
        for _ in range(data.draw(st.integers(min_value=0, max_value=2))):
            uploads.append(b)

    noisy_dir = tmp_path_factory.mktemp("noisy")
    clean_dir = tmp_path_factory.mktemp("clean")
    noisy = EventStore(noisy_dir)
    clean = EventStore(clean_dir)
    for i, b in enumerate(uploads):
        noisy.ingest(b, arrival_ms=i)
    for i, b in enumerate(batches):
        clean.ingest(b, arrival_ms=i)

    assert noisy.stats()["records_by_kind"] == clean.stats()["records_by_kind"]
    rows_noisy = [canonical_json(r.payload) for r in noisy.read_range(INST, 0, 10**9)]
    rows_clean = [canonical_json(r.payload) for r in clean.read_range(INST, 0, 10**9)]
    assert rows_noisy == rows_clean
    noisy.close()
    clean.close()
