import pytest

from log import LogEntry, admissions_per_bucket, entry_from_decision, keyframe_ids, load_log, write_log


def test_log_round_trip(tmp_path):
    entries = [LogEntry(0, True, 1.0, 1.0, ()),
               LogEntry(1, False, 0.1 + 0.2, 1.0, (0,)),
               LogEntry(7, True, 0.3333333333333333, 2.0000000000000004, (4, 0, 1))]
    assert write_log(entries, tmp_path / "ingest.log") == 3
    assert load_log(tmp_path / "ingest.log") == entries
    assert (tmp_path / "ingest.log").read_text().splitlines()[0] == "0 1 1.0 1.0 -"


@pytest.mark.parametrize("line", ["0 1 1.0 1.0", "0 2 1.0 1.0 -", "0 1 x 1.0 -", "0 1 1.0 1.0 1,,2"])
def test_malformed_log(tmp_path, line):
    (tmp_path / "ingest.log").write_text(line + "\n")
    with pytest.raises(ValueError):
        load_log(tmp_path / "ingest.log")


def test_log_of_ingested_stream(revisit_memory, tmp_path):
    memory, decisions = revisit_memory
    write_log([entry_from_decision(decision) for decision in decisions], tmp_path / "ingest.log")
    entries = load_log(tmp_path / "ingest.log")
    assert len(entries) == len(decisions)
    assert keyframe_ids(entries) == memory.keyframe_ids
    for entry in entries:
        # retrieval only sees frames integrated before this one
        assert all(i < entry.frame_id and memory.frames[i].is_keyframe for i in entry.retrieved)
        assert 0.0 <= entry.coverage <= 1.0
    assert sum(admissions_per_bucket(entries, 50)) == memory.keyframe_count


def test_admissions_per_bucket():
    entries = [LogEntry(i, i % 3 == 0, 0.0, 1.0, ()) for i in range(10)]
    assert admissions_per_bucket(entries, 4) == [2, 1, 1]
    assert admissions_per_bucket([], 4) == []
