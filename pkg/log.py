"""
Module that handles the per-frame ingest log:

* Write one line per observed frame
* Parse the log back
* Extract keyframe statistics
"""

import dataclasses
import logging
from pathlib import Path

logger = logging.getLogger(__name__)

NO_IDS = "-"


@dataclasses.dataclass(frozen=True)
class LogEntry(object):
    """
    One ingest log line: ``<frame id> <keyframe 0|1> <coverage> <scale> <retrieved ids|->``

    :ivar scale: depth scale of the last integrated window (1.0 before the first one)
    :ivar retrieved: ranked ids retrieved for the frame, comma separated on disk
    """
    frame_id: int
    is_keyframe: bool
    coverage: float
    scale: float
    retrieved: tuple

    def as_line(self):
        ids = ",".join(str(i) for i in self.retrieved) if self.retrieved else NO_IDS
        return "{0} {1:d} {2!r} {3!r} {4}".format(self.frame_id, self.is_keyframe, self.coverage,
                                                  self.scale, ids)


def entry_from_decision(decision):
    """LogEntry of a memory_store FrameDecision"""
    return LogEntry(decision.frame_id, decision.is_keyframe, float(decision.coverage),
                    float(decision.scale), tuple(decision.retrieval.frame_ids))


def write_log(entries, path):
    """
    Write the ingest log

    :param entries: iterable of LogEntry
    :param path: output file
    :return: number of lines written
    """
    lines = [entry.as_line() for entry in entries]
    Path(path).write_text("".join(line + "\n" for line in lines))
    return len(lines)


def load_log(log_path):
    """
    Parse an ingest log

    :param log_path: the log written by write_log
    :return: list of LogEntry in file order
    """
    entries = []
    with open(log_path) as log_fp:
        for line_no, line in enumerate(log_fp, 1):
            line = line.split()
            if not line:
                continue
            if len(line) != 5 or line[1] not in ("0", "1"):
                raise ValueError("{0}:{1}: malformed log line".format(log_path, line_no))
            try:
                ids = () if line[4] == NO_IDS else tuple(int(i) for i in line[4].split(","))
                entries.append(LogEntry(int(line[0]), line[1] == "1", float(line[2]), float(line[3]), ids))
            except ValueError:
                raise ValueError("{0}:{1}: malformed log line".format(log_path, line_no))
    return entries


def keyframe_ids(entries):
    return [entry.frame_id for entry in entries if entry.is_keyframe]


def admissions_per_bucket(entries, bucket):
    """Keyframes admitted in every run of ``bucket`` consecutive log lines"""
    counts = []
    for start in range(0, len(entries), bucket):
        counts.append(sum(1 for entry in entries[start:start + bucket] if entry.is_keyframe))
    return counts
