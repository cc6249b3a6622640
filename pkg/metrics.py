"""
Metrics of the efficiency benchmark:

* Aggregate per-frame timing samples into per-bucket report rows
* Average replicated runs
* Compare the geometric memory against the pose baseline and save the summary
"""

import dataclasses
import logging
import math

import numpy as np

logger = logging.getLogger(__name__)

COLUMNS = ("method", "range_start", "range_end", "qps", "mem_increment", "mem_total")
GEOMETRIC = "geometric"
POSE_BASELINE = "pose_baseline"


@dataclasses.dataclass(frozen=True)
class FrameSample(object):
    """Seconds spent on one frame and the memory-bank size after it"""
    frame_id: int
    retrieve_s: float
    ingest_s: float
    memory: int


@dataclasses.dataclass(frozen=True)
class BucketRow(object):
    """
    One (method, frame range) row; ``range_end`` is inclusive.

    ``ingest_ms`` and ``retrieve_ms`` are the mean per-frame components; they go to the sidecar,
    not the CSV, and do not take part in comparisons.
    """
    method: str
    range_start: int
    range_end: int
    qps: float
    mem_increment: float
    mem_total: float
    ingest_ms: float = dataclasses.field(default=math.nan, compare=False)
    retrieve_ms: float = dataclasses.field(default=math.nan, compare=False)

    def as_tuple(self):
        return tuple(getattr(self, column) for column in COLUMNS)


@dataclasses.dataclass
class BenchReport(object):
    rows: list = dataclasses.field(default_factory=list)
    machine: dict = dataclasses.field(default_factory=dict)
    config_hash: str = ""

    def methods(self):
        return list(dict.fromkeys(row.method for row in self.rows))

    def rows_for(self, method):
        return [row for row in self.rows if row.method == method]

    def __len__(self):
        return len(self.rows)


def bucket_rows(method, samples, bucket, warmup=0, include_ingest=True):
    """
    Per-bucket throughput and memory growth of one method

    :param method: method name
    :param samples: FrameSample list in frame order, a multiple of bucket long
    :param bucket: frames per bucket
    :param warmup: leading frames left out of the first bucket's timing
    :param include_ingest: time the whole pipeline (geometric) or the retrieval only (baseline)
    :return: list of BucketRow
    """
    rows = []
    previous = 0
    for start in range(0, len(samples), bucket):
        chunk = samples[start:start + bucket]
        timed = chunk[warmup:] if start == 0 and warmup < len(chunk) else chunk
        retrieve = np.array([sample.retrieve_s for sample in timed])
        ingest = np.array([sample.ingest_s for sample in timed])
        seconds = retrieve.sum() + (ingest.sum() if include_ingest else 0.0)
        qps = len(timed) / seconds if seconds > 0 else math.inf
        total = chunk[-1].memory
        rows.append(BucketRow(method, start, start + len(chunk) - 1, float(qps), total - previous, total,
                              float(ingest.mean() * 1e3), float(retrieve.mean() * 1e3)))
        previous = total
    return rows


def average_reports(reports):
    """Row-wise mean of replicated reports (same methods and buckets)"""
    if len(reports) == 1:
        return reports[0]
    rows = []
    for grouped in zip(*(report.rows for report in reports)):
        first = grouped[0]
        if any((row.method, row.range_start) != (first.method, first.range_start) for row in grouped):
            raise ValueError("replicated reports do not share buckets")
        rows.append(BucketRow(first.method, first.range_start, first.range_end,
                              float(np.mean([row.qps for row in grouped])),
                              float(np.mean([row.mem_increment for row in grouped])),
                              float(np.mean([row.mem_total for row in grouped])),
                              float(np.mean([row.ingest_ms for row in grouped])),
                              float(np.mean([row.retrieve_ms for row in grouped]))))
    return BenchReport(rows, reports[0].machine, reports[0].config_hash)


def compare_methods(report, method=GEOMETRIC, baseline=POSE_BASELINE):
    """
    Speed-up of ``method`` over ``baseline`` per bucket and the memory-bank reduction

    :return: dict with ``speedup`` (list per bucket), ``qps_growth`` per method (last bucket
        time over first bucket time) and ``memory_reduction`` in percent
    """
    ours, theirs = report.rows_for(method), report.rows_for(baseline)
    comparison = {"speedup": [], "qps_growth": {}, "memory_reduction": math.nan}
    for name, rows in ((method, ours), (baseline, theirs)):
        if rows:
            comparison["qps_growth"][name] = rows[0].qps / rows[-1].qps
    if ours and theirs:
        comparison["speedup"] = [a.qps / b.qps for a, b in zip(ours, theirs)]
        if theirs[-1].mem_total:
            comparison["memory_reduction"] = 100.0 * (1.0 - ours[-1].mem_total / theirs[-1].mem_total)
    return comparison


def save_summary(report, path):
    """Save the per-method totals and the comparison in the output folder

    :param report: the BenchReport
    :param path: the summary file
    :return: the comparison dictionary
    """
    comparison = compare_methods(report)
    with open(path, "w") as summary_f:
        summary_f.write("CONFIG_HASH " + report.config_hash + "\n")
        for method in report.methods():
            rows = report.rows_for(method)
            summary_f.write("{0}_MEAN_QPS {1}\n".format(method.upper(), np.mean([r.qps for r in rows])))
            summary_f.write("{0}_MEM_TOTAL {1}\n".format(method.upper(), rows[-1].mem_total))
            summary_f.write("{0}_TIME_GROWTH {1}\n".format(method.upper(),
                                                           comparison["qps_growth"][method]))
        for i, speedup in enumerate(comparison["speedup"]):
            summary_f.write("SPEEDUP_BUCKET_{0} {1}\n".format(i, speedup))
        summary_f.write("MEMORY_REDUCTION " + str(comparison["memory_reduction"]) + "\n")
    logger.info("Memory reduction %.2f%%", comparison["memory_reduction"])
    return comparison
