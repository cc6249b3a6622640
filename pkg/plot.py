"""
Plot module to generate the benchmark figure from a report.

The figure has two panels over the frame buckets: retrieval throughput (queries per second) and
the cumulative memory-bank size of every method.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

Y1_LABEL = 'Throughput [q/s]'
Y2_LABEL = 'Memory bank [#]'
X_LABEL = 'Frame range'
LABEL_SIZE = 12
DPI = 150
MARKERS = {"geometric": "o", "pose_baseline": "s"}

PLOT_PARAMETERS = {
    'axes.labelsize': LABEL_SIZE,
    'axes.titlesize': 10,
    'font.size': LABEL_SIZE,
    'legend.fontsize': 10,
    'xtick.labelsize': LABEL_SIZE - 2,
    'ytick.labelsize': LABEL_SIZE - 2,
}

matplotlib.rcParams.update(PLOT_PARAMETERS)


def plot_report(report, path):
    """
    Plot throughput and memory growth per bucket

    :param report: the BenchReport
    :param path: output image; the format follows the suffix
    :return: the figure path
    """
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(12, 4.5), dpi=DPI)
    for method in report.methods():
        rows = report.rows_for(method)
        labels = ["{0}-{1}".format(row.range_start, row.range_end) for row in rows]
        marker = MARKERS.get(method, "^")
        ax1.plot(labels, [row.qps for row in rows], marker=marker, label=method)
        ax2.plot(labels, [row.mem_total for row in rows], marker=marker, label=method)
    for ax, label in ((ax1, Y1_LABEL), (ax2, Y2_LABEL)):
        ax.set_xlabel(X_LABEL)
        ax.set_ylabel(label)
        ax.grid(True, linestyle=':')
        if report.rows:
            ax.legend(loc='best')
    ax2.set_yscale('symlog')
    fig.tight_layout()
    plt.savefig(str(path), bbox_inches='tight', dpi=DPI)
    plt.close(fig)
    return Path(path)
