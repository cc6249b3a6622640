"""
Cross-window depth-scale alignment.

A relative depth estimator returns every processing window at its own unknown scale. Frames
that the new window shares with the global store give (old, new) depth correspondences; after
validity, confidence and percentile filtering, one closed-form least-squares factor maps the
new window onto the stored scale.
"""

import dataclasses
import logging

import numpy as np

from geometry import INVALID_DEPTH

logger = logging.getLogger(__name__)

TAU_MIN = 0.1
KEEP_FRACTION = 0.6
MIN_CORRESPONDENCES = 32


class DegenerateCorrespondencesError(ValueError):
    """Too few (or all-zero) correspondences to fit a scale"""

    def __init__(self, message, count=0):
        super(DegenerateCorrespondencesError, self).__init__(message)
        self.count = count


@dataclasses.dataclass(frozen=True)
class CorrespondenceSet(object):
    """
    Depth pairs that survived the filter chain.

    :ivar old: stored (aligned) depths
    :ivar new: depths of the window being aligned
    :ivar stage_counts: pixels left after each stage: total, valid, confident, percentile
    """
    old: np.ndarray
    new: np.ndarray
    stage_counts: dict

    def __len__(self):
        return len(self.old)


@dataclasses.dataclass(frozen=True)
class AlignmentResult(object):
    scale: float
    correspondences: object
    fallback: bool


def detect_overlap(window_frame_ids, global_frame_ids):
    """Frames of the new window already present in the global store"""
    return set(window_frame_ids) & set(global_frame_ids)


def _nearest_rank_threshold(values, keep_fraction):
    """Smallest value at or above the (1 - keep_fraction) nearest-rank percentile"""
    if keep_fraction >= 1.0:
        return values.min()
    return np.percentile(values, 100.0 * (1.0 - keep_fraction), method="inverted_cdf")


def filter_correspondences(d_old, d_new, c_old, c_new, tau_min=TAU_MIN, keep_fraction=KEEP_FRACTION):
    """
    Three-stage correspondence filter

    1. validity: both depths >= 1e-6
    2. confidence: both confidences >= tau_min
    3. percentile: keep pixels at or above the (1 - keep_fraction) nearest-rank confidence
       percentile of the stage-2 pixels, computed on each map separately and intersected

    :param d_old: stored depths (any shape, e.g. stacked overlap frames)
    :param d_new: new-window depths, same shape
    :param c_old: stored confidences, same shape
    :param c_new: new-window confidences, same shape
    :param tau_min: minimum confidence in [0, 1]
    :param keep_fraction: share kept by the percentile stage, in (0, 1]
    :return: the CorrespondenceSet
    """
    arrays = [np.asarray(a) for a in (d_old, d_new, c_old, c_new)]
    if any(a.shape != arrays[0].shape for a in arrays):
        raise ValueError("depth and confidence grids must share dimensions, got {0}".format(
            [a.shape for a in arrays]))
    if not 0.0 <= tau_min <= 1.0:
        raise ValueError("tau_min must be in [0, 1]")
    if not 0.0 < keep_fraction <= 1.0:
        raise ValueError("keep_fraction must be in (0, 1]")
    d_old, d_new, c_old, c_new = (a.ravel() for a in arrays)

    valid = (d_old >= INVALID_DEPTH) & (d_new >= INVALID_DEPTH)
    confident = valid & (c_old >= tau_min) & (c_new >= tau_min)
    kept = confident.copy()
    if confident.any():
        kept &= c_old >= _nearest_rank_threshold(c_old[confident], keep_fraction)
        kept &= c_new >= _nearest_rank_threshold(c_new[confident], keep_fraction)
    counts = {"total": int(d_old.size), "valid": int(valid.sum()),
              "confident": int(confident.sum()), "percentile": int(kept.sum())}
    return CorrespondenceSet(d_old[kept].astype(np.float64), d_new[kept].astype(np.float64), counts)


def estimate_scale(corr, min_correspondences=MIN_CORRESPONDENCES):
    """
    Closed-form least-squares scale s = sum(old * new) / sum(new^2)

    :param corr: the CorrespondenceSet
    :param min_correspondences: fewer pairs than this raise DegenerateCorrespondencesError
    :return: the scale factor
    """
    count = len(corr)
    if count == 0 or count < min_correspondences:
        raise DegenerateCorrespondencesError(
            "{0} correspondences, need {1}".format(count, max(1, min_correspondences)), count)
    denominator = float(np.dot(corr.new, corr.new))
    if denominator <= 0.0:
        raise DegenerateCorrespondencesError("new depths are all zero", count)
    return float(np.dot(corr.old, corr.new)) / denominator


def apply_scale(depths, s):
    """
    Multiply every valid entry by s; invalid entries (< 1e-6) are returned unchanged

    :param depths: sequence of depth maps
    :param s: positive scale
    :return: list of scaled depth maps (dtype preserved)
    """
    if not s > 0:
        raise ValueError("scale must be > 0, got {0}".format(s))
    scaled = []
    for depth in depths:
        depth = np.asarray(depth)
        product = np.where(depth >= INVALID_DEPTH, depth.astype(np.float64) * float(s), depth)
        scaled.append(product.astype(depth.dtype, copy=False))
    return scaled


def align_window(old_depths, new_depths, old_confs, new_confs, tau_min=TAU_MIN,
                 keep_fraction=KEEP_FRACTION, min_correspondences=MIN_CORRESPONDENCES):
    """
    Full alignment pipeline over the overlap frames of one window.

    An empty overlap or a degenerate fit falls back to s = 1 with a warning.

    :return: AlignmentResult
    """
    if len(old_depths) == 0:
        logger.warning("No overlap with the global store, using scale 1")
        return AlignmentResult(1.0, None, True)
    corr = filter_correspondences(np.stack(old_depths), np.stack(new_depths),
                                  np.stack(old_confs), np.stack(new_confs), tau_min, keep_fraction)
    try:
        scale = estimate_scale(corr, min_correspondences)
    except DegenerateCorrespondencesError as err:
        logger.warning("Degenerate scale fit (%s), using scale 1", err)
        return AlignmentResult(1.0, corr, True)
    logger.debug("Scale %.6f from %d correspondences %s", scale, len(corr), corr.stage_counts)
    return AlignmentResult(scale, corr, False)


class RelativeDepthModel(object):
    """
    Stand-in for a relative depth estimator: every processing window comes back multiplied
    by its own scale.

    The first window keeps scale 1 so the global store stays metric; later windows draw a
    log-uniform scale within [1 / (1 + jitter), 1 + jitter] from the seed, unless explicit
    ``scales`` are given (window i uses scales[i], the last one repeating).
    """

    def __init__(self, jitter=0.0, seed=0, scales=None):
        self.jitter = float(jitter)
        self.scales = list(scales) if scales is not None else None
        self._rng = np.random.default_rng(seed)
        self._drawn = [1.0]

    def window_scale(self, window_index):
        if self.scales is not None:
            return float(self.scales[min(window_index, len(self.scales) - 1)])
        bound = np.log1p(self.jitter)
        while len(self._drawn) <= window_index:
            self._drawn.append(float(np.exp(self._rng.uniform(-bound, bound))) if bound else 1.0)
        return self._drawn[window_index]

    def estimate(self, window_index, depth):
        """Depth of one frame as seen by window ``window_index``"""
        return apply_scale([depth], self.window_scale(window_index))[0]
