"""
Training protocol orchestration.

* hybrid context window: L slots, the first half the L/2 most recent frames, the second half
  either retrieved spatial memory or the L/2 frames before them
* chained forward training: T sequential windows of W frames where the last frame of every
  window is generated without gradients and replaces the ground truth in the later windows

Frame payloads are opaque to the orchestrator; only the predictor looks inside them.
"""

import dataclasses
import hashlib
import logging
import math
import numbers
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

SPATIAL = "spatial"
EXTENDED = "extended"
MODES = (SPATIAL, EXTENDED)
CONTEXT_LENGTH = 16
TAU_HIST = 8
GROUND_TRUTH = "gt"
PREDICTED = "pred"


@dataclasses.dataclass(frozen=True)
class ContextWindow(object):
    """
    :ivar fixed: the L/2 most recent frame ids, ascending
    :ivar context: L/2 retrieved (spatial) or earlier (extended) frame ids
    :ivar mode: SPATIAL or EXTENDED
    """
    fixed: tuple
    context: tuple
    mode: str

    @property
    def slots(self):
        return self.fixed + self.context

    def __len__(self):
        return len(self.fixed) + len(self.context)


def _history_ids(t, history):
    if t < 1:
        raise ValueError("t must be >= 1, got {0}".format(t))
    if len(history) < t:
        raise ValueError("history holds {0} frames, t = {1}".format(len(history), t))
    return [getattr(record, "frame_id", record) for record in history[:t]]


def build_context_window(t, history, retrieval, mode, length=CONTEXT_LENGTH):
    """
    Hybrid context window for generating frame t

    Before t reaches L the earliest frame is repeated to fill missing slots. In spatial mode a
    retrieval shortfall is back-filled from the frames preceding the fixed half, most recent
    first, without duplicates.

    :param t: index of the frame being generated; history[:t] precede it
    :param history: FrameRecord (or plain frame id) sequence in stream order
    :param retrieval: RetrievalResult, or a sequence of ranked frame ids
    :param mode: SPATIAL or EXTENDED
    :param length: L, even
    :return: ContextWindow
    """
    if mode not in MODES:
        raise ValueError("unknown mode {0!r}".format(mode))
    if length < 2 or length % 2:
        raise ValueError("context length must be even and >= 2, got {0}".format(length))
    ids = _history_ids(t, history)
    half = length // 2
    fixed = ids[max(0, t - half):]
    earlier = ids[:max(0, t - half)]
    fixed = [ids[0]] * (half - len(fixed)) + fixed

    if mode == EXTENDED:
        context = earlier[-half:]
        context = [ids[0]] * (half - len(context)) + context
    else:
        ranked = getattr(retrieval, "frame_ids", retrieval)
        context = []
        for frame_id in ranked:
            if len(context) == half:
                break
            if frame_id not in context and frame_id not in fixed:
                context.append(int(frame_id))
        for frame_id in reversed(earlier):
            if len(context) == half:
                break
            if frame_id not in context:
                context.append(frame_id)
        context += [ids[0]] * (half - len(context))
    return ContextWindow(tuple(fixed), tuple(context), mode)


def select_mode(retrieval, tau_hist=TAU_HIST):
    """SPATIAL when at least tau_hist historical frames were retrieved, else EXTENDED"""
    count = int(retrieval) if isinstance(retrieval, numbers.Integral) else len(retrieval)
    return SPATIAL if count >= tau_hist else EXTENDED


@dataclasses.dataclass(frozen=True)
class TraceRecord(object):
    step: int
    slot: int
    frame: int
    origin: str

    def as_line(self):
        return "{0} {1} {2} {3}".format(self.step, self.slot, self.frame, self.origin)


@dataclasses.dataclass(frozen=True)
class DenoiseCall(object):
    step: int
    frame: int
    grad: bool


@dataclasses.dataclass
class ChainState(object):
    """Predicted payloads by frame index, accumulated loss and finished steps"""
    predicted: dict = dataclasses.field(default_factory=dict)
    total_loss: float = 0.0
    step: int = 0


@dataclasses.dataclass(frozen=True)
class ChainResult(object):
    loss: float
    step_losses: tuple
    trace: tuple
    predicted: dict
    denoise_calls: tuple


def run_cft(video, cond, T, W, predictor, seed=0):
    """
    Chained forward training over one video

    :param video: frame payload sequence, at least T + W - 1 long
    :param cond: conditioning sequence, one entry per step
    :param T: number of chained steps, >= 1
    :param W: window size, >= 1
    :param predictor: object with ``loss(window, cond, rng)`` and
        ``denoise(window, cond, rng, grad)``
    :param seed: seed of the noise-level sampler handed to the predictor
    :return: ChainResult; ``loss`` is the mean of the per-step losses
    """
    if T < 1 or W < 1:
        raise ValueError("T and W must be >= 1, got T={0} W={1}".format(T, W))
    if len(video) < T + W - 1:
        raise ValueError("video has {0} frames, T={1} W={2} needs {3}".format(
            len(video), T, W, T + W - 1))
    if len(cond) < T:
        raise ValueError("{0} conditioning entries for {1} steps".format(len(cond), T))
    rng = np.random.default_rng(seed)
    state = ChainState()
    trace, losses, calls = [], [], []
    for j in range(T):
        window = []
        for slot, k in enumerate(range(j, j + W)):
            if k in state.predicted:
                window.append(state.predicted[k])
                trace.append(TraceRecord(j, slot, k, PREDICTED))
            else:
                window.append(video[k])
                trace.append(TraceRecord(j, slot, k, GROUND_TRUTH))
        loss = float(predictor.loss(window, cond[j], rng))
        if not math.isfinite(loss):
            raise ValueError("step {0}: predictor returned loss {1}".format(j, loss))
        losses.append(loss)
        state.total_loss += loss
        if j < T - 1:
            state.predicted[j + W - 1] = predictor.denoise(window, cond[j], rng, grad=False)
            calls.append(DenoiseCall(j, j + W - 1, False))
        state.step += 1
    logger.debug("CFT T=%d W=%d loss %.6f, predicted %s", T, W, state.total_loss / T,
                 sorted(state.predicted))
    return ChainResult(state.total_loss / T, tuple(losses), tuple(trace), dict(state.predicted),
                       tuple(calls))


def expected_trace(T, W):
    """
    Window composition of chained forward training written out directly: slot i of step j
    holds frame j + i, predicted when an earlier step j' < j generated it (j' + W - 1 = j + i).
    """
    trace = []
    for j in range(T):
        for i in range(W):
            generator = j + i - (W - 1)
            origin = PREDICTED if 0 <= generator < j else GROUND_TRUTH
            trace.append(TraceRecord(j, i, j + i, origin))
    return tuple(trace)


def dump_trace(trace, path):
    """Line-delimited trace export: ``step slot frame origin``"""
    records = getattr(trace, "trace", trace)
    Path(path).write_text("".join(record.as_line() + "\n" for record in records))


def load_trace(path):
    records = []
    for line_no, line in enumerate(Path(path).read_text().splitlines(), 1):
        fields = line.split()
        if len(fields) != 4 or fields[3] not in (GROUND_TRUTH, PREDICTED):
            raise ValueError("{0}:{1}: malformed trace line {2!r}".format(path, line_no, line))
        try:
            step, slot, frame = (int(field) for field in fields[:3])
        except ValueError:
            raise ValueError("{0}:{1}: malformed trace line {2!r}".format(path, line_no, line))
        records.append(TraceRecord(step, slot, frame, fields[3]))
    return tuple(records)


def payload_bytes(payload):
    if isinstance(payload, (bytes, bytearray)):
        return bytes(payload)
    return np.ascontiguousarray(payload).tobytes()


class IdentityPredictor(object):
    """Loss 1.0 for every window; denoising hands back the window's ground-truth last frame"""

    def __init__(self):
        self.windows = []

    def loss(self, window, cond, rng):
        self.windows.append(list(window))
        return 1.0

    def denoise(self, window, cond, rng, grad=False):
        assert not grad, "denoise must run without gradients"
        return window[-1]


class HashStubPredictor(object):
    """
    Deterministic stand-in for a video diffusion model.

    The loss mixes a digest of the window payloads and conditioning with a noise level drawn
    from the sampler in [0, noise_levels); denoising returns a payload tagged ``pred:``.
    """

    def __init__(self, noise_levels=1000):
        self.noise_levels = noise_levels
        self.losses = []

    @staticmethod
    def _digest(window, cond):
        sha = hashlib.sha1()
        for payload in window:
            sha.update(payload_bytes(payload))
        sha.update(repr(cond).encode())
        return sha.digest()

    def loss(self, window, cond, rng):
        level = rng.integers(0, self.noise_levels)
        digest = int.from_bytes(self._digest(window, cond)[:6], "little") / float(1 << 48)
        value = digest + level / float(self.noise_levels)
        self.losses.append(value)
        return value

    def denoise(self, window, cond, rng, grad=False):
        assert not grad, "denoise must run without gradients"
        return b"pred:" + self._digest(window, cond)
