"""
Dynamic corruption for the two pre-training objectives.

Token masking picks each ordinary token with probability 0.15; acoustic
masking cuts the utterance into segments of 20 to 50 frames and picks 15% of
the segments. Either way a picked unit is masked 80% of the time, replaced
10% of the time and left alone 10% of the time, and it is a prediction
target in all three cases.

Plans are drawn from a generator derived from (seed, utterance id, epoch),
so they do not depend on batch composition or on how many threads plan.
"""
import enum
import logging
import zlib
from dataclasses import dataclass, replace

import numpy as np

from ctal.errors import ConfigError, DimensionError
from ctal.text.bbpe import BYTE_OFFSET, MASK_ID

logger = logging.getLogger(__name__)

IGNORE_INDEX = -100
SELECT_PROBABILITY = 0.15
MIN_SEGMENT = 20
MAX_SEGMENT = 50
REPLACE_MODES = ("contiguous", "independent")


class Action(enum.IntEnum):
    MASK = 0      # <mask> token, or zeroed frames
    REPLACE = 1   # random token, or frames copied from elsewhere in the utterance
    KEEP = 2


def draw_actions(rng, count):
    u = rng.random(count)
    return np.where(u < 0.8, Action.MASK, np.where(u < 0.9, Action.REPLACE, Action.KEEP)).astype(np.int8)


def utterance_rng(seed, utterance_id, epoch):
    return np.random.default_rng([seed, zlib.crc32(str(utterance_id).encode("utf-8")), epoch])


@dataclass(frozen=True)
class MlmPlan:
    length: int
    positions: np.ndarray
    actions: np.ndarray
    labels: np.ndarray
    replacements: np.ndarray

    def __len__(self):
        return len(self.positions)


@dataclass(frozen=True)
class McamPlan:
    """
    :param num_frames: real frames in the utterance
    :param boundaries: segment starts followed by num_frames
    :param selected: indices of the selected segments, ascending
    :param actions: one Action per selected segment
    :param sources: per selected segment, the frame indices copied in on
        REPLACE (empty otherwise)
    """
    num_frames: int
    boundaries: np.ndarray
    selected: np.ndarray
    actions: np.ndarray
    sources: tuple

    @property
    def lengths(self):
        return np.diff(self.boundaries)

    @property
    def num_segments(self):
        return len(self.boundaries) - 1

    def segment(self, index):
        return np.arange(self.boundaries[index], self.boundaries[index + 1])

    @property
    def masked_frames(self):
        if len(self.selected) == 0:
            return np.zeros(0, dtype=np.int64)
        return np.concatenate([self.segment(i) for i in self.selected])


def plan_mlm(tokens, rng, vocab_size, probability=SELECT_PROBABILITY):
    """
    Ordinary tokens (id >= 4) are selected independently; <s>, </s>, <pad>
    and <mask> never are. Random replacements are ordinary tokens.
    """
    tokens = np.asarray(tokens, dtype=np.int64)
    maskable = np.nonzero(tokens >= BYTE_OFFSET)[0]
    positions = maskable[rng.random(len(maskable)) < probability]
    actions = draw_actions(rng, len(positions))
    replacements = rng.integers(BYTE_OFFSET, vocab_size, size=len(positions))
    return MlmPlan(len(tokens), positions, actions, tokens[positions], replacements)


def segment_boundaries(num_frames, rng, min_segment=MIN_SEGMENT, max_segment=MAX_SEGMENT):
    """Greedy left-to-right cut; a short tail becomes its own segment."""
    starts = [0]
    while True:
        end = starts[-1] + int(rng.integers(min_segment, max_segment + 1))
        if end >= num_frames:
            break
        starts.append(end)
    return np.array(starts + [num_frames], dtype=np.int64)


def selection_count(num_segments, probability=SELECT_PROBABILITY):
    """Nearest integer to probability * n, at least one when n > 0."""
    if num_segments == 0:
        return 0
    return max(1, int(np.floor(probability * num_segments + 0.5)))


def plan_mcam(num_frames, rng, replace_mode="contiguous", probability=SELECT_PROBABILITY):
    if num_frames < 1:
        raise DimensionError("acoustic masking needs at least one frame")
    if replace_mode not in REPLACE_MODES:
        raise ConfigError(f"mcam_replace_mode must be one of {REPLACE_MODES}, got {replace_mode!r}")
    boundaries = segment_boundaries(num_frames, rng)
    count = len(boundaries) - 1
    selected = np.sort(rng.choice(count, size=selection_count(count, probability), replace=False))
    actions = draw_actions(rng, len(selected))
    sources = []
    for index, action in zip(selected, actions):
        length = int(boundaries[index + 1] - boundaries[index])
        if action != Action.REPLACE:
            sources.append(np.zeros(0, dtype=np.int64))
        elif replace_mode == "contiguous":
            start = int(rng.integers(0, num_frames - length + 1))
            sources.append(np.arange(start, start + length))
        else:
            sources.append(rng.integers(0, num_frames, size=length))
    return McamPlan(num_frames, boundaries, selected, actions, tuple(sources))


def empty_mlm_plan(length):
    empty = np.zeros(0, dtype=np.int64)
    return MlmPlan(length, empty, empty.astype(np.int8), empty, empty)


def empty_mcam_plan(num_frames):
    empty = np.zeros(0, dtype=np.int64)
    return McamPlan(num_frames, np.array([0, num_frames]), empty, empty.astype(np.int8), ())


@dataclass
class MaskedTargets:
    """
    :param mlm_labels: [B, T] original ids at selected positions, -100 elsewhere
    :param mcam_mask: [B, F] True on frames the acoustic loss reconstructs
    :param original_features: [B, F, 160] uncorrupted features
    """
    mlm_labels: np.ndarray
    mcam_mask: np.ndarray
    original_features: np.ndarray

    def select(self, indices):
        indices = list(indices)
        return MaskedTargets(self.mlm_labels[indices], self.mcam_mask[indices], self.original_features[indices])

    @property
    def num_labelled_tokens(self):
        return int((self.mlm_labels != IGNORE_INDEX).sum())

    @property
    def num_masked_frames(self):
        return int(self.mcam_mask.sum())


def apply_plans(batch, mlm_plans, mcam_plans):
    """
    Returns the corrupted copy of `batch` and the MaskedTargets. Replacement
    frames are copied from the uncorrupted features.
    """
    if len(mlm_plans) != batch.batch_size or len(mcam_plans) != batch.batch_size:
        raise DimensionError(f"{len(mlm_plans)} token plans and {len(mcam_plans)} frame plans "
                             f"for a batch of {batch.batch_size}")
    token_ids = batch.token_ids.copy()
    features = batch.audio_features.copy()
    labels = np.full(token_ids.shape, IGNORE_INDEX, dtype=np.int64)
    mcam_mask = np.zeros(batch.audio_mask.shape, dtype=bool)
    text_lengths = batch.text_mask.sum(axis=1)
    frame_lengths = batch.audio_mask.sum(axis=1)

    for i, plan in enumerate(mlm_plans):
        if plan.length != text_lengths[i]:
            raise DimensionError(f"row {i}: token plan for {plan.length} tokens, batch has {text_lengths[i]}")
        labels[i, plan.positions] = plan.labels
        token_ids[i, plan.positions[plan.actions == Action.MASK]] = MASK_ID
        swap = plan.actions == Action.REPLACE
        token_ids[i, plan.positions[swap]] = plan.replacements[swap]

    for i, plan in enumerate(mcam_plans):
        if plan.num_frames != frame_lengths[i]:
            raise DimensionError(f"row {i}: frame plan for {plan.num_frames} frames, batch has {frame_lengths[i]}")
        for index, action, source in zip(plan.selected, plan.actions, plan.sources):
            frames = plan.segment(index)
            mcam_mask[i, frames] = True
            if action == Action.MASK:
                features[i, frames] = 0.0
            elif action == Action.REPLACE:
                features[i, frames] = batch.audio_features[i, source]

    corrupted = replace(batch, token_ids=token_ids, audio_features=features)
    return corrupted, MaskedTargets(labels, mcam_mask, batch.audio_features.copy())


class MaskingPlanner:
    """
    Draws both plans for every row of a batch from per-utterance generators.

    :param vocab_size: range of random replacement tokens
    :param seed: global seed
    :param replace_mode: "contiguous" spans or "independent" frames for the
        acoustic REPLACE action
    :param use_mlm: draw token plans (empty plans otherwise)
    :param use_mcam: draw frame plans (empty plans otherwise)
    """

    def __init__(self, vocab_size, seed=0, replace_mode="contiguous", use_mlm=True, use_mcam=True):
        if replace_mode not in REPLACE_MODES:
            raise ConfigError(f"mcam_replace_mode must be one of {REPLACE_MODES}, got {replace_mode!r}")
        self.vocab_size = vocab_size
        self.seed = seed
        self.replace_mode = replace_mode
        self.use_mlm = use_mlm
        self.use_mcam = use_mcam

    def plan_row(self, utterance_id, tokens, num_frames, epoch):
        rng = utterance_rng(self.seed, utterance_id, epoch)
        mlm = plan_mlm(tokens, rng, self.vocab_size) if self.use_mlm else empty_mlm_plan(len(tokens))
        mcam = plan_mcam(num_frames, rng, self.replace_mode) if self.use_mcam else empty_mcam_plan(num_frames)
        return mlm, mcam

    def plan_batch(self, batch, epoch, executor=None):
        rows = []
        for i in range(batch.batch_size):
            utterance_id = batch.utterance_ids[i] if batch.utterance_ids else str(i)
            rows.append((utterance_id, batch.token_ids[i, batch.text_mask[i]], int(batch.audio_mask[i].sum())))
        if executor is None:
            plans = [self.plan_row(u, t, f, epoch) for u, t, f in rows]
        else:
            plans = list(executor.map(lambda row: self.plan_row(*row, epoch), rows))
        return [p[0] for p in plans], [p[1] for p in plans]

    def __call__(self, batch, epoch, executor=None):
        mlm_plans, mcam_plans = self.plan_batch(batch, epoch, executor)
        return apply_plans(batch, mlm_plans, mcam_plans)
