"""
Synthetic paired corpora with learnable, checkable structure.

Every "speaker" is a fixed mixture of harmonics over its own fundamental.
Emotion classes and sentiment scores modulate the amplitude envelope (rate
and depth) and put a keyword into the transcript, so each downstream task
has a signal in both streams.
"""
import logging
import os

import numpy as np

from ctal.audio.frontend import Waveform
from ctal.audio.wav import write_wav
from ctal.data.manifest import ManifestEntry, write_manifest
from ctal.errors import ConfigError

logger = logging.getLogger(__name__)

KINDS = ("pretrain", "emotion", "sentiment", "speaker")
EMOTIONS = ("neutral", "happy", "angry", "sad")
EMOTION_KEYWORDS = {
    "neutral": ("fine", "okay", "usual"),
    "happy": ("great", "lovely", "wonderful"),
    "angry": ("furious", "outrageous", "unacceptable"),
    "sad": ("gloomy", "miserable", "hopeless"),
}
# envelope rate in Hz and depth per class
EMOTION_MODULATION = {"neutral": (2.0, 0.1), "happy": (6.0, 0.5), "angry": (9.0, 0.8), "sad": (1.0, 0.3)}
SENTIMENT_WORDS = ("terrible", "bad", "poor", "average", "decent", "good", "excellent")
SUBJECTS = ("the weather", "this movie", "the meeting", "my day", "the food", "that song", "the trip", "our plan")
TEMPLATES = ("i think {subject} was {word}", "honestly {subject} is {word}", "{subject} seemed {word} to me",
             "well {subject} felt {word} today")
FUNDAMENTALS = (110.0, 150.0, 195.0, 240.0, 290.0, 345.0, 410.0, 480.0)


class SpeakerVoice:
    """A speaker's timbre: a fundamental and harmonic weights."""

    def __init__(self, index, rng):
        self.index = index
        self.f0 = FUNDAMENTALS[index % len(FUNDAMENTALS)] * (1.0 + 0.03 * (index // len(FUNDAMENTALS)))
        self.harmonics = rng.dirichlet(np.ones(5)) * rng.uniform(0.5, 1.0)

    def render(self, duration, sample_rate, rng, rate=3.0, depth=0.3, noise=0.01):
        t = np.arange(int(duration * sample_rate)) / sample_rate
        vibrato = 1.0 + 0.01 * np.sin(2 * np.pi * rng.uniform(4.0, 6.0) * t)
        phase = 2 * np.pi * self.f0 * np.cumsum(vibrato) / sample_rate
        tone = sum(w * np.sin((k + 1) * phase + rng.uniform(0, 2 * np.pi)) for k, w in enumerate(self.harmonics))
        envelope = 1.0 - depth * 0.5 * (1.0 + np.sin(2 * np.pi * rate * t + rng.uniform(0, 2 * np.pi)))
        samples = 0.5 * tone * envelope + noise * rng.standard_normal(len(t))
        return Waveform(np.clip(samples, -1.0, 1.0), sample_rate)


def _sentence(rng, word):
    template = TEMPLATES[rng.integers(len(TEMPLATES))]
    return template.format(subject=SUBJECTS[rng.integers(len(SUBJECTS))], word=word)


def sentiment_word(score):
    """Maps a score in [-3, 3] to an ordered polarity word."""
    bucket = int(np.clip(np.floor((score + 3.0) / 6.0 * len(SENTIMENT_WORDS)), 0, len(SENTIMENT_WORDS) - 1))
    return SENTIMENT_WORDS[bucket]


def synth_example(kind, rng, voices, sample_rate, duration):
    """
    :return: (waveform, transcript, label or None)
    """
    voice = voices[rng.integers(len(voices))]
    if kind == "emotion":
        emotion = EMOTIONS[rng.integers(len(EMOTIONS))]
        rate, depth = EMOTION_MODULATION[emotion]
        words = EMOTION_KEYWORDS[emotion]
        text = _sentence(rng, words[rng.integers(len(words))])
        return voice.render(duration, sample_rate, rng, rate, depth), text, emotion
    if kind == "sentiment":
        score = round(float(rng.uniform(-3.0, 3.0)), 1)
        text = _sentence(rng, sentiment_word(score))
        return voice.render(duration, sample_rate, rng, 5.0 + score, 0.2 + 0.1 * abs(score)), text, repr(score)
    if kind == "speaker":
        text = _sentence(rng, SENTIMENT_WORDS[rng.integers(len(SENTIMENT_WORDS))])
        return voice.render(duration, sample_rate, rng), text, f"spk{voice.index:02d}"
    emotion = EMOTIONS[rng.integers(len(EMOTIONS))]
    rate, depth = EMOTION_MODULATION[emotion]
    text = _sentence(rng, EMOTION_KEYWORDS[emotion][0])
    return voice.render(duration, sample_rate, rng, rate, depth), text, None


def synth_corpus(kind, count, out_dir, seed=0, num_speakers=4, sample_rate=16000, min_duration=0.5,
                 max_duration=0.9, train_fraction=0.8):
    """
    Writes `out_dir/wavs/*.wav`, an i.i.d. `train.tsv`/`test.tsv` split and
    `transcripts.txt` (one transcript per line, for tokenizer training).

    :return: (train entries, test entries)
    """
    if kind not in KINDS:
        raise ConfigError(f"unknown synthetic corpus kind {kind!r}; known: {', '.join(KINDS)}")
    if count < 2:
        raise ConfigError("a synthetic corpus needs at least 2 examples")
    if not 0.0 < min_duration <= max_duration:
        raise ConfigError(f"bad duration range [{min_duration}, {max_duration}]")
    rng = np.random.default_rng(seed)
    voices = [SpeakerVoice(i, rng) for i in range(num_speakers)]
    wav_dir = os.path.join(out_dir, "wavs")
    os.makedirs(wav_dir, exist_ok=True)

    entries = []
    for i in range(count):
        duration = float(rng.uniform(min_duration, max_duration))
        waveform, text, label = synth_example(kind, rng, voices, sample_rate, duration)
        path = os.path.join(wav_dir, f"{kind}_{i:05d}.wav")
        write_wav(path, waveform)
        entries.append(ManifestEntry(path, text, label))

    order = rng.permutation(count)
    cut = min(count - 1, max(1, int(round(train_fraction * count))))
    train = [entries[i] for i in sorted(order[:cut])]
    test = [entries[i] for i in sorted(order[cut:])]
    write_manifest(os.path.join(out_dir, "train.tsv"), train, relative_to=out_dir)
    write_manifest(os.path.join(out_dir, "test.tsv"), test, relative_to=out_dir)
    with open(os.path.join(out_dir, "transcripts.txt"), "w", encoding="utf-8") as f:
        f.writelines(entry.transcript + "\n" for entry in entries)
    logger.info("Wrote %d %s pairs to %s (%d train, %d test)", count, kind, out_dir, len(train), len(test))
    return train, test
