"""Ingestion of 16 kHz 16-bit PCM audio and mini-batch preparation.

Training clips are cropped or self-concatenated to a fixed power-of-three
length; evaluation keeps the whole utterance.  No amplitude normalization is
applied anywhere, only optional pre-emphasis.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass, replace

import numpy as np

SAMPLE_RATE = 16000
INT16_SCALE = 32768.0
DEFAULT_PRE_EMPHASIS = 0.97


class AudioFormatError(ValueError):
    """Raised when a WAV file does not match the expected PCM format."""


@dataclass
class WaveformClip:
    """Mono sample sequence in [-1, 1] with speaker label."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE
    speaker_id: int = -1
    utterance_id: str = ""

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)

    def __len__(self):
        return len(self.samples)


def read_wav(path):
    """Read a mono 16-bit 16 kHz PCM WAV into a clip scaled by 1/32768."""
    try:
        with wave.open(str(path), "rb") as wf:
            if wf.getnchannels() != 1:
                raise AudioFormatError(
                    f"{path}: NumChannels is {wf.getnchannels()}, expected mono (1)")
            if wf.getsampwidth() != 2:
                raise AudioFormatError(
                    f"{path}: BitsPerSample is {8 * wf.getsampwidth()}, expected 16")
            if wf.getframerate() != SAMPLE_RATE:
                raise AudioFormatError(
                    f"{path}: SampleRate is {wf.getframerate()}, expected {SAMPLE_RATE}")
            raw = wf.readframes(wf.getnframes())
    except wave.Error as exc:
        raise AudioFormatError(f"{path}: AudioFormat not PCM/RIFF ({exc})") from exc
    ints = np.frombuffer(raw, dtype="<i2")
    return WaveformClip(samples=ints.astype(np.float64) / INT16_SCALE)


def write_wav(path, clip):
    """Write a clip as mono 16-bit 16 kHz PCM; int16 payloads round-trip exactly."""
    ints = np.clip(np.rint(clip.samples * INT16_SCALE), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(clip.sample_rate)
        wf.writeframes(ints.tobytes())


def pre_emphasis(clip, coeff=DEFAULT_PRE_EMPHASIS):
    """First-order high-pass: y[0] = x[0], y[t] = x[t] - coeff * x[t-1]."""
    if not 0.0 <= coeff < 1.0:
        raise ValueError(f"pre-emphasis coefficient must lie in [0, 1), got {coeff}")
    x = clip.samples
    y = np.empty_like(x)
    y[0:1] = x[0:1]
    y[1:] = x[1:] - coeff * x[:-1]
    return replace(clip, samples=y)


def fit_length(clip, target_len, rng=None):
    """Crop or self-concatenate the clip to exactly ``target_len`` samples.

    Longer clips are cropped at a random contiguous offset (offset 0 when no
    rng is supplied); shorter clips repeat themselves until the target is
    reached.  Evaluation paths never call this.
    """
    n = len(clip)
    if n == 0:
        raise ValueError(f"clip {clip.utterance_id!r} is empty")
    if n == target_len:
        return clip
    if n > target_len:
        offset = int(rng.integers(0, n - target_len + 1)) if rng is not None else 0
        return replace(clip, samples=clip.samples[offset:offset + target_len])
    reps = -(-target_len // n)
    return replace(clip, samples=np.tile(clip.samples, reps)[:target_len])


def make_batch(clips, batch_size=None, rng=None):
    """Stack equal-length clips into (N, L) plus an aligned label vector.

    Order is shuffled when an rng is supplied (seeded upstream).
    ``batch_size``, when given, must match the number of clips.
    """
    if batch_size is not None and len(clips) != batch_size:
        raise ValueError(f"expected {batch_size} clips, got {len(clips)}")
    lengths = {len(c) for c in clips}
    if len(lengths) != 1:
        raise ValueError(f"mixed clip lengths in batch: {sorted(lengths)}")
    clips = list(clips)
    if rng is not None:
        order = rng.permutation(len(clips))
        clips = [clips[i] for i in order]
    data = np.stack([c.samples for c in clips])
    labels = np.array([c.speaker_id for c in clips], dtype=np.int64)
    return data, labels
