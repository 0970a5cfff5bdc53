"""Synthetic multi-speaker corpus for desk-scale experiments.

Each synthetic speaker is a harmonic stack at a jittered fundamental plus
resonance-shaped noise.  Speakers differ in fundamental frequency and in at
least one resonance by a configurable margin, so the verification task is
well-posed without real data.

Corpus layout on disk:

    <out>/wav/<utterance_id>.wav
    <out>/manifest.csv   utterance_id,speaker_id,split,path
    <out>/trials.csv     enrol_utt,test_utt,label      (label 1 = same speaker)
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import SAMPLE_RATE, WaveformClip, write_wav

SPLIT_TRAIN = "train"
SPLIT_ENROL = "trials-enrol"
SPLIT_TEST = "trials-test"


@dataclass
class SyntheticSpeakerSpec:
    speaker_id: int
    fundamental_hz: float
    resonances_hz: tuple = (700.0, 1400.0, 2500.0)
    f0_jitter: float = 0.02           # per-utterance relative jitter range
    noise_floor: float = 0.02


@dataclass
class ManifestEntry:
    utterance_id: str
    speaker_id: int
    split: str
    path: str


@dataclass
class Trial:
    enrol_utt: str
    test_utt: str
    label: int  # 1 same speaker, 0 different


def default_speaker_specs(n_speakers, seed=0, f0_range=(90.0, 300.0), margin=8.0):
    """Evenly spread fundamentals plus randomized resonances per speaker."""
    if n_speakers < 2:
        raise ValueError(f"need at least 2 speakers, got {n_speakers}")
    rng = np.random.default_rng(seed)
    f0s = np.linspace(f0_range[0], f0_range[1], n_speakers)
    bands = [(400.0, 900.0), (1000.0, 1800.0), (2000.0, 3000.0)]
    specs = []
    for i in range(n_speakers):
        # Stagger resonances across the band so neighbours differ by >= margin.
        res = tuple(lo + ((i * 7919) % n_speakers + rng.uniform(0.1, 0.9)) / n_speakers * (hi - lo)
                    for lo, hi in bands)
        specs.append(SyntheticSpeakerSpec(speaker_id=i, fundamental_hz=float(f0s[i]),
                                          resonances_hz=res))
    _check_margins(specs, margin)
    return specs


def _check_margins(specs, margin):
    for a in specs:
        for b in specs:
            if a.speaker_id >= b.speaker_id:
                continue
            f0_ok = abs(a.fundamental_hz - b.fundamental_hz) >= margin
            res_ok = any(abs(x - y) >= margin
                         for x, y in zip(a.resonances_hz, b.resonances_hz))
            if not (f0_ok and res_ok):
                raise ValueError(
                    f"speakers {a.speaker_id} and {b.speaker_id} are not separated "
                    f"by the {margin} Hz margin")


def _resonance_gain(freqs, spec, bandwidth=160.0):
    gain = np.zeros_like(freqs)
    for res in spec.resonances_hz:
        gain += np.exp(-((freqs - res) / bandwidth) ** 2)
    return gain


def synthesize_utterance(spec, duration_s, rng, sample_rate=SAMPLE_RATE):
    """One utterance: dominant fundamental, shaped harmonics, shaped noise."""
    n = int(round(duration_s * sample_rate))
    t = np.arange(n) / sample_rate
    f0 = spec.fundamental_hz * (1.0 + rng.uniform(-spec.f0_jitter, spec.f0_jitter))
    sig = np.sin(2.0 * np.pi * f0 * t + rng.uniform(0, 2 * np.pi))
    k = 2
    while k * f0 < 3800.0:
        gain = float(_resonance_gain(np.array([k * f0]), spec)[0])
        amp = (0.15 + 0.55 * gain) / k  # fundamental stays dominant
        sig += amp * np.sin(2.0 * np.pi * k * f0 * t + rng.uniform(0, 2 * np.pi))
        k += 1
    # resonance-shaped noise bed
    white = rng.standard_normal(n)
    spectrum = np.fft.rfft(white)
    freqs = np.fft.rfftfreq(n, 1.0 / sample_rate)
    shaped = np.fft.irfft(spectrum * (0.05 + _resonance_gain(freqs, spec)), n)
    shaped /= max(np.sqrt(np.mean(shaped ** 2)), 1e-12)
    sig += spec.noise_floor * shaped
    sig *= 0.5 / np.max(np.abs(sig))
    return WaveformClip(samples=sig, sample_rate=sample_rate,
                        speaker_id=spec.speaker_id)


def generate_synthetic_corpus(specs, utts_per_speaker, seed, out_dir, force=False,
                              train_speaker_frac=0.8,
                              duration_range=(1.5, 2.5)):
    """Write WAVs, a manifest and a disjoint-speaker trial list; deterministic.

    About 20% of speakers are held out entirely for trials, picked at even
    strides through the speaker list so held-out voices span the same
    characteristic range as the training voices; their utterances alternate
    between the enrol and test splits.  Same-speaker trials enumerate all
    enrol x test combinations; an equal number of different-speaker trials
    is sampled.
    """
    out_dir = Path(out_dir)
    if out_dir.exists() and any(out_dir.iterdir()) and not force:
        raise FileExistsError(f"{out_dir} exists and is not empty (use force to overwrite)")
    if len(specs) < 2:
        raise ValueError(f"need at least 2 speakers, got {len(specs)}")
    wav_dir = out_dir / "wav"
    wav_dir.mkdir(parents=True, exist_ok=True)

    n_trial = len(specs) - min(len(specs), max(2, int(round(train_speaker_frac * len(specs)))))
    if n_trial >= 2:
        stride = len(specs) // n_trial
        trial_speakers = {specs[stride // 2 + j * stride].speaker_id
                          for j in range(n_trial)}
    else:  # one held-out speaker cannot form different-trials
        trial_speakers = set()

    rng = np.random.default_rng(seed)
    entries = []
    for spec in specs:
        for u in range(utts_per_speaker):
            utt_id = f"spk{spec.speaker_id:04d}_utt{u:03d}"
            dur = rng.uniform(*duration_range)
            clip = synthesize_utterance(spec, dur, rng)
            path = wav_dir / f"{utt_id}.wav"
            write_wav(path, clip)
            if spec.speaker_id in trial_speakers:
                split = SPLIT_ENROL if u % 2 == 0 else SPLIT_TEST
            else:
                split = SPLIT_TRAIN
            entries.append(ManifestEntry(utt_id, spec.speaker_id, split,
                                         str(Path("wav") / f"{utt_id}.wav")))

    write_manifest(out_dir / "manifest.csv", entries)
    trials = build_trials(entries, rng)
    if trials:
        write_trials(out_dir / "trials.csv", trials)
    return entries, trials


def build_trials(entries, rng):
    """All same-speaker enrol x test pairs plus an equal sample of different pairs."""
    enrol = [e for e in entries if e.split == SPLIT_ENROL]
    test = [e for e in entries if e.split == SPLIT_TEST]
    same = [Trial(a.utterance_id, b.utterance_id, 1)
            for a in enrol for b in test if a.speaker_id == b.speaker_id]
    diff_pool = [(a, b) for a in enrol for b in test if a.speaker_id != b.speaker_id]
    if not same or not diff_pool:
        return []
    k = min(len(same), len(diff_pool))
    idx = rng.choice(len(diff_pool), size=k, replace=False)
    diff = [Trial(diff_pool[i][0].utterance_id, diff_pool[i][1].utterance_id, 0)
            for i in sorted(idx)]
    return same + diff


# -- manifest / trial-list files ----------------------------------------------


def write_manifest(path, entries):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["utterance_id", "speaker_id", "split", "path"])
        for e in entries:
            w.writerow([e.utterance_id, e.speaker_id, e.split, e.path])


def load_manifest(path):
    entries = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            entries.append(ManifestEntry(row["utterance_id"], int(row["speaker_id"]),
                                         row["split"], row["path"]))
    return entries


def write_trials(path, trials):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["enrol_utt", "test_utt", "label"])
        for t in trials:
            w.writerow([t.enrol_utt, t.test_utt, t.label])


def load_trials(path):
    trials = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            trials.append(Trial(row["enrol_utt"], row["test_utt"], int(row["label"])))
    return trials
