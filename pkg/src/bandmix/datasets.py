"""Stem-dataset ingestion and the deterministic synthetic fixture.

A dataset is a directory of song folders, each holding one WAV per stem
under canonical names (vocals.wav, drums.wav, bass.wav, other.wav) and an
optional mixture.wav. When the mixture is absent it is defined as the
sample-wise stem sum, accumulated in canonical track order.
"""

from __future__ import annotations

import functools
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from .audio import AudioSegment, read_wav, write_wav
from .dsp import TRACKS

STEM_FILES = {track: f"{track}.wav" for track in TRACKS}
MIXTURE_FILE = "mixture.wav"


def stem_sum(stems: Dict[str, AudioSegment]) -> AudioSegment:
    """Sample-wise sum of the four stems, accumulated in canonical order."""
    samples = functools.reduce(
        np.add, (stems[track].samples for track in TRACKS)
    )
    return AudioSegment(samples, stems[TRACKS[0]].sample_rate)


@dataclass
class SongStems:
    """One song: four reference stems plus the mixture to be separated."""

    song_id: str
    stems: Dict[str, AudioSegment]
    mixture: AudioSegment

    def __post_init__(self):
        missing = [t for t in TRACKS if t not in self.stems]
        if missing:
            raise ValueError(f"song {self.song_id!r} is missing stems: {missing}")
        ref = self.stems[TRACKS[0]]
        for track in TRACKS:
            seg = self.stems[track]
            if seg.sample_rate != ref.sample_rate:
                raise ValueError(
                    f"song {self.song_id!r}: stem {track!r} rate {seg.sample_rate} "
                    f"!= {ref.sample_rate}"
                )
            if seg.samples.shape != ref.samples.shape:
                raise ValueError(
                    f"song {self.song_id!r}: stem {track!r} shape {seg.samples.shape} "
                    f"!= {ref.samples.shape}"
                )
        if self.mixture.sample_rate != ref.sample_rate:
            raise ValueError(f"song {self.song_id!r}: mixture rate mismatch")
        if self.mixture.samples.shape != ref.samples.shape:
            raise ValueError(f"song {self.song_id!r}: mixture shape mismatch")

    @property
    def sample_rate(self) -> int:
        return self.mixture.sample_rate

    @property
    def n_samples(self) -> int:
        return self.mixture.n_samples


@dataclass
class StemDataset:
    """Validated songs plus per-song diagnostics for the ones rejected."""

    songs: List[SongStems]
    skipped: List[Tuple[str, str]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.songs)

    def __iter__(self):
        return iter(self.songs)

    def __getitem__(self, i) -> SongStems:
        return self.songs[i]

    @property
    def sample_rate(self) -> int:
        if not self.songs:
            raise ValueError("empty dataset has no sample rate")
        return self.songs[0].sample_rate


def load_stem_dataset(root) -> StemDataset:
    """Load every song folder under root, skipping inconsistent ones.

    Songs are returned in lexicographic order by folder name. A skipped
    song is recorded as (song_id, reason) and does not block the others.
    An empty root yields an empty dataset with a warning, not an error.
    """
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root is not a directory: {root}")
    songs: List[SongStems] = []
    skipped: List[Tuple[str, str]] = []
    folders = sorted(p for p in root.iterdir() if p.is_dir())
    for folder in folders:
        song_id = folder.name
        try:
            stems = {}
            for track, fname in STEM_FILES.items():
                path = folder / fname
                if not path.exists():
                    raise ValueError(f"missing stem file {fname}")
                stems[track] = read_wav(path)
            mix_path = folder / MIXTURE_FILE
            mixture = read_wav(mix_path) if mix_path.exists() else stem_sum(stems)
            songs.append(SongStems(song_id, stems, mixture))
        except (ValueError, OSError) as exc:
            skipped.append((song_id, str(exc)))
    if not folders:
        warnings.warn(f"dataset root {root} contains no song folders")
    return StemDataset(songs, skipped)


def write_stem_dataset(dataset: StemDataset, root, write_mixture: bool = True) -> None:
    """Write a dataset to disk in the canonical folder layout (float32 WAV)."""
    root = Path(root)
    for song in dataset.songs:
        folder = root / song.song_id
        folder.mkdir(parents=True, exist_ok=True)
        for track, fname in STEM_FILES.items():
            write_wav(folder / fname, song.stems[track])
        if write_mixture:
            write_wav(folder / MIXTURE_FILE, song.mixture)


def _normalize_peak(x: np.ndarray, peak: float) -> np.ndarray:
    top = np.abs(x).max()
    if top == 0:
        return x
    return x * (peak / top)


def _bass_stem(rng, n_ch, length, sr) -> np.ndarray:
    """A few detuned low sines with a slow amplitude envelope."""
    t = np.arange(length) / sr
    nyq = sr / 2
    out = np.zeros((n_ch, length))
    for _ in range(3):
        freq = rng.uniform(0.01, 0.045) * nyq
        env_rate = rng.uniform(0.2, 0.7)
        for ch in range(n_ch):
            detune = 1.0 + 0.002 * rng.standard_normal()
            phase = rng.uniform(0, 2 * np.pi)
            env = 0.6 + 0.4 * np.sin(2 * np.pi * env_rate * t + rng.uniform(0, 2 * np.pi))
            out[ch] += env * np.sin(2 * np.pi * freq * detune * t + phase)
    return out


def _drum_stem(rng, n_ch, length, sr) -> np.ndarray:
    """Broadband noise bursts with exponential decay on a loose grid."""
    out = np.zeros((n_ch, length))
    period = max(int(0.25 * sr), 1)
    decay = max(int(0.05 * sr), 1)
    kernel = np.exp(-np.arange(decay) / (0.2 * decay))
    for start in range(0, length, period):
        jitter = int(rng.integers(0, max(period // 4, 1)))
        pos = min(start + jitter, length - 1)
        span = min(decay, length - pos)
        burst = rng.standard_normal((n_ch, span)) * kernel[:span]
        out[:, pos : pos + span] += burst
    return out


def _vocal_stem(rng, n_ch, length, sr) -> np.ndarray:
    """Harmonic stack with vibrato; per-channel phase offsets."""
    t = np.arange(length) / sr
    nyq = sr / 2
    f0 = rng.uniform(0.05, 0.12) * nyq
    vibrato = 1.0 + 0.01 * np.sin(2 * np.pi * 5.0 * t + rng.uniform(0, 2 * np.pi))
    inst_phase = 2 * np.pi * f0 * np.cumsum(vibrato) / sr
    out = np.zeros((n_ch, length))
    n_harmonics = 4
    for h in range(1, n_harmonics + 1):
        if h * f0 >= nyq:
            break
        for ch in range(n_ch):
            phase = rng.uniform(0, 2 * np.pi)
            out[ch] += np.sin(h * inst_phase + phase) / h
    return out


def _other_stem(rng, n_ch, length, sr) -> np.ndarray:
    """Mid-band tones with slow tremolo."""
    t = np.arange(length) / sr
    nyq = sr / 2
    out = np.zeros((n_ch, length))
    for _ in range(2):
        freq = rng.uniform(0.15, 0.3) * nyq
        trem_rate = rng.uniform(1.0, 3.0)
        for ch in range(n_ch):
            phase = rng.uniform(0, 2 * np.pi)
            trem = 0.7 + 0.3 * np.sin(2 * np.pi * trem_rate * t + rng.uniform(0, 2 * np.pi))
            out[ch] += trem * np.sin(2 * np.pi * freq * t + phase)
    return out


_STEM_GENERATORS = {
    "vocals": _vocal_stem,
    "drums": _drum_stem,
    "bass": _bass_stem,
    "other": _other_stem,
}


def make_synthetic_fixture(
    seed: int,
    n_songs: int,
    duration_s: float,
    sample_rate: int,
    n_channels: int = 2,
    crosstalk: float = 0.0,
) -> StemDataset:
    """Deterministic per-seed dataset with spectrally distinct stems.

    The mixture is the canonical stem sum; with crosstalk a > 0 the stereo
    mixture is then cross-mixed as left' = left + a*right,
    right' = right + a*left (stems stay clean references).
    """
    if duration_s < 1.0:
        raise ValueError(f"duration_s must be >= 1, got {duration_s}")
    if n_songs < 1:
        raise ValueError(f"n_songs must be >= 1, got {n_songs}")
    rng = np.random.default_rng(seed)
    length = int(round(duration_s * sample_rate))
    songs = []
    for i in range(n_songs):
        stems = {}
        for track in TRACKS:
            raw = _STEM_GENERATORS[track](rng, n_channels, length, sample_rate)
            stems[track] = AudioSegment(
                _normalize_peak(raw, 0.18).astype(np.float32), sample_rate
            )
        mixture = stem_sum(stems)
        if crosstalk != 0.0:
            if n_channels != 2:
                raise ValueError("cross-talk mixing requires stereo")
            mix = mixture.samples
            a = np.float32(crosstalk)
            crossed = np.stack([mix[0] + a * mix[1], mix[1] + a * mix[0]])
            mixture = AudioSegment(crossed, sample_rate)
        songs.append(SongStems(f"song{i:03d}", stems, mixture))
    return StemDataset(songs)
