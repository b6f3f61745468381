"""Corpus manifests, audio I/O and corpus statistics"""

import json
import logging
import math
import os
from dataclasses import dataclass, field
from os.path import abspath, dirname, exists, isabs, join, relpath
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import soundfile as sf

from . import get_rng

logger = logging.getLogger(__name__)

CANONICAL_RATE = 16000
DURATION_TOLERANCE_S = 0.01


class CorpusError(Exception):
    pass


@dataclass(frozen=True, eq=False)
class AudioSignal:
    """Sampled mono waveform. Samples are held as a float64 numpy array.

    Args:
        samples (np.ndarray): Amplitude values, nominally in [-1, 1]
        sample_rate (int): Sampling rate in Hz
    """

    samples: np.ndarray
    sample_rate: int = CANONICAL_RATE

    def __post_init__(self) -> None:
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise CorpusError(
                f"Audio must be mono, got array of shape {samples.shape}!"
            )
        if int(self.sample_rate) <= 0:
            raise CorpusError(f"Invalid sample rate {self.sample_rate}!")
        if not np.all(np.isfinite(samples)):
            raise CorpusError("Audio contains NaN or infinite samples!")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, AudioSignal):
            return NotImplemented
        return self.sample_rate == other.sample_rate and np.array_equal(
            self.samples, other.samples
        )


def read_wav(path: str, sample_rate: int = CANONICAL_RATE) -> AudioSignal:
    """
    Read a 16 bit PCM mono WAV file. Files at any other rate are rejected
    rather than resampled.

    Args:
        path (str): Path to WAV file
        sample_rate (int): Required sample rate. Defaults to 16000.

    Returns:
        AudioSignal: Audio with samples scaled to [-1, 1)
    """
    try:
        data, rate = sf.read(path, dtype="int16", always_2d=True)
    except RuntimeError as ex:
        raise CorpusError(f"Cannot read audio {path}: {ex}") from ex
    if data.shape[1] != 1:
        raise CorpusError(f"Audio {path} has {data.shape[1]} channels!")
    if rate != sample_rate:
        raise CorpusError(
            f"Audio {path} has rate {rate} Hz but {sample_rate} Hz is required!"
        )
    return AudioSignal(data[:, 0].astype(np.float64) / 32768.0, rate)


def write_wav(path: str, signal: AudioSignal) -> None:
    """
    Write audio as 16 bit PCM mono WAV. Reading the file back with read_wav
    and writing it again reproduces the same bytes.

    Args:
        path (str): Path to WAV file
        signal (AudioSignal): Audio to write

    Returns:
        None
    """
    pcm = np.clip(np.round(signal.samples * 32768.0), -32768, 32767).astype(
        np.int16
    )
    folder = dirname(path)
    if folder:
        os.makedirs(folder, exist_ok=True)
    sf.write(path, pcm, signal.sample_rate, subtype="PCM_16", format="WAV")


def read_labels(path: str) -> List[str]:
    """
    Read a frame label track of newline-delimited frame:phone pairs

    Args:
        path (str): Path to label file

    Returns:
        List[str]: Phone label per frame
    """
    labels = []
    with open(path, encoding="utf-8") as fp:
        for line_no, line in enumerate(fp, start=1):
            line = line.strip()
            if not line:
                continue
            frame, _, phone = line.partition(":")
            if not phone or not frame.isdigit() or int(frame) != len(labels):
                raise CorpusError(
                    f"Malformed label on line {line_no} of {path}!"
                )
            labels.append(phone)
    return labels


def write_labels(path: str, labels: Sequence[str]) -> None:
    """
    Write a frame label track

    Args:
        path (str): Path to label file
        labels (Sequence[str]): Phone label per frame

    Returns:
        None
    """
    folder = dirname(path)
    if folder:
        os.makedirs(folder, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fp:
        for frame, phone in enumerate(labels):
            fp.write(f"{frame}:{phone}\n")


@dataclass(frozen=True)
class Utterance:
    """One transcribed segment.

    Args:
        id (str): Identifier, unique within a manifest
        audio (str): Path to the WAV file
        transcript (Tuple[str, ...]): Word tokens
        speaker_id (str): Speaker
        language (str): Language tag
        duration_s (float): Duration in seconds
        labels (Optional[str]): Path to frame label track. Defaults to None.
        meta (Dict): Extra information such as augmentation provenance. Defaults to {}.
    """

    id: str
    audio: str
    transcript: Tuple[str, ...]
    speaker_id: str
    language: str
    duration_s: float
    labels: Optional[str] = None
    meta: Dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.id:
            raise CorpusError("Utterance id is empty!")
        if not self.duration_s > 0:
            raise CorpusError(
                f"Utterance {self.id} has non-positive duration {self.duration_s}!"
            )
        object.__setattr__(self, "transcript", tuple(self.transcript))

    def load_audio(self) -> AudioSignal:
        return read_wav(self.audio)

    def load_labels(self) -> List[str]:
        if self.labels is None:
            raise CorpusError(f"Utterance {self.id} has no frame labels!")
        return read_labels(self.labels)

    def to_record(self, base_dir: str) -> Dict:
        """
        Convert to a manifest record with paths relative to base_dir

        Args:
            base_dir (str): Directory of the manifest file

        Returns:
            Dict: Manifest record
        """
        record = {
            "id": self.id,
            "audio": relpath(self.audio, base_dir).replace(os.sep, "/"),
            "duration": self.duration_s,
            "speaker": self.speaker_id,
            "language": self.language,
            "transcript": " ".join(self.transcript),
        }
        if self.labels is not None:
            record["labels"] = relpath(self.labels, base_dir).replace(
                os.sep, "/"
            )
        if self.meta:
            record["meta"] = self.meta
        return record

    @classmethod
    def from_record(cls, record: Dict, base_dir: str) -> "Utterance":
        """
        Create from a manifest record resolving relative paths against base_dir

        Args:
            record (Dict): Manifest record
            base_dir (str): Directory of the manifest file

        Returns:
            Utterance: Utterance
        """

        def resolve(path: str) -> str:
            if isabs(path):
                return path
            return abspath(join(base_dir, path))

        labels = record.get("labels")
        return cls(
            id=str(record["id"]),
            audio=resolve(record["audio"]),
            transcript=tuple(str(record["transcript"]).split()),
            speaker_id=str(record["speaker"]),
            language=str(record["language"]),
            duration_s=float(record["duration"]),
            labels=resolve(labels) if labels else None,
            meta=record.get("meta", {}),
        )


class Manifest:
    """Ordered, immutable collection of utterances with distinct ids.

    Args:
        entries (Sequence[Utterance]): Utterances
        name (str): Manifest name
    """

    def __init__(self, entries: Sequence[Utterance], name: str) -> None:
        self.entries: Tuple[Utterance, ...] = tuple(entries)
        self.name = name
        self._by_id: Dict[str, Utterance] = {}
        for entry in self.entries:
            if entry.id in self._by_id:
                raise CorpusError(
                    f"Duplicate utterance id {entry.id} in manifest {name}!"
                )
            self._by_id[entry.id] = entry

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[Utterance]:
        return iter(self.entries)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Manifest):
            return NotImplemented
        return self.name == other.name and self.entries == other.entries

    def get(self, utterance_id: str) -> Utterance:
        return self._by_id[utterance_id]

    @property
    def ids(self) -> List[str]:
        return [entry.id for entry in self.entries]

    def speakers(self) -> List[str]:
        """
        Get the sorted list of distinct speakers

        Returns:
            List[str]: Speaker ids
        """
        return sorted({entry.speaker_id for entry in self.entries})


def load_manifest(
    path: str, name: Optional[str] = None, check_audio: bool = False
) -> Manifest:
    """
    Load a manifest of newline-delimited JSON records with fields id, audio,
    duration, speaker, language and transcript (plus optional labels and
    meta). Relative paths are resolved against the manifest's directory.

    Args:
        path (str): Path to manifest file
        name (Optional[str]): Manifest name. Defaults to None (file name without extension).
        check_audio (bool): Validate stored durations against the audio. Defaults to False.

    Returns:
        Manifest: Manifest
    """
    if not exists(path):
        raise CorpusError(f"Manifest {path} not found!")
    if name is None:
        name = os.path.splitext(os.path.basename(path))[0]
    base_dir = dirname(abspath(path))
    entries = []
    with open(path, encoding="utf-8") as fp:
        for line_no, line in enumerate(fp, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                entry = Utterance.from_record(record, base_dir)
            except (ValueError, KeyError, TypeError, CorpusError) as ex:
                raise CorpusError(
                    f"Malformed record on line {line_no} of {path}: {ex}"
                ) from ex
            entries.append(entry)
    if not entries:
        raise CorpusError(f"Cannot load empty manifest {path}!")
    manifest = Manifest(entries, name)
    if check_audio:
        for entry in manifest:
            info = sf.info(entry.audio)
            actual = info.frames / info.samplerate
            if abs(actual - entry.duration_s) > DURATION_TOLERANCE_S:
                raise CorpusError(
                    f"Utterance {entry.id} stores duration {entry.duration_s} s but audio lasts {actual} s!"
                )
    logger.debug(f"Loaded {len(manifest)} utterances from {path}")
    return manifest


def save_manifest(manifest: Manifest, path: str) -> None:
    """
    Save a manifest as newline-delimited JSON records

    Args:
        manifest (Manifest): Manifest to save
        path (str): Path to manifest file

    Returns:
        None
    """
    base_dir = dirname(abspath(path))
    os.makedirs(base_dir, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fp:
        for entry in manifest:
            fp.write(json.dumps(entry.to_record(base_dir), sort_keys=True))
            fp.write("\n")


@dataclass(frozen=True)
class CorpusStats:
    """Descriptive statistics of a corpus in the layout of an evaluation-set
    statistics table."""

    total_length_min: float
    avg_segment_length_s: float
    avg_words_per_segment: float
    avg_words_per_second: float


def compute_stats(manifest: Manifest) -> CorpusStats:
    """
    Compute corpus statistics. Averages are arithmetic means over segments
    except words per second which is total words over total duration.

    Args:
        manifest (Manifest): Manifest

    Returns:
        CorpusStats: Statistics
    """
    if len(manifest) == 0:
        raise CorpusError("Cannot compute statistics of empty manifest!")
    total_seconds = math.fsum(entry.duration_s for entry in manifest)
    total_words = sum(len(entry.transcript) for entry in manifest)
    segments = len(manifest)
    return CorpusStats(
        total_length_min=total_seconds / 60.0,
        avg_segment_length_s=total_seconds / segments,
        avg_words_per_segment=total_words / segments,
        avg_words_per_second=total_words / total_seconds,
    )


def format_stats_row(name: str, stats: CorpusStats) -> str:
    """
    Format statistics as a table row e.g. "Oral History | 211 | 5.3 s | 11.6 | 2.2"

    Args:
        name (str): Corpus name
        stats (CorpusStats): Statistics

    Returns:
        str: Table row
    """
    return (
        f"{name} | {stats.total_length_min:.0f} | "
        f"{stats.avg_segment_length_s:.1f} s | "
        f"{stats.avg_words_per_segment:.1f} | "
        f"{stats.avg_words_per_second:.1f}"
    )


def split_speaker_disjoint(
    manifest: Manifest, test_fraction: float, seed: int
) -> Tuple[Manifest, Manifest]:
    """
    Split a manifest so that no speaker appears on both sides. The fraction
    applies to speakers, not utterances. Entry order is preserved.

    Args:
        manifest (Manifest): Manifest to split
        test_fraction (float): Fraction of speakers for the test side
        seed (int): Random seed

    Returns:
        Tuple[Manifest, Manifest]: Train and test manifests
    """
    if not 0 < test_fraction < 1:
        raise CorpusError(
            f"Test fraction {test_fraction} must lie strictly between 0 and 1!"
        )
    speakers = manifest.speakers()
    if len(speakers) < 2:
        raise CorpusError(
            f"Manifest {manifest.name} needs at least 2 speakers to split!"
        )
    rng = get_rng(seed, "split", manifest.name)
    order = rng.permutation(len(speakers))
    no_test = min(
        len(speakers) - 1, max(1, int(round(test_fraction * len(speakers))))
    )
    test_speakers = {speakers[i] for i in order[:no_test]}
    train = [e for e in manifest if e.speaker_id not in test_speakers]
    test = [e for e in manifest if e.speaker_id in test_speakers]
    logger.info(
        f"Split {manifest.name}: {len(train)} train / {len(test)} test utterances, {no_test} test speakers"
    )
    return (
        Manifest(train, f"{manifest.name}_train"),
        Manifest(test, f"{manifest.name}_test"),
    )
