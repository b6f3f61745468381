"""MFCC front-end, frame splicing and the speaker embedding extractor"""

import hashlib
import logging
import struct
from dataclasses import asdict, dataclass, fields
from typing import Dict, Optional, Sequence

import numpy as np
from scipy import fft

from . import config_hash, get_rng
from .corpus import AudioSignal, Manifest, Utterance

logger = logging.getLogger(__name__)

_FEATURES_MAGIC = b"XLFM"
_FEATURES_VERSION = 1
_FEATURES_HEADER = struct.Struct("<4sHIIf")
_EXTRACTOR_MAGIC = b"XLSE"
_EXTRACTOR_VERSION = 1
_EXTRACTOR_HEADER = struct.Struct("<4sHII16s")


class FeatureError(Exception):
    pass


@dataclass(frozen=True)
class FeatureConfig:
    """Front-end configuration. Defaults are desk scale; full_scale() gives
    five spliced 40-dimensional MFCC frames plus a 100-dimensional embedding.
    """

    sample_rate: int = 16000
    mfcc_dim: int = 20
    frame_length_ms: float = 25.0
    frame_shift_ms: float = 10.0
    mel_filters: int = 40
    low_freq: float = 20.0
    pre_emphasis: float = 0.97
    splice_width: int = 5
    log_floor: float = 1e-10
    embedding_dim: int = 16

    def __post_init__(self) -> None:
        if self.mfcc_dim > self.mel_filters:
            raise FeatureError(
                f"MFCC dimension {self.mfcc_dim} exceeds {self.mel_filters} mel filters!"
            )
        if self.splice_width < 1 or self.splice_width % 2 == 0:
            raise FeatureError(
                f"Splice width {self.splice_width} must be odd and positive!"
            )
        if self.window < 1 or self.shift < 1:
            raise FeatureError("Frame length and shift must be positive!")

    @classmethod
    def full_scale(cls) -> "FeatureConfig":
        return cls(mfcc_dim=40, mel_filters=40, splice_width=5, embedding_dim=100)

    @classmethod
    def from_dict(cls, data: Optional[Dict]) -> "FeatureConfig":
        if not data:
            return cls()
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise FeatureError(f"Unknown feature settings {sorted(unknown)}!")
        return cls(**data)

    def to_dict(self) -> Dict:
        return asdict(self)

    @property
    def window(self) -> int:
        return int(round(self.sample_rate * self.frame_length_ms / 1000.0))

    @property
    def shift(self) -> int:
        return int(round(self.sample_rate * self.frame_shift_ms / 1000.0))

    @property
    def n_fft(self) -> int:
        return 1 << int(np.ceil(np.log2(self.window)))

    @property
    def stat_dim(self) -> int:
        return 2 * self.mfcc_dim

    @property
    def input_dim(self) -> int:
        return self.splice_width * self.mfcc_dim + self.embedding_dim


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """Frames x dims grid of features

    Args:
        data (np.ndarray): Feature values
        frame_shift_ms (float): Frame shift in ms. Defaults to 10.
    """

    data: np.ndarray
    frame_shift_ms: float = 10.0

    def __post_init__(self) -> None:
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise FeatureError(f"Features must be 2-D, got shape {data.shape}!")
        if not np.all(np.isfinite(data)):
            raise FeatureError("Features contain NaN or infinite values!")
        object.__setattr__(self, "data", data)

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def dims(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True, eq=False)
class SpeakerEmbedding:
    """Embedding of one utterance with the fingerprint of its extractor"""

    values: np.ndarray
    fingerprint: str


def frame_count(length: int, window: int, shift: int) -> int:
    """
    Number of complete frames in a signal

    Args:
        length (int): Signal length in samples
        window (int): Frame length in samples
        shift (int): Frame shift in samples

    Returns:
        int: floor((length - window) / shift) + 1, or 0 if shorter than a frame
    """
    if length < window:
        return 0
    return (length - window) // shift + 1


def mel_filterbank(cfg: FeatureConfig) -> np.ndarray:
    """
    Triangular filters equally spaced on the mel scale between cfg.low_freq
    and the Nyquist frequency

    Args:
        cfg (FeatureConfig): Feature configuration

    Returns:
        np.ndarray: Matrix of shape (mel_filters, n_fft // 2 + 1)
    """

    def mel(freq):
        return 1127.0 * np.log1p(np.asarray(freq) / 700.0)

    n_bins = cfg.n_fft // 2 + 1
    bin_mels = mel(np.arange(n_bins) * cfg.sample_rate / cfg.n_fft)
    edges = np.linspace(
        mel(cfg.low_freq), mel(cfg.sample_rate / 2.0), cfg.mel_filters + 2
    )
    bank = np.zeros((cfg.mel_filters, n_bins))
    for i in range(cfg.mel_filters):
        left, centre, right = edges[i : i + 3]
        rising = (bin_mels - left) / (centre - left)
        falling = (right - bin_mels) / (right - centre)
        bank[i] = np.maximum(0.0, np.minimum(rising, falling))
    return bank


def compute_mfcc(x: AudioSignal, cfg: FeatureConfig) -> FeatureMatrix:
    """
    MFCC features. Per frame: pre-emphasis, Hamming window, magnitude
    spectrum, mel filterbank, log with floor, DCT-II keeping the first
    mfcc_dim coefficients.

    Args:
        x (AudioSignal): Signal
        cfg (FeatureConfig): Feature configuration

    Returns:
        FeatureMatrix: Features of shape (frames, mfcc_dim)
    """
    if x.sample_rate != cfg.sample_rate:
        raise FeatureError(
            f"Signal rate {x.sample_rate} differs from configured {cfg.sample_rate}!"
        )
    no_frames = frame_count(len(x), cfg.window, cfg.shift)
    if no_frames == 0:
        raise FeatureError(
            f"Signal of {len(x)} samples is shorter than one frame ({cfg.window})!"
        )
    frames = np.lib.stride_tricks.sliding_window_view(x.samples, cfg.window)[
        :: cfg.shift
    ][:no_frames]
    emphasised = np.empty_like(frames)
    emphasised[:, 1:] = frames[:, 1:] - cfg.pre_emphasis * frames[:, :-1]
    emphasised[:, 0] = frames[:, 0] * (1.0 - cfg.pre_emphasis)
    windowed = emphasised * np.hamming(cfg.window)
    magnitude = np.abs(fft.rfft(windowed, cfg.n_fft, axis=1))
    energies = magnitude @ mel_filterbank(cfg).T
    log_energies = np.log(np.maximum(energies, cfg.log_floor))
    cepstra = fft.dct(log_energies, type=2, norm="ortho", axis=1)
    return FeatureMatrix(cepstra[:, : cfg.mfcc_dim], cfg.frame_shift_ms)


def utterance_stats(features: FeatureMatrix) -> np.ndarray:
    """
    Utterance statistics: mean and standard deviation of the feature rows
    concatenated

    Args:
        features (FeatureMatrix): Features

    Returns:
        np.ndarray: Vector of length 2 x dims
    """
    return np.concatenate([features.data.mean(axis=0), features.data.std(axis=0)])


class SpeakerEmbeddingExtractor:
    """Utterance embedding extractor: statistics are whitened per dimension
    and projected onto their principal directions. Each trained extractor
    spans its own coordinate system, identified by its fingerprint.

    Args:
        mean (np.ndarray): Mean of the training statistics
        scale (np.ndarray): Standard deviation of the training statistics
        projection (np.ndarray): Orthonormal rows of shape (embedding_dim, stat_dim)
        fingerprint (str): Identifier of the training data and configuration
    """

    def __init__(
        self,
        mean: np.ndarray,
        scale: np.ndarray,
        projection: np.ndarray,
        fingerprint: str,
    ) -> None:
        self.mean = np.asarray(mean, dtype=np.float64)
        self.scale = np.asarray(scale, dtype=np.float64)
        self.projection = np.asarray(projection, dtype=np.float64)
        self.fingerprint = fingerprint
        if self.projection.ndim != 2 or self.projection.shape[1] != len(
            self.mean
        ):
            raise FeatureError(
                f"Projection shape {self.projection.shape} does not match statistics dimension {len(self.mean)}!"
            )
        if self.embedding_dim > self.stat_dim:
            raise FeatureError(
                f"Embedding dimension {self.embedding_dim} exceeds statistics dimension {self.stat_dim}!"
            )
        gram = self.projection @ self.projection.T
        if not np.allclose(gram, np.eye(self.embedding_dim), atol=1e-6):
            raise FeatureError("Projection rows are not orthonormal!")

    @property
    def stat_dim(self) -> int:
        return len(self.mean)

    @property
    def embedding_dim(self) -> int:
        return self.projection.shape[0]

    def whiten(self, stats: np.ndarray) -> np.ndarray:
        return (np.asarray(stats, dtype=np.float64) - self.mean) / self.scale

    def embed(self, stats: np.ndarray) -> SpeakerEmbedding:
        """
        Embed a statistics vector

        Args:
            stats (np.ndarray): Utterance statistics

        Returns:
            SpeakerEmbedding: Embedding carrying this extractor's fingerprint
        """
        if len(stats) != self.stat_dim:
            raise FeatureError(
                f"Statistics of dimension {len(stats)} given to extractor of dimension {self.stat_dim}!"
            )
        return SpeakerEmbedding(
            self.projection @ self.whiten(stats), self.fingerprint
        )


def fit_extractor(
    stats: np.ndarray, embedding_dim: int, fingerprint: str
) -> SpeakerEmbeddingExtractor:
    """
    Fit whitening and the top principal directions to a matrix of utterance
    statistics

    Args:
        stats (np.ndarray): Statistics, one row per utterance
        embedding_dim (int): Number of directions to keep
        fingerprint (str): Fingerprint to give the extractor

    Returns:
        SpeakerEmbeddingExtractor: Extractor
    """
    stats = np.asarray(stats, dtype=np.float64)
    if stats.shape[0] < max(embedding_dim, 2):
        raise FeatureError(
            f"Need at least {max(embedding_dim, 2)} utterances to train extractor, got {stats.shape[0]}!"
        )
    if embedding_dim > stats.shape[1]:
        raise FeatureError(
            f"Embedding dimension {embedding_dim} exceeds statistics dimension {stats.shape[1]}!"
        )
    mean = stats.mean(axis=0)
    std = stats.std(axis=0)
    if np.all(std < 1e-12):
        raise FeatureError(
            "Degenerate covariance: training statistics have zero variance!"
        )
    scale = np.where(std < 1e-12, 1.0, std)
    whitened = (stats - mean) / scale
    covariance = whitened.T @ whitened / stats.shape[0]
    eigenvalues, eigenvectors = np.linalg.eigh(covariance)
    order = np.argsort(eigenvalues, kind="stable")[::-1][:embedding_dim]
    projection = eigenvectors[:, order].T.copy()
    for row in projection:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    logger.debug(
        f"Extractor {fingerprint} keeps {embedding_dim} directions explaining {eigenvalues[order].sum() / eigenvalues.sum():.1%} of variance"
    )
    return SpeakerEmbeddingExtractor(mean, scale, projection, fingerprint)


def train_embedding_extractor(
    corpus: Manifest,
    cfg: FeatureConfig,
    embedding_dim: Optional[int] = None,
    seed: int = 0,
    max_utterances: Optional[int] = None,
) -> SpeakerEmbeddingExtractor:
    """
    Train an embedding extractor on a corpus. If max_utterances is given, a
    seeded subset of that size is used.

    Args:
        corpus (Manifest): Training corpus
        cfg (FeatureConfig): Feature configuration
        embedding_dim (Optional[int]): Embedding dimension. Defaults to None (cfg.embedding_dim).
        seed (int): Random seed. Defaults to 0.
        max_utterances (Optional[int]): Maximum number of utterances to use. Defaults to None (all).

    Returns:
        SpeakerEmbeddingExtractor: Trained extractor
    """
    if embedding_dim is None:
        embedding_dim = cfg.embedding_dim
    entries: Sequence[Utterance] = corpus.entries
    if len(entries) < max(embedding_dim, 2):
        raise FeatureError(
            f"Too few utterances ({len(entries)}) to train a {embedding_dim}-dimensional extractor!"
        )
    if max_utterances is not None and len(entries) > max_utterances:
        chosen = np.sort(
            get_rng(seed, "extractor", corpus.name).choice(
                len(entries), size=max_utterances, replace=False
            )
        )
        entries = [entries[i] for i in chosen]
    audio_digest = hashlib.sha256()
    rows = []
    for entry in entries:
        audio = entry.load_audio()
        audio_digest.update(np.ascontiguousarray(audio.samples).tobytes())
        rows.append(utterance_stats(compute_mfcc(audio, cfg)))
    stats = np.stack(rows)
    fingerprint = config_hash(
        {
            "ids": [entry.id for entry in entries],
            "audio": audio_digest.hexdigest(),
            "cfg": cfg.to_dict(),
            "embedding_dim": embedding_dim,
            "seed": seed,
        }
    )
    logger.info(
        f"Training {embedding_dim}-dimensional extractor {fingerprint} on {len(entries)} utterances of {corpus.name}"
    )
    return fit_extractor(stats, embedding_dim, fingerprint)


def extract_embedding(
    utterance: Utterance,
    extractor: SpeakerEmbeddingExtractor,
    cfg: FeatureConfig,
) -> SpeakerEmbedding:
    """
    Extract the embedding of an utterance

    Args:
        utterance (Utterance): Utterance
        extractor (SpeakerEmbeddingExtractor): Extractor
        cfg (FeatureConfig): Feature configuration

    Returns:
        SpeakerEmbedding: Embedding
    """
    features = compute_mfcc(utterance.load_audio(), cfg)
    return extractor.embed(utterance_stats(features))


def assemble_input(
    features: FeatureMatrix,
    embedding: SpeakerEmbedding,
    cfg: FeatureConfig,
    expected_fingerprint: Optional[str] = None,
    override_fingerprint: bool = False,
) -> FeatureMatrix:
    """
    Network input: for each frame t the frames t-k..t+k (edge frames
    replicated) followed by the utterance embedding.

    Args:
        features (FeatureMatrix): MFCC features
        embedding (SpeakerEmbedding): Utterance embedding
        cfg (FeatureConfig): Feature configuration
        expected_fingerprint (Optional[str]): Fingerprint the embedding must carry. Defaults to None (no check).
        override_fingerprint (bool): Allow a mismatching fingerprint. Defaults to False.

    Returns:
        FeatureMatrix: Input of shape (frames, splice_width x mfcc_dim + embedding_dim)
    """
    if features.dims != cfg.mfcc_dim:
        raise FeatureError(
            f"Feature dimension {features.dims} differs from configured {cfg.mfcc_dim}!"
        )
    values = np.asarray(embedding.values, dtype=np.float64)
    if len(values) != cfg.embedding_dim:
        raise FeatureError(
            f"Embedding dimension {len(values)} differs from configured {cfg.embedding_dim}!"
        )
    if (
        expected_fingerprint is not None
        and embedding.fingerprint != expected_fingerprint
    ):
        if not override_fingerprint:
            raise FeatureError(
                f"Embedding from extractor {embedding.fingerprint} used where extractor {expected_fingerprint} is expected!"
            )
        logger.debug(
            f"Fingerprint check overridden: {embedding.fingerprint} for {expected_fingerprint}"
        )
    half = cfg.splice_width // 2
    frames = features.frames
    index = np.clip(
        np.arange(frames)[:, None] + np.arange(-half, half + 1)[None, :],
        0,
        frames - 1,
    )
    spliced = features.data[index].reshape(frames, -1)
    tiled = np.broadcast_to(values, (frames, len(values)))
    return FeatureMatrix(
        np.concatenate([spliced, tiled], axis=1), features.frame_shift_ms
    )


def featurize(
    utterance: Utterance,
    extractor: SpeakerEmbeddingExtractor,
    cfg: FeatureConfig,
    expected_fingerprint: Optional[str] = None,
    override_fingerprint: bool = False,
) -> FeatureMatrix:
    """
    Network input of an utterance: MFCCs, embedding and splicing in one go

    Args:
        utterance (Utterance): Utterance
        extractor (SpeakerEmbeddingExtractor): Extractor
        cfg (FeatureConfig): Feature configuration
        expected_fingerprint (Optional[str]): Fingerprint the model expects. Defaults to None.
        override_fingerprint (bool): Allow a mismatching fingerprint. Defaults to False.

    Returns:
        FeatureMatrix: Network input
    """
    features = compute_mfcc(utterance.load_audio(), cfg)
    embedding = extractor.embed(utterance_stats(features))
    return assemble_input(
        features, embedding, cfg, expected_fingerprint, override_fingerprint
    )


def save_features(features: FeatureMatrix, path: str) -> None:
    """
    Save features as a flat little-endian float64 grid behind a header of
    {magic, version, frames, dims, shift}

    Args:
        features (FeatureMatrix): Features
        path (str): Output path

    Returns:
        None
    """
    with open(path, "wb") as fp:
        fp.write(
            _FEATURES_HEADER.pack(
                _FEATURES_MAGIC,
                _FEATURES_VERSION,
                features.frames,
                features.dims,
                features.frame_shift_ms,
            )
        )
        fp.write(features.data.astype("<f8").tobytes())


def load_features(path: str) -> FeatureMatrix:
    """
    Load features saved by save_features

    Args:
        path (str): Input path

    Returns:
        FeatureMatrix: Features
    """
    with open(path, "rb") as fp:
        payload = fp.read()
    if len(payload) < _FEATURES_HEADER.size:
        raise FeatureError(f"Feature file {path} is truncated!")
    magic, version, frames, dims, shift = _FEATURES_HEADER.unpack_from(payload)
    if magic != _FEATURES_MAGIC:
        raise FeatureError(f"{path} is not a feature file!")
    if version != _FEATURES_VERSION:
        raise FeatureError(
            f"Feature file {path} has version {version}, expected {_FEATURES_VERSION}!"
        )
    data = np.frombuffer(payload, dtype="<f8", offset=_FEATURES_HEADER.size)
    if data.size != frames * dims:
        raise FeatureError(f"Feature file {path} is truncated!")
    return FeatureMatrix(data.reshape(frames, dims).copy(), shift)


def save_extractor(extractor: SpeakerEmbeddingExtractor, path: str) -> None:
    """
    Save an extractor behind a header of {magic, version, dims, fingerprint}

    Args:
        extractor (SpeakerEmbeddingExtractor): Extractor
        path (str): Output path

    Returns:
        None
    """
    with open(path, "wb") as fp:
        fp.write(
            _EXTRACTOR_HEADER.pack(
                _EXTRACTOR_MAGIC,
                _EXTRACTOR_VERSION,
                extractor.stat_dim,
                extractor.embedding_dim,
                extractor.fingerprint.encode("ascii"),
            )
        )
        for array in (extractor.mean, extractor.scale, extractor.projection):
            fp.write(array.astype("<f8").tobytes())


def load_extractor(path: str) -> SpeakerEmbeddingExtractor:
    """
    Load an extractor saved by save_extractor

    Args:
        path (str): Input path

    Returns:
        SpeakerEmbeddingExtractor: Extractor
    """
    with open(path, "rb") as fp:
        payload = fp.read()
    if len(payload) < _EXTRACTOR_HEADER.size:
        raise FeatureError(f"Extractor file {path} is truncated!")
    magic, version, stat_dim, embedding_dim, fingerprint = (
        _EXTRACTOR_HEADER.unpack_from(payload)
    )
    if magic != _EXTRACTOR_MAGIC:
        raise FeatureError(f"{path} is not an extractor file!")
    if version != _EXTRACTOR_VERSION:
        raise FeatureError(
            f"Extractor file {path} has version {version}, expected {_EXTRACTOR_VERSION}!"
        )
    values = np.frombuffer(payload, dtype="<f8", offset=_EXTRACTOR_HEADER.size)
    if values.size != stat_dim * (2 + embedding_dim):
        raise FeatureError(f"Extractor file {path} is truncated!")
    return SpeakerEmbeddingExtractor(
        values[:stat_dim].copy(),
        values[stat_dim : 2 * stat_dim].copy(),
        values[2 * stat_dim :].reshape(embedding_dim, stat_dim).copy(),
        fingerprint.rstrip(b"\0").decode("ascii"),
    )
