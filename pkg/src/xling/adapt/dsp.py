"""Signal-level data augmentation: reverberation, noise mixing at a target SNR
and speed perturbation, plus the per-stage corpus expansion recipes."""

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from os.path import join
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import fft

from . import get_rng
from .corpus import (
    CANONICAL_RATE,
    AudioSignal,
    Manifest,
    Utterance,
    read_wav,
    write_labels,
    write_wav,
)
from .features import frame_count
from hdx.utilities.loader import load_json
from hdx.utilities.saver import save_json

logger = logging.getLogger(__name__)

DIRECT_CONVOLUTION_LIMIT = 8192


class DspError(Exception):
    pass


@dataclass(frozen=True, eq=False)
class RoomImpulseResponse:
    """Impulse response of one room measured (here: simulated) at one position

    Args:
        samples (np.ndarray): Filter taps
        sample_rate (int): Sampling rate in Hz
        room_id (str): Room
        position_id (str): Position within the room
    """

    samples: np.ndarray
    sample_rate: int
    room_id: str
    position_id: str

    def __post_init__(self) -> None:
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or len(samples) == 0:
            raise DspError(f"RIR {self.key} is empty!")
        if not np.all(np.isfinite(samples)) or not np.any(samples):
            raise DspError(f"RIR {self.key} has no energy!")
        object.__setattr__(self, "samples", samples)

    @property
    def key(self) -> str:
        return f"{self.room_id}/{self.position_id}"


@dataclass(frozen=True, eq=False)
class NoiseClip:
    """Background noise recording

    Args:
        samples (np.ndarray): Noise samples
        sample_rate (int): Sampling rate in Hz
        label (str): Name of the clip
    """

    samples: np.ndarray
    sample_rate: int
    label: str

    def __post_init__(self) -> None:
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or len(samples) == 0:
            raise DspError(f"Noise clip {self.label} is empty!")
        if not np.all(np.isfinite(samples)):
            raise DspError(f"Noise clip {self.label} is not finite!")
        object.__setattr__(self, "samples", samples)


@dataclass(frozen=True)
class SnrRange:
    low_db: float
    high_db: float

    def __post_init__(self) -> None:
        if self.low_db > self.high_db:
            raise DspError(
                f"SNR range low {self.low_db} dB exceeds high {self.high_db} dB!"
            )

    def draw(self, rng: np.random.Generator) -> float:
        return float(rng.uniform(self.low_db, self.high_db))


@dataclass(frozen=True)
class CopySpec:
    """One augmented copy: reverberation per simulated room and, when an SNR
    range is given, additive noise reverberated in the same room.

    Args:
        reverb (bool): Convolve with a room impulse response. Defaults to True.
        snr (Optional[SnrRange]): Noise SNR range. Defaults to None (no noise).
    """

    reverb: bool = True
    snr: Optional[SnrRange] = None

    @property
    def noise(self) -> bool:
        return self.snr is not None

    def to_dict(self) -> Dict:
        result = {"reverb": self.reverb}
        if self.snr is not None:
            result["snr"] = [self.snr.low_db, self.snr.high_db]
        return result

    @classmethod
    def from_dict(cls, data: Dict) -> "CopySpec":
        snr = data.get("snr")
        if snr is not None:
            snr = SnrRange(float(snr[0]), float(snr[1]))
        return cls(reverb=bool(data.get("reverb", True)), snr=snr)


@dataclass(frozen=True)
class AugmentationRecipe:
    """Corpus expansion recipe for one training stage.

    Args:
        copies (Tuple[CopySpec, ...]): Augmented copies per utterance
        speed_factors (Tuple[float, ...]): Speed perturbation factors besides 1.0
        seed (int): Random seed
        speed_first (bool): Apply speed perturbation before reverb/noise. Defaults to True.
    """

    copies: Tuple[CopySpec, ...] = ()
    speed_factors: Tuple[float, ...] = ()
    seed: int = 0
    speed_first: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "copies", tuple(self.copies))
        object.__setattr__(
            self, "speed_factors", tuple(float(f) for f in self.speed_factors)
        )
        for factor in self.speed_factors:
            if factor <= 0:
                raise DspError(f"Speed factor {factor} must be positive!")

    @property
    def is_identity(self) -> bool:
        return not self.copies and not self.speed_factors

    @property
    def variants(self) -> List[float]:
        variants = [1.0]
        for factor in self.speed_factors:
            if factor not in variants:
                variants.append(factor)
        return variants

    @property
    def expansion(self) -> int:
        return len(self.variants) * (1 + len(self.copies))

    def to_dict(self) -> Dict:
        return {
            "copies": [copy.to_dict() for copy in self.copies],
            "speed_factors": list(self.speed_factors),
            "seed": self.seed,
            "speed_first": self.speed_first,
        }

    @classmethod
    def from_dict(cls, data: Optional[Dict]) -> "AugmentationRecipe":
        if not data:
            return cls()
        return cls(
            copies=tuple(
                CopySpec.from_dict(copy) for copy in data.get("copies", [])
            ),
            speed_factors=tuple(data.get("speed_factors", [])),
            seed=int(data.get("seed", 0)),
            speed_first=bool(data.get("speed_first", True)),
        )

    @classmethod
    def stage1(cls, seed: int = 0, speed: bool = True) -> "AugmentationRecipe":
        """Two reverberant noisy copies at 5-10 dB and 10-20 dB SNR"""
        return cls(
            copies=(
                CopySpec(reverb=True, snr=SnrRange(5, 10)),
                CopySpec(reverb=True, snr=SnrRange(10, 20)),
            ),
            speed_factors=(0.9, 1.1) if speed else (),
            seed=seed,
        )

    @classmethod
    def stage2(cls, seed: int = 0, speed: bool = True) -> "AugmentationRecipe":
        """A reverberation-only copy and a reverberant noisy copy at 10-20 dB SNR"""
        return cls(
            copies=(
                CopySpec(reverb=True),
                CopySpec(reverb=True, snr=SnrRange(10, 20)),
            ),
            speed_factors=(0.9, 1.1) if speed else (),
            seed=seed,
        )


def _check_rates(*signals) -> int:
    rates = {signal.sample_rate for signal in signals}
    if len(rates) != 1:
        raise DspError(f"Sample rate mismatch: {sorted(rates)}!")
    return rates.pop()


def direct_convolve(x: np.ndarray, h: np.ndarray) -> np.ndarray:
    """
    Full linear convolution by direct summation

    Args:
        x (np.ndarray): Signal
        h (np.ndarray): Filter

    Returns:
        np.ndarray: Convolution of length len(x) + len(h) - 1
    """
    return np.convolve(x, h)


def overlap_add_convolve(x: np.ndarray, h: np.ndarray) -> np.ndarray:
    """
    Full linear convolution by FFT overlap-add. The FFT size is the next
    power of two of at least twice the filter length.

    Args:
        x (np.ndarray): Signal
        h (np.ndarray): Filter

    Returns:
        np.ndarray: Convolution of length len(x) + len(h) - 1
    """
    len_x = len(x)
    len_h = len(h)
    nfft = 1 << max(10, int(math.ceil(math.log2(2 * len_h))))
    block = nfft - len_h + 1
    spectrum_h = fft.rfft(h, nfft)
    y = np.zeros(len_x + len_h - 1)
    for start in range(0, len_x, block):
        segment = x[start : start + block]
        out = fft.irfft(fft.rfft(segment, nfft) * spectrum_h, nfft)
        stop = min(start + nfft, len(y))
        y[start:stop] += out[: stop - start]
    return y


def convolve(x: AudioSignal, h: RoomImpulseResponse) -> AudioSignal:
    """
    Reverberate a signal. The full convolution is truncated to the input
    length so transcripts and frame labels stay aligned. Long signals use
    FFT overlap-add, short ones direct summation.

    Args:
        x (AudioSignal): Signal
        h (RoomImpulseResponse): Room impulse response

    Returns:
        AudioSignal: Reverberated signal of the same length as x
    """
    rate = _check_rates(x, h)
    if len(x) == 0:
        raise DspError("Cannot convolve empty signal!")
    taps = h.samples[: len(x)]
    if len(x) > DIRECT_CONVOLUTION_LIMIT:
        y = overlap_add_convolve(x.samples, taps)
    else:
        y = direct_convolve(x.samples, taps)
    return AudioSignal(y[: len(x)], rate)


def _power(samples: np.ndarray) -> float:
    return float(np.mean(np.square(samples)))


def measure_snr_db(speech: AudioSignal, noise: AudioSignal) -> float:
    """
    Signal-to-noise ratio over the whole signals, without voice activity
    gating: 10 log10 of mean speech power over mean noise power.

    Args:
        speech (AudioSignal): Speech component
        noise (AudioSignal): Noise component

    Returns:
        float: SNR in dB
    """
    if len(speech) != len(noise):
        raise DspError(
            f"Speech and noise lengths differ ({len(speech)} vs {len(noise)})!"
        )
    noise_power = _power(noise.samples)
    if noise_power == 0:
        raise DspError("Noise has zero energy!")
    speech_power = _power(speech.samples)
    if speech_power == 0:
        return -math.inf
    return 10.0 * math.log10(speech_power / noise_power)


def fit_noise(
    noise: NoiseClip, length: int, rng: Optional[np.random.Generator] = None
) -> np.ndarray:
    """
    Loop (if shorter) or crop (if longer) noise to a length starting at a
    seeded random offset.

    Args:
        noise (NoiseClip): Noise clip
        length (int): Required length
        rng (Optional[np.random.Generator]): Random generator. Defaults to None (offset 0).

    Returns:
        np.ndarray: Noise samples of the given length
    """
    samples = noise.samples
    if len(samples) < length:
        offset = int(rng.integers(len(samples))) if rng else 0
        return samples[(offset + np.arange(length)) % len(samples)]
    offset = int(rng.integers(len(samples) - length + 1)) if rng else 0
    return samples[offset : offset + length]


def peak_normalise(samples: np.ndarray) -> np.ndarray:
    """Scale samples down to a peak of 1 if they exceed it"""
    peak = float(np.max(np.abs(samples))) if len(samples) else 0.0
    if peak > 1.0:
        return samples / peak
    return samples


def eq1_components(
    s: AudioSignal,
    h: RoomImpulseResponse,
    w: NoiseClip,
    h_tilde: RoomImpulseResponse,
    target_snr_db: float,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[AudioSignal, AudioSignal, float]:
    """
    Compute the reverberant speech and the scaled reverberant noise of a
    noisy reverberant mix.

    Args:
        s (AudioSignal): Clean speech
        h (RoomImpulseResponse): Speech impulse response
        w (NoiseClip): Noise
        h_tilde (RoomImpulseResponse): Noise impulse response in the same room
        target_snr_db (float): Target SNR in dB
        rng (Optional[np.random.Generator]): Generator for the noise offset. Defaults to None.

    Returns:
        Tuple[AudioSignal, AudioSignal, float]: Reverberant speech, scaled reverberant noise, gain
    """
    rate = _check_rates(s, h, w, h_tilde)
    if h.room_id != h_tilde.room_id:
        raise DspError(
            f"Impulse responses come from different rooms ({h.room_id}, {h_tilde.room_id})!"
        )
    speech = convolve(s, h)
    noise = convolve(AudioSignal(fit_noise(w, len(s), rng), rate), h_tilde)
    noise_power = _power(noise.samples)
    if noise_power == 0:
        raise DspError(f"Reverberant noise {w.label} has zero energy!")
    gain = math.sqrt(
        _power(speech.samples) / (noise_power * 10.0 ** (target_snr_db / 10.0))
    )
    return speech, AudioSignal(gain * noise.samples, rate), gain


def augment_eq1(
    s: AudioSignal,
    h: RoomImpulseResponse,
    w: NoiseClip,
    h_tilde: RoomImpulseResponse,
    target_snr_db: float,
    rng: Optional[np.random.Generator] = None,
) -> AudioSignal:
    """
    Simulate speech with noise and reverberation in one room:
    x = s * h + g (w * h~) with gain g chosen to hit the target SNR. The mix
    is peak normalised only if it would clip, which leaves the SNR intact.

    Args:
        s (AudioSignal): Clean speech
        h (RoomImpulseResponse): Speech impulse response
        w (NoiseClip): Noise
        h_tilde (RoomImpulseResponse): Noise impulse response in the same room
        target_snr_db (float): Target SNR in dB
        rng (Optional[np.random.Generator]): Generator for the noise offset. Defaults to None.

    Returns:
        AudioSignal: Augmented speech
    """
    speech, noise, _ = eq1_components(s, h, w, h_tilde, target_snr_db, rng)
    return AudioSignal(
        peak_normalise(speech.samples + noise.samples), s.sample_rate
    )


def augment_eq2(s: AudioSignal, h: RoomImpulseResponse) -> AudioSignal:
    """
    Simulate speech with reverberation only: x = s * h

    Args:
        s (AudioSignal): Clean speech
        h (RoomImpulseResponse): Impulse response

    Returns:
        AudioSignal: Reverberant speech
    """
    return AudioSignal(peak_normalise(convolve(s, h).samples), s.sample_rate)


def add_noise(
    s: AudioSignal,
    w: NoiseClip,
    target_snr_db: float,
    rng: Optional[np.random.Generator] = None,
) -> AudioSignal:
    """
    Add noise at a target SNR without reverberation

    Args:
        s (AudioSignal): Speech
        w (NoiseClip): Noise
        target_snr_db (float): Target SNR in dB
        rng (Optional[np.random.Generator]): Generator for the noise offset. Defaults to None.

    Returns:
        AudioSignal: Noisy speech
    """
    _check_rates(s, w)
    noise = fit_noise(w, len(s), rng)
    noise_power = _power(noise)
    if noise_power == 0:
        raise DspError(f"Noise {w.label} has zero energy!")
    gain = math.sqrt(
        _power(s.samples) / (noise_power * 10.0 ** (target_snr_db / 10.0))
    )
    return AudioSignal(peak_normalise(s.samples + gain * noise), s.sample_rate)


def speed_perturb(x: AudioSignal, factor: float) -> AudioSignal:
    """
    Resample-style speed perturbation: tempo and pitch both scale by factor.
    Output sample n linearly interpolates x at position factor * n and the
    output has ceil(len(x) / factor) samples.

    Args:
        x (AudioSignal): Signal
        factor (float): Speed factor

    Returns:
        AudioSignal: Perturbed signal
    """
    if not factor > 0:
        raise DspError(f"Speed factor {factor} must be positive!")
    if factor == 1.0:
        return AudioSignal(x.samples.copy(), x.sample_rate)
    length = int(math.ceil(len(x) / factor - 1e-9))
    positions = factor * np.arange(length)
    samples = np.interp(positions, np.arange(len(x)), x.samples)
    return AudioSignal(samples, x.sample_rate)


def warp_labels(
    labels: Sequence[str], factor: float, no_frames: int, window: int, shift: int
) -> List[str]:
    """
    Frame label track of a speed perturbed signal: each output frame takes
    the label of the source frame covering its warped centre.

    Args:
        labels (Sequence[str]): Source frame labels
        factor (float): Speed factor
        no_frames (int): Number of output frames
        window (int): Frame length in samples
        shift (int): Frame shift in samples

    Returns:
        List[str]: Output frame labels
    """
    if not labels:
        return []
    centres = factor * (np.arange(no_frames) * shift + window / 2.0)
    source = np.rint((centres - window / 2.0) / shift).astype(int)
    source = np.clip(source, 0, len(labels) - 1)
    return [labels[i] for i in source]


class RirPool:
    """Pool of room impulse responses grouped by room

    Args:
        rirs (Sequence[RoomImpulseResponse]): Impulse responses
    """

    def __init__(self, rirs: Sequence[RoomImpulseResponse]) -> None:
        if not rirs:
            raise DspError("RIR pool is empty!")
        self.rirs = list(rirs)
        self.rooms: Dict[str, List[RoomImpulseResponse]] = {}
        for rir in self.rirs:
            self.rooms.setdefault(rir.room_id, []).append(rir)
        self.room_ids = sorted(self.rooms)

    def __len__(self) -> int:
        return len(self.rirs)

    def draw_pair(
        self, rng: np.random.Generator
    ) -> Tuple[RoomImpulseResponse, RoomImpulseResponse]:
        """
        Draw two impulse responses at different positions of the same room
        (the same one twice if a room has a single position).

        Args:
            rng (np.random.Generator): Random generator

        Returns:
            Tuple[RoomImpulseResponse, RoomImpulseResponse]: Speech and noise impulse responses
        """
        room = self.rooms[self.room_ids[int(rng.integers(len(self.room_ids)))]]
        if len(room) == 1:
            return room[0], room[0]
        first, second = rng.choice(len(room), size=2, replace=False)
        return room[int(first)], room[int(second)]


def synthesize_rir_pool(
    out_dir: str,
    no_rooms: int = 6,
    positions_per_room: int = 3,
    seed: int = 0,
    rt60_range: Tuple[float, float] = (0.2, 0.8),
    sample_rate: int = CANONICAL_RATE,
) -> RirPool:
    """
    Synthesise small and medium room impulse responses as exponentially
    decaying seeded noise after a direct path, and write them as WAV files
    plus an index.json.

    Args:
        out_dir (str): Output directory
        no_rooms (int): Number of rooms. Defaults to 6.
        positions_per_room (int): Positions per room. Defaults to 3.
        seed (int): Random seed. Defaults to 0.
        rt60_range (Tuple[float, float]): Reverberation time range in seconds. Defaults to (0.2, 0.8).
        sample_rate (int): Sampling rate. Defaults to 16000.

    Returns:
        RirPool: The synthesised pool
    """
    os.makedirs(out_dir, exist_ok=True)
    index = []
    rirs = []
    for room_no in range(no_rooms):
        room_id = f"room{room_no:02d}"
        rt60 = float(get_rng(seed, room_id).uniform(*rt60_range))
        length = int(rt60 * sample_rate)
        decay = np.exp(-math.log(1000.0) * np.arange(length) / length)
        for position_no in range(positions_per_room):
            position_id = f"pos{position_no:02d}"
            rng = get_rng(seed, room_id, position_id)
            delay = int(rng.integers(0, sample_rate // 200))
            tail = rng.standard_normal(length) * decay
            drr_db = rng.uniform(-3.0, 6.0)
            tail *= math.sqrt(10.0 ** (-drr_db / 10.0) / np.sum(tail**2))
            taps = np.zeros(delay + length)
            taps[delay] = 1.0
            taps[delay + 1 :] += tail[1:]
            taps /= np.max(np.abs(taps))
            filename = f"{room_id}_{position_id}.wav"
            signal = AudioSignal(taps, sample_rate)
            write_wav(join(out_dir, filename), signal)
            rirs.append(
                RoomImpulseResponse(
                    read_wav(join(out_dir, filename), sample_rate).samples,
                    sample_rate,
                    room_id,
                    position_id,
                )
            )
            index.append(
                {
                    "file": filename,
                    "room_id": room_id,
                    "position_id": position_id,
                    "rt60": rt60,
                }
            )
    save_json(index, join(out_dir, "index.json"), pretty=True)
    logger.info(f"Synthesised {len(rirs)} room impulse responses in {out_dir}")
    return RirPool(rirs)


def load_rir_pool(pool_dir: str) -> RirPool:
    """
    Load a RIR pool from a directory of WAV files and an index.json

    Args:
        pool_dir (str): Pool directory

    Returns:
        RirPool: Pool
    """
    rirs = []
    for item in load_json(join(pool_dir, "index.json")):
        signal = read_wav(join(pool_dir, item["file"]))
        rirs.append(
            RoomImpulseResponse(
                signal.samples,
                signal.sample_rate,
                item["room_id"],
                item["position_id"],
            )
        )
    return RirPool(rirs)


def _shape_spectrum(white: np.ndarray, exponent: float) -> np.ndarray:
    spectrum = fft.rfft(white)
    freqs = np.arange(len(spectrum), dtype=np.float64)
    freqs[0] = 1.0
    return fft.irfft(spectrum / freqs**exponent, len(white))


def synthesize_noise_pool(
    out_dir: str,
    no_clips: int = 8,
    duration_s: float = 6.0,
    seed: int = 0,
    sample_rate: int = CANONICAL_RATE,
) -> List[NoiseClip]:
    """
    Synthesise a pool of noise clips (white, pink, brown, mains hum and tape
    hiss) and write them as WAV files plus an index.json.

    Args:
        out_dir (str): Output directory
        no_clips (int): Number of clips. Defaults to 8.
        duration_s (float): Clip duration. Defaults to 6.0.
        seed (int): Random seed. Defaults to 0.
        sample_rate (int): Sampling rate. Defaults to 16000.

    Returns:
        List[NoiseClip]: The synthesised clips
    """
    os.makedirs(out_dir, exist_ok=True)
    kinds = ("white", "pink", "brown", "hum", "hiss")
    length = int(duration_s * sample_rate)
    clips = []
    index = []
    for clip_no in range(no_clips):
        kind = kinds[clip_no % len(kinds)]
        label = f"{kind}{clip_no:02d}"
        rng = get_rng(seed, "noise", label)
        white = rng.standard_normal(length)
        if kind == "white":
            samples = white
        elif kind == "pink":
            samples = _shape_spectrum(white, 0.5)
        elif kind == "brown":
            samples = _shape_spectrum(white, 1.0)
        elif kind == "hum":
            t = np.arange(length) / sample_rate
            base = rng.choice([50.0, 60.0])
            samples = sum(
                np.sin(2 * np.pi * base * k * t + rng.uniform(0, 2 * np.pi)) / k
                for k in range(1, 6)
            )
            samples = samples + 0.1 * white
        else:
            samples = np.diff(white, prepend=0.0)
        samples = 0.5 * samples / np.max(np.abs(samples))
        filename = f"{label}.wav"
        write_wav(join(out_dir, filename), AudioSignal(samples, sample_rate))
        clips.append(
            NoiseClip(
                read_wav(join(out_dir, filename), sample_rate).samples,
                sample_rate,
                label,
            )
        )
        index.append({"file": filename, "label": label})
    save_json(index, join(out_dir, "index.json"), pretty=True)
    logger.info(f"Synthesised {len(clips)} noise clips in {out_dir}")
    return clips


def load_noise_pool(pool_dir: str) -> List[NoiseClip]:
    """
    Load a noise pool from a directory of WAV files and an index.json

    Args:
        pool_dir (str): Pool directory

    Returns:
        List[NoiseClip]: Noise clips
    """
    clips = []
    for item in load_json(join(pool_dir, "index.json")):
        signal = read_wav(join(pool_dir, item["file"]))
        clips.append(NoiseClip(signal.samples, signal.sample_rate, item["label"]))
    if not clips:
        raise DspError(f"Noise pool {pool_dir} is empty!")
    return clips


def render_copy(
    s: AudioSignal,
    copy: CopySpec,
    rng: np.random.Generator,
    rir_pool: Optional[RirPool],
    noise_pool: Optional[Sequence[NoiseClip]],
) -> Tuple[AudioSignal, Dict]:
    """
    Render one augmented copy of a signal drawing impulse responses, noise
    and SNR from rng.

    Args:
        s (AudioSignal): Clean signal
        copy (CopySpec): Copy specification
        rng (np.random.Generator): Random generator
        rir_pool (Optional[RirPool]): Impulse responses
        noise_pool (Optional[Sequence[NoiseClip]]): Noise clips

    Returns:
        Tuple[AudioSignal, Dict]: Augmented signal and a description of the draws
    """
    meta = {}
    if copy.reverb:
        if not rir_pool:
            raise DspError("Recipe needs reverberation but RIR pool is empty!")
        h, h_tilde = rir_pool.draw_pair(rng)
        meta["rir"] = h.key
    if copy.noise:
        if not noise_pool:
            raise DspError("Recipe needs noise but noise pool is empty!")
        w = noise_pool[int(rng.integers(len(noise_pool)))]
        snr = copy.snr.draw(rng)
        meta["noise"] = w.label
        meta["snr_db"] = snr
        if copy.reverb:
            meta["rir_noise"] = h_tilde.key
            return augment_eq1(s, h, w, h_tilde, snr, rng), meta
        return add_noise(s, w, snr, rng), meta
    if copy.reverb:
        return augment_eq2(s, h), meta
    return AudioSignal(s.samples.copy(), s.sample_rate), meta


def _speed_tag(factor: float) -> str:
    return f"sp{factor:g}"


def apply_recipe(
    manifest: Manifest,
    recipe: AugmentationRecipe,
    out_dir: str,
    rir_pool: Optional[RirPool] = None,
    noise_pool: Optional[Sequence[NoiseClip]] = None,
    window: int = 400,
    shift: int = 160,
    jobs: int = 1,
) -> Manifest:
    """
    Expand a manifest with augmented copies. Speed variants are 1.0 plus the
    recipe's speed factors. Every variant is kept clean and every copy is
    applied to every variant, so the output has len(manifest) x variants x
    (1 + copies) entries. The original entries come first, unmodified. The
    draws of each entry depend only on (seed, utterance id, copy, variant).

    Args:
        manifest (Manifest): Clean manifest
        recipe (AugmentationRecipe): Recipe
        out_dir (str): Directory for generated audio and labels
        rir_pool (Optional[RirPool]): Impulse responses. Defaults to None.
        noise_pool (Optional[Sequence[NoiseClip]]): Noise clips. Defaults to None.
        window (int): Frame length in samples for label tracks. Defaults to 400.
        shift (int): Frame shift in samples for label tracks. Defaults to 160.
        jobs (int): Number of worker threads. Defaults to 1.

    Returns:
        Manifest: Expanded manifest
    """
    if any(copy.reverb for copy in recipe.copies) and not rir_pool:
        raise DspError("Recipe needs reverberation but RIR pool is empty!")
    if any(copy.noise for copy in recipe.copies) and not noise_pool:
        raise DspError("Recipe needs noise but noise pool is empty!")
    audio_dir = join(out_dir, "audio")
    label_dir = join(out_dir, "labels")

    def write_entry(
        source: Utterance, entry_id: str, signal: AudioSignal, labels, meta
    ) -> Utterance:
        audio_path = join(audio_dir, f"{entry_id}.wav")
        write_wav(audio_path, signal)
        label_path = None
        if labels is not None:
            label_path = join(label_dir, f"{entry_id}.txt")
            write_labels(label_path, labels)
        return Utterance(
            id=entry_id,
            audio=os.path.abspath(audio_path),
            transcript=source.transcript,
            speaker_id=source.speaker_id,
            language=source.language,
            duration_s=signal.duration_s,
            labels=os.path.abspath(label_path) if label_path else None,
            meta={"source": source.id, **meta},
        )

    def expand(utterance: Utterance) -> List[Utterance]:
        clean = utterance.load_audio()
        labels = utterance.load_labels() if utterance.labels else None
        generated = []
        for factor in recipe.variants:
            if factor == 1.0:
                variant_id = utterance.id
                variant = clean
                variant_labels = labels
            else:
                variant_id = f"{utterance.id}-{_speed_tag(factor)}"
                variant = speed_perturb(clean, factor)
                variant_labels = None
                if labels is not None:
                    variant_labels = warp_labels(
                        labels,
                        factor,
                        frame_count(len(variant), window, shift),
                        window,
                        shift,
                    )
                generated.append(
                    write_entry(
                        utterance,
                        variant_id,
                        variant,
                        variant_labels,
                        {"speed": factor},
                    )
                )
            for copy_no, copy in enumerate(recipe.copies):
                rng = get_rng(recipe.seed, utterance.id, copy_no, factor)
                if recipe.speed_first or factor == 1.0:
                    signal, meta = render_copy(
                        variant, copy, rng, rir_pool, noise_pool
                    )
                else:
                    signal, meta = render_copy(
                        clean, copy, rng, rir_pool, noise_pool
                    )
                    signal = speed_perturb(signal, factor)
                meta["copy"] = copy_no
                meta["speed"] = factor
                generated.append(
                    write_entry(
                        utterance,
                        f"{variant_id}-aug{copy_no + 1}",
                        signal,
                        variant_labels,
                        meta,
                    )
                )
        logger.debug(f"Augmented {utterance.id} into {len(generated)} entries")
        return generated

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as executor:
            expanded = list(executor.map(expand, manifest))
    else:
        expanded = [expand(utterance) for utterance in manifest]
    entries = list(manifest.entries)
    for generated in expanded:
        entries.extend(generated)
    logger.info(
        f"Expanded {manifest.name} from {len(manifest)} to {len(entries)} entries"
    )
    return Manifest(entries, f"{manifest.name}_aug")
