"""Deterministic synthetic two-language benchmark: a resource-rich source
language, a resource-poor target language and a domain-shifted target
condition"""

import logging
import os
from dataclasses import dataclass, field
from os.path import abspath, join
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import fft

from hdx.utilities.loader import load_json
from hdx.utilities.saver import save_json

from . import derive_seed, get_rng
from .corpus import (
    CANONICAL_RATE,
    AudioSignal,
    Manifest,
    Utterance,
    save_manifest,
    split_speaker_disjoint,
    write_labels,
    write_wav,
)
from .dsp import (
    NoiseClip,
    RirPool,
    RoomImpulseResponse,
    SnrRange,
    augment_eq2,
    eq1_components,
    peak_normalise,
    synthesize_noise_pool,
    synthesize_rir_pool,
)
from .features import FeatureConfig, frame_count

logger = logging.getLogger(__name__)

SILENCE = "sil"
TILT_REFERENCE_HZ = 500.0


class SynthError(Exception):
    pass


@dataclass(frozen=True)
class PhonePrototype:
    """Acoustic prototype of a phone: summed sinusoids under an envelope

    Args:
        freqs (Tuple[float, ...]): Sinusoid frequencies in Hz, strongest first
        amplitudes (Tuple[float, ...]): Relative amplitudes
        duration_ms (float): Nominal duration
        attack_ms (float): Rise and release time of the envelope. Defaults to 10.
    """

    freqs: Tuple[float, ...]
    amplitudes: Tuple[float, ...]
    duration_ms: float
    attack_ms: float = 10.0

    def to_dict(self) -> Dict:
        return {
            "freqs": list(self.freqs),
            "amplitudes": list(self.amplitudes),
            "duration_ms": self.duration_ms,
            "attack_ms": self.attack_ms,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "PhonePrototype":
        return cls(
            tuple(data["freqs"]),
            tuple(data["amplitudes"]),
            data["duration_ms"],
            data.get("attack_ms", 10.0),
        )


@dataclass(frozen=True)
class PhoneInventory:
    """Phone set with acoustic prototypes. The silence symbol has no
    sinusoids.

    Args:
        phones (Tuple[str, ...]): Phone symbols, silence included
        prototypes (Dict[str, PhonePrototype]): Prototype per phone
        silence (str): Silence symbol. Defaults to "sil".
        sample_rate (int): Sampling rate. Defaults to 16000.
    """

    phones: Tuple[str, ...]
    prototypes: Dict[str, PhonePrototype]
    silence: str = SILENCE
    sample_rate: int = CANONICAL_RATE

    def __post_init__(self) -> None:
        object.__setattr__(self, "phones", tuple(self.phones))
        if len(self.phones) < 2:
            raise SynthError("An inventory needs at least 2 phones!")
        if self.silence not in self.phones:
            raise SynthError(f"Silence symbol {self.silence} missing!")
        if len(set(self.phones)) != len(self.phones):
            raise SynthError("Inventory has duplicate phones!")
        nyquist = self.sample_rate / 2.0
        for phone in self.phones:
            prototype = self.prototypes.get(phone)
            if prototype is None:
                raise SynthError(f"Phone {phone} has no prototype!")
            if any(freq >= nyquist for freq in prototype.freqs):
                raise SynthError(
                    f"Phone {phone} has a frequency at or above Nyquist!"
                )

    @property
    def speech_phones(self) -> List[str]:
        return [phone for phone in self.phones if phone != self.silence]

    def to_dict(self) -> Dict:
        return {
            "phones": list(self.phones),
            "silence": self.silence,
            "sample_rate": self.sample_rate,
            "prototypes": {
                phone: self.prototypes[phone].to_dict() for phone in self.phones
            },
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "PhoneInventory":
        return cls(
            tuple(data["phones"]),
            {
                phone: PhonePrototype.from_dict(prototype)
                for phone, prototype in data["prototypes"].items()
            },
            data.get("silence", SILENCE),
            data.get("sample_rate", CANONICAL_RATE),
        )


@dataclass(frozen=True)
class SynthLanguageSpec:
    """Artificial language

    Args:
        language (str): Language tag
        inventory (PhoneInventory): Phone inventory
        lexicon (Dict[str, Tuple[str, ...]]): Word spellings
        speaker_count (int): Number of speakers
        utterance_length_range (Tuple[int, int]): Words per utterance. Defaults to (3, 8).
        tilt_range (Tuple[float, float]): Speaker spectral tilt range in dB/octave. Defaults to (-3, 3).
        word_gap_ms (float): Nominal pause between words. Defaults to 60.
        seed (int): Random seed. Defaults to 0.
    """

    language: str
    inventory: PhoneInventory
    lexicon: Dict[str, Tuple[str, ...]]
    speaker_count: int
    utterance_length_range: Tuple[int, int] = (3, 8)
    tilt_range: Tuple[float, float] = (-3.0, 3.0)
    word_gap_ms: float = 60.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.speaker_count < 2:
            raise SynthError("A language needs at least 2 speakers!")
        low, high = self.utterance_length_range
        if not 1 <= low <= high:
            raise SynthError(
                f"Invalid utterance length range {self.utterance_length_range}!"
            )
        if not self.lexicon:
            raise SynthError("Lexicon is empty!")

    def speaker_tilt(self, speaker_id: str) -> float:
        return float(get_rng(self.seed, "tilt", speaker_id).uniform(*self.tilt_range))


@dataclass(frozen=True)
class DomainShiftSpec:
    """Recording condition of the target domain: reverberation in given
    rooms, noise at an SNR drawn from a range and a spectral tilt offset
    modelling changed voices.

    Args:
        rir_rooms (Tuple[str, ...]): Rooms to draw from. Defaults to () (all).
        snr_range_db (Optional[SnrRange]): Noise SNR range. Defaults to None (no noise).
        tilt_offset (float): Added spectral tilt in dB/octave. Defaults to 0.
        reverb (bool): Reverberate. Defaults to True.
    """

    rir_rooms: Tuple[str, ...] = ()
    snr_range_db: Optional[SnrRange] = None
    tilt_offset: float = 0.0
    reverb: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "rir_rooms", tuple(self.rir_rooms))
        snr = self.snr_range_db
        if snr is not None and not snr.low_db < snr.high_db:
            raise SynthError(f"Degenerate SNR interval {snr}!")


def make_inventories(
    source_size: int = 20,
    target_size: int = 16,
    shared: int = 8,
    seed: int = 0,
    sample_rate: int = CANONICAL_RATE,
) -> Tuple[PhoneInventory, PhoneInventory]:
    """
    Create partially overlapping source and target inventories. Shared
    phones carry the same symbol and prototype in both. Sizes count the
    speech phones; silence is added to both.

    Args:
        source_size (int): Speech phones of the source language. Defaults to 20.
        target_size (int): Speech phones of the target language. Defaults to 16.
        shared (int): Phones in both languages. Defaults to 8.
        seed (int): Random seed. Defaults to 0.
        sample_rate (int): Sampling rate. Defaults to 16000.

    Returns:
        Tuple[PhoneInventory, PhoneInventory]: Source and target inventories
    """
    if not 0 <= shared <= min(source_size, target_size):
        raise SynthError(
            f"Cannot share {shared} phones between inventories of {source_size} and {target_size}!"
        )
    total = source_size + target_size - shared
    rng = get_rng(seed, "inventory")
    low_grid = np.arange(250.0, 1000.0, 20.0)
    high_grid = np.arange(1100.0, 3800.0, 50.0)
    if total > len(low_grid):
        raise SynthError(f"Cannot create {total} distinct phones!")
    firsts = rng.choice(low_grid, size=total, replace=False)
    prototypes = {}
    for number, first in enumerate(firsts):
        no_extra = int(rng.integers(1, 3))
        extras = sorted(rng.choice(high_grid, size=no_extra, replace=False))
        amplitudes = [1.0] + [float(rng.uniform(0.25, 0.6)) for _ in extras]
        prototypes[f"p{number:02d}"] = PhonePrototype(
            (float(first), *(float(f) for f in extras)),
            tuple(amplitudes),
            float(rng.uniform(60.0, 120.0)),
        )
    prototypes[SILENCE] = PhonePrototype((), (), 80.0)
    names = [f"p{number:02d}" for number in range(total)]
    source = [SILENCE] + names[:source_size]
    target = [SILENCE] + names[:shared] + names[source_size:]
    return (
        PhoneInventory(
            tuple(source), {p: prototypes[p] for p in source}, SILENCE, sample_rate
        ),
        PhoneInventory(
            tuple(target), {p: prototypes[p] for p in target}, SILENCE, sample_rate
        ),
    )


def make_lexicon(
    inventory: PhoneInventory,
    size: int,
    word_length_range: Tuple[int, int] = (2, 4),
    seed: int = 0,
    prefix: str = "w",
) -> Dict[str, Tuple[str, ...]]:
    """
    Create a lexicon of distinct phone spellings with no phone repeated
    back to back

    Args:
        inventory (PhoneInventory): Phone inventory
        size (int): Number of words
        word_length_range (Tuple[int, int]): Phones per word. Defaults to (2, 4).
        seed (int): Random seed. Defaults to 0.
        prefix (str): Word name prefix. Defaults to "w".

    Returns:
        Dict[str, Tuple[str, ...]]: Mapping from word to phones
    """
    low, high = word_length_range
    if not 1 <= low <= high:
        raise SynthError(f"Invalid word length range {word_length_range}!")
    phones = inventory.speech_phones
    if len(phones) < 2 and high > 1:
        raise SynthError("Need at least 2 speech phones for multi-phone words!")
    rng = get_rng(seed, "lexicon", prefix)
    lexicon = {}
    spellings = set()
    attempts = 0
    while len(lexicon) < size:
        attempts += 1
        if attempts > 100 * size:
            raise SynthError(f"Cannot create {size} distinct words!")
        length = int(rng.integers(low, high + 1))
        spelling = []
        while len(spelling) < length:
            phone = phones[int(rng.integers(len(phones)))]
            if spelling and spelling[-1] == phone:
                continue
            spelling.append(phone)
        spelling = tuple(spelling)
        if spelling in spellings:
            continue
        spellings.add(spelling)
        lexicon[f"{prefix}{len(lexicon):03d}"] = spelling
    return lexicon


def apply_tilt(samples: np.ndarray, tilt: float, sample_rate: int) -> np.ndarray:
    """
    Apply a spectral tilt in dB per octave relative to 500 Hz

    Args:
        samples (np.ndarray): Signal
        tilt (float): Tilt in dB/octave
        sample_rate (int): Sampling rate

    Returns:
        np.ndarray: Tilted signal
    """
    if tilt == 0:
        return samples
    spectrum = fft.rfft(samples)
    freqs = np.maximum(fft.rfftfreq(len(samples), 1.0 / sample_rate), 50.0)
    gain = 10.0 ** (tilt * np.log2(freqs / TILT_REFERENCE_HZ) / 20.0)
    return fft.irfft(spectrum * gain, len(samples))


def render_phone(
    inventory: PhoneInventory,
    phone: str,
    speaker_tilt: float,
    seed: int,
) -> AudioSignal:
    """
    Render one phone: its sinusoids under a raised-cosine envelope plus
    low-level noise, tilted to the speaker and scaled to a 0.5 peak. The
    duration is the nominal one with up to 15% seeded jitter. Silence is
    very low-level noise.

    Args:
        inventory (PhoneInventory): Phone inventory
        phone (str): Phone to render
        speaker_tilt (float): Speaker spectral tilt in dB/octave
        seed (int): Random seed

    Returns:
        AudioSignal: Rendered phone
    """
    prototype = inventory.prototypes.get(phone)
    if prototype is None or phone not in inventory.phones:
        raise SynthError(f"Unknown phone {phone}!")
    rate = inventory.sample_rate
    rng = get_rng(seed, "phone", phone, speaker_tilt)
    duration_ms = prototype.duration_ms * (1.0 + rng.uniform(-0.15, 0.15))
    length = max(1, int(round(duration_ms * rate / 1000.0)))
    if phone == inventory.silence:
        return AudioSignal(1e-4 * rng.standard_normal(length), rate)
    t = np.arange(length) / rate
    samples = np.zeros(length)
    for freq, amplitude in zip(prototype.freqs, prototype.amplitudes):
        samples += amplitude * np.sin(
            2 * np.pi * freq * t + rng.uniform(0, 2 * np.pi)
        )
    ramp = min(int(prototype.attack_ms * rate / 1000.0), length // 4)
    if ramp > 0:
        rise = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
        samples[:ramp] *= rise
        samples[length - ramp :] *= rise[::-1]
    samples += 0.005 * rng.standard_normal(length)
    samples = apply_tilt(samples, speaker_tilt, rate)
    return AudioSignal(0.5 * samples / np.max(np.abs(samples)), rate)


@dataclass
class RenderedUtterance:
    signal: AudioSignal
    phones: List[str]
    boundaries: List[int]
    labels: List[str] = field(default_factory=list)


def render_utterance(
    spec: SynthLanguageSpec,
    words: Sequence[str],
    speaker_id: str,
    seed: int,
    tilt_offset: float = 0.0,
    window: int = 400,
    shift: int = 160,
) -> RenderedUtterance:
    """
    Render words separated by silences with leading and trailing silence.
    Frame labels take the phone rendered at each frame's centre sample, so
    they follow the rendering boundaries exactly.

    Args:
        spec (SynthLanguageSpec): Language
        words (Sequence[str]): Words to render
        speaker_id (str): Speaker
        seed (int): Random seed
        tilt_offset (float): Extra spectral tilt. Defaults to 0.
        window (int): Frame length in samples. Defaults to 400.
        shift (int): Frame shift in samples. Defaults to 160.

    Returns:
        RenderedUtterance: Audio, phone sequence, boundaries and frame labels
    """
    tilt = spec.speaker_tilt(speaker_id) + tilt_offset
    silence = spec.inventory.silence
    sequence = [silence]
    for word in words:
        spelling = spec.lexicon.get(word)
        if spelling is None:
            raise SynthError(f"Word {word} not in lexicon!")
        sequence.extend(spelling)
        sequence.append(silence)
    pieces = []
    boundaries = [0]
    for position, phone in enumerate(sequence):
        piece = render_phone(
            spec.inventory, phone, tilt, derive_seed(seed, position)
        ).samples
        pieces.append(piece)
        boundaries.append(boundaries[-1] + len(piece))
    samples = np.concatenate(pieces)
    no_frames = frame_count(len(samples), window, shift)
    centres = np.arange(no_frames) * shift + window // 2
    owners = np.searchsorted(np.asarray(boundaries[1:]), centres, side="right")
    labels = [sequence[i] for i in owners]
    return RenderedUtterance(
        AudioSignal(samples, spec.inventory.sample_rate),
        sequence,
        boundaries,
        labels,
    )


def apply_domain_shift(
    signal: AudioSignal,
    shift: DomainShiftSpec,
    rng: np.random.Generator,
    rir_pool: Optional[RirPool] = None,
    noise_pool: Optional[Sequence[NoiseClip]] = None,
) -> Tuple[AudioSignal, Optional[AudioSignal], Optional[AudioSignal], Dict]:
    """
    Apply the recording condition of a domain shift after synthesis

    Args:
        signal (AudioSignal): Clean rendered speech
        shift (DomainShiftSpec): Domain shift
        rng (np.random.Generator): Random generator
        rir_pool (Optional[RirPool]): Impulse responses. Defaults to None.
        noise_pool (Optional[Sequence[NoiseClip]]): Noise clips. Defaults to None.

    Returns:
        Tuple[AudioSignal, Optional[AudioSignal], Optional[AudioSignal], Dict]: Shifted audio, speech and noise components (None without noise) and the draws
    """
    meta = {}
    h = h_tilde = None
    if shift.reverb:
        if not rir_pool:
            raise SynthError("Domain shift needs reverberation but no RIR pool given!")
        pool = rir_pool
        if shift.rir_rooms:
            pool = RirPool(
                [rir for rir in rir_pool.rirs if rir.room_id in shift.rir_rooms]
            )
        h, h_tilde = pool.draw_pair(rng)
        meta["rir"] = h.key
    if shift.snr_range_db is None:
        if h is None:
            return signal, None, None, meta
        return augment_eq2(signal, h), None, None, meta
    if not noise_pool:
        raise SynthError("Domain shift needs noise but no noise pool given!")
    noise = noise_pool[int(rng.integers(len(noise_pool)))]
    snr = shift.snr_range_db.draw(rng)
    meta["noise"] = noise.label
    meta["snr_db"] = snr
    if h is None:
        h = h_tilde = RoomImpulseResponse(
            np.ones(1), signal.sample_rate, "dry", "dry"
        )
    speech, scaled_noise, _ = eq1_components(signal, h, noise, h_tilde, snr, rng)
    mixed = peak_normalise(speech.samples + scaled_noise.samples)
    return AudioSignal(mixed, signal.sample_rate), speech, scaled_noise, meta


def generate_corpus(
    spec: SynthLanguageSpec,
    hours: float,
    out_dir: str,
    name: str,
    seed: int = 0,
    shift: Optional[DomainShiftSpec] = None,
    rir_pool: Optional[RirPool] = None,
    noise_pool: Optional[Sequence[NoiseClip]] = None,
    cfg: FeatureConfig = FeatureConfig(),
    speaker_offset: int = 0,
) -> Manifest:
    """
    Generate a corpus of roughly the requested duration (within 5%) and
    write audio, frame labels, the manifest ({name}.jsonl), the lexicon and
    the phone list into out_dir. Speakers take turns utterance by utterance.
    Each utterance depends only on (seed, utterance id).

    Args:
        spec (SynthLanguageSpec): Language
        hours (float): Requested duration in hours
        out_dir (str): Output directory
        name (str): Corpus name
        seed (int): Random seed. Defaults to 0.
        shift (Optional[DomainShiftSpec]): Domain shift. Defaults to None.
        rir_pool (Optional[RirPool]): Impulse responses for the shift. Defaults to None.
        noise_pool (Optional[Sequence[NoiseClip]]): Noise clips for the shift. Defaults to None.
        cfg (FeatureConfig): Framing of the label tracks. Defaults to FeatureConfig().
        speaker_offset (int): First speaker number, to keep speaker ids of corpora apart. Defaults to 0.

    Returns:
        Manifest: Manifest of the corpus
    """
    if not hours > 0:
        raise SynthError(f"Requested duration {hours} h must be positive!")
    target = hours * 3600.0
    upper = 1.05 * target
    words = sorted(spec.lexicon)
    entries = []
    total = 0.0
    number = 0
    while total < target:
        speaker_id = f"{spec.language}_spk{speaker_offset + number % spec.speaker_count:03d}"
        utterance_id = f"{name}-{number:05d}"
        rng = get_rng(seed, "utterance", utterance_id)
        no_words = int(rng.integers(*spec.utterance_length_range, endpoint=True))
        chosen = [words[int(i)] for i in rng.integers(len(words), size=no_words)]
        utterance_seed = derive_seed(seed, utterance_id)
        tilt_offset = shift.tilt_offset if shift else 0.0
        while True:
            rendered = render_utterance(
                spec,
                chosen,
                speaker_id,
                utterance_seed,
                tilt_offset,
                cfg.window,
                cfg.shift,
            )
            if total + rendered.signal.duration_s <= upper or len(chosen) == 1:
                break
            chosen = chosen[:-1]
        if total + rendered.signal.duration_s > upper:
            if total >= 0.95 * target:
                break
            raise SynthError(
                f"Cannot reach {hours} h within 5% with the given utterance lengths!"
            )
        signal = rendered.signal
        meta = {}
        if shift is not None:
            signal, _, _, meta = apply_domain_shift(
                signal,
                shift,
                get_rng(seed, "shift", utterance_id),
                rir_pool,
                noise_pool,
            )
        audio_path = abspath(join(out_dir, "audio", f"{utterance_id}.wav"))
        label_path = abspath(join(out_dir, "labels", f"{utterance_id}.txt"))
        write_wav(audio_path, signal)
        write_labels(label_path, rendered.labels)
        entries.append(
            Utterance(
                id=utterance_id,
                audio=audio_path,
                transcript=tuple(chosen),
                speaker_id=speaker_id,
                language=spec.language,
                duration_s=signal.duration_s,
                labels=label_path,
                meta=meta,
            )
        )
        total += signal.duration_s
        number += 1
    if abs(total - target) > 0.05 * target:
        raise SynthError(
            f"Generated {total:.1f} s, not within 5% of requested {target:.1f} s!"
        )
    manifest = Manifest(entries, name)
    save_manifest(manifest, join(out_dir, f"{name}.jsonl"))
    save_language(spec, out_dir)
    logger.info(
        f"Generated {name}: {len(entries)} utterances, {total / 60.0:.1f} min in {out_dir}"
    )
    return manifest


def save_language(spec: SynthLanguageSpec, out_dir: str) -> None:
    """
    Write phones.txt (one symbol per line, silence first), lexicon.json and
    inventory.json

    Args:
        spec (SynthLanguageSpec): Language
        out_dir (str): Output directory

    Returns:
        None
    """
    os.makedirs(out_dir, exist_ok=True)
    with open(join(out_dir, "phones.txt"), "w", encoding="utf-8", newline="\n") as fp:
        for phone in spec.inventory.phones:
            fp.write(f"{phone}\n")
    save_json(
        {word: " ".join(phones) for word, phones in spec.lexicon.items()},
        join(out_dir, "lexicon.json"),
        pretty=True,
        sortkeys=True,
    )
    save_json(
        spec.inventory.to_dict(), join(out_dir, "inventory.json"), pretty=True
    )


def load_phone_set(path: str) -> List[str]:
    """
    Load a phone list written by save_language

    Args:
        path (str): Path to phones.txt

    Returns:
        List[str]: Phone symbols
    """
    with open(path, encoding="utf-8") as fp:
        phones = [line.strip() for line in fp if line.strip()]
    if not phones:
        raise SynthError(f"Phone list {path} is empty!")
    return phones


def load_lexicon(path: str) -> Dict[str, Tuple[str, ...]]:
    """
    Load a lexicon written by save_language

    Args:
        path (str): Path to lexicon.json

    Returns:
        Dict[str, Tuple[str, ...]]: Mapping from word to phones
    """
    return {
        word: tuple(spelling.split()) for word, spelling in load_json(path).items()
    }


@dataclass
class BenchmarkLayout:
    """Paths of a prepared benchmark"""

    root: str
    rir_dir: str
    noise_dir: str
    source_dir: str
    target_dir: str
    domain_dir: str
    source_manifest: str
    target_manifest: str
    target_test_manifest: str
    domain_train_manifest: str
    domain_test_manifest: str

    @property
    def source_phones(self) -> str:
        return join(self.source_dir, "phones.txt")

    @property
    def target_phones(self) -> str:
        return join(self.target_dir, "phones.txt")

    @property
    def target_lexicon(self) -> str:
        return join(self.target_dir, "lexicon.json")


def prepare_benchmark(
    out_dir: str,
    seed: int = 7,
    scale: float = 1.0,
    cfg: FeatureConfig = FeatureConfig(),
) -> BenchmarkLayout:
    """
    Write the default benchmark: source language A (60 min, 20 phones),
    target language B broadcast-like training data (30 min, 16 phones) and a
    clean B test set, target-domain B data (reverberant, noisy, tilted) split
    speaker-disjointly into 3 min train and 2 min test, plus the RIR and
    noise pools. Durations are multiplied by scale.

    Args:
        out_dir (str): Output directory
        seed (int): Random seed. Defaults to 7.
        scale (float): Duration multiplier. Defaults to 1.0.
        cfg (FeatureConfig): Framing of the label tracks. Defaults to FeatureConfig().

    Returns:
        BenchmarkLayout: Paths of everything written
    """
    root = abspath(out_dir)
    rir_dir = join(root, "pools", "rir")
    noise_dir = join(root, "pools", "noise")
    rir_pool = synthesize_rir_pool(rir_dir, seed=seed)
    noise_pool = synthesize_noise_pool(noise_dir, seed=seed)
    source_inventory, target_inventory = make_inventories(seed=seed)
    source = SynthLanguageSpec(
        "A",
        source_inventory,
        make_lexicon(source_inventory, 150, seed=seed, prefix="a"),
        speaker_count=24,
        seed=seed,
    )
    target = SynthLanguageSpec(
        "B",
        target_inventory,
        make_lexicon(target_inventory, 120, seed=seed, prefix="b"),
        speaker_count=16,
        seed=seed,
    )
    source_dir = join(root, "lang_a")
    target_dir = join(root, "lang_b")
    domain_dir = join(root, "target_domain")
    generate_corpus(source, scale * 1.0, source_dir, "a_train", seed, cfg=cfg)
    generate_corpus(target, scale * 0.5, target_dir, "b_train", seed, cfg=cfg)
    generate_corpus(
        target,
        scale * 0.05,
        target_dir,
        "b_test",
        seed,
        cfg=cfg,
        speaker_offset=100,
    )
    # last two rooms are reserved for the target domain
    shift = DomainShiftSpec(
        rir_rooms=tuple(rir_pool.room_ids[-2:]),
        snr_range_db=SnrRange(5.0, 15.0),
        tilt_offset=-4.0,
    )
    domain_spec = SynthLanguageSpec(
        "B",
        target_inventory,
        target.lexicon,
        speaker_count=10,
        tilt_range=(-5.0, 5.0),
        seed=seed,
    )
    domain = generate_corpus(
        domain_spec,
        scale * 5.0 / 60.0,
        domain_dir,
        "domain_all",
        seed,
        shift=shift,
        rir_pool=rir_pool,
        noise_pool=noise_pool,
        cfg=cfg,
        speaker_offset=200,
    )
    domain_train, domain_test = split_speaker_disjoint(domain, 0.4, seed)
    domain_train_manifest = join(domain_dir, "domain_train.jsonl")
    domain_test_manifest = join(domain_dir, "domain_test.jsonl")
    save_manifest(domain_train, domain_train_manifest)
    save_manifest(domain_test, domain_test_manifest)
    return BenchmarkLayout(
        root=root,
        rir_dir=rir_dir,
        noise_dir=noise_dir,
        source_dir=source_dir,
        target_dir=target_dir,
        domain_dir=domain_dir,
        source_manifest=join(source_dir, "a_train.jsonl"),
        target_manifest=join(target_dir, "b_train.jsonl"),
        target_test_manifest=join(target_dir, "b_test.jsonl"),
        domain_train_manifest=domain_train_manifest,
        domain_test_manifest=domain_test_manifest,
    )
