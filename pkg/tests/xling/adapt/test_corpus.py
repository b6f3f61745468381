"""Corpus Tests"""

from os.path import join

import numpy as np
import pytest

from hdx.utilities.path import temp_dir
from xling.adapt.corpus import (
    AudioSignal,
    CorpusError,
    Manifest,
    Utterance,
    compute_stats,
    format_stats_row,
    load_manifest,
    read_labels,
    read_wav,
    save_manifest,
    split_speaker_disjoint,
    write_labels,
    write_wav,
)


def make_manifest(folder, name="toy", speakers=4, per_speaker=3):
    entries = []
    rng = np.random.default_rng(1)
    for s in range(speakers):
        for u in range(per_speaker):
            uid = f"{name}-{s:02d}-{u:02d}"
            samples = 0.1 * rng.standard_normal(1600 * (u + 1))
            path = join(folder, "audio", f"{uid}.wav")
            write_wav(path, AudioSignal(samples))
            entries.append(
                Utterance(
                    id=uid,
                    audio=path,
                    transcript=("w001", "w002")[: u % 2 + 1],
                    speaker_id=f"spk{s:02d}",
                    language="a",
                    duration_s=0.1 * (u + 1),
                )
            )
    return Manifest(entries, name)


class TestCorpus:
    def test_audio_signal(self):
        signal = AudioSignal([0.0, 0.5, -0.5])
        assert len(signal) == 3
        assert signal.samples.dtype == np.float64
        assert signal.duration_s == pytest.approx(3 / 16000)
        with pytest.raises(CorpusError):
            AudioSignal(np.zeros((2, 2)))
        with pytest.raises(CorpusError):
            AudioSignal([0.0, np.nan])
        with pytest.raises(CorpusError):
            AudioSignal([0.0], sample_rate=0)

    def test_wav_roundtrip_is_byte_stable(self):
        rng = np.random.default_rng(3)
        with temp_dir("test_wav", delete_on_success=True, delete_on_failure=False) as folder:
            first = join(folder, "first.wav")
            second = join(folder, "second.wav")
            write_wav(first, AudioSignal(0.3 * rng.uniform(-1, 1, 4000)))
            signal = read_wav(first)
            write_wav(second, signal)
            with open(first, "rb") as fp:
                first_bytes = fp.read()
            with open(second, "rb") as fp:
                second_bytes = fp.read()
            assert first_bytes == second_bytes
            assert read_wav(second) == signal

    def test_wav_wrong_rate(self):
        with temp_dir("test_wav_rate", delete_on_success=True, delete_on_failure=False) as folder:
            path = join(folder, "rate.wav")
            write_wav(path, AudioSignal(np.zeros(800), sample_rate=8000))
            with pytest.raises(CorpusError):
                read_wav(path)
            assert read_wav(path, sample_rate=8000).sample_rate == 8000

    def test_labels(self):
        with temp_dir("test_labels", delete_on_success=True, delete_on_failure=False) as folder:
            path = join(folder, "labels.txt")
            write_labels(path, ["sil", "p01", "p01", "sil"])
            assert read_labels(path) == ["sil", "p01", "p01", "sil"]
            with open(path, "w") as fp:
                fp.write("0:sil\n2:p01\n")
            with pytest.raises(CorpusError):
                read_labels(path)

    def test_manifest_roundtrip(self):
        with temp_dir("test_manifest", delete_on_success=True, delete_on_failure=False) as folder:
            manifest = make_manifest(folder)
            path = join(folder, "toy.jsonl")
            save_manifest(manifest, path)
            loaded = load_manifest(path, check_audio=True)
            assert loaded == manifest
            assert loaded.name == "toy"
            assert loaded.ids[0] == "toy-00-00"
            assert loaded.speakers() == ["spk00", "spk01", "spk02", "spk03"]
            with open(path) as fp:
                assert '"audio": "audio/toy-00-00.wav"' in fp.readline()

    def test_manifest_errors(self):
        with temp_dir("test_manifest_errors", delete_on_success=True, delete_on_failure=False) as folder:
            with pytest.raises(CorpusError):
                load_manifest(join(folder, "missing.jsonl"))
            path = join(folder, "bad.jsonl")
            with open(path, "w") as fp:
                fp.write('{"id": "x", "audio": "x.wav"}\n')
            with pytest.raises(CorpusError):
                load_manifest(path)
            manifest = make_manifest(folder)
            entry = manifest.entries[0]
            with pytest.raises(CorpusError):
                Manifest([entry, entry], "dupes")
            wrong = Utterance(
                id="long",
                audio=entry.audio,
                transcript=("w001",),
                speaker_id="spk",
                language="a",
                duration_s=5.0,
            )
            path = join(folder, "wrong.jsonl")
            save_manifest(Manifest([wrong], "wrong"), path)
            load_manifest(path)
            with pytest.raises(CorpusError):
                load_manifest(path, check_audio=True)
        with pytest.raises(CorpusError):
            Utterance(
                id="zero",
                audio="x.wav",
                transcript=(),
                speaker_id="spk",
                language="a",
                duration_s=0.0,
            )

    def test_stats(self):
        with temp_dir("test_stats", delete_on_success=True, delete_on_failure=False) as folder:
            manifest = make_manifest(folder, speakers=2, per_speaker=2)
        # durations 0.1, 0.2, 0.1, 0.2 and word counts 1, 2, 1, 2
        stats = compute_stats(manifest)
        assert stats.total_length_min == pytest.approx(0.6 / 60)
        assert stats.avg_segment_length_s == pytest.approx(0.15)
        assert stats.avg_words_per_segment == pytest.approx(1.5)
        assert stats.avg_words_per_second == pytest.approx(6 / 0.6)
        assert format_stats_row("Toy", stats) == "Toy | 0 | 0.1 s | 1.5 | 10.0"

    def test_split_speaker_disjoint(self):
        with temp_dir("test_split", delete_on_success=True, delete_on_failure=False) as folder:
            manifest = make_manifest(folder, speakers=5)
        train, test = split_speaker_disjoint(manifest, 0.4, seed=2)
        assert train.name == "toy_train"
        assert test.name == "toy_test"
        assert len(test.speakers()) == 2
        assert not set(train.speakers()) & set(test.speakers())
        assert len(train) + len(test) == len(manifest)
        again, _ = split_speaker_disjoint(manifest, 0.4, seed=2)
        assert again == train
        with pytest.raises(CorpusError):
            split_speaker_disjoint(manifest, 1.0, seed=2)
