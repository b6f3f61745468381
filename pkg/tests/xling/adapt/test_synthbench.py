"""Synthetic Benchmark Tests"""

from os.path import exists, join

import numpy as np
import pytest

from hdx.utilities.path import temp_dir
from xling.adapt import get_rng
from xling.adapt.corpus import compute_stats, load_manifest
from xling.adapt.dsp import (
    SnrRange,
    measure_snr_db,
    peak_normalise,
    synthesize_noise_pool,
    synthesize_rir_pool,
)
from xling.adapt.features import FeatureConfig, frame_count
from xling.adapt.synthbench import (
    DomainShiftSpec,
    PhoneInventory,
    SynthError,
    SynthLanguageSpec,
    apply_domain_shift,
    generate_corpus,
    load_lexicon,
    load_phone_set,
    make_inventories,
    make_lexicon,
    render_phone,
    render_utterance,
)


class TestSynthbench:
    @pytest.fixture(scope="class")
    def inventories(self):
        return make_inventories(source_size=10, target_size=8, shared=4, seed=3)

    @pytest.fixture(scope="class")
    def language(self, inventories):
        _, target = inventories
        return SynthLanguageSpec(
            "B",
            target,
            make_lexicon(target, 30, seed=3, prefix="b"),
            speaker_count=4,
            seed=3,
        )

    def test_inventories(self, inventories):
        source, target = inventories
        assert len(source.phones) == 11
        assert len(target.phones) == 9
        assert source.phones[0] == target.phones[0] == "sil"
        shared = set(source.phones) & set(target.phones)
        assert len(shared) == 5
        for phone in shared:
            assert source.prototypes[phone] == target.prototypes[phone]
        assert PhoneInventory.from_dict(target.to_dict()) == target
        with pytest.raises(SynthError):
            make_inventories(source_size=4, target_size=4, shared=5)

    def test_lexicon(self, inventories):
        _, target = inventories
        lexicon = make_lexicon(target, 40, seed=1, prefix="b")
        assert sorted(lexicon)[:2] == ["b000", "b001"]
        spellings = list(lexicon.values())
        assert len(set(spellings)) == 40
        for spelling in spellings:
            assert 2 <= len(spelling) <= 4
            assert "sil" not in spelling
            assert all(a != b for a, b in zip(spelling, spelling[1:]))
        assert make_lexicon(target, 40, seed=1, prefix="b") == lexicon

    def test_render_phone(self, inventories):
        source, _ = inventories
        silence = render_phone(source, "sil", 0.0, seed=1)
        assert np.sqrt(np.mean(silence.samples**2)) < 1e-3
        phone = source.speech_phones[0]
        rendered = render_phone(source, phone, 0.0, seed=1)
        prototype = source.prototypes[phone]
        nominal = prototype.duration_ms * 16
        assert 0.85 * nominal - 1 <= len(rendered) <= 1.15 * nominal + 1
        assert np.max(np.abs(rendered.samples)) == pytest.approx(0.5)
        spectrum = np.abs(np.fft.rfft(rendered.samples))
        peak = np.fft.rfftfreq(len(rendered), 1 / 16000)[np.argmax(spectrum)]
        assert abs(peak - prototype.freqs[0]) <= 2 * 16000 / len(rendered)
        assert render_phone(source, phone, 0.0, seed=1) == rendered
        with pytest.raises(SynthError):
            render_phone(source, "zz", 0.0, seed=1)

    def test_render_utterance(self, language):
        words = ["b000", "b001"]
        rendered = render_utterance(language, words, "B_spk000", seed=5)
        spelling = language.lexicon["b000"] + language.lexicon["b001"]
        assert [p for p in rendered.phones if p != "sil"] == list(spelling)
        assert rendered.phones[0] == rendered.phones[-1] == "sil"
        assert rendered.boundaries[-1] == len(rendered.signal)
        assert len(rendered.labels) == frame_count(len(rendered.signal), 400, 160)
        for frame, label in enumerate(rendered.labels):
            centre = frame * 160 + 200
            owner = np.searchsorted(rendered.boundaries[1:], centre, side="right")
            assert label == rendered.phones[owner]
        with pytest.raises(SynthError):
            render_utterance(language, ["nope"], "B_spk000", seed=5)

    def test_domain_shift(self, language):
        with temp_dir("test_domain_shift", delete_on_success=True, delete_on_failure=False) as folder:
            rirs = synthesize_rir_pool(join(folder, "rir"), no_rooms=3, seed=2)
            noise = synthesize_noise_pool(
                join(folder, "noise"), no_clips=3, duration_s=1.0, seed=2
            )
        clean = render_utterance(language, ["b002", "b003"], "B_spk001", seed=2).signal
        shift = DomainShiftSpec(
            rir_rooms=("room02",), snr_range_db=SnrRange(5.0, 15.0), tilt_offset=-4
        )
        for trial in range(5):
            shifted, speech, scaled, meta = apply_domain_shift(
                clean, shift, get_rng(trial), rirs, noise
            )
            assert len(shifted) == len(clean)
            assert meta["rir"].startswith("room02/")
            assert 5.0 <= meta["snr_db"] <= 15.0
            assert measure_snr_db(speech, scaled) == pytest.approx(
                meta["snr_db"], abs=0.01
            )
            assert np.array_equal(
                shifted.samples, peak_normalise(speech.samples + scaled.samples)
            )
            assert np.max(np.abs(shifted.samples)) <= 1.0
        dry, speech, scaled, meta = apply_domain_shift(
            clean, DomainShiftSpec(reverb=False), get_rng(0)
        )
        assert dry is clean and speech is None and meta == {}
        with pytest.raises(SynthError):
            DomainShiftSpec(snr_range_db=SnrRange(5.0, 5.0))
        with pytest.raises(SynthError):
            apply_domain_shift(clean, shift, get_rng(0))

    def test_generate_corpus(self, language):
        with temp_dir("test_generate_corpus", delete_on_success=True, delete_on_failure=False) as folder:
            first = generate_corpus(language, 0.01, join(folder, "one"), "b_tiny", seed=4)
            second = generate_corpus(language, 0.01, join(folder, "two"), "b_tiny", seed=4)
            total = compute_stats(first).total_length_min * 60
            assert 0.95 * 36 <= total <= 1.05 * 36
            assert first.ids == second.ids
            assert first.ids[0] == "b_tiny-00000"
            assert first.entries[1].speaker_id == "B_spk001"
            for one, two in zip(first, second):
                assert one.transcript == two.transcript
                assert one.load_audio() == two.load_audio()
                assert len(one.load_labels()) == frame_count(
                    len(one.load_audio()), 400, 160
                )
            assert load_manifest(join(folder, "one", "b_tiny.jsonl")) == first
            phones = load_phone_set(join(folder, "one", "phones.txt"))
            assert phones == list(language.inventory.phones)
            assert load_lexicon(join(folder, "one", "lexicon.json")) == language.lexicon
            assert exists(join(folder, "one", "inventory.json"))
            other = generate_corpus(language, 0.01, join(folder, "three"), "b_tiny", seed=5)
            assert other.entries[0].transcript != first.entries[0].transcript or (
                other.entries[0].load_audio() != first.entries[0].load_audio()
            )
            with pytest.raises(SynthError):
                generate_corpus(language, 0, join(folder, "four"), "none")

    def test_generate_shifted_corpus(self, language):
        with temp_dir("test_generate_shifted", delete_on_success=True, delete_on_failure=False) as folder:
            rirs = synthesize_rir_pool(join(folder, "rir"), no_rooms=2, seed=2)
            noise = synthesize_noise_pool(
                join(folder, "noise"), no_clips=2, duration_s=1.0, seed=2
            )
            shift = DomainShiftSpec(snr_range_db=SnrRange(5.0, 15.0))
            corpus = generate_corpus(
                language,
                0.005,
                join(folder, "domain"),
                "domain",
                seed=1,
                shift=shift,
                rir_pool=rirs,
                noise_pool=noise,
                cfg=FeatureConfig(),
                speaker_offset=200,
            )
            assert corpus.entries[0].speaker_id == "B_spk200"
            for entry in corpus:
                assert 5.0 <= entry.meta["snr_db"] <= 15.0
                assert "rir" in entry.meta
