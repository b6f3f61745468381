"""Evaluation Tests"""

from functools import lru_cache
from os.path import join

import numpy as np
import pytest

from hdx.utilities.path import temp_dir
from xling.adapt.corpus import Manifest
from xling.adapt.evaluation import (
    EvaluationError,
    NormalizationRules,
    WerReport,
    decode_words,
    evaluate,
    format_row,
    greedy_decode,
    normalize,
    read_transcripts,
    render_table,
    score_files,
    wer,
    write_records,
)
from xling.adapt.features import FeatureConfig, SpeakerEmbeddingExtractor
from xling.adapt.nnet import desk_scale_layers, init_model


def edit_distance(reference, hypothesis):
    @lru_cache(maxsize=None)
    def distance(i, j):
        if i == 0:
            return j
        if j == 0:
            return i
        return min(
            distance(i - 1, j - 1) + (reference[i - 1] != hypothesis[j - 1]),
            distance(i - 1, j) + 1,
            distance(i, j - 1) + 1,
        )

    return distance(len(reference), len(hypothesis))


def one_hot(indices, size):
    posteriors = np.full((len(indices), size), 0.01)
    posteriors[np.arange(len(indices)), indices] = 0.9
    return posteriors


class TestEvaluation:
    def test_wer_against_brute_force(self):
        rng = np.random.default_rng(0)
        vocabulary = ["a", "b", "c", "d"]
        for _ in range(1000):
            reference = tuple(rng.choice(vocabulary, rng.integers(1, 7)))
            hypothesis = tuple(rng.choice(vocabulary, rng.integers(0, 7)))
            report = wer(reference, hypothesis)
            assert report.errors == edit_distance(reference, hypothesis)
            assert report.reference_words == len(reference)
            assert report.insertions - report.deletions == len(hypothesis) - len(
                reference
            )
            assert report.substitutions + report.deletions <= len(reference)

    def test_wer_examples(self):
        assert wer(["a", "b"], ["a", "b"]).errors == 0
        report = wer(["a", "b"], ["b", "a"])
        assert (report.substitutions, report.deletions, report.insertions) == (
            2,
            0,
            0,
        )
        report = wer(["a", "b", "c"], [])
        assert report.deletions == 3
        assert report.wer == 1.0
        report = wer(["a"], ["x", "y", "a"])
        assert report.insertions == 2
        assert report.wer == 2.0
        with pytest.raises(EvaluationError):
            wer([], ["a"])

    def test_report_pooling(self):
        pooled = WerReport(1, 0, 0, 10) + WerReport(0, 2, 1, 5)
        assert pooled == WerReport(1, 2, 1, 15)
        assert pooled.wer == pytest.approx(4 / 15)
        with pytest.raises(EvaluationError):
            WerReport(0, 0, 0, 0)

    def test_normalize(self):
        rules = NormalizationRules()
        text = "Hello, World!  It's   FINE."
        tokens = normalize(text, rules)
        assert tokens == ["hello", "world", "its", "fine"]
        assert normalize(" ".join(tokens), rules) == tokens
        keep = NormalizationRules(lowercase=False, strip_punctuation=False)
        assert normalize(text, keep) == ["Hello,", "World!", "It's", "FINE."]

    def test_greedy_decode(self):
        phones = ["sil", "a", "b"]
        posteriors = one_hot([0, 1, 1, 0, 2, 2, 1, 0], 3)
        assert greedy_decode(posteriors, phones) == ["a", "b", "a"]
        split = greedy_decode(one_hot([1, 0, 1, 1, 0, 0, 1, 2], 3), phones)
        assert split == ["a", "b"]
        assert all(x != y for x, y in zip(split, split[1:]))
        ties = np.full((2, 3), 1 / 3)
        assert greedy_decode(ties, phones) == []
        with pytest.raises(EvaluationError):
            greedy_decode(np.zeros((0, 3)), phones)
        with pytest.raises(EvaluationError):
            greedy_decode(np.zeros((2, 4)), phones)

    def test_decode_words(self):
        phones = ["sil", "a", "b", "c"]
        lexicon = {"w001": ["a", "b"], "w002": ["c"]}
        posteriors = one_hot([0, 1, 2, 2, 0, 0, 3, 0, 2, 1], 4)
        assert decode_words(posteriors, phones, lexicon) == ["w001", "w002", "b-a"]
        assert decode_words(one_hot([0, 0], 4), phones, lexicon) == []

    def test_evaluate_empty(self):
        cfg = FeatureConfig(mfcc_dim=13, embedding_dim=2)
        extractor = SpeakerEmbeddingExtractor(
            np.zeros(26), np.ones(26), np.eye(2, 26), "fp"
        )
        model = init_model(cfg.input_dim, desk_scale_layers(), ["sil", "a"], "fp")
        with pytest.raises(EvaluationError, match="empty manifest"):
            evaluate(model, extractor, Manifest([], "empty"), cfg, {"w": ["a"]})

    def test_tables(self):
        assert format_row("Oral History", 0.2591) == "Oral History | 25.91"
        table = render_table(["setup", "wer"], [["baseline", 25.912], ["x", 3.0]])
        assert table == (
            "setup    | wer\n"
            "---------+------\n"
            "baseline | 25.91\n"
            "x        | 3.00\n"
        )

    def test_files(self):
        with temp_dir("test_score_files", delete_on_success=True, delete_on_failure=False) as folder:
            reference = join(folder, "ref.txt")
            hypothesis = join(folder, "hyp.txt")
            with open(reference, "w") as fp:
                fp.write("u1 the cat sat\nu2 on the Mat.\nu3\n")
            with open(hypothesis, "w") as fp:
                fp.write("u1 the cat sat\nu2 on a mat\n")
            assert read_transcripts(reference)["u3"] == []
            report = score_files(reference, hypothesis)
            assert report == WerReport(1, 0, 0, 6)
            assert score_files(reference, reference).wer == 0.0
            with open(hypothesis, "w") as fp:
                fp.write("u1 the cat sat\n")
            assert score_files(reference, hypothesis).deletions == 3
            with open(hypothesis, "w") as fp:
                fp.write("u9 what\n")
            with pytest.raises(EvaluationError):
                score_files(reference, hypothesis)
            records = join(folder, "out", "records.jsonl")
            write_records(records, [{"WER": 0.5, "test_set": "x"}])
            with open(records) as fp:
                assert fp.read() == '{"WER": 0.5, "test_set": "x"}\n'
