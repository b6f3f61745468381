"""Greedy decoding, text normalisation, word error rate and reports"""

import json
import logging
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .corpus import Manifest, Utterance
from .features import FeatureConfig, SpeakerEmbeddingExtractor, featurize
from .nnet import AcousticModel, forward

logger = logging.getLogger(__name__)

SILENCE = "sil"
_PUNCTUATION = re.compile(r"[^\w\s]", re.UNICODE)


class EvaluationError(Exception):
    pass


@dataclass(frozen=True)
class NormalizationRules:
    lowercase: bool = True
    strip_punctuation: bool = True


@dataclass(frozen=True)
class WerReport:
    """Edit counts of an alignment. Adding reports pools their counts.

    Args:
        substitutions (int): Substituted words
        deletions (int): Deleted words
        insertions (int): Inserted words
        reference_words (int): Words in the reference
    """

    substitutions: int
    deletions: int
    insertions: int
    reference_words: int

    def __post_init__(self) -> None:
        if self.reference_words < 1:
            raise EvaluationError("Reference has no words!")
        if min(self.substitutions, self.deletions, self.insertions) < 0:
            raise EvaluationError("Edit counts must not be negative!")

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    @property
    def wer(self) -> float:
        return self.errors / self.reference_words

    def __add__(self, other: "WerReport") -> "WerReport":
        return WerReport(
            self.substitutions + other.substitutions,
            self.deletions + other.deletions,
            self.insertions + other.insertions,
            self.reference_words + other.reference_words,
        )


def greedy_decode(
    posteriors: np.ndarray, phone_set: Sequence[str], silence: str = SILENCE
) -> List[str]:
    """
    Per-frame argmax (ties to the lowest phone index), repeats collapsed,
    silence dropped and repeats that silence separated collapsed again

    Args:
        posteriors (np.ndarray): Posteriors of shape (frames, len(phone_set))
        phone_set (Sequence[str]): Phone symbols
        silence (str): Silence symbol. Defaults to "sil".

    Returns:
        List[str]: Decoded phones
    """
    tokens = []
    for token in _collapse(posteriors, phone_set):
        if token != silence and (not tokens or tokens[-1] != token):
            tokens.append(token)
    return tokens


def _collapse(posteriors: np.ndarray, phone_set: Sequence[str]) -> List[str]:
    posteriors = np.asarray(posteriors)
    if posteriors.ndim != 2 or posteriors.shape[0] == 0:
        raise EvaluationError("Cannot decode an empty posterior matrix!")
    if posteriors.shape[1] != len(phone_set):
        raise EvaluationError(
            f"Posteriors have {posteriors.shape[1]} columns for {len(phone_set)} phones!"
        )
    tokens = []
    for index in np.argmax(posteriors, axis=1):
        token = phone_set[int(index)]
        if not tokens or tokens[-1] != token:
            tokens.append(token)
    return tokens


def decode_words(
    posteriors: np.ndarray,
    phone_set: Sequence[str],
    lexicon: Mapping[str, Sequence[str]],
    silence: str = SILENCE,
) -> List[str]:
    """
    Greedy phone decode split into words at silences. A spelling found in
    the lexicon becomes its word; any other spelling becomes its phones
    joined by "-".

    Args:
        posteriors (np.ndarray): Posteriors of shape (frames, len(phone_set))
        phone_set (Sequence[str]): Phone symbols
        lexicon (Mapping[str, Sequence[str]]): Word spellings
        silence (str): Silence symbol. Defaults to "sil".

    Returns:
        List[str]: Decoded words
    """
    reverse = {tuple(spelling): word for word, spelling in lexicon.items()}
    words = []
    segment: List[str] = []
    for token in _collapse(posteriors, phone_set) + [silence]:
        if token != silence:
            segment.append(token)
            continue
        if segment:
            words.append(reverse.get(tuple(segment), "-".join(segment)))
            segment = []
    return words


def normalize(
    text: str, rules: NormalizationRules = NormalizationRules()
) -> List[str]:
    """
    Split text into normalised tokens

    Args:
        text (str): Text
        rules (NormalizationRules): Rules. Defaults to NormalizationRules().

    Returns:
        List[str]: Tokens
    """
    if rules.lowercase:
        text = text.lower()
    if rules.strip_punctuation:
        text = _PUNCTUATION.sub("", text)
    return text.split()


def wer(reference: Sequence[str], hypothesis: Sequence[str]) -> WerReport:
    """
    Align hypothesis to reference with unit edit costs. Among equally cheap
    alignments, substitutions are preferred to deletions and deletions to
    insertions.

    Args:
        reference (Sequence[str]): Reference tokens
        hypothesis (Sequence[str]): Hypothesis tokens

    Returns:
        WerReport: Edit counts
    """
    n, m = len(reference), len(hypothesis)
    if n == 0:
        raise EvaluationError("Reference has no words!")
    cost = np.zeros((n + 1, m + 1), dtype=np.int64)
    cost[:, 0] = np.arange(n + 1)
    cost[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            diagonal = cost[i - 1, j - 1] + (reference[i - 1] != hypothesis[j - 1])
            cost[i, j] = min(diagonal, cost[i - 1, j] + 1, cost[i, j - 1] + 1)
    substitutions = deletions = insertions = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0:
            mismatch = reference[i - 1] != hypothesis[j - 1]
            if cost[i, j] == cost[i - 1, j - 1] + mismatch:
                substitutions += int(mismatch)
                i -= 1
                j -= 1
                continue
        if i > 0 and cost[i, j] == cost[i - 1, j] + 1:
            deletions += 1
            i -= 1
        else:
            insertions += 1
            j -= 1
    return WerReport(substitutions, deletions, insertions, n)


@dataclass(frozen=True)
class EvaluationResult:
    """Corpus-level result on one test set"""

    test_set: str
    report: WerReport
    frame_accuracy: float
    frames: int
    utterances: int

    def to_record(self) -> Dict:
        return {
            "test_set": self.test_set,
            "S": self.report.substitutions,
            "D": self.report.deletions,
            "I": self.report.insertions,
            "N": self.report.reference_words,
            "WER": self.report.wer,
            "frame_acc": self.frame_accuracy,
        }


def _score_utterance(
    m: AcousticModel,
    extractor: SpeakerEmbeddingExtractor,
    utterance: Utterance,
    cfg: FeatureConfig,
    lexicon: Mapping[str, Sequence[str]],
    rules: NormalizationRules,
    override_fingerprint: bool,
) -> Tuple[WerReport, int, int]:
    if utterance.labels is None:
        raise EvaluationError(f"Utterance {utterance.id} has no frame labels!")
    inputs = featurize(utterance, extractor, cfg, m.fingerprint, override_fingerprint)
    labels = utterance.load_labels()
    if len(labels) != inputs.frames:
        raise EvaluationError(
            f"Utterance {utterance.id} has {len(labels)} labels for {inputs.frames} frames!"
        )
    posteriors = forward(m, inputs)
    predicted = np.argmax(posteriors, axis=1)
    index = m.phone_index
    correct = sum(
        int(index.get(label, -1) == guess) for label, guess in zip(labels, predicted)
    )
    reference = normalize(" ".join(utterance.transcript), rules)
    hypothesis = normalize(
        " ".join(decode_words(posteriors, m.phone_set, lexicon)), rules
    )
    report = wer(reference, hypothesis)
    logger.debug(f"{utterance.id}: {report.errors}/{report.reference_words} errors")
    return report, correct, len(labels)


def evaluate(
    m: AcousticModel,
    extractor: SpeakerEmbeddingExtractor,
    test: Manifest,
    cfg: FeatureConfig,
    lexicon: Mapping[str, Sequence[str]],
    rules: NormalizationRules = NormalizationRules(),
    override_fingerprint: bool = False,
    jobs: int = 1,
) -> EvaluationResult:
    """
    Decode a test set and pool the word error counts of all utterances.
    Frame accuracy is the fraction of frames whose argmax is the label.

    Args:
        m (AcousticModel): Model
        extractor (SpeakerEmbeddingExtractor): Embedding extractor
        test (Manifest): Test set with transcripts and frame labels
        cfg (FeatureConfig): Feature configuration
        lexicon (Mapping[str, Sequence[str]]): Word spellings
        rules (NormalizationRules): Normalisation rules. Defaults to NormalizationRules().
        override_fingerprint (bool): Allow an extractor the model was not trained with. Defaults to False.
        jobs (int): Worker threads. Defaults to 1.

    Returns:
        EvaluationResult: Pooled result
    """
    if len(test) == 0:
        raise EvaluationError("Cannot evaluate an empty manifest!")
    if extractor.fingerprint != m.fingerprint and not override_fingerprint:
        raise EvaluationError(
            f"Extractor {extractor.fingerprint} does not match model fingerprint {m.fingerprint}!"
        )

    def score(utterance: Utterance) -> Tuple[WerReport, int, int]:
        return _score_utterance(
            m, extractor, utterance, cfg, lexicon, rules, override_fingerprint
        )

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as executor:
            results = list(executor.map(score, test))
    else:
        results = [score(utterance) for utterance in test]
    report = results[0][0]
    for result in results[1:]:
        report = report + result[0]
    correct = sum(result[1] for result in results)
    frames = sum(result[2] for result in results)
    evaluation = EvaluationResult(
        test.name, report, correct / frames, frames, len(results)
    )
    logger.info(
        f"{test.name}: WER {100 * report.wer:.2f}%, frame accuracy {100 * evaluation.frame_accuracy:.2f}%"
    )
    return evaluation


def format_row(name: str, value: float) -> str:
    """Table row of a WER given as a ratio, e.g. "Oral History | 25.91" """
    return f"{name} | {100 * value:.2f}"


def render_table(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    """
    Plain-text table with columns padded to a common width. Floats are shown
    with two decimals.

    Args:
        header (Sequence[str]): Column titles
        rows (Sequence[Sequence]): Rows

    Returns:
        str: Table
    """
    cells = [list(header)] + [
        [f"{value:.2f}" if isinstance(value, float) else str(value) for value in row]
        for row in rows
    ]
    widths = [max(len(row[i]) for row in cells) for i in range(len(header))]
    lines = [
        " | ".join(cell.ljust(width) for cell, width in zip(row, widths)).rstrip()
        for row in cells
    ]
    lines.insert(1, "-+-".join("-" * width for width in widths))
    return "\n".join(lines) + "\n"


def write_records(path: str, records: Sequence[Dict]) -> None:
    """
    Write records as newline-delimited JSON

    Args:
        path (str): Output path
        records (Sequence[Dict]): Records

    Returns:
        None
    """
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fp:
        for record in records:
            fp.write(json.dumps(record, sort_keys=True))
            fp.write("\n")


def read_transcripts(path: str) -> Dict[str, List[str]]:
    """
    Read a transcript file of "utterance_id word word ..." lines

    Args:
        path (str): Transcript file

    Returns:
        Dict[str, List[str]]: Words per utterance
    """
    transcripts = {}
    with open(path, encoding="utf-8") as fp:
        for line in fp:
            parts = line.split(maxsplit=1)
            if not parts:
                continue
            transcripts[parts[0]] = parts[1].split() if len(parts) > 1 else []
    return transcripts


def score_files(
    reference_path: str,
    hypothesis_path: str,
    rules: NormalizationRules = NormalizationRules(),
) -> WerReport:
    """
    Pooled WER of a hypothesis transcript file against a reference file.
    Utterances missing from the hypothesis count as fully deleted.

    Args:
        reference_path (str): Reference transcripts
        hypothesis_path (str): Hypothesis transcripts
        rules (NormalizationRules): Normalisation rules. Defaults to NormalizationRules().

    Returns:
        WerReport: Pooled report
    """
    references = read_transcripts(reference_path)
    hypotheses = read_transcripts(hypothesis_path)
    unknown = sorted(set(hypotheses) - set(references))
    if unknown:
        raise EvaluationError(f"Hypotheses for unknown utterances: {unknown[:5]}")
    report: Optional[WerReport] = None
    for utterance_id, words in references.items():
        reference = normalize(" ".join(words), rules)
        if not reference:
            continue
        hypothesis = normalize(" ".join(hypotheses.get(utterance_id, [])), rules)
        result = wer(reference, hypothesis)
        report = result if report is None else report + result
    if report is None:
        raise EvaluationError(f"No reference words in {reference_path}!")
    return report
