"""Answer metrics (exact-match accuracy, ANLS) and attention dumps."""

from __future__ import annotations

import csv
import json
import logging
import math
import string
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

from .entities import VideoSample
from .errors import ContractViolation
from .model import AttentionRecord, VideoTextQAModel

logger = logging.getLogger(__name__)

_PUNCT_TO_SPACE = str.maketrans({c: " " for c in string.punctuation})


def levenshtein(a: str, b: str) -> int:
    """Minimum single-character insertions/deletions/substitutions from a to b."""
    if len(a) < len(b):
        a, b = b, a
    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        current = [i]
        for j, cb in enumerate(b, start=1):
            current.append(
                min(
                    previous[j] + 1,  # delete
                    current[j - 1] + 1,  # insert
                    previous[j - 1] + (ca != cb),  # substitute
                )
            )
        previous = current
    return previous[len(b)]


def anls_score(prediction: str, answers: Sequence[str], tau: float = 0.5) -> float:
    """1 - normalized edit distance when below tau, else 0; max over answers."""
    if not answers:
        raise ContractViolation("anls_score requires at least one reference answer")
    pred = prediction.lower().strip()
    best = 0.0
    for answer in answers:
        ref = answer.lower().strip()
        denom = max(len(pred), len(ref))
        nl = levenshtein(pred, ref) / denom if denom else 0.0
        score = 1.0 - nl if nl < tau else 0.0
        best = max(best, score)
    return best


def normalize_answer(text: str) -> str:
    """Lowercase, map ASCII punctuation to spaces, collapse whitespace."""
    return " ".join(text.lower().translate(_PUNCT_TO_SPACE).split())


def vqa_accuracy(prediction: str, answers: Sequence[str]) -> int:
    """1 iff the normalized prediction equals any normalized answer."""
    pred = normalize_answer(prediction)
    return int(any(pred == normalize_answer(a) for a in answers))


@dataclass
class SampleResult:
    video_id: str
    question: str
    prediction: str
    best_answer: str
    anls: float
    correct: int


@dataclass
class EvalReport:
    accuracy: float
    anls: float
    num_samples: int
    num_failures: int
    per_sample: list[SampleResult] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "anls": self.anls,
            "num_samples": self.num_samples,
            "num_failures": self.num_failures,
            "per_sample": [asdict(r) for r in self.per_sample],
        }

    def write_json(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def evaluate(model: VideoTextQAModel, samples: Sequence[VideoSample]) -> EvalReport:
    """Greedy generation per sample plus order-independent metric means."""
    results: list[SampleResult] = []
    failures = 0
    for sample in samples:
        try:
            prediction = " ".join(model.generate(sample))
        except Exception:  # noqa: BLE001 - evaluation must survive bad samples
            logger.exception("generation failed on %s", sample.video_id)
            prediction = ""
            failures += 1
        anls_values = [anls_score(prediction, [a]) for a in sample.answers]
        best_idx = max(range(len(sample.answers)), key=lambda i: anls_values[i])
        results.append(
            SampleResult(
                video_id=sample.video_id,
                question=sample.question,
                prediction=prediction,
                best_answer=sample.answers[best_idx],
                anls=anls_score(prediction, sample.answers),
                correct=vqa_accuracy(prediction, sample.answers),
            )
        )
    n = len(results)
    accuracy = math.fsum(r.correct for r in results) / n if n else 0.0
    mean_anls = math.fsum(r.anls for r in results) / n if n else 0.0
    return EvalReport(
        accuracy=accuracy,
        anls=mean_anls,
        num_samples=n,
        num_failures=failures,
        per_sample=results,
    )


def dump_cross_attention(
    model: VideoTextQAModel, sample: VideoSample, path: str | Path
) -> AttentionRecord:
    """CSV of decoder cross-attention (last layer, head mean) per decode step."""
    record = AttentionRecord()
    model.generate(sample, record=record)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["decode_step", "memory_index", "kind", "frame_index", "entity_text", "weight"]
        )
        for step, weights in enumerate(record.decoder_steps):
            for idx, row in enumerate(record.memory_meta):
                writer.writerow(
                    [step, idx, row.kind, row.frame_index, row.text, f"{weights[idx]:.8e}"]
                )
    return record


def dump_clues_attention(record: AttentionRecord, path: str | Path) -> None:
    """CSV of clue-refinement cross-attention: (layer, clue_index, entity_index, weight)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["layer", "clue_index", "entity_index", "weight"])
        for layer, weights in record.clues_layers:
            g, l = weights.shape
            for ci in range(g):
                for ei in range(l):
                    writer.writerow([layer, ci, ei, f"{weights[ci, ei]:.8e}"])
