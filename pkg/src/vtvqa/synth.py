"""Seeded synthetic video-OCR question answering tasks.

Three task families, each isolating one capability:

* spatial  - several candidate texts per frame at random positions; the
  question names a geometric relation (leftmost, above X, ...) so the
  answer is recoverable only from box geometry, never from the texts.
* tracking - anchor/answer text pairs drift across frames; in "corrupted"
  frames the answer texts are masked to [unk] while anchors are readable,
  in the remaining frames the anchors are masked instead. Within any
  single frame the question anchor and its answer are never readable
  together, so answering requires cross-frame correspondence.
* redundancy - key/value text pairs; the questioned key appears only in a
  few relevant frames while distractor frames are packed with decoy pairs.

Every generated sample is re-verified by an oracle scan of the emitted
JSON before it is returned, and identical seeds give byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
import random
import string
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .errors import ConfigError, ValidationError

UNK_WORD = "[unk]"
OBJECT_LABELS = ("sign", "car", "pole", "board", "window", "door", "light", "bus")

RELATIONS = ("leftmost", "rightmost", "topmost", "bottommost", "above", "below")


@dataclass
class SynthConfig:
    task: str = "spatial"
    num_samples: int = 200
    T: int = 4
    M: int = 6
    N: int = 2
    candidates: int = 4  # candidate texts (spatial) or instance pairs (tracking)
    alphabet_size: int = 48
    word_len_min: int = 2
    word_len_max: int = 6
    corruption_rate: float = 0.5
    relevant_frames: int = 2  # redundancy only
    relations: tuple[str, ...] = RELATIONS
    seed: int = 0

    def validate(self) -> None:
        if self.task not in ("spatial", "tracking", "redundancy"):
            raise ConfigError(f"unknown task {self.task!r}")
        if self.candidates > self.M:
            raise ConfigError(f"candidates ({self.candidates}) must be <= M ({self.M})")
        if self.task == "spatial" and self.candidates < 1:
            raise ConfigError("spatial task needs at least one candidate")
        if self.task == "tracking" and self.M < 2:
            raise ConfigError("tracking task needs M >= 2 for anchor/answer pairs")
        if not 0.0 <= self.corruption_rate <= 1.0:
            raise ConfigError("corruption_rate must be in [0, 1]")
        if self.task == "redundancy" and not 1 <= self.relevant_frames < self.T:
            raise ConfigError("redundancy needs 1 <= relevant_frames < T")
        unknown = set(self.relations) - set(RELATIONS)
        if unknown:
            raise ConfigError(f"unknown relations {sorted(unknown)}")


def word_pool(cfg: SynthConfig) -> list[str]:
    """Deterministic pool of distinct short alphanumeric words."""
    rng = random.Random(f"pool:{cfg.seed}")
    letters = string.ascii_lowercase + string.digits
    pool: list[str] = []
    seen = set()
    while len(pool) < cfg.alphabet_size:
        n = rng.randint(cfg.word_len_min, cfg.word_len_max)
        word = rng.choice(string.ascii_lowercase) + "".join(
            rng.choice(letters) for _ in range(n - 1)
        )
        if word not in seen and word != UNK_WORD and word not in OBJECT_LABELS:
            seen.add(word)
            pool.append(word)
    return pool


def _round_box(x_tl: float, y_tl: float, x_br: float, y_br: float) -> list[float]:
    return [round(x_tl, 4), round(y_tl, 4), round(x_br, 4), round(y_br, 4)]


def _boxes_overlap(a: Sequence[float], b: Sequence[float], margin: float = 0.01) -> bool:
    return not (
        a[2] + margin <= b[0]
        or b[2] + margin <= a[0]
        or a[3] + margin <= b[1]
        or b[3] + margin <= a[1]
    )


def _text_entity(text, frame, box, line_id, para_id, instance_id):
    return {
        "kind": "text",
        "text": text,
        "frame": frame,
        "box": box,
        "line_id": line_id,
        "para_id": para_id,
        "instance_id": instance_id,
    }


def _object_entities(cfg: SynthConfig, rng: random.Random, T: int) -> list[dict]:
    """Static object detections reused in every frame (pure noise)."""
    objects = []
    for j in range(cfg.N):
        label = rng.choice(OBJECT_LABELS)
        x = rng.uniform(0.05, 0.8)
        y = rng.uniform(0.05, 0.8)
        box = _round_box(x, y, x + 0.15, y + 0.15)
        objects.append((label, box, 900 + j))
    return [
        {
            "kind": "object",
            "text": label,
            "frame": t,
            "box": box,
            "instance_id": iid,
        }
        for t in range(T)
        for (label, box, iid) in objects
    ]


# ----------------------------------------------------------------------
# spatial task


def _place_candidates(cfg: SynthConfig, rng: random.Random) -> list[list[float]]:
    """Distinct non-overlapping boxes with separated top-left coordinates."""
    for _ in range(500):
        boxes = []
        for _ in range(cfg.candidates):
            x = rng.uniform(0.05, 0.8)
            y = rng.uniform(0.05, 0.85)
            w = rng.uniform(0.08, 0.12)
            h = rng.uniform(0.05, 0.08)
            boxes.append(_round_box(x, y, min(x + w, 0.98), min(y + h, 0.97)))
        separated = all(
            abs(a[0] - b[0]) >= 0.04 and abs(a[1] - b[1]) >= 0.04
            for i, a in enumerate(boxes)
            for b in boxes[i + 1 :]
        )
        if separated and not any(
            _boxes_overlap(a, b)
            for i, a in enumerate(boxes)
            for b in boxes[i + 1 :]
        ):
            return boxes
    raise ValidationError("candidate placement failed after bounded retries")


def spatial_answer_from_boxes(
    texts: Sequence[str], boxes: Sequence[Sequence[float]], relation: str, anchor: str | None
) -> str:
    """Geometric ground truth for one frame of candidates."""
    if relation == "leftmost":
        return texts[min(range(len(boxes)), key=lambda i: boxes[i][0])]
    if relation == "rightmost":
        return texts[max(range(len(boxes)), key=lambda i: boxes[i][0])]
    if relation == "topmost":
        return texts[min(range(len(boxes)), key=lambda i: boxes[i][1])]
    if relation == "bottommost":
        return texts[max(range(len(boxes)), key=lambda i: boxes[i][1])]
    anchor_idx = texts.index(anchor)
    ay = boxes[anchor_idx][1]
    if relation == "above":
        pool = [i for i in range(len(boxes)) if boxes[i][1] < ay]
        return texts[max(pool, key=lambda i: boxes[i][1])]
    if relation == "below":
        pool = [i for i in range(len(boxes)) if boxes[i][1] > ay]
        return texts[min(pool, key=lambda i: boxes[i][1])]
    raise ConfigError(f"unknown relation {relation!r}")


def _spatial_sample(cfg: SynthConfig, pool: list[str], index: int) -> tuple[dict, dict]:
    rng = random.Random(f"spatial:{cfg.seed}:{index}")
    K = cfg.candidates
    boxes = _place_candidates(cfg, rng)
    texts = rng.sample(pool, K)
    relation = rng.choice(cfg.relations)
    anchor = None
    if relation in ("above", "below"):
        if K < 2:
            relation = rng.choice(("leftmost", "rightmost"))
        else:
            order = sorted(range(K), key=lambda i: boxes[i][1])
            eligible = order[1:] if relation == "above" else order[:-1]
            anchor = texts[rng.choice(eligible)]
    answer = spatial_answer_from_boxes(texts, boxes, relation, anchor)

    entities = []
    for t in range(cfg.T):
        for i in range(K):
            entities.append(
                _text_entity(texts[i], t, boxes[i], t * 100 + i, t * 100 + i, i)
            )
    entities.extend(_object_entities(cfg, rng, cfg.T))
    question = (
        f"which text is {relation} {anchor}" if anchor else f"which text is {relation}"
    )
    sample = {
        "video_id": f"spatial-{cfg.seed}-{index}",
        "num_frames": cfg.T,
        "entities": entities,
        "question": question,
        "answers": [answer],
    }
    key = {
        "answer": answer,
        "relation": relation,
        "anchor": anchor,
        "target_entity_index": texts.index(answer),
    }
    return sample, key


def verify_spatial(sample: dict, key: dict) -> None:
    frame0 = [e for e in sample["entities"] if e["kind"] == "text" and e["frame"] == 0]
    texts = [e["text"] for e in frame0]
    boxes = [e["box"] for e in frame0]
    derived = spatial_answer_from_boxes(texts, boxes, key["relation"], key["anchor"])
    if derived != sample["answers"][0]:
        raise ValidationError(
            f"{sample['video_id']}: oracle answer {derived!r} != emitted {sample['answers'][0]!r}"
        )


# ----------------------------------------------------------------------
# tracking task


def _tracking_sample(cfg: SynthConfig, pool: list[str], index: int) -> tuple[dict, dict]:
    rng = random.Random(f"tracking:{cfg.seed}:{index}")
    pairs = min(cfg.candidates, cfg.M // 2)
    T = cfg.T
    words = rng.sample(pool, 2 * pairs)
    anchors = words[:pairs]
    answers = words[pairs:]
    band_step = 0.84 / pairs
    band_y = [round(0.06 + i * band_step, 4) for i in range(pairs)]

    n_corrupt = min(max(round(cfg.corruption_rate * T), 1), T - 1)
    corrupted = sorted(rng.sample(range(T), n_corrupt))
    target = rng.randrange(pairs)

    xs: list[list[float]] = []
    for _ in range(pairs):
        x = rng.uniform(0.05, 0.55)
        traj = [x]
        for _ in range(T - 1):
            x = min(max(x + rng.uniform(-0.02, 0.02), 0.05), 0.55)
            traj.append(x)
        xs.append([round(v, 4) for v in traj])

    entities = []
    for t in range(T):
        for i in range(pairs):
            x, y = xs[i][t], band_y[i]
            anchor_text = anchors[i] if t in corrupted else UNK_WORD
            answer_text = answers[i] if t not in corrupted else UNK_WORD
            entities.append(
                _text_entity(
                    anchor_text, t, _round_box(x, y, x + 0.10, y + 0.06),
                    t * 100 + 2 * i, t * 100 + 2 * i, 2 * i,
                )
            )
            entities.append(
                _text_entity(
                    answer_text, t, _round_box(x + 0.12, y, x + 0.22, y + 0.06),
                    t * 100 + 2 * i + 1, t * 100 + 2 * i + 1, 2 * i + 1,
                )
            )
    entities.extend(_object_entities(cfg, rng, T))
    sample = {
        "video_id": f"tracking-{cfg.seed}-{index}",
        "num_frames": T,
        "entities": entities,
        "question": f"what is next to {anchors[target]}",
        "answers": [answers[target]],
    }
    key = {
        "answer": answers[target],
        "relation": "next_to",
        "anchor": anchors[target],
        "corrupted_frames": corrupted,
        "target_entity_index": 2 * target + 1,
    }
    return sample, key


def verify_tracking(sample: dict, key: dict) -> None:
    anchor = key["anchor"]
    texts_by_instance: dict[int, set[str]] = {}
    partner_instance = None
    for ent in sample["entities"]:
        if ent["kind"] != "text":
            continue
        texts_by_instance.setdefault(ent["instance_id"], set()).add(ent["text"])
    anchor_spots = [
        e for e in sample["entities"] if e["kind"] == "text" and e["text"] == anchor
    ]
    if not anchor_spots:
        raise ValidationError(f"{sample['video_id']}: anchor {anchor!r} never readable")
    spot = anchor_spots[0]
    same_frame = [
        e
        for e in sample["entities"]
        if e["kind"] == "text"
        and e["frame"] == spot["frame"]
        and abs(e["box"][1] - spot["box"][1]) < 0.02
        and e["box"][0] > spot["box"][0]
    ]
    if not same_frame:
        raise ValidationError(f"{sample['video_id']}: anchor has no right-hand partner")
    partner_instance = min(same_frame, key=lambda e: e["box"][0])["instance_id"]
    readable = texts_by_instance[partner_instance] - {UNK_WORD}
    if readable != {sample["answers"][0]}:
        raise ValidationError(
            f"{sample['video_id']}: partner instance reads {readable}, "
            f"expected {{{sample['answers'][0]!r}}}"
        )


# ----------------------------------------------------------------------
# redundancy task


def _redundancy_sample(cfg: SynthConfig, pool: list[str], index: int) -> tuple[dict, dict]:
    rng = random.Random(f"redundancy:{cfg.seed}:{index}")
    T = cfg.T
    rows = cfg.M // 2
    n_keys = max(4, cfg.alphabet_size // 4)
    key_pool = pool[:n_keys]
    value_pool = pool[n_keys:]
    relevant = sorted(rng.sample(range(T), cfg.relevant_frames))
    query_key = rng.choice(key_pool)
    answer = rng.choice(value_pool)
    decoy_keys = [k for k in key_pool if k != query_key]
    decoy_values = [v for v in value_pool if v != answer]

    entities = []
    target_row = {t: rng.randrange(rows) for t in relevant}
    instance = 10
    for t in range(T):
        frame_keys = rng.sample(decoy_keys, rows)
        for j in range(rows):
            y = round(0.06 + j * (0.8 / rows), 4)
            x = round(rng.uniform(0.05, 0.5), 4)
            if t in relevant and j == target_row[t]:
                k_text, v_text = query_key, answer
                k_id, v_id = 0, 1
            else:
                k_text = frame_keys[j]
                v_text = rng.choice(decoy_values)
                k_id, v_id = instance, instance + 1
                instance += 2
            entities.append(
                _text_entity(k_text, t, _round_box(x, y, x + 0.10, y + 0.06),
                             t * 100 + 2 * j, t * 100 + 2 * j, k_id)
            )
            entities.append(
                _text_entity(v_text, t, _round_box(x + 0.12, y, x + 0.22, y + 0.06),
                             t * 100 + 2 * j + 1, t * 100 + 2 * j + 1, v_id)
            )
    entities.extend(_object_entities(cfg, rng, T))
    sample = {
        "video_id": f"redundancy-{cfg.seed}-{index}",
        "num_frames": T,
        "entities": entities,
        "question": f"what is next to {query_key}",
        "answers": [answer],
    }
    key = {
        "answer": answer,
        "relation": "key_value",
        "anchor": query_key,
        "relevant_frames": relevant,
        "target_entity_index": 1,
    }
    return sample, key


def verify_redundancy(sample: dict, key: dict) -> None:
    anchor = key["anchor"]
    spots = [e for e in sample["entities"] if e["kind"] == "text" and e["text"] == anchor]
    frames = sorted({e["frame"] for e in spots})
    if frames != list(key["relevant_frames"]):
        raise ValidationError(
            f"{sample['video_id']}: key {anchor!r} appears in frames {frames}, "
            f"expected exactly {key['relevant_frames']}"
        )
    for spot in spots:
        partners = [
            e
            for e in sample["entities"]
            if e["kind"] == "text"
            and e["frame"] == spot["frame"]
            and abs(e["box"][1] - spot["box"][1]) < 0.02
            and e["box"][0] > spot["box"][0]
        ]
        value = min(partners, key=lambda e: e["box"][0])["text"]
        if value != sample["answers"][0]:
            raise ValidationError(
                f"{sample['video_id']}: value next to key is {value!r}, "
                f"expected {sample['answers'][0]!r}"
            )


# ----------------------------------------------------------------------
# dataset assembly

_GENERATORS = {
    "spatial": (_spatial_sample, verify_spatial),
    "tracking": (_tracking_sample, verify_tracking),
    "redundancy": (_redundancy_sample, verify_redundancy),
}


def verify_sample(sample: dict, key: dict) -> None:
    """Re-derive the emitted answer with the task's oracle scan."""
    relation_task = {
        "next_to": "tracking",
        "key_value": "redundancy",
    }.get(key["relation"], "spatial")
    _GENERATORS[relation_task][1](sample, key)


def generate_dataset(cfg: SynthConfig) -> tuple[list[dict], list[dict]]:
    """All samples plus their answer-key records, oracle-verified."""
    cfg.validate()
    generator, verifier = _GENERATORS[cfg.task]
    pool = word_pool(cfg)
    samples, keys = [], []
    for index in range(cfg.num_samples):
        sample, key = generator(cfg, pool, index)
        verifier(sample, key)
        key = {"index": index, **key}
        samples.append(sample)
        keys.append(key)
    return samples, keys


def split_train_val(
    samples: list[dict], keys: list[dict], seed: int, ratio: float = 0.8
) -> tuple[tuple[list[dict], list[dict]], tuple[list[dict], list[dict]]]:
    """80/20 split by sample index after a seeded shuffle."""
    order = list(range(len(samples)))
    random.Random(f"split:{seed}").shuffle(order)
    cut = int(len(order) * ratio)
    def take(idx_list):
        s = [samples[i] for i in idx_list]
        k = [{**keys[i], "index": pos} for pos, i in enumerate(idx_list)]
        return s, k
    return take(order[:cut]), take(order[cut:])


def _dump_json(path: Path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(payload, sort_keys=True, separators=(",", ":")))
        fh.write("\n")


def write_datasets(cfg: SynthConfig, out_dir: str | Path) -> dict[str, Path]:
    """Write train/val splits plus answer-key sidecars; byte-stable per seed."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    samples, keys = generate_dataset(cfg)
    (train_s, train_k), (val_s, val_k) = split_train_val(samples, keys, cfg.seed)
    paths = {
        "train": out_dir / "train.json",
        "val": out_dir / "val.json",
        "train_key": out_dir / "train_key.json",
        "val_key": out_dir / "val_key.json",
    }
    _dump_json(paths["train"], train_s)
    _dump_json(paths["val"], val_s)
    _dump_json(paths["train_key"], train_k)
    _dump_json(paths["val_key"], val_k)
    return paths


def dataset_digest(samples: list[dict]) -> str:
    return hashlib.sha256(
        json.dumps(samples, sort_keys=True, separators=(",", ":")).encode()
    ).hexdigest()
