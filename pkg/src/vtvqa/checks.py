"""Self-check suite behind the `check` CLI command.

Each check returns (ok, detail). They re-verify the load-bearing
invariants on fresh random instances: adapter identity at init, bias
translation invariance and scalar-path agreement, frame-local masking,
attention normalization, checkpoint round-trips and the finite-difference
gradient reports.
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch

from .entities import build_entity_sequence, parse_sample
from .evaluation import anls_score, levenshtein
from .gradcheck import SELECTORS, grad_check
from .model import (
    ModelConfig,
    VideoTextQAModel,
    frame_local_mask,
    load_checkpoint,
    save_checkpoint,
)
from .preparation import prepare_batch
from .spatial_bias import SpatialBias, SpatialBiasConfig, bias_tensor, pair_bias
from .synth import SynthConfig, dataset_digest, generate_dataset
from .temporal_adapter import TemporalAdapter, TemporalAdapterConfig
from .vocab import TokenVocab


@dataclass
class CheckResult:
    name: str
    module: str
    ok: bool
    detail: str


def _random_sequence(seed: int, T: int = 2, M: int = 3, N: int = 1):
    cfg = SynthConfig(task="spatial", num_samples=1, T=T, M=M, N=N, candidates=2, seed=seed)
    samples, _ = generate_dataset(cfg)
    sample = parse_sample(samples[0])
    return sample, build_entity_sequence(sample, M, N)


def check_adapter_identity() -> tuple[bool, str]:
    worst = 0.0
    for seed in range(20):
        torch.manual_seed(seed)
        adapter = TemporalAdapter(16, TemporalAdapterConfig(r=4))
        grid = torch.randn(3, 4, 16)
        worst = max(worst, (adapter(grid) - grid).abs().max().item())
    return worst <= 1e-12, f"max |out - in| = {worst:.2e}"


def check_adapter_locality() -> tuple[bool, str]:
    torch.manual_seed(0)
    adapter = TemporalAdapter(8, TemporalAdapterConfig(r=2))
    with torch.no_grad():
        adapter.w_up.normal_(0.0, 0.1)
    base = torch.randn(5, 6, 8)
    bumped = base.clone()
    bumped[2, 3] += 1.0
    delta = (adapter(bumped) - adapter(base)).abs().amax(dim=-1)
    outside = [
        delta[t, s].item()
        for t in range(5)
        for s in range(6)
        if abs(t - 2) > 1 or abs(s - 3) > 1
    ]
    return max(outside) == 0.0, f"max change outside kernel window = {max(outside):.2e}"


def check_bias_translation() -> tuple[bool, str]:
    worst = 0.0
    for seed in range(10):
        sample, seq = _random_sequence(seed)
        torch.manual_seed(seed)
        params = SpatialBias(4, SpatialBiasConfig())
        base = bias_tensor(seq, params)
        shift = np.array([0.01 + 0.001 * seed, -0.005])
        shifted = _shift_sequence(seq, shift)
        moved = bias_tensor(shifted, params)
        worst = max(worst, (base - moved).abs().max().item())
    return worst <= 1e-6, f"max |bias change| = {worst:.2e}"


def _shift_sequence(seq, shift):
    import copy
    from .entities import BoundingBox, VisualEntity
    from dataclasses import replace

    moved = copy.deepcopy(seq)

    def shift_box(box):
        return BoundingBox(
            min(max(box.x_tl + shift[0], 0.0), 1.0),
            min(max(box.y_tl + shift[1], 0.0), 1.0),
            min(max(box.x_br + shift[0], 0.0), 1.0),
            min(max(box.y_br + shift[1], 0.0), 1.0),
        )

    slots = []
    for ent, pad in zip(seq.slots, seq.is_padding):
        if pad:
            slots.append(ent)
            continue
        slots.append(
            replace(
                ent,
                word_box=shift_box(ent.word_box),
                line_box=shift_box(ent.line_box) if ent.line_box else None,
                para_box=shift_box(ent.para_box) if ent.para_box else None,
            )
        )
    moved.slots = slots
    return moved


def check_bias_scalar_agreement() -> tuple[bool, str]:
    worst = 0.0
    for seed in range(5):
        sample, seq = _random_sequence(seed)
        torch.manual_seed(seed)
        params = SpatialBias(2, SpatialBiasConfig(d_s=8))
        dense = bias_tensor(seq, params)
        L = len(seq)
        for i in range(L):
            for j in range(L):
                if seq.is_padding[i] or seq.is_padding[j]:
                    expected = torch.zeros(2, dtype=torch.float64)
                else:
                    ent_i, ent_j = seq.slots[i], seq.slots[j]
                    expected = pair_bias(
                        ent_i.word_box, ent_j.word_box, params.w_word, params.cfg
                    )
                    if seq.is_scene_text[i] and seq.is_scene_text[j]:
                        expected = expected + pair_bias(
                            ent_i.line_box, ent_j.line_box, params.w_line, params.cfg
                        )
                        expected = expected + pair_bias(
                            ent_i.para_box, ent_j.para_box, params.w_para, params.cfg
                        )
                worst = max(worst, (dense[:, i, j] - expected).abs().max().item())
    return worst <= 1e-9, f"max |dense - per-pair| = {worst:.2e}"


def check_frame_local_mask() -> tuple[bool, str]:
    sample, seq = _random_sequence(3, T=3, M=2, N=0)
    if seq.is_padding.any():
        return False, "expected an unpadded sequence for the count check"
    mask = frame_local_mask(seq, question_len=0)
    allowed = int(mask.sum())
    expected = seq.T * (seq.M + seq.N) ** 2
    return allowed == expected, f"allowed entity pairs = {allowed}, expected {expected}"


def _tiny_model(seed: int = 0, **overrides):
    synth = SynthConfig(task="spatial", num_samples=4, T=2, M=3, N=1, candidates=2, seed=seed)
    samples = [parse_sample(raw) for raw in generate_dataset(synth)[0]]
    vocab = TokenVocab.from_samples(samples)
    torch.manual_seed(seed)
    cfg = ModelConfig(
        d=16, d_z=8, heads=2, enc_layers=2, dec_layers=1, ffw=32, M=3, N=1,
        max_answer_len=4, **overrides,
    )
    model = VideoTextQAModel(cfg, vocab)
    return model, samples


def check_encoder_leakage() -> tuple[bool, str]:
    model, samples = _tiny_model(1)
    sample = samples[0]
    sample.question = ""
    pb = prepare_batch([sample], model.vocab, 3, 1)
    base, _ = model.encode_prepared(pb)
    bumped = parse_sample_copy_with_bumped_frame(sample)
    pb2 = prepare_batch([bumped], model.vocab, 3, 1)
    other, _ = model.encode_prepared(pb2)
    S = pb.S
    frame0 = (base[0, :S] - other[0, :S]).abs().max().item()
    return frame0 <= 1e-12, f"frame-0 output change after frame-1 edit = {frame0:.2e}"


def parse_sample_copy_with_bumped_frame(sample):
    import copy
    from dataclasses import replace
    from .entities import BoundingBox

    bumped = copy.deepcopy(sample)
    new_entities = []
    for ent in bumped.entities:
        if ent.frame_index == 1 and ent.is_scene_text:
            ent = replace(ent, text=ent.text[::-1] + "x")
        new_entities.append(ent)
    bumped.entities = new_entities
    return bumped


def check_attention_rows() -> tuple[bool, str]:
    from .attention import BiasedMultiheadAttention

    torch.manual_seed(0)
    attn = BiasedMultiheadAttention(16, 2, 8)
    x = torch.randn(5, 16)
    mask = torch.rand(5, 5) > 0.3
    mask |= torch.eye(5, dtype=torch.bool)
    _, w = attn(x, x, x, mask=mask, need_weights=True)
    sums = w.sum(dim=-1)
    err = (sums - 1).abs().max().item()
    masked_leak = w.masked_select(~mask.unsqueeze(0)).abs().max().item()
    ok = err <= 1e-6 and masked_leak == 0.0
    return ok, f"row-sum err {err:.2e}, masked weight {masked_leak:.2e}"


def check_checkpoint_roundtrip() -> tuple[bool, str]:
    model, samples = _tiny_model(2)
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "model.ckpt")
        save_checkpoint(model, path)
        clone = load_checkpoint(path)
        for (name, a), (_, b) in zip(model.state_dict().items(), clone.state_dict().items()):
            if not torch.equal(a, b):
                return False, f"tensor {name} differs after reload"
        before = model.generate(samples[0])
        after = clone.generate(samples[0])
    return before == after, f"generation before/after reload: {before} vs {after}"


def check_metrics() -> tuple[bool, str]:
    cases = [
        (levenshtein("kitten", "sitting") == 3, "levenshtein(kitten, sitting)"),
        (levenshtein("", "abc") == 3, "levenshtein('', abc)"),
        (abs(anls_score("spead", ["speed"]) - 0.8) < 1e-12, "anls spead/speed"),
        (anls_score("abc", ["xyz"]) == 0.0, "anls abc/xyz"),
    ]
    bad = [name for ok, name in cases if not ok]
    return not bad, "all metric examples hold" if not bad else f"failed: {bad}"


def check_synth_determinism() -> tuple[bool, str]:
    cfg = SynthConfig(task="spatial", num_samples=5, seed=7)
    a = dataset_digest(generate_dataset(cfg)[0])
    b = dataset_digest(generate_dataset(cfg)[0])
    c = dataset_digest(generate_dataset(SynthConfig(task="spatial", num_samples=5, seed=8))[0])
    ok = a == b and a != c
    return ok, f"same-seed digests match: {a == b}, cross-seed differ: {a != c}"


_CHECKS: list[tuple[str, str, Callable[[], tuple[bool, str]]]] = [
    ("identity-at-init", "temporal_adapter", check_adapter_identity),
    ("locality", "temporal_adapter", check_adapter_locality),
    ("translation-invariance", "spatial_bias", check_bias_translation),
    ("pairwise-oracle", "spatial_bias", check_bias_scalar_agreement),
    ("frame-local-count", "encoder_decoder", check_frame_local_mask),
    ("no-cross-frame-leakage", "encoder_decoder", check_encoder_leakage),
    ("attention-normalized", "encoder_decoder", check_attention_rows),
    ("checkpoint-roundtrip", "encoder_decoder", check_checkpoint_roundtrip),
    ("metric-examples", "evaluation", check_metrics),
    ("generator-determinism", "synth_data", check_synth_determinism),
]

_GRAD_MODULES = {
    "spatial_bias": "spatial_bias",
    "temporal_adapter": "temporal_adapter",
    "attention": "encoder_decoder",
    "feed_forward": "encoder_decoder",
    "clues": "clues_aggregation",
    "full_model": "encoder_decoder",
}


def run_checks(module: str = "all", seed: int = 0) -> list[CheckResult]:
    results: list[CheckResult] = []
    for name, mod, fn in _CHECKS:
        if module not in ("all", mod):
            continue
        try:
            ok, detail = fn()
        except Exception as exc:  # noqa: BLE001 - report, don't crash the suite
            ok, detail = False, f"raised {type(exc).__name__}: {exc}"
        results.append(CheckResult(name, mod, ok, detail))
    for selector, mod in _GRAD_MODULES.items():
        if module not in ("all", mod, selector):
            continue
        tol = 1e-3 if selector == "full_model" else 1e-4
        try:
            report = grad_check(selector, seed=seed)
            ok = report.max_rel_error < tol
            detail = f"max rel err {report.max_rel_error:.2e} (tol {tol:.0e})"
        except Exception as exc:  # noqa: BLE001
            ok, detail = False, f"raised {type(exc).__name__}: {exc}"
        results.append(CheckResult(f"grad-{selector}", mod, ok, detail))
    return results
