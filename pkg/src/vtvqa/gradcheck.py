"""Central finite-difference verification of analytic gradients.

Each selector builds a small float64 instance of one component (or the
whole model), computes autograd gradients of a scalar loss, re-derives
them by central differences with step 1e-3 and reports the maximum
relative error |a - n| / (|a| + |n| + 1e-8). Large tensors are spot
checked on a seeded subset of elements.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

import torch
from torch import Tensor

from .attention import BiasedMultiheadAttention, FeedForward
from .clues import CluesConfig, CluesModule
from .errors import ConfigError
from .model import ModelConfig, VideoTextQAModel
from .preparation import prepare_batch
from .spatial_bias import SpatialBias, SpatialBiasConfig, bias_tensor
from .synth import SynthConfig, generate_dataset
from .temporal_adapter import TemporalAdapter, TemporalAdapterConfig
from .entities import build_entity_sequence, parse_sample
from .vocab import TokenVocab

SELECTORS = (
    "spatial_bias",
    "temporal_adapter",
    "attention",
    "feed_forward",
    "clues",
    "full_model",
)

FD_STEP = 1e-3


@dataclass
class GradCheckReport:
    selector: str
    max_rel_error: float
    per_param: dict[str, float] = field(default_factory=dict)

    def worst_param(self) -> str:
        if not self.per_param:
            return "<none>"
        return max(self.per_param, key=self.per_param.get)


def _rel_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / (abs(analytic) + abs(numeric) + 1e-8)


def _check_params(
    loss_fn,
    params: dict[str, Tensor],
    seed: int,
    max_per_tensor: int = 24,
) -> GradCheckReport:
    loss = loss_fn()
    grads = torch.autograd.grad(loss, list(params.values()), allow_unused=False)
    rng = random.Random(f"gradcheck:{seed}")
    per_param: dict[str, float] = {}
    for (name, tensor), grad in zip(params.items(), grads):
        flat = tensor.view(-1)
        n = flat.numel()
        indices = range(n) if n <= max_per_tensor else sorted(rng.sample(range(n), max_per_tensor))
        worst = 0.0
        grad_flat = grad.reshape(-1)
        for idx in indices:
            original = flat[idx].item()
            with torch.no_grad():
                flat[idx] = original + FD_STEP
            plus = loss_fn().item()
            with torch.no_grad():
                flat[idx] = original - FD_STEP
            minus = loss_fn().item()
            with torch.no_grad():
                flat[idx] = original
            numeric = (plus - minus) / (2 * FD_STEP)
            worst = max(worst, _rel_error(grad_flat[idx].item(), numeric))
        per_param[name] = worst
    return GradCheckReport(
        selector="", max_rel_error=max(per_param.values()), per_param=per_param
    )


def _spatial_instance(seed: int):
    torch.manual_seed(seed)
    cfg = SynthConfig(task="spatial", num_samples=1, T=2, M=3, N=1, candidates=2, seed=seed)
    sample_dicts, _ = generate_dataset(cfg)
    sample = parse_sample(sample_dicts[0])
    seq = build_entity_sequence(sample, cfg.M, cfg.N)
    sb = SpatialBias(2, SpatialBiasConfig(d_s=8)).double()
    probe = torch.randn(2, len(seq), len(seq), dtype=torch.float64)

    def loss_fn():
        return (bias_tensor(seq, sb) * probe).sum()

    params = {f"w_{g}": sb.weight(g) for g in ("word", "line", "para")}
    return loss_fn, params


def _adapter_instance(seed: int):
    torch.manual_seed(seed)
    adapter = TemporalAdapter(8, TemporalAdapterConfig(r=2)).double()
    with torch.no_grad():
        adapter.w_up.normal_(0.0, 0.05)  # move off the zero init so the conv path is live
    grid = torch.randn(3, 4, 8, dtype=torch.float64, requires_grad=True)
    probe = torch.randn(3, 4, 8, dtype=torch.float64)

    def loss_fn():
        return (adapter(grid) * probe).sum()

    params = {
        "input": grid,
        "w_down": adapter.w_down,
        "w_up": adapter.w_up,
        "kernel": adapter.conv.weight,
        "bias": adapter.conv.bias,
    }
    return loss_fn, params


def _attention_instance(seed: int):
    torch.manual_seed(seed)
    attn = BiasedMultiheadAttention(8, 2, 4).double()
    x = torch.randn(3, 8, dtype=torch.float64, requires_grad=True)
    bias = torch.randn(2, 3, 3, dtype=torch.float64, requires_grad=True)
    mask = torch.tensor([[True, True, False], [True, True, True], [False, True, True]])
    probe = torch.randn(3, 8, dtype=torch.float64)

    def loss_fn():
        return (attn(x, x, x, bias=bias, mask=mask) * probe).sum()

    params = {"input": x, "bias": bias}
    params.update({f"attn.{k}": v for k, v in attn.named_parameters()})
    return loss_fn, params


def _feed_forward_instance(seed: int):
    torch.manual_seed(seed)
    ffn = FeedForward(8, 16).double()
    x = torch.randn(4, 8, dtype=torch.float64, requires_grad=True)
    probe = torch.randn(4, 8, dtype=torch.float64)

    def loss_fn():
        return (ffn(x) * probe).sum()

    params = {"input": x}
    params.update({f"ffn.{k}": v for k, v in ffn.named_parameters()})
    return loss_fn, params


def _clues_instance(seed: int):
    torch.manual_seed(seed)
    d, heads, d_z = 16, 2, 8
    module = CluesModule(d, heads, d_z, 32, CluesConfig(G=2, n_layers=1)).double()
    B, T, S = 1, 2, 3
    ent_emb = torch.randn(B, T, S, d, dtype=torch.float64, requires_grad=True)
    nonpad = torch.tensor([[[True, True, False], [True, True, True]]])
    ent_states = torch.randn(B, T * S, d, dtype=torch.float64, requires_grad=True)
    eligible = nonpad.view(B, T * S)
    q_states = torch.randn(B, 2, d, dtype=torch.float64, requires_grad=True)
    probe = torch.randn(B, 2, d, dtype=torch.float64)

    def loss_fn():
        out = module(ent_emb, nonpad, ent_states, eligible, q_states, None)
        return (out * probe).sum()

    params = {"ent_emb": ent_emb, "ent_states": ent_states, "q_states": q_states}
    params.update({f"clues.{k}": v for k, v in module.named_parameters()})
    return loss_fn, params


def _full_model_instance(seed: int):
    torch.manual_seed(seed)
    synth_cfg = SynthConfig(
        task="spatial", num_samples=2, T=2, M=3, N=1, candidates=2, seed=seed
    )
    sample_dicts, _ = generate_dataset(synth_cfg)
    samples = [parse_sample(raw) for raw in sample_dicts]
    vocab = TokenVocab.from_samples(samples)
    cfg = ModelConfig(
        d=16,
        d_z=8,
        heads=2,
        enc_layers=1,
        dec_layers=1,
        ffw=32,
        M=synth_cfg.M,
        N=synth_cfg.N,
        max_answer_len=4,
    )
    model = VideoTextQAModel(
        cfg,
        vocab,
        SpatialBiasConfig(d_s=8),
        TemporalAdapterConfig(r=2),
        CluesConfig(G=2, n_layers=1),
    ).double()
    with torch.no_grad():
        for layer in model.encoder:
            if layer.adapter is not None:
                layer.adapter.w_up.normal_(0.0, 0.05)
    pb = prepare_batch(samples, vocab, cfg.M, cfg.N, cfg.max_answer_len, with_targets=True)

    def loss_fn():
        return model.loss_on_batch(pb)

    params = dict(model.named_parameters())
    return loss_fn, params


_INSTANCES = {
    "spatial_bias": _spatial_instance,
    "temporal_adapter": _adapter_instance,
    "attention": _attention_instance,
    "feed_forward": _feed_forward_instance,
    "clues": _clues_instance,
    "full_model": _full_model_instance,
}


def grad_check(selector: str, seed: int = 0, max_per_tensor: int = 24) -> GradCheckReport:
    """Finite-difference gradient report for one component selector."""
    if selector not in _INSTANCES:
        raise ConfigError(f"unknown grad check selector {selector!r}; pick from {SELECTORS}")
    loss_fn, params = _INSTANCES[selector](seed)
    report = _check_params(loss_fn, params, seed=seed, max_per_tensor=max_per_tensor)
    report.selector = selector
    return report
