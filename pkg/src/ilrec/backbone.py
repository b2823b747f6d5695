"""Decoder-only causal transformer with embedding-slot injection.

Architecture (pre-norm residual blocks, learned positions, tied output head):

  x   = token/injected embeddings + positional embeddings   (assembled here)
  x  += attn(ln1(x))        with causal masking, scores / sqrt(head_dim)
  x  += ffn(ln2(x))         ffn = w2 . relu(w1 . x + b1) + b2
  h   = ln_f(x)
  logits = h @ token_embedding^T

[VISUAL] positions receive the adaptor image of the bound item's feature row
instead of a token embedding; the [REC] position receives one shared
learnable vector. Matrix weights initialize from seeded uniform(-0.02, 0.02),
offsets from zero, layer-norm gains from one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .errors import NumericError
from .features import FeatureStore
from .prompts import PromptPlan
from .seeding import subseed

INIT_SCALE = 0.02
ADAPTOR_HIDDEN = 512


@dataclass
class BackboneConfig:
    vocab_size: int
    d_model: int = 32
    n_layers: int = 2
    n_heads: int = 2
    ffn_dim: int = 64
    max_context: int = 4096
    trainable: bool = True

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")


@dataclass
class ForwardOutput:
    logits: torch.Tensor   # (T, vocab)
    hidden: torch.Tensor   # (T, d_model)


def _init_linear(linear: nn.Linear, gen: torch.Generator) -> None:
    # fan-in-scaled uniform keeps activation magnitudes healthy at step 0,
    # which matters at desk scale where runs are tens of optimizer steps
    bound = 1.0 / math.sqrt(linear.in_features)
    with torch.no_grad():
        linear.weight.uniform_(-bound, bound, generator=gen)
        if linear.bias is not None:
            linear.bias.zero_()


class Adaptor(nn.Module):
    """2-layer ReLU MLP mapping a visual feature (d_v) into model space (d)."""

    def __init__(self, feature_dim: int, d_model: int, dtype=torch.float32):
        super().__init__()
        self.feature_dim = feature_dim
        self.fc1 = nn.Linear(feature_dim, ADAPTOR_HIDDEN, dtype=dtype)
        self.fc2 = nn.Linear(ADAPTOR_HIDDEN, d_model, dtype=dtype)

    def init_params(self, gen: torch.Generator) -> None:
        _init_linear(self.fc1, gen)
        _init_linear(self.fc2, gen)

    def forward(self, v: torch.Tensor) -> torch.Tensor:
        if v.shape[-1] != self.feature_dim:
            raise ValueError(f"adaptor expects feature dim {self.feature_dim}, got {v.shape[-1]}")
        return self.fc2(torch.relu(self.fc1(v)))


def adaptor_apply(adaptor: Adaptor, v: torch.Tensor) -> torch.Tensor:
    return adaptor(v)


class RecToken(nn.Module):
    """The learnable embedding appended as the final prompt position."""

    def __init__(self, d_model: int, dtype=torch.float32):
        super().__init__()
        self.vector = nn.Parameter(torch.zeros(d_model, dtype=dtype))

    def init_params(self, gen: torch.Generator) -> None:
        with torch.no_grad():
            self.vector.uniform_(-INIT_SCALE, INIT_SCALE, generator=gen)


class _Block(nn.Module):
    def __init__(self, cfg: BackboneConfig, dtype):
        super().__init__()
        d = cfg.d_model
        self.n_heads = cfg.n_heads
        self.head_dim = d // cfg.n_heads
        self.ln1 = nn.LayerNorm(d, dtype=dtype)
        self.ln2 = nn.LayerNorm(d, dtype=dtype)
        self.q = nn.Linear(d, d, dtype=dtype)
        self.k = nn.Linear(d, d, dtype=dtype)
        self.v = nn.Linear(d, d, dtype=dtype)
        self.o = nn.Linear(d, d, dtype=dtype)
        self.ffn1 = nn.Linear(d, cfg.ffn_dim, dtype=dtype)
        self.ffn2 = nn.Linear(cfg.ffn_dim, d, dtype=dtype)

    def init_params(self, gen: torch.Generator) -> None:
        for lin in (self.q, self.k, self.v, self.o, self.ffn1, self.ffn2):
            _init_linear(lin, gen)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, t, d = x.shape
        h = self.ln1(x)
        q = self.q(h).view(b, t, self.n_heads, self.head_dim).transpose(1, 2)
        k = self.k(h).view(b, t, self.n_heads, self.head_dim).transpose(1, 2)
        v = self.v(h).view(b, t, self.n_heads, self.head_dim).transpose(1, 2)
        scores = (q @ k.transpose(-2, -1)) / math.sqrt(self.head_dim)
        causal = torch.triu(torch.ones(t, t, dtype=torch.bool, device=x.device), diagonal=1)
        scores = scores.masked_fill(causal, float("-inf"))
        attn = torch.softmax(scores, dim=-1)
        mixed = (attn @ v).transpose(1, 2).reshape(b, t, d)
        x = x + self.o(mixed)
        x = x + self.ffn2(torch.relu(self.ffn1(self.ln2(x))))
        return x


class Backbone(nn.Module):
    def __init__(self, cfg: BackboneConfig, dtype=torch.float32):
        super().__init__()
        self.cfg = cfg
        self.token_emb = nn.Embedding(cfg.vocab_size, cfg.d_model, dtype=dtype)
        self.pos_emb = nn.Embedding(cfg.max_context, cfg.d_model, dtype=dtype)
        self.blocks = nn.ModuleList(_Block(cfg, dtype) for _ in range(cfg.n_layers))
        self.ln_f = nn.LayerNorm(cfg.d_model, dtype=dtype)

    def init_params(self, gen: torch.Generator) -> None:
        with torch.no_grad():
            self.token_emb.weight.uniform_(-INIT_SCALE, INIT_SCALE, generator=gen)
            self.pos_emb.weight.uniform_(-INIT_SCALE, INIT_SCALE, generator=gen)
        for block in self.blocks:
            block.init_params(gen)
        self.set_trainable(self.cfg.trainable)

    def set_trainable(self, flag: bool) -> None:
        self.cfg.trainable = flag
        for p in self.parameters():
            p.requires_grad_(flag)

    @property
    def dtype(self) -> torch.dtype:
        return self.token_emb.weight.dtype

    def hidden_states(self, embeddings: torch.Tensor) -> torch.Tensor:
        """Final-layer hidden states; accepts (T, d) or a padded (B, T, d) batch.

        Padding, when present, must trail the real tokens: under causal
        masking trailing positions cannot touch earlier ones.
        """
        squeezed = embeddings.dim() == 2
        x = embeddings.unsqueeze(0) if squeezed else embeddings
        if x.shape[1] > self.cfg.max_context:
            raise ValueError(f"sequence length {x.shape[1]} exceeds max context {self.cfg.max_context}")
        for block in self.blocks:
            x = block(x)
        x = self.ln_f(x)
        return x.squeeze(0) if squeezed else x

    def logits(self, hidden: torch.Tensor) -> torch.Tensor:
        return hidden @ self.token_emb.weight.t()


def build_model(cfg: BackboneConfig, feature_dim: int, seed: int, dtype=torch.float32):
    """(backbone, adaptor, rec_token) with seeded deterministic initialization."""
    gen = torch.Generator().manual_seed(subseed(seed, "model-init") % (2 ** 63))
    backbone = Backbone(cfg, dtype)
    backbone.init_params(gen)
    adaptor = Adaptor(feature_dim, cfg.d_model, dtype)
    adaptor.init_params(gen)
    rec = RecToken(cfg.d_model, dtype)
    rec.init_params(gen)
    return backbone, adaptor, rec


def assemble_input_embeddings(plan: PromptPlan, backbone: Backbone, adaptor: Adaptor,
                              rec_token: RecToken, store: FeatureStore | None,
                              fallback: bool = False) -> torch.Tensor:
    """Token + positional embeddings with slot positions overridden.

    [VISUAL] positions take adaptor(feature row) + positional; with fallback
    enabled, items lacking an Img row use their JointText row (same space).
    The [REC] position takes the shared learnable vector + positional.
    """
    t = len(plan.tokens)
    if t > backbone.cfg.max_context:
        raise ValueError(f"plan length {t} exceeds max context {backbone.cfg.max_context}")
    dtype = backbone.dtype
    idx = torch.tensor(plan.tokens, dtype=torch.long)
    pos = torch.arange(t, dtype=torch.long)
    emb = backbone.token_emb(idx) + backbone.pos_emb(pos)
    overrides = {}
    for slot in plan.slots:
        if slot.kind == "VISUAL":
            if store is None:
                raise ValueError("plan has VISUAL slots but no feature store was given")
            try:
                row = store.visual_row(slot.item_id, fallback)
            except KeyError as exc:
                raise ValueError(str(exc)) from None
            vec = adaptor(torch.as_tensor(np.asarray(row), dtype=dtype))
        else:
            vec = rec_token.vector
        overrides[slot.position] = vec + backbone.pos_emb.weight[slot.position]
    if not overrides:
        return emb
    out = emb.clone()
    for position, vec in overrides.items():
        out[position] = vec
    return out


def forward(backbone: Backbone, embeddings: torch.Tensor) -> ForwardOutput:
    """Run one sequence through the stack; logits via the tied output head."""
    if embeddings.dim() != 2:
        raise ValueError("forward expects a single (T, d) sequence")
    hidden = backbone.hidden_states(embeddings)
    return ForwardOutput(backbone.logits(hidden), hidden)


def lm_nll(output: ForwardOutput, target_ids, target_mask) -> torch.Tensor:
    """Mean next-token negative log-likelihood over masked positions.

    A masked position p scores target_ids[p] under the logits at p-1, so
    position 0 can never be masked.
    """
    positions = [p for p, m in enumerate(target_mask) if m]
    if not positions:
        raise ValueError("target_mask selects no positions")
    if positions[0] == 0:
        raise ValueError("position 0 has no preceding logits; it cannot be a target")
    prev = torch.tensor([p - 1 for p in positions], dtype=torch.long)
    tgt = torch.tensor([target_ids[p] for p in positions], dtype=torch.long)
    logp = torch.log_softmax(output.logits[prev], dim=-1)
    return -logp[torch.arange(len(positions)), tgt].mean()


def last_hidden(output: ForwardOutput, position: int) -> torch.Tensor:
    if not 0 <= position < output.hidden.shape[0]:
        raise ValueError(f"position {position} out of range for length {output.hidden.shape[0]}")
    return output.hidden[position]


def named_trainable(modules: dict[str, nn.Module]) -> dict[str, nn.Parameter]:
    """Flat {group.param: tensor} map of requires-grad parameters."""
    out = {}
    for prefix, module in modules.items():
        for name, p in module.named_parameters():
            if p.requires_grad:
                out[f"{prefix}.{name}"] = p
    return out


def gradients(params: dict[str, nn.Parameter], loss_fn) -> dict[str, torch.Tensor]:
    """Exact reverse-mode gradients of loss_fn() for every given parameter.

    Parameters the loss does not touch get exact zero tensors; frozen
    parameters must simply not be passed in.
    """
    loss = loss_fn()
    if not torch.isfinite(loss):
        raise NumericError(f"non-finite loss {loss.item()!r}")
    names = list(params)
    grads = torch.autograd.grad(loss, [params[n] for n in names], allow_unused=True)
    return {n: (g.detach().clone() if g is not None else torch.zeros_like(params[n]))
            for n, g in zip(names, grads)}
