"""Combined objective, optimizer loop, freeze policy, and checkpoints.

Per step, every user in the batch contributes one alignment example and one
retrieval triple (positive = last training item, one sampled negative); the
optimized scalar is

  L_final = L_align + sum over active feature types of L_retrieval^type

with all weights fixed at one. Batch order, template draws, and negative
draws derive from (seed, step index) alone, so a run can be resumed from a
checkpoint bit-exactly.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
import torch

from . import reri
from .errors import ConfigError, NumericError
from .features import FeatureStore
from .model import ModelBundle, ModelConfig
from .prompts import MODE_IMAGE, MODES
from .risa import make_batch, risa_loss, training_pair
from .seeding import spawn_rng

LOG_COLUMNS = ("step", "L_final", "L_RISA", "L_RERI_Img", "L_RERI_CF", "L_RERI_Text", "wall_ms")

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


@dataclass
class TrainConfig:
    lr: float = 0.001
    batch_size: int = 32
    epochs: int = 5
    seed: int = 7
    active_types: tuple[str, ...] = ("Img",)
    mode: str = MODE_IMAGE
    backbone_trainable: bool = True
    patience: int = 3
    context_budget: int | None = 1024
    fallback: bool = False
    two_stage: bool = False
    val_negatives: int = 100
    # optional language-model warmup on the item-text corpus; pairs with
    # backbone_trainable=False to mimic running against a frozen pretrained LM
    pretrain_epochs: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        self.active_types = tuple(self.active_types)
        for t in self.active_types:
            if t not in reri.ACTIVE_TYPE_CHOICES:
                raise ValueError(f"unknown feature type {t!r}")


def adam_update(m: torch.Tensor, v: torch.Tensor, t: int, grad: torch.Tensor,
                lr: float, betas=ADAM_BETAS, eps: float = ADAM_EPS):
    """One bias-corrected adaptive update; returns (m, v, delta) with t >= 1."""
    b1, b2 = betas
    m = b1 * m + (1 - b1) * grad
    v = b2 * v + (1 - b2) * grad * grad
    m_hat = m / (1 - b1 ** t)
    v_hat = v / (1 - b2 ** t)
    return m, v, lr * m_hat / (torch.sqrt(v_hat) + eps)


class AdamState:
    """First/second-moment state over a named parameter map."""

    def __init__(self, params: dict[str, torch.nn.Parameter], lr: float):
        self.lr = lr
        self.t = 0
        self.m = {n: torch.zeros_like(p) for n, p in params.items()}
        self.v = {n: torch.zeros_like(p) for n, p in params.items()}

    def step(self, params: dict[str, torch.nn.Parameter], grads: dict[str, torch.Tensor]) -> None:
        self.t += 1
        with torch.no_grad():
            for name, p in params.items():
                g = grads.get(name)
                if g is None:
                    continue
                self.m[name], self.v[name], delta = adam_update(
                    self.m[name], self.v[name], self.t, g, self.lr)
                p -= delta

    def tensors(self) -> dict[str, np.ndarray]:
        out = {"adam.t": np.array([float(self.t)], dtype=np.float32)}
        for name, t in self.m.items():
            out[f"adam.m.{name}"] = t.cpu().numpy()
        for name, t in self.v.items():
            out[f"adam.v.{name}"] = t.cpu().numpy()
        return out

    def load_tensors(self, tensors: dict[str, np.ndarray]) -> None:
        self.t = int(tensors["adam.t"][0])
        for name in self.m:
            self.m[name] = torch.as_tensor(tensors[f"adam.m.{name}"].copy(),
                                           dtype=self.m[name].dtype)
            self.v[name] = torch.as_tensor(tensors[f"adam.v.{name}"].copy(),
                                           dtype=self.v[name].dtype)


@dataclass
class TrainState:
    bundle: ModelBundle
    adam: AdamState
    step: int = 0
    seed: int = 7


@dataclass
class TrainResult:
    bundle: ModelBundle
    log_rows: list[tuple] = field(default_factory=list)
    history: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_val_hit5: float = float("nan")


def eligible_users(split) -> list[str]:
    return [u for u in split.users if len(split.train[u]) >= 2]


def batch_for_step(users, seed: int, batch_size: int, step: int) -> list[str]:
    """The user batch for a global step index, derived from the seed alone.

    Each epoch is one seeded permutation of the user list, consumed in
    batch-size chunks; a resumed run therefore rebuilds exactly the batches a
    straight run would see.
    """
    spe = math.ceil(len(users) / batch_size)
    epoch, b = divmod(step, spe)
    order = spawn_rng(seed, "order", epoch).permutation(len(users))
    return [users[i] for i in order[b * batch_size:(b + 1) * batch_size]]


def combined_step(state: TrainState, user_batch, dataset, store: FeatureStore,
                  cfg: TrainConfig) -> dict[str, float]:
    """One optimizer update over the batch; returns the logged loss components.

    Components are logged in float64 and `L_final` is their float64 sum, so
    the accounting identity holds exactly in the log.
    """
    bundle = state.bundle
    split = dataset.split
    rng = spawn_rng(cfg.seed, "step", state.step)
    t0 = time.perf_counter()

    users = list(user_batch)
    batch = make_batch(users, split, dataset.items, rng, size=None, mode=cfg.mode,
                       context_budget=cfg.context_budget, voc=bundle.vocab)
    loss_risa = risa_loss(bundle.backbone, bundle.adaptor, bundle.rec, store, batch,
                          fallback=cfg.fallback)

    pairs = [training_pair(split, u) for u in users]
    prefixes = [[dataset.items[i] for i in hist] for hist, _ in pairs]
    reps = bundle.user_reprs_batched(prefixes, cfg.mode, cfg.context_budget,
                                     cfg.fallback, store, cfg.batch_size)
    catalog = dataset.catalog
    negatives = [reri.sample_negative(u, catalog, split.full_history(u), rng)
                 for u in users]

    type_losses: dict[str, torch.Tensor] = {}
    for ftype in cfg.active_types:
        terms = [reri.reri_loss(bundle.projectors, reps[i], store, pairs[i][1],
                                negatives[i], (ftype,), cfg.fallback)
                 for i in range(len(users))]
        type_losses[ftype] = torch.stack(terms).mean()

    loss = loss_risa
    for ftype in cfg.active_types:
        loss = loss + type_losses[ftype]
    if not torch.isfinite(loss):
        raise NumericError(f"non-finite loss at step {state.step}")

    params = bundle.trainable_params()
    grads = torch.autograd.grad(loss, list(params.values()), allow_unused=True)
    grad_map = {n: g for (n, _), g in zip(params.items(), grads) if g is not None}
    state.adam.step(params, grad_map)
    state.step += 1

    comps = {"L_RISA": float(loss_risa.item())}
    for ftype in ("Img", "CF", "Text"):
        comps[f"L_RERI_{ftype}"] = float(type_losses[ftype].item()) if ftype in type_losses else 0.0
    comps["L_final"] = comps["L_RISA"] + comps["L_RERI_Img"] + comps["L_RERI_CF"] + comps["L_RERI_Text"]
    comps["wall_ms"] = (time.perf_counter() - t0) * 1000.0
    return comps


def pretrain_backbone_lm(bundle: ModelBundle, dataset, cfg: TrainConfig,
                         epochs: int) -> list[float]:
    """Next-token language modeling over rendered item segments.

    Trains every backbone tensor regardless of the freeze flag; callers that
    want the frozen regime freeze after this pass. Returns per-epoch mean NLL.
    """
    from .prompts import build_item_segment

    texts = []
    for item_id in sorted(dataset.items):
        ids, _ = build_item_segment(bundle.vocab, dataset.items[item_id], "attribute")
        if len(ids) >= 2:
            texts.append(ids)
    if not texts:
        raise ConfigError("no item segments available for LM pretraining")
    params = {f"backbone.{n}": p for n, p in bundle.backbone.named_parameters()}
    for p in params.values():
        p.requires_grad_(True)
    adam = AdamState(params, cfg.lr)
    losses = []
    for epoch in range(epochs):
        order = spawn_rng(cfg.seed, "lm-pretrain", epoch).permutation(len(texts))
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            chunk = [texts[i] for i in order[start:start + cfg.batch_size]]
            width = max(len(t) for t in chunk)
            emb = torch.zeros(len(chunk), width, bundle.cfg.d_model,
                              dtype=bundle.backbone.dtype)
            for i, toks in enumerate(chunk):
                idx = torch.tensor(toks, dtype=torch.long)
                emb[i, : len(toks)] = bundle.backbone.token_emb(idx) + \
                    bundle.backbone.pos_emb(torch.arange(len(toks)))
            hidden = bundle.backbone.hidden_states(emb)
            rows, targets = [], []
            for i, toks in enumerate(chunk):
                for p in range(1, len(toks)):
                    rows.append(hidden[i, p - 1])
                    targets.append(toks[p])
            logits = bundle.backbone.logits(torch.stack(rows))
            loss = torch.nn.functional.cross_entropy(
                logits, torch.tensor(targets, dtype=torch.long))
            if not torch.isfinite(loss):
                raise NumericError("non-finite LM pretraining loss")
            grads = torch.autograd.grad(loss, list(params.values()), allow_unused=True)
            adam.step(params, {n: g for (n, _), g in zip(params.items(), grads)
                               if g is not None})
            total += float(loss.item()) * len(chunk)
        losses.append(total / len(texts))
    bundle.backbone.set_trainable(cfg.backbone_trainable)
    return losses


def _snapshot(bundle: ModelBundle) -> dict[str, torch.Tensor]:
    return {n: p.detach().clone() for n, p in bundle.named_params().items()}


def _restore(bundle: ModelBundle, snap: dict[str, torch.Tensor]) -> None:
    with torch.no_grad():
        for n, p in bundle.named_params().items():
            p.copy_(snap[n])


def validation_hit5(bundle, dataset, store, cfg: TrainConfig) -> float:
    # local import: evalbench depends on this module's config types
    from .evalbench import evaluate

    report = evaluate(bundle, dataset, store, ks=(5,), n_negatives=cfg.val_negatives,
                      seed=cfg.seed, mode=cfg.mode, context_budget=cfg.context_budget,
                      fallback=cfg.fallback, active_types=cfg.active_types, target="validation")
    return report.metrics["hit@5"]


def train(dataset, store: FeatureStore, model_cfg: ModelConfig, cfg: TrainConfig,
          log_sink=None, state: TrainState | None = None,
          total_epochs: int | None = None) -> TrainResult:
    """Epoch loop with early stopping on validation Hit@5 (best weights kept)."""
    for ftype in cfg.active_types:
        feat = {"Img": "Img", "CF": "CF", "Text": "Text"}[ftype]
        if store.get(feat) is None:
            raise ConfigError(f"active type {ftype} requires the {feat} feature matrix")
    if cfg.two_stage:
        return _train_two_stage(dataset, store, model_cfg, cfg, log_sink)

    if state is None:
        model_cfg = replace(model_cfg, backbone_trainable=cfg.backbone_trainable)
        bundle = ModelBundle.build(dataset.items, store, model_cfg, cfg.active_types, cfg.seed)
        if cfg.pretrain_epochs > 0:
            pretrain_backbone_lm(bundle, dataset, cfg, cfg.pretrain_epochs)
        state = TrainState(bundle, AdamState(bundle.trainable_params(), cfg.lr), 0, cfg.seed)
    bundle = state.bundle

    users = eligible_users(dataset.split)
    if not users:
        raise ConfigError("no user has a training prefix of length >= 2")
    steps_per_epoch = math.ceil(len(users) / cfg.batch_size)

    result = TrainResult(bundle)
    best_snap = _snapshot(bundle)
    best_val, best_epoch, since_best = -1.0, -1, 0
    end_epoch = total_epochs if total_epochs is not None else cfg.epochs
    end_step = end_epoch * steps_per_epoch

    while state.step < end_step:
        chunk = batch_for_step(users, cfg.seed, cfg.batch_size, state.step)
        comps = combined_step(state, chunk, dataset, store, cfg)
        row = (state.step, comps["L_final"], comps["L_RISA"], comps["L_RERI_Img"],
               comps["L_RERI_CF"], comps["L_RERI_Text"], comps["wall_ms"])
        result.log_rows.append(row)
        if log_sink is not None:
            log_sink(row)
        if state.step % steps_per_epoch == 0:
            epoch = state.step // steps_per_epoch - 1
            val = validation_hit5(bundle, dataset, store, cfg)
            result.history.append({"epoch": epoch, "val_hit5": val})
            if val > best_val:
                best_val, best_epoch, since_best = val, epoch, 0
                best_snap = _snapshot(bundle)
            else:
                since_best += 1
                if since_best >= cfg.patience:
                    break

    if best_epoch >= 0:
        _restore(bundle, best_snap)
    result.best_epoch = best_epoch
    result.best_val_hit5 = best_val if best_epoch >= 0 else float("nan")
    return result


def train_baseline_mode(dataset, store: FeatureStore, model_cfg: ModelConfig,
                        cfg: TrainConfig, log_sink=None) -> TrainResult:
    """Same loop with items rendered as text (attribute / description /
    image+description); the alignment objective stays active."""
    if cfg.mode == MODE_IMAGE:
        raise ConfigError("baseline-mode training expects a non-image representation mode")
    if cfg.mode in ("description", "image+description"):
        missing = [i for i, rec in dataset.items.items() if not rec.description]
        if missing:
            raise ConfigError(
                f"mode {cfg.mode!r} needs descriptions; {len(missing)} items lack one "
                f"(e.g. {missing[:3]})")
    return train(dataset, store, model_cfg, cfg, log_sink)


def _train_two_stage(dataset, store, model_cfg: ModelConfig, cfg: TrainConfig,
                     log_sink) -> TrainResult:
    """Alignment-only warmup, then retrieval-only training with the adaptor frozen."""
    stage1 = max(1, cfg.epochs // 2)
    bundle = ModelBundle.build(dataset.items, store,
                               replace(model_cfg, backbone_trainable=cfg.backbone_trainable),
                               cfg.active_types, cfg.seed)
    state = TrainState(bundle, AdamState(bundle.trainable_params(), cfg.lr), 0, cfg.seed)
    users = eligible_users(dataset.split)
    steps_per_epoch = math.ceil(len(users) / cfg.batch_size)
    result = TrainResult(bundle)

    for epoch in range(stage1):
        order = spawn_rng(cfg.seed, "order", epoch).permutation(len(users))
        for b in range(steps_per_epoch):
            chunk = [users[i] for i in order[b * cfg.batch_size:(b + 1) * cfg.batch_size]]
            rng = spawn_rng(cfg.seed, "step", state.step)
            batch = make_batch(chunk, dataset.split, dataset.items, rng, size=None,
                               mode=cfg.mode, context_budget=cfg.context_budget,
                               voc=bundle.vocab)
            loss = risa_loss(bundle.backbone, bundle.adaptor, bundle.rec, store, batch,
                             fallback=cfg.fallback)
            if not torch.isfinite(loss):
                raise NumericError(f"non-finite stage-1 loss at step {state.step}")
            params = bundle.trainable_params()
            grads = torch.autograd.grad(loss, list(params.values()), allow_unused=True)
            state.adam.step(params, {n: g for (n, _), g in zip(params.items(), grads)
                                     if g is not None})
            state.step += 1

    for p in bundle.adaptor.parameters():
        p.requires_grad_(False)
    bundle.backbone.set_trainable(False)
    stage2_cfg = replace(cfg, two_stage=False, epochs=cfg.epochs - stage1 + 1)
    stage2_state = TrainState(bundle, AdamState(bundle.trainable_params(), cfg.lr), 0, cfg.seed)
    out = train(dataset, store, model_cfg, stage2_cfg, log_sink, state=stage2_state)
    result.log_rows.extend(out.log_rows)
    result.history = out.history
    result.best_epoch = out.best_epoch
    result.best_val_hit5 = out.best_val_hit5
    return result


def save_train_state(state: TrainState, path, extra_config: dict | None = None) -> None:
    config = {"train.step": state.step, "train.seed": state.seed}
    if extra_config:
        config.update(extra_config)
    state.bundle.save(path, extra_config=config, extra_tensors=state.adam.tensors())


def load_train_state(path, lr: float) -> tuple[TrainState, dict]:
    bundle, config, extra = ModelBundle.load(path)
    adam = AdamState(bundle.trainable_params(), lr)
    if "adam.t" in extra:
        adam.load_tensors(extra)
    state = TrainState(bundle, adam, int(config.get("train.step", 0)),
                       int(config.get("train.seed", bundle.seed)))
    return state, config


def write_log_csv(rows, path, metadata: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if metadata:
            for key in sorted(metadata):
                fh.write(f"# {key}={metadata[key]}\n")
        fh.write(",".join(LOG_COLUMNS) + "\n")
        for row in rows:
            fh.write(",".join(repr(v) if isinstance(v, float) else str(v) for v in row) + "\n")
