"""Model bundle: vocabulary, backbone, adaptor, [REC] token, projectors.

The bundle owns construction order and seeding so that identical
(config, seed) pairs always materialize bit-identical parameters, and it
round-trips through the ILRCKPT1 checkpoint container.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np
import torch

from . import backbone as B, reri, templates
from .checkpoint import load_checkpoint, save_checkpoint
from .data import ItemRecord
from .errors import ConfigError, FormatError
from .features import CF, IMG, TEXT, FeatureStore
from .prompts import MODE_IMAGE, build_rec_plan
from .seeding import subseed
from .vocab import Vocabulary, build_vocab

FEATURE_OF_TYPE = {"Img": IMG, "CF": CF, "Text": TEXT}


@dataclass
class ModelConfig:
    d_model: int = 32
    n_layers: int = 2
    n_heads: int = 2
    ffn_dim: int = 64
    max_context: int = 4096
    d_s: int = 64
    vocab_max: int = 8192
    backbone_trainable: bool = True


def vocab_corpus(items: dict[str, ItemRecord]) -> list[str]:
    """Item text plus every fixed prompt string, in deterministic order."""
    corpus = []
    for item_id in sorted(items):
        rec = items[item_id]
        corpus.extend([rec.title, rec.brand, rec.category, rec.description])
    corpus.append(templates.HISTORY_PREAMBLE)
    corpus.append(templates.REC_INSTRUCTION)
    for idx in range(len(templates.DEFAULT_TEMPLATES)):
        corpus.append(templates.DEFAULT_TEMPLATES.question(idx)[1])
    for prop in templates.PROPERTIES:
        corpus.append(templates.render_answer(prop, ""))
    return corpus


class ModelBundle:
    def __init__(self, voc: Vocabulary, cfg: ModelConfig, backbone: B.Backbone,
                 adaptor: B.Adaptor, rec: B.RecToken, projectors: reri.Projectors,
                 feature_dims: dict[str, int], seed: int):
        self.vocab = voc
        self.cfg = cfg
        self.backbone = backbone
        self.adaptor = adaptor
        self.rec = rec
        self.projectors = projectors
        self.feature_dims = dict(feature_dims)
        self.seed = seed

    # -- construction ------------------------------------------------------

    @classmethod
    def build(cls, items: dict[str, ItemRecord], store: FeatureStore,
              cfg: ModelConfig, active_types, seed: int,
              dtype=torch.float32) -> "ModelBundle":
        voc = build_vocab(vocab_corpus(items), cfg.vocab_max)
        feature_dims = {}
        for ftype in active_types:
            feat = FEATURE_OF_TYPE.get(ftype)
            if feat is None:
                raise ConfigError(f"unknown active feature type {ftype!r}")
            matrix = store.get(feat)
            if matrix is None:
                raise ConfigError(f"feature store lacks the {feat} matrix required by type {ftype!r}")
            feature_dims[ftype] = matrix.dim
        img = store.get(IMG)
        visual_dim = img.dim if img is not None else feature_dims.get("Img", cfg.d_model)
        bb_cfg = B.BackboneConfig(len(voc), cfg.d_model, cfg.n_layers, cfg.n_heads,
                                  cfg.ffn_dim, cfg.max_context, cfg.backbone_trainable)
        backbone, adaptor, rec = B.build_model(bb_cfg, visual_dim, seed, dtype)
        projectors = reri.Projectors(cfg.d_model, feature_dims, cfg.d_s, dtype)
        gen = torch.Generator().manual_seed(subseed(seed, "proj-init") % (2 ** 63))
        projectors.init_params(gen)
        return cls(voc, cfg, backbone, adaptor, rec, projectors, feature_dims, seed)

    # -- parameter access ---------------------------------------------------

    def modules(self) -> dict[str, torch.nn.Module]:
        return {"backbone": self.backbone, "adaptor": self.adaptor,
                "rec": self.rec, "proj": self.projectors}

    def named_params(self) -> dict[str, torch.nn.Parameter]:
        out = {}
        for prefix, module in self.modules().items():
            for name, p in module.named_parameters():
                out[f"{prefix}.{name}"] = p
        return out

    def trainable_params(self) -> dict[str, torch.nn.Parameter]:
        return {n: p for n, p in self.named_params().items() if p.requires_grad}

    # -- prompt-level helpers ------------------------------------------------

    def user_repr(self, prefix_items, mode: str = MODE_IMAGE,
                  context_budget: int | None = None, fallback: bool = False,
                  store: FeatureStore | None = None) -> torch.Tensor:
        return reri.user_repr(self.vocab, self.backbone, self.adaptor, self.rec,
                              store, prefix_items, mode, context_budget, fallback)

    def user_reprs_batched(self, prefixes, mode: str, context_budget: int | None,
                           fallback: bool, store: FeatureStore | None,
                           batch_size: int = 32) -> torch.Tensor:
        """h([REC]) rows for many users; fixed batching keeps runs reproducible."""
        reps = []
        for start in range(0, len(prefixes), batch_size):
            chunk = prefixes[start:start + batch_size]
            plans = [build_rec_plan(self.vocab, p, mode, context_budget) for p in chunk]
            embs = [B.assemble_input_embeddings(pl, self.backbone, self.adaptor,
                                                self.rec, store, fallback) for pl in plans]
            width = max(e.shape[0] for e in embs)
            stacked = torch.zeros(len(embs), width, embs[0].shape[1], dtype=embs[0].dtype)
            for i, e in enumerate(embs):
                stacked[i, : e.shape[0]] = e
            hidden = self.backbone.hidden_states(stacked)
            for i, plan in enumerate(plans):
                reps.append(hidden[i, plan.rec_position])
        return torch.stack(reps)

    # -- persistence ---------------------------------------------------------

    def save(self, path, extra_config: dict | None = None,
             extra_tensors: dict | None = None) -> None:
        config = {
            "format": "bundle-v1",
            "seed": self.seed,
            "vocab": " ".join(self.vocab.words),
            "visual_dim": self.adaptor.feature_dim,
            "feature_dims": ",".join(f"{k}:{v}" for k, v in sorted(self.feature_dims.items())),
        }
        for key, value in asdict(self.cfg).items():
            config[f"model.{key}"] = value
        if extra_config:
            config.update(extra_config)
        tensors = {name: p.detach().cpu().numpy() for name, p in self.named_params().items()}
        if extra_tensors:
            tensors.update({k: v for k, v in extra_tensors.items()})
        save_checkpoint(path, config, tensors)

    @classmethod
    def load(cls, path, dtype=torch.float32):
        """Rebuild a bundle from a checkpoint; returns (bundle, config, extra tensors)."""
        config, tensors = load_checkpoint(path)
        if config.get("format") != "bundle-v1":
            raise FormatError(f"{path}: not a model bundle checkpoint")

        def as_bool(text):
            return text == "True" or text == "true"

        cfg = ModelConfig(
            d_model=int(config["model.d_model"]),
            n_layers=int(config["model.n_layers"]),
            n_heads=int(config["model.n_heads"]),
            ffn_dim=int(config["model.ffn_dim"]),
            max_context=int(config["model.max_context"]),
            d_s=int(config["model.d_s"]),
            vocab_max=int(config["model.vocab_max"]),
            backbone_trainable=as_bool(config["model.backbone_trainable"]),
        )
        voc = Vocabulary(config["vocab"].split())
        feature_dims = {}
        if config["feature_dims"]:
            for part in config["feature_dims"].split(","):
                key, _, dim = part.partition(":")
                feature_dims[key] = int(dim)
        seed = int(config["seed"])
        bb_cfg = B.BackboneConfig(len(voc), cfg.d_model, cfg.n_layers, cfg.n_heads,
                                  cfg.ffn_dim, cfg.max_context, cfg.backbone_trainable)
        backbone = B.Backbone(bb_cfg, dtype)
        visual_dim = int(config.get("visual_dim", feature_dims.get("Img", cfg.d_model)))
        adaptor = B.Adaptor(visual_dim, cfg.d_model, dtype)
        rec = B.RecToken(cfg.d_model, dtype)
        projectors = reri.Projectors(cfg.d_model, feature_dims, cfg.d_s, dtype)
        bundle = cls(voc, cfg, backbone, adaptor, rec, projectors, feature_dims, seed)

        params = bundle.named_params()
        extra = {}
        with torch.no_grad():
            for name, arr in tensors.items():
                if name in params:
                    p = params[name]
                    if tuple(p.shape) != arr.shape:
                        raise FormatError(
                            f"{path}: tensor {name} has shape {arr.shape}, expected {tuple(p.shape)}")
                    p.copy_(torch.as_tensor(np.ascontiguousarray(arr), dtype=dtype))
                else:
                    extra[name] = arr
        missing = set(params) - set(tensors)
        if missing:
            raise FormatError(f"{path}: checkpoint is missing tensors {sorted(missing)[:4]}")
        backbone.set_trainable(cfg.backbone_trainable)
        return bundle, config, extra
