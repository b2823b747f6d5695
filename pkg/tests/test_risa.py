import math

import numpy as np
import pytest
import torch

from ilrec import backbone as B
from ilrec import vocab as V
from ilrec.data import Dataset, InteractionRecord, ItemRecord
from ilrec.features import IMG, JOINT_TEXT, FeatureMatrix, FeatureStore
from ilrec.model import ModelBundle, ModelConfig, vocab_corpus
from ilrec.prompts import MODE_IMAGE
from ilrec.risa import RISABatch, make_batch, risa_loss, training_pair
from ilrec.seeding import spawn_rng
from ilrec.templates import PROPERTIES
from ilrec.training import AdamState


def toy_dataset(n_users=6, n_items=8, seq_len=5):
    records = []
    for u in range(n_users):
        for j in range(seq_len):
            records.append(InteractionRecord(f"u{u}", f"it{(u + j) % n_items}",
                                             u * 1000 + j))
    items = {f"it{i}": ItemRecord(f"it{i}", f"thing {i}", f"brand{i}", "gadgets",
                                  " ".join(f"w{i}{k}" for k in range(8)), f"img://{i}")
             for i in range(n_items)}
    store = FeatureStore([
        FeatureMatrix(IMG, sorted(items), spawn_rng(0, "img").normal(
            size=(n_items, 6)).astype(np.float32)),
        FeatureMatrix(JOINT_TEXT, sorted(items), spawn_rng(1, "jt").normal(
            size=(n_items, 6)).astype(np.float32)),
    ])
    return Dataset.build(records, items, k_core=1), store


def small_bundle(ds, store, dtype=torch.float64, trainable=True, seed=5):
    cfg = ModelConfig(d_model=16, n_layers=1, n_heads=2, ffn_dim=24, max_context=256,
                      d_s=8, backbone_trainable=trainable)
    return ModelBundle.build(ds.items, store, cfg, ("Img",), seed, dtype=dtype)


class TestMakeBatch:
    def test_reproducible_per_seed(self):
        ds, store = toy_dataset()
        bundle = small_bundle(ds, store)
        a = make_batch(ds.split.users, ds.split, ds.items, spawn_rng(3, "mb"),
                       size=4, voc=bundle.vocab)
        b = make_batch(ds.split.users, ds.split, ds.items, spawn_rng(3, "mb"),
                       size=4, voc=bundle.vocab)
        assert [(e.plan.tokens, e.target_ids, e.prop) for e in a.examples] == \
               [(e.plan.tokens, e.target_ids, e.prop) for e in b.examples]

    def test_property_distribution_uniform(self):
        ds, store = toy_dataset()
        bundle = small_bundle(ds, store)
        rng = spawn_rng(11, "props")
        counts = {p: 0 for p in PROPERTIES}
        n = 4000
        batch = make_batch(ds.split.users, ds.split, ds.items, rng, size=n,
                           voc=bundle.vocab)
        for ex in batch.examples:
            counts[ex.prop] += 1
        sigma = math.sqrt(n * 0.25 * 0.75)
        for p, k in counts.items():
            assert abs(k - n * 0.25) <= 4 * sigma, counts

    def test_two_item_prefix_targets_second(self):
        ds, store = toy_dataset(seq_len=4)  # train prefix length 2
        bundle = small_bundle(ds, store)
        user = ds.split.users[0]
        hist, target = training_pair(ds.split, user)
        assert hist == ds.split.train[user][:-1]
        assert target == ds.split.train[user][-1]
        batch = make_batch([user], ds.split, ds.items, spawn_rng(0, "tp"), voc=bundle.vocab)
        ex = batch.examples[0]
        assert ex.next_item_id == target
        assert [s.item_id for s in ex.plan.visual_slots] == hist


class TestRisaLoss:
    def test_uniform_logits_log_vocab(self):
        ds, store = toy_dataset()
        bundle = small_bundle(ds, store)
        with torch.no_grad():
            bundle.backbone.token_emb.weight.zero_()  # tied head: all logits 0
        batch = make_batch(ds.split.users[:1], ds.split, ds.items, spawn_rng(0, "ul"),
                           voc=bundle.vocab)
        loss = risa_loss(bundle.backbone, bundle.adaptor, bundle.rec, store, batch)
        assert abs(loss.item() - math.log(len(bundle.vocab))) < 1e-9

    def test_duplicated_example_same_mean(self):
        ds, store = toy_dataset()
        bundle = small_bundle(ds, store)
        batch = make_batch(ds.split.users[:1], ds.split, ds.items, spawn_rng(1, "dup"),
                           voc=bundle.vocab)
        doubled = RISABatch(batch.examples * 2)
        l1 = risa_loss(bundle.backbone, bundle.adaptor, bundle.rec, store, batch)
        l2 = risa_loss(bundle.backbone, bundle.adaptor, bundle.rec, store, doubled)
        assert torch.allclose(l1, l2, atol=1e-12, rtol=0)

    def test_overfits_one_example(self):
        ds, store = toy_dataset()
        bundle = small_bundle(ds, store, dtype=torch.float32)
        batch = make_batch(ds.split.users[:1], ds.split, ds.items, spawn_rng(2, "fit"),
                           voc=bundle.vocab)
        params = bundle.trainable_params()
        adam = AdamState(params, lr=0.01)
        first = None
        for _ in range(200):
            loss = risa_loss(bundle.backbone, bundle.adaptor, bundle.rec, store, batch)
            if first is None:
                first = loss.item()
            grads = torch.autograd.grad(loss, list(params.values()), allow_unused=True)
            adam.step(params, {n: g for (n, _), g in zip(params.items(), grads)
                               if g is not None})
        final = risa_loss(bundle.backbone, bundle.adaptor, bundle.rec, store, batch).item()
        assert final < 0.1 * first, (first, final)

    def test_adaptor_gradient_flows_through_visual_slots(self):
        ds, store = toy_dataset()
        bundle = small_bundle(ds, store)
        batch = make_batch(ds.split.users[:2], ds.split, ds.items, spawn_rng(3, "gf"),
                           voc=bundle.vocab)
        assert any(len(ex.plan.visual_slots) > 0 for ex in batch.examples)
        loss = risa_loss(bundle.backbone, bundle.adaptor, bundle.rec, store, batch)
        grads = torch.autograd.grad(loss, list(bundle.adaptor.parameters()),
                                    allow_unused=True)
        norm = sum(g.abs().sum().item() for g in grads if g is not None)
        assert norm > 0

    def test_frozen_backbone_unchanged_by_step(self):
        ds, store = toy_dataset()
        bundle = small_bundle(ds, store, dtype=torch.float32, trainable=False)
        before = {n: p.detach().clone() for n, p in bundle.backbone.named_parameters()}
        batch = make_batch(ds.split.users[:2], ds.split, ds.items, spawn_rng(4, "fz"),
                           voc=bundle.vocab)
        params = bundle.trainable_params()
        assert not any(n.startswith("backbone.") for n in params)
        adam = AdamState(params, lr=0.01)
        loss = risa_loss(bundle.backbone, bundle.adaptor, bundle.rec, store, batch)
        grads = torch.autograd.grad(loss, list(params.values()), allow_unused=True)
        adam.step(params, {n: g for (n, _), g in zip(params.items(), grads) if g is not None})
        for n, p in bundle.backbone.named_parameters():
            assert torch.equal(p, before[n]), n

    def test_empty_batch_rejected(self):
        ds, store = toy_dataset()
        bundle = small_bundle(ds, store)
        with pytest.raises(ValueError, match="nonempty"):
            risa_loss(bundle.backbone, bundle.adaptor, bundle.rec, store, RISABatch([]))
