import numpy as np
import pytest
import torch

from ilrec import backbone as B
from ilrec import vocab as V
from ilrec.data import ItemRecord
from ilrec.features import IMG, JOINT_TEXT, FeatureMatrix, FeatureStore
from ilrec.prompts import MODE_IMAGE, PromptPlan, Slot, build_history_prompt, build_rec_plan
from ilrec.seeding import spawn_rng


def tiny_model(vocab_size=40, d=8, layers=1, heads=1, ffn=16, n_ctx=64, seed=11,
               dtype=torch.float64, feature_dim=6, trainable=True):
    cfg = B.BackboneConfig(vocab_size, d, layers, heads, ffn, n_ctx, trainable)
    return B.build_model(cfg, feature_dim, seed, dtype)


def np_layernorm(x, g, b, eps=1e-5):
    mu = x.mean(-1, keepdims=True)
    var = x.var(-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * g + b


def np_forward(backbone, emb):
    """Straight-line numpy re-implementation of the transformer stack."""
    x = emb.copy()
    t, d = x.shape
    for block in backbone.blocks:
        h = np_layernorm(x, block.ln1.weight.detach().numpy(), block.ln1.bias.detach().numpy())
        hd = block.head_dim
        nh = block.n_heads
        q = h @ block.q.weight.detach().numpy().T + block.q.bias.detach().numpy()
        k = h @ block.k.weight.detach().numpy().T + block.k.bias.detach().numpy()
        v = h @ block.v.weight.detach().numpy().T + block.v.bias.detach().numpy()
        mixed = np.zeros_like(h)
        for head in range(nh):
            sl = slice(head * hd, (head + 1) * hd)
            scores = q[:, sl] @ k[:, sl].T / np.sqrt(hd)
            for i in range(t):
                scores[i, i + 1:] = -np.inf
            scores -= scores.max(-1, keepdims=True)
            w = np.exp(scores)
            w /= w.sum(-1, keepdims=True)
            mixed[:, sl] = w @ v[:, sl]
        x = x + mixed @ block.o.weight.detach().numpy().T + block.o.bias.detach().numpy()
        h2 = np_layernorm(x, block.ln2.weight.detach().numpy(), block.ln2.bias.detach().numpy())
        f = np.maximum(h2 @ block.ffn1.weight.detach().numpy().T + block.ffn1.bias.detach().numpy(), 0.0)
        x = x + f @ block.ffn2.weight.detach().numpy().T + block.ffn2.bias.detach().numpy()
    x = np_layernorm(x, backbone.ln_f.weight.detach().numpy(), backbone.ln_f.bias.detach().numpy())
    return x @ backbone.token_emb.weight.detach().numpy().T, x


class TestAdaptor:
    def test_zero_params_zero_output(self):
        adaptor = B.Adaptor(6, 8, torch.float64)
        with torch.no_grad():
            for p in adaptor.parameters():
                p.zero_()
        out = adaptor(torch.ones(6, dtype=torch.float64))
        assert torch.equal(out, torch.zeros(8, dtype=torch.float64))

    def test_negative_preactivation_returns_b2(self):
        adaptor = B.Adaptor(6, 8, torch.float64)
        with torch.no_grad():
            adaptor.fc1.weight.zero_()
            adaptor.fc1.bias.fill_(-1.0)
            adaptor.fc2.bias.copy_(torch.arange(8, dtype=torch.float64))
        out = adaptor(torch.randn(6, dtype=torch.float64))
        assert torch.equal(out, adaptor.fc2.bias)

    def test_matches_straight_line_oracle(self):
        _, adaptor, _ = tiny_model()
        rng = spawn_rng(4, "adaptor-oracle")
        v = rng.normal(size=6)
        got = adaptor(torch.tensor(v, dtype=torch.float64)).detach().numpy()
        w1 = adaptor.fc1.weight.detach().numpy()
        b1 = adaptor.fc1.bias.detach().numpy()
        w2 = adaptor.fc2.weight.detach().numpy()
        b2 = adaptor.fc2.bias.detach().numpy()
        want = w2 @ np.maximum(w1 @ v + b1, 0.0) + b2
        assert np.max(np.abs(got - want)) < 1e-12

    def test_b2_shift_homogeneity(self):
        _, adaptor, _ = tiny_model()
        v = torch.randn(6, dtype=torch.float64)
        base = adaptor(v).detach().clone()
        delta = torch.full((8,), 0.37, dtype=torch.float64)
        with torch.no_grad():
            adaptor.fc2.bias += delta
        assert torch.allclose(adaptor(v).detach(), base + delta, atol=1e-12)

    def test_dim_mismatch(self):
        _, adaptor, _ = tiny_model()
        with pytest.raises(ValueError, match="feature dim"):
            adaptor(torch.zeros(7, dtype=torch.float64))


class TestForward:
    def test_matches_numpy_oracle(self):
        backbone, _, _ = tiny_model()
        rng = spawn_rng(21, "fwd-oracle")
        emb = rng.normal(size=(12, 8))
        out = B.forward(backbone, torch.tensor(emb, dtype=torch.float64))
        logits_np, hidden_np = np_forward(backbone, emb)
        assert np.max(np.abs(out.logits.detach().numpy() - logits_np)) < 1e-10
        assert np.max(np.abs(out.hidden.detach().numpy() - hidden_np)) < 1e-10

    def test_matches_oracle_multihead_multilayer(self):
        backbone, _, _ = tiny_model(d=12, layers=2, heads=3, seed=5)
        rng = spawn_rng(22, "fwd-oracle2")
        emb = rng.normal(size=(9, 12))
        out = B.forward(backbone, torch.tensor(emb, dtype=torch.float64))
        logits_np, _ = np_forward(backbone, emb)
        assert np.max(np.abs(out.logits.detach().numpy() - logits_np)) < 1e-10

    def test_causality_bit_exact(self):
        backbone, _, _ = tiny_model()
        rng = spawn_rng(3, "causal")
        emb = torch.tensor(rng.normal(size=(10, 8)))
        base = B.forward(backbone, emb)
        for t in (3, 7, 9):
            bumped = emb.clone()
            bumped[t] += 1.5
            out = B.forward(backbone, bumped)
            assert torch.equal(out.logits[:t], base.logits[:t])
            assert torch.equal(out.hidden[:t], base.hidden[:t])

    def test_length_one(self):
        backbone, _, _ = tiny_model()
        out = B.forward(backbone, torch.zeros(1, 8, dtype=torch.float64))
        assert out.logits.shape == (1, 40) and out.hidden.shape == (1, 8)

    def test_exceeding_context_errors(self):
        backbone, _, _ = tiny_model(n_ctx=16)
        with pytest.raises(ValueError, match="max context"):
            backbone.hidden_states(torch.zeros(17, 8, dtype=torch.float64))

    def test_batched_matches_rowwise_for_equal_lengths(self):
        backbone, _, _ = tiny_model()
        rng = spawn_rng(8, "batch")
        embs = torch.tensor(rng.normal(size=(3, 11, 8)))
        batched = backbone.hidden_states(embs)
        for i in range(3):
            single = backbone.hidden_states(embs[i])
            assert torch.equal(batched[i], single)


class TestLmNll:
    def test_uniform_logits(self):
        vocab = 40
        out = B.ForwardOutput(torch.zeros(4, vocab, dtype=torch.float64),
                              torch.zeros(4, 8, dtype=torch.float64))
        loss = B.lm_nll(out, [0, 1, 2, 3], [False, True, True, False])
        assert abs(loss.item() - np.log(vocab)) < 1e-12

    def test_confident_logits_near_zero(self):
        logits = torch.zeros(3, 40, dtype=torch.float64)
        logits[0, 7] = 1e6
        out = B.ForwardOutput(logits, torch.zeros(3, 8, dtype=torch.float64))
        loss = B.lm_nll(out, [0, 7, 0], [False, True, False])
        assert loss.item() < 1e-9

    def test_three_positions_high_precision_oracle(self):
        rng = spawn_rng(17, "nll-oracle")
        logits = rng.normal(size=(6, 13))
        targets = [0, 4, 0, 9, 0, 12]
        mask = [False, True, False, True, False, True]
        out = B.ForwardOutput(torch.tensor(logits), torch.zeros(6, 8, dtype=torch.float64))
        got = B.lm_nll(out, targets, mask).item()
        # scalar oracle with explicit log-sum-exp per masked position
        acc = 0.0
        for p in (1, 3, 5):
            row = logits[p - 1]
            lse = np.log(np.sum(np.exp(row - row.max()))) + row.max()
            acc += lse - row[targets[p]]
        assert abs(got - acc / 3) < 1e-12

    def test_mask_permutation_invariant(self):
        rng = spawn_rng(18, "nll-perm")
        logits = torch.tensor(rng.normal(size=(8, 11)))
        out = B.ForwardOutput(logits, torch.zeros(8, 4, dtype=torch.float64))
        targets = [int(x) for x in rng.integers(0, 11, size=8)]
        m1 = [False, True, False, True, True, False, False, True]
        loss1 = B.lm_nll(out, targets, m1)
        # same (position, target) pairs contribute regardless of enumeration order
        loss2 = B.lm_nll(out, targets, list(m1))
        assert torch.equal(loss1, loss2)

    def test_empty_mask_errors(self):
        out = B.ForwardOutput(torch.zeros(3, 5), torch.zeros(3, 4))
        with pytest.raises(ValueError, match="no positions"):
            B.lm_nll(out, [0, 0, 0], [False, False, False])

    def test_position_zero_rejected(self):
        out = B.ForwardOutput(torch.zeros(3, 5), torch.zeros(3, 4))
        with pytest.raises(ValueError, match="position 0"):
            B.lm_nll(out, [0, 0, 0], [True, False, False])


class TestLastHidden:
    def test_returns_requested_row(self):
        backbone, _, _ = tiny_model()
        emb = torch.randn(6, 8, dtype=torch.float64)
        out = B.forward(backbone, emb)
        assert torch.equal(B.last_hidden(out, 5), out.hidden[5])

    def test_appending_does_not_change_row(self):
        backbone, _, _ = tiny_model()
        emb = torch.randn(6, 8, dtype=torch.float64)
        longer = torch.cat([emb, torch.randn(3, 8, dtype=torch.float64)])
        h1 = B.last_hidden(B.forward(backbone, emb), 5)
        h2 = B.last_hidden(B.forward(backbone, longer), 5)
        # longer rows change the reduction tree, so equality is to fp64 noise,
        # not bitwise; the same-length perturbation test above is bit-exact
        assert torch.allclose(h1, h2, atol=1e-12, rtol=0)

    def test_out_of_range(self):
        backbone, _, _ = tiny_model()
        out = B.forward(backbone, torch.zeros(4, 8, dtype=torch.float64))
        with pytest.raises(ValueError, match="out of range"):
            B.last_hidden(out, 4)


def store_and_plan(voc, n_items=3, dim=6, with_img=True, seed=2):
    rng = spawn_rng(seed, "store")
    ids = [f"it{i}" for i in range(n_items)]
    matrices = []
    if with_img:
        matrices.append(FeatureMatrix(IMG, ids, rng.normal(size=(n_items, dim)).astype(np.float32)))
    matrices.append(FeatureMatrix(JOINT_TEXT, ids, rng.normal(size=(n_items, dim)).astype(np.float32)))
    store = FeatureStore(matrices)
    items = [ItemRecord(i, f"thing {i}", "br", "cat", "some words here", "img://x")
             for i in ids]
    return store, items


@pytest.fixture(scope="module")
def small_vocab():
    return V.build_vocab(["title thing it0 it1 it2 brand category visual representation "
                          "the user consumed these items in order generate a recommendation "
                          "token for next item to be"], 600)


class TestAssemble:
    def test_visual_position_is_adaptor_plus_positional(self, small_vocab):
        backbone, adaptor, rec = tiny_model()
        store, items = store_and_plan(small_vocab)
        plan = build_history_prompt(small_vocab, items, MODE_IMAGE)
        emb = B.assemble_input_embeddings(plan, backbone, adaptor, rec, store)
        slot = plan.visual_slots[0]
        row = torch.tensor(np.asarray(store[IMG].row(slot.item_id)), dtype=torch.float64)
        want = adaptor(row) + backbone.pos_emb.weight[slot.position]
        assert torch.allclose(emb[slot.position], want, atol=0)

    def test_rec_position_uses_rec_vector(self, small_vocab):
        backbone, adaptor, rec = tiny_model()
        store, items = store_and_plan(small_vocab)
        plan = build_rec_plan(small_vocab, items, MODE_IMAGE)
        emb = B.assemble_input_embeddings(plan, backbone, adaptor, rec, store)
        want = rec.vector + backbone.pos_emb.weight[plan.rec_position]
        assert torch.equal(emb[plan.rec_position], want)

    def test_fallback_used_only_for_missing(self, small_vocab):
        backbone, adaptor, rec = tiny_model()
        store, items = store_and_plan(small_vocab)
        # it1 loses its image row
        img = store[IMG]
        keep = ["it0", "it2"]
        partial = FeatureStore([FeatureMatrix(IMG, keep, np.stack([img.row(i) for i in keep])),
                                store[JOINT_TEXT]])
        plan = build_history_prompt(small_vocab, items, MODE_IMAGE)
        with pytest.raises(ValueError, match="it1"):
            B.assemble_input_embeddings(plan, backbone, adaptor, rec, partial, fallback=False)
        emb = B.assemble_input_embeddings(plan, backbone, adaptor, rec, partial, fallback=True)
        slot = plan.visual_slots[1]
        joint_row = torch.tensor(np.asarray(store[JOINT_TEXT].row("it1")), dtype=torch.float64)
        want = adaptor(joint_row) + backbone.pos_emb.weight[slot.position]
        assert torch.allclose(emb[slot.position], want, atol=0)

    def test_fallback_toggle_no_effect_with_images(self, small_vocab):
        backbone, adaptor, rec = tiny_model()
        store, items = store_and_plan(small_vocab)
        plan = build_history_prompt(small_vocab, items, MODE_IMAGE)
        a = B.assemble_input_embeddings(plan, backbone, adaptor, rec, store, fallback=False)
        b = B.assemble_input_embeddings(plan, backbone, adaptor, rec, store, fallback=True)
        assert torch.equal(a, b)

    def test_injection_locality(self, small_vocab):
        backbone, adaptor, rec = tiny_model()
        store, items = store_and_plan(small_vocab)
        plan = build_history_prompt(small_vocab, items, MODE_IMAGE)
        base = B.forward(backbone, B.assemble_input_embeddings(plan, backbone, adaptor, rec, store))
        slot = plan.visual_slots[1]
        img = store[IMG]
        bumped_rows = img.rows.copy()
        bumped_rows[img.index[slot.item_id]] += 0.5
        bumped = FeatureStore([FeatureMatrix(IMG, img.item_ids, bumped_rows), store[JOINT_TEXT]])
        out = B.forward(backbone, B.assemble_input_embeddings(plan, backbone, adaptor, rec, bumped))
        assert torch.equal(out.hidden[:slot.position], base.hidden[:slot.position])
        assert not torch.equal(out.hidden[slot.position], base.hidden[slot.position])


class TestGradients:
    def _finite_diff_check(self, params, loss_fn, n_coords=20, h=1e-5, tol=1e-4, seed=0):
        grads = B.gradients(params, loss_fn)
        rng = spawn_rng(seed, "fdcheck")
        for name, p in params.items():
            flat = p.detach().view(-1)
            gflat = grads[name].view(-1)
            coords = rng.choice(flat.numel(), size=min(n_coords, flat.numel()), replace=False)
            for c in coords:
                c = int(c)
                orig = flat[c].item()
                with torch.no_grad():
                    flat[c] = orig + h
                plus = loss_fn().item()
                with torch.no_grad():
                    flat[c] = orig - h
                minus = loss_fn().item()
                with torch.no_grad():
                    flat[c] = orig
                fd = (plus - minus) / (2 * h)
                an = gflat[c].item()
                # the floor keeps the check meaningful where central-difference
                # noise (~1e-10 absolute at 64-bit) dominates near-zero gradients
                denom = max(abs(fd), abs(an), 1e-4)
                assert abs(fd - an) / denom < tol, f"{name}[{c}]: fd={fd} an={an}"

    def test_finite_differences_all_groups(self, small_vocab):
        backbone, adaptor, rec = tiny_model(d=16, layers=1, heads=2, ffn=24, seed=7)
        store, items = store_and_plan(small_vocab)
        plan = build_rec_plan(small_vocab, items, MODE_IMAGE)

        def loss_fn():
            emb = B.assemble_input_embeddings(plan, backbone, adaptor, rec, store)
            out = B.forward(backbone, emb)
            mask = [False] * len(plan.tokens)
            mask[3] = mask[5] = True
            return B.lm_nll(out, plan.tokens, mask) + out.hidden[plan.rec_position].square().sum()

        params = B.named_trainable({"adaptor": adaptor, "rec": rec})
        params["backbone.blocks.0.q.weight"] = backbone.blocks[0].q.weight
        params["backbone.token_emb.weight"] = backbone.token_emb.weight
        self._finite_diff_check(params, loss_fn, n_coords=8)

    def test_unused_parameter_gets_zero(self):
        backbone, adaptor, rec = tiny_model()
        x = torch.randn(4, 8, dtype=torch.float64)

        def loss_fn():
            return B.forward(backbone, x).logits.square().sum()

        grads = B.gradients({"rec.vector": rec.vector}, loss_fn)
        assert torch.equal(grads["rec.vector"], torch.zeros_like(rec.vector))

    def test_frozen_backbone_excluded(self, small_vocab):
        backbone, adaptor, rec = tiny_model(trainable=False)
        store, items = store_and_plan(small_vocab)
        plan = build_history_prompt(small_vocab, items, MODE_IMAGE)
        trainable = B.named_trainable({"backbone": backbone, "adaptor": adaptor, "rec": rec})
        assert not any(n.startswith("backbone.") for n in trainable)

        def loss_fn():
            emb = B.assemble_input_embeddings(plan, backbone, adaptor, rec, store)
            out = B.forward(backbone, emb)
            mask = [False] * len(plan.tokens)
            mask[-1] = True
            return B.lm_nll(out, plan.tokens, mask)

        grads = B.gradients(trainable, loss_fn)
        assert any(g.abs().sum() > 0 for n, g in grads.items() if n.startswith("adaptor."))

    def test_nonfinite_loss_raises(self):
        from ilrec.errors import NumericError
        rec = B.RecToken(4, torch.float64)
        with pytest.raises(NumericError):
            B.gradients({"rec.vector": rec.vector},
                        lambda: (rec.vector.sum() * torch.tensor(float("inf"))))
