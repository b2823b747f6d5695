"""Seeded synthetic catalog, interaction log, and feature store.

Every item gets a latent preference factor z (shared by the Img, JointText,
CF, and Text features) and a separate co-occurrence factor q that only the
CF features carry. Sequences are sampled from a softmax over
dot(p_u, z_i) with a same-category drift bonus and a q-transition bonus, so:

  * Img rows and JointText rows are two fixed rotations of z (matched pairs
    keep a large cosine margin over shuffled pairs),
  * CF rows are the only view of q, and their signal is down-weighted for
    rarely interacted items, which plants the cold/warm asymmetry between
    image-based and CF-based retrieval.

All draws go through sub-seeded generators, so output is byte-identical per
seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset, InteractionRecord, ItemRecord, build_sequences, interaction_counts
from .features import CF, IMG, JOINT_TEXT, TEXT, FeatureMatrix, FeatureStore, hashed_text_embedding, unit_rows
from .seeding import spawn_rng


@dataclass
class SyntheticSpec:
    n_users: int = 400
    n_items: int = 150
    latent_dim: int = 8
    noise: float = 0.1
    mean_seq_len: int = 12
    seed: int = 7
    desc_len: int = 160  # description length target, in tokens
    attr_len: int = 10   # attribute-clause length target, in tokens
    n_categories: int = 6
    cooc_dim: int = 4
    img_dim: int = 32
    cf_dim: int = 24
    text_dim: int = 32
    # sequence sampler shape
    pref_temp: float = 0.55
    cooc_weight: float = 0.5
    drift_bonus: float = 0.8
    uniform_mix: float = 0.05
    # structural long tail: penalized items stay rare (and CF-weak) but remain
    # preference-correlated, so image features still rank them
    tail_fraction: float = 0.5
    tail_penalty: float = 1.1
    # user preference composition: shared category centroid vs idiosyncratic
    # taste; taste-heavy users need several history items to pin down, which
    # is what makes context truncation costly
    user_centroid: float = 0.6
    user_noise: float = 1.0
    # cosine between matched Img / JointText rows at zero noise
    joint_cos: float = 0.8
    # CF signal weight: clip((count / ref-percentile)^power, floor, 1)
    cf_cold_floor: float = 0.05
    cf_w_power: float = 2.0
    cf_ref_pct: float = 95.0

    def __post_init__(self):
        if min(self.n_users, self.n_items, self.latent_dim, self.mean_seq_len) <= 0:
            raise ValueError("counts and dimensions must be positive")
        if self.noise < 0:
            raise ValueError("noise scale must be >= 0")
        if self.img_dim < 2 * self.latent_dim:
            raise ValueError("img_dim must be >= 2 * latent_dim for the joint-space construction")


_CATEGORIES = (
    ("trail running", ("shoe", "vest", "cap", "bottle", "sock"),
     ("arcline", "apex stride", "terra", "peak form"),
     "trail run ridge stride pace mesh tread lace heel toe mile climb dawn dust "
     "creek summit breeze stamina cadence grip vent cushion brace stretch swift".split()),
    ("home kitchen", ("kettle", "pan", "whisk", "jar", "board"),
     ("nova", "copper crest", "lumen", "hearth"),
     "kitchen steel copper steam brew pour sear simmer chop rinse stack lid "
     "handle spout oven counter rustic glaze knead zest ladle crisp roast".split()),
    ("yarn craft", ("yarn", "hook", "needle", "kit", "loom"),
     ("fiber folk", "skein", "loom light", "knotty"),
     "yarn wool stitch weave braid loop twist dye strand felt plush merino "
     "spool bobbin pattern fringe tassel crochet knit motif swatch gauge".split()),
    ("camp gear", ("tent", "stove", "lantern", "pad", "stake"),
     ("ember", "north kit", "basalt", "drift"),
     "camp pitch trail pine ridge ember spark fuel canvas pole zip mesh dew "
     "frost pack roll strap buckle shelter creek star dusk kindle field".split()),
    ("desk audio", ("speaker", "amp", "headset", "dac", "mic"),
     ("voltic", "clear wave", "onyx", "pulse lab"),
     "audio tone bass treble signal wire studio pad knob dial fade echo "
     "chord play record mix level hum drive clip boost stage booth".split()),
    ("bike parts", ("saddle", "crank", "rotor", "lever", "rim"),
     ("gear west", "sprock", "chain co", "rapid"),
     "bike road frame spoke hub bolt torque shift brake chain ring post "
     "clamp race tire tube valve pedal sprint coast lane curb apex".split()),
)

_SHARED_WORDS = ("with for and easy daily use design made from soft fit grip trim set "
                 "size plus pro line edge core base form flow wrap shell guard blend "
                 "touch clean fresh solid smart quick spare tough neat fine true").split()

# one antonym pair per latent dimension; the sign of z picks the word
_TRAIT_PAIRS = (("light", "heavy"), ("compact", "oversize"), ("matte", "glossy"),
                ("quiet", "loud"), ("supple", "rigid"), ("warm", "cool"),
                ("simple", "ornate"), ("rugged", "sleek"))


def _orthonormal_columns(rng, rows: int, cols: int) -> np.ndarray:
    q, _ = np.linalg.qr(rng.normal(size=(rows, cols)))
    return q[:, :cols]


def _description(rng, spec: SyntheticSpec, cat_words, trait_words) -> str:
    length = spec.desc_len + int(rng.integers(-5, 6))
    words = []
    while len(words) < length:
        roll = rng.random()
        if roll < 0.50:
            words.append(cat_words[int(rng.integers(len(cat_words)))])
        elif roll < 0.70:
            words.append(_SHARED_WORDS[int(rng.integers(len(_SHARED_WORDS)))])
        else:
            # trait words spell out the item's latent signs, so description
            # embeddings carry within-category structure, not just category
            words.append(trait_words[int(rng.integers(len(trait_words)))])
    return " ".join(words[:length])


def synth_generate(spec: SyntheticSpec):
    """Returns (records, items, FeatureStore) for the given spec."""
    n, L = spec.n_items, spec.latent_dim
    rng_items = spawn_rng(spec.seed, "synth", "items")
    rng_text = spawn_rng(spec.seed, "synth", "text")
    rng_seq = spawn_rng(spec.seed, "synth", "sequences")
    rng_feat = spawn_rng(spec.seed, "synth", "features")

    cats = [_CATEGORIES[i % len(_CATEGORIES)] for i in range(spec.n_categories)]
    centroids = rng_items.normal(size=(len(cats), L))

    item_ids = [f"it{i:04d}" for i in range(n)]
    cat_of = np.array([i % len(cats) for i in range(n)])
    z = centroids[cat_of] + 0.6 * rng_items.normal(size=(n, L))
    q = rng_items.normal(size=(n, spec.cooc_dim))

    items: dict[str, ItemRecord] = {}
    for i, item_id in enumerate(item_ids):
        cat_name, nouns, brands, cat_words = cats[cat_of[i]]
        brand = brands[int(rng_text.integers(len(brands)))]
        noun = nouns[int(rng_text.integers(len(nouns)))]
        title = f"{brand.split()[0]} {noun} {i}"
        # keep brand + category at <= 4 words so attribute segments stay short
        if len(brand.split()) + len(cat_name.split()) > 4:
            brand = brand.split()[0]
        traits = [pair[0] if z[i, d] > 0 else pair[1]
                  for d, pair in enumerate(_TRAIT_PAIRS[:min(L, len(_TRAIT_PAIRS))])]
        desc = _description(rng_text, spec, cat_words, traits)
        items[item_id] = ItemRecord(item_id, title, brand, cat_name, desc, f"img://{item_id}")

    # interleaved long-tail subset: rare in logs, normal in preference space
    is_tail = ((np.arange(n) % 5) < round(5 * spec.tail_fraction)).astype(np.float64)

    # user sequences: preference + same-category drift + co-occurrence transition
    records: list[InteractionRecord] = []
    for u in range(spec.n_users):
        user_id = f"u{u:04d}"
        home = int(u % len(cats))
        p_u = spec.user_centroid * centroids[home] + spec.user_noise * rng_seq.normal(size=L)
        length = int(np.clip(5 + rng_seq.poisson(max(spec.mean_seq_len - 5, 1)), 5, 18))
        base = z @ p_u / spec.pref_temp - spec.tail_penalty * is_tail
        prev = -1
        for j in range(length):
            logits = base.copy()
            if prev >= 0:
                logits = logits + spec.cooc_weight * (q @ q[prev])
                logits = logits + spec.drift_bonus * (cat_of == cat_of[prev])
                if n > 1:
                    logits[prev] = -np.inf
            shifted = logits - logits.max()
            probs = np.exp(shifted)
            probs /= probs.sum()
            probs = (1 - spec.uniform_mix) * probs + spec.uniform_mix / n
            probs /= probs.sum()
            pick = int(rng_seq.choice(n, p=probs))
            records.append(InteractionRecord(user_id, item_ids[pick], (u + 1) * 100000 + j * 10))
            prev = pick

    # Img / JointText: two rotations of z with a fixed angle between them
    basis = _orthonormal_columns(rng_feat, spec.img_dim, 2 * L)
    a_img, a_perp = basis[:, :L], basis[:, L:]
    cos_t = spec.joint_cos
    a_txt = cos_t * a_img + np.sqrt(1 - cos_t ** 2) * a_perp
    img_rows = z @ a_img.T + spec.noise * rng_feat.normal(size=(n, spec.img_dim))
    joint_rows = z @ a_txt.T + spec.noise * rng_feat.normal(size=(n, spec.img_dim))

    # CF: the only view of q; signal fades for rarely interacted items
    counts = interaction_counts(records)
    cvec = np.array([counts.get(i, 0) for i in item_ids], dtype=np.float64)
    hi = max(np.percentile(cvec, spec.cf_ref_pct), 1.0)
    w = np.clip((cvec / hi) ** spec.cf_w_power, spec.cf_cold_floor, 1.0)
    cf_basis = _orthonormal_columns(rng_feat, spec.cf_dim, L + spec.cooc_dim)
    cf_signal = 0.7 * (z @ cf_basis[:, :L].T) + 1.0 * (q @ cf_basis[:, L:].T)
    cf_rows = w[:, None] * cf_signal + spec.noise * rng_feat.normal(size=(n, spec.cf_dim))

    text_rows = np.stack([hashed_text_embedding(items[i].description, spec.text_dim)
                          for i in item_ids])

    store = FeatureStore([
        FeatureMatrix(IMG, item_ids, unit_rows(img_rows)),
        FeatureMatrix(JOINT_TEXT, item_ids, unit_rows(joint_rows)),
        FeatureMatrix(CF, item_ids, unit_rows(cf_rows)),
        FeatureMatrix(TEXT, item_ids, text_rows),
    ])
    return records, items, store


def drop_images(items: dict[str, ItemRecord], store: FeatureStore, fraction: float,
                seed: int) -> tuple[dict[str, ItemRecord], FeatureStore]:
    """Missing-image variant: strip Img rows (and image refs) from a random subset."""
    rng = spawn_rng(seed, "drop_images")
    ids = sorted(items)
    n_drop = int(round(fraction * len(ids)))
    dropped = set(rng.choice(len(ids), size=n_drop, replace=False).tolist())
    drop_ids = {ids[i] for i in dropped}
    new_items = {i: (ItemRecord(r.item_id, r.title, r.brand, r.category, r.description, "")
                     if i in drop_ids else r)
                 for i, r in items.items()}
    img = store[IMG]
    keep = [i for i in img.item_ids if i not in drop_ids]
    rows = np.stack([img.row(i) for i in keep]) if keep else np.zeros((0, img.dim), dtype=np.float32)
    matrices = [FeatureMatrix(IMG, keep, rows)]
    for t in store.types:
        if t != IMG:
            matrices.append(store[t])
    return new_items, FeatureStore(matrices)


def cf_pretrain_cooccurrence(records, dim: int, epochs: int, seed: int,
                             lr: float = 0.05) -> FeatureMatrix:
    """Train CF item vectors so sequence-adjacent items score above random ones.

    Logistic loss on dot products, one uniformly sampled non-adjacent negative
    per adjacent pair. A desk-scale stand-in for a pretrained sequential model;
    externally trained matrices can be loaded from the feature-store format
    instead.
    """
    if not records:
        raise ValueError("records must be nonempty")
    item_ids = sorted({r.item_id for r in records})
    index = {it: i for i, it in enumerate(item_ids)}
    rng = spawn_rng(seed, "cf_pretrain")
    emb = rng.normal(0.0, 0.1, size=(len(item_ids), dim))

    pairs = []
    adjacency: dict[int, set[int]] = {i: set() for i in range(len(item_ids))}
    for seq in build_sequences(records):
        idx = [index[i] for i in seq.items]
        for a, b in zip(idx, idx[1:]):
            pairs.append((a, b))
            adjacency[a].add(b)
            adjacency[a].add(a)

    for _ in range(epochs):
        order = rng.permutation(len(pairs))
        for k in order:
            a, b = pairs[k]
            neg = int(rng.integers(len(item_ids)))
            for _ in range(10):
                if neg not in adjacency[a]:
                    break
                neg = int(rng.integers(len(item_ids)))
            for other, label in ((b, 1.0), (neg, 0.0)):
                s = 1.0 / (1.0 + np.exp(-emb[a] @ emb[other]))
                g = s - label
                ga = g * emb[other]
                go = g * emb[a]
                emb[a] -= lr * ga
                emb[other] -= lr * go
    return FeatureMatrix(CF, item_ids, emb)


def build_synthetic_dataset(spec: SyntheticSpec, k_core: int = 5):
    """Convenience wrapper: generate, filter, and split in one call."""
    records, items, store = synth_generate(spec)
    return Dataset.build(records, items, k_core=k_core), store
