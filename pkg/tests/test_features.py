import numpy as np
import pytest

from ilrec.errors import FormatError
from ilrec.features import (CF, IMG, JOINT_TEXT, FeatureMatrix, FeatureStore,
                            hashed_text_embedding, load_feature_store,
                            save_feature_store, unit_rows)
from ilrec.seeding import spawn_rng


def matrix(ftype=IMG, n=3, dim=4, seed=0):
    rng = spawn_rng(seed, "featmat")
    return FeatureMatrix(ftype, [f"it{i}" for i in range(n)],
                         rng.normal(size=(n, dim)).astype(np.float32))


class TestRoundTrip:
    def test_bit_exact_bytes_and_values(self, tmp_path):
        m = matrix()
        p1, p2 = tmp_path / "a.feat", tmp_path / "b.feat"
        save_feature_store(m, p1)
        loaded = load_feature_store(p1)
        assert loaded.feature_type == m.feature_type
        assert loaded.item_ids == m.item_ids
        assert np.array_equal(loaded.rows, m.rows)
        save_feature_store(loaded, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_row_lookup_preserved(self, tmp_path):
        m = matrix(n=5, dim=7, seed=9)
        save_feature_store(m, tmp_path / "x.feat")
        loaded = load_feature_store(tmp_path / "x.feat")
        for item in m.item_ids:
            assert np.array_equal(loaded.row(item), m.row(item))

    def test_wrong_magic(self, tmp_path):
        p = tmp_path / "bad.feat"
        p.write_bytes(b"NOTMAGIC" + b"\x00" * 20)
        with pytest.raises(FormatError, match="magic"):
            load_feature_store(p)

    def test_truncated_payload_names_offset(self, tmp_path):
        m = matrix()
        p = tmp_path / "x.feat"
        save_feature_store(m, p)
        blob = p.read_bytes()
        p.write_bytes(blob[:-4])  # drop one float: header says 3 rows, payload short
        with pytest.raises(FormatError, match="offset"):
            load_feature_store(p)

    def test_trailing_garbage_rejected(self, tmp_path):
        m = matrix()
        p = tmp_path / "x.feat"
        save_feature_store(m, p)
        p.write_bytes(p.read_bytes() + b"xx")
        with pytest.raises(FormatError, match="trailing"):
            load_feature_store(p)

    def test_nonfinite_rejected_on_save(self):
        with pytest.raises(ValueError, match="finite"):
            FeatureMatrix(IMG, ["a"], np.array([[np.inf, 0.0]], dtype=np.float32))


class TestStore:
    def test_joint_text_must_match_img_dim(self):
        store = FeatureStore([matrix(IMG, dim=4)])
        with pytest.raises(ValueError, match="shared space"):
            store.add(matrix(JOINT_TEXT, dim=5))

    def test_visual_row_fallback(self):
        img = FeatureMatrix(IMG, ["a"], np.ones((1, 4), dtype=np.float32))
        joint = FeatureMatrix(JOINT_TEXT, ["a", "b"], np.full((2, 4), 2.0, dtype=np.float32))
        store = FeatureStore([img, joint])
        assert np.array_equal(store.visual_row("a", fallback=False), img.row("a"))
        assert np.array_equal(store.visual_row("a", fallback=True), img.row("a"))
        assert np.array_equal(store.visual_row("b", fallback=True), joint.row("b"))
        with pytest.raises(KeyError, match="fallback disabled"):
            store.visual_row("b", fallback=False)

    def test_types_listed_in_canonical_order(self):
        store = FeatureStore([matrix(CF, dim=3), matrix(IMG, dim=4)])
        assert store.types == [IMG, CF]


class TestHelpers:
    def test_unit_rows(self):
        rows = np.array([[3.0, 4.0], [0.0, 0.0]])
        out = unit_rows(rows)
        assert np.allclose(out[0], [0.6, 0.8])
        assert np.array_equal(out[1], [0.0, 0.0])

    def test_hashed_embedding_deterministic_and_unit(self):
        a = hashed_text_embedding("soft wool yarn kit", 16)
        b = hashed_text_embedding("soft wool yarn kit", 16)
        assert np.array_equal(a, b)
        assert abs(np.linalg.norm(a) - 1.0) < 1e-12
        c = hashed_text_embedding("steel pan lid", 16)
        assert not np.array_equal(a, c)

    def test_hashed_embedding_empty_text(self):
        assert np.array_equal(hashed_text_embedding("", 8), np.zeros(8))
