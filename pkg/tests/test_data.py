import json

import numpy as np
import pytest
from PIL import Image

from ivgn.data import (
    BASE_CLAUSE,
    BOS,
    DEFAULT_GRAMMAR,
    EOS,
    PAD,
    RESERVED,
    UNK,
    ImageCache,
    Study,
    Vocabulary,
    assign_splits,
    batch_iter,
    build_vocab,
    encode_reports,
    findings_from_report,
    generate_synthetic,
    load_manifest,
    load_study_images,
    scene_report,
    split_studies,
    write_manifest,
)
from ivgn.errors import DataError


def _study(sid, report, split="train"):
    return Study(sid, ["x.png"], report, split)


class TestVocabulary:
    def test_order_frequency_then_alpha(self):
        vocab = build_vocab([_study("1", "b a c a ."), _study("2", "c a")])
        assert vocab.itos[: len(RESERVED)] == list(RESERVED)
        assert vocab.to_list() == ["a", "c", "b"]

    def test_min_freq(self):
        vocab = build_vocab([_study("1", "b a c a"), _study("2", "c a")], min_freq=2)
        assert vocab.to_list() == ["a", "c"]
        assert vocab.encode("b") == [UNK]

    def test_round_trip_and_special_ids(self):
        vocab = build_vocab([_study("1", "the heart is enlarged")])
        ids = vocab.encode("The heart is enlarged.")
        assert vocab.to_text([BOS] + ids + [EOS, PAD]) == "the heart is enlarged"
        assert (PAD, BOS, EOS, UNK) == (0, 1, 2, 3)

    def test_list_round_trip(self):
        vocab = build_vocab([_study("1", "x y z y")])
        assert Vocabulary.from_list(vocab.to_list()) == vocab

    def test_empty_corpus(self):
        with pytest.raises(DataError):
            build_vocab([_study("1", "...")])


class TestStudy:
    def test_requires_images_and_known_split(self):
        with pytest.raises(DataError):
            Study("a", [], "r", "train")
        with pytest.raises(DataError):
            Study("a", ["x"], "r", "dev")


class TestManifest:
    def _write(self, tmp_path, studies):
        (tmp_path / "img.png").write_bytes(b"")
        Image.fromarray(np.zeros((4, 4), np.uint8)).save(tmp_path / "img.png")
        path = tmp_path / "manifest.json"
        path.write_text(json.dumps({"studies": studies}))
        return path

    def test_loads_and_resolves_relative_paths(self, tmp_path):
        path = self._write(tmp_path, [{"id": 1, "images": ["img.png"], "report": "r", "split": "val"}])
        (s,) = load_manifest(path)
        assert s.id == "1" and s.split == "val" and s.images == [str(tmp_path / "img.png")]

    @pytest.mark.parametrize("entry, fragment", [
        ({"images": ["img.png"], "report": "r", "split": "train"}, "missing field"),
        ({"id": "a", "images": ["nope.png"], "report": "r", "split": "train"}, "missing image"),
        ({"id": "a", "images": [], "report": "r", "split": "train"}, "no images"),
        ({"id": "a", "images": ["img.png"], "report": "r", "split": "dev"}, "unknown split"),
        ({"id": "a", "images": ["img.png"], "report": "  ", "split": "train"}, "empty report"),
    ])
    def test_errors(self, tmp_path, entry, fragment):
        path = self._write(tmp_path, [entry])
        with pytest.raises(DataError, match=fragment):
            load_manifest(path)

    def test_empty_test_report_allowed(self, tmp_path):
        path = self._write(tmp_path, [{"id": "a", "images": ["img.png"], "report": "", "split": "test"}])
        assert load_manifest(path)[0].report == ""

    def test_duplicate_ids(self, tmp_path):
        e = {"id": "a", "images": ["img.png"], "report": "r", "split": "train"}
        with pytest.raises(DataError, match="duplicate"):
            load_manifest(self._write(tmp_path, [e, e]))

    def test_missing_and_malformed(self, tmp_path):
        with pytest.raises(DataError):
            load_manifest(tmp_path / "absent.json")
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        with pytest.raises(DataError):
            load_manifest(bad)
        bad.write_text("[]")
        with pytest.raises(DataError):
            load_manifest(bad)


class TestSplits:
    @pytest.mark.parametrize("count", [10, 200, 37])
    def test_ratio(self, count):
        tags = assign_splits(count, seed=3)
        n_train, n_val = round(0.7 * count), round(0.1 * count)
        assert tags.count("train") == n_train
        assert tags.count("val") == n_val
        assert tags.count("test") == count - n_train - n_val

    def test_seeded(self):
        assert assign_splits(50, 1) == assign_splits(50, 1)
        assert assign_splits(50, 1) != assign_splits(50, 2)


class TestSynthetic:
    def test_deterministic(self):
        a = generate_synthetic(12, seed=5, views=2)
        b = generate_synthetic(12, seed=5, views=2)
        assert [s.report for s in a] == [s.report for s in b]
        for x, y in zip(a, b):
            for p, q in zip(x.pixels, y.pixels):
                np.testing.assert_array_equal(p, q)

    def test_second_view_is_mirrored_scene(self):
        (s,) = generate_synthetic(1, seed=2, views=2)
        # same glyphs, different noise: mirrored view correlates with the original
        a, b = s.pixels[0].astype(float), s.pixels[1][:, ::-1].astype(float)
        assert np.corrcoef(a.ravel(), b.ravel())[0, 1] > 0.8

    def test_reports_invert_to_findings(self):
        for s in generate_synthetic(60, seed=9):
            kinds = findings_from_report(s.report)
            assert scene_report_from_kinds(kinds) == s.report

    def test_base_clause_for_no_findings(self):
        assert findings_from_report(BASE_CLAUSE) == []

    def test_foreign_report(self):
        with pytest.raises(DataError):
            findings_from_report("something else entirely")

    def test_count_validation(self):
        with pytest.raises(DataError):
            generate_synthetic(0)

    def test_write_and_reload(self, tmp_path):
        studies = generate_synthetic(5, seed=1)
        loaded = load_manifest(write_manifest(studies, tmp_path))
        assert [s.report for s in loaded] == [s.report for s in studies]
        for a, b in zip(studies, loaded):
            np.testing.assert_array_equal(
                load_study_images(a, 1, 32), load_study_images(b, 1, 32))


def scene_report_from_kinds(kinds):
    clauses = [DEFAULT_GRAMMAR[k] for k in DEFAULT_GRAMMAR if k in kinds]
    return " ".join(clauses) if clauses else BASE_CLAUSE


class TestImages:
    def test_standardization_and_channels(self, tmp_path):
        Image.fromarray(np.full((8, 8), 255, np.uint8)).save(tmp_path / "w.png")
        s = Study("w", [str(tmp_path / "w.png")], "r", "train")
        arr = load_study_images(s, views=1, side=8)
        assert arr.shape == (1, 3, 8, 8)
        np.testing.assert_allclose(arr, 1.0)

    def test_resize_and_view_repeat(self, tmp_path):
        Image.fromarray(np.zeros((16, 16, 3), np.uint8)).save(tmp_path / "k.png")
        s = Study("k", [str(tmp_path / "k.png")], "r", "train")
        arr = load_study_images(s, views=2, side=8)
        assert arr.shape == (2, 3, 8, 8)
        np.testing.assert_allclose(arr, -1.0)

    def test_unreadable_image(self, tmp_path):
        (tmp_path / "bad.png").write_bytes(b"not a png")
        with pytest.raises(DataError):
            load_study_images(Study("b", [str(tmp_path / "bad.png")], "r", "train"), 1, 8)

    def test_cache_reuses_arrays(self):
        (s,) = generate_synthetic(1, seed=0)
        cache = ImageCache()
        assert cache.study_images(s, 1, 32) is cache.study_images(s, 1, 32)


class TestBatching:
    def test_encode_reports_padding(self):
        vocab = Vocabulary(["a", "b"])
        tokens, mask = encode_reports(["a b", "b"], vocab)
        np.testing.assert_array_equal(tokens, [[BOS, 4, 5, EOS], [BOS, 5, EOS, PAD]])
        np.testing.assert_array_equal(mask, tokens != PAD)

    def test_batches_cover_split_once(self):
        studies = generate_synthetic(23, seed=4)
        vocab = build_vocab(studies)
        ids = []
        for batch in batch_iter(studies, vocab, 5, 32, shuffle_seed=7):
            assert batch.images.shape[1:] == (1, 3, 32, 32)
            assert len(batch.ids) <= 5
            ids += batch.ids
        assert sorted(ids) == sorted(s.id for s in studies)
        again = [i for b in batch_iter(studies, vocab, 5, 32, shuffle_seed=7) for i in b.ids]
        assert again == ids

    def test_unshuffled_keeps_order(self):
        studies = generate_synthetic(6, seed=4)
        ids = [i for b in batch_iter(studies, build_vocab(studies), 4, 32) for i in b.ids]
        assert ids == [s.id for s in studies]

    def test_split_filter(self):
        studies = generate_synthetic(20, seed=4)
        assert all(s.split == "val" for s in split_studies(studies, "val"))
        assert sum(len(split_studies(studies, t)) for t in ("train", "val", "test")) == 20

    def test_batch_size_validation(self):
        with pytest.raises(DataError):
            next(batch_iter([], Vocabulary([]), 0, 8))
