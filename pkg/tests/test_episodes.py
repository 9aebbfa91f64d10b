import json

import numpy as np
import pytest
from scipy import ndimage

from coattseg import io as fio
from coattseg.coattention import ConfigurationError
from coattseg.episodes import (
    DatasetIndex,
    Episode,
    SamplingError,
    default_class_order,
    episode_stream,
    generate_synthetic_dataset,
    make_folds,
    sample_episode,
)

from conftest import fake_static_index, fake_video_index

LABELS65 = [f"c{i:02d}" for i in range(65)]
LABELS20 = [f"p{i:02d}" for i in range(20)]


class TestMakeFolds:
    def test_vos_five_by_thirteen(self):
        folds = make_folds(LABELS65, "vos")
        assert len(folds) == 5
        assert all(len(f.test_classes) == 13 and len(f.train_classes) == 52 for f in folds)

    def test_pascal_contiguous(self):
        folds = make_folds(LABELS20, "pascal")
        assert len(folds) == 4
        assert list(folds[0].test_classes) == LABELS20[:5]
        assert list(folds[3].test_classes) == LABELS20[15:]

    @pytest.mark.parametrize("scheme, labels", [("pascal", LABELS20), ("vos", LABELS65)])
    def test_partition_law(self, scheme, labels):
        folds = make_folds(labels, scheme)
        assert [c for f in folds for c in f.test_classes] == labels
        for f in folds:
            assert set(f.test_classes).isdisjoint(f.train_classes)
            assert set(f.test_classes) | set(f.train_classes) == set(labels)
            assert [c for c in labels if c in f.train_classes] == list(f.train_classes)

    def test_wrong_count_names_expected(self):
        with pytest.raises(ConfigurationError, match="exactly 20"):
            make_folds(LABELS65[:64], "pascal")
        with pytest.raises(ConfigurationError, match="exactly 65"):
            make_folds(LABELS20, "vos")

    def test_custom(self):
        folds = make_folds([f"k{i}" for i in range(8)], "custom", 4)
        assert [len(f.test_classes) for f in folds] == [2, 2, 2, 2]
        with pytest.raises(ConfigurationError):
            make_folds([f"k{i}" for i in range(8)], "custom", 3)

    def test_shipped_orderings(self):
        pascal = default_class_order("pascal")
        vos = default_class_order("vos")
        assert len(pascal) == 20 and pascal == sorted(pascal)
        assert len(vos) == 65 and vos == sorted(vos)
        assert len(make_folds(vos, "vos")) == 5


class TestSampleEpisode:
    def test_test_split_stays_in_test_classes(self):
        index = fake_static_index(LABELS20)
        fold = make_folds(LABELS20, "pascal")[2]
        for seed in range(300):
            ep = sample_episode(fold, "test", index, seed)
            assert ep.class_label in fold.test_classes
            assert all(label == ep.class_label for _, label in ep.support)

    def test_static_support_and_query_are_distinct(self):
        index = fake_static_index(LABELS20, per_class=2)
        fold = make_folds(LABELS20, "pascal")[0]
        for seed in range(100):
            ep = sample_episode(fold, "train", index, seed)
            assert ep.support[0][0] != ep.query

    def test_determinism(self):
        index = fake_static_index(LABELS20)
        fold = make_folds(LABELS20, "pascal")[1]
        assert sample_episode(fold, "test", index, 42) == sample_episode(fold, "test", index, 42)

    def test_vos_support_is_first_frame(self):
        index = fake_video_index(LABELS65)
        fold = make_folds(LABELS65, "vos")[3]
        for seed in range(300):
            ep = sample_episode(fold, "test", index, seed)
            assert ep.frames[0] == 1
            assert ep.frames[1] >= 2
            seq = index.sequences[ep.sequence]
            assert ep.support[0][0] == seq[0][ep.class_label]["image_or_feature_path"]

    def test_vos_query_frames_cover_later_frames(self):
        index = fake_video_index(LABELS65, sequences=1, frames=4)
        fold = make_folds(LABELS65, "vos")[0]
        seen = {sample_episode(fold, "test", index, s).frames[1] for s in range(400)}
        assert seen == {2, 3, 4}

    def test_vos_multi_label_mask_keeps_only_episode_class(self):
        index = fake_video_index(LABELS65)
        fold = make_folds(LABELS65, "vos")[0]
        for seed in range(100):
            ep = sample_episode(fold, "test", index, seed)
            assert ep.gt_mask.endswith(f"_{ep.class_label}.pgm")

    def test_too_few_items_names_class(self):
        index = fake_static_index(LABELS20, per_class=2)
        index = DatasetIndex([r for r in index.records if not (r["class"] == "p03" and r["image_or_feature_path"].endswith("1.ften"))])
        fold = make_folds(LABELS20, "pascal")[0]
        with pytest.raises(SamplingError, match="p03"):
            sample_episode(fold, "test", index, 0)

    def test_k_shot(self):
        index = fake_static_index(LABELS20, per_class=6)
        fold = make_folds(LABELS20, "pascal")[0]
        ep = sample_episode(fold, "test", index, 5, shots=3)
        paths = [p for p, _ in ep.support] + [ep.query]
        assert len(ep.support) == 3 and len(set(paths)) == 4

    def test_stream_is_reproducible(self):
        index = fake_static_index(LABELS20)
        fold = make_folds(LABELS20, "pascal")[0]
        a = [next(s) for s in [episode_stream(fold, "train", index, 7)] for _ in range(20)]
        b_stream = episode_stream(fold, "train", index, 7)
        assert a == [next(b_stream) for _ in range(20)]

    def test_episode_json_roundtrip(self):
        ep = Episode((("a.ften", "cat"),), "b.ften", "b.pgm", "cat", 2, "seq", (1, 4))
        assert Episode.from_dict(json.loads(json.dumps(ep.to_dict()))) == ep


class TestSynthetic:
    def test_single_object_masks_are_one_component(self, single_object_data):
        for rec in fio.load_manifest(single_object_data / "manifest.jsonl"):
            mask = fio.load_mask(rec["mask_path"])
            _, n = ndimage.label(mask)
            assert n == 1

    def test_two_object_distractor(self, two_object_data):
        records = fio.load_manifest(two_object_data / "manifest.jsonl")
        for rec in records:
            assert rec["distractor"] != rec["class"]
            image = fio.read_ften(rec["image_or_feature_path"])
            mask = fio.load_mask(rec["mask_path"])
            _, n = ndimage.label(mask)
            assert n == 1
            # foreground pixels outside the mask: the distractor blob
            brightness = np.abs(image).max(axis=0)
            assert (brightness[~mask] > 0.3).sum() > 5

    def test_embeddings_distinct(self, single_object_data):
        table = fio.load_embedding_table(single_object_data / "embeddings.txt")
        vecs = np.array([table.lookup(c) for c in table.labels()])
        unit = vecs / np.linalg.norm(vecs, axis=1, keepdims=True)
        cos = unit @ unit.T
        off = cos[~np.eye(len(vecs), dtype=bool)]
        assert off.max() < 0.9

    def test_deterministic(self, tmp_path):
        generate_synthetic_dataset(tmp_path / "a", n_classes=2, items_per_class=2, seed=1)
        generate_synthetic_dataset(tmp_path / "b", n_classes=2, items_per_class=2, seed=1)
        for name in ("manifest.jsonl", "embeddings.txt", "images/class01_001.ften", "masks/class00_000_class00.pgm"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_video_mode(self, tmp_path):
        index = generate_synthetic_dataset(tmp_path, n_classes=4, items_per_class=2, frames=4, two_object=True, seed=0, size=32)
        assert index.is_video
        assert all(len(frames) == 4 for frames in index.sequences.values())
        fold = make_folds(index.classes(), "custom", 2)[1]
        ep = sample_episode(fold, "test", index, 0)
        assert ep.frames[0] == 1
        assert fio.load_mask(ep.gt_mask).any()

    def test_rejects_single_class(self, tmp_path):
        with pytest.raises(ConfigurationError):
            generate_synthetic_dataset(tmp_path, n_classes=1)
