import json

import numpy as np
import pytest

from quadpool.dataset import (
    SceneAnnotation,
    SpaceLabel,
    cache_in_memory,
    compute_stats,
    load_dataset,
    parse_manifest,
    save_manifest,
    validate_splits,
)
from quadpool.errors import ImageLoadError, ManifestError
from quadpool.geometry import Quadrilateral
from quadpool.imaging import ImageBuffer, write_ppm
from quadpool.synth import generate_dataset, lot_split_specs

SQ = [[0.0, 0.0], [4.0, 0.0], [4.0, 2.0], [0.0, 2.0]]
TRAP = [[0.0, 0.0], [4.0, 0.0], [3.0, 2.0], [1.0, 2.0]]


def scene(lot, split, n=1, occupied=True):
    return SceneAnnotation(f"{lot}.ppm", lot, split, tuple(SpaceLabel(Quadrilateral(SQ), occupied) for _ in range(n)))


def write_manifest(path, doc):
    path.write_text(json.dumps(doc))
    return path


class TestLoad:
    def test_empty(self, tmp_path):
        assert load_dataset(write_manifest(tmp_path / "m.json", [])) == []

    def test_one_scene_two_spaces(self, tmp_path):
        doc = [{"image": "a.ppm", "lot_id": "A", "split": "train",
                "spaces": [{"quad": SQ, "occupied": True}, {"quad": TRAP, "occupied": False}]}]
        (s,) = load_dataset(write_manifest(tmp_path / "m.json", doc))
        assert s.lot_id == "A" and s.split == "train"
        assert s.image_ref == tmp_path / "a.ppm"
        assert [sp.quad.tolist() for sp in s.spaces] == [SQ, TRAP]
        assert [sp.occupied for sp in s.spaces] == [True, False]

    def test_bow_tie_names_scene_and_space(self, tmp_path):
        bow = [[0, 0], [1, 1], [1, 0], [0, 1]]
        doc = [{"image": "a.ppm", "lot_id": "A", "split": "train",
                "spaces": [{"quad": SQ, "occupied": True}, {"quad": bow, "occupied": False}]}]
        with pytest.raises(ManifestError, match=r"scene 0 \(a.ppm\), space 1: .*self-intersecting"):
            load_dataset(write_manifest(tmp_path / "m.json", doc))

    def test_parse_error_has_position(self):
        with pytest.raises(ManifestError, match="line 2, column"):
            parse_manifest('[\n{"image": }]')

    @pytest.mark.parametrize(
        "raw, msg",
        [
            ({"image": "a", "lot_id": "A", "split": "train"}, "missing keys"),
            ({"image": "a", "lot_id": "", "split": "train", "spaces": [{"quad": SQ, "occupied": True}]}, "lot_id"),
            ({"image": "a", "lot_id": "A", "split": "dev", "spaces": [{"quad": SQ, "occupied": True}]}, "split"),
            ({"image": "a", "lot_id": "A", "split": "test", "spaces": []}, "no parking spaces"),
            ({"image": "a", "lot_id": "A", "split": "test", "spaces": [{"quad": SQ, "occupied": 1}]}, "true or false"),
            ({"image": "a", "lot_id": "A", "split": "test", "spaces": [{"quad": SQ[:3], "occupied": True}]}, "space 0"),
        ],
    )
    def test_invalid_scenes(self, raw, msg):
        with pytest.raises(ManifestError, match=msg):
            parse_manifest(json.dumps([raw]))

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(ManifestError, match="nope.json"):
            load_dataset(tmp_path / "nope.json")

    def test_quads_canonicalized(self):
        doc = [{"image": "a", "lot_id": "A", "split": "test",
                "spaces": [{"quad": [[0, 2], [4, 2], [4, 0], [0, 0]], "occupied": True}]}]
        (s,) = parse_manifest(json.dumps(doc))
        assert s.spaces[0].quad.tolist() == SQ

    def test_save_load_fixed_point(self, tmp_path):
        rng = np.random.default_rng(0)
        scenes = []
        for i in range(4):
            pts = np.array(TRAP) * rng.uniform(1, 9) + rng.uniform(-3, 50, 2)
            scenes.append(SceneAnnotation(tmp_path / f"img{i}.ppm", f"L{i % 2}", ["train", "test"][i % 2],
                                          (SpaceLabel(Quadrilateral(pts), bool(i % 3)),)))
        save_manifest(scenes, tmp_path / "m.json")
        once = load_dataset(tmp_path / "m.json")
        assert once == scenes
        save_manifest(once, tmp_path / "m2.json")
        assert (tmp_path / "m.json").read_text() == (tmp_path / "m2.json").read_text()


class TestValidateSplits:
    def test_single_split(self):
        assert validate_splits([scene("A", "train"), scene("B", "train")]).ok

    def test_leak_flagged(self):
        report = validate_splits([scene("A", "train"), scene("B", "valid"), scene("A", "test")])
        assert not report.ok
        assert report.leaks == {"A": ("train", "test")}

    def test_paper_split_sizes(self):
        # 231 / 35 / 27 images over disjoint lots
        scenes = [scene(f"train{i % 40}", "train") for i in range(231)]
        scenes += [scene(f"valid{i % 6}", "valid") for i in range(35)]
        scenes += [scene(f"test{i % 5}", "test") for i in range(27)]
        assert validate_splits(scenes).ok
        assert compute_stats(scenes).per_split_images == {"train": 231, "valid": 35, "test": 27}

    def test_empty_iff_function(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            scenes = [scene(f"L{rng.integers(5)}", ["train", "valid", "test"][rng.integers(3)]) for _ in range(8)]
            mapping = {}
            is_function = all(mapping.setdefault(s.lot_id, s.split) == s.split for s in scenes)
            assert validate_splits(scenes).ok == is_function


class TestStats:
    def test_empty(self):
        st = compute_stats([])
        assert (st.num_images, st.num_spaces, st.num_occupied, st.occupied_fraction) == (0, 0, 0, 0.0)

    def test_paper_dataset_counts(self):
        # a manifest with the published ACPDS totals: 293 images, 11,236 spaces, 5,376 occupied
        per_image = np.full(293, 11236 // 293)
        per_image[: 11236 - per_image.sum()] += 1
        occ = np.zeros(11236, bool)
        occ[:5376] = True
        scenes, k = [], 0
        for i, n in enumerate(per_image):
            spaces = tuple(SpaceLabel(Quadrilateral(SQ), bool(o)) for o in occ[k:k + n])
            scenes.append(SceneAnnotation(f"{i}.ppm", f"L{i}", "train", spaces))
            k += n
        st = compute_stats(scenes)
        assert (st.num_images, st.num_spaces, st.num_occupied) == (293, 11236, 5376)
        assert round(100 * st.occupied_fraction) == 48

    def test_brute_force_recount(self):
        rng = np.random.default_rng(2)
        scenes = [scene(f"L{i}", "valid", n=int(rng.integers(1, 6)), occupied=bool(rng.integers(2))) for i in range(20)]
        st = compute_stats(scenes)
        assert st.num_spaces == sum(len(s.spaces) for s in scenes)
        assert st.num_occupied == sum(1 for s in scenes for sp in s.spaces if sp.occupied)


@pytest.fixture(scope="module")
def generated(tmp_path_factory):
    out = tmp_path_factory.mktemp("gen")
    specs, split_of = lot_split_specs(6, 2, 2, seed=3, scenes_per_lot=2)
    return generate_dataset(specs, split_of, out)


class TestGeneratedDataset:
    def test_stats_match_generator_ledger(self, generated):
        manifest, ledger = generated
        scenes = load_dataset(manifest)
        assert compute_stats(scenes) == ledger
        assert ledger.num_images == 10

    def test_lot_disjoint(self, generated):
        assert validate_splits(load_dataset(generated[0])).ok

    def test_cache_equals_fresh_decode(self, generated):
        from quadpool.imaging import read_ppm

        scenes = load_dataset(generated[0])
        cached = cache_in_memory(scenes)
        for c in cached:
            assert c.image == read_ppm(c.annotation.image_ref)

    def test_cached_access_does_no_io(self, generated, monkeypatch):
        cached = cache_in_memory(load_dataset(generated[0]))
        first = [c.image for c in cached]

        def boom(*a, **k):
            raise AssertionError("file access after caching")

        monkeypatch.setattr("builtins.open", boom)
        assert all(a is c.image for a, c in zip(first, cached))
        assert all(np.array_equal(a.data, c.image.data) for a, c in zip(first, cached))


class TestCache:
    def test_missing_file_named(self, tmp_path):
        s = scene("gone", "train")
        s = SceneAnnotation(tmp_path / "gone.ppm", "gone", "train", s.spaces)
        with pytest.raises(ImageLoadError, match="gone.ppm"):
            cache_in_memory([s])

    def test_corrupt_file_named(self, tmp_path):
        (tmp_path / "bad.ppm").write_bytes(b"P5\n1 1\n255\n\x00")
        s = SceneAnnotation(tmp_path / "bad.ppm", "A", "train", scene("A", "train").spaces)
        with pytest.raises(ImageLoadError, match="bad.ppm"):
            cache_in_memory([s])

    def test_repeated_access_identical(self, tmp_path):
        write_ppm(ImageBuffer.filled(3, 3, (0.2, 0.4, 0.6)), tmp_path / "x.ppm")
        s = SceneAnnotation(tmp_path / "x.ppm", "A", "train", scene("A", "train").spaces)
        (c,) = cache_in_memory([s])
        assert c.image is c.image and c.image == c.image
