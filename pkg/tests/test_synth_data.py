import numpy as np
import pytest

from dmlseg.errors import ConfigError, DataError
from dmlseg.synth_data import (SceneSpec, class_colors, generate_scene,
                               read_corpus, read_pgm, read_ppm, write_corpus,
                               write_pgm, write_ppm)


def spec(**kw):
    defaults = dict(seed=11, size=(48, 48), num_classes=8)
    defaults.update(kw)
    return SceneSpec(**defaults)


class TestGenerateScene:
    def test_deterministic(self):
        a_img, a_mask = generate_scene(spec(), 3)
        b_img, b_mask = generate_scene(spec(), 3)
        assert np.array_equal(a_img, b_img)
        assert np.array_equal(a_mask, b_mask)

    def test_different_indices_differ(self):
        a_img, _ = generate_scene(spec(), 0)
        b_img, _ = generate_scene(spec(), 2)
        assert not np.array_equal(a_img, b_img)

    def test_zero_shapes_is_background(self):
        img, mask = generate_scene(spec(shapes_min=0, shapes_max=0, noise=0.0), 0)
        assert np.all(mask == 0)
        bg = np.rint(class_colors(spec())[0] * 255) / 255
        assert np.allclose(img, bg.reshape(3, 1, 1).astype(np.float32))

    def test_foreground_stays_in_one_pool(self):
        s = spec()
        for index in range(20):
            _, mask = generate_scene(s, index)
            fg = set(np.unique(mask).tolist()) - {0}
            pool = set(s.pools[index % len(s.pools)])
            assert fg <= pool

    def test_cross_pool_base_colors_collide(self):
        colors = class_colors(spec())
        assert np.array_equal(colors[1], colors[4])
        assert np.array_equal(colors[2], colors[5])
        assert np.array_equal(colors[3], colors[6])
        assert not any(np.array_equal(colors[7], colors[c]) for c in (0, 4, 5, 6))

    def test_image_on_255_grid(self):
        img, _ = generate_scene(spec(), 1)
        assert np.array_equal(img, np.rint(img * 255) / 255)

    def test_pools_must_partition(self):
        with pytest.raises(ConfigError, match="partition"):
            SceneSpec(seed=0, num_classes=8, pools=((1, 2), (4, 5, 6, 7)))


class TestNetpbm:
    def test_ppm_round_trip(self, tmp_path):
        img, _ = generate_scene(spec(), 0)
        write_ppm(tmp_path / "a.ppm", img)
        assert np.array_equal(read_ppm(tmp_path / "a.ppm"), img)

    def test_pgm_round_trip(self, tmp_path):
        _, mask = generate_scene(spec(), 0)
        write_pgm(tmp_path / "a.pgm", mask)
        assert np.array_equal(read_pgm(tmp_path / "a.pgm"), mask)

    def test_header_with_comment(self, tmp_path):
        raw = b"P5\n# a comment\n2 2\n255\n\x00\x01\x02\x03"
        (tmp_path / "c.pgm").write_bytes(raw)
        assert read_pgm(tmp_path / "c.pgm").tolist() == [[0, 1], [2, 3]]

    def test_truncated_raster_rejected(self, tmp_path):
        (tmp_path / "t.pgm").write_bytes(b"P5\n4 4\n255\nxx")
        with pytest.raises(DataError, match="truncated"):
            read_pgm(tmp_path / "t.pgm")

    def test_wrong_magic_rejected(self, tmp_path):
        (tmp_path / "w.ppm").write_bytes(b"P3\n1 1\n255\n0 0 0\n")
        with pytest.raises(DataError, match="P6"):
            read_ppm(tmp_path / "w.ppm")


class TestCorpus:
    def test_write_read_round_trip(self, tmp_path):
        s = spec()
        corpus = write_corpus(s, 8, 2, tmp_path / "corpus")
        loaded = read_corpus(tmp_path / "corpus")
        assert loaded.spec == s
        assert loaded.entries == corpus.entries
        assert len(loaded.indices("train")) == 8
        assert len(loaded.indices("val")) == 2
        for i in range(10):
            img, mask = generate_scene(s, i)
            assert np.array_equal(loaded.load_image(i), img)
            assert np.array_equal(loaded.load_mask(i), mask)

    def test_regeneration_from_manifest_spec(self, tmp_path):
        write_corpus(spec(), 6, 0, tmp_path / "a")
        loaded = read_corpus(tmp_path / "a")
        write_corpus(loaded.spec, 6, 0, tmp_path / "b")
        for i in range(6):
            a = (tmp_path / "a" / f"images/img_{i:05d}.ppm").read_bytes()
            b = (tmp_path / "b" / f"images/img_{i:05d}.ppm").read_bytes()
            assert a == b

    def test_missing_file_named(self, tmp_path):
        write_corpus(spec(), 4, 0, tmp_path / "c")
        (tmp_path / "c" / "masks" / "msk_00002.pgm").unlink()
        with pytest.raises(DataError, match="msk_00002"):
            read_corpus(tmp_path / "c")

    def test_tampered_file_fails_hash(self, tmp_path):
        write_corpus(spec(), 4, 0, tmp_path / "d")
        target = tmp_path / "d" / "images" / "img_00001.ppm"
        raw = bytearray(target.read_bytes())
        raw[-1] ^= 0xFF
        target.write_bytes(bytes(raw))
        with pytest.raises(DataError, match="hash"):
            read_corpus(tmp_path / "d")

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(DataError, match="manifest"):
            read_corpus(tmp_path)

    def test_class_balance_over_large_corpus(self, tmp_path):
        # 500+ scenes: every foreground class must show up in >= 5% of its
        # pool's images; the default generator satisfies this comfortably
        s = spec(size=(24, 24))
        corpus = write_corpus(s, 500, 20, tmp_path / "big")
        counts = np.zeros(s.num_classes)
        pool_sizes = np.zeros(len(s.pools))
        for i in range(520):
            mask = corpus.load_mask(i)
            pool_sizes[i % 2] += 1
            for cls in np.unique(mask):
                counts[cls] += 1
        for g, pool in enumerate(s.pools):
            for cls in pool:
                assert counts[cls] >= 0.05 * pool_sizes[g]
