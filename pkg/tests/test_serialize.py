import csv

import numpy as np
import pytest

from netinv.errors import ContractError, FormatError
from netinv.models import Classifier, ClassifierSpec, Generator, GeneratorSpec
from netinv.serialize import (load_checkpoint, read_pgm, save_checkpoint,
                              write_csv, write_pgm_grid)


class TestCheckpoint:
    def test_classifier_round_trip_bitwise(self, tmp_path):
        clf = Classifier(ClassifierSpec(kind="cnn", classes=5),
                         rng=np.random.default_rng(0))
        path = tmp_path / "clf.ninv"
        save_checkpoint(clf, path, seed=42, meta={"note": "test"})
        loaded, info = load_checkpoint(path)
        assert isinstance(loaded, Classifier)
        assert loaded.spec == clf.spec
        assert info["seed"] == 42
        for name in clf.params:
            np.testing.assert_array_equal(loaded.params[name].data,
                                          clf.params[name].data)

    def test_generator_round_trip(self, tmp_path):
        gen = Generator(GeneratorSpec(classes=4, cond_mode="hot"),
                        rng=np.random.default_rng(1))
        path = tmp_path / "gen.ninv"
        save_checkpoint(gen, path)
        loaded, _ = load_checkpoint(path)
        assert isinstance(loaded, Generator)
        assert loaded.spec == gen.spec
        for name in gen.params:
            np.testing.assert_array_equal(loaded.params[name].data,
                                          gen.params[name].data)

    def test_flipped_byte_fails_crc(self, tmp_path):
        clf = Classifier(ClassifierSpec(), rng=np.random.default_rng(2))
        path = tmp_path / "clf.ninv"
        save_checkpoint(clf, path)
        blob = bytearray(path.read_bytes())
        blob[len(blob) // 2] ^= 0xFF
        path.write_bytes(bytes(blob))
        with pytest.raises(FormatError, match="CRC"):
            load_checkpoint(path)

    def test_bad_magic(self, tmp_path):
        clf = Classifier(ClassifierSpec())
        path = tmp_path / "clf.ninv"
        save_checkpoint(clf, path)
        blob = bytearray(path.read_bytes())
        blob[0:4] = b"XXXX"
        # refresh the CRC so only the magic is wrong
        import struct
        import zlib
        payload = bytes(blob[:-4])
        path.write_bytes(payload + struct.pack("<I", zlib.crc32(payload)))
        with pytest.raises(FormatError, match="magic"):
            load_checkpoint(path)

    def test_save_is_deterministic(self, tmp_path):
        clf = Classifier(ClassifierSpec(), rng=np.random.default_rng(3))
        a, b = tmp_path / "a.ninv", tmp_path / "b.ninv"
        save_checkpoint(clf, a, seed=1)
        save_checkpoint(clf, b, seed=1)
        assert a.read_bytes() == b.read_bytes()


class TestPgm:
    def test_exact_bytes_single_image(self, tmp_path):
        img = np.array([[[[0.0, 1.0], [1.0, 0.0]]]])
        path = tmp_path / "one.pgm"
        write_pgm_grid(img, 1, path)
        assert path.read_bytes() == b"P5\n2 2\n255\n" + bytes([0, 255, 255, 0])

    def test_grid_rows_arithmetic(self, tmp_path):
        imgs = np.zeros((5, 1, 3, 3))
        path = tmp_path / "grid.pgm"
        write_pgm_grid(imgs, 2, path)
        header = path.read_bytes().split(b"\n")
        w, h = map(int, header[1].split())
        assert h == 3 * 3 + 2       # ceil(5/2)=3 rows with 1-px separators
        assert w == 2 * 3 + 1

    def test_readback_round_trip(self, tmp_path):
        rng = np.random.default_rng(4)
        imgs = rng.uniform(size=(1, 1, 6, 6))
        path = tmp_path / "rt.pgm"
        write_pgm_grid(imgs, 1, path)
        back = read_pgm(path)
        np.testing.assert_allclose(back[0], imgs[0, 0], atol=1 / 255)

    def test_ppm_for_three_channels(self, tmp_path):
        imgs = np.random.default_rng(5).uniform(size=(2, 3, 4, 4))
        path = tmp_path / "c.ppm"
        write_pgm_grid(imgs, 2, path)
        back = read_pgm(path)
        assert back.shape[0] == 3


class TestCsv:
    def test_header_only(self, tmp_path):
        path = tmp_path / "empty.csv"
        write_csv([], ["a", "b"], path)
        assert path.read_text() == "a,b\n"

    def test_comma_value_quoted(self, tmp_path):
        path = tmp_path / "q.csv"
        write_csv([["x,y", 1]], ["name", "value"], path)
        assert '"x,y"' in path.read_text()

    def test_round_trip_precision(self, tmp_path):
        rng = np.random.default_rng(6)
        rows = [[i, rng.normal() * 10.0 ** float(rng.integers(-6, 6))]
                for i in range(1000)]
        path = tmp_path / "vals.csv"
        write_csv(rows, ["i", "v"], path)
        with open(path, newline="") as f:
            reader = csv.reader(f)
            next(reader)
            for want, got in zip(rows, reader):
                assert float(got[1]) == pytest.approx(want[1], rel=1e-8)

    def test_row_length_mismatch(self, tmp_path):
        with pytest.raises(ContractError):
            write_csv([[1, 2, 3]], ["a", "b"], tmp_path / "bad.csv")
