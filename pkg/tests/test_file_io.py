# tests/test_file_io.py
import json
import os
import shutil
import tempfile
import unittest

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal

from app.models.schemas import DataFileError, OracleCheck, ShapeMismatchError
from app.utils.file_io import (
    read_csv,
    read_matrix_csv,
    read_pgm,
    write_csv,
    write_json,
    write_matrix_csv,
    write_pgm,
    write_table,
)


class TestPGM(unittest.TestCase):
    def setUp(self):
        self.test_dir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.test_dir)

    def _path(self, name: str) -> str:
        return os.path.join(self.test_dir, name)

    def test_sixteen_bit_round_trip(self):
        image = np.random.default_rng(0).random((2, 3))
        write_pgm(self._path("a.pgm"), image, (0.0, 1.0), bits=16)
        with open(self._path("a.pgm"), "rb") as f:
            self.assertTrue(f.read().startswith(b"P5\n3 2\n65535\n"))
        assert_allclose(read_pgm(self._path("a.pgm"), (0.0, 1.0)), image, atol=0.5 / 65535 + 1e-12)

    def test_eight_bit_uses_own_range_by_default(self):
        image = np.array([[2.0, 4.0], [6.0, 10.0]])
        self.assertEqual(write_pgm(self._path("b.pgm"), image), (2.0, 10.0))
        assert_array_equal(read_pgm(self._path("b.pgm")), [[0.0, 64.0], [128.0, 255.0]])

    def test_constant_image_is_black(self):
        write_pgm(self._path("c.pgm"), np.full((3, 3), 7.0))
        assert_array_equal(read_pgm(self._path("c.pgm")), np.zeros((3, 3)))

    def test_header_comments_are_skipped(self):
        with open(self._path("d.pgm"), "wb") as f:
            f.write(b"P5\n# made by hand\n2 1\n255\n\x00\xff")
        assert_array_equal(read_pgm(self._path("d.pgm")), [[0.0, 255.0]])

    def test_malformed_files(self):
        with open(self._path("ascii.pgm"), "wb") as f:
            f.write(b"P2\n1 1\n255\n0\n")
        with open(self._path("short.pgm"), "wb") as f:
            f.write(b"P5\n4 4\n255\n\x00\x01")
        for name in ("ascii.pgm", "short.pgm", "absent.pgm"):
            with self.subTest(name=name):
                with self.assertRaises(DataFileError):
                    read_pgm(self._path(name))

    def test_writer_arguments(self):
        with self.assertRaises(ShapeMismatchError):
            write_pgm(self._path("e.pgm"), np.zeros((2, 2, 2)))
        with self.assertRaises(DataFileError):
            write_pgm(self._path("e.pgm"), np.zeros((2, 2)), bits=12)


class TestTables(unittest.TestCase):
    def setUp(self):
        self.test_dir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.test_dir)

    def _path(self, name: str) -> str:
        return os.path.join(self.test_dir, name)

    def test_csv_round_trip_is_exact(self):
        values = np.array([0.1, 1.0 / 3.0, -2.5e-300])
        write_csv(self._path("t.csv"), {"iteration": [0, 1, 2], "state": values})
        header, data = read_csv(self._path("t.csv"))
        self.assertEqual(header, ["iteration", "state"])
        assert_array_equal(data[:, 1], values)

    def test_csv_columns_must_match(self):
        with self.assertRaises(ShapeMismatchError):
            write_csv(self._path("t.csv"), {"a": [1.0, 2.0], "b": [1.0]})

    def test_unreadable_csv(self):
        cases = {"empty.csv": "state\n", "text.csv": "a,b\n1,x\n", "ragged.csv": "a,b\n1\n"}
        for name, text in cases.items():
            with open(self._path(name), "w") as f:
                f.write(text)
        for name in list(cases) + ["absent.csv"]:
            with self.subTest(name=name):
                with self.assertRaises(DataFileError):
                    read_csv(self._path(name))

    def test_matrix_csv(self):
        matrix = np.arange(6.0).reshape(2, 3) / 7.0
        write_matrix_csv(self._path("m.csv"), matrix)
        self.assertEqual(read_csv(self._path("m.csv"))[0], ["c0", "c1", "c2"])
        assert_array_equal(read_matrix_csv(self._path("m.csv")), matrix)

    def test_mixed_table(self):
        write_table(self._path("cmp.csv"), ["sampler", "rate", "ess", "n"], [["PMALA", 0.5, None, 3]])
        with open(self._path("cmp.csv")) as f:
            self.assertEqual(f.read(), "sampler,rate,ess,n\nPMALA,0.5,,3\n")
        with self.assertRaises(ShapeMismatchError):
            write_table(self._path("cmp.csv"), ["sampler", "rate"], [["PMALA"]])

    def test_json_replaces_non_finite_values(self):
        write_json(self._path("s.json"), {"nan": float("nan"), "value": np.float64(2.0), "pair": (1, 2)})
        with open(self._path("s.json")) as f:
            self.assertEqual(json.load(f), {"nan": None, "value": 2.0, "pair": [1, 2]})

    def test_json_of_models(self):
        check = OracleCheck(operator="quartic", cases=3, max_deviation=0.0, tolerance=1e-6, passed=True)
        write_json(self._path("checks.json"), [check])
        with open(self._path("checks.json")) as f:
            self.assertEqual(json.load(f)[0]["operator"], "quartic")


if __name__ == '__main__':
    unittest.main()
