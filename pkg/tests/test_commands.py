# tests/test_commands.py
import json
import os
import shutil
import tempfile
import unittest

import numpy as np
from click.testing import CliRunner

from app.api.commands import cli
from app.utils.logging_config import setup_logging

LOG_DIR = tempfile.mkdtemp()


def setUpModule():
    # Bind the console handler to the real stderr before any runner swaps it.
    setup_logging(level="WARNING", log_dir=LOG_DIR)


def tearDownModule():
    shutil.rmtree(LOG_DIR, ignore_errors=True)


class CommandTestCase(unittest.TestCase):
    def setUp(self):
        self.test_dir = tempfile.mkdtemp()
        self.runner = CliRunner(env={"PROXMCMC_LOG_DIR": LOG_DIR, "PROXMCMC_THREADS": "2"})

    def tearDown(self):
        shutil.rmtree(self.test_dir)

    def invoke(self, *args):
        return self.runner.invoke(cli, ["--log-level", "WARNING", *args])

    def out(self, name: str) -> str:
        return os.path.join(self.test_dir, name)

    def load(self, *parts: str):
        with open(os.path.join(self.test_dir, *parts)) as f:
            return json.load(f)

    def assertSameOutputs(self, first: str, second: str):
        """Every output file except the wall-clock and echoed-config files is byte-identical."""
        names = sorted(set(os.listdir(self.out(first))) - {"timing.json", "config.txt"})
        self.assertEqual(names, sorted(set(os.listdir(self.out(second))) - {"timing.json", "config.txt"}))
        self.assertTrue(names)
        for name in names:
            with open(os.path.join(self.out(first), name), "rb") as a, \
                    open(os.path.join(self.out(second), name), "rb") as b:
                self.assertEqual(a.read(), b.read(), name)


class TestBenchmarkCommand(CommandTestCase):
    def test_default_samplers(self):
        result = self.invoke("benchmark1d", "--seed", "3", "--out", self.out("run"))
        self.assertEqual(result.exit_code, 0, result.output)
        summaries = {entry["sampler"]: entry for entry in self.load("run", "summary.json")}
        self.assertEqual(sorted(summaries), ["MALA", "MALTA", "PMALA", "SMMALA1D"])
        self.assertEqual(summaries["MALA"]["acceptance_rate"], 0.0)
        self.assertFalse(summaries["PMALA"]["diverged"])
        for name in ("config.txt", "timing.json", "trace_PMALA.csv"):
            self.assertTrue(os.path.exists(os.path.join(self.out("run"), name)), name)

    def test_reruns_are_byte_identical(self):
        for run in ("first", "second"):
            result = self.invoke("benchmark1d", "--seed", "9", "--out", self.out(run), "--set", "chain.n_samples=100")
            self.assertEqual(result.exit_code, 0, result.output)
        self.assertSameOutputs("first", "second")

    def test_config_file_and_overrides(self):
        path = self.out("bench.txt")
        with open(path, "w") as f:
            f.write("experiment = benchmark1d\nchain.samplers = PMALA\nchain.n_samples = 40\n")
        result = self.invoke("benchmark1d", "--config", path, "--set", "chain.delta=0.5", "--out", self.out("run"))
        self.assertEqual(result.exit_code, 0, result.output)
        with open(os.path.join(self.out("run"), "config.txt")) as f:
            text = f.read()
        self.assertIn("chain.delta = 0.5", text)
        self.assertIn("chain.samplers = PMALA", text)
        self.assertEqual(self.load("run", "summary.json")[0]["n_samples"], 40)

    def test_divergence_is_reported_not_fatal(self):
        result = self.invoke("benchmark1d", "--out", self.out("run"), "--set", "chain.samplers=ULA")
        self.assertEqual(result.exit_code, 0, result.output)
        summary = self.load("run", "summary.json")[0]
        self.assertTrue(summary["diverged"])
        self.assertIsNone(summary["ess"])

    def test_step_error_exits_with_model_failure(self):
        result = self.invoke(
            "benchmark1d", "--out", self.out("run"),
            "--set", "chain.samplers=MALA", "--set", "model.benchmark=laplace", "--set", "model.x0="
        )
        self.assertEqual(result.exit_code, 1)
        self.assertIn("NonFiniteGradientError", result.output)
        self.assertIn("not finite", self.load("run", "summary.json")[0]["error"])

    def test_usage_errors_exit_with_two(self):
        for overrides in (["--set", "chain.bogus=1"], ["--set", "nonsense"], ["--set", "chain.delta=-1"]):
            with self.subTest(overrides=overrides):
                result = self.invoke("benchmark1d", "--out", self.out("run"), *overrides)
                self.assertEqual(result.exit_code, 2)
        result = self.invoke("benchmark1d", "--config", self.out("absent.txt"))
        self.assertEqual(result.exit_code, 2)


class TestCheckCommands(CommandTestCase):
    def test_prox_check(self):
        result = self.invoke("prox-check", "--out", self.out("check"), "--set", "check.cases=10")
        self.assertEqual(result.exit_code, 0, result.output)
        checks = self.load("check", "prox_check.json")
        self.assertEqual(len(checks), 8)
        self.assertIn("lowrank", [check["operator"] for check in checks])
        self.assertTrue(all(check["passed"] for check in checks))

    def test_prox_check_reruns_are_byte_identical(self):
        for run in ("first", "second"):
            result = self.invoke("prox-check", "--out", self.out(run), "--set", "check.cases=10")
            self.assertEqual(result.exit_code, 0, result.output)
        self.assertSameOutputs("first", "second")

    def test_diagnose_iid_chain(self):
        path = self.out("chain.csv")
        values = np.random.default_rng(1).standard_normal(20000)
        np.savetxt(path, np.column_stack([np.arange(20000), values]), fmt="%.17g", delimiter=",",
                   header="iteration,state", comments="")
        result = self.invoke("diagnose", path, "--out", self.out("diag"))
        self.assertEqual(result.exit_code, 0, result.output)
        report = self.load("diag", "diagnose.json")
        self.assertEqual(report["column"], "state")
        ratio = report["summary"]["ess"] / 20000
        self.assertGreater(ratio, 0.9)
        self.assertLess(ratio, 1.1)
        self.assertEqual(sorted(report["quantiles"]), ["0.05", "0.5", "0.95"])
        self.assertTrue(os.path.exists(os.path.join(self.out("diag"), "diagnose_acf.csv")))

    def test_diagnose_input_errors(self):
        empty = self.out("empty.csv")
        with open(empty, "w") as f:
            f.write("state\n")
        self.assertEqual(self.invoke("diagnose", empty, "--out", self.out("diag")).exit_code, 2)
        self.assertEqual(self.invoke("diagnose", "--out", self.out("diag")).exit_code, 2)
        chain = self.out("chain.csv")
        with open(chain, "w") as f:
            f.write("state\n1\n2\n")
        result = self.invoke("diagnose", chain, "--out", self.out("diag"), "--set", "diagnose.column=g")
        self.assertEqual(result.exit_code, 2)


class TestImagingCommands(CommandTestCase):
    SMALL_CHAIN = ["--set", "chain.burn_in=20", "--set", "chain.n_samples=30", "--set", "chain.thinning=1",
                   "--set", "model.image_size=16"]

    def test_tiny_deconvolution(self):
        result = self.invoke(
            "deconvolve", "--out", self.out("deconv"), *self.SMALL_CHAIN,
            "--set", "model.kernel_size=3", "--set", "model.tv_max_iter=20", "--set", "model.map_max_iter=20"
        )
        self.assertEqual(result.exit_code, 0, result.output)
        for name in ("truth.pgm", "observation.pgm", "map.pgm", "map.json", "ess.json", "acf.csv",
                     "credibility.json", "trace_PMALA.csv", "timing.json"):
            self.assertTrue(os.path.exists(os.path.join(self.out("deconv"), name)), name)
        self.assertAlmostEqual(self.load("deconv", "map.json")["bsnr_db"], 40.0, places=6)
        self.assertIn("PMALA", self.load("deconv", "credibility.json"))

    def test_tiny_lowrank_denoising(self):
        result = self.invoke(
            "denoise-lowrank", "--out", self.out("lowrank"), *self.SMALL_CHAIN, "--set", "model.board_square=4"
        )
        self.assertEqual(result.exit_code, 0, result.output)
        for name in ("map.json", "ess.json", "comparison.csv", "replicas.json", "trace_RWMH.csv", "timing.json"):
            self.assertTrue(os.path.exists(os.path.join(self.out("lowrank"), name)), name)
        self.assertEqual(self.load("lowrank", "map.json")["rank_truth"], 2)
        self.assertEqual(self.load("lowrank", "replicas.json")["indices"], [10, 14, 18, 21, 25, 29])

    def test_deconvolution_reruns_are_byte_identical(self):
        for run in ("first", "second"):
            result = self.invoke(
                "deconvolve", "--out", self.out(run), *self.SMALL_CHAIN,
                "--set", "model.kernel_size=3", "--set", "model.tv_max_iter=20", "--set", "model.map_max_iter=20"
            )
            self.assertEqual(result.exit_code, 0, result.output)
        self.assertSameOutputs("first", "second")

    def test_lowrank_reruns_are_byte_identical(self):
        for run in ("first", "second"):
            result = self.invoke(
                "denoise-lowrank", "--out", self.out(run), *self.SMALL_CHAIN, "--set", "model.board_square=4"
            )
            self.assertEqual(result.exit_code, 0, result.output)
        self.assertSameOutputs("first", "second")

    def test_noise_level_must_be_unique(self):
        result = self.invoke("denoise-lowrank", "--out", self.out("lowrank"), *self.SMALL_CHAIN,
                             "--set", "model.board_square=4", "--set", "model.snr_db=20")
        self.assertEqual(result.exit_code, 2)


@unittest.skipUnless(os.getenv("PROXMCMC_RUN_SLOW") == "1", "set PROXMCMC_RUN_SLOW=1 for full-size runs")
class TestFullSizeImaging(CommandTestCase):
    def summaries(self, name: str):
        return {entry["sampler"]: entry for entry in self.load(name, "ess.json")}

    def test_deconvolution_defaults(self):
        result = self.invoke("deconvolve", "--out", self.out("deconv"))
        self.assertEqual(result.exit_code, 0, result.output)
        self.assertTrue(self.load("deconv", "map.json")["monotone"])
        widths = self.load("deconv", "credibility.json")["PMALA"]
        self.assertGreater(widths["edge_mean"], widths["flat_mean"])
        summaries = self.summaries("deconv")
        self.assertLess(summaries["PMALA"]["acf_lag20"], summaries["MALA"]["acf_lag20"])

    def test_lowrank_defaults(self):
        result = self.invoke("denoise-lowrank", "--out", self.out("lowrank"))
        self.assertEqual(result.exit_code, 0, result.output)
        self.assertGreaterEqual(self.summaries("lowrank")["PMALA"]["ess_per_sample"], 0.2)
        self.assertGreaterEqual(self.load("lowrank", "timing.json")["pmala_over_rwmh"], 5.0)
        replicas = self.load("lowrank", "replicas.json")
        self.assertLess(max(replicas["replica_distances"]), replicas["noise_distance"])


if __name__ == '__main__':
    unittest.main()
