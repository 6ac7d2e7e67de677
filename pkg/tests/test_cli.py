from ptr_disentangle.__main__ import main

import io
import json
import tempfile
import unittest

from pathlib import Path
from contextlib import redirect_stderr, redirect_stdout
from unittest.mock import patch

from tests.fixtures import HELP_LOG

TINY_CONFIG = {
    "learning_rate": 1e-3,
    "dropout": 0.,
    "hidden": 4,
    "embed_dim": 4,
    "epochs": 2,
    "batch_utterances": 8,
    "self_link_threshold_grid": [0., 0.5]
}


def run(argv, stdin=None):
    """Runs the command line, returns the exit code and the captured stdout."""

    out, err = io.StringIO(), io.StringIO()
    with redirect_stdout(out), redirect_stderr(err), patch("sys.stdin", io.StringIO(stdin or "")):
        code = main(argv)

    return code, out.getvalue()


class TestCommandLine(unittest.TestCase):

    def test_usage_errors(self):
        """Test the exit codes of bad flags, missing arguments and missing data."""

        self.assertEqual(run(["stats", "--bogus"])[0], 1)
        self.assertEqual(run(["no-such-command"])[0], 1)
        self.assertEqual(run(["stats", "-q"])[0], 1)
        self.assertEqual(run(["eval", "-q", "-d", "/tmp"])[0], 1)
        self.assertEqual(run(["gen-synth", "-q"])[0], 1)
        self.assertEqual(run(["stats", "-q", "-d", "/nonexistent/split"])[0], 2)

    def test_gen_synth_and_stats(self):
        """Test writing a synthetic split and reading its statistics."""

        with tempfile.TemporaryDirectory() as tmp:

            code, out = run(["gen-synth", "-q", "-o", tmp, "--files", "2", "--threads", "2", "--utterances", "20"])
            self.assertEqual(code, 0)
            self.assertEqual(json.loads(out), ["synth_000", "synth_001"])
            self.assertTrue((Path(tmp) / "synth_001.annotation.txt").exists())

            code, out = run(["stats", "-q", "-d", tmp])
            self.assertEqual(code, 0)
            self.assertEqual(json.loads(out)["files"], 2)

    def test_pipeline(self):
        """Test train, eval, tune-threshold and disentangle on a small synthetic split."""

        with tempfile.TemporaryDirectory() as tmp:

            tmp = Path(tmp)
            run(["gen-synth", "-q", "-o", str(tmp / "train"), "--files", "2", "--threads", "2", "--utterances", "20"])
            run(["gen-synth", "-q", "-o", str(tmp / "dev"), "--threads", "2", "--utterances", "20", "-s", "9"])
            (tmp / "tiny.config.json").write_text(json.dumps(TINY_CONFIG))

            code, out = run([
                "train", "-q", "-c", str(tmp / "tiny.config.json"), "-d", str(tmp / "train"),
                "--dev", str(tmp / "dev"), "-o", str(tmp / "run")
            ])
            self.assertEqual(code, 0)
            self.assertEqual(len(json.loads(out)["epochs"]), 2)
            self.assertTrue((tmp / "run" / "report.json").exists())

            checkpoint = str(tmp / "run" / "model.ckpt.json")

            code, out = run(["eval", "-q", "-m", checkpoint, "-d", str(tmp / "dev")])
            self.assertEqual(code, 0)
            self.assertEqual(json.loads(out)["n_gold_links"], 20)

            code, out = run(["eval", "-q", "-m", checkpoint, "-d", str(tmp / "dev"), "--offline", "-t", "0.5"])
            self.assertEqual(code, 0)

            tuned = str(tmp / "tuned.ckpt.json")
            code, out = run(["tune-threshold", "-q", "-m", checkpoint, "-d", str(tmp / "dev"), "-o", tuned])
            self.assertEqual(code, 0)
            self.assertIn(float(out), (0., 0.5))

            code, out = run(["disentangle", "-q", "-m", tuned], HELP_LOG + "no timestamp here\n")
            self.assertEqual(code, 0)

            rows = [line.split("\t") for line in out.splitlines()]
            self.assertEqual(len(rows), 7)
            self.assertEqual(rows[0], ["0", "0", "0"])
            for index, parent, _ in rows:
                self.assertLessEqual(int(parent), int(index))

    def test_corrupt_checkpoint(self):
        """Test that an unreadable checkpoint is a data error."""

        with tempfile.TemporaryDirectory() as tmp:

            path = Path(tmp) / "broken.ckpt.json"
            path.write_text("{")
            self.assertEqual(run(["disentangle", "-q", "-m", str(path)])[0], 2)
