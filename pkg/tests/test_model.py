from ptr_disentangle import *
from ptr_disentangle.encoder import describe_utterance
from ptr_disentangle.model import assign_pairs, gold_clustering, update_pair_mentions

import tempfile
import unittest

import numpy as np

from pathlib import Path

from tests.fixtures import help_log, tiny_model


class TestLinkTargets(unittest.TestCase):

    def test_targets(self):
        """Test candidate windows, gold positions and teacher-forced memory reads."""

        log = help_log()
        model = tiny_model([log])
        file_targets = build_link_targets(log, model.vocabulary, window=50)

        self.assertEqual([target.index for target in file_targets.targets], list(range(7)))
        self.assertEqual(file_targets.n_skipped, 0)

        target = file_targets.targets[4]
        self.assertEqual(target.candidates, [0, 1, 2, 3, 4])
        self.assertEqual(target.gold_positions, [2])
        self.assertEqual(target.structural.shape, (5, 6))

        # alice (5) mentioned TuxThePenguin while replying to 3, so 6 -> 5 reads M_ji = 1
        self.assertEqual(file_targets.targets[6].structural[5].tolist(), [0., 1., 1., 1., 0., 1.])
        self.assertEqual(file_targets.targets[6].structural[6][:2].tolist(), [0., 0.])

    def test_window_skips(self):
        """Test that targets whose gold parent lies beyond the window are skipped."""

        log = help_log()
        model = tiny_model([log])
        file_targets = build_link_targets(log, model.vocabulary, window=1)

        self.assertEqual(file_targets.n_skipped, 2)
        self.assertEqual([target.index for target in file_targets.targets], [0, 1, 2, 3, 6])
        self.assertEqual(file_targets.targets[-1].candidates, [5, 6])

    def test_warm_up(self):
        """Test that utterances before the first annotated one are context only."""

        log = help_log()
        annotations = [link for link in log.annotations if link.child >= 4]
        warm = ChatLog("warm", log.utterances, annotations)
        model = tiny_model([warm])
        file_targets = build_link_targets(warm, model.vocabulary)

        self.assertEqual([target.index for target in file_targets.targets], [4, 5, 6])
        self.assertEqual(file_targets.targets[0].candidates[0], 0)
        self.assertTrue(np.all(file_targets.targets[0].structural[:, 4:] == 0.))

    def test_gold_clustering_and_pairs(self):
        """Test the gold conversations and the attached pair examples."""

        log = help_log()
        model = tiny_model([log])
        file_targets = build_link_targets(log, model.vocabulary)

        self.assertEqual(gold_clustering(log), Clustering.from_blocks([{0}, {1, 2, 4}, {3, 5, 6}]))

        n_pairs = assign_pairs(file_targets, 50, 1., np.random.default_rng(0))
        attached = sum(len(target.pairs) for target in file_targets.targets)
        self.assertEqual(n_pairs, attached)
        self.assertEqual(sum(label for target in file_targets.targets for _, label in target.pairs), 6)

        for target in file_targets.targets:
            for position, _ in target.pairs:
                self.assertLess(target.candidates[position], target.index)

    def test_update_pair_mentions(self):
        """Test that a link adds the mentions in both directions and nothing else."""

        log = help_log()
        vocabulary = tiny_model([log]).vocabulary
        described = [describe_utterance(utterance, vocabulary) for utterance in log.utterances]
        tux, alice = vocabulary.speaker_id("TuxThePenguin"), vocabulary.speaker_id("alice")

        memory = MentionMemory(len(vocabulary))
        update_pair_mentions(memory, described[6], described[5], vocabulary)
        self.assertEqual((memory.get(tux, alice), memory.get(alice, tux)), (1, 1))

        update_pair_mentions(memory, described[5], described[4], vocabulary)
        update_pair_mentions(memory, described[5], described[3], vocabulary)
        self.assertEqual((memory.get(tux, alice), memory.get(alice, tux)), (1, 2))
        self.assertEqual(memory.get(alice, vocabulary.speaker_id("zelot")), 0)


class TestJointObjective(unittest.TestCase):

    def setUp(self):
        self.log = help_log()
        self.model = tiny_model([self.log], hidden=2, embed_dim=2, seed=4, scale=4.)
        self.file_targets = build_link_targets(self.log, self.model.vocabulary)
        assign_pairs(self.file_targets, 50, 1., np.random.default_rng(0))

    def loss_fn(self, lambda_pair=1., dropout=0., feature_set="full"):

        params = self.model.params

        def evaluate(_):
            rng = np.random.default_rng(5) if dropout else None
            result = batch_loss_and_grads(
                params, self.file_targets, self.file_targets.targets[2:], lambda_pair, feature_set, dropout, rng
            )
            return result.loss, result.grads

        return evaluate

    def parameter_inputs(self):
        return {name: self.model.params[name] for name in self.model.params.names}

    def test_joint_gradients(self):
        """Test the full joint loss against finite differences."""

        self.assertLess(check_gradients(self.loss_fn(), self.parameter_inputs()), 1e-4)

    def test_joint_gradients_with_dropout(self):
        """Test the joint loss gradient under fixed dropout masks."""

        self.assertLess(check_gradients(self.loss_fn(lambda_pair=0.5, dropout=0.3), self.parameter_inputs()), 1e-4)

    def test_link_only(self):
        """Test that lambda 0 gives the pair head exactly zero gradient and changes shared gradients."""

        _, link_only = self.loss_fn(lambda_pair=0.)(None)
        _, joint = self.loss_fn(lambda_pair=1.)(None)

        self.assertTrue(np.all(link_only["w_pair"] == 0.))
        self.assertTrue(np.any(joint["w_pair"] != 0.))
        self.assertFalse(np.allclose(link_only["lstm_forward.W"], joint["lstm_forward.W"]))

    def test_loss_parts(self):
        """Test that the joint loss adds the weighted pair loss to the link loss."""

        result = batch_loss_and_grads(
            self.model.params, self.file_targets, self.file_targets.targets, lambda_pair=2., with_grads=False
        )

        self.assertIsNone(result.grads)
        self.assertEqual(result.n_targets, 7)
        self.assertAlmostEqual(result.loss, result.link_loss + 2. * result.pair_loss)
        self.assertEqual(result.n_pairs, sum(len(target.pairs) for target in self.file_targets.targets))

    def test_no_text_ablation(self):
        """Test that without the text block the encoder receives no gradient."""

        _, grads = self.loss_fn(feature_set="no_text")(None)

        self.assertTrue(np.all(grads["embedding"] == 0.))
        self.assertTrue(np.all(grads["lstm_backward.U"] == 0.))
        self.assertTrue(np.any(grads["w_link"][:6] != 0.))


class TestCheckpoint(unittest.TestCase):

    def test_save_load_save(self):
        """Test that a checkpoint survives a save-load-save cycle byte for byte."""

        model = tiny_model([help_log()])
        model.self_link_threshold = 0.35
        model.config = {"hidden": 4, "self_link_threshold_grid": [0., 0.5]}

        with tempfile.TemporaryDirectory() as tmp:

            first, second = Path(tmp) / "a.ckpt.json", Path(tmp) / "b.ckpt.json"
            model.save(first)
            loaded = DisentanglementModel.load(first)
            loaded.save(second)

            self.assertEqual(first.read_bytes(), second.read_bytes())
            self.assertEqual(loaded.self_link_threshold, 0.35)
            self.assertEqual(loaded.vocabulary, model.vocabulary)
            self.assertTrue(np.array_equal(loaded.params["w_link"], model.params["w_link"]))

    def test_load_errors(self):
        """Test missing and corrupt checkpoints."""

        with tempfile.TemporaryDirectory() as tmp:

            with self.assertRaises(FileNotFoundError):
                DisentanglementModel.load(Path(tmp) / "missing.json")

            corrupt = Path(tmp) / "corrupt.json"
            corrupt.write_text("{not json")
            with self.assertRaises(ValueError):
                DisentanglementModel.load(corrupt)

            corrupt.write_text('{"format": "something else"}')
            with self.assertRaises(ValueError):
                DisentanglementModel.load(corrupt)
