from ptr_disentangle import *

import unittest

import numpy as np


class TestPairHead(unittest.TestCase):

    def test_pair_probability(self):
        """Test the sigmoid head on zero, opposite and large weights."""

        params = ParameterStore.initialize(5, 2, 2, np.random.default_rng(0))
        feature = np.random.default_rng(1).normal(size=feature_dim(2))

        p = pair_probability(feature, params)
        params["w_pair"] = -params["w_pair"]
        self.assertAlmostEqual(pair_probability(feature, params), 1. - p)

        params["w_pair"] = np.zeros(feature_dim(2))
        self.assertAlmostEqual(pair_probability(feature, params), 0.5)

        params["w_pair"] = np.full(feature_dim(2), 100.)
        self.assertAlmostEqual(pair_probability(np.ones(feature_dim(2)), params), 1.)

    def test_pair_loss(self):
        """Test binary cross entropy values."""

        self.assertAlmostEqual(pair_loss(0.5, 1), np.log(2.))
        self.assertAlmostEqual(pair_loss(0.5, 0), np.log(2.))
        self.assertAlmostEqual(pair_loss(1., 1), 0., places=6)
        self.assertAlmostEqual(pair_loss(0.9, 0), 2.302585, places=5)
        self.assertLess(pair_loss(0., 1), 17.)

    def test_joint_loss(self):
        """Test the weighting of the pair loss."""

        self.assertAlmostEqual(joint_loss(0.5, 0.3, 0.), 0.5)
        self.assertAlmostEqual(joint_loss(0.5, 0.3, 1.), 0.8)
        self.assertAlmostEqual(joint_loss(0.5, 0.3, 2.), 1.1)

        with self.assertRaises(ValueError):
            joint_loss(0.5, 0.3, -1.)


class TestPairSampling(unittest.TestCase):

    def test_two_conversations(self):
        """Test the enumeration of positives and negative candidates."""

        clustering = Clustering.from_blocks([{0, 2}, {1}])
        pairs = sample_pairs(clustering, 50, 1., np.random.default_rng(0))

        positives = [(p.index_i, p.index_j) for p in pairs if p.label == 1]
        negatives = [(p.index_i, p.index_j) for p in pairs if p.label == 0]

        self.assertEqual(positives, [(2, 0)])
        self.assertEqual(len(negatives), 1)
        self.assertIn(negatives[0], [(1, 0), (2, 1)])

    def test_single_conversation(self):
        """Test that one conversation gives only positives."""

        pairs = sample_pairs(Clustering.from_blocks([{0, 1, 2}]), 50)

        self.assertEqual(len(pairs), 3)
        self.assertTrue(all(p.label == 1 for p in pairs))

    def test_ratio(self):
        """Test the number of sampled negatives and the determinism under a seed."""

        clustering = Clustering.from_blocks([set(range(5))] + [{k} for k in range(5, 12)])
        pairs = sample_pairs(clustering, 50, 2., np.random.default_rng(3))

        self.assertEqual(sum(p.label for p in pairs), 10)
        self.assertEqual(sum(1 - p.label for p in pairs), 20)
        self.assertEqual(pairs, sample_pairs(clustering, 50, 2., np.random.default_rng(3)))

    def test_window_and_eligible(self):
        """Test the window limit and the eligible subset."""

        chain = Clustering.from_blocks([set(range(10))])
        self.assertEqual(len(sample_pairs(chain, 2)), 17)

        pairs = sample_pairs(chain, 50, eligible={2, 5, 7})
        self.assertEqual([(p.index_i, p.index_j) for p in pairs], [(5, 2), (7, 2), (7, 5)])

        with self.assertRaises(ValueError):
            sample_pairs(chain, 50, 0.)

    def test_pair_sample(self):
        """Test the ordering contract of a pair."""

        with self.assertRaises(ValueError):
            PairSample(2, 2, 1)

        with self.assertRaises(ValueError):
            PairSample(3, 1, 2)
