import unittest
import os
import warnings

import numpy as np
import responses
from hypothesis import given, settings
from hypothesis.strategies import booleans, composite, integers
from plumbum import local

from rcprobe import backends
from rcprobe.backends import (
    BackendConfig, BackendLoadError, FixedDistributionMockBackend, GaussianMockBackend,
    LayerEmbeddings, LayerOutOfRange, MaskedDistribution, NoMask, OutOfVocabulary, RuleBackend,
    SeparableMockBackend, StaticBackend, UnsupportedCapability,
    embed_many, load_backend, pool, read_vectors, CLS, MEAN)
from rcprobe.util import CACHE_ENV, ValidationError

from .helpers import temp_dir, write_file

VECTORS = '3 2\nthe 1 0\nwoman 0 1\nWho 2 2\nthe 5 5\n'


@composite
def distributions(draw, max_size=1000):
    size = draw(integers(min_value=2, max_value=max_size))
    rng = np.random.default_rng(draw(integers(min_value=0, max_value=2 ** 32 - 1)))
    weights = rng.random(size)
    if draw(booleans()):
        weights = np.round(weights, 1)
    weights = weights + 1e-3
    return ['w{}'.format(i) for i in range(size)], weights / weights.sum()


class TestPooling(unittest.TestCase):
    def setUp(self):
        layers = np.arange(2 * 3 * 2, dtype=float).reshape(2, 3, 2)
        self.emb = LayerEmbeddings(layers, [True, False, True])

    def test_cls_and_mean(self):
        self.assertEqual(self.emb.n_layers, 1)
        self.assertEqual(self.emb.dim, 2)
        np.testing.assert_array_equal(pool(self.emb, 1, CLS).values, [6, 7])
        np.testing.assert_array_equal(pool(self.emb, 1, MEAN).values, [8, 9])
        np.testing.assert_array_equal(pool(self.emb, 0, MEAN, include_specials=True).values, [2, 3])

    def test_errors(self):
        with self.assertRaises(LayerOutOfRange):
            pool(self.emb, 2)
        with self.assertRaises(LayerOutOfRange):
            pool(self.emb, -1)
        with self.assertRaises(ValidationError):
            pool(self.emb, 0, 'max')
        with self.assertRaises(ValidationError):
            LayerEmbeddings(np.zeros((2, 3, 2)), [True, False])


class TestMaskedDistribution(unittest.TestCase):
    def test_order_and_rank(self):
        dist = MaskedDistribution(['a', 'B', 'c', 'd'], [0.25, 0.25, 0.5, 0.0])
        self.assertEqual(dist.top(3), ['c', 'a', 'B'])
        self.assertEqual(dist.rank('c'), 1)
        self.assertEqual(dist.rank('B'), 3)
        self.assertIsNone(dist.rank('b'))
        self.assertEqual(dist.rank('b', ignore_case=True), 3)
        self.assertIsNone(dist.rank('zzz'))
        self.assertAlmostEqual(dist.entropy(), -(2 * 0.25 * np.log(0.25) + 0.5 * np.log(0.5)))
        self.assertEqual(dist.entries[0], ('c', 0.5))

    def test_not_normalized(self):
        with self.assertRaises(ValidationError):
            MaskedDistribution(['a', 'b'], [0.5, 0.6])
        with self.assertRaises(ValidationError):
            MaskedDistribution(['a', 'b'], [1.0])

    @settings(max_examples=50, deadline=None)
    @given(distributions())
    def test_rank_matches_sorting(self, drawn):
        items, probs = drawn
        dist = MaskedDistribution(items, probs)
        oracle = sorted(range(len(items)), key=lambda i: (-probs[i], i))
        for target in (0, len(items) // 2, len(items) - 1):
            self.assertEqual(dist.rank(items[target]), oracle.index(target) + 1)


class TestMockBackends(unittest.TestCase):
    def test_tokenize(self):
        backend = GaussianMockBackend('g')
        tok = backend.tokenize('The [MASK] who left.')
        self.assertEqual(tok.pieces, ['[CLS]', 'The', '[MASK]', 'who', 'left', '.', '[SEP]'])
        self.assertEqual(tok.mask_position, 2)
        self.assertEqual(tok.special_mask, [True, False, False, False, False, False, True])
        with self.assertRaises(NoMask):
            backend.tokenize('[MASK] and [MASK]')
        with self.assertRaises(ValidationError):
            backend.tokenize('  ')

    def test_gaussian_is_seeded(self):
        a, b = GaussianMockBackend('a', seed=1), GaussianMockBackend('b', seed=2)
        first = a.embed_layers('The woman left.')
        np.testing.assert_array_equal(first.layers, a.embed_layers('The woman left.').layers)
        self.assertFalse(np.allclose(first.layers, b.embed_layers('The woman left.').layers))
        self.assertEqual(first.layers.shape, (3, 6, 16))

    def test_separable_needs_oracle(self):
        backend = SeparableMockBackend('s', margin=4.0, noise=0.1)
        with self.assertRaises(UnsupportedCapability):
            backend.embed_layers('x')
        backend.bind_labels({'good one': True, 'bad one': False})
        self.assertGreater(pool(backend.embed_layers('good one'), 1).values[0], 3)
        self.assertLess(pool(backend.embed_layers('bad one'), 1).values[0], -3)

    def test_fixed_distribution(self):
        backend = FixedDistributionMockBackend(
            'f', ['who', 'which', 'that'], [0.2, 0.3, 0.5],
            table={'The [MASK] left.': [1.0, 0.0, 0.0]})
        self.assertTrue(backend.supports(backends.MLM_HEAD))
        dist = backend.predict_masked(backend.tokenize('A [MASK] left.'))
        np.testing.assert_array_equal(dist.probs, [0.2, 0.3, 0.5])
        dist = backend.predict_masked(backend.tokenize('The [MASK] left.'))
        self.assertEqual(dist.top(1), ['who'])
        with self.assertRaises(NoMask):
            backend.predict_masked(backend.tokenize('No mask.'))
        self.assertTrue(backend.is_single_piece('that'))
        self.assertFalse(backend.is_single_piece('whom'))
        uniform = FixedDistributionMockBackend('u', ['a', 'b'])
        np.testing.assert_array_equal(uniform.predict_masked(uniform.tokenize('[MASK]')).probs, [0.5, 0.5])

    def test_capabilities(self):
        gaussian = GaussianMockBackend('g')
        with self.assertRaises(UnsupportedCapability):
            gaussian.predict_masked(gaussian.tokenize('[MASK]'))
        with self.assertRaises(UnsupportedCapability):
            gaussian.rule_classify('x')

    def test_embed_many_keeps_order(self):
        backend = GaussianMockBackend('g', n_layers=1)
        texts = ['sentence number {}'.format(i) for i in range(12)]
        for got, text in zip(embed_many(backend, texts, workers=4), texts):
            np.testing.assert_array_equal(got.layers, backend.embed_layers(text).layers)


class TestRuleBackend(unittest.TestCase):
    def test_classify(self):
        rule = RuleBackend()
        self.assertTrue(rule.rule_classify('The road that leads home closed.'))
        self.assertTrue(rule.rule_classify('The road Who leads home closed.'))
        self.assertFalse(rule.rule_classify('The road leads home closed.'))
        self.assertFalse(rule.rule_classify('Whoever left early was fined.'))
        self.assertFalse(rule.rule_classify('The man whom we met smiled.'))
        self.assertTrue(RuleBackend(relativizers=('whom',)).rule_classify('The man whom we met.'))
        self.assertEqual(rule.n_layers, 0)
        with self.assertRaises(UnsupportedCapability):
            rule.embed_layers('x')


class TestStaticBackend(unittest.TestCase):
    def test_read_vectors(self):
        with temp_dir() as d:
            index, matrix = read_vectors(write_file(d, 'v.vec', VECTORS))
            self.assertEqual(index, {'the': 0, 'woman': 1, 'Who': 2})
            np.testing.assert_array_equal(matrix[0], [1, 0])
            with self.assertRaises(BackendLoadError):
                read_vectors(write_file(d, 'bad.txt', 'a 1 2\nb 1\n'))
            with self.assertRaises(BackendLoadError):
                read_vectors(write_file(d, 'empty.txt', '\n'))

    def test_lookup_and_oov(self):
        with temp_dir() as d:
            backend = StaticBackend('glove', write_file(d, 'v.txt', VECTORS))
        emb = backend.embed_layers('The woman Who left')
        self.assertEqual(emb.n_layers, 0)
        np.testing.assert_array_equal(pool(emb, 0).values, [1, 1])
        self.assertEqual(backend.oov_rate, 0.25)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter('always')
            emb = backend.embed_layers('Nothing known here')
        self.assertTrue(any(issubclass(w.category, OutOfVocabulary) for w in caught))
        np.testing.assert_array_equal(pool(emb, 0).values, [0, 0])
        self.assertEqual(backend.oov_rate, 4 / 7)
        self.assertEqual(backend.provenance()['vocabulary'], 3)

    @responses.activate
    def test_download(self):
        url = 'https://vectors.example.org/small.vec'
        responses.add(responses.GET, url, body=VECTORS)
        with temp_dir() as d, local.env(**{CACHE_ENV: d}):
            backend = StaticBackend('remote', url)
            self.assertEqual(len(backend.index), 3)
            StaticBackend('again', url)
            self.assertEqual(len(responses.calls), 1)

    @responses.activate
    def test_download_failure(self):
        url = 'https://vectors.example.org/missing.vec'
        responses.add(responses.GET, url, status=404)
        with temp_dir() as d, local.env(**{CACHE_ENV: d}):
            with self.assertRaises(BackendLoadError):
                StaticBackend('remote', url)

    def test_missing_file(self):
        with self.assertRaises(BackendLoadError):
            StaticBackend('glove', '/nonexistent/vectors.txt')


class TestBackendConfig(unittest.TestCase):
    def test_validation(self):
        with self.assertRaises(ValidationError):
            BackendConfig('x', 'gpt')
        with self.assertRaises(ValidationError):
            BackendConfig('x', 'mlm')
        with self.assertRaises(ValidationError):
            BackendConfig('x', 'mock', pooling=('max',))
        with self.assertRaises(ValidationError):
            BackendConfig.from_mapping('x', {'path': 'bert-base-uncased'})
        config = BackendConfig.from_mapping(
            'bert', {'kind': 'mlm', 'checkpoint': 'bert-base-uncased', 'pooling': 'cls, mean'})
        self.assertEqual(config.path, 'bert-base-uncased')
        self.assertEqual(config.pooling, (CLS, MEAN))

    def test_load_backend(self):
        rule = load_backend(BackendConfig('r', 'rule', options={'relativizers': 'who, which'}))
        self.assertEqual(rule.relativizers, ('who', 'which'))
        mock = load_backend(BackendConfig(
            'm', 'mock', options={'mock': 'gaussian', 'dim': '4', 'n_layers': 3}))
        self.assertIsInstance(mock, GaussianMockBackend)
        self.assertEqual((mock.dim, mock.n_layers), (4, 3))
        self.assertIsInstance(load_backend(BackendConfig('s', 'mock')), SeparableMockBackend)
        fixed = load_backend(BackendConfig('f', 'mock', options={'mock': 'fixed', 'vocab': 'who which'}))
        self.assertEqual(fixed.vocab, ['who', 'which'])
        with self.assertRaises(BackendLoadError):
            load_backend(BackendConfig('f', 'mock', options={'mock': 'fixed'}))
        with self.assertRaises(BackendLoadError):
            load_backend(BackendConfig('z', 'mock', options={'mock': 'zebra'}))


@unittest.skipUnless(os.environ.get('RCPROBE_TEST_CHECKPOINT'), 'no local checkpoint configured')
class TestTransformerBackend(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.backend = load_backend(BackendConfig('mlm', 'mlm', os.environ['RCPROBE_TEST_CHECKPOINT']))

    def test_layers(self):
        emb = self.backend.embed_layers('The woman who sought help left.')
        self.assertEqual(emb.n_layers, self.backend.n_layers)
        self.assertTrue(emb.special_mask[0])
        self.assertTrue(emb.special_mask[-1])

    def test_masked(self):
        tok = self.backend.tokenize('The woman [MASK] sought help left.')
        dist = self.backend.predict_masked(tok)
        self.assertEqual(dist.vocab_size, len(self.backend.vocab))
        self.assertIsNotNone(dist.rank('who', ignore_case=True))
        self.assertTrue(self.backend.is_single_piece('who'))
