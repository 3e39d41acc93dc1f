import unittest
import math
import os
from collections import Counter
from itertools import permutations

import numpy as np
from hypothesis import given, settings
from hypothesis.strategies import floats, integers, lists

from rcprobe.backends import FixedDistributionMockBackend, MaskedDistribution
from rcprobe.cloze_eval import (
    ANTECEDENT, OBJ_RC, RELATIVIZER, SUBJ_RC, ClozeInstance, EmptyResults, EntailmentViolation,
    QualitativeRecord, TargetOutOfVocabulary, aggregate_qualitative, build_instances,
    check_entailment, compute_metrics, load_annotations, load_starter_set, make_cloze,
    metrics_table, mp_at_1, mtr, nme, read_instances, relativizer_ratio, score_instances,
    table_json)
from rcprobe.util import IngestionError, ValidationError, write_jsonl

from .helpers import record_for, temp_dir, write_file

VOCAB = ['who', 'which', 'that', 'woman', 'road']
TABLE = {
    'The woman [MASK] left.': [0.6, 0.2, 0.1, 0.05, 0.05],
    'The road [MASK] closed.': [0.5, 0.3, 0.1, 0.05, 0.05],
    'The man [MASK] we met smiled.': [0.1, 0.1, 0.1, 0.6, 0.1],
    'The river [MASK] flows froze.': [0.0, 1.0, 0.0, 0.0, 0.0],
}
INSTANCES = [
    ClozeInstance('The woman [MASK] left.', 'who', RELATIVIZER, SUBJ_RC, 'who', 'a'),
    ClozeInstance('The road [MASK] closed.', 'which', RELATIVIZER, SUBJ_RC, 'which', 'b'),
    ClozeInstance('The book [MASK] she wrote sold.', 'which', RELATIVIZER, OBJ_RC, 'which', 'c'),
    ClozeInstance('The man [MASK] we met smiled.', 'that', RELATIVIZER, OBJ_RC, 'that', 'd'),
    ClozeInstance('The river [MASK] flows froze.', 'Which', RELATIVIZER, SUBJ_RC, 'which', 'e'),
]


def entropy(probs):
    return -sum(p * math.log(p) for p in probs if p > 0)


class AnyWordBackend(FixedDistributionMockBackend):
    def is_single_piece(self, word):
        return True


class TestMetrics(unittest.TestCase):
    def test_nme_reference_values(self):
        items = ['a', 'b', 'c', 'd']
        self.assertAlmostEqual(nme([(MaskedDistribution(items, [0.25] * 4), 'a')]), 1.0)
        self.assertEqual(nme([(MaskedDistribution(items, [1, 0, 0, 0]), 'a')]), 0.0)
        self.assertAlmostEqual(nme([(MaskedDistribution(items, [0.5, 0.5, 0, 0]), 'a')]), 0.5)
        with self.assertRaises(ValidationError):
            nme([(MaskedDistribution(['a'], [1.0]), 'a')])

    def test_mtr_matches_brute_force(self):
        rng = np.random.default_rng(11)
        items = ['w{}'.format(i) for i in range(12)]
        pairs, ranks = [], []
        for _ in range(50):
            raw = np.round(rng.random(len(items)), 1) + 0.01
            probs = raw / raw.sum()
            t = int(rng.integers(len(items)))
            ranks.append(1 + sum(p > probs[t] for p in probs) + sum(probs[:t] == probs[t]))
            pairs.append((MaskedDistribution(items, probs), items[t]))
        self.assertAlmostEqual(mtr(pairs), float(np.mean(ranks)), delta=1e-12)

    def test_mtr_exhaustive_small_vocabulary(self):
        items = ['who', 'which', 'that', 'wind', 'dog']
        for base in ([0.4, 0.3, 0.2, 0.1, 0.0], [0.25, 0.25, 0.25, 0.25, 0.0], [0.2] * 5):
            for probs in set(permutations(base)):
                ordered = sorted(range(5), key=lambda i: (-probs[i], i))
                distribution = MaskedDistribution(items, probs)
                for t, target in enumerate(items):
                    self.assertEqual(mtr([(distribution, target)]), ordered.index(t) + 1)

    @settings(max_examples=50, deadline=None)
    @given(lists(floats(min_value=0, max_value=1), min_size=2, max_size=30),
           lists(floats(min_value=0, max_value=1), min_size=2, max_size=5))
    def test_nme_bounded_and_monotone_toward_uniform(self, raw, weights):
        raw = np.asarray(raw) + 1e-3
        p = raw / raw.sum()
        uniform = np.full(len(p), 1 / len(p))
        values = []
        for t in sorted(weights):
            mixed = (1 - t) * p + t * uniform
            values.append(nme([(MaskedDistribution([str(i) for i in range(len(p))], mixed), '0')]))
        for value in values:
            self.assertTrue(-1e-12 <= value <= 1 + 1e-12)
        for lower, upper in zip(values, values[1:]):
            self.assertLessEqual(lower, upper + 1e-12)

    @settings(max_examples=30, deadline=None)
    @given(integers(min_value=2, max_value=50), integers(min_value=1, max_value=8))
    def test_perfect_precision_means_rank_one(self, size, n):
        items = ['w{}'.format(i) for i in range(size)]
        pairs = []
        for k in range(n):
            probs = np.full(size, 0.4 / (size - 1))
            probs[k % size] = 0.6
            pairs.append((MaskedDistribution(items, probs), items[k % size]))
        self.assertEqual(mp_at_1(pairs), 1.0)
        self.assertEqual(mtr(pairs), 1.0)

    def test_relativizer_ratio(self):
        pairs = [(MaskedDistribution([word, 'x'], [0.9, 0.1]), 'who') for word in ('that', 'who', 'wind')]
        self.assertAlmostEqual(relativizer_ratio(pairs), 2 / 3)

    def test_relativizer_targets_ignore_case(self):
        distribution = MaskedDistribution(['Who', 'dog'], [0.7, 0.3])
        self.assertEqual(mp_at_1([(distribution, 'who')]), 1.0)
        self.assertEqual(mtr([(distribution, 'dog')]), 2.0)
        with self.assertRaises(TargetOutOfVocabulary):
            mtr([(distribution, 'Dog')])

    def test_empty(self):
        for metric in (mp_at_1, mtr, nme, relativizer_ratio):
            with self.assertRaises(EmptyResults):
                metric([])

    def test_fixed_distribution_metrics(self):
        backend = FixedDistributionMockBackend('fixed', VOCAB, table=TABLE)
        results = score_instances(backend, INSTANCES)
        metrics = compute_metrics(results, n_skipped=3)
        self.assertEqual(metrics.mp_at_1, 2 / 5)
        self.assertEqual(metrics.mtr, 2.0)
        self.assertAlmostEqual(metrics.nme, sum(
            entropy(p) / math.log(5) for p in [TABLE[i.text_with_mask] if i.text_with_mask in TABLE
                                               else [0.2] * 5 for i in INSTANCES]) / 5)
        self.assertEqual(metrics.relativizer_ratio, 4 / 5)
        self.assertEqual((metrics.n_evaluated, metrics.n_skipped), (5, 3))

        table = metrics_table(results)
        self.assertEqual(list(table), ['objRC|that', 'objRC|which', 'subjRC|which', 'subjRC|who'])
        self.assertEqual((table['subjRC|which'].mp_at_1, table['subjRC|which'].mtr), (0.5, 1.5))
        self.assertEqual(table['objRC|that'].mtr, 4.0)
        self.assertAlmostEqual(table['objRC|which'].nme, 1.0)
        as_json = table_json(table)
        self.assertEqual(as_json['columns'], list(table))
        self.assertEqual(as_json['rows']['mtr']['subjRC|who'], 1.0)

    def test_antecedent_targets_have_no_ratio(self):
        backend = FixedDistributionMockBackend('fixed', VOCAB)
        instance = ClozeInstance('The [MASK] who left.', 'woman', ANTECEDENT, SUBJ_RC, 'who', 'x')
        metrics = compute_metrics(score_instances(backend, [instance]))
        self.assertIsNone(metrics.relativizer_ratio)
        self.assertEqual(metrics.mtr, 4.0)

    def test_empty_cells_are_omitted(self):
        backend = FixedDistributionMockBackend('fixed', VOCAB, table=TABLE)
        results = score_instances(backend, INSTANCES[:1])
        with self.assertLogs('rcprobe.cloze_eval', 'WARNING'):
            table = metrics_table(results, {(OBJ_RC, 'who'): 2, (SUBJ_RC, 'who'): 1})
        self.assertEqual(list(table), ['subjRC|who'])
        self.assertEqual(table['subjRC|who'].n_skipped, 1)


class TestInstances(unittest.TestCase):
    def test_instance_checks(self):
        with self.assertRaises(ValidationError):
            ClozeInstance('[MASK] and [MASK]', 'who', RELATIVIZER, SUBJ_RC, 'who', 'x')
        with self.assertRaises(ValidationError):
            ClozeInstance('No mask.', 'who', RELATIVIZER, SUBJ_RC, 'who', 'x')
        with self.assertRaises(ValidationError):
            ClozeInstance('The [MASK].', 'who', 'verb', SUBJ_RC, 'who', 'x')

    def test_make_cloze(self):
        backend = FixedDistributionMockBackend(
            'fixed', ['who', 'whom', 'which', 'that', 'woman', 'road', 'book'])
        instance = make_cloze(record_for((True, True, True)), RELATIVIZER, backend)
        self.assertEqual(instance.text_with_mask, 'The woman [MASK] sought help left.')
        self.assertEqual((instance.target, instance.cell), ('who', (SUBJ_RC, 'who')))
        instance = make_cloze(record_for((False, True, False)), ANTECEDENT, backend)
        self.assertEqual(instance.text_with_mask, 'The [MASK] which she wrote sold.')
        self.assertEqual((instance.target, instance.rc_type), ('book', OBJ_RC))
        self.assertIsNone(make_cloze(record_for((True, False, True)), RELATIVIZER, backend))
        self.assertIsNone(make_cloze(record_for((True, True, False)), ANTECEDENT, backend))

    def test_build_from_records(self):
        backend = FixedDistributionMockBackend(
            'fixed', ['who', 'whom', 'which', 'that', 'woman', 'road', 'book'])
        records = [record_for((a, r, s)) for a in (True, False) for r in (True, False) for s in (True, False)]
        instances, skipped = build_instances(records, RELATIVIZER, backend)
        self.assertEqual(len(instances), 4)
        self.assertEqual(skipped, {
            (SUBJ_RC, 'who'): 1, (OBJ_RC, 'whom'): 1, (SUBJ_RC, 'which'): 1, (OBJ_RC, 'which'): 1})
        instances, skipped = build_instances(records, ANTECEDENT, backend)
        self.assertEqual(len(instances), 3)
        self.assertEqual(skipped[(OBJ_RC, 'whom')], 2)

    def test_starter_set(self):
        items = load_starter_set()
        self.assertEqual(len(items), 30)
        self.assertEqual(set(Counter((i['rc_type'], i['relativizer_form']) for i in items).values()), {5})
        backend = AnyWordBackend('any', VOCAB)
        for kind in (RELATIVIZER, ANTECEDENT):
            instances, skipped = build_instances(items, kind, backend)
            self.assertEqual((len(instances), skipped), (30, {}))
        instances, _skipped = build_instances(items, RELATIVIZER, backend)
        for item, instance in zip(items, instances):
            self.assertEqual(instance.target.lower(), item['relativizer_form'])
            self.assertEqual(instance.relativizer_form, item['relativizer_form'])
            self.assertEqual(instance.source_id, item['id'])

    def test_read_instances(self):
        with temp_dir() as d:
            path = os.path.join(d, 'instances.jsonl')
            write_jsonl(path, [i.to_json() for i in INSTANCES])
            self.assertEqual(read_instances(path), INSTANCES)
            write_jsonl(path, [INSTANCES[0].to_json(), dict(INSTANCES[1].to_json(), target_kind='verb')])
            with self.assertRaises(IngestionError) as cm:
                read_instances(path)
            self.assertEqual(cm.exception.line_no, 2)


ANNOTATIONS = '''source_id,animacy,plausibility,grammaticality,antecedent_type
a,yes,yes,yes,identical
b,no,no,yes,synonym
e,no,no,no,
d,yes,yes,yes,hypernym
'''


class TestQualitative(unittest.TestCase):
    def test_aggregate(self):
        with temp_dir() as d:
            records = load_annotations(write_file(d, 'notes.csv', ANNOTATIONS))
        self.assertEqual(records[2], QualitativeRecord('e', False, False, False, None))
        table = aggregate_qualitative(records, INSTANCES)
        self.assertEqual(list(table), ['objRC|that', 'subjRC|which', 'subjRC|who'])
        self.assertEqual(table['subjRC|which'], {
            'n': 2, 'AN': 0.0, 'PL': 0.0, 'GR': 0.5,
            'antecedent_types': {
                'identical': 0.0, 'synonym': 1.0, 'hypernym': 0.0, 'hyponym': 0.0, 'unrelated': 0.0}})
        self.assertEqual(table['subjRC|who']['AN'], 1.0)

    def test_proportions(self):
        instances = [ClozeInstance('The [MASK] who left.', 'woman', ANTECEDENT, SUBJ_RC, 'who', str(i))
                     for i in range(4)]
        records = [
            QualitativeRecord('0', True, True, True, 'identical'),
            QualitativeRecord('1', True, False, True, 'identical'),
            QualitativeRecord('2', False, False, False, 'hypernym'),
            QualitativeRecord('3', True, True, True, 'unrelated')]
        cell = aggregate_qualitative(records, instances)['subjRC|who']
        self.assertEqual((cell['AN'], cell['PL'], cell['GR']), (0.75, 0.5, 0.75))
        self.assertEqual(cell['antecedent_types'], {
            'identical': 0.5, 'synonym': 0.0, 'hypernym': 0.25, 'hyponym': 0.0, 'unrelated': 0.25})
        self.assertAlmostEqual(sum(cell['antecedent_types'].values()), 1.0, delta=1e-9)

    def test_entailment(self):
        records = [QualitativeRecord('b', True, True, False), QualitativeRecord('a', True, True, False),
                   QualitativeRecord('c', False, False, True)]
        with self.assertRaises(EntailmentViolation) as cm:
            check_entailment(records)
        self.assertEqual(cm.exception.source_ids, ['a', 'b'])

    def test_unknown_ids(self):
        with self.assertRaises(ValidationError):
            aggregate_qualitative([QualitativeRecord('zzz', True, True, True)], INSTANCES)

    def test_bad_rows(self):
        with temp_dir() as d:
            path = write_file(d, 'bad.csv', ANNOTATIONS.replace('d,yes,yes', 'd,perhaps,yes'))
            with self.assertRaises(IngestionError) as cm:
                load_annotations(path)
            self.assertEqual(cm.exception.line_no, 5)
            path = write_file(d, 'kind.csv', ANNOTATIONS.replace('synonym', 'antonym'))
            with self.assertRaises(IngestionError):
                load_annotations(path)
            path = write_file(d, 'cols.csv', 'source_id,animacy\na,yes\n')
            with self.assertRaises(IngestionError):
                load_annotations(path)
