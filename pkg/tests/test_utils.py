import unittest
import os

from hypothesis import given
from hypothesis.strategies import sampled_from
from plumbum import local

from rcprobe import util
from rcprobe.util import (
    IngestionError, cache_dir, dumps, file_digest, match_casing, parse_markup,
    read_jsonl, relativizer_regex, text_digest, write_json, read_json)

from .helpers import temp_dir, write_file


class TestTextUtils(unittest.TestCase):
    def test_match_casing(self):
        self.assertEqual(match_casing('Who', 'which'), 'Which')
        self.assertEqual(match_casing('WHO', 'which'), 'WHICH')
        self.assertEqual(match_casing('who', 'Which'), 'which')

    @given(sampled_from(util.RELATIVIZERS), sampled_from(util.RELATIVIZERS))
    def test_match_casing_keeps_letters(self, original, replacement):
        for variant in (original, original.title(), original.upper()):
            self.assertEqual(match_casing(variant, replacement).lower(), replacement)

    def test_relativizer_regex(self):
        regex = relativizer_regex()
        self.assertEqual(regex.findall('Who knows which one? Thatcher did, whose car that is.'),
                         ['Who', 'which', 'whose', 'that'])
        self.assertEqual(relativizer_regex(['who']).findall('whom who'), ['who'])
        self.assertIs(relativizer_regex(['who']), relativizer_regex(('who',)))

    def test_parse_markup(self):
        marked = parse_markup('The {old debate} [which] began <yesterday> ended, sadly.')
        self.assertEqual(marked.text, 'The old debate which began yesterday ended, sadly.')
        self.assertEqual(marked.antecedent, (1, 3))
        self.assertEqual(marked.relativizer, 3)
        self.assertEqual(marked.verb, 5)
        self.assertEqual(marked.words_between(3, 5), 1)
        self.assertEqual(marked.words_between(3, 4), 0)
        self.assertEqual(marked.core(6), 'ended')
        start, end = marked.char_span(6)
        self.assertEqual(marked.text[start:end], 'ended')

    def test_markup_optional_parts(self):
        marked = parse_markup('Nothing marked here.')
        self.assertIsNone(marked.antecedent)
        self.assertIsNone(marked.relativizer)
        self.assertIsNone(marked.verb)


class TestFileUtils(unittest.TestCase):
    def test_jsonl(self):
        with temp_dir() as d:
            path = write_file(d, 'a.jsonl', '{"b": 1}\n\n{"a": 2}\n')
            self.assertEqual(list(read_jsonl(path)), [(1, {'b': 1}), (3, {'a': 2})])
            path = write_file(d, 'b.jsonl', '{"b": 1}\n{"a": \n')
            with self.assertRaises(IngestionError) as cm:
                list(read_jsonl(path))
            self.assertEqual(cm.exception.line_no, 2)
            self.assertIn('b.jsonl:2', str(cm.exception))
            path = write_file(d, 'c.jsonl', '[1, 2]\n')
            with self.assertRaises(IngestionError):
                list(read_jsonl(path))

    def test_canonical_json(self):
        self.assertEqual(dumps({'b': 1, 'a': 'ü'}), '{"a": "ü", "b": 1}')
        with temp_dir() as d:
            first, second = os.path.join(d, 'x.json'), os.path.join(d, 'y.json')
            write_json(first, {'b': [1, 2], 'a': None})
            write_json(second, {'a': None, 'b': [1, 2]})
            self.assertEqual(file_digest(first), file_digest(second))
            self.assertEqual(read_json(first), {'a': None, 'b': [1, 2]})
            with open(first, encoding='utf-8') as f:
                self.assertEqual(text_digest(f.read()), file_digest(first))

    def test_cache_dir(self):
        with temp_dir() as d:
            target = os.path.join(d, 'cache')
            with local.env(**{util.CACHE_ENV: target}):
                path = cache_dir()
            self.assertEqual(str(path), target)
            self.assertTrue(os.path.isdir(target))

    def test_builtin_data(self):
        self.assertTrue(os.path.exists(util.data_file('diagnostics.jsonl')))
        self.assertTrue(os.path.exists(util.data_file('cloze_starter.jsonl')))
