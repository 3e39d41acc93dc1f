"""
    rcprobe - relative clause probing toolkit
    utility functions
"""
# pylint: disable=invalid-name
import gettext
import hashlib
import json
import re
from typing import Any, Dict, Iterable, Iterator, List, NamedTuple, Optional, Tuple
import pkg_resources
from plumbum import local

CACHE_ENV = 'RCPROBE_CACHE'
DEFAULT_CACHE = '~/.cache/rcprobe'
RELATIVIZERS = ('who', 'whom', 'whose', 'which', 'that')
MASK_MARKER = '[MASK]'


class RcProbeError(ValueError):
    """Base of every error raised by rcprobe"""


class IngestionError(RcProbeError):
    """Input file could not be read; carries the path and the line number"""
    def __init__(self, path, line_no, message):
        self.path = str(path)
        self.line_no = line_no
        super().__init__('{}:{}: {}'.format(path, line_no, message))


class ValidationError(RcProbeError):
    """Custom error type"""


def get_translation_for(package_name: str) -> gettext.NullTranslations:
    """find and return gettext translation for package"""
    localedir = None
    for localedir in pkg_resources.resource_filename(package_name, 'i18n'), None:
        localefile = gettext.find(package_name, localedir)  # type: ignore
        if localefile:
            break
    return gettext.translation(package_name, localedir=localedir, fallback=True)  # type: ignore


def get_translation_functions(package_name: str, names: Tuple[str, ...] = ('gettext',)):
    """finds and installs translation functions for package"""
    translation = get_translation_for(package_name)
    return [getattr(translation, x) for x in names]


def data_file(name: str) -> str:
    """path of a file bundled in `rcprobe/data`"""
    return pkg_resources.resource_filename('rcprobe', 'data/' + name)


def cache_dir():
    """download cache; `RCPROBE_CACHE` overrides the default location"""
    path = local.path(local.env.get(CACHE_ENV, DEFAULT_CACHE))
    if not path.exists():
        path.mkdir()
    return path


def file_digest(path) -> str:
    """sha256 of a file's bytes"""
    digest = hashlib.sha256()
    with open(str(path), 'rb') as f:
        for chunk in iter(lambda: f.read(1 << 16), b''):
            digest.update(chunk)
    return digest.hexdigest()


def text_digest(text: str) -> str:
    """sha256 of an utf-8 string"""
    return hashlib.sha256(text.encode('utf-8')).hexdigest()


def dumps(obj: Any, indent: Optional[int] = None) -> str:
    """canonical json: sorted keys, no ascii escaping"""
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, indent=indent)


def read_jsonl(path) -> Iterator[Tuple[int, Dict[str, Any]]]:
    """yield `(line number, object)` for every non-blank line of a JSONL file"""
    with open(str(path), encoding='utf-8') as f:
        for line_no, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except ValueError as error:
                raise IngestionError(path, line_no, 'invalid json: {}'.format(error)) from error
            if not isinstance(obj, dict):
                raise IngestionError(path, line_no, 'expected a json object')
            yield line_no, obj


def write_jsonl(path, rows: Iterable[Dict[str, Any]]) -> None:
    """write one canonical json object per line"""
    with open(str(path), 'w', encoding='utf-8', newline='\n') as f:
        for row in rows:
            f.write(dumps(row))
            f.write('\n')


def write_json(path, obj: Any) -> None:
    """write an indented canonical json document"""
    with open(str(path), 'w', encoding='utf-8', newline='\n') as f:
        f.write(dumps(obj, indent=2))
        f.write('\n')


def read_json(path) -> Any:
    """read a json document"""
    with open(str(path), encoding='utf-8') as f:
        return json.load(f)


_relativizer_regexes = {}  # type: Dict[Tuple[str, ...], Any]


def relativizer_regex(forms: Iterable[str] = RELATIVIZERS):
    """case-insensitive word-boundary regex matching any of `forms`"""
    key = tuple(sorted(forms))
    if key not in _relativizer_regexes:
        alternatives = '|'.join(re.escape(f) for f in key)
        _relativizer_regexes[key] = re.compile(r'\b(?:{})\b'.format(alternatives), re.IGNORECASE)
    return _relativizer_regexes[key]


def match_casing(original: str, replacement: str) -> str:
    """give `replacement` the casing pattern of `original`"""
    if len(original) > 1 and original.isupper():
        return replacement.upper()
    if original[:1].isupper():
        return replacement[:1].upper() + replacement[1:]
    return replacement.lower()


class MarkedText(NamedTuple):
    """
    sentence authored with inline markup

    `{...}` encloses the antecedent (one or more words), `[...]` the
    relativizer and `<...>` the verb of the relative clause.
    Positions are whitespace word indices of `text`.
    """
    text: str
    words: List[str]
    antecedent: Optional[Tuple[int, int]]
    relativizer: Optional[int]
    verb: Optional[int]

    def char_span(self, word_idx: int) -> Tuple[int, int]:
        """character span of a word in `text`, punctuation glued to it excluded"""
        start = 0
        for i, word in enumerate(self.words):
            start = self.text.index(word, start)
            if i == word_idx:
                core = re.search(r'[\w\'-]+', word)
                if core is None:
                    return start, start + len(word)
                return start + core.start(), start + core.end()
            start += len(word)
        raise IndexError(word_idx)

    def core(self, word_idx: int) -> str:
        """a word without glued punctuation"""
        start, end = self.char_span(word_idx)
        return self.text[start:end]

    def words_between(self, left: int, right: int) -> int:
        """number of words strictly between two word positions"""
        return max(0, right - left - 1)


_markup_chars = re.compile(r'[{}\[\]<>]')


def parse_markup(marked: str) -> MarkedText:
    """strip inline markup and record the marked word positions"""
    raw = marked.split()
    antecedent_start = antecedent_end = relativizer = verb = None
    for i, token in enumerate(raw):
        if '{' in token:
            antecedent_start = i
        if '}' in token:
            antecedent_end = i + 1
        if '[' in token:
            relativizer = i
        if '<' in token:
            verb = i
    antecedent = None
    if antecedent_start is not None and antecedent_end is not None:
        antecedent = (antecedent_start, antecedent_end)
    text = _markup_chars.sub('', marked)
    return MarkedText(text, text.split(), antecedent, relativizer, verb)
