"""
    rcprobe - relative clause probing toolkit
    relative clause extraction from dependency parses
"""
# pylint: disable=too-many-instance-attributes,too-many-arguments
import hashlib
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, Iterator, List, Optional, Sequence, Tuple

import conllu
from plumbum import local

from .backends import BackendLoadError
from .util import RELATIVIZERS, IngestionError, RcProbeError, ValidationError
from .util import read_jsonl, relativizer_regex

log = logging.getLogger(__name__)

SUBJECT = 'subject'
OBJECT = 'object'
DEFAULT_RELCL_LABELS = frozenset({'relcl', 'acl:relcl'})
DEFAULT_SUBJECT_LABELS = frozenset({'nsubj', 'nsubjpass', 'nsubj:pass'})
DEFAULT_OBJECT_LABELS = frozenset({'dobj', 'obj'})
WHO_SIDE = ('who', 'whom')


class MalformedTree(RcProbeError):
    """Head indices do not form a single rooted tree"""


@dataclass(frozen=True)
class Token:
    """one token of a dependency parse; `head` is None for the root"""
    surface: str
    lemma: str
    head: Optional[int]
    dep_label: str
    char_span: Tuple[int, int]
    upos: str = '_'

    def to_json(self):  # pylint: disable=missing-function-docstring
        return {
            'surface': self.surface, 'lemma': self.lemma, 'head': self.head,
            'dep_label': self.dep_label, 'char_span': list(self.char_span), 'upos': self.upos}

    @classmethod
    def from_json(cls, obj):  # pylint: disable=missing-function-docstring
        return cls(
            obj['surface'], obj['lemma'], obj['head'], obj['dep_label'],
            tuple(obj['char_span']), obj.get('upos', '_'))


@dataclass(frozen=True)
class ParsedSentence:
    """
    sentence text with its dependency parse

    # Invariants
    exactly one root; heads form a tree; token char spans are ordered,
    non-overlapping and only whitespace lies between them
    """
    text: str
    tokens: Tuple[Token, ...]

    def check_tree(self) -> None:
        """raise `MalformedTree` unless heads form a single rooted tree"""
        n = len(self.tokens)
        roots = [i for i, t in enumerate(self.tokens) if t.head is None]
        if len(roots) != 1:
            raise MalformedTree('expected exactly one root, found {}'.format(len(roots)))
        for i, token in enumerate(self.tokens):
            if token.head is not None and not 0 <= token.head < n:
                raise MalformedTree('token {} has head {} outside the sentence'.format(i, token.head))
        for i in range(n):
            node, steps = i, 0
            while self.tokens[node].head is not None:
                node = self.tokens[node].head  # type: ignore
                steps += 1
                if steps > n:
                    raise MalformedTree('cycle through token {}'.format(i))

    def check_spans(self) -> None:
        """raise `ValidationError` unless char spans reconstruct the text"""
        cursor = 0
        for i, token in enumerate(self.tokens):
            start, end = token.char_span
            if start < cursor or self.text[cursor:start].strip():
                raise ValidationError('token {} span {} overlaps or skips text'.format(i, token.char_span))
            if self.text[start:end] != token.surface:
                raise ValidationError('token {} span does not cover {!r}'.format(i, token.surface))
            cursor = end
        if self.text[cursor:].strip():
            raise ValidationError('text after the last token is not covered')

    def validate(self) -> 'ParsedSentence':
        """check both invariants and return self"""
        self.check_tree()
        self.check_spans()
        return self

    def children(self) -> Dict[int, List[int]]:
        """map head index -> dependent indices"""
        result = defaultdict(list)  # type: Dict[int, List[int]]
        for i, token in enumerate(self.tokens):
            if token.head is not None:
                result[token.head].append(i)
        return result

    def subtree(self, idx: int) -> List[int]:
        """sorted token indices dominated by `idx`, itself included"""
        children = self.children()
        stack, seen = [idx], set()
        while stack:
            node = stack.pop()
            if node in seen:
                raise MalformedTree('cycle through token {}'.format(node))
            seen.add(node)
            stack.extend(children.get(node, ()))
        return sorted(seen)

    def to_json(self):  # pylint: disable=missing-function-docstring
        return {'text': self.text, 'tokens': [t.to_json() for t in self.tokens]}

    @classmethod
    def from_json(cls, obj):  # pylint: disable=missing-function-docstring
        return cls(obj['text'], tuple(Token.from_json(t) for t in obj['tokens']))


@dataclass(frozen=True)
class RCStructure:
    """relative clause located in a parse; `rc_span` is a half-open token range"""
    antecedent_idx: int
    rc_verb_idx: int
    rc_span: Tuple[int, int]
    relativizer_idx: int


@dataclass(frozen=True)
class RCCandidate:
    """relative clause with everything but animacy determined"""
    source_id: str
    sentence: ParsedSentence
    structure: RCStructure
    role: str
    restrictive: bool
    relativizer_form: str

    @property
    def antecedent_lemma(self) -> str:  # pylint: disable=missing-function-docstring
        return self.sentence.tokens[self.structure.antecedent_idx].lemma.casefold()


@dataclass(frozen=True)
class RCRecord:
    """grammatical corpus sentence with its relative clause and meta-data variables"""
    source_id: str
    sentence: ParsedSentence
    relativizer_idx: int
    antecedent_idx: int
    rc_span: Tuple[int, int]
    animate: bool
    restrictive: bool
    subjrc: bool
    relativizer_form: str

    def __post_init__(self):
        surface = self.sentence.tokens[self.relativizer_idx].surface
        if surface.lower() != self.relativizer_form:
            raise ValidationError('{}: relativizer form {!r} does not match token {!r}'.format(
                self.source_id, self.relativizer_form, surface))
        if not self.rc_span[0] <= self.relativizer_idx < self.rc_span[1]:
            raise ValidationError('{}: relativizer outside the relative clause'.format(
                self.source_id))

    @property
    def text(self) -> str:  # pylint: disable=missing-function-docstring
        return self.sentence.text

    @property
    def relativizer(self) -> Token:  # pylint: disable=missing-function-docstring
        return self.sentence.tokens[self.relativizer_idx]

    @property
    def antecedent(self) -> Token:  # pylint: disable=missing-function-docstring
        return self.sentence.tokens[self.antecedent_idx]

    @property
    def triple(self) -> Tuple[bool, bool, bool]:
        """(animate, restrictive, subjrc)"""
        return self.animate, self.restrictive, self.subjrc

    def to_json(self):  # pylint: disable=missing-function-docstring
        return {
            'source_id': self.source_id, 'sentence': self.sentence.to_json(),
            'relativizer_idx': self.relativizer_idx, 'antecedent_idx': self.antecedent_idx,
            'rc_span': list(self.rc_span), 'animate': self.animate,
            'restrictive': self.restrictive, 'subjrc': self.subjrc,
            'relativizer_form': self.relativizer_form}

    @classmethod
    def from_json(cls, obj):  # pylint: disable=missing-function-docstring
        return cls(
            obj['source_id'], ParsedSentence.from_json(obj['sentence']).validate(),
            obj['relativizer_idx'], obj['antecedent_idx'], tuple(obj['rc_span']),
            obj['animate'], obj['restrictive'], obj['subjrc'], obj['relativizer_form'])


@dataclass(frozen=True)
class AnimacyWordlists:
    """antecedent lemmas attested exclusively with who or with which"""
    who_exclusive: FrozenSet[str] = frozenset()
    which_exclusive: FrozenSet[str] = frozenset()

    def __post_init__(self):
        overlap = self.who_exclusive & self.which_exclusive
        if overlap:
            raise ValidationError('wordlists overlap: {}'.format(sorted(overlap)))

    def to_json(self):  # pylint: disable=missing-function-docstring
        return {
            'who_exclusive': sorted(self.who_exclusive),
            'which_exclusive': sorted(self.which_exclusive)}


@dataclass
class ExtractionConfig:
    """dependency labels driving the extraction rules"""
    relcl_labels: FrozenSet[str] = DEFAULT_RELCL_LABELS
    subject_labels: FrozenSet[str] = DEFAULT_SUBJECT_LABELS
    object_labels: FrozenSet[str] = DEFAULT_OBJECT_LABELS


@dataclass
class ExtractionStats:
    """how many sentences were read, emitted and discarded (by reason)"""
    seen: int = 0
    emitted: int = 0
    discarded: Counter = field(default_factory=Counter)

    def to_json(self):  # pylint: disable=missing-function-docstring
        return {'seen': self.seen, 'emitted': self.emitted, 'discarded': dict(sorted(self.discarded.items()))}


def filter_single_pronoun(text: str) -> bool:
    """true iff exactly one of who/whom/whose/which/that occurs as a word"""
    return len(relativizer_regex().findall(text)) == 1


def _locate(parsed: ParsedSentence, relcl_labels) -> Tuple[Optional[RCStructure], str]:
    parsed.check_tree()
    pronouns = [i for i, t in enumerate(parsed.tokens) if t.surface.lower() in RELATIVIZERS]
    if len(pronouns) != 1:
        return None, 'pronoun_count'
    relativizer = pronouns[0]
    reason = 'no_relcl'
    for verb, token in enumerate(parsed.tokens):
        if token.dep_label not in relcl_labels or token.head is None:
            continue
        subtree = parsed.subtree(verb)
        if relativizer not in subtree:
            reason = 'relativizer_outside_rc'
            continue
        span = (subtree[0], subtree[-1] + 1)
        if len(subtree) != span[1] - span[0]:
            return None, 'non_contiguous_rc'
        return RCStructure(token.head, verb, span, relativizer), ''
    return None, reason


def find_relative_clause(
        parsed: ParsedSentence,
        relcl_labels: FrozenSet[str] = DEFAULT_RELCL_LABELS) -> Optional[RCStructure]:
    """
    locate the relative clause introduced by the sentence's only pronoun

    The antecedent is the head of the `relcl` edge, the clause is the subtree
    of the clause verb and must contain the relativizer.
    Raises `MalformedTree` on cyclic heads.
    """
    structure, _reason = _locate(parsed, relcl_labels)
    return structure


def classify_role(
        rc: RCStructure, parsed: ParsedSentence,
        subject_labels: FrozenSet[str] = DEFAULT_SUBJECT_LABELS,
        object_labels: FrozenSet[str] = DEFAULT_OBJECT_LABELS) -> Optional[str]:
    """subject/object position of the relativizer inside the clause, None otherwise"""
    label = parsed.tokens[rc.relativizer_idx].dep_label
    if label in subject_labels:
        return SUBJECT
    if label in object_labels:
        return OBJECT
    return None


def annotate_restrictive(rc: RCStructure, parsed: ParsedSentence) -> bool:
    """non-restrictive iff a comma immediately precedes the relativizer"""
    if rc.relativizer_idx == 0:
        return True
    return parsed.tokens[rc.relativizer_idx - 1].surface != ','


def build_exclusive_wordlists(candidates: Iterable[RCCandidate]) -> AnimacyWordlists:
    """split antecedent lemmas into who-only and which-only sets"""
    who, which = set(), set()
    for candidate in candidates:
        if candidate.relativizer_form in WHO_SIDE:
            who.add(candidate.antecedent_lemma)
        elif candidate.relativizer_form == 'which':
            which.add(candidate.antecedent_lemma)
    return AnimacyWordlists(frozenset(who - which), frozenset(which - who))


def annotate_animacy(candidate: RCCandidate, lists: AnimacyWordlists) -> Optional[bool]:
    """animacy from the relativizer, or from the wordlists for `that`"""
    form = candidate.relativizer_form
    if form in WHO_SIDE:
        return True
    if form == 'which':
        return False
    if form == 'that':
        if candidate.antecedent_lemma in lists.who_exclusive:
            return True
        if candidate.antecedent_lemma in lists.which_exclusive:
            return False
    return None


def source_id_for(ordinal: int, text: str) -> str:
    """stable id of a corpus sentence"""
    return '{:07d}-{}'.format(ordinal, hashlib.sha1(text.encode('utf-8')).hexdigest()[:8])


def collect_candidate(
        ordinal: int, parsed: ParsedSentence,
        config: ExtractionConfig) -> Tuple[Optional[RCCandidate], str]:
    """first pass for one sentence: the candidate, or the discard reason"""
    if not filter_single_pronoun(parsed.text):
        return None, 'pronoun_filter'
    structure, reason = _locate(parsed, config.relcl_labels)
    if structure is None:
        return None, reason
    role = classify_role(structure, parsed, config.subject_labels, config.object_labels)
    if role is None:
        return None, 'role'
    form = parsed.tokens[structure.relativizer_idx].surface.lower()
    return RCCandidate(
        source_id_for(ordinal, parsed.text), parsed, structure, role,
        annotate_restrictive(structure, parsed), form), ''


def finalize(candidate: RCCandidate, lists: AnimacyWordlists) -> Tuple[Optional[RCRecord], str]:
    """second pass for one candidate"""
    if candidate.relativizer_form == 'whose':
        return None, 'whose'
    animate = annotate_animacy(candidate, lists)
    if animate is None:
        return None, 'animacy'
    s = candidate.structure
    return RCRecord(
        candidate.source_id, candidate.sentence, s.relativizer_idx, s.antecedent_idx,
        s.rc_span, animate, candidate.restrictive, candidate.role == SUBJECT,
        candidate.relativizer_form), ''


def extract_records(
        sentences: Iterable[Tuple[int, ParsedSentence]],
        config: Optional[ExtractionConfig] = None
) -> Tuple[List[RCRecord], AnimacyWordlists, ExtractionStats]:
    """
    run both extraction passes over `(ordinal, parse)` pairs

    Pass one collects candidates, the wordlists are built from all who/which
    candidates, pass two resolves animacy. Only records with all three
    meta-data variables determined are returned.
    """
    config = config or ExtractionConfig()
    stats = ExtractionStats()
    candidates = []
    for ordinal, parsed in sentences:
        stats.seen += 1
        try:
            candidate, reason = collect_candidate(ordinal, parsed, config)
        except MalformedTree as error:
            raise IngestionError('<parse>', ordinal, str(error)) from error
        if candidate is None:
            stats.discarded[reason] += 1
            log.debug('sentence %d discarded: %s', ordinal, reason)
            continue
        candidates.append(candidate)
    lists = build_exclusive_wordlists(candidates)
    log.info(
        'pass 1: %d candidates, wordlists who=%d which=%d',
        len(candidates), len(lists.who_exclusive), len(lists.which_exclusive))
    records = []
    for candidate in candidates:
        record, reason = finalize(candidate, lists)
        if record is None:
            stats.discarded[reason] += 1
            log.debug('%s discarded: %s', candidate.source_id, reason)
            continue
        records.append(record)
    stats.emitted = len(records)
    log.info('pass 2: %d records emitted from %d sentences', stats.emitted, stats.seen)
    return records, lists, stats


def read_corpus(path) -> Iterator[Tuple[int, str]]:
    """yield `(line number, sentence)` from a .txt or .jsonl corpus"""
    path = local.path(path)
    if path.suffix == '.jsonl':
        for line_no, obj in read_jsonl(path):
            if not isinstance(obj.get('text'), str) or not obj['text'].strip():
                raise IngestionError(path, line_no, 'missing "text"')
            yield line_no, obj['text'].strip()
        return
    with open(str(path), encoding='utf-8') as f:
        for line_no, line in enumerate(f, 1):
            line = line.strip()
            if line:
                yield line_no, line


def _space_joined(tokens) -> str:
    text = ''
    for token in tokens:
        text += token['form']
        misc = token.get('misc') or {}
        if misc.get('SpaceAfter') != 'No':
            text += ' '
    return text.rstrip()


def from_conllu(tokenlist, text: Optional[str] = None, where=('<conllu>', 0)) -> ParsedSentence:
    """
    convert one `conllu.TokenList` into a ParsedSentence

    Multiword token lines and empty nodes are dropped. FORMs are aligned into
    `text` (or the `# text` metadata, or the space-joined FORMs) to compute
    char spans.
    """
    words = [t for t in tokenlist if isinstance(t['id'], int)]
    if text is None:
        text = tokenlist.metadata.get('text') or _space_joined(words)
    index_of = {t['id']: i for i, t in enumerate(words)}
    tokens = []
    cursor = 0
    for t in words:
        form = t['form']
        start = text.find(form, cursor)
        if start < 0 or text[cursor:start].strip():
            raise IngestionError(where[0], where[1], 'token {!r} does not align with {!r}'.format(form, text))
        cursor = start + len(form)
        head = t['head']
        if head in (0, None):
            head_idx = None
        elif head in index_of:
            head_idx = index_of[head]
        else:
            raise IngestionError(where[0], where[1], 'head {} of {!r} is not a token'.format(head, form))
        lemma = t['lemma'] if t['lemma'] not in (None, '_') else form
        tokens.append(Token(form, lemma, head_idx, t['deprel'] or '_', (start, cursor), t['upos'] or '_'))
    sentence = ParsedSentence(text, tuple(tokens))
    try:
        sentence.check_spans()
    except ValidationError as error:
        raise IngestionError(where[0], where[1], str(error)) from error
    return sentence


def read_conllu(conllu_path, corpus_path=None) -> Iterator[Tuple[int, ParsedSentence]]:
    """
    yield `(ordinal, parse)` pairs from a CoNLL-U file, aligned by order with a corpus

    The ordinal is the corpus line number when a corpus is given, else the
    sentence number in the CoNLL-U file.
    """
    corpus = iter(read_corpus(corpus_path)) if corpus_path is not None else None
    with open(str(conllu_path), encoding='utf-8') as f:
        for number, tokenlist in enumerate(conllu.parse_incr(f), 1):
            if corpus is None:
                yield number, from_conllu(tokenlist, where=(conllu_path, number))
                continue
            try:
                line_no, text = next(corpus)
            except StopIteration:
                raise IngestionError(
                    conllu_path, number, 'more parses than corpus sentences') from None
            yield line_no, from_conllu(tokenlist, text, where=(corpus_path, line_no))
    if corpus is not None:
        rest = next(corpus, None)
        if rest is not None:
            raise IngestionError(corpus_path, rest[0], 'sentence has no parse')


class ParserAdapter:
    """turns raw sentences into ParsedSentence; subclass for a concrete parser"""
    def parse(self, text: str) -> ParsedSentence:
        """parse one sentence"""
        raise NotImplementedError

    def parse_corpus(self, corpus: Iterable[Tuple[int, str]]) -> Iterator[Tuple[int, ParsedSentence]]:
        """parse `(line number, text)` pairs"""
        for line_no, text in corpus:
            yield line_no, self.parse(text)


class SpacyParser(ParserAdapter):
    """
    spaCy-backed parser adapter (`pip install rcprobe[spacy]`)

    When spaCy splits a line into several sentences, later sentence roots
    are attached to the first root with the label `dep` so the line keeps a
    single tree.
    """
    def __init__(self, model: str = 'en_core_web_sm'):
        try:
            import spacy  # pylint: disable=import-outside-toplevel
        except ImportError as error:
            raise BackendLoadError(
                'install rcprobe[spacy] to parse with {!r}: {}'.format(model, error)) from error
        self.model = model
        try:
            self._nlp = spacy.load(model, disable=['ner'])
        except (OSError, ValueError) as error:
            raise BackendLoadError('cannot load spaCy model {!r}: {}'.format(model, error)) from error

    def parse(self, text: str) -> ParsedSentence:
        doc = self._nlp(text)
        first_root = None
        tokens = []
        for t in doc:
            head = None if t.head.i == t.i else t.head.i  # type: Optional[int]
            label = t.dep_
            if head is None:
                if first_root is None:
                    first_root = t.i
                else:
                    head, label = first_root, 'dep'
            tokens.append(Token(t.text, t.lemma_, head, label, (t.idx, t.idx + len(t.text)), t.pos_))
        return ParsedSentence(text, tuple(tokens))


def read_records(path) -> List[RCRecord]:
    """load RCRecord JSONL"""
    records = []
    for line_no, obj in read_jsonl(path):
        try:
            records.append(RCRecord.from_json(obj))
        except (KeyError, TypeError, IndexError, ValidationError, MalformedTree) as error:
            raise IngestionError(path, line_no, 'invalid record: {}'.format(error)) from error
    return records


def records_to_json(records: Sequence[RCRecord]):
    """json rows for `write_jsonl`"""
    return [r.to_json() for r in records]
