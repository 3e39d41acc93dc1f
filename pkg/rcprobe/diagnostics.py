"""
    rcprobe - relative clause probing toolkit
    diagnostic suite evaluation in mean logit
"""
# pylint: disable=too-many-instance-attributes
import csv
import logging
from collections import OrderedDict, defaultdict
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .backends import Backend, pool
from .prober import LinearProbe, probe_logit
from .util import IngestionError, ValidationError
from .util import data_file, dumps, parse_markup, read_jsonl, text_digest

log = logging.getLogger(__name__)

NOMINAL = 'nominal'
CLAUSAL = 'clausal'
SHORT = '3-4 words'
LONG = '>4 words'
FACTORS = (NOMINAL, CLAUSAL, SHORT, LONG)
CASE3_DISTANCE = 3
SUITE_SIZE = 32


@dataclass(frozen=True)
class DiagnosticSentence:
    """one diagnostic item; cases 1-3 are grammatical, 4-5 are not"""
    text: str
    case: int
    antecedent_kind: str
    restrictive: bool
    intervening_words: Optional[int]
    expected_acceptable: bool
    item_id: str = ''
    family: str = ''
    reconstructed: bool = True
    verb_distance: Optional[int] = None

    def validate(self) -> 'DiagnosticSentence':
        """check the item invariants"""
        def fail(message):
            raise ValidationError('{}: {}'.format(self.item_id or self.text, message))
        if self.case not in range(1, 6):
            fail('case must be 1-5')
        if self.antecedent_kind not in (NOMINAL, CLAUSAL):
            fail('antecedent kind must be nominal or clausal')
        if self.expected_acceptable != (self.case <= 3):
            fail('cases 1-3 are acceptable, 4-5 are not')
        if self.case >= 4 and not self.restrictive:
            fail('cases 4-5 have restrictive variants only')
        if (self.intervening_words is not None) != (self.case == 2):
            fail('intervening words are given for case 2 only')
        if self.case == 2 and not 3 <= self.intervening_words <= 7:  # type: ignore
            fail('case 2 needs 3-7 intervening words')
        if self.case == 3 and self.verb_distance not in (None, CASE3_DISTANCE):
            fail('case 3 needs exactly three words before the verb')
        return self

    @property
    def length_bucket(self) -> Optional[str]:  # pylint: disable=missing-function-docstring
        if self.intervening_words is None:
            return None
        return SHORT if self.intervening_words <= 4 else LONG

    def to_json(self):  # pylint: disable=missing-function-docstring
        return {
            'id': self.item_id, 'family': self.family, 'text': self.text, 'case': self.case,
            'antecedent_kind': self.antecedent_kind, 'restrictive': self.restrictive,
            'intervening_words': self.intervening_words,
            'expected_acceptable': self.expected_acceptable, 'reconstructed': self.reconstructed}


def sentence_from_json(obj) -> DiagnosticSentence:
    """
    build an item from a suite row

    Rows either carry `marked` text (distances are derived from the markup)
    or plain `text` with an explicit `intervening_words`.
    """
    case = int(obj['case'])
    verb_distance = None
    intervening = obj.get('intervening_words')
    if 'marked' in obj:
        marked = parse_markup(obj['marked'])
        if marked.antecedent is None or marked.relativizer is None or marked.verb is None:
            raise ValidationError('{}: markup needs antecedent, relativizer and verb'.format(obj.get('id')))
        text = marked.text
        verb_distance = marked.words_between(marked.relativizer, marked.verb)
        if case == 2:
            intervening = marked.words_between(marked.antecedent[1] - 1, marked.relativizer)
    else:
        text = obj['text']
    return DiagnosticSentence(
        text, case, obj['antecedent_kind'], bool(obj['restrictive']),
        None if intervening is None else int(intervening), bool(obj['expected_acceptable']),
        obj.get('id', ''), obj.get('family', ''), bool(obj.get('reconstructed', True)),
        verb_distance).validate()


def load_suite(path) -> List[DiagnosticSentence]:
    """read a suite JSONL"""
    suite = []
    for line_no, obj in read_jsonl(path):
        try:
            suite.append(sentence_from_json(obj))
        except (KeyError, TypeError, ValueError) as error:
            raise IngestionError(path, line_no, str(error)) from error
    return suite


def load_builtin_suite() -> List[DiagnosticSentence]:
    """the shipped 32 item suite"""
    suite = load_suite(data_file('diagnostics.jsonl'))
    if len(suite) != SUITE_SIZE:
        raise ValidationError('built-in suite has {} items'.format(len(suite)))
    return suite


def suite_digest(suite: Sequence[DiagnosticSentence]) -> str:
    """sha256 of the canonical suite json"""
    return text_digest(dumps([s.to_json() for s in suite]))


Cell = Tuple[int, str, bool]


def cell_key(cell: Cell) -> str:
    """`case|factor|R` or `case|factor|NR`"""
    case, factor, restrictive = cell
    return '{}|{}|{}'.format(case, factor, 'R' if restrictive else 'NR')


def cells_of(item: DiagnosticSentence) -> List[Cell]:
    """antecedent-kind cell and, for case 2, the length bucket cell"""
    cells = [(item.case, item.antecedent_kind, item.restrictive)]
    if item.length_bucket:
        cells.append((item.case, item.length_bucket, item.restrictive))
    return cells


@dataclass
class DiagnosticReport:
    """mean logit per (case, factor, restrictive) cell and accuracy per case"""
    backend_id: str
    layer: int
    pooling: str
    digest: str
    mean_logit: Dict[Cell, float]
    counts: Dict[Cell, int]
    accuracy: Dict[int, float]
    logits: Dict[str, float] = field(default_factory=dict)

    def to_json(self):  # pylint: disable=missing-function-docstring
        return {
            'backend_id': self.backend_id, 'layer': self.layer, 'pooling': self.pooling,
            'suite_digest': self.digest,
            'cells': [
                {'case': c[0], 'factor': c[1], 'restrictive': c[2],
                 'mean_logit': self.mean_logit[c], 'count': self.counts[c]}
                for c in sorted(self.mean_logit, key=lambda c: (c[0], FACTORS.index(c[1]), not c[2]))],
            'accuracy': {str(k): v for k, v in sorted(self.accuracy.items())},
            'logits': dict(sorted(self.logits.items()))}

    @classmethod
    def from_json(cls, obj):  # pylint: disable=missing-function-docstring
        cells = {(c['case'], c['factor'], c['restrictive']): c for c in obj['cells']}
        return cls(
            obj['backend_id'], obj['layer'], obj['pooling'], obj['suite_digest'],
            {k: c['mean_logit'] for k, c in cells.items()}, {k: c['count'] for k, c in cells.items()},
            {int(k): v for k, v in obj['accuracy'].items()}, dict(obj.get('logits', {})))


def evaluate_suite(
        probe: LinearProbe, backend: Backend, suite: Sequence[DiagnosticSentence],
        include_specials: bool = False) -> DiagnosticReport:
    """run the probe over every item at its layer and pooling"""
    grouped = defaultdict(list)  # type: Dict[Cell, List[float]]
    hits = defaultdict(list)  # type: Dict[int, List[bool]]
    raw = OrderedDict()  # type: Dict[str, float]
    for i, item in enumerate(suite):
        vector = pool(backend.embed_layers(item.text), probe.layer, probe.pooling, include_specials)
        logit = probe_logit(probe, vector)
        raw[item.item_id or str(i)] = logit
        for cell in cells_of(item):
            grouped[cell].append(logit)
        hits[item.case].append((logit > 0) == item.expected_acceptable)
    log.info('%s: evaluated %d diagnostic items', backend.name, len(suite))
    return DiagnosticReport(
        backend.name, probe.layer, probe.pooling, suite_digest(suite),
        {cell: float(np.mean(values)) for cell, values in grouped.items()},
        {cell: len(values) for cell, values in grouped.items()},
        {case: float(np.mean(values)) for case, values in sorted(hits.items())},
        raw)


def write_diagnostics_csv(path, reports: Sequence[DiagnosticReport]) -> None:
    """rows: case x factor; columns: restrictive / non-restrictive mean logit per backend"""
    rows = sorted(
        {(c[0], c[1]) for r in reports for c in r.mean_logit},
        key=lambda row: (row[0], FACTORS.index(row[1])))
    header = ['case', 'factor']
    for r in reports:
        header += ['{}:restrictive'.format(r.backend_id), '{}:non-restrictive'.format(r.backend_id)]
    with open(str(path), 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(header)
        for case, factor in rows:
            line = [case, factor]  # type: List
            for r in reports:
                for restrictive in (True, False):
                    value = r.mean_logit.get((case, factor, restrictive))
                    line.append('' if value is None else '{:.6f}'.format(value))
            writer.writerow(line)
