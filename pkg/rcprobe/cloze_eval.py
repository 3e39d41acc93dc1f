"""
    rcprobe - relative clause probing toolkit
    masked prediction of relativizers and antecedents
"""
# pylint: disable=too-many-instance-attributes
import csv
import logging
import math
from collections import Counter, OrderedDict, defaultdict
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from .backends import Backend, MaskedDistribution
from .extraction import RCRecord
from .util import MASK_MARKER, RELATIVIZERS, IngestionError, RcProbeError, ValidationError
from .util import data_file, parse_markup, read_jsonl

log = logging.getLogger(__name__)

RELATIVIZER = 'relativizer'
ANTECEDENT = 'antecedent'
TARGET_KINDS = (RELATIVIZER, ANTECEDENT)
SUBJ_RC = 'subjRC'
OBJ_RC = 'objRC'
ANTECEDENT_TYPES = ('identical', 'synonym', 'hypernym', 'hyponym', 'unrelated')
YES_ANSWERS = ('yes', 'y', 'true', 'True', '1')
NO_ANSWERS = ('no', 'n', 'false', 'False', '0')
ANNOTATION_COLUMNS = ('source_id', 'animacy', 'plausibility', 'grammaticality', 'antecedent_type')


class TargetOutOfVocabulary(RcProbeError):
    """Target is not an item of the distribution"""


class EmptyResults(RcProbeError):
    """Metric over zero instances"""


class EntailmentViolation(RcProbeError):
    """Plausible but ungrammatical annotations; carries the offending ids"""
    def __init__(self, source_ids: Sequence[str]):
        self.source_ids = list(source_ids)
        super().__init__('plausibility without grammaticality: {}'.format(', '.join(self.source_ids)))


@dataclass(frozen=True)
class ClozeInstance:
    """a sentence with exactly one mask and the word expected there"""
    text_with_mask: str
    target: str
    target_kind: str
    rc_type: str
    relativizer_form: str
    source_id: str

    def __post_init__(self):
        if self.text_with_mask.count(MASK_MARKER) != 1:
            raise ValidationError('{}: exactly one {} expected'.format(self.source_id, MASK_MARKER))
        if self.target_kind not in TARGET_KINDS:
            raise ValidationError('{}: unknown target kind {!r}'.format(self.source_id, self.target_kind))

    @property
    def cell(self) -> Tuple[str, str]:  # pylint: disable=missing-function-docstring
        return self.rc_type, self.relativizer_form

    def to_json(self):  # pylint: disable=missing-function-docstring
        return {
            'text_with_mask': self.text_with_mask, 'target': self.target,
            'target_kind': self.target_kind, 'rc_type': self.rc_type,
            'relativizer_form': self.relativizer_form, 'source_id': self.source_id}

    @classmethod
    def from_json(cls, obj):  # pylint: disable=missing-function-docstring
        return cls(
            obj['text_with_mask'], obj['target'], obj['target_kind'], obj['rc_type'],
            obj['relativizer_form'], obj['source_id'])


class ClozeResult(NamedTuple):
    """a scored instance"""
    instance: ClozeInstance
    distribution: MaskedDistribution


def _masked(text: str, span: Tuple[int, int]) -> str:
    return text[:span[0]] + MASK_MARKER + text[span[1]:]


def make_cloze(record: RCRecord, kind: str, backend: Backend) -> Optional[ClozeInstance]:
    """
    mask the relativizer or the antecedent of a restrictive record

    Nothing is returned for non-restrictive records or when the target is
    not a single piece of the backend vocabulary.
    """
    if not record.restrictive:
        return None
    token = record.relativizer if kind == RELATIVIZER else record.antecedent
    if not backend.is_single_piece(token.surface):
        log.debug('%s: %r is not a single piece', record.source_id, token.surface)
        return None
    return ClozeInstance(
        _masked(record.text, token.char_span), token.surface, kind,
        SUBJ_RC if record.subjrc else OBJ_RC, record.relativizer_form, record.source_id)


def cloze_from_marked(item: Mapping, kind: str, backend: Backend) -> Optional[ClozeInstance]:
    """cloze instance from a marked-up starter item; the antecedent is its last marked word"""
    marked = parse_markup(item['marked'])
    if marked.antecedent is None or marked.relativizer is None:
        raise ValidationError('{}: antecedent and relativizer must be marked'.format(item.get('id')))
    position = marked.relativizer if kind == RELATIVIZER else marked.antecedent[1] - 1
    target = marked.core(position)
    if not backend.is_single_piece(target):
        return None
    return ClozeInstance(
        _masked(marked.text, marked.char_span(position)), target, kind, item['rc_type'],
        marked.core(marked.relativizer).lower(), item.get('id', ''))


def load_starter_set() -> List[dict]:
    """30 authored items, 5 per rc type x relativizer"""
    return [obj for _line, obj in read_jsonl(data_file('cloze_starter.jsonl'))]


def build_instances(
        items: Iterable[Union[RCRecord, Mapping]], kind: str,
        backend: Backend) -> Tuple[List[ClozeInstance], Dict[Tuple[str, str], int]]:
    """instances plus skip counts per (rc type, relativizer) cell"""
    instances = []
    skipped = Counter()  # type: Counter
    for item in items:
        if isinstance(item, RCRecord):
            instance = make_cloze(item, kind, backend)
            cell = (SUBJ_RC if item.subjrc else OBJ_RC, item.relativizer_form)
        else:
            instance = cloze_from_marked(item, kind, backend)
            cell = (item['rc_type'], item['relativizer_form'])
        if instance is None:
            skipped[cell] += 1
        else:
            instances.append(instance)
    return instances, dict(skipped)


def score_instances(backend: Backend, instances: Sequence[ClozeInstance]) -> List[ClozeResult]:
    """masked distribution for every instance"""
    return [ClozeResult(i, backend.predict_masked(backend.tokenize(i.text_with_mask))) for i in instances]


def _pairs(results) -> List[Tuple[MaskedDistribution, str, bool]]:
    pairs = []
    for result in results:
        if isinstance(result, ClozeResult):
            ignore_case = result.instance.target_kind == RELATIVIZER
            pairs.append((result.distribution, result.instance.target, ignore_case))
        else:
            distribution, target = result
            pairs.append((distribution, target, target.lower() in RELATIVIZERS))
    if not pairs:
        raise EmptyResults('no results to score')
    return pairs


def _matches(item: str, target: str, ignore_case: bool) -> bool:
    return item.lower() == target.lower() if ignore_case else item == target


def mp_at_1(results) -> float:
    """fraction of instances whose top item is the target"""
    pairs = _pairs(results)
    return sum(_matches(d.top(1)[0], t, ic) for d, t, ic in pairs) / len(pairs)


def mtr(results) -> float:
    """mean 1-based rank of the target"""
    ranks = []
    for distribution, target, ignore_case in _pairs(results):
        rank = distribution.rank(target, ignore_case)
        if rank is None:
            raise TargetOutOfVocabulary('{!r} is not in the vocabulary'.format(target))
        ranks.append(rank)
    return float(np.mean(ranks))


def nme(results) -> float:
    """mean entropy normalized by ln(vocabulary size)"""
    values = []
    for distribution, _target, _ignore_case in _pairs(results):
        if distribution.vocab_size < 2:
            raise ValidationError('entropy normalization needs at least two vocabulary items')
        values.append(distribution.entropy() / math.log(distribution.vocab_size))
    return float(np.mean(values))


def relativizer_ratio(results) -> float:
    """fraction of top predictions that are relativizers"""
    pairs = _pairs(results)
    return sum(d.top(1)[0].lower() in RELATIVIZERS for d, _t, _ic in pairs) / len(pairs)


@dataclass
class ClozeMetrics:
    """quantitative cloze metrics of a result set"""
    mp_at_1: float
    mtr: float
    nme: float
    relativizer_ratio: Optional[float]
    n_evaluated: int
    n_skipped: int

    def to_json(self):  # pylint: disable=missing-function-docstring
        return {
            'mp_at_1': self.mp_at_1, 'mtr': self.mtr, 'nme': self.nme,
            'relativizer_ratio': self.relativizer_ratio,
            'n_evaluated': self.n_evaluated, 'n_skipped': self.n_skipped}


def compute_metrics(results: Sequence[ClozeResult], n_skipped: int = 0) -> ClozeMetrics:
    """all metrics; the relativizer ratio only for relativizer targets"""
    ratio = None
    if all(r.instance.target_kind == RELATIVIZER for r in results):
        ratio = relativizer_ratio(results)
    return ClozeMetrics(
        mp_at_1(results), mtr(results), nme(results), ratio, len(results), n_skipped)


def cell_name(cell: Tuple[str, str]) -> str:  # pylint: disable=missing-function-docstring
    return '{}|{}'.format(*cell)


def metrics_table(
        results: Sequence[ClozeResult],
        skipped: Optional[Mapping[Tuple[str, str], int]] = None) -> Dict[str, ClozeMetrics]:
    """metrics per `rc_type|relativizer` cell"""
    skipped = skipped or {}
    grouped = defaultdict(list)  # type: Dict[Tuple[str, str], List[ClozeResult]]
    for result in results:
        grouped[result.instance.cell].append(result)
    table = OrderedDict()  # type: Dict[str, ClozeMetrics]
    for cell in sorted(set(grouped) | set(skipped)):
        if grouped[cell]:
            table[cell_name(cell)] = compute_metrics(grouped[cell], skipped.get(cell, 0))
        else:
            log.warning('cell %s has no evaluable instance', cell_name(cell))
    return table


def table_json(table: Mapping[str, ClozeMetrics]):
    """rows: metric; columns: rc type x relativizer"""
    metrics = ('mp_at_1', 'mtr', 'nme', 'relativizer_ratio', 'n_evaluated', 'n_skipped')
    return {
        'columns': list(table),
        'rows': {m: {column: getattr(table[column], m) for column in table} for m in metrics}}


@dataclass(frozen=True)
class QualitativeRecord:
    """human judgement of one prediction"""
    source_id: str
    animacy: bool
    plausibility: bool
    grammaticality: bool
    antecedent_type: Optional[str] = None


def _flag(value: str, column: str, where) -> bool:
    value = (value or '').strip()
    if value in YES_ANSWERS:
        return True
    if value in NO_ANSWERS:
        return False
    raise IngestionError(where[0], where[1], '{} must be yes/no, got {!r}'.format(column, value))


def load_annotations(path) -> List[QualitativeRecord]:
    """read an annotation CSV (source_id, animacy, plausibility, grammaticality, antecedent_type)"""
    records = []
    with open(str(path), encoding='utf-8', newline='') as f:
        reader = csv.DictReader(f)
        missing = set(ANNOTATION_COLUMNS[:4]) - set(reader.fieldnames or ())
        if missing:
            raise IngestionError(path, 1, 'missing columns {}'.format(', '.join(sorted(missing))))
        for line_no, row in enumerate(reader, 2):
            where = (path, line_no)
            kind = (row.get('antecedent_type') or '').strip() or None
            if kind is not None and kind not in ANTECEDENT_TYPES:
                raise IngestionError(path, line_no, 'unknown antecedent type {!r}'.format(kind))
            records.append(QualitativeRecord(
                row['source_id'].strip(), _flag(row['animacy'], 'animacy', where),
                _flag(row['plausibility'], 'plausibility', where),
                _flag(row['grammaticality'], 'grammaticality', where), kind))
    return records


def check_entailment(records: Iterable[QualitativeRecord]) -> None:
    """plausibility implies grammaticality"""
    bad = sorted(r.source_id for r in records if r.plausibility and not r.grammaticality)
    if bad:
        raise EntailmentViolation(bad)


def aggregate_qualitative(
        records: Sequence[QualitativeRecord],
        instances: Sequence[ClozeInstance]) -> Dict[str, dict]:
    """
    AN/PL/GR proportions and antecedent type distribution per `rc_type|relativizer` cell

    Records are matched to instances by source id.
    """
    check_entailment(records)
    cells = {i.source_id: i.cell for i in instances}
    unknown = sorted(r.source_id for r in records if r.source_id not in cells)
    if unknown:
        raise ValidationError('annotations for unknown instances: {}'.format(', '.join(unknown)))
    grouped = defaultdict(list)  # type: Dict[Tuple[str, str], List[QualitativeRecord]]
    for record in records:
        grouped[cells[record.source_id]].append(record)
    table = OrderedDict()  # type: Dict[str, dict]
    for cell in sorted(grouped):
        rows = grouped[cell]
        typed = [r.antecedent_type for r in rows if r.antecedent_type]
        counts = Counter(typed)
        table[cell_name(cell)] = {
            'n': len(rows),
            'AN': sum(r.animacy for r in rows) / len(rows),
            'PL': sum(r.plausibility for r in rows) / len(rows),
            'GR': sum(r.grammaticality for r in rows) / len(rows),
            'antecedent_types': {t: counts[t] / len(typed) for t in ANTECEDENT_TYPES} if typed else {}}
    return table


def read_instances(path) -> List[ClozeInstance]:  # pylint: disable=missing-function-docstring
    instances = []
    for line_no, obj in read_jsonl(path):
        try:
            instances.append(ClozeInstance.from_json(obj))
        except (KeyError, ValidationError) as error:
            raise IngestionError(path, line_no, str(error)) from error
    return instances
