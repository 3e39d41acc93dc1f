"""
    rcprobe - relative clause probing toolkit
    minimal pair generation, balanced sampling and splitting
"""
# pylint: disable=too-many-instance-attributes,too-many-locals
import logging
import random
import warnings
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple

from .extraction import RCRecord
from .util import IngestionError, RcProbeError, ValidationError, match_casing, read_jsonl

log = logging.getLogger(__name__)

NONE = 'none'
OMISSION = 'relativizer_omission'
WHO_TO_WHICH = 'who_to_which'
WHICH_TO_WHO = 'which_to_who'
WHICH_TO_THAT = 'which_to_that'
MODIFICATION_KINDS = (NONE, OMISSION, WHO_TO_WHICH, WHICH_TO_WHO, WHICH_TO_THAT)
REPLACEMENTS = {WHO_TO_WHICH: 'which', WHICH_TO_WHO: 'who', WHICH_TO_THAT: 'that'}
SOURCE_FORMS = {WHO_TO_WHICH: ('who', 'whom'), WHICH_TO_WHO: ('which',), WHICH_TO_THAT: ('which',)}
TRAIN = 'train'
TEST = 'test'


class ParadigmMismatch(RcProbeError):
    """Modification is not applicable to the record"""


class InfeasibleBalance(UserWarning):
    """One acceptability label cannot be reached often enough"""


class Modification(NamedTuple):
    """modification kind with the acceptability of its result"""
    kind: str
    label: bool


@dataclass(frozen=True)
class DatasetSample:
    """
    one (possibly modified) sentence of the dataset

    `edit_span` is the char range of the edit in `text` and `edit_original`
    the substring of the source text that used to be there.
    """
    text: str
    label: bool
    modification: str
    animate: bool
    restrictive: bool
    subjrc: bool
    relativizer_form: str
    source_id: str
    split: Optional[str] = None
    edit_span: Tuple[int, int] = (0, 0)
    edit_original: str = ''

    def to_json(self):  # pylint: disable=missing-function-docstring
        return {
            'text': self.text, 'label': self.label, 'modification': self.modification,
            'animate': self.animate, 'restrictive': self.restrictive, 'subjrc': self.subjrc,
            'relativizer_form': self.relativizer_form, 'source_id': self.source_id,
            'split': self.split, 'edit_span': list(self.edit_span),
            'edit_original': self.edit_original}

    @classmethod
    def from_json(cls, obj):  # pylint: disable=missing-function-docstring
        if obj['modification'] not in MODIFICATION_KINDS:
            raise ValidationError('unknown modification {!r}'.format(obj['modification']))
        return cls(
            obj['text'], obj['label'], obj['modification'], obj['animate'],
            obj['restrictive'], obj['subjrc'], obj['relativizer_form'], obj['source_id'],
            obj.get('split'), tuple(obj.get('edit_span', (0, 0))), obj.get('edit_original', ''))


@dataclass
class Bag:
    """all minimal-pair variants generated from one source sentence"""
    source_id: str
    samples: List[DatasetSample] = field(default_factory=list)

    @property
    def labels(self):  # pylint: disable=missing-function-docstring
        return {s.label for s in self.samples}


def applicable_modifications(
        animate: bool, restrictive: bool, subjrc: bool,
        appendix_labels: bool = False) -> List[Modification]:
    """
    paradigm rows for one (animate, restrictive, subjrc) triple

    Omission is grammatical for restrictive object clauses; with
    `appendix_labels` only for animate ones.
    """
    omission_ok = restrictive and not subjrc
    if appendix_labels:
        omission_ok = omission_ok and animate
    rows = [Modification(NONE, True), Modification(OMISSION, omission_ok)]
    if animate:
        rows.append(Modification(WHO_TO_WHICH, False))
    else:
        rows.append(Modification(WHICH_TO_WHO, False))
        rows.append(Modification(WHICH_TO_THAT, True))
    return rows


def record_modifications(record: RCRecord, appendix_labels: bool = False) -> List[Modification]:
    """paradigm rows of the record's triple that fit its relativizer form"""
    return [
        mod for mod in applicable_modifications(*record.triple, appendix_labels=appendix_labels)
        if mod.kind not in SOURCE_FORMS or record.relativizer_form in SOURCE_FORMS[mod.kind]]


def apply_modification(
        record: RCRecord, mod: Modification, appendix_labels: bool = False) -> DatasetSample:
    """surface surgery at the relativizer of `record`; `mod` must be a row of its paradigm"""
    rows = applicable_modifications(*record.triple, appendix_labels=appendix_labels)
    if mod.kind not in [m.kind for m in rows]:
        raise ParadigmMismatch('{}: {} does not apply to triple {}'.format(
            record.source_id, mod.kind, record.triple))
    if mod not in rows:
        raise ParadigmMismatch('{}: {} is labelled {} for triple {}'.format(
            record.source_id, mod.kind, not mod.label, record.triple))
    if mod.kind in SOURCE_FORMS and record.relativizer_form not in SOURCE_FORMS[mod.kind]:
        raise ParadigmMismatch('{}: {} does not apply to relativizer {!r}'.format(
            record.source_id, mod.kind, record.relativizer_form))
    text = record.text
    start, end = record.relativizer.char_span
    original = text[start:end]
    if mod.kind == NONE:
        new_text, edit_span, edit_original = text, (start, end), original
    elif mod.kind == OMISSION:
        if text[end:end + 1] == ' ':
            end += 1
        elif start > 0 and text[start - 1] == ' ':
            start -= 1
        new_text = text[:start] + text[end:]
        edit_span, edit_original = (start, start), text[start:end]
    else:
        replacement = match_casing(original, REPLACEMENTS[mod.kind])
        new_text = text[:start] + replacement + text[end:]
        edit_span, edit_original = (start, start + len(replacement)), original
    return DatasetSample(
        new_text, mod.label, mod.kind, record.animate, record.restrictive, record.subjrc,
        record.relativizer_form, record.source_id, None, edit_span, edit_original)


def restore_source(sample: DatasetSample) -> str:
    """undo the edit of a sample, giving back the source sentence"""
    start, end = sample.edit_span
    return sample.text[:start] + sample.edit_original + sample.text[end:]


def build_bag(record: RCRecord, appendix_labels: bool = False) -> Bag:
    """one sample per applicable modification, the unmodified one included"""
    rows = record_modifications(record, appendix_labels)
    return Bag(record.source_id, [apply_modification(record, mod, appendix_labels) for mod in rows])


def sample_balanced(bags: Sequence[Bag], seed: int) -> List[DatasetSample]:
    """
    choose one sample from every bag keeping acceptability balanced

    Bags offering a single label are consumed first, then every mixed bag
    contributes the currently rarer label. Output follows the input bag order.
    """
    rng = random.Random(seed)
    for bag in bags:
        if not bag.samples:
            raise ValidationError('bag {} is empty'.format(bag.source_id))
    order = sorted(range(len(bags)), key=lambda i: (len(bags[i].labels) > 1, i))
    counts = {True: 0, False: 0}
    chosen = [None] * len(bags)  # type: List[Optional[DatasetSample]]
    for i in order:
        pool = bags[i].samples
        if counts[True] != counts[False]:
            minority = counts[True] < counts[False]
            pool = [s for s in pool if s.label == minority] or pool
        pick = pool[rng.randrange(len(pool))]
        counts[pick.label] += 1
        chosen[i] = pick
    if abs(counts[True] - counts[False]) > len(bags) % 2:
        warnings.warn(InfeasibleBalance(
            'balanced sampling infeasible: {} acceptable / {} unacceptable'.format(
                counts[True], counts[False])))
    log.info('sampled %d acceptable / %d unacceptable', counts[True], counts[False])
    return chosen  # type: ignore


def _sort_key(sample: DatasetSample):
    return sample.source_id, MODIFICATION_KINDS.index(sample.modification)


def split(
        samples: Sequence[DatasetSample], test_fraction: float,
        seed: int) -> Dict[str, List[DatasetSample]]:
    """
    split samples by source sentence into label-balanced train and test sets

    The test set gets round(n * test_fraction) samples, half of each label;
    an odd sample goes to the label that is more frequent overall. A label
    with at least two samples always gets one test sample.
    """
    if not 0 < test_fraction < 1:
        raise ValidationError('test fraction must lie strictly between 0 and 1')
    groups = defaultdict(list)  # type: Dict[str, List[DatasetSample]]
    for sample in samples:
        groups[sample.source_id].append(sample)
    totals = Counter(s.label for s in samples)
    n_test = int(len(samples) * test_fraction + 0.5)
    larger = totals[True] >= totals[False]
    quota = {True: n_test // 2, False: n_test // 2}
    quota[larger] += n_test % 2
    quota = {label: min(n, totals[label]) for label, n in quota.items()}
    for label in (True, False):
        if totals[label] >= 2:
            quota[label] = max(quota[label], 1)
    if not any(quota.values()):
        raise ValidationError(
            '{} samples are too few for a test split; one label needs two'.format(len(samples)))
    keys = sorted(groups)
    random.Random(seed).shuffle(keys)
    taken = {True: 0, False: 0}
    result = {TRAIN: [], TEST: []}  # type: Dict[str, List[DatasetSample]]
    for key in keys:
        group_counts = Counter(s.label for s in groups[key])
        fits = all(taken[label] + group_counts[label] <= quota[label] for label in (True, False))
        target = TEST if fits else TRAIN
        if fits:
            for label in (True, False):
                taken[label] += group_counts[label]
        result[target].extend(replace(s, split=target) for s in groups[key])
    if taken != quota:
        log.warning('test quota not met: wanted %s, got %s', quota, taken)
    if not result[TEST]:
        raise ValidationError('no source sentence fits into the test split')
    for part in result.values():
        part.sort(key=_sort_key)
    log.info('split into %d train / %d test', len(result[TRAIN]), len(result[TEST]))
    return result


def _count(samples: Iterable[DatasetSample]):
    samples = list(samples)
    by_mod = defaultdict(Counter)  # type: Dict[str, Counter]
    for sample in samples:
        by_mod[sample.modification]['acceptable' if sample.label else 'unacceptable'] += 1
    return {
        'total': len(samples),
        'acceptable': sum(s.label for s in samples),
        'unacceptable': sum(not s.label for s in samples),
        'animate': sum(s.animate for s in samples),
        'restrictive': sum(s.restrictive for s in samples),
        'subjrc': sum(s.subjrc for s in samples),
        'by_modification': {
            kind: {'acceptable': by_mod[kind]['acceptable'], 'unacceptable': by_mod[kind]['unacceptable']}
            for kind in MODIFICATION_KINDS if kind in by_mod}}


def dataset_stats(splits: Dict[str, List[DatasetSample]]):
    """counts per split and per split x modification x label"""
    stats = {name: _count(part) for name, part in sorted(splits.items())}
    stats['all'] = _count(s for part in splits.values() for s in part)
    return stats


@dataclass
class DatasetBuild:
    """everything `build_dataset` produces"""
    bags: List[Bag]
    splits: Dict[str, List[DatasetSample]]
    stats: dict

    @property
    def samples(self) -> List[DatasetSample]:
        """train followed by test"""
        return self.splits[TRAIN] + self.splits[TEST]


def build_dataset(
        records: Sequence[RCRecord], seed: int, test_fraction: float = 1 / 9,
        appendix_labels: bool = False) -> DatasetBuild:
    """bags -> balanced sample -> split -> stats"""
    bags = [build_bag(r, appendix_labels) for r in records]
    log.info('built %d bags with %d variants', len(bags), sum(len(b.samples) for b in bags))
    chosen = sample_balanced(bags, seed)
    splits = split(chosen, test_fraction, seed)
    stats = dataset_stats(splits)
    stats['bags'] = len(bags)
    stats['variants'] = dict(sorted(Counter(s.modification for b in bags for s in b.samples).items()))
    stats['appendix_labels'] = appendix_labels
    return DatasetBuild(bags, splits, stats)


def read_samples(path) -> List[DatasetSample]:
    """load a dataset JSONL"""
    samples = []
    for line_no, obj in read_jsonl(path):
        try:
            samples.append(DatasetSample.from_json(obj))
        except (KeyError, TypeError, ValidationError) as error:
            raise IngestionError(path, line_no, 'invalid sample: {}'.format(error)) from error
    return samples
