"""
    rcprobe - relative clause probing toolkit
    layer-wise logistic acceptability probes
"""
# pylint: disable=too-many-arguments,too-many-locals,too-many-instance-attributes
import csv
import logging
import warnings
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
from sklearn.exceptions import ConvergenceWarning
from sklearn.linear_model import LogisticRegression

from .backends import MEAN, RULE, RULE_RELATIVIZERS, Backend, SentenceVector, SeparableMockBackend
from .backends import embed_many, pool
from .pair_forge import MODIFICATION_KINDS, NONE, OMISSION, REPLACEMENTS, DatasetSample
from .util import RcProbeError, read_json, write_json

log = logging.getLogger(__name__)

MAX_ITER = 1000
SELECTION_NOTE = 'best layer selected on test accuracy (optimistic)'


class DegenerateInput(RcProbeError):
    """Split is empty or training data holds a single label class"""


class DimensionMismatch(RcProbeError):
    """Vector and probe dimensions differ"""


class ConvergenceNotReached(UserWarning):
    """Solver hit the iteration limit"""


@dataclass
class LinearProbe:
    """logistic regression acceptability classifier for one backend layer"""
    weights: np.ndarray
    bias: float
    layer: int
    pooling: str
    backend_id: str
    seed: int
    l2_strength: float = 1.0
    converged: bool = True
    n_iter: int = 0

    def to_json(self):  # pylint: disable=missing-function-docstring
        return {
            'weights': [float(w) for w in self.weights], 'bias': float(self.bias),
            'layer': self.layer, 'pooling': self.pooling, 'backend_id': self.backend_id,
            'seed': self.seed, 'l2_strength': self.l2_strength,
            'converged': self.converged, 'n_iter': self.n_iter}

    @classmethod
    def from_json(cls, obj):  # pylint: disable=missing-function-docstring
        return cls(
            np.asarray(obj['weights'], dtype=np.float64), float(obj['bias']), obj['layer'],
            obj['pooling'], obj['backend_id'], obj['seed'], obj.get('l2_strength', 1.0),
            obj.get('converged', True), obj.get('n_iter', 0))


def _matrix(vectors) -> np.ndarray:
    rows = [v.values if isinstance(v, SentenceVector) else v for v in vectors]
    return np.atleast_2d(np.asarray(rows, dtype=np.float64))


def train_probe(
        vectors: Sequence[Union[SentenceVector, np.ndarray]], labels: Sequence[bool], seed: int,
        l2_strength: float = 1.0, layer: Optional[int] = None, pooling: Optional[str] = None,
        backend_id: str = '', max_iter: int = MAX_ITER) -> LinearProbe:
    """
    fit an L2-regularized logistic regression (lbfgs, unscaled features)

    `layer` and `pooling` default to those of the first SentenceVector.
    """
    if len(vectors) != len(labels):
        raise DegenerateInput('{} vectors but {} labels'.format(len(vectors), len(labels)))
    y = np.asarray(labels, dtype=bool)
    if len(set(y.tolist())) < 2:
        raise DegenerateInput('both acceptability labels are needed to train a probe')
    if l2_strength <= 0:
        raise RcProbeError('l2 strength must be positive')
    first = vectors[0]
    if isinstance(first, SentenceVector):
        layer = first.layer if layer is None else layer
        pooling = first.pooling if pooling is None else pooling
    clf = LogisticRegression(C=1 / l2_strength, solver='lbfgs', max_iter=max_iter, random_state=seed)
    with warnings.catch_warnings():
        warnings.simplefilter('ignore', ConvergenceWarning)
        clf.fit(_matrix(vectors), y)
    n_iter = int(np.max(clf.n_iter_))
    converged = n_iter < max_iter
    if not converged:
        warnings.warn(ConvergenceNotReached('{} layer {}: probe stopped after {} iterations'.format(
            backend_id, layer, n_iter)))
    return LinearProbe(
        clf.coef_[0].astype(np.float64), float(clf.intercept_[0]), layer or 0, pooling or MEAN,
        backend_id, seed, l2_strength, converged, n_iter)


def probe_logit(probe: LinearProbe, vector: Union[SentenceVector, np.ndarray]) -> float:
    """w.x + b"""
    x = vector.values if isinstance(vector, SentenceVector) else np.asarray(vector, dtype=np.float64)
    if x.shape != probe.weights.shape:
        raise DimensionMismatch('vector of shape {} for a probe of dimension {}'.format(
            x.shape, probe.weights.shape[0]))
    return float(np.dot(probe.weights, x) + probe.bias)


def logits(probe: LinearProbe, vectors) -> np.ndarray:
    """logits for a batch of vectors"""
    x = _matrix(vectors)
    if x.shape[1] != probe.weights.shape[0]:
        raise DimensionMismatch('vectors of dimension {} for a probe of dimension {}'.format(
            x.shape[1], probe.weights.shape[0]))
    return x @ probe.weights + probe.bias


def predict(probe: LinearProbe, vectors) -> np.ndarray:
    """acceptable iff logit > 0"""
    return logits(probe, vectors) > 0


def classify(
        probe: Union[LinearProbe, Backend], samples: Sequence[DatasetSample],
        vectors=None) -> np.ndarray:
    """predictions of a linear probe (on `vectors`) or of the rule baseline (on texts)"""
    if isinstance(probe, Backend):
        return np.array([probe.rule_classify(s.text) for s in samples], dtype=bool)
    return predict(probe, vectors)


def _accuracy(predicted: np.ndarray, samples: Sequence[DatasetSample]) -> float:
    gold = np.array([s.label for s in samples], dtype=bool)
    return float(np.mean(predicted == gold))


def group_by_modification(
        probe: Union[LinearProbe, Backend], samples: Sequence[DatasetSample],
        vectors=None) -> Dict[str, float]:
    """accuracy within each modification kind present in `samples`"""
    predicted = classify(probe, samples, vectors)
    result = OrderedDict()  # type: Dict[str, float]
    for kind in MODIFICATION_KINDS:
        idx = [i for i, s in enumerate(samples) if s.modification == kind]
        if idx:
            result[kind] = _accuracy(predicted[idx], [samples[i] for i in idx])
    return result


def rule_expected_accuracy(
        samples: Sequence[DatasetSample],
        relativizers: Sequence[str] = RULE_RELATIVIZERS) -> Dict[str, float]:
    """
    accuracy the rule baseline must reach per modification

    Follows from the data alone: every source sentence holds exactly one
    pronoun, omission removes it and a substitution puts in a known one.
    """
    def fires(sample):
        if sample.modification == NONE:
            return sample.relativizer_form in relativizers
        if sample.modification == OMISSION:
            return False
        return REPLACEMENTS[sample.modification] in relativizers

    result = OrderedDict()  # type: Dict[str, float]
    for kind in MODIFICATION_KINDS:
        subset = [s for s in samples if s.modification == kind]
        if subset:
            result[kind] = sum(fires(s) == s.label for s in subset) / len(subset)
    return result


@dataclass
class ProbeReport:
    """test accuracies of one backend and pooling strategy"""
    backend_id: str
    pooling: str
    per_layer_accuracy: Dict[int, float]
    per_modification_accuracy: Dict[str, float]
    baseline_layer0: float
    baseline_per_modification: Dict[str, float]
    n_train: int
    n_test: int
    best_layer: int
    overall_accuracy: float
    converged: Dict[int, bool] = field(default_factory=dict)
    hyperparameters: Dict[str, Any] = field(default_factory=dict)
    provenance: Dict[str, Any] = field(default_factory=dict)
    oov_rate: Optional[float] = None
    selection_note: str = SELECTION_NOTE
    probes: Dict[int, LinearProbe] = field(default_factory=dict, repr=False)

    def to_json(self):  # pylint: disable=missing-function-docstring
        return {
            'backend_id': self.backend_id, 'pooling': self.pooling,
            'per_layer_accuracy': {str(k): v for k, v in sorted(self.per_layer_accuracy.items())},
            'per_modification_accuracy': dict(self.per_modification_accuracy),
            'baseline_layer0': self.baseline_layer0,
            'baseline_per_modification': dict(self.baseline_per_modification),
            'n_train': self.n_train, 'n_test': self.n_test, 'best_layer': self.best_layer,
            'overall_accuracy': self.overall_accuracy,
            'converged': {str(k): v for k, v in sorted(self.converged.items())},
            'hyperparameters': self.hyperparameters, 'provenance': self.provenance,
            'oov_rate': self.oov_rate, 'selection_note': self.selection_note}

    @classmethod
    def from_json(cls, obj):  # pylint: disable=missing-function-docstring
        return cls(
            obj['backend_id'], obj['pooling'],
            {int(k): v for k, v in obj['per_layer_accuracy'].items()},
            dict(obj['per_modification_accuracy']), obj['baseline_layer0'],
            dict(obj['baseline_per_modification']), obj['n_train'], obj['n_test'],
            obj['best_layer'], obj['overall_accuracy'],
            {int(k): v for k, v in obj.get('converged', {}).items()},
            obj.get('hyperparameters', {}), obj.get('provenance', {}), obj.get('oov_rate'),
            obj.get('selection_note', SELECTION_NOTE))


def _rule_report(backend: Backend, test: Sequence[DatasetSample], n_train: int) -> ProbeReport:
    predicted = classify(backend, test)
    accuracy = _accuracy(predicted, test)
    per_mod = group_by_modification(backend, test)
    return ProbeReport(
        backend.name, 'rule', {0: accuracy}, per_mod, accuracy, dict(per_mod),
        n_train, len(test), 0, accuracy, {0: True}, {}, backend.provenance())


def _features(backend, texts, layers, pooling, include_specials, workers, chunk=256):
    """
    {(layer, pooling): matrix} for the requested layers plus mean-pooled layer 0

    Embeddings are pooled right away, chunk by chunk, so the full hidden
    states of a corpus never sit in memory.
    """
    combos = [(layer, pooling) for layer in layers]
    if (0, MEAN) not in combos:
        combos.append((0, MEAN))
    rows = {c: [] for c in combos}  # type: Dict[Any, List[np.ndarray]]
    for start in range(0, len(texts), chunk):
        for emb in embed_many(backend, texts[start:start + chunk], workers):
            for layer, strategy in combos:
                rows[(layer, strategy)].append(pool(emb, layer, strategy, include_specials).values)
    return {c: np.vstack(r) for c, r in rows.items()}


def layer_sweep(
        backend: Backend, train: Sequence[DatasetSample], test: Sequence[DatasetSample],
        pooling: str = MEAN, seed: int = 0, l2_strength: float = 1.0,
        include_specials: bool = False, workers: int = 4) -> ProbeReport:
    """
    train one probe per layer and evaluate it on the test split

    The rule baseline yields a single layer 0 entry. The layer-0 baseline is
    always mean-pooled; the best layer is the most accurate one, lowest index
    on ties.
    """
    if not test:
        raise DegenerateInput('{}: the test split is empty'.format(backend.name))
    if backend.supports(RULE):
        return _rule_report(backend, test, len(train))
    if not train:
        raise DegenerateInput('{}: the train split is empty'.format(backend.name))
    if isinstance(backend, SeparableMockBackend) and backend.oracle is None:
        backend.bind_labels({s.text: s.label for s in list(train) + list(test)})
    layers = list(range(backend.n_layers + 1))
    log.info('%s: embedding %d train / %d test sentences', backend.name, len(train), len(test))
    train_x = _features(backend, [s.text for s in train], layers, pooling, include_specials, workers)
    test_x = _features(backend, [s.text for s in test], layers, pooling, include_specials, workers)
    y = [s.label for s in train]
    probes, accuracy = {}, {}
    for layer in layers:
        probes[layer] = train_probe(
            train_x[(layer, pooling)], y, seed, l2_strength, layer, pooling, backend.name)
        accuracy[layer] = _accuracy(predict(probes[layer], test_x[(layer, pooling)]), test)
        log.info('%s %s layer %d: %.4f', backend.name, pooling, layer, accuracy[layer])
    best = max(layers, key=lambda layer: (accuracy[layer], -layer))
    baseline_x = test_x[(0, MEAN)]
    if pooling == MEAN:
        baseline_probe = probes[0]
    else:
        baseline_probe = train_probe(train_x[(0, MEAN)], y, seed, l2_strength, 0, MEAN, backend.name)
    return ProbeReport(
        backend_id=backend.name, pooling=pooling, per_layer_accuracy=accuracy,
        per_modification_accuracy=group_by_modification(probes[best], test, test_x[(best, pooling)]),
        baseline_layer0=_accuracy(predict(baseline_probe, baseline_x), test),
        baseline_per_modification=group_by_modification(baseline_probe, test, baseline_x),
        n_train=len(train), n_test=len(test), best_layer=best, overall_accuracy=accuracy[best],
        converged={layer: p.converged for layer, p in probes.items()},
        hyperparameters={
            'l2_strength': l2_strength, 'max_iter': MAX_ITER, 'solver': 'lbfgs',
            'standardized': False, 'include_specials': include_specials, 'seed': seed},
        provenance=backend.provenance(), oov_rate=getattr(backend, 'oov_rate', None), probes=probes)


def save_probe(path, probe: LinearProbe) -> None:  # pylint: disable=missing-function-docstring
    write_json(path, probe.to_json())


def load_probe(path) -> LinearProbe:  # pylint: disable=missing-function-docstring
    return LinearProbe.from_json(read_json(path))


def write_report_json(path, report: ProbeReport) -> None:  # pylint: disable=missing-function-docstring
    write_json(path, report.to_json())


def read_report_json(path) -> ProbeReport:  # pylint: disable=missing-function-docstring
    return ProbeReport.from_json(read_json(path))


def _fmt(value: Optional[float]) -> str:
    return '' if value is None else '{:.6f}'.format(value)


def write_summary_csv(path, reports: Sequence[ProbeReport]) -> None:
    """best-layer and layer-0 baseline rows per report, one column per modification"""
    header = ['backend', 'row', 'layer', 'pooling', 'overall', 'n_test'] + list(MODIFICATION_KINDS)
    with open(str(path), 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(header)
        for r in reports:
            writer.writerow(
                [r.backend_id, 'best', r.best_layer, r.pooling, _fmt(r.overall_accuracy), r.n_test] +
                [_fmt(r.per_modification_accuracy.get(k)) for k in MODIFICATION_KINDS])
            writer.writerow(
                [r.backend_id, 'baseline', 0, MEAN if r.pooling != 'rule' else 'rule',
                 _fmt(r.baseline_layer0), r.n_test] +
                [_fmt(r.baseline_per_modification.get(k)) for k in MODIFICATION_KINDS])


def write_curves_csv(path, reports: Sequence[ProbeReport]) -> None:
    """layer curve data: one row per (backend, pooling, layer)"""
    with open(str(path), 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(['backend', 'pooling', 'layer', 'accuracy'])
        for r in reports:
            for layer, accuracy in sorted(r.per_layer_accuracy.items()):
                writer.writerow([r.backend_id, r.pooling, layer, _fmt(accuracy)])


def read_curves_csv(path) -> List[Dict[str, str]]:  # pylint: disable=missing-function-docstring
    with open(str(path), encoding='utf-8', newline='') as f:
        return list(csv.DictReader(f))
