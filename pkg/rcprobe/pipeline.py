"""
    rcprobe - relative clause probing toolkit
    pipeline stages behind the command line
"""
# pylint: disable=too-many-instance-attributes,too-many-locals,import-outside-toplevel
import csv
import logging
import time
import warnings
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple

import pkg_resources
from plumbum import local

from . import cloze_eval, diagnostics, prober
from .backends import MLM_HEAD, RULE, BackendConfig, BackendLoadError, SeparableMockBackend
from .backends import load_backend
from .extraction import ExtractionConfig, SpacyParser
from .extraction import extract_records, read_conllu, read_corpus, read_records, records_to_json
from .pair_forge import TEST, TRAIN, InfeasibleBalance, build_dataset, read_samples
from .util import RcProbeError, ValidationError
from .util import file_digest, read_json, write_json, write_jsonl

log = logging.getLogger(__name__)

COMMANDS = ('build-dataset', 'probe', 'diagnose', 'cloze', 'report')
STAGE_DIRS = {
    'build-dataset': 'dataset', 'probe': 'probe', 'diagnose': 'diagnose',
    'cloze': 'cloze', 'report': 'report'}
PREREQUISITES = {
    'build-dataset': (), 'probe': ('dataset',), 'diagnose': ('probe',),
    'cloze': (), 'report': ('dataset', 'probe', 'diagnose', 'cloze')}
MANIFEST = 'manifest.json'
EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_BACKEND = 2
EXIT_INFEASIBLE = 3


class StaleManifest(UserWarning):
    """Files changed since the manifest recording them was written"""


def tool_version() -> str:  # pylint: disable=missing-function-docstring
    try:
        return pkg_resources.get_distribution('rcprobe').version
    except pkg_resources.DistributionNotFound:
        return 'unknown'


@dataclass
class RunConfig:
    """everything a command needs; paths are validated per command"""
    command: str
    seed: Optional[int] = None
    output: str = 'rcprobe-out'
    corpus: Optional[str] = None
    parses: Optional[str] = None
    parser: Optional[str] = None
    backends: List[BackendConfig] = field(default_factory=list)
    test_fraction: float = 1 / 9
    pooling: Tuple[str, ...] = ('mean',)
    appendix_labels: bool = False
    l2_strength: float = 1.0
    include_specials: bool = False
    relcl_labels: Tuple[str, ...] = tuple(sorted(ExtractionConfig().relcl_labels))
    subject_labels: Tuple[str, ...] = tuple(sorted(ExtractionConfig().subject_labels))
    object_labels: Tuple[str, ...] = tuple(sorted(ExtractionConfig().object_labels))
    suite: Optional[str] = None
    cloze_records: Optional[str] = None
    annotations: Optional[str] = None
    annotation_kind: str = cloze_eval.ANTECEDENT
    render: bool = False
    workers: int = 4

    def validate(self) -> 'RunConfig':
        """raise `ValidationError` for anything that makes the command pointless"""
        if self.command not in COMMANDS:
            raise ValidationError('unknown command {!r}'.format(self.command))
        if self.seed is None:
            raise ValidationError('a seed is mandatory')
        if not 0 < self.test_fraction < 1:
            raise ValidationError('test fraction must lie strictly between 0 and 1')
        if self.l2_strength <= 0:
            raise ValidationError('l2 strength must be positive')
        if self.annotation_kind not in cloze_eval.TARGET_KINDS:
            raise ValidationError('annotation kind must be relativizer or antecedent')
        required = []
        if self.command == 'build-dataset':
            if not self.corpus:
                raise ValidationError('build-dataset needs a corpus')
            if not self.parses and not self.parser:
                raise ValidationError('build-dataset needs a CoNLL-U parse file or a parser model')
            required += [self.corpus, self.parses]
        if self.command in ('probe', 'diagnose', 'cloze') and not self.backends:
            raise ValidationError('{} needs at least one backend'.format(self.command))
        if self.command == 'diagnose':
            required.append(self.suite)
        if self.command == 'cloze':
            required += [self.cloze_records, self.annotations]
        for path in required:
            if path and not local.path(path).exists():
                raise ValidationError('{} does not exist'.format(path))
        return self

    @property
    def extraction(self) -> ExtractionConfig:  # pylint: disable=missing-function-docstring
        return ExtractionConfig(
            frozenset(self.relcl_labels), frozenset(self.subject_labels), frozenset(self.object_labels))

    def stage_dir(self, command: Optional[str] = None):
        """output directory of a command, created on demand"""
        path = local.path(self.output) / STAGE_DIRS[command or self.command]
        if not path.exists():
            path.mkdir()
        return path

    def snapshot(self) -> Dict[str, Any]:
        """json-able copy of the config"""
        return {
            'command': self.command, 'seed': self.seed, 'output': self.output,
            'corpus': self.corpus, 'parses': self.parses, 'parser': self.parser,
            'backends': [b.to_json() for b in self.backends],
            'test_fraction': self.test_fraction, 'pooling': list(self.pooling),
            'appendix_labels': self.appendix_labels, 'l2_strength': self.l2_strength,
            'include_specials': self.include_specials,
            'relcl_labels': list(self.relcl_labels), 'subject_labels': list(self.subject_labels),
            'object_labels': list(self.object_labels), 'suite': self.suite,
            'cloze_records': self.cloze_records, 'annotations': self.annotations,
            'annotation_kind': self.annotation_kind, 'render': self.render}


@dataclass
class RunManifest:
    """what a stage read and wrote, with digests"""
    command: str
    config: Dict[str, Any]
    inputs: Dict[str, str] = field(default_factory=dict)
    outputs: Dict[str, str] = field(default_factory=dict)
    version: str = field(default_factory=tool_version)
    started: str = field(default_factory=lambda: time.strftime('%Y-%m-%dT%H:%M:%SZ', time.gmtime()))
    finished: str = ''
    warnings: List[str] = field(default_factory=list)
    failures: Dict[str, str] = field(default_factory=dict)

    def add_input(self, path) -> None:  # pylint: disable=missing-function-docstring
        if path:
            self.inputs[str(local.path(path))] = file_digest(path)

    def add_output(self, path) -> None:  # pylint: disable=missing-function-docstring
        self.outputs[str(local.path(path))] = file_digest(path)

    def to_json(self):  # pylint: disable=missing-function-docstring
        return {
            'command': self.command, 'config': self.config, 'inputs': self.inputs,
            'outputs': self.outputs, 'version': self.version, 'started': self.started,
            'finished': self.finished, 'warnings': self.warnings, 'failures': self.failures}

    def write(self, directory) -> None:
        """finish and store as `manifest.json`"""
        self.finished = time.strftime('%Y-%m-%dT%H:%M:%SZ', time.gmtime())
        write_json(local.path(directory) / MANIFEST, self.to_json())


def check_stale(directory) -> List[str]:
    """paths recorded in a stage manifest whose content changed since"""
    manifest_path = local.path(directory) / MANIFEST
    if not manifest_path.exists():
        return []
    manifest = read_json(manifest_path)
    drifted = []
    for path, digest in sorted({**manifest.get('inputs', {}), **manifest.get('outputs', {})}.items()):
        if not local.path(path).exists() or file_digest(path) != digest:
            drifted.append(path)
    if drifted:
        warnings.warn(StaleManifest('{} changed since {} was written: {}'.format(
            local.path(directory).name, MANIFEST, ', '.join(drifted))))
    return drifted


@contextmanager
def collected_warnings(manifest: RunManifest) -> Iterator[list]:
    """record every warning raised inside into the manifest and the log"""
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter('always')
        yield caught
    for warning in caught:
        message = '{}: {}'.format(warning.category.__name__, warning.message)
        log.warning(message)
        manifest.warnings.append(message)


def _prerequisites(config: RunConfig) -> None:
    for name in PREREQUISITES[config.command]:
        check_stale(local.path(config.output) / name)


def _parsed_corpus(config: RunConfig):
    if config.parses:
        return read_conllu(config.parses, config.corpus)
    return SpacyParser(config.parser).parse_corpus(read_corpus(config.corpus))


def cmd_build_dataset(config: RunConfig) -> int:
    """corpus + parses -> records, balanced split dataset and stats"""
    out = config.stage_dir()
    manifest = RunManifest(config.command, config.snapshot())
    manifest.add_input(config.corpus)
    manifest.add_input(config.parses)
    with collected_warnings(manifest) as caught:
        records, wordlists, extraction_stats = extract_records(_parsed_corpus(config), config.extraction)
        build = build_dataset(records, config.seed, config.test_fraction, config.appendix_labels)
    files = {
        'records.jsonl': lambda p: write_jsonl(p, records_to_json(records)),
        'wordlists.json': lambda p: write_json(p, wordlists.to_json()),
        'extraction_stats.json': lambda p: write_json(p, extraction_stats.to_json()),
        'train.jsonl': lambda p: write_jsonl(p, [s.to_json() for s in build.splits[TRAIN]]),
        'test.jsonl': lambda p: write_jsonl(p, [s.to_json() for s in build.splits[TEST]]),
        'stats.json': lambda p: write_json(p, build.stats),
    }
    for name, writer in files.items():
        writer(out / name)
        manifest.add_output(out / name)
    manifest.write(out)
    log.info('dataset: %d train / %d test samples from %d records',
             len(build.splits[TRAIN]), len(build.splits[TEST]), len(records))
    if any(issubclass(w.category, InfeasibleBalance) for w in caught):
        return EXIT_INFEASIBLE
    return EXIT_OK


def _load(backend_config: BackendConfig, manifest: RunManifest):
    try:
        return load_backend(backend_config)
    except BackendLoadError as error:
        log.error('backend %s: %s', backend_config.name, error)
        manifest.failures[backend_config.name] = str(error)
        return None


def _poolings(backend_config: BackendConfig, backend) -> Sequence[str]:
    return ('rule',) if backend.supports(RULE) else backend_config.pooling


def probe_file(out, name: str, pooling: str, suffix: str):  # pylint: disable=missing-function-docstring
    return local.path(out) / '{}.{}.{}'.format(name, pooling, suffix)


def cmd_probe(config: RunConfig) -> int:
    """layer sweep per backend and pooling; failing backends do not stop the others"""
    _prerequisites(config)
    dataset = config.stage_dir('build-dataset')
    out = config.stage_dir()
    manifest = RunManifest(config.command, config.snapshot())
    train, test = read_samples(dataset / 'train.jsonl'), read_samples(dataset / 'test.jsonl')
    if not train or not test:
        raise ValidationError('{}: train and test splits must both be non-empty'.format(dataset))
    manifest.add_input(dataset / 'train.jsonl')
    manifest.add_input(dataset / 'test.jsonl')
    reports = []
    with collected_warnings(manifest):
        for backend_config in config.backends:
            backend = _load(backend_config, manifest)
            if backend is None:
                continue
            for pooling in _poolings(backend_config, backend):
                try:
                    report = prober.layer_sweep(
                        backend, train, test, pooling, config.seed, config.l2_strength,
                        config.include_specials, config.workers)
                except RcProbeError as error:
                    log.error('backend %s (%s): %s', backend.name, pooling, error)
                    manifest.failures['{}.{}'.format(backend.name, pooling)] = str(error)
                    continue
                reports.append(report)
                path = probe_file(out, backend.name, pooling, 'report.json')
                prober.write_report_json(path, report)
                manifest.add_output(path)
                if report.probes:
                    path = probe_file(out, backend.name, pooling, 'probe.json')
                    prober.save_probe(path, report.probes[report.best_layer])
                    manifest.add_output(path)
                if backend.supports(RULE):
                    expected = prober.rule_expected_accuracy(test, backend.relativizers)
                    if expected != report.per_modification_accuracy:
                        log.warning('rule baseline differs from its expected accuracies: %s', expected)
    for name, writer in (('summary.csv', prober.write_summary_csv), ('curves.csv', prober.write_curves_csv)):
        writer(out / name, reports)
        manifest.add_output(out / name)
    manifest.write(out)
    return EXIT_BACKEND if manifest.failures else EXIT_OK


def cmd_diagnose(config: RunConfig) -> int:
    """evaluate the best probe of every backend on the diagnostic suite"""
    _prerequisites(config)
    probes = config.stage_dir('probe')
    out = config.stage_dir()
    manifest = RunManifest(config.command, config.snapshot())
    suite = diagnostics.load_suite(config.suite) if config.suite else diagnostics.load_builtin_suite()
    manifest.add_input(config.suite)
    reports = []
    with collected_warnings(manifest):
        for backend_config in config.backends:
            if backend_config.kind == 'rule':
                continue
            backend = _load(backend_config, manifest)
            if backend is None:
                continue
            if isinstance(backend, SeparableMockBackend):
                backend.bind_labels({s.text: s.expected_acceptable for s in suite})
            for pooling in backend_config.pooling:
                path = probe_file(probes, backend.name, pooling, 'probe.json')
                if not path.exists():
                    log.warning('no trained probe for %s (%s); run probe first', backend.name, pooling)
                    continue
                manifest.add_input(path)
                report = diagnostics.evaluate_suite(
                    prober.load_probe(path), backend, suite, config.include_specials)
                reports.append(report)
                path = probe_file(out, backend.name, pooling, 'diagnostics.json')
                write_json(path, report.to_json())
                manifest.add_output(path)
    diagnostics.write_diagnostics_csv(out / 'diagnostics.csv', reports)
    manifest.add_output(out / 'diagnostics.csv')
    manifest.write(out)
    return EXIT_BACKEND if manifest.failures else EXIT_OK


def _write_predictions(path, results, k: int = 5) -> None:
    with open(str(path), 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(['source_id', 'text_with_mask', 'target'] + ['top{}'.format(i + 1) for i in range(k)])
        for result in results:
            i = result.instance
            writer.writerow([i.source_id, i.text_with_mask, i.target] + result.distribution.top(k))


def cmd_cloze(config: RunConfig) -> int:
    """relativizer and antecedent prediction metrics for every MLM backend"""
    out = config.stage_dir()
    manifest = RunManifest(config.command, config.snapshot())
    if config.cloze_records:
        items = read_records(config.cloze_records)  # type: Sequence[Any]
        manifest.add_input(config.cloze_records)
    else:
        items = cloze_eval.load_starter_set()
    annotations = cloze_eval.load_annotations(config.annotations) if config.annotations else None
    manifest.add_input(config.annotations)
    with collected_warnings(manifest):
        for backend_config in config.backends:
            if backend_config.kind == 'rule':
                continue
            backend = _load(backend_config, manifest)
            if backend is None:
                continue
            if not backend.supports(MLM_HEAD):
                log.info('%s has no masked language model head; skipped', backend.name)
                continue
            tables = {}
            for kind in cloze_eval.TARGET_KINDS:
                instances, skipped = cloze_eval.build_instances(items, kind, backend)
                results = cloze_eval.score_instances(backend, instances)
                tables[kind] = cloze_eval.table_json(cloze_eval.metrics_table(results, skipped))
                path = out / '{}.{}.instances.jsonl'.format(backend.name, kind)
                write_jsonl(path, [i.to_json() for i in instances])
                manifest.add_output(path)
                path = out / '{}.{}.predictions.csv'.format(backend.name, kind)
                _write_predictions(path, results)
                manifest.add_output(path)
                if annotations is not None and kind == config.annotation_kind:
                    path = out / '{}.qualitative.json'.format(backend.name)
                    write_json(path, cloze_eval.aggregate_qualitative(annotations, instances))
                    manifest.add_output(path)
            path = out / '{}.metrics.json'.format(backend.name)
            write_json(path, {'backend': backend.provenance(), 'metrics': tables})
            manifest.add_output(path)
    manifest.write(out)
    return EXIT_BACKEND if manifest.failures else EXIT_OK


def _section(title: str) -> List[str]:
    return ['', title, '=' * len(title)]


def summarize(output) -> str:
    """human readable summary of every artifact, one section per backend"""
    output = local.path(output)
    per_backend = {}  # type: Dict[str, List[str]]
    for path in sorted((output / 'probe').glob('*.report.json')):
        r = prober.read_report_json(path)
        lines = per_backend.setdefault(r.backend_id, [])
        lines.append('probe ({}): best layer {} accuracy {:.4f}; layer 0 (mean) {:.4f}; {}'.format(
            r.pooling, r.best_layer, r.overall_accuracy, r.baseline_layer0, r.selection_note))
        for kind, accuracy in r.per_modification_accuracy.items():
            baseline = r.baseline_per_modification.get(kind)
            lines.append('  {:<22} {:.4f} ({})'.format(
                kind, accuracy, '-' if baseline is None else '{:.4f}'.format(baseline)))
    for path in sorted((output / 'diagnose').glob('*.diagnostics.json')):
        d = diagnostics.DiagnosticReport.from_json(read_json(path))
        lines = per_backend.setdefault(d.backend_id, [])
        lines.append('diagnostics ({}, layer {}): accuracy per case {}'.format(
            d.pooling, d.layer, ', '.join('{}={:.2f}'.format(k, v) for k, v in sorted(d.accuracy.items()))))
    for path in sorted((output / 'cloze').glob('*.metrics.json')):
        doc = read_json(path)
        lines = per_backend.setdefault(doc['backend']['name'], [])
        for kind, table in sorted(doc['metrics'].items()):
            lines.append('cloze ({}):'.format(kind))
            for column in table['columns']:
                row = {m: table['rows'][m][column] for m in table['rows']}
                lines.append('  {:<14} MP@1 {:.2f} MTR {:.2f} NME {:.2f} n={} skipped={}'.format(
                    column, row['mp_at_1'], row['mtr'], row['nme'], row['n_evaluated'], row['n_skipped']))
    text = ['rcprobe summary']
    stats_path = output / 'dataset' / 'stats.json'
    if stats_path.exists():
        stats = read_json(stats_path)
        text += _section('dataset')
        for name in (TRAIN, TEST):
            if name in stats:
                text.append('{}: {} samples, {} acceptable / {} unacceptable'.format(
                    name, stats[name]['total'], stats[name]['acceptable'], stats[name]['unacceptable']))
    for backend in sorted(per_backend):
        text += _section(backend) + per_backend[backend]
    return '\n'.join(text) + '\n'


def render_curves(curves_csv, target) -> None:
    """layer curves plot (`pip install rcprobe[plot]`)"""
    import matplotlib
    matplotlib.use('Agg')
    import matplotlib.pyplot as plt
    series = {}  # type: Dict[Tuple[str, str], List[Tuple[int, float]]]
    for row in prober.read_curves_csv(curves_csv):
        series.setdefault((row['backend'], row['pooling']), []).append(
            (int(row['layer']), float(row['accuracy'])))
    fig, ax = plt.subplots(figsize=(6, 4))
    for (backend, pooling), points in sorted(series.items()):
        points.sort()
        ax.plot(
            [p[0] for p in points], [p[1] for p in points], marker='o',
            label='{} ({})'.format(backend, pooling))
    ax.set_xlabel('layer')
    ax.set_ylabel('test accuracy')
    ax.legend(frameon=False)
    fig.savefig(str(target), bbox_inches='tight', dpi=150)
    plt.close(fig)


def cmd_report(config: RunConfig) -> int:
    """combined summary and plot data"""
    _prerequisites(config)
    output = local.path(config.output)
    out = config.stage_dir()
    manifest = RunManifest(config.command, config.snapshot())
    with collected_warnings(manifest):
        with open(str(out / 'summary.txt'), 'w', encoding='utf-8', newline='\n') as f:
            f.write(summarize(output))
        manifest.add_output(out / 'summary.txt')
        curves = output / 'probe' / 'curves.csv'
        if curves.exists():
            manifest.add_input(curves)
            curves.copy(out / 'curves.csv', override=True)
            manifest.add_output(out / 'curves.csv')
            if config.render:
                render_curves(curves, out / 'curves.png')
                manifest.outputs[str(out / 'curves.png')] = file_digest(out / 'curves.png')
    manifest.write(out)
    return EXIT_OK


STAGES = {
    'build-dataset': cmd_build_dataset,
    'probe': cmd_probe,
    'diagnose': cmd_diagnose,
    'cloze': cmd_cloze,
    'report': cmd_report,
}


def run(config: RunConfig) -> int:
    """validate and run one command, mapping errors to exit codes"""
    try:
        config.validate()
        return STAGES[config.command](config)
    except BackendLoadError as error:
        log.error('%s', error)
        return EXIT_BACKEND
    except RcProbeError as error:
        log.error('%s', error)
        return EXIT_VALIDATION
