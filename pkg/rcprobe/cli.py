"""
    rcprobe - relative clause probing toolkit
    command-line interface using plumbum
"""
# pylint: disable=arguments-differ, attribute-defined-outside-init
# pylint: disable=invalid-name, too-few-public-methods
import json
import logging
from dataclasses import fields
from typing import Any, Dict, List, Optional  # pylint: disable=unused-import
import pkg_resources
from plumbum import local, cli

from .backends import MEAN, BackendConfig
from .pipeline import EXIT_VALIDATION, RunConfig, run
from .util import RcProbeError, ValidationError
from .util import get_translation_functions

try:
    import tomllib  # type: ignore
except ImportError:  # python < 3.11
    tomllib = None  # type: ignore


_ = get_translation_functions('rcprobe')[0]
YES_ANSWERS = ('yes', 'y', 'true', 'True', '1')
MAIN_SECTION = 'rcprobe'
BACKEND_SECTION = 'backend:'
INT_FIELDS = ('seed', 'workers')
FLOAT_FIELDS = ('test_fraction', 'l2_strength')
BOOL_FIELDS = ('appendix_labels', 'include_specials', 'render')
LIST_FIELDS = ('pooling', 'relcl_labels', 'subject_labels', 'object_labels')


def _split(value):
    if isinstance(value, str):
        return tuple(v.strip() for v in value.split(',') if v.strip())
    return tuple(value)


def coerce(key: str, value):
    """convert a config value (string for INI files) to the RunConfig field type"""
    try:
        if key in INT_FIELDS:
            return int(value)
        if key in FLOAT_FIELDS:
            return float(value)
    except ValueError as error:
        raise ValidationError('{}: {}'.format(key, error)) from error
    if key in BOOL_FIELDS:
        return value if isinstance(value, bool) else str(value).strip() in YES_ANSWERS
    if key in LIST_FIELDS:
        return _split(value)
    return value


def _backends_of(raw) -> List[BackendConfig]:
    if isinstance(raw, dict):
        return [BackendConfig.from_mapping(name, mapping) for name, mapping in raw.items()]
    return [BackendConfig.from_mapping(str(mapping.get('name', i)), mapping) for i, mapping in enumerate(raw)]


def _load_ini(configfile) -> Dict[str, Any]:
    config = {}  # type: Dict[str, Any]
    with cli.Config(configfile) as conf:
        parser = conf.parser
        if parser.has_section(MAIN_SECTION):
            config.update(parser.items(MAIN_SECTION))
        config['backends'] = {
            section[len(BACKEND_SECTION):]: dict(parser.items(section))
            for section in parser.sections() if section.startswith(BACKEND_SECTION)}
    return config


def load_conf(configfile, config=None) -> Dict[str, Any]:
    """
    read a run configuration from `.json`, `.toml` or INI

    INI files keep the run settings in `[rcprobe]` and every backend
    in its own `[backend:<name>]` section.
    """
    config = dict(config or {})
    configfile = local.path(configfile)
    if not configfile.exists():
        raise ValidationError(_('config file {} does not exist').format(configfile))
    if configfile.suffix == '.json':
        with open(configfile, encoding='utf-8') as f:
            raw = json.load(f)
    elif configfile.suffix == '.toml':
        if tomllib is None:
            raise ValidationError(_('TOML configs need python 3.11 or newer'))
        with open(configfile, 'rb') as f:
            raw = tomllib.load(f)
    else:
        raw = _load_ini(configfile)
    known = {f.name for f in fields(RunConfig)} - {'command', 'backends'}
    unknown = set(raw) - known - {'backends'}
    if unknown:
        raise ValidationError(_('unknown config keys: {}').format(', '.join(sorted(unknown))))
    for key, value in raw.items():
        if key == 'backends':
            config['backends'] = _backends_of(value)
        else:
            config[key] = coerce(key, value)
    return config


def parse_backend(spec: str, pooling=(MEAN,)) -> BackendConfig:
    """`name=kind[:path]`, e.g. `bert=mlm:bert-base-uncased` or `rule=rule`"""
    name, sep, rest = spec.partition('=')
    if not sep or not name:
        raise ValidationError(_('backend must look like name=kind[:path], got {!r}').format(spec))
    kind, _sep, path = rest.partition(':')
    return BackendConfig(name=name, kind=kind, path=path, pooling=tuple(pooling))


class ConfiguredApplication(cli.Application):
    """Application with config"""
    config_filename = cli.SwitchAttr(
        ['-c', '--config'], argtype=local.path, default=None,
        argname='CONFIG',
        help=_("Use file CONFIG (.json, .toml or INI) for config"))  # noqa: Q000
    verbose = cli.Flag(
        ['-v', '--verbose'],
        help=_("Verbose output - log everything."),  # noqa: Q000
        excludes=['-s', '--silent'])
    silence_level = cli.CountOf(
        ['-s', '--silent'],
        help=_("Make program more silent"),  # noqa: Q000
        excludes=['-v', '--verbose'])
    seed = cli.SwitchAttr(
        ['--seed'], argtype=int, default=None,
        help=_("Random seed; mandatory here or in the config"))  # noqa: Q000
    output = cli.SwitchAttr(
        ['-o', '--output'], default=None, argname='DIR',
        help=_("Output directory (default: rcprobe-out)"))  # noqa: Q000

    def overrides(self) -> Dict[str, Any]:
        """switches given on the command line; subcommands extend"""
        return {'seed': self.seed, 'output': self.output}

    def main(self):
        self.log = logging.getLogger('rcprobe')
        if not self.log.handlers or all(isinstance(h, logging.NullHandler) for h in self.log.handlers):
            self.log.addHandler(logging.StreamHandler())
        if self.verbose:
            self.log.setLevel(logging.DEBUG)
        else:
            base_level = logging.INFO
            self.log.setLevel(base_level + 10 * self.silence_level)
        self.config = {}  # type: Dict[str, Any]
        if self.config_filename:
            self.config = load_conf(self.config_filename)
        for key, value in self.overrides().items():
            if value not in (None, (), []):
                self.config[key] = value


class StageApplication(ConfiguredApplication):
    """Application running one pipeline stage"""
    command = ''
    backend_specs = cli.SwitchAttr(
        ['-b', '--backend'], list=True, argname='NAME=KIND[:PATH]',
        help=_("Add a backend, e.g. bert=mlm:bert-base-uncased"))  # noqa: Q000
    pooling = cli.SwitchAttr(
        ['--pooling'], default=None, argname='cls,mean',
        help=_("Pooling strategies for backends given with --backend"))  # noqa: Q000
    workers = cli.SwitchAttr(
        ['-j', '--workers'], argtype=int, default=None,
        help=_("Embedding threads for thread safe backends"))  # noqa: Q000

    def overrides(self):
        switches = super().overrides()
        switches.update({'workers': self.workers, 'pooling': _split(self.pooling or '')})
        return switches

    def run_config(self) -> RunConfig:
        """merge config file and switches; --backend entries replace same-named ones"""
        config = dict(self.config)
        backends = list(config.pop('backends', []))
        for spec in self.backend_specs:
            backend = parse_backend(spec, config.get('pooling', (MEAN,)))
            backends = [b for b in backends if b.name != backend.name] + [backend]
        return RunConfig(command=self.command, backends=backends, **config)

    def main(self):
        try:
            super().main()
            retcode = run(self.run_config())
        except RcProbeError as error:
            self.log.error('%s', error)
            return EXIT_VALIDATION
        if retcode:
            self.log.warning(_('{} finished with exit code {}').format(self.command, retcode))
        return retcode


class RcProbe(ConfiguredApplication):  # pylint: disable=missing-class-docstring
    DESCRIPTION = _("relative clause minimal pairs and layer-wise probing of MLMs")  # noqa: Q000
    VERSION = pkg_resources.get_distribution('rcprobe').version

    def main(self):
        if self.nested_command:
            return None
        super().main()
        self.log.error(_("No subcommand given, exiting"))  # noqa: Q000
        return EXIT_VALIDATION


@RcProbe.subcommand('build-dataset')
class BuildDataset(StageApplication):
    """Extract relative clauses and build the balanced minimal pair dataset"""
    DESCRIPTION = _("Extract relative clauses and build the minimal pair dataset")  # noqa: Q000
    command = 'build-dataset'
    corpus = cli.SwitchAttr(
        ['--corpus'], default=None, argname='PATH',
        help=_("Corpus, one sentence per line (.txt) or {\"text\": ...} per line (.jsonl)"))  # noqa: Q000
    parses = cli.SwitchAttr(
        ['--parses'], default=None, argname='CONLLU',
        help=_("Dependency parses of the corpus in CoNLL-U"))  # noqa: Q000
    parser = cli.SwitchAttr(
        ['--parser'], default=None, argname='MODEL',
        help=_("Parse with this spaCy model instead of reading --parses"))  # noqa: Q000
    test_fraction = cli.SwitchAttr(
        ['--test-fraction'], argtype=float, default=None,
        help=_("Share of samples in the test split (default 1/9)"))  # noqa: Q000
    appendix_labels = cli.Flag(
        ['--appendix-labels'],
        help=_("Label omission ungrammatical for inanimate antecedents too"))  # noqa: Q000
    relcl_labels = cli.SwitchAttr(
        ['--relcl-labels'], default=None, argname='acl:relcl,...',
        help=_("Dependency labels attaching a relative clause to its antecedent"))  # noqa: Q000
    subject_labels = cli.SwitchAttr(
        ['--subject-labels'], default=None, argname='nsubj,...',
        help=_("Labels marking the relativizer as clause subject"))  # noqa: Q000
    object_labels = cli.SwitchAttr(
        ['--object-labels'], default=None, argname='obj,...',
        help=_("Labels marking the relativizer as clause object"))  # noqa: Q000

    def overrides(self):
        switches = super().overrides()
        switches.update({
            'corpus': self.corpus, 'parses': self.parses, 'parser': self.parser,
            'test_fraction': self.test_fraction, 'appendix_labels': self.appendix_labels or None})
        for key in ('relcl_labels', 'subject_labels', 'object_labels'):
            switches[key] = _split(getattr(self, key) or '')
        return switches


@RcProbe.subcommand('probe')
class Probe(StageApplication):
    """Train and evaluate one logistic probe per layer and backend"""
    DESCRIPTION = _("Train and evaluate layer-wise logistic probes")  # noqa: Q000
    command = 'probe'
    l2_strength = cli.SwitchAttr(
        ['--l2'], argtype=float, default=None,
        help=_("L2 regularisation strength (default 1.0)"))  # noqa: Q000
    include_specials = cli.Flag(
        ['--include-specials'],
        help=_("Include delimiter tokens in mean pooling"))  # noqa: Q000

    def overrides(self):
        switches = super().overrides()
        switches.update({'l2_strength': self.l2_strength, 'include_specials': self.include_specials or None})
        return switches


@RcProbe.subcommand('diagnose')
class Diagnose(StageApplication):
    """Mean logit of the best probes on the diagnostic suite"""
    DESCRIPTION = _("Evaluate trained probes on the diagnostic suite")  # noqa: Q000
    command = 'diagnose'
    suite = cli.SwitchAttr(
        ['--suite'], default=None, argname='JSONL',
        help=_("Diagnostic suite (default: the built-in one)"))  # noqa: Q000
    include_specials = cli.Flag(
        ['--include-specials'],
        help=_("Include delimiter tokens in mean pooling"))  # noqa: Q000

    def overrides(self):
        switches = super().overrides()
        switches.update({'suite': self.suite, 'include_specials': self.include_specials or None})
        return switches


@RcProbe.subcommand('cloze')
class Cloze(StageApplication):
    """Relativizer and antecedent prediction metrics"""
    DESCRIPTION = _("Masked relativizer and antecedent prediction")  # noqa: Q000
    command = 'cloze'
    records = cli.SwitchAttr(
        ['--records'], default=None, argname='JSONL',
        help=_("RC records to mask (default: the built-in starter set)"))  # noqa: Q000
    annotations = cli.SwitchAttr(
        ['--annotations'], default=None, argname='CSV',
        help=_("Human judgements of the predictions"))  # noqa: Q000
    annotation_kind = cli.SwitchAttr(
        ['--annotation-kind'], cli.Set('relativizer', 'antecedent'), default=None,
        help=_("Which predictions the annotations judge"))  # noqa: Q000

    def overrides(self):
        switches = super().overrides()
        switches.update({
            'cloze_records': self.records, 'annotations': self.annotations,
            'annotation_kind': self.annotation_kind})
        return switches


@RcProbe.subcommand('report')
class Report(ConfiguredApplication):
    """Human readable summary of every artifact"""
    DESCRIPTION = _("Summarize all results and export plot data")  # noqa: Q000
    render = cli.Flag(
        ['--render'],
        help=_("Also render curves.png (needs matplotlib)"))  # noqa: Q000

    def overrides(self):
        switches = super().overrides()
        switches['render'] = self.render or None
        return switches

    def main(self):
        try:
            super().main()
            config = dict(self.config)
            config.pop('backends', None)
            return run(RunConfig(command='report', **config))
        except RcProbeError as error:
            self.log.error('%s', error)
            return EXIT_VALIDATION


if __name__ == '__main__':
    RcProbe.run()
