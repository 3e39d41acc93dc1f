"""
    rcprobe - relative clause probing toolkit
    uniform interface over token representation sources
"""
# pylint: disable=too-many-arguments,too-many-instance-attributes,import-outside-toplevel
import logging
import re
import threading
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import requests

from .util import MASK_MARKER, RcProbeError, ValidationError
from .util import cache_dir, relativizer_regex, text_digest

log = logging.getLogger(__name__)

EMBEDDINGS = 'embeddings'
MLM_HEAD = 'mlm_head'
RULE = 'rule'
CLS = 'cls'
MEAN = 'mean'
POOLINGS = (CLS, MEAN)
KINDS = ('mlm', 'static', 'rule', 'mock')
RULE_RELATIVIZERS = ('who', 'which', 'that')
_words = re.compile(r'\[MASK\]|\w+(?:\'\w+)?|[^\w\s]')


class LayerOutOfRange(RcProbeError):
    """Requested layer does not exist"""


class NoMask(RcProbeError):
    """Input needs exactly one mask marker"""


class UnsupportedCapability(RcProbeError):
    """Backend cannot do that"""


class BackendLoadError(RcProbeError):
    """Custom error type"""


class OutOfVocabulary(UserWarning):
    """No word of a sentence is in the static table"""


class TokenizedSentence(NamedTuple):
    """
    backend tokenization of one sentence

    `special_mask` flags sequence delimiters, `word_alignment` maps each piece
    to a word index (None for specials).
    """
    text: str
    pieces: List[str]
    special_mask: List[bool]
    word_alignment: List[Optional[int]]
    mask_position: Optional[int] = None
    piece_ids: Tuple[int, ...] = ()


class LayerEmbeddings:
    """(L+1) x pieces x d array; layer 0 is the embedding layer"""
    def __init__(self, layers, special_mask: Sequence[bool]):
        self.layers = np.asarray(layers, dtype=np.float64)
        self.special_mask = np.asarray(special_mask, dtype=bool)
        if self.layers.ndim != 3 or self.layers.shape[1] != len(self.special_mask):
            raise ValidationError('layers must be (L+1, pieces, d) with one mask flag per piece')

    @property
    def n_layers(self) -> int:
        """L, the number of contextual layers"""
        return self.layers.shape[0] - 1

    @property
    def dim(self) -> int:  # pylint: disable=missing-function-docstring
        return self.layers.shape[2]


class SentenceVector(NamedTuple):
    """pooled representation of one sentence at one layer"""
    layer: int
    pooling: str
    values: np.ndarray


def pool(emb: LayerEmbeddings, layer: int, strategy: str = MEAN,
         include_specials: bool = False) -> SentenceVector:
    """cls: first piece; mean: average over non-special pieces"""
    if not 0 <= layer <= emb.n_layers:
        raise LayerOutOfRange('layer {} not in 0..{}'.format(layer, emb.n_layers))
    matrix = emb.layers[layer]
    if strategy == CLS:
        values = matrix[0]
    elif strategy == MEAN:
        keep = ~emb.special_mask if not include_specials else np.ones_like(emb.special_mask)
        if not keep.any():
            keep = np.ones_like(emb.special_mask)
        values = matrix[keep].mean(axis=0)
    else:
        raise ValidationError('unknown pooling {!r}'.format(strategy))
    if not np.all(np.isfinite(values)):
        raise ValidationError('non-finite sentence vector')
    return SentenceVector(layer, strategy, values)


class MaskedDistribution:
    """
    probabilities over the whole vocabulary at a masked position

    `items` and `probs` are in vocabulary order; `order` ranks them by
    descending probability, ties broken by vocabulary index.
    """
    def __init__(self, items: Sequence[str], probs):
        self.items = list(items)
        self.probs = np.asarray(probs, dtype=np.float64)
        if self.probs.shape != (len(self.items),):
            raise ValidationError('one probability per vocabulary item expected')
        if np.any(self.probs < 0) or abs(self.probs.sum() - 1) > 1e-6:
            raise ValidationError('distribution is not normalized')
        self.order = np.lexsort((np.arange(len(self.items)), -self.probs))

    @property
    def vocab_size(self) -> int:  # pylint: disable=missing-function-docstring
        return len(self.items)

    @property
    def entries(self) -> List[Tuple[str, float]]:
        """(item, probability), descending"""
        return [(self.items[i], float(self.probs[i])) for i in self.order]

    def top(self, k: int = 1) -> List[str]:  # pylint: disable=missing-function-docstring
        return [self.items[i] for i in self.order[:k]]

    def rank(self, target: str, ignore_case: bool = False) -> Optional[int]:
        """1-based rank of the first item matching `target`, None if absent"""
        if ignore_case:
            target = target.lower()
        for position, i in enumerate(self.order, 1):
            item = self.items[i].lower() if ignore_case else self.items[i]
            if item == target:
                return position
        return None

    def entropy(self) -> float:
        """natural-log entropy"""
        p = self.probs[self.probs > 0]
        return float(-(p * np.log(p)).sum())


class Backend:
    """
    source of representations; subclasses declare their `capabilities`

    `n_layers` is L, the number of contextual layers (0 for static and rule
    backends). Backends that are not `thread_safe` are called sequentially.
    """
    kind = ''
    capabilities = frozenset()  # type: frozenset
    thread_safe = False
    n_layers = 0

    def __init__(self, name: str):
        self.name = name

    def supports(self, capability: str) -> bool:  # pylint: disable=missing-function-docstring
        return capability in self.capabilities

    def _require(self, capability: str) -> None:
        if not self.supports(capability):
            raise UnsupportedCapability('{} backend {!r} has no {}'.format(self.kind, self.name, capability))

    def tokenize(self, text: str) -> TokenizedSentence:  # pylint: disable=missing-function-docstring
        raise UnsupportedCapability('{} backend {!r} does not tokenize'.format(self.kind, self.name))

    def embed_layers(self, text: str) -> LayerEmbeddings:  # pylint: disable=missing-function-docstring
        self._require(EMBEDDINGS)
        raise NotImplementedError

    def predict_masked(self, tok: TokenizedSentence) -> MaskedDistribution:
        """distribution over the vocabulary at the mask position"""
        self._require(MLM_HEAD)
        raise NotImplementedError

    def is_single_piece(self, word: str) -> bool:  # pylint: disable=missing-function-docstring
        self._require(MLM_HEAD)
        raise NotImplementedError

    def rule_classify(self, text: str) -> bool:  # pylint: disable=missing-function-docstring
        self._require(RULE)
        raise NotImplementedError

    def provenance(self) -> Dict[str, Any]:
        """identity of the backend for result files"""
        return {'name': self.name, 'kind': self.kind}


def _check_text(text: str) -> None:
    if not text or not text.strip():
        raise ValidationError('cannot embed empty text')


def _mask_position(pieces: Sequence[str], is_mask: Callable[[int], bool]) -> Optional[int]:
    positions = [i for i in range(len(pieces)) if is_mask(i)]
    if len(positions) > 1:
        raise NoMask('expected at most one mask, found {}'.format(len(positions)))
    return positions[0] if positions else None


class TransformerBackend(Backend):
    """masked language model checkpoint loaded with transformers"""
    kind = 'mlm'
    capabilities = frozenset({EMBEDDINGS, MLM_HEAD})

    def __init__(self, name: str, checkpoint: str, revision: Optional[str] = None, device: str = 'cpu'):
        super().__init__(name)
        try:
            import torch
            from transformers import AutoModelForMaskedLM, AutoTokenizer
        except ImportError as error:
            raise BackendLoadError('install rcprobe[mlm] to use {!r}: {}'.format(name, error)) from error
        self._torch = torch
        self.checkpoint = checkpoint
        self.revision = revision
        self.device = device
        cache = str(cache_dir() / 'transformers')
        try:
            self.tokenizer = AutoTokenizer.from_pretrained(checkpoint, revision=revision, cache_dir=cache)
            self.model = AutoModelForMaskedLM.from_pretrained(
                checkpoint, revision=revision, cache_dir=cache, output_hidden_states=True)
        except (OSError, ValueError) as error:
            raise BackendLoadError('cannot load {!r}: {}'.format(checkpoint, error)) from error
        self.model.to(device)
        self.model.eval()
        self.n_layers = self.model.config.num_hidden_layers
        self._delimiters = set(self.tokenizer.all_special_ids) - {
            self.tokenizer.mask_token_id, self.tokenizer.unk_token_id}
        self.vocab = [
            self.tokenizer.convert_tokens_to_string([piece]).strip()
            for piece in self.tokenizer.convert_ids_to_tokens(list(range(len(self.tokenizer))))]
        log.info('loaded %s (%d layers, vocabulary %d)', checkpoint, self.n_layers, len(self.vocab))

    def tokenize(self, text: str) -> TokenizedSentence:
        _check_text(text)
        encoded = self.tokenizer(
            text.replace(MASK_MARKER, self.tokenizer.mask_token), truncation=True)
        ids = list(encoded['input_ids'])
        pieces = self.tokenizer.convert_ids_to_tokens(ids)
        try:
            alignment = encoded.word_ids()
        except ValueError:
            alignment = [None] * len(ids)
        mask = _mask_position(pieces, lambda i: ids[i] == self.tokenizer.mask_token_id)
        return TokenizedSentence(
            text, pieces, [i in self._delimiters for i in ids], list(alignment), mask, tuple(ids))

    def _forward(self, tok: TokenizedSentence):
        input_ids = self._torch.tensor([tok.piece_ids], device=self.device)
        with self._torch.no_grad():
            return self.model(input_ids=input_ids)

    def embed_layers(self, text: str) -> LayerEmbeddings:
        tok = self.tokenize(text)
        hidden = self._forward(tok).hidden_states
        layers = np.stack([h[0].cpu().numpy() for h in hidden])
        return LayerEmbeddings(layers, tok.special_mask)

    def predict_masked(self, tok: TokenizedSentence) -> MaskedDistribution:
        if tok.mask_position is None:
            raise NoMask('no mask in {!r}'.format(tok.text))
        logits = self._forward(tok).logits[0, tok.mask_position].double()
        probs = self._torch.softmax(logits, dim=-1).cpu().numpy()
        return MaskedDistribution(self.vocab, probs / probs.sum())

    def is_single_piece(self, word: str) -> bool:
        return len(self.tokenizer.tokenize(' ' + word)) == 1

    def provenance(self):
        return {
            'name': self.name, 'kind': self.kind, 'checkpoint': self.checkpoint,
            'revision': self.revision or getattr(self.model.config, '_commit_hash', None),
            'tokenizer': type(self.tokenizer).__name__, 'n_layers': self.n_layers}


def download(url: str, timeout: Optional[float] = 60):
    """fetch `url` into the cache once, return the local path"""
    target = cache_dir() / 'vectors' / text_digest(url)[:16]
    if target.exists():
        return target
    if not target.dirname.exists():
        target.dirname.mkdir()
    log.info('downloading %s', url)
    try:
        res = requests.get(url, stream=True, timeout=timeout)
        res.raise_for_status()
        partial = target.with_suffix('.part')
        with open(str(partial), 'wb') as f:
            for chunk in res.iter_content(chunk_size=1 << 20):
                f.write(chunk)
        partial.move(target)
    except requests.RequestException as error:
        raise BackendLoadError('cannot download {}: {}'.format(url, error)) from error
    return target


def read_vectors(path) -> Tuple[Dict[str, int], np.ndarray]:
    """
    read a text vector table: `word v1 ... vd` per line

    A leading `count dim` header line (fasttext .vec) is skipped. The first
    occurrence of a duplicated word wins.
    """
    index = {}  # type: Dict[str, int]
    rows = []  # type: List[List[float]]
    dim = None
    with open(str(path), encoding='utf-8', errors='replace') as f:
        for line_no, line in enumerate(f, 1):
            parts = line.rstrip().split(' ')
            if line_no == 1 and len(parts) == 2 and all(p.isdigit() for p in parts):
                continue
            if len(parts) < 2:
                continue
            if dim is None:
                dim = len(parts) - 1
            if len(parts) - 1 != dim:
                raise BackendLoadError('{}:{}: expected {} values, got {}'.format(
                    path, line_no, dim, len(parts) - 1))
            if parts[0] in index:
                continue
            try:
                rows.append([float(x) for x in parts[1:]])
            except ValueError as error:
                raise BackendLoadError('{}:{}: {}'.format(path, line_no, error)) from error
            index[parts[0]] = len(rows) - 1
    if not rows:
        raise BackendLoadError('{}: no vectors'.format(path))
    return index, np.array(rows, dtype=np.float64)


class StaticBackend(Backend):
    """
    non-contextual word vectors (GloVe, fasttext)

    Lookup is exact with a lower-case fallback; unknown words are skipped and
    counted in `oov_rate`.
    """
    kind = 'static'
    capabilities = frozenset({EMBEDDINGS})
    thread_safe = True

    def __init__(self, name: str, path: str, table: Optional[Tuple[Dict[str, int], np.ndarray]] = None):
        super().__init__(name)
        self.path = path
        if table is None:
            local_path = download(path) if re.match(r'https?://', path) else path
            try:
                table = read_vectors(local_path)
            except OSError as error:
                raise BackendLoadError('cannot read {}: {}'.format(path, error)) from error
        self.index, self.matrix = table
        self.words_seen = 0
        self.words_oov = 0
        self._lock = threading.Lock()

    def tokenize(self, text: str) -> TokenizedSentence:
        _check_text(text)
        words = _words.findall(text)
        return TokenizedSentence(text, words, [False] * len(words), list(range(len(words))))

    def lookup(self, word: str) -> Optional[int]:
        """row of `word`, trying its lower-cased form second"""
        if word in self.index:
            return self.index[word]
        return self.index.get(word.lower())

    def embed_layers(self, text: str) -> LayerEmbeddings:
        words = self.tokenize(text).pieces
        rows = [self.lookup(w) for w in words]
        known = [r for r in rows if r is not None]
        with self._lock:
            self.words_seen += len(rows)
            self.words_oov += len(rows) - len(known)
        if not known:
            warnings.warn(OutOfVocabulary('no known word in {!r}; using a zero vector'.format(text)))
            return LayerEmbeddings(np.zeros((1, 1, self.matrix.shape[1])), [False])
        return LayerEmbeddings(self.matrix[known][np.newaxis], [False] * len(known))

    @property
    def oov_rate(self) -> float:  # pylint: disable=missing-function-docstring
        return self.words_oov / self.words_seen if self.words_seen else 0.0

    def provenance(self):
        return {
            'name': self.name, 'kind': self.kind, 'path': self.path,
            'vocabulary': len(self.index), 'dim': int(self.matrix.shape[1]),
            'oov_rate': self.oov_rate}


class RuleBackend(Backend):
    """acceptable iff a relativizer occurs"""
    kind = 'rule'
    capabilities = frozenset({RULE})
    thread_safe = True

    def __init__(self, name: str = 'rule', relativizers: Sequence[str] = RULE_RELATIVIZERS):
        super().__init__(name)
        self.relativizers = tuple(relativizers)
        self._regex = relativizer_regex(self.relativizers)

    def rule_classify(self, text: str) -> bool:
        return self._regex.search(text) is not None

    def provenance(self):
        return {'name': self.name, 'kind': self.kind, 'relativizers': list(self.relativizers)}


class _MockBackend(Backend):
    kind = 'mock'
    capabilities = frozenset({EMBEDDINGS})
    thread_safe = True

    def __init__(self, name: str, dim: int = 16, n_layers: int = 2, seed: int = 0):
        super().__init__(name)
        self.dim = dim
        self.n_layers = n_layers
        self.seed = seed

    def tokenize(self, text: str) -> TokenizedSentence:
        _check_text(text)
        words = _words.findall(text)
        pieces = ['[CLS]'] + words + ['[SEP]']
        return TokenizedSentence(
            text, pieces, [True] + [False] * len(words) + [True],
            [None] + list(range(len(words))) + [None],
            _mask_position(pieces, lambda i: pieces[i] == MASK_MARKER))

    def _noise(self, text: str, n_pieces: int):
        rng = np.random.default_rng([self.seed, int(text_digest(text)[:12], 16)])
        return rng.standard_normal((self.n_layers + 1, n_pieces, self.dim))

    def provenance(self):
        return {
            'name': self.name, 'kind': self.kind, 'mock': type(self).__name__,
            'dim': self.dim, 'n_layers': self.n_layers, 'seed': self.seed}


class GaussianMockBackend(_MockBackend):
    """vectors are seeded noise, unrelated to any label"""
    def embed_layers(self, text: str) -> LayerEmbeddings:
        tok = self.tokenize(text)
        return LayerEmbeddings(self._noise(text, len(tok.pieces)), tok.special_mask)


class SeparableMockBackend(_MockBackend):
    """
    vectors shifted by +/- `margin` along the first axis according to a label oracle

    Bind the oracle with `bind_labels` before embedding.
    """
    def __init__(self, name: str, dim: int = 16, n_layers: int = 2, seed: int = 0,
                 margin: float = 3.0, noise: float = 0.5):
        super().__init__(name, dim, n_layers, seed)
        self.margin = margin
        self.noise = noise
        self.oracle = None  # type: Optional[Callable[[str], bool]]

    def bind_labels(self, labels: Mapping[str, bool]) -> None:
        """use `labels[text]` as the label oracle"""
        self.oracle = dict(labels).__getitem__

    def embed_layers(self, text: str) -> LayerEmbeddings:
        if self.oracle is None:
            raise UnsupportedCapability('separable mock {!r} has no label oracle bound'.format(self.name))
        tok = self.tokenize(text)
        layers = self.noise * self._noise(text, len(tok.pieces))
        layers[:, :, 0] += self.margin if self.oracle(text) else -self.margin
        return LayerEmbeddings(layers, tok.special_mask)


class FixedDistributionMockBackend(_MockBackend):
    """returns configured distributions verbatim; `table` maps masked texts to probabilities"""
    capabilities = frozenset({EMBEDDINGS, MLM_HEAD})

    def __init__(self, name: str, vocab: Sequence[str], probs: Optional[Sequence[float]] = None,
                 table: Optional[Mapping[str, Sequence[float]]] = None, **kwargs):
        super().__init__(name, **kwargs)
        self.vocab = list(vocab)
        self.default = probs
        self.table = dict(table or {})

    def embed_layers(self, text: str) -> LayerEmbeddings:
        tok = self.tokenize(text)
        return LayerEmbeddings(self._noise(text, len(tok.pieces)), tok.special_mask)

    def predict_masked(self, tok: TokenizedSentence) -> MaskedDistribution:
        if tok.mask_position is None:
            raise NoMask('no mask in {!r}'.format(tok.text))
        probs = self.table.get(tok.text, self.default)
        if probs is None:
            probs = [1 / len(self.vocab)] * len(self.vocab)
        return MaskedDistribution(self.vocab, probs)

    def is_single_piece(self, word: str) -> bool:
        return word in self.vocab


@dataclass
class BackendConfig:
    """declaration of one backend in a run configuration"""
    name: str
    kind: str
    path: str = ''
    pooling: Tuple[str, ...] = (MEAN,)
    device: str = 'cpu'
    revision: Optional[str] = None
    options: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError('backend {!r}: kind must be one of {}'.format(self.name, ', '.join(KINDS)))
        if isinstance(self.pooling, str):
            self.pooling = tuple(p.strip() for p in self.pooling.split(',') if p.strip())
        self.pooling = tuple(self.pooling)
        for strategy in self.pooling:
            if strategy not in POOLINGS:
                raise ValidationError('backend {!r}: unknown pooling {!r}'.format(self.name, strategy))
        if self.kind in ('mlm', 'static') and not self.path:
            raise ValidationError('backend {!r}: a checkpoint or path is required'.format(self.name))

    @classmethod
    def from_mapping(cls, name: str, mapping: Mapping[str, Any]) -> 'BackendConfig':
        """build from a config-file section"""
        known = {'kind', 'path', 'checkpoint', 'pooling', 'device', 'revision'}
        options = {k: v for k, v in mapping.items() if k not in known and k != 'name'}
        try:
            return cls(
                name=mapping.get('name', name), kind=mapping['kind'],
                path=mapping.get('path') or mapping.get('checkpoint') or '',
                pooling=mapping.get('pooling', (MEAN,)), device=mapping.get('device', 'cpu'),
                revision=mapping.get('revision'), options=options)
        except KeyError as error:
            raise ValidationError('backend {!r}: missing {}'.format(name, error)) from error

    def to_json(self):  # pylint: disable=missing-function-docstring
        return {
            'name': self.name, 'kind': self.kind, 'path': self.path, 'pooling': list(self.pooling),
            'device': self.device, 'revision': self.revision, 'options': dict(sorted(self.options.items()))}


_MOCK_OPTIONS = {'dim': int, 'n_layers': int, 'seed': int, 'margin': float, 'noise': float}


def _mock_kwargs(options: Mapping[str, Any], *names: str) -> Dict[str, Any]:
    return {name: _MOCK_OPTIONS[name](options[name]) for name in names if name in options}


def load_backend(config: BackendConfig) -> Backend:
    """instantiate the backend a config describes"""
    if config.kind == 'mlm':
        return TransformerBackend(config.name, config.path, config.revision, config.device)
    if config.kind == 'static':
        return StaticBackend(config.name, config.path)
    if config.kind == 'rule':
        relativizers = config.options.get('relativizers', RULE_RELATIVIZERS)
        if isinstance(relativizers, str):
            relativizers = [r.strip() for r in relativizers.split(',') if r.strip()]
        return RuleBackend(config.name, relativizers)
    mock = config.options.get('mock', 'separable')
    common = ('dim', 'n_layers', 'seed')
    if mock == 'separable':
        return SeparableMockBackend(config.name, **_mock_kwargs(config.options, *common, 'margin', 'noise'))
    if mock == 'gaussian':
        return GaussianMockBackend(config.name, **_mock_kwargs(config.options, *common))
    if mock == 'fixed':
        vocab = config.options.get('vocab')
        if not vocab:
            raise BackendLoadError('fixed mock {!r} needs a vocab'.format(config.name))
        if isinstance(vocab, str):
            vocab = vocab.split()
        return FixedDistributionMockBackend(
            config.name, vocab, config.options.get('probs'), config.options.get('table'),
            **_mock_kwargs(config.options, *common))
    raise BackendLoadError('unknown mock {!r}'.format(mock))


def embed_many(backend: Backend, texts: Sequence[str], workers: int = 4) -> List[LayerEmbeddings]:
    """embed texts in order; threads only for `thread_safe` backends"""
    if backend.thread_safe and workers > 1 and len(texts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool_:
            return list(pool_.map(backend.embed_layers, texts))
    return [backend.embed_layers(t) for t in texts]
