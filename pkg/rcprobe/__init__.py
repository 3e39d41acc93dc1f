"""
    rcprobe - relative clause minimal pairs and layer-wise probing of masked language models
"""
import logging
from .util import RcProbeError, IngestionError, ValidationError
from .extraction import ParsedSentence, RCRecord, extract_records, read_conllu
from .pair_forge import DatasetSample, build_dataset
from .backends import BackendConfig, load_backend
from .prober import LinearProbe, ProbeReport, layer_sweep
logging.getLogger(__name__).addHandler(logging.NullHandler())
