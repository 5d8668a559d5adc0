"""Traffic sources: capture files, synthetic corpora and evaluation excerpts."""

from .capture import CaptureStats, read_capture
from .excerpts import Corpus, extract_unique_excerpts
from .synth import ConfigError, SynthConfig, read_corpus, synth_generate, write_corpus

__all__ = [
    "CaptureStats",
    "ConfigError",
    "Corpus",
    "SynthConfig",
    "extract_unique_excerpts",
    "read_capture",
    "read_corpus",
    "synth_generate",
    "write_corpus",
]
