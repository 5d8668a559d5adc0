"""scikit-learn style front end: ``fit`` digests traffic, ``predict`` attributes excerpts."""

from __future__ import annotations

from typing import Iterable

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .archive import read_archive, write_archive
from .digest import DigestConfig, digest_stream
from .flows import FlowKey, PacketRecord
from .partition import PartitionConfig
from .query import AttributionReport, ExcerptQuery, investigate


def check_packets(X) -> Iterable[PacketRecord]:
    """Accept PacketRecords or ``(flow, payload, timestamp)`` triples."""
    if isinstance(X, (bytes, str)):
        raise TypeError("expected an iterable of packets, got a single byte string")
    for item in X:
        if isinstance(item, PacketRecord):
            yield item
        elif isinstance(item, tuple) and len(item) == 3 and isinstance(item[0], FlowKey):
            yield PacketRecord(item[0], bytes(item[1]), int(item[2]))
        else:
            raise TypeError(f"cannot interpret {type(item).__name__} as a packet")


def check_excerpts(X) -> list[ExcerptQuery]:
    if isinstance(X, (bytes, bytearray, memoryview, ExcerptQuery)):
        X = [X]
    out = []
    for item in X:
        if isinstance(item, ExcerptQuery):
            out.append(item)
        elif isinstance(item, (bytes, bytearray, memoryview)):
            out.append(ExcerptQuery(bytes(item)))
        else:
            raise TypeError(f"excerpts must be bytes-like, got {type(item).__name__}")
    return out


class PayloadAttributor(BaseEstimator):
    """Digest packets into an archive and answer "which flows carried this?".

    Parameters mirror :class:`DigestConfig`; ``dr`` is the target data
    reduction of the filter alone and ``threshold`` the downsampling cut.
    """

    def __init__(
        self,
        dr: float = 100.0,
        sections: int = 2048,
        hashes: int = 4,
        threshold: int = 40,
        window: int = 64,
        overlap: int = 4,
        qgram: int = 4,
        interval_bytes: int = 256 * 2**20,
        rotation_fp: float = 0.01,
        layout: str = "msbf",
        index_table: bool = True,
        codec: str = "lzma2",
        seed: int = 0,
    ):
        self.dr = dr
        self.sections = sections
        self.hashes = hashes
        self.threshold = threshold
        self.window = window
        self.overlap = overlap
        self.qgram = qgram
        self.interval_bytes = interval_bytes
        self.rotation_fp = rotation_fp
        self.layout = layout
        self.index_table = index_table
        self.codec = codec
        self.seed = seed

    def _config(self) -> DigestConfig:
        pc = PartitionConfig(self.window, self.overlap, self.qgram, self.threshold, self.seed)
        return DigestConfig(
            partition=pc,
            sections_j=self.sections,
            hashes_k=self.hashes,
            target_dr=self.dr,
            rotation_fp=self.rotation_fp,
            interval_raw_budget=self.interval_bytes,
            layout=self.layout,
            index_table=self.index_table,
            codec=self.codec,
            seed=self.seed,
        )

    def fit(self, X, y=None):
        self.config_ = self._config()
        self.segments_ = digest_stream(check_packets(X), self.config_)
        self.n_flows_ = len({f for s in self.segments_ for f in s.flows})
        return self

    def investigate(self, X, prune: bool = True) -> list[AttributionReport]:
        check_is_fitted(self, "segments_")
        return [investigate(q, self.segments_, prune) for q in check_excerpts(X)]

    def predict(self, X) -> list[set[FlowKey]]:
        """Set of reported flows per excerpt."""
        return [r.flows for r in self.investigate(X)]

    def save(self, path) -> None:
        check_is_fitted(self, "segments_")
        write_archive(self.segments_, path)

    @classmethod
    def load(cls, path) -> "PayloadAttributor":
        segments = read_archive(path)
        if not segments:
            est = cls()
        else:
            c = segments[0].cfg
            p = c.partition
            est = cls(
                dr=c.target_dr, sections=c.sections_j, hashes=c.hashes_k, threshold=p.threshold_T,
                window=p.window_w, overlap=p.overlap_o, qgram=p.qgram_q,
                interval_bytes=c.interval_raw_budget, rotation_fp=c.rotation_fp, layout=c.layout,
                index_table=c.index_table, codec=c.codec, seed=c.seed,
            )
        est.config_ = est._config()
        est.segments_ = segments
        est.n_flows_ = len({f for s in segments for f in s.flows})
        return est
