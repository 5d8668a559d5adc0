"""Slow, obviously-correct reimplementations used as test oracles."""

from cbid.hashing import reference_qgram_hash


def winnow(hashes, w):
    if not hashes:
        return []
    if len(hashes) < w:
        m = min(hashes)
        return [max(i for i, x in enumerate(hashes) if x == m)]
    picked = set()
    for i in range(len(hashes) - w + 1):
        win = hashes[i : i + w]
        m = min(win)
        picked.add(i + max(j for j, x in enumerate(win) if x == m))
    return sorted(picked)


def blocks(payload, cfg):
    """(start, end) spans of the shingled blocks of one payload."""
    q, o = cfg.qgram_q, cfg.overlap_o
    h = [reference_qgram_hash(payload[i : i + q], cfg.hash_seed) for i in range(len(payload) - q + 1)]
    sel = winnow(h, cfg.window_w)
    if not sel:
        return []
    spans = []
    prev = None
    for s in sel:
        spans.append((0 if prev is None else max(prev - o, 0), s + 1))
        prev = s
    spans.append((max(sel[-1] - o, 0), len(payload)))
    return sorted((a, b) for a, b in spans if cfg.min_block <= b - a <= cfg.max_block)


def bloom_fp(m, n, k):
    """(1 - (1 - 1/m)^(kn))^k, computed with plain floats."""
    miss = (1.0 - 1.0 / m) ** (k * n)
    return (1.0 - miss) ** k


def occurrences(packets, needle):
    """Overlapping occurrences of ``needle`` inside single payloads."""
    count = 0
    for p in packets:
        s = p.payload.find(needle)
        while s != -1:
            count += 1
            s = p.payload.find(needle, s + 1)
    return count
