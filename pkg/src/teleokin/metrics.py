"""Histograms for latency and jitter accounting.

Buckets are fixed at powers of two microseconds: the bucket labeled ``n``
counts values in ``[n/2, n)`` (and the bucket labeled 1 counts zeros).  Raw
samples are retained as well so exact percentiles stay available for
benchmark reports.
"""

from __future__ import annotations


class Histogram:
    def __init__(self):
        self.samples: list[int] = []

    def record(self, value_us: int) -> None:
        self.samples.append(int(value_us))

    def __len__(self) -> int:
        return len(self.samples)

    def bucket_counts(self) -> dict[int, int]:
        """Counts per power-of-two upper bound, ascending, zero buckets omitted."""
        counts: dict[int, int] = {}
        for v in self.samples:
            upper = 1 << v.bit_length() if v > 0 else 1
            counts[upper] = counts.get(upper, 0) + 1
        return dict(sorted(counts.items()))

    def percentile(self, p: float) -> int:
        """Exact percentile from the raw samples, ``p`` in [0, 100]."""
        if not self.samples:
            return 0
        ordered = sorted(self.samples)
        k = max(0, min(len(ordered) - 1, int(round(p / 100.0 * (len(ordered) - 1)))))
        return ordered[k]

    def maximum(self) -> int:
        return max(self.samples) if self.samples else 0


def bucket_lines(name: str, hist: Histogram) -> list[str]:
    """``key=value`` dump lines for one histogram."""
    return [f"{name}_lt_{upper}us={count}" for upper, count in hist.bucket_counts().items()]
