"""Counter-based random streams for Monte-Carlo paths.

Paths are grouped into fixed-size chunks. Chunk ``c`` under seed ``k`` draws
from Philox keyed by ``k`` with the counter's high word set to ``c``, so the
draws of a path depend only on ``(seed, path index)``: not on the total path
count, the chunking of work across threads, or execution order.
"""

from __future__ import annotations

import numpy as np

CHUNK = 1024


def chunk_generator(seed: int, chunk: int) -> np.random.Generator:
    if seed < 0 or chunk < 0:
        raise ValueError("seed and chunk index must be non-negative")
    bitgen = np.random.Philox(key=seed, counter=[0, 0, 0, chunk])
    return np.random.Generator(bitgen)


def chunks(paths: int, size: int = CHUNK) -> list[tuple[int, int, int]]:
    """``(chunk index, first path, number of paths)`` covering ``paths`` paths."""
    out = []
    for c, start in enumerate(range(0, paths, size)):
        out.append((c, start, min(size, paths - start)))
    return out
