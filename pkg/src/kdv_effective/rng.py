"""Reproducible per-path Gaussian streams.

Each path owns a counter-based Philox generator keyed by ``(seed, tag, path)``;
within a path the draws for one step are laid out as a fixed-shape block, so
the value a given (path, step, mode) receives depends only on those indices
and never on how paths are batched or scheduled.
"""
from __future__ import annotations

import zlib

import numpy as np


def path_generator(seed: int, path: int, tag: str = "spde") -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(zlib.crc32(tag.encode()), int(path)))
    return np.random.Generator(np.random.Philox(ss))


class GaussianStreams:
    """Per-step standard normal blocks of shape ``(n_paths,) + shape``.

    Draws are generated ``block`` steps at a time per path; since Philox
    normals are consumed sequentially the result is independent of ``block``.
    """

    def __init__(self, seed: int, paths, shape: tuple[int, ...], tag: str = "spde",
                 block: int = 256):
        self.paths = list(paths)
        self.shape = tuple(shape)
        per_step = len(self.paths) * int(np.prod(self.shape, dtype=np.int64))
        # cap the buffer at ~32 MB
        self.block = max(1, min(block, (1 << 22) // max(per_step, 1)))
        self.gens = [path_generator(seed, p, tag) for p in self.paths]
        self._buf = None
        self._pos = self.block

    def __call__(self) -> np.ndarray:
        if self._pos >= self.block:
            self._buf = np.stack([g.standard_normal((self.block,) + self.shape)
                                  for g in self.gens], axis=1)
            self._pos = 0
        out = self._buf[self._pos]
        self._pos += 1
        return out
