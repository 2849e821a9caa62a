"""Seedable Brownian-increment ensembles.

Each path draws from its own counter-derived Philox substream, keyed by
(seed, path index) with a fixed step-major layout inside the path, so every
entry is a pure function of (seed, path, step, component). Generation is
therefore bit-identical no matter how the work is chunked across workers.
The two-point Rademacher law (+-sqrt(h), matching the first two Gaussian
moments) supports full enumeration for the exact tree oracle.
"""

from __future__ import annotations

import itertools
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .problem import Partition

__all__ = [
    "IncrementEnsemble",
    "sample_increments",
    "enumerate_tree_increments",
    "coarsen_increments",
    "save_increments",
    "load_increments",
]

_LAW_CODES = {"gaussian": 0, "rademacher": 1}
_LAW_NAMES = {v: k for k, v in _LAW_CODES.items()}
_MAGIC = b"BSVIW01\x00"


@dataclass(frozen=True)
class IncrementEnsemble:
    """Brownian increments dw[path, step, component] on a partition."""

    dw: np.ndarray
    law: str
    seed: int
    partition: Partition
    enumerated: bool = False

    def __post_init__(self):
        if self.dw.ndim != 3:
            raise ValueError("increment array must have shape (paths, steps, components)")
        if self.dw.shape[1] != self.partition.n:
            raise ValueError("increment array does not match the partition")
        self.dw.setflags(write=False)

    @property
    def num_paths(self) -> int:
        return self.dw.shape[0]

    @property
    def dim(self) -> int:
        return self.dw.shape[2]

    def cumulative(self) -> np.ndarray:
        """Brownian path W at the partition nodes, shape (paths, n + 1, d)."""
        w = np.zeros((self.num_paths, self.partition.n + 1, self.dim))
        np.cumsum(self.dw, axis=1, out=w[:, 1:, :])
        return w


def _path_stream(seed: int, path: int) -> np.random.Generator:
    # counter offset of path << 128 separates substreams by 2^128 blocks
    return np.random.Generator(np.random.Philox(key=seed, counter=(path << 128)))


def _fill_block(out, seed, law, h, lo, hi):
    n, d = out.shape[1], out.shape[2]
    root_h = np.sqrt(h)
    for j in range(lo, hi):
        rng = _path_stream(seed, j)
        if law == "gaussian":
            out[j] = rng.normal(0.0, root_h, size=(n, d))
        else:
            out[j] = np.where(rng.integers(0, 2, size=(n, d)) == 0, root_h, -root_h)


def sample_increments(
    partition: Partition,
    num_paths: int,
    dim: int = 1,
    law: str = "gaussian",
    seed: int = 0,
    workers: int = 1,
) -> IncrementEnsemble:
    """Draw an (M, n, d) increment ensemble from per-path substreams.

    workers only chunks the generation; the result is bit-identical for any
    worker count because every path owns its own counter block.
    """
    if law not in _LAW_CODES:
        raise ValueError(f"unknown increment law {law!r}")
    if num_paths < 1 or dim < 1:
        raise ValueError("need at least one path and one component")
    out = np.empty((num_paths, partition.n, dim))
    if workers <= 1:
        _fill_block(out, seed, law, partition.h, 0, num_paths)
    else:
        bounds = np.linspace(0, num_paths, workers + 1, dtype=int)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(_fill_block, out, seed, law, partition.h, int(a), int(b))
                for a, b in zip(bounds[:-1], bounds[1:])
            ]
            for fut in futures:
                fut.result()
    return IncrementEnsemble(dw=out, law=law, seed=seed, partition=partition)


def enumerate_tree_increments(partition: Partition, dim: int = 1, cap: int = 20) -> IncrementEnsemble:
    """All 2^(n*d) Rademacher sign patterns, one path each, in sign order
    (+ before -), scaled by sqrt(h)."""
    n, d = partition.n, dim
    if n * d > cap:
        raise ValueError(f"enumeration of 2^{n * d} paths exceeds the cap of 2^{cap}")
    root_h = np.sqrt(partition.h)
    patterns = np.array(list(itertools.product((1.0, -1.0), repeat=n * d)))
    dw = (patterns * root_h).reshape(2 ** (n * d), n, d)
    return IncrementEnsemble(dw=dw, law="rademacher", seed=0, partition=partition, enumerated=True)


def coarsen_increments(fine: IncrementEnsemble, n_coarse: int) -> IncrementEnsemble:
    """Block-sum a fine Gaussian ensemble onto a coarser partition.

    Consecutive groups of n_fine / n_coarse increments are summed, so the
    coarse Brownian path visits exactly the fine path's node values. Only
    Gaussian ensembles are coarsenable (sums of Rademacher signs are not
    Rademacher).
    """
    if fine.law != "gaussian":
        raise ValueError("only gaussian ensembles can be coarsened")
    n_fine = fine.partition.n
    if n_coarse < 1 or n_fine % n_coarse != 0:
        raise ValueError(f"coarse step count {n_coarse} must divide {n_fine}")
    ratio = n_fine // n_coarse
    m, _, d = fine.dw.shape
    dw = fine.dw.reshape(m, n_coarse, ratio, d).sum(axis=2)
    part = Partition(n=n_coarse, T=fine.partition.T)
    return IncrementEnsemble(dw=dw, law="gaussian", seed=fine.seed, partition=part)


def save_increments(ensemble: IncrementEnsemble, path) -> None:
    """Binary dump: magic, then seed/M/n/d as u64 and the law as u8,
    then the raw row-major float64 increments."""
    header = struct.pack(
        "<8sQQQQB",
        _MAGIC,
        ensemble.seed % 2 ** 64,
        ensemble.num_paths,
        ensemble.partition.n,
        ensemble.dim,
        _LAW_CODES[ensemble.law],
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(ensemble.dw, dtype="<f8").tobytes())


def load_increments(path, horizon: float) -> IncrementEnsemble:
    """Read a dump written by save_increments; the horizon is not stored in
    the file and must be supplied to rebuild the partition."""
    with open(path, "rb") as fh:
        header = fh.read(struct.calcsize("<8sQQQQB"))
        magic, seed, m, n, d, law_code = struct.unpack("<8sQQQQB", header)
        if magic != _MAGIC:
            raise ValueError("not an increment dump")
        raw = fh.read(m * n * d * 8)
    dw = np.frombuffer(raw, dtype="<f8").reshape(m, n, d).copy()
    part = Partition(n=n, T=horizon)
    return IncrementEnsemble(dw=dw, law=_LAW_NAMES[law_code], seed=seed, partition=part)
