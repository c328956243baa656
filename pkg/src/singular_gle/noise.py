"""Per-trajectory random streams and Brownian increments on a fine grid.

Every trajectory owns its own generator, seeded from
``SeedSequence([seed, trajectory, tag])``, so a path never depends on how an
ensemble is split into batches or threads.  Draws are buffered in chunks;
consecutive ``standard_normal`` calls on one generator produce the same
numbers as a single large call, so the chunk size does not change results.

Brownian increments live on a grid of cells of width ``dt``.  A cell can be
refined by Levy's midpoint construction; the midpoint draws come from a
generator keyed by ``(seed, trajectory, cell, level, position)`` so two
integrators refining the same cell see identical sub-increments.
"""

from __future__ import annotations

import numpy as np

TAG_WIENER = 1
TAG_RESIDUAL = 2
TAG_INITIAL = 3
TAG_BRIDGE = 4
TAG_MISC = 5


def stream(seed, traj, tag, *key):
    """A fresh generator for one named substream."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(traj), int(tag), *map(int, key)])))


class StreamBuffer:
    """Buffered standard normals, one independent stream per trajectory."""

    def __init__(self, seed, trajectories, tag, chunk=64):
        self.seed = int(seed)
        self.trajectories = np.asarray(trajectories, dtype=int)
        self.tag = tag
        self.gens = [stream(seed, t, tag) for t in self.trajectories]
        self.chunk = int(chunk)  # buffer width in multiples of the first request
        self.buf = np.empty((len(self.gens), 0))
        self.ptr = np.zeros(len(self.gens), dtype=int)

    def _refill(self, rows, width):
        # keep the unread tail of each row and top the row up to ``width``
        old = self.buf
        if width != old.shape[1]:
            self.buf = np.empty((len(self.gens), width))
            self.buf[:, : old.shape[1]] = old
        for r in rows:
            tail = old[r, self.ptr[r] :].copy()
            self.buf[r, : len(tail)] = tail
            self.buf[r, len(tail) : width] = self.gens[r].standard_normal(width - len(tail))
            self.ptr[r] = 0

    def take(self, k, rows=None):
        """``k`` fresh normals for each selected trajectory, shape ``(len(rows), k)``."""
        if rows is None:
            rows = np.arange(len(self.gens))
        rows = np.asarray(rows, dtype=int)
        if self.buf.shape[1] < k:
            self._refill(range(len(self.gens)), max(self.chunk * k, 256))
        width = self.buf.shape[1]
        short = rows[self.ptr[rows] + k > width]
        if len(short):
            self._refill(short, width)
        cols = self.ptr[rows, None] + np.arange(k)
        out = self.buf[rows[:, None], cols]
        self.ptr[rows] += k
        return out


class WienerCells:
    """Brownian increments for ``rows x d`` independent motions on cells of width ``dt``.

    ``next(n)`` returns the increments of the next ``n`` cells with shape
    ``(B, n, rows, d)``.  With ``zero=True`` every increment is zero.
    """

    def __init__(self, seed, trajectories, rows, d, dt, zero=False, log=False):
        self.seed = int(seed)
        self.trajectories = np.asarray(trajectories, dtype=int)
        self.rows, self.d, self.dt = rows, d, float(dt)
        self.zero = zero
        self.cell = 0
        self.buffer = None if zero else StreamBuffer(seed, trajectories, TAG_WIENER)
        self.log = [] if log else None

    @property
    def batch(self):
        return len(self.trajectories)

    def next(self, n):
        B = self.batch
        if self.zero:
            out = np.zeros((B, n, self.rows, self.d))
        else:
            raw = self.buffer.take(n * self.rows * self.d)
            out = np.sqrt(self.dt) * raw.reshape(B, n, self.rows, self.d)
        if self.log is not None:
            self.log.append((self.cell, out.copy()))
        self.cell += n
        return out

    def midpoint(self, b, parent, cell, level, pos, width):
        """Left half of a piece with increment ``parent`` and the given ``width``."""
        if self.zero:
            return 0.5 * parent
        xi = stream(self.seed, self.trajectories[b], TAG_BRIDGE, cell, level, pos).standard_normal(parent.shape)
        return 0.5 * parent + np.sqrt(width / 4.0) * xi


class Pieces:
    """A run of equal-width grid pieces with their Brownian increments for one trajectory.

    A piece is labelled ``(cell, level, pos)``: the ``pos``-th of ``2**level``
    equal parts of ``cell``.
    """

    def __init__(self, labels, incs, width):
        self.labels = list(labels)
        self.incs = np.asarray(incs)
        self.width = float(width)

    def __len__(self):
        return len(self.labels)

    def refine(self, wiener: WienerCells, b):
        labels, incs = [], []
        for (cell, level, pos), inc in zip(self.labels, self.incs):
            left = wiener.midpoint(b, inc, cell, level, pos, self.width)
            labels += [(cell, level + 1, 2 * pos), (cell, level + 1, 2 * pos + 1)]
            incs += [left, inc - left]
        return Pieces(labels, np.stack(incs), self.width / 2)

    def halves(self, wiener: WienerCells, b):
        src = self if len(self) % 2 == 0 else self.refine(wiener, b)
        k = len(src) // 2
        return (
            Pieces(src.labels[:k], src.incs[:k], src.width),
            Pieces(src.labels[k:], src.incs[k:], src.width),
        )
