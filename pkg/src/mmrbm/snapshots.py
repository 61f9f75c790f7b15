"""Snapshot sinks for the full-order march and the binary snapshot file.

File layout (little endian): magic ``MMRB1``, then ``n_dof``, ``n_nodes``,
``n_steps`` as int64, then for each stored time level its index (int64), the
``rho`` block and the ``g`` blocks in column-major order.
"""

import csv

import numpy as np

MAGIC = b"MMRB1"
_I8 = np.dtype("<i8")
_F8 = np.dtype("<f8")


class MemorySink:
    """Keep ``rho`` and ``g`` in memory, optionally only at selected time levels."""

    def __init__(self, times=None, keep_g=True):
        self.times = None if times is None else set(int(t) for t in times)
        self.keep_g = keep_g
        self.rho = {}
        self.g = {}
        self.last_index = None

    def __call__(self, n, rho, g):
        self.last_index = n
        if self.times is None or n in self.times:
            self.rho[n] = np.array(rho, copy=True)
            if self.keep_g and g is not None:
                self.g[n] = np.array(g, copy=True)

    def rho_matrix(self):
        """Columns are ``rho`` at the stored time levels in ascending order."""
        return np.column_stack([self.rho[n] for n in sorted(self.rho)])


class FinalSink(MemorySink):
    """Remember only the latest time level."""

    def __call__(self, n, rho, g):
        self.rho.clear()
        self.g.clear()
        super().__call__(n, rho, g)


class TeeSink:
    def __init__(self, *sinks):
        self.sinks = [s for s in sinks if s is not None]

    def __call__(self, n, rho, g):
        for sink in self.sinks:
            sink(n, rho, g)


class SnapshotWriter:
    """Stream time levels to a binary snapshot file.

    Levels that are multiples of ``stride`` are stored, and the final level
    ``n_steps`` always is.
    """

    def __init__(self, path, n_dof, n_nodes, n_steps, stride=1):
        if stride < 1:
            raise ValueError("stride must be >= 1")
        self.path = path
        self.n_dof = n_dof
        self.n_nodes = n_nodes
        self.n_steps = n_steps
        self.stride = int(stride)
        self._fh = open(path, "wb")
        self._fh.write(MAGIC)
        self._fh.write(np.array([n_dof, n_nodes, n_steps], dtype=_I8).tobytes())
        self.written = []

    def __call__(self, n, rho, g):
        if self.written and n <= self.written[-1]:
            raise ValueError(f"time level {n} out of order")
        if n % self.stride and n != self.n_steps:
            return
        rho = np.asarray(rho, dtype=_F8)
        g = np.asarray(g, dtype=_F8).reshape(self.n_dof, self.n_nodes)
        if rho.shape != (self.n_dof,):
            raise ValueError(f"rho has shape {rho.shape}, expected ({self.n_dof},)")
        self._fh.write(np.array([n], dtype=_I8).tobytes())
        self._fh.write(rho.tobytes())
        self._fh.write(g.tobytes(order="F"))
        self.written.append(n)

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_snapshots(path):
    """Return ``(levels, rho, g)``; shapes ``(L,)``, ``(L, n_dof)``, ``(L, n_dof, n_nodes)``."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:5] != MAGIC:
        raise ValueError(f"{path} is not a snapshot file")
    n_dof, n_nodes, _ = (int(v) for v in np.frombuffer(raw, dtype=_I8, count=3, offset=5))
    record = 8 * (1 + n_dof * (1 + n_nodes))
    body = raw[5 + 24:]
    if len(body) % record:
        raise ValueError(f"{path} is truncated")
    count = len(body) // record
    levels = np.empty(count, dtype=np.int64)
    rho = np.empty((count, n_dof))
    g = np.empty((count, n_dof, n_nodes))
    for k in range(count):
        off = k * record
        levels[k] = np.frombuffer(body, dtype=_I8, count=1, offset=off)[0]
        rho[k] = np.frombuffer(body, dtype=_F8, count=n_dof, offset=off + 8)
        g[k] = np.frombuffer(body, dtype=_F8, count=n_dof * n_nodes,
                             offset=off + 8 + 8 * n_dof).reshape(n_nodes, n_dof).T
    return levels, rho, g


def write_rho_csv(path, rho_levels, dt):
    """One row per time level: ``n, t, rho_0 .. rho_{N-1}``."""
    rho_levels = np.asarray(rho_levels)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n", "t"] + [f"rho_{k}" for k in range(rho_levels.shape[1])])
        for n, row in enumerate(rho_levels):
            writer.writerow([n, repr(n * dt)] + [repr(float(v)) for v in row])
