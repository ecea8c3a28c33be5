"""Adoption logs, follow graphs and user metadata.

Everything downstream works on interned integer ids. A single :class:`IdTable`
for users is shared by the graph, the adoption log and the metadata table so
that the same person resolves to the same integer everywhere.
"""
import logging
import struct
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

DAY = 86400
CACHE_MAGIC = b"CLB1"
CACHE_VERSION = 1


class CorpusError(ValueError):
    """Raised for malformed or unusable input files."""


class IdTable:
    """Bidirectional map between external string ids and dense integers."""

    def __init__(self, names=()):
        self.names = []
        self._index = {}
        for name in names:
            self.intern(name)

    def intern(self, name):
        idx = self._index.get(name)
        if idx is None:
            idx = len(self.names)
            self._index[name] = idx
            self.names.append(name)
        return idx

    def get(self, name, default=None):
        return self._index.get(name, default)

    def __getitem__(self, name):
        return self._index[name]

    def __contains__(self, name):
        return name in self._index

    def __len__(self):
        return len(self.names)

    def __eq__(self, other):
        return isinstance(other, IdTable) and self.names == other.names


def _csr(keys, n_keys, order_within=None):
    """Group row offsets by ``keys``; returns (indptr, offsets).

    Offsets inside each group stay in ascending order, which for a globally
    sorted array means the original order is preserved.
    """
    keys = np.asarray(keys, dtype=np.int64)
    if order_within is None:
        offsets = np.argsort(keys, kind="stable")
    else:
        offsets = np.lexsort((order_within, keys))
    counts = np.bincount(keys, minlength=n_keys)
    indptr = np.zeros(n_keys + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    return indptr, offsets.astype(_index_dtype(len(offsets)), copy=False)


def _index_dtype(n):
    return np.int32 if n < 2**31 else np.int64


# ---------------------------------------------------------------------------
# Social graph
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class SocialGraph:
    """Follow graph in compressed sparse form.

    An edge ``u -> v`` means *u follows v*, so ``followers(v)`` are the
    in-neighbours of ``v``. Undirected graphs are stored symmetrized, and
    ``edge_count`` then counts each friendship once.
    """

    directed: bool
    out_indptr: np.ndarray
    out_indices: np.ndarray
    in_indptr: np.ndarray
    in_indices: np.ndarray
    users: IdTable = field(default_factory=IdTable)

    @classmethod
    def from_edges(cls, src, dst, n_nodes, directed=True, users=None):
        src = np.asarray(src, dtype=np.int64)
        dst = np.asarray(dst, dtype=np.int64)
        keep = src != dst
        src, dst = src[keep], dst[keep]
        if not directed:
            src, dst = np.concatenate([src, dst]), np.concatenate([dst, src])
        if len(src):
            pairs = np.unique(np.stack([src, dst], axis=1), axis=0)
            src, dst = pairs[:, 0], pairs[:, 1]
        out_indptr, order = _csr(src, n_nodes, order_within=dst)
        out_indices = dst[order]
        in_indptr, order = _csr(dst, n_nodes, order_within=src)
        in_indices = src[order]
        if users is None:
            users = IdTable(str(i) for i in range(n_nodes))
        return cls(directed, out_indptr, out_indices, in_indptr, in_indices, users)

    @property
    def n_nodes(self):
        return len(self.out_indptr) - 1

    @property
    def edge_count(self):
        n = len(self.out_indices)
        return n if self.directed else n // 2

    def followers(self, v):
        if v >= self.n_nodes:
            return self.in_indices[:0]
        return self.in_indices[self.in_indptr[v]:self.in_indptr[v + 1]]

    def following(self, u):
        if u >= self.n_nodes:
            return self.out_indices[:0]
        return self.out_indices[self.out_indptr[u]:self.out_indptr[u + 1]]

    def follower_count(self, v):
        if v >= self.n_nodes:
            return 0
        return int(self.in_indptr[v + 1] - self.in_indptr[v])

    def following_count(self, u):
        if u >= self.n_nodes:
            return 0
        return int(self.out_indptr[u + 1] - self.out_indptr[u])

    def has_edge(self, u, v):
        nbrs = self.following(u)
        i = np.searchsorted(nbrs, v)
        return bool(i < len(nbrs) and nbrs[i] == v)

    def edges(self):
        """Return (src, dst) arrays; undirected graphs yield each pair once."""
        src = np.repeat(np.arange(self.n_nodes, dtype=np.int64), np.diff(self.out_indptr))
        dst = self.out_indices
        if not self.directed:
            keep = src < dst
            src, dst = src[keep], dst[keep]
        return src, dst

    def with_node_count(self, n_nodes):
        """Pad the adjacency with isolated nodes up to ``n_nodes``."""
        extra = n_nodes - self.n_nodes
        if extra <= 0:
            return self
        pad = lambda p: np.concatenate([p, np.full(extra, p[-1], dtype=np.int64)])
        return SocialGraph(self.directed, pad(self.out_indptr), self.out_indices,
                           pad(self.in_indptr), self.in_indices, self.users)


def _read_lines(path):
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if line:
                yield lineno, line


def load_graph(path, directed=True, users=None):
    """Read a ``src<TAB>dst`` edge list into a :class:`SocialGraph`."""
    users = IdTable() if users is None else users
    src, dst = [], []
    for lineno, line in _read_lines(path):
        parts = line.split("\t")
        if len(parts) != 2 or not parts[0] or not parts[1]:
            raise CorpusError(f"{path}:{lineno}: expected 'src<TAB>dst', got {line!r}")
        src.append(users.intern(parts[0]))
        dst.append(users.intern(parts[1]))
    if not src:
        raise CorpusError(f"{path}: empty graph file")
    graph = SocialGraph.from_edges(src, dst, len(users), directed=directed, users=users)
    logger.info("loaded graph %s: %d nodes, %d edges", path, graph.n_nodes, graph.edge_count)
    return graph


def write_graph(graph, path):
    src, dst = graph.edges()
    names = graph.users.names
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s, d in zip(src.tolist(), dst.tolist()):
            fh.write(f"{names[s]}\t{names[d]}\n")


# ---------------------------------------------------------------------------
# Adoption log
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class AdoptionLog:
    """Adoption events sorted by (time, user, item) with per-item/per-user indexes.

    ``item_offsets[item_indptr[i]:item_indptr[i + 1]]`` are the positions of
    item ``i``'s events in the global order; likewise for users.
    """

    users: np.ndarray
    items: np.ndarray
    times: np.ndarray
    user_ids: IdTable
    item_ids: IdTable
    item_indptr: np.ndarray = None
    item_offsets: np.ndarray = None
    user_indptr: np.ndarray = None
    user_offsets: np.ndarray = None

    @classmethod
    def from_events(cls, users, items, times, user_ids=None, item_ids=None):
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        times = np.asarray(times, dtype=np.int64)
        if not (len(users) == len(items) == len(times)):
            raise CorpusError("event columns differ in length")
        if len(times) and times.min() < 0:
            raise CorpusError("negative timestamp")
        n_users = max(len(user_ids) if user_ids is not None else 0,
                      int(users.max()) + 1 if len(users) else 0)
        n_items = max(len(item_ids) if item_ids is not None else 0,
                      int(items.max()) + 1 if len(items) else 0)
        t_max = int(times.max()) + 1 if len(times) else 1
        if t_max.bit_length() + n_users.bit_length() + n_items.bit_length() < 63:
            # the packed key holds every field, so sort it in place and unpack
            # (equal keys are identical events, so stability does not matter)
            key = (times * n_users + users) * n_items + items
            del users, items, times
            key.sort()
            items = key % n_items
            key //= n_items
            users = key % n_users
            key //= n_users
            times = key
        else:
            order = np.lexsort((items, users, times))
            users, items, times = users[order], items[order], times[order]
            del order
        id_dtype = _index_dtype(max(n_users, n_items))
        users = users.astype(id_dtype, copy=False)
        items = items.astype(id_dtype, copy=False)
        if user_ids is None:
            user_ids = IdTable(str(i) for i in range(n_users))
        if item_ids is None:
            item_ids = IdTable(str(i) for i in range(n_items))
        log = cls(users, items, times, user_ids, item_ids)
        log.item_indptr, log.item_offsets = _csr(items, n_items)
        log.user_indptr, log.user_offsets = _csr(users, n_users)
        return log

    def __len__(self):
        return len(self.times)

    def __iter__(self):
        return zip(self.users.tolist(), self.items.tolist(), self.times.tolist())

    @property
    def n_items(self):
        return len(self.item_indptr) - 1

    @property
    def n_users(self):
        return len(self.user_indptr) - 1

    @property
    def last_timestamp(self):
        return int(self.times[-1]) if len(self.times) else 0

    def item_events(self, item):
        """Offsets of ``item``'s events, in global order."""
        return self.item_offsets[self.item_indptr[item]:self.item_indptr[item + 1]]

    def user_events(self, user):
        if user < 0 or user >= self.n_users:
            return self.user_offsets[:0]
        return self.user_offsets[self.user_indptr[user]:self.user_indptr[user + 1]]

    def first_adoption_time(self, user):
        ev = self.user_events(user)
        return int(self.times[ev[0]]) if len(ev) else None


def load_adoptions(path, users=None, items=None):
    """Read ``user<TAB>item<TAB>unix_seconds`` lines into an :class:`AdoptionLog`."""
    users = IdTable() if users is None else users
    items = IdTable() if items is None else items
    u_col, i_col, t_col = [], [], []
    for lineno, line in _read_lines(path):
        parts = line.split("\t")
        if len(parts) != 3 or not parts[0] or not parts[1]:
            raise CorpusError(f"{path}:{lineno}: expected 'user<TAB>item<TAB>unix_seconds'")
        try:
            ts = int(parts[2])
        except ValueError:
            raise CorpusError(f"{path}:{lineno}: non-integer timestamp {parts[2]!r}") from None
        if ts < 0:
            raise CorpusError(f"{path}:{lineno}: negative timestamp {ts}")
        u_col.append(users.intern(parts[0]))
        i_col.append(items.intern(parts[1]))
        t_col.append(ts)
    log = AdoptionLog.from_events(u_col, i_col, t_col, users, items)
    logger.info("loaded %d adoptions of %d items by %d users", len(log), log.n_items, log.n_users)
    return log


def write_adoptions(log, path):
    un, itn = log.user_ids.names, log.item_ids.names
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for u, i, t in log:
            fh.write(f"{un[u]}\t{itn[i]}\t{t}\n")


def user_adoptions_before(log, user, cutoff):
    """Distinct items ``user`` adopted strictly before ``cutoff``."""
    ev = log.user_events(user)
    n = np.searchsorted(log.times[ev], cutoff, side="left")
    return set(log.items[ev[:n]].tolist())


def count_adoptions_in(log, user, start, end):
    """Number of ``user``'s adoption events with ``start <= time < end``."""
    if start > end:
        raise ValueError(f"start {start} is after end {end}")
    ev = log.user_events(user)
    t = log.times[ev]
    return int(np.searchsorted(t, end, side="left") - np.searchsorted(t, start, side="left"))


# ---------------------------------------------------------------------------
# User metadata
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class UserMeta:
    """Registration time per user. Missing entries are ``-1``."""

    registration: np.ndarray

    def registration_time(self, user):
        if 0 <= user < len(self.registration) and self.registration[user] >= 0:
            return int(self.registration[user])
        return None

    def clamp_to(self, log):
        """Clamp registrations that postdate a user's first adoption."""
        reg = self.registration.copy()
        n_bad = 0
        for u in np.flatnonzero(reg >= 0).tolist():
            first = log.first_adoption_time(u)
            if first is not None and reg[u] > first:
                reg[u] = first
                n_bad += 1
        if n_bad:
            logger.warning("clamped %d registration times to first adoption", n_bad)
        return UserMeta(reg)


def load_meta(path, users, log=None):
    """Read ``user<TAB>unix_seconds`` registration lines.

    Users not yet present in ``users`` are interned. When ``log`` is given,
    registrations later than the user's first adoption are clamped.
    """
    rows = []
    for lineno, line in _read_lines(path):
        parts = line.split("\t")
        if len(parts) != 2 or not parts[0]:
            raise CorpusError(f"{path}:{lineno}: expected 'user<TAB>unix_seconds'")
        try:
            ts = int(parts[1])
        except ValueError:
            raise CorpusError(f"{path}:{lineno}: non-integer timestamp {parts[1]!r}") from None
        rows.append((users.intern(parts[0]), ts))
    reg = np.full(len(users), -1, dtype=np.int64)
    for u, ts in rows:
        reg[u] = ts
    meta = UserMeta(reg)
    return meta.clamp_to(log) if log is not None else meta


# ---------------------------------------------------------------------------
# Binary cache
# ---------------------------------------------------------------------------
#
# Layout (little-endian): magic "CLB1", u32 version, u32 flags
# (bit0 graph present, bit1 graph directed, bit2 log present, bit3 meta present),
# then a sequence of sections. Strings tables are u64 byte length + UTF-8 names
# joined by "\n"; arrays are u64 length + int64 payload.


def _put_array(fh, arr):
    arr = np.ascontiguousarray(arr, dtype="<i8")
    fh.write(struct.pack("<Q", len(arr)))
    fh.write(arr.tobytes())


def _get_array(fh):
    (n,) = struct.unpack("<Q", fh.read(8))
    buf = fh.read(8 * n)
    if len(buf) != 8 * n:
        raise CorpusError("truncated cache file")
    return np.frombuffer(buf, dtype="<i8").astype(np.int64)


def _put_names(fh, table):
    blob = "\n".join(table.names).encode("utf-8")
    fh.write(struct.pack("<QQ", len(table), len(blob)))
    fh.write(blob)


def _get_names(fh):
    count, size = struct.unpack("<QQ", fh.read(16))
    blob = fh.read(size).decode("utf-8")
    return IdTable(blob.split("\n") if count else [])


def save_cache(path, graph=None, log=None, meta=None):
    """Persist any of graph/log/meta to a single versioned binary file."""
    flags = (graph is not None) | ((graph is not None and graph.directed) << 1)
    flags |= (log is not None) << 2 | (meta is not None) << 3
    users = graph.users if graph is not None else (log.user_ids if log is not None else IdTable())
    with open(path, "wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(struct.pack("<II", CACHE_VERSION, flags))
        _put_names(fh, users)
        if graph is not None:
            src, dst = graph.edges()
            _put_array(fh, np.array([graph.n_nodes]))
            _put_array(fh, src)
            _put_array(fh, dst)
        if log is not None:
            _put_names(fh, log.item_ids)
            _put_array(fh, log.users)
            _put_array(fh, log.items)
            _put_array(fh, log.times)
        if meta is not None:
            _put_array(fh, meta.registration)


def load_cache(path):
    """Inverse of :func:`save_cache`; returns ``(graph, log, meta)``."""
    with open(path, "rb") as fh:
        if fh.read(4) != CACHE_MAGIC:
            raise CorpusError(f"{path}: not a CLB1 cache file")
        version, flags = struct.unpack("<II", fh.read(8))
        if version != CACHE_VERSION:
            raise CorpusError(f"{path}: unsupported cache version {version}")
        users = _get_names(fh)
        graph = log = meta = None
        if flags & 1:
            (n_nodes,) = _get_array(fh)
            src, dst = _get_array(fh), _get_array(fh)
            graph = SocialGraph.from_edges(src, dst, int(n_nodes), bool(flags & 2), users)
        if flags & 4:
            items = _get_names(fh)
            u, i, t = _get_array(fh), _get_array(fh), _get_array(fh)
            log = AdoptionLog.from_events(u, i, t, users, items)
        if flags & 8:
            meta = UserMeta(_get_array(fh))
    return graph, log, meta
