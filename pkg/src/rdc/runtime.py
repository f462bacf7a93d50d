"""Places, asynchronous activities, finish scopes and their transports.

A run consists of ``n`` places. Each place owns a dispatcher that drains its
inbox of framed messages, a handle registry, a collective mailbox and a pool
of workers for intra-place parallel patterns. Places never share Python
objects: everything that crosses between them is pickled to bytes first, even
with the in-process transport.

Remote activities are registered task functions plus a pickled argument
tuple. Termination of activities is tracked by credit counting at the home
place of the governing finish: a spawn increments the home counter (with an
acknowledged round trip when the spawner is remote) before the spawner
proceeds, and the activity sends a termination message once it is done.
"""

from __future__ import annotations

import io
import itertools
import logging
import os
import pickle
import queue
import struct
import threading
import traceback
from collections import Counter, deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from multiprocessing.connection import Client, Listener
from typing import Any, Callable

from . import wire
from .wire import GlobalId, ProtocolError

log = logging.getLogger(__name__)

DEFAULT_COLLECTIVE_TIMEOUT_MS = 30_000

_local = threading.local()

TASKS: dict[str, Callable] = {}


class ConfigurationError(RuntimeError):
    pass


class CollectiveError(RuntimeError):
    """Misuse of a teamed operation (concurrent callers, bad root, ...)."""


class CollectiveTimeout(CollectiveError):
    """A group member did not join a collective before the deadline."""


class UnknownTaskError(RuntimeError):
    pass


class RemoteError(RuntimeError):
    """Stand-in for an exception that could not be pickled back home."""


class FinishError(RuntimeError):
    """Raised at a finish exit when one or more governed activities failed."""

    def __init__(self, errors: list[BaseException]):
        self.errors = errors
        first = errors[0] if errors else None
        super().__init__(f"{len(errors)} activit{'y' if len(errors) == 1 else 'ies'} failed; first: {first!r}")


@dataclass(frozen=True, order=True)
class Place:
    id: int

    def __repr__(self) -> str:
        return f"place({self.id})"

    __str__ = __repr__


def task(fn: Callable) -> Callable:
    """Register ``fn`` as a task kind that may run on remote places."""
    kind = f"{fn.__module__}:{fn.__qualname__}"
    TASKS[kind] = fn
    fn.__rdc_kind__ = kind
    return fn


def _kind_of(fn: Callable) -> str:
    kind = getattr(fn, "__rdc_kind__", None)
    if kind is None:
        raise TypeError(f"{fn!r} is not a registered task; decorate it with @rdc.task")
    return kind


# -- serialization ----------------------------------------------------------


class _Pickler(pickle.Pickler):
    def __init__(self, file, registry, dest, descriptors):
        super().__init__(file, protocol=pickle.HIGHEST_PROTOCOL)
        self._registry = registry
        self._dest = dest
        self._descriptors = descriptors

    def persistent_id(self, obj):
        gid = getattr(obj, "_rdc_gid", None)
        if gid is None or not isinstance(gid, GlobalId):
            return None
        desc = self._registry.descriptor(gid)
        if self._dest is None:
            return ("rdc", gid.place, gid.seq, desc)
        if self._registry.mark_sent(gid, self._dest):
            self._descriptors[gid] = desc
        return ("rdc", gid.place, gid.seq, None)


class _Unpickler(pickle.Unpickler):
    def __init__(self, file, registry):
        super().__init__(file)
        self._registry = registry

    def persistent_load(self, pid):
        tag, p, s, desc = pid
        if tag != "rdc":
            raise pickle.UnpicklingError(f"unknown persistent id {pid!r}")
        return self._registry.resolve(GlobalId(p, s), desc)


def dumps(obj: Any, dest: int | None = None) -> bytes | tuple[bytes, dict]:
    """Pickle ``obj`` on the current place, replacing handles by their GlobalId.

    With ``dest`` given, constructor descriptors for ids not yet sent to that
    place are returned separately (they travel in the message header).
    """
    st = current()
    buf = io.BytesIO()
    descs: dict = {}
    _Pickler(buf, st.registry, dest, descs).dump(obj)
    if dest is None:
        return buf.getvalue()
    return buf.getvalue(), descs


def loads(data: bytes) -> Any:
    return _Unpickler(io.BytesIO(data), current().registry).load()


def _pack_error(exc: BaseException, where: int) -> bytes:
    try:
        exc.place = where  # type: ignore[attr-defined]
    except Exception:
        pass
    try:
        return pickle.dumps(exc)
    except Exception:
        text = "".join(traceback.format_exception(type(exc), exc, exc.__traceback__))
        return pickle.dumps(RemoteError(f"at place({where}): {text}"))


# -- context ------------------------------------------------------------------


def current() -> PlaceState:
    st = getattr(_local, "place", None)
    if st is None:
        raise RuntimeError("not running on an rdc place; start a runtime with rdc.launch()")
    return st


def _set_context(st: PlaceState | None, fin=None, worker=None):
    _local.place = st
    _local.finish = fin
    _local.worker = worker


def here() -> Place:
    return Place(current().id)


def place(i: int) -> Place:
    n = current().n_places
    if not 0 <= i < n:
        raise ConfigurationError(f"no place {i} in a run of {n} places")
    return Place(i)


def places() -> list[Place]:
    return [Place(i) for i in range(current().n_places)]


def n_places() -> int:
    return current().n_places


def worker_id() -> int | None:
    """Index of the parallel worker running the caller, if any."""
    return getattr(_local, "worker", None)


# -- finish -------------------------------------------------------------------


class _Finish:
    __slots__ = ("id", "count", "errors", "cond")

    def __init__(self, fid: int, lock: threading.Lock):
        self.id = fid
        self.count = 0
        self.errors: list[BaseException] = []
        self.cond = threading.Condition(lock)


class _FinishScope:
    def __enter__(self):
        st = current()
        self._st = st
        self._fin = st._new_finish()
        self._prev = getattr(_local, "finish", None)
        _local.finish = (st.id, self._fin.id)
        return self

    def __exit__(self, et, ev, tb):
        _local.finish = self._prev
        errors = self._st._wait_finish(self._fin)
        if ev is not None:
            return False
        if errors:
            raise FinishError(errors)
        return False


def finish(body: Callable | None = None, *args):
    """Wait for ``body`` and every activity it transitively spawns.

    Without a body, returns a context manager::

        with finish():
            async_at(place(1), work)
    """
    if body is None:
        return _FinishScope()
    with _FinishScope():
        body(*args)


def _current_finish():
    fref = getattr(_local, "finish", None)
    if fref is None:
        raise RuntimeError("async_at called outside of any finish scope")
    return fref


def async_at(p: Place, fn: Callable, *args) -> None:
    """Spawn registered task ``fn(*args)`` on place ``p``."""
    st = current()
    dest = p.id if isinstance(p, Place) else int(p)
    if not 0 <= dest < st.n_places:
        raise ConfigurationError(f"no place {dest} in a run of {st.n_places} places")
    kind = _kind_of(fn)
    fref = _current_finish()
    st._spawn(fref)
    try:
        # the first message to carry a descriptor must also be sent first
        with st._send_lock:
            payload, descs = dumps(args, dest)
            st.send(dest, wire.TAG_TASK, pickle.dumps((kind, fref, descs, payload)))
    except BaseException as e:
        st._terminate(fref, e)
        raise


def async_(fn: Callable, *args) -> None:
    async_at(here(), fn, *args)


def at(p: Place, fn: Callable, *args) -> Any:
    """Evaluate ``fn(*args)`` on ``p`` (inside a finish there) and return its value."""
    st = current()
    dest = p.id if isinstance(p, Place) else int(p)
    if not 0 <= dest < st.n_places:
        raise ConfigurationError(f"no place {dest} in a run of {st.n_places} places")
    kind = _kind_of(fn)
    req, slot = st._new_request()
    with st._send_lock:
        payload, descs = dumps(args, dest)
        st.send(dest, wire.TAG_AT, pickle.dumps((req, st.id, kind, descs, payload)))
    ok, data = st._wait_request(req, slot)
    value = loads(data)
    if not ok:
        raise value
    return value


# -- transports ---------------------------------------------------------------


class InProcTransport:
    """All places live in this process; bytes move through per-place queues."""

    def __init__(self, n: int):
        self._queues = [queue.SimpleQueue() for _ in range(n)]

    def send(self, src: int, dest: int, data: bytes) -> None:
        self._queues[dest].put((src, data))

    def recv(self, me: int):
        return self._queues[me].get()

    def close(self) -> None:
        pass


_SRC = struct.Struct("<I")


class SocketTransport:
    """One OS process per place; frames travel over local authenticated sockets."""

    def __init__(self, me: int, addresses: list, listener: Listener, authkey: bytes):
        self.me = me
        self._addresses = addresses
        self._authkey = authkey
        self._listener = listener
        self._inbox: queue.SimpleQueue = queue.SimpleQueue()
        self._conns: dict[int, Any] = {}
        self._locks = {i: threading.Lock() for i in range(len(addresses))}
        self._closed = False
        threading.Thread(target=self._accept_loop, daemon=True, name=f"rdc-accept-{me}").start()

    def _accept_loop(self):
        while not self._closed:
            try:
                conn = self._listener.accept()
            except (OSError, EOFError):
                return
            threading.Thread(target=self._reader, args=(conn,), daemon=True).start()

    def _reader(self, conn):
        while True:
            try:
                data = conn.recv_bytes()
            except (EOFError, OSError):
                return
            (src,) = _SRC.unpack_from(data, 0)
            self._inbox.put((src, data[_SRC.size:]))

    def send(self, src: int, dest: int, data: bytes) -> None:
        if dest == self.me:
            self._inbox.put((src, data))
            return
        with self._locks[dest]:
            conn = self._conns.get(dest)
            if conn is None:
                conn = Client(self._addresses[dest], authkey=self._authkey)
                self._conns[dest] = conn
            conn.send_bytes(_SRC.pack(src) + data)

    def recv(self, me: int):
        return self._inbox.get()

    def close(self) -> None:
        self._closed = True
        for c in self._conns.values():
            try:
                c.close()
            except OSError:
                pass
        try:
            self._listener.close()
        except OSError:
            pass


# -- per-place state ----------------------------------------------------------

_COLL_HDR = struct.Struct("<IQQHI")


class PlaceState:
    """Everything one place owns: inbox dispatcher, finishes, registry, mailbox."""

    def __init__(self, pid: int, n_places: int, transport, workers: int, timeout_ms: int):
        from .registry import HandleRegistry

        self.id = pid
        self.n_places = n_places
        self.transport = transport
        self.workers = max(1, int(workers))
        self.timeout = timeout_ms / 1000.0
        self.registry = HandleRegistry(pid)
        self.counters: Counter = Counter()
        self.task_log: deque = deque(maxlen=100_000)
        self.local_state: dict = {}

        self._lock = threading.Lock()
        self._send_lock = threading.RLock()
        self._fin_lock = threading.Lock()
        self._finishes: dict[int, _Finish] = {}
        self._fin_seq = itertools.count(1)
        self._req_seq = itertools.count(1)
        self._requests: dict[int, list] = {}
        self._req_cond = threading.Condition(threading.Lock())

        self._coll_cond = threading.Condition(threading.Lock())
        self._mailbox: dict[tuple, tuple[int, bytes]] = {}
        self._epochs: Counter = Counter()
        self._inflight: set = set()
        self._group_seq = itertools.count(1)

        self._pool: ThreadPoolExecutor | None = None
        self._dispatcher: threading.Thread | None = None
        self._running = False

    @property
    def place(self) -> Place:
        return Place(self.id)

    # messaging

    def send(self, dest: int, tag: int, body: bytes) -> None:
        data = wire.frame(tag, body)
        c = self.counters
        c["messages"] += 1
        c["bytes"] += len(data)
        c[f"tag{tag}"] += 1
        if dest != self.id:
            c["remote_messages"] += 1
        self.transport.send(self.id, dest, data)

    def start(self, in_thread: bool = True) -> None:
        self._running = True
        if in_thread:
            self._dispatcher = threading.Thread(target=self.dispatch_loop, daemon=True, name=f"rdc-place-{self.id}")
            self._dispatcher.start()

    def dispatch_loop(self) -> None:
        while True:
            src, data = self.transport.recv(self.id)
            try:
                tag, body = wire.unframe(data)
                if tag == wire.TAG_SHUTDOWN:
                    break
                self._handle(src, tag, body)
            except Exception:
                log.exception("place %d failed to handle a message from %d", self.id, src)
        self._running = False

    def _handle(self, src: int, tag: int, body: bytes) -> None:
        if tag == wire.TAG_COLL:
            cp, cs, epoch, kind, rank = _COLL_HDR.unpack_from(body, 0)
            with self._coll_cond:
                self._mailbox[(GlobalId(cp, cs), epoch, rank)] = (kind, body[_COLL_HDR.size:])
                self._coll_cond.notify_all()
        elif tag == wire.TAG_TASK:
            kind, fref, descs, payload = pickle.loads(body)
            self.registry.add_descriptors(descs)
            self.task_log.append(("queued", fref, kind))
            threading.Thread(target=self._run_task, args=(kind, fref, payload), daemon=True).start()
        elif tag == wire.TAG_SPAWN:
            fid, req, requester = pickle.loads(body)
            fin = self._finishes[fid]
            with fin.cond:
                fin.count += 1
            self.send(requester, wire.TAG_SPAWN_ACK, pickle.dumps((req, True, b"")))
        elif tag in (wire.TAG_SPAWN_ACK, wire.TAG_AT_RESULT):
            req, ok, data = pickle.loads(body)
            with self._req_cond:
                slot = self._requests.get(req)
                if slot is not None:
                    slot[:] = [True, ok, data]
                self._req_cond.notify_all()
        elif tag == wire.TAG_TERM:
            fid, err = pickle.loads(body)
            self._finish_done(fid, pickle.loads(err) if err is not None else None)
        elif tag == wire.TAG_AT:
            req, requester, kind, descs, payload = pickle.loads(body)
            self.registry.add_descriptors(descs)
            threading.Thread(target=self._run_at, args=(req, requester, kind, payload), daemon=True).start()
        else:
            raise ProtocolError(f"unknown message tag {tag}")

    # activities

    def _run_task(self, kind, fref, payload) -> None:
        _set_context(self, fref)
        err = None
        self.task_log.append(("start", fref, kind))
        try:
            fn = TASKS.get(kind)
            if fn is None:
                raise UnknownTaskError(
                    f"task kind {kind!r} is not registered on place({self.id}); "
                    "with the proc transport, import task modules before the runtime starts"
                )
            args = loads(payload)
            fn(*args)
        except BaseException as e:
            err = e
        finally:
            self.task_log.append(("end", fref, kind))
            self._terminate(fref, err)
            _set_context(None)

    def _run_at(self, req, requester, kind, payload) -> None:
        _set_context(self, None)
        try:
            fn = TASKS.get(kind)
            if fn is None:
                raise UnknownTaskError(
                    f"task kind {kind!r} is not registered on place({self.id}); "
                    "with the proc transport, import task modules before the runtime starts"
                )
            args = loads(payload)
            with _FinishScope():
                value = fn(*args)
            data, ok = dumps(value), True
        except BaseException as e:
            data, ok = _pack_error(e, self.id), False
        self.send(requester, wire.TAG_AT_RESULT, pickle.dumps((req, ok, data)))
        _set_context(None)

    # finish protocol

    def _new_finish(self) -> _Finish:
        fin = _Finish(next(self._fin_seq), self._fin_lock)
        with self._fin_lock:
            self._finishes[fin.id] = fin
        return fin

    def _wait_finish(self, fin: _Finish) -> list[BaseException]:
        with fin.cond:
            while fin.count > 0:
                fin.cond.wait()
            del self._finishes[fin.id]
        return fin.errors

    def _finish_done(self, fid: int, err: BaseException | None) -> None:
        fin = self._finishes[fid]
        with fin.cond:
            fin.count -= 1
            if err is not None:
                fin.errors.append(err)
            if fin.count <= 0:
                fin.cond.notify_all()

    def _new_request(self):
        req = next(self._req_seq)
        slot = [False, None, None]
        with self._req_cond:
            self._requests[req] = slot
        return req, slot

    def _wait_request(self, req, slot):
        with self._req_cond:
            while not slot[0]:
                self._req_cond.wait()
            del self._requests[req]
        return slot[1], slot[2]

    def _spawn(self, fref) -> None:
        home, fid = fref
        if home == self.id:
            fin = self._finishes[fid]
            with fin.cond:
                fin.count += 1
            return
        req, slot = self._new_request()
        self.send(home, wire.TAG_SPAWN, pickle.dumps((fid, req, self.id)))
        self._wait_request(req, slot)

    def _terminate(self, fref, err: BaseException | None) -> None:
        home, fid = fref
        if home == self.id:
            self._finish_done(fid, err)
        else:
            data = _pack_error(err, self.id) if err is not None else None
            self.send(home, wire.TAG_TERM, pickle.dumps((fid, data)))

    # collectives

    def new_group_ctx(self) -> GlobalId:
        return GlobalId(self.id, next(self._group_seq))

    def exchange(self, ctx: GlobalId, members: tuple, kind: int, sends: dict[int, bytes], expect) -> dict[int, bytes]:
        """One collective epoch: send ``sends[rank]`` and wait for ``expect`` ranks."""
        me = None
        for r, p in enumerate(members):
            if p.id == self.id:
                me = r
                break
        if me is None:
            raise CollectiveError(f"place({self.id}) is not a member of group {ctx}")
        with self._coll_cond:
            if ctx in self._inflight:
                raise CollectiveError(
                    f"place({self.id}): a second activity entered a teamed operation of group {ctx} concurrently"
                )
            self._inflight.add(ctx)
            epoch = self._epochs[ctx]
            self._epochs[ctx] += 1
        try:
            for r, data in sends.items():
                dest = members[r].id
                if dest == self.id:
                    with self._coll_cond:
                        self._mailbox[(ctx, epoch, me)] = (kind, data)
                else:
                    self.send(dest, wire.TAG_COLL, _COLL_HDR.pack(ctx.place, ctx.seq, epoch, kind, me) + data)
            return self._await(ctx, epoch, kind, list(expect))
        finally:
            with self._coll_cond:
                self._inflight.discard(ctx)

    def _await(self, ctx, epoch, kind, expect) -> dict[int, bytes]:
        import time

        deadline = time.monotonic() + self.timeout
        out: dict[int, bytes] = {}
        with self._coll_cond:
            while True:
                for r in expect:
                    if r in out:
                        continue
                    got = self._mailbox.pop((ctx, epoch, r), None)
                    if got is not None:
                        k, data = got
                        if k != kind:
                            raise ProtocolError(
                                f"place({self.id}) group {ctx} epoch {epoch}: expected collective {kind}, rank {r} sent {k}"
                            )
                        out[r] = data
                if len(out) == len(expect):
                    return out
                left = deadline - time.monotonic()
                if left <= 0:
                    missing = sorted(set(expect) - set(out))
                    raise CollectiveTimeout(
                        f"place({self.id}) group {ctx} epoch {epoch}: ranks {missing} did not join within {self.timeout:.1f}s"
                    )
                self._coll_cond.wait(left)

    # intra-place workers

    def pool(self) -> ThreadPoolExecutor:
        if self._pool is None:
            with self._lock:
                if self._pool is None:
                    self._pool = ThreadPoolExecutor(self.workers, thread_name_prefix=f"rdc-w{self.id}")
        return self._pool

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown(wait=True)


# -- runtime ------------------------------------------------------------------


def _timeout_from_env(explicit) -> int:
    if explicit is not None:
        return int(explicit)
    env = os.environ.get("RDC_COLLECTIVE_TIMEOUT_MS")
    return int(env) if env else DEFAULT_COLLECTIVE_TIMEOUT_MS


def _child_main(pid, n, workers, timeout_ms, listener, addresses, authkey, others):
    for lst in others:
        try:
            lst.close()
        except OSError:
            pass
    tr = SocketTransport(pid, addresses, listener, authkey)
    st = PlaceState(pid, n, tr, workers, timeout_ms)
    _set_context(st)
    st.start(in_thread=False)
    st.dispatch_loop()
    st.close()
    tr.close()
    os._exit(0)


class Runtime:
    """A running set of places; the creating thread becomes an activity on place 0."""

    def __init__(self, places: int = 1, workers: int | None = None, transport: str = "inproc",
                 collective_timeout_ms: int | None = None):
        if places < 1:
            raise ConfigurationError("need at least one place")
        if transport not in ("inproc", "proc"):
            raise ConfigurationError(f"unknown transport {transport!r}")
        self.n = places
        self.workers = workers or os.cpu_count() or 1
        self.transport_kind = transport
        self.timeout_ms = _timeout_from_env(collective_timeout_ms)
        self.states: dict[int, PlaceState] = {}
        self._procs: list = []
        self._transport = None
        self._saved = None

    def start(self) -> Runtime:
        if self.transport_kind == "inproc":
            tr = InProcTransport(self.n)
            self._transport = tr
            for i in range(self.n):
                self.states[i] = PlaceState(i, self.n, tr, self.workers, self.timeout_ms)
        else:
            import multiprocessing as mp

            authkey = os.urandom(16)
            listeners = [Listener(("127.0.0.1", 0), authkey=authkey) for _ in range(self.n)]
            addresses = [lst.address for lst in listeners]
            ctx = mp.get_context("fork")
            for i in range(1, self.n):
                others = [lst for j, lst in enumerate(listeners) if j != i]
                p = ctx.Process(target=_child_main, daemon=True,
                                args=(i, self.n, self.workers, self.timeout_ms, listeners[i], addresses, authkey, others))
                p.start()
                self._procs.append(p)
            for lst in listeners[1:]:
                lst.close()
            tr = SocketTransport(0, addresses, listeners[0], authkey)
            self._transport = tr
            self.states[0] = PlaceState(0, self.n, tr, self.workers, self.timeout_ms)
        for st in self.states.values():
            st.start()
        self._saved = (getattr(_local, "place", None), getattr(_local, "finish", None), getattr(_local, "worker", None))
        _set_context(self.states[0])
        return self

    def stop(self) -> None:
        st0 = self.states[0]
        for i in range(self.n):
            st0.send(i, wire.TAG_SHUTDOWN, b"")
        for st in self.states.values():
            if st._dispatcher is not None:
                st._dispatcher.join(timeout=10)
            st.close()
        for p in self._procs:
            p.join(timeout=10)
            if p.is_alive():
                p.terminate()
        self._transport.close()
        _set_context(*self._saved) if self._saved else _set_context(None)

    def __enter__(self) -> Runtime:
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()

    def state(self, i: int) -> PlaceState:
        """Direct access to an in-process place (inproc transport only)."""
        return self.states[i]


def launch(places: int = 1, workers: int | None = None, transport: str = "inproc",
           collective_timeout_ms: int | None = None) -> Runtime:
    """Create a runtime; use as a context manager."""
    return Runtime(places, workers, transport, collective_timeout_ms)


@task
def _read_counters():
    return dict(current().counters)


def counters(p: Place) -> dict:
    """Transport counters of place ``p`` (fetched with an ``at``)."""
    return at(p, _read_counters)
