"""TCP authentication gateway and the device simulator that feeds it."""

import json
import logging
import math
import os
import socket
import socketserver
import threading
import time

import numpy as np

from ppgauth.errors import BindFailure, ConnectFailure, PPGAuthError, SequenceRegression
from ppgauth.protocol import FramedPacket, encode_packet, read_packet
from ppgauth.signal_io import SyntheticSubjectProfile, generate_synthetic
from ppgauth.streaming import Session, StreamConfig

log = logging.getLogger(__name__)

FRAME_SAMPLES = 25


class DecisionLog:
    """Thread-safe JSON-lines sink.

    Every event goes to the combined log (if a path is given); with a
    ``session_dir`` each session also gets its own ``session_<id>.jsonl``.
    """

    def __init__(self, path=None, session_dir=None, echo=False):
        self._lock = threading.Lock()
        self._main = open(path, "a", encoding="utf-8") if path else None
        self._session_dir = session_dir
        self._per_session = {}
        self.echo = echo
        if session_dir:
            os.makedirs(session_dir, exist_ok=True)

    def session_path(self, session_id):
        return os.path.join(self._session_dir, f"session_{session_id}.jsonl")

    def write(self, event):
        line = json.dumps(event.to_json())
        with self._lock:
            if self._main:
                self._main.write(line + "\n")
                self._main.flush()
            if self._session_dir:
                fh = self._per_session.get(event.session_id)
                if fh is None:
                    fh = open(self.session_path(event.session_id), "a", encoding="utf-8")
                    self._per_session[event.session_id] = fh
                fh.write(line + "\n")
            if self.echo:
                print(line, flush=True)

    def finalize(self, session_id):
        with self._lock:
            fh = self._per_session.pop(session_id, None)
            if fh:
                fh.close()

    def close(self):
        with self._lock:
            for fh in self._per_session.values():
                fh.close()
            self._per_session.clear()
            if self._main:
                self._main.close()
                self._main = None


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        server = self.server
        session = None
        events = []
        try:
            while True:
                packet = read_packet(self.rfile)
                if packet is None:
                    break
                if session is None:
                    session = Session(server.params, server.config, packet.session_id)
                    log.info("session %d opened from %s", packet.session_id, self.client_address)
                try:
                    new = session.step(packet)
                except SequenceRegression as exc:
                    log.warning("%s", exc)
                    new = session.step(packet)
                for ev in new:
                    server.sink.write(ev)
                events.extend(new)
        except (PPGAuthError, OSError) as exc:
            log.error("closing connection %s: %s", self.client_address, exc)
        finally:
            if session is not None:
                server.sink.finalize(session.session_id)
                server.session_finished(session, events)


class Gateway(socketserver.ThreadingTCPServer):
    """Threaded TCP gateway; one :class:`Session` per connection.

    ``params`` are shared read-only between connection threads.
    """

    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, address, params, config=StreamConfig(), log_path=None,
                 session_dir=None, echo=False):
        self.params = params
        self.config = config
        self.sink = DecisionLog(log_path, session_dir, echo)
        self.finished = []
        self._cv = threading.Condition()
        try:
            super().__init__(address, _Handler)
        except OSError as exc:
            self.sink.close()
            raise BindFailure(f"cannot listen on {address}: {exc}") from None

    def session_finished(self, session, events):
        with self._cv:
            self.finished.append((session, events))
            self._cv.notify_all()

    def wait_for_sessions(self, n, timeout=60.0):
        """Block until ``n`` sessions have been torn down."""
        with self._cv:
            ok = self._cv.wait_for(lambda: len(self.finished) >= n, timeout)
        if not ok:
            raise TimeoutError(f"only {len(self.finished)} of {n} sessions finished")
        return list(self.finished)

    def server_close(self):
        super().server_close()
        self.sink.close()


def start_gateway(address, params, config=StreamConfig(), **kwargs):
    """Start a gateway on a background thread; returns ``(gateway, thread)``."""
    gw = Gateway(address, params, config, **kwargs)
    th = threading.Thread(target=gw.serve_forever, name="ppgauth-gateway", daemon=True)
    th.start()
    return gw, th


def gateway_serve(address, params, config=StreamConfig(), **kwargs):
    """Serve until interrupted."""
    gw = Gateway(address, params, config, **kwargs)
    log.info("gateway listening on %s:%d", *gw.server_address[:2])
    try:
        gw.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        gw.server_close()


def frames(record_or_array, session_id=0, frame_samples=FRAME_SAMPLES):
    """Split a record (or (N, 4) array) into packets with seq 0, 1, 2, ..."""
    data = getattr(record_or_array, "data", record_or_array)
    data = np.asarray(data)
    for seq, start in enumerate(range(0, len(data), frame_samples)):
        yield FramedPacket(session_id, seq, data[start:start + frame_samples])


def simulate_device(source, address, speed=1.0, session_id=0, frame_samples=FRAME_SAMPLES,
                    duration_s=None, rate_hz=25.0):
    """Replay ``source`` to a gateway at ``speed`` times real time.

    ``source`` is a :class:`SignalRecord` or a :class:`SyntheticSubjectProfile`
    (rendered for ``duration_s`` at ``rate_hz``). Returns the number of frames
    sent.
    """
    if speed < 1:
        raise ValueError("speed must be >= 1")
    if isinstance(source, SyntheticSubjectProfile):
        if duration_s is None:
            raise ValueError("duration_s is required when simulating from a profile")
        source = generate_synthetic(source, duration_s, rate_hz)
    rate = source.rate_hz
    try:
        sock = socket.create_connection(address, timeout=10)
    except OSError as exc:
        raise ConnectFailure(f"cannot connect to {address}: {exc}") from None
    sent = 0
    t_start = time.monotonic()
    samples_sent = 0
    with sock:
        for pkt in frames(source, session_id, frame_samples):
            if math.isfinite(speed):
                due = t_start + samples_sent / rate / speed
                delay = due - time.monotonic()
                if delay > 0:
                    time.sleep(delay)
            sock.sendall(encode_packet(pkt))
            samples_sent += pkt.n_samples
            sent += 1
        sock.shutdown(socket.SHUT_WR)
        # wait for the gateway to close its side so teardown is observable
        sock.settimeout(30)
        try:
            while sock.recv(4096):
                pass
        except OSError:
            pass
    return sent
