"""Scorer clients: NDJSON-over-stdio subprocess, HTTP POST, and score files.

The wire protocol is newline-delimited JSON. The harness sends
``{"type":"hello","protocol":1}`` and expects an ``info`` reply declaring
class names, the expected input shape, and an identity string. Scoring
requests carry a monotonically increasing job id, the sample ids, and the
image batch as base64-encoded little-endian float32 in NCHW order::

    {"type":"score","job":1,"ids":["a","b"],"shape":[2,1,64,64],
     "dtype":"f32le","data":"<base64>"}

The scorer answers ``{"type":"scores","job":1,"values":[[...],[...]]}`` or
``{"type":"error","job":1,"message":"..."}``. One job is in flight per
process at a time.
"""

from __future__ import annotations

import base64
import csv
import json
import logging
import queue
import subprocess
import threading
import urllib.error
import urllib.request
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import Dataset
from .errors import AlignmentError, HandshakeError, ProtocolError, ScorerJobError
from .image import ImageBuffer, pack_nchw

__all__ = [
    "PROTOCOL_VERSION",
    "ScorerInfo",
    "ScoreMatrix",
    "SubprocessScorer",
    "HttpScorer",
    "encode_score_request",
    "decode_image_payload",
    "parse_info",
    "save_scores",
    "load_scores",
    "load_precomputed",
]

log = logging.getLogger(__name__)

PROTOCOL_VERSION = 1
SCORE_DECIMALS = ".9g"  # enough significant digits to round-trip float32 exactly


@dataclass(frozen=True)
class ScorerInfo:
    class_names: tuple[str, ...]
    channels: int
    height: int
    width: int
    identity: str

    @property
    def input_shape(self) -> tuple[int, int, int]:
        return (self.channels, self.height, self.width)


@dataclass(frozen=True)
class ScoreMatrix:
    """Per-sample, per-class probabilities aligned to the request id order."""

    ids: tuple[str, ...]
    class_names: tuple[str, ...]
    values: np.ndarray  # float32, shape (n_samples, n_classes)

    @classmethod
    def build(cls, ids, class_names, values) -> "ScoreMatrix":
        v = np.asarray(values, dtype=np.float32)
        if v.ndim != 2 or v.shape != (len(ids), len(class_names)):
            raise AlignmentError(
                f"score matrix shape {v.shape} does not match {len(ids)} ids x {len(class_names)} classes"
            )
        if v.size and (float(v.min()) < 0.0 or float(v.max()) > 1.0):
            raise ScorerJobError(
                f"scores outside [0, 1]: min={float(v.min())}, max={float(v.max())}"
            )
        v = v.copy()
        v.setflags(write=False)
        return cls(ids=tuple(ids), class_names=tuple(class_names), values=v)


def parse_info(msg: dict) -> ScorerInfo:
    if not isinstance(msg, dict) or msg.get("type") != "info":
        raise HandshakeError(f"expected an info message, got: {_excerpt(msg)}")
    classes = msg.get("classes")
    if not isinstance(classes, list) or not classes or not all(isinstance(c, str) for c in classes):
        raise HandshakeError(f"info.classes must be a non-empty list of strings: {_excerpt(msg)}")
    spec = msg.get("input")
    if not isinstance(spec, dict):
        raise HandshakeError(f"info.input missing: {_excerpt(msg)}")
    dims = {}
    for key in ("channels", "height", "width"):
        v = spec.get(key)
        if not isinstance(v, int) or isinstance(v, bool) or v < 1:
            raise HandshakeError(f"info.input.{key} must be a positive integer: {_excerpt(msg)}")
        dims[key] = v
    identity = msg.get("identity")
    if not isinstance(identity, str) or not identity:
        raise HandshakeError(f"info.identity must be a non-empty string: {_excerpt(msg)}")
    return ScorerInfo(class_names=tuple(classes), identity=identity, **dims)


def encode_score_request(job: int, ids, images: list[ImageBuffer]) -> str:
    batch = pack_nchw(images)
    payload = base64.b64encode(batch.astype("<f4").tobytes()).decode("ascii")
    msg = {
        "type": "score",
        "job": job,
        "ids": list(ids),
        "shape": list(batch.shape),
        "dtype": "f32le",
        "data": payload,
    }
    return json.dumps(msg, separators=(",", ":"))


def decode_image_payload(msg: dict) -> np.ndarray:
    """Unpack a score request's image payload into an (N, C, H, W) float32 array."""
    shape = msg.get("shape")
    if not isinstance(shape, list) or len(shape) != 4:
        raise ProtocolError(f"score.shape must be [n, c, h, w]: {_excerpt(msg)}")
    if msg.get("dtype") != "f32le":
        raise ProtocolError(f"unsupported dtype {msg.get('dtype')!r}")
    raw = base64.b64decode(msg["data"])
    n = int(np.prod(shape))
    arr = np.frombuffer(raw, dtype="<f4")
    if arr.size != n:
        raise ProtocolError(f"payload carries {arr.size} floats, shape wants {n}")
    return arr.reshape(shape)


def _excerpt(msg) -> str:
    text = msg if isinstance(msg, str) else json.dumps(msg, default=str)
    return text[:200]


def _validate_scores_reply(msg: dict, job: int, ids, n_classes: int) -> np.ndarray:
    if msg.get("type") == "error":
        raise ScorerJobError(f"scorer reported an error: {_excerpt(msg.get('message', ''))}")
    if msg.get("type") != "scores":
        raise ProtocolError(f"expected scores for job {job}, got: {_excerpt(msg)}")
    if msg.get("job") != job:
        raise ProtocolError(f"job id mismatch: sent {job}, got {msg.get('job')!r}")
    values = msg.get("values")
    if not isinstance(values, list) or len(values) != len(ids):
        got = len(values) if isinstance(values, list) else values
        raise ScorerJobError(f"expected {len(ids)} score rows, got {got!r}")
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != n_classes:
        raise ScorerJobError(f"score rows must have {n_classes} entries, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ScorerJobError("scores contain non-finite values")
    if float(arr.min()) < 0.0 or float(arr.max()) > 1.0:
        bad = arr[(arr < 0.0) | (arr > 1.0)].flat[0]
        raise ScorerJobError(f"score {bad} outside [0, 1]")
    return arr.astype(np.float32)


class SubprocessScorer:
    """Runs a scorer as a child process and serializes jobs over its stdio.

    A failed exchange kills the child; the next call transparently restarts
    it and re-handshakes, so callers can simply retry a batch.
    """

    def __init__(self, command: list[str], *, timeout: float = 60.0, handshake_timeout: float = 30.0):
        self.command = list(command)
        self.timeout = timeout
        self.handshake_timeout = handshake_timeout
        self._proc: subprocess.Popen | None = None
        self._lines: queue.Queue | None = None
        self._info: ScorerInfo | None = None
        self._next_job = 1

    @property
    def info(self) -> ScorerInfo | None:
        return self._info

    def _start(self):
        self._proc = subprocess.Popen(
            self.command,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=None,
            text=True,
            bufsize=1,
        )
        self._lines = queue.Queue()

        def pump(proc, q):
            for line in proc.stdout:
                q.put(line)
            q.put(None)

        threading.Thread(target=pump, args=(self._proc, self._lines), daemon=True).start()

    def _send(self, text: str):
        try:
            self._proc.stdin.write(text + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as e:
            raise ProtocolError(f"scorer process pipe closed: {e}") from e

    def _recv(self, timeout: float) -> dict:
        try:
            line = self._lines.get(timeout=timeout)
        except queue.Empty:
            raise ProtocolError(f"no response from scorer within {timeout}s") from None
        if line is None:
            raise ProtocolError("scorer process closed its output")
        try:
            msg = json.loads(line)
        except json.JSONDecodeError:
            raise ProtocolError(f"non-JSON line from scorer: {_excerpt(line.rstrip())}") from None
        if not isinstance(msg, dict):
            raise ProtocolError(f"expected a JSON object from scorer: {_excerpt(line.rstrip())}")
        return msg

    def handshake(self) -> ScorerInfo:
        if self._proc is None or self._proc.poll() is not None:
            self._kill()
            self._start()
            self._send(json.dumps({"type": "hello", "protocol": PROTOCOL_VERSION}))
            try:
                msg = self._recv(self.handshake_timeout)
            except ProtocolError as e:
                self._kill()
                raise HandshakeError(f"handshake failed: {e}") from e
            self._info = parse_info(msg)
        assert self._info is not None
        return self._info

    def score_batch(self, images: list[ImageBuffer], ids: list[str]) -> np.ndarray:
        """Score one batch; returns the (n, n_classes) float32 rows in id order."""
        if len(images) != len(ids):
            raise AlignmentError(f"{len(images)} images vs {len(ids)} ids")
        info = self.handshake()
        job = self._next_job
        self._next_job += 1
        try:
            self._send(encode_score_request(job, ids, images))
            msg = self._recv(self.timeout)
            return _validate_scores_reply(msg, job, ids, len(info.class_names))
        except ProtocolError:
            # Leave no half-spoken process behind; the next call restarts.
            self._kill()
            raise

    def _kill(self):
        if self._proc is not None:
            try:
                self._proc.kill()
                self._proc.wait(timeout=5)
            except Exception:
                pass
        self._proc = None
        self._info = None

    def close(self):
        if self._proc is not None and self._proc.poll() is None:
            try:
                self._proc.stdin.close()
                self._proc.wait(timeout=5)
            except Exception:
                self._kill()
                return
        self._proc = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class HttpScorer:
    """POSTs the same JSON message bodies to a single HTTP endpoint."""

    def __init__(self, url: str, *, timeout: float = 60.0, handshake_timeout: float = 30.0):
        self.url = url
        self.timeout = timeout
        self.handshake_timeout = handshake_timeout
        self._info: ScorerInfo | None = None
        self._next_job = 1

    @property
    def info(self) -> ScorerInfo | None:
        return self._info

    def _post(self, body: str, timeout: float) -> dict:
        req = urllib.request.Request(
            self.url,
            data=body.encode("utf-8"),
            headers={"Content-Type": "application/json"},
            method="POST",
        )
        try:
            with urllib.request.urlopen(req, timeout=timeout) as resp:
                text = resp.read().decode("utf-8")
        except (urllib.error.URLError, OSError, TimeoutError) as e:
            raise ProtocolError(f"scorer endpoint unreachable: {e}") from e
        try:
            msg = json.loads(text)
        except json.JSONDecodeError:
            raise ProtocolError(f"non-JSON response from scorer: {_excerpt(text)}") from None
        return msg

    def handshake(self) -> ScorerInfo:
        if self._info is None:
            try:
                msg = self._post(json.dumps({"type": "hello", "protocol": PROTOCOL_VERSION}), self.handshake_timeout)
            except ProtocolError as e:
                raise HandshakeError(f"handshake failed: {e}") from e
            self._info = parse_info(msg)
        return self._info

    def score_batch(self, images: list[ImageBuffer], ids: list[str]) -> np.ndarray:
        if len(images) != len(ids):
            raise AlignmentError(f"{len(images)} images vs {len(ids)} ids")
        info = self.handshake()
        job = self._next_job
        self._next_job += 1
        msg = self._post(encode_score_request(job, ids, images), self.timeout)
        return _validate_scores_reply(msg, job, ids, len(info.class_names))

    def close(self):
        self._info = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def save_scores(matrix: ScoreMatrix, path: str | Path) -> Path:
    """Persist a matrix as CSV (id + one column per class), 9 significant digits."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", *matrix.class_names])
        for i, sid in enumerate(matrix.ids):
            writer.writerow([sid, *[format(float(v), SCORE_DECIMALS) for v in matrix.values[i]]])
    return path


def load_scores(path: str | Path) -> ScoreMatrix:
    """Read a score CSV verbatim (row order preserved, values validated)."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise AlignmentError(f"{path}: empty score file") from None
        if len(header) < 2 or header[0] != "id":
            raise AlignmentError(f"{path}: header must be id,<class...>, got {header}")
        class_names = tuple(header[1:])
        ids: list[str] = []
        rows: list[list[float]] = []
        seen: set[str] = set()
        for row_no, row in enumerate(reader, start=1):
            if len(row) != len(header):
                raise AlignmentError(f"{path} row {row_no}: expected {len(header)} cells, got {len(row)}")
            sid = row[0]
            if sid in seen:
                raise AlignmentError(f"{path} row {row_no}: duplicate id {sid!r}")
            seen.add(sid)
            vals = []
            for cls, cell in zip(class_names, row[1:]):
                try:
                    v = float(cell)
                except ValueError:
                    raise AlignmentError(f"{path} row {row_no}: score for {cls!r} is not a number: {cell!r}") from None
                if not 0.0 <= v <= 1.0:
                    raise AlignmentError(f"{path} row {row_no}: score {v} for {cls!r} outside [0, 1]")
                vals.append(v)
            ids.append(sid)
            rows.append(vals)
    values = np.asarray(rows, dtype=np.float32).reshape(len(ids), len(class_names))
    return ScoreMatrix.build(ids, class_names, values)


def load_precomputed(path: str | Path, ds: Dataset, tag: str = "clean") -> ScoreMatrix:
    """Load a prediction file and align it to the dataset's sample order.

    Extra ids are ignored with a warning; missing ids are an error listing
    them. Class columns must match the dataset exactly, order included.
    """
    raw = load_scores(path)
    if raw.class_names != ds.class_names:
        raise AlignmentError(
            f"{path}: class columns {list(raw.class_names)} do not match dataset classes "
            f"{list(ds.class_names)}"
        )
    index = {sid: i for i, sid in enumerate(raw.ids)}
    missing = [s.id for s in ds.samples if s.id not in index]
    if missing:
        shown = ", ".join(missing[:10])
        more = "" if len(missing) <= 10 else f" (+{len(missing) - 10} more)"
        raise AlignmentError(f"{path}: missing scores for {tag!r}: {shown}{more}")
    extra = len(raw.ids) - len(ds.samples)
    if extra > 0:
        log.warning("%s: %d rows do not match any sample id; ignoring", path, extra)
    order = [index[s.id] for s in ds.samples]
    return ScoreMatrix.build(
        [s.id for s in ds.samples], ds.class_names, raw.values[order]
    )
