"""Stub scorers speaking the NDJSON stdio protocol, for tests and dry runs.

Run as ``python -m stresskit.stubs <mode> ...``. All stubs are pure
per-sample functions of (id, pixels), so their output is independent of
batch composition and identical across repeated runs.

Modes:
  constant  fixed score for every sample and class
  mean      each class score equals the image's mean pixel value
  degrade   score = (1-w)*clean_score + w*target where w follows the config's
            distortion-to-weight curve and the distortion is the mean
            absolute difference against the clean image on disk
  flaky     exits mid-job on the first score request, works after restart
  mute      never answers (handshake-timeout exercises)
  badhello  answers the handshake with a non-JSON line
"""

from __future__ import annotations

import argparse
import base64
import json
import sys
from pathlib import Path

import numpy as np
from PIL import Image


def _write(msg: dict):
    sys.stdout.write(json.dumps(msg) + "\n")
    sys.stdout.flush()


def _info(classes: list[str], channels: int, height: int, width: int, identity: str) -> dict:
    return {
        "type": "info",
        "protocol": 1,
        "classes": classes,
        "input": {"channels": channels, "height": height, "width": width},
        "identity": identity,
    }


def _decode_batch(msg: dict) -> np.ndarray:
    shape = msg["shape"]
    raw = base64.b64decode(msg["data"])
    return np.frombuffer(raw, dtype="<f4").reshape(shape)


def serve(info: dict, score_fn):
    """Protocol loop: reply to hello/score, report errors without dying."""
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        try:
            msg = json.loads(line)
        except json.JSONDecodeError:
            _write({"type": "error", "job": None, "message": "invalid JSON"})
            continue
        mtype = msg.get("type")
        if mtype == "hello":
            _write(info)
        elif mtype == "score":
            try:
                values = score_fn(msg)
                _write({"type": "scores", "job": msg.get("job"), "values": values})
            except Exception as e:  # noqa: BLE001 - stub must stay alive
                _write({"type": "error", "job": msg.get("job"), "message": str(e)})
        else:
            _write({"type": "error", "job": msg.get("job"), "message": f"unknown type {mtype!r}"})


def _parse_input(text: str) -> tuple[int, int, int]:
    parts = text.split("x")
    if len(parts) != 3:
        raise SystemExit(f"--input must be CxHxW, got {text!r}")
    return int(parts[0]), int(parts[1]), int(parts[2])


def run_constant(args):
    classes = args.classes.split(",")
    c, h, w = _parse_input(args.input)
    identity = args.identity or f"constant-stub(value={args.value})"

    def score(msg):
        return [[args.value] * len(classes) for _ in msg["ids"]]

    serve(_info(classes, c, h, w, identity), score)


def run_mean(args):
    classes = args.classes.split(",")
    c, h, w = _parse_input(args.input)

    def score(msg):
        batch = _decode_batch(msg)
        means = batch.reshape(batch.shape[0], -1).mean(axis=1)
        return [[float(m)] * len(classes) for m in means]

    serve(_info(classes, c, h, w, "mean-stub"), score)


def _make_weight_fn(curve: list[list[float]]):
    """Monotone piecewise-linear distortion-to-weight map; 0 maps to 0 and the
    last segment extends upward so heavier distortion keeps raising the weight."""
    xs = np.asarray([p[0] for p in curve], dtype=np.float64)
    ws = np.asarray([p[1] for p in curve], dtype=np.float64)

    def weight(d: float) -> float:
        if d <= 0.0:
            return 0.0
        if d <= xs[0]:
            return float(ws[0] * d / xs[0])
        if d >= xs[-1]:
            slope = (ws[-1] - ws[-2]) / (xs[-1] - xs[-2])
            return min(0.97, float(ws[-1] + slope * (d - xs[-1])))
        return float(np.interp(d, xs, ws))

    return weight


def run_degrade(args):
    config_path = Path(args.config)
    cfg = json.loads(config_path.read_text(encoding="utf-8"))
    classes = cfg["classes"]
    weight = _make_weight_fn(cfg["weight_curve"])
    scores = {k: np.asarray(v, dtype=np.float64) for k, v in cfg["scores"].items()}
    targets = {k: np.asarray(v, dtype=np.float64) for k, v in cfg["targets"].items()}

    base = config_path.parent
    clean: dict[str, np.ndarray] = {}
    with (base / cfg["manifest"]).open(encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split(",")
        id_col, path_col = header.index("id"), header.index("image_path")
        for line in fh:
            cells = line.rstrip("\n").split(",")
            img = Image.open(base / cells[path_col]).convert("L")
            arr = np.asarray(img, dtype=np.uint8).astype(np.float32) / 255.0
            clean[cells[id_col]] = arr[np.newaxis, :, :]  # (1, H, W)
    first = next(iter(clean.values()))
    c, h, w = first.shape

    def score(msg):
        batch = _decode_batch(msg)
        out = []
        for sid, img in zip(msg["ids"], batch):
            ref = clean[sid]
            if img.shape != ref.shape:
                raise ValueError(f"{sid}: expected shape {ref.shape}, got {img.shape}")
            d = float(np.mean(np.abs(img - ref)))
            wgt = weight(d)
            s = (1.0 - wgt) * scores[sid] + wgt * targets[sid]
            out.append([float(v) for v in np.clip(s, 0.0, 1.0)])
        return out

    serve(_info(classes, c, h, w, cfg.get("identity", "degrade-stub")), score)


def run_flaky(args):
    classes = args.classes.split(",")
    c, h, w = _parse_input(args.input)
    marker = Path(args.marker)

    def score(msg):
        if not marker.exists():
            marker.write_text("crashed once\n", encoding="utf-8")
            sys.exit(3)  # die mid-job; the harness restarts us
        return [[0.5] * len(classes) for _ in msg["ids"]]

    serve(_info(classes, c, h, w, "flaky-stub"), score)


def run_mute(_args):
    for _ in sys.stdin:
        pass


def run_badhello(_args):
    for _ in sys.stdin:
        sys.stdout.write("definitely not json\n")
        sys.stdout.flush()


def main(argv=None):
    parser = argparse.ArgumentParser(prog="stresskit.stubs", description=__doc__)
    sub = parser.add_subparsers(dest="mode", required=True)

    p = sub.add_parser("constant")
    p.add_argument("--value", type=float, default=0.5)
    p.add_argument("--classes", required=True)
    p.add_argument("--input", required=True, help="CxHxW")
    p.add_argument("--identity", default=None)
    p.set_defaults(fn=run_constant)

    p = sub.add_parser("mean")
    p.add_argument("--classes", required=True)
    p.add_argument("--input", required=True)
    p.set_defaults(fn=run_mean)

    p = sub.add_parser("degrade")
    p.add_argument("--config", required=True)
    p.set_defaults(fn=run_degrade)

    p = sub.add_parser("flaky")
    p.add_argument("--marker", required=True)
    p.add_argument("--classes", required=True)
    p.add_argument("--input", required=True)
    p.set_defaults(fn=run_flaky)

    p = sub.add_parser("mute")
    p.set_defaults(fn=run_mute)

    p = sub.add_parser("badhello")
    p.set_defaults(fn=run_badhello)

    args = parser.parse_args(argv)
    args.fn(args)


if __name__ == "__main__":
    main()
