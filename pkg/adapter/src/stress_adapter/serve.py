"""Protocol server: stdin/stdout newline-delimited JSON around a TorchScript
model.

Messages in: ``{"type":"hello","protocol":1}`` and
``{"type":"score","job":J,"ids":[...],"shape":[n,c,h,w],"dtype":"f32le",
"data":"<base64 little-endian float32, NCHW>"}``.
Messages out: ``info`` (classes, input spec, identity) and ``scores`` with
one row of per-class sigmoid probabilities per id. Malformed input gets an
``error`` reply; the process stays alive.
"""

from __future__ import annotations

import base64
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch


@dataclass(frozen=True)
class AdapterConfig:
    model_path: Path
    class_names: tuple[str, ...]
    channels: int
    height: int
    width: int
    identity: str
    preprocessing: str = "float32 pixels in [0,1], NCHW; sigmoid over model outputs"


def load_model(config: AdapterConfig) -> torch.jit.ScriptModule:
    """Load the TorchScript model and check its output width against the
    declared class list with a dummy forward pass."""
    model = torch.jit.load(str(config.model_path), map_location="cpu")
    model.eval()
    with torch.no_grad():
        probe = model(torch.zeros(1, config.channels, config.height, config.width))
    if probe.ndim != 2 or probe.shape[1] != len(config.class_names):
        raise SystemExit(
            f"model outputs shape {tuple(probe.shape)}, but {len(config.class_names)} "
            f"classes are declared"
        )
    return model


def _info_message(config: AdapterConfig) -> dict:
    return {
        "type": "info",
        "protocol": 1,
        "classes": list(config.class_names),
        "input": {
            "channels": config.channels,
            "height": config.height,
            "width": config.width,
        },
        "identity": config.identity,
        "preprocessing": config.preprocessing,
    }


def _decode_batch(msg: dict, config: AdapterConfig) -> torch.Tensor:
    shape = msg["shape"]
    if not isinstance(shape, list) or len(shape) != 4:
        raise ValueError("score.shape must be [n, c, h, w]")
    if msg.get("dtype") != "f32le":
        raise ValueError(f"unsupported dtype {msg.get('dtype')!r}")
    n, c, h, w = shape
    if (c, h, w) != (config.channels, config.height, config.width):
        raise ValueError(
            f"batch shape {c}x{h}x{w} does not match declared input "
            f"{config.channels}x{config.height}x{config.width}"
        )
    if not isinstance(msg.get("ids"), list) or len(msg["ids"]) != n:
        raise ValueError("ids must list one id per batch row")
    raw = base64.b64decode(msg["data"])
    arr = np.frombuffer(raw, dtype="<f4")
    if arr.size != n * c * h * w:
        raise ValueError(f"payload carries {arr.size} floats, shape wants {n * c * h * w}")
    return torch.from_numpy(arr.reshape(n, c, h, w).copy())


def _write(msg: dict):
    sys.stdout.write(json.dumps(msg) + "\n")
    sys.stdout.flush()


def serve(config: AdapterConfig):
    """Answer hello/score messages until stdin closes."""
    torch.set_num_threads(1)  # bit-stable reductions across runs
    model = load_model(config)
    info = _info_message(config)
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        try:
            msg = json.loads(line)
            if not isinstance(msg, dict):
                raise ValueError("not a JSON object")
        except (json.JSONDecodeError, ValueError):
            _write({"type": "error", "job": None, "message": "invalid JSON message"})
            continue
        mtype = msg.get("type")
        if mtype == "hello":
            _write(info)
        elif mtype == "score":
            try:
                batch = _decode_batch(msg, config)
                with torch.no_grad():
                    probs = torch.sigmoid(model(batch))
                values = probs.clamp(0.0, 1.0).numpy().astype(np.float64).tolist()
                _write({"type": "scores", "job": msg.get("job"), "values": values})
            except Exception as e:  # noqa: BLE001 - protocol requires staying alive
                _write({"type": "error", "job": msg.get("job"), "message": str(e)})
        else:
            _write({"type": "error", "job": msg.get("job"), "message": f"unknown type {mtype!r}"})
