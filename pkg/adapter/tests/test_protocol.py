from __future__ import annotations

import subprocess
import sys

import pytest
import torch

from stresskit.conformance import run_conformance


@pytest.fixture(scope="module")
def model_path(tmp_path_factory):
    """Tiny fixed-weight model: flatten an 1x8x8 input, map to 2 logits."""
    torch.manual_seed(0)
    net = torch.nn.Sequential(torch.nn.Flatten(), torch.nn.Linear(64, 2))
    net.eval()
    path = tmp_path_factory.mktemp("model") / "fixed.pt"
    torch.jit.script(net).save(str(path))
    return path


def serve_cmd(model_path, classes="c0,c1", input_spec="1x8x8"):
    return [
        sys.executable,
        "-m",
        "stress_adapter.cli",
        "serve",
        "--model",
        str(model_path),
        "--classes",
        classes,
        "--input",
        input_spec,
    ]


class TestProtocolConformance:
    def test_transcript_suite_passes(self, model_path):
        report = run_conformance(serve_cmd(model_path), timeout=60)
        assert report.ok, report.summary()

    def test_declared_classes_must_match_model_width(self, model_path):
        proc = subprocess.run(
            serve_cmd(model_path, classes="a,b,c"),
            input="",
            capture_output=True,
            text=True,
            timeout=60,
        )
        assert proc.returncode != 0
        assert "3" in proc.stderr and "classes" in proc.stderr
