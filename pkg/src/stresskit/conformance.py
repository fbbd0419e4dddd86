"""Scorer protocol conformance: replay a recorded transcript of harness
messages against a scorer command and check every reply.

The bundled transcript targets a scorer that declares a 1x8x8 input; it
exercises the hello/info handshake, n-in/n-out scoring for several batch
sizes, bitwise determinism on a repeated batch, and survival after
malformed input. Any scorer implementation that passes here can be driven
by the harness.
"""

from __future__ import annotations

import json
import queue
import subprocess
import threading
from dataclasses import dataclass, field
from importlib import resources

from .scorer import parse_info

__all__ = ["StepResult", "ConformanceReport", "load_transcript", "run_conformance"]


@dataclass(frozen=True)
class StepResult:
    index: int
    description: str
    ok: bool
    detail: str = ""


@dataclass
class ConformanceReport:
    steps: list[StepResult] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(s.ok for s in self.steps)

    def summary(self) -> str:
        lines = [
            f"[{'PASS' if s.ok else 'FAIL'}] step {s.index}: {s.description}"
            + (f" -- {s.detail}" if s.detail and not s.ok else "")
            for s in self.steps
        ]
        lines.append(f"conformance: {'PASS' if self.ok else 'FAIL'}")
        return "\n".join(lines)


def load_transcript(name: str = "basic") -> dict:
    data = resources.files("stresskit").joinpath(f"data/conformance/{name}.json")
    return json.loads(data.read_text(encoding="utf-8"))


class _Transport:
    def __init__(self, command: list[str]):
        self.proc = subprocess.Popen(
            command,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=None,
            text=True,
            bufsize=1,
        )
        self.lines: queue.Queue = queue.Queue()

        def pump():
            for line in self.proc.stdout:
                self.lines.put(line)
            self.lines.put(None)

        threading.Thread(target=pump, daemon=True).start()

    def send_raw(self, text: str):
        self.proc.stdin.write(text + "\n")
        self.proc.stdin.flush()

    def recv(self, timeout: float) -> dict | None:
        try:
            line = self.lines.get(timeout=timeout)
        except queue.Empty:
            return None
        if line is None:
            return None
        try:
            msg = json.loads(line)
        except json.JSONDecodeError:
            return {"~raw": line.rstrip()}
        return msg if isinstance(msg, dict) else {"~raw": line.rstrip()}

    def close(self):
        try:
            self.proc.stdin.close()
            self.proc.wait(timeout=5)
        except Exception:
            self.proc.kill()


def _check_scores(msg: dict, step: dict, classes: list[str], seen_jobs: dict) -> str:
    if msg.get("type") != "scores":
        return f"expected scores, got {json.dumps(msg)[:160]}"
    job = step["send"]["job"]
    if msg.get("job") != job:
        return f"job mismatch: sent {job}, got {msg.get('job')!r}"
    values = msg.get("values")
    n = len(step["send"]["ids"])
    if not isinstance(values, list) or len(values) != n:
        return f"expected {n} rows, got {len(values) if isinstance(values, list) else values!r}"
    for i, row in enumerate(values):
        if not isinstance(row, list) or len(row) != len(classes):
            return f"row {i}: expected {len(classes)} entries"
        for v in row:
            if not isinstance(v, (int, float)) or isinstance(v, bool) or not 0.0 <= v <= 1.0:
                return f"row {i}: score {v!r} outside [0, 1]"
    seen_jobs[job] = values
    match = step.get("match_job")
    if match is not None:
        if seen_jobs.get(match) != values:
            return f"values differ from job {match} on identical input (not deterministic)"
    return ""


def run_conformance(command: list[str], transcript: dict | None = None, timeout: float = 30.0) -> ConformanceReport:
    """Drive the scorer command through the transcript; report per-step results."""
    transcript = transcript if transcript is not None else load_transcript()
    report = ConformanceReport()
    transport = _Transport(command)
    classes: list[str] = []
    seen_jobs: dict = {}
    required = transcript.get("requires_input")
    try:
        for index, step in enumerate(transcript["steps"]):
            expect = step["expect"]
            description = step.get("describe", f"expect {expect}")
            if "send_raw" in step:
                transport.send_raw(step["send_raw"])
            else:
                transport.send_raw(json.dumps(step["send"]))
            msg = transport.recv(timeout)
            if msg is None:
                report.steps.append(
                    StepResult(index, description, False, "no reply (timeout or process exit)")
                )
                break
            if expect == "info":
                try:
                    info = parse_info(msg)
                except Exception as e:
                    report.steps.append(StepResult(index, description, False, str(e)))
                    continue
                classes = list(info.class_names)
                if required is not None and (
                    info.channels,
                    info.height,
                    info.width,
                ) != (required["channels"], required["height"], required["width"]):
                    report.steps.append(
                        StepResult(
                            index,
                            description,
                            False,
                            f"transcript requires input {required}, scorer declares "
                            f"{info.channels}x{info.height}x{info.width}",
                        )
                    )
                    continue
                report.steps.append(StepResult(index, description, True))
            elif expect == "scores":
                detail = _check_scores(msg, step, classes, seen_jobs)
                report.steps.append(StepResult(index, description, not detail, detail))
            elif expect == "error":
                ok = msg.get("type") == "error"
                report.steps.append(
                    StepResult(index, description, ok, "" if ok else f"got {json.dumps(msg)[:160]}")
                )
            else:
                report.steps.append(StepResult(index, description, False, f"bad transcript expect {expect!r}"))
    finally:
        transport.close()
    return report
