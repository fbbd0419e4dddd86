from __future__ import annotations

import base64
import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import numpy as np
import pytest

from stresskit.errors import AlignmentError, HandshakeError, ProtocolError, ScorerJobError
from stresskit.harness import check_scorer_compatible
from stresskit.image import ImageBuffer, pack_nchw
from stresskit.scorer import (
    HttpScorer,
    ScoreMatrix,
    SubprocessScorer,
    decode_image_payload,
    encode_score_request,
    load_precomputed,
    load_scores,
    parse_info,
    save_scores,
)

from helpers import random_image, stub_cmd, write_tiny_dataset


def batch(rng, n, size=8, channels=1):
    images = [random_image(rng, size, size, channels) for _ in range(n)]
    ids = [f"im{i}" for i in range(n)]
    return images, ids


class TestWireFormat:
    def test_pack_nchw_layout(self, rng):
        img = random_image(rng, 3, 4, 3)
        packed = pack_nchw([img])
        assert packed.shape == (1, 3, 3, 4)
        assert packed[0, 2, 1, 3] == img.pixels[1, 3, 2]

    def test_request_round_trip(self, rng):
        images, ids = batch(rng, 3)
        line = encode_score_request(7, ids, images)
        msg = json.loads(line)
        assert msg["type"] == "score" and msg["job"] == 7 and msg["ids"] == ids
        arr = decode_image_payload(msg)
        assert arr.shape == (3, 1, 8, 8)
        assert np.array_equal(arr, pack_nchw(images))

    def test_payload_length_checked(self, rng):
        images, ids = batch(rng, 2)
        msg = json.loads(encode_score_request(1, ids, images))
        msg["shape"] = [3, 1, 8, 8]
        with pytest.raises(ProtocolError, match="floats"):
            decode_image_payload(msg)

    def test_parse_info_rejects_junk(self):
        with pytest.raises(HandshakeError):
            parse_info({"type": "info", "classes": [], "input": {}, "identity": "x"})
        with pytest.raises(HandshakeError):
            parse_info({"type": "nope"})


class TestSubprocessScorer:
    def test_constant_stub_scores_everything_half(self, rng):
        images, ids = batch(rng, 5)
        with SubprocessScorer(stub_cmd("constant", "--value", "0.5", "--classes", "c0,c1", "--input", "1x8x8")) as sc:
            info = sc.handshake()
            assert info.class_names == ("c0", "c1")
            assert info.input_shape == (1, 8, 8)
            rows = sc.score_batch(images, ids)
        assert rows.shape == (5, 2)
        assert np.all(rows == 0.5)

    def test_mean_stub_matches_oracle(self, rng):
        images, ids = batch(rng, 4)
        with SubprocessScorer(stub_cmd("mean", "--classes", "c0", "--input", "1x8x8")) as sc:
            sc.handshake()
            rows = sc.score_batch(images, ids)
        expected = [float(np.mean(im.pixels)) for im in images]  # independent of packing
        assert rows[:, 0] == pytest.approx(expected, abs=1e-6)

    def test_n_in_n_out_and_determinism(self, rng):
        images, ids = batch(rng, 6)
        with SubprocessScorer(stub_cmd("mean", "--classes", "a,b,c", "--input", "1x8x8")) as sc:
            sc.handshake()
            first = sc.score_batch(images, ids)
            second = sc.score_batch(images, ids)
        assert first.shape == (6, 3)
        assert np.array_equal(first, second)

    def test_shuffle_unshuffle_alignment(self, rng):
        images, ids = batch(rng, 8)
        perm = rng.permutation(8)
        with SubprocessScorer(stub_cmd("mean", "--classes", "c", "--input", "1x8x8")) as sc:
            sc.handshake()
            direct = sc.score_batch(images, ids)
            shuffled = sc.score_batch([images[i] for i in perm], [ids[i] for i in perm])
        unshuffled = np.empty_like(shuffled)
        unshuffled[perm] = shuffled
        assert np.array_equal(direct, unshuffled)

    def test_handshake_timeout(self):
        sc = SubprocessScorer(stub_cmd("mute"), handshake_timeout=0.5)
        with pytest.raises(HandshakeError, match="no response"):
            sc.handshake()
        sc.close()

    def test_malformed_hello(self):
        sc = SubprocessScorer(stub_cmd("badhello"), handshake_timeout=5)
        with pytest.raises(HandshakeError):
            sc.handshake()
        sc.close()

    def test_flaky_stub_recovers_after_restart(self, rng, tmp_path):
        images, ids = batch(rng, 3)
        marker = tmp_path / "crashed"
        sc = SubprocessScorer(stub_cmd("flaky", "--marker", str(marker), "--classes", "c", "--input", "1x8x8"))
        sc.handshake()
        with pytest.raises(ProtocolError):
            sc.score_batch(images, ids)
        rows = sc.score_batch(images, ids)  # transparent restart + re-handshake
        assert np.all(rows == 0.5)
        sc.close()

    def test_class_mismatch_is_fatal_and_lists_diff(self, tmp_path, rng):
        ds, _ = write_tiny_dataset(tmp_path)
        with SubprocessScorer(stub_cmd("constant", "--classes", "c0,extra", "--input", "1x8x8")) as sc:
            info = sc.handshake()
            with pytest.raises(HandshakeError) as err:
                check_scorer_compatible(info, ds)
        assert "c1" in str(err.value) and "extra" in str(err.value)


class _Responder(BaseHTTPRequestHandler):
    def do_POST(self):
        msg = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        if msg["type"] == "hello":
            reply = {
                "type": "info",
                "protocol": 1,
                "classes": ["h0", "h1"],
                "input": {"channels": 1, "height": 8, "width": 8},
                "identity": "http-test",
            }
        elif msg["type"] == "score":
            shape = msg["shape"]
            arr = np.frombuffer(base64.b64decode(msg["data"]), dtype="<f4").reshape(shape)
            means = arr.reshape(shape[0], -1).mean(axis=1)
            reply = {"type": "scores", "job": msg["job"], "values": [[float(m)] * 2 for m in means]}
        else:
            reply = {"type": "error", "job": None, "message": "bad type"}
        body = json.dumps(reply).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, *args):
        pass


@pytest.fixture
def http_scorer_url():
    server = HTTPServer(("127.0.0.1", 0), _Responder)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_port}/"
    server.shutdown()


class TestHttpScorer:
    def test_same_bodies_over_http(self, rng, http_scorer_url):
        images, ids = batch(rng, 3)
        with HttpScorer(http_scorer_url) as sc:
            info = sc.handshake()
            assert info.identity == "http-test"
            rows = sc.score_batch(images, ids)
        expected = [float(np.mean(im.pixels)) for im in images]
        assert rows[:, 0] == pytest.approx(expected, abs=1e-6)

    def test_unreachable_endpoint(self):
        sc = HttpScorer("http://127.0.0.1:9/", handshake_timeout=0.5)
        with pytest.raises(HandshakeError):
            sc.handshake()


class TestScoreFiles:
    def test_save_load_round_trip_bit_exact(self, tmp_path, rng):
        values = rng.random((9, 3), dtype=np.float32)
        m = ScoreMatrix.build([f"s{i}" for i in range(9)], ("a", "b", "c"), values)
        save_scores(m, tmp_path / "scores.csv")
        again = load_scores(tmp_path / "scores.csv")
        assert again.ids == m.ids
        assert again.class_names == m.class_names
        assert np.array_equal(again.values, m.values)

    def test_precomputed_aligned(self, tmp_path):
        ds, _ = write_tiny_dataset(tmp_path, n=4)
        lines = ["id,c0,c1"] + [f"x{i},0.{i + 1},0.2" for i in reversed(range(4))]
        p = tmp_path / "pred.csv"
        p.write_text("\n".join(lines) + "\n")
        m = load_precomputed(p, ds)
        assert m.ids == tuple(f"x{i}" for i in range(4))
        assert m.values[0, 0] == np.float32(0.1)

    def test_precomputed_missing_id_names_it(self, tmp_path):
        ds, _ = write_tiny_dataset(tmp_path, n=3)
        p = tmp_path / "pred.csv"
        p.write_text("id,c0,c1\nx0,0.1,0.2\nx1,0.3,0.4\n")
        with pytest.raises(AlignmentError, match="x2"):
            load_precomputed(p, ds)

    def test_precomputed_extra_rows_warn_but_load(self, tmp_path, caplog):
        ds, _ = write_tiny_dataset(tmp_path, n=2)
        p = tmp_path / "pred.csv"
        p.write_text("id,c0,c1\nx0,0.1,0.2\nx1,0.3,0.4\nghost,0.5,0.5\n")
        with caplog.at_level("WARNING"):
            m = load_precomputed(p, ds)
        assert len(m.ids) == 2
        assert any("ignoring" in r.message for r in caplog.records)

    def test_out_of_range_score_rejected(self, tmp_path):
        ds, _ = write_tiny_dataset(tmp_path, n=2)
        p = tmp_path / "pred.csv"
        p.write_text("id,c0,c1\nx0,1.2,0.2\nx1,0.3,0.4\n")
        with pytest.raises(AlignmentError, match="1.2"):
            load_precomputed(p, ds)

    def test_class_mismatch_rejected(self, tmp_path):
        ds, _ = write_tiny_dataset(tmp_path, n=2)
        p = tmp_path / "pred.csv"
        p.write_text("id,other\nx0,0.1\nx1,0.2\n")
        with pytest.raises(AlignmentError, match="class columns"):
            load_precomputed(p, ds)

    def test_matrix_range_validated(self):
        with pytest.raises(ScorerJobError):
            ScoreMatrix.build(["a"], ("c",), np.array([[1.5]], dtype=np.float32))
