import base64
import json
import threading
import time
import urllib.error

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clipscribe.captioner import (
    DEFAULT_LEXICON,
    BackendSpec,
    Caption,
    CaptionCache,
    HttpCaptionBackend,
    Lexicon,
    ProceduralMockBackend,
    ScriptedMockBackend,
    assemble_document,
    build_backend,
    caption_keyframes,
    fnv1a_64,
    procedural_caption,
    signature_fingerprint,
)
from clipscribe.errors import (
    BackendUnreachable,
    BadResponse,
    ConfigError,
    EmptyCaption,
    EmptyCaptionList,
    EmptyLexicon,
    ManifestMiss,
)
from clipscribe.keyframes import FrameSignature, frame_signature


def fnv1a_reference(data: bytes) -> int:
    """Independent textbook FNV-1a 64 implementation."""
    h = 14695981039346656037
    for byte in data:
        h = ((h ^ byte) * 1099511628211) % (1 << 64)
    return h


def make_keyframe(index=0, luma=None, width=2, height=2):
    from clipscribe.keyframes import png_encode_gray

    luma = luma if luma is not None else bytes([index % 256] * (width * height))
    return __import__("clipscribe.keyframes", fromlist=["Keyframe"]).Keyframe(
        frame_index=index,
        timestamp_ms=index * 40,
        signature=frame_signature(luma, 64),
        image_payload=png_encode_gray(width, height, luma),
        distance_from_previous_keyframe=0.0,
        width=width,
        height=height,
    )


class RecordingTransport:
    """Scripted transport: each entry is a (status, bytes) pair or an exception."""

    def __init__(self, script):
        self.script = list(script)
        self.calls = []
        self._lock = threading.Lock()

    def __call__(self, url, body, timeout_ms):
        with self._lock:
            self.calls.append((url, body, timeout_ms))
            action = self.script.pop(0) if len(self.script) > 1 else self.script[0]
        if isinstance(action, Exception):
            raise action
        return action


def ok_response(caption, score=None):
    payload = {"caption": caption}
    if score is not None:
        payload["score"] = score
    return (200, json.dumps(payload).encode())


class TestFnv1a:
    def test_known_vectors(self):
        assert fnv1a_64(b"") == 0xCBF29CE484222325
        assert fnv1a_64(b"a") == 0xAF63DC4C8601EC8C
        assert fnv1a_64(b"hello") == 0xA430D84680AABD0B

    def test_matches_reference(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            data = rng.integers(0, 256, int(rng.integers(0, 64)), dtype=np.uint8).tobytes()
            assert fnv1a_64(data) == fnv1a_reference(data)


class TestProceduralCaption:
    def test_fingerprint_quantization(self):
        sig = FrameSignature(np.array([0.5, 0.25, 0.25]))
        assert signature_fingerprint(sig) == "0.500:0.250:0.250"

    def test_hash_zero_picks_first_entries(self, monkeypatch):
        monkeypatch.setattr("clipscribe.captioner.fnv1a_64", lambda data: 0)
        sig = FrameSignature(np.array([1.0]))
        lex = DEFAULT_LEXICON
        assert procedural_caption(sig, lex) == (
            f"a {lex.subjects[0]} {lex.verbs[0]} a {lex.objects[0]} in a {lex.scenes[0]}."
        )

    def test_deterministic(self):
        sig = frame_signature(bytes(range(200)), 64)
        assert procedural_caption(sig) == procedural_caption(sig)

    def test_mixed_radix_against_hash_oracle(self):
        # independent recomputation: reference hash + successive divmod
        rng = np.random.default_rng(12)
        lex = DEFAULT_LEXICON
        for _ in range(20):
            plane = rng.integers(0, 256, 100, dtype=np.uint8).tobytes()
            sig = frame_signature(plane, 16)
            h = fnv1a_reference(signature_fingerprint(sig).encode())
            h, s = divmod(h, len(lex.subjects))[0], lex.subjects[h % len(lex.subjects)]
            h, v = divmod(h, len(lex.verbs))[0], lex.verbs[h % len(lex.verbs)]
            h, o = divmod(h, len(lex.objects))[0], lex.objects[h % len(lex.objects)]
            sc = lex.scenes[h % len(lex.scenes)]
            assert procedural_caption(sig, lex) == f"a {s} {v} a {o} in a {sc}."

    def test_one_bin_shift_changes_fingerprint(self):
        a = FrameSignature(np.array([0.5, 0.5]))
        b = FrameSignature(np.array([0.499, 0.501]))
        assert signature_fingerprint(a) != signature_fingerprint(b)

    def test_empty_lexicon(self):
        with pytest.raises(EmptyLexicon):
            Lexicon(subjects=(), verbs=("v",), objects=("o",), scenes=("s",))


class TestScriptedBackend:
    def test_lookup(self):
        backend = ScriptedMockBackend({"0": "a man rides a horse."})
        cap = backend.caption(make_keyframe(0))
        assert cap.text == "a man rides a horse."
        assert cap.backend_id == "scripted_mock"
        assert cap.score is None

    def test_manifest_miss(self):
        backend = ScriptedMockBackend({"0": "x."})
        with pytest.raises(ManifestMiss):
            backend.caption(make_keyframe(5))

    def test_blank_caption(self):
        backend = ScriptedMockBackend({"0": "   "})
        with pytest.raises(EmptyCaption):
            backend.caption(make_keyframe(0))

    def test_manifest_from_file(self, tmp_path):
        path = tmp_path / "manifest.json"
        path.write_text(json.dumps({"3": "a dog runs."}), encoding="utf-8")
        backend = ScriptedMockBackend(path)
        assert backend.caption(make_keyframe(3)).text == "a dog runs."

    @pytest.mark.parametrize("bad", [["a"], {"x": "y"}, {"0": 3}, "nope"])
    def test_bad_manifest_shape(self, bad):
        with pytest.raises(ConfigError):
            ScriptedMockBackend(bad)


class TestBackendSpecValidation:
    def test_http_requires_endpoint(self):
        with pytest.raises(ConfigError):
            BackendSpec(kind="http")

    def test_scripted_requires_manifest(self):
        with pytest.raises(ConfigError):
            BackendSpec(kind="scripted_mock")

    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            BackendSpec(kind="neural")


class TestHttpBackend:
    def spec(self, **kwargs):
        defaults = dict(kind="http", endpoint="http://backend.test", max_retries=3)
        defaults.update(kwargs)
        return BackendSpec(**defaults)

    def test_wire_format_against_real_server(self, backend_server):
        server = backend_server(lambda path, req: (200, {"caption": f"frame {req['id']}.", "score": 0.75}))
        backend = HttpCaptionBackend(BackendSpec(kind="http", endpoint=server.endpoint))
        kf = make_keyframe(7, width=3, height=2, luma=bytes(6))
        cap = backend.caption(kf)
        assert cap.text == "frame 7."
        assert cap.score == 0.75
        assert cap.backend_id == f"http:{server.endpoint}"
        path, request = server.requests[0]
        assert path == "/v1/caption"
        assert request["id"] == "7"
        assert request["width"] == 3
        assert request["height"] == 2
        assert request["format"] == "png-base64"
        assert base64.b64decode(request["data"]) == kf.image_payload

    def test_non_200_is_bad_response_even_via_real_server(self, backend_server):
        server = backend_server(lambda path, req: (500, {"error": "boom"}))
        backend = HttpCaptionBackend(BackendSpec(kind="http", endpoint=server.endpoint))
        with pytest.raises(BadResponse):
            backend.caption(make_keyframe(0))
        assert len(server.requests) == 1  # bad status is final, not retried

    def test_retries_with_exponential_backoff(self):
        transport = RecordingTransport(
            [urllib.error.URLError("down"), urllib.error.URLError("down"), ok_response("ok.")]
        )
        sleeps = []
        backend = HttpCaptionBackend(self.spec(), transport=transport, sleep=sleeps.append)
        assert backend.caption(make_keyframe(0)).text == "ok."
        assert len(transport.calls) == 3
        assert sleeps == [0.25, 0.5]

    def test_unreachable_after_retries(self):
        transport = RecordingTransport([urllib.error.URLError("down")])
        sleeps = []
        backend = HttpCaptionBackend(self.spec(max_retries=3), transport=transport, sleep=sleeps.append)
        with pytest.raises(BackendUnreachable):
            backend.caption(make_keyframe(0))
        assert len(transport.calls) == 4  # initial attempt + 3 retries
        assert sleeps == [0.25, 0.5, 1.0]

    @pytest.mark.parametrize(
        "response",
        [
            (200, b"not json"),
            (200, b'["a"]'),
            (200, b'{"no_caption": "x"}'),
            (200, b'{"caption": 42}'),
            (200, b'{"caption": "x.", "score": "high"}'),
            (200, b'{"caption": "x.", "score": 1.5}'),
            (404, b'{"caption": "x."}'),
        ],
    )
    def test_bad_responses(self, response):
        backend = HttpCaptionBackend(self.spec(), transport=RecordingTransport([response]))
        with pytest.raises(BadResponse):
            backend.caption(make_keyframe(0))

    def test_blank_caption_from_backend(self):
        backend = HttpCaptionBackend(self.spec(), transport=RecordingTransport([ok_response("  ")]))
        with pytest.raises(EmptyCaption):
            backend.caption(make_keyframe(0))

    def test_cache_coherence_same_payload_one_call(self):
        transport = RecordingTransport([ok_response("cached.")])
        backend = HttpCaptionBackend(self.spec(), transport=transport)
        kf = make_keyframe(0)
        twin = make_keyframe(9, luma=bytes([0] * 4))  # same payload, different index
        assert kf.image_payload == twin.image_payload
        first = backend.caption(kf)
        second = backend.caption(twin)
        assert len(transport.calls) == 1
        assert (first.text, second.text) == ("cached.", "cached.")
        assert second.frame_index == 9

    def test_cache_dir_persists_across_instances(self, tmp_path):
        transport = RecordingTransport([ok_response("persisted.", 0.5)])
        spec = self.spec()
        kf = make_keyframe(0)
        backend = HttpCaptionBackend(spec, transport=transport, cache=CaptionCache(tmp_path))
        backend.caption(kf)
        assert len(transport.calls) == 1

        fresh_transport = RecordingTransport([ok_response("should not be used.")])
        fresh = HttpCaptionBackend(spec, transport=fresh_transport, cache=CaptionCache(tmp_path))
        cap = fresh.caption(kf)
        assert cap.text == "persisted."
        assert cap.score == 0.5
        assert fresh_transport.calls == []

    def test_cache_key_distinguishes_backends(self):
        kf = make_keyframe(0)
        assert CaptionCache.key("http:a", kf.image_payload) != CaptionCache.key("http:b", kf.image_payload)


class TestCaptionBatches:
    def test_order_preserved_under_parallel_jitter(self):
        lock = threading.Lock()
        arrival = []

        def jittery(url, body, timeout_ms):
            request = json.loads(body)
            idx = int(request["id"])
            time.sleep(0.002 * ((idx * 7) % 5))
            with lock:
                arrival.append(idx)
            return 200, json.dumps({"caption": f"frame {idx} scene."}).encode()

        keyframes = [make_keyframe(i, luma=bytes([i] * 4)) for i in range(8)]
        backend = HttpCaptionBackend(
            BackendSpec(kind="http", endpoint="http://backend.test"), transport=jittery
        )
        captions = caption_keyframes(backend, keyframes, parallelism=4)
        assert [c.frame_index for c in captions] == list(range(8))
        assert [c.text for c in captions] == [f"frame {i} scene." for i in range(8)]
        assert sorted(arrival) == list(range(8))

    def test_batch_dedupes_identical_payloads(self):
        transport = RecordingTransport([ok_response("same scene.")])
        backend = HttpCaptionBackend(
            BackendSpec(kind="http", endpoint="http://backend.test"), transport=transport
        )
        keyframes = [make_keyframe(i, luma=bytes(4)) for i in range(5)]
        captions = caption_keyframes(backend, keyframes, parallelism=4)
        assert len(transport.calls) == 1
        assert [c.frame_index for c in captions] == list(range(5))
        assert all(c.text == "same scene." for c in captions)

    def test_scripted_batch_is_not_deduped_by_payload(self):
        # identical frames must still get their own manifest entries
        backend = ScriptedMockBackend({"0": "first.", "1": "second."})
        keyframes = [make_keyframe(0, luma=bytes(4)), make_keyframe(1, luma=bytes(4))]
        captions = caption_keyframes(backend, keyframes, parallelism=2)
        assert [c.text for c in captions] == ["first.", "second."]

    def test_procedural_batch_deterministic(self):
        backend = ProceduralMockBackend()
        keyframes = [make_keyframe(i) for i in range(6)]
        first = caption_keyframes(backend, keyframes, parallelism=3)
        second = caption_keyframes(backend, keyframes, parallelism=1)
        assert [(c.frame_index, c.text) for c in first] == [(c.frame_index, c.text) for c in second]

    def test_build_backend_dispatch(self, tmp_path):
        manifest = tmp_path / "m.json"
        manifest.write_text('{"0": "x."}', encoding="utf-8")
        assert isinstance(build_backend(BackendSpec(kind="procedural_mock")), ProceduralMockBackend)
        assert isinstance(
            build_backend(BackendSpec(kind="scripted_mock", manifest=manifest)), ScriptedMockBackend
        )
        assert isinstance(
            build_backend(BackendSpec(kind="http", endpoint="http://x")), HttpCaptionBackend
        )


class TestAssembleDocument:
    def caption(self, index, text):
        return Caption(frame_index=index, text=text, score=None, backend_id="scripted_mock")

    def test_terminal_period_appended(self):
        doc = assemble_document([self.caption(0, "a dog runs")])
        assert doc.text == "a dog runs."

    def test_duplicates_retained(self):
        doc = assemble_document([self.caption(0, "a dog runs."), self.caption(1, "a dog runs.")])
        assert doc.text == "a dog runs. a dog runs."
        assert len(doc.provenance) == 2

    def test_existing_punctuation_kept(self):
        doc = assemble_document([self.caption(0, "x!"), self.caption(1, "y")])
        assert doc.text == "x! y."

    def test_question_mark_kept(self):
        doc = assemble_document([self.caption(0, "what?"), self.caption(1, "yes.")])
        assert doc.text == "what? yes."

    def test_whitespace_trimmed(self):
        doc = assemble_document([self.caption(0, "  padded  ")])
        assert doc.text == "padded."

    def test_provenance_reconstructs_captions(self):
        caps = [self.caption(i, t) for i, t in enumerate(["a man", "a man", "x!", " padded "])]
        doc = assemble_document(caps)
        normalized = []
        for cap in caps:
            t = cap.text.strip()
            normalized.append(t if t[-1] in ".!?" else t + ".")
        for (frame_index, (start, end)), expected in zip(doc.provenance, normalized):
            assert doc.text[start:end] == expected
        # spans are ordered and non-overlapping
        spans = [span for _, span in doc.provenance]
        assert all(a[1] <= b[0] for a, b in zip(spans, spans[1:]))

    def test_empty_list(self):
        with pytest.raises(EmptyCaptionList):
            assemble_document([])

    def test_unsorted_rejected(self):
        with pytest.raises(ValueError):
            assemble_document([self.caption(2, "b"), self.caption(1, "a")])

    @settings(max_examples=60, deadline=None)
    @given(
        texts=st.lists(
            st.text(
                alphabet=st.characters(whitelist_categories=["Lu", "Ll", "Nd", "Zs"], max_codepoint=0x24F),
                min_size=1,
                max_size=30,
            ).filter(lambda t: t.strip()),
            min_size=1,
            max_size=8,
        )
    )
    def test_reconstruction_property(self, texts):
        caps = [self.caption(i, t) for i, t in enumerate(texts)]
        doc = assemble_document(caps)
        assert len(doc.provenance) == len(caps)
        for cap, (frame_index, (start, end)) in zip(caps, doc.provenance):
            expected = cap.text.strip()
            if expected[-1] not in ".!?":
                expected += "."
            assert frame_index == cap.frame_index
            assert doc.text[start:end] == expected
