"""Black-box JSON/HTTP endpoint for a (possibly defended) SID model, and the matching attack client."""

from __future__ import annotations

import dataclasses
import json
import threading
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from .attack import AttackModel, metrics_from_features, response_feature
from .corpus import N_SAMPLES, SAMPLE_RATE, AudioClip
from .defenses import KeyedSidModel, load_served_model
from .nncore import FORMAT_VERSION
from .obfuscation import ObfuscatedOutput, ObfuscationConfig, obfuscate


class RemoteQueryError(RuntimeError):
    """The endpoint could not be reached or returned an error; no metrics exist."""


@dataclass(frozen=True)
class ServeConfig:
    checkpoint: str
    obfuscation: ObfuscationConfig = field(default_factory=ObfuscationConfig)
    host: str = "127.0.0.1"
    port: int = 0
    max_concurrent: int = 8

    def __post_init__(self):
        if self.max_concurrent < 1:
            raise ValueError("max_concurrent must be >= 1")


class _BadRequest(ValueError):
    pass


def parse_classify_body(raw: bytes) -> np.ndarray:
    try:
        body = json.loads(raw)
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise _BadRequest(f"malformed JSON: {exc}") from None
    if not isinstance(body, dict) or "samples" not in body:
        raise _BadRequest("body must be an object with 'samples'")
    if body.get("sample_rate") != SAMPLE_RATE:
        raise _BadRequest(f"sample_rate must be {SAMPLE_RATE}")
    samples = body["samples"]
    if not isinstance(samples, list) or len(samples) != N_SAMPLES:
        raise _BadRequest(f"expected exactly {N_SAMPLES} samples")
    try:
        x = np.array(samples, dtype=np.float64)
    except (TypeError, ValueError):
        raise _BadRequest("samples must be numbers") from None
    if x.ndim != 1 or not np.all(np.isfinite(x)) or np.max(np.abs(x)) > 1.0:
        raise _BadRequest("samples must be finite and within [-1, 1]")
    return x.astype(np.float32)


class ModelService:
    """Read-only model plus output transform; one instance is shared by all handler threads."""

    def __init__(self, model, obfuscation: ObfuscationConfig, query_seed=0):
        # private read-only copy: nothing a handler does can alter the served weights
        inner = model.model if isinstance(model, KeyedSidModel) else model
        frozen = dataclasses.replace(inner, params=inner.params.copy())
        for t in frozen.params.tensors.values():
            t.setflags(write=False)
        if isinstance(model, KeyedSidModel):
            model = KeyedSidModel(frozen, model.detector, model.config)
        else:
            model = frozen
        self.model = model
        self.obfuscation = obfuscation
        self.n_classes = model.n_classes
        self._query_seed = query_seed
        self._query_counter = 0
        self._counter_lock = threading.Lock()

    def info(self) -> dict:
        inner = self.model.model if isinstance(self.model, KeyedSidModel) else self.model
        return {"n_classes": self.n_classes, "defense": inner.defense.get("kind", "none"),
                "obfuscation": self.obfuscation.label(), "format_version": FORMAT_VERSION,
                "serving_temperature": inner.serving_temperature,
                "sample_rate": SAMPLE_RATE, "n_samples": N_SAMPLES}

    def _query_rng(self):
        with self._counter_lock:
            qid = self._query_counter
            self._query_counter += 1
        return np.random.Generator(np.random.Philox(key=[self._query_seed, qid]))

    def classify(self, samples: np.ndarray) -> dict:
        clip = AudioClip(samples, SAMPLE_RATE, -1, -1)
        if isinstance(self.model, KeyedSidModel):
            post = self.model.predict_proba([clip], rng=self._query_rng())[0]
        else:
            post = self.model.predict_proba([clip])[0]
        return obfuscate(post, self.obfuscation).to_json()


def _make_handler(service: ModelService, slots: threading.BoundedSemaphore):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, *args):
            pass

        def _reply(self, status, payload):
            data = json.dumps(payload).encode()
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def do_GET(self):
            if self.path == "/v1/info":
                self._reply(200, service.info())
            else:
                self._reply(404, {"error": "not found"})

        def do_POST(self):
            if self.path != "/v1/classify":
                self._reply(404, {"error": "not found"})
                return
            length = int(self.headers.get("Content-Length") or 0)
            raw = self.rfile.read(length)
            if not slots.acquire(blocking=False):
                self._reply(503, {"error": "too many concurrent requests"})
                return
            try:
                samples = parse_classify_body(raw)
                self._reply(200, service.classify(samples))
            except _BadRequest as exc:
                self._reply(400, {"error": str(exc)})
            finally:
                slots.release()

    return Handler


class RunningServer:
    def __init__(self, httpd: ThreadingHTTPServer, service: ModelService):
        self.httpd = httpd
        self.service = service
        self._thread = threading.Thread(target=httpd.serve_forever, daemon=True)

    @property
    def url(self) -> str:
        host, port = self.httpd.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "RunningServer":
        self._thread.start()
        return self

    def serve_forever(self):
        self.httpd.serve_forever()

    def shutdown(self):
        self.httpd.shutdown()
        self.httpd.server_close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.shutdown()


def make_server(config: ServeConfig, model=None) -> RunningServer:
    """Bind the endpoint without starting it; ``model`` overrides loading the checkpoint."""
    if model is None:
        model = load_served_model(config.checkpoint)
    if config.obfuscation.mode == "topk" and not 1 <= config.obfuscation.k < model.n_classes:
        raise ValueError(f"k={config.obfuscation.k} out of range for {model.n_classes} classes")
    service = ModelService(model, config.obfuscation)
    handler = _make_handler(service, threading.BoundedSemaphore(config.max_concurrent))
    httpd = ThreadingHTTPServer((config.host, config.port), handler)
    httpd.daemon_threads = True
    return RunningServer(httpd, service)


def serve(config: ServeConfig, model=None) -> RunningServer:
    """Start serving in a background thread; call ``.shutdown()`` to stop."""
    return make_server(config, model).start()


# ---------------------------------------------------------------------------
# client


def _post_json(url, payload, timeout):
    req = urllib.request.Request(url, data=json.dumps(payload).encode(),
                                 headers={"Content-Type": "application/json"}, method="POST")
    try:
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            return json.loads(resp.read())
    except urllib.error.HTTPError as exc:
        raise RemoteQueryError(f"{url} answered {exc.code}: {exc.read()[:200]!r}") from None
    except (urllib.error.URLError, OSError) as exc:
        raise RemoteQueryError(f"cannot reach {url}: {exc}") from None


def query_endpoint(endpoint: str, clip: AudioClip, timeout=30.0) -> ObfuscatedOutput:
    # repr of a python float round-trips exactly through JSON
    payload = {"samples": [float(v) for v in clip.samples], "sample_rate": clip.sample_rate}
    return ObfuscatedOutput.from_json(_post_json(endpoint.rstrip("/") + "/v1/classify", payload, timeout))


def endpoint_info(endpoint: str, timeout=10.0) -> dict:
    try:
        with urllib.request.urlopen(endpoint.rstrip("/") + "/v1/info", timeout=timeout) as resp:
            return json.loads(resp.read())
    except (urllib.error.URLError, OSError) as exc:
        raise RemoteQueryError(f"cannot reach {endpoint}: {exc}") from None


def remote_attack(endpoint: str, attack: AttackModel, threshold: float, in_clips, out_clips,
                  timeout=30.0):
    """Membership inference over the wire: one query per clip, then the usual metrics."""
    in_clips, out_clips = list(in_clips), list(out_clips)
    if len(in_clips) != len(out_clips):
        raise ValueError("unbalanced evaluation sets")
    feats_in = [response_feature(query_endpoint(endpoint, c, timeout)) for c in in_clips]
    feats_out = [response_feature(query_endpoint(endpoint, c, timeout)) for c in out_clips]
    return metrics_from_features(attack, threshold, np.array(feats_in), np.array(feats_out))
