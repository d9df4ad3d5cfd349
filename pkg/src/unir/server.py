"""Read-only HTTP search service over an immutable index.

POST /search takes {"txt": str|null, "img_id": str|null, "instruction":
str|null, "k": int} and returns the ranked candidates; GET /healthz returns
"ok". The index never mutates, so concurrent requests need no locking; an
optional semaphore bounds concurrent scoring when a thread budget is set.
"""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from unir.encoders import encode_image, encode_text
from unir.fusion import FeatureFusionEmbedding, ScoreFusionEmbedding, fuse_feature_level_toy
from unir.index import ClusteredIndex, FlatIndex, search_clustered, search_flat
from unir.pipeline import image_encoder_of, text_encoder_of
from unir.store import EmbeddingStore, StoreMode
from unir.train import ModelParams


class SearchService:
    """Holds the loaded index and answers queries; shared across handlers."""

    def __init__(
        self,
        index: FlatIndex | ClusteredIndex | None,
        params: ModelParams,
        raw_features: EmbeddingStore | None = None,
        n_probe: int | None = None,
        max_concurrency: int | None = None,
    ):
        self.index = index
        self.params = params
        self.raw_features = raw_features
        self.n_probe = n_probe
        self._gate = (
            threading.Semaphore(max_concurrency) if max_concurrency else None
        )

    def _embedding(self, txt: str | None, img_id: str | None, instruction: str | None):
        text_input = None
        if instruction and txt:
            text_input = f"{instruction} {txt}"
        elif instruction:
            text_input = instruction
        elif txt:
            text_input = txt
        txt_vec = (
            encode_text(text_input, None, text_encoder_of(self.params))
            if text_input is not None
            else None
        )
        img_vec = None
        if img_id is not None:
            if self.raw_features is None or img_id not in self.raw_features:
                raise KeyError(img_id)
            img_vec = encode_image(
                img_id, self.raw_features.row(img_id), image_encoder_of(self.params)
            )
        if txt_vec is None and img_vec is None:
            raise ValueError("query needs txt, instruction, or img_id")
        if self.params.mode is StoreMode.SCORE:
            if txt_vec is None:
                txt_vec = np.zeros(self.params.dim, dtype=np.float32) if img_vec is None else None
            return ScoreFusionEmbedding(image_vec=img_vec, text_vec=txt_vec)
        return fuse_feature_level_toy(img_vec, txt_vec, self.params.fusion_proj)

    def search(self, txt: str | None, img_id: str | None, instruction: str | None, k: int):
        if self.index is None:
            raise RuntimeError("index not loaded")
        embedding = self._embedding(txt, img_id, instruction)
        if self._gate is not None:
            with self._gate:
                return self._run_search(embedding, k)
        return self._run_search(embedding, k)

    def _run_search(self, embedding, k: int):
        if isinstance(self.index, ClusteredIndex):
            n_probe = self.n_probe if self.n_probe is not None else self.index.n_lists
            result = search_clustered(self.index, embedding, k, n_probe)
        else:
            result = search_flat(self.index, embedding, k)
        return [{"did": did, "score": score} for did, score in result.entries]


def make_handler(service: SearchService):
    class Handler(BaseHTTPRequestHandler):
        def log_message(self, fmt, *args):
            pass

        def _reply(self, status: int, payload) -> None:
            body = json.dumps(payload).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def do_GET(self):
            if self.path == "/healthz":
                body = b"ok"
                self.send_response(200)
                self.send_header("Content-Type", "text/plain")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)
            else:
                self._reply(404, {"error": "not found"})

        def do_POST(self):
            if self.path != "/search":
                self._reply(404, {"error": "not found"})
                return
            if service.index is None:
                self._reply(503, {"error": "index not loaded"})
                return
            try:
                length = int(self.headers.get("Content-Length", "0"))
                payload = json.loads(self.rfile.read(length))
                if not isinstance(payload, dict):
                    raise ValueError("body must be an object")
                k = payload.get("k", 10)
                if not isinstance(k, int) or k < 1:
                    raise ValueError("k must be a positive integer")
                txt = payload.get("txt")
                img_id = payload.get("img_id")
                instruction = payload.get("instruction")
                if txt is not None and not isinstance(txt, str):
                    raise ValueError("txt must be a string or null")
            except (ValueError, json.JSONDecodeError) as exc:
                self._reply(400, {"error": str(exc)})
                return
            try:
                entries = service.search(txt, img_id, instruction, k)
            except KeyError:
                self._reply(404, {"error": f"unknown img_id {img_id!r}"})
                return
            except ValueError as exc:
                self._reply(400, {"error": str(exc)})
                return
            self._reply(200, {"results": entries})

    return Handler


def serve(service: SearchService, host: str, port: int) -> ThreadingHTTPServer:
    """Start the HTTP server; caller drives serve_forever/shutdown."""
    server = ThreadingHTTPServer((host, port), make_handler(service))
    return server
