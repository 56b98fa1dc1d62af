"""A minimal OpenAI-compatible completions server over a trained bundle.

Adapters are selected per request through the model field: ``"base:rp"``
asks for the predictor adapter, ``"base:rd"`` the discoverer, a bare name
the frozen base. Greedy decoding; one generation at a time (the shared
model is guarded by a lock).
"""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import torch

from .train import TrainedBundle


def generate_text(
    bundle: TrainedBundle,
    prompt: str,
    adapter: str | None,
    max_tokens: int = 16,
    stop: list[str] | None = None,
) -> str:
    model, tokenizer = bundle.model, bundle.tokenizer
    model.eval()
    model.set_adapter(adapter)
    max_len = model.config["max_seq_len"]
    ids = tokenizer.encode(prompt)[-(max_len - max_tokens) :]
    generated: list[int] = []
    with torch.no_grad():
        for _ in range(max_tokens):
            input_ids = torch.tensor([ids + generated], dtype=torch.long)
            logits = model(input_ids)
            next_id = int(logits[0, -1].argmax())
            generated.append(next_id)
    text = " " + tokenizer.decode(generated)
    for sequence in stop or []:
        pos = text.find(sequence)
        if pos >= 0:
            text = text[:pos]
    return text


class CompletionServer:
    """Threaded HTTP server exposing POST /completions (and /v1/completions)."""

    def __init__(self, bundle: TrainedBundle, host: str = "127.0.0.1", port: int = 0):
        lock = threading.Lock()

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                if not self.path.rstrip("/").endswith("completions"):
                    self.send_error(404)
                    return
                length = int(self.headers.get("Content-Length", 0))
                try:
                    payload = json.loads(self.rfile.read(length))
                    model_name = str(payload.get("model", ""))
                    adapter = model_name.rsplit(":", 1)[1] if ":" in model_name else None
                    with lock:
                        text = generate_text(
                            bundle,
                            payload["prompt"],
                            adapter,
                            max_tokens=int(payload.get("max_tokens", 16)),
                            stop=payload.get("stop") or [],
                        )
                except Exception as exc:  # surface as a server error, not a hang
                    self.send_response(500)
                    self.send_header("Content-Type", "application/json")
                    self.end_headers()
                    self.wfile.write(json.dumps({"error": str(exc)}).encode("utf-8"))
                    return
                body = json.dumps({"choices": [{"text": text}]})
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.end_headers()
                self.wfile.write(body.encode("utf-8"))

            def log_message(self, *args):
                pass

        self._server = ThreadingHTTPServer((host, port), Handler)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    @property
    def url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "CompletionServer":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()

    def __enter__(self) -> "CompletionServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()
