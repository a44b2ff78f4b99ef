"""HTTP scoring service.

Protocol:

* ``GET /meta`` -> ``{"classes": K, "shape": [c, w, h]}``
* ``POST /score`` with ``{"shape": [c, w, h], "data": <base64 little-endian
  float32 or list of floats>}`` -> ``{"scores": [...]}`` or, in partial
  mode, ``{"labels": [[label, score], ...]}`` (top-k, descending).

Malformed requests get 400 with a diagnostic; model failures get 500.
Request handling is stateless, so the threading server is safe for
concurrent attack workers.
"""

from __future__ import annotations

import base64
import json
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from .models import ServedModel


class BadRequest(Exception):
    pass


def decode_payload(payload: dict, expected_shape) -> np.ndarray:
    try:
        shape = tuple(int(v) for v in payload["shape"])
        data = payload["data"]
    except (KeyError, TypeError, ValueError) as exc:
        raise BadRequest(f"request must carry shape and data: {exc}") from exc
    if shape != tuple(expected_shape):
        raise BadRequest(f"model expects shape {list(expected_shape)}, got {list(shape)}")
    if isinstance(data, str):
        try:
            raw = base64.b64decode(data.encode("ascii"), validate=True)
        except Exception as exc:
            raise BadRequest(f"bad base64 image data: {exc}") from exc
        arr = np.frombuffer(raw, dtype="<f4")
    elif isinstance(data, list):
        try:
            arr = np.asarray(data, dtype=np.float32)
        except (TypeError, ValueError) as exc:
            raise BadRequest(f"bad numeric image data: {exc}") from exc
    else:
        raise BadRequest("data must be a base64 string or a list of floats")
    if arr.size != int(np.prod(shape)):
        raise BadRequest(f"payload has {arr.size} values, shape wants {int(np.prod(shape))}")
    return arr.reshape(shape)


def make_handler(model: ServedModel):
    class ScoringHandler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, *args):  # quiet by default; stdlib logs to stderr
            pass

        def _send(self, status: int, payload: dict) -> None:
            raw = json.dumps(payload).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(raw)))
            self.end_headers()
            self.wfile.write(raw)

        def do_GET(self):
            if self.path.rstrip("/").endswith("/meta") or self.path == "/meta":
                self._send(200, {"classes": model.classes,
                                 "shape": list(model.input_shape)})
            else:
                self._send(404, {"error": f"no such endpoint {self.path}"})

        def do_POST(self):
            if not (self.path.rstrip("/").endswith("/score") or self.path == "/score"):
                self._send(404, {"error": f"no such endpoint {self.path}"})
                return
            try:
                length = int(self.headers.get("Content-Length", 0))
                body = self.rfile.read(length)
                payload = json.loads(body.decode("utf-8"))
                if not isinstance(payload, dict):
                    raise BadRequest("request body must be a JSON object")
                array = decode_payload(payload, model.input_shape)
            except BadRequest as exc:
                self._send(400, {"error": str(exc)})
                return
            except (json.JSONDecodeError, UnicodeDecodeError, ValueError) as exc:
                self._send(400, {"error": f"unparseable request body: {exc}"})
                return
            try:
                self._send(200, model.reply(array))
            except Exception as exc:  # model failure is a 500
                self._send(500, {"error": f"{type(exc).__name__}: {exc}"})

    return ScoringHandler


def create_server(model: ServedModel, host: str = "127.0.0.1",
                  port: int = 0) -> ThreadingHTTPServer:
    """Bind the scoring service; ``port=0`` picks a free port."""
    return ThreadingHTTPServer((host, port), make_handler(model))


def serve_forever(model: ServedModel, host: str, port: int) -> None:
    server = create_server(model, host, port)
    bound = server.server_address
    print(f"serving {model.model_id} ({model.classes} classes, "
          f"shape {list(model.input_shape)}) on http://{bound[0]}:{bound[1]}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
