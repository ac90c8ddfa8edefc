"""Newline-delimited JSON service around a model wrapper.

One UTF-8 JSON object per line in each direction.  Requests carry an ``op``
plus its arguments; responses carry ``ok`` and exactly the fields that op
defines, nothing else.  Unknown request fields are ignored.  A malformed
line gets an ``ok: false`` answer and the connection stays open; inference
is serialized under one lock however many connections are active.

Responses are serialized with sorted keys and fixed separators so identical
queries produce byte-identical lines.
"""

import json
import logging
import socketserver
import sys
import threading

MAX_TOP_N = 4096

log = logging.getLogger("adlm_bridge")


def _error(message: str) -> dict:
    return {"ok": False, "error": message}


def _int_list(value, field):
    if not isinstance(value, list) or any(
        not isinstance(v, int) or isinstance(v, bool) for v in value
    ):
        raise ValueError(f"{field} must be a list of token ids")
    return value


def handle_request(model, message: dict, lock: threading.Lock) -> dict:
    op = message.get("op")
    if op == "describe":
        return {"ok": True, "model_id": model.model_id,
                "vocab_size": model.vocab_size}
    if op == "tokenize":
        text = message.get("text")
        if not isinstance(text, str):
            return _error("tokenize needs a string 'text' field")
        with lock:
            return {"ok": True, "tokens": model.tokenize(text)}
    if op == "detokenize":
        ctx = _int_list(message.get("ctx"), "ctx")
        with lock:
            return {"ok": True, "text": model.detokenize(ctx)}
    if op == "next_dist":
        ctx = _int_list(message.get("ctx"), "ctx")
        top_n = message.get("top_n")
        if not isinstance(top_n, int) or isinstance(top_n, bool) \
                or not (1 <= top_n <= MAX_TOP_N):
            return _error(f"top_n must be an integer in [1, {MAX_TOP_N}]")
        with lock:
            pairs = model.next_dist(ctx, top_n)
        return {"ok": True,
                "tokens": [tid for tid, _ in pairs],
                "probs": [format(p, ".17g") for _, p in pairs]}
    return _error(f"unknown op {op!r}")


def handle_line(model, line: bytes, lock: threading.Lock) -> bytes:
    """One request line in, one response line out.  Never raises."""
    try:
        message = json.loads(line)
        if not isinstance(message, dict):
            raise ValueError("request must be a JSON object")
    except (json.JSONDecodeError, ValueError, UnicodeDecodeError) as exc:
        response = _error(f"malformed request: {exc}")
    else:
        try:
            response = handle_request(model, message, lock)
        except ValueError as exc:
            response = _error(str(exc))
        except Exception as exc:  # a bad request must not kill the service
            log.exception("request failed")
            response = _error(f"internal error: {exc}")
    return json.dumps(response, sort_keys=True,
                      separators=(",", ":")).encode("utf-8") + b"\n"


def serve_stdio(model) -> None:
    """Answer requests on stdin until EOF; the wire is stdout, logs stderr."""
    lock = threading.Lock()
    stdin = sys.stdin.buffer
    stdout = sys.stdout.buffer
    for line in iter(stdin.readline, b""):
        if not line.strip():
            continue
        stdout.write(handle_line(model, line, lock))
        stdout.flush()


def serve_tcp(model, host: str, port: int):
    """Threaded TCP server; returns it running, caller owns shutdown."""
    lock = threading.Lock()

    class Handler(socketserver.StreamRequestHandler):
        def handle(self):
            for line in iter(self.rfile.readline, b""):
                if not line.strip():
                    continue
                self.wfile.write(handle_line(model, line, lock))
                self.wfile.flush()

    server = socketserver.ThreadingTCPServer((host, port), Handler)
    server.daemon_threads = True
    thread = threading.Thread(target=lambda: server.serve_forever(0.1),
                              daemon=True)
    thread.start()
    log.info("listening on %s:%d", *server.server_address)
    return server


def serve(endpoint: str, model) -> None:
    """Blocking entry point: ``stdio`` or ``host:port``."""
    if endpoint == "stdio":
        serve_stdio(model)
        return
    host, _, port = endpoint.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"endpoint must be 'stdio' or host:port, got {endpoint!r}")
    server = serve_tcp(model, host, int(port))
    try:
        threading.Event().wait()
    finally:
        server.shutdown()
        server.server_close()
