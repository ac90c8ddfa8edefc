"""Client side of the bridge wire protocol.

A bridge is a separate process (local subprocess or remote TCP service)
exposing a real language model's tokenizer and next-token distributions as
newline-delimited JSON.  Probabilities cross the wire as decimal strings so
the only rounding step is this side's grid quantization; the bridge never
quantizes.  One request is in flight per connection at a time.

Endpoints: ``stdio:<command line>`` spawns the bridge as a subprocess and
talks over its stdin/stdout; ``host:port`` connects over TCP.
"""

from __future__ import annotations

import json
import shlex
import socket
import subprocess
import threading
from collections import OrderedDict
from typing import Optional, Sequence

from adlm.entropy import TokenDistribution
from adlm.provider import ProviderDescriptor

MAX_WIRE_TOP_N = 4096


class TransportError(Exception):
    """Bridge unreachable, dead, or talking something other than protocol."""


class BridgeClient:
    """Single-connection protocol client; thread-safe via one big lock."""

    def __init__(self, endpoint: str, timeout: float = 30.0):
        self.endpoint = endpoint
        self.timeout = timeout
        self._lock = threading.Lock()
        self._proc: Optional[subprocess.Popen] = None
        self._sock: Optional[socket.socket] = None
        self._rfile = None
        self._wfile = None

    def _connect(self) -> None:
        if self._rfile is not None:
            return
        if self.endpoint.startswith("stdio:"):
            command = shlex.split(self.endpoint[len("stdio:"):])
            if not command:
                raise TransportError("stdio endpoint names no command")
            try:
                self._proc = subprocess.Popen(
                    command, stdin=subprocess.PIPE, stdout=subprocess.PIPE
                )
            except OSError as exc:
                raise TransportError(f"cannot launch bridge: {exc}") from exc
            self._rfile = self._proc.stdout
            self._wfile = self._proc.stdin
        else:
            host, sep, port = self.endpoint.rpartition(":")
            if not sep or not host:
                raise TransportError(
                    f"endpoint {self.endpoint!r} is neither stdio:<cmd> nor host:port"
                )
            try:
                self._sock = socket.create_connection((host, int(port)),
                                                      timeout=self.timeout)
            except (OSError, ValueError) as exc:
                raise TransportError(f"cannot reach bridge at "
                                     f"{self.endpoint}: {exc}") from exc
            self._rfile = self._sock.makefile("rb")
            self._wfile = self._sock.makefile("wb")

    def request(self, message: dict) -> dict:
        with self._lock:
            self._connect()
            try:
                self._wfile.write(json.dumps(message).encode("utf-8") + b"\n")
                self._wfile.flush()
                line = self._rfile.readline()
            except (OSError, BrokenPipeError, ValueError) as exc:
                raise TransportError(f"bridge connection failed: {exc}") from exc
            if not line:
                raise TransportError("bridge closed the connection")
            try:
                response = json.loads(line)
            except json.JSONDecodeError as exc:
                raise TransportError(f"bridge sent invalid JSON: {exc}") from exc
            if not isinstance(response, dict):
                raise TransportError("bridge response is not an object")
            if not response.get("ok"):
                raise TransportError(
                    f"bridge refused {message.get('op')}: "
                    f"{response.get('error', 'no reason given')}"
                )
            return response

    def close(self) -> None:
        with self._lock:
            for stream in (self._wfile, self._rfile):
                if stream is not None:
                    try:
                        stream.close()
                    except OSError:
                        pass
            if self._sock is not None:
                self._sock.close()
            if self._proc is not None:
                self._proc.terminate()
                try:
                    self._proc.wait(timeout=5)
                except subprocess.TimeoutExpired:
                    self._proc.kill()
            self._rfile = self._wfile = self._sock = self._proc = None

    def __enter__(self) -> "BridgeClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def _parse_probs(tokens, probs) -> list[tuple[int, float]]:
    if not isinstance(tokens, list) or not isinstance(probs, list) \
            or len(tokens) != len(probs):
        raise TransportError("bridge sent mismatched tokens/probs")
    out = []
    prev = None
    for token_id, text in zip(tokens, probs):
        try:
            p = float(text)
        except (TypeError, ValueError) as exc:
            raise TransportError(f"unparseable probability {text!r}") from exc
        if not (0.0 < p <= 1.0):
            raise TransportError(f"probability {text!r} outside (0, 1]")
        if prev is not None and p > prev:
            raise TransportError("bridge probabilities not descending")
        prev = p
        out.append((int(token_id), p))
    return out


class BridgeProvider:
    """Provider facade over a ``BridgeClient``.

    ``eos_id``/``unk_id`` are optional because subword models have no natural
    word-level <unk>, and some have no EOS the codec should treat specially;
    leaving them unset disables the corresponding codec behavior.
    """

    def __init__(self, client: BridgeClient, top_n: int = 512,
                 eos_id: Optional[int] = None, unk_id: Optional[int] = None,
                 cache_size: int = 1024):
        if not (2 <= top_n <= MAX_WIRE_TOP_N):
            raise ValueError(f"top_n must be in [2, {MAX_WIRE_TOP_N}]")
        self._client = client
        self._top_n = top_n
        self._eos_id = eos_id
        self._unk_id = unk_id
        info = client.request({"op": "describe"})
        self._model_id = str(info.get("model_id", ""))
        self._vocab_size = int(info.get("vocab_size", 0))
        if not self._model_id or self._vocab_size < 2:
            raise TransportError("bridge describe response missing identity")
        self._cache: OrderedDict[tuple, object] = OrderedDict()
        self._cache_size = cache_size
        self._lock = threading.Lock()

    @property
    def eos_token_id(self) -> Optional[int]:
        return self._eos_id

    @property
    def unk_token_id(self) -> Optional[int]:
        return self._unk_id

    def describe(self) -> ProviderDescriptor:
        return ProviderDescriptor(kind="bridge", model_id=self._model_id,
                                  vocab_size=self._vocab_size, top_n=self._top_n)

    def tokenize(self, text: str) -> list[int]:
        response = self._client.request({"op": "tokenize", "text": text})
        tokens = response.get("tokens")
        if not isinstance(tokens, list):
            raise TransportError("tokenize response carries no tokens")
        return [int(t) for t in tokens]

    def detokenize(self, ids: Sequence[int]) -> str:
        response = self._client.request({"op": "detokenize", "ctx": list(ids)})
        text = response.get("text")
        if not isinstance(text, str):
            raise TransportError("detokenize response carries no text")
        return text

    def _cached(self, key: tuple):
        with self._lock:
            hit = self._cache.get(key)
            if hit is not None:
                self._cache.move_to_end(key)
            return hit

    def _remember(self, key: tuple, value) -> None:
        with self._lock:
            self._cache[key] = value
            if len(self._cache) > self._cache_size:
                self._cache.popitem(last=False)

    def _query_dist(self, ctx: Sequence[int], top_n: int) -> list[tuple[int, float]]:
        response = self._client.request(
            {"op": "next_dist", "ctx": list(ctx), "top_n": top_n}
        )
        return _parse_probs(response.get("tokens"), response.get("probs"))

    def next_distribution(self, ctx: Sequence[int]) -> TokenDistribution:
        key = ("dist", tuple(ctx))
        hit = self._cached(key)
        if hit is not None:
            return hit  # type: ignore[return-value]
        pairs = self._query_dist(ctx, self._top_n)
        dist = TokenDistribution.from_probs(pairs, self._vocab_size)
        self._remember(key, dist)
        return dist

    def token_prob(self, ctx: Sequence[int], token_id: int) -> float:
        """Probability from a deep top-N view; tail ids get the uniform share.

        The wire caps responses at 4096 entries, so for very wide models a
        token beyond that rank is approximated by residual/(V - N), the same
        flat-tail reading the confidence arithmetic uses.
        """
        depth = min(MAX_WIRE_TOP_N, self._vocab_size)
        key = ("deep", tuple(ctx))
        table = self._cached(key)
        if table is None:
            pairs = self._query_dist(ctx, depth)
            residual = max(0.0, 1.0 - sum(p for _, p in pairs))
            unlisted = self._vocab_size - len(pairs)
            tail = residual / unlisted if unlisted > 0 else 0.0
            table = (dict(pairs), tail)
            self._remember(key, table)
        probs, tail = table  # type: ignore[misc]
        return probs.get(token_id, tail)
