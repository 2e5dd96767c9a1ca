"""HTTP client for logit servers speaking the v1 wire protocol.

RemoteSource performs the /v1/info handshake at construction (verifying the
protocol version and vocabulary fingerprint) and then mints sessions. Each
RemoteSession owns its own pooled HTTP connection, so concurrent branch
calls on distinct sessions never share transport state; requests within one
session are strictly sequential per the session contract.

Open and step calls are never retried: they mutate server state, and a
retry after an ambiguous failure could double-apply a token. Only the
read-only handshake retries. Transport failures surface as TransportError
with the endpoint and attempt count attached.
"""

from __future__ import annotations

import base64
import time

import numpy as np
import requests

from .errors import (
    CapacityError,
    ProtocolError,
    SessionStateError,
    TokenRangeError,
    TransportError,
)
from .server import PROTOCOL_VERSION
from .sources import PromptInput, Vocabulary

_ERROR_CODE_MAP = {
    "session_not_found": SessionStateError,
    "conflict": SessionStateError,
    "bad_token": TokenRangeError,
    "capacity": CapacityError,
    "malformed": ProtocolError,
    "unsupported_protocol": ProtocolError,
}


def _raise_for_body(body: dict, status: int) -> None:
    err = body.get("error")
    if not isinstance(err, dict):
        raise ProtocolError(f"server returned status {status} without an error object")
    code = str(err.get("code", "unknown"))
    message = str(err.get("message", "")) or f"server error {code}"
    exc_type = _ERROR_CODE_MAP.get(code, ProtocolError)
    raise exc_type(f"{code}: {message}")


def _parse_json(resp: requests.Response) -> dict:
    try:
        body = resp.json()
    except ValueError as exc:
        raise ProtocolError(
            f"non-JSON response (status {resp.status_code}) from {resp.url}: {exc}"
        ) from exc
    if not isinstance(body, dict):
        raise ProtocolError(f"response from {resp.url} is not a JSON object")
    if resp.status_code != 200:
        _raise_for_body(body, resp.status_code)
    return body


class RemoteSource:
    """A logit source backed by a remote server.

    The handshake requires the server to publish its token list; engines
    that cannot enumerate tokens are out of scope for protocol v1.
    """

    def __init__(
        self,
        endpoint: str,
        timeout: float = 30.0,
        handshake_retries: int = 2,
        retry_backoff_s: float = 0.1,
    ) -> None:
        self.endpoint = endpoint.rstrip("/")
        self._timeout = timeout
        info = self._handshake(handshake_retries, retry_backoff_s)
        version = info.get("protocol_version")
        if version != PROTOCOL_VERSION:
            raise ProtocolError(
                f"server at {self.endpoint} speaks protocol {version!r}, client needs {PROTOCOL_VERSION}"
            )
        tokens = info.get("tokens")
        if not isinstance(tokens, list) or not tokens:
            raise ProtocolError(f"server at {self.endpoint} did not publish its token list")
        vocab = Vocabulary.from_tokens([str(t) for t in tokens])
        advertised = info.get("vocab_fingerprint")
        if advertised is not None and advertised != vocab.fingerprint:
            raise ProtocolError(
                f"vocabulary fingerprint mismatch at {self.endpoint}: "
                f"advertised {advertised!r}, computed {vocab.fingerprint!r}"
            )
        self._vocab = vocab
        self._context_limit = int(info.get("context_limit", 0) or 0)
        self.name = str(info.get("model", self.endpoint))

    def _handshake(self, retries: int, backoff_s: float) -> dict:
        url = f"{self.endpoint}/v1/info"
        attempts = retries + 1
        last: Exception | None = None
        for attempt in range(attempts):
            try:
                resp = requests.get(url, timeout=self._timeout)
                return _parse_json(resp)
            except requests.RequestException as exc:
                last = exc
                if attempt + 1 < attempts:
                    time.sleep(backoff_s * (attempt + 1))
        raise TransportError(self.endpoint, attempts, last)

    @property
    def vocabulary(self) -> Vocabulary:
        return self._vocab

    @property
    def context_limit(self) -> int:
        return self._context_limit

    def open(self, prompt: PromptInput) -> "RemoteSession":
        http = requests.Session()
        body: dict = {
            "protocol_version": PROTOCOL_VERSION,
            "prompt_tokens": [int(t) for t in prompt.tokens],
        }
        if prompt.payload is not None:
            body["omni_payload"] = {
                "data_b64": base64.b64encode(prompt.payload.data).decode("ascii"),
                "media_type": prompt.payload.media_type,
            }
        try:
            resp = self._post(http, "open", body)
        except Exception:
            http.close()
            raise
        return RemoteSession(self, http, resp)

    def _post(self, http: requests.Session, op: str, body: dict) -> dict:
        url = f"{self.endpoint}/v1/{op}"
        try:
            resp = http.post(url, json=body, timeout=self._timeout)
        except requests.RequestException as exc:
            raise TransportError(self.endpoint, 1, exc)
        return _parse_json(resp)


class RemoteSession:
    def __init__(self, source: RemoteSource, http: requests.Session, opened: dict) -> None:
        self._source = source
        self._http = http
        sid = opened.get("session_id")
        if not isinstance(sid, str):
            raise ProtocolError("open response lacks a session_id")
        self._sid = sid
        self._logits = self._extract_logits(opened)
        self._context_length = int(opened.get("context_length", 0))
        self._closed = False

    def _extract_logits(self, body: dict) -> np.ndarray:
        raw = body.get("logits")
        if not isinstance(raw, list):
            raise ProtocolError("response lacks a logits array")
        z = np.asarray(raw, dtype=np.float64)
        if z.size != self._source.vocabulary.size:
            raise ProtocolError(
                f"server sent {z.size} logits for a vocabulary of size "
                f"{self._source.vocabulary.size}"
            )
        return z

    @property
    def context_length(self) -> int:
        return self._context_length

    def logits(self) -> np.ndarray:
        if self._closed:
            raise SessionStateError("session is closed")
        return self._logits

    def step(self, token_id: int) -> np.ndarray:
        if self._closed:
            raise SessionStateError("session is closed")
        body = {
            "protocol_version": PROTOCOL_VERSION,
            "session_id": self._sid,
            "token_id": int(token_id),
        }
        resp = self._source._post(self._http, "step", body)
        self._logits = self._extract_logits(resp)
        self._context_length = int(resp.get("context_length", self._context_length + 1))
        return self._logits

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        try:
            self._source._post(
                self._http,
                "close",
                {"protocol_version": PROTOCOL_VERSION, "session_id": self._sid},
            )
        finally:
            self._http.close()
