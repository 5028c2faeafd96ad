"""Frozen black-box experts: analytic in-process models, an HTTP wire
protocol exposing next-token logprobs, and client/server implementations.

All experts on one session must share a vocabulary; the client verifies the
server's vocab hash before any query.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import requests

from .core import Context, RENORM_ATOL, SIMPLEX_ATOL, Vocab, validate_dist
from .errors import (
    MalformedReplyError,
    TransportError,
    VocabMismatchError,
)

LOGP_FLOOR = -1e9  # stand-in for log(0) on the wire

RETRY_ATTEMPTS = 3
RETRY_BACKOFF_S = 0.05


@dataclass(frozen=True)
class TiltedExpertConfig:
    """Analytic expert: a conditional bigram base exponentially tilted by a
    per-token feature.

    ``repeat_rule`` makes the feature context-dependent: "seek" puts the
    feature on repeating the previous token, "avoid" on not repeating it.
    A static ``feature`` vector and a ``repeat_rule`` are mutually exclusive.
    """

    base: np.ndarray  # (V, V) row-stochastic
    feature: np.ndarray  # (V,) static per-token feature
    beta: float = 4.0
    repeat_rule: str | None = None  # None | "seek" | "avoid"

    def __post_init__(self):
        v = self.base.shape[0]
        if self.base.shape != (v, v):
            raise ValueError("base must be square")
        if self.feature.shape != (v,):
            raise ValueError("feature length must match vocab size")
        if not np.all(np.isfinite(self.feature)):
            raise ValueError("feature must be finite")
        if self.repeat_rule not in (None, "seek", "avoid"):
            raise ValueError(f"bad repeat_rule {self.repeat_rule!r}")
        for row in self.base:
            validate_dist(row, v)

    def feature_at(self, prev_token: int) -> np.ndarray:
        if self.repeat_rule is None:
            return self.feature
        v = self.base.shape[0]
        phi = np.zeros(v)
        if self.repeat_rule == "seek":
            phi[prev_token] = 1.0
        else:
            phi[:] = 1.0
            phi[prev_token] = 0.0
        return phi


def synthetic_expert_next(cfg: TiltedExpertConfig, ctx: Context) -> np.ndarray:
    """Next-token distribution: base[last] tilted by exp(beta * feature)."""
    last = ctx.last
    row = cfg.base[last]
    phi = cfg.feature_at(last)
    # subtract max for stability before exponentiating the tilt
    tilt = cfg.beta * phi
    tilt = tilt - tilt.max()
    unnorm = row * np.exp(tilt)
    return unnorm / unnorm.sum()


class ExpertHandle:
    """Provider of next-token distributions for one frozen expert."""

    expert_id: str
    vocab_hash: str

    def next_dist(self, ctx: Context) -> np.ndarray:
        raise NotImplementedError


class InProcessExpert(ExpertHandle):
    def __init__(self, expert_id: str, cfg: TiltedExpertConfig, vocab: Vocab):
        self.expert_id = expert_id
        self.cfg = cfg
        self.vocab = vocab
        self.vocab_hash = vocab.hash()

    def next_dist(self, ctx: Context) -> np.ndarray:
        return synthetic_expert_next(self.cfg, ctx)


def complete_top_k(entries: list[tuple[int, float]], size: int) -> np.ndarray:
    """Build a full distribution from top-k (token_id, logprob) entries.

    The residual mass is spread uniformly over absent tokens; when the
    reported mass already covers everything (within RENORM_ATOL) the k
    entries are renormalized instead.
    """
    ids = [t for t, _ in entries]
    if len(set(ids)) != len(ids):
        raise MalformedReplyError("duplicate token_id in reply")
    p = np.zeros(size)
    for t, lp in entries:
        if not (0 <= t < size):
            raise MalformedReplyError(f"token id {t} outside vocab")
        if not np.isfinite(lp):
            raise MalformedReplyError("non-finite logprob")
        p[t] = np.exp(lp)
    m = float(p.sum())
    if m > 1.0 + RENORM_ATOL:
        raise MalformedReplyError(f"top-k mass {m} exceeds 1")
    absent = size - len(ids)
    if absent == 0 or m >= 1.0 - RENORM_ATOL:
        p = p / m
    else:
        residual = (1.0 - m) / absent
        mask = np.ones(size, dtype=bool)
        mask[ids] = False
        p[mask] = residual
    assert abs(float(p.sum()) - 1.0) <= SIMPLEX_ATOL
    return p


class RemoteExpert(ExpertHandle):
    """HTTP client for the expert wire protocol.

    Performs a vocab-hash handshake at construction; queries retry up to
    RETRY_ATTEMPTS times with exponential backoff before failing.
    """

    def __init__(self, expert_id: str, url: str, vocab: Vocab, top_k: int | None = None):
        self.expert_id = expert_id
        self.url = url.rstrip("/")
        self.vocab = vocab
        self.vocab_hash = vocab.hash()
        self.top_k = top_k
        self.session = requests.Session()
        info = self._request("GET", "/health")
        if info.get("vocab_hash") != self.vocab_hash:
            raise VocabMismatchError(
                f"server vocab {info.get('vocab_hash')} != client {self.vocab_hash}"
            )

    def _request(self, method: str, path: str, body: dict | None = None) -> dict:
        delay = RETRY_BACKOFF_S
        last_err = None
        for _ in range(RETRY_ATTEMPTS):
            try:
                resp = self.session.request(method, self.url + path, json=body, timeout=10)
                if resp.status_code != 200:
                    raise TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}")
                return resp.json()
            except (requests.RequestException, ValueError) as e:
                last_err = e
                time.sleep(delay)
                delay *= 2
        raise TransportError(f"expert {self.expert_id} unreachable: {last_err}")

    def next_dist(self, ctx: Context) -> np.ndarray:
        body = {"context": list(ctx.tokens)}
        if self.top_k is not None:
            body["top_k"] = self.top_k
        reply = self._request("POST", "/next", body)
        try:
            entries = [(int(e["t"]), float(e["lp"])) for e in reply["logprobs"]]
        except (KeyError, TypeError) as e:
            raise MalformedReplyError(f"bad reply shape: {e}") from None
        if self.top_k is None:
            if len(entries) != self.vocab.size:
                raise MalformedReplyError(
                    f"full reply has {len(entries)} entries, expected {self.vocab.size}"
                )
            ids = [t for t, _ in entries]
            if len(set(ids)) != len(ids):
                raise MalformedReplyError("duplicate token_id in reply")
            p = np.zeros(self.vocab.size)
            for t, lp in entries:
                p[t] = np.exp(lp)
            return validate_dist(p, self.vocab.size)
        return complete_top_k(entries, self.vocab.size)


class _ExpertRequestHandler(BaseHTTPRequestHandler):
    server_version = "mixlab-expert/0.1"

    def log_message(self, fmt, *args):  # quiet by default
        pass

    def _send_json(self, code: int, doc: dict):
        blob = json.dumps(doc).encode()
        self.send_response(code)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(blob)))
        self.end_headers()
        self.wfile.write(blob)

    def do_GET(self):
        if self.path != "/health":
            self._send_json(404, {"error": "not found"})
            return
        self._send_json(
            200,
            {"vocab_hash": self.server.vocab_hash, "expert_id": self.server.expert_id},
        )

    def do_POST(self):
        if self.path != "/next":
            self._send_json(404, {"error": "not found"})
            return
        try:
            length = int(self.headers.get("Content-Length", 0))
            body = json.loads(self.rfile.read(length))
            context = body["context"]
            top_k = body.get("top_k")
            if not isinstance(context, list) or not context:
                raise ValueError("context must be a non-empty token list")
            if not all(isinstance(t, int) and 0 <= t < self.server.vocab.size for t in context):
                raise ValueError("bad token id in context")
            if top_k is not None and (not isinstance(top_k, int) or top_k < 1):
                raise ValueError("top_k must be a positive integer")
            if context[0] != self.server.vocab.bos_id:
                raise ValueError("context must begin with bos")
        except (ValueError, KeyError, json.JSONDecodeError) as e:
            self._send_json(400, {"error": str(e)})
            return
        ctx = Context(prompt=tuple(context))
        p = synthetic_expert_next(self.server.cfg, ctx)
        with np.errstate(divide="ignore"):
            lp = np.where(p > 0.0, np.log(np.where(p > 0.0, p, 1.0)), LOGP_FLOOR)
        if top_k is not None:
            order = np.argsort(-lp, kind="stable")[:top_k]
        else:
            order = np.arange(self.server.vocab.size)
        entries = [{"t": int(t), "lp": float(lp[t])} for t in order]
        self._send_json(200, {"logprobs": entries})


class ExpertServer(ThreadingHTTPServer):
    """Serves one analytic expert over the wire protocol."""

    def __init__(self, cfg: TiltedExpertConfig, vocab: Vocab, expert_id: str,
                 bind_address=("127.0.0.1", 0)):
        super().__init__(bind_address, _ExpertRequestHandler)
        self.cfg = cfg
        self.vocab = vocab
        self.expert_id = expert_id
        self.vocab_hash = vocab.hash()

    @property
    def url(self) -> str:
        host, port = self.server_address[:2]
        return f"http://{host}:{port}"

    def start_background(self) -> threading.Thread:
        t = threading.Thread(target=self.serve_forever, daemon=True)
        t.start()
        return t


def serve_expert(cfg: TiltedExpertConfig, vocab: Vocab, expert_id: str,
                 host: str = "127.0.0.1", port: int = 8000) -> None:
    """Run an expert server in the foreground until interrupted."""
    server = ExpertServer(cfg, vocab, expert_id, (host, port))
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
