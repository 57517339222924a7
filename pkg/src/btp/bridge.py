"""Adapter for external language-model servers over standard streams.

Messages are newline-delimited JSON exchanged with a child process, one
in-flight request per process.  Two modes exist because real servers
expose either per-token logits or whole sampled sequences: token mode
wraps the process as a TokenModel so beam search runs engine-side;
sequence mode accepts ready-made candidates and stores them exactly as
beam output would be stored.
"""

import json
import logging
import queue
import subprocess
import threading

import numpy as np

from .beam import Hypothesis
from .errors import BridgeClosedError, ProtocolError

logger = logging.getLogger(__name__)

PROTOCOL_VERSION = "btp-bridge/1"


def parse_message(line: str) -> dict:
    try:
        value = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"invalid JSON ({exc.msg})", payload=line) from exc
    if not isinstance(value, dict):
        raise ProtocolError("message must be a JSON object", payload=line)
    return value


def serialize_message(message: dict) -> str:
    """Canonical wire form: sorted keys, compact separators, no newline."""
    return json.dumps(message, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


class BridgeClient:
    """Owns a bridge subprocess and runs the request/response exchange.

    A failed exchange (timeout or malformed reply) is retried exactly
    once while the process is still alive; a dead process raises
    BridgeClosedError immediately.
    """

    def __init__(self, argv, timeout_s: float = 60.0):
        self.timeout_s = timeout_s
        self._proc = subprocess.Popen(argv, stdin=subprocess.PIPE,
                                      stdout=subprocess.PIPE,
                                      stderr=subprocess.DEVNULL, text=True)
        self._lines: queue.Queue[str | None] = queue.Queue()
        self._lock = threading.Lock()
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()

    def _pump(self):
        for line in self._proc.stdout:
            self._lines.put(line.rstrip("\n"))
        self._lines.put(None)

    def _exchange(self, message: dict) -> dict:
        try:
            self._proc.stdin.write(serialize_message(message) + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise BridgeClosedError("bridge closed") from exc
        try:
            line = self._lines.get(timeout=self.timeout_s)
        except queue.Empty:
            raise TimeoutError(f"no response within {self.timeout_s}s") from None
        if line is None:
            raise BridgeClosedError("bridge closed")
        response = parse_message(line)
        if response.get("version") != PROTOCOL_VERSION:
            raise ProtocolError(
                f"response version must be {PROTOCOL_VERSION!r}", payload=line)
        return response

    def request(self, payload: dict) -> dict:
        message = {"version": PROTOCOL_VERSION, **payload}
        with self._lock:
            try:
                return self._exchange(message)
            except BridgeClosedError:
                raise
            except (ProtocolError, TimeoutError) as first:
                if self._proc.poll() is not None:
                    raise BridgeClosedError("bridge closed") from first
                logger.warning("bridge request failed (%s); retrying once", first)
                return self._exchange(message)

    def close(self):
        for stream in (self._proc.stdin,):
            try:
                stream.close()
            except OSError:
                pass
        try:
            self._proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            self._proc.kill()
            self._proc.wait()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class BridgedTokenModel:
    """TokenModel backed by a token-mode bridge process.

    Responses must cover the engine vocabulary; a total probability off
    by at most 1e-6 is renormalized silently, anything worse is a
    protocol error.
    """

    def __init__(self, client: BridgeClient, vocabulary, eos_token: str):
        if eos_token not in vocabulary:
            raise ValueError(f"vocabulary must contain the end token {eos_token!r}")
        self.client = client
        self.vocabulary = tuple(vocabulary)
        self.eos_token = eos_token
        self._index = {tok: i for i, tok in enumerate(self.vocabulary)}

    def next_distribution(self, prefix, prompt: str = "") -> np.ndarray:
        response = self.client.request({
            "mode": "token",
            "prompt": prompt,
            "prefix": list(prefix),
        })
        tokens = response.get("tokens")
        logprobs = response.get("logprobs")
        if not isinstance(tokens, list) or not isinstance(logprobs, list) \
                or len(tokens) != len(logprobs):
            raise ProtocolError("token response needs aligned tokens/logprobs lists",
                                payload=serialize_message(response))
        if response.get("aligned") is not True:
            raise ProtocolError("token response must set aligned=true",
                                payload=serialize_message(response))
        probs = np.zeros(len(self.vocabulary))
        for token, logprob in zip(tokens, logprobs):
            if token not in self._index:
                raise ProtocolError(f"unknown token {token!r} in response")
            if logprob > 0:
                raise ProtocolError(f"positive logprob {logprob!r} for token {token!r}")
            probs[self._index[token]] = np.exp(logprob)
        total = float(probs.sum())
        # small slack on top of the 1e-6 tolerance so a sum of exactly
        # 0.999999 is not rejected over float representation error
        if abs(total - 1.0) > 1e-6 + 1e-12:
            raise ProtocolError(f"distribution sums to {total!r}, beyond tolerance")
        return probs / total


def token_adapter(client: BridgeClient, vocabulary, eos_token: str) -> BridgedTokenModel:
    return BridgedTokenModel(client, vocabulary, eos_token)


def sequence_adapter(client: BridgeClient, prompt: str, k: int,
                     max_tokens: int) -> list[Hypothesis]:
    """Request k finished candidates from a sequence-mode bridge.

    Fewer than k candidates are accepted with a logged shortfall note.
    Candidates must arrive sorted by seq_logprob descending with
    non-positive log-probabilities.
    """
    response = client.request({
        "mode": "sequence",
        "prompt": prompt,
        "k": k,
        "max_tokens": max_tokens,
    })
    raw = response.get("candidates")
    if not isinstance(raw, list):
        raise ProtocolError("sequence response needs a candidates list",
                            payload=serialize_message(response))
    hypotheses = []
    previous = None
    for candidate in raw:
        if not isinstance(candidate, dict) or \
                {"text", "tokens", "seq_logprob"} - set(candidate):
            raise ProtocolError("candidate needs text/tokens/seq_logprob",
                                payload=serialize_message(response))
        logprob = float(candidate["seq_logprob"])
        if logprob > 0:
            raise ProtocolError(f"positive seq_logprob {logprob!r} rejected")
        if previous is not None and logprob > previous:
            raise ProtocolError("candidates must be sorted by seq_logprob descending")
        previous = logprob
        hypotheses.append(Hypothesis(tokens=tuple(candidate["tokens"]),
                                     cum_logprob=logprob, finished=True))
    if len(hypotheses) < k:
        logger.warning("sequence bridge returned %d of %d requested candidates",
                       len(hypotheses), k)
    return hypotheses


def store_candidates(buffer, task_id: str, hypotheses, eos_token: str):
    """Insert bridge candidates exactly as beam-search output is inserted."""
    return [
        buffer.insert_generation(task_id, hyp.tokens, hyp.cum_logprob, eos_token)
        for hyp in hypotheses
    ]
