"""Scoring oracles: opaque interfaces with query accounting.

An oracle answers images with a :class:`~bayesmask.core.ScoreVector` and
charges exactly one unit of budget per delivered score.  Implementations:

* :class:`LinearSoftmaxOracle` - in-process ``softmax(W @ flatten(x) + b)``,
  also the loader for the npz model interchange format;
* :class:`RemoteOracle` - HTTP client for the scoring protocol
  (``POST /score``, ``GET /meta``) with bounded-retry transport;
* :class:`RndNoiseOracle` - decorator adding the random-noise defense
  (zero-mean Gaussian input noise, clipped to [0, 1]);
* :class:`QueryCounter` - independent accounting decorator.

Decorators compose outside budget accounting: one external query is one
counted query regardless of decoration.
"""

from __future__ import annotations

import base64
import json
import threading
import time
import urllib.error
import urllib.request
from typing import Callable, Optional, Sequence

import numpy as np

from .bayes import SamplerSeed
from .core import Image, ScoreVector
from .errors import (BudgetExhaustedError, ConfigError, DimensionError,
                     DomainError, ProtocolError, TransportError)


class QueryBudget:
    """Atomic query counter; ``used`` only counts delivered scores."""

    def __init__(self, limit: Optional[int] = None):
        if limit is not None and limit < 0:
            raise DomainError("budget limit must be non-negative")
        self.limit = limit
        self._used = 0
        self._lock = threading.Lock()

    @property
    def used(self) -> int:
        return self._used

    @property
    def remaining(self) -> Optional[int]:
        return None if self.limit is None else self.limit - self._used

    def reserve(self) -> None:
        with self._lock:
            if self.limit is not None and self._used >= self.limit:
                raise BudgetExhaustedError(self.limit)
            self._used += 1

    def refund(self) -> None:
        with self._lock:
            self._used -= 1


class ScoreOracle:
    """Base class: budget handling and shape checking around ``_score``."""

    def __init__(self, budget: Optional[QueryBudget] = None,
                 input_shape: Optional[tuple[int, int, int]] = None):
        self.budget = budget if budget is not None else QueryBudget(None)
        self.input_shape = tuple(input_shape) if input_shape else None

    @property
    def num_classes(self) -> Optional[int]:
        return None

    def query(self, image: Image) -> ScoreVector:
        if self.input_shape is not None and image.shape != self.input_shape:
            raise DimensionError(
                f"oracle expects shape {self.input_shape}, got {image.shape}")
        self.budget.reserve()
        try:
            return self._score(image)
        except BaseException:
            self.budget.refund()
            raise

    def _score(self, image: Image) -> ScoreVector:
        raise NotImplementedError


class LinearSoftmaxOracle(ScoreOracle):
    """Deterministic victim: ``softmax(weight @ flatten(image) + bias)``.

    ``weight`` has shape (K, c*w*h) against the channel-major flattened
    image.  With ``partial_k`` set, replies are top-k (label, score) pairs
    instead of the full probability vector.
    """

    def __init__(self, weight: np.ndarray, bias: np.ndarray,
                 input_shape: tuple[int, int, int],
                 budget: Optional[QueryBudget] = None,
                 labels: Optional[Sequence[str]] = None,
                 partial_k: Optional[int] = None):
        super().__init__(budget, input_shape)
        weight = np.asarray(weight, dtype=np.float64)
        bias = np.asarray(bias, dtype=np.float64)
        c, w, h = input_shape
        if weight.ndim != 2 or weight.shape[1] != c * w * h:
            raise DimensionError(
                f"weight must be (K, {c * w * h}), got {weight.shape}")
        if bias.shape != (weight.shape[0],):
            raise DimensionError(f"bias must be ({weight.shape[0]},), got {bias.shape}")
        self.weight = weight
        self.bias = bias
        self.labels = (list(labels) if labels is not None
                       else [str(i) for i in range(weight.shape[0])])
        if len(self.labels) != weight.shape[0]:
            raise DimensionError("one label per class required")
        if partial_k is not None and not 1 <= partial_k <= weight.shape[0]:
            raise DomainError("partial_k must be in [1, K]")
        self.partial_k = partial_k

    @property
    def num_classes(self) -> int:
        return self.weight.shape[0]

    def probabilities(self, image: Image) -> np.ndarray:
        """Softmax output without touching the budget (for tests/tools)."""
        logits = self.weight @ image.flat().astype(np.float64) + self.bias
        logits = logits - logits.max()
        exp = np.exp(logits)
        return exp / exp.sum()

    def _score(self, image: Image) -> ScoreVector:
        probs = self.probabilities(image)
        if self.partial_k is None:
            return ScoreVector.full(probs)
        # descending score, ascending label on ties
        order = sorted(range(probs.size), key=lambda i: (-probs[i], self.labels[i]))
        top = order[: self.partial_k]
        return ScoreVector.partial([(self.labels[i], float(probs[i])) for i in top])

    def save(self, path) -> None:
        """Write the npz model interchange file."""
        np.savez(path, weight=self.weight, bias=self.bias,
                 shape=np.asarray(self.input_shape, dtype=np.uint32),
                 labels=np.asarray(self.labels))

    @classmethod
    def from_file(cls, path, budget: Optional[QueryBudget] = None,
                  partial_k: Optional[int] = None) -> "LinearSoftmaxOracle":
        """Load a model interchange file (npz with weight, bias, shape[, labels])."""
        with np.load(path, allow_pickle=False) as payload:
            try:
                weight = payload["weight"]
                bias = payload["bias"]
                shape = tuple(int(v) for v in payload["shape"])
            except KeyError as exc:
                raise ConfigError(f"{path}: missing model field {exc}") from exc
            labels = [str(v) for v in payload["labels"]] if "labels" in payload else None
        return cls(weight, bias, shape, budget=budget, labels=labels, partial_k=partial_k)

    @classmethod
    def default_toy(cls, input_shape: tuple[int, int, int], classes: int = 10,
                    seed: int = 7, budget: Optional[QueryBudget] = None,
                    partial_k: Optional[int] = None) -> "LinearSoftmaxOracle":
        """Reproducible built-in victim for demos and smoke tests."""
        c, w, h = input_shape
        rng = SamplerSeed(seed, 0).generator()
        weight = rng.normal(0.0, 1.0, size=(classes, c * w * h))
        bias = rng.normal(0.0, 0.5, size=classes)
        return cls(weight, bias, input_shape, budget=budget, partial_k=partial_k)


class RndNoiseOracle(ScoreOracle):
    """Random-noise defense: perturb the query input before forwarding.

    Adds zero-mean Gaussian noise (stddev ``sigma``) clipped to [0, 1].
    ``sigma=0`` forwards the image untouched.  Budget accounting is the
    inner oracle's; this wrapper never counts separately.
    """

    def __init__(self, inner: ScoreOracle, sigma: float, seed: SamplerSeed):
        if sigma < 0:
            raise DomainError("noise stddev must be non-negative")
        self.inner = inner
        self.sigma = float(sigma)
        self._rng = seed.generator()

    @property
    def budget(self) -> QueryBudget:
        return self.inner.budget

    @budget.setter
    def budget(self, value):  # pragma: no cover - budget lives on the inner oracle
        raise ConfigError("set the budget on the wrapped oracle")

    @property
    def input_shape(self):
        return self.inner.input_shape

    @property
    def num_classes(self) -> Optional[int]:
        return self.inner.num_classes

    def query(self, image: Image) -> ScoreVector:
        if self.sigma == 0.0:
            return self.inner.query(image)
        noise = self._rng.normal(0.0, self.sigma, size=image.shape)
        noisy = np.clip(image.data.astype(np.float64) + noise, 0.0, 1.0)
        return self.inner.query(Image._from_valid(noisy.astype(np.float32)))


def wrap_rnd(oracle: ScoreOracle, sigma: float, seed: SamplerSeed) -> ScoreOracle:
    """Decorate an oracle with the random-noise defense."""
    return RndNoiseOracle(oracle, sigma, seed)


class QueryCounter(ScoreOracle):
    """Transparent decorator counting delivered scores (verification aid)."""

    def __init__(self, inner: ScoreOracle):
        self.inner = inner
        self.count = 0

    @property
    def budget(self) -> QueryBudget:
        return self.inner.budget

    @budget.setter
    def budget(self, value):  # pragma: no cover
        raise ConfigError("set the budget on the wrapped oracle")

    @property
    def input_shape(self):
        return self.inner.input_shape

    @property
    def num_classes(self) -> Optional[int]:
        return self.inner.num_classes

    def query(self, image: Image) -> ScoreVector:
        scores = self.inner.query(image)
        self.count += 1
        return scores


class RemoteOracle(ScoreOracle):
    """HTTP client for the scoring protocol.

    ``POST {endpoint}/score`` with ``{"shape": [c, w, h], "data": <base64
    little-endian float32>}`` and parses ``{"scores": [...]}`` (full) or
    ``{"labels": [[label, score], ...]}`` (partial).  Transport failures
    retry with bounded exponential backoff (3 attempts total); a retried
    query still counts once.  ``GET {endpoint}/meta`` reports
    ``{"classes": K, "shape": [c, w, h]}``.
    """

    RETRY_ATTEMPTS = 3
    RETRY_BASE_DELAY = 0.1

    def __init__(self, endpoint: str, budget: Optional[QueryBudget] = None,
                 timeout: float = 10.0, token: Optional[str] = None,
                 sleep: Callable[[float], None] = time.sleep):
        super().__init__(budget, None)
        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout
        self.token = token
        self._sleep = sleep
        self._meta: Optional[dict] = None

    def meta(self) -> dict:
        if self._meta is None:
            raw = self._request_with_retry(f"{self.endpoint}/meta", None)
            payload = _parse_json(raw)
            if "classes" not in payload or "shape" not in payload:
                raise ProtocolError(f"/meta missing fields: {payload}")
            self._meta = {"classes": int(payload["classes"]),
                          "shape": tuple(int(v) for v in payload["shape"])}
            self.input_shape = self._meta["shape"]
        return self._meta

    @property
    def num_classes(self) -> Optional[int]:
        return self.meta()["classes"]

    def _score(self, image: Image) -> ScoreVector:
        body = json.dumps({
            "shape": list(image.shape),
            "data": encode_image_payload(image),
        }).encode("utf-8")
        raw = self._request_with_retry(f"{self.endpoint}/score", body)
        return parse_score_response(raw)

    def _request_with_retry(self, url: str, body: Optional[bytes]) -> bytes:
        last_error: Optional[Exception] = None
        for attempt in range(self.RETRY_ATTEMPTS):
            if attempt:
                self._sleep(self.RETRY_BASE_DELAY * (2 ** (attempt - 1)))
            try:
                return self._request_once(url, body)
            except ProtocolError:
                raise
            except (urllib.error.URLError, TimeoutError, OSError) as exc:
                last_error = exc
        raise TransportError(f"{url}: {last_error}", attempts=self.RETRY_ATTEMPTS)

    def _request_once(self, url: str, body: Optional[bytes]) -> bytes:
        headers = {"Content-Type": "application/json"}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        request = urllib.request.Request(url, data=body, headers=headers,
                                         method="POST" if body is not None else "GET")
        try:
            with urllib.request.urlopen(request, timeout=self.timeout) as response:
                return response.read()
        except urllib.error.HTTPError as exc:
            if 400 <= exc.code < 500:
                raise ProtocolError(f"{url}: HTTP {exc.code}: {exc.read()!r}") from exc
            raise  # 5xx is retryable


def encode_image_payload(image: Image) -> str:
    """Base64 of the channel-major little-endian float32 data."""
    return base64.b64encode(image.data.astype("<f4", copy=False).tobytes()).decode("ascii")


def decode_image_payload(shape: Sequence[int], data) -> np.ndarray:
    """Inverse of :func:`encode_image_payload`; also accepts a plain list."""
    c, w, h = (int(v) for v in shape)
    if isinstance(data, str):
        raw = base64.b64decode(data.encode("ascii"), validate=True)
        arr = np.frombuffer(raw, dtype="<f4")
    else:
        arr = np.asarray(data, dtype=np.float32)
    if arr.size != c * w * h:
        raise DimensionError(f"payload has {arr.size} values, shape wants {c * w * h}")
    return arr.reshape(c, w, h)


def _parse_json(raw: bytes) -> dict:
    try:
        payload = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"unparseable response: {raw[:200]!r}") from exc
    if not isinstance(payload, dict):
        raise ProtocolError(f"expected a JSON object, got {type(payload).__name__}")
    return payload


def parse_score_response(raw: bytes) -> ScoreVector:
    payload = _parse_json(raw)
    if "scores" in payload:
        try:
            return ScoreVector.full(payload["scores"])
        except (DomainError, DimensionError, TypeError, ValueError) as exc:
            raise ProtocolError(f"bad scores payload: {exc}") from exc
    if "labels" in payload:
        try:
            return ScoreVector.partial((str(l), float(s)) for l, s in payload["labels"])
        except (DomainError, TypeError, ValueError) as exc:
            raise ProtocolError(f"bad labels payload: {exc}") from exc
    raise ProtocolError(f"response carries neither scores nor labels: {payload}")
