"""Served models: linear interchange files and optional torchvision nets.

Every model maps a channel-major ``(c, w, h)`` float array in [0, 1] to a
softmax probability vector.  Normalization (dataset mean/std) is applied
here, server-side, so attackers always work in raw [0, 1] pixel space.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np


class ModelError(Exception):
    """The model could not be loaded or evaluated."""


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


@dataclass
class Normalization:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def from_config(cls, payload: Optional[dict], channels: int) -> Optional["Normalization"]:
        if not payload:
            return None
        mean = np.asarray(payload["mean"], dtype=np.float64).reshape(channels, 1, 1)
        std = np.asarray(payload["std"], dtype=np.float64).reshape(channels, 1, 1)
        if (std == 0).any():
            raise ModelError("normalization std must be non-zero")
        return cls(mean, std)

    def apply(self, array: np.ndarray) -> np.ndarray:
        return (array - self.mean) / self.std


@dataclass
class ServedModel:
    """A scoring endpoint's model: shape, labels, and the forward map."""

    model_id: str
    input_shape: tuple[int, int, int]
    labels: list[str]
    partial_k: Optional[int] = None
    normalize: Optional[Normalization] = None

    @property
    def classes(self) -> int:
        return len(self.labels)

    def probabilities(self, array: np.ndarray) -> np.ndarray:
        """Softmax scores for one (c, w, h) array; must sum to 1."""
        raise NotImplementedError

    def reply(self, array: np.ndarray) -> dict:
        """Protocol payload: full scores, or top-k (label, score) pairs."""
        probs = self.probabilities(array)
        if self.partial_k is None:
            return {"scores": probs.tolist()}
        order = sorted(range(probs.size), key=lambda i: (-probs[i], self.labels[i]))
        top = order[: self.partial_k]
        return {"labels": [[self.labels[i], float(probs[i])] for i in top]}


@dataclass
class LinearModel(ServedModel):
    """npz interchange model: ``softmax(weight @ flatten(x) + bias)``.

    The file carries ``weight`` (K, c*w*h), ``bias`` (K,), ``shape``
    ([c, w, h]) and optionally ``labels``.
    """

    weight: np.ndarray = field(default=None, repr=False)
    bias: np.ndarray = field(default=None, repr=False)

    @classmethod
    def from_file(cls, path, model_id: str = "linear",
                  partial_k: Optional[int] = None,
                  normalize: Optional[dict] = None) -> "LinearModel":
        try:
            with np.load(path, allow_pickle=False) as payload:
                weight = np.asarray(payload["weight"], dtype=np.float64)
                bias = np.asarray(payload["bias"], dtype=np.float64)
                shape = tuple(int(v) for v in payload["shape"])
                labels = ([str(v) for v in payload["labels"]] if "labels" in payload
                          else [str(i) for i in range(weight.shape[0])])
        except (OSError, KeyError, ValueError) as exc:
            raise ModelError(f"cannot load linear model {path}: {exc}") from exc
        if weight.ndim != 2 or weight.shape[1] != int(np.prod(shape)):
            raise ModelError(f"{path}: weight shape {weight.shape} does not match {shape}")
        return cls(model_id=model_id, input_shape=shape, labels=labels,
                   partial_k=partial_k,
                   normalize=Normalization.from_config(normalize, shape[0]),
                   weight=weight, bias=bias)

    def probabilities(self, array: np.ndarray) -> np.ndarray:
        x = array.astype(np.float64)
        if self.normalize is not None:
            x = self.normalize.apply(x)
        return softmax(self.weight @ x.reshape(-1) + self.bias)


@dataclass
class TorchvisionModel(ServedModel):
    """A torchvision architecture, optionally restored from a checkpoint.

    Runs on CPU in eval/no-grad mode so identical requests produce
    identical responses.  Requires the ``torch`` extra.
    """

    arch: str = "resnet18"
    _net: object = field(default=None, repr=False)

    @classmethod
    def build(cls, arch: str, input_shape: Sequence[int], model_id: str = "torchvision",
              checkpoint: Optional[str] = None, labels: Optional[Sequence[str]] = None,
              partial_k: Optional[int] = None,
              normalize: Optional[dict] = None) -> "TorchvisionModel":
        try:
            import torch
            import torchvision.models as tvm
        except ImportError as exc:
            raise ModelError("torchvision models need the 'torch' extra installed") from exc
        if not hasattr(tvm, arch):
            raise ModelError(f"unknown torchvision architecture {arch!r}")
        net = getattr(tvm, arch)(weights=None)
        if checkpoint:
            state = torch.load(checkpoint, map_location="cpu", weights_only=True)
            net.load_state_dict(state)
        net.eval()
        shape = tuple(int(v) for v in input_shape)
        with torch.no_grad():
            out = net(torch.zeros(1, *shape))
        classes = int(out.shape[-1])
        label_list = list(labels) if labels else [str(i) for i in range(classes)]
        if len(label_list) != classes:
            raise ModelError(f"{len(label_list)} labels for {classes} classes")
        return cls(model_id=model_id, input_shape=shape, labels=label_list,
                   partial_k=partial_k,
                   normalize=Normalization.from_config(normalize, shape[0]),
                   arch=arch, _net=net)

    def probabilities(self, array: np.ndarray) -> np.ndarray:
        import torch

        x = array.astype(np.float64)
        if self.normalize is not None:
            x = self.normalize.apply(x)
        with torch.no_grad():
            logits = self._net(torch.from_numpy(x[None].astype(np.float32)))
        return softmax(logits.numpy()[0])


def load_from_config(path) -> ServedModel:
    """Build the served model named by a JSON config file.

    Linear example::

        {"model_id": "toy", "kind": "linear", "path": "toy.npz",
         "partial_k": null, "normalize": null}

    Torchvision example::

        {"model_id": "rn18", "kind": "torchvision", "arch": "resnet18",
         "input_shape": [3, 224, 224], "checkpoint": "rn18.pt",
         "normalize": {"mean": [0.485, 0.456, 0.406],
                       "std": [0.229, 0.224, 0.225]}}
    """
    config_path = Path(path)
    try:
        payload = json.loads(config_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ModelError(f"cannot read model config {path}: {exc}") from exc
    kind = payload.get("kind", "linear")
    base = config_path.parent
    if kind == "linear":
        model_path = Path(payload["path"])
        if not model_path.is_absolute():
            model_path = base / model_path
        return LinearModel.from_file(model_path,
                                     model_id=payload.get("model_id", "linear"),
                                     partial_k=payload.get("partial_k"),
                                     normalize=payload.get("normalize"))
    if kind == "torchvision":
        checkpoint = payload.get("checkpoint")
        if checkpoint and not Path(checkpoint).is_absolute():
            checkpoint = str(base / checkpoint)
        return TorchvisionModel.build(payload["arch"], payload["input_shape"],
                                      model_id=payload.get("model_id", "torchvision"),
                                      checkpoint=checkpoint,
                                      labels=payload.get("labels"),
                                      partial_k=payload.get("partial_k"),
                                      normalize=payload.get("normalize"))
    raise ModelError(f"unknown model kind {kind!r}")
