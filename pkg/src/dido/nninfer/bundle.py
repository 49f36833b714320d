"""Named, shaped weight arrays for the forward-inference networks.

Bundles serialize to a single JSON document {arch, dims, params} with nested
float lists; the nets are tiny, so portability beats compactness.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class ShapeError(ValueError):
    """Weight array missing or inconsistent with the architecture dims."""


@dataclass(frozen=True)
class DiagCovHead:
    """Log-std coefficients xi parameterizing diag(e^{2xi}).

    Positive-definite by construction for any finite xi.
    """

    xi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "xi", np.asarray(self.xi, dtype=float))
        if not np.all(np.isfinite(self.xi)):
            raise ValueError("xi must be finite")

    @property
    def variances(self) -> np.ndarray:
        return np.exp(2.0 * self.xi)

    @property
    def matrix(self) -> np.ndarray:
        return np.diag(self.variances)


def _resnet1d_shapes(dims: dict) -> dict:
    c, w, out = dims["in_channels"], dims["width"], dims["out"]
    shapes = {
        "conv0.w": (w, c, 3),
        "conv0.b": (w,),
        "conv1.w": (w, w, 3),
        "conv1.b": (w,),
        "conv2.w": (w, w, 3),
        "conv2.b": (w,),
        "head_mean.w": (out, w),
        "head_mean.b": (out,),
    }
    if dims.get("cov_head", False):
        shapes["head_xi.w"] = (out, w)
        shapes["head_xi.b"] = (out,)
    return shapes


def _gru_shapes(dims: dict) -> dict:
    sizes = [dims["in_dim"]] + list(dims["hidden"])
    shapes = {}
    for layer in range(len(sizes) - 1):
        n_in, h = sizes[layer], sizes[layer + 1]
        shapes[f"gru{layer}.w_ih"] = (3 * h, n_in)
        shapes[f"gru{layer}.w_hh"] = (3 * h, h)
        shapes[f"gru{layer}.b_ih"] = (3 * h,)
        shapes[f"gru{layer}.b_hh"] = (3 * h,)
    shapes["head.w"] = (dims["out"], sizes[-1])
    shapes["head.b"] = (dims["out"],)
    return shapes


_ARCH_SHAPES = {"resnet1d": _resnet1d_shapes, "gru_vp": _gru_shapes}


@dataclass(frozen=True)
class WeightBundle:
    arch: str
    dims: dict
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(
            self, "params", {k: np.asarray(v, dtype=float) for k, v in self.params.items()}
        )
        self.validate()

    def validate(self) -> None:
        if self.arch not in _ARCH_SHAPES:
            raise ShapeError(f"unknown architecture {self.arch!r}")
        expected = _ARCH_SHAPES[self.arch](self.dims)
        for name, shape in expected.items():
            if name not in self.params:
                raise ShapeError(f"missing parameter {name!r}")
            got = self.params[name].shape
            if got != shape:
                raise ShapeError(f"{name}: shape {got}, expected {shape}")
            if not np.all(np.isfinite(self.params[name])):
                raise ShapeError(f"{name}: non-finite values")
        extra = set(self.params) - set(expected)
        if extra:
            raise ShapeError(f"unexpected parameters {sorted(extra)}")

    def save(self, path) -> None:
        doc = {
            "arch": self.arch,
            "dims": self.dims,
            "params": {k: v.tolist() for k, v in self.params.items()},
        }
        Path(path).write_text(json.dumps(doc))

    @classmethod
    def load(cls, path) -> "WeightBundle":
        doc = json.loads(Path(path).read_text())
        return cls(arch=doc["arch"], dims=doc["dims"], params=doc["params"])

    def with_params(self, params: dict) -> "WeightBundle":
        return WeightBundle(self.arch, self.dims, params)


def random_bundle(arch: str, dims: dict, rng: np.random.Generator, scale: float = 0.3) -> WeightBundle:
    """Small random weights for tests and training initialization."""
    shapes = _ARCH_SHAPES[arch](dims)
    params = {}
    for name, shape in shapes.items():
        if name.endswith(".b"):
            params[name] = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else shape[0]
            params[name] = rng.normal(0.0, scale / np.sqrt(fan_in), size=shape)
    return WeightBundle(arch, dims, params)
