"""The two baseline smoothing architectures and checkpoint serialization.

VDCNN stacks same-resolution 3x3 conv+ReLU layers (default 20 convolutions,
width 64, 3-channel output). ResNet is an SRResNet-style trunk without
upsampling: head conv, residual blocks (conv-BN-ReLU-conv-BN plus skip), a
tail conv+BN joined to the head by a long skip, and a final 3-channel conv;
the default block count gives 37 convolutions in total.

Checkpoints are little-endian, versioned, self-describing containers of
named tensors; save -> load -> forward is bit-identical.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, BatchNormState, Tensor

CHECKPOINT_MAGIC = b"EPSCHKPT"
CHECKPOINT_VERSION = 1


class ModelSpecError(ValueError):
    pass


class CheckpointError(ValueError):
    """Bad magic, wrong version, truncation, or missing tensors."""


@dataclass(frozen=True)
class ModelSpec:
    """Declarative description of a baseline architecture.

    depth counts convolutions for vdcnn; blocks counts residual blocks for
    resnet. global_residual adds the input to the final output; long_skip is
    the resnet head-to-tail connection.
    """

    architecture: str = "vdcnn"
    depth: int = 20
    blocks: int = 17
    width: int = 64
    global_residual: bool = False
    long_skip: bool = True
    in_channels: int = 3
    out_channels: int = 3

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(**d)


def vdcnn_spec(depth: int = 20, width: int = 64, global_residual: bool = False) -> ModelSpec:
    return ModelSpec(architecture="vdcnn", depth=depth, width=width,
                     global_residual=global_residual)


def resnet_spec(blocks: int = 17, width: int = 64, global_residual: bool = False,
                long_skip: bool = True) -> ModelSpec:
    return ModelSpec(architecture="resnet", blocks=blocks, width=width,
                     global_residual=global_residual, long_skip=long_skip)


# ---------------------------------------------------------------------------
# Layers


class Conv2d:
    def __init__(self, in_ch: int, out_ch: int, rng: np.random.Generator, name: str):
        # He fan-in scaling; biases start at zero
        std = np.sqrt(2.0 / (in_ch * 9))
        self.kernel = ad.param(rng.normal(0.0, std, (out_ch, in_ch, 3, 3)),
                               name=f"{name}.kernel")
        self.bias = ad.param(np.zeros(out_ch), name=f"{name}.bias")

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return ad.conv2d(x, self.kernel, self.bias)

    def parameters(self) -> list[Tensor]:
        return [self.kernel, self.bias]

    def state_tensors(self) -> list[tuple[str, np.ndarray]]:
        return []


class BatchNorm2d:
    def __init__(self, channels: int, name: str):
        self.gamma = ad.param(np.ones(channels), name=f"{name}.gamma")
        self.beta = ad.param(np.zeros(channels), name=f"{name}.beta")
        self.state = BatchNormState.for_channels(channels)
        self.name = name

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return ad.batchnorm(x, self.gamma, self.beta, self.state, training)

    def parameters(self) -> list[Tensor]:
        return [self.gamma, self.beta]

    def state_tensors(self) -> list[tuple[str, np.ndarray]]:
        return [(f"{self.name}.running_mean", self.state.running_mean),
                (f"{self.name}.running_var", self.state.running_var)]


class ResidualBlock:
    """conv-BN-ReLU-conv-BN plus the elementwise skip."""

    def __init__(self, width: int, rng: np.random.Generator, name: str):
        self.conv1 = Conv2d(width, width, rng, f"{name}.conv1")
        self.bn1 = BatchNorm2d(width, f"{name}.bn1")
        self.conv2 = Conv2d(width, width, rng, f"{name}.conv2")
        self.bn2 = BatchNorm2d(width, f"{name}.bn2")

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        h = ad.relu(self.bn1(self.conv1(x, training), training))
        h = self.bn2(self.conv2(h, training), training)
        return ad.add(h, x)

    def sublayers(self):
        return [self.conv1, self.bn1, self.conv2, self.bn2]


# ---------------------------------------------------------------------------
# Models


class Model:
    """Common surface: forward on N x C x H x W tensors, named state access."""

    spec: ModelSpec

    def layers(self) -> list:
        raise NotImplementedError

    def forward_tensor(self, x: Tensor, training: bool) -> Tensor:
        raise NotImplementedError

    def parameters(self) -> list[Tensor]:
        return [p for layer in self.layers() for p in layer.parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def named_parameters(self) -> dict[str, np.ndarray]:
        return {p.name: p.data for p in self.parameters()}

    def named_state(self) -> dict[str, np.ndarray]:
        """Parameters plus batchnorm running statistics, in layer order."""
        out = {p.name: p.data for p in self.parameters()}
        for layer in self.layers():
            for name, arr in layer.state_tensors():
                out[name] = arr
        return out

    def bn_layers(self) -> list[BatchNorm2d]:
        return [l for l in self.layers() if isinstance(l, BatchNorm2d)]

    def count_conv_layers(self) -> int:
        return sum(1 for l in self.layers() if isinstance(l, Conv2d))

    def n_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def receptive_field(self) -> int:
        # every conv is 3x3 stride 1 on the main path
        return 1 + 2 * self.count_conv_layers()


class VdcnnModel(Model):
    def __init__(self, spec: ModelSpec, rng: np.random.Generator):
        self.spec = spec
        w, cin, cout = spec.width, spec.in_channels, spec.out_channels
        self.convs = [Conv2d(cin, w, rng, "conv01")]
        for i in range(2, spec.depth):
            self.convs.append(Conv2d(w, w, rng, f"conv{i:02d}"))
        self.convs.append(Conv2d(w, cout, rng, f"conv{spec.depth:02d}"))

    def layers(self) -> list:
        return list(self.convs)

    def forward_tensor(self, x: Tensor, training: bool) -> Tensor:
        h = x
        for conv in self.convs[:-1]:
            h = ad.relu(conv(h, training))
        h = self.convs[-1](h, training)
        if self.spec.global_residual:
            h = ad.add(h, x)
        return h


class ResnetModel(Model):
    def __init__(self, spec: ModelSpec, rng: np.random.Generator):
        self.spec = spec
        w = spec.width
        self.head = Conv2d(spec.in_channels, w, rng, "head.conv")
        self.blocks = [ResidualBlock(w, rng, f"block{i + 1:02d}")
                       for i in range(spec.blocks)]
        self.tail_conv = Conv2d(w, w, rng, "tail.conv")
        self.tail_bn = BatchNorm2d(w, "tail.bn")
        self.out_conv = Conv2d(w, spec.out_channels, rng, "out.conv")

    def layers(self) -> list:
        out = [self.head]
        for b in self.blocks:
            out.extend(b.sublayers())
        out.extend([self.tail_conv, self.tail_bn, self.out_conv])
        return out

    def forward_tensor(self, x: Tensor, training: bool) -> Tensor:
        head = ad.relu(self.head(x, training))
        h = head
        for block in self.blocks:
            h = block(h, training)
        h = self.tail_bn(self.tail_conv(h, training), training)
        if self.spec.long_skip:
            h = ad.add(h, head)
        h = self.out_conv(h, training)
        if self.spec.global_residual:
            h = ad.add(h, x)
        return h


def build_vdcnn(spec: ModelSpec, seed: int = 0) -> VdcnnModel:
    if spec.architecture != "vdcnn":
        raise ModelSpecError(f"expected a vdcnn spec, got {spec.architecture!r}")
    if spec.depth < 2:
        raise ModelSpecError(f"vdcnn depth must be >= 2, got {spec.depth}")
    return VdcnnModel(spec, np.random.default_rng(seed))


def build_resnet(spec: ModelSpec, seed: int = 0) -> ResnetModel:
    if spec.architecture != "resnet":
        raise ModelSpecError(f"expected a resnet spec, got {spec.architecture!r}")
    if spec.blocks < 1:
        raise ModelSpecError(f"resnet block count must be >= 1, got {spec.blocks}")
    return ResnetModel(spec, np.random.default_rng(seed))


def build_model(spec: ModelSpec, seed: int = 0) -> Model:
    if spec.architecture == "vdcnn":
        return build_vdcnn(spec, seed)
    if spec.architecture == "resnet":
        return build_resnet(spec, seed)
    raise ModelSpecError(f"unknown architecture {spec.architecture!r}")


def forward(model: Model, image: np.ndarray) -> np.ndarray:
    """Full-image inference: H x W x 3 in, H x W x 3 out, clamped to [0, 1].

    Uses running batchnorm statistics (inference mode); spatial dims must be
    at least 3 so every 3x3 tap sees real pixels.
    """
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ad.ShapeError(f"image must be H x W x 3, got {image.shape}")
    if image.shape[0] < 3 or image.shape[1] < 3:
        raise ad.ShapeError(f"image spatial dims must be >= 3, got {image.shape[:2]}")
    x = Tensor(np.transpose(image, (2, 0, 1))[None])
    out = model.forward_tensor(x, training=False)
    return np.clip(np.transpose(out.data[0], (1, 2, 0)), 0.0, 1.0)


# ---------------------------------------------------------------------------
# Checkpoints


@dataclass
class Checkpoint:
    model: Model
    optimizer: Optional[AdamState] = None
    metadata: dict = field(default_factory=dict)


def _dtype_tag(arr: np.ndarray) -> str:
    return {"float64": "<f8", "float32": "<f4"}[str(arr.dtype)]


def save_checkpoint(model: Model, path, optimizer: Optional[AdamState] = None,
                    metadata: Optional[dict] = None) -> None:
    named = dict(model.named_state())
    if optimizer is not None and optimizer.m:
        for p, m, v in zip(model.parameters(), optimizer.m, optimizer.v):
            named[f"optim.m.{p.name}"] = m
            named[f"optim.v.{p.name}"] = v
    entries = []
    offset = 0
    blobs = []
    for name, arr in named.items():
        arr = np.ascontiguousarray(arr)
        blob = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
        entries.append({"name": name, "shape": list(arr.shape),
                        "dtype": _dtype_tag(arr), "offset": offset,
                        "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    header = {
        "format_version": CHECKPOINT_VERSION,
        "model_spec": model.spec.to_dict(),
        "tensors": entries,
        "bn_initialized": {bn.name: bn.state.initialized for bn in model.bn_layers()},
        "optimizer": None if optimizer is None else {
            "lr": optimizer.lr, "beta1": optimizer.beta1, "beta2": optimizer.beta2,
            "eps": optimizer.eps, "step": optimizer.step},
        "metadata": metadata or {},
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<Q", len(header_bytes)))
        f.write(header_bytes)
        for blob in blobs:
            f.write(blob)


def read_checkpoint(path) -> Checkpoint:
    """Load the full checkpoint: model, optimizer state and metadata."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < len(CHECKPOINT_MAGIC) + 12 or not raw.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic bytes)")
    pos = len(CHECKPOINT_MAGIC)
    (version,) = struct.unpack_from("<I", raw, pos)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: format version {version} unsupported (expected {CHECKPOINT_VERSION})")
    (hlen,) = struct.unpack_from("<Q", raw, pos + 4)
    hstart = pos + 12
    if len(raw) < hstart + hlen:
        raise CheckpointError(f"{path}: truncated header")
    header = json.loads(raw[hstart:hstart + hlen].decode("utf-8"))
    payload = raw[hstart + hlen:]

    arrays = {}
    for e in header["tensors"]:
        end = e["offset"] + e["nbytes"]
        if end > len(payload):
            raise CheckpointError(f"{path}: truncated payload at tensor {e['name']!r}")
        arrays[e["name"]] = np.frombuffer(
            payload[e["offset"]:end], dtype=np.dtype(e["dtype"])
        ).reshape(e["shape"]).copy()

    spec = ModelSpec.from_dict(header["model_spec"])
    model = build_model(spec, seed=0)
    for p in model.parameters():
        if p.name not in arrays:
            raise CheckpointError(f"{path}: missing tensor {p.name!r}")
        if tuple(arrays[p.name].shape) != p.shape:
            raise CheckpointError(
                f"{path}: tensor {p.name!r} has shape {arrays[p.name].shape}, "
                f"expected {p.shape}")
        p.data = arrays[p.name]
    for bn in model.bn_layers():
        for suffix in ("running_mean", "running_var"):
            key = f"{bn.name}.{suffix}"
            if key not in arrays:
                raise CheckpointError(f"{path}: missing tensor {key!r}")
            setattr(bn.state, suffix, arrays[key])
        bn.state.initialized = bool(header["bn_initialized"].get(bn.name, False))

    optimizer = None
    if header["optimizer"] is not None:
        o = header["optimizer"]
        optimizer = AdamState(lr=o["lr"], beta1=o["beta1"], beta2=o["beta2"],
                              eps=o["eps"], step=o["step"])
        if any(f"optim.m.{p.name}" in arrays for p in model.parameters()):
            optimizer.m = [arrays[f"optim.m.{p.name}"] for p in model.parameters()]
            optimizer.v = [arrays[f"optim.v.{p.name}"] for p in model.parameters()]
    return Checkpoint(model=model, optimizer=optimizer, metadata=header["metadata"])


def load_checkpoint(path) -> Model:
    """Load just the model (the common inference path)."""
    return read_checkpoint(path).model
