"""Spatio-temporal terrain classifier: conv/CCCP blocks, optional GSP and LSTM.

Variants:

* ``M1`` conv blocks -> flatten -> FC stack -> softmax
* ``M2`` conv blocks -> GSP -> FC stack -> softmax
* ``M3`` M1 features per clip -> LSTM over the window -> softmax
* ``M4`` M2 features per clip -> LSTM over the window -> softmax
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .layers import (
    GSP_BRANCHES,
    Conv1d,
    Dense,
    Dropout,
    Flatten,
    GlobalStatPool,
    LSTM,
    LayerStateError,
    MaxPool1d,
    ReLU,
    _check_finite,
    cross_entropy,
    softmax,
)

VARIANTS = ("M1", "M2", "M3", "M4")
CHECKPOINT_MAGIC = b"TNET"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class NetworkSpec:
    variant: str = "M4"
    in_bins: int = 512
    in_frames: int = 7
    channels: tuple[int, ...] = (64, 128, 256)
    fc_widths: tuple[int, ...] = (512, 256, 128)
    lstm_hidden: int = 128
    dropout: float = 0.5
    num_classes: int = 9
    init_gain: float = 1.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        object.__setattr__(self, "fc_widths", tuple(int(c) for c in self.fc_widths))
        if not self.channels or min(self.channels) < 1 or self.in_frames < 1:
            raise ValueError("invalid channel widths or frame count")

    @property
    def uses_gsp(self) -> bool:
        return self.variant in ("M2", "M4")

    @property
    def uses_lstm(self) -> bool:
        return self.variant in ("M3", "M4")

    @property
    def pooled_frames(self) -> int:
        t = self.in_frames
        for _ in self.channels:
            t = -(-t // 2)
        return t

    @property
    def feature_width(self) -> int:
        """Width of the vector handed from the conv stack to the first FC layer."""
        c = self.channels[-1]
        return GSP_BRANCHES * c if self.uses_gsp else c * self.pooled_frames

    def parameter_count(self) -> int:
        """Closed-form count of learnable scalars."""
        total = 0
        c_in = self.in_bins
        for c in self.channels:
            # conv3, cccp, conv3, cccp
            total += (3 * c_in * c + c) + (c * c + c) + (3 * c * c + c) + (c * c + c)
            c_in = c
        n = self.feature_width
        for w in self.fc_widths:
            total += n * w + w
            n = w
        if self.uses_lstm:
            H = self.lstm_hidden
            total += 4 * (H * n + H * H + H)
            n = H
        return total + n * self.num_classes + self.num_classes

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        d["fc_widths"] = list(self.fc_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(**d)


class Network:
    """Layered model with a flat, ordered parameter store.

    Input windows have shape ``(batch, L, bins, frames)``; L must be 1 for M1/M2.
    """

    def __init__(self, spec: NetworkSpec, seed: int = 0):
        self.spec = spec
        rng = np.random.default_rng(seed)
        gain = spec.init_gain
        self.conv_layers = []
        c_in = spec.in_bins
        for b, c in enumerate(spec.channels, start=1):
            self.conv_layers += [
                Conv1d(c_in, c, 3, rng, name=f"conv{2 * b - 1}", gain=gain), ReLU(),
                Conv1d(c, c, 1, rng, name=f"cccp{2 * b - 1}", gain=gain), ReLU(),
                Conv1d(c, c, 3, rng, name=f"conv{2 * b}", gain=gain), ReLU(),
                Conv1d(c, c, 1, rng, name=f"cccp{2 * b}", gain=gain), ReLU(),
                MaxPool1d(),
            ]
            c_in = c
        self.pool = GlobalStatPool() if spec.uses_gsp else Flatten()
        self.fc_layers = []
        n = spec.feature_width
        for k, w in enumerate(spec.fc_widths):
            self.fc_layers += [Dense(n, w, rng, name=f"fc{10 + k}", gain=gain), ReLU(), Dropout(spec.dropout)]
            n = w
        self.lstm = LSTM(n, spec.lstm_hidden, rng) if spec.uses_lstm else None
        if self.lstm is not None:
            n = spec.lstm_hidden
        self.head = Dense(n, spec.num_classes, rng, name="head")
        self._probs = None
        self._shape = None

    @property
    def layers(self):
        out = [*self.conv_layers, self.pool, *self.fc_layers]
        if self.lstm is not None:
            out.append(self.lstm)
        out.append(self.head)
        return out

    def named_params(self) -> list[tuple[str, np.ndarray]]:
        """Parameters in declaration order."""
        return [(f"{layer.name}.{k}", v) for layer in self.layers for k, v in layer.params.items()]

    def named_grads(self) -> list[tuple[str, np.ndarray]]:
        return [(f"{layer.name}.{k}", layer.grads[k]) for layer in self.layers for k in layer.params]

    def params(self) -> dict[str, np.ndarray]:
        return dict(self.named_params())

    def grads(self) -> dict[str, np.ndarray]:
        return dict(self.named_grads())

    def set_params(self, values: dict[str, np.ndarray]) -> None:
        for layer in self.layers:
            for k in layer.params:
                key = f"{layer.name}.{k}"
                arr = np.asarray(values[key], dtype=np.float64)
                if arr.shape != layer.params[k].shape:
                    raise ValueError(f"{key}: shape {arr.shape} != {layer.params[k].shape}")
                layer.params[k] = arr.copy()

    def zero_grad(self):
        for layer in self.layers:
            layer.zero_grad()

    def num_params(self) -> int:
        return sum(v.size for _, v in self.named_params())

    def forward(self, windows: np.ndarray, training: bool = False,
                rng: np.random.Generator | None = None) -> np.ndarray:
        """Per-step class probabilities with shape ``(batch, L, classes)``."""
        windows = np.asarray(windows, dtype=np.float64)
        if windows.ndim == 3:
            windows = windows[:, None]
        B, L, F, T = windows.shape
        spec = self.spec
        if (F, T) != (spec.in_bins, spec.in_frames):
            raise ValueError(f"expected {spec.in_bins}x{spec.in_frames} spectrograms, got {F}x{T}")
        if L != 1 and not spec.uses_lstm:
            raise ValueError(f"{spec.variant} takes single clips (L=1), got L={L}")
        # frequency bins are channels; convolve along frames
        x = windows.reshape(B * L, F, T).transpose(0, 2, 1)
        for layer in [*self.conv_layers, self.pool, *self.fc_layers]:
            x = layer.forward(x, training, rng)
            _check_finite(layer.name, x)
        x = x.reshape(B, L, -1)
        if self.lstm is not None:
            x = self.lstm.forward(x, training, rng)
        logits = self.head.forward(x)
        probs = softmax(logits)
        self._probs = probs
        self._shape = (B, L)
        return probs

    def backward(self, labels: np.ndarray) -> float:
        """Cross-entropy on the last step; accumulates gradients and returns the loss."""
        if self._probs is None:
            raise LayerStateError("backward without a cached forward pass")
        probs, (B, L) = self._probs, self._shape
        self._probs = None
        labels = np.asarray(labels, dtype=int)
        loss, dlast = cross_entropy(probs[:, -1], labels)
        dlogits = np.zeros_like(probs)
        dlogits[:, -1] = dlast
        dx = self.head.backward(dlogits)
        if self.lstm is not None:
            dx = self.lstm.backward(dx)
        dx = dx.reshape(B * L, -1)
        for layer in reversed([*self.conv_layers, self.pool, *self.fc_layers]):
            dx = layer.backward(dx)
        return loss

    def loss_and_grad(self, windows, labels, rng=None, training=True) -> float:
        self.zero_grad()
        self.forward(windows, training=training, rng=rng)
        return self.backward(labels)

    def predict(self, windows: np.ndarray, batch_size: int = 256) -> np.ndarray:
        """Last-step probabilities in inference mode."""
        out = [self.forward(windows[s:s + batch_size])[:, -1]
               for s in range(0, len(windows), batch_size)]
        self._probs = None
        return np.concatenate(out) if out else np.zeros((0, self.spec.num_classes))

    def save(self, path: str | Path, metadata: dict | None = None) -> None:
        path = Path(path)
        spec_bytes = json.dumps(self.spec.to_dict(), sort_keys=True).encode()
        chunks = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(spec_bytes)),
                  spec_bytes]
        params = self.named_params()
        chunks.append(struct.pack("<I", len(params)))
        for name, arr in params:
            nb = name.encode()
            chunks.append(struct.pack("<I", len(nb)) + nb)
            chunks.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
            chunks.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        path.write_bytes(b"".join(chunks))
        sidecar = {"spec": self.spec.to_dict(), "num_params": self.num_params(),
                   "format_version": CHECKPOINT_VERSION, "metadata": metadata or {}}
        path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> "Network":
        raw = Path(path).read_bytes()
        if raw[:4] != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a TNET checkpoint")
        version, n = struct.unpack("<II", raw[4:12])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        pos = 12
        spec = NetworkSpec.from_dict(json.loads(raw[pos:pos + n]))
        pos += n
        (count,) = struct.unpack("<I", raw[pos:pos + 4])
        pos += 4
        values = {}
        for _ in range(count):
            (nl,) = struct.unpack("<I", raw[pos:pos + 4])
            name = raw[pos + 4:pos + 4 + nl].decode()
            pos += 4 + nl
            (ndim,) = struct.unpack("<I", raw[pos:pos + 4])
            shape = struct.unpack(f"<{ndim}I", raw[pos + 4:pos + 4 + 4 * ndim])
            pos += 4 + 4 * ndim
            size = int(np.prod(shape)) * 8
            values[name] = np.frombuffer(raw[pos:pos + size], dtype="<f8").reshape(shape)
            pos += size
        net = cls(spec)
        net.set_params(values)
        return net
