"""Segmentation network: builder, forward/backward, optimizer, checkpoints.

The network is a 1-D residual classifier emitting one occupancy probability
per frequency bin: a seven-convolution stem, four residual stages of two
blocks (the first block of stages 2-4 downsamples through a projected
shortcut), average pooling, and a dense head with a sigmoid.  The same
topology is built over complex parameters (spectrum in, complex
probabilities out) or real parameters (magnitude spectrum in, one
probability per bin out).
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, asdict

import numpy as np

from .clayers import (CAvgPool1d, CBatchNorm1d, CConv1d, CLinear, CReLU, CSigmoid,
                      Flatten, Layer)
from .errors import (ConfigInvalid, CorruptBlob, FormatVersionMismatch, ModeMismatch,
                     ShapeMismatch)

DEFAULT_STEM = ((7, 2, 16), (3, 1, 16), (3, 2, 32), (3, 1, 32),
                (3, 2, 64), (3, 1, 64), (3, 2, 64))

_DTYPES = {
    ("complex", "single"): np.complex64,
    ("complex", "double"): np.complex128,
    ("real", "single"): np.float32,
    ("real", "double"): np.float64,
}


@dataclass
class ModelConfig:
    input_bins: int = 1024
    mode: str = "complex"
    stem_spec: tuple = DEFAULT_STEM
    stage_channels: tuple = (64, 128, 256, 512)
    blocks_per_stage: int = 2
    head_pool_len: int | None = None
    seed: int = 0

    def validate(self):
        if self.mode not in ("complex", "real"):
            raise ConfigInvalid(f"mode must be complex or real, got {self.mode!r}")
        if self.input_bins < 256:
            raise ConfigInvalid("input_bins must be >= 256")
        if self.blocks_per_stage < 1:
            raise ConfigInvalid("blocks_per_stage must be >= 1")
        if len(self.stem_spec) < 1 or any(len(s) != 3 for s in self.stem_spec):
            raise ConfigInvalid("stem_spec must list (kernel, stride, channels) triples")
        length = self.input_bins
        for k, s, _ in self.stem_spec:
            if length % s:
                raise ConfigInvalid("stem downsampling must divide input_bins")
            length //= s
        for _ in self.stage_channels[1:]:
            if length % 2:
                raise ConfigInvalid("stage downsampling must divide the stem output length")
            length //= 2
        pool = self.resolved_pool_len(length)
        if pool < 1 or length % pool:
            raise ConfigInvalid(f"cannot pool length {length} to {pool} positions")
        return self

    def resolved_pool_len(self, body_len: int) -> int:
        return self.head_pool_len if self.head_pool_len is not None else min(16, body_len)


class ResidualBlock:
    """conv-bn-relu-conv-bn plus shortcut; projected when shape changes."""

    def __init__(self, in_ch: int, out_ch: int, stride: int, dtype, rng):
        self.conv1 = CConv1d(in_ch, out_ch, 3, stride, 1, dtype=dtype, rng=rng)
        self.bn1 = CBatchNorm1d(out_ch, dtype=dtype)
        self.relu1 = CReLU()
        self.conv2 = CConv1d(out_ch, out_ch, 3, 1, 1, dtype=dtype, rng=rng)
        self.bn2 = CBatchNorm1d(out_ch, dtype=dtype)
        self.relu_out = CReLU()
        self.projects = stride != 1 or in_ch != out_ch
        if self.projects:
            self.proj = CConv1d(in_ch, out_ch, 1, stride, 0, dtype=dtype, rng=rng)
            self.proj_bn = CBatchNorm1d(out_ch, dtype=dtype)

    def sublayers(self) -> list[Layer]:
        layers = [self.conv1, self.bn1, self.relu1, self.conv2, self.bn2]
        if self.projects:
            layers += [self.proj, self.proj_bn]
        return layers + [self.relu_out]

    def forward(self, x, train=True):
        main = self.conv1.forward(x, train)
        main = self.bn1.forward(main, train)
        main = self.relu1.forward(main, train)
        main = self.conv2.forward(main, train)
        main = self.bn2.forward(main, train)
        if self.projects:
            skip = self.proj_bn.forward(self.proj.forward(x, train), train)
        else:
            skip = x
        return self.relu_out.forward(main + skip, train)

    def backward(self, g):
        g = self.relu_out.backward(g)
        gm = self.bn2.backward(g)
        gm = self.conv2.backward(gm)
        gm = self.relu1.backward(gm)
        gm = self.bn1.backward(gm)
        gm = self.conv1.backward(gm)
        if self.projects:
            gs = self.proj.backward(self.proj_bn.backward(g))
        else:
            gs = g
        return gm + gs


class Model:
    """Ordered layer graph with a flat, deterministic parameter listing."""

    def __init__(self, config: ModelConfig, precision: str):
        config.validate()
        if precision not in ("single", "double"):
            raise ConfigInvalid(f"precision must be single or double, got {precision!r}")
        self.config = config
        self.precision = precision
        self.mode = config.mode
        self.dtype = np.dtype(_DTYPES[(config.mode, precision)])
        rng = np.random.default_rng(np.random.SeedSequence(config.seed))

        self.stem: list = []
        in_ch = 1
        length = config.input_bins
        for k, s, c in config.stem_spec:
            self.stem.append(CConv1d(in_ch, c, k, s, k // 2, dtype=self.dtype, rng=rng))
            self.stem.append(CBatchNorm1d(c, dtype=self.dtype))
            self.stem.append(CReLU())
            in_ch = c
            length //= s

        self.blocks: list[ResidualBlock] = []
        for si, ch in enumerate(config.stage_channels):
            for bi in range(config.blocks_per_stage):
                stride = 2 if (si > 0 and bi == 0) else 1
                self.blocks.append(ResidualBlock(in_ch, ch, stride, self.dtype, rng))
                in_ch = ch
                length //= stride

        pool_len = config.resolved_pool_len(length)
        self.pool = CAvgPool1d.to_length(length, pool_len)
        self.flatten = Flatten()
        self.head = CLinear(in_ch * pool_len, config.input_bins, dtype=self.dtype, rng=rng)
        self.out_act = CSigmoid()
        self.body_len = length
        self.pool_len = pool_len

    # -- structure ----------------------------------------------------------
    def layers(self) -> list[Layer]:
        out = list(self.stem)
        for b in self.blocks:
            out.extend(b.sublayers())
        out.extend([self.pool, self.flatten, self.head, self.out_act])
        return out

    def param_entries(self):
        """(layer, name) pairs for every trainable array, fixed order."""
        entries = []
        for layer in self.layers():
            for name, _ in layer.param_items():
                entries.append((layer, name))
        return entries

    def state_entries(self):
        """Trainable parameters followed by batch-norm running buffers."""
        entries = [(layer, name, "param") for layer, name in self.param_entries()]
        for layer in self.layers():
            if isinstance(layer, CBatchNorm1d):
                names = ["running_mean"]
                names += ["running_vxx", "running_vyy", "running_vxy"] if layer.complex \
                    else ["running_var"]
                for n in names:
                    entries.append((layer, n, "buffer"))
        return entries

    def param_count(self) -> int:
        return int(sum(layer.params[name].size for layer, name in self.param_entries()))

    # -- execution ------------------------------------------------------------
    def forward(self, batch: np.ndarray, train: bool = True) -> np.ndarray:
        x = np.asarray(batch)
        if x.ndim != 2 or x.shape[1] != self.config.input_bins:
            raise ShapeMismatch(f"expected [batch, {self.config.input_bins}], got {x.shape}")
        if (self.mode == "complex") != np.iscomplexobj(x):
            raise ShapeMismatch(f"{self.mode}-mode model fed {x.dtype} input")
        x = x.astype(self.dtype, copy=False)[:, None, :]
        for layer in self.stem:
            x = layer.forward(x, train)
        for block in self.blocks:
            x = block.forward(x, train)
        x = self.pool.forward(x, train)
        x = self.flatten.forward(x, train)
        x = self.head.forward(x, train)
        return self.out_act.forward(x, train)

    def backward(self, g: np.ndarray) -> np.ndarray:
        g = np.asarray(g).astype(self.dtype, copy=False)
        g = self.head.backward(self.out_act.backward(g))
        g = self.pool.backward(self.flatten.backward(g))
        for block in reversed(self.blocks):
            g = block.backward(g)
        for layer in reversed(self.stem):
            g = layer.backward(g)
        return g[:, 0, :]


def build(config: ModelConfig, precision: str = "single") -> Model:
    """Construct the network with seed-deterministic initial weights."""
    return Model(config, precision)


# -- optimizer ------------------------------------------------------------------

def _float_view(a: np.ndarray) -> np.ndarray:
    if np.iscomplexobj(a):
        return a.view(np.float32 if a.dtype == np.complex64 else np.float64)
    return a


class AdamState:
    """Adam moments held independently for real and imaginary parts.

    Complex parameters are updated through their interleaved float view,
    which is exactly an independent Adam step on w_x and w_y.
    """

    def __init__(self, model: Model, learning_rate: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.learning_rate = learning_rate
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self.moments = []
        for layer, name in model.param_entries():
            view = _float_view(layer.params[name])
            self.moments.append((np.zeros_like(view), np.zeros_like(view), np.empty_like(view)))

    def step(self, model: Model):
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.step_count
        bc2 = 1.0 - b2 ** self.step_count
        for (layer, name), (m, v, upd) in zip(model.param_entries(), self.moments):
            g = layer.grads.get(name)
            if g is None:
                raise ShapeMismatch(f"missing gradient for {name}")
            gf = _float_view(np.ascontiguousarray(g)).astype(m.dtype, copy=False)
            if gf.shape != m.shape:
                raise ShapeMismatch(f"gradient shape {gf.shape} != moment {m.shape}")
            m *= b1
            m += (1.0 - b1) * gf
            np.multiply(gf, gf, out=upd)
            v *= b2
            v += (1.0 - b2) * upd
            np.multiply(v, 1.0 / bc2, out=upd)
            np.sqrt(upd, out=upd)
            upd += self.eps
            np.divide(m, upd, out=upd)
            upd *= self.learning_rate / bc1
            pf = _float_view(layer.params[name])
            pf -= upd


# -- checkpoint format ------------------------------------------------------------
#
# file = b"CMSN1" | u32 header_len | header JSON (utf-8) | raw blob | u32 crc32
# blob = for each state array, little-endian values at the stored precision;
#        complex arrays store the full real part then the full imaginary part.
# crc32 covers header_len, header, and blob.

CKPT_MAGIC = b"CMSN1"
CKPT_VERSION = 1


def _blob_dtype(precision: str) -> np.dtype:
    return np.dtype("<f4" if precision == "single" else "<f8")


def save_checkpoint(path, model: Model, epoch: int = 0, metrics: dict | None = None):
    """Serialize parameters plus batch-norm buffers with a CRC trailer."""
    rd = _blob_dtype(model.precision)
    chunks = []
    n_values = 0
    for layer, name, kind in model.state_entries():
        a = layer.params[name] if kind == "param" else getattr(layer, name)
        if np.iscomplexobj(a):
            chunks.append(np.ascontiguousarray(a.real).astype(rd).tobytes())
            chunks.append(np.ascontiguousarray(a.imag).astype(rd).tobytes())
            n_values += 2 * a.size
        else:
            chunks.append(np.ascontiguousarray(a).astype(rd).tobytes())
            n_values += a.size
    blob = b"".join(chunks)
    header = {
        "format_version": CKPT_VERSION,
        "mode": model.mode,
        "precision": model.precision,
        "epoch": int(epoch),
        "metrics": metrics or {},
        "config": _config_to_json(model.config),
        "value_count": int(n_values),
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    hlen = len(hbytes).to_bytes(4, "little")
    crc = zlib.crc32(hlen + hbytes + blob).to_bytes(4, "little")
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC + hlen + hbytes + blob + crc)


def load_checkpoint(path, expected_mode: str | None = None):
    """Rebuild the model stored at `path`; returns (model, header)."""
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < len(CKPT_MAGIC) + 8 or not data.startswith(CKPT_MAGIC):
        raise FormatVersionMismatch("not a model checkpoint (bad magic)")
    off = len(CKPT_MAGIC)
    hlen = int.from_bytes(data[off:off + 4], "little")
    off += 4
    if off + hlen + 4 > len(data):
        raise CorruptBlob("truncated checkpoint header")
    hbytes = data[off:off + hlen]
    off += hlen
    blob = data[off:-4]
    crc_stored = int.from_bytes(data[-4:], "little")
    if zlib.crc32(data[len(CKPT_MAGIC):-4]) != crc_stored:
        raise CorruptBlob("checkpoint checksum mismatch")
    header = json.loads(hbytes.decode("utf-8"))
    if header.get("format_version") != CKPT_VERSION:
        raise FormatVersionMismatch(f"unsupported checkpoint version {header.get('format_version')}")
    if expected_mode is not None and header["mode"] != expected_mode:
        raise ModeMismatch(f"checkpoint is {header['mode']}-mode, expected {expected_mode}")
    config = _config_from_json(header["config"])
    model = Model(config, header["precision"])
    rd = _blob_dtype(header["precision"])
    expected = header["value_count"] * rd.itemsize
    if len(blob) != expected:
        raise CorruptBlob(f"blob length {len(blob)} != declared {expected}")
    pos = 0

    def take(n):
        nonlocal pos
        out = np.frombuffer(blob, dtype=rd, count=n, offset=pos)
        pos += n * rd.itemsize
        return out

    for layer, name, kind in model.state_entries():
        a = layer.params[name] if kind == "param" else getattr(layer, name)
        if np.iscomplexobj(a):
            re = take(a.size).reshape(a.shape)
            im = take(a.size).reshape(a.shape)
            new = (re + 1j * im).astype(a.dtype)
        else:
            new = take(a.size).reshape(a.shape).astype(a.dtype)
        if kind == "param":
            layer.params[name] = np.ascontiguousarray(new)
        else:
            setattr(layer, name, np.ascontiguousarray(new))
    return model, header


def _config_to_json(config: ModelConfig) -> dict:
    d = asdict(config)
    d["stem_spec"] = [list(s) for s in config.stem_spec]
    d["stage_channels"] = list(config.stage_channels)
    return d


def _config_from_json(d: dict) -> ModelConfig:
    return ModelConfig(
        input_bins=int(d["input_bins"]),
        mode=d["mode"],
        stem_spec=tuple(tuple(s) for s in d["stem_spec"]),
        stage_channels=tuple(d["stage_channels"]),
        blocks_per_stage=int(d["blocks_per_stage"]),
        head_pool_len=d.get("head_pool_len"),
        seed=int(d["seed"]),
    )
