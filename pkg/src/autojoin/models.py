"""Encoder / decoder / regression head at desk scale.

The ``nvidia-desk`` preset keeps the PilotNet topology (five convolutions
then dense 100-50-10-1) with narrower channels and 64x64 input. The first
seven layers form the encoder, the last two the regression head, and the
decoder is five layers (dense, then four stride-2 4x4 transposed convolutions
that each double the resolution) ending in a Sigmoid.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass(frozen=True)
class ArchitectureSpec:
    name: str = "nvidia-desk"
    height: int = 64
    width: int = 64
    # (out_channels, kernel, stride) per encoder convolution
    conv_layers: tuple = ((12, 5, 2), (18, 5, 2), (24, 5, 2), (32, 3, 1), (32, 3, 1))
    encoder_dense: tuple = (100, 50)
    head_hidden: int = 10
    decoder_seed_channels: int = 16
    decoder_channels: tuple = (16, 12, 8)
    output_scale: float = 30.0  # head output is multiplied by this to give degrees
    init: str = "fan_in_uniform"

    @property
    def latent_dim(self):
        return self.encoder_dense[-1]

    @property
    def decoder_seed_size(self):
        n_up = len(self.decoder_channels) + 1
        return self.height // 2**n_up, self.width // 2**n_up

    def conv_output_size(self):
        h, w = self.height, self.width
        for _, k, s in self.conv_layers:
            h, w = (h - k) // s + 1, (w - k) // s + 1
        return h, w

    def validate(self):
        if self.init != "fan_in_uniform":
            raise ValueError(f"unsupported init scheme {self.init!r}")
        if len(self.conv_layers) + len(self.encoder_dense) != 7:
            raise ValueError("encoder must have exactly 7 parameterised layers")
        if len(self.decoder_channels) + 2 != 5:
            raise ValueError("decoder must have exactly 5 layers")
        h, w = self.conv_output_size()
        if h < 1 or w < 1:
            raise ValueError(f"input {self.height}x{self.width} is too small for the convolution stack")
        n_up = len(self.decoder_channels) + 1
        if self.height % 2**n_up or self.width % 2**n_up:
            raise ValueError(f"input dims must be divisible by {2**n_up} for the decoder to match")


PRESETS = {"nvidia-desk": ArchitectureSpec()}


def preset(name):
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown architecture preset {name!r}; known: {', '.join(PRESETS)}") from None


def _uniform(rng, shape, fan_in, gain):
    bound = gain * np.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class JointModel:
    """Parameter container plus the encode / decode / predict forward maps."""

    def __init__(self, spec, params):
        self.spec = spec
        self.params = params

    # parameter groups --------------------------------------------------
    def group(self, prefix):
        return [p for name, p in self.params.items() if name.startswith(prefix)]

    @property
    def has_decoder(self):
        return any(name.startswith("decoder.") for name in self.params)

    def trainable(self, include_decoder=True):
        return [p for n, p in self.params.items() if include_decoder or not n.startswith("decoder.")]

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.params.items()}

    def load_state_dict(self, state, strict=True):
        missing = [n for n in self.params if n not in state]
        extra = [n for n in state if n not in self.params]
        if strict and (missing or extra):
            raise ValueError(f"checkpoint mismatch; missing={missing} unexpected={extra}")
        for name, arr in state.items():
            if name not in self.params:
                continue
            p = self.params[name]
            if p.shape != tuple(arr.shape):
                raise ValueError(f"parameter {name}: checkpoint shape {arr.shape} != model shape {p.shape}")
            p.data[...] = arr

    def without_decoder(self):
        kept = {n: p for n, p in self.params.items() if not n.startswith("decoder.")}
        return JointModel(self.spec, kept)

    def checksum(self, include_decoder=False):
        h = hashlib.sha256()
        for name in sorted(self.params):
            if not include_decoder and name.startswith("decoder."):
                continue
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.params[name].data, dtype="<f4").tobytes())
        return h.hexdigest()

    # forward maps ------------------------------------------------------
    def encode(self, x):
        spec = self.spec
        if x.ndim != 4 or x.shape[1:] != (3, spec.height, spec.width):
            raise ValueError(f"encoder expects N x 3 x {spec.height} x {spec.width}, got {x.shape}")
        h = ad.add(x, Tensor(-0.5, dtype=x.dtype))
        for i, (_, _, stride) in enumerate(spec.conv_layers):
            h = ad.relu(ad.conv2d(h, self.params[f"encoder.conv{i}.w"], self.params[f"encoder.conv{i}.b"], stride))
        h = ad.flatten(h)
        for i in range(len(spec.encoder_dense)):
            h = ad.relu(ad.dense(h, self.params[f"encoder.fc{i}.w"], self.params[f"encoder.fc{i}.b"]))
        return h

    def decode(self, z):
        if not self.has_decoder:
            raise RuntimeError("decoder has been detached from this model")
        spec = self.spec
        if z.ndim != 2 or z.shape[1] != spec.latent_dim:
            raise ValueError(f"decoder expects N x {spec.latent_dim} latents, got {z.shape}")
        sh, sw = spec.decoder_seed_size
        h = ad.relu(ad.dense(z, self.params["decoder.fc.w"], self.params["decoder.fc.b"]))
        h = ad.reshape(h, (z.shape[0], spec.decoder_seed_channels, sh, sw))
        n_conv = len(spec.decoder_channels) + 1
        for i in range(n_conv):
            h = ad.conv_transpose2d(h, self.params[f"decoder.up{i}.w"], self.params[f"decoder.up{i}.b"], 2, 1)
            h = ad.relu(h) if i < n_conv - 1 else ad.sigmoid(h)
        return h

    def predict(self, z):
        if z.ndim != 2 or z.shape[1] != self.spec.latent_dim:
            raise ValueError(f"head expects N x {self.spec.latent_dim} latents, got {z.shape}")
        h = ad.relu(ad.dense(z, self.params["head.fc0.w"], self.params["head.fc0.b"]))
        out = ad.dense(h, self.params["head.fc1.w"], self.params["head.fc1.b"])
        return ad.scale(out, self.spec.output_scale)

    def forward(self, x, reconstruct=True):
        z = self.encode(x)
        angles = self.predict(z)
        recon = self.decode(z) if reconstruct else None
        return angles, recon

    def predict_angles(self, images, batch_size=256):
        """Inference on raw HWC images (uint8 or float in [0, 255]); returns N degrees."""
        out = []
        for start in range(0, len(images), batch_size):
            x = Tensor(to_batch(images[start:start + batch_size]))
            out.append(self.predict(self.encode(x)).data[:, 0])
        return np.concatenate(out).astype(np.float64) if out else np.zeros(0)


def to_batch(images):
    """HWC images in [0, 255] -> float NCHW in [0, 1] at the default dtype."""
    arr = np.asarray(images, dtype=np.float32)
    if arr.ndim == 3:
        arr = arr[None]
    return (arr.transpose(0, 3, 1, 2) / np.float32(255.0)).astype(ad.get_default_dtype())


def from_batch(batch):
    """Inverse of :func:`to_batch` (no quantisation)."""
    return np.asarray(batch).transpose(0, 2, 3, 1) * 255.0


def build_nvidia_desk(spec=None, seed=0):
    """Fresh model with deterministic fan-in-uniform weights and zero biases."""
    spec = spec or PRESETS["nvidia-desk"]
    spec.validate()
    rng = np.random.default_rng(seed)
    dtype = ad.get_default_dtype()
    relu_gain = np.sqrt(2.0)
    params = {}

    def conv(name, cin, cout, k, gain):
        params[f"{name}.w"] = _uniform(rng, (cout, cin, k, k), cin * k * k, gain)
        params[f"{name}.b"] = np.zeros(cout)

    def fc(name, fin, fout, gain):
        params[f"{name}.w"] = _uniform(rng, (fin, fout), fin, gain)
        params[f"{name}.b"] = np.zeros(fout)

    cin = 3
    for i, (cout, k, _) in enumerate(spec.conv_layers):
        conv(f"encoder.conv{i}", cin, cout, k, relu_gain)
        cin = cout
    oh, ow = spec.conv_output_size()
    fin = cin * oh * ow
    for i, fout in enumerate(spec.encoder_dense):
        fc(f"encoder.fc{i}", fin, fout, relu_gain)
        fin = fout

    fc("head.fc0", spec.latent_dim, spec.head_hidden, relu_gain)
    fc("head.fc1", spec.head_hidden, 1, 1.0)

    sh, sw = spec.decoder_seed_size
    fc("decoder.fc", spec.latent_dim, spec.decoder_seed_channels * sh * sw, relu_gain)
    chans = (spec.decoder_seed_channels,) + tuple(spec.decoder_channels) + (3,)
    for i in range(len(chans) - 1):
        # each output pixel of a stride-2 4x4 transposed conv sees 2x2 taps per input channel
        gain = relu_gain if i < len(chans) - 2 else 1.0
        params[f"decoder.up{i}.w"] = _uniform(rng, (chans[i], chans[i + 1], 4, 4), chans[i] * 4, gain)
        params[f"decoder.up{i}.b"] = np.zeros(chans[i + 1])

    tensors = {name: Tensor(arr.astype(dtype), requires_grad=True) for name, arr in params.items()}
    return JointModel(spec, tensors)


def model_from_checkpoint(path):
    params, meta = ad.load_checkpoint(path)
    spec = preset(meta.get("architecture", "nvidia-desk"))
    model = build_nvidia_desk(spec, seed=0)
    if not any(n.startswith("decoder.") for n in params):
        model = model.without_decoder()
    model.load_state_dict(params)
    return model, meta
