"""The dual-branch network.

Two compact convolutional encoders produce hidden vectors from the two
views: one tuned to the full-view geometry, one to the unresized crop.
Separate two-layer projection heads map both to the 32-feature comparison
space. A two-layer perceptron reads the crop projection and emits a hard
{0, 1} mask; the same mask multiplies both projections before the
contrastive loss. A shared classifier head supplies the weak supervision
signal from the unmasked projections.

``mode="shared"`` is the single-encoder baseline: both views pass through
one encoder and one projection head at the full-view geometry (the caller
resizes the crop up), and the mask is pinned to all-ones.
"""

import base64
import hashlib
import json
from dataclasses import dataclass, field, asdict
from typing import Optional, Tuple

import numpy as np

from . import autodiff as ad
from .errors import ConfigurationError, ContractError, DimensionError
from .seeding import STREAM_INIT, rng_for

EMBED_DIM = 32


@dataclass(frozen=True)
class ModelConfig:
    mode: str = "dual"  # "dual" (two encoders + hard mask) or "shared" (baseline)
    full_size: Tuple[int, int] = (120, 190)
    crop_size: int = 32
    d_hidden: int = 64
    conv_channels: Tuple[int, ...] = (8, 16, 32)
    classes: int = 11
    attention_hidden: int = 32
    classifier_hidden: int = 32
    mask_mode: str = "hard"  # "soft" swaps the threshold for its sigmoid (test build)

    def __post_init__(self):
        if self.mode not in ("dual", "shared"):
            raise ConfigurationError(f"unknown mode '{self.mode}'")
        if self.mask_mode not in ("hard", "soft"):
            raise ConfigurationError(f"unknown mask_mode '{self.mask_mode}'")
        if self.classes < 1:
            raise ConfigurationError("classes must be >= 1")


def conv_plan(h, w, n_layers):
    """Kernel/stride schedule for a valid-convolution stack on an h x w input."""
    plan = []
    for _ in range(n_layers):
        k = 3
        if h < k or w < k:
            break
        s = 2 if min(h, w) >= 8 else 1
        plan.append((k, s))
        h = (h - k) // s + 1
        w = (w - k) // s + 1
    if not plan:
        raise ConfigurationError(f"input {h}x{w} too small for the encoder")
    return plan, (h, w)


class AffineLayer:
    def __init__(self, name, d_in, d_out, rng, gain=2.0):
        std = np.sqrt(gain / d_in)
        self.w = ad.Tensor(rng.normal(0.0, std, size=(d_in, d_out)), requires_grad=True)
        self.b = ad.Tensor(np.zeros(d_out), requires_grad=True)
        self.name = name

    def __call__(self, x):
        return ad.affine(x, self.w, self.b)

    def params(self):
        return {f"{self.name}.weight": self.w, f"{self.name}.bias": self.b}


class ConvLayer:
    def __init__(self, name, c_in, c_out, kernel, stride, rng):
        std = np.sqrt(2.0 / (c_in * kernel * kernel))
        self.kernel = ad.Tensor(
            rng.normal(0.0, std, size=(c_out, c_in, kernel, kernel)), requires_grad=True
        )
        self.bias = ad.Tensor(np.zeros(c_out), requires_grad=True)
        self.stride = stride
        self.name = name

    def __call__(self, x):
        out = ad.conv2d(x, self.kernel, self.stride)
        return ad.add(out, ad.reshape(self.bias, (1, self.bias.shape[0], 1, 1)))

    def params(self):
        return {f"{self.name}.kernel": self.kernel, f"{self.name}.bias": self.bias}


class Encoder:
    """Conv blocks, global average pooling, one affine to the hidden size."""

    def __init__(self, name, input_hw, channels, d_hidden, rng):
        self.name = name
        self.input_hw = tuple(input_hw)
        plan, _ = conv_plan(input_hw[0], input_hw[1], len(channels))
        self.convs = []
        c_in = 3
        for i, ((k, s), c_out) in enumerate(zip(plan, channels)):
            self.convs.append(ConvLayer(f"{name}.conv{i}", c_in, c_out, k, s, rng))
            c_in = c_out
        self.head = AffineLayer(f"{name}.head", c_in, d_hidden, rng)

    def __call__(self, x):
        n, c, h, w = x.shape
        if (h, w) != self.input_hw or c != 3:
            raise DimensionError(
                f"{self.name} expects Nx3x{self.input_hw[0]}x{self.input_hw[1]} input, got {x.shape}"
            )
        for conv in self.convs:
            x = ad.relu(conv(x))
        pooled = ad.tensor_mean(x, axis=(2, 3))
        return ad.relu(self.head(pooled))

    def params(self):
        out = {}
        for conv in self.convs:
            out.update(conv.params())
        out.update(self.head.params())
        return out


class Perceptron2:
    """Two affine layers with one hidden ReLU."""

    def __init__(self, name, d_in, d_hidden, d_out, rng, out_bias=0.0):
        self.fc0 = AffineLayer(f"{name}.fc0", d_in, d_hidden, rng)
        self.fc1 = AffineLayer(f"{name}.fc1", d_hidden, d_out, rng, gain=1.0)
        if out_bias:
            self.fc1.b.data += out_bias
        self.name = name

    def __call__(self, x):
        return self.fc1(ad.relu(self.fc0(x)))

    def params(self):
        return {**self.fc0.params(), **self.fc1.params()}


@dataclass
class ForwardResult:
    z_full: ad.Tensor  # N x 32 projection of the full-view branch
    z_crop: ad.Tensor  # N x 32 projection of the crop branch
    mask: ad.Tensor  # N x 32, entries exactly 0/1 in hard mode
    z_full_masked: ad.Tensor
    z_crop_masked: ad.Tensor
    logits_full: ad.Tensor  # N x C, classifier on the unmasked projections
    logits_crop: ad.Tensor


def apply_mask(z, mask):
    """Elementwise product with a binary mask; the caller reuses the same
    mask tensor for both embeddings of a pair."""
    if z.shape != mask.shape:
        raise DimensionError(f"mask shape {mask.shape} != embedding shape {z.shape}")
    if not np.all((mask.data == 0.0) | (mask.data == 1.0)):
        raise ContractError("mask entries must be exactly 0 or 1")
    return ad.mul(z, mask)


class ContrastiveModel:
    def __init__(self, cfg: ModelConfig, seed=0):
        self.cfg = cfg
        rng = rng_for(seed, STREAM_INIT)
        self.encoder_full = Encoder("encoder_full", cfg.full_size, cfg.conv_channels, cfg.d_hidden, rng)
        self.proj_full = Perceptron2("proj_full", cfg.d_hidden, cfg.d_hidden, EMBED_DIM, rng)
        if cfg.mode == "dual":
            crop_hw = (cfg.crop_size, cfg.crop_size)
            self.encoder_crop = Encoder("encoder_crop", crop_hw, cfg.conv_channels, cfg.d_hidden, rng)
            self.proj_crop = Perceptron2("proj_crop", cfg.d_hidden, cfg.d_hidden, EMBED_DIM, rng)
            # positive output bias starts the mask near all-ones so early
            # training cannot zero out every feature
            self.attention = Perceptron2(
                "attention", EMBED_DIM, cfg.attention_hidden, EMBED_DIM, rng, out_bias=1.0
            )
        else:
            self.encoder_crop = None
            self.proj_crop = None
            self.attention = None
        self.classifier = Perceptron2(
            "classifier", EMBED_DIM, cfg.classifier_hidden, cfg.classes, rng
        )

    def params(self):
        out = {}
        out.update(self.encoder_full.params())
        out.update(self.proj_full.params())
        if self.cfg.mode == "dual":
            out.update(self.encoder_crop.params())
            out.update(self.proj_crop.params())
            out.update(self.attention.params())
        out.update(self.classifier.params())
        return out

    def zero_grad(self):
        for p in self.params().values():
            p.zero_grad()

    def attention_mask(self, z_crop):
        """Hard {0,1} mask from the crop-branch projection.

        The forward pass thresholds the sigmoid of the mask logits at 0.5;
        the backward pass is straight-through (threshold treated as the
        identity on the sigmoid). mask_mode="soft" skips the threshold so
        the whole loss stays finite-difference checkable.
        """
        if self.attention is None:
            raise ContractError("shared-mode model has no attention network")
        sig = ad.sigmoid(self.attention(z_crop))
        if self.cfg.mask_mode == "hard":
            return ad.hard_threshold(sig)
        return sig

    def forward_batch(self, full, crop):
        """Run N view pairs (NCHW tensors) through both branches."""
        h_full = self.encoder_full(full)
        z_full = self.proj_full(h_full)
        if self.cfg.mode == "dual":
            h_crop = self.encoder_crop(crop)
            z_crop = self.proj_crop(h_crop)
            mask = self.attention_mask(z_crop)
        else:
            h_crop = self.encoder_full(crop)
            z_crop = self.proj_full(h_crop)
            mask = ad.Tensor(np.ones_like(z_crop.data))
        if self.cfg.mask_mode == "hard":
            z_full_masked = apply_mask(z_full, mask)
            z_crop_masked = apply_mask(z_crop, mask)
        else:
            z_full_masked = ad.mul(z_full, mask)
            z_crop_masked = ad.mul(z_crop, mask)
        return ForwardResult(
            z_full=z_full,
            z_crop=z_crop,
            mask=mask,
            z_full_masked=z_full_masked,
            z_crop_masked=z_crop_masked,
            logits_full=self.classifier(z_full),
            logits_crop=self.classifier(z_crop),
        )


def views_to_arrays(pairs, cfg: ModelConfig):
    """Stack ViewPairs into the (full, crop) NCHW float batches the model
    takes; in shared mode the crop view is bilinearly resized up to the
    full geometry first (the baseline convention for reusing one encoder)."""
    from .augment import resize_bilinear

    full = np.stack([np.moveaxis(p.full, 2, 0) for p in pairs])
    if cfg.mode == "dual":
        crop = np.stack([np.moveaxis(p.crop, 2, 0) for p in pairs])
    else:
        th, tw = cfg.full_size
        crop = np.stack([np.moveaxis(resize_bilinear(p.crop, th, tw), 2, 0) for p in pairs])
    return full, crop


def forward_pair(model, pair):
    """Single-pair forward: (z'_full, z'_crop, logits_full, logits_crop, mask)."""
    full, crop = views_to_arrays([pair], model.cfg)
    r = model.forward_batch(ad.Tensor(full), ad.Tensor(crop))
    n_cls = model.cfg.classes
    return (
        ad.reshape(r.z_full_masked, (EMBED_DIM,)),
        ad.reshape(r.z_crop_masked, (EMBED_DIM,)),
        ad.reshape(r.logits_full, (n_cls,)),
        ad.reshape(r.logits_crop, (n_cls,)),
        ad.reshape(r.mask, (EMBED_DIM,)),
    )


# ---------------------------------------------------------------------------
# checkpoints: canonical JSON with base64 float64 payloads, so
# save -> load -> save round-trips byte-identically

CHECKPOINT_VERSION = 1


def _encode_array(a):
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _decode_array(d):
    a = np.frombuffer(base64.b64decode(d["data"]), dtype="<f8").copy()
    return a.reshape(d["shape"])


def checkpoint_payload(model, optimizer=None, meta=None):
    payload = {
        "format": "maskclr-checkpoint",
        "version": CHECKPOINT_VERSION,
        "config": asdict(model.cfg),
        "params": {name: _encode_array(p.data) for name, p in sorted(model.params().items())},
        "meta": meta or {},
    }
    if optimizer is not None:
        payload["optimizer"] = {
            "lr": optimizer.lr,
            "beta1": optimizer.beta1,
            "beta2": optimizer.beta2,
            "eps": optimizer.eps,
            "step": optimizer.step,
            "m": [_encode_array(a) for a in optimizer.m],
            "v": [_encode_array(a) for a in optimizer.v],
        }
    return payload


def checkpoint_id(payload):
    """Stable short id over the parameter payload (meta excluded)."""
    canon = json.dumps(
        {"config": payload["config"], "params": payload["params"]},
        sort_keys=True,
        separators=(",", ":"),
    )
    return hashlib.sha256(canon.encode()).hexdigest()[:12]


def save_checkpoint(path, model, optimizer=None, meta=None):
    payload = checkpoint_payload(model, optimizer, meta)
    payload["checkpoint_id"] = checkpoint_id(payload)
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, separators=(",", ":"))
    return payload["checkpoint_id"]


def load_checkpoint(path):
    """Returns (model, optimizer_state_dict | None, meta)."""
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("format") != "maskclr-checkpoint":
        raise ConfigurationError(f"{path} is not a maskclr checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ConfigurationError(f"unsupported checkpoint version {payload.get('version')}")
    cfg_dict = dict(payload["config"])
    cfg_dict["full_size"] = tuple(cfg_dict["full_size"])
    cfg_dict["conv_channels"] = tuple(cfg_dict["conv_channels"])
    model = ContrastiveModel(ModelConfig(**cfg_dict))
    params = model.params()
    saved = payload["params"]
    if set(saved) != set(params):
        raise ConfigurationError("checkpoint parameter names do not match the model")
    for name, p in params.items():
        arr = _decode_array(saved[name])
        if arr.shape != p.data.shape:
            raise DimensionError(f"checkpoint tensor {name} has shape {arr.shape}, expected {p.data.shape}")
        p.data = arr
    opt = None
    if "optimizer" in payload:
        o = payload["optimizer"]
        opt = {
            "lr": o["lr"],
            "beta1": o["beta1"],
            "beta2": o["beta2"],
            "eps": o["eps"],
            "step": o["step"],
            "m": [_decode_array(a) for a in o["m"]],
            "v": [_decode_array(a) for a in o["v"]],
        }
    return model, opt, payload.get("meta", {})
