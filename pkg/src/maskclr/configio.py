"""Flat key-value config files.

One `key = value` pair per line, `#` comments, no sections. Every training
hyperparameter has a key here, and the training run always emits the fully
resolved table (sorted, all defaults expanded) next to its outputs, so no
default is ever silent.
"""

import hashlib

from .augment import AugmentConfig
from .errors import ConfigurationError
from .losses import LossConfig

_BOOL = {"true": True, "false": False, "1": True, "0": False, "yes": True, "no": False}


def _parse_bool(s):
    try:
        return _BOOL[s.strip().lower()]
    except KeyError:
        raise ConfigurationError(f"expected a boolean, got '{s}'") from None


# key -> converter from string
_CONVERTERS = {
    "epochs": int,
    "per_class": int,
    "classes": int,
    "seed": int,
    "lr": float,
    "adam_beta1": float,
    "adam_beta2": float,
    "adam_eps": float,
    "checkpoint_every": int,
    "mode": str,
    "d_hidden": int,
    "temperature": float,
    "supervised_weight": float,
    "normalize_embeddings": _parse_bool,
    "crop_size": int,
    "full_height": int,
    "full_width": int,
    "color_strength": float,
    "flip_p_horizontal": float,
    "flip_p_vertical": float,
}


def parse_config_text(text):
    """Parse `key = value` lines into a {key: typed value} dict."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigurationError(f"config line {lineno}: expected 'key = value', got '{raw}'")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in _CONVERTERS:
            raise ConfigurationError(f"config line {lineno}: unknown key '{key}'")
        try:
            out[key] = _CONVERTERS[key](value)
        except ConfigurationError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"config line {lineno}: bad value for '{key}': {exc}") from None
    return out


def read_config_file(path):
    with open(path) as fh:
        return parse_config_text(fh.read())


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def format_config(flat):
    """Render a flat dict as sorted `key = value` lines."""
    return "".join(f"{k} = {_fmt(flat[k])}\n" for k in sorted(flat))


def config_hash(flat):
    return hashlib.sha256(format_config(flat).encode()).hexdigest()[:12]


def train_config_to_flat(cfg):
    return {
        "epochs": cfg.epochs,
        "per_class": cfg.per_class,
        "classes": cfg.classes,
        "seed": cfg.seed,
        "lr": cfg.lr,
        "adam_beta1": cfg.adam_beta1,
        "adam_beta2": cfg.adam_beta2,
        "adam_eps": cfg.adam_eps,
        "checkpoint_every": cfg.checkpoint_every,
        "mode": cfg.mode,
        "d_hidden": cfg.d_hidden,
        "temperature": cfg.loss.temperature,
        "supervised_weight": cfg.loss.supervised_weight,
        "normalize_embeddings": cfg.loss.normalize,
        "crop_size": cfg.augment.crop_size,
        "full_height": cfg.augment.full_size[0],
        "full_width": cfg.augment.full_size[1],
        "color_strength": cfg.augment.color_strength,
        "flip_p_horizontal": cfg.augment.flip_p_horizontal,
        "flip_p_vertical": cfg.augment.flip_p_vertical,
    }


def flat_to_train_config(flat):
    from .train import TrainConfig  # deferred; train imports this module too

    known = dict(flat)
    loss = LossConfig(
        temperature=known.pop("temperature", 0.5),
        supervised_weight=known.pop("supervised_weight", 1.0),
        normalize=known.pop("normalize_embeddings", True),
    )
    aug = AugmentConfig(
        crop_size=known.pop("crop_size", 32),
        full_size=(known.pop("full_height", 120), known.pop("full_width", 190)),
        color_strength=known.pop("color_strength", 0.5),
        flip_p_horizontal=known.pop("flip_p_horizontal", 0.5),
        flip_p_vertical=known.pop("flip_p_vertical", 0.5),
    )
    return TrainConfig(loss=loss, augment=aug, **known)
