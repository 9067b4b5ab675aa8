"""Flat ``key = value`` configuration files.

One hyper-parameter per line; blank lines and ``#`` comments ignored.
Unknown keys are errors so typos cannot silently fall back to defaults.
"""

from __future__ import annotations

from deepicf.errors import ConfigError
from deepicf.model import ModelConfig, Variant


def _parse_bool(text):
    lowered = text.lower()
    if lowered in ("true", "1", "yes"):
        return True
    if lowered in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_sizes(text):
    return tuple(int(p) for p in text.replace(",", " ").split())


# config-file key -> (ModelConfig field, parser)
_KEYS = {
    "variant": ("variant", Variant.parse),
    "k": ("k", int),
    "k_prime": ("k_prime", int),
    "L": ("num_layers", int),
    "layer_sizes": ("layer_sizes", _parse_sizes),
    "alpha": ("alpha", float),
    "beta": ("beta", float),
    "lambda": ("l2", float),
    "NS": ("num_negatives", int),
    "lr": ("lr", float),
    "epochs": ("epochs", int),
    "seed": ("seed", int),
    "batch_size": ("batch_size", int),
    "reg_embeddings": ("reg_embeddings", _parse_bool),
    "pretrain": ("pretrain", _parse_bool),
    "pretrain_epochs": ("pretrain_epochs", int),
    "eval_every": ("eval_every", int),
}


def parse_config_lines(lines, source="<config>"):
    fields = {}
    for lineno, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}: line {lineno}: expected key = value")
        key, _, value = (part.strip() for part in line.partition("="))
        if key not in _KEYS:
            raise ConfigError(
                f"{source}: line {lineno}: unknown key {key!r}"
                f" (known: {', '.join(sorted(_KEYS))})")
        field, parser = _KEYS[key]
        if field in fields:
            raise ConfigError(f"{source}: line {lineno}: duplicate key {key!r}")
        try:
            fields[field] = parser(value)
        except (ValueError, ConfigError) as err:
            raise ConfigError(f"{source}: line {lineno}: bad value for"
                              f" {key!r}: {err}")
    if "variant" not in fields:
        raise ConfigError(f"{source}: missing required key 'variant'")
    if "layer_sizes" in fields and "num_layers" not in fields:
        fields["num_layers"] = len(fields["layer_sizes"])
    return ModelConfig(**fields)


def load_config(path):
    with open(path, encoding="utf-8") as f:
        return parse_config_lines(f, source=str(path))


def config_to_text(config):
    """Serialize a config back to the file format (round-trips through
    :func:`parse_config_lines`)."""
    lines = [
        f"variant = {config.variant.value}",
        f"k = {config.k}",
        f"k_prime = {config.k_prime}",
        f"L = {config.num_layers}",
    ]
    if config.layer_sizes:
        lines.append("layer_sizes = " +
                     ",".join(str(d) for d in config.layer_sizes))
    lines.extend([
        f"alpha = {config.alpha!r}",
        f"beta = {config.beta!r}",
        f"lambda = {config.l2!r}",
        f"NS = {config.num_negatives}",
        f"lr = {config.lr!r}",
        f"epochs = {config.epochs}",
        f"seed = {config.seed}",
        f"batch_size = {config.batch_size}",
        f"reg_embeddings = {str(config.reg_embeddings).lower()}",
        f"pretrain = {str(config.pretrain).lower()}",
        f"eval_every = {config.eval_every}",
    ])
    if config.pretrain_epochs is not None:
        lines.append(f"pretrain_epochs = {config.pretrain_epochs}")
    return "\n".join(lines) + "\n"
