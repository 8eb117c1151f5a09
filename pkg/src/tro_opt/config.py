"""Config files (YAML), dotted overrides, manifests and content hashes."""
from __future__ import annotations

import datetime as _dt
import hashlib
import json
from pathlib import Path

import yaml

from . import __version__
from .errors import ConfigError

MANIFEST_NAME = "manifest.json"
MANIFEST_KIND = "tro-opt-manifest"


def load_config_file(path):
    """Parse a YAML/JSON config or a run manifest.

    Returns ``(config_dict, manifest_or_None)``. A manifest is recognised by its
    ``kind`` field; its embedded resolved config is returned.
    """
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML: {exc}") from None
    if doc is None:
        return {}, None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    if doc.get("kind") == MANIFEST_KIND:
        return doc["config"], doc
    return doc, None


def parse_override(text):
    """``"method.lam=0.5"`` -> ``(["method", "lam"], 0.5)`` (value parsed as YAML)."""
    key, sep, raw = text.partition("=")
    if not sep or not key:
        raise ConfigError(f"override must look like key.path=value, got {text!r}")
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError:
        value = raw
    return key.strip().split("."), value


def apply_overrides(cfg, overrides):
    for text in overrides or ():
        keys, value = parse_override(text)
        node = cfg
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise ConfigError(f"cannot set {text!r}: {k!r} is not a mapping")
        node[keys[-1]] = value
    return cfg


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def sha256_bytes(data):
    return hashlib.sha256(data).hexdigest()


def sha256_file(path):
    return sha256_bytes(Path(path).read_bytes())


def config_hash(cfg):
    return sha256_bytes(canonical_json(cfg).encode())[:16]


def write_manifest(out_dir, command, cfg, inputs, outputs):
    """Record what ran, on what, producing what. The only file with a timestamp."""
    out_dir = Path(out_dir)
    doc = {
        "kind": MANIFEST_KIND,
        "version": __version__,
        "command": command,
        "config": cfg,
        "seed": cfg.get("seed"),
        "inputs": inputs,
        "outputs": {name: sha256_file(out_dir / name) for name in outputs},
        "created": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }
    (out_dir / MANIFEST_NAME).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return doc
