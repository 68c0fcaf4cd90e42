"""Example specifications shipped with the package.

Each JSON file holds a specification plus optional ``description``,
``rootset`` (axes and traced functions for root-set scans) and ``experiment``
(default simulation settings) sections.
"""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

from .model import ModelSpec, spec_from_dict, validate_spec

_PACKAGE = "sbm_contagion.data"


def names() -> list:
    return sorted(p.name[:-5] for p in resources.files(_PACKAGE).iterdir() if p.name.endswith(".json"))


def path(name: str) -> Path:
    p = resources.files(_PACKAGE) / f"{name}.json"
    if not p.is_file():
        raise KeyError(f"no bundled spec named {name!r}; available: {', '.join(names())}")
    return Path(str(p))


def load_document(source) -> dict:
    """Raw JSON document from a file path or a bundled spec name."""
    p = Path(source)
    if not p.exists() and str(source) in names():
        p = path(str(source))
    with p.open() as fh:
        return json.load(fh)


def spec_of(document: dict) -> ModelSpec:
    data = document["spec"] if "spec" in document and "atoms" not in document else document
    return validate_spec(spec_from_dict(data))


def load(name: str) -> ModelSpec:
    return spec_of(load_document(path(name)))
