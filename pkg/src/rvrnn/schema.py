"""Bundled JSON schemas for programs, network suites and reports."""
from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources

import jsonschema

SCHEMAS = ("program", "network", "report")


@lru_cache(maxsize=None)
def load_schema(name: str) -> dict:
    if name not in SCHEMAS:
        raise ValueError(f"unknown schema {name!r}; expected one of {SCHEMAS}")
    text = resources.files("rvrnn").joinpath(f"schemas/{name}.schema.json").read_text()
    return json.loads(text)


def validate(doc, name: str) -> None:
    """Raise ``jsonschema.ValidationError`` unless ``doc`` matches schema ``name``."""
    jsonschema.validate(doc, load_schema(name))
