"""Config-file loading shared by policy, scenario and CLI settings (JSON or TOML)."""
import json
import sys
from pathlib import Path

from .exceptions import ParseError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    suffix = path.suffix.lower()
    try:
        if suffix == ".json" or (suffix != ".toml" and text.lstrip().startswith("{")):
            return json.loads(text)
        return tomllib.loads(text)
    except ValueError as exc:
        raise ParseError(f"cannot parse {path}: {exc}") from exc


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"
