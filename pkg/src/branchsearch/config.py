"""Server configuration: a small TOML-subset file, documented in the README.

Supported syntax (and nothing more): ``key = value`` lines, ``[section]``
and ``[section.sub]`` headers, ``#`` comments. Values are double-quoted
strings, integers, floats, booleans, or flat lists of quoted strings.

Example::

    listen = "127.0.0.1:8080"
    cors_origins = ["*"]

    [defaults]
    k = 60
    negative_samples = 1000
    negative_weight = 10.0
    max_results = 500

    [datasets.toy]
    catalog = "data/toy.cbrx"
    index = "data/toy.cbkd"
    head = "data/toy.cbhd"

The ``BRANCHSEARCH_LISTEN`` environment variable overrides ``listen``.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field
from pathlib import Path

from . import head as head_mod
from .catalog import read_catalog, read_header
from .engine import Dataset
from .index import read_tree
from .quantizer import Quantizer

LISTEN_ENV_VAR = "BRANCHSEARCH_LISTEN"


class ConfigError(ValueError):
    pass


_KEY_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_.-]*$")


def parse_config_text(text: str) -> dict:
    """Parse the TOML subset into nested dicts."""
    root: dict = {}
    current = root
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"line {lineno}: unterminated section header")
            current = root
            for part in line[1:-1].strip().split("."):
                if not _KEY_RE.match(part):
                    raise ConfigError(f"line {lineno}: bad section name {part!r}")
                current = current.setdefault(part, {})
                if not isinstance(current, dict):
                    raise ConfigError(f"line {lineno}: section clashes with a value")
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        key = key.strip()
        if not _KEY_RE.match(key):
            raise ConfigError(f"line {lineno}: bad key {key!r}")
        current[key] = _parse_value(value.strip(), lineno)
    return root


def _parse_value(token: str, lineno: int):
    if token.startswith('"') and token.endswith('"') and len(token) >= 2:
        return token[1:-1]
    if token.startswith("["):
        if not token.endswith("]"):
            raise ConfigError(f"line {lineno}: unterminated list")
        inner = token[1:-1].strip()
        if not inner:
            return []
        items = []
        for piece in inner.split(","):
            piece = piece.strip()
            if not (piece.startswith('"') and piece.endswith('"')):
                raise ConfigError(f"line {lineno}: list items must be quoted strings")
            items.append(piece[1:-1])
        return items
    if token in ("true", "false"):
        return token == "true"
    try:
        return int(token)
    except ValueError:
        pass
    try:
        return float(token)
    except ValueError:
        raise ConfigError(f"line {lineno}: cannot parse value {token!r}") from None


@dataclass
class DatasetPaths:
    catalog: Path
    index: Path
    head: Path
    meta: Path | None = None  # defaults to <catalog>.meta.jsonl


@dataclass
class Defaults:
    k: int = 60
    negative_samples: int = 1000
    negative_weight: float = 10.0
    max_results: int = 500


@dataclass
class ServerConfig:
    listen: str = "127.0.0.1:8080"
    sidecar_url: str | None = None
    cors_origins: list[str] = field(default_factory=list)
    defaults: Defaults = field(default_factory=Defaults)
    datasets: dict[str, DatasetPaths] = field(default_factory=dict)

    @property
    def host(self) -> str:
        return self.listen.rsplit(":", 1)[0]

    @property
    def port(self) -> int:
        return int(self.listen.rsplit(":", 1)[1])


def load_config(path: str | os.PathLike) -> ServerConfig:
    base = Path(path).parent
    data = parse_config_text(Path(path).read_text(encoding="utf-8"))

    cfg = ServerConfig()
    cfg.listen = os.environ.get(LISTEN_ENV_VAR) or data.get("listen", cfg.listen)
    cfg.sidecar_url = data.get("sidecar_url")
    cfg.cors_origins = data.get("cors_origins", [])

    dflt = data.get("defaults", {})
    cfg.defaults = Defaults(
        k=int(dflt.get("k", 60)),
        negative_samples=int(dflt.get("negative_samples", 1000)),
        negative_weight=float(dflt.get("negative_weight", 10.0)),
        max_results=int(dflt.get("max_results", 500)),
    )

    for name, entry in data.get("datasets", {}).items():
        if not isinstance(entry, dict):
            raise ConfigError(f"dataset {name!r} must be a [datasets.{name}] section")
        try:
            paths = DatasetPaths(
                catalog=base / entry["catalog"],
                index=base / entry["index"],
                head=base / entry["head"],
                meta=(base / entry["meta"]) if "meta" in entry else None,
            )
        except KeyError as exc:
            raise ConfigError(f"dataset {name!r} is missing required key {exc}") from None
        cfg.datasets[name] = paths
    return cfg


def load_datasets(cfg: ServerConfig) -> dict[str, Dataset]:
    """Load and cross-check every configured dataset (files exist, d' and n agree)."""
    out: dict[str, Dataset] = {}
    for name, paths in cfg.datasets.items():
        for p in (paths.catalog, paths.index, paths.head):
            if not Path(p).exists():
                raise ConfigError(f"dataset {name!r}: missing file {p}")
        d_prime, n, _ = read_header(paths.catalog)
        catalog = read_catalog(paths.catalog, meta_path=paths.meta)
        tree = read_tree(paths.index, catalog)  # validates (n, d') against the codes
        head = head_mod.read_head(paths.head)
        if head.dims[2] != d_prime:
            raise ConfigError(
                f"dataset {name!r}: head outputs {head.dims[2]} dims, catalog stores {d_prime}"
            )
        out[name] = Dataset(
            name=name,
            catalog=catalog,
            tree=tree,
            head=head,
            quantizer=Quantizer(catalog.params),
        )
        assert catalog.n == n
    return out
