"""Run configuration: built-in defaults < key=value config file < CLI flags."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Optional

from .clusterid import ClusterParams
from .errors import ValidationError
from .eraser import ErasureParams
from .semgraph import GraphParams


@dataclass(frozen=True)
class RunConfig:
    tau0: float = 0.3
    sigma: float = 0.1
    lam: float = 0.5
    n: int = 2
    K: int = 8
    t: float = 1.0
    sigma_p: float = 1.0
    attach_threshold: Optional[float] = None
    passes: int = 1
    thread_count: int = 0
    table: Optional[str] = None
    table_format: str = "text"
    graph: Optional[str] = None

    def graph_params(self) -> GraphParams:
        return GraphParams(self.tau0, self.sigma, self.lam)

    def cluster_params(self) -> ClusterParams:
        return ClusterParams(self.n, self.K, self.t)

    def erasure_params(self) -> ErasureParams:
        return ErasureParams(self.sigma_p, self.attach_threshold, self.passes)

    def validate(self) -> "RunConfig":
        self.graph_params()
        self.cluster_params()
        self.erasure_params()
        if self.thread_count < 0:
            raise ValidationError(f"thread_count must be >= 0, got {self.thread_count}")
        if self.table_format not in ("text", "binary"):
            raise ValidationError(f"table_format must be text or binary, got {self.table_format!r}")
        return self

    def merged(self, **overrides) -> "RunConfig":
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})

    def as_lines(self) -> list:
        out = []
        for key, value in asdict(self).items():
            out.append(f"{_FILE_KEY.get(key, key)}={'' if value is None else value}")
        return out


# "lambda" is reserved in Python; the file spells it out
_FILE_KEY = {"lam": "lambda"}
_ATTR = {v: k for k, v in _FILE_KEY.items()}


def parse_config(text: str, source: str = "<config>") -> dict:
    types = {f.name: f.type for f in fields(RunConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{source}:{lineno}: expected key=value")
        key, raw = (part.strip() for part in line.split("=", 1))
        attr = _ATTR.get(key, key)
        if attr not in types or attr == "lam" and key == "lam":
            raise ValidationError(f"{source}:{lineno}: unknown key {key!r}")
        kind = types[attr]
        try:
            if raw == "" and "Optional" in str(kind):
                values[attr] = None
            elif "int" in str(kind) and "Optional" not in str(kind):
                values[attr] = int(raw)
            elif "float" in str(kind):
                values[attr] = float(raw)
            else:
                values[attr] = raw
        except ValueError:
            raise ValidationError(f"{source}:{lineno}: bad value {raw!r} for {key}") from None
    return values


def load_config(path=None) -> RunConfig:
    base = RunConfig()
    if path is None:
        return base
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"file not found: {path}")
    return replace(base, **parse_config(path.read_text(encoding="utf-8"), str(path)))
