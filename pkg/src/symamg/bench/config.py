"""Experiment description read from an INI file.

Example::

    [experiment]
    name = table32
    method = pcg            ; pcg | gmres | auto (pcg unless the preconditioner is nonsymmetric)
    tolerance = 1e-8
    max_iterations = 2000
    seed = 0
    repetitions = 1

    [problem]
    kind = mirrored         ; mirrored | repeated
    sizes = 32              ; cube edge(s) used by default
    full_sizes = 64         ; used with --full
    gamma = 1.5
    s = 0, 1, 2, 3          ; mirrored: symmetry counts
    ; n_b = 2, 4            ; repeated: chain lengths

    [preconditioners]
    ; one per line: name followed by key=value options; the first is the baseline
    amg
    amgr power_k=2
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from ..krylov import KrylovConfig

PRECONDITIONERS = ("none", "jacobi", "fsai", "lrcfsai", "amg", "lrcamg", "amgs", "amgr")
METHODS = ("pcg", "gmres", "auto")
_INT_KEYS = {"k", "power", "power_k", "pattern_power", "smoother_power", "n_smooth", "max_elements",
             "fsai_power", "schur_fsai_power", "n_pre", "n_post", "coarse_size"}


@dataclass(frozen=True)
class PreconditionerSpec:
    name: str
    params: dict = field(default_factory=dict)

    @property
    def label(self):
        if self.name in ("lrcfsai", "lrcamg") or (self.name == "amgs" and "k" in self.params):
            return f"{self.name.upper()}({self.params.get('k', 0)})"
        return self.name.upper() if self.name != "none" else "none"

    @classmethod
    def parse(cls, text):
        parts = text.split()
        if not parts:
            raise ValueError("empty preconditioner line")
        name = parts[0].lower()
        if name not in PRECONDITIONERS:
            raise ValueError(f"unknown preconditioner {name!r}; expected one of {PRECONDITIONERS}")
        params = {}
        for item in parts[1:]:
            key, sep, val = item.partition("=")
            if not sep:
                raise ValueError(f"option {item!r} of {name} is not key=value")
            params[key] = _value(key, val)
        return cls(name, params)


def _value(key, text):
    if key in _INT_KEYS:
        return int(text)
    try:
        return float(text)
    except ValueError:
        return text


def _int_list(text):
    return [int(v) for v in text.replace(",", " ").split()] if text and text.strip() else []


@dataclass(frozen=True)
class ProblemSpec:
    kind: str = "mirrored"
    sizes: tuple = (32,)
    full_sizes: tuple = (64,)
    gamma: float = 1.5
    cases: tuple = (0,)  # s for mirrored, n_b for repeated

    def __post_init__(self):
        if self.kind not in ("mirrored", "repeated"):
            raise ValueError("problem kind must be mirrored or repeated")
        if not self.sizes or not self.cases:
            raise ValueError("problem needs at least one size and one case")


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    problem: ProblemSpec
    preconditioners: tuple
    method: str = "auto"
    tolerance: float = 1e-8
    max_iterations: int = 2000
    gmres_restart: int | None = None
    seed: int = 0
    repetitions: int = 1

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if not self.preconditioners:
            raise ValueError("at least one preconditioner is required")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        KrylovConfig(tolerance=self.tolerance, max_iterations=self.max_iterations)

    def krylov(self, method) -> KrylovConfig:
        return KrylovConfig(method, self.tolerance, self.max_iterations, self.gmres_restart)


def _split_preconditioners(text):
    """Pull the free-form ``[preconditioners]`` lines out before configparser sees them."""
    keep, precs, inside = [], [], False
    for raw in text.splitlines():
        line = raw.split(";", 1)[0].split("#", 1)[0].strip()
        if line.startswith("[") and line.endswith("]"):
            inside = line[1:-1].strip().lower() == "preconditioners"
            if inside:
                precs.append(None)  # marks the section as present
                continue
        if inside:
            if line:
                precs.append(PreconditionerSpec.parse(line))
        else:
            keep.append(raw)
    if not precs:
        raise ValueError("config is missing the [preconditioners] section")
    return "\n".join(keep), [p for p in precs if p is not None]


def parse_config(text, name="experiment") -> ExperimentConfig:
    text, precs = _split_preconditioners(text)
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    cp.read_string(text)
    if not cp.has_section("problem"):
        raise ValueError("config is missing the [problem] section")
    ex = cp["experiment"] if cp.has_section("experiment") else {}
    pr = cp["problem"]
    kind = pr.get("kind", "mirrored")
    cases = _int_list(pr.get("s" if kind == "mirrored" else "n_b", "0" if kind == "mirrored" else "1"))
    sizes = _int_list(pr.get("sizes", "32"))
    problem = ProblemSpec(kind, tuple(sizes), tuple(_int_list(pr.get("full_sizes", "")) or sizes),
                          float(pr.get("gamma", "1.5")), tuple(cases))
    restart = ex.get("gmres_restart", "") if ex else ""
    return ExperimentConfig(
        name=ex.get("name", name) if ex else name,
        problem=problem,
        preconditioners=tuple(precs),
        method=ex.get("method", "auto") if ex else "auto",
        tolerance=float(ex.get("tolerance", "1e-8")) if ex else 1e-8,
        max_iterations=int(ex.get("max_iterations", "2000")) if ex else 2000,
        gmres_restart=int(restart) if restart else None,
        seed=int(ex.get("seed", "0")) if ex else 0,
        repetitions=int(ex.get("repetitions", "1")) if ex else 1,
    )


def preset_names():
    return sorted(p.name[:-4] for p in resources.files(__package__).joinpath("presets").iterdir()
                  if p.name.endswith(".ini"))


def load_config(path_or_preset) -> ExperimentConfig:
    """Load a config file, or a shipped preset by name (``table21``, ``table32``, ...)."""
    p = Path(path_or_preset)
    if p.is_file():
        return parse_config(p.read_text(), p.stem)
    name = str(path_or_preset)
    res = resources.files(__package__).joinpath("presets", f"{name}.ini")
    if res.is_file():
        return parse_config(res.read_text(), name)
    raise FileNotFoundError(f"no config file or preset named {name!r} (presets: {', '.join(preset_names())})")
