"""Run configuration: defaults, key=value files, validation and mesh construction."""

from __future__ import annotations

import dataclasses
import warnings
from dataclasses import dataclass, fields
from pathlib import Path

from .highop import DISCRETIZATIONS, PENALTY_H_RULES
from .mesh import CoarseMesh, anisotropic_strip_mesh, cartesian_mesh, perturbed_mesh, read_mesh, refine_uniform
from .multigrid import normalize_smoother

SUSPICIOUS_TOL = 1e-2


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """Everything that determines a solve; echoed verbatim into every report."""

    mesh: str = "cartesian:2"
    refine: int = 0
    p: int = 2
    disc: str = "cg"
    eta: float = 10.0
    penalty_h: str = "perimeter"
    coeff: str = "const"
    seed: int = 0
    patches: str = "single"
    extend_layers: int = 0
    aspect_trigger: float | None = None
    smoother: str = "ilu-mdf"
    symmetrize: bool = True
    local_solver: str = "mg"
    quadrature: str = "gauss"
    rhs: str = "one"
    tol: float = 1e-8
    maxit: int = 500
    out: str | None = None

    def validate(self) -> list[str]:
        """Raise on invalid values; return warnings for legal but suspicious ones."""
        notes = []
        if self.p < 1:
            raise ConfigError(f"p must be >= 1, got {self.p}")
        if not 0 < self.tol <= 1:
            raise ConfigError(f"tol must lie in (0, 1), got {self.tol}")
        if self.tol >= SUSPICIOUS_TOL:
            notes.append(f"suspicious tolerance {self.tol:g}: convergence is (nearly) trivial")
        if self.disc not in DISCRETIZATIONS:
            raise ConfigError(f"unknown discretization {self.disc!r}")
        if self.disc != "cg" and not self.eta > 0:
            raise ConfigError(f"DG penalty eta must be positive, got {self.eta}")
        if self.penalty_h not in PENALTY_H_RULES:
            raise ConfigError(f"unknown penalty length rule {self.penalty_h!r}")
        if self.maxit < 1:
            raise ConfigError("maxit must be positive")
        if self.extend_layers < 0 or self.refine < 0:
            raise ConfigError("extend_layers and refine must be non-negative")
        if self.local_solver not in ("mg", "exact"):
            raise ConfigError(f"unknown local solver {self.local_solver!r}")
        if self.rhs not in ("one", "random", "manufactured"):
            raise ConfigError(f"unknown right-hand side {self.rhs!r}")
        try:
            normalize_smoother(self.smoother)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        patch_kind(self.patches)
        return notes

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def patch_kind(spec: str) -> tuple[str, int | None]:
    """Parse ``single``, ``vertex`` or ``subdomains:K``."""
    if spec in ("single", "vertex"):
        return spec, None
    if spec.startswith("subdomains:"):
        try:
            k = int(spec.split(":", 1)[1])
        except ValueError:
            raise ConfigError(f"bad patch spec {spec!r}") from None
        if k < 1:
            raise ConfigError("subdomain count must be positive")
        return "subdomains", k
    raise ConfigError(f"unknown patch strategy {spec!r}")


def _convert(value: str, typ):
    typ = str(typ)
    v = value.strip()
    if "bool" in typ:
        if v.lower() in ("1", "true", "yes", "on"):
            return True
        if v.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {value!r}")
    if v.lower() in ("none", "") and "None" in typ:
        return None
    if typ.startswith("int"):
        return int(v)
    if typ.startswith("float"):
        return float(v)
    return v


def read_config(path) -> dict:
    """Parse a flat ``key = value`` file (``#`` comments) into RunConfig overrides."""
    types = {f.name: f.type for f in fields(RunConfig)}
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in types:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            out[key] = _convert(value, types[key])
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: {exc}") from None
    return out


def build_mesh(spec: str, refine: int = 0) -> CoarseMesh:
    """Mesh from ``cartesian:NX[xNY]``, ``perturbed:NX[xNY][:amp[:seed]]``, ``aniso:ASPECT[:base_n]`` or ``file:PATH``."""
    kind, _, arg = spec.partition(":")
    try:
        if kind == "cartesian":
            nx, ny = _dims(arg)
            mesh = cartesian_mesh(nx, ny)
        elif kind == "perturbed":
            parts = arg.split(":")
            nx, ny = _dims(parts[0])
            amp = float(parts[1]) if len(parts) > 1 else 0.2
            seed = int(parts[2]) if len(parts) > 2 else 0
            mesh = perturbed_mesh(nx, ny, amp, seed)
        elif kind == "aniso":
            parts = arg.split(":")
            base = int(parts[1]) if len(parts) > 1 else 10
            mesh = anisotropic_strip_mesh(float(parts[0]), base)
        elif kind == "file":
            mesh = read_mesh(arg)
        else:
            raise ConfigError(f"unknown mesh kind {kind!r}")
    except (IndexError, TypeError) as exc:
        raise ConfigError(f"bad mesh spec {spec!r}: {exc}") from None
    for _ in range(refine):
        mesh = refine_uniform(mesh)
    return mesh


def _dims(arg: str) -> tuple[int, int]:
    if "x" in arg:
        a, b = arg.split("x", 1)
        return int(a), int(b)
    return int(arg), int(arg)


def warn_all(notes: list[str]) -> None:
    for n in notes:
        warnings.warn(n, stacklevel=3)
