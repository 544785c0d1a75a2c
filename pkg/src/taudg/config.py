"""Run configuration: INI files, key=value overrides and a content digest.

A run is described by one INI file.  Sections map onto the library's config
dataclasses; every key has a default except ``run.case`` and ``run.mode``.
Unknown sections or keys are rejected with the offending ``section.key``
path, as are type and range errors, so a typo fails before any work starts.

The effective configuration (defaults filled in, overrides applied) is
canonicalized to sorted ``section.key=value`` lines and hashed; the digest
stamps every artifact a run writes, which ties outputs back to the exact
configuration that produced them.
"""

from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass, field

from . import adaptation, mesh, multigrid, physics, timestep
from .errors import ConfigError

MODES = ("rk3", "fas", "fas+adapt", "fas+multistage")
TABLE_FORMATS = ("markdown", "csv")


@dataclass(frozen=True)
class MeshSpec:
    """Either a mesh file path or the structured-generator parameters."""

    file: str | None = None
    nx: int = 2
    ny: int = 2
    bounds: tuple[float, float, float, float] = (0.0, 1.0, 0.0, 1.0)
    grading: tuple[str, float] | None = None
    mapping_order: tuple[int, int] = (1, 1)

    def build(self) -> "mesh.Mesh2D":
        if self.file is not None:
            return mesh.read_mesh(self.file)
        return mesh.build_cartesian(
            self.nx, self.ny, bounds=self.bounds, grading=self.grading,
            mapping_order=self.mapping_order,
        )


@dataclass(frozen=True)
class RunConfig:
    """Everything one solver run needs, in validated form.

    ``order`` is the uniform polynomial order for rk3/fas runs and the
    reference order of the single-stage adaptive run; multi-stage runs take
    their reference orders from ``adapt.stages`` instead.
    """

    case: str
    mode: str
    name: str = "run"
    order: int = 4
    tolerance: float = 1e-8
    level_tolerance: float = 1e-1
    max_cycles: int = 300
    max_sweeps: int = 200000
    seed: int = 0
    output: str = "runs"
    formats: tuple[str, ...] = ("markdown",)
    mesh: MeshSpec = field(default_factory=MeshSpec)
    case_params: tuple[tuple[str, object], ...] = ()
    time: timestep.TimeConfig = field(default_factory=timestep.TimeConfig)
    smoother: multigrid.SmootherConfig = field(
        default_factory=multigrid.SmootherConfig)
    adapt: adaptation.AdaptConfig | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(
                f"run.mode: unknown mode {self.mode!r}, expected one of "
                + ", ".join(MODES))
        if self.order < 1:
            raise ConfigError("run.order: must be at least 1")
        if self.tolerance <= 0.0 or self.level_tolerance <= 0.0:
            raise ConfigError("run.tolerance: tolerances must be positive")
        if self.max_cycles < 1 or self.max_sweeps < 1:
            raise ConfigError("run.max_cycles: iteration caps must be positive")
        for f in self.formats:
            if f not in TABLE_FORMATS:
                raise ConfigError(
                    f"run.formats: unknown table format {f!r}")
        if self.mode in ("fas+adapt", "fas+multistage") and self.adapt is None:
            raise ConfigError(
                f"adapt: section required for mode {self.mode!r}")
        if self.mode == "fas+multistage" and not self.adapt.stages:
            raise ConfigError("adapt.stages: required for mode 'fas+multistage'")

    # construction helpers ---------------------------------------------------
    def build_mesh(self):
        return self.mesh.build()

    def build_law(self):
        return physics.make_case(self.case, **dict(self.case_params))

    def canonical(self) -> str:
        """Sorted section.key=value rendering of the effective configuration.

        The output directory is bookkeeping, not part of the experiment, so
        it stays out of the canonical form (and hence out of the digest).
        """
        rows = {
            "run.case": self.case,
            "run.mode": self.mode,
            "run.name": self.name,
            "run.order": self.order,
            "run.tolerance": self.tolerance,
            "run.level_tolerance": self.level_tolerance,
            "run.max_cycles": self.max_cycles,
            "run.max_sweeps": self.max_sweeps,
            "run.seed": self.seed,
            "run.formats": self.formats,
            "mesh.file": self.mesh.file,
            "mesh.nx": self.mesh.nx,
            "mesh.ny": self.mesh.ny,
            "mesh.bounds": self.mesh.bounds,
            "mesh.grading": self.mesh.grading,
            "mesh.mapping_order": self.mesh.mapping_order,
            "cfl.advective": self.time.cfl_advective,
            "cfl.viscous": self.time.cfl_viscous,
            "cfl.local": self.time.local,
            "mg.pre_sweeps": self.smoother.pre_sweeps,
            "mg.post_sweeps": self.smoother.post_sweeps,
            "mg.eta": self.smoother.eta,
            "mg.coarsest_sweeps": self.smoother.coarsest_sweeps,
            "mg.max_batches": self.smoother.max_batches,
        }
        for k, v in self.case_params:
            rows[f"case.{k}"] = v
        if self.adapt is not None:
            rows["adapt.tau_max"] = self.adapt.tau_max
            rows["adapt.n_max"] = self.adapt.n_max
            rows["adapt.n_min"] = self.adapt.n_min
            rows["adapt.jump_rule"] = self.adapt.jump_rule
            rows["adapt.conforming_tags"] = self.adapt.conforming_tags
            rows["adapt.stages"] = self.adapt.stages
        return "\n".join(f"{k}={_render(v)}" for k, v in sorted(rows.items()))

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:12]


def _render(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return " ".join(_render(v) for v in value)
    return str(value)


# --- raw-value parsers -------------------------------------------------------


def _fail(path: str, kind: str, raw: str):
    raise ConfigError(f"{path}: expected {kind}, got {raw!r}")


def _as_int(path, raw):
    try:
        return int(raw)
    except ValueError:
        _fail(path, "integer", raw)


def _as_float(path, raw):
    try:
        return float(raw)
    except ValueError:
        _fail(path, "number", raw)


def _as_bool(path, raw):
    lowered = raw.strip().lower()
    if lowered in ("true", "yes", "on", "1"):
        return True
    if lowered in ("false", "no", "off", "0"):
        return False
    _fail(path, "boolean", raw)


def _as_floats(path, raw, count):
    parts = raw.split()
    if len(parts) != count:
        _fail(path, f"{count} numbers", raw)
    return tuple(_as_float(path, p) for p in parts)


def _as_ints(path, raw):
    return tuple(_as_int(path, p) for p in raw.split())


def _as_words(raw):
    return tuple(raw.split())


def _case_value(raw: str):
    """Free-form case parameter: number, vector of numbers, or string."""
    parts = raw.split()
    try:
        values = [float(p) for p in parts]
    except ValueError:
        return raw.strip()
    if len(values) == 1:
        return values[0]
    return tuple(values)


# --- INI loading --------------------------------------------------------------

_KNOWN_KEYS = {
    "run": ("name", "case", "mode", "order", "tolerance", "level_tolerance",
            "max_cycles", "max_sweeps", "seed", "output", "formats"),
    "mesh": ("file", "nx", "ny", "bounds", "grading", "mapping_order"),
    "cfl": ("advective", "viscous", "local"),
    "mg": ("pre_sweeps", "post_sweeps", "eta", "coarsest_sweeps",
           "max_batches"),
    "adapt": ("tau_max", "n_max", "n_min", "jump_rule", "conforming_tags",
              "stages"),
}


def apply_overrides(parser: configparser.ConfigParser, overrides) -> None:
    """Apply ``section.key=value`` strings on top of the parsed file."""
    for ov in overrides:
        head, sep, value = ov.partition("=")
        section, dot, key = head.partition(".")
        if not sep or not dot or not section or not key:
            raise ConfigError(
                f"override {ov!r} must look like section.key=value")
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, key, value)


def parse_config(text: str, name: str = "run", overrides=()) -> RunConfig:
    """Build a validated RunConfig from INI text plus overrides."""
    parser = configparser.ConfigParser(
        interpolation=None, inline_comment_prefixes=("#", ";"), strict=False)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    apply_overrides(parser, overrides)

    for section in parser.sections():
        if section != "case" and section not in _KNOWN_KEYS:
            raise ConfigError(f"unknown section [{section}]")
        if section != "case":
            for key in parser[section]:
                if key not in _KNOWN_KEYS[section]:
                    raise ConfigError(f"{section}.{key}: unknown key")

    def get(section, key, default=None):
        return parser.get(section, key, fallback=default)

    case = get("run", "case")
    mode = get("run", "mode")
    if case is None:
        raise ConfigError("run.case: required")
    if mode is None:
        raise ConfigError("run.mode: required")

    mesh_spec = _parse_mesh(parser)
    case_params = tuple(sorted(
        (k, _case_value(v)) for k, v in parser.items("case")
    )) if parser.has_section("case") else ()

    time_cfg = timestep.TimeConfig(
        cfl_advective=_as_float("cfl.advective", get("cfl", "advective", "0.2")),
        cfl_viscous=_as_float("cfl.viscous", get("cfl", "viscous", "0.1")),
        local=_as_bool("cfl.local", get("cfl", "local", "false")),
    )
    smoother = multigrid.SmootherConfig(
        pre_sweeps=_as_int("mg.pre_sweeps", get("mg", "pre_sweeps", "100")),
        post_sweeps=_as_int("mg.post_sweeps", get("mg", "post_sweeps", "100")),
        eta=_as_float("mg.eta", get("mg", "eta", "1.1")),
        coarsest_sweeps=_as_int(
            "mg.coarsest_sweeps", get("mg", "coarsest_sweeps", "400")),
        max_batches=_as_int("mg.max_batches", get("mg", "max_batches", "20")),
    )

    adapt = None
    if parser.has_section("adapt"):
        tau_max = get("adapt", "tau_max")
        n_max = get("adapt", "n_max")
        if tau_max is None:
            raise ConfigError("adapt.tau_max: required")
        if n_max is None:
            raise ConfigError("adapt.n_max: required")
        adapt = adaptation.AdaptConfig(
            tau_max=_as_float("adapt.tau_max", tau_max),
            n_max=_as_int("adapt.n_max", n_max),
            n_min=_as_int("adapt.n_min", get("adapt", "n_min", "1")),
            jump_rule=get("adapt", "jump_rule", "strict-one"),
            conforming_tags=_as_words(get("adapt", "conforming_tags", "")),
            stages=_as_ints("adapt.stages", get("adapt", "stages", "")),
        )

    return RunConfig(
        case=case,
        mode=mode,
        name=get("run", "name", name),
        order=_as_int("run.order", get("run", "order", "4")),
        tolerance=_as_float("run.tolerance", get("run", "tolerance", "1e-8")),
        level_tolerance=_as_float(
            "run.level_tolerance", get("run", "level_tolerance", "1e-1")),
        max_cycles=_as_int("run.max_cycles", get("run", "max_cycles", "300")),
        max_sweeps=_as_int("run.max_sweeps", get("run", "max_sweeps", "200000")),
        seed=_as_int("run.seed", get("run", "seed", "0")),
        output=get("run", "output", "runs"),
        formats=_as_words(get("run", "formats", "markdown")) or ("markdown",),
        mesh=mesh_spec,
        case_params=case_params,
        time=time_cfg,
        smoother=smoother,
        adapt=adapt,
    )


def _parse_mesh(parser) -> MeshSpec:
    def get(key, default=None):
        return parser.get("mesh", key, fallback=default)

    file = get("file")
    grading_raw = get("grading")
    grading = None
    if grading_raw:
        parts = grading_raw.split()
        if len(parts) != 2:
            _fail("mesh.grading", "side and ratio", grading_raw)
        grading = (parts[0], _as_float("mesh.grading", parts[1]))
    mo = get("mapping_order", "1 1").split()
    if len(mo) != 2:
        _fail("mesh.mapping_order", "two integers", get("mapping_order"))
    return MeshSpec(
        file=file,
        nx=_as_int("mesh.nx", get("nx", "2")),
        ny=_as_int("mesh.ny", get("ny", "2")),
        bounds=_as_floats("mesh.bounds", get("bounds", "0 1 0 1"), 4),
        grading=grading,
        mapping_order=(_as_int("mesh.mapping_order", mo[0]),
                       _as_int("mesh.mapping_order", mo[1])),
    )


def load_config(path, overrides=()) -> RunConfig:
    """Read an INI file; the run name defaults to the file stem."""
    import pathlib

    p = pathlib.Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    with io.open(p, "r", encoding="utf-8") as fh:
        return parse_config(fh.read(), name=p.stem, overrides=overrides)
