"""YAML configuration for the command-line laboratory.

A single file describes the weight measure, the aspect ratio, the z-grid for
``solve``/``kernels``, the replica experiment for ``simulate`` and the
comparisons (with every numerical tolerance) for ``verify``.  Complex numbers
are written as ``[re, im]`` pairs.

Example::

    c: 1.0
    measure: {kind: point_mass, location: 1.0}
    grid:
      z: [[0.0, 5.0], [1.0, 6.0]]
    experiment:
      n_list: [8, 16, 32]
      R: 2000
      z_points: [[0.0, 5.0]]
      master_seed: 7
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import yaml

from .errors import DomainError
from .limit import LimitParams
from .measures import TauMeasure
from .mc import DEFAULT_X_GRID, ExperimentConfig

__all__ = [
    "Tolerances",
    "LimitSettings",
    "ExperimentSettings",
    "VerifySettings",
    "LabConfig",
    "load_config",
    "dump_config",
]


def _cplx(v) -> complex:
    if isinstance(v, (list, tuple)) and len(v) == 2:
        return complex(float(v[0]), float(v[1]))
    if isinstance(v, (int, float)):
        return complex(v)
    if isinstance(v, str):
        return complex(v.replace(" ", "").replace("i", "j"))
    raise DomainError(f"cannot read a complex number from {v!r}")


def _pair(z: complex) -> list[float]:
    return [float(z.real), float(z.imag)]


def _known(cls, d: dict, where: str) -> dict:
    names = {f.name for f in fields(cls)}
    extra = set(d) - names
    if extra:
        raise DomainError(f"unknown keys in {where}: {sorted(extra)}")
    return d


@dataclass(frozen=True)
class Tolerances:
    """Every statistical tolerance used by ``verify``."""

    se_multiple: float = 3.0
    moment_se_multiple: float = 4.0
    char_se_coef: float = 3.0
    char_slack: float = 0.02
    variance_ratio: float = 1.5
    imag_tol: float = 1e-10
    mean_n2_coef: float = 10.0
    lemma_se_multiple: float = 2.0
    min_replicas: int = 100


@dataclass(frozen=True)
class LimitSettings:
    eta0: float | None = None
    allow_small_eta: bool = False
    kernel_method: str = "contour"
    tau_power: int = 4

    def __post_init__(self):
        if self.kernel_method not in ("contour", "richardson", "finite_difference"):
            raise DomainError(f"unknown kernel method {self.kernel_method!r}")


@dataclass(frozen=True)
class ExperimentSettings:
    n_list: tuple[int, ...] = (8, 16, 32)
    R: int = 2000
    R_overrides: tuple[tuple[int, int], ...] = ()
    z_points: tuple[complex, ...] = (5j,)
    x_grid: tuple[float, ...] = DEFAULT_X_GRID
    master_seed: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSettings":
        d = dict(_known(cls, d, "experiment"))
        if "n_list" in d:
            d["n_list"] = tuple(int(n) for n in d["n_list"])
        if "R_overrides" in d:
            d["R_overrides"] = tuple(sorted((int(k), int(v)) for k, v in dict(d["R_overrides"]).items()))
        if "z_points" in d:
            d["z_points"] = tuple(_cplx(z) for z in d["z_points"])
        if "x_grid" in d:
            d["x_grid"] = tuple(float(x) for x in d["x_grid"])
        if "master_seed" in d:
            d["master_seed"] = int(d["master_seed"])
        return cls(**d)

    def to_dict(self) -> dict:
        return {
            "n_list": list(self.n_list),
            "R": self.R,
            "R_overrides": {n: r for n, r in self.R_overrides},
            "z_points": [_pair(z) for z in self.z_points],
            "x_grid": list(self.x_grid),
            "master_seed": self.master_seed,
        }


@dataclass(frozen=True)
class VerifySettings:
    """Which comparisons ``verify`` runs and on how many replicas.

    Each block is optional (``None`` skips it).  ``mean``, ``variance`` and
    ``lemma`` take ``{n_list, R}``, ``clt`` takes ``{n, R}`` and ``kernel_K``
    takes ``{n, R, pairs, conditional}`` with ``pairs`` a list of
    ``[z1, z2]``.
    """

    inline_simulation: bool = True
    z_index: int = 0
    mean: dict | None = None
    clt: dict | None = None
    variance: dict | None = None
    kernel_K: dict | None = None
    lemma: dict | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "VerifySettings":
        d = dict(_known(cls, d, "verify"))
        kk = d.get("kernel_K")
        if kk is not None:
            kk = dict(kk)
            kk["pairs"] = [[_cplx(a), _cplx(b)] for a, b in kk.get("pairs", [])]
            d["kernel_K"] = kk
        return cls(**d)

    def to_dict(self) -> dict:
        out = asdict(self)
        if self.kernel_K is not None:
            kk = dict(self.kernel_K)
            kk["pairs"] = [[_pair(a), _pair(b)] for a, b in kk.get("pairs", [])]
            out["kernel_K"] = kk
        return out

    def sizes(self) -> dict[int, int]:
        """``n -> R`` replicas of resolvent traces needed by the comparisons."""
        need: dict[int, int] = {}
        for block in (self.mean, self.variance, self.lemma):
            if block:
                for n in block["n_list"]:
                    need[int(n)] = max(need.get(int(n), 0), int(block["R"]))
        if self.clt:
            n = int(self.clt["n"])
            need[n] = max(need.get(n, 0), int(self.clt["R"]))
        return dict(sorted(need.items()))


@dataclass(frozen=True)
class LabConfig:
    c: float
    measure: TauMeasure
    z_grid: tuple[complex, ...] = ()
    limit: LimitSettings = field(default_factory=LimitSettings)
    experiment: ExperimentSettings = field(default_factory=ExperimentSettings)
    verify: VerifySettings = field(default_factory=VerifySettings)
    tolerances: Tolerances = field(default_factory=Tolerances)
    threads: int | None = None

    @property
    def params(self) -> LimitParams:
        return LimitParams(self.c, self.measure, self.limit.eta0)

    def experiment_config(self, n_list=None, z_points=None, seed: int | None = None) -> ExperimentConfig:
        e = self.experiment
        return ExperimentConfig(
            c=self.c,
            measure=self.measure,
            n_list=tuple(e.n_list if n_list is None else n_list),
            R=e.R,
            z_points=tuple(e.z_points if z_points is None else z_points),
            x_grid=e.x_grid,
            master_seed=e.master_seed if seed is None else int(seed),
            allow_small_eta=self.limit.allow_small_eta or self.params.eta0_overridden,
            R_overrides=e.R_overrides,
        )

    @classmethod
    def from_dict(cls, d: dict) -> "LabConfig":
        raw = dict(d)
        grid = raw.pop("grid", None) or {}
        _known(cls, raw, "configuration")
        if "c" not in raw or "measure" not in raw:
            raise DomainError("configuration needs 'c' and 'measure'")
        return cls(
            c=float(raw["c"]),
            measure=TauMeasure.from_dict(raw["measure"]),
            z_grid=tuple(_cplx(z) for z in grid.get("z", []) or []),
            limit=LimitSettings(**_known(LimitSettings, raw.get("limit") or {}, "limit")),
            experiment=ExperimentSettings.from_dict(raw.get("experiment") or {}),
            verify=VerifySettings.from_dict(raw.get("verify") or {}),
            tolerances=Tolerances(**_known(Tolerances, raw.get("tolerances") or {}, "tolerances")),
            threads=raw.get("threads"),
        )

    def to_dict(self) -> dict:
        return {
            "c": self.c,
            "measure": self.measure.to_dict(),
            "grid": {"z": [_pair(z) for z in self.z_grid]},
            "limit": asdict(self.limit),
            "experiment": self.experiment.to_dict(),
            "verify": self.verify.to_dict(),
            "tolerances": asdict(self.tolerances),
            "threads": self.threads,
        }


def load_config(path) -> LabConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except FileNotFoundError:
        raise DomainError(f"configuration file {path} not found") from None
    except yaml.YAMLError as exc:
        raise DomainError(f"configuration file {path} is not valid YAML: {exc}") from None
    if not isinstance(data, dict):
        raise DomainError(f"configuration file {path} must hold a mapping")
    return LabConfig.from_dict(data)


def dump_config(cfg: LabConfig, path=None) -> str:
    text = yaml.safe_dump(cfg.to_dict(), sort_keys=False)
    if path is not None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    return text
