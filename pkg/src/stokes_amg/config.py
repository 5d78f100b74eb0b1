"""Solver configuration."""
from dataclasses import asdict, dataclass, field, fields

from .amg import AMGOptions, EVOLUTION, SOC_CHOICES
from .errors import ConfigError

VARIANTS = ("DCall", "DCLO", "DCHO", "HOAMG", "Uzawa")
RELAX_MODES = ("krylov", "stationary")


def _default_fine_relax():
    return {"TH": "krylov", "SV": "stationary", "ISO": "krylov"}


@dataclass
class SolverConfig:
    """Outer solver and preconditioner settings.

    ``eta_u``/``eta_p`` weight the momentum and continuity residuals before
    restriction to the low-order system; ``omega0`` damps the stationary
    fine-level relaxation; ``nu1``/``nu2`` count the pre/post relaxation work,
    i.e. the inner FGMRES iterations of one Krylov wrap or the number of damped
    sweeps in stationary mode; ``gamma`` is the number of low-order V-cycles
    per application. ``max_ratio_drift`` bounds the velocity:pressure ratio
    drift of the ISO hierarchy used by the defect-correction variants
    (``None`` disables it); HO-AMG hierarchies are never truncated by it.
    """

    variant: str = "DCall"
    eta_u: float = 1.0
    eta_p: float = 1.0
    omega0: float = 1.0
    nu1: int = 2
    nu2: int = 2
    gamma: int = 1
    restart: int = 20
    tol: float = 1e-10
    maxiter: int = 200
    soc: str = EVOLUTION
    theta: float | None = None
    soc_k: int = 4
    coarse_size: int = 600
    max_ratio_drift: float | None = 2.0
    smooth_pressure: bool = True
    aggregation_order: str = "index"
    fine_relax: dict = field(default_factory=_default_fine_relax)
    allow_sv_hoamg: bool = False
    name: str | None = None

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "eta" in d:
            eta = d.pop("eta")
            d.setdefault("eta_u", eta)
            d.setdefault("eta_p", eta)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown solver settings: {sorted(unknown)}")
        cfg = cls(**d)
        if "fine_relax" in d:
            cfg.fine_relax = {**_default_fine_relax(), **d["fine_relax"]}
        return cfg

    def to_dict(self):
        return asdict(self)

    @property
    def label(self):
        return self.name or self.variant

    def amg_options(self):
        return AMGOptions(soc=self.soc, theta=self.theta, soc_k=self.soc_k, coarse_size=self.coarse_size,
                          smooth_pressure=self.smooth_pressure, order=self.aggregation_order,
                          max_ratio_drift=self.max_ratio_drift)

    def validate(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if not (self.eta_u > 0 and self.eta_p > 0):
            raise ConfigError("residual weights must be positive")
        if not 0 < self.omega0 < 2:
            raise ConfigError("omega0 must lie in (0, 2)")
        if self.nu1 < 0 or self.nu2 < 0:
            raise ConfigError("relaxation counts must be non-negative")
        if self.gamma < 1:
            raise ConfigError("gamma must be at least 1")
        if self.restart < 1 or self.maxiter < 1:
            raise ConfigError("restart and maxiter must be positive")
        if not 0 < self.tol < 1:
            raise ConfigError("tol must lie in (0, 1)")
        if self.soc not in SOC_CHOICES:
            raise ConfigError(f"unknown strength measure {self.soc!r}")
        if self.aggregation_order not in ("degree", "index"):
            raise ConfigError(f"unknown aggregation order {self.aggregation_order!r}")
        if self.soc_k < 1:
            raise ConfigError("soc_k must be positive")
        if self.max_ratio_drift is not None and self.max_ratio_drift < 1.0:
            raise ConfigError("max_ratio_drift must be at least 1")
        if self.coarse_size < 1:
            raise ConfigError("coarse_size must be positive")
        bad = {k: v for k, v in self.fine_relax.items() if v not in RELAX_MODES}
        if bad:
            raise ConfigError(f"unknown relaxation modes {bad}")
        return self
