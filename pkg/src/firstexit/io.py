"""
File formats.

Model / run configuration (JSON)::

    {"dims": [{"mu": 0.0, "sigma": 1.0, "x0": 1.6094, "barrier": 0.0}, ...],
     "corr": [[1.0, 0.1], [0.1, 1.0]],
     "run": {"method": "copula", "scenarios": 100000, "seed": 1, "horizon": 10.0,
             "step": 0.0015625, "output": "samples.csv"}}

``run`` is optional.  Samples are CSV with header ``tau_1,...,tau_N``, one
scenario per row, ``inf`` for a coordinate that never crossed.
"""
import csv
import json
import math
from dataclasses import dataclass, replace

import numpy as np

from .calibration import CalibratedCopula, PortfolioModel
from .euler import EulerConfig
from .marginal import ExitTimeSamples

METHODS = ("copula", "euler")


class ConfigError(ValueError):
    """A configuration document failed validation; ``field`` names the culprit."""

    def __init__(self, field_name, message):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass(frozen=True)
class RunConfig:
    """Everything needed for one simulation run."""

    model: PortfolioModel
    method: str = "copula"
    scenarios: int = 100000
    seed: int = 0
    horizon: float = 10.0
    step: float = 0.0015625
    output: str = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError("run.method", f"must be one of {METHODS}, got {self.method!r}")
        if int(self.scenarios) < 1:
            raise ConfigError("run.scenarios", "must be >= 1")
        if not (self.horizon > 0 and math.isfinite(self.horizon)):
            raise ConfigError("run.horizon", "must be positive and finite")
        if not (self.step > 0 and self.step < self.horizon):
            raise ConfigError("run.step", "must be positive and below the horizon")

    @property
    def euler(self):
        return EulerConfig(step=self.step, horizon=self.horizon,
                           scenarios=self.scenarios, seed=self.seed)

    def to_dict(self):
        run = {"method": self.method, "scenarios": int(self.scenarios), "seed": int(self.seed),
               "horizon": float(self.horizon), "step": float(self.step)}
        if self.output is not None:
            run["output"] = self.output
        doc = self.model.to_dict()
        doc["run"] = run
        return doc

    def override(self, **kw):
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


def _model_from_doc(doc):
    if not isinstance(doc, dict):
        raise ConfigError("<root>", "expected a JSON object")
    dims = doc.get("dims")
    if not isinstance(dims, list) or not dims:
        raise ConfigError("dims", "expected a non-empty array of coordinate objects")
    parsed = []
    for i, d in enumerate(dims):
        if not isinstance(d, dict):
            raise ConfigError(f"dims[{i}]", "expected an object")
        missing = {"mu", "sigma", "x0", "barrier"} - set(d)
        if missing:
            raise ConfigError(f"dims[{i}]", f"missing {sorted(missing)}")
        unknown = set(d) - {"mu", "sigma", "x0", "barrier"}
        if unknown:
            raise ConfigError(f"dims[{i}]", f"unknown keys {sorted(unknown)}")
        parsed.append(d)
    corr = doc.get("corr")
    if corr is None:
        if len(dims) != 1:
            raise ConfigError("corr", "required for more than one coordinate")
        corr = [[1.0]]
    try:
        return PortfolioModel.from_dict({"dims": parsed, "corr": corr})
    except ValueError as exc:
        name = "corr" if "corr" in str(exc) or "diagonal" in str(exc) else "dims"
        raise ConfigError(name, str(exc)) from None


def parse_config(text):
    """RunConfig from JSON text."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("<root>", f"invalid JSON: {exc}") from None
    model = _model_from_doc(doc)
    run = doc.get("run", {})
    if not isinstance(run, dict):
        raise ConfigError("run", "expected an object")
    unknown = set(run) - {"method", "scenarios", "seed", "horizon", "step", "output"}
    if unknown:
        raise ConfigError("run", f"unknown keys {sorted(unknown)}")
    try:
        return RunConfig(model=model,
                         method=run.get("method", "copula"),
                         scenarios=int(run.get("scenarios", 100000)),
                         seed=int(run.get("seed", 0)),
                         horizon=float(run.get("horizon", 10.0)),
                         step=float(run.get("step", 0.0015625)),
                         output=run.get("output"))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError("run", str(exc)) from None


def dump_config(cfg):
    """Canonical JSON text of a RunConfig (sorted keys, fixed indentation)."""
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n"


def load_config(path):
    with open(path) as fh:
        return parse_config(fh.read())


def _fmt(v):
    return "inf" if math.isinf(v) else repr(float(v))


def write_samples(path_or_file, samples):
    """Write exit times as CSV with header ``tau_1,...,tau_N``."""
    times = samples.times if isinstance(samples, ExitTimeSamples) else np.atleast_2d(samples)
    own = isinstance(path_or_file, str)
    fh = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        fh.write(",".join(f"tau_{k + 1}" for k in range(times.shape[1])) + "\n")
        for row in times:
            fh.write(",".join(_fmt(v) for v in row) + "\n")
    finally:
        if own:
            fh.close()


def read_samples(path):
    """Read a CSV written by :func:`write_samples`."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or not all(h.strip() == f"tau_{k + 1}" for k, h in enumerate(header)):
            raise ConfigError(path, "expected header tau_1,...,tau_N")
        rows = [[float(v) for v in row] for row in reader if row]
    if not rows:
        return ExitTimeSamples(np.empty((0, len(header))))
    return ExitTimeSamples(np.array(rows, dtype=float))


def write_copula(path, cop):
    with open(path, "w") as fh:
        json.dump(cop.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_copula(path):
    with open(path) as fh:
        return CalibratedCopula.from_dict(json.load(fh))
