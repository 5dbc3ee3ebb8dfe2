"""Run configuration: one JSON document, overridable by dotted keys."""
from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass
from pathlib import Path

from .channel import DEFAULT_N_MAX, ChannelParams
from .kernel import DimensionlessGeometry
from .oam import BeamGeometry, OamLabel
from .turbulence import fried_parameter

__all__ = ["ConfigError", "RunConfig", "DEFAULTS", "apply_override", "parse_override"]


class ConfigError(ValueError):
    """Invalid configuration; ``problems`` lists field-level messages."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


DEFAULTS = {
    "geometry": {},
    "correction": {"J": [10]},
    "truncation": {"L_in": 3, "P_in": 6, "L_out": 6, "P_out": 6},
    "numeric": {
        "n_max": DEFAULT_N_MAX,
        "neg_tol": 1e-10,
        "neg_ceiling": 1e-3,
        "seed": 0,
        "n_starts": 64,
        "tol": 1e-8,
        "max_iter": 2000,
    },
    "output": {"directory": "out", "formats": ["bin", "csv"]},
    "probabilities": {"initial": [3, 0], "scan": "delta_l", "range": [-3, 3]},
    "oracle": {"mode": "quad", "n_samples": 10000, "budget": None, "n_r": 256, "n_theta": 512},
}

_DIMENSIONLESS = ("R_over_w", "w_over_r0", "z_over_zR")
_PHYSICAL = ("Cn2", "wavelength", "z", "w0", "R")


def _merge(base: dict, update: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in update.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def parse_override(text: str) -> tuple[str, object]:
    """``key.path=value`` with the value read as JSON when possible, else as a string."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def apply_override(doc: dict, key: str, value) -> dict:
    parts = key.split(".")
    if not all(parts):
        raise ConfigError(f"malformed override key {key!r}")
    node = doc
    for part in parts[:-1]:
        child = node.setdefault(part, {})
        if not isinstance(child, dict):
            raise ConfigError(f"override {key!r} descends into non-object field {part!r}")
        node = child
    node[parts[-1]] = value
    return doc


def _positive(problems, block, name, val):
    if not isinstance(val, (int, float)) or isinstance(val, bool) or not math.isfinite(val) or val <= 0:
        problems.append(f"{block}.{name}: must be a positive number, got {val!r}")
        return False
    return True


def _nonneg_int(problems, block, name, val):
    if not isinstance(val, int) or isinstance(val, bool) or val < 0:
        problems.append(f"{block}.{name}: must be a nonnegative integer, got {val!r}")
        return False
    return True


@dataclass(frozen=True)
class RunConfig:
    """Validated run configuration; ``doc`` is the full normalized JSON document."""

    doc: dict

    @classmethod
    def from_dict(cls, raw: dict, overrides=()) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigError("configuration must be a JSON object")
        unknown = sorted(set(raw) - set(DEFAULTS))
        doc = _merge(DEFAULTS, raw)
        for key, value in overrides:
            apply_override(doc, key, value)
        problems = [f"{k}: unknown section" for k in unknown]
        _validate(doc, problems)
        if problems:
            raise ConfigError(problems)
        J = doc["correction"]["J"]
        doc["correction"]["J"] = [J] if isinstance(J, int) else list(J)
        return cls(doc)

    @classmethod
    def load(cls, path, overrides=()) -> "RunConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        return cls.from_dict(raw, overrides)

    def to_json(self) -> str:
        return json.dumps(self.doc, sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        return cls.from_dict(json.loads(text))

    # derived quantities

    @property
    def physical(self) -> bool:
        return any(k in self.doc["geometry"] for k in _PHYSICAL)

    @property
    def beam(self) -> BeamGeometry | None:
        g = self.doc["geometry"]
        if not self.physical:
            return None
        return BeamGeometry(g["w0"], g["z"], g["wavelength"])

    @property
    def r0(self) -> float | None:
        g = self.doc["geometry"]
        if not self.physical:
            return None
        return fried_parameter(g["Cn2"], g["z"], g["wavelength"])

    @property
    def ratios(self) -> tuple[float, float, float]:
        """(R/w, w/r0, z/z_R) at the receiver."""
        g = self.doc["geometry"]
        if not self.physical:
            return g["R_over_w"], g["w_over_r0"], g["z_over_zR"]
        beam = self.beam
        return g["R"] / beam.w, beam.w / self.r0, g["z"] / beam.z_R

    @property
    def geometry(self) -> DimensionlessGeometry:
        return DimensionlessGeometry.from_ratios(*self.ratios)

    @property
    def J_list(self) -> list[int]:
        return list(self.doc["correction"]["J"])

    @property
    def numeric(self) -> dict:
        return self.doc["numeric"]

    @property
    def seed(self) -> int:
        return int(self.doc["numeric"]["seed"])

    def channel_params(self, J: int) -> ChannelParams:
        t = self.doc["truncation"]
        return ChannelParams(self.geometry, J, n_max=self.numeric["n_max"], **t)

    @property
    def initial(self) -> OamLabel:
        return OamLabel(*self.doc["probabilities"]["initial"])

    @property
    def out_dir(self) -> Path:
        return Path(self.doc["output"]["directory"])


def _validate(doc, problems):
    g = doc["geometry"]
    if not isinstance(g, dict):
        problems.append("geometry: must be an object")
        return
    has_dim = [k for k in _DIMENSIONLESS if k in g]
    has_phys = [k for k in _PHYSICAL if k in g]
    extra = sorted(set(g) - set(_DIMENSIONLESS) - set(_PHYSICAL))
    problems.extend(f"geometry.{k}: unknown field" for k in extra)
    if has_dim and has_phys:
        problems.append("geometry: give either dimensionless ratios or physical parameters, not both")
    elif not has_dim and not has_phys:
        problems.append(f"geometry: missing; give {', '.join(_DIMENSIONLESS)} or {', '.join(_PHYSICAL)}")
    else:
        needed = _DIMENSIONLESS if has_dim else _PHYSICAL
        for k in needed:
            if k not in g:
                problems.append(f"geometry.{k}: missing")
            else:
                _positive(problems, "geometry", k, g[k])

    J = doc["correction"].get("J")
    Js = [J] if isinstance(J, int) and not isinstance(J, bool) else J
    if not isinstance(Js, list) or not Js:
        problems.append(f"correction.J: must be a positive integer or a non-empty list, got {J!r}")
    else:
        for j in Js:
            if not isinstance(j, int) or isinstance(j, bool) or j < 1:
                problems.append(f"correction.J: entries must be integers >= 1, got {j!r}")

    t = doc["truncation"]
    ok = all(_nonneg_int(problems, "truncation", k, t.get(k)) for k in ("L_in", "P_in", "L_out", "P_out"))
    if ok and (t["L_out"] < t["L_in"] or t["P_out"] < t["P_in"]):
        problems.append("truncation: output truncation must contain the input truncation")
    extra = sorted(set(t) - {"L_in", "P_in", "L_out", "P_out"})
    problems.extend(f"truncation.{k}: unknown field" for k in extra)

    n = doc["numeric"]
    if _nonneg_int(problems, "numeric", "n_max", n.get("n_max")) and n["n_max"] < 1:
        problems.append("numeric.n_max: must be at least 1")
    for k in ("neg_tol", "neg_ceiling", "tol"):
        _positive(problems, "numeric", k, n.get(k))
    for k in ("seed", "max_iter"):
        _nonneg_int(problems, "numeric", k, n.get(k))
    if _nonneg_int(problems, "numeric", "n_starts", n.get("n_starts")) and n["n_starts"] < 1:
        problems.append("numeric.n_starts: must be at least 1")
    if isinstance(n.get("seed"), int) and n["seed"] >= 2**64:
        problems.append("numeric.seed: must fit in 64 bits")

    o = doc["output"]
    if not isinstance(o.get("directory"), str) or not o["directory"]:
        problems.append("output.directory: must be a non-empty string")
    fmts = o.get("formats")
    if not isinstance(fmts, list) or not set(fmts) <= {"bin", "csv"}:
        problems.append(f"output.formats: must be a list drawn from ['bin', 'csv'], got {fmts!r}")

    pr = doc["probabilities"]
    init = pr.get("initial")
    if not (isinstance(init, list) and len(init) == 2 and all(isinstance(x, int) for x in init) and init[1] >= 0):
        problems.append(f"probabilities.initial: must be [l, p] with p >= 0, got {init!r}")
    if pr.get("scan") not in ("delta_l", "delta_p"):
        problems.append(f"probabilities.scan: must be 'delta_l' or 'delta_p', got {pr.get('scan')!r}")
    rng = pr.get("range")
    if not (isinstance(rng, list) and len(rng) == 2 and all(isinstance(x, int) for x in rng) and rng[0] <= rng[1]):
        problems.append(f"probabilities.range: must be [lo, hi] integers with lo <= hi, got {rng!r}")

    orc = doc["oracle"]
    if orc.get("mode") not in ("quad", "mc"):
        problems.append(f"oracle.mode: must be 'quad' or 'mc', got {orc.get('mode')!r}")
    if not isinstance(orc.get("n_samples"), int) or orc["n_samples"] < 100:
        problems.append("oracle.n_samples: must be an integer >= 100")
    if orc.get("budget") is not None:
        _positive(problems, "oracle", "budget", orc["budget"])
    for k in ("n_r", "n_theta"):
        if not isinstance(orc.get(k), int) or orc[k] < 16:
            problems.append(f"oracle.{k}: must be an integer >= 16")
