"""Problem-config files: INI sections describing an instance of a registered family.

Dynamics are never read from a file; a config names a registered family
(``fishing``, ``regulator``, ``goddard``) and may change its constants, its
arc structure and the reference solution used for comparisons::

    [problem]
    family = fishing

    [dimensions]
    n = 2
    m = 1
    unknowns = p0, t1, t2

    [parameters]
    T = 10.0
    E = 1.0
    ...

    [structure]
    arcs = upper,singular,upper

    [solution]
    nu = -0.462254744307241, 2.37041478456004, 6.98877992494185
    nu_extended = ...
    objective = -106.9059979

    [solve]
    start = -0.5, 2.4, 7.0
    tol = 1e-12
"""

from __future__ import annotations

import configparser
import dataclasses

import numpy as np

from .benchmarks import DEFAULTS, BenchmarkCase, get_case
from .errors import ConfigurationError
from .integrate import ControlStructure


def _fmt_vector(v):
    return ", ".join(repr(float(x)) for x in v)


def _parse_vector(text, key):
    try:
        return np.array([float(s) for s in text.split(",") if s.strip()])
    except ValueError:
        raise ConfigurationError(f"{key}: expected comma-separated numbers") from None


def case_to_config(case: BenchmarkCase) -> configparser.ConfigParser:
    cp = configparser.ConfigParser()
    cp.optionxform = str
    cp["problem"] = {"family": case.name}
    cp["dimensions"] = {"n": str(case.problem.n), "m": str(case.problem.m),
                        "unknowns": ", ".join(case.unknown_names)}
    cp["parameters"] = {k: repr(v) if not isinstance(v, bool) else str(v).lower()
                        for k, v in case.params.items()}
    cp["structure"] = {"arcs": str(case.structure)}
    cp["solution"] = {"nu": _fmt_vector(case.nu_hat),
                      "nu_extended": _fmt_vector(case.nu_hat_extended),
                      "objective": repr(float(case.objective))}
    cp["solve"] = {"start": _fmt_vector(case.default_start()), "tol": repr(float(case.tol))}
    return cp


def write_config(case: BenchmarkCase, path):
    with open(path, "w", encoding="utf-8") as fh:
        case_to_config(case).write(fh)


def _typed(defaults, section, key):
    ref = defaults[key]
    try:
        if isinstance(ref, bool):
            return section.getboolean(key)
        return section.getfloat(key)
    except ValueError:
        raise ConfigurationError(f"parameter {key}: cannot parse {section[key]!r}") from None


def case_from_config(cp: configparser.ConfigParser) -> BenchmarkCase:
    if "problem" not in cp or "family" not in cp["problem"]:
        raise ConfigurationError("config needs a [problem] section with a family key")
    family = cp["problem"]["family"].strip()
    if family not in DEFAULTS:
        raise ConfigurationError(f"unknown problem family {family!r}")
    defaults = DEFAULTS[family]
    params = {}
    if "parameters" in cp:
        sec = cp["parameters"]
        for key in sec:
            if key not in defaults:
                raise ConfigurationError(f"unknown parameter {key!r} for {family}")
            params[key] = _typed(defaults, sec, key)
    case = get_case(family, params)
    changes = {}
    if "structure" in cp and "arcs" in cp["structure"]:
        structure = ControlStructure.parse(cp["structure"]["arcs"])
        if structure.N != case.structure.N:
            raise ConfigurationError(
                f"structure has {structure.N} arcs; {family} unknowns expect {case.structure.N}")
        structure.validate(case.problem)
        changes["structure"] = structure
    if "dimensions" in cp:
        dims = cp["dimensions"]
        for key, want in (("n", case.problem.n), ("m", case.problem.m)):
            if key in dims and dims.getint(key) != want:
                raise ConfigurationError(f"dimension {key}={dims[key]} but {family} has {want}")
        if "unknowns" in dims:
            names = tuple(s.strip() for s in dims["unknowns"].split(",") if s.strip())
            if len(names) != len(case.unknown_names):
                raise ConfigurationError(
                    f"{len(names)} unknown names given, {family} has {len(case.unknown_names)}")
            changes["unknown_names"] = names
    if "solution" in cp:
        sol = cp["solution"]
        r = len(case.unknown_names)
        for key, attr in (("nu", "nu_hat"), ("nu_extended", "nu_hat_extended")):
            if key in sol:
                v = _parse_vector(sol[key], key)
                if v.size != r:
                    raise ConfigurationError(f"{key} has {v.size} entries, expected {r}")
                changes[attr] = v
        if "objective" in sol:
            changes["objective"] = sol.getfloat("objective")
    if "solve" in cp:
        sec = cp["solve"]
        if "start" in sec:
            v = _parse_vector(sec["start"], "start")
            if v.size != len(case.unknown_names):
                raise ConfigurationError(
                    f"start has {v.size} entries, expected {len(case.unknown_names)}")
            changes["start"] = v
        if "tol" in sec:
            changes["tol"] = sec.getfloat("tol")
    return dataclasses.replace(case, **changes) if changes else case


def read_config(path) -> BenchmarkCase:
    cp = configparser.ConfigParser()
    cp.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except configparser.Error as exc:
        raise ConfigurationError(f"malformed config {path}: {exc}") from None
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from None
    return case_from_config(cp)
