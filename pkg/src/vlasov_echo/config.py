"""Line-oriented run configuration.

Format::

    # comment
    [run]
    subcommand = echo-chain
    output_dir = out/chain

    [echo-chain]
    epsilon = 0.05
    k0 = 3

    [sweep]
    epsilon = 0.02, 0.01

Every problem found is reported, each with its line number.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

REQUIRED = object()
AUTO = None

SUBCOMMANDS = ("free", "linear", "penrose", "echo-chain", "nonlinear", "norms")

_ECHO = {
    "epsilon": (float, REQUIRED),
    "k0": (int, REQUIRED),
    "eta0": (float, REQUIRED),
    "delta": (float, AUTO),
    "sigma": (float, 1.0),
    "k_trunc": (int, AUTO),
    "t_in": (float, AUTO),
    "q": (float, 0.5),
    "potential_sign": (int, -1),
    "gamma0": (float, 2.0),
    "dt": (float, 0.05),
    "t_final": (float, AUTO),
    "residual_bound": (float, 1.0),
}

SCHEMA: Dict[str, Dict[str, Tuple[type, Any]]] = {
    "free": {
        "datum": (str, REQUIRED),
        "k0": (int, REQUIRED),
        "t_final": (float, REQUIRED),
        "lambda": (float, 1.0),
        "eta0": (float, 0.0),
        "width": (float, 1.0),
        "sigma": (float, 0.0),
        "dt": (float, 0.01),
    },
    "linear": {
        "background": (str, REQUIRED),
        "potential": (str, REQUIRED),
        "k": (int, 1),
        "dt": (float, 0.05),
        "t_final": (float, 100.0),
        "t0": (float, 0.0),
        "datum": (str, "gaussian"),
        "lambda": (float, 1.0),
        "eta0": (float, 0.0),
        "width": (float, 1.0),
    },
    "penrose": {
        "background": (str, REQUIRED),
        "potential": (str, REQUIRED),
        "k_max": (int, 4),
        "n_samples": (int, 4096),
    },
    "echo-chain": dict(_ECHO),
    "nonlinear": dict(_ECHO, **{
        "dt": (float, 0.1),
        "k_max": (int, AUTO),
        "n_eta": (int, 4001),
        "eta_max": (float, AUTO),
        "record_every": (int, 1),
        "snapshot_out": (str, AUTO),
        "snapshot_every": (int, 0),
        "compare_reduced": (bool, False),
        "self_interaction": (bool, True),
        "backward_to": (float, AUTO),
    }),
    "norms": {
        "spec": (str, REQUIRED),
        "snapshot_in": (str, REQUIRED),
        "t": (float, AUTO),
    },
}

RUN_KEYS = {"subcommand": str, "output_dir": str}


class ConfigError(ValueError):
    def __init__(self, errors: Sequence[str]):
        self.errors = list(errors)
        super().__init__("\n".join(self.errors))


@dataclass
class RunConfig:
    subcommand: str
    parameters: Dict[str, Any]
    output_dir: str = "out"
    sweep: Optional[List[Tuple[str, List[Any]]]] = None
    lines: Dict[str, int] = field(default_factory=dict, repr=False)

    def expand(self) -> List[Tuple[str, "RunConfig"]]:
        """(subdirectory name, config) for every sweep point; one entry when no sweep."""
        if not self.sweep:
            return [("", self)]
        keys = [k for k, _ in self.sweep]
        out = []
        for combo in itertools.product(*(v for _, v in self.sweep)):
            params = dict(self.parameters)
            params.update(zip(keys, combo))
            name = "_".join(f"{k}={format_value(v)}" for k, v in zip(keys, combo))
            out.append((name, RunConfig(self.subcommand, params, self.output_dir)))
        return out


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def convert(value: str, typ: type):
    """Typed conversion; raises ValueError with a short reason."""
    text = value.strip()
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'":
        text = text[1:-1]
    if typ is bool:
        low = text.lower()
        if low in ("true", "yes", "on", "1"):
            return True
        if low in ("false", "no", "off", "0"):
            return False
        raise ValueError(f"expected bool, got {text!r}")
    if typ is int:
        try:
            return int(text)
        except ValueError:
            raise ValueError(f"expected int, got {text!r}") from None
    if typ is float:
        try:
            x = float(text)
        except ValueError:
            raise ValueError(f"expected real, got {text!r}") from None
        if not math.isfinite(x):
            raise ValueError(f"expected finite real, got {text!r}")
        return x
    return text


def parse_config(text: str, subcommand: Optional[str] = None) -> RunConfig:
    """Parse a config; raises ConfigError listing every problem found."""
    errors: List[str] = []
    sections: Dict[str, List[Tuple[int, str, str]]] = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            if current not in SUBCOMMANDS and current not in ("run", "sweep"):
                errors.append(f"line {lineno}: unknown section [{current}]")
            sections.setdefault(current, [])
            continue
        key, eq, value = line.partition("=")
        if not eq:
            errors.append(f"line {lineno}: expected 'key = value'")
            continue
        if current is None:
            errors.append(f"line {lineno}: key {key.strip()!r} outside any section")
            continue
        sections[current].append((lineno, key.strip(), value.strip()))

    run_vals: Dict[str, str] = {}
    for lineno, key, value in sections.get("run", []):
        if key not in RUN_KEYS:
            errors.append(f"line {lineno}: unknown key {key!r} in [run]")
        else:
            run_vals[key] = convert(value, str)
    sub = run_vals.get("subcommand", subcommand)
    if sub is None:
        present = [s for s in SUBCOMMANDS if s in sections]
        sub = present[0] if len(present) == 1 else None
    if sub is None:
        errors.append("line 0: no subcommand given ([run] subcommand = ...)")
        raise ConfigError(errors)
    if sub not in SCHEMA:
        errors.append(f"line 0: unknown subcommand {sub!r}")
        raise ConfigError(errors)
    schema = SCHEMA[sub]
    raw_params: Dict[str, Tuple[int, str]] = {}
    for lineno, key, value in sections.get(sub, []):
        raw_params[key] = (lineno, value)
    params, lines = _typed(schema, raw_params, errors, sub)

    sweep = None
    if "sweep" in sections:
        sweep = []
        for lineno, key, value in sections["sweep"]:
            if key not in schema:
                errors.append(f"line {lineno}: unknown sweep key {key!r}")
                continue
            vals = []
            for item in value.split(","):
                try:
                    vals.append(convert(item, schema[key][0]))
                except ValueError as exc:
                    errors.append(f"line {lineno}: {key}: {exc}")
            if not vals:
                errors.append(f"line {lineno}: empty sweep list for {key!r}")
            sweep.append((key, vals))
            params.pop(key, None)
            # a swept key satisfies its requirement
            errors[:] = [e for e in errors if not e.endswith(f"missing required key {key!r}")]
    for sect in SUBCOMMANDS:
        if sect != sub and sect in sections:
            ln = sections[sect][0][0] if sections[sect] else 0
            errors.append(f"line {ln}: section [{sect}] does not match subcommand {sub!r}")
    if errors:
        raise ConfigError(errors)
    return RunConfig(sub, params, run_vals.get("output_dir", "out"), sweep, lines)


def _typed(schema, raw: Dict[str, Tuple[int, str]], errors: List[str], sub: str):
    params: Dict[str, Any] = {}
    lines: Dict[str, int] = {}
    for key, (lineno, value) in raw.items():
        if key not in schema:
            errors.append(f"line {lineno}: unknown key {key!r} for {sub}")
            continue
        try:
            params[key] = convert(value, schema[key][0])
            lines[key] = lineno
        except ValueError as exc:
            errors.append(f"line {lineno}: {key}: {exc}")
    for key, (_, default) in schema.items():
        if default is REQUIRED and key not in raw:
            errors.append(f"line 0: missing required key {key!r}")
    return params, lines


def params_from_strings(sub: str, given: Dict[str, str]) -> Dict[str, Any]:
    """Typed parameters from CLI flag strings (errors name the flag)."""
    schema = SCHEMA[sub]
    errors: List[str] = []
    params: Dict[str, Any] = {}
    for key, value in given.items():
        flag = "--" + key.replace("_", "-")
        try:
            params[key] = convert(value, schema[key][0])
        except ValueError as exc:
            errors.append(f"{flag}: {exc}")
    for key, (_, default) in schema.items():
        if default is REQUIRED and key not in given:
            errors.append(f"missing required flag --{key.replace('_', '-')}")
    if errors:
        raise ConfigError(errors)
    return params


def resolve(sub: str, params: Dict[str, Any]) -> Dict[str, Any]:
    """Fill defaults, including the ones derived from other parameters."""
    out = {}
    for key, (_, default) in SCHEMA[sub].items():
        out[key] = params.get(key, None if default is REQUIRED else default)
    if sub in ("echo-chain", "nonlinear"):
        eps = out["epsilon"]
        if out["delta"] is None:
            out["delta"] = eps ** 2
        if out["t_in"] is None:
            out["t_in"] = eps ** (-out["q"]) if eps > 0 else 1.0
        if out["k_trunc"] is None:
            out["k_trunc"] = 2 * out["k0"]
        if out["t_final"] is None:
            out["t_final"] = 1.075 * out["eta0"]
    if sub == "nonlinear":
        if out["k_max"] is None:
            out["k_max"] = out["k0"] + 3
        if out["eta_max"] is None:
            out["eta_max"] = out["k_max"] * out["t_final"]
    return out
