"""Experiment configuration files.

Flat ``key = value`` lines grouped under ``[section]`` headers; ``#`` or ``;``
start a comment; list values are comma separated.  A small hand-written
reader is used so that every diagnostic carries a line and column.
"""
import itertools
from dataclasses import dataclass, field, fields

from .errors import ConfigError
from .verify import METHODS, RunParams, builtin_cases

STUDIES = ("Converge", "CutSweep", "GammaSweep", "Robustness", "Single")
ELEMENTS = ("RT0xQ0", "RT0xP0", "BDM1xP0", "RT1xP1")
BCS = ("pressure", "flux", "mixed")


@dataclass
class ExperimentSpec:
    study: str = "Single"
    method: list = field(default_factory=lambda: ["BGP"])
    element: list = field(default_factory=lambda: ["RT0xQ0"])
    bc: list = field(default_factory=lambda: ["pressure"])
    case: list = field(default_factory=lambda: ["smooth-square"])
    n: list = field(default_factory=lambda: [8])
    hcut_ratio: list = field(default_factory=lambda: [0.5])
    gamma: list = field(default_factory=lambda: [1.0])
    tau_d: list = field(default_factory=lambda: [1.0])
    tau_0: list = field(default_factory=lambda: [1.0])
    tau_al: list = field(default_factory=lambda: [1.0])
    delta: list = field(default_factory=lambda: [1.0])
    quad_order: int = 10
    n_sub: int = 4
    condest: bool = True
    output: str = ""
    seed: int = 0

    def runs(self):
        """RunParams in deterministic sweep order (``n`` varies fastest)."""
        out = []
        for (m, el, bc, case, g, td, t0, tal, dl, hr, n) in itertools.product(
                self.method, self.element, self.bc, self.case, self.gamma, self.tau_d,
                self.tau_0, self.tau_al, self.delta, self.hcut_ratio, self.n):
            out.append(RunParams(case=case, method=m, element=el, bc=bc, n=n, hcut_ratio=hr,
                                 gamma=g, tau_d=td, tau_0=t0, tau_al=tal, delta=dl,
                                 n_sub=self.n_sub, quad_order=self.quad_order,
                                 condest=self.condest, study=self.study))
        return out

    def to_text(self):
        def fmt(v):
            if isinstance(v, list):
                return ", ".join(fmt(x) for x in v)
            if isinstance(v, bool):
                return "true" if v else "false"
            if isinstance(v, float):
                return repr(v)
            return str(v)

        lines = ["[study]", f"kind = {self.study}", "", "[run]"]
        for key in _RUN_KEYS:
            lines.append(f"{key} = {fmt(getattr(self, key))}")
        lines += ["", "[numerics]"]
        for key in ("quad_order", "n_sub", "condest", "seed"):
            lines.append(f"{key} = {fmt(getattr(self, key))}")
        lines += ["", "[output]", f"path = {self.output}", ""]
        return "\n".join(lines)


_RUN_KEYS = ("method", "element", "bc", "case", "n", "hcut_ratio", "gamma",
             "tau_d", "tau_0", "tau_al", "delta")
_LIST_TYPES = {
    "method": str, "element": str, "bc": str, "case": str, "n": int,
    "hcut_ratio": float, "gamma": float, "tau_d": float, "tau_0": float,
    "tau_al": float, "delta": float,
}
_SCALAR_TYPES = {"quad_order": int, "n_sub": int, "condest": bool, "seed": int}
_SECTIONS = {
    "study": {"kind": "study"},
    "run": {k: k for k in _RUN_KEYS} | {"tau": "tau"},
    "numerics": {k: k for k in _SCALAR_TYPES},
    "output": {"path": "output"},
}


def _convert(text, typ, line, col):
    t = text.strip()
    try:
        if typ is bool:
            low = t.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError
        if typ is int:
            v = float(t)
            if v != int(v):
                raise ValueError
            return int(v)
        return typ(t)
    except ValueError:
        raise ConfigError(f"cannot read {t!r} as {typ.__name__}", line, col) from None


def _assign(spec, section, key, raw, line, col):
    """``col`` is the 1-based column where ``raw`` starts (None for overrides)."""
    table = _SECTIONS.get(section)
    if table is None or key not in table:
        raise ConfigError(f"unknown key {key!r} in section [{section}]", line, col)
    name = table[key]
    if name == "tau":
        vals = _split(raw, float, line, col)
        spec.tau_d = list(vals)
        spec.tau_0 = list(vals)
        return
    if name == "study" or name == "output":
        setattr(spec, name, raw.strip())
        return
    if name in _LIST_TYPES:
        setattr(spec, name, _split(raw, _LIST_TYPES[name], line, col))
        return
    setattr(spec, name, _convert(raw, _SCALAR_TYPES[name], line, _shift(col, _lead(raw))))


def _lead(text):
    return len(text) - len(text.lstrip())


def _shift(col, k):
    return None if col is None else col + k


def _split(raw, typ, line, col):
    out = []
    offset = 0
    for part in raw.split(","):
        if not part.strip():
            raise ConfigError("empty list entry", line, _shift(col, offset + _lead(part)))
        out.append(_convert(part, typ, line, _shift(col, offset + _lead(part))))
        offset += len(part) + 1
    return out


def _validate(spec, where=None):
    def bad(msg):
        line, col = where.get(msg[0], (None, None)) if where else (None, None)
        raise ConfigError(msg[1], line, col)

    if spec.study not in STUDIES:
        bad(("kind", f"study kind must be one of {', '.join(STUDIES)}"))
    checks = [("method", tuple(METHODS)), ("element", ELEMENTS), ("bc", BCS),
              ("case", tuple(c.name for c in builtin_cases()))]
    for key, allowed in checks:
        for v in getattr(spec, key):
            if v not in allowed:
                bad((key, f"{key} {v!r} is not one of {', '.join(allowed)}"))
    for key in _RUN_KEYS:
        if not getattr(spec, key):
            bad((key, f"{key} list is empty"))
    for v in spec.n:
        if v < 3:
            bad(("n", "n must be at least 3"))
    for key in ("hcut_ratio", "gamma", "delta"):
        for v in getattr(spec, key):
            if not v > 0:
                bad((key, f"{key} must be positive"))
    for key in ("tau_d", "tau_0", "tau_al"):
        for v in getattr(spec, key):
            if v < 0:
                bad((key, f"{key} must be non-negative"))
    for v in spec.delta:
        if v > 1:
            bad(("delta", "delta must lie in (0, 1]"))


def _drop_comment(text):
    # trailing comments need a preceding blank
    for c in "#;":
        pos = text.find(" " + c)
        if pos >= 0:
            text = text[:pos]
    return text


def parse_config(text):
    spec = ExperimentSpec()
    section = None
    where = {}
    seen = set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped[0] in "#;":
            continue
        col0 = len(line) - len(line.lstrip()) + 1
        if stripped.startswith("["):
            stripped = _drop_comment(stripped).rstrip()
            if not stripped.endswith("]"):
                raise ConfigError("unterminated section header", lineno, col0)
            section = stripped[1:-1].strip()
            if section not in _SECTIONS:
                raise ConfigError(f"unknown section [{section}]", lineno, col0 + 1)
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", lineno, col0)
        if section is None:
            raise ConfigError("key outside of any section", lineno, col0)
        eq = line.index("=")
        key = line[:eq].strip()
        if not key:
            raise ConfigError("missing key before '='", lineno, col0)
        if key not in _SECTIONS[section]:
            raise ConfigError(f"unknown key {key!r} in section [{section}]", lineno, col0)
        if (section, key) in seen:
            raise ConfigError(f"duplicate key {key!r}", lineno, col0)
        seen.add((section, key))
        raw = _drop_comment(line[eq + 1:])
        rcol = eq + 2
        vcol = rcol + _lead(raw)
        if not raw.strip() and key != "path":
            raise ConfigError(f"missing value for {key!r}", lineno, rcol)
        _assign(spec, section, key, raw, lineno, rcol)
        where[key] = (lineno, vcol)
        if key == "tau":
            where["tau_d"] = where["tau_0"] = (lineno, vcol)
    _validate(spec, where)
    return spec


def load_config(path):
    with open(path) as fh:
        return parse_config(fh.read())


def apply_override(spec, item):
    """Apply ``key=value`` (or ``section.key=value``) on top of a parsed spec."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} must look like key=value")
    key, raw = item.split("=", 1)
    key = key.strip()
    if "." in key:
        section, key = key.split(".", 1)
    else:
        section = next((s for s, t in _SECTIONS.items() if key in t), None)
        if section is None:
            raise ConfigError(f"unknown override key {key!r}")
    _assign(spec, section, key, raw, None, None)
    _validate(spec)
    return spec


def spec_equal(a, b):
    return all(getattr(a, f.name) == getattr(b, f.name) for f in fields(ExperimentSpec))
