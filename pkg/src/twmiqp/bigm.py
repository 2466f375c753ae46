"""Big-M reformulation written in CPLEX LP text format.

Every indicator variable x_i gets a binary z_i and the two rows
x_i - U z_i <= 0 and x_i + U z_i >= 0.  Indicator-free variables keep a
z_i fixed to 1 so the file always declares 2n variables.  Nothing here
calls a solver; the parser exists so tests can evaluate the emitted text.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .instance import Instance

_TERMS_PER_LINE = 6


def _num(v: float) -> str:
    return repr(float(v))


def _signed(coef: float, body: str) -> str:
    sign = "-" if coef < 0 else "+"
    return f"{sign} {_num(abs(coef))} {body}"


def _wrap(terms: list[str], indent: str = "   ") -> list[str]:
    return [indent + " ".join(terms[i : i + _TERMS_PER_LINE]) for i in range(0, len(terms), _TERMS_PER_LINE)]


def to_lp(inst: Instance, U: float, name: str = "twmiqp") -> str:
    """Big-M MIQP for ``inst`` with bound ``U`` on every supported x_i."""
    if not (U > 0 and np.isfinite(U)):
        raise InputError("big-M constant must be positive and finite")
    n = inst.n
    lin = []
    for i in range(n):
        if inst.c[i] != 0:
            lin.append(_signed(inst.c[i], f"x{i}"))
    for i in np.flatnonzero(inst.indicator):
        if inst.lam[i] != 0:
            lin.append(_signed(inst.lam[i], f"z{i}"))
    if inst.offset != 0:
        lin.append(f"{'-' if inst.offset < 0 else '+'} {_num(abs(inst.offset))}")
    quad = []
    for i, j, v in inst.Q.upper_entries():
        if i == j:
            quad.append(_signed(v, f"x{i} ^ 2"))
        else:
            quad.append(_signed(2.0 * v, f"x{i} * x{j}"))
    lines = [f"\\ {name}: big-M reformulation with U = {_num(U)}", "Minimize", " obj:"]
    lines += _wrap(lin) if lin else ["   0 x0"]
    if quad:
        lines.append("   + [")
        lines += _wrap(quad, "     ")
        lines.append("   ] / 2")
    lines.append("Subject To")
    for i in np.flatnonzero(inst.indicator):
        lines.append(f" ub{i}: x{i} - {_num(U)} z{i} <= 0")
        lines.append(f" lb{i}: x{i} + {_num(U)} z{i} >= 0")
    lines.append("Bounds")
    for i in range(n):
        lines.append(f" x{i} free")
    for i in np.flatnonzero(~inst.indicator):
        lines.append(f" z{i} = 1")
    lines.append("Binaries")
    lines += _wrap([f"z{i}" for i in range(n)], " ")
    lines.append("End")
    return "\n".join(lines) + "\n"


def write_lp(inst: Instance, U: float, path, name: str = "twmiqp") -> None:
    with open(path, "w") as fh:
        fh.write(to_lp(inst, U, name))


# ---------------------------------------------------------------------------
# minimal reader for the subset emitted above


@dataclass
class LpModel:
    linear: dict[str, float] = field(default_factory=dict)
    constant: float = 0.0
    quad: dict[tuple[str, str], float] = field(default_factory=dict)
    rows: list[tuple[str, dict[str, float], str, float]] = field(default_factory=list)
    fixed: dict[str, float] = field(default_factory=dict)
    free: set[str] = field(default_factory=set)
    binaries: list[str] = field(default_factory=list)

    @property
    def variables(self) -> set[str]:
        names = set(self.linear) | self.free | set(self.binaries) | set(self.fixed)
        for a, b in self.quad:
            names |= {a, b}
        for _, coefs, _, _ in self.rows:
            names |= set(coefs)
        return names

    def objective(self, values: dict[str, float]) -> float:
        val = self.constant + sum(c * values[v] for v, c in self.linear.items())
        q = sum(c * values[a] * values[b] for (a, b), c in self.quad.items())
        return val + 0.5 * q

    def feasible(self, values: dict[str, float], tol: float = 1e-9) -> bool:
        for _, coefs, sense, rhs in self.rows:
            lhs = sum(c * values[v] for v, c in coefs.items())
            if sense == "<=" and lhs > rhs + tol:
                return False
            if sense == ">=" and lhs < rhs - tol:
                return False
            if sense == "=" and abs(lhs - rhs) > tol:
                return False
        for v, fv in self.fixed.items():
            if abs(values[v] - fv) > tol:
                return False
        return all(values[b] in (0.0, 1.0) for b in self.binaries)


_TOKEN = re.compile(r"\[|\]|/|\^|\*|<=|>=|=|[+-]|[A-Za-z_][A-Za-z0-9_]*|[0-9.]+(?:[eE][+-]?[0-9]+)?")
_NUMBER = re.compile(r"^[0-9.]+([eE][+-]?[0-9]+)?$")


def _tokens(text: str) -> list[str]:
    return _TOKEN.findall(text)


def _parse_expr(toks: list[str]):
    """Linear terms, quadratic bracket and constant from a token list."""
    linear: dict[str, float] = {}
    quad: dict[tuple[str, str], float] = {}
    const = 0.0
    i = 0
    in_quad = False
    sign = 1.0
    while i < len(toks):
        t = toks[i]
        if t in "+-":
            sign = -1.0 if t == "-" else 1.0
            i += 1
            continue
        if t == "[":
            in_quad = True
            i += 1
            continue
        if t == "]":
            in_quad = False
            if toks[i + 1 : i + 3] != ["/", "2"]:
                raise InputError("quadratic bracket must be followed by / 2")
            i += 3
            continue
        coef = 1.0
        if _NUMBER.match(t):
            coef = float(t)
            i += 1
            if i >= len(toks) or toks[i] in "+-]" or toks[i] == "[":
                if in_quad:
                    raise InputError("constant inside quadratic bracket")
                const += sign * coef
                sign = 1.0
                continue
        var = toks[i]
        i += 1
        if in_quad:
            if i < len(toks) and toks[i] == "^":
                key = (var, var)
                i += 2
            elif i < len(toks) and toks[i] == "*":
                key = (var, toks[i + 1])
                i += 2
            else:
                raise InputError(f"malformed quadratic term near {var}")
            quad[key] = quad.get(key, 0.0) + sign * coef
        else:
            linear[var] = linear.get(var, 0.0) + sign * coef
        sign = 1.0
    return linear, quad, const


def parse_lp(text: str) -> LpModel:
    sections = {"minimize": [], "subject to": [], "bounds": [], "binaries": []}
    current = None
    for raw in text.splitlines():
        line = raw.split("\\", 1)[0].strip()
        if not line:
            continue
        low = line.lower()
        if low in sections:
            current = low
            continue
        if low == "end":
            break
        if current is None:
            raise InputError(f"content before any section: {raw!r}")
        sections[current].append(line)
    m = LpModel()
    obj = " ".join(sections["minimize"])
    obj = obj.split(":", 1)[1] if ":" in obj else obj
    m.linear, m.quad, m.constant = _parse_expr(_tokens(obj))
    for line in sections["subject to"]:
        name, body = line.split(":", 1)
        toks = _tokens(body)
        k = next(j for j, t in enumerate(toks) if t in ("<=", ">=", "="))
        lin, quad, const = _parse_expr(toks[:k])
        if quad or const:
            raise InputError(f"row {name} is not linear")
        m.rows.append((name.strip(), lin, toks[k], float(toks[k + 1])))
    for line in sections["bounds"]:
        parts = line.split()
        if len(parts) == 2 and parts[1].lower() == "free":
            m.free.add(parts[0])
        elif len(parts) == 3 and parts[1] == "=":
            m.fixed[parts[0]] = float(parts[2])
        else:
            raise InputError(f"unsupported bound line {line!r}")
    for line in sections["binaries"]:
        m.binaries += line.split()
    return m


def assignment(x, z) -> dict[str, float]:
    """Variable values keyed by the names used in the LP file."""
    vals = {f"x{i}": float(v) for i, v in enumerate(x)}
    vals.update({f"z{i}": float(bool(v)) for i, v in enumerate(z)})
    return vals
