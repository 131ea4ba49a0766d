"""CPLEX-LP writer and solution-file reader."""

import math
import re
from pathlib import Path

from ..errors import SolutionParseError

MAX_NAME = 255
_TERMS_PER_LINE = 6
_NAME_OK = re.compile(r"^[A-Za-z_][A-Za-z0-9_.]*$")


def _num(x):
    return repr(float(x))


def _expr(terms, names):
    """Format ``[(idx, coef), ...]`` as wrapped LP expression lines."""
    parts = []
    for i, c in terms:
        sign = "-" if c < 0 else "+"
        parts.append(f"{sign} {_num(abs(c))} {names[i]}")
    if not parts:
        return ["0 " + names[0]]
    if parts[0].startswith("+ "):
        parts[0] = parts[0][2:]
    return [" ".join(parts[k:k + _TERMS_PER_LINE])
            for k in range(0, len(parts), _TERMS_PER_LINE)]


def _check_name(name):
    if len(name) > MAX_NAME or not _NAME_OK.match(name):
        raise ValueError(f"invalid LP name {name!r}")


def write_lp(instance, path):
    """Write ``instance`` in CPLEX-LP format; variable order is declaration order."""
    path = Path(path)
    names = [v.name for v in instance.variables]
    for n in names:
        _check_name(n)
    out = [f"\\ {instance.name}", "Minimize"]
    obj = sorted(instance.objective.items())
    lines = _expr([(i, c) for i, c in obj if c != 0.0], names)
    out.append(" obj: " + lines[0])
    out.extend("   " + ln for ln in lines[1:])
    out.append("Subject To")
    for r in instance.rows:
        _check_name(r.name)
        lines = _expr(list(zip(r.idx.tolist(), r.coef.tolist())), names)
        lines[-1] += f" {r.sense} {_num(r.rhs)}"
        out.append(f" {r.name}: " + lines[0])
        out.extend("   " + ln for ln in lines[1:])
    out.append("Bounds")
    for v in instance.variables:
        if v.kind == "B" and v.lb == 0.0 and v.ub == 1.0:
            continue
        if v.lb == v.ub:
            out.append(f" {v.name} = {_num(v.lb)}")
        elif v.lb == -math.inf and v.ub == math.inf:
            out.append(f" {v.name} free")
        else:
            lo = "-inf" if v.lb == -math.inf else _num(v.lb)
            hi = "+inf" if v.ub == math.inf else _num(v.ub)
            out.append(f" {lo} <= {v.name} <= {hi}")
    general = [v.name for v in instance.variables if v.kind == "I"]
    binary = [v.name for v in instance.variables if v.kind == "B"]
    if general:
        out.append("General")
        out.extend(" " + n for n in general)
    if binary:
        out.append("Binary")
        out.extend(" " + n for n in binary)
    out.append("End")
    path.write_text("\n".join(out) + "\n")
    return path


_CBC_STATUS = re.compile(r"^(?P<status>[A-Za-z ]+?)\s*-\s*objective value\s+(?P<obj>\S+)")


def _status_from_cbc(text):
    t = text.lower()
    if t.startswith("optimal"):
        return "optimal"
    if "infeasible" in t:
        return "infeasible"
    if "unbounded" in t:
        return "unbounded"
    if t.startswith("stopped"):
        return "stopped"
    return "unknown"


def parse_solution(path, instance=None):
    """Read a solution file.

    Two layouts are understood: ``name value`` per line (``#`` comments,
    as written by Gurobi and others) and CBC's ``solu`` output
    (status header, then ``index name value [reduced cost]`` rows, where
    ``printingOptions all`` prints row activities before columns).

    Returns ``{"status", "objective", "values"}``. With ``instance`` given,
    names not declared in it raise :class:`SolutionParseError`.
    """
    lines = Path(path).read_text().splitlines()
    status, objective = "unknown", None
    entries = []
    cbc = False
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            m = re.search(r"objective value\s*=\s*(\S+)", line, re.I)
            if m:
                objective = float(m.group(1))
            continue
        if lineno == 1 or (not entries and not cbc):
            m = _CBC_STATUS.match(line)
            if m:
                cbc = True
                status = _status_from_cbc(m.group("status"))
                try:
                    objective = float(m.group("obj"))
                except ValueError:
                    objective = None
                continue
        if line.startswith("**"):
            line = line[2:].strip()
        tok = line.split()
        try:
            if cbc:
                entries.append((int(tok[0]), tok[1], float(tok[2])))
            else:
                if len(tok) != 2:
                    raise ValueError("expected 'name value'")
                entries.append((None, tok[0], float(tok[1])))
        except (ValueError, IndexError) as exc:
            raise SolutionParseError(f"malformed solution line: {exc}", line=lineno) from None
    if cbc:
        blocks, cur, last = [], [], None
        for idx, name, val in entries:
            if last is not None and idx <= last:
                blocks.append(cur)
                cur = []
            cur.append((name, val))
            last = idx
        blocks.append(cur)
        columns = blocks[-1] if len(blocks) > 1 else cur
    else:
        columns = [(n, v) for _, n, v in entries]
        if entries and status == "unknown":
            status = "feasible"
    values = dict(columns)
    if instance is not None:
        unknown = [n for n in values if n not in instance.index]
        if unknown:
            raise SolutionParseError(f"unknown variable {unknown[0]!r} in solution")
    return {"status": status, "objective": objective, "values": values}
