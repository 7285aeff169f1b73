"""Run reports and their CSV / JSON serialisation.

Floats are written with 17 significant digits and nothing time- or
machine-dependent enters the body, so identical inputs give identical bytes.
"""
from __future__ import annotations

import json
import math
import numbers
from dataclasses import dataclass, field

REPORT_VERSION = 1


def fmt_float(x: float) -> str:
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, numbers.Integral):
        return str(int(value))
    if isinstance(value, numbers.Real):
        return fmt_float(value)
    if value is None:
        return ""
    return str(value)


@dataclass
class Metric:
    name: str
    value: float
    bound: str
    passed: bool
    error: str = ""


@dataclass
class RunReport:
    scenario: str
    header: dict
    metrics: list = field(default_factory=list)
    columns: list = field(default_factory=list)
    rows: list = field(default_factory=list)
    numeric_failure: bool = False

    @property
    def passed(self) -> bool:
        return bool(self.metrics) and all(m.passed for m in self.metrics)

    @property
    def exit_code(self) -> int:
        if self.numeric_failure:
            return 3
        return 0 if self.passed else 1

    def check(self, name, fn, bound: str, predicate):
        """Evaluate one metric; exceptions become a failed metric instead of a crash."""
        try:
            value = fn()
            ok = bool(predicate(value))
            self.metrics.append(Metric(name, float(value), bound, ok))
            return value
        except Exception as exc:  # noqa: BLE001 - reported per metric
            self.metrics.append(Metric(name, math.nan, bound, False, f"{type(exc).__name__}: {exc}"))
            self.numeric_failure = True
            return None


def _csv_field(text: str) -> str:
    if any(c in text for c in ',"\n'):
        return '"' + text.replace('"', '""') + '"'
    return text


def to_csv(report: RunReport) -> str:
    lines = [f"# entrofield report v{REPORT_VERSION}"]
    lines += [f"# {k} = {fmt(v)}" for k, v in report.header.items() if k != "config"]
    lines += [f"# config | {line}" for line in report.header.get("config", "").splitlines()]
    lines.append(f"# status = {'pass' if report.passed else 'fail'}")
    lines.append("metric,value,bound,passed,error")
    for m in report.metrics:
        lines.append(",".join(_csv_field(fmt(v)) for v in (m.name, m.value, m.bound, m.passed, m.error)))
    lines.append("")
    lines.append(",".join(report.columns))
    for row in report.rows:
        lines.append(",".join(_csv_field(fmt(v)) for v in row))
    return "\n".join(lines) + "\n"


def _json(value, indent=0) -> str:
    pad = "  " * (indent + 1)
    end = "  " * indent
    if isinstance(value, bool) or value is None:
        return {True: "true", False: "false", None: "null"}[value]
    if isinstance(value, numbers.Integral):
        return str(int(value))
    if isinstance(value, numbers.Real):
        return fmt_float(value) if math.isfinite(value) else f'"{fmt_float(value)}"'
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, dict):
        if not value:
            return "{}"
        items = [f"{pad}{_json(str(k))}: {_json(v, indent + 1)}" for k, v in value.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(value, (list, tuple)):
        if not value:
            return "[]"
        if all(not isinstance(v, (list, tuple, dict)) for v in value):
            return "[" + ", ".join(_json(v) for v in value) + "]"
        return "[\n" + ",\n".join(pad + _json(v, indent + 1) for v in value) + "\n" + end + "]"
    raise TypeError(f"cannot serialise {type(value).__name__}")


def to_json(report: RunReport) -> str:
    doc = {
        "report_version": REPORT_VERSION,
        "header": report.header,
        "status": "pass" if report.passed else "fail",
        "metrics": [{"metric": m.name, "value": m.value, "bound": m.bound,
                     "passed": m.passed, "error": m.error} for m in report.metrics],
        "columns": list(report.columns),
        "rows": [list(r) for r in report.rows],
    }
    return _json(doc) + "\n"
