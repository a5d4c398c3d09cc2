"""Plain-text rendering of fit and Monte Carlo reports.

Renderers work from the JSON documents produced by ``FitResult.to_dict``
and ``McSummary.to_dict`` and never recompute estimates; the only
arithmetic is turning step counts into percentages for display.
"""

from __future__ import annotations

import json
import math
from collections.abc import Mapping

__all__ = ["SchemaError", "validate", "render", "render_fit", "render_mc", "load_report", "dumps"]


class SchemaError(ValueError):
    """A report document is missing a field or has one of the wrong type."""

    def __init__(self, field: str, problem: str):
        super().__init__(f"field {field!r}: {problem}")
        self.field = field


def dumps(doc: Mapping) -> str:
    """Deterministic JSON text (sorted keys, fixed indentation, trailing newline)."""
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n"


def load_report(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError("<document>", f"not valid JSON ({exc.msg} at line {exc.lineno})") from None
    validate(doc)
    return doc


# ---------------------------------------------------------------- validation

def _is_num(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def _need(doc, name, check, what, nullable=False):
    if name not in doc:
        raise SchemaError(name, "missing")
    val = doc[name]
    if val is None and nullable:
        return val
    if not check(val):
        raise SchemaError(name, f"expected {what}")
    return val


def _num_list(x, length=None):
    return isinstance(x, list) and all(_is_num(e) for e in x) and (length is None or len(x) == length)


def _matrix(x, p):
    return isinstance(x, list) and len(x) == p and all(_num_list(r, p) for r in x)


def _validate_fit(doc):
    names = _need(doc, "coefficients", lambda x: isinstance(x, list) and all(isinstance(e, str) for e in x),
                  "a list of names")
    p = len(names)
    _need(doc, "beta", lambda x: _num_list(x, p), f"{p} numbers")
    _need(doc, "std_errors", lambda x: _num_list(x, p), f"{p} numbers", nullable=True)
    _need(doc, "v", lambda x: isinstance(x, dict) and all(_is_num(e) for e in x.values()),
          "an object of numbers")
    _need(doc, "converged", lambda x: isinstance(x, bool), "a boolean")
    _need(doc, "steps", lambda x: isinstance(x, int) and not isinstance(x, bool), "an integer", nullable=True)
    _need(doc, "rate_estimate", _is_num, "a number", nullable=True)
    _need(doc, "conv_tol", _is_num, "a number")
    for key in doc["v"]:
        parts = key.split(",")
        if len(parts) != 3:
            raise SchemaError(f"v.{key}", "key must look like 'j,k,l'")


def _validate_mc(doc):
    _need(doc, "n_rep", lambda x: isinstance(x, int) and not isinstance(x, bool) and x >= 1, "a positive integer")
    ests = _need(doc, "estimators", lambda x: isinstance(x, list) and x and all(isinstance(e, str) for e in x),
                 "a non-empty list of names")
    _need(doc, "spec", lambda x: isinstance(x, dict), "an object")
    for block in ("means", "covariances", "n_ok"):
        _need(doc, block, lambda x: isinstance(x, dict), "an object")
        for e in ests:
            if e not in doc[block]:
                raise SchemaError(f"{block}.{e}", "missing")
    hist = _need(doc, "step_histogram", lambda x: isinstance(x, dict), "an object")
    for k, c in hist.items():
        if not (k.isdigit() and isinstance(c, int)):
            raise SchemaError(f"step_histogram.{k}", "expected integer step -> integer count")
    p = None
    for e in ests:
        m = doc["means"][e]
        if m is None:
            continue
        if not _num_list(m, p):
            raise SchemaError(f"means.{e}", "expected a list of numbers of common length")
        p = len(m)
    for e in ests:
        c = doc["covariances"][e]
        if c is not None and (p is None or not _matrix(c, p)):
            raise SchemaError(f"covariances.{e}", "expected a square matrix matching the means")
    blue = _need(doc, "blue_covariance", lambda x: isinstance(x, list), "a matrix", nullable=True)
    if blue is not None and p is not None and not _matrix(blue, p):
        raise SchemaError("blue_covariance", "expected a square matrix matching the means")


def validate(doc) -> str:
    """Check a report document; return its kind or raise :class:`SchemaError`."""
    if not isinstance(doc, dict):
        raise SchemaError("<document>", "expected a JSON object")
    kind = _need(doc, "kind", lambda x: x in ("fit_result", "mc_summary"), "'fit_result' or 'mc_summary'")
    (_validate_fit if kind == "fit_result" else _validate_mc)(doc)
    return kind


# ---------------------------------------------------------------- rendering

def _fmt(x, digits=4) -> str:
    if x is None:
        return "-"
    return f"{x:.{digits}f}"


def _table(rows: list[list[str]]) -> list[str]:
    """Left-align the first column, right-align the others."""
    widths = [max(len(r[c]) for r in rows if c < len(r)) for c in range(max(map(len, rows)))]
    out = []
    for r in rows:
        cells = [r[0].ljust(widths[0])] + [s.rjust(w) for s, w in zip(r[1:], widths[1:])]
        out.append("  ".join(cells).rstrip())
    return out


def render_fit(doc: Mapping) -> str:
    names = doc["coefficients"] or [f"b{i}" for i in range(len(doc["beta"]))]
    se = doc["std_errors"] or [None] * len(names)
    lines = [f"Estimates ({doc.get('method', 'iee')})", ""]
    lines += _table(
        [["Coef.", "Estimate", "s.e."]]
        + [[name, _fmt(b), _fmt(s)] for name, b, s in zip(names, doc["beta"], se)]
    )
    lines += ["", "Covariance components"]
    rows = [["j", "k", "l", "v"]]
    for key, val in doc["v"].items():
        j, k, l = key.split(",")
        rows.append([j, k, l, _fmt(val)])
    lines += _table(rows)
    lines.append("")
    if doc["converged"]:
        lines.append(f"Converged in {doc['steps']} steps (tolerance {doc['conv_tol']:g})")
    else:
        lines.append(f"Did not converge (tolerance {doc['conv_tol']:g})")
    lines.append(f"Rate estimate: {_fmt(doc['rate_estimate'])}")
    if doc.get("repaired_subjects"):
        lines.append(f"Subjects with repaired covariance: {doc['repaired_subjects']}")
    return "\n".join(lines) + "\n"


_LABELS = {"ols": "OLS", "onestep": "One-step", "irls": "IRLS"}


def render_mc(doc: Mapping) -> str:
    ests = doc["estimators"]
    n_rep = doc["n_rep"]
    hist = {int(k): v for k, v in doc["step_histogram"].items()}
    lines = [f"Monte Carlo summary: {n_rep} replications"]
    spec = doc["spec"]
    if "design" in spec:
        lines.append(f"Design {spec['design']}, scenario {spec.get('scenario', '-')}, n = {spec.get('n', '-')}")
    lines.append("")

    if "irls" in ests:
        steps = range(2, max([11, *hist]) + 1)
        lines.append("Number of steps to converge (% of replications)")
        lines += _table([
            ["Steps"] + [str(s) for s in steps],
            ["%"] + [f"{100.0 * hist.get(s, 0) / n_rep:.1f}" for s in steps],
        ])
        lines.append("")

    labels = [_LABELS.get(e, e) for e in ests]
    if all(doc["covariances"][e] is None for e in ests):
        lines.append("Moment blocks suppressed: fewer than two successful replications.")
    else:
        p = next(len(doc["means"][e]) for e in ests if doc["means"][e] is not None)
        lines.append("Simulated means")
        rows = [["Coef."] + labels]
        for i in range(p):
            rows.append([f"b{i}"] + [_fmt(None if doc["means"][e] is None else doc["means"][e][i]) for e in ests])
        lines += _table(rows)
        lines.append("")
        lines.append("Simulated covariance matrices")
        blue = doc.get("blue_covariance")
        head = [""]
        for lab in labels:
            head += [lab] + [""] * (p - 1)
        if blue is not None:
            head += ["BLUE"] + [""] * (p - 1)
        rows = [head]
        for i in range(p):
            row = [f"b{i}"]
            for e in ests:
                c = doc["covariances"][e]
                row += [_fmt(None if c is None else c[i][j]) for j in range(p)]
            if blue is not None:
                row += [_fmt(blue[i][j]) for j in range(p)]
            rows.append(row)
        lines += _table(rows)
        lines.append("")
        lines.append("Simulated variances")
        lines += _table(
            [["Coef."] + labels]
            + [[f"b{i}"] + [_fmt(None if doc["covariances"][e] is None else doc["covariances"][e][i][i])
                           for e in ests] for i in range(p)]
        )
    lines.append("")
    lines.append("Successful runs: " + ", ".join(f"{_LABELS.get(e, e)} {doc['n_ok'][e]}" for e in ests))
    return "\n".join(lines) + "\n"


def render(doc: Mapping) -> str:
    kind = validate(doc)
    return render_fit(doc) if kind == "fit_result" else render_mc(doc)
