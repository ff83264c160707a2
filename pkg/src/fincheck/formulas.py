"""Financial formula templates and their decimal evaluator.

A template is JSON: named operand slots (each bound to a metric alias set and
a period rule) plus an arithmetic tree over those slots. The bundled library
lives in ``data/formulas.json``; ``data/metrics.json`` is the shared synonym
table for line-item names.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from decimal import Decimal, localcontext
from functools import lru_cache
from importlib import resources
from typing import Mapping, Optional, Union

from .errors import AmbiguousFormula, DivisionByZero, TemplateError
from .numbers import NumericValue, Unit, best_scale
from .text import contains_phrase, normalize_phrase

EVAL_PRECISION = 50
_OPS = {"+", "-", "*", "/"}


@dataclass(frozen=True)
class Operand:
    slot_name: str
    metric_aliases: tuple[str, ...]
    same_period: bool = True
    period_offset: Optional[str] = None
    metric: str = ""


@dataclass(frozen=True)
class Const:
    value: Decimal


@dataclass(frozen=True)
class Slot:
    name: str


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"
    guard: Optional[str] = None


Expr = Union[Const, Slot, BinOp]


@dataclass(frozen=True)
class FormulaTemplate:
    name: str
    output_aliases: tuple[str, ...]
    operands: tuple[Operand, ...]
    expression: Expr
    output_unit: Unit

    @property
    def slot_names(self) -> tuple[str, ...]:
        return tuple(o.slot_name for o in self.operands)


# ---------------------------------------------------------------------------
# loading

@lru_cache(maxsize=None)
def metric_aliases() -> dict[str, tuple[str, ...]]:
    raw = json.loads(resources.files("fincheck").joinpath("data/metrics.json").read_text())
    return {k: tuple(v) for k, v in raw.items()}


@lru_cache(maxsize=4096)
def canonical_metric(phrase: str) -> str:
    """Map a line-item name to its synonym-table key, or its normalized form."""
    norm = normalize_phrase(phrase)
    for key, aliases in metric_aliases().items():
        if norm == normalize_phrase(key) or any(norm == normalize_phrase(a) for a in aliases):
            return key
    return norm


def _parse_expr(node, where: str) -> Expr:
    if not isinstance(node, dict):
        raise TemplateError(f"{where}: expression node must be an object")
    if "const" in node:
        return Const(Decimal(str(node["const"])))
    if "slot" in node:
        return Slot(str(node["slot"]))
    op = node.get("op")
    args = node.get("args")
    if op not in _OPS or not isinstance(args, list) or len(args) != 2:
        raise TemplateError(f"{where}: binary node needs op in {sorted(_OPS)} and two args")
    guard = node.get("guard")
    if op == "/" and guard != "nonzero":
        raise TemplateError(f"{where}: division must declare guard 'nonzero'")
    return BinOp(op, _parse_expr(args[0], where), _parse_expr(args[1], where), guard)


def _slot_refs(expr: Expr) -> list[str]:
    if isinstance(expr, Slot):
        return [expr.name]
    if isinstance(expr, BinOp):
        return _slot_refs(expr.left) + _slot_refs(expr.right)
    return []


def template_from_json(raw: dict) -> FormulaTemplate:
    name = raw.get("name")
    if not name:
        raise TemplateError("template needs a name")
    aliases = metric_aliases()
    operands = []
    for o in raw.get("operands", []):
        slot = o.get("slot_name")
        if not slot:
            raise TemplateError(f"{name}: operand without slot_name")
        if "metric_aliases" in o:
            names = tuple(o["metric_aliases"])
        elif o.get("metric") in aliases:
            names = aliases[o["metric"]]
        else:
            raise TemplateError(f"{name}.{slot}: unknown metric {o.get('metric')!r}")
        same = bool(o.get("same_period", True))
        offset = o.get("period_offset")
        if not same and offset not in ("prior_year", "prior_quarter"):
            raise TemplateError(f"{name}.{slot}: non-same-period operand needs period_offset")
        operands.append(Operand(slot, names, same, offset, o.get("metric", "")))
    expr = _parse_expr(raw.get("expression"), name)
    refs = _slot_refs(expr)
    declared = [o.slot_name for o in operands]
    if sorted(refs) != sorted(declared) or len(set(refs)) != len(refs):
        raise TemplateError(f"{name}: expression must reference each slot exactly once")
    try:
        unit = Unit(raw.get("output_unit", "count"))
    except ValueError as exc:
        raise TemplateError(f"{name}: bad output_unit") from exc
    out_aliases = tuple(raw.get("output_aliases") or ())
    if not out_aliases:
        raise TemplateError(f"{name}: needs output_aliases")
    return FormulaTemplate(name, out_aliases, tuple(operands), expr, unit)


def load_templates(text: str) -> tuple[FormulaTemplate, ...]:
    raw = json.loads(text)
    if not isinstance(raw, list):
        raise TemplateError("template file must be a JSON array")
    templates = tuple(template_from_json(r) for r in raw)
    if len({t.name for t in templates}) != len(templates):
        raise TemplateError("duplicate template names")
    return templates


@lru_cache(maxsize=None)
def default_library() -> tuple[FormulaTemplate, ...]:
    return load_templates(resources.files("fincheck").joinpath("data/formulas.json").read_text())


def metric_lexicon(library=None) -> tuple[str, ...]:
    """Every metric phrase we know: template outputs plus line items."""
    library = library or default_library()
    words = {a for t in library for a in t.output_aliases}
    words.update(a for v in metric_aliases().values() for a in v)
    return tuple(sorted(words, key=lambda w: (-len(w), w)))


def derived_aliases(library=None) -> tuple[str, ...]:
    library = library or default_library()
    return tuple(sorted({a for t in library for a in t.output_aliases}, key=lambda w: (-len(w), w)))


# ---------------------------------------------------------------------------
# identification and evaluation

def identify_formula(text: str, library=None) -> Optional[FormulaTemplate]:
    """Template whose output alias is the longest phrase found in ``text``."""
    library = library or default_library()
    best_len, best = 0, []
    for t in library:
        hits = [len(normalize_phrase(a)) for a in t.output_aliases if contains_phrase(text, a)]
        if not hits:
            continue
        n = max(hits)
        if n > best_len:
            best_len, best = n, [t]
        elif n == best_len:
            best.append(t)
    if len(best) > 1:
        raise AmbiguousFormula([t.name for t in best])
    return best[0] if best else None


def _eval(expr: Expr, values: Mapping[str, Decimal]) -> Decimal:
    if isinstance(expr, Const):
        return expr.value
    if isinstance(expr, Slot):
        return values[expr.name]
    left, right = _eval(expr.left, values), _eval(expr.right, values)
    if expr.op == "+":
        return left + right
    if expr.op == "-":
        return left - right
    if expr.op == "*":
        return left * right
    if right == 0:
        raise DivisionByZero("denominator evaluated to zero")
    return left / right


def recompute(template: FormulaTemplate, operands: Mapping[str, NumericValue]) -> NumericValue:
    missing = set(template.slot_names) - set(operands)
    if missing:
        raise TemplateError(f"{template.name}: operands missing {sorted(missing)}")
    with localcontext() as ctx:
        ctx.prec = EVAL_PRECISION
        result = _eval(template.expression, {k: v.magnitude for k, v in operands.items()})
    currency = None
    if template.output_unit is Unit.CURRENCY:
        currency = next((v.currency for v in operands.values() if v.currency), None)
    return NumericValue(result, template.output_unit, best_scale(result, template.output_unit), currency)


def growth_template(metric_key: str, basis: str = "prior_year") -> FormulaTemplate:
    """Period-over-period growth of an arbitrary line item."""
    aliases = metric_aliases().get(metric_key, (metric_key,))
    expr = BinOp("*", Const(Decimal(100)),
                 BinOp("-", BinOp("/", Slot("current"), Slot("prior"), "nonzero"), Const(Decimal(1))))
    return FormulaTemplate(
        f"{metric_key}_{'yoy' if basis == 'prior_year' else 'qoq'}_growth",
        (f"{metric_key} growth",),
        (Operand("current", aliases, True, None, metric_key),
         Operand("prior", aliases, False, basis, metric_key)),
        expr, Unit.PERCENT,
    )


def delta_template(metric_key: str, unit: Unit, basis: str = "prior_year") -> FormulaTemplate:
    """Absolute period-over-period change of a line item."""
    aliases = metric_aliases().get(metric_key, (metric_key,))
    return FormulaTemplate(
        f"{metric_key}_delta", (f"{metric_key} change",),
        (Operand("current", aliases, True, None, metric_key),
         Operand("prior", aliases, False, basis, metric_key)),
        BinOp("-", Slot("current"), Slot("prior")), unit,
    )
