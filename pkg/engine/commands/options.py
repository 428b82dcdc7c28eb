"""
Shared command-line options and argument helpers
"""

import argparse
import sys
from typing import Iterable, List, Optional, Tuple

from pydantic import ValidationError

from config.settings import DEFAULT_STRATEGY, DEFAULT_THRESHOLD
from services.approx_service import SimplifyConfig
from services.errors import InvalidInput, InvalidQuery, MalformedRuleBase
from services.ingest_service import ModelDocument, load_model
from services.model_service import Context, RuleBase, Variable, validate
from services.report_service import Report, file_digest, get_report_service


def common_parser() -> argparse.ArgumentParser:
    """Flags every sub-command accepts."""
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument("--model", required=True, metavar="PATH", help="model file")
    parser.add_argument("--format", choices=("table", "record"), default="table", help="output format")
    parser.add_argument("--out", metavar="PATH", help="write the produced model to PATH")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (-vv for debug)")
    parser.add_argument("-q", "--quiet", action="store_true", help="errors only")
    return parser


def add_query_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--query", required=True, metavar="VAR")
    parser.add_argument("--evidence", action="append", default=[], metavar="VAR=VAL", help="repeatable")
    parser.add_argument("--order", default="auto", metavar="auto|V1,V2,...", help="elimination ordering")


def add_simplify_options(
    parser: argparse.ArgumentParser, threshold: Optional[float] = DEFAULT_THRESHOLD, strategy: bool = True
) -> None:
    parser.add_argument("--threshold", type=float, default=threshold, metavar="FLOAT")
    if strategy:
        parser.add_argument("--strategy", choices=("drop", "resolve", "both"), default=DEFAULT_STRATEGY)
    parser.add_argument("--extreme-guard", action="store_true", help="refuse widening into [0, eps) or (1-eps, 1]")


# ============================================
# 인자 해석
# ============================================

def parse_evidence(variables: Tuple[Variable, ...], items: Iterable[str]) -> Context:
    """`--evidence var=value` 목록을 Context로 변환"""
    by_name = {variable.name: variable for variable in variables}
    mapping = {}
    for item in items:
        name, sep, value = item.partition("=")
        name, value = name.strip(), value.strip()
        if not sep or not name or not value:
            raise InvalidQuery(f"evidence must look like VAR=VALUE, got {item!r}")
        if name not in by_name:
            raise InvalidQuery(f"unknown variable {name!r} in evidence")
        variable = by_name[name]
        index = variable.value_index(value)
        if mapping.get(variable.index, index) != index:
            raise InvalidQuery(f"conflicting evidence for {name}")
        mapping[variable.index] = index
    return Context.of(mapping)


def find_variable(variables: Tuple[Variable, ...], name: str) -> Variable:
    for variable in variables:
        if variable.name == name:
            return variable
    raise InvalidQuery(f"unknown variable {name!r}")


def parse_order(variables: Tuple[Variable, ...], text: str) -> Optional[List[int]]:
    """`auto` -> None (min-degree), otherwise a comma-separated list of variable names."""
    if text.strip() == "auto":
        return None
    names = [name.strip() for name in text.split(",") if name.strip()]
    return [find_variable(variables, name).index for name in names]


def simplify_config(args: argparse.Namespace, threshold: Optional[float] = None) -> SimplifyConfig:
    try:
        return SimplifyConfig(
            threshold=args.threshold if threshold is None else threshold,
            strategy=args.strategy,
            extreme_guard=args.extreme_guard,
        )
    except ValidationError as e:
        raise InvalidInput(f"invalid simplification settings: {e.errors()[0]['msg']}") from None


def emit(report: Report, args: argparse.Namespace) -> None:
    sys.stdout.write(get_report_service().render(report, args.format))


def load_document(path: str) -> Tuple[ModelDocument, str]:
    """Parse a model file and return it with its sha256 digest."""
    doc = load_model(path)
    return doc, file_digest(path)


def checked_rule_base(doc: ModelDocument) -> RuleBase:
    """The document's rule base, refused with exit 1 when it breaks the rule-base invariants."""
    rb = doc.to_rule_base()
    report = validate(rb)
    if not report.valid:
        first = report.violations[0]
        raise MalformedRuleBase(f"model is not a valid rule base: {first.detail}", witness=first.witness)
    return rb
