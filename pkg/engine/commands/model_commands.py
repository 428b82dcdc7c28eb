"""
Model Commands
validate / convert / compress
"""

import argparse
import logging
from pathlib import Path

from commands.options import add_simplify_options, checked_rule_base, emit, load_document
from services.errors import InferenceError, InvalidInput
from services.ingest_service import (
    ModelDocument,
    cpt_to_rules,
    extract_structure,
    render,
    rules_document,
    rules_to_network,
    table_sizes,
)
from services.model_service import head_counts, validate
from services.report_service import CompressReport, CompressRow, validation_record

logger = logging.getLogger(__name__)


# ============================================
# validate
# ============================================

def cmd_validate(args: argparse.Namespace) -> int:
    """규칙 베이스 불변식 검사 (유효하면 0, 위반이 있으면 1)"""
    doc, digest = load_document(args.model)
    rb = doc.to_rule_base()
    report = validate(rb)
    emit(validation_record(args.model, digest, doc.kind, rb, report), args)
    if report.valid:
        logger.info(f"✅ {args.model} is a valid rule base ({len(rb.rules)} rules)")
        return 0
    logger.info(f"⚠️ {args.model}: {len(report.violations)} violations")
    return 1


# ============================================
# convert
# ============================================

def cmd_convert(args: argparse.Namespace) -> int:
    """Network -> rule document, rule document -> tabulated network."""
    doc, _ = load_document(args.model)
    if doc.network is not None:
        converted = rules_document(cpt_to_rules(doc.network))
    else:
        converted = ModelDocument("network", doc.variables, network=rules_to_network(doc.rule_base))
    text = render(converted)

    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        logger.info(f"💾 wrote {converted.kind} document to {args.out}")
    else:
        print(text, end="")
    return 0


# ============================================
# compress
# ============================================

def cmd_compress(args: argparse.Namespace) -> int:
    """
    CPT 압축 표: 변수별 table 크기, R(0), R(threshold)

    threshold 0 결과는 exact, threshold > 0 결과는 approximating 규칙 베이스
    """
    doc, digest = load_document(args.model)
    rb = checked_rule_base(doc)
    if args.threshold < 0:
        raise InvalidInput("threshold must be non-negative")

    try:
        sizes = table_sizes(doc.to_network())
    except InferenceError as e:
        logger.warning(f"⚠️ table sizes unavailable: {e.detail}")
        sizes = {}

    exact = extract_structure(rb, 0.0, extreme_guard=args.extreme_guard)
    compressed = extract_structure(rb, args.threshold, extreme_guard=args.extreme_guard)
    r0, rth = head_counts(exact), head_counts(compressed)

    parents = {
        v.name: len({var for rule in rb.rules_for(v.index) for var in rule.body.variables}) for v in rb.variables
    }
    rows = [
        CompressRow(
            variable=v.name,
            parents=parents[v.name],
            table_rows=sizes.get(v.name, (0, 0))[0],
            table_entries=sizes.get(v.name, (0, 0))[1],
            rules_exact=r0[v.name],
            rules_threshold=rth[v.name],
        )
        for v in rb.variables
        if not args.multi_parent or parents[v.name] > 1
    ]
    total = CompressRow(
        variable="total",
        table_rows=sum(row.table_rows for row in rows),
        table_entries=sum(row.table_entries for row in rows),
        rules_exact=sum(row.rules_exact for row in rows) if args.multi_parent else len(exact.rules),
        rules_threshold=sum(row.rules_threshold for row in rows) if args.multi_parent else len(compressed.rules),
    )

    if args.out:
        Path(args.out).write_text(render(rules_document(compressed)), encoding="utf-8")
        logger.info(f"💾 wrote {len(compressed.rules)} rules to {args.out}")

    emit(
        CompressReport(
            model=args.model,
            input_digest=digest,
            threshold=args.threshold,
            extreme_guard=args.extreme_guard,
            multi_parent=args.multi_parent,
            rows=rows,
            total=total,
            output=args.out,
        ),
        args,
    )
    logger.info(f"✅ compressed {len(rb.rules)} -> {len(exact.rules)} (th=0) / {len(compressed.rules)} rules")
    return 0


def register(subparsers, common: argparse.ArgumentParser) -> None:
    """validate / convert / compress 하위 명령 등록"""
    parser = subparsers.add_parser("validate", parents=[common], help="check the rule-base invariants")
    parser.set_defaults(handler=cmd_validate)

    parser = subparsers.add_parser("convert", parents=[common], help="convert between cpt and rule documents")
    parser.set_defaults(handler=cmd_convert)

    parser = subparsers.add_parser("compress", parents=[common], help="rule counts after restricted resolution")
    add_simplify_options(parser, strategy=False)
    parser.add_argument("--multi-parent", action="store_true", help="list only variables with two or more parents")
    parser.set_defaults(handler=cmd_compress)
