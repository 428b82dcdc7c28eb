"""
Inference Commands
infer / bounds / compare
"""

import argparse
import logging
import time
from typing import List

import numpy as np

from commands.options import (
    add_query_options,
    add_simplify_options,
    checked_rule_base,
    emit,
    find_variable,
    load_document,
    parse_evidence,
    parse_order,
    simplify_config,
)
from config.settings import DEFAULT_SEED, DEFAULT_TRIALS, ENGINE_TOLERANCE, ORACLE_MAX_ENUM
from services.approx_service import bounded_posterior, simplify
from services.errors import EnumerationBudgetExceeded, ImpossibleEvidence, InvalidInput
from services.exact_service import InferenceStats, compute_belief
from services.factor_service import ve_posterior
from services.model_service import Context, RuleBase, RuleBaseKind
from services.oracle_service import enumerate_posterior
from services.report_service import (
    CompareReport,
    CompareViolation,
    RunReport,
    bounds_record,
    named_context,
    stats_record,
)

logger = logging.getLogger(__name__)

COMPARE_THRESHOLDS = (0.05, 0.1, 0.2)


# ============================================
# infer
# ============================================

def cmd_infer(args: argparse.Namespace) -> int:
    """
    사후 확률 계산 (engine: ve | rules | enum)

    Returns:
        0 (ImpossibleEvidence는 main에서 exit 3으로 처리)
    """
    doc, digest = load_document(args.model)
    rb = checked_rule_base(doc)
    query = find_variable(rb.variables, args.query)
    evidence = parse_evidence(rb.variables, args.evidence)
    order = parse_order(rb.variables, args.order)

    started = time.perf_counter()
    if args.engine == "ve":
        posterior, stats = ve_posterior(doc.to_network(), query, evidence, order)
    elif args.engine == "rules":
        posterior, stats = compute_belief(rb, query, evidence, order)
    else:
        posterior = enumerate_posterior(rb, query, evidence)
        stats = InferenceStats("enum")
    elapsed = time.perf_counter() - started

    emit(
        RunReport(
            command="infer",
            model=args.model,
            input_digest=digest,
            query=query.name,
            evidence=named_context(rb.variables, evidence),
            ordering=stats.ordering,
            engine=args.engine,
            posterior=posterior.as_dict(),
            rule_count=len(rb.rules),
            stats=stats_record(stats),
            wall_time=elapsed,
        ),
        args,
    )
    logger.info(f"✅ {args.engine}: P({query.name} | evidence) = {posterior.as_dict()}")
    return 0


# ============================================
# bounds
# ============================================

def _oracle_posterior(rb: RuleBase, query, evidence: Context):
    if rb.kind is not RuleBaseKind.EXACT:
        return None
    try:
        return enumerate_posterior(rb, query, evidence)
    except EnumerationBudgetExceeded:
        logger.info(f"⚠️ joint space above {ORACLE_MAX_ENUM}: skipping the exact containment check")
        return None


def cmd_bounds(args: argparse.Namespace) -> int:
    """
    simplify 후 두 수 추론으로 사후 확률 구간 계산

    Returns:
        0, 결합 공간이 허용하면 정확한 사후 확률 포함 여부도 검사하여 벗어나면 1
    """
    doc, digest = load_document(args.model)
    rb = checked_rule_base(doc)
    query = find_variable(rb.variables, args.query)
    evidence = parse_evidence(rb.variables, args.evidence)
    order = parse_order(rb.variables, args.order)
    cfg = simplify_config(args)

    started = time.perf_counter()
    arb = simplify(rb, cfg)
    bp, stats = bounded_posterior(arb, query, evidence, order, cfg if args.simplify_steps else None)
    elapsed = time.perf_counter() - started

    exact = _oracle_posterior(rb, query, evidence)
    contains = bp.contains(exact, ENGINE_TOLERANCE) if exact is not None else None

    emit(
        RunReport(
            command="bounds",
            model=args.model,
            input_digest=digest,
            query=query.name,
            evidence=named_context(rb.variables, evidence),
            ordering=stats.ordering,
            engine="bounds",
            bounds=bounds_record(bp),
            exact=exact.as_dict() if exact is not None else None,
            contains_exact=contains,
            threshold=cfg.threshold,
            strategy=cfg.strategy,
            rule_count=len(arb.rules),
            stats=stats_record(stats),
            wall_time=elapsed,
        ),
        args,
    )
    if contains is False:
        logger.error(f"❌ bounds for {query.name} miss the exact posterior")
        return 1
    logger.info(f"✅ bounds for {query.name} with {len(arb.rules)} rules (th={cfg.threshold})")
    return 0


# ============================================
# compare
# ============================================

def _reproduce(args: argparse.Namespace, rb: RuleBase, query, evidence: Context, order: List[int], threshold=None) -> str:
    parts = [f"main.py {'bounds' if threshold is not None else 'infer'} --model {args.model} --query {query.name}"]
    named = named_context(rb.variables, evidence)
    parts += [f"--evidence {name}={value}" for name, value in named.items()]
    parts.append(f"--order {','.join(rb.variables[var].name for var in order) if order else 'auto'}")
    if threshold is not None:
        parts.append(f"--threshold {threshold} --strategy {args.strategy}")
    return " ".join(parts) + f"  # seed {args.seed}"


def cmd_compare(args: argparse.Namespace) -> int:
    """
    무작위 질의/증거/순서로 ve = rules = enum 일치와 구간 포함을 검사

    Returns:
        위반이 없으면 0, 있으면 1 (재현 명령 포함)
    """
    doc, digest = load_document(args.model)
    rb = checked_rule_base(doc)
    if rb.kind is not RuleBaseKind.EXACT:
        raise InvalidInput("compare needs an exact model")
    net = doc.to_network()

    thresholds = [args.threshold] if args.threshold is not None else list(COMPARE_THRESHOLDS)
    approximations = [(th, simplify(rb, simplify_config(args, th))) for th in thresholds]
    rng = np.random.default_rng(args.seed)
    n = len(rb.variables)

    violations: List[CompareViolation] = []
    checked = skipped = 0
    max_gap = 0.0
    for trial in range(args.trials):
        query = rb.variables[int(rng.integers(n))]
        others = [int(var) for var in rng.permutation([v.index for v in rb.variables if v != query])]
        observed = others[: int(rng.integers(len(others) + 1))] if others else []
        evidence = Context.of({var: int(rng.integers(rb.variables[var].size)) for var in observed})
        order = [var for var in others if var not in evidence]
        order = [int(var) for var in rng.permutation(order)] if order else []

        try:
            exact = enumerate_posterior(rb, query, evidence)
        except ImpossibleEvidence:
            skipped += 1
            logger.warning(f"⚠️ trial {trial}: evidence {rb.describe_context(evidence)} is impossible, skipped")
            continue
        checked += 1

        ve, _ = ve_posterior(net, query, evidence, order)
        rules, _ = compute_belief(rb, query, evidence, order)
        gap = max(
            max(abs(a - b) for a, b in zip(ve.probabilities, exact.probabilities)),
            max(abs(a - b) for a, b in zip(rules.probabilities, exact.probabilities)),
        )
        max_gap = max(max_gap, gap)
        if gap > ENGINE_TOLERANCE:
            violations.append(CompareViolation(
                trial=trial,
                kind="engines",
                detail=f"ve {ve.probabilities} / rules {rules.probabilities} / enum {exact.probabilities}",
                reproduce=_reproduce(args, rb, query, evidence, order),
            ))

        for threshold, arb in approximations:
            bp, _ = bounded_posterior(arb, query, evidence, order)
            if not bp.contains(exact, ENGINE_TOLERANCE):
                violations.append(CompareViolation(
                    trial=trial,
                    kind="bounds",
                    detail=f"th={threshold}: lows {bp.lows} highs {bp.highs} miss {exact.probabilities}",
                    reproduce=_reproduce(args, rb, query, evidence, order, threshold),
                ))

    emit(
        CompareReport(
            model=args.model,
            input_digest=digest,
            seed=args.seed,
            trials=args.trials,
            checked=checked,
            skipped=skipped,
            thresholds=thresholds,
            max_engine_gap=max_gap,
            violations=violations,
        ),
        args,
    )
    if violations:
        logger.error(f"❌ {len(violations)} violations in {checked} trials")
        return 1
    logger.info(f"✅ {checked} trials agree (max gap {max_gap:.3e})")
    return 0


def register(subparsers, common: argparse.ArgumentParser) -> None:
    """infer / bounds / compare 하위 명령 등록"""
    parser = subparsers.add_parser("infer", parents=[common], help="exact posterior of one variable")
    add_query_options(parser)
    parser.add_argument("--engine", choices=("ve", "rules", "enum"), default="rules")
    parser.set_defaults(handler=cmd_infer)

    parser = subparsers.add_parser("bounds", parents=[common], help="posterior intervals after simplification")
    add_query_options(parser)
    add_simplify_options(parser)
    parser.add_argument("--simplify-steps", action="store_true", help="also simplify after every elimination")
    parser.set_defaults(handler=cmd_bounds)

    parser = subparsers.add_parser("compare", parents=[common], help="randomized engine agreement and soundness")
    add_simplify_options(parser, threshold=None)
    parser.add_argument("--seed", type=int, default=DEFAULT_SEED)
    parser.add_argument("--trials", type=int, default=DEFAULT_TRIALS)
    parser.set_defaults(handler=cmd_compare)
