"""
Oracle Service - 완전 컨텍스트 열거 기반 참조 구현

모든 엔진(ve, rules, bounds)의 결과를 검증하는 brute-force 기준
"""

import logging
import math
from typing import Iterable, List, Optional, Tuple

from config.settings import ORACLE_MAX_ENUM
from services.approx_service import BoundedPosterior, bounds_from_sums
from services.errors import EnumerationBudgetExceeded, ImpossibleEvidence, InvalidQuery, InvalidTarget, OutOfRange
from services.exact_service import Distribution
from services.model_service import EMPTY, Context, Rule, RuleBase, RuleBaseKind, Variable

logger = logging.getLogger(__name__)

Interval = Tuple[float, float]


def applicable_product(rules: Iterable[Rule], ctx: Context) -> Interval:
    """Product of the bounds of every rule whose head and body hold in ctx."""
    lower, upper = 1.0, 1.0
    for rule in rules:
        if ctx.entails(rule.context):
            lower *= rule.lower
            upper *= rule.upper
    return lower, upper


def applicable_count(rules: Iterable[Rule], ctx: Context, var: int) -> int:
    """Rules with var in the head that apply in ctx."""
    return sum(1 for rule in rules if var in rule.head and ctx.entails(rule.context))


class EnumerationOracle:
    """
    완전 컨텍스트 열거 오라클

    Args:
        max_enum: 열거할 수 있는 최대 완전 컨텍스트 수
    """

    def __init__(self, max_enum: int = ORACLE_MAX_ENUM):
        self.max_enum = max_enum

    def _check_budget(self, rb: RuleBase, fixed: Context) -> None:
        size = math.prod(v.size for v in rb.variables if v.index not in fixed)
        if size > self.max_enum:
            raise EnumerationBudgetExceeded(f"{size} complete contexts exceed the oracle limit of {self.max_enum}")

    def conjunction_probability(self, rb: RuleBase, ctx: Context) -> Interval:
        """
        Σ over complete contexts extending ctx of the applicable-rule product

        Returns:
            (하한 합, 상한 합) - exact 규칙 베이스에서는 두 값이 같다
        """
        self._check_budget(rb, ctx)
        lows, highs = [], []
        for complete in rb.complete_contexts(ctx):
            lower, upper = applicable_product(rb.rules, complete)
            lows.append(lower)
            highs.append(upper)
        return math.fsum(lows), math.fsum(highs)

    def enumerate_joint(self, rb: RuleBase, query: Variable, evidence: Context) -> Tuple[List[float], List[float]]:
        """Per query value, (P⁻(v ∧ e), P⁺(v ∧ e)) by enumeration."""
        if query.index in evidence:
            raise InvalidQuery(f"query variable {query.name} is observed")
        self._check_budget(rb, evidence)

        lows: List[List[float]] = [[] for _ in range(query.size)]
        highs: List[List[float]] = [[] for _ in range(query.size)]
        for complete in rb.complete_contexts(evidence):
            lower, upper = applicable_product(rb.rules, complete)
            value = complete.get(query.index)
            lows[value].append(lower)
            highs[value].append(upper)
        return [math.fsum(terms) for terms in lows], [math.fsum(terms) for terms in highs]

    def enumerate_posterior(self, rb: RuleBase, query: Variable, evidence: Context) -> Distribution:
        """
        P(query | evidence) by summing complete-context products

        Raises:
            ImpossibleEvidence: P(evidence) = 0
            EnumerationBudgetExceeded: 열거 공간이 max_enum보다 클 때
        """
        products, _ = self.enumerate_joint(rb, query, evidence)
        normalizer = math.fsum(products)
        if normalizer <= 0.0:
            raise ImpossibleEvidence(f"evidence {rb.describe_context(evidence)} has probability 0")
        return Distribution(query.name, query.domain, tuple(p / normalizer for p in products))

    def enumerate_bounds(self, arb: RuleBase, query: Variable, evidence: Context) -> BoundedPosterior:
        lows, highs = self.enumerate_joint(arb, query, evidence)
        return bounds_from_sums(query, lows, highs)


_oracle_instance: Optional[EnumerationOracle] = None


def get_oracle() -> EnumerationOracle:
    """EnumerationOracle 싱글톤 인스턴스 반환"""
    global _oracle_instance
    if _oracle_instance is None:
        _oracle_instance = EnumerationOracle()
    return _oracle_instance


def conjunction_probability(rb: RuleBase, ctx: Context = EMPTY) -> Interval:
    return get_oracle().conjunction_probability(rb, ctx)


def enumerate_joint(rb: RuleBase, query: Variable, evidence: Context) -> Tuple[List[float], List[float]]:
    return get_oracle().enumerate_joint(rb, query, evidence)


def enumerate_posterior(rb: RuleBase, query: Variable, evidence: Context) -> Distribution:
    return get_oracle().enumerate_posterior(rb, query, evidence)


def enumerate_bounds(arb: RuleBase, query: Variable, evidence: Context) -> BoundedPosterior:
    return get_oracle().enumerate_bounds(arb, query, evidence)


def perturb_parameter(rb: RuleBase, rule_id: int, delta: float, bound: str = "both") -> RuleBase:
    """
    규칙 하나의 확률(또는 한쪽 경계)을 delta만큼 이동

    합이 1이라는 제약은 다시 검사하지 않는다.

    Args:
        rb: 규칙 베이스
        rule_id: 대상 규칙
        delta: 부호 있는 이동량
        bound: "both" | "lower" | "upper"

    Raises:
        OutOfRange: 결과가 [0, 1]을 벗어나거나 lower > upper가 될 때
    """
    if bound not in ("both", "lower", "upper"):
        raise InvalidTarget(f"unknown bound {bound!r}")
    try:
        rule = rb.rule(rule_id)
    except KeyError:
        raise InvalidTarget(f"unknown rule id {rule_id}") from None
    if delta == 0:
        return rb

    lower = rule.lower + delta if bound in ("both", "lower") else rule.lower
    upper = rule.upper + delta if bound in ("both", "upper") else rule.upper
    if not (0.0 <= lower <= 1.0 and 0.0 <= upper <= 1.0) or lower > upper:
        raise OutOfRange(f"perturbing rule {rule_id} by {delta} gives [{lower}, {upper}]")

    rules = [r for r in rb.rules if r.id != rule_id] + [Rule(rule.id, rule.head, rule.body, lower, upper)]
    kind = RuleBaseKind.APPROXIMATING if lower != upper else rb.kind
    return rb.with_rules(rules, kind)
