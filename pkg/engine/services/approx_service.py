"""
Approx Service - 근사 규칙 베이스

조건 제거(drop), 규칙 resolution, greedy 단순화, 근사 관계 검사,
그리고 하한/상한 두 수를 운반하는 사후 확률 구간 계산
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Literal, Optional, Sequence, Tuple

from pydantic import BaseModel, ConfigDict, Field

from config.settings import (
    CONTAINMENT_TOLERANCE,
    DEFAULT_STRATEGY,
    DEFAULT_THRESHOLD,
    ORACLE_MAX_ENUM,
    SIMPLIFY_MAX_STEPS,
)
from services.errors import (
    EnumerationBudgetExceeded,
    ImpossibleEvidence,
    IncompleteFamily,
    InvalidInput,
    InvalidTarget,
    MalformedRuleBase,
)
from services.exact_service import Distribution, InferenceStats, StepHook, run_elimination
from services.ingest_service import extreme_guard_allows
from services.model_service import (
    Context,
    Rule,
    RuleBase,
    RuleBaseKind,
    Variable,
    complete_context_probability,
)

logger = logging.getLogger(__name__)


class SimplifyConfig(BaseModel):
    """Threshold-driven simplification settings."""

    model_config = ConfigDict(frozen=True)

    threshold: float = Field(default=DEFAULT_THRESHOLD, ge=0.0)
    strategy: Literal["drop", "resolve", "both"] = DEFAULT_STRATEGY
    extreme_guard: bool = False


@dataclass(frozen=True)
class BoundedPosterior:
    variable: str
    values: Tuple[str, ...]
    lows: Tuple[float, ...]
    highs: Tuple[float, ...]

    def interval(self, value: str) -> Tuple[float, float]:
        i = self.values.index(value)
        return self.lows[i], self.highs[i]

    def contains(self, exact: Distribution, tolerance: float = 1e-9) -> bool:
        return all(
            low - tolerance <= p <= high + tolerance
            for low, high, p in zip(self.lows, self.highs, exact.probabilities)
        )


@dataclass(frozen=True)
class ApproximationCheck:
    holds: bool
    witness: Optional[Context] = None
    detail: str = ""


# ============================================
# 사후 확률 구간
# ============================================

def _clamp(x: float) -> float:
    return min(1.0, max(0.0, x))


def bounds_from_sums(query: Variable, lows: Sequence[float], highs: Sequence[float]) -> BoundedPosterior:
    """
    P⁻(v ∧ e), P⁺(v ∧ e)로부터 값별 사후 확률 구간 계산

    low(v)  = P⁻(v∧e) / (P⁻(v∧e) + Σ_{v'≠v} P⁺(v'∧e))
    high(v) = P⁺(v∧e) / (P⁺(v∧e) + Σ_{v'≠v} P⁻(v'∧e))
    분모가 0이면 low = 0, high = 1.
    """
    if math.fsum(highs) <= 0.0:
        raise ImpossibleEvidence("evidence has probability 0 under every approximation")

    low_bounds, high_bounds = [], []
    for i in range(query.size):
        rest_high = [h for j, h in enumerate(highs) if j != i]
        rest_low = [l for j, l in enumerate(lows) if j != i]
        den_low = math.fsum([lows[i]] + rest_high)
        den_high = math.fsum([highs[i]] + rest_low)
        low_bounds.append(_clamp(lows[i] / den_low) if den_low > 0 else 0.0)
        high_bounds.append(_clamp(highs[i] / den_high) if den_high > 0 else 1.0)
    return BoundedPosterior(query.name, query.domain, tuple(low_bounds), tuple(high_bounds))


def bound_width_report(bp: BoundedPosterior) -> Dict[str, float]:
    return {value: high - low for value, low, high in zip(bp.values, bp.lows, bp.highs)}


# ============================================
# 규칙 분할
# ============================================

def _distinguishing(rule: Rule, region: Context) -> List[Tuple[int, int]]:
    return [(var, value) for var, value in region if var not in rule.context]


def _subtract(rule: Rule, region: Context, rb: RuleBase) -> List[Context]:
    """
    Bodies covering rule's region minus `region`

    region에만 있는 할당을 변수 순서로 a_1..a_k라 하면
    (¬a_1), (a_1 ∧ ¬a_2), ... 조각으로 나눈다. 다치 변수의 부정은 나머지 값 각각이다.
    """
    if not rule.context.compatible(region):
        return [rule.body]
    bodies = []
    prefix = rule.body
    for var, value in _distinguishing(rule, region):
        for other in range(rb.variables[var].size):
            if other != value:
                bodies.append(prefix.extend(var, other))
        prefix = prefix.extend(var, value)
    return bodies


def _piece_count(rule: Rule, region: Context, rb: RuleBase) -> int:
    return sum(rb.variables[var].size - 1 for var, _ in _distinguishing(rule, region))


def _replace_with_pieces(rule: Rule, bodies: List[Context], next_id: int) -> Tuple[List[Rule], int]:
    pieces = []
    for i, body in enumerate(bodies):
        rule_id = rule.id if i == 0 else next_id
        if i > 0:
            next_id += 1
        pieces.append(Rule(rule_id, rule.head, body, rule.lower, rule.upper))
    return pieces, next_id


# ============================================
# 조건 제거
# ============================================

def _drop_plan(rb: RuleBase, rule: Rule, var: int):
    widened = rule.body.without([var])
    same_head = [r for r in rb.rules_for(rule.head.variables[0]) if r.head == rule.head]
    overlapping = [r for r in same_head if r.body.compatible(widened)]
    return widened, overlapping


def drop_condition(rb: RuleBase, rule_id: int, var: Variable) -> RuleBase:
    """
    규칙 body에서 var 조건 제거

    Args:
        rb: 규칙 베이스
        rule_id: 대상 규칙 id
        var: 제거할 body 변수

    Returns:
        새 구간 = 넓어진 body와 호환되는 같은 head 규칙들의 [min lower, max upper].
        넓어진 body에 포함되는 규칙은 삭제, 나머지 호환 규칙은 넓어진 body를 빼서 배타적으로 만든다.

    Raises:
        InvalidTarget: 규칙이 없거나 var가 body에 없거나 head가 단일 할당이 아닐 때
    """
    try:
        rule = rb.rule(rule_id)
    except KeyError:
        raise InvalidTarget(f"unknown rule id {rule_id}") from None
    if var.index not in rule.body:
        raise InvalidTarget(f"{var.name} is not in the body of {rb.describe_rule(rule)}")
    if len(rule.head) != 1:
        raise InvalidTarget(f"conditions can only be dropped from single-assignment heads: {rb.describe_rule(rule)}")

    widened, overlapping = _drop_plan(rb, rule, var.index)
    lower = min(r.lower for r in overlapping)
    upper = max(r.upper for r in overlapping)
    touched = {r.id for r in overlapping}

    rules = [r for r in rb.rules if r.id not in touched]
    rules.append(Rule(rule.id, rule.head, widened, lower, upper))
    next_id = rb.next_rule_id()
    for other in overlapping:
        if other.id == rule.id or other.body.entails(widened):
            continue
        bodies = _subtract(other, widened, rb)
        if len(_distinguishing(other, widened)) > 1:
            logger.warning(
                f"⚠️ {rb.describe_rule(other)} needs {len(bodies)} pieces to stay disjoint from "
                f"{rb.describe_context(widened)}"
            )
        pieces, next_id = _replace_with_pieces(other, bodies, next_id)
        rules.extend(pieces)

    logger.debug(f"✅ dropped {var.name} from rule {rule_id}: [{lower:.6g}, {upper:.6g}]")
    return rb.with_rules(rules, RuleBaseKind.APPROXIMATING)


# ============================================
# resolution
# ============================================

def _resolve_family(rb: RuleBase, head: Context, body: Context, e: Variable) -> List[Rule]:
    if not head.items:
        raise InvalidTarget("rules with an empty head cannot be resolved")
    if e.index in body or e.index in head:
        raise InvalidTarget(f"{e.name} must not appear in the requested head or body")
    if set(head.variables) & set(body.variables):
        raise InvalidTarget("the requested head and body must mention disjoint variables")

    same_head = [r for r in rb.rules_for(head.variables[0]) if r.head == head]
    family = []
    for value in range(e.size):
        matches = [
            r for r in same_head if r.body.get(e.index) == value and body.entails(r.body.without([e.index]))
        ]
        if not matches:
            raise IncompleteFamily(
                f"no rule {rb.describe_context(head)} <- {rb.describe_context(body, empty='')} & "
                f"{e.name}={e.domain[value]}"
            )
        if len(matches) > 1:
            raise MalformedRuleBase(f"{len(matches)} overlapping rules for {e.name}={e.domain[value]}")
        family.append(matches[0])
    return family


def resolve_on(rb: RuleBase, head: Context, body: Context, e: Variable) -> RuleBase:
    """
    값 v마다 head <- body' ∧ e=v (body' ⊆ body) 규칙을 골라 head <- body : [min l, max u]로 병합

    body보다 일반적인 규칙은 body 밖의 영역을 원래 구간 그대로 잔여 규칙으로 남긴다.

    Raises:
        IncompleteFamily: 어떤 값에 맞는 규칙이 없을 때
    """
    family = _resolve_family(rb, head, body, e)
    lower = min(r.lower for r in family)
    upper = max(r.upper for r in family)
    touched = {r.id for r in family}

    rules = [r for r in rb.rules if r.id not in touched]
    next_id = rb.next_rule_id()
    rules.append(Rule(next_id, head, body, lower, upper))
    next_id += 1
    for value, member in enumerate(family):
        pieces, next_id = _replace_with_pieces(member, _subtract(member, body.extend(e.index, value), rb), next_id)
        rules.extend(pieces)

    logger.debug(f"✅ resolved {len(family)} rules on {e.name}: [{lower:.6g}, {upper:.6g}]")
    return rb.with_rules(rules, RuleBaseKind.APPROXIMATING)


# ============================================
# greedy 단순화
# ============================================

@dataclass(frozen=True)
class _Candidate:
    width: float
    delta: int
    members: Tuple[int, ...]
    rank: tuple
    lower: float
    upper: float

    @property
    def key(self):
        return (self.width, self.members, self.delta, self.rank)


def _resolve_candidates(rb: RuleBase) -> List[_Candidate]:
    candidates = {}
    for rule in rb.rules:
        if not rule.head.items:
            continue
        for var in rule.body.variables:
            body = rule.body.without([var])
            key = (rule.head.items, body.items, var)
            if key in candidates:
                continue
            try:
                family = _resolve_family(rb, rule.head, body, rb.variables[var])
            except (IncompleteFamily, MalformedRuleBase):
                candidates[key] = None
                continue
            residuals = sum(
                _piece_count(member, body.extend(var, value), rb) for value, member in enumerate(family)
            )
            candidates[key] = _Candidate(
                width=max(r.upper for r in family) - min(r.lower for r in family),
                delta=1 + residuals - len(family),
                members=tuple(sorted(r.id for r in family)),
                rank=(0,) + key,
                lower=min(r.lower for r in family),
                upper=max(r.upper for r in family),
            )
    return [candidate for candidate in candidates.values() if candidate is not None]


def _drop_candidates(rb: RuleBase) -> List[_Candidate]:
    single = {
        v.index for v in rb.variables if all(len(rule.head) == 1 for rule in rb.rules_for(v.index))
    }
    candidates = []
    for rule in rb.rules:
        if len(rule.head) != 1 or rule.head.variables[0] not in single:
            continue
        for var in rule.body.variables:
            widened, overlapping = _drop_plan(rb, rule, var)
            pieces = sum(
                _piece_count(other, widened, rb)
                for other in overlapping
                if other.id != rule.id and not other.body.entails(widened)
            )
            candidates.append(_Candidate(
                width=max(r.upper for r in overlapping) - min(r.lower for r in overlapping),
                delta=1 + pieces - len(overlapping),
                members=tuple(sorted(r.id for r in overlapping)),
                rank=(1, rule.id, var),
                lower=min(r.lower for r in overlapping),
                upper=max(r.upper for r in overlapping),
            ))
    return candidates


def _apply(rb: RuleBase, candidate: _Candidate) -> RuleBase:
    if candidate.rank[0] == 0:
        _, head, body, var = candidate.rank
        return resolve_on(rb, Context(head), Context(body), rb.variables[var])
    _, rule_id, var = candidate.rank
    return drop_condition(rb, rule_id, rb.variables[var])


def simplify(
    rb: RuleBase, cfg: SimplifyConfig, on_step: Optional[Callable[[RuleBase, RuleBase], None]] = None
) -> RuleBase:
    """
    Greedy (myopic) simplification to a fixpoint

    매 단계에서 병합 폭이 가장 좁은 후보부터 시도하여 폭 <= threshold, extreme guard 통과,
    규칙 수를 실제로 줄이는 첫 후보를 적용한다. 규칙 수가 매 단계 감소하므로 반복은 종료한다.

    Args:
        rb: 규칙 베이스
        cfg: threshold / strategy / extreme_guard
        on_step: 적용된 단계마다 (이전, 이후) 규칙 베이스로 호출

    Returns:
        rb를 근사하는 approximating 규칙 베이스
    """
    current = rb
    steps = 0
    while steps < SIMPLIFY_MAX_STEPS:
        candidates = []
        if cfg.strategy in ("resolve", "both"):
            candidates.extend(_resolve_candidates(current))
        if cfg.strategy in ("drop", "both"):
            candidates.extend(_drop_candidates(current))

        applied = None
        for candidate in sorted(candidates, key=lambda c: c.key):
            if candidate.width > cfg.threshold or candidate.delta >= 0:
                continue
            if cfg.extreme_guard and not extreme_guard_allows(candidate.lower, candidate.upper):
                continue
            result = _apply(current, candidate)
            if len(result.rules) < len(current.rules):
                applied = result
                break
        if applied is None:
            break
        if on_step is not None:
            on_step(current, applied)
        current = applied
        steps += 1

    if steps == SIMPLIFY_MAX_STEPS:
        logger.warning(f"⚠️ simplify stopped after {steps} steps")
    logger.debug(f"✅ simplify(th={cfg.threshold}, {cfg.strategy}): {len(rb.rules)} -> {len(current.rules)} rules")
    return current.with_rules(current.rules, RuleBaseKind.APPROXIMATING)


# ============================================
# 근사 관계 검사
# ============================================

def check_approximates(arb: RuleBase, rb: RuleBase, max_enum: int = ORACLE_MAX_ENUM) -> ApproximationCheck:
    """
    모든 완전 컨텍스트에서 arb의 구간 곱이 rb의 정확한 곱을 포함하는지 검사

    Raises:
        InvalidInput: 두 규칙 베이스의 변수가 다를 때
        EnumerationBudgetExceeded: 결합 공간이 max_enum보다 클 때
    """
    if [(v.name, v.domain) for v in arb.variables] != [(v.name, v.domain) for v in rb.variables]:
        raise InvalidInput("both rule bases must declare the same variables")
    if rb.joint_size() > max_enum:
        raise EnumerationBudgetExceeded(f"{rb.joint_size()} complete contexts exceed the limit of {max_enum}")

    for ctx in rb.complete_contexts():
        exact, _ = complete_context_probability(rb, ctx)
        lower, upper = complete_context_probability(arb, ctx)
        if lower > exact + CONTAINMENT_TOLERANCE or upper < exact - CONTAINMENT_TOLERANCE:
            detail = f"[{lower:.12g}, {upper:.12g}] misses {exact:.12g} in {rb.describe_context(ctx)}"
            logger.info(f"⚠️ approximation check failed: {detail}")
            return ApproximationCheck(False, ctx, detail)
    return ApproximationCheck(True)


# ============================================
# 두 수 추론
# ============================================

def bounded_posterior(
    arb: RuleBase,
    query: Variable,
    evidence: Context,
    order: Optional[Sequence[int]] = None,
    simplify_each_step: Optional[SimplifyConfig] = None,
    on_step: Optional[StepHook] = None,
) -> Tuple[BoundedPosterior, InferenceStats]:
    """
    하한/상한을 함께 운반하는 규칙 소거 후 구간 공식 적용

    Args:
        arb: 근사 (또는 exact) 규칙 베이스
        query: 질의 변수
        evidence: 관측 컨텍스트
        order: 소거 순서 (None이면 min-degree)
        simplify_each_step: 주어지면 매 소거 후 resolve 전략으로 단순화
        on_step: 단계 감사용 콜백

    Raises:
        ImpossibleEvidence: Σ_v P⁺(v ∧ e) = 0
    """
    between = None
    if simplify_each_step is not None:
        step_cfg = simplify_each_step.model_copy(update={"strategy": "resolve"})

        def between(working: RuleBase) -> RuleBase:
            return simplify(working, step_cfg)

    lows, highs, stats = run_elimination(arb, query, evidence, order, on_step, between, engine="bounds")
    bp = bounds_from_sums(query, lows, highs)
    logger.debug(f"✅ bounds for {query.name}: lows {bp.lows}, highs {bp.highs}")
    return bp, stats
