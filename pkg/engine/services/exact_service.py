"""
Exact Service - 규칙 기반 변수 소거

증거 적용 -> 변수마다 (호환 규칙 결합 + 변수 합산) -> 질의 변수 값별 곱과 정규화
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

from config.settings import ENGINE_TOLERANCE, MAX_RULES_PER_STEP
from services.errors import ImpossibleEvidence, InvalidQuery, MalformedRuleBase, ResourceLimit
from services.model_service import EMPTY, Context, Rule, RuleBase, RuleBaseKind, Variable
from services.ordering_service import resolve_ordering

logger = logging.getLogger(__name__)

StepHook = Callable[[Optional[Variable], RuleBase], None]


# ============================================
# 결과 타입
# ============================================

@dataclass(frozen=True)
class Distribution:
    """Posterior over the values of one variable."""

    variable: str
    values: Tuple[str, ...]
    probabilities: Tuple[float, ...]

    def __getitem__(self, value: str) -> float:
        return self.probabilities[self.values.index(value)]

    def as_dict(self) -> Dict[str, float]:
        return dict(zip(self.values, self.probabilities))


@dataclass
class StepStats:
    variable: str
    rules_combined: int = 0
    rules_created: int = 0
    rules_active: int = 0
    factor_entries: int = 0


@dataclass
class InferenceStats:
    """Per-step counters of one run; maxima are derived from the steps."""

    engine: str
    ordering: List[str] = field(default_factory=list)
    initial_rules: int = 0
    steps: List[StepStats] = field(default_factory=list)

    @property
    def max_rules_created(self) -> int:
        return max((step.rules_created for step in self.steps), default=0)

    @property
    def max_rules_active(self) -> int:
        return max((step.rules_active for step in self.steps), default=self.initial_rules)

    @property
    def max_factor_entries(self) -> int:
        return max((step.factor_entries for step in self.steps), default=0)

    def to_dict(self) -> dict:
        return {
            "engine": self.engine,
            "ordering": list(self.ordering),
            "initial_rules": self.initial_rules,
            "max_rules_created": self.max_rules_created,
            "max_rules_active": self.max_rules_active,
            "max_factor_entries": self.max_factor_entries,
            "steps": [asdict(step) for step in self.steps],
        }


# ============================================
# 증거 적용
# ============================================

def apply_evidence(rb: RuleBase, evidence: Context) -> RuleBase:
    """
    증거 적용

    - 증거와 모순되는 규칙 제거
    - body의 증거 항 제거
    - head의 증거 항을 true로 대체 (빈 head)
    """
    if not evidence.items:
        return rb
    observed = evidence.variables
    rules = [
        Rule(rule.id, rule.head.without(observed), rule.body.without(observed), rule.lower, rule.upper)
        for rule in rb.rules
        if rule.context.compatible(evidence)
    ]
    logger.debug(f"🔍 evidence kept {len(rules)} of {len(rb.rules)} rules")
    return rb.with_rules(rules)


# ============================================
# 호환 규칙 결합
# ============================================

def _leaves(rules: Sequence[Rule], start: Context, variables: Tuple[Variable, ...]) -> Iterator[Tuple[Context, List[Rule]]]:
    """
    Split `start` until every rule is either entailed or contradicted

    미결정 규칙 중 id가 가장 작은 규칙의 가장 앞선 미할당 변수로 분기하며,
    값은 도메인 순서로 방문한다.
    """
    stack = [(start, list(rules))]
    while stack:
        ctx, live = stack.pop()
        live = [rule for rule in live if rule.context.compatible(ctx)]
        pending = next((rule for rule in live if not ctx.entails(rule.context)), None)
        if pending is None:
            yield ctx, live
            continue
        var = next(v for v in pending.context.variables if v not in ctx)
        for value in reversed(range(variables[var].size)):
            stack.append((ctx.extend(var, value), live))


def combine_for_variable(rb: RuleBase, e: Variable) -> RuleBase:
    """
    body에 e를 포함하는 규칙들을 값별 호환 집합의 곱 규칙으로 대체

    Args:
        rb: 작업 중인 규칙 집합
        e: 소거할 변수

    Returns:
        e=v를 body에 가진 규칙들이 서로 배타적이고 모든 경우를 덮는 규칙 집합.
        어떤 규칙도 적용되지 않는 영역에는 true <- 영역 ∧ e=v : 1 규칙이 생긴다.
    """
    with_e = [rule for rule in rb.rules if e.index in rule.body]
    others = [rule for rule in rb.rules if e.index not in rule.body]
    next_id = rb.next_rule_id()
    combined: List[Rule] = []

    for value in range(e.size):
        family = [rule for rule in with_e if rule.body.get(e.index) == value]
        for leaf, decided in _leaves(family, Context(((e.index, value),)), rb.variables):
            if decided:
                head = EMPTY
                for rule in decided:
                    head = head.union(rule.head)
                body = leaf.without(head.variables)
                lower = math.prod(rule.lower for rule in decided)
                upper = math.prod(rule.upper for rule in decided)
            else:
                head, body, lower, upper = EMPTY, leaf, 1.0, 1.0
            combined.append(Rule(next_id, head, body, lower, upper))
            next_id += 1
            if len(combined) > MAX_RULES_PER_STEP:
                raise ResourceLimit(f"more than {MAX_RULES_PER_STEP} rules while combining on {e.name}")

    return rb.with_rules(others + combined)


# ============================================
# 변수 합산
# ============================================

def _is_trivial(rule: Rule) -> bool:
    return (
        not rule.head.items
        and abs(rule.lower - 1.0) <= ENGINE_TOLERANCE
        and abs(rule.upper - 1.0) <= ENGINE_TOLERANCE
    )


def eliminate_variable(rb: RuleBase, e: Variable) -> RuleBase:
    """
    Sum e out of a rule set on which combine_for_variable has run

    값 v마다 body 규칙 β_v (e=v in body)와 head 규칙 η_v (e=v in head)를 하나씩 골라
    (e를 뺀) 컨텍스트 합집합이 호환되는 모든 조합에 대해
    head ∪ ... <- body ∪ ... : Σ_v β_v·η_v 규칙을 만든다.

    Raises:
        MalformedRuleBase: 어떤 값에 head 규칙이 없거나 덮이지 않는 영역이 있을 때
    """
    slots: List[List[Rule]] = []
    for value in range(e.size):
        slots.append([rule for rule in rb.rules if rule.body.get(e.index) == value])
        slots.append([rule for rule in rb.rules if rule.head.get(e.index) == value])
    for value in range(e.size):
        if not slots[2 * value + 1]:
            raise MalformedRuleBase(f"no rule for {e.name}={e.domain[value]}")

    # body 규칙이 전혀 없으면 어느 영역에서나 1로 곱해진다
    if not any(slots[2 * value] for value in range(e.size)):
        cover = Rule(-1, EMPTY, EMPTY, 1.0, 1.0)
        slots = [[cover] if i % 2 == 0 else slot for i, slot in enumerate(slots)]
    elif not all(slots[2 * value] for value in range(e.size)):
        raise MalformedRuleBase(f"some values of {e.name} have no combined body rules")

    others = [rule for rule in rb.rules if not rule.mentions(e.index)]
    next_id = rb.next_rule_id()
    emitted: List[Rule] = []

    def walk(slot: int, region: Context, chosen: List[Rule]):
        nonlocal next_id
        if slot == len(slots):
            head = EMPTY
            for rule in chosen:
                head = head.union(rule.head.without([e.index]))
            pairs = list(zip(chosen[0::2], chosen[1::2]))
            rule = Rule(
                next_id,
                head,
                region.without(head.variables),
                math.fsum(beta.lower * eta.lower for beta, eta in pairs),
                math.fsum(beta.upper * eta.upper for beta, eta in pairs),
            )
            next_id += 1
            if not _is_trivial(rule):
                emitted.append(rule)
                if len(emitted) > MAX_RULES_PER_STEP:
                    raise ResourceLimit(f"more than {MAX_RULES_PER_STEP} rules while summing out {e.name}")
            return

        matched = False
        for rule in slots[slot]:
            part = rule.context.without([e.index])
            if part.compatible(region):
                matched = True
                walk(slot + 1, region.union(part), chosen + [rule])
        if not matched:
            value = e.domain[slot // 2]
            role = "body" if slot % 2 == 0 else "head"
            raise MalformedRuleBase(
                f"no {role} rule for {e.name}={value} in {rb.describe_context(region)}", witness=region
            )

    walk(0, EMPTY, [])
    return rb.with_rules(others + emitted)


def eliminate(rb: RuleBase, e: Variable) -> Tuple[RuleBase, StepStats]:
    """One elimination step: combine on e, then sum e out."""
    combined_inputs = sum(1 for rule in rb.rules if e.index in rule.body)
    combined = combine_for_variable(rb, e)
    created_by_combine = len(combined.rules) - (len(rb.rules) - combined_inputs)
    result = eliminate_variable(combined, e)
    created_by_sum = len(result.rules) - sum(1 for rule in combined.rules if not rule.mentions(e.index))
    step = StepStats(
        variable=e.name,
        rules_combined=combined_inputs,
        rules_created=created_by_combine + created_by_sum,
        rules_active=len(result.rules),
    )
    logger.debug(
        f"🔍 eliminated {e.name}: combined {step.rules_combined}, created {step.rules_created}, active {step.rules_active}"
    )
    return result, step


# ============================================
# 질의 변수 곱
# ============================================

def query_products(rb: RuleBase, query: Variable) -> Tuple[List[float], List[float]]:
    """
    질의 변수 값별 (하한 곱, 상한 곱)

    남은 규칙은 질의 변수만 언급해야 하며, 각 값마다 질의 변수를 head로 갖는
    적용 가능 규칙이 정확히 하나여야 한다.
    """
    for rule in rb.rules:
        leftover = [var for var in rule.context.variables if var != query.index]
        if leftover:
            raise MalformedRuleBase(
                f"rule {rb.describe_rule(rule)} still mentions {rb.variables[leftover[0]].name} after elimination"
            )

    lows, highs = [], []
    for value in range(query.size):
        ctx = Context(((query.index, value),))
        applicable = [rule for rule in rb.rules if ctx.entails(rule.context)]
        heads = [rule for rule in applicable if query.index in rule.head]
        if len(heads) != 1:
            raise MalformedRuleBase(
                f"{len(heads)} rules for {query.name}={query.domain[value]} after elimination", witness=ctx
            )
        lows.append(math.prod(rule.lower for rule in applicable))
        highs.append(math.prod(rule.upper for rule in applicable))
    return lows, highs


def check_query(rb: RuleBase, query: Variable, evidence: Context) -> None:
    if query.index in evidence:
        raise InvalidQuery(f"query variable {query.name} is observed")
    if rb.variables[query.index] != query:
        raise InvalidQuery(f"unknown variable {query.name!r}")


def run_elimination(
    rb: RuleBase,
    query: Variable,
    evidence: Context,
    order: Optional[Sequence[int]] = None,
    on_step: Optional[StepHook] = None,
    between_steps: Optional[Callable[[RuleBase], RuleBase]] = None,
    engine: str = "rules",
) -> Tuple[List[float], List[float], InferenceStats]:
    """
    규칙 기반 소거 파이프라인 (하한/상한을 함께 운반)

    Args:
        rb: 규칙 베이스 (exact 또는 approximating)
        query: 질의 변수
        evidence: 관측 컨텍스트
        order: 소거 순서 (None이면 min-degree)
        on_step: 증거 적용 직후 (None, rb)와 매 소거 직후 (변수, rb)로 호출
        between_steps: 매 소거 직후 작업 규칙 집합을 바꾸는 훅 (단계별 단순화)

    Returns:
        (값별 P⁻(v ∧ e), 값별 P⁺(v ∧ e), InferenceStats)
    """
    check_query(rb, query, evidence)
    working = apply_evidence(rb, evidence)
    required = [v.index for v in rb.variables if v.index != query.index and v.index not in evidence]
    ordering = resolve_ordering((rule.context.variables for rule in working.rules), required, order)
    stats = InferenceStats(engine, [rb.variables[var].name for var in ordering], initial_rules=len(working.rules))
    logger.debug(f"🔍 eliminating {stats.ordering} from {len(working.rules)} rules")

    if on_step:
        on_step(None, working)
    for var in ordering:
        working, step = eliminate(working, rb.variables[var])
        if between_steps:
            working = between_steps(working)
            step.rules_active = len(working.rules)
        stats.steps.append(step)
        if on_step:
            on_step(rb.variables[var], working)

    lows, highs = query_products(working, query)
    return lows, highs, stats


def compute_belief(
    rb: RuleBase,
    query: Variable,
    evidence: Context,
    order: Optional[Sequence[int]] = None,
    on_step: Optional[StepHook] = None,
) -> Tuple[Distribution, InferenceStats]:
    """
    P(query | evidence) by variable elimination over rules

    Raises:
        InvalidQuery: query가 증거에 포함될 때
        ImpossibleEvidence: 정규화 상수가 0일 때
    """
    if rb.kind is not RuleBaseKind.EXACT:
        raise InvalidQuery("compute_belief needs an exact rule base; use bounded_posterior for intervals")
    products, _, stats = run_elimination(rb, query, evidence, order, on_step)
    normalizer = math.fsum(products)
    if normalizer <= 0.0:
        raise ImpossibleEvidence(f"evidence {rb.describe_context(evidence)} has probability 0")
    posterior = Distribution(query.name, query.domain, tuple(p / normalizer for p in products))
    logger.debug(f"✅ rules posterior for {query.name}: {posterior.as_dict()} (P(e)={normalizer:.6g})")
    return posterior, stats
