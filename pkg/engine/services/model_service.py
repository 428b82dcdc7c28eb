"""
Model Service
컨텍스트, 규칙, 규칙 베이스와 그 의미론 (적용 가능성, 호환성, 완전 컨텍스트 확률, 검증)
"""

import itertools
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Dict, Iterable, Iterator, List, Mapping, Optional, Tuple

from config.settings import PROBABILITY_TOLERANCE, SUM_TOLERANCE, VALIDATE_MAX_ENUM
from services.errors import InvalidQuery, MalformedRuleBase

logger = logging.getLogger(__name__)

Interval = Tuple[float, float]


@dataclass(frozen=True)
class Variable:
    """A discrete variable; `index` is its 0-based position in the total ordering."""

    name: str
    domain: Tuple[str, ...]
    index: int

    def __post_init__(self):
        if len(self.domain) < 2:
            raise ValueError(f"variable {self.name} needs at least two values")
        if len(set(self.domain)) != len(self.domain):
            raise ValueError(f"variable {self.name} has duplicate values")

    @property
    def order_index(self) -> int:
        return self.index + 1

    @property
    def size(self) -> int:
        return len(self.domain)

    def value_index(self, value: str) -> int:
        try:
            return self.domain.index(value)
        except ValueError:
            raise InvalidQuery(f"unknown value {value!r} for variable {self.name}") from None


@dataclass(frozen=True)
class Context:
    """
    Partial assignment of values to variables

    items는 (변수 인덱스, 값 인덱스) 쌍이며 변수 인덱스 순으로 정렬되어 저장된다.
    """

    items: Tuple[Tuple[int, int], ...] = ()
    _lookup: Dict[int, int] = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        lookup = dict(self.items)
        if len(lookup) != len(self.items):
            raise ValueError("a context assigns at most one value per variable")
        object.__setattr__(self, "items", tuple(sorted(lookup.items())))
        object.__setattr__(self, "_lookup", lookup)

    @classmethod
    def of(cls, mapping: Mapping[int, int]) -> "Context":
        return cls(tuple(mapping.items()))

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self) -> Iterator[Tuple[int, int]]:
        return iter(self.items)

    def __contains__(self, var: int) -> bool:
        return var in self._lookup

    def get(self, var: int, default: Optional[int] = None) -> Optional[int]:
        return self._lookup.get(var, default)

    @property
    def variables(self) -> Tuple[int, ...]:
        return tuple(var for var, _ in self.items)

    def conflict(self, other: "Context") -> Optional[int]:
        """Return the first variable assigned differently in both contexts, if any."""
        small, large = (self, other) if len(self) <= len(other) else (other, self)
        for var, value in small.items:
            seen = large._lookup.get(var)
            if seen is not None and seen != value:
                return var
        return None

    def compatible(self, other: "Context") -> bool:
        return self.conflict(other) is None

    def entails(self, other: "Context") -> bool:
        """True if every assignment of `other` holds in this context."""
        lookup = self._lookup
        return all(lookup.get(var) == value for var, value in other.items)

    def union(self, other: "Context") -> "Context":
        if not other.items:
            return self
        if not self.items:
            return other
        merged = dict(self._lookup)
        for var, value in other.items:
            if merged.setdefault(var, value) != value:
                raise ValueError("cannot join incompatible contexts")
        return Context.of(merged)

    def extend(self, var: int, value: int) -> "Context":
        return self.union(Context(((var, value),)))

    def without(self, variables: Iterable[int]) -> "Context":
        dropped = set(variables)
        if not dropped.intersection(self._lookup):
            return self
        return Context(tuple((var, value) for var, value in self.items if var not in dropped))

    def restrict(self, variables: Iterable[int]) -> "Context":
        kept = set(variables)
        return Context(tuple((var, value) for var, value in self.items if var in kept))


EMPTY = Context()


@dataclass(frozen=True)
class Rule:
    """
    head <- body : [lower, upper]

    빈 head는 "true"를 의미한다. exact 규칙은 lower == upper.
    """

    id: int
    head: Context
    body: Context
    lower: float
    upper: float

    def __post_init__(self):
        if set(self.head.variables) & set(self.body.variables):
            raise ValueError("head and body must mention disjoint variables")
        if self.lower < -PROBABILITY_TOLERANCE or self.lower > self.upper + PROBABILITY_TOLERANCE:
            raise ValueError(f"invalid bounds [{self.lower}, {self.upper}]")

    @cached_property
    def context(self) -> Context:
        return self.head.union(self.body)

    @property
    def is_exact(self) -> bool:
        return self.lower == self.upper

    @property
    def width(self) -> float:
        return self.upper - self.lower

    @property
    def bounds(self) -> Interval:
        return self.lower, self.upper

    def mentions(self, var: int) -> bool:
        return var in self.head or var in self.body


class RuleBaseKind(str, Enum):
    EXACT = "exact"
    APPROXIMATING = "approximating"


@dataclass(frozen=True)
class RuleBase:
    """A total variable ordering plus a rule set; exactly one rule per variable applies in each complete context."""

    variables: Tuple[Variable, ...]
    rules: Tuple[Rule, ...]
    kind: RuleBaseKind = RuleBaseKind.EXACT

    @cached_property
    def _by_name(self) -> Dict[str, Variable]:
        return {variable.name: variable for variable in self.variables}

    @cached_property
    def _by_head(self) -> Dict[int, Tuple[Rule, ...]]:
        grouped: Dict[int, List[Rule]] = {variable.index: [] for variable in self.variables}
        for rule in self.rules:
            for var in rule.head.variables:
                grouped[var].append(rule)
        return {var: tuple(rules) for var, rules in grouped.items()}

    def variable(self, name: str) -> Variable:
        try:
            return self._by_name[name]
        except KeyError:
            raise InvalidQuery(f"unknown variable {name!r}") from None

    def rule(self, rule_id: int) -> Rule:
        for rule in self.rules:
            if rule.id == rule_id:
                return rule
        raise KeyError(rule_id)

    def rules_for(self, var: int) -> Tuple[Rule, ...]:
        """Rules with `var` in the head."""
        return self._by_head.get(var, ())

    def joint_size(self) -> int:
        return math.prod(variable.size for variable in self.variables)

    def next_rule_id(self) -> int:
        return max((rule.id for rule in self.rules), default=-1) + 1

    def with_rules(self, rules: Iterable[Rule], kind: Optional[RuleBaseKind] = None) -> "RuleBase":
        ordered = tuple(sorted(rules, key=lambda rule: rule.id))
        return RuleBase(self.variables, ordered, kind or self.kind)

    def complete_contexts(self, fixed: Context = EMPTY) -> Iterator[Context]:
        """Every complete context compatible with `fixed`, in variable/value order."""
        free = [variable for variable in self.variables if variable.index not in fixed]
        for values in itertools.product(*(range(variable.size) for variable in free)):
            yield fixed.union(Context(tuple(zip((variable.index for variable in free), values))))

    def context_of(self, assignments: Mapping[str, str]) -> Context:
        """Build a context from variable/value names."""
        mapping = {}
        for name, value in assignments.items():
            variable = self.variable(name)
            mapping[variable.index] = variable.value_index(value)
        return Context.of(mapping)

    def describe_context(self, ctx: Context, empty: str = "true") -> str:
        if not ctx.items:
            return empty
        return " & ".join(
            f"{self.variables[var].name}={self.variables[var].domain[value]}" for var, value in ctx.items
        )

    def describe_rule(self, rule: Rule) -> str:
        bounds = f"{rule.lower:.12g}" if rule.is_exact else f"{rule.lower:.12g}, {rule.upper:.12g}"
        return f"{self.describe_context(rule.head)} <- {self.describe_context(rule.body, empty='')} : {bounds}"


# ============================================
# 규칙 베이스 의미론
# ============================================

def is_applicable(rule: Rule, ctx: Context, with_head: bool = False) -> bool:
    """
    Rule applicability

    Args:
        rule: 검사할 규칙
        ctx: 컨텍스트 (부분 컨텍스트 허용)
        with_head: True이면 head도 ctx와 충돌하지 않아야 한다

    Returns:
        body의 모든 할당이 ctx에서 성립하면 True
    """
    if not ctx.entails(rule.body):
        return False
    return not with_head or rule.head.compatible(ctx)


def are_compatible(a: Context, b: Context) -> bool:
    return a.compatible(b)


def complete_context_probability(rb: RuleBase, ctx: Context) -> Interval:
    """
    Product of the applicable rules, one per variable

    Raises:
        MalformedRuleBase: 어떤 변수에 적용 가능한 규칙이 0개 또는 2개 이상일 때
    """
    if len(ctx) != len(rb.variables):
        raise InvalidQuery("complete_context_probability needs a complete context")

    for variable in rb.variables:
        applicable = [rule for rule in rb.rules_for(variable.index) if ctx.entails(rule.context)]
        if len(applicable) != 1:
            raise MalformedRuleBase(
                f"{len(applicable)} applicable rules for {variable.name} in {rb.describe_context(ctx)}",
                witness=ctx,
            )

    applied = [rule for rule in rb.rules if ctx.entails(rule.context)]
    return math.prod(rule.lower for rule in applied), math.prod(rule.upper for rule in applied)


# ============================================
# 검증
# ============================================

@dataclass(frozen=True)
class Violation:
    kind: str
    detail: str
    witness: Optional[Context] = None
    rule_ids: Tuple[int, ...] = ()


@dataclass
class ValidationReport:
    strategy: str
    violations: List[Violation] = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return not self.violations


def _fill(rb: RuleBase, ctx: Context) -> Context:
    """Complete a partial witness with each missing variable's first value."""
    return ctx.union(Context(tuple((v.index, 0) for v in rb.variables if v.index not in ctx)))


def _check_rules(rb: RuleBase, check_order: bool, report: ValidationReport) -> None:
    for rule in rb.rules:
        if rule.upper > 1 + PROBABILITY_TOLERANCE:
            report.violations.append(Violation(
                "range", f"upper bound above 1 in {rb.describe_rule(rule)}", rule_ids=(rule.id,)))
        if rb.kind is RuleBaseKind.EXACT and not rule.is_exact:
            report.violations.append(Violation(
                "range", f"interval rule in an exact rule base: {rb.describe_rule(rule)}", rule_ids=(rule.id,)))
        if check_order and rule.head.items:
            first_head = min(rule.head.variables)
            late = [var for var in rule.body.variables if var > first_head]
            if late:
                report.violations.append(Violation(
                    "order",
                    f"body variable {rb.variables[late[0]].name} does not precede the head of {rb.describe_rule(rule)}",
                    rule_ids=(rule.id,),
                ))


def _check_disjoint(rb: RuleBase, report: ValidationReport) -> None:
    for variable in rb.variables:
        rules = rb.rules_for(variable.index)
        for first, second in itertools.combinations(rules, 2):
            if first.context.compatible(second.context):
                report.violations.append(Violation(
                    "exclusivity",
                    f"rules for {variable.name} overlap: {rb.describe_rule(first)} / {rb.describe_rule(second)}",
                    witness=_fill(rb, first.context.union(second.context)),
                    rule_ids=(first.id, second.id),
                ))


def _check_coverage_symbolic(rb: RuleBase, max_enum: int, report: ValidationReport) -> None:
    # 규칙들이 서로 배타적이면 덮는 컨텍스트 수를 세는 것만으로 coverage를 판정할 수 있다
    for variable in rb.variables:
        for value in range(variable.size):
            regions = [
                rule.context.without([variable.index])
                for rule in rb.rules_for(variable.index)
                if rule.head.get(variable.index) == value
            ]
            scope = sorted({var for region in regions for var in region.variables})
            total = math.prod(rb.variables[var].size for var in scope)
            covered = sum(
                math.prod(rb.variables[var].size for var in scope if var not in region) for region in regions
            )
            if covered >= total:
                continue
            witness = None
            if total <= max_enum:
                for values in itertools.product(*(range(rb.variables[var].size) for var in scope)):
                    candidate = Context(tuple(zip(scope, values)))
                    if not any(candidate.entails(region) for region in regions):
                        witness = _fill(rb, candidate.extend(variable.index, value))
                        break
            report.violations.append(Violation(
                "coverage",
                f"no rule for {variable.name}={variable.domain[value]} in "
                f"{rb.describe_context(witness) if witness else 'some context'}",
                witness=witness,
            ))


def _check_coverage_enumerated(rb: RuleBase, report: ValidationReport) -> None:
    reported = set()
    for ctx in rb.complete_contexts():
        for variable in rb.variables:
            if variable.index in reported:
                continue
            applicable = [rule for rule in rb.rules_for(variable.index) if ctx.entails(rule.context)]
            if len(applicable) == 1:
                continue
            reported.add(variable.index)
            kind = "coverage" if not applicable else "exclusivity"
            report.violations.append(Violation(
                kind,
                f"{len(applicable)} applicable rules for {variable.name} in {rb.describe_context(ctx)}",
                witness=ctx,
                rule_ids=tuple(rule.id for rule in applicable),
            ))


def _check_sums(rb: RuleBase, report: ValidationReport) -> None:
    # 값마다 하나씩 고른 규칙들의 body가 서로 호환되면 그 교집합 영역에서 확률 합은 1이어야 한다
    for variable in rb.variables:
        rules = rb.rules_for(variable.index)
        if any(len(rule.head) != 1 for rule in rules):
            continue
        per_value = [
            [rule for rule in rules if rule.head.get(variable.index) == value] for value in range(variable.size)
        ]

        def walk(value: int, region: Context, chosen: Tuple[Rule, ...]) -> Optional[Violation]:
            if value == variable.size:
                total = math.fsum(rule.lower for rule in chosen)
                if abs(total - 1.0) > SUM_TOLERANCE:
                    return Violation(
                        "sum",
                        f"probabilities for {variable.name} sum to {total:.12g} in {rb.describe_context(region)}",
                        witness=_fill(rb, region),
                        rule_ids=tuple(rule.id for rule in chosen),
                    )
                return None
            for rule in per_value[value]:
                if rule.body.compatible(region):
                    found = walk(value + 1, region.union(rule.body), chosen + (rule,))
                    if found:
                        return found
            return None

        violation = walk(0, EMPTY, ())
        if violation:
            report.violations.append(violation)


def validate(rb: RuleBase, max_enum: int = VALIDATE_MAX_ENUM, check_order: bool = True) -> ValidationReport:
    """
    규칙 베이스 불변식 검증

    결합 공간이 max_enum 이하이면 모든 완전 컨텍스트를 열거하고,
    그보다 크면 변수별 배타성 + coverage를 기호적으로 검사한다.

    Args:
        rb: 검증할 규칙 베이스
        max_enum: 열거 검사 상한
        check_order: 입력 규칙 베이스의 body-before-head 순서 조건 검사 여부

    Returns:
        ValidationReport (위반 사항과 증거 컨텍스트)
    """
    strategy = "enumeration" if rb.joint_size() <= max_enum else "symbolic"
    report = ValidationReport(strategy=strategy)
    logger.debug(f"🔍 validating {len(rb.rules)} rules ({strategy})")

    _check_rules(rb, check_order, report)
    if strategy == "enumeration":
        _check_coverage_enumerated(rb, report)
    else:
        _check_disjoint(rb, report)
        _check_coverage_symbolic(rb, max_enum, report)
    if rb.kind is RuleBaseKind.EXACT and not any(v.kind in ("coverage", "exclusivity") for v in report.violations):
        _check_sums(rb, report)

    if report.valid:
        logger.debug("✅ rule base is valid")
    else:
        logger.info(f"⚠️ {len(report.violations)} violations found")
    return report


def head_counts(rb: RuleBase) -> Dict[str, int]:
    """Number of rules per head variable, in variable order."""
    return {variable.name: len(rb.rules_for(variable.index)) for variable in rb.variables}

