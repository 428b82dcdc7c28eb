"""
Ingest Service - 모델 파일 파싱, CPT -> 규칙 변환, 제한적 resolution 기반 압축
"""

import itertools
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, NamedTuple, Optional, Tuple

import numpy as np

from config.settings import EXTREME_EPSILON, PROBABILITY_TOLERANCE, SUM_TOLERANCE
from services.errors import InvalidInput, InvalidQuery, MalformedRuleBase, ModelSemanticError, ModelSyntaxError
from services.model_service import Context, Rule, RuleBase, RuleBaseKind, Variable

logger = logging.getLogger(__name__)


# ============================================
# 문서 타입
# ============================================

@dataclass(frozen=True)
class CPT:
    """
    Conditional probability table of one variable

    rows는 부모 도메인에 대한 row-major 순서 (마지막 부모가 가장 빠르게 변함),
    각 row는 자식 값 순서의 확률 목록.
    """

    variable: int
    parents: Tuple[int, ...]
    rows: Tuple[Tuple[float, ...], ...]

    def parent_assignments(self, variables: Tuple[Variable, ...]) -> Iterator[Tuple[int, ...]]:
        return itertools.product(*(range(variables[parent].size) for parent in self.parents))


@dataclass(frozen=True)
class TabularNetwork:
    variables: Tuple[Variable, ...]
    cpts: Tuple[CPT, ...]

    def variable(self, name: str) -> Variable:
        for variable in self.variables:
            if variable.name == name:
                return variable
        raise InvalidQuery(f"unknown variable {name!r}")

    def joint_size(self) -> int:
        return math.prod(variable.size for variable in self.variables)


@dataclass(frozen=True)
class ModelDocument:
    """A parsed model: either a tabular network or a rule base."""

    kind: str  # "network" | "rules"
    variables: Tuple[Variable, ...]
    network: Optional[TabularNetwork] = None
    rule_base: Optional[RuleBase] = None
    locations: Dict[str, Tuple[int, int]] = field(default_factory=dict, compare=False, repr=False)

    def to_rule_base(self) -> RuleBase:
        return self.rule_base if self.rule_base is not None else cpt_to_rules(self.network)

    def to_network(self) -> TabularNetwork:
        return self.network if self.network is not None else rules_to_network(self.rule_base)


# ============================================
# 토크나이저
# ============================================

class Token(NamedTuple):
    kind: str
    text: str
    line: int
    column: int


TOKEN_SPEC = [
    ("COMMENT", r"#[^\n]*"),
    ("NEWLINE", r"\n"),
    ("SKIP", r"[ \t\r\f]+"),
    ("ARROW", r"<-"),
    ("NUMBER", r"[-+]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][-+]?\d+)?"),
    ("IDENT", r"[A-Za-z_][A-Za-z0-9_]*"),
    ("SYMBOL", r"[{},:&=|]"),
    ("MISMATCH", r"."),
]
TOKEN_PATTERN = re.compile("|".join(f"(?P<{name}>{pattern})" for name, pattern in TOKEN_SPEC))
KEYWORDS = ("variable", "rule", "cpt")


def tokenize(text: str) -> Iterator[Token]:
    line, line_start = 1, 0
    for match in TOKEN_PATTERN.finditer(text):
        kind, value = match.lastgroup, match.group()
        column = match.start() - line_start + 1
        if kind == "NEWLINE":
            line, line_start = line + 1, match.end()
        elif kind in ("SKIP", "COMMENT"):
            continue
        elif kind == "MISMATCH":
            raise ModelSyntaxError(line, column, "a token", found=value)
        else:
            yield Token(kind, value, line, column)
    yield Token("EOF", "", line, len(text) - line_start + 1)


# ============================================
# 파서
# ============================================

class ModelParser:
    """
    재귀 하강 파서

    문법 오류는 ModelSyntaxError(line, column, expectation),
    선언 수준의 의미 오류는 ModelSemanticError로 보고한다.
    배타성/coverage 검사는 model_service.validate의 몫이다.
    """

    def __init__(self, text: str):
        self.tokens = list(tokenize(text))
        self.pos = 0
        self.variables: List[Variable] = []
        self.by_name: Dict[str, Variable] = {}
        self.rules: List[Rule] = []
        self.cpts: Dict[int, CPT] = {}
        self.interval_rules = False
        self.locations: Dict[str, Tuple[int, int]] = {}
        self.first_kind: Optional[Tuple[str, Token]] = None

    # ---------- token helpers ----------

    def peek(self) -> Token:
        return self.tokens[self.pos]

    def advance(self) -> Token:
        token = self.tokens[self.pos]
        if token.kind != "EOF":
            self.pos += 1
        return token

    def fail(self, expectation: str, token: Optional[Token] = None):
        token = token or self.peek()
        found = token.text if token.kind != "EOF" else "end of input"
        raise ModelSyntaxError(token.line, token.column, expectation, found=found)

    def expect(self, kind: str, text: Optional[str] = None, expectation: Optional[str] = None) -> Token:
        token = self.peek()
        if token.kind != kind or (text is not None and token.text != text):
            self.fail(expectation or (repr(text) if text else kind.lower()))
        return self.advance()

    def at(self, kind: str, text: Optional[str] = None) -> bool:
        token = self.peek()
        return token.kind == kind and (text is None or token.text == text)

    @staticmethod
    def semantic(detail: str, token: Token):
        raise ModelSemanticError(detail, token.line, token.column)

    # ---------- declarations ----------

    def parse(self) -> ModelDocument:
        while not self.at("EOF"):
            token = self.peek()
            if token.kind != "IDENT" or token.text not in KEYWORDS:
                self.fail("'variable', 'rule' or 'cpt'")
            if token.text == "variable":
                self.parse_variable()
            elif token.text == "rule":
                self.note_kind("rules", token)
                self.parse_rule()
            else:
                self.note_kind("network", token)
                self.parse_cpt()
        return self.build()

    def note_kind(self, kind: str, token: Token):
        if self.first_kind is None:
            self.first_kind = (kind, token)
        elif self.first_kind[0] != kind:
            self.semantic("a document cannot mix 'rule' and 'cpt' declarations", token)

    def parse_variable(self):
        keyword = self.advance()
        name = self.expect("IDENT", expectation="variable name")
        if name.text in self.by_name:
            self.semantic(f"duplicate variable {name.text!r}", name)
        self.expect("SYMBOL", "{")
        values = [self.expect("IDENT", expectation="value name")]
        while self.at("SYMBOL", ","):
            self.advance()
            values.append(self.expect("IDENT", expectation="value name"))
        self.expect("SYMBOL", "}", expectation="',' or '}'")

        seen = set()
        for value in values:
            if value.text in seen:
                self.semantic(f"duplicate value {value.text!r} in variable {name.text!r}", value)
            seen.add(value.text)
        if len(values) < 2:
            self.semantic(f"variable {name.text!r} needs at least two values", name)

        variable = Variable(name.text, tuple(value.text for value in values), len(self.variables))
        self.variables.append(variable)
        self.by_name[variable.name] = variable
        self.locations[f"variable:{variable.name}"] = (keyword.line, keyword.column)

    def lookup(self, token: Token) -> Variable:
        variable = self.by_name.get(token.text)
        if variable is None:
            self.semantic(f"undeclared variable {token.text!r}", token)
        return variable

    def lookup_value(self, variable: Variable, token: Token) -> int:
        if token.text not in variable.domain:
            self.semantic(f"undeclared value {token.text!r} for variable {variable.name!r}", token)
        return variable.domain.index(token.text)

    def parse_assignments(self, mentioned: Dict[int, Token]) -> Dict[int, int]:
        assignments: Dict[int, int] = {}
        while True:
            name = self.expect("IDENT", expectation="variable name")
            variable = self.lookup(name)
            self.expect("SYMBOL", "=")
            value = self.expect("IDENT", expectation="value name")
            if variable.index in mentioned:
                self.semantic(f"variable {variable.name!r} appears twice in one rule", name)
            mentioned[variable.index] = name
            assignments[variable.index] = self.lookup_value(variable, value)
            if not self.at("SYMBOL", "&"):
                return assignments
            self.advance()

    def parse_probability(self) -> Tuple[float, Token]:
        token = self.expect("NUMBER", expectation="probability")
        value = float(token.text)
        if not 0.0 <= value <= 1.0:
            self.semantic(f"probability {token.text} outside [0, 1]", token)
        return value, token

    def parse_rule(self):
        keyword = self.advance()
        mentioned: Dict[int, Token] = {}
        head = self.parse_assignments(mentioned)
        self.expect("ARROW", expectation="'<-'")
        body: Dict[int, int] = {}
        if self.at("IDENT"):
            body = self.parse_assignments(mentioned)
        self.expect("SYMBOL", ":", expectation="'&' or ':'" if body else "assignment or ':'")
        lower, lower_token = self.parse_probability()
        upper = lower
        if self.at("SYMBOL", ","):
            self.advance()
            upper, upper_token = self.parse_probability()
            self.interval_rules = True
            if lower > upper:
                self.semantic(f"lower bound {lower_token.text} exceeds upper bound {upper_token.text}", upper_token)

        rule = Rule(len(self.rules), Context.of(head), Context.of(body), lower, upper)
        self.rules.append(rule)
        self.locations[f"rule:{rule.id}"] = (keyword.line, keyword.column)

    def parse_cpt(self):
        keyword = self.advance()
        name = self.expect("IDENT", expectation="variable name")
        child = self.lookup(name)
        if child.index in self.cpts:
            self.semantic(f"duplicate cpt for variable {child.name!r}", name)
        self.expect("SYMBOL", "|", expectation="'|'")

        parents: List[Variable] = []
        while self.at("IDENT"):
            token = self.advance()
            parent = self.lookup(token)
            if parent in parents:
                self.semantic(f"duplicate parent {parent.name!r}", token)
            if parent.index >= child.index:
                self.semantic(f"parent {parent.name!r} must precede {child.name!r} in the ordering", token)
            parents.append(parent)
        self.expect("SYMBOL", "{", expectation="parent name or '{'")

        table: Dict[Tuple[int, ...], Tuple[float, ...]] = {}
        while not self.at("SYMBOL", "}"):
            start = self.peek()
            if not (self.at("IDENT") or self.at("SYMBOL", ":")):
                self.fail("parent value, ':' or '}'")
            key = []
            while self.at("IDENT"):
                token = self.advance()
                if len(key) == len(parents):
                    self.semantic(f"row has more than {len(parents)} parent values", token)
                key.append(self.lookup_value(parents[len(key)], token))
            colon = self.expect("SYMBOL", ":", expectation="parent value or ':'")
            if len(key) != len(parents):
                self.semantic(f"row needs {len(parents)} parent values, got {len(key)}", colon)
            probabilities = [self.parse_probability()[0]]
            while self.at("NUMBER"):
                probabilities.append(self.parse_probability()[0])
            if len(probabilities) != child.size:
                self.semantic(f"row needs {child.size} probabilities, got {len(probabilities)}", start)
            total = math.fsum(probabilities)
            if abs(total - 1.0) > SUM_TOLERANCE:
                self.semantic(f"row sums to {total:.12g}, not 1", start)
            if tuple(key) in table:
                self.semantic("duplicate row", start)
            table[tuple(key)] = tuple(probabilities)
        self.advance()

        expected = list(itertools.product(*(range(parent.size) for parent in parents)))
        if len(table) != len(expected):
            self.semantic(f"cpt for {child.name!r} has {len(table)} rows, needs {len(expected)}", keyword)
        self.cpts[child.index] = CPT(
            child.index, tuple(parent.index for parent in parents), tuple(table[key] for key in expected)
        )
        self.locations[f"cpt:{child.name}"] = (keyword.line, keyword.column)

    def build(self) -> ModelDocument:
        variables = tuple(self.variables)
        if self.first_kind and self.first_kind[0] == "network":
            for variable in variables:
                if variable.index not in self.cpts:
                    line, column = self.locations[f"variable:{variable.name}"]
                    raise ModelSemanticError(f"missing cpt for variable {variable.name!r}", line, column)
            network = TabularNetwork(variables, tuple(self.cpts[v.index] for v in variables))
            return ModelDocument("network", variables, network=network, locations=self.locations)

        kind = RuleBaseKind.APPROXIMATING if self.interval_rules else RuleBaseKind.EXACT
        rule_base = RuleBase(variables, tuple(self.rules), kind)
        return ModelDocument("rules", variables, rule_base=rule_base, locations=self.locations)


def parse_model(text: str) -> ModelDocument:
    """
    모델 텍스트 파싱

    Args:
        text: 모델 파일 내용

    Returns:
        ModelDocument (network 또는 rules)

    Raises:
        ModelSyntaxError: 문법 오류 (line/column 포함)
        ModelSemanticError: 선언되지 않은 이름, 중복 선언, 범위를 벗어난 확률 등
    """
    doc = ModelParser(text).parse()
    count = len(doc.network.cpts) if doc.network else len(doc.rule_base.rules)
    logger.debug(f"✅ parsed {len(doc.variables)} variables, {count} {'cpts' if doc.network else 'rules'}")
    return doc


def load_model(path: str) -> ModelDocument:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise InvalidInput(f"cannot read model file {path}: {e.strerror or e}") from e
    logger.debug(f"🔍 loading model {path}")
    return parse_model(text)


# ============================================
# 렌더링
# ============================================

def format_number(value: float) -> str:
    return np.format_float_positional(value, trim="-")


def _render_assignments(variables: Tuple[Variable, ...], ctx: Context) -> str:
    return " & ".join(f"{variables[var].name}={variables[var].domain[value]}" for var, value in ctx)


def render(doc: ModelDocument) -> str:
    """Canonical text of a document; parse_model(render(doc)) == doc."""
    variables = doc.variables
    lines = [f"variable {v.name} {{{', '.join(v.domain)}}}" for v in variables]

    if doc.network is not None:
        for cpt in doc.network.cpts:
            parents = " ".join(variables[parent].name for parent in cpt.parents)
            header = f"cpt {variables[cpt.variable].name} |" + (f" {parents}" if parents else "")
            lines.append(header + " {")
            for key, row in zip(cpt.parent_assignments(variables), cpt.rows):
                values = " ".join(variables[parent].domain[value] for parent, value in zip(cpt.parents, key))
                numbers = " ".join(format_number(p) for p in row)
                lines.append(f"  {values} : {numbers}" if values else f"  : {numbers}")
            lines.append("}")
        return "\n".join(lines) + "\n"

    rb = doc.rule_base
    two_numbers = rb.kind is RuleBaseKind.APPROXIMATING
    for rule in sorted(rb.rules, key=lambda r: r.id):
        if not rule.head.items:
            raise ValueError("rules with an empty head cannot be written to a model file")
        numbers = format_number(rule.lower)
        if two_numbers:
            numbers += f", {format_number(rule.upper)}"
        body = _render_assignments(variables, rule.body)
        lines.append(f"rule {_render_assignments(variables, rule.head)} <- {body + ' ' if body else ''}: {numbers}")
    return "\n".join(lines) + "\n"


def rules_document(rb: RuleBase) -> ModelDocument:
    return ModelDocument("rules", rb.variables, rule_base=rb)


# ============================================
# 변환
# ============================================

def cpt_to_rules(net: TabularNetwork) -> RuleBase:
    """
    CPT의 각 (row, 자식 값) 쌍을 exact 규칙 하나로 변환

    Returns:
        Σ_x |val(x)| · Π|val(parent)| 개의 규칙을 가진 RuleBase
    """
    rules: List[Rule] = []
    for cpt in net.cpts:
        for key, row in zip(cpt.parent_assignments(net.variables), cpt.rows):
            body = Context(tuple(zip(cpt.parents, key)))
            for value, probability in enumerate(row):
                rules.append(Rule(len(rules), Context(((cpt.variable, value),)), body, probability, probability))
    logger.debug(f"✅ converted {len(net.cpts)} cpts into {len(rules)} rules")
    return RuleBase(net.variables, tuple(rules), RuleBaseKind.EXACT)


def rules_to_network(rb: RuleBase) -> TabularNetwork:
    """Tabulate an exact input rule base with single-assignment heads back into CPTs."""
    if rb.kind is not RuleBaseKind.EXACT:
        raise InvalidInput("only exact rule bases can be tabulated")

    cpts = []
    for variable in rb.variables:
        rules = rb.rules_for(variable.index)
        if any(len(rule.head) != 1 for rule in rules):
            raise InvalidInput(f"rules for {variable.name} must have single-assignment heads")
        parents = tuple(sorted({var for rule in rules for var in rule.body.variables}))
        if parents and parents[-1] >= variable.index:
            raise MalformedRuleBase(f"a body variable of {variable.name} does not precede it")

        rows = []
        for key in itertools.product(*(range(rb.variables[parent].size) for parent in parents)):
            ctx = Context(tuple(zip(parents, key)))
            row = []
            for value in range(variable.size):
                matches = [
                    rule for rule in rules if rule.head.get(variable.index) == value and ctx.entails(rule.body)
                ]
                if len(matches) != 1:
                    raise MalformedRuleBase(
                        f"{len(matches)} rules for {variable.name}={variable.domain[value]} "
                        f"in {rb.describe_context(ctx)}",
                        witness=ctx,
                    )
                row.append(matches[0].lower)
            rows.append(tuple(row))
        cpts.append(CPT(variable.index, parents, tuple(rows)))
    return TabularNetwork(rb.variables, tuple(cpts))


def table_sizes(net: TabularNetwork) -> Dict[str, Tuple[int, int]]:
    """Per variable: (rows, rows × |val(x)|)."""
    sizes = {}
    for cpt in net.cpts:
        variable = net.variables[cpt.variable]
        rows = math.prod(net.variables[parent].size for parent in cpt.parents)
        sizes[variable.name] = (rows, rows * variable.size)
    return sizes


# ============================================
# 압축 (restricted resolution)
# ============================================

def extreme_guard_allows(lower: float, upper: float, eps: float = EXTREME_EPSILON) -> bool:
    """Refuse a widened interval that reaches into the ε-neighbourhood of 0 or 1."""
    if lower == upper:
        return True
    return lower >= eps and upper <= 1.0 - eps


FamilyKey = Tuple[Tuple[Tuple[int, int], ...], Tuple[Tuple[int, int], ...], int]


def restricted_families(rb: RuleBase) -> Dict[FamilyKey, List[Rule]]:
    """
    Complete families {h <- b ∧ e=v : l_v, u_v | v ∈ val(e)} keyed by (h, b, e)

    Families that miss a value of e (or hold two rules for one value) are left out.
    """
    grouped: Dict[FamilyKey, Dict[int, List[Rule]]] = {}
    for rule in rb.rules:
        for var, value in rule.body:
            key = (rule.head.items, rule.body.without([var]).items, var)
            grouped.setdefault(key, {}).setdefault(value, []).append(rule)

    families = {}
    for key, by_value in grouped.items():
        e = key[2]
        if len(by_value) == rb.variables[e].size and all(len(rules) == 1 for rules in by_value.values()):
            families[key] = [by_value[value][0] for value in range(rb.variables[e].size)]
    return families


def extract_structure(rb: RuleBase, threshold: float, extreme_guard: bool = False) -> RuleBase:
    """
    제한적 resolution을 고정점까지 반복 적용

    Args:
        rb: 입력 규칙 베이스
        threshold: 허용되는 병합 규칙 폭 (upper - lower)
        extreme_guard: 0/1 근처까지 넓어지는 병합 거부

    Returns:
        threshold > 0이면 approximating 규칙 베이스
    """
    if threshold < 0:
        raise InvalidInput("threshold must be non-negative")

    rules = {rule.id: rule for rule in rb.rules}
    next_id = rb.next_rule_id()
    merges = 0
    while True:
        current = rb.with_rules(rules.values())
        families = restricted_families(current)
        chosen = None
        for key in sorted(families):
            family = families[key]
            lower = min(rule.lower for rule in family)
            upper = max(rule.upper for rule in family)
            if upper - lower <= threshold + PROBABILITY_TOLERANCE and (
                not extreme_guard or extreme_guard_allows(lower, upper)
            ):
                chosen = (key, family, lower, upper)
                break
        if chosen is None:
            break

        (head, body, _), family, lower, upper = chosen
        if threshold == 0 and all(rule.is_exact for rule in family):
            # 같은 값을 다르게 계산한 행: exact 점으로 모은다
            upper = lower
        for rule in family:
            del rules[rule.id]
        rules[next_id] = Rule(next_id, Context(head), Context(body), lower, upper)
        next_id += 1
        merges += 1

    kind = RuleBaseKind.APPROXIMATING if threshold > 0 else rb.kind
    logger.debug(f"✅ extract_structure(th={threshold}): {merges} merges, {len(rb.rules)} -> {len(rules)} rules")
    return rb.with_rules(rules.values(), kind)
