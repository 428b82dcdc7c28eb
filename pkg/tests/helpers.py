"""
Shared generators and model documents for the test suite
"""

import itertools
from typing import Dict, Iterator, List, Optional

import numpy as np

from services.exact_service import compute_belief
from services.ingest_service import CPT, ModelDocument, TabularNetwork, cpt_to_rules, parse_model, render
from services.model_service import Context, Rule, RuleBase, Variable
from services.oracle_service import applicable_count, applicable_product, conjunction_probability

BINARY = ("t", "f")


# ============================================
# 문서
# ============================================

# a -> b chain: P(a=t) = 0.3, P(b=t | a) = 0.9 / 0.2
CHAIN_DOC = """
variable a {t, f}
variable b {t, f}
cpt a | {
  : 0.3 0.7
}
cpt b | a {
  t : 0.9 0.1
  f : 0.2 0.8
}
"""

# a=t makes a=f impossible, and b copies a
DETERMINISTIC_DOC = """
variable a {t, f}
variable b {t, f}
cpt a | {
  : 1 0
}
cpt b | a {
  t : 1 0
  f : 0.5 0.5
}
"""

# b's table ignores a
REDUNDANT_DOC = """
variable a {t, f}
variable b {t, f}
cpt a | {
  : 0.4 0.6
}
cpt b | a {
  t : 0.3 0.7
  f : 0.3 0.7
}
"""

_A_RULES = [
    ("b=t & c=t", 0.6),
    ("b=t & c=f & d=t", 0.8),
    ("b=t & c=f & d=f", 0.4),
    ("b=f & e=t", 0.06),
    ("b=f & c=t & e=f", 0.96),
    ("b=f & c=f & e=f", 0.16),
]


def _example_doc() -> str:
    lines = [f"variable {name} {{t, f}}" for name in "bcdea"]
    for name in "bcde":
        lines += [f"rule {name}=t <- : 0.5", f"rule {name}=f <- : 0.5"]
    for body, p in _A_RULES:
        lines += [f"rule a=t <- {body} : {p}", f"rule a=f <- {body} : {round(1 - p, 12)}"]
    return "\n".join(lines) + "\n"


# uniform priors on b, c, d, e; the a=t rules get ids 8, 10, 12, 14, 16, 18
EXAMPLE_DOC = _example_doc()
EXAMPLE_IDS = {3: 8, 4: 10, 5: 12, 6: 14, 7: 16, 8: 18}

# rules for a with a hole at b=f & c=f & e=f
COVERAGE_HOLE_DOC = EXAMPLE_DOC.replace("rule a=t <- b=f & c=f & e=f : 0.16\n", "")

# two rules for a=t apply when b=t & c=t
OVERLAP_DOC = """
variable b {t, f}
variable c {t, f}
variable a {t, f}
rule b=t <- : 0.5
rule b=f <- : 0.5
rule c=t <- : 0.5
rule c=f <- : 0.5
rule a=t <- b=t : 0.5
rule a=t <- b=t & c=t : 0.5
rule a=f <- b=t : 0.5
rule a=t <- b=f : 0.5
rule a=f <- b=f : 0.5
"""


def rule_base(text: str) -> RuleBase:
    return parse_model(text).to_rule_base()


def ctx(rb: RuleBase, **assignments: str) -> Context:
    return rb.context_of(assignments)


def find_rules(rb: RuleBase, head: Dict[str, str], body: Dict[str, str]) -> List[Rule]:
    head_ctx, body_ctx = rb.context_of(head), rb.context_of(body)
    return [rule for rule in rb.rules if rule.head == head_ctx and rule.body == body_ctx]


# ============================================
# 무작위 네트워크
# ============================================

def random_network(
    rng: np.random.Generator,
    n: int,
    max_parents: int = 3,
    low: float = 0.01,
    high: float = 0.99,
    redundancy: bool = False,
    max_values: int = 2,
) -> TabularNetwork:
    """
    Random DAG over variables x0..x{n-1} in topological order

    Args:
        redundancy: 마지막 부모의 모든 값에 대한 row를 첫 값의 row로 덮어써서 그 부모를 중복으로 만든다
        max_values: 2보다 크면 도메인 크기를 2..max_values에서 뽑는다 (값 이름 v0, v1, ...)
    """
    if max_values > 2:
        sizes = [int(size) for size in rng.integers(2, max_values + 1, size=n)]
    else:
        sizes = [2] * n
    variables = tuple(
        Variable(f"x{i}", BINARY if size == 2 else tuple(f"v{k}" for k in range(size)), i)
        for i, size in enumerate(sizes)
    )
    cpts = []
    for i in range(n):
        k = int(rng.integers(1, min(max_parents, i) + 1)) if i else 0
        parents = tuple(sorted(int(p) for p in rng.choice(i, size=k, replace=False))) if k else ()
        rows = []
        for _ in range(int(np.prod([sizes[parent] for parent in parents], dtype=int))):
            if sizes[i] == 2:
                p = float(rng.uniform(low, high))
                rows.append((p, 1.0 - p))
            else:
                weights = rng.uniform(low, high, size=sizes[i])
                rows.append(tuple(float(w) for w in weights / weights.sum()))
        if redundancy and parents:
            step = sizes[parents[-1]]
            for r in range(0, len(rows), step):
                for j in range(1, step):
                    rows[r + j] = rows[r]
        cpts.append(CPT(i, parents, tuple(rows)))
    return TabularNetwork(variables, tuple(cpts))


def random_rule_base(rng: np.random.Generator, n: int, **kwargs) -> RuleBase:
    return cpt_to_rules(random_network(rng, n, **kwargs))


def network_text(net: TabularNetwork) -> str:
    return render(ModelDocument("network", net.variables, network=net))


def random_evidence(rng: np.random.Generator, rb: RuleBase, query: Variable, max_observed: Optional[int] = None) -> Context:
    others = [v.index for v in rb.variables if v != query]
    limit = len(others) if max_observed is None else min(max_observed, len(others))
    count = int(rng.integers(limit + 1))
    observed = [int(var) for var in rng.permutation(others)[:count]]
    return Context.of({var: int(rng.integers(rb.variables[var].size)) for var in observed})


def random_query(rng: np.random.Generator, rb: RuleBase) -> Variable:
    return rb.variables[int(rng.integers(len(rb.variables)))]


def contexts_over(rb: RuleBase, variables: List[int]) -> Iterator[Context]:
    for values in itertools.product(*(range(rb.variables[var].size) for var in variables)):
        yield Context(tuple(zip(variables, values)))


def remaining_contexts(rb: RuleBase, eliminated: List[Variable], evidence: Context):
    """Variables still present after eliminating `eliminated`, and every context over them."""
    names = {variable.name for variable in eliminated}
    variables = [v.index for v in rb.variables if v.name not in names and v.index not in evidence]
    return variables, contexts_over(rb, variables)


def audit_loop_invariant(rb: RuleBase, query: Variable, evidence: Context) -> int:
    """
    Run compute_belief and check after every step that the working rules reproduce P(c ∧ e)
    for every context c over the remaining variables, with one applicable rule per variable.

    Returns:
        number of eliminated variables
    """
    eliminated: List[Variable] = []

    def audit(var: Optional[Variable], working: RuleBase) -> None:
        if var is not None:
            eliminated.append(var)
        variables, contexts = remaining_contexts(rb, eliminated, evidence)
        for c in contexts:
            expected, _ = conjunction_probability(rb, c.union(evidence))
            actual, _ = applicable_product(working.rules, c)
            assert abs(actual - expected) <= 1e-9, (rb.describe_context(c), actual, expected)
            for var_index in variables:
                assert applicable_count(working.rules, c, var_index) == 1

    compute_belief(rb, query, evidence, on_step=audit)
    return len(eliminated)
