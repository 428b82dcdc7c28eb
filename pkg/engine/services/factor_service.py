"""
Factor Service - 테이블 기반 변수 소거 (baseline)
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from services.errors import ImpossibleEvidence, InvalidQuery
from services.exact_service import Distribution, InferenceStats, StepStats
from services.ingest_service import CPT, TabularNetwork
from services.model_service import Context, Variable
from services.ordering_service import resolve_ordering

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Factor:
    """
    Dense table over an ascending tuple of variable indices

    table.shape[i] == |val(scope[i])|
    """

    scope: Tuple[int, ...]
    table: np.ndarray

    def __post_init__(self):
        if tuple(sorted(self.scope)) != self.scope:
            raise ValueError("factor scope must be ascending")
        if self.table.ndim != len(self.scope):
            raise ValueError("factor table rank must match its scope")

    @property
    def size(self) -> int:
        return int(self.table.size)

    def reduce(self, evidence: Context) -> "Factor":
        """Fix observed variables and drop them from the scope."""
        if not any(var in evidence for var in self.scope):
            return self
        index = tuple(evidence.get(var) if var in evidence else slice(None) for var in self.scope)
        return Factor(tuple(var for var in self.scope if var not in evidence), np.asarray(self.table[index]))

    def expand(self, scope: Sequence[int]) -> np.ndarray:
        """View of the table broadcastable over the (ascending) `scope`."""
        shape = [self.table.shape[self.scope.index(var)] if var in self.scope else 1 for var in scope]
        return self.table.reshape(shape)

    def multiply(self, other: "Factor") -> "Factor":
        scope = tuple(sorted(set(self.scope) | set(other.scope)))
        return Factor(scope, self.expand(scope) * other.expand(scope))

    def sum_out(self, var: int) -> "Factor":
        axis = self.scope.index(var)
        return Factor(self.scope[:axis] + self.scope[axis + 1:], self.table.sum(axis=axis))


def factor_from_cpt(cpt: CPT, variables: Tuple[Variable, ...]) -> Factor:
    """CPT rows (parents row-major, child last) as a factor over sorted(parents + child)."""
    family = cpt.parents + (cpt.variable,)
    shape = tuple(variables[var].size for var in family)
    table = np.asarray(cpt.rows, dtype=float).reshape(shape)
    scope = tuple(sorted(family))
    permutation = [family.index(var) for var in scope]
    return Factor(scope, np.transpose(table, permutation))


def multiply_all(factors: List[Factor]) -> Factor:
    product = factors[0]
    for factor in factors[1:]:
        product = product.multiply(factor)
    return product


def ve_posterior(
    net: TabularNetwork,
    query: Variable,
    evidence: Context,
    order: Optional[Sequence[int]] = None,
) -> Tuple[Distribution, InferenceStats]:
    """
    Factor-based variable elimination

    Args:
        net: tabular network
        query: 질의 변수
        evidence: 관측 컨텍스트
        order: 소거 순서 (None이면 min-degree)

    Returns:
        (P(query | evidence), 단계별 최대 factor 크기를 기록한 stats)

    Raises:
        InvalidQuery: query가 증거에 포함될 때
        ImpossibleEvidence: P(evidence) = 0
    """
    if query.index in evidence:
        raise InvalidQuery(f"query variable {query.name} is observed")

    factors = [factor_from_cpt(cpt, net.variables).reduce(evidence) for cpt in net.cpts]
    required = [v.index for v in net.variables if v.index != query.index and v.index not in evidence]
    ordering = resolve_ordering((factor.scope for factor in factors), required, order)
    stats = InferenceStats("ve", [net.variables[var].name for var in ordering])

    for var in ordering:
        touching = [factor for factor in factors if var in factor.scope]
        factors = [factor for factor in factors if var not in factor.scope]
        if not touching:
            continue
        product = multiply_all(touching)
        stats.steps.append(
            StepStats(variable=net.variables[var].name, rules_combined=len(touching), factor_entries=product.size)
        )
        factors.append(product.sum_out(var))

    result = multiply_all(factors)
    # 남은 스칼라 factor는 scope가 비어 있고 질의 변수 축으로 broadcast된다
    unnormalized = np.broadcast_to(result.expand((query.index,)), (query.size,)).astype(float)
    normalizer = math.fsum(unnormalized)
    if normalizer <= 0.0:
        raise ImpossibleEvidence("evidence has probability 0")

    posterior = Distribution(query.name, query.domain, tuple(float(p) / normalizer for p in unnormalized))
    logger.debug(f"✅ ve posterior for {query.name}: {posterior.as_dict()} (max factor {stats.max_factor_entries})")
    return posterior, stats
