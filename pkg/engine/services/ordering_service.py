"""
Ordering Service - 변수 소거 순서 (interaction graph 위의 greedy min-degree)
"""

import itertools
import logging
from typing import Iterable, List, Optional, Sequence

import networkx as nx

from services.errors import InvalidQuery

logger = logging.getLogger(__name__)


def interaction_graph(scopes: Iterable[Iterable[int]]) -> nx.Graph:
    """Variables are nodes; two variables are adjacent if some scope mentions both."""
    graph = nx.Graph()
    for scope in scopes:
        scope = list(scope)
        graph.add_nodes_from(scope)
        graph.add_edges_from(itertools.combinations(scope, 2))
    return graph


def min_degree_ordering(scopes: Iterable[Iterable[int]], eliminate: Iterable[int]) -> List[int]:
    """
    Greedy minimum-degree ordering

    Args:
        scopes: factor scopes 또는 규칙 컨텍스트의 변수 집합들
        eliminate: 소거할 변수들 (나머지 변수는 그래프에 남는다)

    Returns:
        소거 순서 (동률은 변수 id가 작은 쪽)
    """
    graph = interaction_graph(scopes)
    remaining = set(eliminate)
    graph.add_nodes_from(remaining)

    ordering = []
    while remaining:
        var = min(remaining, key=lambda node: (graph.degree(node), node))
        neighbours = list(graph.neighbors(var))
        graph.add_edges_from(itertools.combinations(neighbours, 2))
        graph.remove_node(var)
        remaining.discard(var)
        ordering.append(var)
    return ordering


def resolve_ordering(
    scopes: Iterable[Iterable[int]],
    required: Iterable[int],
    explicit: Optional[Sequence[int]] = None,
) -> List[int]:
    """
    소거 순서 결정

    explicit이 주어지면 required 집합의 순열인지 확인하고, 없으면 min-degree 순서를 계산한다.

    Raises:
        InvalidQuery: explicit 순서가 required 집합의 순열이 아닐 때
    """
    required = set(required)
    if explicit is None:
        ordering = min_degree_ordering(scopes, required)
        logger.debug(f"🔍 min-degree ordering: {ordering}")
        return ordering

    explicit = list(explicit)
    if len(set(explicit)) != len(explicit) or set(explicit) != required:
        raise InvalidQuery("the elimination ordering must list every non-query, non-evidence variable exactly once")
    return explicit
