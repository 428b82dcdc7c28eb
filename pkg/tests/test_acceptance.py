"""
Larger randomized sweeps over generated networks
"""

import itertools

import numpy as np
import pytest

from helpers import (
    CHAIN_DOC,
    audit_loop_invariant,
    contexts_over,
    find_rules,
    network_text,
    random_evidence,
    random_network,
    random_query,
    random_rule_base,
    rule_base,
)
from services.approx_service import SimplifyConfig, bounded_posterior, check_approximates, simplify
from services.exact_service import compute_belief
from services.factor_service import ve_posterior
from services.ingest_service import cpt_to_rules, extract_structure, parse_model, render, rules_document
from services.model_service import Context, complete_context_probability, head_counts, validate
from services.oracle_service import conjunction_probability, enumerate_posterior, perturb_parameter

THRESHOLDS = (0.05, 0.1, 0.2)
STRATEGIES = ("drop", "resolve", "both")


def sweep_network(rng, seed, binary_max, multi_max):
    """Every fourth seed draws domains of size 2..3 on a smaller network."""
    if seed % 4 == 0:
        return random_network(rng, int(rng.integers(2, multi_max + 1)), max_values=3)
    return random_network(rng, int(rng.integers(2, binary_max + 1)))


def test_threshold_one_leaves_one_rule_per_value():
    rb = rule_base(CHAIN_DOC)
    out = simplify(rb, SimplifyConfig(threshold=1.0))
    assert head_counts(out) == {"a": 2, "b": 2}
    assert find_rules(out, {"b": "t"}, {})[0].bounds == pytest.approx((0.2, 0.9))
    assert find_rules(out, {"b": "f"}, {})[0].bounds == pytest.approx((0.1, 0.8))


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(200))
def test_engines_agree(seed):
    rng = np.random.default_rng(1000 + seed)
    net = sweep_network(rng, seed, binary_max=10, multi_max=6)
    rb = cpt_to_rules(net)
    for _ in range(3):
        query = random_query(rng, rb)
        evidence = random_evidence(rng, rb, query, max_observed=4)
        order = None
        if rng.integers(2):
            order = [int(v) for v in rng.permutation(
                [v.index for v in rb.variables if v != query and v.index not in evidence]
            )]
        exact = enumerate_posterior(rb, query, evidence)
        rules, _ = compute_belief(rb, query, evidence, order=order)
        ve, _ = ve_posterior(net, query, evidence, order=order)
        np.testing.assert_allclose(rules.probabilities, exact.probabilities, atol=1e-9)
        np.testing.assert_allclose(ve.probabilities, exact.probabilities, atol=1e-9)


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(20))
def test_every_ordering_agrees(seed):
    rng = np.random.default_rng(1500 + seed)
    rb = random_rule_base(rng, 6)
    query = random_query(rng, rb)
    evidence = random_evidence(rng, rb, query, max_observed=1)
    rest = [v.index for v in rb.variables if v != query and v.index not in evidence]

    reference, _ = compute_belief(rb, query, evidence)
    for order in itertools.permutations(rest):
        posterior, _ = compute_belief(rb, query, evidence, order=list(order))
        np.testing.assert_allclose(posterior.probabilities, reference.probabilities, atol=1e-9)


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(200))
def test_bounds_contain_the_exact_posterior(seed):
    rng = np.random.default_rng(2000 + seed)
    rb = cpt_to_rules(sweep_network(rng, seed, binary_max=8, multi_max=5))
    queries = []
    for _ in range(2):
        query = random_query(rng, rb)
        evidence = random_evidence(rng, rb, query, max_observed=3)
        queries.append((query, evidence, enumerate_posterior(rb, query, evidence)))

    point = simplify(rb, SimplifyConfig(threshold=0.0, strategy="both"))
    for query, evidence, exact in queries:
        bp, _ = bounded_posterior(point, query, evidence)
        np.testing.assert_allclose(bp.lows, exact.probabilities, atol=1e-9)
        np.testing.assert_allclose(bp.highs, exact.probabilities, atol=1e-9)

    for threshold, strategy in itertools.product(THRESHOLDS, STRATEGIES):
        arb = simplify(rb, SimplifyConfig(threshold=threshold, strategy=strategy))
        assert validate(arb).valid
        assert check_approximates(arb, rb).holds
        for query, evidence, exact in queries:
            bp, _ = bounded_posterior(arb, query, evidence)
            assert bp.contains(exact), (threshold, strategy, query.name, bp.lows, bp.highs, exact.probabilities)


MOVES = (("both", 1), ("both", -1), ("upper", 1), ("lower", -1))


@pytest.mark.slow
@pytest.mark.parametrize("chunk", range(10))
def test_perturbed_rules_move_conjunctions_monotonically(chunk):
    rng = np.random.default_rng(5000 + chunk)
    for _ in range(100):
        rb = random_rule_base(rng, int(rng.integers(2, 6)))
        rule = rb.rules[int(rng.integers(len(rb.rules)))]
        bound, sign = MOVES[int(rng.integers(len(MOVES)))]
        room = 1.0 - rule.upper if sign > 0 else rule.lower
        delta = sign * float(rng.uniform(0.0, room))
        perturbed = perturb_parameter(rb, rule.id, delta, bound=bound)

        for _ in range(5):
            size = int(rng.integers(1, len(rb.variables) + 1))
            chosen = [int(v) for v in rng.choice(len(rb.variables), size=size, replace=False)]
            c = Context(tuple((var, int(rng.integers(rb.variables[var].size))) for var in chosen))
            before_low, before_high = conjunction_probability(rb, c)
            after_low, after_high = conjunction_probability(perturbed, c)
            if sign > 0:
                assert after_low >= before_low - 1e-12
                assert after_high >= before_high - 1e-12
            else:
                assert after_low <= before_low + 1e-12
                assert after_high <= before_high + 1e-12


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(100))
def test_compression_at_zero_is_exact_and_smaller(seed):
    rng = np.random.default_rng(3000 + seed)
    net = random_network(rng, int(rng.integers(3, 9)), redundancy=True, max_values=3 if seed % 4 == 0 else 2)
    rb = cpt_to_rules(net)
    compressed = extract_structure(rb, 0.0)
    if any(cpt.parents for cpt in net.cpts):
        assert len(compressed.rules) < len(rb.rules)
    for c in contexts_over(rb, [v.index for v in rb.variables]):
        before, _ = complete_context_probability(rb, c)
        after, _ = complete_context_probability(compressed, c)
        assert after == pytest.approx(before, abs=1e-12)


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(50))
def test_loop_invariant_holds_at_every_step(seed):
    rng = np.random.default_rng(6000 + seed)
    rb = random_rule_base(rng, 6, max_values=3 if seed % 5 == 0 else 2)
    query = random_query(rng, rb)
    evidence = random_evidence(rng, rb, query, max_observed=2)
    assert audit_loop_invariant(rb, query, evidence) == len(rb.variables) - len(evidence) - 1


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(100))
def test_documents_round_trip(seed):
    rng = np.random.default_rng(7000 + seed)
    net = random_network(rng, int(rng.integers(1, 8)), max_values=4 if seed % 2 else 2)
    doc = parse_model(network_text(net))
    assert doc.network == net
    assert parse_model(render(doc)) == doc

    canonical = parse_model(render(rules_document(extract_structure(cpt_to_rules(net), 0.2))))
    assert parse_model(render(canonical)) == canonical


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(10))
def test_intervals_never_lower_a_conjunction(seed):
    rng = np.random.default_rng(4000 + seed)
    rb = random_rule_base(rng, 7)
    arb = extract_structure(rb, 0.2)
    for _ in range(10):
        query = random_query(rng, rb)
        evidence = random_evidence(rng, rb, query)
        c = evidence.extend(query.index, int(rng.integers(query.size)))
        exact, _ = conjunction_probability(rb, c)
        lower, upper = conjunction_probability(arb, c)
        assert lower - 1e-12 <= exact <= upper + 1e-12
