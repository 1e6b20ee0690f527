"""Independent reference implementations used as test oracles."""

import math


def full_sort(scores, masked):
    """Every unmasked item ordered by descending score, ties by ascending index."""
    items = [i for i in range(len(scores)) if i not in set(masked)]
    return sorted(items, key=lambda i: (-scores[i], i))


def brute_recall(order, relevant, n):
    top = order[:n]
    return sum(1 for i in top if i in relevant) / len(relevant)


def brute_ndcg(order, relevant, n):
    dcg = 0.0
    for pos, item in enumerate(order[:n]):
        if item in relevant:
            dcg += 1.0 / math.log2(pos + 2)
    ideal = sum(1.0 / math.log2(pos + 2) for pos in range(min(n, len(relevant))))
    return dcg / ideal
