#!/usr/bin/env python3
"""Independent oracle for nDCG@k and Recall@k on random cases.

Writes metrics_cases.json; expected values are f64 bit patterns.
"""
import json
import math
import os
import random
import struct

OUT = os.path.join(os.path.dirname(os.path.abspath(__file__)), "metrics_cases.json")


def bits(x):
    return struct.unpack("<Q", struct.pack("<d", x))[0]


def gain(g, kind):
    return (2.0 ** g - 1.0) if kind == "exp" else float(g)


def dcg(grades_in_order, kind):
    s = 0.0
    for i, g in enumerate(grades_in_order):
        s += gain(g, kind) / math.log2(i + 2)
    return s


def ndcg(ranking, grades, k, kind):
    got = dcg([grades.get(v, 0) for v in ranking[:k]], kind)
    ideal = dcg(sorted((g for g in grades.values() if g > 0), reverse=True)[:k], kind)
    return 0.0 if ideal == 0.0 else got / ideal


def recall(ranking, grades, k):
    relevant = {v for v, g in grades.items() if g > 0}
    if not relevant:
        return None
    return len(relevant & set(ranking[:k])) / len(relevant)


def main():
    rng = random.Random(77)
    pool = [f"d{i:02d}" for i in range(50)]
    cases = []
    for c in range(200):
        ranking = rng.sample(pool, rng.randint(0, 50))
        judged = rng.sample(pool, rng.randint(1, 20))
        grades = {v: rng.choice([0, 0, 1, 1, 2, 3]) for v in judged}
        k = rng.choice([1, 3, 5, 10, 10, 10, 20, 50])
        kind = "exp" if c % 4 else "linear"
        r = recall(ranking, grades, k)
        cases.append({
            "ranking": ranking,
            "grades": grades,
            "k": k,
            "gain": kind,
            "ndcg": bits(ndcg(ranking, grades, k, kind)),
            "recall": None if r is None else bits(r),
        })
    with open(OUT, "w") as f:
        json.dump(cases, f, sort_keys=True)
        f.write("\n")


if __name__ == "__main__":
    main()
