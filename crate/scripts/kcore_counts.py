#!/usr/bin/env python3
"""Independent k-core filter: prints users, items and edges left after filtering."""
import sys
from collections import Counter


def k_core(edges, k):
    edges = set(edges)
    while True:
        du = Counter(u for u, _ in edges)
        di = Counter(i for _, i in edges)
        kept = {(u, i) for u, i in edges if du[u] >= k and di[i] >= k}
        if kept == edges:
            return edges
        edges = kept


def main():
    path = sys.argv[1]
    k = int(sys.argv[2]) if len(sys.argv) > 2 else 5
    with open(path) as f:
        edges = [tuple(line.split()[:2]) for line in f if line.strip() and not line.startswith("#")]
    core = k_core(edges, k)
    print(f"users={len({u for u, _ in core})} items={len({i for _, i in core})} edges={len(core)}")


if __name__ == "__main__":
    main()
