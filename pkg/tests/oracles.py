"""Loop-based reference implementations shared by the unit and acceptance tests."""


def ref_rank(conf, j):
    return sum(1 for c in conf if c >= conf[j])


def ref_ranking_loss(C, T):
    vals = []
    for conf, t in zip(C, T):
        rel = [j for j in range(len(t)) if t[j] == 1]
        irr = [j for j in range(len(t)) if t[j] != 1]
        if not rel or not irr:
            continue
        bad = sum(1.0 if conf[a] < conf[b] else 0.5 if conf[a] == conf[b] else 0.0 for a in rel for b in irr)
        vals.append(bad / (len(rel) * len(irr)))
    return sum(vals) / len(vals)


def ref_coverage(C, T):
    vals = [max(ref_rank(conf, j) for j in range(len(t)) if t[j] == 1) - 1 for conf, t in zip(C, T) if any(t == 1)]
    return sum(vals) / len(vals)


def ref_average_precision(C, T):
    vals = []
    for conf, t in zip(C, T):
        rel = [j for j in range(len(t)) if t[j] == 1]
        if not rel:
            continue
        vals.append(sum(sum(1 for l in rel if conf[l] >= conf[j]) / ref_rank(conf, j) for j in rel) / len(rel))
    return sum(vals) / len(vals)


def ref_hamming(B, T):
    return sum(int(b != t) for rb, rt in zip(B, T) for b, t in zip(rb, rt)) / B.size


def ref_friedman(table, higher_is_better=True):
    """Exact (chi2, F_F, average ranks) as Fractions; tied methods share the mean rank."""
    from fractions import Fraction

    K, N = len(table), len(table[0])
    totals = [Fraction(0)] * K
    for s in range(N):
        col = [Fraction(str(table[m][s])) for m in range(K)]
        for m in range(K):
            better = sum(1 for v in col if (v > col[m] if higher_is_better else v < col[m]))
            tied = sum(1 for v in col if v == col[m])
            totals[m] += better + Fraction(tied + 1, 2)
    R = [t / N for t in totals]
    chi2 = Fraction(12 * N, K * (K + 1)) * (sum(r * r for r in R) - Fraction(K * (K + 1) ** 2, 4))
    ff = (N - 1) * chi2 / (N * (K - 1) - chi2)
    return chi2, ff, R
