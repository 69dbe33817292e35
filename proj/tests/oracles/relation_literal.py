"""Reference values for the literal relation matcher (one head, no q/k/v/o maps).

R' = softmax(E K^T / sqrt(C)) K with K = [E, T W_t + b_t] (or T W_t + b_t alone),
R = layer_norm(R' W_r + b_r + E) with gamma/beta, eps 1e-5.
Prints C++ initializers that tests/test_relation_matcher.cpp embeds verbatim.
"""
import math

P, L, C, D = 3, 2, 4, 5


def grid(rows, cols, a, b, m):
    return [[((a * i + b * j) % m - m // 2) / m for j in range(cols)] for i in range(rows)]


E = grid(P, C, 3, 5, 7)
T = grid(L, D, 2, 3, 5)
Wt = grid(D, C, 1, 2, 9)
bt = [0.1, -0.2, 0.05, 0.0]
Wr = grid(C, C, 4, 1, 11)
br = [0.0, 0.1, -0.1, 0.2]
gamma = [1.0, 0.5, 1.5, 2.0]
beta = [0.0, 0.25, -0.25, 0.5]


def matmul(a, b):
    return [[sum(a[i][k] * b[k][j] for k in range(len(b))) for j in range(len(b[0]))] for i in range(len(a))]


def add_row(a, v):
    return [[x + v[j] for j, x in enumerate(r)] for r in a]


def run(variant):
    Tp = add_row(matmul(T, Wt), bt)
    K = E + Tp if variant == "E_T" else Tp
    s = 1.0 / math.sqrt(C)
    logits = [[s * sum(E[i][c] * K[j][c] for c in range(C)) for j in range(len(K))] for i in range(P)]
    probs = []
    for row in logits:
        m = max(row)
        e = [math.exp(x - m) for x in row]
        z = sum(e)
        probs.append([x / z for x in e])
    Rp = matmul(probs, K)
    pre = [[x + E[i][j] for j, x in enumerate(r)] for i, r in enumerate(add_row(matmul(Rp, Wr), br))]
    out = []
    for r in pre:
        mu = sum(r) / C
        var = sum((x - mu) ** 2 for x in r) / C
        out.append([gamma[j] * (x - mu) / math.sqrt(var + 1e-5) + beta[j] for j, x in enumerate(r)])
    return probs, out


def cpp(name, rows):
    flat = ", ".join(repr(x) for r in rows for x in r)
    print(f"const std::vector<double> {name}{{{flat}}};")


for v in ("E_T", "T"):
    probs, out = run(v)
    cpp(f"kProbs_{v}", probs)
    cpp(f"kOut_{v}", out)
