"""Recomputes reference values used by the test suites, independently of the Rust code."""
import math


def sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


def weight(d, eps, omega):
    return 1.5 - sigmoid(omega * (eps - d))


def one_vs_two():
    # pred = {(0,0,0)}, gt = {(0,0,0), (1,0,0)}, eps = 0.5, omega = 10, lambda = 1.
    eps, omega = 0.5, 10.0
    pred_side = weight(0.0, eps, omega) * 0.0
    gt_side = (weight(0.0, eps, omega) * 0.0 + weight(1.0, eps, omega) * 1.0) / 2
    cov = pred_side + gt_side
    # Only the second gt point is nobody's nearest neighbour.
    attr = sigmoid(omega * (eps - 1.0)) * 1.0 / 2
    return cov, attr, cov + attr


def grid_spacing(n=11, step=0.1):
    pts = [(i * step, j * step, 0.0) for i in range(n) for j in range(n)]
    total = 0.0
    for a, p in enumerate(pts):
        total += min(math.dist(p, q) for b, q in enumerate(pts) if b != a)
    return total / len(pts)


if __name__ == "__main__":
    cov, attr, total = one_vs_two()
    print(f"one-vs-two: cov={cov:.7f} attr={attr:.7f} total={total:.7f}")
    print(f"11x11 grid mean spacing: {grid_spacing():.12f}")
