"""Independent reference implementations used only by the tests.

These are deliberately written differently from the library code paths they
check (pure Python loops, weight-form interpolation, exhaustive sweeps).
"""
import math

import numpy as np

TIE = 1e-9


# --- LBP -------------------------------------------------------------------

def neighbor_offsets(P, R):
    out = []
    for p in range(P):
        ang = 2 * math.pi * p / P
        dx, dy = R * math.cos(ang), -R * math.sin(ang)
        if abs(dx - round(dx)) < 1e-9:
            dx = float(round(dx))
        if abs(dy - round(dy)) < 1e-9:
            dy = float(round(dy))
        out.append((dx, dy))
    return out


def bilinear(img, x, y):
    """Weighted four-corner form, reading only corners with nonzero weight."""
    x0, y0 = math.floor(x), math.floor(y)
    fx, fy = x - x0, y - y0
    total = 0.0
    for cx, wx in ((x0, 1 - fx), (x0 + 1, fx)):
        for cy, wy in ((y0, 1 - fy), (y0 + 1, fy)):
            w = wx * wy
            if w != 0:
                total += w * float(img[cy][cx])
    return total


def brute_code(center, neighbors):
    bits = [1 if g - center >= -TIE else 0 for g in neighbors]
    P = len(bits)
    u = abs(bits[P - 1] - bits[0]) + sum(abs(bits[p] - bits[p - 1]) for p in range(1, P))
    return sum(bits) if u <= 2 else P + 1


def brute_histogram(center_img, neighbor_img, P, R):
    h, w = len(center_img), len(center_img[0])
    m = math.ceil(R)
    offs = neighbor_offsets(P, R)
    counts = [0] * (P + 2)
    for y in range(m, h - m):
        for x in range(m, w - m):
            nb = [bilinear(neighbor_img, x + dx, y + dy) for dx, dy in offs]
            counts[brute_code(float(center_img[y][x]), nb)] += 1
    total = sum(counts)
    return [c / total for c in counts]


def brute_multiscale(center_img, neighbor_img):
    out = []
    for P, R in ((8, 1), (16, 2), (24, 3)):
        out += brute_histogram(center_img, neighbor_img, P, R)
    return out


def brute_clbp(hsv):
    chans = [hsv[:, :, k].tolist() for k in range(3)]
    out = []
    for i in range(3):
        for j in range(3):
            out += brute_multiscale(chans[i], chans[j])
    return out


# --- linear algebra --------------------------------------------------------

def gauss_solve(a, b):
    """Gaussian elimination with partial pivoting on plain lists."""
    n = len(a)
    m = [list(map(float, row)) + [float(rhs)] for row, rhs in zip(a, b)]
    for col in range(n):
        piv = max(range(col, n), key=lambda r: abs(m[r][col]))
        m[col], m[piv] = m[piv], m[col]
        for r in range(col + 1, n):
            f = m[r][col] / m[col][col]
            for c in range(col, n + 1):
                m[r][c] -= f * m[col][c]
    x = [0.0] * n
    for r in range(n - 1, -1, -1):
        x[r] = (m[r][n] - sum(m[r][c] * x[c] for c in range(r + 1, n))) / m[r][r]
    return x


def homography_from_4(src, dst):
    a, b = [], []
    for (x, y), (u, v) in zip(src, dst):
        a.append([x, y, 1, 0, 0, 0, -x * u, -y * u])
        b.append(u)
        a.append([0, 0, 0, x, y, 1, -x * v, -y * v])
        b.append(v)
    return gauss_solve(a, b)


def apply_homography(params, x, y):
    a, b, c, d, e, f, g, h = params
    lam = g * x + h * y + 1
    return (a * x + b * y + c) / lam, (d * x + e * y + f) / lam


# --- SVM -------------------------------------------------------------------

def l2svm_objective(w, b, X, y, C):
    slack = np.maximum(0.0, 1.0 - y * (X @ w + b))
    return 0.5 * w @ w + C * slack @ slack


def l2svm_reference(X, y, C, iters=200000):
    """Nesterov-accelerated gradient descent with gradient-based restart."""
    n, d = X.shape
    Z = np.hstack([X, np.ones((n, 1))])
    L = 1.0 + 2.0 * C * np.linalg.eigvalsh(Z.T @ Z).max()
    reg = np.ones(d + 1)
    reg[d] = 0.0

    def grad(t):
        r = np.maximum(0.0, 1.0 - y * (Z @ t))
        return reg * t - 2.0 * C * (Z.T @ (r * y))

    theta = np.zeros(d + 1)
    v = theta.copy()
    tk = 1.0
    g_stop = 1e-10 * max(1.0, np.abs(grad(theta)).max())
    for _ in range(iters):
        gv = grad(v)
        nxt = v - gv / L
        t_next = (1 + math.sqrt(1 + 4 * tk * tk)) / 2
        if gv @ (nxt - theta) > 0:
            # momentum points uphill: restart from the plain gradient step
            t_next = 1.0
        v = nxt + (tk - 1) / t_next * (nxt - theta) if t_next > 1.0 else nxt
        theta, tk = nxt, t_next
        if np.abs(grad(theta)).max() < g_stop:
            break
    return theta[:d], theta[d]


# --- metrics ---------------------------------------------------------------

def sweep_tdr_at_fdr(live, spoof, target):
    """Try every candidate threshold in ascending order; take the first that qualifies."""
    cands = sorted(set(live) | set(spoof))
    cands.append(math.nextafter(max(1.0, max(cands)), math.inf))
    for t in cands:
        fdr = sum(1 for s in live if s >= t) / len(live)
        if fdr <= target:
            return sum(1 for s in spoof if s >= t) / len(spoof), t
    raise AssertionError("unreachable")


def smoothed_nll(A, B, d, y):
    n_pos = sum(1 for v in y if v > 0)
    n_neg = len(y) - n_pos
    total = 0.0
    for di, yi in zip(d, y):
        t = (n_pos + 1) / (n_pos + 2) if yi > 0 else 1 / (n_neg + 2)
        z = A * di + B
        # p = 1 / (1 + e^z)
        log_p = -math.log1p(math.exp(z)) if z < 30 else -z
        log_q = -math.log1p(math.exp(-z)) if z > -30 else z
        total -= t * log_p + (1 - t) * log_q
    return total
