"""Independent reference implementations used by the unit and acceptance tests."""

import math

import numpy as np

OFFSETS = {0: (1, 0), 45: (1, 1), 90: (0, 1), 135: (-1, 1)}  # (dx along columns, dy along rows)
UNIT = {0: (1.0, 0.0), 45: (0.5**0.5, 0.5**0.5), 90: (0.0, 1.0), 135: (-(0.5**0.5), 0.5**0.5)}


def oracle_offset(d, theta):
    c, s = UNIT[theta]
    return round(d * c), round(d * s)


def glcm_oracle(codes, g, dx, dy, symmetric=True):
    h, w = len(codes), len(codes[0])
    counts = [[0] * g for _ in range(g)]
    for y in range(h):
        for x in range(w):
            yy, xx = y + dy, x + dx
            if 0 <= yy < h and 0 <= xx < w:
                counts[codes[y][x]][codes[yy][xx]] += 1
    if symmetric:
        counts = [[counts[i][j] + counts[j][i] for j in range(g)] for i in range(g)]
    return counts


def stats_oracle(P):
    n = len(P)
    con = sum((i - j) ** 2 * P[i][j] for i in range(n) for j in range(n))
    ene = sum(P[i][j] ** 2 for i in range(n) for j in range(n))
    hom = sum(P[i][j] / (1 + abs(i - j)) for i in range(n) for j in range(n))
    mi = sum(i * P[i][j] for i in range(n) for j in range(n))
    mj = sum(j * P[i][j] for i in range(n) for j in range(n))
    si = math.sqrt(sum((i - mi) ** 2 * P[i][j] for i in range(n) for j in range(n)))
    sj = math.sqrt(sum((j - mj) ** 2 * P[i][j] for i in range(n) for j in range(n)))
    if si < 1e-12 or sj < 1e-12:
        cor = 1.0
    else:
        cor = sum((i - mi) * (j - mj) * P[i][j] for i in range(n) for j in range(n)) / (si * sj)
    return {"contrast": con, "energy": ene, "homogeneity": hom, "correlation": cor}


def dft_oracle(img):
    h, w = img.shape
    x = np.arange(w)
    y = np.arange(h)
    Ew = np.exp(-2j * np.pi * np.outer(x, x) / w)  # [u, x]
    Eh = np.exp(-2j * np.pi * np.outer(y, y) / h)  # [v, y]
    return np.abs(Eh @ img @ Ew.T)


def oracle_zone(r, p):
    """Clarke regions written independently, checked in the order A, E, C, D, else B."""
    in_a = (r <= 70 and p <= 70) or (0.8 * r <= p <= 1.2 * r)
    if in_a:
        return "A"
    upper_e = r <= 70 and p >= 180
    lower_e = r >= 180 and p <= 70
    if upper_e or lower_e:
        return "E"
    upper_c = 70 <= r <= 290 and p - r >= 110
    lower_c = 130 <= r <= 180 and 5 * (p + 182) <= 7 * r
    if upper_c or lower_c:
        return "C"
    right_d = r >= 240 and 70 <= p <= 180
    left_d = 3 * r <= 175 and 70 <= p <= 180
    left_d2 = 175 <= 3 * r and r <= 70 and 5 * p >= 6 * r
    if right_d or left_d or left_d2:
        return "D"
    return "B"
