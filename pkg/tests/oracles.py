"""Straight-loop reference implementations used only by the tests."""

import math

import numpy as np


def conv2d_loops(x, w, b, pad):
    N, cin, H, W = x.shape
    cout, _, k, _ = w.shape
    Ho, Wo = H + 2 * pad - k + 1, W + 2 * pad - k + 1
    out = np.zeros((N, cout, Ho, Wo))
    for n in range(N):
        for o in range(cout):
            for y in range(Ho):
                for xx in range(Wo):
                    acc = b[o]
                    for c in range(cin):
                        for ky in range(k):
                            for kx in range(k):
                                iy, ix = y + ky - pad, xx + kx - pad
                                if 0 <= iy < H and 0 <= ix < W:
                                    acc += x[n, c, iy, ix] * w[o, c, ky, kx]
                    out[n, o, y, xx] = acc
    return out


def conv_transpose_scatter(x, w, b):
    """Each input pixel scatters weight * value onto output (2i - 1 + ky, 2j - 1 + kx)."""
    N, cin, H, W = x.shape
    cout = w.shape[1]
    out = np.zeros((N, cout, 2 * H, 2 * W))
    for n in range(N):
        for c in range(cin):
            for i in range(H):
                for j in range(W):
                    for o in range(cout):
                        for ky in range(4):
                            for kx in range(4):
                                y, xx = 2 * i - 1 + ky, 2 * j - 1 + kx
                                if 0 <= y < 2 * H and 0 <= xx < 2 * W:
                                    out[n, o, y, xx] += x[n, c, i, j] * w[c, o, ky, kx]
    out += b[None, :, None, None]
    return out


def sad_brute(left_gray, right_gray, block, search):
    """Exhaustive per-pixel SAD costs with replicated borders."""
    H, W = left_gray.shape
    r = block // 2
    costs = np.zeros((search + 1, H, W))
    for d in range(search + 1):
        for y in range(H):
            for x in range(W):
                s = 0.0
                for dy in range(-r, r + 1):
                    for dx in range(-r, r + 1):
                        yy = min(max(y + dy, 0), H - 1)
                        xl = min(max(x + dx, 0), W - 1)
                        xr = max(xl - d, 0)
                        s += abs(left_gray[yy, xl] - right_gray[yy, xr])
                costs[d, y, x] = s
    return costs


def metrics_loops(p, g, window=11, sigma=1.5):
    """All eight depth metrics with plain Python loops."""
    p = np.asarray(p, dtype=float).reshape(-1, p.shape[-1])
    g = np.asarray(g, dtype=float).reshape(-1, g.shape[-1])
    H, W = g.shape
    n = H * W
    ar = sr = se = lg = 0.0
    hits = [0, 0, 0]
    for y in range(H):
        for x in range(W):
            pv, gv = float(p[y, x]), float(g[y, x])
            ar += abs(pv - gv) / gv
            sr += (pv - gv) ** 2 / gv
            se += (pv - gv) ** 2
            lg += abs(math.log10(pv) - math.log10(gv))
            ratio = max(pv / gv, gv / pv)
            for i in range(3):
                if ratio < 1.25 ** (i + 1):
                    hits[i] += 1
    half = (window - 1) / 2
    k1 = [math.exp(-((i - half) ** 2) / (2 * sigma**2)) for i in range(window)]
    tot = sum(k1)
    k1 = [v / tot for v in k1]
    c1, c2 = 0.01**2, 0.03**2
    vals = []
    for y0 in range(H - window + 1):
        for x0 in range(W - window + 1):
            mx = my = 0.0
            for i in range(window):
                for j in range(window):
                    wt = k1[i] * k1[j]
                    mx += wt * p[y0 + i, x0 + j]
                    my += wt * g[y0 + i, x0 + j]
            vx = vy = cxy = 0.0
            for i in range(window):
                for j in range(window):
                    wt = k1[i] * k1[j]
                    a, b = p[y0 + i, x0 + j] - mx, g[y0 + i, x0 + j] - my
                    vx += wt * a * a
                    vy += wt * b * b
                    cxy += wt * a * b
            vals.append(((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2)))
    return {
        "abs_rel": ar / n,
        "sq_rel": sr / n,
        "log10": lg / n,
        "rmse": math.sqrt(se / n),
        "sigma1": hits[0] / n,
        "sigma2": hits[1] / n,
        "sigma3": hits[2] / n,
        "ssim": sum(vals) / len(vals),
    }
