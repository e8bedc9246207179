"""Numba kernels for the tile rasterizer.

Splat arrays passed here are already depth-sorted; `entries` holds
positions into those sorted arrays, grouped per tile in front-to-back
order. Parallel loops only ever write tile-local or splat-local slots,
so results are bit-identical for any thread count.
"""

import numpy as np
from numba import njit, prange


@njit(cache=True)
def count_tile_entries(tx0, tx1, ty0, ty1, n_tiles_x, tile_counts):
    total = 0
    for k in range(tx0.shape[0]):
        if tx1[k] < tx0[k] or ty1[k] < ty0[k]:
            continue
        for ty in range(ty0[k], ty1[k] + 1):
            for tx in range(tx0[k], tx1[k] + 1):
                tile_counts[ty * n_tiles_x + tx] += 1
                total += 1
    return total


@njit(cache=True)
def fill_tile_entries(tx0, tx1, ty0, ty1, n_tiles_x, tile_offsets,
                      entries, splat_entry_idx, splat_entry_off):
    n = tx0.shape[0]
    cursors = np.zeros(tile_offsets.shape[0] - 1, dtype=np.int64)
    for k in range(n):  # k is the depth rank; per-tile lists stay sorted
        c = splat_entry_off[k]
        if tx1[k] < tx0[k] or ty1[k] < ty0[k]:
            continue
        for ty in range(ty0[k], ty1[k] + 1):
            for tx in range(tx0[k], tx1[k] + 1):
                t = ty * n_tiles_x + tx
                pos = tile_offsets[t] + cursors[t]
                cursors[t] += 1
                entries[pos] = k
                splat_entry_idx[c] = pos
                c += 1


@njit(cache=True, parallel=True)
def forward_tiles(entries, tile_offsets, mean2d, conic, alpha, color, bg,
                  H, W, tile, n_tiles_x, n_tiles_y,
                  alpha_clip, alpha_min, t_min, maha_max,
                  img, out_T, out_n, out_last):
    for t in prange(n_tiles_x * n_tiles_y):
        ty = t // n_tiles_x
        tx = t % n_tiles_x
        y0 = ty * tile
        x0 = tx * tile
        y1 = min(y0 + tile, H)
        x1 = min(x0 + tile, W)
        e0 = tile_offsets[t]
        e1 = tile_offsets[t + 1]
        for py in range(y0, y1):
            for px in range(x0, x1):
                fx = px + 0.5
                fy = py + 0.5
                T = 1.0
                c0 = 0.0
                c1 = 0.0
                c2 = 0.0
                ncontrib = 0
                last = 0
                for e in range(e0, e1):
                    s = entries[e]
                    dx = fx - mean2d[s, 0]
                    dy = fy - mean2d[s, 1]
                    A = conic[s, 0]
                    B = conic[s, 1]
                    C = conic[s, 2]
                    maha = A * dx * dx + 2.0 * B * dx * dy + C * dy * dy
                    if maha > maha_max or maha < 0.0:
                        continue
                    a = alpha[s] * np.exp(-0.5 * maha)
                    if a > alpha_clip:
                        a = alpha_clip
                    if a < alpha_min:
                        continue
                    test_T = T * (1.0 - a)
                    if test_T < t_min:
                        break
                    w = a * T
                    c0 += color[s, 0] * w
                    c1 += color[s, 1] * w
                    c2 += color[s, 2] * w
                    T = test_T
                    ncontrib += 1
                    last = e - e0 + 1
                img[py, px, 0] = c0 + T * bg[0]
                img[py, px, 1] = c1 + T * bg[1]
                img[py, px, 2] = c2 + T * bg[2]
                out_T[py, px] = T
                out_n[py, px] = ncontrib
                out_last[py, px] = last


@njit(cache=True)
def reference_forward(mean2d, conic, alpha, color, bg, H, W,
                      alpha_clip, alpha_min, t_min, maha_max,
                      img, out_T, out_n):
    """Naive path: every pixel walks the full depth-sorted splat list."""
    n = mean2d.shape[0]
    for py in range(H):
        for px in range(W):
            fx = px + 0.5
            fy = py + 0.5
            T = 1.0
            c0 = 0.0
            c1 = 0.0
            c2 = 0.0
            ncontrib = 0
            for s in range(n):
                dx = fx - mean2d[s, 0]
                dy = fy - mean2d[s, 1]
                A = conic[s, 0]
                B = conic[s, 1]
                C = conic[s, 2]
                maha = A * dx * dx + 2.0 * B * dx * dy + C * dy * dy
                if maha > maha_max or maha < 0.0:
                    continue
                a = alpha[s] * np.exp(-0.5 * maha)
                if a > alpha_clip:
                    a = alpha_clip
                if a < alpha_min:
                    continue
                test_T = T * (1.0 - a)
                if test_T < t_min:
                    break
                w = a * T
                c0 += color[s, 0] * w
                c1 += color[s, 1] * w
                c2 += color[s, 2] * w
                T = test_T
                ncontrib += 1
            img[py, px, 0] = c0 + T * bg[0]
            img[py, px, 1] = c1 + T * bg[1]
            img[py, px, 2] = c2 + T * bg[2]
            out_T[py, px] = T
            out_n[py, px] = ncontrib


@njit(cache=True, parallel=True)
def backward_tiles(entries, tile_offsets, mean2d, conic, alpha, color, bg,
                   dL, T_final, last, H, W, tile, n_tiles_x, n_tiles_y,
                   alpha_clip, alpha_min, maha_max, entry_grads):
    """Back-to-front pass; entry_grads rows are owned by a single tile.

    Per entry: d(mean2d) [0:2], d(conic) [2:5], d(activated alpha) [5],
    d(color) [6:9].
    """
    for t in prange(n_tiles_x * n_tiles_y):
        ty = t // n_tiles_x
        tx = t % n_tiles_x
        y0 = ty * tile
        x0 = tx * tile
        y1 = min(y0 + tile, H)
        x1 = min(x0 + tile, W)
        e0 = tile_offsets[t]
        for py in range(y0, y1):
            for px in range(x0, x1):
                lp = last[py, px]
                if lp == 0:
                    continue
                fx = px + 0.5
                fy = py + 0.5
                gL0 = dL[py, px, 0]
                gL1 = dL[py, px, 1]
                gL2 = dL[py, px, 2]
                T_next = T_final[py, px]
                # absolute contribution of everything behind the current
                # splat, background included
                W0 = bg[0] * T_next
                W1 = bg[1] * T_next
                W2 = bg[2] * T_next
                for j in range(lp - 1, -1, -1):
                    e = e0 + j
                    s = entries[e]
                    dx = fx - mean2d[s, 0]
                    dy = fy - mean2d[s, 1]
                    A = conic[s, 0]
                    B = conic[s, 1]
                    C = conic[s, 2]
                    maha = A * dx * dx + 2.0 * B * dx * dy + C * dy * dy
                    if maha > maha_max or maha < 0.0:
                        continue
                    g = np.exp(-0.5 * maha)
                    pre = alpha[s] * g
                    a = pre
                    if a > alpha_clip:
                        a = alpha_clip
                    if a < alpha_min:
                        continue
                    om = 1.0 - a
                    T_i = T_next / om
                    w = a * T_i
                    entry_grads[e, 6] += gL0 * w
                    entry_grads[e, 7] += gL1 * w
                    entry_grads[e, 8] += gL2 * w
                    dLda = (gL0 * (color[s, 0] * T_i - W0 / om)
                            + gL1 * (color[s, 1] * T_i - W1 / om)
                            + gL2 * (color[s, 2] * T_i - W2 / om))
                    if pre < alpha_clip:  # clip gate blocks alpha-side grads
                        entry_grads[e, 5] += dLda * g
                        dLdm = dLda * alpha[s] * (-0.5) * g
                        entry_grads[e, 2] += dLdm * dx * dx
                        entry_grads[e, 3] += dLdm * 2.0 * dx * dy
                        entry_grads[e, 4] += dLdm * dy * dy
                        entry_grads[e, 0] += dLdm * (-(2.0 * A * dx + 2.0 * B * dy))
                        entry_grads[e, 1] += dLdm * (-(2.0 * B * dx + 2.0 * C * dy))
                    W0 += color[s, 0] * w
                    W1 += color[s, 1] * w
                    W2 += color[s, 2] * w
                    T_next = T_i


@njit(cache=True, parallel=True)
def reduce_splat_grads(splat_entry_idx, splat_entry_off, entry_grads, out):
    for s in prange(splat_entry_off.shape[0] - 1):
        for c in range(splat_entry_off[s], splat_entry_off[s + 1]):
            e = splat_entry_idx[c]
            for k in range(9):
                out[s, k] += entry_grads[e, k]
