"""Brute-force reference implementations used as test oracles.

Each one deliberately takes a different computational route from the
production code it checks.
"""
import math

import numpy as np

GRID_STEP = 1e-3


def _inside_any(boxes, px, py):
    hit = np.zeros(px.shape, dtype=bool)
    for x0, y0, x1, y1 in boxes:
        hit |= (px >= x0) & (px <= x1) & (py >= y0) & (py <= y1)
    return hit


def grid_march_raycast(world, ox, oy, angles, max_range, step=GRID_STEP, block=2000):
    """March every ray in ``step`` increments until it leaves the arena or enters a box.

    Returns the first marched distance that is blocked, capped at ``max_range``.
    Error against the exact hit distance is below one step.
    """
    ox = np.broadcast_to(np.asarray(ox, dtype=float), np.shape(angles))
    oy = np.broadcast_to(np.asarray(oy, dtype=float), np.shape(angles))
    angles = np.asarray(angles, dtype=float)
    n_steps = int(math.ceil(max_range / step))
    out = np.full(angles.shape, float(max_range))
    done = np.zeros(angles.shape, dtype=bool)
    cos, sin = np.cos(angles), np.sin(angles)
    boxes = [(r.x_min, r.y_min, r.x_max, r.y_max) for r in world.obstacles]
    for k0 in range(1, n_steps + 1, block):
        live = np.flatnonzero(~done)
        if not len(live):
            break
        ks = np.arange(k0, min(k0 + block, n_steps + 1))
        t = ks * step
        px = ox[live, None] + t[None, :] * cos[live, None]
        py = oy[live, None] + t[None, :] * sin[live, None]
        blocked = (px < 0) | (px > world.width) | (py < 0) | (py > world.height) | _inside_any(boxes, px, py)
        any_hit = blocked.any(axis=1)
        first = blocked.argmax(axis=1)
        rows = live[any_hit]
        out[rows] = np.minimum(t[first[any_hit]], max_range)
        done[rows] = True
    return out


def naive_mlp_forward(params, x):
    """Explicit loops over neurons; tanh on hidden layers, identity on the last."""
    h = [float(v) for v in x]
    for li, (W, b) in enumerate(params):
        fan_in, fan_out = W.shape
        nxt = []
        for j in range(fan_out):
            s = float(b[j])
            for i in range(fan_in):
                s += h[i] * float(W[i, j])
            nxt.append(math.tanh(s) if li < len(params) - 1 else s)
        h = nxt
    return np.array(h)


def gae_bruteforce(rewards, values, last_value, terminal, gamma, lam):
    """Direct double sum A_t = sum_l (gamma*lam)^l delta_{t+l} over one segment.

    ``last_value`` is the value after the final step (ignored when ``terminal``).
    """
    T = len(rewards)
    v_ext = list(values) + [0.0 if terminal else last_value]
    adv = []
    for t in range(T):
        total = 0.0
        for l in range(T - t):
            k = t + l
            delta = rewards[k] + gamma * v_ext[k + 1] - v_ext[k]
            total += (gamma * lam) ** l * delta
        adv.append(total)
    return np.array(adv)


def finite_difference_grads(params, loss_of_params, h=1e-5):
    """Central differences of ``loss_of_params(params)`` w.r.t. every scalar parameter."""
    # contiguous copies so reshape(-1) is a view and the pokes reach the arrays
    params = [(np.ascontiguousarray(W).copy(), np.ascontiguousarray(b).copy()) for W, b in params]
    grads = []
    for W, b in params:
        layer = []
        for arr in (W, b):
            g = np.zeros_like(arr)
            flat = arr.reshape(-1)
            gf = g.reshape(-1)
            for i in range(flat.size):
                old = flat[i]
                flat[i] = old + h
                up = loss_of_params(params)
                flat[i] = old - h
                down = loss_of_params(params)
                flat[i] = old
                gf[i] = (up - down) / (2 * h)
            layer.append(g)
        grads.append(tuple(layer))
    return grads


def max_relative_error(analytic, numeric, floor=1e-6):
    """max |a - n| / max(|a|, |n|, floor) over all parameters."""
    worst = 0.0
    for (aW, ab), (nW, nb) in zip(analytic, numeric):
        for a, n in ((aW, nW), (ab, nb)):
            denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
            worst = max(worst, float((np.abs(a - n) / denom).max()))
    return worst
