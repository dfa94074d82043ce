"""Compiled inner loop of the foraging microsimulator.

All arrays are mutated in place.  Random numbers are supplied by the caller as
a ``(steps, n_robots, 7)`` block of uniforms, one row of seven per robot per
step, so the kernel itself holds no RNG state:

    0 CRW turn, 1 avoidance jitter, 2 nest drop fraction,
    3 redistribution cluster, 4/5 redistribution x/y, 6 post-drop heading
"""

import math

import numpy as np
from numba import njit

SEARCHING = 0
HOMING = 1
AVOID_SEARCHING = 2
AVOID_HOMING = 3

# counter slots
C_COLLECTED = 0
C_EPISODES = 1
C_EPISODES_WALL = 2
C_EPISODES_ROBOT = 3
C_TRIPS = 4
C_TRIP_STEPS = 5
C_PICKUPS = 6
C_EPISODES_DONE = 7
C_EPISODE_STEPS = 8
N_COUNTERS = 9

TWO_PI = 2.0 * math.pi


@njit(cache=True)
def _wrap(a):
    return (a + math.pi) % TWO_PI - math.pi


@njit(cache=True)
def _reflect(px, py, hd, i, W, H, r):
    x = px[i]
    y = py[i]
    h = hd[i]
    if x < r:
        x = min(2 * r - x, W - r)
        h = math.pi - h
    elif x > W - r:
        x = max(2 * (W - r) - x, r)
        h = math.pi - h
    if y < r:
        y = min(2 * r - y, H - r)
        h = -h
    elif y > H - r:
        y = max(2 * (H - r) - y, r)
        h = -h
    px[i] = x
    py[i] = y
    hd[i] = _wrap(h)


@njit(cache=True)
def _cell_of(x, y, cs, ncx, ncy):
    cx = int(x / cs)
    cy = int(y / cs)
    if cx < 0:
        cx = 0
    elif cx >= ncx:
        cx = ncx - 1
    if cy < 0:
        cy = 0
    elif cy >= ncy:
        cy = ncy - 1
    return cy * ncx + cx


@njit(cache=True)
def grid_insert(b, bx, by, bcell, bnext, bprev, head, cs, ncx, ncy):
    c = _cell_of(bx[b], by[b], cs, ncx, ncy)
    bcell[b] = c
    bprev[b] = -1
    bnext[b] = head[c]
    if head[c] >= 0:
        bprev[head[c]] = b
    head[c] = b


@njit(cache=True)
def _grid_remove(b, bcell, bnext, bprev, head):
    c = bcell[b]
    p = bprev[b]
    n = bnext[b]
    if p >= 0:
        bnext[p] = n
    else:
        head[c] = n
    if n >= 0:
        bprev[n] = p
    bcell[b] = -1
    bnext[b] = -1
    bprev[b] = -1


@njit(cache=True)
def _turn_away(hd_i, bearing, u):
    """Heading between pi/2 and 3pi/4 off the threat bearing, on the robot's side."""
    rel = _wrap(hd_i - bearing)
    side = 1.0 if rel >= 0.0 else -1.0
    return _wrap(bearing + side * (0.5 * math.pi + 0.25 * math.pi * u))


@njit(cache=True)
def run_steps(
    n_steps,
    step0,
    rand,
    px,
    py,
    hd,
    st,
    carry,
    timer,
    tx,
    ty,
    trip_start,
    bx,
    by,
    bcell,
    bnext,
    bprev,
    head,
    clusters,
    cum_w,
    geom,
    counters,
    occupancy,
    trans,
    stride,
    out_counts,
    out_collected,
    out_steps,
    n_out,
):
    """Advance the world by ``n_steps`` control periods.

    ``geom`` packs scalars: W, H, nest_x, nest_y, nest_half, v_s, v_h, theta,
    dt, body_r, sense_r, avoid_steps, cell_size, ncx, ncy, footprint_half.
    Returns the updated number of recorded samples.
    """
    W = geom[0]
    H = geom[1]
    nx = geom[2]
    ny = geom[3]
    nh = geom[4]
    ds = geom[5] * geom[8]
    dh = geom[6] * geom[8]
    theta = geom[7]
    r = geom[9]
    sense = geom[10]
    avoid_steps = int(geom[11])
    cs = geom[12]
    ncx = int(geom[13])
    ncy = int(geom[14])
    fh = geom[15]
    n = px.shape[0]
    n_clusters = clusters.shape[0]
    robot_range = 2.0 * r + sense
    wall_range = r + sense

    for k in range(n_steps):
        g = step0 + k + 1
        for i in range(n):
            s = st[i]
            if s >= AVOID_SEARCHING:
                px[i] += ds * math.cos(hd[i])
                py[i] += ds * math.sin(hd[i])
                _reflect(px, py, hd, i, W, H, r)
                timer[i] -= 1
                if timer[i] <= 0:
                    timer[i] = 0
                    st[i] = s - 2
                    trans[s, s - 2] += 1
                    counters[C_EPISODES_DONE] += 1
                    if s == AVOID_HOMING:
                        hd[i] = math.atan2(ty[i] - py[i], tx[i] - px[i])
                continue

            # threat detection: nearest robot or an approached wall; robots do
            # not interact while either of them is inside the nest
            best = 1e300
            bearing = 0.0
            partner = -1
            in_nest = abs(px[i] - nx) <= nh and abs(py[i] - ny) <= nh
            for j in range(n):
                if j == i or in_nest:
                    continue
                if abs(px[j] - nx) <= nh and abs(py[j] - ny) <= nh:
                    continue
                dx = px[j] - px[i]
                dy = py[j] - py[i]
                d = math.sqrt(dx * dx + dy * dy)
                if d <= robot_range and d < best:
                    best = d
                    bearing = math.atan2(dy, dx)
                    partner = j
            c = math.cos(hd[i])
            sn = math.sin(hd[i])
            wall_hit = False
            if c < 0.0 and px[i] <= wall_range and px[i] < best:
                best = px[i]
                bearing = math.pi
                wall_hit = True
            if c > 0.0 and W - px[i] <= wall_range and W - px[i] < best:
                best = W - px[i]
                bearing = 0.0
                wall_hit = True
            if sn < 0.0 and py[i] <= wall_range and py[i] < best:
                best = py[i]
                bearing = -0.5 * math.pi
                wall_hit = True
            if sn > 0.0 and H - py[i] <= wall_range and H - py[i] < best:
                best = H - py[i]
                bearing = 0.5 * math.pi
                wall_hit = True

            if best < 1e300:
                st[i] = s + 2
                trans[s, s + 2] += 1
                timer[i] = avoid_steps
                hd[i] = _turn_away(hd[i], bearing, rand[k, i, 1])
                counters[C_EPISODES] += 1
                if wall_hit:
                    counters[C_EPISODES_WALL] += 1
                else:
                    counters[C_EPISODES_ROBOT] += 1
                    sj = st[partner]
                    if sj < AVOID_SEARCHING:
                        st[partner] = sj + 2
                        trans[sj, sj + 2] += 1
                        # a partner later in the update order still ticks once this step
                        timer[partner] = avoid_steps + (1 if partner > i else 0)
                        hd[partner] = _turn_away(hd[partner], bearing + math.pi, rand[k, partner, 1])
                        counters[C_EPISODES] += 1
                        counters[C_EPISODES_ROBOT] += 1
                px[i] += ds * math.cos(hd[i])
                py[i] += ds * math.sin(hd[i])
                _reflect(px, py, hd, i, W, H, r)
                continue

            if s == SEARCHING:
                hd[i] = _wrap(hd[i] + (2.0 * rand[k, i, 0] - 1.0) * theta)
                px[i] += ds * math.cos(hd[i])
                py[i] += ds * math.sin(hd[i])
                _reflect(px, py, hd, i, W, H, r)
                # ground sensor: robot center over a block footprint
                cx = int(px[i] / cs)
                cy = int(py[i] / cs)
                found = -1
                for gy in range(max(cy - 1, 0), min(cy + 2, ncy)):
                    for gx in range(max(cx - 1, 0), min(cx + 2, ncx)):
                        b = head[gy * ncx + gx]
                        while b >= 0:
                            if abs(bx[b] - px[i]) <= fh and abs(by[b] - py[i]) <= fh:
                                if found < 0 or b < found:
                                    found = b
                            b = bnext[b]
                if found >= 0:
                    _grid_remove(found, bcell, bnext, bprev, head)
                    carry[i] = found
                    st[i] = HOMING
                    trans[SEARCHING, HOMING] += 1
                    counters[C_PICKUPS] += 1
                    trip_start[i] = g
                    # entry point on the nest boundary along the line to its center
                    ex = px[i] - nx
                    ey = py[i] - ny
                    m = max(abs(ex), abs(ey))
                    if m > nh:
                        ex = nx + ex * nh / m
                        ey = ny + ey * nh / m
                    else:
                        ex = px[i]
                        ey = py[i]
                    u = rand[k, i, 2]
                    tx[i] = ex + u * (nx - ex)
                    ty[i] = ey + u * (ny - ey)
                    hd[i] = math.atan2(ty[i] - py[i], tx[i] - px[i])
            else:
                dx = tx[i] - px[i]
                dy = ty[i] - py[i]
                d = math.sqrt(dx * dx + dy * dy)
                if d <= dh:
                    px[i] = tx[i]
                    py[i] = ty[i]
                    b = carry[i]
                    # redistribute: cluster by area fraction, uniform inside it
                    u = rand[k, i, 3]
                    jc = 0
                    while jc < n_clusters - 1 and u >= cum_w[jc]:
                        jc += 1
                    bx[b] = clusters[jc, 0] + rand[k, i, 4] * (clusters[jc, 2] - clusters[jc, 0])
                    by[b] = clusters[jc, 1] + rand[k, i, 5] * (clusters[jc, 3] - clusters[jc, 1])
                    grid_insert(b, bx, by, bcell, bnext, bprev, head, cs, ncx, ncy)
                    carry[i] = -1
                    st[i] = SEARCHING
                    trans[HOMING, SEARCHING] += 1
                    counters[C_COLLECTED] += 1
                    counters[C_TRIPS] += 1
                    counters[C_TRIP_STEPS] += g - trip_start[i]
                    hd[i] = _wrap(TWO_PI * rand[k, i, 6])
                else:
                    hd[i] = math.atan2(dy, dx)
                    px[i] += dh * dx / d
                    py[i] += dh * dy / d

        for i in range(n):
            occupancy[st[i]] += 1
            if st[i] >= AVOID_SEARCHING:
                counters[C_EPISODE_STEPS] += 1
        if g % stride == 0 and n_out < out_counts.shape[0]:
            for i in range(n):
                out_counts[n_out, st[i]] += 1
            out_collected[n_out] = counters[C_COLLECTED]
            out_steps[n_out] = g
            n_out += 1
    return n_out
