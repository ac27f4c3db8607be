"""Numba kernels for voxel traversal: raycasting, depth-sweep observation
and per-voxel coverage counting.  These are the simulator's hot paths; the
grid is a dense C-contiguous int8 array with states UNKNOWN=0, FREE=1,
OCCUPIED=2.
"""

import math

import numpy as np
from numba import njit

UNKNOWN = 0
FREE = 1
OCCUPIED = 2


@njit(cache=True)
def _voxel_of(x, o, res, n):
    i = int(math.floor((x - o) / res))
    if i < 0:
        i = 0
    if i > n - 1:
        i = n - 1
    return i


@njit(cache=True)
def raycast_blocked(cells, ox, oy, oz, res, ax, ay, az, bx, by, bz, skip_last):
    """First OCCUPIED voxel on the segment a->b, as a flat index, else -1.

    Both endpoints must lie inside the grid.  With skip_last the target's
    own voxel never blocks (used for feature visibility).
    """
    nx, ny, nz = cells.shape
    ix = _voxel_of(ax, ox, res, nx)
    iy = _voxel_of(ay, oy, res, ny)
    iz = _voxel_of(az, oz, res, nz)
    jx = _voxel_of(bx, ox, res, nx)
    jy = _voxel_of(by, oy, res, ny)
    jz = _voxel_of(bz, oz, res, nz)

    dx = bx - ax
    dy = by - ay
    dz = bz - az

    sx = 1 if dx > 0 else -1
    sy = 1 if dy > 0 else -1
    sz = 1 if dz > 0 else -1

    big = 1e30
    tdx = res / abs(dx) if dx != 0.0 else big
    tdy = res / abs(dy) if dy != 0.0 else big
    tdz = res / abs(dz) if dz != 0.0 else big

    if dx > 0:
        tmx = (((ix + 1) * res + ox) - ax) / dx
    elif dx < 0:
        tmx = ((ix * res + ox) - ax) / dx
    else:
        tmx = big
    if dy > 0:
        tmy = (((iy + 1) * res + oy) - ay) / dy
    elif dy < 0:
        tmy = ((iy * res + oy) - ay) / dy
    else:
        tmy = big
    if dz > 0:
        tmz = (((iz + 1) * res + oz) - az) / dz
    elif dz < 0:
        tmz = ((iz * res + oz) - az) / dz
    else:
        tmz = big

    while True:
        at_target = ix == jx and iy == jy and iz == jz
        if not (at_target and skip_last):
            if cells[ix, iy, iz] == OCCUPIED:
                return (ix * ny + iy) * nz + iz
        if at_target:
            return -1
        if tmx <= tmy and tmx <= tmz:
            ix += sx
            tmx += tdx
        elif tmy <= tmz:
            iy += sy
            tmy += tdy
        else:
            iz += sz
            tmz += tdz
        if ix < 0 or ix >= nx or iy < 0 or iy >= ny or iz < 0 or iz >= nz:
            return -1


@njit(cache=True)
def segment_all_free(cells, ox, oy, oz, res, ax, ay, az, bx, by, bz):
    """True iff every voxel traversed by the segment is FREE (known)."""
    nx, ny, nz = cells.shape
    ix = _voxel_of(ax, ox, res, nx)
    iy = _voxel_of(ay, oy, res, ny)
    iz = _voxel_of(az, oz, res, nz)
    jx = _voxel_of(bx, ox, res, nx)
    jy = _voxel_of(by, oy, res, ny)
    jz = _voxel_of(bz, oz, res, nz)
    dx, dy, dz = bx - ax, by - ay, bz - az
    sx = 1 if dx > 0 else -1
    sy = 1 if dy > 0 else -1
    sz = 1 if dz > 0 else -1
    big = 1e30
    tdx = res / abs(dx) if dx != 0.0 else big
    tdy = res / abs(dy) if dy != 0.0 else big
    tdz = res / abs(dz) if dz != 0.0 else big
    if dx > 0:
        tmx = (((ix + 1) * res + ox) - ax) / dx
    elif dx < 0:
        tmx = ((ix * res + ox) - ax) / dx
    else:
        tmx = big
    if dy > 0:
        tmy = (((iy + 1) * res + oy) - ay) / dy
    elif dy < 0:
        tmy = ((iy * res + oy) - ay) / dy
    else:
        tmy = big
    if dz > 0:
        tmz = (((iz + 1) * res + oz) - az) / dz
    elif dz < 0:
        tmz = ((iz * res + oz) - az) / dz
    else:
        tmz = big
    while True:
        if cells[ix, iy, iz] != FREE:
            return False
        if ix == jx and iy == jy and iz == jz:
            return True
        if tmx <= tmy and tmx <= tmz:
            ix += sx
            tmx += tdx
        elif tmy <= tmz:
            iy += sy
            tmy += tdy
        else:
            iz += sz
            tmz += tdz
        if ix < 0 or ix >= nx or iy < 0 or iy >= ny or iz < 0 or iz >= nz:
            return False


@njit(cache=True)
def visibility_mask(cells, ox, oy, oz, res, px, py, pz, targets, out):
    """out[i] = True when the ray p->targets[i] hits no OCCUPIED voxel
    before the target's own voxel."""
    for i in range(targets.shape[0]):
        hit = raycast_blocked(
            cells, ox, oy, oz, res, px, py, pz,
            targets[i, 0], targets[i, 1], targets[i, 2], True,
        )
        out[i] = hit < 0


@njit(cache=True)
def observe_sweep(belief, gt, ox, oy, oz, res, px, py, pz, yaw,
                  h_fov, v_fov, max_range):
    """Depth-camera sweep: cast rays over the FOV at voxel angular density,
    marking traversed ground-truth-free voxels FREE and the first occupied
    hit OCCUPIED in the belief grid."""
    nx, ny, nz = belief.shape
    ang = res / max_range
    n_az = max(int(h_fov / ang) + 1, 2)
    n_el = max(int(v_fov / ang) + 1, 2)
    for ia in range(n_az):
        azi = yaw - 0.5 * h_fov + h_fov * ia / (n_az - 1)
        for ie in range(n_el):
            ele = -0.5 * v_fov + v_fov * ie / (n_el - 1)
            dxn = math.cos(ele) * math.cos(azi)
            dyn = math.cos(ele) * math.sin(azi)
            dzn = math.sin(ele)
            bx = px + dxn * max_range
            by = py + dyn * max_range
            bz = pz + dzn * max_range
            ix = _voxel_of(px, ox, res, nx)
            iy = _voxel_of(py, oy, res, ny)
            iz = _voxel_of(pz, oz, res, nz)
            sx = 1 if dxn > 0 else -1
            sy = 1 if dyn > 0 else -1
            sz = 1 if dzn > 0 else -1
            big = 1e30
            dx, dy, dz = bx - px, by - py, bz - pz
            tdx = res / abs(dx) if dx != 0.0 else big
            tdy = res / abs(dy) if dy != 0.0 else big
            tdz = res / abs(dz) if dz != 0.0 else big
            if dx > 0:
                tmx = (((ix + 1) * res + ox) - px) / dx
            elif dx < 0:
                tmx = ((ix * res + ox) - px) / dx
            else:
                tmx = big
            if dy > 0:
                tmy = (((iy + 1) * res + oy) - py) / dy
            elif dy < 0:
                tmy = ((iy * res + oy) - py) / dy
            else:
                tmy = big
            if dz > 0:
                tmz = (((iz + 1) * res + oz) - pz) / dz
            elif dz < 0:
                tmz = ((iz * res + oz) - pz) / dz
            else:
                tmz = big
            t = 0.0
            while t <= 1.0:
                if gt[ix, iy, iz] == OCCUPIED:
                    belief[ix, iy, iz] = OCCUPIED
                    break
                belief[ix, iy, iz] = FREE
                if tmx <= tmy and tmx <= tmz:
                    t = tmx
                    ix += sx
                    tmx += tdx
                elif tmy <= tmz:
                    t = tmy
                    iy += sy
                    tmy += tdy
                else:
                    t = tmz
                    iz += sz
                    tmz += tdz
                if ix < 0 or ix >= nx or iy < 0 or iy >= ny or iz < 0 or iz >= nz:
                    break


@njit(cache=True)
def coverage_count(cells, ox, oy, oz, res, px, py, pz, yaw,
                   h_fov, v_fov, max_range):
    """Number of UNKNOWN voxels inside the FOV cone whose line of sight from
    p crosses no OCCUPIED voxel (unknown space is transparent)."""
    nx, ny, nz = cells.shape
    r_vox = int(max_range / res) + 1
    cx = _voxel_of(px, ox, res, nx)
    cy = _voxel_of(py, oy, res, ny)
    cz = _voxel_of(pz, oz, res, nz)
    lo_x = max(cx - r_vox, 0)
    hi_x = min(cx + r_vox, nx - 1)
    lo_y = max(cy - r_vox, 0)
    hi_y = min(cy + r_vox, ny - 1)
    lo_z = max(cz - r_vox, 0)
    hi_z = min(cz + r_vox, nz - 1)
    count = 0
    half_h = 0.5 * h_fov
    half_v = 0.5 * v_fov
    for ix in range(lo_x, hi_x + 1):
        wx = ox + (ix + 0.5) * res
        for iy in range(lo_y, hi_y + 1):
            wy = oy + (iy + 0.5) * res
            for iz in range(lo_z, hi_z + 1):
                if cells[ix, iy, iz] != UNKNOWN:
                    continue
                wz = oz + (iz + 0.5) * res
                dx = wx - px
                dy = wy - py
                dz = wz - pz
                d2 = dx * dx + dy * dy + dz * dz
                if d2 > max_range * max_range:
                    continue
                d_az = math.atan2(dy, dx) - yaw
                while d_az > math.pi:
                    d_az -= 2.0 * math.pi
                while d_az < -math.pi:
                    d_az += 2.0 * math.pi
                if abs(d_az) > half_h:
                    continue
                dh = math.sqrt(dx * dx + dy * dy)
                if abs(math.atan2(dz, dh)) > half_v:
                    continue
                hit = raycast_blocked(cells, ox, oy, oz, res, px, py, pz, wx, wy, wz, True)
                if hit < 0:
                    count += 1
    return count


@njit(cache=True)
def mark_free_sphere(cells, ox, oy, oz, res, px, py, pz, radius):
    """Force voxels within radius of p to FREE (vehicle self-clearance)."""
    nx, ny, nz = cells.shape
    r_vox = int(radius / res) + 1
    cx = _voxel_of(px, ox, res, nx)
    cy = _voxel_of(py, oy, res, ny)
    cz = _voxel_of(pz, oz, res, nz)
    for ix in range(max(cx - r_vox, 0), min(cx + r_vox, nx - 1) + 1):
        for iy in range(max(cy - r_vox, 0), min(cy + r_vox, ny - 1) + 1):
            for iz in range(max(cz - r_vox, 0), min(cz + r_vox, nz - 1) + 1):
                wx = ox + (ix + 0.5) * res - px
                wy = oy + (iy + 0.5) * res - py
                wz = oz + (iz + 0.5) * res - pz
                if wx * wx + wy * wy + wz * wz <= radius * radius:
                    if cells[ix, iy, iz] != OCCUPIED:
                        cells[ix, iy, iz] = FREE


@njit(cache=True)
def bfs_path(cells, start_flat, goal_flat, parents):
    """Breadth-first search over FREE voxels, 26-connectivity.  Diagonal
    moves require the whole spanned block to be FREE so no edge cuts a
    corner past an occupied voxel.  Fills the parents array (flat indices,
    -1 unvisited) and returns True when the goal was reached."""
    nx, ny, nz = cells.shape
    total = nx * ny * nz
    queue = np.empty(total, dtype=np.int64)
    head = 0
    tail = 0
    queue[tail] = start_flat
    tail += 1
    parents[start_flat] = start_flat
    while head < tail:
        cur = queue[head]
        head += 1
        if cur == goal_flat:
            return True
        iz = cur % nz
        iy = (cur // nz) % ny
        ix = cur // (ny * nz)
        for ddx in range(-1, 2):
            x = ix + ddx
            if x < 0 or x >= nx:
                continue
            for ddy in range(-1, 2):
                y = iy + ddy
                if y < 0 or y >= ny:
                    continue
                for ddz in range(-1, 2):
                    if ddx == 0 and ddy == 0 and ddz == 0:
                        continue
                    z = iz + ddz
                    if z < 0 or z >= nz:
                        continue
                    if cells[x, y, z] != FREE:
                        continue
                    blocked = False
                    for bx in range(min(ix, x), max(ix, x) + 1):
                        for by in range(min(iy, y), max(iy, y) + 1):
                            for bz in range(min(iz, z), max(iz, z) + 1):
                                if cells[bx, by, bz] != FREE:
                                    blocked = True
                    if blocked:
                        continue
                    nxt = (x * ny + y) * nz + z
                    if parents[nxt] < 0:
                        parents[nxt] = cur
                        queue[tail] = nxt
                        tail += 1
    return False
