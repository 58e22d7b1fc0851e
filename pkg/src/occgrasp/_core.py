"""Hot loops of the planar simulator.

Polygon collision, the sequential-impulse contact solver, planar serial-arm
dynamics and the fused operational-space control loop. The file is written in
Cython's pure-Python mode: ``setup.py`` compiles it to ``occgrasp._core_ext``,
and when that extension is unavailable the very same source runs under the
interpreter. Both paths perform identical floating-point operations in
identical order.

Array layouts (all float64 unless noted)::

    pose (n, 3)       x, z, theta of every body frame (the centre of mass)
    vel (n, 3)        vx, vz, omega
    pvel (n, 3)       pseudo-velocity scratch of the penetration recovery pass
    W (n, 9)          row-major 3x3 inverse generalized mass at the body frame;
                      diag(1/m, 1/m, 1/I) for free bodies, zero for static ones,
                      J M^-1 J^T for the arm tip (rewritten every tick)
    friction (n,)
    dyn (n,) int32    1 for bodies that move
    shape_body, shape_start, shape_count (s,) int32; verts, normals (v, 2)
    chain (20,)       base x, z | lengths[3] | masses[3] | com distance[3]
                      | com inertia[3] | armature[3] | viscous damping[3]
    params (8,)       gx, gz, dt, max solver sweeps, beta, slop, margin,
                      sweep tolerance (largest impulse change, N s)
    contacts (k, 20)  one row per contact, see ``C_*`` offsets below
    stats (16,)       telemetry, see ``S_*`` offsets below
"""
import cython
from cython.cimports.libc.math import sqrt, sin, cos, atan2, isfinite

NCOL = cython.declare(cython.int, 20)

# contact row
C_A = cython.declare(cython.int, 0)
C_B = cython.declare(cython.int, 1)
C_PX = cython.declare(cython.int, 2)
C_PZ = cython.declare(cython.int, 3)
C_NX = cython.declare(cython.int, 4)
C_NZ = cython.declare(cython.int, 5)
C_SEP = cython.declare(cython.int, 6)
C_RAX = cython.declare(cython.int, 7)
C_RAZ = cython.declare(cython.int, 8)
C_RBX = cython.declare(cython.int, 9)
C_RBZ = cython.declare(cython.int, 10)
C_MN = cython.declare(cython.int, 11)
C_MT = cython.declare(cython.int, 12)
C_MU = cython.declare(cython.int, 13)
C_TGT = cython.declare(cython.int, 14)
C_LN = cython.declare(cython.int, 15)
C_LT = cython.declare(cython.int, 16)
C_MP = cython.declare(cython.int, 17)
C_LP = cython.declare(cython.int, 18)
C_PT = cython.declare(cython.int, 19)

# stats
S_MAXPEN = cython.declare(cython.int, 0)
S_NCONT = cython.declare(cython.int, 1)
S_CONE = cython.declare(cython.int, 2)
S_MINLN = cython.declare(cython.int, 3)
S_TIPX = cython.declare(cython.int, 4)
S_MAXFX = cython.declare(cython.int, 7)
S_TICKS = cython.declare(cython.int, 10)
S_MINDET = cython.declare(cython.int, 11)
S_OVERFLOW = cython.declare(cython.int, 12)
S_MEANF = cython.declare(cython.int, 13)

# chain scratch
K_J = cython.declare(cython.int, 0)
K_M = cython.declare(cython.int, 9)
K_MI = cython.declare(cython.int, 18)
K_B = cython.declare(cython.int, 27)
K_P = cython.declare(cython.int, 36)
K_C = cython.declare(cython.int, 44)
K_H = cython.declare(cython.int, 50)
K_G = cython.declare(cython.int, 53)
K_T = cython.declare(cython.int, 56)
K_GC = cython.declare(cython.int, 59)
K_DET = cython.declare(cython.int, 62)
K_AC = cython.declare(cython.int, 63)
_OK = cython.declare(cython.int, 0)
_NONFINITE = cython.declare(cython.int, 1)

# Python-visible mirrors of the constants above
SCRATCH = 72
CONTACT_COLS = 20
STATUS_OK = 0
STATUS_NONFINITE = 1


# ---------------------------------------------------------------- arm chain


@cython.cfunc
@cython.nogil
@cython.exceptval(check=False)
def _chain_kin(chain: cython.double[::1], q: cython.double[::1], sc: cython.double[::1]) -> cython.double:
    """Joint points, link centres of mass and the tip Jacobian; returns the tip angle."""
    i: cython.int
    phi: cython.double = 0.0
    px: cython.double = chain[0]
    pz: cython.double = chain[1]
    c: cython.double
    s: cython.double
    sc[K_P] = px
    sc[K_P + 1] = pz
    for i in range(3):
        phi += q[i]
        c = cos(phi)
        s = sin(phi)
        sc[K_C + 2 * i] = px + chain[8 + i] * c
        sc[K_C + 2 * i + 1] = pz + chain[8 + i] * s
        px += chain[2 + i] * c
        pz += chain[2 + i] * s
        sc[K_P + 2 * i + 2] = px
        sc[K_P + 2 * i + 3] = pz
    for i in range(3):
        sc[K_J + i] = -(pz - sc[K_P + 2 * i + 1])
        sc[K_J + 3 + i] = px - sc[K_P + 2 * i]
        sc[K_J + 6 + i] = 1.0
    return phi


@cython.cfunc
@cython.nogil
@cython.exceptval(check=False)
def _chain_mass(chain: cython.double[::1], sc: cython.double[::1], dt: cython.double) -> cython.void:
    """Joint-space inertia M and the inverse of M + dt*D (adjugate formula).

    Folding the damping into the inverted matrix integrates joint friction
    implicitly, which keeps the free arm dissipative under the tick size used.
    """
    i: cython.int
    j: cython.int
    k: cython.int
    m: cython.double
    inertia: cython.double
    axi: cython.double
    azi: cython.double
    axj: cython.double
    azj: cython.double
    for i in range(9):
        sc[K_M + i] = 0.0
    for k in range(3):
        m = chain[5 + k]
        inertia = chain[11 + k]
        for i in range(k + 1):
            axi = -(sc[K_C + 2 * k + 1] - sc[K_P + 2 * i + 1])
            azi = sc[K_C + 2 * k] - sc[K_P + 2 * i]
            for j in range(k + 1):
                axj = -(sc[K_C + 2 * k + 1] - sc[K_P + 2 * j + 1])
                azj = sc[K_C + 2 * k] - sc[K_P + 2 * j]
                sc[K_M + 3 * i + j] += m * (axi * axj + azi * azj) + inertia
    for i in range(3):
        sc[K_M + 4 * i] += chain[14 + i]
    for i in range(3):
        sc[K_M + 4 * i] += dt * chain[17 + i]
    _inv3(sc, K_M, K_MI)
    for i in range(3):
        sc[K_M + 4 * i] -= dt * chain[17 + i]


@cython.cfunc
@cython.nogil
@cython.exceptval(check=False)
def _inv3(sc: cython.double[::1], src: cython.int, dst: cython.int) -> cython.double:
    a: cython.double = sc[src]
    b: cython.double = sc[src + 1]
    c: cython.double = sc[src + 2]
    d: cython.double = sc[src + 3]
    e: cython.double = sc[src + 4]
    f: cython.double = sc[src + 5]
    g: cython.double = sc[src + 6]
    h: cython.double = sc[src + 7]
    k: cython.double = sc[src + 8]
    c00: cython.double = e * k - f * h
    c01: cython.double = -(d * k - f * g)
    c02: cython.double = d * h - e * g
    det: cython.double = a * c00 + b * c01 + c * c02
    inv: cython.double = 1.0 / det
    sc[dst] = c00 * inv
    sc[dst + 1] = -(b * k - c * h) * inv
    sc[dst + 2] = (b * f - c * e) * inv
    sc[dst + 3] = c01 * inv
    sc[dst + 4] = (a * k - c * g) * inv
    sc[dst + 5] = -(a * f - c * d) * inv
    sc[dst + 6] = c02 * inv
    sc[dst + 7] = -(a * h - b * g) * inv
    sc[dst + 8] = (a * e - b * d) * inv
    return det


@cython.cfunc
@cython.nogil
@cython.exceptval(check=False)
def _chain_bias(
    chain: cython.double[::1],
    qd: cython.double[::1],
    use_vel: cython.int,
    gx: cython.double,
    gz: cython.double,
    sc: cython.double[::1],
    out: cython.int,
) -> cython.void:
    """Coriolis, centrifugal and gravity torques by recursive Newton-Euler (zero joint acceleration).

    Gravity enters as an upward acceleration of the base. With ``use_vel == 0``
    only the gravity torques are produced.
    """
    i: cython.int
    w: cython.double = 0.0
    w2: cython.double
    apx: cython.double = -gx
    apz: cython.double = -gz
    fx: cython.double = 0.0
    fz: cython.double = 0.0
    n: cython.double = 0.0
    fxi: cython.double
    fzi: cython.double
    dx: cython.double
    dz: cython.double
    cvx: cython.double
    cvz: cython.double
    for i in range(3):
        if use_vel:
            w += qd[i]
        w2 = w * w
        sc[K_AC + 2 * i] = apx - w2 * (sc[K_C + 2 * i] - sc[K_P + 2 * i])
        sc[K_AC + 2 * i + 1] = apz - w2 * (sc[K_C + 2 * i + 1] - sc[K_P + 2 * i + 1])
        apx = apx - w2 * (sc[K_P + 2 * i + 2] - sc[K_P + 2 * i])
        apz = apz - w2 * (sc[K_P + 2 * i + 3] - sc[K_P + 2 * i + 1])
    for i in range(2, -1, -1):
        fxi = chain[5 + i] * sc[K_AC + 2 * i]
        fzi = chain[5 + i] * sc[K_AC + 2 * i + 1]
        dx = sc[K_P + 2 * i + 2] - sc[K_P + 2 * i]
        dz = sc[K_P + 2 * i + 3] - sc[K_P + 2 * i + 1]
        cvx = sc[K_C + 2 * i] - sc[K_P + 2 * i]
        cvz = sc[K_C + 2 * i + 1] - sc[K_P + 2 * i + 1]
        n = n + (dx * fz - dz * fx) + (cvx * fzi - cvz * fxi)
        fx += fxi
        fz += fzi
        sc[out + i] = n


def chain_terms(chain, q, qd, gx, gz, J, M, h, g) -> float:
    """Expose J, M, the full bias h and the gravity torques g for testing; returns the tip angle."""
    sc = _zeros_like_scratch(chain)
    phi = _chain_kin(chain, q, sc)
    _chain_mass(chain, sc, 0.0)
    _chain_bias(chain, qd, 1, gx, gz, sc, K_H)
    _chain_bias(chain, qd, 0, gx, gz, sc, K_GC)
    for i in range(9):
        J[i // 3, i % 3] = sc[K_J + i]
        M[i // 3, i % 3] = sc[K_M + i]
    for i in range(3):
        h[i] = sc[K_H + i]
        g[i] = sc[K_GC + i]
    return phi


def _zeros_like_scratch(chain):
    import numpy

    return numpy.zeros(SCRATCH, dtype=numpy.float64)


# --------------------------------------------------------------- collision


@cython.cfunc
@cython.nogil
@cython.exceptval(check=False)
def _edge_sep(
    wv: cython.double[:, ::1],
    wn: cython.double[:, ::1],
    ia: cython.int,
    sb: cython.int,
    nb: cython.int,
) -> cython.double:
    j: cython.int
    nx: cython.double = wn[ia, 0]
    nz: cython.double = wn[ia, 1]
    vx: cython.double = wv[ia, 0]
    vz: cython.double = wv[ia, 1]
    best: cython.double = 1e300
    d: cython.double
    for j in range(sb, sb + nb):
        d = nx * (wv[j, 0] - vx) + nz * (wv[j, 1] - vz)
        if d < best:
            best = d
    return best


@cython.cfunc
@cython.nogil
@cython.exceptval(check=False)
def _max_sep_edge(
    wv: cython.double[:, ::1],
    wn: cython.double[:, ::1],
    sa: cython.int,
    na: cython.int,
    sb: cython.int,
    nb: cython.int,
) -> cython.int:
    i: cython.int
    best_i: cython.int = sa
    best: cython.double = -1e300
    d: cython.double
    for i in range(sa, sa + na):
        d = _edge_sep(wv, wn, i, sb, nb)
        if d > best:
            best = d
            best_i = i
    return best_i


@cython.cfunc
@cython.nogil
@cython.exceptval(check=False)
def _collide_polys(
    wv: cython.double[:, ::1],
    wn: cython.double[:, ::1],
    sa: cython.int,
    na: cython.int,
    sb: cython.int,
    nb: cython.int,
    body_a: cython.int,
    body_b: cython.int,
    margin: cython.double,
    slop: cython.double,
    contacts: cython.double[:, ::1],
    k: cython.int,
) -> cython.int:
    """Append up to two contacts between polygons A and B; returns the new count."""
    ea: cython.int = _max_sep_edge(wv, wn, sa, na, sb, nb)
    sep_a: cython.double = _edge_sep(wv, wn, ea, sb, nb)
    if sep_a > margin:
        return k
    eb: cython.int = _max_sep_edge(wv, wn, sb, nb, sa, na)
    sep_b: cython.double = _edge_sep(wv, wn, eb, sa, na)
    if sep_b > margin:
        return k
    rs: cython.int
    rn: cython.int
    ri: cython.int
    is_: cython.int
    inn: cython.int
    flip: cython.int
    if sep_b > sep_a + 0.1 * slop:
        rs, rn, ri, is_, inn, flip = sb, nb, eb, sa, na, 1
    else:
        rs, rn, ri, is_, inn, flip = sa, na, ea, sb, nb, 0
    ri2: cython.int = ri + 1
    if ri2 == rs + rn:
        ri2 = rs
    nx: cython.double = wn[ri, 0]
    nz: cython.double = wn[ri, 1]
    v1x: cython.double = wv[ri, 0]
    v1z: cython.double = wv[ri, 1]
    v2x: cython.double = wv[ri2, 0]
    v2z: cython.double = wv[ri2, 1]
    # incident edge: most anti-parallel normal
    j: cython.int
    ii: cython.int = is_
    best: cython.double = 1e300
    d: cython.double
    for j in range(is_, is_ + inn):
        d = nx * wn[j, 0] + nz * wn[j, 1]
        if d < best:
            best = d
            ii = j
    ii2: cython.int = ii + 1
    if ii2 == is_ + inn:
        ii2 = is_
    ax: cython.double = wv[ii, 0]
    az: cython.double = wv[ii, 1]
    bx: cython.double = wv[ii2, 0]
    bz: cython.double = wv[ii2, 1]
    tx: cython.double = v2x - v1x
    tz: cython.double = v2z - v1z
    tl: cython.double = sqrt(tx * tx + tz * tz)
    tx /= tl
    tz /= tl
    lo: cython.double = tx * v1x + tz * v1z
    hi: cython.double = tx * v2x + tz * v2z
    da: cython.double = tx * ax + tz * az - lo
    db: cython.double = tx * bx + tz * bz - lo
    f: cython.double
    if da < 0.0 and db < 0.0:
        return k
    if da < 0.0:
        f = da / (da - db)
        ax = ax + (bx - ax) * f
        az = az + (bz - az) * f
    elif db < 0.0:
        f = db / (db - da)
        bx = bx + (ax - bx) * f
        bz = bz + (az - bz) * f
    da = hi - (tx * ax + tz * az)
    db = hi - (tx * bx + tz * bz)
    if da < 0.0 and db < 0.0:
        return k
    if da < 0.0:
        f = da / (da - db)
        ax = ax + (bx - ax) * f
        az = az + (bz - az) * f
    elif db < 0.0:
        f = db / (db - da)
        bx = bx + (ax - bx) * f
        bz = bz + (az - bz) * f
    sgn: cython.double = -1.0 if flip else 1.0
    p: cython.int
    px: cython.double
    pz: cython.double
    sep: cython.double
    for p in range(2):
        if p == 0:
            px = ax
            pz = az
        else:
            px = bx
            pz = bz
        sep = nx * (px - v1x) + nz * (pz - v1z)
        if sep <= margin and k < contacts.shape[0]:
            contacts[k, C_A] = body_a
            contacts[k, C_B] = body_b
            contacts[k, C_PX] = px - 0.5 * sep * nx
            contacts[k, C_PZ] = pz - 0.5 * sep * nz
            contacts[k, C_NX] = sgn * nx
            contacts[k, C_NZ] = sgn * nz
            contacts[k, C_SEP] = sep
            contacts[k, C_LN] = 0.0
            contacts[k, C_LT] = 0.0
            k += 1
        elif sep <= margin:
            k += 1
    return k


@cython.cfunc
@cython.nogil
@cython.exceptval(check=False)
def _contact_less(contacts: cython.double[:, ::1], i: cython.int, j: cython.int) -> cython.int:
    f: cython.int
    for f in range(4):
        if contacts[i, f] < contacts[j, f]:
            return 1
        if contacts[i, f] > contacts[j, f]:
            return 0
    return 0


@cython.cfunc
@cython.nogil
@cython.exceptval(check=False)
def _collide_all(
    pose: cython.double[:, ::1],
    dyn: cython.int[::1],
    shape_body: cython.int[::1],
    shape_start: cython.int[::1],
    shape_count: cython.int[::1],
    verts: cython.double[:, ::1],
    normals: cython.double[:, ::1],
    wv: cython.double[:, ::1],
    wn: cython.double[:, ::1],
    aabb: cython.double[:, ::1],
    margin: cython.double,
    slop: cython.double,
    contacts: cython.double[:, ::1],
) -> cython.int:
    """All contacts with separation <= margin, sorted by (body_a, body_b, x, z).

    Returns the number found, which may exceed the buffer length (the excess
    is dropped and flagged by the caller).
    """
    ns: cython.int = shape_body.shape[0]
    s: cython.int
    t: cython.int
    v: cython.int
    b: cython.int
    c: cython.double
    sn: cython.double
    x: cython.double
    z: cython.double
    lx: cython.double
    lz: cython.double
    for s in range(ns):
        b = shape_body[s]
        c = cos(pose[b, 2])
        sn = sin(pose[b, 2])
        x = pose[b, 0]
        z = pose[b, 1]
        aabb[s, 0] = 1e300
        aabb[s, 1] = 1e300
        aabb[s, 2] = -1e300
        aabb[s, 3] = -1e300
        for v in range(shape_start[s], shape_start[s] + shape_count[s]):
            lx = verts[v, 0]
            lz = verts[v, 1]
            wv[v, 0] = x + c * lx - sn * lz
            wv[v, 1] = z + sn * lx + c * lz
            lx = normals[v, 0]
            lz = normals[v, 1]
            wn[v, 0] = c * lx - sn * lz
            wn[v, 1] = sn * lx + c * lz
            if wv[v, 0] < aabb[s, 0]:
                aabb[s, 0] = wv[v, 0]
            if wv[v, 1] < aabb[s, 1]:
                aabb[s, 1] = wv[v, 1]
            if wv[v, 0] > aabb[s, 2]:
                aabb[s, 2] = wv[v, 0]
            if wv[v, 1] > aabb[s, 3]:
                aabb[s, 3] = wv[v, 1]
    k: cython.int = 0
    ba: cython.int
    bb: cython.int
    for s in range(ns):
        ba = shape_body[s]
        for t in range(s + 1, ns):
            bb = shape_body[t]
            if ba == bb or (dyn[ba] == 0 and dyn[bb] == 0):
                continue
            if (
                aabb[s, 0] > aabb[t, 2] + margin
                or aabb[t, 0] > aabb[s, 2] + margin
                or aabb[s, 1] > aabb[t, 3] + margin
                or aabb[t, 1] > aabb[s, 3] + margin
            ):
                continue
            k = _collide_polys(
                wv, wn, shape_start[s], shape_count[s], shape_start[t], shape_count[t],
                ba, bb, margin, slop, contacts, k,
            )
    # insertion sort of the stored rows
    kk: cython.int = k if k < contacts.shape[0] else contacts.shape[0]
    i: cython.int
    j: cython.int
    f: cython.int
    tmp: cython.double
    for i in range(1, kk):
        j = i
        while j > 0 and _contact_less(contacts, j, j - 1):
            for f in range(7):
                tmp = contacts[j, f]
                contacts[j, f] = contacts[j - 1, f]
                contacts[j - 1, f] = tmp
            j -= 1
    return k


def collide(pose, dyn, shape_body, shape_start, shape_count, verts, normals, wv, wn, aabb, margin, slop, contacts) -> int:
    """Python entry point for contact detection (fields 0..6 of each row)."""
    return _collide_all(
        pose, dyn, shape_body, shape_start, shape_count, verts, normals, wv, wn, aabb, margin, slop, contacts
    )


# ------------------------------------------------------------------ solver


@cython.cfunc
@cython.nogil
@cython.exceptval(check=False)
def _kgen(W: cython.double[:, ::1], i: cython.int, rx: cython.double, rz: cython.double,
          dx: cython.double, dz: cython.double) -> cython.double:
    """g^T W_i g for the generalized direction of a unit push (dx, dz) at offset r."""
    g0: cython.double = dx
    g1: cython.double = dz
    g2: cython.double = rx * dz - rz * dx
    return (
        g0 * (W[i, 0] * g0 + W[i, 1] * g1 + W[i, 2] * g2)
        + g1 * (W[i, 3] * g0 + W[i, 4] * g1 + W[i, 5] * g2)
        + g2 * (W[i, 6] * g0 + W[i, 7] * g1 + W[i, 8] * g2)
    )


@cython.cfunc
@cython.nogil
@cython.exceptval(check=False)
def _apply(vel: cython.double[:, ::1], W: cython.double[:, ::1], i: cython.int,
           rx: cython.double, rz: cython.double, px: cython.double, pz: cython.double,
           tip: cython.int, sc: cython.double[::1]) -> cython.void:
    g0: cython.double = px
    g1: cython.double = pz
    g2: cython.double = rx * pz - rz * px
    vel[i, 0] += W[i, 0] * g0 + W[i, 1] * g1 + W[i, 2] * g2
    vel[i, 1] += W[i, 3] * g0 + W[i, 4] * g1 + W[i, 5] * g2
    vel[i, 2] += W[i, 6] * g0 + W[i, 7] * g1 + W[i, 8] * g2
    if i == tip:
        sc[K_G] += g0
        sc[K_G + 1] += g1
        sc[K_G + 2] += g2


@cython.cfunc
@cython.nogil
@cython.exceptval(check=False)
def _apply_free(pv: cython.double[:, ::1], W: cython.double[:, ::1], i: cython.int,
                rx: cython.double, rz: cython.double, px: cython.double, pz: cython.double) -> cython.void:
    g2: cython.double = rx * pz - rz * px
    pv[i, 0] += W[i, 0] * px + W[i, 1] * pz + W[i, 2] * g2
    pv[i, 1] += W[i, 3] * px + W[i, 4] * pz + W[i, 5] * g2
    pv[i, 2] += W[i, 6] * px + W[i, 7] * pz + W[i, 8] * g2


@cython.cfunc
@cython.nogil
@cython.exceptval(check=False)
def _free_energy(pose: cython.double[:, ::1], vel: cython.double[:, ::1], W: cython.double[:, ::1],
                 dyn: cython.int[::1], tip: cython.int, gx: cython.double, gz: cython.double) -> cython.double:
    """Kinetic plus gravitational energy of the free bodies (the arm tip excluded)."""
    i: cython.int
    m: cython.double
    e: cython.double = 0.0
    for i in range(pose.shape[0]):
        if dyn[i] and i != tip:
            m = 1.0 / W[i, 0]
            e += 0.5 * m * (vel[i, 0] * vel[i, 0] + vel[i, 1] * vel[i, 1]) + 0.5 * vel[i, 2] * vel[i, 2] / W[i, 8]
            e -= m * (gx * pose[i, 0] + gz * pose[i, 1])
    return e


@cython.cfunc
@cython.nogil
@cython.exceptval(check=False)
def _recover(
    pose: cython.double[:, ::1],
    vel: cython.double[:, ::1],
    pv: cython.double[:, ::1],
    W: cython.double[:, ::1],
    dyn: cython.int[::1],
    tip: cython.int,
    contacts: cython.double[:, ::1],
    ncon: cython.int,
    gx: cython.double,
    gz: cython.double,
    dt: cython.double,
    iters: cython.int,
    beta: cython.double,
    slop: cython.double,
    tol: cython.double,
    forced: cython.int,
    e0: cython.double,
) -> cython.void:
    """Split-impulse penetration recovery on free bodies.

    Pseudo-velocities push overlapping bodies apart and move positions only,
    so no kinetic energy is injected. When nothing drives the world, the
    potential energy the correction adds is capped at the energy the tick
    dissipated, which keeps unforced motion passive.
    """
    i: cython.int
    c: cython.int
    it: cython.int
    a: cython.int
    b: cython.int
    npen: cython.int = 0
    vn: cython.double
    s: cython.double
    lam: cython.double
    old: cython.double
    delta: cython.double
    dpe: cython.double
    budget: cython.double
    scale: cython.double = 1.0
    for i in range(pose.shape[0]):
        pv[i, 0] = 0.0
        pv[i, 1] = 0.0
        pv[i, 2] = 0.0
    for c in range(ncon):
        a = cython.cast(cython.int, contacts[c, C_A])
        b = cython.cast(cython.int, contacts[c, C_B])
        vn = (
            ((vel[b, 0] - vel[b, 2] * contacts[c, C_RBZ]) - (vel[a, 0] - vel[a, 2] * contacts[c, C_RAZ])) * contacts[c, C_NX]
            + ((vel[b, 1] + vel[b, 2] * contacts[c, C_RBX]) - (vel[a, 1] + vel[a, 2] * contacts[c, C_RAX])) * contacts[c, C_NZ]
        )
        s = contacts[c, C_SEP] + dt * vn
        if -s > slop and contacts[c, C_MP] > 0.0:
            contacts[c, C_PT] = beta / dt * (-s - slop)
            npen += 1
        else:
            contacts[c, C_PT] = 0.0
    if npen == 0:
        return
    for it in range(iters):
        delta = 0.0
        for c in range(ncon):
            if contacts[c, C_MP] == 0.0:
                continue
            a = cython.cast(cython.int, contacts[c, C_A])
            b = cython.cast(cython.int, contacts[c, C_B])
            vn = (
                ((pv[b, 0] - pv[b, 2] * contacts[c, C_RBZ]) - (pv[a, 0] - pv[a, 2] * contacts[c, C_RAZ])) * contacts[c, C_NX]
                + ((pv[b, 1] + pv[b, 2] * contacts[c, C_RBX]) - (pv[a, 1] + pv[a, 2] * contacts[c, C_RAX])) * contacts[c, C_NZ]
            )
            lam = -contacts[c, C_MP] * (vn - contacts[c, C_PT])
            old = contacts[c, C_LP]
            lam = old + lam
            if lam < 0.0:
                lam = 0.0
            contacts[c, C_LP] = lam
            lam = lam - old
            if lam > delta or -lam > delta:
                delta = lam if lam > 0.0 else -lam
            if b != tip:
                _apply_free(pv, W, b, contacts[c, C_RBX], contacts[c, C_RBZ], lam * contacts[c, C_NX], lam * contacts[c, C_NZ])
            if a != tip:
                _apply_free(pv, W, a, contacts[c, C_RAX], contacts[c, C_RAZ], -lam * contacts[c, C_NX], -lam * contacts[c, C_NZ])
        if delta <= tol:
            break
    if not forced:
        dpe = 0.0
        for i in range(pose.shape[0]):
            if dyn[i] and i != tip:
                dpe -= (gx * pv[i, 0] + gz * pv[i, 1]) * dt / W[i, 0]
        if dpe > 0.0:
            budget = e0 - _free_energy(pose, vel, W, dyn, tip, gx, gz)
            if budget <= 0.0:
                return
            if budget < dpe:
                scale = budget / dpe
    for i in range(pose.shape[0]):
        if dyn[i] and i != tip:
            pose[i, 0] += dt * scale * pv[i, 0]
            pose[i, 1] += dt * scale * pv[i, 1]
            pose[i, 2] += dt * scale * pv[i, 2]


@cython.cfunc
@cython.nogil
@cython.exceptval(check=False)
def _tick(
    pose: cython.double[:, ::1],
    vel: cython.double[:, ::1],
    pvel: cython.double[:, ::1],
    W: cython.double[:, ::1],
    friction: cython.double[::1],
    dyn: cython.int[::1],
    force: cython.double[:, ::1],
    shape_body: cython.int[::1],
    shape_start: cython.int[::1],
    shape_count: cython.int[::1],
    verts: cython.double[:, ::1],
    normals: cython.double[:, ::1],
    wv: cython.double[:, ::1],
    wn: cython.double[:, ::1],
    aabb: cython.double[:, ::1],
    chain: cython.double[::1],
    q: cython.double[::1],
    qd: cython.double[::1],
    tip: cython.int,
    torque: cython.double[::1],
    params: cython.double[::1],
    contacts: cython.double[:, ::1],
    stats: cython.double[::1],
    pairs: cython.int[::1],
    sc: cython.double[::1],
) -> cython.int:
    nb: cython.int = pose.shape[0]
    gx: cython.double = params[0]
    gz: cython.double = params[1]
    dt: cython.double = params[2]
    iters: cython.int = cython.cast(cython.int, params[3])
    beta: cython.double = params[4]
    slop: cython.double = params[5]
    margin: cython.double = params[6]
    tol: cython.double = params[7]
    i: cython.int
    j: cython.int
    it: cython.int
    c: cython.int
    a: cython.int
    b: cython.int
    acc: cython.double
    det: cython.double
    phi: cython.double
    delta: cython.double
    forced: cython.int = 0
    e0: cython.double = 0.0

    # Unforced ticks must not gain energy; the recovery pass below spends at
    # most what this tick dissipated.
    for i in range(nb):
        if dyn[i] and (force[i, 0] != 0.0 or force[i, 1] != 0.0 or force[i, 2] != 0.0):
            forced = 1
    if tip >= 0 and (torque[0] != 0.0 or torque[1] != 0.0 or torque[2] != 0.0):
        forced = 1
    if not forced:
        e0 = _free_energy(pose, vel, W, dyn, tip, gx, gz)

    # arm: joint-space velocity update and the tip's generalized inverse mass
    if tip >= 0:
        phi = _chain_kin(chain, q, sc)
        _chain_mass(chain, sc, dt)
        _chain_bias(chain, qd, 1, gx, gz, sc, K_H)
        for i in range(3):
            sc[K_T + i] = (
                torque[i] - sc[K_H + i] - chain[17 + i] * qd[i]
                + sc[K_J + i] * force[tip, 0] + sc[K_J + 3 + i] * force[tip, 1] + sc[K_J + 6 + i] * force[tip, 2]
            )
        for i in range(3):
            acc = sc[K_MI + 3 * i] * sc[K_T] + sc[K_MI + 3 * i + 1] * sc[K_T + 1] + sc[K_MI + 3 * i + 2] * sc[K_T + 2]
            qd[i] += dt * acc
        # B = Minv J^T
        for i in range(3):
            for j in range(3):
                sc[K_B + 3 * i + j] = (
                    sc[K_MI + 3 * i] * sc[K_J + 3 * j]
                    + sc[K_MI + 3 * i + 1] * sc[K_J + 3 * j + 1]
                    + sc[K_MI + 3 * i + 2] * sc[K_J + 3 * j + 2]
                )
        for i in range(3):
            for j in range(3):
                W[tip, 3 * i + j] = (
                    sc[K_J + 3 * i] * sc[K_B + j]
                    + sc[K_J + 3 * i + 1] * sc[K_B + 3 + j]
                    + sc[K_J + 3 * i + 2] * sc[K_B + 6 + j]
                )
        for i in range(3):
            vel[tip, i] = sc[K_J + 3 * i] * qd[0] + sc[K_J + 3 * i + 1] * qd[1] + sc[K_J + 3 * i + 2] * qd[2]
        pose[tip, 0] = sc[K_P + 6]
        pose[tip, 1] = sc[K_P + 7]
        pose[tip, 2] = phi
        sc[K_G] = 0.0
        sc[K_G + 1] = 0.0
        sc[K_G + 2] = 0.0
        det = (
            sc[K_J] * (sc[K_J + 4] * sc[K_J + 8] - sc[K_J + 5] * sc[K_J + 7])
            - sc[K_J + 1] * (sc[K_J + 3] * sc[K_J + 8] - sc[K_J + 5] * sc[K_J + 6])
            + sc[K_J + 2] * (sc[K_J + 3] * sc[K_J + 7] - sc[K_J + 4] * sc[K_J + 6])
        )
        if det < 0.0:
            det = -det
        if det < stats[S_MINDET]:
            stats[S_MINDET] = det

    # free bodies: gravity and applied wrenches
    for i in range(nb):
        if dyn[i] and i != tip:
            vel[i, 0] += dt * (gx + W[i, 0] * force[i, 0])
            vel[i, 1] += dt * (gz + W[i, 4] * force[i, 1])
            vel[i, 2] += dt * (W[i, 8] * force[i, 2])

    nfound: cython.int = _collide_all(
        pose, dyn, shape_body, shape_start, shape_count, verts, normals, wv, wn, aabb, margin, slop, contacts
    )
    ncon: cython.int = nfound
    if ncon > contacts.shape[0]:
        ncon = contacts.shape[0]
        stats[S_OVERFLOW] += 1.0
    stats[S_NCONT] = ncon

    rax: cython.double
    raz: cython.double
    rbx: cython.double
    rbz: cython.double
    nx: cython.double
    nz: cython.double
    tx: cython.double
    tz: cython.double
    kk: cython.double
    sep: cython.double
    for c in range(ncon):
        a = cython.cast(cython.int, contacts[c, C_A])
        b = cython.cast(cython.int, contacts[c, C_B])
        rax = contacts[c, C_PX] - pose[a, 0]
        raz = contacts[c, C_PZ] - pose[a, 1]
        rbx = contacts[c, C_PX] - pose[b, 0]
        rbz = contacts[c, C_PZ] - pose[b, 1]
        contacts[c, C_RAX] = rax
        contacts[c, C_RAZ] = raz
        contacts[c, C_RBX] = rbx
        contacts[c, C_RBZ] = rbz
        nx = contacts[c, C_NX]
        nz = contacts[c, C_NZ]
        tx = -nz
        tz = nx
        kk = _kgen(W, a, rax, raz, nx, nz) + _kgen(W, b, rbx, rbz, nx, nz)
        contacts[c, C_MN] = 1.0 / kk if kk > 1e-12 else 0.0
        kk = _kgen(W, a, rax, raz, tx, tz) + _kgen(W, b, rbx, rbz, tx, tz)
        contacts[c, C_MT] = 1.0 / kk if kk > 1e-12 else 0.0
        contacts[c, C_MU] = friction[a] if friction[a] > friction[b] else friction[b]
        kk = 0.0
        if a != tip:
            kk += _kgen(W, a, rax, raz, nx, nz)
        if b != tip:
            kk += _kgen(W, b, rbx, rbz, nx, nz)
        contacts[c, C_MP] = 1.0 / kk if kk > 1e-12 else 0.0
        contacts[c, C_LP] = 0.0
        # speculative: a gap may close this tick but not overshoot; overlap is
        # left to the position pass so the velocity solve stays dissipative
        sep = contacts[c, C_SEP]
        contacts[c, C_TGT] = -sep / dt if sep > 0.0 else 0.0
        if -sep > stats[S_MAXPEN]:
            stats[S_MAXPEN] = -sep

    vrx: cython.double
    vrz: cython.double
    vn: cython.double
    lam: cython.double
    old: cython.double
    lim: cython.double
    for it in range(iters):
        delta = 0.0
        for c in range(ncon):
            a = cython.cast(cython.int, contacts[c, C_A])
            b = cython.cast(cython.int, contacts[c, C_B])
            rax = contacts[c, C_RAX]
            raz = contacts[c, C_RAZ]
            rbx = contacts[c, C_RBX]
            rbz = contacts[c, C_RBZ]
            tx = -contacts[c, C_NZ]
            tz = contacts[c, C_NX]
            vrx = (vel[b, 0] - vel[b, 2] * rbz) - (vel[a, 0] - vel[a, 2] * raz)
            vrz = (vel[b, 1] + vel[b, 2] * rbx) - (vel[a, 1] + vel[a, 2] * rax)
            lam = -contacts[c, C_MT] * (vrx * tx + vrz * tz)
            lim = contacts[c, C_MU] * contacts[c, C_LN]
            old = contacts[c, C_LT]
            lam = old + lam
            if lam > lim:
                lam = lim
            elif lam < -lim:
                lam = -lim
            contacts[c, C_LT] = lam
            lam = lam - old
            if lam > delta or -lam > delta:
                delta = lam if lam > 0.0 else -lam
            _apply(vel, W, b, rbx, rbz, lam * tx, lam * tz, tip, sc)
            _apply(vel, W, a, rax, raz, -lam * tx, -lam * tz, tip, sc)
        for c in range(ncon):
            a = cython.cast(cython.int, contacts[c, C_A])
            b = cython.cast(cython.int, contacts[c, C_B])
            rax = contacts[c, C_RAX]
            raz = contacts[c, C_RAZ]
            rbx = contacts[c, C_RBX]
            rbz = contacts[c, C_RBZ]
            nx = contacts[c, C_NX]
            nz = contacts[c, C_NZ]
            vrx = (vel[b, 0] - vel[b, 2] * rbz) - (vel[a, 0] - vel[a, 2] * raz)
            vrz = (vel[b, 1] + vel[b, 2] * rbx) - (vel[a, 1] + vel[a, 2] * rax)
            vn = vrx * nx + vrz * nz
            lam = -contacts[c, C_MN] * (vn - contacts[c, C_TGT])
            old = contacts[c, C_LN]
            lam = old + lam
            if lam < 0.0:
                lam = 0.0
            contacts[c, C_LN] = lam
            lam = lam - old
            if lam > delta or -lam > delta:
                delta = lam if lam > 0.0 else -lam
            _apply(vel, W, b, rbx, rbz, lam * nx, lam * nz, tip, sc)
            _apply(vel, W, a, rax, raz, -lam * nx, -lam * nz, tip, sc)
        if delta <= tol:
            break

    # final projection onto the friction cone of the converged normal impulse
    for c in range(ncon):
        lim = contacts[c, C_MU] * contacts[c, C_LN]
        old = contacts[c, C_LT]
        lam = old
        if lam > lim:
            lam = lim
        elif lam < -lim:
            lam = -lim
        if lam != old:
            a = cython.cast(cython.int, contacts[c, C_A])
            b = cython.cast(cython.int, contacts[c, C_B])
            tx = -contacts[c, C_NZ]
            tz = contacts[c, C_NX]
            contacts[c, C_LT] = lam
            lam = lam - old
            _apply(vel, W, b, contacts[c, C_RBX], contacts[c, C_RBZ], lam * tx, lam * tz, tip, sc)
            _apply(vel, W, a, contacts[c, C_RAX], contacts[c, C_RAZ], -lam * tx, -lam * tz, tip, sc)
        old = contacts[c, C_LT]
        if old < 0.0:
            old = -old
        if old - lim > stats[S_CONE]:
            stats[S_CONE] = old - lim
        if contacts[c, C_LN] < stats[S_MINLN]:
            stats[S_MINLN] = contacts[c, C_LN]
        if contacts[c, C_LN] > 0.0:
            a = cython.cast(cython.int, contacts[c, C_A])
            b = cython.cast(cython.int, contacts[c, C_B])
            pairs[a * nb + b] = 1

    # integrate positions
    for i in range(nb):
        if dyn[i] and i != tip:
            pose[i, 0] += dt * vel[i, 0]
            pose[i, 1] += dt * vel[i, 1]
            pose[i, 2] += dt * vel[i, 2]
    if tip >= 0:
        for i in range(3):
            qd[i] += sc[K_B + 3 * i] * sc[K_G] + sc[K_B + 3 * i + 1] * sc[K_G + 1] + sc[K_B + 3 * i + 2] * sc[K_G + 2]
        for i in range(3):
            q[i] += dt * qd[i]
        phi = _chain_kin(chain, q, sc)
        pose[tip, 0] = sc[K_P + 6]
        pose[tip, 1] = sc[K_P + 7]
        pose[tip, 2] = phi
        for i in range(3):
            vel[tip, i] = sc[K_J + 3 * i] * qd[0] + sc[K_J + 3 * i + 1] * qd[1] + sc[K_J + 3 * i + 2] * qd[2]
        for i in range(3):
            stats[S_TIPX + i] += sc[K_G + i]
            if not (isfinite(q[i]) and isfinite(qd[i])):
                return _NONFINITE
    _recover(pose, vel, pvel, W, dyn, tip, contacts, ncon, gx, gz, dt, iters, beta, slop, tol, forced, e0)
    for i in range(nb):
        if dyn[i]:
            for j in range(3):
                if not (isfinite(pose[i, j]) and isfinite(vel[i, j])):
                    return _NONFINITE
    stats[S_TICKS] += 1.0
    return _OK


def step(pose, vel, pvel, W, friction, dyn, force, shape_body, shape_start, shape_count, verts, normals,
         wv, wn, aabb, chain, q, qd, tip, torque, params, contacts, stats, pairs, sc, ticks) -> int:
    """Advance ``ticks`` physics ticks in place with constant wrenches and joint torques."""
    pose_v: cython.double[:, ::1] = pose
    vel_v: cython.double[:, ::1] = vel
    pvel_v: cython.double[:, ::1] = pvel
    W_v: cython.double[:, ::1] = W
    friction_v: cython.double[::1] = friction
    dyn_v: cython.int[::1] = dyn
    force_v: cython.double[:, ::1] = force
    sb_v: cython.int[::1] = shape_body
    ss_v: cython.int[::1] = shape_start
    sn_v: cython.int[::1] = shape_count
    verts_v: cython.double[:, ::1] = verts
    normals_v: cython.double[:, ::1] = normals
    wv_v: cython.double[:, ::1] = wv
    wn_v: cython.double[:, ::1] = wn
    aabb_v: cython.double[:, ::1] = aabb
    chain_v: cython.double[::1] = chain
    q_v: cython.double[::1] = q
    qd_v: cython.double[::1] = qd
    torque_v: cython.double[::1] = torque
    params_v: cython.double[::1] = params
    contacts_v: cython.double[:, ::1] = contacts
    stats_v: cython.double[::1] = stats
    pairs_v: cython.int[::1] = pairs
    sc_v: cython.double[::1] = sc
    n: cython.int = ticks
    t: cython.int
    status: cython.int = _OK
    tip_i: cython.int = tip
    with cython.nogil:
        for t in range(n):
            status = _tick(pose_v, vel_v, pvel_v, W_v, friction_v, dyn_v, force_v, sb_v, ss_v, sn_v,
                           verts_v, normals_v, wv_v, wn_v, aabb_v, chain_v, q_v, qd_v, tip_i,
                           torque_v, params_v, contacts_v, stats_v, pairs_v, sc_v)
            if status != _OK:
                break
    return status


# ------------------------------------------------------- operational space


@cython.cfunc
@cython.nogil
@cython.exceptval(check=False)
def _wrap(a: cython.double) -> cython.double:
    return atan2(sin(a), cos(a))


@cython.cfunc
@cython.nogil
@cython.exceptval(check=False)
def _clamp(v: cython.double, lim: cython.double) -> cython.double:
    if v > lim:
        return lim
    if v < -lim:
        return -lim
    return v


def run_osc(pose, vel, pvel, W, friction, dyn, force, shape_body, shape_start, shape_count, verts, normals,
            wv, wn, aabb, chain, q, qd, tip, torque, params, contacts, stats, pairs, sc,
            desired, gains, n_ctrl, ticks_per_ctrl) -> int:
    """Closed-loop pose regulation of the arm tip.

    Every control period the task-space PD wrench ``kp*err - kd*v`` is clamped,
    mapped through J^T and summed with the gravity torques, then held for
    ``ticks_per_ctrl`` physics ticks. ``gains`` holds kp (x, z, theta),
    kd (x, z, theta) and the clamp (fx, fz, tau). The per-period mean contact
    force on the tip is tracked in ``stats[7:10]``.
    """
    pose_v: cython.double[:, ::1] = pose
    vel_v: cython.double[:, ::1] = vel
    pvel_v: cython.double[:, ::1] = pvel
    W_v: cython.double[:, ::1] = W
    friction_v: cython.double[::1] = friction
    dyn_v: cython.int[::1] = dyn
    force_v: cython.double[:, ::1] = force
    sb_v: cython.int[::1] = shape_body
    ss_v: cython.int[::1] = shape_start
    sn_v: cython.int[::1] = shape_count
    verts_v: cython.double[:, ::1] = verts
    normals_v: cython.double[:, ::1] = normals
    wv_v: cython.double[:, ::1] = wv
    wn_v: cython.double[:, ::1] = wn
    aabb_v: cython.double[:, ::1] = aabb
    chain_v: cython.double[::1] = chain
    q_v: cython.double[::1] = q
    qd_v: cython.double[::1] = qd
    torque_v: cython.double[::1] = torque
    params_v: cython.double[::1] = params
    contacts_v: cython.double[:, ::1] = contacts
    stats_v: cython.double[::1] = stats
    pairs_v: cython.int[::1] = pairs
    sc_v: cython.double[::1] = sc
    des: cython.double[::1] = desired
    gn: cython.double[::1] = gains
    nctl: cython.int = n_ctrl
    tpc: cython.int = ticks_per_ctrl
    tip_i: cython.int = tip
    status: cython.int = _OK
    k: cython.int
    t: cython.int
    i: cython.int
    phi: cython.double
    e0: cython.double
    e1: cython.double
    e2: cython.double
    v0: cython.double
    v1: cython.double
    v2: cython.double
    f0: cython.double
    f1: cython.double
    f2: cython.double
    period: cython.double = tpc * params_v[2]
    with cython.nogil:
        for k in range(nctl):
            phi = _chain_kin(chain_v, q_v, sc_v)
            v0 = sc_v[K_J] * qd_v[0] + sc_v[K_J + 1] * qd_v[1] + sc_v[K_J + 2] * qd_v[2]
            v1 = sc_v[K_J + 3] * qd_v[0] + sc_v[K_J + 4] * qd_v[1] + sc_v[K_J + 5] * qd_v[2]
            v2 = sc_v[K_J + 6] * qd_v[0] + sc_v[K_J + 7] * qd_v[1] + sc_v[K_J + 8] * qd_v[2]
            e0 = des[0] - sc_v[K_P + 6]
            e1 = des[1] - sc_v[K_P + 7]
            e2 = _wrap(des[2] - phi)
            f0 = _clamp(gn[0] * e0 - gn[3] * v0, gn[6])
            f1 = _clamp(gn[1] * e1 - gn[4] * v1, gn[7])
            f2 = _clamp(gn[2] * e2 - gn[5] * v2, gn[8])
            _chain_bias(chain_v, qd_v, 0, params_v[0], params_v[1], sc_v, K_GC)
            for i in range(3):
                torque_v[i] = sc_v[K_J + i] * f0 + sc_v[K_J + 3 + i] * f1 + sc_v[K_J + 6 + i] * f2 + sc_v[K_GC + i]
            stats_v[S_TIPX] = 0.0
            stats_v[S_TIPX + 1] = 0.0
            stats_v[S_TIPX + 2] = 0.0
            for t in range(tpc):
                status = _tick(pose_v, vel_v, pvel_v, W_v, friction_v, dyn_v, force_v, sb_v, ss_v, sn_v,
                               verts_v, normals_v, wv_v, wn_v, aabb_v, chain_v, q_v, qd_v, tip_i,
                               torque_v, params_v, contacts_v, stats_v, pairs_v, sc_v)
                if status != _OK:
                    break
            if status != _OK:
                break
            for i in range(3):
                v0 = stats_v[S_TIPX + i] / period
                if v0 < 0.0:
                    v0 = -v0
                if v0 > stats_v[S_MAXFX + i]:
                    stats_v[S_MAXFX + i] = v0
                stats_v[S_MEANF + i] += stats_v[S_TIPX + i]
        if status == _OK and nctl > 0:
            for i in range(3):
                v0 = stats_v[S_MEANF + i] / (nctl * period)
                stats_v[S_MEANF + i] = -v0 if v0 < 0.0 else v0
    return status


def compiled() -> bool:
    return cython.compiled
