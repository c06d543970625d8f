"""Interface evolution by configurational-force descent at fixed area.

Each step solves elasticity on the current level set, evaluates the normal
driving force on the interface, removes its mean with a Lagrange multiplier
so the enclosed area is conserved to leading order, extends the speed off
the interface, advects the level set, and re-solves. Steps that raise the
total energy are rejected with the time step halved. A constant shift of
phi corrects the residual area drift after every accepted move.
"""
import numpy as np

from . import levelset
from . import physics
from . import system


class EvolutionError(RuntimeError):
    pass


class EvolutionConfig:
    """Knobs of the descent loop."""

    __slots__ = ("cfl", "reinit_period", "max_steps", "tol_v", "max_rejects",
                 "area_tol", "energy_tol", "band", "window", "smooth_passes")

    def __init__(self, cfl=0.4, reinit_period=5, max_steps=400, tol_v=0.5,
                 max_rejects=5, area_tol=0.01, energy_tol=1e-3, band=8,
                 window=5, smooth_passes=3):
        if not 0.0 < cfl <= 1.0:
            raise EvolutionError("cfl must lie in (0, 1]")
        if reinit_period < 1 or max_steps < 1 or max_rejects < 0:
            raise EvolutionError("counts must be positive")
        self.cfl = float(cfl)
        self.reinit_period = int(reinit_period)
        self.max_steps = int(max_steps)
        self.tol_v = float(tol_v)
        self.max_rejects = int(max_rejects)
        self.area_tol = float(area_tol)
        self.energy_tol = float(energy_tol)
        self.band = float(band)
        self.window = int(window)
        self.smooth_passes = int(smooth_passes)


class EvolutionState:
    """One accepted point of the descent trajectory."""

    __slots__ = ("step", "time", "field", "solution", "area", "area0",
                 "energy", "pi0", "energies", "max_speeds", "v_ref")

    def __init__(self, step, time, field, solution, area, area0, energy,
                 pi0, energies, max_speeds, v_ref=0.0):
        self.step = step
        self.time = time
        self.field = field
        self.solution = solution
        self.area = area
        self.area0 = area0
        self.energy = energy
        self.pi0 = pi0
        self.energies = energies
        self.max_speeds = max_speeds
        self.v_ref = v_ref


def enclosed_area(contours):
    """Signed area of all closed contours (positive = particle inside)."""
    return float(sum(c.signed_area() for c in contours if c.closed))


def interface_length(segments):
    return float(sum(seg.length for seg in segments))


def lagrange_multiplier(segments, speeds):
    """Mean removal making the net interface flux vanish exactly."""
    total = 0.0
    flux = 0.0
    for seg, v in zip(segments, speeds):
        total += seg.length
        flux += seg.length * float(np.mean(v))
    if total <= 0.0:
        raise EvolutionError("interface has zero total length")
    return -flux / total


def _vertex_speeds(contour, seg_speeds, seg_lengths):
    """Length-weighted vertex averages of per-segment speeds."""
    n = len(contour.verts)
    v = np.asarray(seg_speeds, dtype=float)
    w = np.asarray(seg_lengths, dtype=float)
    if contour.closed:
        prev_v, prev_w = np.roll(v, 1), np.roll(w, 1)
        return (prev_v * prev_w + v * w) / (prev_w + w)
    out = np.empty(n)
    out[0] = v[0]
    out[-1] = v[-1]
    if n > 2:
        out[1:-1] = (v[:-1] * w[:-1] + v[1:] * w[1:]) / (w[:-1] + w[1:])
    return out


def _smooth_closed(v, passes):
    """Symmetric 3-point speed mollifier with wraparound; keeps constants."""
    for _ in range(passes):
        v = 0.25 * np.roll(v, 1) + 0.5 * v + 0.25 * np.roll(v, -1)
    return v


def interface_speeds(solution, gamma0, smooth_passes=3):
    """Per-segment mean normal speed with the area-conserving shift.

    Segment speeds are mollified along each closed contour before the shift:
    the piecewise-constant strain jumps carry grid-scale noise that would
    otherwise roughen the interface faster than the weak curvature term can
    relax it. Returns (segment speeds, lambda, max |v_n|); the discrete flux
    sum(v * length) vanishes identically after the shift.
    """
    raw = physics.configurational_speed(solution, gamma0)
    v0 = np.array([float(np.mean(v)) for v in raw])
    k = 0
    for contour in solution.contours:
        ns = contour.n_segments
        if contour.closed and smooth_passes > 0 and ns > 2:
            v0[k:k + ns] = _smooth_closed(v0[k:k + ns], smooth_passes)
        k += ns
    lam = lagrange_multiplier(solution.segments, v0)
    seg_v = v0 + lam
    vmax = float(np.abs(seg_v).max()) if len(seg_v) else 0.0
    return seg_v, lam, vmax


def _field_area(mesh, phi):
    field = levelset.LevelSetField(mesh, phi)
    try:
        contours = levelset.zero_contours(field)
    except levelset.LevelSetError:
        return None, None
    return enclosed_area(contours), field


def correct_area(field, target, tol=1e-12, max_iter=40):
    """Shift phi by the constant restoring the enclosed area to target."""
    mesh = field.mesh
    area0, _ = _field_area(mesh, field.phi)
    if area0 is None:
        raise EvolutionError("particle vanished during area correction")
    if abs(area0 - target) <= tol * max(abs(target), 1.0):
        return field, area0
    # dA/d(delta) ~ -perimeter for a signed-distance phi
    contours = levelset.zero_contours(field)
    perim = sum(np.sum(np.hypot(*(np.diff(np.vstack([c.verts, c.verts[:1]]
                if c.closed else c.verts), axis=0).T))) for c in contours)
    d0, a0 = 0.0, area0
    d1 = (area0 - target) / max(perim, 1e-300)
    for _ in range(max_iter):
        a1, f1 = _field_area(mesh, field.phi + d1)
        if a1 is None:
            d1 = 0.5 * (d0 + d1)
            continue
        if abs(a1 - target) <= tol * max(abs(target), 1.0):
            return f1, a1
        if a1 == a0:
            break
        d0, a0, d1 = d1, a1, d1 + (target - a1) * (d1 - d0) / (a1 - a0)
    a1, f1 = _field_area(mesh, field.phi + d1)
    if a1 is None:
        raise EvolutionError("particle vanished during area correction")
    return f1, a1


def _solve(mesh, field, materials):
    return system.solve_state(mesh, field, materials, dirichlet=np.zeros(2))


def evolve_step(state, config):
    """Advance one accepted step; raises after repeated energy increases."""
    sol = state.solution
    mesh = sol.mesh
    materials = sol.materials
    gamma0 = materials.interface.gamma0

    seg_v, lam, vmax = interface_speeds(sol, gamma0, config.smooth_passes)
    if vmax == 0.0:
        return EvolutionState(state.step + 1, state.time, state.field, sol,
                              state.area, state.area0, state.energy,
                              state.pi0, state.energies + [state.energy],
                              state.max_speeds + [0.0], state.v_ref)
    lengths = [seg.length for seg in sol.segments]
    speed_pairs = []
    k = 0
    for contour in sol.contours:
        ns = contour.n_segments
        speed_pairs.append((contour, _vertex_speeds(
            contour, seg_v[k:k + ns], lengths[k:k + ns])))
        k += ns
    vel = levelset.extend_velocity(state.field, speed_pairs, band=config.band)
    vext = float(np.abs(vel.v).max())
    # the CFL scale is frozen at the first driven step: once the shape has
    # converged the residual speeds are discretization noise, and rescaling
    # dt to them would keep moving the interface a fixed fraction of h per
    # step no matter how small the forces are
    v_ref = vext if state.v_ref == 0.0 else state.v_ref
    dt = config.cfl * mesh.h / max(vext, v_ref, 1e-300)
    # curvature feedback makes the explicit update stiff: forward Euler
    # flip-flops at the grid scale once dt * gamma / h^2 grows past O(1)
    if gamma0 > 0.0:
        dt = min(dt, 2.0 * mesh.h ** 2 / gamma0)

    last = None
    for attempt in range(config.max_rejects + 1):
        try:
            moved = levelset.advect(state.field, vel, dt, cfl=config.cfl * (1 + 1e-9))
            if (state.step + 1) % config.reinit_period == 0:
                moved = levelset.reinitialize(moved)
            moved, area = correct_area(moved, state.area0)
            new_sol = _solve(mesh, moved, materials)
        except (levelset.LevelSetError, EvolutionError) as err:
            last = f"step geometry failed: {err}"
            dt *= 0.5
            continue
        pi_new = physics.total_energy(new_sol).total
        if pi_new <= state.energy + config.energy_tol * abs(state.pi0):
            drift = abs(area - state.area0) / state.area0
            if drift > config.area_tol:
                raise EvolutionError(
                    f"area drift {drift:.3e} exceeds {config.area_tol:g} at step {state.step + 1}")
            return EvolutionState(state.step + 1, state.time + dt, moved,
                                  new_sol, area, state.area0, pi_new,
                                  state.pi0,
                                  state.energies + [pi_new],
                                  state.max_speeds + [vmax], v_ref)
        last = (f"energy rose from {state.energy:.9e} to {pi_new:.9e} "
                f"at dt={dt:g}")
        dt *= 0.5
    raise EvolutionError(
        f"step {state.step + 1} rejected {config.max_rejects + 1} times; last: {last}")


def detect_equilibrium(state, config):
    """Speed residual and energy stagnation over the recent window."""
    if state.step < 2 or len(state.energies) < config.window + 1:
        return False
    r0 = np.sqrt(state.area0 / np.pi)
    gamma0 = state.solution.materials.interface.gamma0
    scale = gamma0 / r0
    if state.max_speeds[-1] > config.tol_v * scale:
        return False
    # compare window endpoints: reinitialization makes Pi cycle with the
    # reinit period at the fixed point, so consecutive diffs never settle
    recent = state.energies[-(config.window + 1):]
    return abs(recent[-1] - recent[0]) <= 1e-5 * abs(state.energy)


def shape_metrics(field, n_theta=720):
    """Area, perimeter, radial Fourier content, and curvature range.

    Metrics describe the largest closed contour; r(theta) is measured about
    the polygon centroid and resampled uniformly, a_k = |integral of
    r e^{-ik theta}| / integral of r. Curvature comes from the level-set
    lattice sampled at segment midpoints. d4 is the worst relative mismatch
    between r(theta) and r(theta + pi/2).
    """
    contours = levelset.zero_contours(field)
    closed = [c for c in contours if c.closed]
    if not closed:
        raise EvolutionError("shape metrics need a closed contour")
    main = max(closed, key=lambda c: abs(c.signed_area()))
    verts = main.verts
    area = main.signed_area()
    a, b = main.segment_endpoints()
    seg_len = np.hypot(*(b - a).T)
    perimeter = float(seg_len.sum())
    cross = a[:, 0] * b[:, 1] - b[:, 0] * a[:, 1]
    cx = float(np.sum((a[:, 0] + b[:, 0]) * cross) / (6.0 * area))
    cy = float(np.sum((a[:, 1] + b[:, 1]) * cross) / (6.0 * area))

    rel = verts - [cx, cy]
    theta = np.arctan2(rel[:, 1], rel[:, 0])
    r = np.hypot(rel[:, 0], rel[:, 1])
    order = np.argsort(theta)
    theta_s = theta[order]
    r_s = r[order]
    tgrid = np.linspace(-np.pi, np.pi, n_theta, endpoint=False)
    tpad = np.concatenate([theta_s[-1:] - 2 * np.pi, theta_s, theta_s[:1] + 2 * np.pi])
    rpad = np.concatenate([r_s[-1:], r_s, r_s[:1]])
    rg = np.interp(tgrid, tpad, rpad)

    denom = float(np.sum(rg)) * (2 * np.pi / n_theta)
    coeffs = {}
    for kk in (2, 4):
        ck = np.sum(rg * np.exp(-1j * kk * tgrid)) * (2 * np.pi / n_theta)
        coeffs[kk] = float(np.abs(ck)) / denom

    mids = 0.5 * (a + b)
    kappa_nodes = levelset.nodal_curvature(field)
    kappa = levelset._bilinear(field.mesh, kappa_nodes, mids)
    quarter = n_theta // 4
    d4 = float(np.max(np.abs(rg - np.roll(rg, quarter))) / np.mean(rg))
    return {
        "area": float(area),
        "perimeter": perimeter,
        "centroid": (cx, cy),
        "a2": coeffs[2],
        "a4": coeffs[4],
        "kappa_min": float(np.min(kappa)),
        "kappa_max": float(np.max(kappa)),
        "d4": d4,
    }


def initial_state(mesh, field, materials):
    """Solve on the seed geometry and freeze the conserved area."""
    solution = _solve(mesh, field, materials)
    area = enclosed_area(solution.contours)
    if area <= 0.0:
        raise EvolutionError("seed level set encloses no particle")
    energy = physics.total_energy(solution).total
    return EvolutionState(0, 0.0, field, solution, area, area, energy,
                          energy, [energy], [])


def run_evolution(mesh, field, materials, config=None, on_step=None):
    """Drive the interface until equilibrium, stall, or the step budget.

    Returns (final state, history rows); each row carries the step, time,
    area, perimeter, shape coefficients, energy split, and speed residual.
    """
    if config is None:
        config = EvolutionConfig()
    state = initial_state(mesh, field, materials)
    history = []
    stall = None

    def record(st):
        metrics = shape_metrics(st.field)
        eb = physics.total_energy(st.solution)
        row = {
            "step": st.step,
            "time": st.time,
            "area": st.area,
            "perimeter": metrics["perimeter"],
            "a2": metrics["a2"],
            "a4": metrics["a4"],
            "kappa_min": metrics["kappa_min"],
            "kappa_max": metrics["kappa_max"],
            "d4": metrics["d4"],
            "energy": eb.total,
            "bulk_energy": eb.bulk,
            "interface_energy": eb.interface,
            "max_speed": st.max_speeds[-1] if st.max_speeds else 0.0,
        }
        history.append(row)
        if on_step is not None:
            on_step(st, row)

    record(state)
    while state.step < config.max_steps:
        try:
            state = evolve_step(state, config)
        except EvolutionError as err:
            stall = str(err)
            break
        record(state)
        if detect_equilibrium(state, config):
            break
    return state, history, stall
