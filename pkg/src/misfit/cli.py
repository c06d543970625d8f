"""Command-line runner: config parsing, unit reduction, and artifact output.

Configs are INI files in physical units: lengths in nm, stiffnesses in GPa,
interface constants in N/m (= GPa nm), interface energy in J/m^2 (= GPa nm).
Every run is reduced internally to units of the first particle radius R0 and
the matrix C44 (mu for isotropic input), which makes the characteristic
length L = C44 eps*^2 R0 / gamma0 the single shape-controlling parameter of
an evolution. Artifacts are written back in physical units and stamped with
a hash of the config text, so identical configs give identical files.
"""

import argparse
import configparser
import os
import re
import sys

import numpy as np

from . import evolution
from . import io as iomod
from . import levelset
from . import mesh as meshmod
from . import physics
from . import system
from . import verify

MODES = ("solve", "verify", "converge", "timing", "evolve")

SCHEMA = {
    "mesh": {"xmin", "xmax", "ymin", "ymax", "nx", "ny"},
    "particles": {"circles"},
    "materials": {"lambda", "mu", "c11", "c12", "c44", "alpha", "misfit",
                  "gamma0", "tau_s", "l_s"},
    "smoothing": {"standard", "enriched"},
    "evolution": {"cfl", "reinit_period", "max_steps", "tol_v"},
    "output": {"directory", "snapshot_period"},
    "run": {"mode"},
}

_REQUIRED = object()


class ConfigError(ValueError):
    """Config problem tagged with the file location."""

    def __init__(self, path, line, message):
        self.path = path
        self.line = int(line)
        where = f"{path}:{line}" if line else path
        super().__init__(f"{where}: {message}")


def _key_lines(text):
    """1-based line numbers of sections and keys, for error reporting."""
    lines = {}
    section = None
    for i, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith(("#", ";")):
            continue
        m = re.match(r"\[(.+?)\]", line)
        if m:
            section = m.group(1).strip()
            lines.setdefault((section,), i)
            continue
        m = re.match(r"([^=:]+?)\s*[=:]", line)
        if m and section is not None:
            lines.setdefault((section, m.group(1).strip().lower()), i)
    return lines


def _parse_circles(raw):
    circles = []
    for part in raw.split(";"):
        part = part.strip()
        if not part:
            continue
        vals = [float(tok) for tok in part.split()]
        if len(vals) != 3:
            raise ValueError("each circle needs 'cx cy r'")
        circles.append(((vals[0], vals[1]), vals[2]))
    return circles


def _parse_pair(raw):
    vals = [int(tok) for tok in raw.split()]
    if len(vals) != 2 or min(vals) < 1:
        raise ValueError("expected two positive integers 'm n'")
    return tuple(vals)


class RunConfig:
    """Validated run description in physical units plus unit scales."""

    def __init__(self, path, mode, text):
        self.path = path
        self.mode = mode
        self.text = text
        self.hash = iomod.config_hash(text)
        lines = _key_lines(text)
        cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"),
                                       interpolation=None)
        try:
            cp.read_string(text, source=path)
        except configparser.Error as err:
            raise ConfigError(path, getattr(err, "lineno", 0) or 0,
                              str(err).splitlines()[0])

        def fail(section, key, message):
            line = lines.get((section, key)) or lines.get((section,), 0)
            raise ConfigError(path, line, message)

        for sec in cp.sections():
            if sec not in SCHEMA:
                raise ConfigError(path, lines.get((sec,), 0),
                                  f"unknown section [{sec}]")
            for key in cp[sec]:
                if key not in SCHEMA[sec]:
                    raise ConfigError(path, lines.get((sec, key), 0),
                                      f"unknown key '{key}' in [{sec}]")

        def get(section, key, conv, default=_REQUIRED):
            if not cp.has_option(section, key):
                if default is _REQUIRED:
                    line = lines.get((section,), 0)
                    raise ConfigError(path, line,
                                      f"missing required key '{key}' in [{section}]")
                return default
            raw = cp.get(section, key)
            try:
                return conv(raw)
            except ValueError as err:
                fail(section, key, f"bad value {raw!r} for '{key}': {err}")

        self.xmin = get("mesh", "xmin", float)
        self.xmax = get("mesh", "xmax", float)
        self.ymin = get("mesh", "ymin", float)
        self.ymax = get("mesh", "ymax", float)
        self.nx = get("mesh", "nx", int)
        self.ny = get("mesh", "ny", int)
        if self.xmax <= self.xmin:
            fail("mesh", "xmax", "xmax must exceed xmin")
        if self.ymax <= self.ymin:
            fail("mesh", "ymax", "ymax must exceed ymin")
        if self.nx < 1 or self.ny < 1:
            fail("mesh", "nx", "element counts must be positive")

        self.circles = get("particles", "circles", _parse_circles)
        if not self.circles:
            fail("particles", "circles", "at least one particle circle is required")
        for (cx, cy), r in self.circles:
            if r <= 0.0:
                fail("particles", "circles", f"circle radius must be positive, got {r:g}")
            if not (self.xmin < cx < self.xmax and self.ymin < cy < self.ymax):
                fail("particles", "circles", f"circle center ({cx:g}, {cy:g}) lies outside the box")

        have_iso = cp.has_option("materials", "lambda") or cp.has_option("materials", "mu")
        have_cubic = any(cp.has_option("materials", k) for k in ("c11", "c12", "c44"))
        if have_iso and have_cubic:
            fail("materials", "lambda", "give either lambda/mu or c11/c12/c44, not both")
        if have_iso:
            lam = get("materials", "lambda", float)
            mu = get("materials", "mu", float)
            self.c11, self.c12, self.c44 = lam + 2.0 * mu, lam, mu
            self.isotropic = True
            if mu <= 0.0 or lam + mu <= 0.0:
                fail("materials", "mu", "isotropic moduli must satisfy mu > 0 and lambda + mu > 0")
        elif have_cubic:
            self.c11 = get("materials", "c11", float)
            self.c12 = get("materials", "c12", float)
            self.c44 = get("materials", "c44", float)
            self.isotropic = abs(self.c11 - self.c12 - 2.0 * self.c44) <= 1e-9 * self.c44
            if self.c44 <= 0.0 or self.c11 <= abs(self.c12):
                fail("materials", "c11", "cubic moduli must satisfy c44 > 0 and c11 > |c12|")
        else:
            fail("materials", "lambda", "materials need lambda/mu or c11/c12/c44")
        self.alpha = get("materials", "alpha", float, 1.0)
        if self.alpha <= 0.0:
            fail("materials", "alpha", "alpha must be positive")
        self.misfit = get("materials", "misfit", float)
        self.gamma0 = get("materials", "gamma0", float, 0.0)
        self.tau_s = get("materials", "tau_s", float, 0.0)
        self.l_s = get("materials", "l_s", float, 0.0)
        if self.gamma0 < 0.0 or self.l_s < 0.0:
            fail("materials", "gamma0", "gamma0 and l_s must be non-negative")

        self.standard = get("smoothing", "standard", _parse_pair, (2, 2))
        self.enriched = get("smoothing", "enriched", _parse_pair, (4, 4))

        self.cfl = get("evolution", "cfl", float, 0.4)
        self.reinit_period = get("evolution", "reinit_period", int, 5)
        self.max_steps = get("evolution", "max_steps", int, 400)
        self.tol_v = get("evolution", "tol_v", float, 0.5)
        if not 0.0 < self.cfl <= 1.0:
            fail("evolution", "cfl", "cfl must lie in (0, 1]")
        if self.reinit_period < 1 or self.max_steps < 1 or self.tol_v <= 0.0:
            fail("evolution", "max_steps", "evolution counts and tol_v must be positive")

        self.outdir = get("output", "directory", str, "out")
        self.snapshot_period = get("output", "snapshot_period", int, 10)
        if self.snapshot_period < 0:
            fail("output", "snapshot_period", "snapshot_period cannot be negative")

        cfg_mode = get("run", "mode", str, None)
        if cfg_mode is not None:
            cfg_mode = cfg_mode.strip().lower()
            if cfg_mode not in MODES:
                fail("run", "mode", f"unknown mode '{cfg_mode}'")
            if cfg_mode != mode:
                fail("run", "mode",
                     f"config mode '{cfg_mode}' conflicts with command-line mode '{mode}'")

        # unit scales: first circle radius and matrix c44
        self.length_scale = self.circles[0][1]
        self.stress_scale = self.c44

        if mode in ("verify", "converge", "timing"):
            if not self.isotropic:
                fail("materials", "c11",
                     f"{mode} mode compares against the isotropic oracle; "
                     "use lambda/mu or isotropic cubic constants")
            if abs(self.alpha - 1.0) > 1e-12:
                fail("materials", "alpha", f"{mode} mode needs a homogeneous bulk (alpha = 1)")
            if len(self.circles) != 1:
                fail("particles", "circles", f"{mode} mode needs exactly one circle")
            (cx, cy), _ = self.circles[0]
            if abs(cx) > 1e-12 or abs(cy) > 1e-12:
                fail("particles", "circles", f"{mode} mode needs the circle centered at the origin")
            half = (self.xmax - self.xmin) / 2.0
            if (abs(self.xmin + half) > 1e-9 * half or abs(self.ymin + half) > 1e-9 * half
                    or abs(self.ymax - half) > 1e-9 * half or self.nx != self.ny):
                fail("mesh", "xmin", f"{mode} mode needs a square box centered at the origin "
                     "with nx = ny")
        if mode == "evolve" and self.gamma0 <= 0.0:
            fail("materials", "gamma0", "evolve mode needs gamma0 > 0 to define the "
                 "characteristic length")

    # reduced (dimensionless) quantities

    def lame_reduced(self):
        lam = self.c12 / self.stress_scale
        mu = self.c44 / self.stress_scale
        return lam, mu

    def interface_reduced(self):
        s = self.stress_scale * self.length_scale
        return self.gamma0 / s, self.tau_s / s, self.l_s / s

    def characteristic_length(self):
        """L = C44^I eps*^2 R0 / gamma0 with the particle-side stiffness."""
        if self.gamma0 <= 0.0:
            return np.inf
        return (self.alpha * self.c44 * self.misfit**2 * self.length_scale
                / self.gamma0)

    def materials_reduced(self):
        c11, c12, c44 = (self.c11 / self.stress_scale, self.c12 / self.stress_scale,
                         self.c44 / self.stress_scale)
        matrix = physics.BulkMaterial.from_cubic(c11, c12, c44)
        particle = physics.BulkMaterial.from_cubic(self.alpha * c11, self.alpha * c12,
                                                   self.alpha * c44)
        g, t, l = self.interface_reduced()
        return physics.MaterialSet(matrix, particle,
                                   np.array([self.misfit, self.misfit, 0.0]),
                                   physics.InterfaceMaterial(g, t, l))

    def case_reduced(self):
        """Mesh, level set, and materials in units of R0 and matrix C44."""
        R0 = self.length_scale
        m = meshmod.build_structured_mesh(
            (self.xmin / R0, self.ymin / R0), (self.xmax / R0, self.ymax / R0),
            self.nx, self.ny)
        circles = [((cx / R0, cy / R0), r / R0) for (cx, cy), r in self.circles]
        field = levelset.init_signed_distance_circles(m, circles)
        return m, field, self.materials_reduced()

    def partitions(self):
        return system.Partitions(self.standard, self.enriched)

    def meta(self, **extra):
        meta = {
            "mode": self.mode,
            "config": os.path.basename(self.path),
            "config_hash": self.hash,
            "length_unit": "nm",
            "stress_unit": "GPa",
        }
        meta.update(extra)
        return meta


def load_config(path, mode):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as err:
        raise ConfigError(path, 0, f"cannot read config: {err.strerror or err}")
    return RunConfig(path, mode, text)


def _outdir(config, override):
    out = override if override is not None else config.outdir
    os.makedirs(out, exist_ok=True)
    return out


def _run_solve(config, out):
    m, field, mats = config.case_reduced()
    sol = system.solve_state(m, field, mats, partitions=config.partitions(),
                             dirichlet=np.zeros(2))
    R0, C0 = config.length_scale, config.stress_scale
    iomod.write_state_vtk(os.path.join(out, "state.vtk"), sol,
                          title=f"misfit solve {config.hash}",
                          length_scale=R0, displacement_scale=R0, energy_scale=C0)
    iomod.write_contours_csv(os.path.join(out, "contours.csv"), sol.contours,
                             config.meta(), length_scale=R0)
    en = physics.total_energy(sol)
    E0 = C0 * R0**2
    rows = [
        ("bulk_energy", en.bulk * E0, "GPa*nm^2"),
        ("interface_energy", en.interface * E0, "GPa*nm^2"),
        ("total_energy", en.total * E0, "GPa*nm^2"),
        ("n_dofs", sol.u.size, "1"),
        ("n_elements", m.n_elements, "1"),
        ("n_interface_segments", len(sol.segments), "1"),
    ]
    iomod.write_csv(os.path.join(out, "summary.csv"),
                    ["quantity", "value", "unit"], rows, config.meta())
    print(f"solve: {m.n_elements} elements, {len(sol.segments)} interface segments")
    print(f"solve: energies (GPa*nm^2) bulk={en.bulk * E0:.6e} "
          f"interface={en.interface * E0:.6e} total={en.total * E0:.6e}")
    print(f"solve: wrote state.vtk, contours.csv, summary.csv under {out}")
    return 0


def _run_verify(config, out):
    R0, C0 = config.length_scale, config.stress_scale
    lam, mu = config.lame_reduced()
    _, tau, ls_ = config.interface_reduced()
    half = (config.xmax - config.xmin) / 2.0 / R0
    bench = verify.run_circular_benchmark(
        config.nx, lam=lam, mu=mu, misfit=config.misfit, tau_s=tau, l_s=ls_,
        R=1.0, half_width=half, partitions=config.partitions())
    sol, oracle = bench["solution"], bench["oracle"]
    prof = verify.joint_profile(sol, oracle, theta=45.0)
    rows = list(zip(prof["r"] * R0, prof["u_r"] * R0, prof["u_r_exact"] * R0,
                    prof["e_rr"], prof["e_rr_exact"]))
    h = sol.mesh.dx
    band = np.abs(prof["r"] - 1.0) <= 2.0 * h
    eu = np.abs(prof["u_r"] - prof["u_r_exact"]) / np.abs(prof["u_r_exact"])
    ee = np.abs(prof["e_rr"] - prof["e_rr_exact"]) / np.abs(prof["e_rr_exact"])
    meta = config.meta(
        theta_deg=45.0,
        interface_radius_nm=iomod._fmt(R0),
        band_half_width_nm=iomod._fmt(2.0 * h * R0),
        max_rel_err_u_out_band=iomod._fmt(float(eu[~band].max())),
        max_rel_err_u_in_band=iomod._fmt(float(eu[band].max()) if band.any() else 0.0),
        max_rel_err_strain_out_band=iomod._fmt(float(ee[~band].max())),
        max_rel_err_strain_in_band=iomod._fmt(float(ee[band].max()) if band.any() else 0.0),
        e_d=iomod._fmt(bench["e_d"]), e_e=iomod._fmt(bench["e_e"]))
    iomod.write_csv(os.path.join(out, "profile.csv"),
                    ["r", "u_r", "u_r_exact", "e_rr", "e_rr_exact"], rows, meta)
    print(f"verify: radial profile at 45 deg, {len(rows)} stations -> profile.csv")
    print(f"verify: u_r max rel err {float(eu[~band].max()):.3%} (out of band) "
          f"{float(eu[band].max()) if band.any() else 0:.3%} (in band)")
    print(f"verify: e_rr max rel err {float(ee[~band].max()):.3%} (out of band) "
          f"{float(ee[band].max()) if band.any() else 0:.3%} (in band)")
    print(f"verify: global norms e_d={bench['e_d']:.4e} e_e={bench['e_e']:.4e}")
    return 0


def _run_converge(config, out):
    lam, mu = config.lame_reduced()
    _, tau, ls_ = config.interface_reduced()
    half = (config.xmax - config.xmin) / 2.0 / config.length_scale
    nx_list = (20, 40, 80, 160)
    for name, t, l in (("classical", 0.0, 0.0), ("interface", tau, ls_)):
        study = verify.convergence_study(nx_list, tau_s=t, l_s=l, lam=lam, mu=mu,
                                         misfit=config.misfit, R=1.0, half_width=half,
                                         partitions=config.partitions())
        rows = list(zip(study["nx"], study["h"] * config.length_scale,
                        study["e_d"], study["e_e"]))
        meta = config.meta(case=name, tau_s=iomod._fmt(t * config.stress_scale * config.length_scale),
                           l_s=iomod._fmt(l * config.stress_scale * config.length_scale),
                           rate_displacement=iomod._fmt(study["rate_d"]),
                           rate_energy=iomod._fmt(study["rate_e"]))
        iomod.write_csv(os.path.join(out, f"convergence_{name}.csv"),
                        ["nx", "h", "e_d", "e_e"], rows, meta)
        print(f"converge[{name}]: rate_d={study['rate_d']:.3f} "
              f"rate_e={study['rate_e']:.3f} -> convergence_{name}.csv")
    return 0


def _run_timing(config, out):
    lam, mu = config.lame_reduced()
    _, tau, ls_ = config.interface_reduced()
    half = (config.xmax - config.xmin) / 2.0 / config.length_scale
    study = verify.timing_study((20, 40, 80, 160), lam=lam, mu=mu,
                                misfit=config.misfit, tau_s=tau, l_s=ls_,
                                R=1.0, half_width=half)
    rows = list(zip(study["n_elements"], study["seconds"]))
    meta = config.meta(slope=iomod._fmt(study["slope"]),
                       note="wall-clock seconds are hardware-relative")
    iomod.write_csv(os.path.join(out, "timing.csv"),
                    ["n_elements", "assembly_seconds"], rows, meta)
    print(f"timing: log-log slope {study['slope']:.3f} -> timing.csv")
    return 0


def _run_evolve(config, out):
    m, field, mats = config.case_reduced()
    R0, C0 = config.length_scale, config.stress_scale
    L = config.characteristic_length()
    cfg = evolution.EvolutionConfig(cfl=config.cfl, reinit_period=config.reinit_period,
                                    max_steps=config.max_steps, tol_v=config.tol_v)
    meta = config.meta(alpha=iomod._fmt(config.alpha),
                       characteristic_length=iomod._fmt(L),
                       gamma0_reduced=iomod._fmt(mats.interface.gamma0),
                       time_unit="R0/(C44 force scale)", shape_units="R0")
    period = config.snapshot_period
    trail = []

    def snapshot(state):
        contours = levelset.zero_contours(state.field)
        for ci, contour in enumerate(contours):
            for vi, (x, y) in enumerate(contour.verts):
                trail.append((state.step, ci, vi, x * R0, y * R0, int(contour.closed)))
        iomod.write_state_vtk(os.path.join(out, f"state_{state.step:04d}.vtk"),
                              state.solution, title=f"misfit evolve step {state.step}",
                              length_scale=R0, displacement_scale=R0, energy_scale=C0)

    def on_step(state, row):
        print(f"step {row['step']:4d} t={row['time']:.4e} area={row['area']:.6f} "
              f"Pi={row['energy']:+.6e} a4={row['a4']:.4f} vmax={row['max_speed']:.3e}")
        if period and state.step % period == 0:
            snapshot(state)

    state, history, stall = evolution.run_evolution(m, field, mats, cfg, on_step=on_step)
    if not period or state.step % period != 0:
        snapshot(state)
    columns = ["step", "time", "area", "perimeter", "a2", "a4", "kappa_min",
               "kappa_max", "d4", "energy", "bulk_energy", "interface_energy",
               "max_speed"]
    rows = [tuple(row[c] for c in columns) for row in history]
    iomod.write_csv(os.path.join(out, "metrics.csv"), columns, rows, meta)
    iomod.write_csv(os.path.join(out, "contour_trail.csv"),
                    ["step", "contour", "vertex", "x", "y", "closed"], trail, meta)
    last = history[-1]
    print(f"evolve: alpha={config.alpha:g} L={L:.3g} finished at step {state.step} "
          f"(a4={last['a4']:.4f}, d4={last['d4']:.4f}, kappa range "
          f"[{last['kappa_min']:+.3f}, {last['kappa_max']:+.3f}])")
    print(f"evolve: wrote metrics.csv, contour_trail.csv, and VTK snapshots under {out}")
    if stall:
        print(f"error: evolution stalled: {stall}", file=sys.stderr)
        return 1
    return 0


_RUNNERS = {
    "solve": _run_solve,
    "verify": _run_verify,
    "converge": _run_converge,
    "timing": _run_timing,
    "evolve": _run_evolve,
}


def run(mode, config, out_override=None):
    """Dispatch one mode; returns a process exit status."""
    out = _outdir(config, out_override)
    return _RUNNERS[mode](config, out)


def _limit_threads(n):
    if n is None:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)
    try:
        import threadpoolctl

        threadpoolctl.threadpool_limits(n)
    except ImportError:
        pass


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="misfit",
        description="Strain-smoothed enriched FEM / level-set solver for "
                    "misfitting particles with interface elasticity.")
    parser.add_argument("mode", choices=MODES, help="what to run")
    parser.add_argument("--config", required=True, help="path to the INI config")
    parser.add_argument("--out", default=None, help="output directory override")
    parser.add_argument("--threads", type=int, default=None,
                        help="cap BLAS/OpenMP threads")
    args = parser.parse_args(argv)
    if args.threads is not None and args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return 2
    _limit_threads(args.threads)
    try:
        config = load_config(args.config, args.mode)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    try:
        return run(args.mode, config, args.out)
    except (meshmod.MeshError, levelset.LevelSetError, physics.PhysicsError,
            system.AssemblyError, system.SolveError, evolution.EvolutionError,
            verify.VerifyError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
