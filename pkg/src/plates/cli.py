"""Command-line front end: ``plates {mesh,modes,resonate,flux,export}``.

Settings come from defaults, then an optional ``--config`` file of flat
``key = value`` lines (keys are the long flag names without dashes), then
the command line.  The resolved settings are written into the header of
every output file together with the config, mesh and material hashes.

Exit codes: 0 success, 2 configuration error, 3 numerical failure (a
``diagnostics.txt`` is written to the output directory).
"""
from __future__ import annotations

import argparse
import math
import os
import shlex
import sys
import traceback
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .assembly import (SparseSymSystem, assemble_coarse, assemble_fine,
                       boundary_condition_system, sparsity)
from .eigensolve import EigenError, modes_near
from .io import (FormatError, config_hash, read_coefficients, read_sym_matrix, write_coefficients,
                 write_flux_csv, write_modes_csv, write_nodal_csv, write_sym_matrix, write_vtk)
from .iterate import IterateError
from .material import MaterialError, get_material, load_material_file
from .mesh import (MeshError, barycentric_subdivide, boundary_euler, euler_characteristic,
                   generate_slab_mesh, load_mesh, save_mesh)
from .resonance import (ForcingSpec, SampleSet, classify_nodal, far_side_samples,
                        forcing_load_vectors, resonance_wave, wave_flux)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
DEFAULT_FREQS = (80.0, 147.0, 222.0, 304.0, 349.0)


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    extent: tuple = (0.10, 0.01, 0.20)
    block: tuple = (0.01, 0.005, 0.01)
    mesh: str | None = None
    material: str = "spruce-engelmann"
    material_file: str | None = None
    system: str = "fine"
    lam: str = "one"
    freq: tuple = DEFAULT_FREQS
    modes_per_freq: int = 1
    c_omega: float = 0.05
    wave_sign: str = "minus"
    source_distance: float = 0.62
    wave_speed: float = 343.0
    amplitude: float = 1.0
    threads: int = 1
    seed: int = 0
    out: str | None = None

    def resolved(self):
        """Flat string view used for headers and hashing.

        ``threads`` and ``out`` do not change results and are left out, so
        outputs are byte-identical across thread counts and directories.
        """
        d = {}
        for k, v in self.__dict__.items():
            if k in ("threads", "out"):
                continue
            if isinstance(v, tuple):
                v = " ".join(f"{x:g}" for x in v)
            d[k] = "" if v is None else str(v)
        return d

    def out_dir(self):
        d = Path(self.out or os.environ.get("PLATES_OUT_DIR") or ".")
        d.mkdir(parents=True, exist_ok=True)
        return d


# ---- argument handling --------------------------------------------------------

def _freq_list(text):
    try:
        vals = tuple(float(x) for x in text.replace(" ", "").split(",") if x)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad frequency list {text!r}") from None
    if not vals or any(v <= 0 for v in vals):
        raise argparse.ArgumentTypeError("frequencies must be positive")
    return vals


def _run_flags(p: argparse.ArgumentParser, modes=True, forcing=False):
    # defaults are None so that config-file values can be told apart
    p.add_argument("--config", help="flat key = value settings file")
    p.add_argument("--extent", type=float, nargs=3, metavar=("X", "Y", "Z"))
    p.add_argument("--block", type=float, nargs=3, metavar=("X", "Y", "Z"))
    p.add_argument("--mesh", help="mesh file of K (plates-mesh v1); overrides --extent/--block")
    p.add_argument("--material")
    p.add_argument("--material-file")
    p.add_argument("--system", choices=("coarse", "fine"))
    p.add_argument("--lambda", dest="lam", choices=("one", "mean-l"))
    p.add_argument("--threads", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    if modes:
        p.add_argument("--freq", type=_freq_list, help="comma list in Hz")
        p.add_argument("--modes-per-freq", type=int)
        p.add_argument("--memory-budget", type=float, help="factorization budget in bytes")
    if forcing:
        p.add_argument("--c-omega", type=float)
        p.add_argument("--wave-sign", choices=("plus", "minus"))
        p.add_argument("--source-distance", type=float)
        p.add_argument("--wave-speed", type=float)
        p.add_argument("--amplitude", type=float)


def build_parser():
    p = argparse.ArgumentParser(prog="plates", description="Vibration modes of elastic plates.")
    p.add_argument("--version", action="version", version=f"plates {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    pm = sub.add_parser("mesh", help="generate or subdivide meshes")
    msub = pm.add_subparsers(dest="mesh_command", required=True)
    ps = msub.add_parser("slab", help="slab of 5-tet blocks")
    ps.add_argument("--extent", type=float, nargs=3, required=True)
    ps.add_argument("--block", type=float, nargs=3, required=True)
    ps.add_argument("--parity", type=int, default=0, choices=(0, 1))
    ps.add_argument("--subdivide", action="store_true", help="also report the barycentric subdivision")
    ps.add_argument("--out")
    pd = msub.add_parser("subdivide", help="barycentric subdivision of a mesh file")
    pd.add_argument("path")
    pd.add_argument("--out")

    pmo = sub.add_parser("modes", help="modes near target frequencies")
    _run_flags(pmo)
    pmo.add_argument("--matrix-i", help="import I (plates-sym v1) instead of assembling")
    pmo.add_argument("--matrix-k", help="import K (plates-sym v1) instead of assembling")
    pmo.add_argument("--density", type=float, help="rho for imported matrices (default: material)")

    pr = sub.add_parser("resonate", help="resonance waves, nodal maps and fluxes")
    _run_flags(pr, forcing=True)
    pr.add_argument("--vtk", action="store_true", help="write per-vertex wave magnitude")
    pr.add_argument("--self-test", choices=("standing-wave",), help="analytic nodal-band check")

    pf = sub.add_parser("flux", help="boundary flux of coefficient vectors")
    _run_flags(pf, modes=False)
    pf.add_argument("--coeffs", required=True, help="binary coefficient file")

    pe = sub.add_parser("export", help="export assembled matrices")
    _run_flags(pe, modes=False)
    pe.add_argument("--matrix", choices=("I", "K", "both"), default="both")
    return p


_CONFIG_KEYS = {"extent", "block", "mesh", "material", "material-file", "system", "lambda", "freq",
                "modes-per-freq", "c-omega", "wave-sign", "source-distance", "wave-speed",
                "amplitude", "threads", "seed", "out", "memory-budget"}


def read_config_file(path):
    """``key = value`` lines to ``[(flag, [values...]), ...]``."""
    items = []
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        k, v = (s.strip() for s in line.split("=", 1))
        k = k.replace("_", "-")
        if k not in _CONFIG_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {k!r}")
        items.append((f"--{k}", [v] if k == "freq" else shlex.split(v)))
    return items


def resolve_config(args):
    cfg = RunConfig()
    for k in cfg.__dict__:
        v = getattr(args, k, None)
        if v is not None:
            setattr(cfg, k, tuple(v) if isinstance(v, list) else v)
    cfg.freq = tuple(float(f) for f in cfg.freq)
    cfg.extent = tuple(float(x) for x in cfg.extent)
    cfg.block = tuple(float(x) for x in cfg.block)
    if cfg.modes_per_freq < 1:
        raise ConfigError("--modes-per-freq must be at least 1")
    if cfg.threads < 1:
        raise ConfigError("--threads must be at least 1")
    if not 0.0 <= cfg.c_omega:
        raise ConfigError("--c-omega must be non-negative")
    if cfg.wave_speed <= 0.0 or cfg.source_distance < 0.0:
        raise ConfigError("--wave-speed must be positive and --source-distance non-negative")
    return cfg


# ---- pipeline -----------------------------------------------------------------

@dataclass
class Pipeline:
    cfg: RunConfig
    Kc: object
    K: object
    material: object
    system: SparseSymSystem
    coarse: SparseSymSystem

    @property
    def whitney(self):
        return self.system.whitney

    @property
    def rho(self):
        return self.material.density

    def provenance(self, **extra):
        d = {"plates": __version__, "config_hash": config_hash(self.cfg.resolved()),
             "mesh_hash": self.Kc.digest(), "material_hash": self.material.digest()}
        d.update(extra)
        d.update({f"config.{k}": v for k, v in self.cfg.resolved().items()})
        return d


def load_material(cfg):
    if cfg.material_file:
        return load_material_file(cfg.material_file)
    return get_material(cfg.material)


def build_mesh(cfg):
    Kc = load_mesh(cfg.mesh) if cfg.mesh else generate_slab_mesh(cfg.extent, cfg.block)
    return Kc, barycentric_subdivide(Kc)


def build_pipeline(cfg, log=print):
    material = load_material(cfg)
    Kc, K = build_mesh(cfg)
    log(f"mesh: K {Kc.n_tets} tets, K' {K.n_tets} tets")
    coarse = assemble_coarse(K, material, lam=cfg.lam, threads=cfg.threads)
    system = coarse
    if cfg.system == "fine":
        bc = boundary_condition_system(coarse.whitney, material)
        system = assemble_fine(coarse, bc)
    log(f"{cfg.system} system: n = {system.n}")
    return Pipeline(cfg, Kc, K, material, system, coarse)


def _count_table(K, name):
    c = K.counts()
    rows = [f"{name}: vertices {c['vertices']}, edges {c['edges']}, faces {c['faces']}, tets {c['tets']}",
            f"  boundary: vertices {c['boundary_vertices']}, edges {c['boundary_edges']}, "
            f"faces {c['boundary_faces']}",
            f"  euler {euler_characteristic(K)}, boundary euler {boundary_euler(K)}"]
    return "\n".join(rows)


def cmd_mesh(args):
    if args.mesh_command == "slab":
        K = generate_slab_mesh(tuple(args.extent), tuple(args.block), parity=args.parity)
        print(_count_table(K, "K"))
        if args.subdivide:
            print(_count_table(barycentric_subdivide(K), "K'"))
    else:
        K = barycentric_subdivide(load_mesh(args.path))
        print(_count_table(K, "K'"))
    if args.out:
        save_mesh(K, args.out)
        print(f"wrote {args.out}")
    return EXIT_OK


def cmd_modes(args):
    cfg = resolve_config(args)
    out = cfg.out_dir()
    if args.matrix_i or args.matrix_k:
        if not (args.matrix_i and args.matrix_k):
            raise ConfigError("--matrix-i and --matrix-k go together")
        I, K = read_sym_matrix(args.matrix_i), read_sym_matrix(args.matrix_k)
        if I.shape != K.shape:
            raise ConfigError("imported I and K differ in size")
        rho = args.density if args.density is not None else load_material(cfg).density
        system = SparseSymSystem(I=I, K=K, basis=None)
        prov = {"plates": __version__, "config_hash": config_hash(cfg.resolved()),
                "matrix_i": args.matrix_i, "matrix_k": args.matrix_k}
        prov.update({f"config.{k}": v for k, v in cfg.resolved().items()})
    else:
        pipe = build_pipeline(cfg)
        system, rho, prov = pipe.system, pipe.rho, pipe.provenance()
    modes_all, targets = [], []
    print("f,f_r,mu,residual,sign")
    for f in cfg.freq:
        modes, info = modes_near(system, rho, f, cfg.modes_per_freq, seed=cfg.seed,
                                 memory_budget=args.memory_budget)
        for m in modes:
            print(f"{f:g},{m.f_r:.8f},{m.mu:.10g},{m.residual:.3e},{m.sign}")
        modes_all += modes
        targets += [f] * len(modes)
    write_modes_csv(out / "modes.csv", modes_all, prov)
    coeffs = np.array([m.coeffs for m in modes_all]) if modes_all else np.zeros((0, system.n))
    write_coefficients(out / "modes.bin", coeffs,
                       dict(prov, targets=targets, f_r=[m.f_r for m in modes_all]))
    return EXIT_OK


class StandingWave:
    """``sin(pi (x - x0) / L) cos(w t) e_y``: zero bands at x = x0 and x0 + L."""

    def __init__(self, x0, length, omega=2.0 * math.pi * 100.0):
        self.x0, self.length, self.omega = x0, length, omega

    def values(self, points, t):
        out = np.zeros((len(points), 3))
        out[:, 1] = np.sin(math.pi * (points[:, 0] - self.x0) / self.length) * math.cos(self.omega * t)
        return out


def standing_wave_check(K, whitney, c_omega=0.05, direction=(0.0, 1.0, 0.0)):
    """Nodal set of the synthetic standing wave against its analytic zero bands.

    Returns ``(ok, nodal_map, band_width)``.  Points are allowed within one
    boundary face diameter of the zero planes.
    """
    x0, x1 = K.coords[:, 0].min(), K.coords[:, 0].max()
    wave = StandingWave(x0, x1 - x0)
    samples = far_side_samples(whitney, direction)
    nm = classify_nodal(wave, samples, c_omega)
    faces = np.flatnonzero(K.boundary_faces)
    tri = K.coords[K.faces[faces]]
    diam = max(np.linalg.norm(tri[:, a] - tri[:, b], axis=1).max() for a, b in ((0, 1), (1, 2), (0, 2)))
    x = nm.points[:, 0]
    dist = np.minimum(x - x0, x1 - x)
    ok = bool(nm.count > 0 and np.all(dist[nm.nodal] <= diam) and np.all(nm.nodal[dist <= 1e-12]))
    return ok, nm, diam


def _vertex_samples(whitney):
    K = whitney.K
    vt = K.vertex_tets()
    tets = vt.indices[vt.indptr[:-1]]  # lowest owning tet
    bary = (K.tets[tets] == np.arange(K.n_vertices)[:, None]).astype(np.float64)
    return SampleSet(points=K.coords.copy(), tets=tets, bary=bary, kind=np.ones(K.n_vertices, int))


def cmd_resonate(args):
    cfg = resolve_config(args)
    out = cfg.out_dir()
    pipe = build_pipeline(cfg)
    W = pipe.whitney
    direction = (0.0, 1.0, 0.0)
    if args.self_test:
        ok, nm, diam = standing_wave_check(pipe.K, W, cfg.c_omega, direction)
        write_nodal_csv(out / "nodal_standing_wave.csv", nm, pipe.provenance(self_test=args.self_test))
        print(f"standing wave: {nm.count} nodal points, band width {diam:.4g} m, {'pass' if ok else 'FAIL'}")
        return EXIT_OK if ok else EXIT_NUMERIC
    samples = far_side_samples(W, direction)
    flux_rows = []
    for f in cfg.freq:
        spec = ForcingSpec.facing(pipe.K, f, direction, cfg.source_distance, cfg.wave_speed,
                                  amplitude=cfg.amplitude, sign=cfg.wave_sign)
        C1, C2 = forcing_load_vectors(spec, W, pipe.system.basis)
        wave = resonance_wave(pipe.system, pipe.rho, f, cfg.modes_per_freq, C1, C2, sign=cfg.wave_sign)
        for msg in wave.warnings:
            print(f"warning: {msg}", file=sys.stderr)
        nm = classify_nodal(wave, samples, cfg.c_omega, whitney=W)
        if not np.any(nm.max_t > nm.min_t):
            print(f"warning: f = {f:g}: wave vanishes on the sample set; every point is nodal",
                  file=sys.stderr)
        flux, j, fallback = wave_flux(wave, nm, W, pipe.rho, pipe.system)
        fr = wave.modes[0].f_r
        flux_rows.append((f, fr, cfg.system, flux, j + 1))
        tag = f"{f:g}"
        prov = pipe.provenance(f=tag, t_j_fallback=str(fallback))
        write_nodal_csv(out / f"nodal_{tag}.csv", nm, prov)
        print(f"f {tag}: f_r {fr:.8f}, nodal {nm.count}/{len(samples)}, flux {flux:.3e} at t_{j + 1}")
        if args.vtk:
            vs = _vertex_samples(W)
            c = pipe.system.basis.expand(wave.coefficients(nm.times[j]))
            mag = np.linalg.norm((vs.evaluation_matrix(W) @ c).reshape(-1, 3), axis=1)
            write_vtk(out / f"wave_{tag}.vtk", pipe.K, {"wave_magnitude": mag},
                      title=f"plates resonance wave f={tag} t_j={j + 1}")
    write_flux_csv(out / "flux.csv", flux_rows, pipe.provenance())
    return EXIT_OK


def cmd_flux(args):
    cfg = resolve_config(args)
    pipe = build_pipeline(cfg)
    from .resonance import boundary_flux, flux_functional
    coeffs, meta = read_coefficients(args.coeffs)
    W = pipe.whitney
    phi = flux_functional(W)
    basis = pipe.system.basis
    for row in coeffs:
        if len(row) == W.n_fields:
            val = boundary_flux(row, W, phi=phi)
        elif len(row) == basis.size:
            val = boundary_flux(row, W, basis, phi)
        else:
            raise ConfigError(f"coefficient length {len(row)} matches neither the full family "
                              f"({W.n_fields}) nor the {cfg.system} basis ({basis.size})")
        print(f"{val:.17g}")
    return EXIT_OK


def cmd_export(args):
    cfg = resolve_config(args)
    out = cfg.out_dir()
    pipe = build_pipeline(cfg)
    names = ("I", "K") if args.matrix == "both" else (args.matrix,)
    for name in names:
        A = getattr(pipe.system, name)
        path = out / f"{cfg.system}_{name}.sym"
        write_sym_matrix(A, path, pipe.provenance(matrix=name))
        print(f"{name}: n = {A.shape[0]}, nnz = {A.nnz}, sparsity {sparsity(A):.6f} -> {path}")
    return EXIT_OK


COMMANDS = {"mesh": cmd_mesh, "modes": cmd_modes, "resonate": cmd_resonate, "flux": cmd_flux,
            "export": cmd_export}


def _subcommand_options(name):
    p = build_parser()
    for action in p._actions:
        if isinstance(action, argparse._SubParsersAction) and name in action.choices:
            return set(action.choices[name]._option_string_actions)
    return set()


def _with_config(argv):
    """Splice config-file settings in before the command line ones.

    Keys the subcommand does not take (e.g. ``freq`` for ``export``) are
    skipped, so one file can serve every subcommand.
    """
    if "--config" not in argv and not any(a.startswith("--config=") for a in argv):
        return argv
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    # the subcommand path is everything before the first option
    k = next((i for i, a in enumerate(argv) if a.startswith("-")), len(argv))
    allowed = _subcommand_options(argv[0]) if k > 0 else set()
    extra = []
    for flag, values in read_config_file(known.config):
        if flag in allowed:
            extra += [flag] + values
    return argv[:k] + extra + argv[k:]


def _diagnostics(out, exc):
    try:
        d = Path(out or os.environ.get("PLATES_OUT_DIR") or ".")
        d.mkdir(parents=True, exist_ok=True)
        path = d / "diagnostics.txt"
        lines = [f"error: {type(exc).__name__}: {exc}"]
        best = getattr(exc, "best_residuals", None)
        if best:
            lines.append("best residuals: " + ", ".join(f"{r:.3e}" for r in best))
        lines.append("")
        lines += traceback.format_exception(exc)
        path.write_text("\n".join(lines), newline="\n")
        return path
    except OSError:
        return None


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        argv = _with_config(argv)
    except ConfigError as exc:
        print(f"plates: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, MaterialError, MeshError, FormatError, FileNotFoundError) as exc:
        print(f"plates: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (EigenError, IterateError, np.linalg.LinAlgError, MemoryError, RuntimeError) as exc:
        path = _diagnostics(getattr(args, "out", None), exc)
        print(f"plates: numerical failure: {exc}" + (f" (see {path})" if path else ""), file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
