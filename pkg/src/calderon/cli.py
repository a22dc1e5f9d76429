"""Command line harness: ``calderon <subcommand> --config file.toml``.

Exit codes: 0 success, 1 configuration error, 2 validation or tolerance
failure, 3 resource budget exceeded.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .boundary import BoundaryFunction, coefficients, modes_needed
from .conductivity import builtin_field
from .config import (ConfigError, build_conductivity, build_domain, config_hash, load_config,
                     seed_list)
from .geometry import build_chart, select_xi
from .mesh import MeshBudgetError
from .noise import NoisyOracle, sample_noise, second_moment
from .probes import ProbeSpec
from .reconstruct import (calibrate_constant, filtering_moment, filtering_second_moment, fit_rate,
                          grad_clean_nodes, grad_noise_matrices, grad_target, grad_truncation,
                          midpoint_nodes, noise_truncation, parallel_map, quantile_experiment,
                          rate_exponent, recover_gamma, gamma_noise_matrices, stage_one_boundary,
                          window_length)
from .solver import CleanOracle, MeshPolicy, SolverError

log = logging.getLogger("calderon")

EXIT_OK, EXIT_CONFIG, EXIT_FAIL, EXIT_BUDGET = 0, 1, 2, 3


class ToleranceFailure(RuntimeError):
    pass


# -- output ------------------------------------------------------------------------------
def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


class CsvWriter:
    """Timestamp line, a units/hash line, the header row, then data rows."""

    def __init__(self, path: Path, columns, units, cfg_hash: str):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "w", newline="")
        stamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
        self._fh.write(f"# generated {stamp}\n")
        unit_str = ";".join(f"{c}[{u}]" for c, u in zip(columns, units))
        self._fh.write(f"# config_hash={cfg_hash} units: {unit_str}\n")
        self._w = csv.writer(self._fh, lineterminator="\n")
        self._w.writerow(columns)
        self.columns = list(columns)

    def row(self, values):
        if len(values) != len(self.columns):
            raise ValueError("row length differs from header")
        self._w.writerow([_fmt(v) for v in values])
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_data_rows(path) -> list:
    """Data rows of a CSV written by :class:`CsvWriter` (comment lines skipped)."""
    with open(path) as fh:
        return [line.rstrip("\n") for line in fh if not line.startswith("#")]


def write_plot_script(path: Path, csv_name: str, xcol: int, ycols, title: str, logscale: str = "xy",
                      xlabel: str = "N", ylabel: str = "value"):
    lines = [
        "# gnuplot script; run with: gnuplot " + Path(path).name,
        "set datafile separator ','",
        f"set title '{title}'",
        f"set xlabel '{xlabel}'",
        f"set ylabel '{ylabel}'",
    ]
    if logscale:
        lines.append(f"set logscale {logscale}")
    lines.append("set terminal pngcairo size 800,600")
    lines.append(f"set output '{Path(csv_name).stem}.png'")
    plots = [f"'{csv_name}' every ::1 using {xcol}:{c} with linespoints title '{name}'"
             for c, name in ycols]
    lines.append("plot " + ", \\\n     ".join(plots))
    Path(path).write_text("\n".join(lines) + "\n")


# -- shared builders ---------------------------------------------------------------------
def _policy(cfg) -> MeshPolicy:
    s = cfg["solver"]
    return MeshPolicy(ppw=float(s["ppw"]), h_far=float(s["h_far"]),
                      layer_factor=None if s["layer_factor"] in (None, "none") else float(s["layer_factor"]),
                      grading=float(s["grading"]), ladder=float(s["ladder"]),
                      max_triangles=int(s["max_triangles"]))


def _spec(cfg, domain, mode):
    p = cfg["probe"]
    chart = build_chart(domain, float(p["anchor_theta"]))
    return ProbeSpec(chart, select_xi(chart, p["orientation"]), float(p["theta"]), mode)


def _truth_at_P(gamma, spec):
    return float(gamma.at(spec.chart.anchor))


# -- subcommands -------------------------------------------------------------------------
def cmd_validate(cfg, out: Path, h_: str) -> int:
    v = cfg["validate"]
    domain = build_domain(cfg)
    if not domain.is_disk:
        raise ConfigError("validate runs its oracles on the unit disk")
    rows, ok = [], True

    def check(name, value, ref, tol, kind="rel"):
        nonlocal ok
        err = abs(value - ref) / abs(ref) if kind == "rel" else abs(value - ref)
        passed = bool(err <= tol)
        ok &= passed
        rows.append((name, float(np.real(value)), float(np.real(ref)), err, tol, passed))
        log.info("%s: value=%.6g ref=%.6g err=%.3g tol=%.3g %s", name, np.real(value), np.real(ref),
                 err, tol, "ok" if passed else "FAIL")
        return err

    h = float(v["h"])
    one = builtin_field("constant", {"c": 1.0})
    n_b = 1024

    def disk_pair(hh, n):
        o = CleanOracle(domain, one, MeshPolicy(h_uniform=hh))
        f = BoundaryFunction.fourier_mode(domain, n, n_b)
        g = BoundaryFunction.fourier_mode(domain, -n, n_b)
        return o.dn_pair(f, g)

    for n in v["modes"]:
        check(f"disk_multiplier_n{n}", disk_pair(h, n), 2 * math.pi * abs(n), v["rel_tol"])
    # observed order of the worst mode error over the h ladder
    hs = [float(x) for x in v["h_ladder"]]
    errs = [max(abs(disk_pair(hh, n) / (2 * math.pi * n) - 1) for n in v["modes"]) for hh in hs]
    order = float(np.polyfit(np.log(hs), np.log(errs), 1)[0])
    passed = order >= v["min_order"]
    ok &= passed
    rows.append(("disk_convergence_order", order, v["min_order"], 0.0, 0.0, passed))
    log.info("observed order %.3f (need >= %.2f)", order, v["min_order"])

    # exact solutions with boundary-flux quadrature oracles
    alpha = float(v["alpha"])
    pol = MeshPolicy(h_uniform=h)
    th = np.linspace(0, 2 * math.pi, 4096, endpoint=False)
    cx, sy = np.cos(th), np.sin(th)
    g_exp = builtin_field("exponential", {"c": 1.0, "alpha": [alpha, 0.0]})
    f_exp = BoundaryFunction.from_global(domain, lambda x, y: np.exp(-alpha * x), n_b)
    flux = np.mean(-alpha * cx * np.exp(-alpha * cx)) * 2 * math.pi
    check("exp_conductivity_flux", CleanOracle(domain, g_exp, pol).dn_pair(f_exp, f_exp), flux, v["flux_tol"])
    g_aff = builtin_field("affine", {"a": 2.0, "b": [1.0, 0.0]})
    f_y = BoundaryFunction.from_global(domain, lambda x, y: y + 0 * x, n_b)
    flux_y = np.mean((2 + cx) * sy * sy) * 2 * math.pi
    check("x_conductivity_u_y_flux", CleanOracle(domain, g_aff, pol).dn_pair(f_y, f_y), flux_y, v["flux_tol"])
    # integral identity
    f1 = BoundaryFunction.from_global(domain, lambda x, y: x * x - y + 0j, n_b)
    g1 = BoundaryFunction.from_global(domain, lambda x, y: np.exp(1j * x) + y, n_b)
    r_const = CleanOracle(domain, builtin_field("constant", {"c": 2.5}), pol).identity_residual(f1, g1)
    check("identity_residual_constant", r_const, 0.0, v["residual_tol"], kind="abs")
    res = [CleanOracle(domain, g_aff, MeshPolicy(h_uniform=hh)).identity_residual(f1, g1) for hh in hs]
    ro = float(np.polyfit(np.log(hs), np.log(res), 1)[0])
    passed = ro >= 1.0
    ok &= passed
    rows.append(("identity_residual_order", ro, 1.0, 0.0, 0.0, passed))

    with CsvWriter(out / "validation.csv", ["check", "value", "reference", "error", "tolerance", "passed"],
                   ["-", "-", "-", "-", "-", "bool"], h_) as w:
        for r in rows:
            w.row(list(r))
    failed = [r[0] for r in rows if not r[5]]
    if failed:
        log.error("failing checks: %s", ", ".join(failed))
        print("validation failed: " + ", ".join(failed), file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def cmd_recover_gamma(cfg, out: Path, h_: str) -> int:
    domain, gamma = build_domain(cfg), build_conductivity(cfg)
    spec = _spec(cfg, domain, "gamma")
    truth = _truth_at_P(gamma, spec)
    Ns = [float(n) for n in cfg["experiment"]["N"]]
    clean = CleanOracle(domain, gamma, _policy(cfg), cfg["solver"]["mode"])
    K = noise_truncation(spec, Ns[-1]) if cfg["noise"]["K"] == "auto" else int(cfg["noise"]["K"])
    seeds = seed_list(cfg["experiment"]["seeds"])
    noise_on = bool(cfg["noise"]["enabled"])
    cache: dict = {}
    clean_vals = {}
    for N in Ns:   # clean parts once, shared by all seeds
        clean_vals[N] = recover_gamma(NoisyOracle(clean), spec, [N], clean_cache=cache).clean[0]
    A, B = gamma_noise_matrices(spec, Ns, K) if noise_on else (None, None)

    def run(seed):
        if not noise_on:
            return np.zeros(len(Ns), dtype=complex)
        return sample_noise(seed, K).contract(A, B)

    noise = parallel_map(run, seeds)
    cols = ["seed", "N", "estimate_re", "estimate_im", "clean_re", "clean_im", "noise_re", "noise_im",
            "truth", "abs_err"]
    with CsvWriter(out / "recover_gamma.csv", cols, ["-", "-"] + ["conductivity"] * 8, h_) as w:
        for seed, nz in zip(seeds, noise):
            for k, N in enumerate(Ns):
                c, z = clean_vals[N], nz[k]
                e = c + z
                w.row([seed, N, e.real, e.imag, c.real, c.imag, z.real, z.imag, truth, abs(e - truth)])
    write_plot_script(out / "recover_gamma.gp", "recover_gamma.csv", 2, [(10, "|estimate - truth|")],
                      "conductivity at P: error vs N", ylabel="abs error")
    return EXIT_OK


def _gamma_boundary(cfg, domain, gamma, clean):
    g = cfg["grad"]
    if g["gamma_boundary"] == "truth":
        return lambda th: gamma.at(domain.point(th)), "truth"
    K_spec = _spec(cfg, domain, "gamma")
    N1 = float(g["stage1_N"])
    K = noise_truncation(K_spec, N1)
    noise = sample_noise(int(cfg["noise"]["seed"]), K) if cfg["noise"]["enabled"] else None
    return stage_one_boundary(NoisyOracle(clean, noise), domain, int(g["anchors"]), N1,
                              float(cfg["probe"]["theta"])), "stage1"


def cmd_recover_grad(cfg, out: Path, h_: str) -> int:
    domain, gamma = build_domain(cfg), build_conductivity(cfg)
    spec = _spec(cfg, domain, "grad")
    g = cfg["grad"]
    clean = CleanOracle(domain, gamma, _policy(cfg), cfg["solver"]["mode"])
    gb, gb_kind = _gamma_boundary(cfg, domain, gamma, clean)
    target = grad_target(gamma, spec, "outward")
    limit = grad_target(gamma, spec, "inward")
    N = float(g["N"])
    T, used = window_length(N, spec.theta, g["t_override"])
    Q = None if g["Q"] == "auto" else int(g["Q"])
    nodes, weights = midpoint_nodes(T, Q)
    log.info("window [%.4g, %.4g], %d nodes, override=%s", T, 2 * T, len(nodes), used)
    cl = grad_clean_nodes(clean, spec, nodes, gb)
    seeds = seed_list(cfg["experiment"]["seeds"])
    noise_on = bool(cfg["noise"]["enabled"])
    if noise_on:
        K = grad_truncation(spec, T) if cfg["noise"]["K"] == "auto" else int(cfg["noise"]["K"])
        A, B = grad_noise_matrices(spec, nodes, gb, K)
        noise = parallel_map(lambda s: sample_noise(s, K).contract(A, B), seeds)
    else:
        noise = [np.zeros(len(nodes), dtype=complex) for _ in seeds]
    c_avg = complex(weights @ cl / T)
    cols = ["seed", "N", "T", "T_override", "Q", "Y_re", "Y_im", "clean_re", "clean_im", "noise_re",
            "noise_im", "target_re", "target_im", "abs_err", "limit_re", "limit_im", "abs_err_limit",
            "gamma_boundary"]
    units = ["-", "-", "t", "-", "-"] + ["1/length"] * 11 + ["1/length", "-"]
    with CsvWriter(out / "recover_grad.csv", cols, units, h_) as w:
        for seed, nz in zip(seeds, noise):
            z = complex(weights @ nz / T)
            Y = c_avg + z
            w.row([seed, N, T, used or "", len(nodes), Y.real, Y.imag, c_avg.real, c_avg.imag, z.real,
                   z.imag, target.real, target.imag, abs(Y - target), limit.real, limit.imag,
                   abs(Y - limit), gb_kind])
    with CsvWriter(out / "recover_grad_nodes.csv", ["t", "weight", "clean_re", "clean_im"],
                   ["t", "t", "1/length", "1/length"], h_) as w:
        for t, wk, c in zip(nodes, weights, cl):
            w.row([t, wk, c.real, c.imag])
    windows = [float(x) for x in g.get("windows", [])]
    if windows:
        with CsvWriter(out / "grad_windows.csv",
                       ["T", "Q", "clean_re", "clean_im", "abs_err", "abs_err_limit"],
                       ["t", "-", "1/length", "1/length", "1/length", "1/length"], h_) as w:
            for Tw in windows:
                nd, wt = midpoint_nodes(Tw)
                c = complex(wt @ grad_clean_nodes(clean, spec, nd, gb) / Tw)
                w.row([Tw, len(nd), c.real, c.imag, abs(c - target), abs(c - limit)])
        write_plot_script(out / "grad_windows.gp", "grad_windows.csv", 1,
                          [(5, "vs outward-normal target"), (6, "vs inward-normal limit")],
                          "clean window average: error vs T", xlabel="T", ylabel="abs error")
    write_plot_script(out / "recover_grad.gp", "recover_grad_nodes.csv", 1, [(3, "Re clean"), (4, "Im clean")],
                      "clean derivative pairing at the window nodes", logscale="", xlabel="t")
    return EXIT_OK


def band_limited_pairs(domain, count: int, bandwidth: int, n_b: int):
    """Deterministic random trigonometric polynomials of bandwidth ``bandwidth``."""
    rng = np.random.default_rng(20240917)
    L = domain.length
    pairs = []
    for _ in range(count):
        fs = []
        for _ in range(2):
            n = np.arange(-bandwidth, bandwidth + 1)
            c = rng.normal(size=n.size) + 1j * rng.normal(size=n.size)
            s = np.arange(n_b) * L / n_b
            vals = (np.exp(2j * np.pi * np.outer(s, n) / L) @ c) / math.sqrt(L)
            fs.append(BoundaryFunction(domain, vals, meta={"bandwidth": bandwidth}))
        pairs.append(tuple(fs))
    return pairs


def noise_variance_table(domain, K: int, seeds, count: int, bandwidth: int):
    """Per pair: (MC mean of |noise|^2, standard error, closed form, ||f||^2 ||g||^2)."""
    if K < modes_needed(bandwidth):
        raise ConfigError("noise_stats.K must cover the bandwidth")
    pairs = band_limited_pairs(domain, count, bandwidth, n_b=max(8 * K, 64))
    A = np.array([coefficients(f, K) for f, _ in pairs])
    B = np.array([coefficients(g, K) for _, g in pairs])
    vals = np.array(parallel_map(lambda s: sample_noise(s, K).contract(A, B), list(seeds)))
    p = np.abs(vals) ** 2
    out = []
    for k, (f, g) in enumerate(pairs):
        out.append((float(p[:, k].mean()), float(p[:, k].std(ddof=1) / math.sqrt(len(p))),
                    second_moment(f, g, K), f.norm() ** 2 * g.norm() ** 2))
    return out


def cmd_noise_stats(cfg, out: Path, h_: str) -> int:
    ns = cfg["noise_stats"]
    domain = build_domain(cfg)
    gamma = build_conductivity(cfg)
    K = int(ns["K"])
    seeds = seed_list(ns["seeds"])
    table = noise_variance_table(domain, K, seeds, int(ns["pairs"]), int(ns["bandwidth"]))
    ok = True
    with CsvWriter(out / "noise_stats.csv",
                   ["pair", "K", "seeds", "mc_mean", "mc_se", "closed_form", "norm_product", "z_score", "passed"],
                   ["-", "-", "-", "L2^4", "L2^4", "L2^4", "L2^4", "-", "bool"], h_) as w:
        for k, (m, se, cf, npd) in enumerate(table):
            z = (m - npd) / se
            passed = abs(z) <= 3.0 and abs(cf - npd) <= 1e-10 * npd
            ok &= passed
            w.row([k, K, len(seeds), m, se, cf, npd, z, passed])
    spec = _spec(cfg, domain, "grad")
    pts = []
    with CsvWriter(out / "filtering.csv", ["T", "Q", "seeds", "mc_mean", "mc_se", "closed_form"],
                   ["t", "-", "-", "1/length^2", "1/length^2", "1/length^2"], h_) as w:
        fseeds = seed_list(ns["filter_seeds"])
        for T in [float(x) for x in ns["T"]]:
            m, se = filtering_moment(spec, T, gamma.at, fseeds, route=ns["route"])
            Q = len(midpoint_nodes(T)[0])
            w.row([T, Q, len(fseeds), m, se, filtering_second_moment(spec, T, gamma.at)])
            pts.append((T, m))
    slope, icpt = fit_rate(pts)
    passed = slope <= float(ns["max_slope"])
    ok &= passed
    with CsvWriter(out / "filtering_fit.csv", ["slope", "intercept", "predicted", "bound", "passed"],
                   ["-", "-", "-", "-", "bool"], h_) as w:
        w.row([slope, icpt, -2.0 / 3.0, float(ns["max_slope"]), passed])
    write_plot_script(out / "filtering.gp", "filtering.csv", 1, [(4, "E|noise average|^2")],
                      "filtering: second moment vs T", xlabel="T", ylabel="second moment")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_rates(cfg, out: Path, h_: str) -> int:
    r = cfg["rates"]
    domain, gamma = build_domain(cfg), build_conductivity(cfg)
    spec = _spec(cfg, domain, "gamma")
    truth = _truth_at_P(gamma, spec)
    clean = CleanOracle(domain, gamma, _policy(cfg), cfg["solver"]["mode"])
    Ns = [float(n) for n in r["N"]]
    tr = recover_gamma(NoisyOracle(clean), spec, Ns, truth=truth)
    pts = list(zip(Ns, tr.errors))
    slope, icpt = fit_rate(pts)
    bound = -rate_exponent(spec.theta) + float(r["slack"])
    ok = slope <= bound
    C = calibrate_constant(pts, spec.theta, "gamma", float(r["factor"]))
    with CsvWriter(out / "rates.csv", ["N", "clean_re", "clean_im", "abs_err", "slope", "intercept", "bound"],
                   ["-", "conductivity", "conductivity", "conductivity", "-", "-", "-"], h_) as w:
        for N, c, e in zip(Ns, tr.clean, tr.errors):
            w.row([N, c.real, c.imag, e, slope, icpt, bound])
    seeds = seed_list(r["quantile_seeds"])
    with CsvWriter(out / "quantile.csv", ["N", "seeds", "C", "radius", "fraction", "min_fraction", "passed"],
                   ["-", "-", "-", "conductivity", "-", "-", "bool"], h_) as w:
        for N in [float(n) for n in r["quantile_N"]]:
            K = noise_truncation(spec, N)
            A, B = gamma_noise_matrices(spec, [N], K)
            c = recover_gamma(NoisyOracle(clean), spec, [N]).clean[0]
            nz = [z[0] for z in parallel_map(lambda s: sample_noise(s, K).contract(A, B), seeds)]
            frac = quantile_experiment(c, nz, truth, N, spec.theta, C)
            passed = frac >= float(r["min_fraction"])
            ok &= passed
            w.row([N, len(seeds), C, C * N ** -rate_exponent(spec.theta), frac, r["min_fraction"], passed])
    write_plot_script(out / "rates.gp", "rates.csv", 1, [(4, "noise-free error")],
                      "conductivity at P: noise-free error vs N", ylabel="abs error")
    return EXIT_OK if ok else EXIT_FAIL


COMMANDS = {
    "validate": cmd_validate,
    "recover-gamma": cmd_recover_gamma,
    "recover-grad": cmd_recover_grad,
    "noise-stats": cmd_noise_stats,
    "rates": cmd_rates,
}


def _parse_override(text):
    if text in ("auto", "none"):
        return text
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("t-override must be 'auto', 'none' or a number")


def build_parser():
    p = argparse.ArgumentParser(prog="calderon", description="Boundary determination experiments")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="TOML or JSON experiment file")
    p.add_argument("--seed", type=int, help="single noise seed (overrides experiment.seeds)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--no-noise", action="store_true", help="disable the noise term")
    p.add_argument("--t-override", type=_parse_override, help="window policy: auto, none or T")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
    over: dict = {}
    if args.seed is not None:
        over.setdefault("experiment", {})["seeds"] = [args.seed]
        over.setdefault("noise", {})["seed"] = args.seed
    if args.no_noise:
        over.setdefault("noise", {})["enabled"] = False
    if args.t_override is not None:
        over.setdefault("grad", {})["t_override"] = args.t_override
    if args.out:
        over.setdefault("output", {})["dir"] = args.out
    try:
        cfg = load_config(args.config, over)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(cfg["output"]["dir"])
    try:
        return COMMANDS[args.command](cfg, out, config_hash(cfg))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MeshBudgetError as exc:
        print(f"budget exceeded: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
