"""Command-line front end: ``stabcodes {assign,design,stability,simulate,tables}``.

Results are written as CSV (header row, 9 significant digits) to ``--out``
or standard output.  Output files are written atomically, so a failing
command never leaves a partial file behind.
"""

from __future__ import annotations

import argparse
import copy
import csv
import io
import math
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from importlib import resources

import numpy as np
import yaml

from . import lti, mdc, sim, stability
from .stability import ErasureDistribution, StabilizingCodeSpec

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_DIVERGED = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


class InfeasibleDesign(RuntimeError):
    pass


# ------------------------------------------------------------------ config

_CODE_KEYS = {"construction", "k", "k_prime", "delta", "r"}
_PLANT_OPTIONAL = {"plant_num", "plant_den", "F", "L_w", "L_y"}


def default_config() -> dict:
    text = resources.files("stabcodes").joinpath("data/default.yaml").read_text()
    return yaml.safe_load(text)


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        where = f"{path}{key}"
        if where == "codes":
            if not isinstance(val, dict):
                raise ConfigError("'codes' must be a mapping of code names")
            for name, code in val.items():
                _check_code(name, code)
                out["codes"][name] = dict(code)
        elif key not in base:
            if path == "plant." and key in _PLANT_OPTIONAL:
                out[key] = val
            else:
                raise ConfigError(f"unknown configuration key '{where}'")
        elif isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"'{where}' must be a mapping")
            out[key] = _merge(base[key], val, where + ".")
        else:
            out[key] = val
    return out


def _check_code(name, code):
    if not isinstance(code, dict):
        raise ConfigError(f"code '{name}' must be a mapping")
    extra = set(code) - _CODE_KEYS
    if extra:
        raise ConfigError(f"unknown key(s) {sorted(extra)} in code '{name}'")
    missing = {"construction", "k", "k_prime", "delta"} - set(code)
    if missing:
        raise ConfigError(f"code '{name}' lacks {sorted(missing)}")
    if code["construction"] not in sim.CONSTRUCTIONS:
        raise ConfigError(f"code '{name}': unknown construction {code['construction']!r}")


def load_config(path: str | None) -> dict:
    cfg = default_config()
    if path is None:
        return cfg
    try:
        with open(path) as fh:
            user = yaml.safe_load(fh) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read configuration {path}: {exc}") from exc
    if not isinstance(user, dict):
        raise ConfigError("configuration root must be a mapping")
    return _merge(cfg, user)


def parse_grid(text: str) -> np.ndarray:
    try:
        start, stop, step = (float(x) for x in str(text).split(":"))
    except ValueError:
        raise ConfigError(f"grid must look like start:stop:step, got {text!r}") from None
    if step <= 0 or stop < start:
        raise ConfigError(f"invalid grid {text!r}")
    n = int(math.floor((stop - start) / step + 1e-9)) + 1
    return np.round(start + step * np.arange(n), 12)


# ------------------------------------------------------------------- model


def _tf(spec):
    num, den = spec
    return lti.TransferFunction(num, den)


def build_loop(cfg: dict) -> lti.ClosedLoopSystem:
    """Loop with beta calibrated to ``plant.sigma_v2`` at noise ``calib_delta**2/12``."""
    p = cfg["plant"]
    if "plant_num" in p:
        plant = lti.GeneralizedPlant.from_siso(lti.TransferFunction(p["plant_num"], p["plant_den"]))
        try:
            F, L_w, L_y = _tf(p["F"]), _tf(p["L_w"]), _tf(p["L_y"])
        except KeyError as exc:
            raise ConfigError(f"custom plant needs filter {exc}") from None
        loop = lti.ClosedLoopSystem(plant, F, L_w, L_y)
    else:
        loop = lti.example_plant(float(p["s_pole"]))
    return lti.calibrate_beta(loop, float(p["sigma_v2"]), float(p["calib_delta"]) ** 2 / 12)


def design_metrics(loop, sigma_v2: float) -> lti.LoopMetrics:
    """Metrics of ``loop`` rescaled so that the quantizer input variance is ``sigma_v2``."""
    m = lti.loop_metrics(loop)
    if m.snorm <= 0:
        return m
    return lti.loop_metrics(lti.calibrate_beta(loop, sigma_v2, sigma_v2 / (2 * m.snorm)))


def code_params(cfg: dict, name: str) -> dict:
    try:
        c = dict(cfg["codes"][name])
    except KeyError:
        raise ConfigError(f"unknown code '{name}'") from None
    c.setdefault("r", 1)
    return c


def code_profile(c: dict, sigma_v2: float) -> mdc.SideDistortionProfile:
    k, d2 = int(c["k"]), float(c["delta"]) ** 2 / 12
    if c["construction"] == "md":
        return mdc.sigma2_profile(mdc.LatticeParams(float(c["delta"]), int(c["r"]), k), sigma_v2)
    ell = np.arange(1, k + 1)
    side = d2 / ell if c["construction"] == "independent" else np.full(k, d2)
    return mdc.SideDistortionProfile(np.r_[sigma_v2, side], 1.0)


def code_spec(c: dict, sigma_v2: float, rho: float = 0.0) -> StabilizingCodeSpec:
    return StabilizingCodeSpec(int(c["k"]), int(c["k_prime"]), c["construction"],
                               code_profile(c, sigma_v2), rho)


def sim_config(cfg: dict, loop, c: dict, p_loss: float, seed: int) -> sim.SimulationConfig:
    s = cfg["simulation"]
    return sim.SimulationConfig(
        loop=loop, construction=c["construction"], k=int(c["k"]), delta=float(c["delta"]),
        channel=ErasureDistribution(float(p_loss), int(c["k"])), horizon=int(s["horizon"]),
        seed=int(seed), r=int(c["r"]), decoder_on_empty=s["decoder_on_empty"],
        coder=s["coder"], warmup=int(s["warmup"]),
    )


# ----------------------------------------------------------------- output


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.9g}"
    return str(v)


def to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    if rows:
        w = csv.writer(buf, lineterminator="\n")
        cols = list(rows[0])
        w.writerow(cols)
        for r in rows:
            w.writerow([_fmt(r.get(c, "")) for c in cols])
    return buf.getvalue()


def emit(text: str, out: str | None):
    if out is None:
        sys.stdout.write(text)
        return
    d = os.path.dirname(os.path.abspath(out))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".stabcodes-", suffix=".csv")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, out)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# --------------------------------------------------------------- commands


def cmd_assign(r: int, k: int) -> tuple[list[dict], float]:
    try:
        assign = mdc.solve_assignment(mdc.LatticeParams(1.0, int(r), int(k)))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    rows = []
    for b, *a in assign.rows():
        row = {"b": b}
        row.update({f"a{j + 1}": x for j, x in enumerate(a)})
        row["cost"] = abs(b - sum(a) / len(a))
        rows.append(row)
    return rows, assign.cost


def cmd_design(cfg: dict) -> list[dict]:
    d = cfg["design"]
    loop = build_loop(cfg)
    sv2 = float(cfg["plant"]["design_sigma_v2"])
    m = lti.loop_metrics(loop)
    k, kp, r = int(d["k"]), int(d["k_prime"]), int(d.get("r") or 1)
    con, rho, margin = d["construction"], float(d["rho"]), float(d["margin"])
    if not 1 <= kp <= k:
        raise ConfigError("design needs 1 <= k_prime <= k")
    if con not in ("md", "independent"):
        raise ConfigError("design construction must be 'md' or 'independent'")
    snorm = m.snorm
    threshold = sv2 / snorm if snorm > 0 else math.inf

    def side_var(delta):
        c = {"construction": con, "k": k, "delta": delta, "r": r}
        return float(code_profile(c, sv2).sigma2[kp])

    if d.get("delta") is not None:
        delta = float(d["delta"])
    elif math.isinf(threshold):
        delta = math.sqrt(12 * sv2)
    else:
        delta = math.sqrt(threshold / (margin * side_var(1.0)))
    s2 = side_var(delta)
    accepted = s2 * margin < threshold
    m_design = design_metrics(loop, sv2)
    try:
        b1 = stability.lemma1_variance_bound(m_design, kp)
        b5 = stability.lemma5_variance_bound(m_design, kp, rho)
    except ValueError:
        b1 = b5 = math.inf
    if con == "md":
        with np.errstate(all="ignore"):
            rs = mdc.sumrate_approx(mdc.LatticeParams(delta, r, k), sv2)
    else:
        rs = k * (0.5 * math.log2(2 * math.pi * math.e * (sv2 + delta**2 / 12)) - math.log2(delta))
    eta_pred = stability.practical_efficiency(sv2, delta, rs) if rs > 0 else math.nan
    eta_l3 = stability.lemma3_efficiency(k, kp, snorm) if snorm > 0 else 1.0
    report = {
        "k": k, "k_prime": kp, "construction": con, "r": r, "delta": delta,
        "delta_s": delta * r, "snorm": snorm, "min_snr": snorm,
        "min_rate": 0.5 * math.log2(1 + snorm), "sigma_v2": sv2,
        "lemma1_bound": b1, "lemma5_bound": b5, "rho": rho,
        "sigma2_kprime": s2, "snr_kprime": sv2 / s2, "margin": margin,
        "predicted_sumrate": rs, "eta_practical": eta_pred, "eta_lemma3": eta_l3,
        "accepted": accepted,
    }
    if not accepted:
        raise InfeasibleDesign(
            f"sigma^2(k')={s2:.6g} does not meet sigma_v^2/||S-1||^2={threshold:.6g} "
            f"with margin {margin:g}"
        )
    return [report]


def cmd_stability(cfg: dict, grid) -> list[dict]:
    st = cfg["stability"]
    c = code_params(cfg, st["code"])
    loop = build_loop(cfg)
    sv2 = float(cfg["plant"]["design_sigma_v2"])
    m = lti.loop_metrics(loop)
    spec = code_spec(c, sv2)
    k, kp = spec.k, spec.k_prime
    et = st["empty_term"]

    def mss_at(p):
        return stability.mss_spectral_test(stability.build_mjls(loop, spec, ErasureDistribution(p, k)))

    crit_avg = stability.avg_variance_test(spec, ErasureDistribution(0.0, k), m, sv2, et).critical_p
    crit_mss = stability.critical_loss(lambda p: mss_at(p).stable)
    m_design = design_metrics(loop, sv2)
    b1 = stability.lemma1_variance_bound(m_design, kp)
    splus = stability.s_plus_one_norm(loop)
    rows = []
    for p in grid:
        dist = ErasureDistribution(float(p), k)
        av = stability.avg_variance_test(spec, dist, m, sv2, et)
        src = stability.avg_variance_test(spec, dist, m, sv2, "source")
        ms = mss_at(float(p))
        rows.append({
            "k": k, "k_prime": kp, "rho": spec.rho, "p_loss": float(p),
            "avg_lhs": av.lhs, "avg_rhs": av.rhs, "avg_stable": av.stable,
            "avg_lhs_source": src.lhs, "avg_stable_source": src.stable,
            "rho_A": ms.rho_A, "mss_stable": ms.stable,
            "avg_critical": crit_avg, "mss_critical": crit_mss,
            "lemma1_bound": b1, "lemma5_bound": stability.lemma5_variance_bound(m_design, kp, spec.rho),
            "lemma2_sumrate": stability.lemma2_sumrate_lb(k, kp, m.snorm),
            "lemma2_sumrate_splus": stability.lemma2_sumrate_lb(k, kp, splus),
            "eta_lemma3": stability.lemma3_efficiency(k, kp, m.snorm),
        })
    return rows


def _run_point(args):
    cfg, loop, c, p, seed = args
    sc = sim_config(cfg, loop, c, p, seed)
    res = sim.run(sc)
    return res, sim.theory_sigma_e2_db(sc)


def _map(fn, items, jobs):
    if jobs <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


def cmd_simulate(cfg: dict, grid, seed: int) -> tuple[list[dict], bool]:
    loop = build_loop(cfg)
    names = list(cfg["simulate"]["codes"])
    codes = {n: code_params(cfg, n) for n in names}
    tasks = [(cfg, loop, codes[n], float(p), sim.derive_seed(seed, i))
             for n in names for i, p in enumerate(grid)]
    results = _map(_run_point, tasks, int(cfg["simulation"]["jobs"]))
    rows = [{"p_loss": float(p)} for p in grid]
    all_div = True
    it = iter(results)
    for n in names:
        for row in rows:
            res, th = next(it)
            row[f"{n}_sigma_e2_db"] = res.sigma_e2_db
            row[f"{n}_sumrate"] = res.sumrate
            row[f"{n}_diverged"] = res.diverged
            row[f"{n}_theory_db"] = th
            all_div &= res.diverged
    return rows, all_div


def cmd_tables(cfg: dict, which: str, seed: int) -> list[dict]:
    t = cfg["tables"]
    if which == "distortion":
        d = t["distortion"]
        return sim.measure_distortion_table(int(d["r"]), int(d["k"]), d["deltas"],
                                            int(d["samples"]), seed)
    if which == "efficiency":
        loop = build_loop(cfg)
        names = list(t["efficiency"]["codes"])
        tasks = [(cfg, loop, code_params(cfg, n), 0.0, seed) for n in names]
        results = _map(_run_point, tasks, int(cfg["simulation"]["jobs"]))
        rows = []
        for n, (res, _) in zip(names, results):
            c = code_params(cfg, n)
            theory = math.nan
            if c["construction"] == "md":
                theory = mdc.sumrate_approx(
                    mdc.LatticeParams(float(c["delta"]), int(c["r"]), int(c["k"])), res.sigma_v2)
            rows.append({
                "code": n, "construction": c["construction"], "k": int(c["k"]),
                "k_prime": int(c["k_prime"]),
                "eta": stability.practical_efficiency(res.sigma_v2, float(c["delta"]), res.sumrate),
                "sumrate": res.sumrate, "sumrate_theory": theory, "sigma_v2": res.sigma_v2,
                "sigma_e2_db": res.sigma_e2_db,
            })
        return rows
    raise ConfigError(f"unknown table {which!r}")


# -------------------------------------------------------------------- main


def _parser():
    ap = argparse.ArgumentParser(prog="stabcodes", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", metavar="PATH")
    common.add_argument("--grid", metavar="START:STOP:STEP")
    sub = ap.add_subparsers(dest="command", required=True)
    a = sub.add_parser("assign", parents=[common], help="index-assignment table")
    a.add_argument("--r", type=int)
    a.add_argument("--k", type=int)
    d = sub.add_parser("design", parents=[common], help="design report for a stabilizing code")
    d.add_argument("--k", type=int)
    d.add_argument("--k-prime", type=int)
    d.add_argument("--r", type=int)
    d.add_argument("--delta", type=float)
    d.add_argument("--construction", choices=("md", "independent"))
    d.add_argument("--margin", type=float)
    s = sub.add_parser("stability", parents=[common], help="stability tests over a loss grid")
    s.add_argument("--code")
    m = sub.add_parser("simulate", parents=[common], help="closed-loop sweep over a loss grid")
    m.add_argument("--horizon", type=int)
    m.add_argument("--jobs", type=int)
    t = sub.add_parser("tables", parents=[common], help="regenerate a table")
    t.add_argument("which", choices=("distortion", "efficiency"))
    t.add_argument("--horizon", type=int)
    t.add_argument("--samples", type=int)
    return ap


def _override(cfg, section, **kw):
    for key, val in kw.items():
        if val is not None:
            cfg[section][key] = val


def main(argv=None) -> int:
    """Run one subcommand; configuration errors propagate to :func:`run_cli`."""
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        seed = int(args.seed if args.seed is not None else cfg["seed"])
        cmd = args.command
        if cmd == "assign":
            _override(cfg, "assign", r=args.r, k=args.k)
            rows, cost = cmd_assign(cfg["assign"]["r"], cfg["assign"]["k"])
            print(f"total_cost={cost:.9g}", file=sys.stderr)
        elif cmd == "design":
            _override(cfg, "design", k=args.k, k_prime=args.k_prime, r=args.r, delta=args.delta,
                      construction=args.construction, margin=args.margin)
            rows = cmd_design(cfg)
        elif cmd == "stability":
            _override(cfg, "stability", code=args.code, grid=args.grid)
            rows = cmd_stability(cfg, parse_grid(cfg["stability"]["grid"]))
        elif cmd == "simulate":
            _override(cfg, "simulation", horizon=args.horizon, jobs=args.jobs)
            _override(cfg, "simulate", grid=args.grid)
            rows, all_div = cmd_simulate(cfg, parse_grid(cfg["simulate"]["grid"]), seed)
            emit(to_csv(rows), args.out)
            return EXIT_DIVERGED if all_div else EXIT_OK
        else:
            _override(cfg, "simulation", horizon=args.horizon)
            if args.samples is not None:
                cfg["tables"]["distortion"]["samples"] = args.samples
            rows = cmd_tables(cfg, args.which, seed)
    except InfeasibleDesign as exc:
        print(f"infeasible design: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    emit(to_csv(rows), args.out)
    return EXIT_OK


def run_cli(argv=None) -> int:
    try:
        return main(argv)
    except (ConfigError, ValueError, KeyError, TypeError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def entry():
    sys.exit(run_cli())


if __name__ == "__main__":
    entry()
