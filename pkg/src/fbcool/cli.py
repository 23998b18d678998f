"""Command-line entry point: ``fbcool <command> --config FILE --out DIR``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure
(unstable loop, no stable gain, fit did not converge).
"""
from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import config as cfgmod
from .feedback import (
    NoStableRegionError,
    cooling_limits,
    damping_scale,
    default_gains,
    heating_curve,
    nbar_est,
    optimal_gain,
    stability_check,
)
from .inference import FITTERS, make_rng, synth_periodogram
from .inference.estimators import classical_phase_noise_spectrum
from .inference.synth import amplitude_noise_data, multiplicative_noise, ringdown_trace
from .io import read_csv, write_csv, write_json, write_manifest
from .params import HBAR, TWO_PI, ParameterError, to_hz
from .response import chi_m, gain_for_damping, h_total
from .sideband import gamma_opt, nbar_min, sideband_sweep
from .spectra import (
    InstabilityError,
    closed_loop_occupancy,
    noise_budget,
    sql_metrics,
    sxx_closed,
    sxx_open,
    syy_closed,
    syy_open,
)


class NumericalFailure(RuntimeError):
    pass


# Input CSV schema for ``fit --data``: x column, y column.
DATA_COLUMNS = {
    "lorentzian": ("frequency_hz", "psd"),
    "closed-loop": ("frequency_hz", "psd"),
    "g0-calibration": ("gamma_opt_hz", "variance"),
    "heating": ("time_s", "nbar"),
    "ringdown": ("time_s", "amplitude"),
    "amplitude-noise": ("power_w", "variance"),
    "phase-noise": ("detuning_hz", "variance"),
}
# x columns given in Hz are converted to rad/s before fitting
_ANGULAR_X = {"g0-calibration", "phase-noise"}


class Context:
    def __init__(self, args, config: cfgmod.Config):
        self.args = args
        self.config = config
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.seed = args.seed
        self.files: list[Path] = []

    @property
    def hash(self) -> str:
        return self.config.hash

    def params(self, cooperativity=None):
        return self.config.params(cooperativity)

    def controller(self, params):
        return self.config.controller(params, self.args.phase)

    def csv(self, name, columns, **extra):
        self.files.append(write_csv(self.out / name, columns, self.hash, self.seed, **extra))

    def json(self, name, payload):
        self.files.append(write_json(self.out / name, payload, self.hash, self.seed))


def _phase_arg(text):
    if text == "cool":
        return text
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("phase must be 'cool' or a number in radians") from None


# ---------------------------------------------------------------- commands


def cmd_budget(ctx: Context):
    p = ctx.params()
    budget = noise_budget(p)
    rates = p.rates
    out = {"budget": budget.as_dict(),
           "eta": rates.eta,
           "eta_budget": budget.eta,
           "c_q": rates.c_q,
           "n_th": p.n_th,
           "x_zpf_m": p.zero_point.x_zpf,
           "p_zpf": p.zero_point.p_zpf,
           "gamma_meas_hz": to_hz(rates.gamma_meas),
           "gamma_qba_hz": to_hz(rates.gamma_qba),
           "gamma_th_hz": to_hz(rates.gamma_th),
           "quality_factor": p.mode.quality_factor}
    if rates.c_q > 0:
        out["nbar_est"] = nbar_est(p.eta_det, rates.c_q) if p.eta_det > 0 else math.inf
    if p.aux is not None:
        out["nbar_min_sideband"] = nbar_min(p.aux.kappa, p.aux.detuning, p.mode.omega_m)
    if math.isfinite(budget.n_tot) and budget.n_imp > 0:
        sql = sql_metrics(p)
        out["sql"] = {"minimum_ratio": sql.minimum, "heisenberg_product": sql.analytic_minimum,
                      "offset_hz": to_hz(sql.offset), "offset_below_hz": to_hz(sql.offset_below)}
    ctx.json("budget.json", out)


def _closed_loop_controller(ctx, p):
    ctrl = ctx.controller(p)
    if ctrl.gain == 0:
        ctrl = ctrl.with_gain(optimal_gain(p, ctrl, threads=ctx.args.threads).gain)
    return ctrl


def cmd_spectrum(ctx: Context):
    p = ctx.params()
    ctrl = _closed_loop_controller(ctx, p)
    span = ctx.config.get("sweep", "spectrum_span_hz", 30e3)
    n = ctx.config.get("sweep", "spectrum_points", 6001)
    f = np.linspace(to_hz(p.mode.omega_m) - span, to_hz(p.mode.omega_m) + span, n)
    omega = TWO_PI * f
    report = stability_check(p, ctrl)
    if not report.stable:
        raise InstabilityError(f"closed loop is unstable: {report.diagnostic}", report)
    sql = 2.0 * HBAR * np.abs(chi_m(p.loaded_mode, omega))
    ctx.csv("spectrum.csv", {
        "frequency_hz": f,
        "syy_open": syy_open(p, omega).values,
        "sxx_open": sxx_open(p, omega).values,
        "syy_closed": syy_closed(p, ctrl, omega, check_stability=False).values,
        "sxx_closed": sxx_closed(p, ctrl, omega, check_stability=False).values,
        "syy_sql": sql,
    }, unit="m^2/Hz")
    f_tf = np.logspace(3, 8, 2001)
    h = h_total(ctrl, TWO_PI * f_tf)
    ctx.csv("transfer.csv", {"frequency_hz": f_tf, "re": h.real, "im": h.imag,
                             "magnitude": np.abs(h), "phase_rad": np.angle(h)}, unit="N/m")
    budget = noise_budget(p)
    nbar, err = closed_loop_occupancy(p, ctrl)
    ctx.json("spectrum.json", {"budget": budget.as_dict(), "gain": ctrl.gain, "phase": ctrl.phase,
                               "nbar_open": budget.n_tot - 0.5, "nbar_closed": nbar, "nbar_closed_error": err})


def cmd_sideband(ctx: Context):
    p = ctx.params()
    if p.aux is None:
        raise cfgmod.ConfigError(["sideband needs an [aux] section"])
    g_ref = ctx.config.hz("aux", "coupling_ref_hz")
    p_ref = ctx.config.get("aux", "power_ref_w")
    powers = ctx.config.get("sweep", "powers_w")
    missing = [k for k, v in (("aux.coupling_ref_hz", g_ref), ("aux.power_ref_w", p_ref), ("sweep.powers_w", powers)) if v is None]
    if missing:
        raise cfgmod.ConfigError([f"sideband needs {k}" for k in missing])
    sweep = sideband_sweep(p, powers, g_ref, p_ref)
    ctx.csv("sideband.csv", {"power_w": sweep["power"], "gamma_opt_hz": to_hz(sweep["gamma_opt"]),
                             "spring_shift_hz": to_hz(sweep["spring_shift"]), "nbar": sweep["nbar"],
                             "gamma_tot_per_s": sweep["gamma_tot"]})
    ctx.json("sideband.json", {"nbar_min": nbar_min(p.aux.kappa, p.aux.detuning, p.mode.omega_m),
                               "n_th": p.n_th})


def _sweep_gains(ctx, p, ctrl):
    lo = ctx.config.get("sweep", "damping_min_hz")
    hi = ctx.config.get("sweep", "damping_max_hz")
    n = ctx.config.get("sweep", "points", 41)
    if lo is None or hi is None:
        return default_gains(p, ctrl, n=n)
    damping = TWO_PI * np.logspace(math.log10(lo), math.log10(hi), n)
    return np.array([gain_for_damping(p.mode, ctrl, d) for d in damping])


def cmd_sweep_gain(ctx: Context):
    p = ctx.params()
    ctrl = ctx.controller(p)
    gains = _sweep_gains(ctx, p, ctrl)
    best = optimal_gain(p, ctrl, gains=gains, threads=ctx.args.threads)
    sweep = best.sweep
    ctx.csv("sweep_gain.csv", {
        "g_fb": sweep.gains,
        "feedback_damping_hz": [to_hz(pt.gamma_eff - p.mode.gamma_m - p.gamma_opt) for pt in sweep.points],
        "gamma_eff_hz": [to_hz(pt.gamma_eff) for pt in sweep.points],
        "nbar": sweep.nbar,
        "stable": sweep.stable,
        "squashing": [pt.squashing for pt in sweep.points],
    })
    out = {"optimum": {"g_fb": best.gain, "nbar": best.nbar, "error": best.error,
                       "gamma_eff_hz": to_hz(best.gamma_eff)},
           "phase": ctrl.phase, "c_q": p.rates.c_q, "nbar_est": nbar_est(p.eta_det, p.rates.c_q)}
    if p.aux is not None:
        n_sb = nbar_min(p.aux.kappa, p.aux.detuning, p.mode.omega_m)
        out["nbar_min_sideband"] = n_sb
        out["advantage_db"] = 10.0 * math.log10(n_sb / best.nbar)
    ctx.json("sweep_gain.json", out)


def cmd_limits(ctx: Context):
    p = ctx.params()
    ctrl = ctx.controller(p)
    c_qs = ctx.config.get("sweep", "cooperativities", [0.1, 1.0, 10.0])
    lim = cooling_limits(p, ctrl, c_qs, threads=ctx.args.threads)
    ctx.csv("limits.csv", {"c_q": lim["c_q"], "nbar_filter_min": lim["nbar_filter_min"], "nbar_est": lim["nbar_est"]})


def _heating_data(ctx):
    h = ctx.config.section("heating")
    t = np.arange(h.get("t_start_s", -0.02), h.get("t_stop_s", 0.1), h.get("dt_s", 2e-4))
    truth = heating_curve(t, h.get("n_i", 2.0), h.get("n_f", 60.0), h.get("gamma_eff_per_s", 22.8))
    y = multiplicative_noise(truth, h.get("relative_noise", 0.05), make_rng(ctx.seed, 3))
    return t, y, truth


def cmd_heating(ctx: Context):
    t, y, truth = _heating_data(ctx)
    fitter = FITTERS["heating"]().fit(t, y)
    ctx.csv("heating.csv", {"time_s": t, "nbar_model": truth, "nbar_measured": y, "nbar_fit": fitter.predict(t)})
    ctx.json("heating.json", {"fit": fitter.result_.as_dict()})
    _require_converged(fitter.result_)


def _require_converged(result):
    if not result.converged:
        raise NumericalFailure(f"fit '{result.model}' did not converge: {result.message}")


# ---- synthetic datasets for fit <model>


def _synthetic(ctx, model, p):
    """(x, y, fitter kwargs, truth) for ``model`` from the config and seed."""
    fit_cfg = ctx.config.section("fit")
    averages = fit_cfg.get("averages", 50)
    objective = fit_cfg.get("objective", "whittle")
    rng_stream = sorted(FITTERS).index(model) + 10
    if model in ("lorentzian", "closed-loop"):
        span = fit_cfg.get("span_hz", 20e3)
        bins = fit_cfg.get("bins", 20001)
        f = np.linspace(to_hz(p.mode.omega_m) - span, to_hz(p.mode.omega_m) + span, bins)
        if model == "lorentzian":
            expected = syy_open(p, TWO_PI * f)
            kwargs = {"mode": p.mode, "averages": averages, "objective": objective}
            budget = noise_budget(p)
            truth = {"omega_eff": p.loaded_mode.omega_m, "gamma_eff": p.loaded_mode.gamma_m,
                     "n_tot": budget.n_tot, "n_imp": budget.n_imp}
        else:
            ctrl = ctx.controller(p)
            if ctrl.gain == 0:
                ctrl = ctrl.with_gain(gain_for_damping(p.mode, ctrl, damping_scale(p)))
            expected = syy_closed(p, ctrl, TWO_PI * f)
            kwargs = {"params": p, "controller": ctrl, "averages": averages, "objective": objective}
            budget = noise_budget(p)
            truth = {"g_fb": ctrl.gain, "phase": ctrl.phase, "n_imp": budget.n_imp, "n_tot": budget.n_tot}
        data = synth_periodogram(expected, averages, ctx.seed, rng_stream)
        return f, data.realized.values, kwargs, truth
    rng = make_rng(ctx.seed, rng_stream)
    if model == "g0-calibration":
        kwargs, truth, x, clean = _g0_design(ctx, p)
        y = multiplicative_noise(clean, ctx.config.get("calibration", "relative_noise", 0.06), rng)
        return to_hz(x), y, kwargs, truth
    if model == "heating":
        t, y, _ = _heating_data(ctx)
        h = ctx.config.section("heating")
        truth = {"n_i": h.get("n_i", 2.0), "n_f": h.get("n_f", 60.0), "gamma_eff": h.get("gamma_eff_per_s", 22.8)}
        return t, y, {}, truth
    if model == "ringdown":
        r = ctx.config.section("ringdown")
        rate = p.mode.omega_m / (2.0 * p.mode.quality_factor)
        t = np.linspace(0.0, r.get("time_constants", 3.0) / rate, r.get("samples", 900))
        y = ringdown_trace(t, 1.0, rate, r.get("relative_noise", 0.005), rng)
        return t, y, {"omega_m": p.mode.omega_m}, {"x0": 1.0, "decay_rate": rate}
    noise = ctx.config.section("noise")
    c_xx = noise.get("classical_ratio", 8e-4)
    if model == "amplitude-noise":
        powers = np.asarray(noise.get("powers_w", [1e-6, 1e-5, 1e-4]), dtype=float)
        ref = noise.get("reference_power_w", 1e-6)
        y = amplitude_noise_data(powers, noise.get("shot_slope", 1.0), c_xx, ref, noise.get("offset", 0.0),
                                 noise.get("relative_noise", 0.01), rng)
        return powers, y, {"reference_power": ref}, {"classical_ratio": c_xx}
    if model == "phase-noise":
        kwargs = _phase_kwargs(ctx)
        d_hz = np.asarray(noise.get("detunings_hz", [-2e6, 0.0, 2e6]), dtype=float)
        clean = classical_phase_noise_spectrum(TWO_PI * d_hz, c_yy=noise.get("c_yy", 0.05), **kwargs)
        y = multiplicative_noise(clean, noise.get("relative_noise", 0.01), rng)
        return d_hz, y, kwargs, {"c_yy": noise.get("c_yy", 0.05)}
    raise cfgmod.ConfigError([f"unknown fit model {model!r}"])


def _phase_kwargs(ctx):
    noise = ctx.config.section("noise")
    return {"omega": TWO_PI * noise.get("frequency_hz", 1.14e6), "eta_c": noise.get("filter_eta_c", 0.5),
            "kappa": TWO_PI * noise.get("filter_kappa_hz", 2.44e6), "c_xx": noise.get("classical_ratio", 8e-4)}


def _g0_design(ctx, p):
    if p.aux is None or ctx.config.get("aux", "coupling_ref_hz") is None:
        raise cfgmod.ConfigError(["g0 calibration needs [aux] with coupling_ref_hz and power_ref_w"])
    cal = ctx.config.section("calibration")
    powers = np.logspace(math.log10(cal.get("power_min_w", 2.5e-8)), math.log10(cal.get("power_max_w", 7.5e-5)),
                         cal.get("points", 15))
    g_ref = ctx.config.hz("aux", "coupling_ref_hz")
    p_ref = ctx.config.get("aux", "power_ref_w", 1e-6)
    x = gamma_opt(p.aux.kappa, p.aux.detuning, g_ref * np.sqrt(powers / p_ref), p.mode.omega_m)
    kwargs = {"k_cal": cal.get("k_cal", 1.0), "omega_m": p.mode.omega_m, "gamma_m": p.mode.gamma_m,
              "nbar_min": nbar_min(p.aux.kappa, p.aux.detuning, p.mode.omega_m)}
    truth = {"g0": TWO_PI * cal.get("g0_hz", ctx.config.get("probe", "g0_hz")),
             "temperature": cal.get("temperature_k", ctx.config.get("bath", "temperature_k", 11.0))}
    clean = FITTERS["g0-calibration"](**kwargs)._model(x, [truth["g0"], truth["temperature"]])
    return kwargs, truth, x, clean


def _fitter_kwargs(ctx, model, p):
    fit_cfg = ctx.config.section("fit")
    averages = fit_cfg.get("averages", 50)
    objective = fit_cfg.get("objective", "whittle")
    if model == "lorentzian":
        return {"mode": p.mode, "averages": averages, "objective": objective}
    if model == "closed-loop":
        ctrl = ctx.controller(p)
        if ctrl.gain == 0:
            ctrl = ctrl.with_gain(gain_for_damping(p.mode, ctrl, damping_scale(p)))
        return {"params": p, "controller": ctrl, "averages": averages, "objective": objective}
    if model == "g0-calibration":
        return _g0_design(ctx, p)[0]
    if model == "ringdown":
        return {"omega_m": p.mode.omega_m}
    if model == "amplitude-noise":
        return {"reference_power": ctx.config.get("noise", "reference_power_w", 1e-6)}
    if model == "phase-noise":
        return _phase_kwargs(ctx)
    return {}


def _run_fit(ctx: Context, model: str, stem: str):
    p = ctx.params()
    if ctx.args.data:
        cols = DATA_COLUMNS[model]
        try:
            table = read_csv(ctx.args.data, cols)
        except (OSError, ValueError) as exc:
            raise cfgmod.ConfigError([str(exc)]) from exc
        x, y = table[cols[0]], table[cols[1]]
        kwargs, truth = _fitter_kwargs(ctx, model, p), None
    else:
        x, y, kwargs, truth = _synthetic(ctx, model, p)
        ctx.csv(f"{stem}_data.csv", {DATA_COLUMNS[model][0]: x, DATA_COLUMNS[model][1]: y})
    x_fit = TWO_PI * np.asarray(x) if model in _ANGULAR_X else np.asarray(x)
    fitter = FITTERS[model](**kwargs).fit(x_fit, y)
    ctx.csv(f"{stem}_curve.csv", {DATA_COLUMNS[model][0]: x, "model": fitter.predict(x_fit)})
    report = fitter.result_.as_dict()
    report["seed"] = ctx.seed if ctx.args.data is None else None
    payload = {"fit": report}
    if truth is not None:
        payload["truth"] = truth
    if model == "g0-calibration":
        payload["g0_hz"] = to_hz(fitter.result_["g0"])
        payload["g0_hz_error"] = to_hz(fitter.result_.error("g0"))
    ctx.json(f"{stem}.json", payload)
    _require_converged(fitter.result_)
    return fitter


def cmd_fit(ctx: Context):
    _run_fit(ctx, ctx.args.model, "fit_" + ctx.args.model.replace("-", "_"))


def cmd_calibrate_g0(ctx: Context):
    _run_fit(ctx, "g0-calibration", "calibrate_g0")


def cmd_noise(ctx: Context):
    amp = _run_fit(ctx, "amplitude-noise", "amplitude_noise")
    kwargs = _phase_kwargs(ctx)
    d_hz = np.linspace(-4e6, 4e6, 401)
    ctx.csv("phase_noise_model.csv", {
        "detuning_hz": d_hz,
        "shot_noise_only": classical_phase_noise_spectrum(TWO_PI * d_hz, kwargs["omega"], kwargs["eta_c"], kwargs["kappa"], 0.0, 0.0),
        "model": classical_phase_noise_spectrum(TWO_PI * d_hz, c_yy=ctx.config.get("noise", "c_yy", 0.05), **kwargs),
    }, unit="shot-noise-relative")
    phase = _run_fit(ctx, "phase-noise", "phase_noise")
    ctx.json("noise.json", {"classical_ratio": amp.result_.derived["classical_ratio"][0],
                            "c_yy": phase.result_["c_yy"]})


def cmd_validate(ctx: Context):
    print(f"{ctx.config.source}: ok (config hash {ctx.hash})")


COMMANDS = {
    "budget": cmd_budget,
    "spectrum": cmd_spectrum,
    "sideband": cmd_sideband,
    "sweep-gain": cmd_sweep_gain,
    "limits": cmd_limits,
    "heating": cmd_heating,
    "fit": cmd_fit,
    "calibrate-g0": cmd_calibrate_g0,
    "noise": cmd_noise,
    "validate": cmd_validate,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="TOML config (default: bundled paper.toml)")
    common.add_argument("--out", default="fbcool-out", help="output directory")
    common.add_argument("--seed", type=int, default=0, help="seed for synthetic data")
    common.add_argument("--threads", type=int, default=1, help="worker threads for sweeps")
    common.add_argument("--phase", type=_phase_arg, default=None, help="'cool' or controller phase in radians")
    parser = argparse.ArgumentParser(prog="fbcool", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"fbcool {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name == "fit":
            sp.add_argument("model", choices=sorted(FITTERS))
        if name in ("fit", "calibrate-g0"):
            sp.add_argument("--data", default=None, help="CSV input; synthetic data from the config otherwise")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if not hasattr(args, "data"):
        args.data = None
    try:
        config = cfgmod.load(args.config) if args.config else cfgmod.load_bundled()
        if args.threads < 1:
            raise cfgmod.ConfigError(["--threads must be >= 1"])
        ctx = Context(args, config)
        COMMANDS[args.command](ctx)
        if args.command != "validate":
            write_manifest(ctx.out, args.command, ctx.hash, ctx.seed, ctx.files)
    except cfgmod.ConfigError as exc:
        for line in exc.errors:
            print(f"config error: {line}", file=sys.stderr)
        return 2
    except ParameterError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (InstabilityError, NoStableRegionError, NumericalFailure, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
