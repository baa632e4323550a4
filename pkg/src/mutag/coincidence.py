"""Coincidence analysis: delay histograms, window fit, accidentals,
dead time, efficiency, and the rate report.

All rates carry absolute one-sigma errors.  Times are kept in seconds
for bookkeeping and microseconds for delays, matching the histogram
axes.  Records may overlap in time, so both the coincidence pairs and
the single-pulse counts are de-duplicated on their reconstructed global
peak times before any rate is formed.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

import numpy as np
from scipy.optimize import curve_fit

from .config import AnalysisConfig, RunConfig
from .pulses import select_pulses

TOP, CENTER, BOTTOM = 0, 1, 2

# two reconstructions of the same physical pulse from overlapping records
# land within a sample or two of each other; distinct pulses on one channel
# essentially never fall this close at the rates involved
DEDUP_TOLERANCE_US = 30.0

REPORT_SCHEMA_VERSION = 1


class AnalysisError(RuntimeError):
    """Analysis-stage failure that should surface with context."""


@dataclass
class DelayHistogram:
    """Bottom-minus-top peak delays for records with both pulses selected."""

    bin_edges_us: np.ndarray
    counts: np.ndarray
    n_pairs: int  # distinct pairs, including delays outside the binned range
    delays_us: np.ndarray

    @property
    def bin_width_us(self) -> float:
        return float(self.bin_edges_us[1] - self.bin_edges_us[0])

    @property
    def centers_us(self) -> np.ndarray:
        return 0.5 * (self.bin_edges_us[:-1] + self.bin_edges_us[1:])


@dataclass
class CoincidenceWindow:
    center_us: float
    half_width_us: float
    sigma_us: float = 0.0
    significance: float = 0.0

    @property
    def total_width_us(self) -> float:
        return 2.0 * self.half_width_us

    @property
    def total_width_s(self) -> float:
        return self.total_width_us * 1e-6


def _global_times_s(pulses: np.ndarray) -> np.ndarray:
    return pulses["t0_s"] + pulses["peak_time_us"] * 1e-6


def _best_per_record(pulses: np.ndarray, channel: int) -> dict[int, tuple[float, float]]:
    """record_id -> (global peak time, amplitude) of the largest pulse."""
    sub = pulses[pulses["channel"] == channel]
    times = _global_times_s(sub)
    best: dict[int, tuple[float, float]] = {}
    for rid, t, amp in zip(sub["record_id"], times, sub["amplitude"]):
        cur = best.get(rid)
        if cur is None or amp > cur[1]:
            best[int(rid)] = (float(t), float(amp))
    return best


def _dedup_times(times_s: np.ndarray, tol_us: float = DEDUP_TOLERANCE_US) -> np.ndarray:
    """Collapse times closer than tol to their first occurrence."""
    if times_s.size == 0:
        return times_s
    t = np.sort(times_s)
    keep = [t[0]]
    for x in t[1:]:
        if (x - keep[-1]) * 1e6 > tol_us:
            keep.append(x)
    return np.array(keep)


def coincidence_pairs(pulses: np.ndarray, threshold_sigma: float,
                      pair: tuple[int, int] = (TOP, BOTTOM)) -> np.ndarray:
    """(n, 2) global peak times for records with both channels selected.

    Per record the largest-amplitude selected pulse on each channel is
    paired; pairs repeated by overlapping records are collapsed.
    """
    sel = select_pulses(pulses, threshold_sigma)
    a = _best_per_record(sel, pair[0])
    b = _best_per_record(sel, pair[1])
    both = sorted(set(a) & set(b), key=lambda rid: a[rid][0])
    kept: list[tuple[float, float]] = []
    for rid in both:
        ta, tb = a[rid][0], b[rid][0]
        dup = False
        for ka, kb in reversed(kept):
            if (ta - ka) * 1e6 > DEDUP_TOLERANCE_US:
                break
            if abs(tb - kb) * 1e6 <= DEDUP_TOLERANCE_US:
                dup = True
                break
        if not dup:
            kept.append((ta, tb))
    return np.array(kept).reshape(-1, 2)


def build_delay_histogram(pulses: np.ndarray, acfg: AnalysisConfig,
                          pair: tuple[int, int] = (TOP, BOTTOM)) -> DelayHistogram:
    """Histogram of bottom-minus-top delays over distinct coincidence pairs."""
    pairs = coincidence_pairs(pulses, acfg.selection_threshold_sigma, pair)
    delays = (pairs[:, 1] - pairs[:, 0]) * 1e6 if pairs.size else np.zeros(0)
    half = acfg.delay_half_range_us
    nbins = int(round(2.0 * half / acfg.delay_bin_us))
    edges = -half + acfg.delay_bin_us * np.arange(nbins + 1)
    counts, _ = np.histogram(delays, bins=edges)
    return DelayHistogram(edges, counts, int(delays.size), delays)


def count_singles(pulses: np.ndarray, threshold_sigma: float) -> dict[int, int]:
    """Distinct selected pulses per channel, collapsing record overlap."""
    sel = select_pulses(pulses, threshold_sigma)
    out = {}
    for ch in (TOP, CENTER, BOTTOM):
        times = _global_times_s(sel[sel["channel"] == ch])
        out[ch] = int(_dedup_times(times).size)
    return out


def _gauss_flat(x, amp, mu, sigma, floor):
    return amp * np.exp(-0.5 * ((x - mu) / sigma) ** 2) + floor


def fit_coincidence_window(hist: DelayHistogram,
                           min_significance: float = 5.0) -> CoincidenceWindow:
    """Gaussian-plus-flat fit; the window is the fitted center +- 3 sigma."""
    x = hist.centers_us
    y = hist.counts.astype(float)
    if hist.n_pairs == 0 or y.max() <= 0:
        raise AnalysisError("empty delay histogram, no peak to fit")
    floor0 = float(np.median(y))
    amp0 = float(y.max() - floor0)
    mu0 = float(x[int(np.argmax(y))])
    sigma0 = 3.0 * hist.bin_width_us
    try:
        popt, pcov = curve_fit(
            _gauss_flat, x, y, p0=(max(amp0, 1e-3), mu0, sigma0, max(floor0, 0.0)),
            bounds=([0.0, x[0], hist.bin_width_us / 10.0, 0.0],
                    [np.inf, x[-1], x[-1] - x[0], np.inf]))
    except RuntimeError as exc:
        raise AnalysisError(
            f"no significant coincidence peak: fit did not converge ({exc})") from exc
    amp, mu, sigma, _ = popt
    amp_err = np.sqrt(pcov[0, 0])
    significance = amp / amp_err if amp_err > 0 else 0.0
    if not np.isfinite(significance) or significance < min_significance:
        raise AnalysisError(
            f"coincidence peak significance {significance:.1f} below {min_significance:.0f}")
    # sample-quantized delays can pile into a single bin, collapsing the
    # fitted sigma below what binned data can resolve; fold the bin
    # resolution in so the window still covers the true peak
    sigma_eff = float(np.hypot(sigma, hist.bin_width_us / np.sqrt(12.0)))
    return CoincidenceWindow(float(mu), 3.0 * sigma_eff, sigma_eff,
                             float(significance))


def analytic_accidentals(r_t: float, r_b: float, window_s: float) -> float:
    """Accidental coincidence rate of two independent Poisson streams."""
    if r_t < 0 or r_b < 0 or window_s < 0:
        raise ValueError("rates and window must be non-negative")
    return r_t * r_b * window_s


def sideband_accidentals(hist: DelayHistogram, sideband_us: tuple[float, float],
                         window_width_us: float, livetime_s: float) -> tuple[float, float]:
    """Accidental rate scaled from the flat sideband of the delay histogram.

    Zero counts return rate 0 with a one-count upper-limit error.
    """
    lo, hi = sideband_us
    if livetime_s <= 0:
        raise ValueError("livetime must be positive")
    if hi <= lo:
        raise AnalysisError("sideband range is empty")
    inside = (hist.bin_edges_us[:-1] >= lo) & (hist.bin_edges_us[1:] <= hi)
    if not inside.any():
        raise AnalysisError(
            f"sideband ({lo}, {hi}) us contains no complete histogram bin")
    n = float(hist.counts[inside].sum())
    width = float(hist.bin_width_us * inside.sum())
    scale = window_width_us / width / livetime_s
    return n * scale, max(n, 1.0) ** 0.5 * scale


def extract_muon_rate(r_tb_total: tuple[float, float],
                      r_tb_gamma_gamma: tuple[float, float],
                      r_acc: tuple[float, float]) -> tuple[float, float]:
    """Total minus gamma-induced minus accidental, errors in quadrature."""
    value = r_tb_total[0] - r_tb_gamma_gamma[0] - r_acc[0]
    error = float(np.sqrt(r_tb_total[1] ** 2 + r_tb_gamma_gamma[1] ** 2 + r_acc[1] ** 2))
    return value, error


def dead_time_fraction(r_gamma_coinc: float, r_acc: float, veto_s: float) -> float:
    """Fraction of livetime lost to vetoes opened by non-muon coincidences."""
    if r_gamma_coinc < 0 or r_acc < 0 or veto_s < 0:
        raise ValueError("rates and veto must be non-negative")
    return (r_gamma_coinc + r_acc) * veto_s


def tagging_efficiency(tagged: int, total: int) -> tuple[float, float]:
    """Fraction of tagged events with the binomial error."""
    if total <= 0:
        raise ValueError("total must be positive")
    if tagged < 0 or tagged > total:
        raise ValueError("tagged must lie in [0, total]")
    eff = tagged / total
    return eff, float(np.sqrt(eff * (1.0 - eff) / total))


def _entry(value, error=None, origin="MEASURED", **extra) -> dict:
    out = {"value": value, "origin": origin}
    if error is not None:
        out["error"] = error
    out.update(extra)
    return out


def measured_rates(pulses: np.ndarray, livetime_s: float,
                   acfg: AnalysisConfig) -> dict:
    """Rates reconstructed from the synthetic-DAQ pulse list alone."""
    if livetime_s <= 0:
        raise ValueError("livetime must be positive")
    hist = build_delay_histogram(pulses, acfg)
    fit_error = None
    if acfg.fit_window:
        try:
            window = fit_coincidence_window(hist)
        except AnalysisError as exc:
            fit_error = str(exc)
            window = CoincidenceWindow(0.0, acfg.coincidence_window_us)
    else:
        window = CoincidenceWindow(0.0, acfg.coincidence_window_us)
    singles = count_singles(pulses, acfg.selection_threshold_sigma)

    def rate(n):
        return n / livetime_s, np.sqrt(max(n, 1)) / livetime_s

    r_t, r_c, r_b = (rate(singles[ch]) for ch in (TOP, CENTER, BOTTOM))
    in_window = np.abs(hist.delays_us - window.center_us) <= window.half_width_us
    r_tb = rate(int(in_window.sum()))
    r_acc_sb = sideband_accidentals(
        hist, (acfg.sideband_low_us, acfg.sideband_high_us),
        window.total_width_us, livetime_s)
    r_acc_an = analytic_accidentals(r_t[0], r_b[0], window.total_width_s)
    return {
        "livetime_s": livetime_s,
        "histogram": hist,
        "window": window,
        "fit_error": fit_error,
        "singles": {"top": r_t, "center": r_c, "bottom": r_b},
        "r_tb": r_tb,
        "r_acc_sideband": r_acc_sb,
        "r_acc_analytic": r_acc_an,
        "n_pairs": hist.n_pairs,
    }


def assemble_report(cfg: RunConfig, config_hash: str, sim_summary: dict | None = None,
                    measured: dict | None = None) -> dict:
    """Merge the simulation and synthetic-measurement arms into one report.

    Either arm may be absent.  When both are present their livetimes must
    agree and the gamma-subtracted muon coincidence rate is computed, with
    the simulated gamma-gamma rate carrying an extra 5% systematic.
    """
    report: dict = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "config_hash": config_hash,
        "values": {},
    }
    values = report["values"]
    vetoes = [v * 1e-3 for v in cfg.analysis.veto_windows_ms]

    if sim_summary is not None:
        live = sim_summary["livetime_s"]
        report["livetime_s"] = live

        def srate(count):
            return (count / live, np.sqrt(max(count, 1)) / live) if live > 0 else (0.0, 0.0)

        names = ("top", "center", "bottom")
        for sp in ("mu", "gamma"):
            for i, det in enumerate(names):
                r, e = srate(sim_summary["detector_counts"][sp][i])
                values[f"R_{det}_{sp}"] = _entry(r, e, "SIMULATED")
            r, e = srate(sim_summary["tb_counts"][sp])
            values[f"R_TB_{sp}"] = _entry(r, e, "SIMULATED")
        for i, det in enumerate(names):
            r, e = srate(sum(sim_summary["detector_counts"][sp][i] for sp in ("mu", "gamma")))
            values[f"R_{det}"] = _entry(r, e, "SIMULATED")
        tb_true = srate(sum(sim_summary["tb_counts"][sp] for sp in ("mu", "gamma")))
        values["R_TB_true"] = _entry(*tb_true, origin="SIMULATED")
        window_s = 2.0 * cfg.analysis.coincidence_window_us * 1e-6
        acc_gg = analytic_accidentals(values["R_top_gamma"]["value"],
                                      values["R_bottom_gamma"]["value"], window_s)
        acc_gm = (analytic_accidentals(values["R_top_gamma"]["value"],
                                       values["R_bottom_mu"]["value"], window_s)
                  + analytic_accidentals(values["R_top_mu"]["value"],
                                         values["R_bottom_gamma"]["value"], window_s))
        values["R_acc_gg_sim"] = _entry(acc_gg, origin="SIMULATED")
        values["R_acc_gmu_sim"] = _entry(acc_gm, origin="SIMULATED")
        values["R_acc_sim"] = _entry(acc_gg + acc_gm, origin="SIMULATED")
        # both conventions for the total: true coincidences only, and
        # true plus accidentals as a trigger would count them
        values["R_TB_plus_acc"] = _entry(tb_true[0] + acc_gg + acc_gm, tb_true[1],
                                         "SIMULATED")
        eff, eff_err = tagging_efficiency(sim_summary["tcb_counts"]["mu"],
                                          sim_summary["detector_counts"]["mu"][1]) \
            if sim_summary["detector_counts"]["mu"][1] else (0.0, 0.0)
        values["tagging_efficiency"] = _entry(eff, eff_err, "SIMULATED")
        gg = values["R_TB_gamma"]["value"]
        for veto, ms in zip(vetoes, cfg.analysis.veto_windows_ms):
            values[f"f_DT_{ms:g}ms"] = _entry(
                dead_time_fraction(gg, acc_gg + acc_gm, veto), origin="SIMULATED")

    if measured is not None:
        live_m = measured["livetime_s"]
        if sim_summary is not None:
            live_s = sim_summary["livetime_s"]
            if abs(live_s - live_m) > 1e-6 * max(live_s, live_m):
                raise AnalysisError(
                    f"simulated ({live_s} s) and measured ({live_m} s) livetimes differ")
        report["livetime_s"] = live_m
        for det in ("top", "center", "bottom"):
            r, e = measured["singles"][det]
            values[f"R_{det}_meas"] = _entry(r, e)
        values["R_TB_meas"] = _entry(*measured["r_tb"])
        values["R_acc_sideband"] = _entry(*measured["r_acc_sideband"])
        values["R_acc_analytic_meas"] = _entry(measured["r_acc_analytic"])
        w = measured["window"]
        report["window"] = {
            "center_us": w.center_us, "half_width_us": w.half_width_us,
            "sigma_us": w.sigma_us, "significance": w.significance,
            "fit_error": measured["fit_error"],
        }

    if sim_summary is not None and measured is not None:
        gg_rate, gg_err = values["R_TB_gamma"]["value"], values["R_TB_gamma"]["error"]
        # the simulation arm carries a 5% systematic on its gamma rates
        gg_err = float(np.hypot(gg_err, 0.05 * gg_rate))
        mu_rate, mu_err = extract_muon_rate(
            measured["r_tb"], (gg_rate, gg_err), measured["r_acc_sideband"])
        values["R_TB_mumu_extracted"] = _entry(
            mu_rate, mu_err, "MEASURED", negative=bool(mu_rate < 0))
    return report


def report_invariant_ok(report: dict, atol: float = 1e-12) -> bool:
    """The extracted rate must equal total minus gamma minus accidentals."""
    v = report["values"]
    if "R_TB_mumu_extracted" not in v:
        return True
    gg = v["R_TB_gamma"]["value"]
    total = v["R_TB_meas"]["value"]
    acc = v["R_acc_sideband"]["value"]
    return abs(v["R_TB_mumu_extracted"]["value"] - (total - gg - acc)) <= atol


def write_report(path: str, report: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=1, sort_keys=True)
        fh.write("\n")


def read_report(path: str) -> dict:
    with open(path, encoding="utf-8") as fh:
        report = json.load(fh)
    if report.get("schema_version") != REPORT_SCHEMA_VERSION:
        raise AnalysisError(f"unsupported report schema in {path}")
    return report


def write_rate_table_csv(path: str, report: dict) -> None:
    """Simulated per-species interaction rates, one detector per row."""
    v = report["values"]
    rows = ["quantity,muon_hz,muon_err_hz,gamma_hz,gamma_err_hz"]
    for det in ("top", "center", "bottom"):
        mu, g = v[f"R_{det}_mu"], v[f"R_{det}_gamma"]
        rows.append(f"R_{det},{mu['value']:.6g},{mu['error']:.3g},"
                    f"{g['value']:.6g},{g['error']:.3g}")
    mu, g = v["R_TB_mu"], v["R_TB_gamma"]
    rows.append(f"R_TB,{mu['value']:.6g},{mu['error']:.3g},"
                f"{g['value']:.6g},{g['error']:.3g}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(rows) + "\n")


def write_comparison_table_csv(path: str, report: dict) -> None:
    """Measured-vs-simulated rates for the quantities present in both arms."""
    v = report["values"]
    pairs = [("R_top", "R_top_meas", "R_top"),
             ("R_bottom", "R_bottom_meas", "R_bottom"),
             ("R_center", "R_center_meas", "R_center"),
             ("R_TB", "R_TB_meas", "R_TB_plus_acc"),
             ("R_acc", "R_acc_sideband", "R_acc_sim"),
             ("R_TB_mumu", "R_TB_mumu_extracted", "R_TB_mu")]
    rows = ["quantity,measured_hz,measured_err_hz,simulated_hz,simulated_err_hz"]
    for name, mkey, skey in pairs:
        if mkey not in v or skey not in v:
            continue
        m, s = v[mkey], v[skey]
        me = m.get("error")
        se = s.get("error")
        rows.append(f"{name},{m['value']:.6g},{'' if me is None else f'{me:.3g}'},"
                    f"{s['value']:.6g},{'' if se is None else f'{se:.3g}'}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(rows) + "\n")


def format_report(report: dict) -> str:
    """Human-readable table, one labeled value per line."""
    lines = [f"{'quantity':<28}{'value':>14}{'error':>12}  origin"]
    for name in sorted(report["values"]):
        entry = report["values"][name]
        err = entry.get("error")
        lines.append(f"{name:<28}{entry['value']:>14.6g}"
                     f"{(f'{err:.3g}' if err is not None else '-'):>12}  {entry['origin']}")
    if "window" in report:
        w = report["window"]
        lines.append(f"window: center {w['center_us']:.1f} us, half-width "
                     f"{w['half_width_us']:.1f} us, significance {w['significance']:.1f}")
    return "\n".join(lines)
