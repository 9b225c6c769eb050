"""Daily override panels and the binomial-logit audit model.

Household placement decisions are aggregated into one binomial experiment
per calendar day. Features only look at days strictly before the day they
describe. The model is fitted by iteratively reweighted least squares with
Wald inference on the odds-ratio scale.
"""

from __future__ import annotations

import csv
import datetime as dt
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd
from scipy import special, stats

PLACEMENTS = ("ES", "TH")
OUTCOMES = ("all", "up", "down")
STATES = ("roll", "block")
DAY_TYPES = ("Mon", "Tue-Fri", "Weekend")
DOW_NAMES = ("Monday", "Tuesday", "Wednesday", "Thursday", "Friday", "Saturday", "Sunday")
REFERENCE_MONTH = 10
MONTHS = tuple(m for m in range(1, 13) if m != REFERENCE_MONTH)

PANEL_COLUMNS = ("date", "n", "n_es", "n_th", "y_all", "y_up", "y_down", "th_share_lag1",
                 "is_holiday", "day_type", "month", "es_assign_7d", "th_assign_7d",
                 "es_exit_7d", "th_exit_7d")
ROLL_COLUMNS = ("es_assign_7d", "th_assign_7d", "es_exit_7d", "th_exit_7d")
BLOCK_COLUMNS = ("es_assign_prev_wk", "th_assign_prev_wk", "es_exit_prev_wk", "th_exit_prev_wk")
REPORT_COLUMNS = ("term", "estimate", "std_err", "odds_ratio", "ci_low", "ci_high", "p_value")
RECORD_COLUMNS = ("date", "predicted", "actual")

SEPARATION_BOUND = 30.0
WALD_Z = 1.96


class DesignError(ValueError):
    pass


class SeparationError(ArithmeticError):
    """Coefficients diverge: the data are (quasi-)completely separated."""


class ConvergenceWarning(UserWarning):
    pass


@dataclass(frozen=True)
class DecisionRecord:
    date: dt.date
    predicted: str
    actual: str

    def __post_init__(self):
        for label in (self.predicted, self.actual):
            if label not in PLACEMENTS:
                raise ValueError(f"unknown placement {label!r}; expected one of {PLACEMENTS}")
        if isinstance(self.date, str):
            object.__setattr__(self, "date", dt.date.fromisoformat(self.date))


def day_type(day: dt.date) -> str:
    wd = day.weekday()
    if wd == 0:
        return "Mon"
    return "Weekend" if wd >= 5 else "Tue-Fri"


@dataclass(frozen=True, eq=False)
class DailyPanel:
    """One row per active day; see ``PANEL_COLUMNS`` for the core schema.

    ``frame`` may also carry weekly-block state columns and ``dow``; they are
    absent when the panel was read back from CSV.
    """

    frame: pd.DataFrame

    def __len__(self):
        return len(self.frame)

    @property
    def has_block(self) -> bool:
        return all(c in self.frame for c in BLOCK_COLUMNS)

    def to_rows(self) -> list[dict]:
        out = []
        for rec in self.frame.loc[:, list(PANEL_COLUMNS)].itertuples(index=False):
            row = dict(zip(PANEL_COLUMNS, rec))
            row["date"] = row["date"].isoformat()
            for c in ("n", "n_es", "n_th", "y_all", "y_up", "y_down", "is_holiday", "month",
                      *ROLL_COLUMNS):
                row[c] = int(row[c])
            row["th_share_lag1"] = float(row["th_share_lag1"])
            out.append(row)
        return out

    def equals(self, other: DailyPanel) -> bool:
        return self.frame.equals(other.frame)


def _as_exit_frame(exits, days: pd.DatetimeIndex) -> pd.DataFrame:
    if exits is None:
        return pd.DataFrame({"es_exit": 0, "th_exit": 0}, index=days)
    if isinstance(exits, pd.DataFrame):
        ex = exits.copy()
    else:
        ex = pd.DataFrame.from_dict(dict(exits), orient="index", columns=["es_exit", "th_exit"])
    ex.index = pd.to_datetime(ex.index)
    return ex.reindex(days, fill_value=0).astype(int)


def aggregate_daily(records: Iterable[DecisionRecord], exits=None,
                    holidays: Iterable[dt.date] = (), start: dt.date | None = None,
                    end: dt.date | None = None) -> DailyPanel:
    """Aggregate placement decisions into a daily binomial panel.

    ``exits`` maps dates to ``(es_exit, th_exit)`` counts (a mapping or a
    frame with those columns); missing days count as zero. Features are
    lagged on the full calendar and days without decisions are dropped
    afterwards.
    """
    recs = list(records)
    if not recs:
        raise ValueError("no decision records")
    for r in recs:
        if r.predicted not in PLACEMENTS or r.actual not in PLACEMENTS:
            raise ValueError(f"unknown placement in {r!r}")
    df = pd.DataFrame({
        "date": pd.to_datetime([r.date for r in recs]),
        "pred_th": [r.predicted == "TH" for r in recs],
        "act_th": [r.actual == "TH" for r in recs],
    })
    df["pred_es"] = ~df["pred_th"]
    df["up"] = df["pred_es"] & df["act_th"]
    df["down"] = df["pred_th"] & ~df["act_th"]
    df["act_es"] = ~df["act_th"]
    daily = df.groupby("date").agg(
        n=("pred_th", "size"), n_es=("pred_es", "sum"), n_th=("pred_th", "sum"),
        y_up=("up", "sum"), y_down=("down", "sum"), assign_es=("act_es", "sum"),
        assign_th=("act_th", "sum"))
    lo = pd.Timestamp(start) if start is not None else daily.index.min()
    hi = pd.Timestamp(end) if end is not None else daily.index.max()
    days = pd.date_range(lo, hi, freq="D")
    cal = daily.reindex(days, fill_value=0).astype(int)
    cal["y_all"] = cal["y_up"] + cal["y_down"]
    ex = _as_exit_frame(exits, days)
    cal["es_exit"], cal["th_exit"] = ex["es_exit"].to_numpy(), ex["th_exit"].to_numpy()

    # share of TH placements on the previous active day
    share = (cal["assign_th"] / cal["n"].where(cal["n"] > 0)).ffill().fillna(0.0)
    cal["th_share_lag1"] = share.shift(1, fill_value=0.0)

    flows = {"es_assign": "assign_es", "th_assign": "assign_th",
             "es_exit": "es_exit", "th_exit": "th_exit"}
    for name, src in flows.items():
        cal[f"{name}_7d"] = (cal[src].rolling(7, min_periods=1).sum()
                             .shift(1, fill_value=0).astype(int))
    week = (days - pd.to_timedelta(days.weekday, unit="D")).normalize()
    for name, src in flows.items():
        weekly = cal[src].groupby(week).sum()
        prev = weekly.reindex(week - pd.Timedelta(days=7), fill_value=0).to_numpy()
        cal[f"{name}_prev_wk"] = prev.astype(int)

    hol = {pd.Timestamp(h) for h in holidays}
    cal["is_holiday"] = [int(d in hol) for d in days]
    cal["day_type"] = [day_type(d.date()) for d in days]
    cal["dow"] = [DOW_NAMES[d.weekday()] for d in days]
    cal["month"] = days.month.astype(int)
    cal["date"] = [d.date() for d in days]

    active = cal[cal["n"] > 0].reset_index(drop=True)
    cols = list(PANEL_COLUMNS) + list(BLOCK_COLUMNS) + ["dow"]
    return DailyPanel(active.loc[:, cols])


@dataclass(frozen=True, eq=False)
class Design:
    X: np.ndarray
    y: np.ndarray
    n: np.ndarray
    names: tuple[str, ...]
    dates: tuple

    @property
    def weights(self) -> np.ndarray:
        return self.n


def design_names(state: str = "roll", calendar: str = "daytype") -> tuple[str, ...]:
    if calendar == "daytype":
        cal = ("day_type[Mon]", "day_type[Weekend]")
    elif calendar == "dow":
        cal = tuple(f"dow[{d}]" for d in DOW_NAMES[1:])
    else:
        raise ValueError(f"unknown calendar encoding {calendar!r}")
    state_cols = ROLL_COLUMNS if state == "roll" else BLOCK_COLUMNS
    return (("intercept",) + cal + tuple(f"month[{m}]" for m in MONTHS)
            + ("th_share_lag1", "is_holiday") + tuple(state_cols))


def build_design(panel: DailyPanel, outcome: str = "all", state: str = "roll",
                 calendar: str = "daytype", drop_empty: bool = False) -> Design:
    """Design matrix, successes and trials for one outcome.

    Columns: intercept; Mon and Weekend (Tue-Fri reference) or, with
    ``calendar="dow"``, Tuesday..Sunday (Monday reference); eleven month
    indicators (October reference); lagged TH share; holiday; four state
    features. Directional outcomes keep only days with a non-empty trial set.
    An all-zero column raises :class:`DesignError` unless ``drop_empty``; a
    rank-deficient matrix always does.
    """
    if outcome not in OUTCOMES:
        raise ValueError(f"unknown outcome {outcome!r}")
    if state not in STATES:
        raise ValueError(f"unknown state {state!r}")
    if state == "block" and not panel.has_block:
        raise DesignError("panel carries no weekly-block state columns")
    trials_col, succ_col = {"all": ("n", "y_all"), "up": ("n_es", "y_up"),
                            "down": ("n_th", "y_down")}[outcome]
    f = panel.frame
    f = f[f[trials_col] > 0]
    if f.empty:
        raise DesignError(f"no eligible days for outcome {outcome!r}")
    names = design_names(state, calendar)
    cols = [np.ones(len(f))]
    if calendar == "daytype":
        cols += [(f["day_type"] == "Mon").to_numpy(float), (f["day_type"] == "Weekend").to_numpy(float)]
    else:
        if "dow" in f:
            dow = f["dow"]
        else:
            dow = pd.Series([DOW_NAMES[d.weekday()] for d in f["date"]], index=f.index)
        cols += [(dow == d).to_numpy(float) for d in DOW_NAMES[1:]]
    cols += [(f["month"] == m).to_numpy(float) for m in MONTHS]
    cols += [f["th_share_lag1"].to_numpy(float), f["is_holiday"].to_numpy(float)]
    state_cols = ROLL_COLUMNS if state == "roll" else BLOCK_COLUMNS
    cols += [f[c].to_numpy(float) for c in state_cols]
    X = np.column_stack(cols)
    empty = [nm for nm, col in zip(names, X.T) if not np.any(col)]
    if empty:
        if not drop_empty:
            raise DesignError(f"all-zero design columns: {', '.join(empty)}")
        keep = [i for i, nm in enumerate(names) if nm not in empty]
        X, names = X[:, keep], tuple(names[i] for i in keep)
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise DesignError("design matrix is rank deficient (collinear columns)")
    return Design(X, f[succ_col].to_numpy(float), f[trials_col].to_numpy(float),
                  tuple(names), tuple(f["date"]))


@dataclass(frozen=True, eq=False)
class GlmFit:
    coef: np.ndarray
    cov: np.ndarray
    names: tuple[str, ...]
    deviance: float
    iterations: int
    converged: bool
    deviance_path: tuple[float, ...] = field(default=())

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov))

    def fitted(self, X: np.ndarray) -> np.ndarray:
        return special.expit(X @ self.coef)

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.names, map(float, self.coef)))


def binomial_deviance(y, n, mu) -> float:
    """Deviance of success counts ``y`` out of ``n`` against probabilities ``mu``."""
    fit = n * mu
    return float(2.0 * np.sum(special.xlogy(y, y) - special.xlogy(y, fit)
                              + special.xlogy(n - y, n - y) - special.xlogy(n - y, n - fit)))


def irls_fit(X, y, n, names: Sequence[str] | None = None, max_iter: int = 100,
             tol: float = 1e-8) -> GlmFit:
    """Binomial-logit maximum likelihood by iteratively reweighted least squares.

    Stops when the largest absolute coefficient change drops below ``tol``.
    A step that would raise the deviance is halved until it does not, so the
    recorded deviance path never increases. Coefficients beyond
    ``SEPARATION_BOUND`` in magnitude raise :class:`SeparationError`.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = np.asarray(n, dtype=float)
    rows, cols = X.shape
    if rows < cols:
        raise ValueError(f"need at least as many rows as columns ({rows} < {cols})")
    if np.any(n < 1) or np.any(y < 0) or np.any(y > n):
        raise ValueError("need n >= 1 and 0 <= y <= n for every row")
    names = tuple(names) if names is not None else tuple(f"x{i}" for i in range(cols))

    def wls(eta, mu):
        w = n * mu * (1.0 - mu)
        z = eta + (y - n * mu) / w
        xtw = X.T * w
        return np.linalg.solve(xtw @ X, xtw @ z)

    mu0 = (y + 0.5) / (n + 1.0)
    beta = wls(special.logit(mu0), mu0)
    mu = special.expit(X @ beta)
    dev = binomial_deviance(y, n, mu)
    path = [dev]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        target = wls(X @ beta, mu)
        step = target - beta
        for _ in range(40):
            cand = beta + step
            mu_c = special.expit(X @ cand)
            dev_c = binomial_deviance(y, n, mu_c)
            if dev_c <= dev + 1e-12 * abs(dev) and np.isfinite(dev_c):
                break
            step = step / 2.0
        change = float(np.max(np.abs(cand - beta)))
        beta, mu = cand, mu_c
        dev = min(dev_c, dev)
        path.append(dev)
        if np.max(np.abs(beta)) > SEPARATION_BOUND:
            bad = [nm for nm, b in zip(names, beta) if abs(b) > SEPARATION_BOUND]
            raise SeparationError(f"coefficients diverging (separation): {', '.join(bad)}")
        if change < tol:
            converged = True
            break
    if not converged:
        warnings.warn(f"IRLS did not converge in {max_iter} iterations", ConvergenceWarning,
                      stacklevel=2)
    w = n * mu * (1.0 - mu)
    info = (X.T * w) @ X
    cov = np.linalg.inv(info)
    cov = 0.5 * (cov + cov.T)
    return GlmFit(beta, cov, names, dev, it, converged, tuple(path))


def fit_design(design: Design, **kw) -> GlmFit:
    return irls_fit(design.X, design.y, design.n, design.names, **kw)


def wald_report(fit: GlmFit) -> list[dict]:
    """Odds ratios with ``exp(beta +- 1.96 se)`` intervals and two-sided p-values."""
    if not fit.converged:
        raise ValueError("refusing to report a fit that did not converge")
    rows = []
    for name, b, s in zip(fit.names, fit.coef, fit.se):
        b, s = float(b), float(s)
        rows.append({
            "term": name, "estimate": b, "std_err": s, "odds_ratio": math.exp(b),
            "ci_low": math.exp(b - WALD_Z * s), "ci_high": math.exp(b + WALD_Z * s),
            "p_value": float(2.0 * stats.norm.sf(abs(b) / s)),
        })
    return rows


# ---------------------------------------------------------------------------
# Synthetic panels.

DEFAULT_TRUE_COEFFS = {
    "intercept": -0.9,
    "day_type[Mon]": 0.215,
    "day_type[Weekend]": -0.25,
    "month[1]": -0.25, "month[2]": -0.09, "month[3]": -0.23, "month[4]": -0.16,
    "month[5]": -0.13, "month[6]": -0.37, "month[7]": -0.13, "month[8]": -0.22,
    "month[9]": -0.13, "month[11]": -0.36, "month[12]": -0.55,
    "th_share_lag1": 0.07,
    "is_holiday": -0.14,
    "es_assign_7d": -0.004,
    "th_assign_7d": 0.007,
    "es_exit_7d": -0.005,
    "th_exit_7d": -0.006,
}


@dataclass(frozen=True, eq=False)
class SynthPanel:
    panel: DailyPanel
    records: tuple[DecisionRecord, ...]
    exits: pd.DataFrame
    holidays: frozenset
    probs: np.ndarray  # model probability on each panel row


def _coef_vector(true_coeffs) -> np.ndarray:
    names = design_names("roll", "daytype")
    if isinstance(true_coeffs, Mapping):
        missing = [nm for nm in names if nm not in true_coeffs]
        if missing or len(true_coeffs) != len(names):
            raise ValueError(f"coefficient mapping must name exactly {names}")
        return np.array([float(true_coeffs[nm]) for nm in names])
    beta = np.asarray(true_coeffs, dtype=float)
    if beta.shape != (len(names),):
        raise ValueError(f"expected {len(names)} coefficients, got {beta.size}")
    return beta


def synth_generate(true_coeffs=None, n_days: int = 1500, seed: int = 0,
                   start: dt.date = dt.date(2008, 1, 1), mean_volume: float = 5.0,
                   th_rate: float = 0.3, holidays: Iterable[dt.date] | None = None,
                   holiday_rate: float = 10 / 365, inactive_rate: float = 0.0,
                   exit_levels: tuple[float, float] = (3.0, 1.2)) -> SynthPanel:
    """Simulate decisions from the daily logit model with known coefficients.

    Daily volume is ``1 + Poisson(mean_volume - 1)`` on active days, each
    case is recommended TH with probability ``th_rate``, and every case is
    overridden with the day's model probability. Exits follow a log-AR(1)
    Poisson process. The returned panel is built by :func:`aggregate_daily`
    from the generated records, so it passes through the same code as real
    data.
    """
    beta = _coef_vector(DEFAULT_TRUE_COEFFS if true_coeffs is None else true_coeffs)
    if n_days < 1:
        raise ValueError("n_days must be positive")
    rng = np.random.default_rng(seed)
    days = [start + dt.timedelta(days=i) for i in range(n_days)]
    if holidays is None:
        hol = frozenset(d for d, u in zip(days, rng.random(n_days)) if u < holiday_rate)
    else:
        hol = frozenset(holidays)
    active = rng.random(n_days) >= inactive_rate
    vol = np.where(active, 1 + rng.poisson(max(mean_volume - 1.0, 0.0), n_days), 0)
    n_th = rng.binomial(vol, th_rate)
    n_es = vol - n_th
    z = np.zeros((n_days, 2))
    shocks = rng.standard_normal((n_days, 2))
    for t in range(1, n_days):
        z[t] = 0.8 * z[t - 1] + 0.3 * shocks[t]
    exits = rng.poisson(np.asarray(exit_levels) * np.exp(z))
    uniforms = rng.random((n_days, int(vol.max()) if vol.max() > 0 else 1))

    # row layout of the roll/daytype design
    i_mon, i_wkd = 1, 2
    i_month = {m: 3 + j for j, m in enumerate(MONTHS)}
    i_share, i_hol, i_state = 14, 15, 16

    assign_es = np.zeros(n_days, dtype=int)
    assign_th = np.zeros(n_days, dtype=int)
    y_up = np.zeros(n_days, dtype=int)
    y_down = np.zeros(n_days, dtype=int)
    probs = np.zeros(n_days)
    share_prev = 0.0
    x = np.zeros(len(beta))
    x[0] = 1.0
    for t, day in enumerate(days):
        x[1:] = 0.0
        dtp = day_type(day)
        x[i_mon] = dtp == "Mon"
        x[i_wkd] = dtp == "Weekend"
        if day.month != REFERENCE_MONTH:
            x[i_month[day.month]] = 1.0
        x[i_share] = share_prev
        x[i_hol] = day in hol
        lo = max(0, t - 7)
        x[i_state] = assign_es[lo:t].sum()
        x[i_state + 1] = assign_th[lo:t].sum()
        x[i_state + 2] = exits[lo:t, 0].sum()
        x[i_state + 3] = exits[lo:t, 1].sum()
        prob = special.expit(float(x @ beta))
        probs[t] = prob
        u = uniforms[t]
        y_up[t] = int(np.count_nonzero(u[:n_es[t]] < prob))
        y_down[t] = int(np.count_nonzero(u[n_es[t]:vol[t]] < prob))
        assign_th[t] = y_up[t] + n_th[t] - y_down[t]
        assign_es[t] = vol[t] - assign_th[t]
        if vol[t] > 0:
            share_prev = assign_th[t] / vol[t]

    records = []
    for t, day in enumerate(days):
        records += [DecisionRecord(day, "ES", "TH")] * y_up[t]
        records += [DecisionRecord(day, "ES", "ES")] * (n_es[t] - y_up[t])
        records += [DecisionRecord(day, "TH", "ES")] * y_down[t]
        records += [DecisionRecord(day, "TH", "TH")] * (n_th[t] - y_down[t])
    exit_frame = pd.DataFrame({"es_exit": exits[:, 0], "th_exit": exits[:, 1]},
                              index=pd.to_datetime(days))
    panel = aggregate_daily(records, exit_frame, hol, start=days[0], end=days[-1])
    return SynthPanel(panel, tuple(records), exit_frame, hol, probs[vol > 0])


# ---------------------------------------------------------------------------
# CSV input/output.

def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def write_rows(path_or_file, rows: Sequence[Mapping], columns: Sequence[str],
               header_comment: str | None = None) -> None:
    """Write rows as CSV with a fixed column order and ``\\n`` line endings."""
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    fh = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])
    finally:
        if own:
            fh.close()


def _read_csv_rows(path, header: Sequence[str] | None = None) -> list[dict]:
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.DictReader(lines)
    if header is not None and list(reader.fieldnames or ()) != list(header):
        raise ValueError(f"{path}: expected header {','.join(header)}")
    return list(reader)


def write_panel_csv(panel: DailyPanel, path) -> None:
    write_rows(path, panel.to_rows(), PANEL_COLUMNS)


def read_panel_csv(path) -> DailyPanel:
    rows = _read_csv_rows(path)
    if not rows:
        raise ValueError(f"{path}: empty panel")
    missing = [c for c in PANEL_COLUMNS if c not in rows[0]]
    if missing:
        raise ValueError(f"{path}: missing panel columns {missing}")
    f = pd.DataFrame(rows).loc[:, list(PANEL_COLUMNS)]
    f["date"] = [dt.date.fromisoformat(d) for d in f["date"]]
    ints = ["n", "n_es", "n_th", "y_all", "y_up", "y_down", "is_holiday", "month", *ROLL_COLUMNS]
    f[ints] = f[ints].astype(int)
    f["th_share_lag1"] = f["th_share_lag1"].astype(float)
    return DailyPanel(f)


def read_records_csv(path) -> list[DecisionRecord]:
    rows = _read_csv_rows(path, RECORD_COLUMNS)
    return [DecisionRecord(dt.date.fromisoformat(r["date"]), r["predicted"], r["actual"])
            for r in rows]


def write_records_csv(records: Sequence[DecisionRecord], path) -> None:
    write_rows(path, [{"date": r.date.isoformat(), "predicted": r.predicted, "actual": r.actual}
                      for r in records], RECORD_COLUMNS)


EXIT_COLUMNS = ("date", "es_exit", "th_exit")


def read_exits_csv(path) -> pd.DataFrame:
    rows = _read_csv_rows(path, EXIT_COLUMNS)
    return pd.DataFrame({"es_exit": [int(r["es_exit"]) for r in rows],
                         "th_exit": [int(r["th_exit"]) for r in rows]},
                        index=pd.to_datetime([r["date"] for r in rows]))


def write_exits_csv(exits: pd.DataFrame, path) -> None:
    write_rows(path, [{"date": d.date().isoformat(), "es_exit": int(e), "th_exit": int(h)}
                      for d, e, h in zip(exits.index, exits["es_exit"], exits["th_exit"])],
               EXIT_COLUMNS)


def read_holidays(path) -> list[dt.date]:
    with open(path) as fh:
        return [dt.date.fromisoformat(ln.strip()) for ln in fh
                if ln.strip() and not ln.startswith("#")]


def write_report_csv(rows: Sequence[Mapping], path) -> None:
    write_rows(path, rows, REPORT_COLUMNS)
