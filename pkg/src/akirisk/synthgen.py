"""Seeded synthetic EHR generator with a planted logistic AKI risk.

Generation has two layers. The latent layer draws, per patient, the stay
count, timing, frailty, the planted covariates of every stay and the uniforms
that decide outcomes; it is simulated stay position by stay position across
all patients at once so the intercept can be solved by bisection on common
random numbers. The render layer turns each patient into rows of the three
source tables (administrative, laboratory, pharmacy) plus a ground-truth row
per stay.

Planted covariates are computed exactly as the featurizer computes the
corresponding features over a sample's prior (cohort-eligible) stays:

    prior_aki      sum.count.DX.584                     count of prior AKI codes
    age            max.age                              (age - 60) / 15
    max_un         max.max.UREA_NITROGEN                (max UN - 25) / 15
    loop_diuretic  sum.count.MED.FUROSEMIDE             loop diuretic doses / 5

Bumetanide, a second loop diuretic with the same dose distribution, is drawn
independently of the risk so the subclass count is not the planted column.
"""
from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import multiprocessing as mp
import numpy as np

from .config import ConfigError
from .ehr import LAB_COLUMNS, PHARMACY_COLUMNS, ADMIN_COLUMNS, PatientStore, parse_tables

log = logging.getLogger(__name__)

PLANTED_FEATURES = {
    "prior_aki": "sum.count.DX.584",
    "age": "max.age",
    "max_un": "max.max.UREA_NITROGEN",
    "loop_diuretic": "sum.count.MED.FUROSEMIDE",
}
DEFAULT_COEFFICIENTS = {"prior_aki": 1.0, "age": 0.5, "max_un": 1.0, "loop_diuretic": 0.8}
MECHANISMS = ("both", "code_only", "scr_only")
TRUTH_COLUMNS = ("admit_id", "patient_id", "planted_risk", "planted_label", "mechanism", "is_sample")


class SynthConfigError(ConfigError):
    pass


@dataclass
class SynthConfig:
    n_patients: int = 2000
    mean_stays: float = 3.6           # geometric stay count per patient
    max_stays: int = 25
    prevalence: float = 0.062         # target mean planted risk over samples
    coefficients: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_COEFFICIENTS))
    noise: float = 0.25               # sd of per-stay logit noise
    intercept: float | None = None    # solved from ``prevalence`` when None
    mechanism_fractions: tuple[float, float, float] = (0.246, 0.384, 0.370)
    under_age_rate: float = 0.01
    esrd_rate: float = 0.015
    transplant_rate: float = 0.3
    seed: int = 0

    def validate(self) -> None:
        if self.n_patients < 1:
            raise SynthConfigError("n_patients must be positive")
        if not 0.0 < self.prevalence < 1.0:
            raise SynthConfigError("prevalence must lie in (0, 1)")
        if self.mean_stays < 1.0:
            raise SynthConfigError("mean_stays must be >= 1")
        unknown = set(self.coefficients) - set(PLANTED_FEATURES)
        if unknown:
            raise SynthConfigError(f"unknown planted coefficient(s) {sorted(unknown)}; "
                                   f"expected {sorted(PLANTED_FEATURES)}")
        if not all(math.isfinite(float(v)) for v in self.coefficients.values()):
            raise SynthConfigError("planted coefficients must be finite")
        fr = np.asarray(self.mechanism_fractions, dtype=float)
        if fr.shape != (3,) or np.any(fr < 0) or not math.isclose(fr.sum(), 1.0, abs_tol=1e-9):
            raise SynthConfigError("mechanism_fractions must be three nonnegative numbers summing to 1")
        if self.noise < 0:
            raise SynthConfigError("noise must be nonnegative")


# ---------------------------------------------------------------------------
# latent layer


@dataclass
class Latent:
    n_stays: np.ndarray      # (P,)
    valid: np.ndarray        # (P, S) stay exists
    admit: np.ndarray        # hours
    los: np.ndarray          # days
    age: np.ndarray          # rounded to 0.1 y
    frailty: np.ndarray      # (P,)
    max_un: np.ndarray       # rounded to 0.1
    loop: np.ndarray         # doses
    esrd_stay: np.ndarray    # (P,) index or -1
    transplant_stay: np.ndarray
    eligible: np.ndarray     # passes the cohort exclusions
    noise: np.ndarray
    u_outcome: np.ndarray
    u_mechanism: np.ndarray


def _draw_patient(seed: int, i: int, cfg: SynthConfig) -> dict:
    rng = np.random.default_rng([seed, 0, i])
    n = int(min(rng.geometric(1.0 / cfg.mean_stays), cfg.max_stays))
    child = rng.random() < cfg.under_age_rate
    base_age = rng.uniform(2, 16) if child else float(np.clip(rng.normal(60, 16), 18, 95))
    z = rng.normal()
    los = 2.0 + rng.gamma(2.0, 1.5, size=n)
    gaps = 7.0 + rng.exponential(120.0 * math.exp(-0.3 * z), size=n)
    admit = np.empty(n)
    admit[0] = rng.uniform(0, 365 * 24)
    for j in range(1, n):
        admit[j] = admit[j - 1] + (los[j - 1] + gaps[j - 1]) * 24.0
    admit = np.round(admit, 2)
    age = np.round(base_age + (admit - admit[0]) / (24 * 365.25), 1)
    max_un = np.round(np.exp(math.log(18.0) + 0.35 * z + 0.35 * rng.normal(size=n)), 1)
    loop = rng.poisson(math.exp(-0.5 + 0.9 * z), size=n)
    esrd, transplant = -1, -1
    if n >= 2 and rng.random() < cfg.esrd_rate:
        esrd = int(rng.integers(0, n - 1))
        if rng.random() < cfg.transplant_rate:
            transplant = int(rng.integers(esrd + 1, n))
    return dict(n=n, admit=admit, los=np.round(los, 2), age=age, z=z, max_un=max_un, loop=loop,
                esrd=esrd, transplant=transplant, noise=rng.normal(size=n),
                u_out=rng.random(size=n), u_mech=rng.random(size=n))


def draw_latent(cfg: SynthConfig) -> Latent:
    draws = [_draw_patient(cfg.seed, i, cfg) for i in range(cfg.n_patients)]
    P, S = cfg.n_patients, max(d["n"] for d in draws)

    def pad(key, fill=0.0, dtype=float):
        out = np.full((P, S), fill, dtype=dtype)
        for i, d in enumerate(draws):
            out[i, : d["n"]] = d[key]
        return out

    n_stays = np.array([d["n"] for d in draws])
    valid = np.arange(S)[None, :] < n_stays[:, None]
    esrd = np.array([d["esrd"] for d in draws])
    transplant = np.array([d["transplant"] for d in draws])
    age = pad("age")
    # mirror the cohort exclusions: under age, or after ESRD until a transplant
    # stay (the transplant stay itself is still excluded)
    pos = np.arange(S)[None, :]
    post_esrd = (esrd[:, None] >= 0) & (pos > esrd[:, None]) & (
        (transplant[:, None] < 0) | (pos <= transplant[:, None]))
    eligible = valid & (age >= 18) & ~post_esrd
    return Latent(n_stays, valid, pad("admit"), pad("los"), age, np.array([d["z"] for d in draws]),
                  pad("max_un"), pad("loop"), esrd, transplant, eligible, pad("noise"),
                  pad("u_out", 1.0), pad("u_mech"))


@dataclass
class Outcomes:
    risk: np.ndarray         # (P, S) planted probability
    label: np.ndarray        # bool
    mechanism: np.ndarray    # -1 none, else index into MECHANISMS
    is_sample: np.ndarray    # eligible stay with >= 1 eligible prior stay
    covariates: dict[str, np.ndarray]


def simulate(lat: Latent, cfg: SynthConfig, intercept: float) -> Outcomes:
    """Outcomes stay position by stay position; prior covariates use eligible stays only."""
    P, S = lat.valid.shape
    c = {k: float(cfg.coefficients.get(k, 0.0)) for k in PLANTED_FEATURES}
    fr = np.cumsum(cfg.mechanism_fractions)
    risk = np.zeros((P, S))
    label = np.zeros((P, S), dtype=bool)
    mech = np.full((P, S), -1)
    is_sample = np.zeros((P, S), dtype=bool)
    cov = {k: np.full((P, S), np.nan) for k in PLANTED_FEATURES}
    n_prior = np.zeros(P)
    aki_codes = np.zeros(P)
    last_age = np.zeros(P)
    max_un = np.zeros(P)
    loop = np.zeros(P)
    for j in range(S):
        sample = lat.eligible[:, j] & (n_prior > 0)
        a = (last_age - 60.0) / 15.0
        u = (max_un - 25.0) / 15.0
        dl = loop / 5.0
        logit_sample = intercept + c["prior_aki"] * aki_codes + c["age"] * a + c["max_un"] * u \
            + c["loop_diuretic"] * dl
        # stays that are not samples only feed later prior-AKI counts
        logit_other = intercept + c["age"] * (lat.age[:, j] - 60.0) / 15.0
        logit = np.where(sample, logit_sample, logit_other) + cfg.noise * lat.noise[:, j]
        r = 1.0 / (1.0 + np.exp(-logit))
        y = lat.valid[:, j] & (lat.u_outcome[:, j] < r)
        m = np.where(y, np.searchsorted(fr, lat.u_mechanism[:, j], side="right").clip(0, 2), -1)
        risk[:, j] = np.where(lat.valid[:, j], r, 0.0)
        label[:, j] = y
        mech[:, j] = m
        is_sample[:, j] = sample
        for k, v in (("prior_aki", aki_codes), ("age", last_age), ("max_un", max_un),
                     ("loop_diuretic", loop)):
            cov[k][:, j] = np.where(sample, v, np.nan)
        # fold stay j into the prior summaries of later stays
        e = lat.eligible[:, j]
        has_code = y & ((m == 0) | (m == 1))
        aki_codes = aki_codes + (e & has_code)
        last_age = np.where(e, lat.age[:, j], last_age)
        max_un = np.where(e, np.maximum(max_un, lat.max_un[:, j]), max_un)
        loop = loop + np.where(e, lat.loop[:, j], 0)
        n_prior = n_prior + e
    return Outcomes(risk, label, mech, is_sample, cov)


def solve_intercept(lat: Latent, cfg: SynthConfig, lo: float = -40.0, hi: float = 40.0,
                    tol: float = 1e-10) -> float:
    """Intercept whose mean planted risk over samples equals ``cfg.prevalence``."""

    def mean_risk(b):
        out = simulate(lat, cfg, b)
        if not out.is_sample.any():
            raise SynthConfigError("configuration yields no rehospitalization samples")
        return float(out.risk[out.is_sample].mean())

    f_lo, f_hi = mean_risk(lo), mean_risk(hi)
    if not f_lo <= cfg.prevalence <= f_hi:
        best = lo if abs(f_lo - cfg.prevalence) < abs(f_hi - cfg.prevalence) else hi
        raise SynthConfigError(
            f"prevalence {cfg.prevalence} unreachable with these coefficients: intercept "
            f"{best} achieves {mean_risk(best):.4f} (range {f_lo:.4f}..{f_hi:.4f})")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mean_risk(mid) < cfg.prevalence:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# render layer

WEEKDAYS = ("MONDAY", "TUESDAY", "WEDNESDAY", "THURSDAY", "FRIDAY", "SATURDAY", "SUNDAY")
RACES = (("WHITE", 0.62), ("BLACK", 0.2), ("ASIAN", 0.06), ("HISPANIC", 0.08), ("OTHER", 0.04))
MARITAL = (("MARRIED", 0.45), ("SINGLE", 0.3), ("WIDOWED", 0.15), ("DIVORCED", 0.1))
DISPOSITIONS = (("HOME", 0.58), ("HOME_HEALTH", 0.14), ("SNF", 0.18), ("REHAB", 0.1))
DRGS = ("291", "292", "682", "683", "871", "190", "392", "470", "194", "603", "065", "378")
AKI_CODES = ("584.5", "584.6", "584.7", "584.8", "584.9")
# (code, base log-odds, frailty slope)
DX_POOL = (
    ("401.9", -0.4, 0.2), ("250.00", -1.1, 0.2), ("428.0", -1.6, 0.8), ("585.3", -2.2, 0.8),
    ("427.31", -1.7, 0.4), ("276.1", -2.2, 0.3), ("518.81", -2.5, 0.4), ("038.9", -2.6, 0.3),
    ("486", -2.2, 0.2), ("599.0", -2.0, 0.1), ("414.01", -1.4, 0.3), ("272.4", -0.9, 0.0),
    ("285.9", -1.7, 0.4), ("V58.61", -2.2, 0.2), ("496", -2.2, 0.3), ("244.9", -2.0, 0.0),
    ("311", -2.0, 0.0), ("530.81", -1.4, 0.0), ("786.50", -2.2, 0.0), ("780.2", -2.7, 0.0),
    ("305.1", -2.2, 0.0), ("276.51", -2.4, 0.3), ("403.90", -2.6, 0.5), ("707.03", -3.0, 0.5),
)
PX_POOL = (("38.93", 0.2), ("99.04", 0.08), ("88.72", 0.15), ("96.71", 0.06), ("45.13", 0.05),
           ("93.90", 0.07))
CPT_POOL = (("99223", 0.5), ("99232", 0.6), ("93010", 0.3), ("71020", 0.35), ("36556", 0.1),
            ("99291", 0.1), ("80053", 0.25))
FUROSEMIDE = ("FUROSEMIDE 40 MG TABLET", "FUROSEMIDE 10 MG/ML SOLUTION")
# (description, class, subclass, therapeutic class, probability, mean extra doses)
MED_POOL = (
    ("PIPERACILLIN-TAZOBACTAM 3.375 G VIAL", "ANTIBIOTICS", "PENICILLINS", "ANTI-INFECTIVES", 0.12, 4),
    ("VANCOMYCIN 1 G VIAL", "ANTIBIOTICS", "GLYCOPEPTIDES", "ANTI-INFECTIVES", 0.12, 3),
    ("HEPARIN 5000 UNITS/ML SOLUTION", "ANTICOAGULANTS", "HEPARINS", "HEMATOLOGIC", 0.45, 4),
    ("METOPROLOL TARTRATE 25 MG TABLET", "CARDIOVASCULAR", "BETA BLOCKERS", "CARDIOVASCULAR", 0.3, 3),
    ("LISINOPRIL 10 MG TABLET", "CARDIOVASCULAR", "ACE INHIBITORS", "CARDIOVASCULAR", 0.2, 2),
    ("HYDROCHLOROTHIAZIDE 25 MG TABLET", "DIURETICS", "THIAZIDE DIURETICS", "CARDIOVASCULAR", 0.1, 2),
    ("INSULIN REGULAR 100 UNITS/ML SOLUTION", "ANTIDIABETICS", "INSULINS", "ENDOCRINE", 0.25, 5),
    ("ACETAMINOPHEN 325 MG TABLET", "ANALGESICS", "NONOPIOID ANALGESICS", "CNS", 0.55, 3),
    ("ONDANSETRON 4 MG TABLET", "ANTIEMETICS", "SEROTONIN ANTAGONISTS", "GASTROINTESTINAL", 0.3, 1),
    ("PANTOPRAZOLE 40 MG TABLET", "GASTROINTESTINAL", "PROTON PUMP INHIBITORS", "GASTROINTESTINAL", 0.4, 2),
    ("ATORVASTATIN 20 MG TABLET", "CARDIOVASCULAR", "STATINS", "CARDIOVASCULAR", 0.3, 2),
    ("POTASSIUM CHLORIDE 20 MEQ TABLET", "ELECTROLYTES", "POTASSIUM SUPPLEMENTS", "NUTRITION", 0.25, 2),
    ("SODIUM CHLORIDE 0.9 % SOLUTION", "ELECTROLYTES", "SODIUM SUPPLEMENTS", "NUTRITION", 0.5, 2),
    ("IBUPROFEN 400 MG TABLET", "ANALGESICS", "NSAIDS", "CNS", 0.08, 1),
    ("MORPHINE 2 MG/ML SOLUTION", "ANALGESICS", "OPIOIDS", "CNS", 0.2, 2),
)
# (test, mean, sd, low, high)
OTHER_LABS = (("POTASSIUM", 4.2, 0.5, 3.5, 5.1), ("SODIUM", 139.0, 4.0, 135.0, 145.0),
              ("HEMOGLOBIN", 12.0, 1.8, 12.0, 17.5), ("GLUCOSE", 125.0, 35.0, 70.0, 180.0))


def _choice(rng, table) -> str:
    names, p = zip(*table)
    return names[int(rng.choice(len(names), p=np.asarray(p) / sum(p)))]


def _flag(value: float, low: float, high: float) -> str:
    return "high" if value > high else "low" if value < low else "none"


def _creatinine(rng, admit: float, discharge: float, rises: bool) -> list[tuple[float, float]]:
    """sCr readings; a rise of >= 0.4 within 24 h iff ``rises``, otherwise flat.

    Flat series stay within baseline +- 0.09 with baseline >= 0.7, so no pair
    differs by 0.3 or by a factor of 1.5.
    """
    base = rng.uniform(0.7, 1.6)
    n = int(rng.integers(2, 7))
    if not rises:
        times = np.sort(rng.uniform(admit, discharge, size=n))
        vals = base + rng.uniform(-0.09, 0.09, size=n)
        return [(round(t, 2), round(v, 2)) for t, v in zip(times, vals)]
    t0 = admit + rng.uniform(1.0, 6.0)
    t1 = t0 + rng.uniform(6.0, 24.0)
    out = [(t0, base + rng.uniform(-0.05, 0.05)), (t1, base + rng.uniform(0.45, 1.5))]
    for t in np.sort(rng.uniform(t1, discharge, size=n - 2)):
        out.append((t, out[-1][1] + rng.uniform(-0.3, 0.2)))
    return [(round(t, 2), round(max(v, 0.3), 2)) for t, v in out]


def render_patient(i: int, lat: Latent, out: Outcomes, seed: int) -> tuple[list, list, list, list]:
    rng = np.random.default_rng([seed, 1, i])
    pid = f"P{i:06d}"
    race = _choice(rng, RACES)
    gender = "F" if rng.random() < 0.52 else "M"
    marital = _choice(rng, MARITAL)
    z = lat.frailty[i]
    admin, labs, meds, truth = [], [], [], []
    for j in range(int(lat.n_stays[i])):
        aid = f"H{i:06d}{j:02d}"
        admit = float(lat.admit[i, j])
        discharge = round(admit + float(lat.los[i, j]) * 24.0, 2)
        age = float(lat.age[i, j])
        m = int(out.mechanism[i, j])
        has_code = m in (0, 1)
        rises = m in (0, 2)

        dx = [code for code, b, s in DX_POOL if rng.random() < 1 / (1 + math.exp(-(b + s * z)))]
        if has_code:
            dx.append(AKI_CODES[int(rng.choice(5, p=[0.05, 0.05, 0.05, 0.05, 0.8]))])
        px = [code for code, p in PX_POOL if rng.random() < p]
        if j == lat.esrd_stay[i]:
            dx.append("585.9")
            px.append("39.95")
        if j == lat.transplant_stay[i]:
            px.append("55.69")
        cpt = [code for code, p in CPT_POOL if rng.random() < p]
        drg = [DRGS[int(rng.integers(len(DRGS)))]]
        icu = rng.random() < 1 / (1 + math.exp(-(-1.5 + 0.6 * z)))
        locs = (["ED"] if rng.random() < 0.6 else []) + [
            ("MICU" if rng.random() < 0.6 else "SICU") if icu else
            ("WARD" if rng.random() < 0.8 else "STEPDOWN")]
        if icu:
            locs.append("WARD")
        ins = ["MEDICARE"] if age >= 65 else [_choice(rng, (("PRIVATE", 0.6), ("MEDICAID", 0.3),
                                                            ("SELF_PAY", 0.1)))]
        if age >= 65 and rng.random() < 0.3:
            ins.append("PRIVATE")
        admin.append([
            aid, pid, f"{admit:.2f}", f"{discharge:.2f}", f"{age:.1f}", race, gender, marital,
            "|".join(ins), "|".join(locs), _choice(rng, DISPOSITIONS),
            f"{lat.los[i, j]:.2f}", WEEKDAYS[int(admit // 24) % 7],
            WEEKDAYS[int(discharge // 24) % 7], "|".join(dx), "|".join(px), "|".join(cpt),
            "|".join(drg),
        ])

        for t, v in _creatinine(rng, admit, discharge, rises):
            labs.append([aid, "CREATININE", f"{t:.2f}", f"{v:.2f}", _flag(v, 0.5, 1.3)])
        un_max = float(lat.max_un[i, j])
        n_un = int(rng.integers(1, 5))
        un_vals = [un_max] + [round(un_max * rng.uniform(0.5, 1.0), 1) for _ in range(n_un - 1)]
        for t, v in zip(np.sort(rng.uniform(admit, discharge, size=n_un)), rng.permutation(un_vals)):
            labs.append([aid, "UREA_NITROGEN", f"{t:.2f}", f"{v:.1f}", _flag(v, 7.0, 20.0)])
        for test, mu, sd, low, high in OTHER_LABS:
            if test == "HEMOGLOBIN":
                mu = mu - 0.6 * z
            for _ in range(int(rng.integers(1, 5))):
                v = round(max(rng.normal(mu, sd), 0.1), 1)
                t = rng.uniform(admit, discharge)
                labs.append([aid, test, f"{t:.2f}", f"{v:.1f}", _flag(v, low, high)])

        for _ in range(int(lat.loop[i, j])):
            meds.append([aid, FUROSEMIDE[int(rng.integers(2))], "DIURETICS", "LOOP DIURETICS",
                         "CARDIOVASCULAR", f"{rng.uniform(admit, discharge):.2f}"])
        # same dose distribution as furosemide but no effect on risk
        for _ in range(int(rng.poisson(math.exp(-0.5 + 0.9 * z)))):
            meds.append([aid, "BUMETANIDE 1 MG TABLET", "DIURETICS", "LOOP DIURETICS",
                         "CARDIOVASCULAR", f"{rng.uniform(admit, discharge):.2f}"])
        for desc, cls, sub, ther, p, mean in MED_POOL:
            if rng.random() < p:
                for _ in range(1 + int(rng.poisson(mean))):
                    meds.append([aid, desc, cls, sub, ther, f"{rng.uniform(admit, discharge):.2f}"])

        truth.append([aid, pid, f"{out.risk[i, j]:.8f}", int(out.label[i, j]),
                      MECHANISMS[m] if m >= 0 else "none", int(out.is_sample[i, j])])
    labs.sort(key=lambda r: (r[0], float(r[2]), r[1]))
    meds.sort(key=lambda r: (r[0], float(r[5]), r[1]))
    return admin, labs, meds, truth


def _render_chunk(args):
    lo, hi, lat, out, seed = args
    return [render_patient(i, lat, out, seed) for i in range(lo, hi)]


@dataclass
class SynthData:
    config: SynthConfig
    intercept: float
    admin: list[list]
    lab: list[list]
    pharmacy: list[list]
    truth: list[list]
    outcomes: Outcomes

    @property
    def achieved_prevalence(self) -> float:
        return float(self.outcomes.label[self.outcomes.is_sample].mean())

    def _table(self, header, rows) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
        return buf.getvalue()

    def tables(self) -> dict[str, str]:
        return {
            "admin.csv": self._table(ADMIN_COLUMNS, self.admin),
            "lab.csv": self._table(LAB_COLUMNS, self.lab),
            "pharmacy.csv": self._table(PHARMACY_COLUMNS, self.pharmacy),
            "ground_truth.csv": self._table(TRUTH_COLUMNS, self.truth),
        }

    def write(self, outdir: str | Path) -> None:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        for name, text in self.tables().items():
            (outdir / name).write_text(text, encoding="utf-8")

    def to_store(self) -> PatientStore:
        t = self.tables()
        return parse_tables(io.StringIO(t["admin.csv"]), io.StringIO(t["lab.csv"]),
                            io.StringIO(t["pharmacy.csv"]), strict=True)


def generate(cfg: SynthConfig, jobs: int = 1) -> SynthData:
    """Latent simulation, intercept solve, then rendering of the source tables."""
    cfg.validate()
    lat = draw_latent(cfg)
    b0 = solve_intercept(lat, cfg) if cfg.intercept is None else float(cfg.intercept)
    out = simulate(lat, cfg, b0)
    log.info("synthetic cohort: intercept %.4f, sample prevalence %.4f", b0,
             out.label[out.is_sample].mean() if out.is_sample.any() else float("nan"))
    bounds = np.linspace(0, cfg.n_patients, max(1, min(jobs, cfg.n_patients)) + 1).astype(int)
    chunks = [(lo, hi, lat, out, cfg.seed) for lo, hi in zip(bounds[:-1], bounds[1:])]
    if jobs > 1:
        with ProcessPoolExecutor(jobs, mp_context=mp.get_context("fork")) as ex:
            parts = [p for chunk in ex.map(_render_chunk, chunks) for p in chunk]
    else:
        parts = [p for chunk in map(_render_chunk, chunks) for p in chunk]
    admin, lab, pharm, truth = ([r for p in parts for r in p[k]] for k in range(4))
    return SynthData(cfg, b0, admin, lab, pharm, truth, out)
